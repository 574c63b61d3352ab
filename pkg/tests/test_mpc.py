import numpy as np
import pytest

from campc.errors import InfeasibleError, NotPositiveDefiniteError
from campc.lti import LtiSystem, PolyhedralSet
from campc.mpc import MpcProblem, condense, mpc_law, solve_full
from campc.solvers import solve_qp


def scalar_problem(xmax=10.0, umax=1.0, N=1):
    sys = LtiSystem(A=[[1.0]], B=[[1.0]])
    return MpcProblem(
        sys=sys,
        Xset=PolyhedralSet.from_upper_bounds([xmax]),
        Uset=PolyhedralSet.box([-umax], [umax]),
        XT=PolyhedralSet.from_upper_bounds([xmax]),
        N=N, Q=1.0, R=1.0, P=1.0)


def random_problem(seed, n=3, m=2, N=4):
    r = np.random.default_rng(seed)
    A = r.standard_normal((n, n))
    # contraction in the max norm keeps the unit-box terminal set invariant
    A *= 0.7 / np.abs(A).sum(axis=1).max()
    sys = LtiSystem(A=A, B=r.standard_normal((n, m)))
    xref = 0.1 * r.standard_normal(n)
    return MpcProblem(
        sys=sys,
        Xset=PolyhedralSet(np.vstack([np.eye(n), -np.eye(n)]),
                           np.full(2 * n, 5.0)),
        Uset=PolyhedralSet.box(-np.ones(m), np.ones(m)),
        XT=PolyhedralSet.box(-np.ones(n), np.ones(n)),
        N=N,
        Q=np.eye(n), R=2.0 * np.eye(m), P=0.5 * np.eye(n),
        xref=xref, uref=0.05 * r.standard_normal(m))


class TestCondense:
    def test_scalar_linear_term(self):
        cq = condense(scalar_problem())
        # J(x, u) = (x + u)^2 + u^2 = 0.5*4*u^2 + (2x) u + x^2
        np.testing.assert_allclose(cq.f(1.0), [2.0])
        np.testing.assert_allclose(cq.f(0.0), [0.0])
        np.testing.assert_allclose(cq.G @ cq.G.T, [[4.0]])
        assert cq.c(0.0) == 0.0

    def test_cost_identity_scalar(self):
        cq = condense(scalar_problem())
        for x, u in [(1.0, 0.3), (-2.0, 0.7), (0.0, -1.0)]:
            direct = (x + u) ** 2 + u**2
            assert abs(cq.objective([x], [u]) - direct) <= 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_cost_identity_random(self, seed):
        p = random_problem(seed)
        cq = condense(p)
        r = np.random.default_rng(100 + seed)
        for _ in range(100):
            x = r.standard_normal(3)
            U = r.standard_normal(4 * 2)
            a = cq.objective(x, U)
            b = cq.stage_objective(x, U)
            assert abs(a - b) <= 1e-8 * max(1.0, abs(b))

    @pytest.mark.parametrize("seed", range(3))
    def test_constraint_rows_match_direct_evaluation(self, seed):
        p = random_problem(seed)
        cq = condense(p)
        r = np.random.default_rng(200 + seed)
        n, m, N = 3, 2, 4
        for _ in range(20):
            x = r.standard_normal(n)
            U = r.standard_normal(N * m)
            lhs = cq.full_A @ U
            rhs = cq.constraint_rhs(x)
            # simulate and evaluate each stage constraint directly
            v = x
            rows = 0
            for i in range(1, N + 1):
                v = p.sys.A @ v + p.sys.B @ U[(i - 1) * m : i * m]
                C, b = (p.XT.C, p.XT.b) if i == N else (p.Xset.C, p.Xset.b)
                direct = C @ v - b
                got = lhs[rows : rows + C.shape[0]] - rhs[rows : rows + C.shape[0]]
                np.testing.assert_allclose(got, direct, atol=1e-9)
                rows += C.shape[0]
            for i in range(N):
                u = U[i * m : (i + 1) * m]
                sl = slice(rows + i * p.Uset.nrows, rows + (i + 1) * p.Uset.nrows)
                np.testing.assert_allclose(lhs[sl] - rhs[sl],
                                           p.Uset.C @ u - p.Uset.b, atol=1e-12)

    def test_zero_curvature_rejected(self):
        sys = LtiSystem(A=[[1.0]], B=[[1.0]])
        with pytest.raises(NotPositiveDefiniteError):
            MpcProblem(sys=sys,
                       Xset=PolyhedralSet.from_upper_bounds([1.0]),
                       Uset=PolyhedralSet.box([-1.0], [1.0]),
                       XT=PolyhedralSet.from_upper_bounds([1.0]),
                       N=2, Q=1.0, R=0.0, P=1.0)


class TestSolveFull:
    def test_scalar_interior(self):
        cq = condense(scalar_problem())
        sol = solve_full(cq, [0.0])
        np.testing.assert_allclose(sol.ustar, [0.0], atol=1e-12)

    def test_scalar_unconstrained_optimum_by_hand(self):
        # minimize (x+u)^2 + u^2 at x=1: stationarity 2(1+u) + 2u = 0
        cq = condense(scalar_problem())
        sol = solve_full(cq, [1.0])
        np.testing.assert_allclose(sol.ustar, [-0.5], atol=1e-10)
        g = cq.H @ sol.ustar + cq.f([1.0])
        assert abs(g[0] + cq.full_A.T[0] @ sol.lam) <= 1e-9

    def test_infeasible_state(self):
        cq = condense(scalar_problem(xmax=1.0, umax=0.1, N=1))
        sol = solve_full(cq, [5.0])  # cannot reach x <= 1 with |u| <= 0.1
        assert sol.status == "infeasible"
        with pytest.raises(InfeasibleError):
            mpc_law(cq, [5.0])

    def test_hyperthermia_against_tightened_resolve(self, bundle60):
        _, cq, _ = bundle60
        r = np.random.default_rng(17)
        x = r.uniform(0.0, 1.0, cq.n)
        sol = solve_full(cq, x, tol_kkt=1e-8)
        ref = solve_qp(cq.qp_at(x), tol_kkt=1e-9)
        assert np.abs(sol.ustar - ref.ustar).max() <= 1e-7

    def test_mpc_law_slices_first_input(self, bundle60):
        _, cq, _ = bundle60
        u0, Ustar = mpc_law(cq, np.zeros(cq.n))
        np.testing.assert_array_equal(u0, Ustar[: cq.m])


class TestTerminalSetChecks:
    def test_non_invariant_terminal_rejected(self):
        sys = LtiSystem(A=[[1.1]], B=[[1.0]])
        with pytest.raises(ValueError, match="invariant"):
            MpcProblem(sys=sys,
                       Xset=PolyhedralSet.from_upper_bounds([2.0]),
                       Uset=PolyhedralSet.box([-1.0], [1.0]),
                       XT=PolyhedralSet.from_upper_bounds([1.0]),
                       N=2, Q=1.0, R=1.0, P=1.0)

    def test_terminal_outside_state_set_rejected(self):
        sys = LtiSystem(A=[[0.5]], B=[[1.0]])
        with pytest.raises(ValueError, match="contained"):
            MpcProblem(sys=sys,
                       Xset=PolyhedralSet.from_upper_bounds([1.0]),
                       Uset=PolyhedralSet.box([-1.0], [1.0]),
                       XT=PolyhedralSet.from_upper_bounds([2.0]),
                       N=2, Q=1.0, R=1.0, P=1.0)

    def test_generic_polytope_checks_via_lp(self):
        # bounded terminal polytope handled through support LPs
        r = np.random.default_rng(4)
        A = 0.4 * np.eye(2)
        sys = LtiSystem(A=A, B=r.standard_normal((2, 1)))
        MpcProblem(sys=sys,
                   Xset=PolyhedralSet.box(-2 * np.ones(2), 2 * np.ones(2)),
                   Uset=PolyhedralSet.box([-1.0], [1.0]),
                   XT=PolyhedralSet.box(-np.ones(2), np.ones(2)),
                   N=3, Q=1.0, R=1.0, P=1.0)

    def test_auxiliary_gain_invariance(self):
        # unstable plant stabilized by Kaux keeps the terminal box invariant
        sys = LtiSystem(A=[[1.5]], B=[[1.0]])
        MpcProblem(sys=sys,
                   Xset=PolyhedralSet.box([-2.0], [2.0]),
                   Uset=PolyhedralSet.box([-2.0], [2.0]),
                   XT=PolyhedralSet.box([-1.0], [1.0]),
                   N=2, Q=1.0, R=1.0, P=1.0, Kaux=[[-1.0]])
        with pytest.raises(ValueError, match="input set"):
            MpcProblem(sys=sys,
                       Xset=PolyhedralSet.box([-2.0], [2.0]),
                       Uset=PolyhedralSet.box([-0.5], [0.5]),
                       XT=PolyhedralSet.box([-1.0], [1.0]),
                       N=2, Q=1.0, R=1.0, P=1.0, Kaux=[[-1.0]])
