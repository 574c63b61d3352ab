"""Full (non-reduced) MPC: quadratic cost, condensed QP, receding-horizon law.

The finite-horizon cost is

    J(x, U) = sum_{i=1}^{N-1} |x_i - xref|_Q^2 + |x_N - xref|_P^2
              + sum_{i=0}^{N-1} |u_i - uref|_R^2

with predicted states eliminated through X = Phi x + Gamma U, leaving the
dense quadratic form

    J(x, U) = 0.5 U' (G G') U + f(x)' U + c(x),        f(x) = F x + f0.

Constraint rows are kept in a fixed flat layout: state rows for prediction
steps 1..N-1 (one block per step), then the terminal rows, then the input
rows for steps 0..N-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError
from .lti import LtiSystem, PolyhedralSet, build_prediction
from .solvers import DEFAULT_TOL_KKT, QpProblem, QpSolution, cholesky_lower, solve_lp, LpProblem


def _weight_matrix(W, dim, name):
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        W = float(W) * np.eye(dim)
    if W.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}")
    if np.abs(W - W.T).max() > 1e-12 * max(1.0, np.abs(W).max()):
        raise ValueError(f"{name} must be symmetric")
    cholesky_lower(W)  # rejects non-SPD weights
    return W


def _scalar_weight(W):
    """Scalar s when W == s * I, else None (enables O(n) weight applies)."""
    s = W[0, 0]
    return s if np.array_equal(W, s * np.eye(W.shape[0])) else None


def _row_max_over_upper_bound_set(rows, ub):
    """max of r @ x over {x | x <= ub} per row: finite iff r >= 0."""
    rows = np.atleast_2d(rows)
    out = np.full(rows.shape[0], np.inf)
    ok = np.all(rows >= 0.0, axis=1)
    out[ok] = rows[ok] @ ub
    return out


def _row_max_over_polyhedron(rows, pset: PolyhedralSet):
    """max of r @ x over a polyhedral set per row, via support LPs."""
    rows = np.atleast_2d(rows)
    out = np.empty(rows.shape[0])
    for k, r in enumerate(rows):
        if not np.any(r):
            out[k] = 0.0
            continue
        _, status, val = solve_lp(LpProblem(c=r, Aineq=pset.C, bineq=pset.b))
        if status == "unbounded":
            out[k] = np.inf
        elif status == "optimal":
            out[k] = val
        else:
            raise InfeasibleError("support LP over an empty set")
    return out


@dataclass(frozen=True)
class MpcProblem:
    """Plant, constraint sets, horizon, and quadratic weights."""

    sys: LtiSystem
    Xset: PolyhedralSet
    Uset: PolyhedralSet
    XT: PolyhedralSet
    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    xref: np.ndarray | None = None
    uref: np.ndarray | None = None
    Kaux: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.sys.n, self.sys.m
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        object.__setattr__(self, "Q", _weight_matrix(self.Q, n, "Q"))
        object.__setattr__(self, "P", _weight_matrix(self.P, n, "P"))
        object.__setattr__(self, "R", _weight_matrix(self.R, m, "R"))
        xref = np.zeros(n) if self.xref is None else np.asarray(self.xref, float).reshape(-1)
        uref = np.zeros(m) if self.uref is None else np.asarray(self.uref, float).reshape(-1)
        Kaux = np.zeros((m, n)) if self.Kaux is None else np.asarray(self.Kaux, float)
        if xref.shape != (n,) or uref.shape != (m,) or Kaux.shape != (m, n):
            raise ValueError("reference/gain dimensions inconsistent")
        for pset, d, name in ((self.Xset, n, "Xset"), (self.Uset, m, "Uset"),
                              (self.XT, n, "XT")):
            if pset.dim != d:
                raise ValueError(f"{name} dimension mismatch")
        object.__setattr__(self, "xref", xref)
        object.__setattr__(self, "uref", uref)
        object.__setattr__(self, "Kaux", Kaux)
        self._check_terminal_set()

    def _check_terminal_set(self):
        """Terminal-set containment and positive invariance under u = Kaux x."""
        AK = self.sys.A + self.sys.B @ self.Kaux
        KU = self.Uset.C @ self.Kaux
        if self.XT.identity_rows:
            ub = self.XT.b
            x_max = _row_max_over_upper_bound_set(self.Xset.C, ub)
            inv_max = _row_max_over_upper_bound_set(self.XT.C @ AK, ub)
            u_max = _row_max_over_upper_bound_set(KU, ub)
        else:
            x_max = _row_max_over_polyhedron(self.Xset.C, self.XT)
            inv_max = _row_max_over_polyhedron(self.XT.C @ AK, self.XT)
            u_max = _row_max_over_polyhedron(KU, self.XT)
        tol = 1e-9
        if np.any(x_max > self.Xset.b + tol):
            raise ValueError("terminal set is not contained in the state set")
        if np.any(inv_max > self.XT.b + tol):
            raise ValueError("terminal set is not positively invariant under Kaux")
        if np.any(u_max > self.Uset.b + tol):
            raise ValueError("auxiliary law violates the input set on the terminal set")


class CondensedQp:
    """Dense U-space form of an MpcProblem.

    State and terminal constraint rows are transformed to U-space once:
    row (i, j) has coefficients c_j @ Gamma_i and state-dependent offset
    b_j - c_j @ Phi_i @ x.  When both constraint matrices are identities
    the coefficient rows are exactly the rows of Gamma and the offsets are
    per-coordinate entries of the free response, which the controller's
    fast paths exploit.  Large state-dependent matrices (Phi, the stacked
    offset map) are built lazily.
    """

    def __init__(self, problem: MpcProblem):
        p = problem
        sys = p.sys
        n, m, N = sys.n, sys.m, p.N
        self.problem = p
        self.sys = sys
        self.n, self.m, self.N = n, m, N
        self.nx_rows = p.Xset.nrows
        self.nt_rows = p.XT.nrows
        self.nu_rows = p.Uset.nrows
        self.state_identity = p.Xset.identity_rows and p.XT.identity_rows

        qs = _scalar_weight(p.Q)
        ps = _scalar_weight(p.P)

        # Gamma assembled from A^k B; Phi is deferred (see phi property).
        AB = [sys.B]
        for _ in range(1, N):
            AB.append(sys.A @ AB[-1])
        Gamma = np.zeros((N * n, N * m))
        for i in range(1, N + 1):
            for j in range(i):
                Gamma[(i - 1) * n : i * n, j * m : (j + 1) * m] = AB[i - 1 - j]
        self.Gamma = np.ascontiguousarray(Gamma)
        self.AB = AB

        # H = 2 (Gamma' Qbar Gamma + Rbar), F = 2 Gamma' Qbar Phi,
        # f0 = -2 Gamma' Qbar Xref - 2 Rbar Uref, accumulated per step so
        # Phi never has to be materialized here.
        H2 = np.zeros((N * m, N * m))
        F = np.zeros((N * m, n))
        f0 = np.zeros(N * m)
        Apow = np.eye(n)
        for i in range(1, N + 1):
            Apow = sys.A @ Apow
            Gi = self.Gamma[(i - 1) * n : i * n]
            Wi, ws = (p.P, ps) if i == N else (p.Q, qs)
            WG = ws * Gi if ws is not None else Wi @ Gi
            H2 += Gi.T @ WG
            F += 2.0 * (WG.T @ Apow)
            f0 -= 2.0 * (WG.T @ p.xref)
        Ruref = p.R @ p.uref
        for j in range(N):
            sl = slice(j * m, (j + 1) * m)
            H2[sl, sl] += p.R
            f0[sl] -= 2.0 * Ruref
        self.H = 2.0 * H2
        self.G = cholesky_lower(self.H)
        self.F = F
        self.f0 = f0

        # Input rows: block-diagonal Cu over the horizon, fixed RHS.
        self.Au = np.zeros((N * self.nu_rows, N * m))
        for j in range(N):
            self.Au[j * self.nu_rows : (j + 1) * self.nu_rows, j * m : (j + 1) * m] = p.Uset.C
        self.Au = np.ascontiguousarray(self.Au)
        self.bu = np.tile(p.Uset.b, N)

        self.b_state = np.concatenate([np.tile(p.Xset.b, N - 1), p.XT.b])
        self.n_state_rows = self.b_state.shape[0]

        self._phi = None
        self._a_state = None
        self._w_state = None
        self._full_A = None

    # -- lazy stacked matrices -------------------------------------------

    @property
    def phi(self):
        if self._phi is None:
            self._phi = build_prediction(self.sys, self.N).Phi
        return self._phi

    @property
    def a_state(self):
        """Stacked U-space coefficient rows of all state/terminal constraints."""
        if self._a_state is None:
            if self.state_identity:
                self._a_state = self.Gamma
            else:
                n, N = self.n, self.N
                Cx, CT = self.problem.Xset.C, self.problem.XT.C
                blocks = [Cx @ self.Gamma[(i - 1) * n : i * n] for i in range(1, N)]
                blocks.append(CT @ self.Gamma[(N - 1) * n :])
                self._a_state = np.ascontiguousarray(np.vstack(blocks))
        return self._a_state

    @property
    def w_state(self):
        """Stacked map x -> per-row free-response offsets (b_hat = b_state - w_state x)."""
        if self._w_state is None:
            if self.state_identity:
                self._w_state = self.phi
            else:
                n, N = self.n, self.N
                Cx, CT = self.problem.Xset.C, self.problem.XT.C
                blocks = [Cx @ self.phi[(i - 1) * n : i * n] for i in range(1, N)]
                blocks.append(CT @ self.phi[(N - 1) * n :])
                self._w_state = np.vstack(blocks)
        return self._w_state

    @property
    def full_A(self):
        """All constraint rows: state/terminal block, then input block."""
        if self._full_A is None:
            self._full_A = np.ascontiguousarray(np.vstack([self.a_state, self.Au]))
        return self._full_A

    def release_dense(self):
        """Drop lazily built stacked matrices (rebuilt on next access)."""
        self._phi = None
        if not self.state_identity:
            self._a_state = None
        self._w_state = None
        self._full_A = None

    # -- evaluation -------------------------------------------------------

    def f(self, x):
        return self.F @ np.asarray(x, float).reshape(-1) + self.f0

    def c(self, x):
        """Constant cost term c(x), evaluated by propagating the free response."""
        p = self.problem
        x = np.asarray(x, float).reshape(-1)
        total = p.N * float(p.uref @ (p.R @ p.uref))
        v = x
        for i in range(1, p.N + 1):
            v = self.sys.A @ v
            W = p.P if i == p.N else p.Q
            e = v - p.xref
            total += float(e @ (W @ e))
        return total

    def objective(self, x, U):
        """0.5 U' H U + f(x)' U + c(x)."""
        U = np.asarray(U, float).reshape(-1)
        y = self.G.T @ U
        return 0.5 * float(y @ y) + float(self.f(x) @ U) + self.c(x)

    def stage_objective(self, x, U):
        """The same cost evaluated stage by stage through the dynamics."""
        p = self.problem
        x = np.asarray(x, float).reshape(-1)
        U = np.asarray(U, float).reshape(-1, self.m)
        total = 0.0
        v = x
        for i in range(1, p.N + 1):
            u = U[i - 1]
            eu = u - p.uref
            total += float(eu @ (p.R @ eu))
            v = self.sys.A @ v + self.sys.B @ u
            W = p.P if i == p.N else p.Q
            ex = v - p.xref
            total += float(ex @ (W @ ex))
        return total

    def constraint_rhs(self, x):
        """Stacked RHS [b_state - w_state x; bu] of the full constraint system."""
        x = np.asarray(x, float).reshape(-1)
        return np.concatenate([self.b_state - self.w_state @ x, self.bu])

    def qp_at(self, x) -> QpProblem:
        return QpProblem(H=self.H, f=self.f(x), Aineq=self.full_A,
                         bineq=self.constraint_rhs(x))


def condense(problem: MpcProblem) -> CondensedQp:
    """Dense U-space QP data for the given MPC problem."""
    return CondensedQp(problem)


def solve_full(cq: CondensedQp, x, warm=None, warm_set=None,
               tol_kkt=DEFAULT_TOL_KKT) -> QpSolution:
    """Solve the full (non-reduced) MPC problem at state x."""
    from .solvers import solve_qp

    return solve_qp(cq.qp_at(x), warm=warm, tol_kkt=tol_kkt, warm_set=warm_set)


def mpc_law(cq: CondensedQp, x, warm=None, warm_set=None, tol_kkt=DEFAULT_TOL_KKT):
    """Receding-horizon feedback: first input of the optimal sequence.

    Returns (u0, Ustar).  Raises InfeasibleError outside the feasible set.
    """
    sol = solve_full(cq, x, warm=warm, warm_set=warm_set, tol_kkt=tol_kkt)
    if sol.status != "optimal":
        raise InfeasibleError(f"MPC problem not solved: status={sol.status}")
    return sol.ustar[: cq.m].copy(), sol.ustar
