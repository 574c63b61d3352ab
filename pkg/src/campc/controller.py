"""Receding-horizon controllers: constraint-adaptive and full-problem.

The constraint-adaptive controller runs, at every step, a pre-solve that
drops provably redundant state and terminal rows before handing the QP to
the active-set solver; the full controller assembles and solves the
complete row set.  Both warm-start the solver with the shifted previous
sequence and carry the active set across steps.

Per-step costs are kept independent of the total row count on the adaptive
path when the constraint matrices are identities (per-coordinate bounds):
the free response is updated incrementally from the previous step with a
single A matvec, the redundancy tests are precomputed-norm comparisons,
and only retained rows are materialized.  The full path evaluates every
row offset through the stacked dense map, which is the dominating cost for
large state dimensions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _backend
from .errors import InfeasibleError
from .lti import simulate_step
from .mpc import CondensedQp, solve_full
from .presolve import (DEGENERATE_RADIUS, _level_set_unchecked,
                       assemble_reduced, reduce_constraints)
from .reach import ReachTubes, shift_tube
from .solvers import DEFAULT_TOL_KKT, QpProblem, solve_qp

NOMINAL_STATE_TOL = 1e-9


def warm_start(Uprev, Kaux, xN_prev):
    """Shifted previous sequence appended with the auxiliary law's input.

    Uprev is the optimal sequence of the previous step (length N*m); the
    first block is dropped and Kaux @ xN_prev fills the tail, so terminal
    invariance keeps the candidate feasible at the successor state.
    """
    Uprev = np.asarray(Uprev, dtype=float).reshape(-1)
    Kaux = np.asarray(Kaux, dtype=float)
    m = Kaux.shape[0]
    tail = Kaux @ np.asarray(xN_prev, dtype=float).reshape(-1)
    return np.concatenate([Uprev[m:], tail])


@dataclass
class CampcState:
    """Per-step record of the adaptive controller."""

    k: int
    x: np.ndarray
    u: np.ndarray
    Ustar: np.ndarray
    timings: dict
    retained_fraction: float
    qp_iterations: int = 0
    oracle_delta: float | None = None
    candidate_feasible: bool = True


@dataclass
class SimulationTrace:
    """Closed-loop run: visited states, applied inputs, per-step records."""

    states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    records: list = field(default_factory=list)
    oracle_deltas: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.inputs)


def _box_bounds(pset):
    """(lo, hi) when the polyhedron is the canonical box stack [I; -I], else None."""
    d = pset.dim
    if pset.nrows != 2 * d:
        return None
    eye = np.eye(d)
    if np.array_equal(pset.C[:d], eye) and np.array_equal(pset.C[d:], -eye):
        return -pset.b[d:], pset.b[:d]
    return None


class CampcController:
    """Constraint-adaptive MPC step: pre-solve then reduced QP."""

    def __init__(self, cq: CondensedQp, tubes: ReachTubes, tol_kkt=DEFAULT_TOL_KKT,
                 candidate_tol=None, history_budget=256):
        if tubes.N != cq.N:
            raise ValueError("tube horizon must match the MPC horizon")
        self.cq = cq
        self.tubes = tubes
        self.tol_kkt = tol_kkt
        self.candidate_tol = 10.0 * tol_kkt if candidate_tol is None else candidate_tol
        self.u_bounds = _box_bounds(cq.problem.Uset)
        self.Kaux = cq.problem.Kaux
        self.kaux_zero = not np.any(self.Kaux)
        self._fast = cq.state_identity and all(
            b.P is None for b in tubes.forward)
        if self._fast:
            self._prepare_fast_path(int(history_budget))
        self.reset()

    def _prepare_fast_path(self, history_budget):
        cq, tubes = self.cq, self.tubes
        n, m, N = cq.n, cq.m, cq.N
        # Forward extents from a zero start, flattened over the horizon.
        self._fwd_hi0 = np.concatenate([b.q + b.l for b in tubes.forward])
        # Backward certificates are state-independent: precompute the mask.
        bwd_ok = np.zeros(N * n, dtype=np.uint8)
        for i in range(1, N):
            box = tubes.backward[i - 1]
            hi = box.q + box.l
            rows = slice((i - 1) * n, i * n)
            bwd_ok[rows] = hi <= cq.b_state[rows]
        self._bwd_ok = bwd_ok
        # Level-set row weights ||G^-1 gamma_row|| for every stacked row.
        Z = scipy.linalg.solve_triangular(cq.G, cq.Gamma.T, lower=True)
        self._w_rows = np.linalg.norm(Z, axis=0)
        # A^i B blocks: flat stack for the shift update plus the deepest block.
        PB = [cq.AB[i] for i in range(1, N)]  # A^1 B .. A^{N-1} B
        PB.append(cq.sys.A @ cq.AB[N - 1])    # A^N B
        self._PB_flat = np.vstack(PB[: N - 1]) if N > 1 else np.zeros((0, m))
        self._PB_last = PB[N - 1]
        # Input-history blocks A^(N+t) B, t = 0..budget-1: for a zero start
        # state the deepest free-response block is a short combination of
        # past inputs, replacing the per-step n x n matvec.
        self._hist_blocks = max(0, history_budget)
        if self._hist_blocks:
            Hist = np.empty((n, self._hist_blocks * m))
            P = self._PB_last
            for t in range(self._hist_blocks):
                Hist[:, t * m : (t + 1) * m] = P
                if t + 1 < self._hist_blocks:
                    P = cq.sys.A @ P
            self._hist = Hist
        else:
            self._hist = None

    def reset(self):
        self.k = 0
        self.Uprev = None
        self._phi_x = None
        self._u_prev = None
        self._active_flat = None   # active state rows, flat ids
        self._active_input = None  # active input rows, block ids
        self._x_expected = None
        self._u_log = []           # applied inputs, newest first
        self._hist_live = False

    # -- free response ------------------------------------------------------

    def _free_response_direct(self, x):
        n, N = self.cq.n, self.cq.N
        out = np.empty(N * n)
        v = x
        for i in range(N):
            v = self.cq.sys.A @ v
            out[i * n : (i + 1) * n] = v
        return out

    def _free_response(self, x):
        """Phi x, reusing the previous step's value under nominal dynamics."""
        n, N = self.cq.n, self.cq.N
        if self._phi_x is None or self._u_prev is None:
            if not x.any():
                self._hist_live = self._fast and self._hist is not None
                return np.zeros(N * n)
            return self._free_response_direct(x)
        if not self._fast:
            # the incremental update needs the precomputed A^i B blocks
            return self._free_response_direct(x)
        drift = np.abs(x - self._x_expected).max()
        if drift > NOMINAL_STATE_TOL * (1.0 + np.abs(x).max()):
            # Dynamics were perturbed externally: recompute, and stop
            # trusting the recorded input history.
            self._hist_live = False
            return self._free_response_direct(x)
        out = np.empty(N * n)
        if N > 1:
            out[: (N - 1) * n] = self._phi_x[n:] + self._PB_flat @ self._u_prev
        last = slice((N - 1) * n, N * n)
        k = len(self._u_log)
        if self._hist_live and k <= self._hist_blocks:
            urev = np.concatenate(self._u_log)
            out[last] = self._hist[:, : urev.size] @ urev
        else:
            out[last] = (
                self.cq.sys.A @ self._phi_x[last] + self._PB_last @ self._u_prev
            )
        return out

    # -- candidate sequence --------------------------------------------------

    def _candidate(self, x, phi_x):
        """Feasible cost-capping sequence for the current step."""
        cq = self.cq
        m, N = cq.m, cq.N
        if self.Uprev is None:
            Utilde = np.zeros(N * m)
        elif self.kaux_zero:
            Utilde = np.concatenate([self.Uprev[m:], np.zeros(m)])
        else:
            xN_prev = self._phi_x[(N - 1) * cq.n :] + cq.Gamma[(N - 1) * cq.n :] @ self.Uprev
            Utilde = warm_start(self.Uprev, self.Kaux, xN_prev)
        if self.u_bounds is not None:
            lo, hi = self.u_bounds
            Utilde = np.clip(Utilde, np.tile(lo, N), np.tile(hi, N))
        feasible = self._candidate_feasible(x, phi_x, Utilde)
        return Utilde, feasible

    def _candidate_feasible(self, x, phi_x, Utilde):
        cq = self.cq
        tol = self.candidate_tol
        if self._fast:
            states = phi_x + cq.Gamma @ Utilde
            if (states - cq.b_state).max() > tol:
                return False
            return (cq.Au @ Utilde - cq.bu).max(initial=0.0) <= tol
        slack = cq.constraint_rhs(x) - cq.full_A @ Utilde
        return slack.min(initial=0.0) >= -tol

    # -- main step ------------------------------------------------------------

    def step(self, x):
        """Apply one adaptive MPC step at state x; returns (u, record)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        cq = self.cq
        t0 = time.perf_counter()

        phi_x = self._free_response(x)
        Utilde, feasible = self._candidate(x, phi_x)
        if not feasible:
            if self.Uprev is None:
                return self._bootstrap_full(x, t0)
            raise InfeasibleError(
                f"shifted candidate infeasible at step {self.k}; "
                "state left the feasible set")

        if self._fast:
            qp, retained, warm_ids, frac = self._reduce_fast(x, phi_x, Utilde)
        else:
            qp, retained, warm_ids, frac = self._reduce_generic(x, phi_x, Utilde)
        t1 = time.perf_counter()

        sol = solve_qp(qp, warm=Utilde, tol_kkt=self.tol_kkt, warm_set=warm_ids)
        t2 = time.perf_counter()
        if sol.status != "optimal":
            raise InfeasibleError(
                f"reduced QP returned {sol.status} at step {self.k}; "
                "this indicates an unsound reduction or an infeasible state")

        self._finish_step(x, phi_x, sol, retained)
        record = CampcState(
            k=self.k - 1, x=x, u=sol.ustar[: cq.m].copy(), Ustar=sol.ustar,
            timings={"presolve": t1 - t0, "qp_solve": t2 - t1,
                     "total": time.perf_counter() - t0},
            retained_fraction=frac, qp_iterations=sol.iterations,
            candidate_feasible=feasible)
        return record.u, record

    def _bootstrap_full(self, x, t0):
        """Fallback for a start state where the zero sequence is infeasible."""
        t1 = time.perf_counter()
        sol = solve_full(self.cq, x, tol_kkt=self.tol_kkt)
        t2 = time.perf_counter()
        if sol.status != "optimal":
            raise InfeasibleError("initial state is outside the feasible set")
        phi_x = self._free_response_direct(x)
        self._finish_step(x, phi_x, sol, None)
        record = CampcState(
            k=self.k - 1, x=x, u=sol.ustar[: self.cq.m].copy(), Ustar=sol.ustar,
            timings={"presolve": t1 - t0, "qp_solve": t2 - t1,
                     "total": time.perf_counter() - t0},
            retained_fraction=1.0, qp_iterations=sol.iterations)
        return record.u, record

    def _finish_step(self, x, phi_x, sol, retained):
        cq = self.cq
        self.Uprev = sol.ustar
        self._phi_x = phi_x
        self._u_prev = sol.ustar[: cq.m]
        self._x_expected = phi_x[: cq.n] + cq.sys.B @ self._u_prev
        self.k += 1
        if self._hist_live:
            if len(self._u_log) < self._hist_blocks:
                self._u_log.insert(0, self._u_prev)
            else:
                self._hist_live = False
        nu = cq.bu.shape[0]
        act_state, act_input = [], []
        if sol.working_set is not None:
            for pos in sol.working_set:
                if retained is None:
                    # bootstrap solve: full layout (state rows then inputs)
                    if pos < cq.n_state_rows:
                        act_state.append(pos)
                    else:
                        act_input.append(pos - cq.n_state_rows)
                else:
                    # reduced layout (input rows then retained state rows)
                    if pos < nu:
                        act_input.append(pos)
                    else:
                        act_state.append(int(retained[pos - nu]))
        self._active_flat = act_state
        self._active_input = act_input

    def _shifted_warm_ids(self, retained_flat):
        """Previous active rows shifted one step, mapped into the reduced QP."""
        cq = self.cq
        n, nu_rows = cq.n, cq.problem.Uset.nrows
        ids = []
        if self._active_input:
            for r in self._active_input:
                r2 = r - nu_rows
                if r2 >= 0:
                    ids.append(int(r2))
        if self._active_flat:
            nu = cq.bu.shape[0]
            for r in self._active_flat:
                r2 = r - n
                if r2 >= 0:
                    pos = np.searchsorted(retained_flat, r2)
                    if pos < retained_flat.size and retained_flat[pos] == r2:
                        ids.append(int(nu + pos))
        return ids

    def _reduce_fast(self, x, phi_x, Utilde):
        cq = self.cq
        f = cq.F @ x + cq.f0
        q_ls = -scipy.linalg.cho_solve((cq.G, True), f)
        rho = float(np.linalg.norm(cq.G.T @ (Utilde - q_ls)))
        if rho <= DEGENERATE_RADIUS:
            rho = 0.0
        gamma_q = cq.Gamma @ q_ls
        fwd_hi = phi_x + self._fwd_hi0
        ls_slack = cq.b_state - phi_x - gamma_q
        retained = _backend.kernels.retained_rows(
            fwd_hi, self._bwd_ok, ls_slack, rho * self._w_rows, cq.b_state)
        frac = retained.size / cq.n_state_rows
        Ared = np.vstack([cq.Au, cq.Gamma[retained]])
        bred = np.concatenate([cq.bu, cq.b_state[retained] - phi_x[retained]])
        qp = QpProblem(H=cq.H, f=f, Aineq=Ared, bineq=bred)
        return qp, retained, self._shifted_warm_ids(retained), frac

    def _reduce_generic(self, x, phi_x, Utilde):
        cq = self.cq
        from .lti import PredictionMatrices

        pred = PredictionMatrices(Phi=cq.phi, Gamma=cq.Gamma, N=cq.N)
        shifted = shift_tube(self.tubes, pred, x)
        ls = _level_set_unchecked(cq, x, Utilde)
        idx = reduce_constraints(cq, shifted, ls, x, backward=self.tubes.backward)
        qp, flat = assemble_reduced(cq, idx, x)
        # assemble_reduced orders state rows first; rebuild with inputs first
        # so the warm working-set mapping matches the fast path.
        ns = flat.size
        Ared = np.vstack([cq.Au, qp.Aineq[:ns]])
        bred = np.concatenate([cq.bu, qp.bineq[:ns]])
        qp = QpProblem(H=cq.H, f=cq.f(x), Aineq=Ared, bineq=bred)
        rows_per_step = [cq.nx_rows] * (cq.N - 1) + [cq.nt_rows]
        frac = idx.retained_fraction(rows_per_step)
        return qp, flat, self._shifted_warm_ids(flat), frac


class FullMpcController:
    """Baseline: assemble and solve the complete condensed QP every step."""

    def __init__(self, cq: CondensedQp, tol_kkt=DEFAULT_TOL_KKT):
        self.cq = cq
        self.tol_kkt = tol_kkt
        cq.full_A  # materialize the stacked rows outside the timed loop
        cq.w_state
        self.reset()

    def reset(self):
        self.k = 0
        self.Uprev = None
        self._active = None

    def step(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        cq = self.cq
        t0 = time.perf_counter()
        f = cq.F @ x + cq.f0
        bineq = np.concatenate([cq.b_state - cq.w_state @ x, cq.bu])
        qp = QpProblem(H=cq.H, f=f, Aineq=cq.full_A, bineq=bineq)
        warm_ids = None
        if self.Uprev is not None:
            warm = np.concatenate([self.Uprev[cq.m :], np.zeros(cq.m)])
            ub = _box_bounds(cq.problem.Uset)
            if ub is not None:
                warm = np.clip(warm, np.tile(ub[0], cq.N), np.tile(ub[1], cq.N))
            warm_ids = self._shifted_warm_ids()
        else:
            # First step: the zero sequence is the cheapest start; the
            # solver falls back to a phase-1 LP if it is infeasible here.
            warm = np.zeros(cq.N * cq.m)
        t1 = time.perf_counter()
        sol = solve_qp(qp, warm=warm, tol_kkt=self.tol_kkt, warm_set=warm_ids)
        t2 = time.perf_counter()
        if sol.status != "optimal":
            raise InfeasibleError(f"full QP returned {sol.status} at step {self.k}")
        self.Uprev = sol.ustar
        self._active = sol.working_set
        self.k += 1
        record = CampcState(
            k=self.k - 1, x=x, u=sol.ustar[: cq.m].copy(), Ustar=sol.ustar,
            timings={"presolve": 0.0, "qp_solve": t2 - t1,
                     "total": time.perf_counter() - t0},
            retained_fraction=1.0, qp_iterations=sol.iterations)
        return record.u, record

    def _shifted_warm_ids(self):
        if self._active is None:
            return None
        cq = self.cq
        ns, n = cq.n_state_rows, cq.n
        nu_rows = cq.problem.Uset.nrows
        ids = []
        for pos in self._active:
            if pos < ns:
                if pos - n >= 0:
                    ids.append(int(pos - n))
            else:
                r = pos - ns - nu_rows
                if r >= 0:
                    ids.append(int(ns + r))
        return ids


def run(controller, x0, steps, oracle=False, oracle_tol_factor=10.0):
    """Closed-loop simulation of any controller with a step() method.

    With oracle=True a full-problem controller is co-run (untimed) on the
    same states and the per-step minimizer deltas are recorded; a delta
    beyond oracle_tol_factor * tol_kkt raises, since reductions must not
    change the minimizer.
    """
    cq = controller.cq
    controller.reset()
    full = None
    if oracle:
        full = FullMpcController(cq, tol_kkt=controller.tol_kkt)
    trace = SimulationTrace()
    x = np.asarray(x0, dtype=float).reshape(-1)
    trace.states.append(x.copy())
    for _ in range(steps):
        u, record = controller.step(x)
        if full is not None:
            _, ref = full.step(x)
            delta = float(np.abs(record.Ustar - ref.Ustar).max())
            record.oracle_delta = delta
            trace.oracle_deltas.append(delta)
            if delta > oracle_tol_factor * controller.tol_kkt:
                raise InfeasibleError(
                    f"reduced minimizer deviates from the full one by {delta:.3e} "
                    f"at step {record.k}")
        trace.inputs.append(u)
        trace.records.append(record)
        x = simulate_step(cq.sys, x, u)
        trace.states.append(x.copy())
    return trace
