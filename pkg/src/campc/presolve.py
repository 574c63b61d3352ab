"""Online constraint pre-solve: cost level set, redundancy tests, reduction.

A state or terminal constraint row is dropped for one solve when any of
three sufficient certificates shows it cannot be violated by a candidate
optimizer: the forward reachable box for that prediction step, the
backward reachable box (skipped at the terminal step), or the cost
level-set ellipsoid in input-sequence space.  Certificates are evaluated
as closed-form set maxima; a row is removed only when the maximum of its
left-hand side over the certifying set stays below its bound, so removal
never cuts into the feasible candidates and the reduced problem keeps the
minimizer of the full one.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _backend
from .errors import InfeasibleError
from .mpc import CondensedQp
from .reach import BoxSet, EllipsoidSet

DEGENERATE_RADIUS = 1e-12


@dataclass(frozen=True)
class LevelSetEllipse:
    """Sub-level set {U | J(x,U) <= J(x,Utilde)} of the quadratic cost.

    Centered at the unconstrained minimizer q with radius rho measured in
    the metric of the cost curvature (L = G / rho); rho <= DEGENERATE_RADIUS
    flags a collapse to the single point {q}.
    """

    G: np.ndarray  # lower Cholesky factor of the curvature
    q: np.ndarray
    rho: float

    @property
    def degenerate(self):
        return self.rho <= DEGENERATE_RADIUS

    @property
    def L(self):
        if self.degenerate:
            raise ValueError("degenerate level set has no ellipsoid matrix")
        return self.G / self.rho

    def as_ellipsoid(self) -> EllipsoidSet:
        return EllipsoidSet(L=self.L, q=self.q)

    def contains(self, U, tol=1e-9):
        y = self.G.T @ (np.asarray(U, float).reshape(-1) - self.q)
        return bool(np.linalg.norm(y) <= self.rho + tol)


def level_set(cq: CondensedQp, x, Utilde, feas_tol=1e-7) -> LevelSetEllipse:
    """Cost level set at state x induced by a feasible candidate Utilde.

    Utilde must be feasible for the full constraint system at x; an
    infeasible candidate is rejected since the minimizer-preservation
    argument starts from a feasible cost upper bound.
    """
    Utilde = np.asarray(Utilde, dtype=float).reshape(-1)
    slack = cq.constraint_rhs(x) - cq.full_A @ Utilde
    if slack.min(initial=0.0) < -feas_tol:
        raise InfeasibleError("candidate input sequence is infeasible at x")
    return _level_set_unchecked(cq, x, Utilde)


def _level_set_unchecked(cq: CondensedQp, x, Utilde) -> LevelSetEllipse:
    f = cq.f(x)
    q = -scipy.linalg.cho_solve((cq.G, True), f)
    rho = float(np.linalg.norm(cq.G.T @ (Utilde - q)))
    return LevelSetEllipse(G=cq.G, q=q, rho=rho)


def box_row_max(c, box: BoxSet):
    """max of c @ x over a box, in closed form.

    Half-widths may be infinite (unbounded coordinates of a tube entry);
    a zero coefficient contributes nothing regardless of extent.
    """
    c = np.asarray(c, dtype=float).reshape(-1)
    if box.P is None:
        absc = np.abs(c)
        with np.errstate(invalid="ignore"):
            t = absc * box.l
        if np.isinf(box.l).any():
            t[absc == 0.0] = 0.0
        return float(c @ box.q + t.sum())
    cPinv = np.linalg.solve(box.P.T, c)
    return float(c @ box.q + cPinv @ (np.sign(cPinv) * box.l))


def test_box(c, b, box: BoxSet) -> bool:
    """Certificate that c @ x <= b holds everywhere on the box."""
    return box_row_max(c, box) <= b


def ellipse_row_max(c, e: EllipsoidSet):
    """max of c @ x over an ellipsoid: c q + ||c L^-T||."""
    c = np.asarray(c, dtype=float).reshape(-1)
    w = scipy.linalg.solve_triangular(e.L, c, lower=True)
    return float(c @ e.q + np.linalg.norm(w))


def test_ellipse(c, b, e) -> bool:
    """Certificate that c @ x <= b holds everywhere on the ellipsoid.

    Accepts an EllipsoidSet or a LevelSetEllipse; a degenerate level set is
    treated as the single point {q}.
    """
    if isinstance(e, LevelSetEllipse):
        c = np.asarray(c, dtype=float).reshape(-1)
        if e.degenerate:
            return float(c @ e.q) <= b
        w = scipy.linalg.solve_triangular(e.G, c, lower=True)
        return float(c @ e.q) + e.rho * float(np.linalg.norm(w)) <= b
    return ellipse_row_max(c, e) <= b


@dataclass
class ReducedIndexSets:
    """Per-step retained row indices (step i in 1..N; step N indexes XT rows)."""

    retained: list[np.ndarray]
    tests_run: int = 0

    @property
    def N(self):
        return len(self.retained)

    def total_retained(self):
        return int(sum(idx.size for idx in self.retained))

    def retained_fraction(self, rows_per_step):
        total = int(sum(rows_per_step))
        return self.total_retained() / total if total else 0.0


def _step_rows(cq: CondensedQp, i):
    """(C, b, flat offset) of the constraint rows tested at prediction step i."""
    if i < cq.N:
        return cq.problem.Xset.C, cq.problem.Xset.b, (i - 1) * cq.nx_rows
    return cq.problem.XT.C, cq.problem.XT.b, (cq.N - 1) * cq.nx_rows


def reduce_constraints(cq: CondensedQp, shifted_forward, ls: LevelSetEllipse, x,
                       backward=None) -> ReducedIndexSets:
    """Reduced constraint index sets for one solve.

    shifted_forward are the per-step forward boxes already translated by
    the free response at x; backward holds the state-independent backward
    boxes (entry N is ignored, matching the universal-set convention).
    A row is retained unless the forward box, the backward box, or the
    level-set ellipse certifies it redundant; input rows are never touched.
    Tests run cheapest-first per row and stop at the first certificate.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    retained = []
    tests = 0
    n_threads = _backend.presolve_threads()
    for i in range(1, cq.N + 1):
        C, b, _ = _step_rows(cq, i)
        fwd = shifted_forward[i - 1]
        bwd = backward[i - 1] if (backward is not None and i < cq.N) else None
        survivors, t = _reduce_step_rows(cq, i, C, b, fwd, bwd, ls, x, n_threads)
        tests += t
        retained.append(survivors)
    return ReducedIndexSets(retained=retained, tests_run=tests)


def _reduce_step_rows(cq, i, C, b, fwd, bwd, ls, x, n_threads):
    nrows = C.shape[0]
    if n_threads > 1 and nrows >= 2 * n_threads:
        chunks = np.array_split(np.arange(nrows), n_threads)
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(
                lambda ch: _reduce_row_chunk(cq, i, C, b, ch, fwd, bwd, ls, x),
                chunks))
        survivors = np.concatenate([p[0] for p in parts])
        tests = sum(p[1] for p in parts)
        return survivors, tests
    return _reduce_row_chunk(cq, i, C, b, np.arange(nrows), fwd, bwd, ls, x)


def _reduce_row_chunk(cq, i, C, b, rows, fwd, bwd, ls, x):
    """Sequential certificate tests for a block of rows at one step."""
    n = cq.n
    Gi = cq.Gamma[(i - 1) * n : i * n]
    phi_i_x = None
    survivors = []
    tests = 0
    for j in rows:
        c = C[j]
        tests += 1
        if test_box(c, b[j], fwd):
            continue
        if bwd is not None:
            tests += 1
            if test_box(c, b[j], bwd):
                continue
        # U-space row, materialized only for rows the box tests kept.
        if phi_i_x is None:
            phi_i_x = _free_response_step(cq, x, i)
        chat = c @ Gi
        bhat = b[j] - float(c @ phi_i_x)
        tests += 1
        if test_ellipse(chat, bhat, ls):
            continue
        survivors.append(j)
    return np.asarray(survivors, dtype=np.int64), tests


def _free_response_step(cq: CondensedQp, x, i):
    v = np.asarray(x, dtype=float).reshape(-1)
    for _ in range(i):
        v = cq.sys.A @ v
    return v


def assemble_reduced(cq: CondensedQp, idx: ReducedIndexSets, x):
    """QP containing the retained state/terminal rows plus all input rows.

    Returns (QpProblem, flat_state_indices) where flat_state_indices maps
    each retained state row of the assembled QP back to its position in
    the full stacked layout.
    """
    from .solvers import QpProblem

    x = np.asarray(x, dtype=float).reshape(-1)
    n = cq.n
    rows = []
    rhs = []
    flat = []
    bhat_full = cq.b_state - cq.w_state @ x
    for i in range(1, cq.N + 1):
        keep = idx.retained[i - 1]
        if keep.size == 0:
            continue
        C, _, offset = _step_rows(cq, i)
        Gi = cq.Gamma[(i - 1) * n : i * n]
        rows.append(C[keep] @ Gi if not cq.state_identity else Gi[keep])
        flat_idx = offset + keep
        rhs.append(bhat_full[flat_idx])
        flat.append(flat_idx)
    if rows:
        A = np.vstack(rows + [cq.Au])
        bb = np.concatenate(rhs + [cq.bu])
        flat_idx = np.concatenate(flat)
    else:
        A, bb = cq.Au, cq.bu
        flat_idx = np.empty(0, dtype=np.int64)
    return QpProblem(H=cq.H, f=cq.f(x), Aineq=A, bineq=bb), flat_idx
