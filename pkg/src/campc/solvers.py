"""Dense numerical kernels: convex QP, LP, Cholesky, matrix exponential.

The QP solver is a primal active-set method for strictly convex problems

    minimize    0.5 * u' H u + f' u
    subject to  Aineq u <= bineq

with H symmetric positive definite.  Problem sizes of interest are small in
the number of variables (tens) but potentially very large in the number of
inequality rows, so each iteration touches the rows only through one
matrix-vector product and one ratio scan.  Warm starting from a feasible
point, optionally with a guessed working set, carries the active set across
a sequence of related solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse

from . import _backend
from .errors import NotPositiveDefiniteError, NumericalError

DEFAULT_TOL_KKT = 1e-8


def _as_matrix(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def _as_vector(v, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def cholesky_lower(H):
    """Lower-triangular G with G @ G.T == H, for symmetric positive definite H.

    Raises NotPositiveDefiniteError when the factorization fails.
    """
    H = _as_matrix(H, "H")
    if H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc


def matrix_exponential(M):
    """Matrix exponential via scaling-and-squaring with Pade approximation."""
    M = _as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    E = scipy.linalg.expm(M)
    if not np.all(np.isfinite(E)):
        raise NumericalError("matrix exponential overflowed")
    return E


def zoh_discretize(Ac, Bc, dt):
    """Zero-order-hold discretization of a continuous-time pair (Ac, Bc).

    Returns (A, B) with A = expm(Ac*dt) and B = integral of expm(Ac*s)*Bc
    over one sampling interval, evaluated by exponentiating the augmented
    matrix [[Ac, Bc], [0, 0]].
    """
    Ac = _as_matrix(Ac, "Ac")
    Bc = _as_matrix(Bc, "Bc")
    n, m = Bc.shape
    if Ac.shape != (n, n):
        raise ValueError("Ac/Bc dimension mismatch")
    if dt <= 0:
        raise ValueError("dt must be positive")
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac * dt
    aug[:n, n:] = Bc * dt
    E = matrix_exponential(aug)
    return E[:n, :n], E[:n, n:]


@dataclass(frozen=True)
class QpProblem:
    """Strictly convex QP: minimize 0.5 u'Hu + f'u s.t. Aineq u <= bineq."""

    H: np.ndarray
    f: np.ndarray
    Aineq: np.ndarray
    bineq: np.ndarray
    G: np.ndarray = field(init=False, repr=False)  # Cholesky factor of H

    def __post_init__(self):
        H = _as_matrix(self.H, "H")
        f = _as_vector(self.f, "f")
        A = _as_matrix(self.Aineq, "Aineq")
        b = _as_vector(self.bineq, "bineq")
        nv = H.shape[0]
        if H.shape != (nv, nv):
            raise ValueError("H must be square")
        sym_err = np.abs(H - H.T).max()
        if sym_err > 1e-12 * max(1.0, np.abs(H).max()):
            raise ValueError("H must be symmetric within 1e-12 relative")
        G = cholesky_lower(0.5 * (H + H.T))
        if f.shape != (nv,):
            raise ValueError("f has wrong length")
        if A.size == 0:
            A = A.reshape(0, nv)
        if A.shape[1] != nv:
            raise ValueError("Aineq column count must match H")
        if b.shape[0] != A.shape[0]:
            raise ValueError("Aineq row count must equal len(bineq)")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "Aineq", np.ascontiguousarray(A))
        object.__setattr__(self, "bineq", b)
        object.__setattr__(self, "G", G)

    @property
    def nvar(self):
        return self.H.shape[0]

    @property
    def nrow(self):
        return self.Aineq.shape[0]


@dataclass
class QpSolution:
    ustar: np.ndarray | None
    lam: np.ndarray | None
    status: str  # "optimal" | "infeasible" | "max_iter"
    iterations: int = 0
    working_set: np.ndarray | None = None


@dataclass(frozen=True)
class LpProblem:
    """LP in maximization form: maximize c'x s.t. Aineq x <= bineq, lb <= x <= ub."""

    c: np.ndarray
    Aineq: np.ndarray | scipy.sparse.spmatrix | None = None
    bineq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        c = _as_vector(self.c, "c")
        object.__setattr__(self, "c", c)
        if (self.Aineq is None) != (self.bineq is None):
            raise ValueError("Aineq and bineq must be given together")
        if self.Aineq is not None:
            A = self.Aineq
            if not scipy.sparse.issparse(A):
                A = _as_matrix(A, "Aineq")
                object.__setattr__(self, "Aineq", A)
            b = _as_vector(self.bineq, "bineq")
            object.__setattr__(self, "bineq", b)
            if A.shape != (b.shape[0], c.shape[0]):
                raise ValueError("LP dimensions inconsistent")
        for name in ("lb", "ub"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(-1)
                if v.shape != c.shape:
                    raise ValueError(f"{name} has wrong length")
                object.__setattr__(self, name, v)


def solve_lp(p: LpProblem):
    """Solve an LP, returning (xstar, status, objective).

    status is one of "optimal", "infeasible", "unbounded".  xstar and the
    objective are None unless status == "optimal".
    """
    n = p.c.shape[0]
    lb = p.lb if p.lb is not None else np.full(n, -np.inf)
    ub = p.ub if p.ub is not None else np.full(n, np.inf)
    res = scipy.optimize.linprog(
        -p.c,
        A_ub=p.Aineq,
        b_ub=p.bineq,
        bounds=np.column_stack([lb, ub]),
        method="highs",
    )
    if res.status == 0:
        return np.asarray(res.x), "optimal", float(-res.fun)
    if res.status == 2:
        return None, "infeasible", None
    if res.status == 3:
        return None, "unbounded", None
    raise NumericalError(f"LP solver failed: {res.message}")


def _phase1_point(p: QpProblem, tol):
    """Find a feasible point of the QP's constraints, or None if empty."""
    if p.nrow == 0:
        return np.zeros(p.nvar)
    # minimize t s.t. A u - t <= b, t >= 0; feasible iff min t == 0
    A = np.hstack([p.Aineq, -np.ones((p.nrow, 1))])
    c = np.zeros(p.nvar + 1)
    c[-1] = -1.0
    lb = np.full(p.nvar + 1, -np.inf)
    lb[-1] = 0.0
    x, status, _ = solve_lp(LpProblem(c=c, Aineq=A, bineq=p.bineq, lb=lb))
    if status != "optimal" or x is None or x[-1] > tol:
        return None
    return x[:-1]


def _kkt_solve(H, f, A_w, b_w):
    """Minimizer of the QP restricted to A_w u == b_w, with multipliers."""
    nv = H.shape[0]
    w = A_w.shape[0]
    if w == 0:
        u = np.linalg.solve(H, -f)
        return u, np.empty(0)
    K = np.zeros((nv + w, nv + w))
    K[:nv, :nv] = H
    K[:nv, nv:] = A_w.T
    K[nv:, :nv] = A_w
    rhs = np.concatenate([-f, b_w])
    sol = np.linalg.solve(K, rhs)
    return sol[:nv], sol[nv:]


def solve_qp(p: QpProblem, warm=None, tol_kkt=DEFAULT_TOL_KKT, max_iter=None,
             warm_set=None):
    """Solve a strictly convex inequality-constrained QP.

    warm is an optional starting point; when omitted or infeasible a
    phase-1 LP supplies one (or detects infeasibility).  warm_set is an
    optional iterable of row indices used to seed the working set, e.g.
    the active set of a related solve.  The returned multipliers satisfy
    the KKT conditions at tol_kkt.
    """
    nv, q = p.nvar, p.nrow
    if max_iter is None:
        max_iter = 50 * (nv + q)
    A, b, H, f = p.Aineq, p.bineq, p.H, p.f

    u = None
    if warm is not None:
        u0 = _as_vector(warm, "warm")
        if u0.shape != (nv,):
            raise ValueError("warm start has wrong length")
        if q == 0 or np.all(A @ u0 <= b + tol_kkt):
            u = u0.copy()
    if u is None:
        u = _phase1_point(p, tol_kkt)
        if u is None:
            return QpSolution(None, None, "infeasible")

    s = b - A @ u if q else np.empty(0)
    np.maximum(s, 0.0, out=s)

    # Seed the working set only with rows tight at the start: the descent
    # argument needs every working row to pass through the iterate.
    tight = max(10.0 * tol_kkt, 1e-7)
    work: list[int] = []
    if warm_set is not None:
        for i in warm_set:
            i = int(i)
            if 0 <= i < q and s[i] <= tight and i not in work and len(work) < nv:
                work.append(i)

    in_work = np.zeros(q, dtype=np.uint8)
    if work:
        in_work[np.array(work, dtype=np.intp)] = 1

    scale = max(1.0, np.abs(H).max())
    tol_dir = 1e-11 * scale
    it = 0
    stalled = 0
    lam_w = np.empty(0)
    while it < max_iter:
        it += 1
        idx = np.array(work, dtype=np.intp)
        A_w = A[idx] if idx.size else np.empty((0, nv))
        b_w = b[idx] if idx.size else np.empty(0)
        try:
            u_eq, lam_w = _kkt_solve(H, f, A_w, b_w)
            bad = (not np.all(np.isfinite(u_eq))) or (
                idx.size and np.abs(A_w @ u_eq - b_w).max() > 1e-6 * max(1.0, np.abs(b_w).max())
            )
        except np.linalg.LinAlgError:
            bad = True
        if bad:
            # Dependent working set (possible with warm-set guesses).
            in_work[work.pop()] = 0
            continue
        d = u_eq - u
        if np.abs(d).max() <= tol_dir:
            neg = np.where(lam_w < -tol_kkt)[0]
            if neg.size == 0:
                u = u_eq
                break
            if stalled > 30:
                # anti-cycling on degenerate faces: lowest index leaves
                j = int(neg.min())
            else:
                # most negative multiplier leaves (first on ties)
                j = int(neg[np.argmin(lam_w[neg])])
            in_work[work.pop(j)] = 0
            continue
        if q:
            alpha, blk, Ad = _backend.kernels.ratio_scan(A, d, s, in_work, tol_dir)
        else:
            alpha, blk = 1.0, -1
        stalled = stalled + 1 if alpha <= 1e-13 else 0
        if alpha >= 1.0:
            u = u_eq
            if q:
                s -= Ad
                np.maximum(s, 0.0, out=s)
            continue
        u = u + alpha * d
        if q:
            s -= alpha * Ad
            np.maximum(s, 0.0, out=s)
        if blk >= 0:
            s[blk] = 0.0
            work.append(blk)
            in_work[blk] = 1
    else:
        return QpSolution(None, None, "max_iter", iterations=it)

    lam = np.zeros(q)
    if work:
        lam[np.array(work, dtype=np.intp)] = np.maximum(lam_w, 0.0)
    return QpSolution(u, lam, "optimal", iterations=it,
                      working_set=np.array(sorted(work), dtype=np.intp))


def kkt_residuals(p: QpProblem, sol: QpSolution):
    """(stationarity, primal feasibility, complementarity) infinity norms."""
    u, lam = sol.ustar, sol.lam
    stat = np.abs(p.H @ u + p.f + p.Aineq.T @ lam).max(initial=0.0)
    if p.nrow:
        r = p.Aineq @ u - p.bineq
        feas = r.max(initial=0.0)
        comp = np.abs(lam * r).max(initial=0.0)
    else:
        feas = comp = 0.0
    return stat, feas, comp
