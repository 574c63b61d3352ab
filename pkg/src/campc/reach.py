"""Reachable tubes and their box/ellipsoid outer approximations.

Forward and backward tubes are computed offline from the origin (or from
the terminal set) and shifted by the free state response at runtime; only
the shift depends on the current state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lti import LtiSystem, PolyhedralSet, PredictionMatrices
from .solvers import LpProblem, solve_lp


@dataclass(frozen=True)
class BoxSet:
    """{x | -l <= P (x - q) <= l} with P invertible and l >= 0.

    P defaults to the identity (axis-aligned box), the only shape the hot
    paths need; a general P is supported for the membership and row tests.
    """

    q: np.ndarray
    l: np.ndarray
    P: np.ndarray | None = None  # None means identity

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        l = np.asarray(self.l, dtype=float).reshape(-1)
        if q.shape != l.shape:
            raise ValueError("q and l must have equal length")
        if np.any(l < 0):
            raise ValueError("half-widths must be nonnegative")
        P = self.P
        if P is not None:
            P = np.asarray(P, dtype=float)
            if P.shape != (q.size, q.size):
                raise ValueError("P must be d x d")
            # Pivot-threshold invertibility check.
            import warnings

            import scipy.linalg

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, _ = scipy.linalg.lu_factor(P)
            if np.abs(np.diag(lu)).min() < 1e-12 * max(1.0, np.abs(P).max()):
                raise ValueError("P is numerically singular")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "P", P)

    @classmethod
    def from_bounds(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if np.any(hi < lo):
            raise ValueError("empty interval")
        return cls(q=(lo + hi) / 2.0, l=(hi - lo) / 2.0)

    @property
    def dim(self):
        return self.q.size

    def bounds(self):
        """(lo, hi) for an axis-aligned box."""
        if self.P is not None:
            raise ValueError("bounds() requires an axis-aligned box")
        return self.q - self.l, self.q + self.l

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float).reshape(-1)
        y = x - self.q if self.P is None else self.P @ (x - self.q)
        return bool(np.all(np.abs(y) <= self.l + tol))

    def translate(self, v):
        return BoxSet(q=self.q + np.asarray(v, dtype=float).reshape(-1),
                      l=self.l, P=self.P)


@dataclass(frozen=True)
class EllipsoidSet:
    """{x | ||L' (x - q)||_2 <= 1} with L positive definite."""

    L: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if L.shape != (q.size, q.size):
            raise ValueError("L must be d x d")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "q", q)

    @property
    def dim(self):
        return self.q.size

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.linalg.norm(self.L.T @ (x - self.q)) <= 1.0 + tol)


UNIVERSAL = "universal"  # marker for the unconstrained final backward entry


@dataclass(frozen=True)
class ReachTubes:
    """Per-step reachable-set outer approximations over an N-step horizon.

    forward[i-1] outer-approximates the i-step forward reachable set from
    the origin; adding the free response Phi_i x shifts it to the current
    state.  backward[i-1] outer-approximates the states that can still
    reach the terminal set in N-i steps; the last entry is the UNIVERSAL
    marker so terminal constraints are never tested against the terminal
    set itself.
    """

    forward: tuple
    backward: tuple
    N: int

    def __post_init__(self):
        if len(self.forward) != self.N or len(self.backward) != self.N:
            raise ValueError("tube length must equal the horizon")
        if self.backward[-1] is not UNIVERSAL:
            raise ValueError("final backward entry must be the universal marker")


def forward_box_recursion(sys: LtiSystem, U: BoxSet, N: int, X0: BoxSet | None = None):
    """Axis-aligned interval outer approximation of the forward reachable sets.

    Starting box defaults to the origin.  Each step maps the previous box
    through the dynamics with interval arithmetic: the center follows the
    nominal map, the half-width picks up |A| l + |B| l_u.
    """
    if N < 1:
        raise ValueError("horizon must be at least 1")
    if U.P is not None:
        raise ValueError("input set must be axis-aligned")
    n = sys.n
    if X0 is None:
        X0 = BoxSet(q=np.zeros(n), l=np.zeros(n))
    absA, absB = np.abs(sys.A), np.abs(sys.B)
    boxes = []
    q, l = X0.q, X0.l
    for _ in range(N):
        q = sys.A @ q + sys.B @ U.q
        l = absA @ l + absB @ U.l
        boxes.append(BoxSet(q=q, l=l))
    return boxes


def _outer_box_of_polyhedron(pset: PolyhedralSet):
    """Tightest axis-aligned box containing a polyhedron, via 2d support LPs."""
    d = pset.dim
    lo = np.empty(d)
    hi = np.empty(d)
    for j in range(d):
        c = np.zeros(d)
        c[j] = 1.0
        x, status, val = solve_lp(LpProblem(c=c, Aineq=pset.C, bineq=pset.b))
        if status != "optimal":
            raise ValueError("terminal set is unbounded along a coordinate")
        hi[j] = val
        x, status, val = solve_lp(LpProblem(c=-c, Aineq=pset.C, bineq=pset.b))
        if status != "optimal":
            raise ValueError("terminal set is unbounded along a coordinate")
        lo[j] = -val
    return BoxSet.from_bounds(lo, hi)


def backward_box_recursion(sys: LtiSystem, U: BoxSet, XT: PolyhedralSet, N: int):
    """Interval outer approximation of the backward reachable sets.

    Entry i-1 (i = 1..N-1) contains every state that can reach XT in N-i
    steps under admissible inputs; entry N-1 is the UNIVERSAL marker.  The
    interval preimage requires invertible A; singular dynamics need a
    structure-specific construction instead.
    """
    if N < 1:
        raise ValueError("horizon must be at least 1")
    if U.P is not None:
        raise ValueError("input set must be axis-aligned")
    n = sys.n
    det = np.linalg.det(sys.A)
    if abs(det) < 1e-12 * max(1.0, np.abs(sys.A).max()) ** n:
        raise ValueError("generic backward recursion requires invertible A")
    Ainv = np.linalg.inv(sys.A)
    absAinv, absB = np.abs(Ainv), np.abs(sys.B)
    target = _outer_box_of_polyhedron(XT)
    sets: list = [UNIVERSAL]
    q, l = target.q, target.l
    for _ in range(N - 1):
        # Preimage of {y : |y - q| <= l} under x -> A x + B u, u in U.
        q = Ainv @ (q - sys.B @ U.q)
        l = absAinv @ (l + absB @ U.l)
        sets.append(BoxSet(q=q, l=l))
    sets.reverse()
    return sets


def shift_tube(tubes: ReachTubes, pred: PredictionMatrices, x):
    """Forward boxes translated by the free response Phi_i x.

    Backward entries are state-independent and pass through unchanged.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = pred.Phi.shape[1]
    if x.shape[0] != n:
        raise ValueError("state dimension mismatch")
    free = pred.Phi @ x
    shifted = []
    for i, box in enumerate(tubes.forward, start=1):
        shifted.append(box.translate(free[(i - 1) * n : i * n]))
    return shifted
