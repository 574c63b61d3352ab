"""Discrete-time LTI plant, polyhedral sets, and condensed prediction matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LtiSystem:
    """x_{k+1} = A x_k + B u_k."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ValueError("B must be n x m")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("system matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


def simulate_step(sys: LtiSystem, x, u):
    """One exact step of the plant recursion."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != sys.n or u.shape[0] != sys.m:
        raise ValueError("state/input dimension mismatch")
    return sys.A @ x + sys.B @ u


@dataclass(frozen=True)
class PolyhedralSet:
    """{x | C x <= b}.  Emptiness is not checked at construction.

    identity_rows marks the common special case C == I (per-coordinate
    upper bounds), which several hot paths exploit.
    """

    C: np.ndarray
    b: np.ndarray
    identity_rows: bool = field(default=False)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if C.ndim != 2:
            raise ValueError("C must be a matrix")
        if C.shape[0] != b.shape[0]:
            raise ValueError("rows(C) must equal len(b)")
        ident = C.shape[0] == C.shape[1] and np.array_equal(C, np.eye(C.shape[0]))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "identity_rows", bool(ident))

    @classmethod
    def from_upper_bounds(cls, b):
        """The box-like set {x | x <= b}."""
        b = np.asarray(b, dtype=float).reshape(-1)
        return cls(np.eye(b.shape[0]), b)

    @classmethod
    def box(cls, lo, hi):
        """The bounded box {x | lo <= x <= hi}."""
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lo/hi must have equal length")
        d = lo.shape[0]
        C = np.vstack([np.eye(d), -np.eye(d)])
        return cls(C, np.concatenate([hi, -lo]))

    @property
    def nrows(self):
        return self.C.shape[0]

    @property
    def dim(self):
        return self.C.shape[1]


def contains(pset: PolyhedralSet, x, tol=1e-9):
    """Membership test C x <= b + tol."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != pset.dim:
        raise ValueError("point dimension mismatch")
    return bool(np.all(pset.C @ x <= pset.b + tol))


@dataclass(frozen=True)
class PredictionMatrices:
    """Stacked prediction X = Phi x + Gamma U over an N-step horizon.

    Block-row i of Phi is A^(i+1); Gamma is lower block-triangular with
    block (i, j) = A^(i-j) B.
    """

    Phi: np.ndarray
    Gamma: np.ndarray
    N: int

    def block(self, i):
        """(Phi_i, Gamma_i) for prediction step i in 1..N."""
        if not 1 <= i <= self.N:
            raise ValueError("prediction step out of range")
        n = self.Phi.shape[1]
        rows = slice((i - 1) * n, i * n)
        return self.Phi[rows], self.Gamma[rows]


def build_prediction(sys: LtiSystem, N: int) -> PredictionMatrices:
    """Dense prediction matrices for horizon N >= 1."""
    if N < 1:
        raise ValueError("horizon must be at least 1")
    n, m = sys.n, sys.m
    Phi = np.empty((N * n, n))
    Gamma = np.zeros((N * n, N * m))
    Apow = np.eye(n)
    AB = [sys.B]  # A^k B for k = 0..N-1
    for k in range(1, N):
        AB.append(sys.A @ AB[-1])
    for i in range(1, N + 1):
        Apow = sys.A @ Apow
        Phi[(i - 1) * n : i * n] = Apow
        for j in range(i):
            Gamma[(i - 1) * n : i * n, j * m : (j + 1) * m] = AB[i - 1 - j]
    return PredictionMatrices(Phi=Phi, Gamma=np.ascontiguousarray(Gamma), N=N)
