"""1D heat-equation benchmark scenario with distributed heating actuators.

The plant is the diffusion-decay PDE

    dT/dt = alpha * T'' - beta * T + B1(r) u1 + B2(r) u2,   r in [0, 1],

with convective (Robin) boundaries T'(0) = gamma T(0), T'(1) = -gamma T(1),
discretized by central differences on an equidistant grid and a zero-order
hold.  States are temperature increments over body temperature, so the
initial state is zero and all states stay nonnegative: the discretized A
and B are elementwise nonnegative, which the specialized reachability
constructions below rely on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import InfeasibleError, ScenarioError
from .lti import LtiSystem
from .reach import UNIVERSAL, BoxSet, ReachTubes
from .solvers import LpProblem, solve_lp, zoh_discretize

log = logging.getLogger(__name__)

# Default PDE coefficients.
ALPHA = 2.5e-4
BETA = 1e-2
GAMMA = 2.5e-3
TUMOR_INTERVAL = (0.6, 0.9)
HEALTHY_LIMIT = 5.0
TUMOR_LIMIT = 7.0

# Default actuator profiles: one deposition peak on the tumor, one with a
# healthy-tissue hot spot.  Amplitudes are scaled so the constraints are
# unreachable within a few steps from a cold start yet bind in steady state.
DEFAULT_PROFILES = {
    "b1": [{"amp": 0.30, "center": 0.75, "width": 0.10}],
    "b2": [
        {"amp": 0.18, "center": 0.30, "width": 0.12},
        {"amp": 0.12, "center": 0.75, "width": 0.20},
    ],
}


def gaussian_profile(r, terms):
    """Sum of Gaussian bumps amp * exp(-((r - center)/width)^2)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    for t in terms:
        out += t["amp"] * np.exp(-(((r - t["center"]) / t["width"]) ** 2))
    return out


def _clamp_nonnegative(M, name, tol_rel=1e-12):
    scale = np.abs(M).max()
    worst = M.min()
    if worst < -tol_rel * max(1.0, scale):
        raise ScenarioError(
            f"{name} has negative entries (min {worst:.3e}); "
            "the positive-system constructions do not apply"
        )
    return np.maximum(M, 0.0)


def laplacian_robin(n, alpha, beta, gamma):
    """Continuous-time generator: central differences with Robin boundaries.

    Boundary rows eliminate the ghost nodes implied by T'(0) = gamma T(0)
    and T'(1) = -gamma T(1).
    """
    if n < 3:
        raise ScenarioError("need at least 3 grid points")
    h = 1.0 / (n - 1)
    c = alpha / h**2
    Ac = np.zeros((n, n))
    idx = np.arange(1, n - 1)
    Ac[idx, idx - 1] = c
    Ac[idx, idx + 1] = c
    Ac[idx, idx] = -2.0 * c
    Ac[0, 0] = -c * (2.0 + 2.0 * h * gamma)
    Ac[0, 1] = 2.0 * c
    Ac[-1, -1] = -c * (2.0 + 2.0 * h * gamma)
    Ac[-1, -2] = 2.0 * c
    Ac -= beta * np.eye(n)
    return Ac


def discretize(n, dt, alpha=ALPHA, beta=BETA, gamma=GAMMA, B1c=None, B2c=None):
    """Zero-order-hold discretization of the heat PDE with given actuators.

    B1c/B2c are callables r -> deposition density (defaults per
    DEFAULT_PROFILES).  Returns an LtiSystem with elementwise nonnegative
    matrices; anything beyond rounding dust below zero is rejected.
    """
    if dt <= 0:
        raise ScenarioError("dt must be positive")
    if alpha <= 0:
        raise ScenarioError("alpha must be positive")
    if beta < 0 or gamma < 0:
        raise ScenarioError("beta and gamma must be nonnegative")
    r = np.linspace(0.0, 1.0, n)
    if B1c is None:
        B1c = lambda rr: gaussian_profile(rr, DEFAULT_PROFILES["b1"])
    if B2c is None:
        B2c = lambda rr: gaussian_profile(rr, DEFAULT_PROFILES["b2"])
    Bc = np.column_stack([B1c(r), B2c(r)])
    if Bc.min() < 0:
        raise ScenarioError("actuator profiles must be nonnegative")
    Ac = laplacian_robin(n, alpha, beta, gamma)
    A, B = zoh_discretize(Ac, Bc, dt)
    A = _clamp_nonnegative(A, "A")
    B = _clamp_nonnegative(B, "B")
    return LtiSystem(A=A, B=B)


def terminal_set(sys: LtiSystem, Tmax):
    """Largest-volume invariant temperature cap below Tmax.

    Maximizes the 1-norm of T subject to (A - I) T <= 0 and 0 <= T <= Tmax,
    then backs T off uniformly so A T <= T holds with margin despite LP
    tolerances (row sums of A are below one, so a uniform shift clears a
    uniform violation).
    """
    Tmax = np.asarray(Tmax, dtype=float).reshape(-1)
    n = sys.n
    if Tmax.shape != (n,):
        raise ScenarioError("Tmax has wrong length")
    M = sys.A - np.eye(n)
    A_ub = sparse.csr_matrix(np.where(np.abs(M) < 1e-14, 0.0, M))
    x, status, _ = solve_lp(LpProblem(
        c=np.ones(n), Aineq=A_ub, bineq=np.zeros(n),
        lb=np.zeros(n), ub=Tmax))
    if status != "optimal":
        raise InfeasibleError(f"terminal-set LP failed: {status}")
    T = np.minimum(np.asarray(x), Tmax)
    # The LP meets A T <= T only to solver tolerance.  Blend toward the
    # constant vector c*1, which is invariant with margin c*(1 - max row
    # sum); by convexity an O(tolerance) blend weight restores invariance
    # exactly while moving T by a negligible amount.
    viol = float((sys.A @ T - T).max())
    if viol > 0:
        margin = float(1.0 - sys.A.sum(axis=1).max())
        c = float(Tmax.min())
        if margin <= 0 or c <= 0:
            raise ScenarioError("no invariant backoff direction: row sums >= 1")
        theta = (viol + 1e-9) / (viol + 1e-9 + c * margin)
        T = (1.0 - theta) * T + theta * c
        viol = float((sys.A @ T - T).max())
        if viol > 0:
            raise ScenarioError("terminal set polish failed to restore invariance")
    return T


def references(sys: LtiSystem, Tmax, tumor_mask):
    """Steady-state pair maximizing total tumor temperature.

    Solves max sum of tumor entries of x over equilibria x = A x + B u with
    0 <= u <= 1 and x <= Tmax.  The steady-state map x = (I - A)^-1 B u is
    substituted, leaving an LP in the m inputs.
    """
    Tmax = np.asarray(Tmax, dtype=float).reshape(-1)
    tumor_mask = np.asarray(tumor_mask, dtype=bool).reshape(-1)
    n, m = sys.n, sys.m
    S = np.linalg.solve(np.eye(n) - sys.A, sys.B)
    c = S[tumor_mask].sum(axis=0)
    u, status, _ = solve_lp(LpProblem(
        c=c, Aineq=S, bineq=Tmax, lb=np.zeros(m), ub=np.ones(m)))
    if status != "optimal":
        raise InfeasibleError(f"reference LP failed: {status}")
    uref = np.asarray(u)
    xref = S @ uref
    return xref, uref


def case_tubes(sys: LtiSystem, Tterminal, N: int) -> ReachTubes:
    """Reachability tubes specialized to the nonnegative heat system.

    Forward step i from a zero start: the coordinatewise maximum heating
    with both inputs saturated, [0, sum_{k<i} A^k B 1].  Backward step i:
    [0, Tterminal + delta_i] where delta_{i,j} is the largest perturbation
    of coordinate j above the terminal cap that still decays into the cap
    after N-i steps with zero input; coordinates the dynamics cannot see
    get an infinite extent (never used to drop a row).  Negative ratio
    numerators from rounding are clamped to zero and logged.
    """
    Tterm = np.asarray(Tterminal, dtype=float).reshape(-1)
    n = sys.n
    if N < 1:
        raise ValueError("horizon must be at least 1")
    forward = []
    heat = np.zeros(n)
    AkB1 = sys.B @ np.ones(sys.m)
    for _ in range(N):
        heat = heat + AkB1
        forward.append(BoxSet(q=heat / 2.0, l=heat / 2.0))
        AkB1 = sys.A @ AkB1

    backward: list = []
    Apow = np.eye(n)
    deltas = {}
    clamped = 0
    for p in range(1, N):
        Apow = Apow @ sys.A  # A^p
        s = Tterm - Apow @ Tterm
        neg = s < 0
        if neg.any():
            clamped += int(neg.sum())
            s = np.maximum(s, 0.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            ratios = np.where(Apow > 0.0, s[:, None] / Apow, np.inf)
        delta = ratios.min(axis=0)
        delta[~(Apow > 0.0).any(axis=0)] = np.inf
        deltas[p] = delta
    if clamped:
        log.info("backward tube: clamped %d negative slack entries to zero", clamped)

    for i in range(1, N):
        delta = deltas[N - i]
        hi = Tterm + delta
        finite = np.isfinite(hi)
        q = np.where(finite, hi / 2.0, 0.0)
        l = np.where(finite, hi / 2.0, np.inf)
        backward.append(BoxSet(q=q, l=l))
    backward.append(UNIVERSAL)
    return ReachTubes(forward=tuple(forward), backward=tuple(backward), N=N)


@dataclass(frozen=True)
class HeatScenario:
    """A fully assembled hyperthermia benchmark instance."""

    n: int
    dt: float
    alpha: float
    beta: float
    gamma: float
    tumor: tuple
    Tmax: np.ndarray
    Tterminal: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    xref: np.ndarray
    uref: np.ndarray
    sys: LtiSystem

    @property
    def r(self):
        return np.linspace(0.0, 1.0, self.n)

    @property
    def tumor_mask(self):
        r = self.r
        return (r >= self.tumor[0]) & (r <= self.tumor[1])


def build_scenario(n, dt=1.0, alpha=ALPHA, beta=BETA, gamma=GAMMA,
                   tumor=TUMOR_INTERVAL, healthy_limit=HEALTHY_LIMIT,
                   tumor_limit=TUMOR_LIMIT, profiles=None) -> HeatScenario:
    """Discretize, compute the terminal cap and references, and bundle."""
    if not (0.0 <= tumor[0] < tumor[1] <= 1.0):
        raise ScenarioError("tumor interval must be ordered inside [0, 1]")
    if healthy_limit <= 0 or tumor_limit <= 0:
        raise ScenarioError("temperature limits must be positive")
    profiles = profiles or DEFAULT_PROFILES
    b1 = lambda rr: gaussian_profile(rr, profiles["b1"])
    b2 = lambda rr: gaussian_profile(rr, profiles["b2"])
    sys = discretize(n, dt, alpha, beta, gamma, b1, b2)
    r = np.linspace(0.0, 1.0, n)
    mask = (r >= tumor[0]) & (r <= tumor[1])
    Tmax = np.where(mask, tumor_limit, healthy_limit)
    Tterm = terminal_set(sys, Tmax)
    xref, uref = references(sys, Tmax, mask)
    return HeatScenario(
        n=n, dt=dt, alpha=alpha, beta=beta, gamma=gamma, tumor=tuple(tumor),
        Tmax=Tmax, Tterminal=Tterm, B1=b1(r), B2=b2(r),
        xref=xref, uref=uref, sys=sys)


def forward_tube_check(sys: LtiSystem, tubes: ReachTubes, samples=200, seed=0,
                       x0=None):
    """Monte-Carlo soundness spot check of the forward tube.

    Simulates admissible random input sequences from x0 (default the
    origin) and verifies every visited state stays inside the per-step
    forward boxes shifted by the free response.  Returns (ok, detail).
    """
    rng = np.random.default_rng(seed)
    n, m, N = sys.n, sys.m, tubes.N
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    X = np.tile(x0, (samples, 1))
    free = x0.copy()
    worst = -np.inf
    for i in range(1, N + 1):
        U = rng.uniform(0.0, 1.0, (samples, m))
        X = X @ sys.A.T + U @ sys.B.T
        free = sys.A @ free
        box = tubes.forward[i - 1]
        hi = free + box.q + box.l
        lo = free + box.q - box.l
        worst = max(worst, float((X - hi).max()), float((lo - X).max()))
        if worst > 1e-9:
            return False, f"violation {worst:.3e} at step {i}"
    return True, f"worst margin {worst:.3e}"


def validate_scenario(scn: HeatScenario):
    """Invariant checks for a scenario; returns [(name, ok, detail), ...]."""
    checks = []
    A, B = scn.sys.A, scn.sys.B
    checks.append(("system_positivity",
                   bool(A.min() >= 0 and B.min() >= 0),
                   f"min(A)={A.min():.3e} min(B)={B.min():.3e}"))
    inv = float((A @ scn.Tterminal - scn.Tterminal).max())
    checks.append(("terminal_invariance", inv <= 1e-10, f"max(A T - T)={inv:.3e}"))
    ordered = bool(np.all(scn.Tmax >= scn.Tterminal) and np.all(scn.Tterminal >= 0))
    checks.append(("terminal_below_limits", ordered, ""))
    eq = float(np.abs(scn.xref - A @ scn.xref - B @ scn.uref).max())
    checks.append(("reference_equilibrium", eq <= 1e-9, f"residual={eq:.3e}"))
    inb = bool(np.all(scn.uref >= -1e-12) and np.all(scn.uref <= 1 + 1e-12))
    checks.append(("reference_input_bounds", inb, f"uref={scn.uref}"))
    under = float((scn.xref - scn.Tmax).max())
    checks.append(("reference_below_limits", under <= 1e-7, f"max(xref-Tmax)={under:.3e}"))
    return checks
