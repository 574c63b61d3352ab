"""Pure-numpy implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable or when
CAMPC_BACKEND=python is set.  Semantics must match campc._kernels exactly;
the test suite and the backend benchmark run both.
"""

import numpy as np

BACKEND = "python"


def ratio_scan(A, d, s, in_work, tol):
    """Largest feasible step toward an equality-QP target.

    Returns (alpha, blocking_row, A @ d) where alpha is min(1, ratio) over
    rows outside the working set with positive directional derivative, and
    blocking_row is the first row attaining it (-1 when alpha == 1).
    """
    Ad = A @ d
    pos = (Ad > tol) & (in_work == 0)
    if not pos.any():
        return 1.0, -1, Ad
    ratios = np.full(Ad.shape, np.inf)
    np.divide(s, Ad, out=ratios, where=pos)
    ratios[~pos] = np.inf
    blk = int(np.argmin(ratios))
    alpha = float(ratios[blk])
    if alpha >= 1.0:
        return 1.0, -1, Ad
    return alpha, blk, Ad


def retained_rows(fwd_hi, bwd_ok, ls_slack, rho_w, b):
    """Indices of constraint rows that no redundancy test certifies.

    A row is removable when its forward-box maximum stays below the bound,
    when the precomputed backward-box test passed, or when the level-set
    ellipse maximum stays below the bound (rho_w <= ls_slack).
    """
    removable = (fwd_hi <= b) | (bwd_ok != 0) | (rho_w <= ls_slack)
    return np.nonzero(~removable)[0].astype(np.int64)
