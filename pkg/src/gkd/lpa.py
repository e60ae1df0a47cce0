"""Label propagation with a remembrance term and labeled-node clamping.

Each iteration computes::

    Y_k = (1 - alpha) * P @ Y_{k-1} + alpha * Y_0
    Y_k[labeled] = Y_L

where ``P`` is the row-normalized adjacency. For ``alpha > 0`` the map is a
contraction, so iteration converges to a unique fixed point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .nn import ShapeError, UsageError

SIMPLEX_TOL = 1e-9


class ValidationError(ValueError):
    """Input label matrix is not a valid distribution per row."""


@dataclass(frozen=True)
class LPAConfig:
    alpha: float = 0.5
    max_iterations: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise UsageError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.max_iterations < 1:
            raise UsageError("max_iterations must be at least 1")
        if not self.tol > 0:
            raise UsageError("tolerance must be positive")


@dataclass
class PropagationTrace:
    changes: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.changes)


def check_simplex(Y: np.ndarray, tol: float = SIMPLEX_TOL, what: str = "label matrix"):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {Y.shape}")
    bad = (Y.min(axis=1) < -tol) | (np.abs(Y.sum(axis=1) - 1.0) > tol) | ~np.isfinite(Y).all(axis=1)
    if bad.any():
        raise ValidationError(f"{what}: row {int(np.flatnonzero(bad)[0])} is not on the simplex")
    return Y


def _prepare(P, Y0, Y_L, labeled_mask):
    Y0 = check_simplex(Y0, what="Y0")
    n = Y0.shape[0]
    if P.shape != (n, n):
        raise ShapeError(f"operator shape {P.shape} does not match {n} label rows")
    mask = np.zeros(n, dtype=bool) if labeled_mask is None else np.asarray(labeled_mask, bool)
    if mask.shape != (n,):
        raise ShapeError(f"labeled mask shape {mask.shape}, expected ({n},)")
    Y_L = np.asarray(Y_L, dtype=float)
    if Y_L.shape == Y0.shape:
        Y_L = Y_L[mask]
    if Y_L.shape != (int(mask.sum()), Y0.shape[1]):
        raise ShapeError(f"Y_L shape {Y_L.shape} does not match labeled rows")
    check_simplex(Y_L, what="Y_L")
    return Y0, Y_L, mask


def propagate(P, Y0, Y_L, labeled_mask, cfg: LPAConfig | None = None, return_trace: bool = False):
    """Iterate the clamped recurrence to convergence.

    ``Y_L`` may be given either as the full ``N x C`` matrix (only labeled
    rows are read) or as the ``|L| x C`` block of labeled rows. Labeled
    rows of ``Y0`` are overwritten with ``Y_L`` before iterating.
    """
    cfg = cfg or LPAConfig()
    Y0, Y_L, mask = _prepare(P, Y0, Y_L, labeled_mask)
    P = sp.csr_matrix(P)
    Y0 = Y0.copy()
    Y0[mask] = Y_L
    a = cfg.alpha
    Y = Y0
    trace = PropagationTrace()
    for _ in range(cfg.max_iterations):
        # same as (1 - a) P Y + a Y0, but exact when P Y == Y0 (edgeless graph, a = 1)
        Y_next = Y0 + (1.0 - a) * (P @ Y - Y0)
        Y_next[mask] = Y_L
        change = float(np.abs(Y_next - Y).max()) if Y.size else 0.0
        Y = Y_next
        trace.changes.append(change)
        if change < cfg.tol:
            trace.converged = True
            break
    return (Y, trace) if return_trace else Y


def lpa_fixed_point_oracle(P, Y0, Y_L, labeled_mask, alpha: float) -> np.ndarray:
    """Exact fixed point of the clamped recurrence by a dense linear solve.

    On the unlabeled block U::

        (I - (1 - a) P_UU) Y_U = (1 - a) P_UL Y_L + a Y0_U
    """
    if not 0.0 < alpha <= 1.0:
        raise UsageError(f"alpha must be in (0, 1], got {alpha}")
    Y0, Y_L, mask = _prepare(P, Y0, Y_L, labeled_mask)
    n = Y0.shape[0]
    if n > 200:
        raise UsageError("dense oracle is limited to N <= 200")
    P = sp.csr_matrix(P).toarray()
    U = ~mask
    out = Y0.copy()
    out[mask] = Y_L
    if not U.any():
        return out
    P_UU = P[np.ix_(U, U)]
    P_UL = P[np.ix_(U, mask)]
    lhs = np.eye(int(U.sum())) - (1.0 - alpha) * P_UU
    rhs = (1.0 - alpha) * (P_UL @ Y_L) + alpha * Y0[U]
    try:
        out[U] = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("singular propagation system") from exc
    return out
