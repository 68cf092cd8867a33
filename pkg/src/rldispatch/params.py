"""Problem constants shared by every dispatch policy."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .validation import check_int, check_scalar


@dataclass(frozen=True)
class DispatchParams:
    """Economic and engineering constants for a multi-period dispatch problem.

    Ramp limits are stored as nonnegative magnitudes: from a previous
    dispatch ``g`` the next dispatch must lie in
    ``[max(0, g - r_down), g + r_up]``. The first dispatch of a horizon
    is unconstrained below/above (no previous dispatch).

    ``betas`` are the per-constraint-class violation budgets used by the
    chance-constrained policy, in row-block order: demand coverage,
    dispatch nonnegativity, ramp-down, ramp-up.
    """

    T: int
    r_up: float
    r_down: float
    c: float = 50.0
    q: float = 2000.0
    betas: tuple = (0.03, 0.03, 0.03, 0.03)

    def __post_init__(self):
        check_int(self.T, "T", minimum=1)
        c = check_scalar(self.c, "c", minimum=0.0, strict_min=True)
        check_scalar(self.q, "q", minimum=3.0 * c, strict_min=True)
        check_scalar(self.r_up, "r_up", minimum=0.0)
        check_scalar(self.r_down, "r_down", minimum=0.0)
        if len(self.betas) != 4:
            raise ValueError(f"betas must have 4 entries, got {len(self.betas)}")
        for i, b in enumerate(self.betas):
            check_scalar(b, f"betas[{i}]", minimum=0.0, maximum=0.5,
                         strict_min=True, strict_max=True)
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))


def feasible_interval(g_prev, params: DispatchParams):
    """Closed dispatch interval reachable from ``g_prev``.

    ``g_prev=None`` means there is no previous dispatch (first stage),
    in which case the interval is ``[0, inf)``.
    """
    if g_prev is None:
        return 0.0, math.inf
    g_prev = check_scalar(g_prev, "g_prev", minimum=0.0)
    return max(0.0, g_prev - params.r_down), g_prev + params.r_up


def clamp_to_interval(x, lo, hi):
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    return min(max(x, lo), hi)
