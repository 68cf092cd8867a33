"""Rolling net-demand forecasts and their error model.

A horizon of ``T`` dispatch periods is tracked with a forecast vector of
length ``T + 1``; the final coordinate is a bookkeeping period that is
never dispatched or priced. At stage ``t`` coordinates ``0..t`` hold
realized demand and coordinates ``t+1..T`` hold the current forecast.
Moving from stage ``t`` to ``t+1`` adds a marginal error vector of
length ``T - t`` to the not-yet-realized coordinates, which makes
coordinate ``t+1`` realized.

Uncertainty is described by a horizon curve ``sigma(h)``: the standard
deviation of the total error of an ``h``-step-ahead forecast, with
``sigma(0) = 0`` because the current period is observed before
dispatch. The marginal update for target period ``tau`` seen at stage
``t`` then has standard deviation
``sqrt(sigma(tau - t)^2 - sigma(tau - t - 1)^2)``, and the marginal
variances telescope back to ``sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from .validation import check_int, check_scalar, check_vector


def sqrt_sigma_curve(scale: float, T: int) -> tuple:
    """Horizon curve ``sigma(h) = scale * sqrt(h)`` tabulated for ``h = 0..T``."""
    scale = check_scalar(scale, "scale", minimum=0.0)
    return tuple(scale * np.sqrt(np.arange(T + 1)))


@dataclass(frozen=True)
class ErrorModel:
    """Forecast error law over a ``T``-period horizon.

    ``sigma`` is the horizon curve tabulated at ``h = 0..T``. It must
    start at zero and be nondecreasing so every marginal variance is
    nonnegative.
    """

    T: int
    sigma: tuple
    law: str = dist.GAUSSIAN

    def __post_init__(self):
        check_int(self.T, "T", minimum=1)
        sigma = check_vector(self.sigma, "sigma", size=self.T + 1, nonnegative=True)
        if sigma[0] != 0.0:
            raise ValueError("sigma(0) must be 0: the current period is observed")
        if np.any(np.diff(sigma) < 0):
            raise ValueError("sigma must be nondecreasing in the horizon")
        if self.law not in dist.LAWS:
            raise ValueError(f"unknown law {self.law!r}")
        object.__setattr__(self, "sigma", tuple(float(s) for s in sigma))

    @classmethod
    def from_curve(cls, T, curve, law=dist.GAUSSIAN):
        """Build from a callable ``h -> sigma(h)``."""
        return cls(T=T, sigma=tuple(float(curve(h)) for h in range(T + 1)), law=law)

    @classmethod
    def proportional(cls, T, net_demand, rho=0.05, law=dist.GAUSSIAN):
        """Default benchmark model: ``sigma(h) = rho * mean(|net demand|) * sqrt(h)``."""
        d = check_vector(net_demand, "net_demand")
        scale = check_scalar(rho, "rho", minimum=0.0) * float(np.mean(np.abs(d)))
        return cls(T=T, sigma=sqrt_sigma_curve(scale, T), law=law)

    def _check_pair(self, t, tau):
        check_int(t, "t", minimum=0)
        check_int(tau, "tau", minimum=t + 1, maximum=self.T)

    def marginal_std(self, t, tau):
        """Standard deviation of the stage-``t`` marginal update for period ``tau``."""
        self._check_pair(t, tau)
        h = tau - t
        var = self.sigma[h] ** 2 - self.sigma[h - 1] ** 2
        return float(np.sqrt(max(var, 0.0)))

    def cumulative_std(self, t, tau):
        """Standard deviation of the total stage-``t`` forecast error for period ``tau``.

        Equals ``sigma(tau - t)`` because the marginal variances telescope.
        """
        self._check_pair(t, tau)
        return self.sigma[tau - t]

    def marginal_stds(self, t):
        """Vector of marginal stds for the stage-``t`` update, coordinates ``t+1..T``."""
        check_int(t, "t", minimum=0, maximum=self.T - 1)
        sq = np.asarray(self.sigma, dtype=float) ** 2
        var = np.diff(sq)[: self.T - t]
        return np.sqrt(np.maximum(var, 0.0))

    def sample_marginal(self, rng: np.random.Generator, t):
        """Draw one stage-``t`` marginal error vector (independent coordinates)."""
        stds = self.marginal_stds(t)
        return dist.sample_errors(rng, stds, self.law, size=stds.shape)

    def quantile(self, p, std):
        return dist.error_quantile(p, std, self.law)

    def cdf(self, x, std):
        return dist.error_cdf(x, std, self.law)

    def pdf(self, x, std):
        return dist.error_pdf(x, std, self.law)


@dataclass(frozen=True)
class ForecastState:
    """Forecast vector at a single stage.

    ``dhat`` has length ``T + 1``; coordinates up to ``t`` are realized.
    """

    t: int
    dhat: np.ndarray

    def __post_init__(self):
        dhat = check_vector(self.dhat, "dhat")
        object.__setattr__(self, "dhat", dhat)
        check_int(self.t, "t", minimum=0, maximum=len(dhat) - 1)

    @property
    def T(self) -> int:
        return len(self.dhat) - 1

    @property
    def current(self) -> float:
        """Realized demand of the current period."""
        return float(self.dhat[self.t])


def update_forecast(state: ForecastState, eps) -> ForecastState:
    """Advance one stage by applying a marginal error to the open coordinates.

    ``eps`` has length ``T - t`` and is added to coordinates ``t+1..T``.
    """
    T = state.T
    if state.t >= T:
        raise ValueError("cannot update past the end of the horizon")
    eps = check_vector(eps, "eps", size=T - state.t)
    dhat = state.dhat.copy()
    dhat[state.t + 1:] += eps
    return ForecastState(t=state.t + 1, dhat=dhat)


def update_matrix(T: int, t: int) -> np.ndarray:
    """Matrix form of the stage-``t`` update: zeros stacked over an identity.

    Shape ``(T + 1, T - t)``; ``update_forecast`` is addition of this
    matrix applied to the marginal error.
    """
    check_int(T, "T", minimum=1)
    check_int(t, "t", minimum=0, maximum=T - 1)
    C = np.zeros((T + 1, T - t))
    C[t + 1:, :] = np.eye(T - t)
    return C
