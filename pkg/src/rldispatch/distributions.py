"""Error-law primitives: quantiles, cdfs, densities, sampling.

Two zero-mean laws are supported, both parameterized by their standard
deviation so policies can swap laws without touching the variance
bookkeeping:

* ``"gaussian"``
* ``"laplace"`` (scale ``b = std / sqrt(2)``)

A standard deviation of zero is the degenerate point mass at zero; its
cdf is the unit step and every quantile is zero.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, erfinv

GAUSSIAN = "gaussian"
LAPLACE = "laplace"
LAWS = (GAUSSIAN, LAPLACE)

_SQRT2 = math.sqrt(2.0)


def normal_quantile(p):
    """Standard normal quantile, vectorized. Requires ``0 < p < 1``."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("normal_quantile requires p strictly inside (0, 1)")
    out = _SQRT2 * erfinv(2.0 * p - 1.0)
    return float(out) if out.ndim == 0 else out


def alpha_from_beta(beta):
    """Safety factor for a violation budget: ``sqrt(2) * erfinv(1 - 2 beta)``.

    Identical to ``normal_quantile(1 - beta)``.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any((beta <= 0.0) | (beta >= 1.0)):
        raise ValueError("alpha_from_beta requires beta strictly inside (0, 1)")
    out = _SQRT2 * erfinv(1.0 - 2.0 * beta)
    return float(out) if out.ndim == 0 else out


def _check_law(law):
    if law not in LAWS:
        raise ValueError(f"unknown law {law!r}, expected one of {LAWS}")


def error_quantile(p, std, law=GAUSSIAN):
    """Quantile of a zero-mean error, vectorized over ``std``."""
    _check_law(law)
    if not 0.0 < p < 1.0:
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ValueError("std must be nonnegative")
    if law == GAUSSIAN:
        unit = _SQRT2 * erfinv(2.0 * p - 1.0)
    elif p >= 0.5:
        unit = -math.log(2.0 * (1.0 - p)) / _SQRT2
    else:
        unit = math.log(2.0 * p) / _SQRT2
    out = std * unit
    return float(out) if out.ndim == 0 else out


def error_cdf(x, std, law=GAUSSIAN):
    """cdf of a zero-mean error, vectorized over ``x`` and ``std``.

    A zero standard deviation yields the unit step at the origin.
    """
    _check_law(law)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ValueError("std must be nonnegative")
    x = np.asarray(x, dtype=float)
    degenerate = std == 0.0
    safe = np.where(degenerate, 1.0, std)
    if law == GAUSSIAN:
        out = 0.5 * (1.0 + erf(x / (safe * _SQRT2)))
    else:
        b = safe / _SQRT2
        out = np.where(x < 0.0, 0.5 * np.exp(x / b), 1.0 - 0.5 * np.exp(-x / b))
    out = np.where(degenerate, np.where(x >= 0.0, 1.0, 0.0), out)
    return float(out) if out.ndim == 0 else out


def error_pdf(x, std, law=GAUSSIAN):
    """Density of a zero-mean error. Undefined for the degenerate law."""
    _check_law(law)
    std = np.asarray(std, dtype=float)
    if np.any(std <= 0):
        raise ValueError("error_pdf requires std > 0")
    x = np.asarray(x, dtype=float)
    if law == GAUSSIAN:
        out = np.exp(-0.5 * (x / std) ** 2) / (std * math.sqrt(2.0 * math.pi))
    else:
        b = std / _SQRT2
        out = np.exp(-np.abs(x) / b) / (2.0 * b)
    return float(out) if out.ndim == 0 else out


def sample_errors(rng: np.random.Generator, std, law=GAUSSIAN, size=None):
    """Draw zero-mean errors with the given per-component standard deviation.

    ``std`` may be a scalar or an array broadcastable to ``size``.
    """
    _check_law(law)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ValueError("std must be nonnegative")
    if law == GAUSSIAN:
        return rng.normal(0.0, 1.0, size=size) * std
    return rng.laplace(0.0, 1.0, size=size) * (std / _SQRT2)
