"""Numerically robust special functions shared by all likelihood code.

Everything here works in log space; nothing exponentiates an
unnormalised density. Extremely small compositional shares (below
``TINY_SHARE``) are clamped before taking logs and the number of
clamped values is recorded so callers can report data-quality issues.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, psi

TINY_SHARE = 1e-300

_clamp_count = 0


def clamp_count() -> int:
    """Number of compositional entries clamped to ``TINY_SHARE`` so far."""
    return _clamp_count


def reset_clamp_count() -> None:
    global _clamp_count
    _clamp_count = 0


def _record_clamps(n: int) -> None:
    global _clamp_count
    _clamp_count += int(n)


def safe_log(x: np.ndarray) -> np.ndarray:
    """Log of positive shares, clamping values below ``TINY_SHARE``.

    Clamped entries are counted; see :func:`clamp_count`.
    """
    x = np.asarray(x, dtype=float)
    small = x < TINY_SHARE
    if np.any(small):
        _record_clamps(np.count_nonzero(small))
        x = np.where(small, TINY_SHARE, x)
    return np.log(x)


def log_gamma(x):
    """log Gamma(x) for x > 0 (scalar or array).

    Raises
    ------
    ValueError
        If any entry is not strictly positive.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("log_gamma requires strictly positive arguments")
    out = gammaln(arr)
    return float(out) if np.isscalar(x) else out


def digamma(x):
    """Digamma psi(x) for x > 0 (scalar or array)."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("digamma requires strictly positive arguments")
    out = psi(arr)
    return float(out) if np.isscalar(x) else out


def as_simplex(x, tol: float = 1e-12) -> np.ndarray:
    """Validate a composition: strictly positive entries summing to one.

    A one-dimensional composition is the degenerate vector (1,).
    """
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("composition must be a 1-d vector of length >= 1")
    if np.any(v <= 0):
        raise ValueError("composition entries must be strictly positive")
    if abs(v.sum() - 1.0) > tol:
        raise ValueError(f"composition sums to {v.sum()!r}, not 1")
    return v


def dirichlet_log_density(x, alpha) -> float:
    """Log density of a Dirichlet distribution, evaluated fully in log space.

    Parameters
    ----------
    x : array_like
        Composition (positive entries, summing to one). A vector of
        dimension one is the degenerate point mass and has log density 0.
    alpha : array_like
        Concentration parameters, same dimension as ``x``, all > 0.
    """
    xv = np.asarray(x, dtype=float)
    av = np.asarray(alpha, dtype=float)
    if xv.shape != av.shape or xv.ndim != 1:
        raise ValueError(f"dimension mismatch: x {xv.shape} vs alpha {av.shape}")
    if np.any(av <= 0):
        raise ValueError("alpha entries must be strictly positive")
    if xv.size == 1:
        return 0.0
    logx = safe_log(xv)
    return float(gammaln(av.sum()) - gammaln(av).sum() + ((av - 1.0) * logx).sum())
