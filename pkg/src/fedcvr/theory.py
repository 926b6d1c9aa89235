"""Theoretical step sizes and minibatch sizes for COFIG and FRECON.

With ``sigma == 0`` every term that divides by ``sigma^2`` is treated as
``+inf``.
"""
import math
import warnings
from typing import Optional, Tuple

import numpy as np


def _require_positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


def _ceil(v: float) -> int:
    # snap float noise (e.g. 25.000000000000004) before rounding up
    r = round(v)
    if abs(v - r) <= 1e-9 * max(1.0, abs(v)):
        return int(r)
    return math.ceil(v)


def _two_thirds(N) -> float:
    return float(np.cbrt(N)) ** 2


def _sigma_term(numer: float, sigma: float) -> float:
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return math.inf if sigma == 0 else numer / sigma**2


def step_size_cofig_convex(L, omega, S, N, b, sigma, eps) -> Tuple[float, float]:
    """(eta, alpha) for COFIG targeting ``E f(x) - f* <= eps``."""
    _require_positive(L=L, S=S, N=N, b=b, eps=eps)
    w = 1.0 + omega
    eta = min(
        1.0 / (L * (2.0 + 8.0 * w / S)),
        S / (w * math.sqrt(N)),
        _sigma_term(b * S * eps / (2.0 * w), sigma),
    )
    return eta, 1.0 / w


def step_size_cofig_nonconvex(L, omega, S, N, b, sigma, eps) -> Tuple[float, float]:
    """(eta, alpha) for COFIG targeting ``E ||grad f(x)|| <= eps``."""
    _require_positive(L=L, S=S, N=N, b=b, eps=eps)
    w = 1.0 + omega
    eta = min(
        1.0 / (2.0 * L),
        S / (5.0 * L * w * _two_thirds(N)),
        S / (5.0 * L * w**1.5 * math.sqrt(N)),
        _sigma_term(b * S * eps**2 / (20.0 * w), sigma),
    )
    return eta, 1.0 / w


def step_size_frecon(L, omega, S, N) -> Tuple[float, float]:
    """Largest admissible FRECON step size, with alpha = 1 / (1 + omega)."""
    _require_positive(L=L, S=S, N=N)
    w = 1.0 + omega
    eta = 1.0 / (L * (1.0 + math.sqrt(10.0 * w**2 * N / S**2)))
    return eta, 1.0 / w


def minibatch_cofig(sigma, eps, N, convex: bool) -> int:
    _require_positive(eps=eps, N=N)
    scale = math.sqrt(N) if convex else _two_thirds(N)
    return max(1, _ceil(sigma**2 / (eps**2 * scale)))


def minibatch_frecon(sigma, eps, N, S, omega, cap: Optional[int] = None) -> int:
    """ceil((1+omega)^2 N sigma^2 / (S^2 eps^2)), unit hidden constant.

    If ``cap`` is given (the smallest client's row count) and the bound
    exceeds it, ``cap`` is returned and a ``RuntimeWarning`` is issued.
    """
    _require_positive(eps=eps, N=N, S=S)
    b = max(1, _ceil((1.0 + omega) ** 2 * N * sigma**2 / (S**2 * eps**2)))
    if cap is not None and b > cap:
        warnings.warn(f"FRECON minibatch bound {b} capped at smallest client size {cap}", RuntimeWarning)
        return cap
    return b
