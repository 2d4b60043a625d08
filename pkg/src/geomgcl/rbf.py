"""Gaussian radial-basis expansion of geometric scalars.

Distances are expanded on a soft-decay axis: the input x is mapped to
exp(-x) before comparison against K centers spread uniformly over
[exp(-d_max), 1]. Angles are expanded directly against K centers over
[0, pi]. Widths follow from the center spacing:

    distance: beta = (2/K * (1 - exp(-d_max)))^-2
    angle:    beta = (2*pi/K)^-2
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

DISTANCE = "distance"
ANGLE = "angle"


@dataclass(frozen=True)
class RbfSpec:
    kind: str
    k: int
    centers: np.ndarray
    beta: float


def make_spec(kind, k, d_max=None):
    """Build the K centers and width for one expansion kind."""
    if k < 2:
        raise ValueError(f"rbf size must be >= 2, got {k}")
    if kind == DISTANCE:
        if d_max is None or d_max <= 0:
            raise ValueError("distance expansion requires d_max > 0")
        lo = math.exp(-d_max)
        centers = np.linspace(lo, 1.0, k)
        beta = (2.0 / k * (1.0 - lo)) ** -2
    elif kind == ANGLE:
        centers = np.linspace(0.0, math.pi, k)
        beta = (2.0 * math.pi / k) ** -2
    else:
        raise ValueError(f"unknown rbf kind: {kind!r}")
    return RbfSpec(kind=kind, k=k, centers=centers, beta=float(beta))


def _validate_domain(spec, x):
    if spec.kind == ANGLE:
        if np.any(x < 0.0) or np.any(x > math.pi):
            raise ValueError("angle input outside [0, pi]")
    else:
        if np.any(x < 0.0):
            raise ValueError("distance input must be >= 0")


def expand(spec, x):
    """Expand a scalar or 1-d array into (K,) or (N, K) Gaussian responses."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    _validate_domain(spec, arr)
    t = np.exp(-arr) if spec.kind == DISTANCE else arr
    out = kernels.gaussian_expand(np.ascontiguousarray(t), spec.centers, spec.beta)
    return out[0] if scalar else out


def expand_derivative(spec, x):
    """Analytic d/dx of expand, same shape conventions as expand."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    _validate_domain(spec, arr)
    if spec.kind == DISTANCE:
        t = np.exp(-arr)
        e = kernels.gaussian_expand(np.ascontiguousarray(t), spec.centers, spec.beta)
        # chain rule through t = exp(-x): d/dx = e * 2*beta*(t - mu) * t
        d = 2.0 * spec.beta * (t[:, None] - spec.centers[None, :]) * t[:, None] * e
    else:
        e = kernels.gaussian_expand(np.ascontiguousarray(arr), spec.centers, spec.beta)
        d = -2.0 * spec.beta * (arr[:, None] - spec.centers[None, :]) * e
    return d[0] if scalar else d
