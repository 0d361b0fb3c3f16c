"""Poincaré ball and Lorentz (hyperboloid) primitives.

Points are plain arrays whose last axis holds the coordinates, so every
function works on a single point or on a stack of them.  All functions go
through :mod:`hysurv.diffengine`, so they also accept graph tensors and can
be differentiated.

Conventions: a ball of curvature ``c`` is ``{x : c ||x||^2 < 1}``; the
matching hyperboloid is ``{(t, s) : -t^2 + ||s||^2 = -1/c, t > 0}``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import diffengine as de

BALL_EPS = 1e-6
ARTANH_MAX = 1.0 - 1e-7
ARCOSH_MIN = 1.0 + 1e-15
MIN_NORM = 1e-15
ROUNDING_SLACK = 4 * np.finfo(np.float64).eps


class LorentzPoint(NamedTuple):
    """Hyperboloid coordinates: ``time`` has shape ``(...)``, ``space`` ``(..., d)``."""

    time: object
    space: object


def check_curvature(c) -> float:
    c = float(c)
    if not np.isfinite(c) or c <= 0:
        raise ValueError(f"curvature must be a positive finite number, got {c}")
    return c


def _sqnorm(x, keepdims=True):
    return de.sum(de.square(x), axis=-1, keepdims=keepdims)


def _safe_norm(x, keepdims=True):
    return de.clamp(de.norm(x, axis=-1, keepdims=keepdims), MIN_NORM)


def _artanh(x):
    return de.artanh(de.clamp(x, 0.0, ARTANH_MAX))


def max_norm(c) -> float:
    """Largest norm a stored ball point may have."""
    return (1.0 - BALL_EPS) / np.sqrt(c)


def project_to_ball(x, c):
    """Pull ``x`` back inside the ball with a ``1e-6`` margin.

    Points already safely inside are returned with identical values; others
    are rescaled onto the sphere of radius ``(1 - 1e-6) / sqrt(c)``.  When
    rounding leaves a rescaled point an ulp past that sphere it is shrunk by
    a few ulps more.
    """
    c = check_curvature(c)
    if not np.all(np.isfinite(de.value_of(x))):
        raise FloatingPointError("non-finite coordinates reached project_to_ball")
    limit = max_norm(c)
    n = de.norm(x, axis=-1, keepdims=True)
    y = x * (limit / de.clamp(n, limit))
    over = c * np.sum(de.value_of(y) ** 2, axis=-1, keepdims=True) > (1.0 - BALL_EPS) ** 2
    if np.any(over):
        y = y * np.where(over, 1.0 - ROUNDING_SLACK, 1.0)
    return y


def conformal_factor(w, c):
    """``2 / (1 - c ||w||^2)``; shape ``(..., 1)``."""
    c = check_curvature(c)
    return 2.0 / (1.0 - c * _sqnorm(w))


def mobius_add(x, y, c):
    """Gyrovector addition ``x (+)_c y`` on the ball."""
    c = check_curvature(c)
    xy = de.sum(x * y, axis=-1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + (c * c) * x2 * y2
    return project_to_ball(num / den, c)


def _exp_direction(v, scaled_norm_factor, c):
    sc = np.sqrt(c)
    n = _safe_norm(v)
    return de.tanh(sc * scaled_norm_factor * n) * v / (sc * n)


def exp_map0(v, c):
    """Exponential map at the origin: ``tanh(sqrt(c)||v||) v / (sqrt(c)||v||)``."""
    c = check_curvature(c)
    # the norm clamp keeps v = 0 finite; the ratio tends to 1 there
    return project_to_ball(_exp_direction(v, 1.0, c), c)


def log_map0(y, c):
    """Inverse of :func:`exp_map0`."""
    c = check_curvature(c)
    sc = np.sqrt(c)
    n = _safe_norm(y)
    return _artanh(sc * n) * y / (sc * n)


def exp_map(w, v, c):
    """Exponential map at base point ``w``."""
    c = check_curvature(c)
    lam = conformal_factor(w, c)
    return mobius_add(w, project_to_ball(_exp_direction(v, lam / 2.0, c), c), c)


def log_map(w, y, c):
    """Logarithmic map at base point ``w``; ``log_map(w, w) == 0``."""
    c = check_curvature(c)
    sc = np.sqrt(c)
    lam = conformal_factor(w, c)
    u = mobius_add(-w, y, c)
    n = _safe_norm(u)
    return (2.0 / (sc * lam)) * _artanh(sc * n) * u / n


def geodesic_distance(x, y, c):
    """Hyperbolic distance on the ball; broadcasts over leading axes."""
    c = check_curvature(c)
    sc = np.sqrt(c)
    n = de.norm(mobius_add(-x, y, c), axis=-1)
    return (2.0 / sc) * _artanh(sc * n)


def lift_to_lorentz(x, c) -> LorentzPoint:
    """Map ball points onto the hyperboloid of the same curvature."""
    c = check_curvature(c)
    denom = 1.0 - c * _sqnorm(x, keepdims=False)
    space = 2.0 * x / de.reshape(denom, de.value_of(denom).shape + (1,))
    # time from the rounded space part keeps the hyperboloid constraint tight near the boundary
    return LorentzPoint(lorentz_time(space, c), space)


def lorentz_to_poincare(p: LorentzPoint, c):
    c = check_curvature(c)
    t = de.reshape(p.time, de.value_of(p.time).shape + (1,))
    return p.space / (1.0 + np.sqrt(c) * t)


def lorentz_time(space, c):
    """Time coordinate implied by the hyperboloid constraint."""
    c = check_curvature(c)
    inv_c = 1.0 / c
    # correctly rounded, so c<x,x>_L + 1 stays within c*t*ulp(t) of zero
    return de._apply("lorentz_time", lambda s: _time_forward(s, inv_c),
                     lambda g, t, s: (g[..., None] * s / t[..., None],), space)


def _time_forward(space, inv_c):
    s = np.asarray(space, dtype=np.longdouble)
    return np.sqrt(inv_c + np.sum(s * s, axis=-1)).astype(np.float64)


def _minkowski_forward(ut, vt, us, vs):
    prod = np.asarray(us, dtype=np.longdouble) * np.asarray(vs, dtype=np.longdouble)
    return (np.sum(prod, axis=-1) - np.asarray(ut, dtype=np.longdouble) * vt).astype(np.float64)


def _minkowski_backward(g, y, ut, vt, us, vs):
    gs = g[..., None]
    return (de._unbroadcast(-g * vt, ut.shape), de._unbroadcast(-g * ut, vt.shape),
            de._unbroadcast(gs * vs, us.shape), de._unbroadcast(gs * us, vs.shape))


def lorentz_inner(u: LorentzPoint, v: LorentzPoint):
    """Minkowski product ``-u_t v_t + <u_s, v_s>``.

    The two terms cancel almost completely far from the origin, so the value
    is accumulated in extended precision before rounding.
    """
    return de._apply("minkowski", _minkowski_forward, _minkowski_backward, u.time, v.time, u.space, v.space)
