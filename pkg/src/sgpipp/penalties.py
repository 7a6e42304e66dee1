"""Differentiable routing-constraint penalties on ordered waypoints.

All penalties are hinge functions of the constraint violation, so they vanish
identically on the feasible set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument

MIN_DT = 1e-6  # minutes; guards the speed quotient when two waypoints share a time


@dataclass(frozen=True)
class PenaltyConfig:
    """Routing constraints applied to every path.

    Attributes:
        distance_budget: maximum path length per robot (meters).
        velocity_limit: maximum speed between waypoints (meters/minute).
        accel_limit: maximum acceleration (meters/minute^2); off by default.
        weight: penalty weight alpha. The planners apply it to lengths and
            speeds measured relative to the environment extent and the limit,
            on an objective scaled by n * variance / noise_variance.
    """

    distance_budget: Optional[float] = None
    velocity_limit: Optional[float] = None
    accel_limit: Optional[float] = None
    weight: float = 100.0

    def __post_init__(self):
        for name in ("distance_budget", "velocity_limit", "accel_limit"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidArgument(f"{name} must be positive, got {v}")
        if self.weight < 0:
            raise InvalidArgument(f"weight must be >= 0, got {self.weight}")

    @property
    def active(self) -> bool:
        has_any = any(v is not None for v in (self.distance_budget, self.velocity_limit, self.accel_limit))
        return has_any and self.weight > 0

    @property
    def needs_time(self) -> bool:
        return self.velocity_limit is not None or self.accel_limit is not None


def _spatial(Xm, n_spatial):
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    k = Xm.shape[1] if n_spatial is None else n_spatial
    return Xm, k


def _unit_diffs(P):
    d = np.diff(P, axis=0)
    n = np.linalg.norm(d, axis=1)
    u = np.divide(d, n[:, None], out=np.zeros_like(d), where=n[:, None] > 0)
    return d, n, u


def distance_penalty(Xm, c: float, alpha: float, n_spatial: Optional[int] = None) -> float:
    """alpha * max(PathLength(Xm) - c, 0)."""
    if not c > 0:
        raise InvalidArgument(f"budget must be positive, got {c}")
    Xm, k = _spatial(Xm, n_spatial)
    length = np.linalg.norm(np.diff(Xm[:, :k], axis=0), axis=1).sum()
    return float(alpha * max(length - c, 0.0))


def distance_penalty_grad(Xm, c: float, alpha: float, n_spatial: Optional[int] = None) -> np.ndarray:
    Xm, k = _spatial(Xm, n_spatial)
    grad = np.zeros_like(Xm)
    _, n, u = _unit_diffs(Xm[:, :k])
    # subgradient 0 at equality
    if n.sum() - c <= 0:
        return grad
    grad[1:, :k] += alpha * u
    grad[:-1, :k] -= alpha * u
    return grad


def _check_time(Xm, n_spatial):
    if Xm.shape[1] <= n_spatial:
        raise InvalidArgument("velocity and acceleration penalties need a time column")


def _speeds(Xm, k):
    d, n, u = _unit_diffs(Xm[:, :k])
    dt_raw = np.diff(Xm[:, -1])
    dt = np.maximum(dt_raw, MIN_DT)
    return d, n, u, dt, dt_raw > MIN_DT


def velocity_penalty(Xm, v_max: float, alpha: float, n_spatial: Optional[int] = None) -> float:
    """alpha * sum_i max(|dx_i| / dt_i - v_max, 0) over consecutive waypoints.

    The last column of ``Xm`` is time; ``n_spatial`` defaults to all others.
    """
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    k = Xm.shape[1] - 1 if n_spatial is None else n_spatial
    _check_time(Xm, k)
    _, n, _, dt, _ = _speeds(Xm, k)
    return float(alpha * np.maximum(n / dt - v_max, 0.0).sum())


def velocity_penalty_grad(Xm, v_max: float, alpha: float, n_spatial: Optional[int] = None) -> np.ndarray:
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    k = Xm.shape[1] - 1 if n_spatial is None else n_spatial
    _check_time(Xm, k)
    _, n, u, dt, live = _speeds(Xm, k)
    act = (n / dt - v_max > 0).astype(float)
    grad = np.zeros_like(Xm)
    gx = (alpha * act / dt)[:, None] * u
    grad[1:, :k] += gx
    grad[:-1, :k] -= gx
    gt = -alpha * act * n / dt**2 * live
    grad[1:, -1] += gt
    grad[:-1, -1] -= gt
    return grad


def _accels(Xm, k):
    d, _, _, dt, live = _speeds(Xm, k)
    v = d / dt[:, None]
    tau = 0.5 * (dt[:-1] + dt[1:])
    dv = np.diff(v, axis=0)
    a = dv / tau[:, None]
    return d, dt, live, v, tau, dv, a


def accel_penalty(Xm, a_max: float, alpha: float, n_spatial: Optional[int] = None) -> float:
    """alpha * sum_i max(|v_{i+1} - v_i| / tau_i - a_max, 0).

    tau_i is the mean of the two adjacent time steps.
    """
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    k = Xm.shape[1] - 1 if n_spatial is None else n_spatial
    _check_time(Xm, k)
    if len(Xm) < 3:
        return 0.0
    a = _accels(Xm, k)[-1]
    return float(alpha * np.maximum(np.linalg.norm(a, axis=1) - a_max, 0.0).sum())


def accel_penalty_grad(Xm, a_max: float, alpha: float, n_spatial: Optional[int] = None) -> np.ndarray:
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    k = Xm.shape[1] - 1 if n_spatial is None else n_spatial
    _check_time(Xm, k)
    grad = np.zeros_like(Xm)
    if len(Xm) < 3:
        return grad
    d, dt, live, v, tau, dv, a = _accels(Xm, k)
    an = np.linalg.norm(a, axis=1)
    act = (an - a_max > 0) & (an > 0)
    ga = np.where(act[:, None], alpha * a / np.where(an > 0, an, 1.0)[:, None], 0.0)
    # a_i = (v_{i+1} - v_i) / tau_i
    g_dv = ga / tau[:, None]
    g_tau = -(ga * dv).sum(1) / tau**2
    g_v = np.zeros_like(v)
    g_v[1:] += g_dv
    g_v[:-1] -= g_dv
    g_dt = np.zeros_like(dt)
    g_dt[:-1] += 0.5 * g_tau
    g_dt[1:] += 0.5 * g_tau
    # v_i = d_i / dt_i
    g_d = g_v / dt[:, None]
    g_dt += -(g_v * d).sum(1) / dt**2
    g_dt *= live
    grad[1:, :k] += g_d
    grad[:-1, :k] -= g_d
    grad[1:, -1] += g_dt
    grad[:-1, -1] -= g_dt
    return grad
