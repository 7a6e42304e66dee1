"""Expansion and aggregation transformations for continuous and FoV sensing.

An expansion maps the waypoints of one path to a larger set of points that
approximates what the sensor observes (the straight segments between
waypoints, or the footprint of a camera). Each expansion is affine in the
waypoints (or smooth in heading/height), and every ``expand_*`` function has a
matching ``*_vjp`` that pulls a gradient on the expanded points back to the
waypoints.

The aggregation matrix averages the covariances of the points belonging to one
group (one segment or one sensor footprint) so that only a groups x groups
matrix needs to be factorized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import InvalidArgument

SENSING_KINDS = ("point", "arc", "line_fov", "square_fov_height")


@dataclass(frozen=True)
class SensingModel:
    """Description of what a robot senses at (or between) its waypoints.

    Attributes:
        kind: ``point``, ``arc``, ``line_fov`` or ``square_fov_height``.
        p: points per segment (arc) or per line FoV.
        length: line FoV length in meters.
        half_angle: half field-of-view angle of the downward camera (radians).
        g: grid side count of the square FoV (g * g points per sensor).
        height_bounds: allowed camera heights (meters) for the square FoV.
        aggregate: average covariances per group; when False the expanded
            points act as free inducing points.
    """

    kind: str = "point"
    p: int = 10
    length: float = 1.0
    half_angle: float = np.pi / 6
    g: int = 3
    height_bounds: Tuple[float, float] = (0.5, 5.0)
    aggregate: bool = True

    def __post_init__(self):
        if self.kind not in SENSING_KINDS:
            raise InvalidArgument(f"unknown sensing kind {self.kind!r}; choose from {SENSING_KINDS}")
        if self.kind == "arc" and self.p < 2:
            raise InvalidArgument("arc sensing needs p >= 2")
        if self.kind == "line_fov":
            if self.p < 1:
                raise InvalidArgument("line FoV needs p >= 1")
            if not self.length > 0:
                raise InvalidArgument("line FoV length must be positive")
        if self.kind == "square_fov_height":
            if self.g < 2:
                raise InvalidArgument("square FoV needs g >= 2")
            if not 0 < self.half_angle < np.pi / 2:
                raise InvalidArgument("half_angle must lie in (0, pi/2)")
            lo, hi = self.height_bounds
            if not 0 < lo < hi:
                raise InvalidArgument(f"height bounds {self.height_bounds} must satisfy 0 < low < high")

    @classmethod
    def point(cls):
        return cls("point")

    @classmethod
    def arc(cls, p: int = 10):
        return cls("arc", p=p)

    @classmethod
    def line_fov(cls, length: float, p: int = 5):
        return cls("line_fov", p=p, length=length)

    @classmethod
    def square_fov_height(cls, half_angle: float, g: int = 3, height_bounds=(0.5, 5.0)):
        return cls("square_fov_height", half_angle=half_angle, g=g, height_bounds=tuple(height_bounds))

    @property
    def extra_params(self) -> int:
        """Waypoint columns beyond the spatial/temporal input (heading or height)."""
        return 1 if self.kind in ("line_fov", "square_fov_height") else 0

    @property
    def group_size(self) -> int:
        if self.kind == "point":
            return 1
        if self.kind == "square_fov_height":
            return self.g * self.g
        return self.p

    def n_groups(self, t: int) -> int:
        """Aggregation groups produced by a path of ``t`` waypoints."""
        return t - 1 if self.kind == "arc" else t

    def expand(self, waypoints: np.ndarray) -> np.ndarray:
        if self.kind == "point":
            return np.asarray(waypoints, dtype=float)
        if self.kind == "arc":
            return expand_interpolate(waypoints, self.p)
        if self.kind == "line_fov":
            return expand_line_fov(waypoints, self.length, self.p)
        return expand_square_fov_height(waypoints, self.half_angle, self.g)

    def expand_vjp(self, waypoints: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.kind == "point":
            return grad
        if self.kind == "arc":
            return interpolate_vjp(waypoints, grad, self.p)
        if self.kind == "line_fov":
            return line_fov_vjp(waypoints, grad, self.length, self.p)
        return square_fov_height_vjp(waypoints, grad, self.half_angle, self.g)


def _linspace_weights(p: int) -> np.ndarray:
    return np.zeros(1) if p == 1 else np.linspace(0.0, 1.0, p)


def expand_interpolate(Xm, p: int) -> np.ndarray:
    """Inclusive linear interpolation of ``p`` points per consecutive pair.

    Junction waypoints appear at the end of one segment and the start of the
    next, so the output has exactly ``(m - 1) * p`` rows.
    """
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    if Xm.shape[0] < 2:
        raise InvalidArgument("interpolation needs at least two waypoints")
    if p < 2:
        raise InvalidArgument("interpolation needs p >= 2")
    w = _linspace_weights(p)[None, :, None]
    a = Xm[:-1, None, :]
    b = Xm[1:, None, :]
    return ((1.0 - w) * a + w * b).reshape(-1, Xm.shape[1])


def interpolate_vjp(Xm, grad, p: int) -> np.ndarray:
    Xm = np.atleast_2d(Xm)
    m, k = Xm.shape
    g = np.asarray(grad).reshape(m - 1, p, k)
    w = _linspace_weights(p)[None, :, None]
    out = np.zeros_like(Xm, dtype=float)
    out[:-1] += ((1.0 - w) * g).sum(1)
    out[1:] += (w * g).sum(1)
    return out


def expand_line_fov(Xm, l: float, p: int) -> np.ndarray:
    """Map (x, y, heading) rows to ``p`` points on a segment of length ``l``.

    Each segment starts at (x, y) and points along the heading. Output has
    ``m * p`` rows, sensor-major.
    """
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    if Xm.shape[1] != 3:
        raise InvalidArgument(f"line FoV expects (x, y, theta) rows, got {Xm.shape[1]} columns")
    if p < 1:
        raise InvalidArgument("line FoV needs p >= 1")
    w = _linspace_weights(p)[None, :]
    x, y, th = Xm[:, :1], Xm[:, 1:2], Xm[:, 2:3]
    px = x + w * l * np.cos(th)
    py = y + w * l * np.sin(th)
    return np.stack([px, py], axis=-1).reshape(-1, 2)


def line_fov_vjp(Xm, grad, l: float, p: int) -> np.ndarray:
    Xm = np.atleast_2d(Xm)
    g = np.asarray(grad).reshape(len(Xm), p, 2)
    w = _linspace_weights(p)[None, :]
    th = Xm[:, 2:3]
    out = np.empty((len(Xm), 3))
    out[:, 0] = g[..., 0].sum(1)
    out[:, 1] = g[..., 1].sum(1)
    out[:, 2] = (w * l * (-np.sin(th) * g[..., 0] + np.cos(th) * g[..., 1])).sum(1)
    return out


def _square_offsets(g: int) -> Tuple[np.ndarray, np.ndarray]:
    u = np.linspace(-1.0, 1.0, g)
    ox, oy = np.meshgrid(u, u, indexing="ij")
    return ox.ravel(), oy.ravel()


def expand_square_fov_height(Xm, half_angle: float, g: int) -> np.ndarray:
    """Map (x, y, h) rows to a g x g ground grid under a downward camera.

    The grid is centered at (x, y) and its side is ``2 h tan(half_angle)``,
    border included. Output has ``m * g * g`` rows, sensor-major.
    """
    Xm = np.atleast_2d(np.asarray(Xm, dtype=float))
    if Xm.shape[1] != 3:
        raise InvalidArgument(f"height FoV expects (x, y, h) rows, got {Xm.shape[1]} columns")
    if g < 2:
        raise InvalidArgument("height FoV needs g >= 2")
    if np.any(Xm[:, 2] <= 0):
        raise InvalidArgument("camera height must be positive")
    ox, oy = _square_offsets(g)
    half = Xm[:, 2:3] * np.tan(half_angle)
    px = Xm[:, :1] + ox[None, :] * half
    py = Xm[:, 1:2] + oy[None, :] * half
    return np.stack([px, py], axis=-1).reshape(-1, 2)


def square_fov_height_vjp(Xm, grad, half_angle: float, g: int) -> np.ndarray:
    Xm = np.atleast_2d(Xm)
    gr = np.asarray(grad).reshape(len(Xm), g * g, 2)
    ox, oy = _square_offsets(g)
    out = np.empty((len(Xm), 3))
    out[:, 0] = gr[..., 0].sum(1)
    out[:, 1] = gr[..., 1].sum(1)
    out[:, 2] = np.tan(half_angle) * (gr[..., 0] @ ox + gr[..., 1] @ oy)
    return out


@dataclass(frozen=True)
class AggregationMatrix:
    """Mean-aggregation matrix of shape (expanded points, groups)."""

    matrix: np.ndarray
    mode: str = "mean"

    @property
    def groups(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self):
        return self.matrix.shape


def aggregation_matrix(groups: int, p: int) -> AggregationMatrix:
    """Matrix with entry (i, j) = 1/p when i // p == j, zero elsewhere."""
    if groups < 1 or p < 1:
        raise InvalidArgument("groups and p must be >= 1")
    T = np.kron(np.eye(groups), np.full((p, 1), 1.0 / p))
    return AggregationMatrix(T)


def block_aggregation(group_sizes) -> AggregationMatrix:
    """Block-diagonal mean aggregation for groups of varying size."""
    sizes = [int(s) for s in group_sizes]
    if not sizes or min(sizes) < 1:
        raise InvalidArgument("group sizes must be >= 1")
    T = np.zeros((sum(sizes), len(sizes)))
    start = 0
    for j, s in enumerate(sizes):
        T[start : start + s, j] = 1.0 / s
        start += s
    return AggregationMatrix(T)


def qnn_aggregated(model, expanded, T: AggregationMatrix):
    """Nystrom factorization built from aggregated covariances.

    ``model`` is an :class:`sgpipp.sgp.SgpModel`; only the groups x groups
    matrix is factorized.
    """
    expanded = np.atleast_2d(expanded)
    matrix = T.matrix if isinstance(T, AggregationMatrix) else np.asarray(T)
    if matrix.shape[0] != expanded.shape[0]:
        raise InvalidArgument(f"aggregation matrix has {matrix.shape[0]} rows for {expanded.shape[0]} points")
    return model.nystrom(expanded, T=matrix)
