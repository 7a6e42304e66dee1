"""Environment geometry, uniform sampling and polyline utilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DegeneratePath, InvalidArgument


def make_rng(seed) -> np.random.Generator:
    """Seeded generator backed by the Philox 4x64 counter-based bit generator.

    Philox output depends only on (key, counter), so draws are identical on
    every platform numpy supports. Passing an existing Generator returns it.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class Environment:
    """Axis-aligned box with an optional time horizon (minutes).

    Args:
        lower: lower corner, one entry per spatial dimension (meters).
        upper: upper corner (meters).
        time_horizon: optional (t0, t1) pair.
    """

    lower: np.ndarray
    upper: np.ndarray
    time_horizon: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise InvalidArgument("lower and upper must be 1-D with equal length >= 1")
        if not np.all(lower < upper):
            raise InvalidArgument(f"lower {lower} must be strictly below upper {upper}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.time_horizon is not None:
            t0, t1 = (float(t) for t in self.time_horizon)
            if not t0 < t1:
                raise InvalidArgument(f"time horizon ({t0}, {t1}) must satisfy t0 < t1")
            object.__setattr__(self, "time_horizon", (t0, t1))

    @property
    def dim(self) -> int:
        """Number of spatial dimensions."""
        return self.lower.size

    @property
    def has_time(self) -> bool:
        return self.time_horizon is not None

    @property
    def input_dim(self) -> int:
        """Spatial dimensions plus one if a time horizon is present."""
        return self.dim + int(self.has_time)

    @property
    def extent(self) -> np.ndarray:
        return self.upper - self.lower

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lower/upper bounds over all input coordinates (time last)."""
        if self.time_horizon is None:
            return self.lower.copy(), self.upper.copy()
        t0, t1 = self.time_horizon
        return np.append(self.lower, t0), np.append(self.upper, t1)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        """Boolean mask of points inside the box (and horizon, when present)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = self.bounds()
        if points.shape[1] == self.dim:
            lo, hi = self.lower, self.upper
        elif points.shape[1] != self.input_dim:
            raise InvalidArgument(f"points have {points.shape[1]} coordinates, expected {self.dim} or {self.input_dim}")
        return np.all((points >= lo - tol) & (points <= hi + tol), axis=1)


@dataclass
class Path:
    """Ordered waypoints of one robot.

    The first ``n_spatial`` columns are spatial coordinates. When ``has_time``
    is set the last column is time in minutes. Any remaining columns carry
    sensor parameters (heading, height) and are ignored by length computations.
    """

    waypoints: np.ndarray
    robot_id: int = 0
    has_time: bool = False
    n_spatial: Optional[int] = None

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[0] < 1:
            raise InvalidArgument("a path needs at least one waypoint")
        if self.n_spatial is None:
            self.n_spatial = self.waypoints.shape[1] - int(self.has_time)

    @property
    def spatial(self) -> np.ndarray:
        return self.waypoints[:, : self.n_spatial]

    @property
    def times(self) -> Optional[np.ndarray]:
        return self.waypoints[:, -1] if self.has_time else None

    def __len__(self):
        return self.waypoints.shape[0]


def sample_uniform(env: Environment, n: int, seed) -> np.ndarray:
    """Draw ``n`` points uniformly from the environment (time appended last)."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    rng = make_rng(seed)
    lo, hi = env.bounds()
    return lo + (hi - lo) * rng.random((int(n), lo.size))


def _as_spatial(path, n_spatial=None) -> np.ndarray:
    if isinstance(path, Path):
        return path.spatial
    pts = np.atleast_2d(np.asarray(path, dtype=float))
    return pts if n_spatial is None else pts[:, :n_spatial]


def segment_lengths(path, n_spatial: Optional[int] = None) -> np.ndarray:
    pts = _as_spatial(path, n_spatial)
    return np.linalg.norm(np.diff(pts, axis=0), axis=1)


def path_length(path, n_spatial: Optional[int] = None) -> float:
    """Sum of Euclidean distances between consecutive spatial coordinates.

    Args:
        path: a :class:`Path` or an (m, k) array of waypoints.
        n_spatial: number of leading spatial columns when ``path`` is an array
            (default: all columns).
    """
    return float(segment_lengths(path, n_spatial).sum())


def resample_path(path: Path, s: int) -> Path:
    """Resample ``s`` points at equal arc-length spacing along the polyline.

    Spacing is measured on the spatial coordinates; every other column (time,
    sensor parameters) is linearly interpolated alongside.
    """
    if s < 2:
        raise InvalidArgument(f"s must be >= 2, got {s}")
    if len(path) < 2:
        raise DegeneratePath("resampling needs at least two waypoints")
    seg = segment_lengths(path)
    total = seg.sum()
    if not total > 0:
        raise DegeneratePath("cannot resample a path of zero length")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, s)
    # side='left' puts a target that lands on a junction in the earlier segment
    idx = np.clip(np.searchsorted(cum, targets, side="left") - 1, 0, len(seg) - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(seg[idx] > 0, (targets - cum[idx]) / seg[idx], 0.0)
    frac = np.clip(frac, 0.0, 1.0)[:, None]
    wp = path.waypoints
    out = wp[idx] + frac * (wp[idx + 1] - wp[idx])
    out[0] = wp[0]
    out[-1] = wp[-1]
    return Path(out, robot_id=path.robot_id, has_time=path.has_time, n_spatial=path.n_spatial)


def project_to_bounds(points, env: Environment) -> np.ndarray:
    """Clamp points to the environment box (and time horizon when present)."""
    points = np.asarray(points, dtype=float)
    squeeze = points.ndim == 1
    pts = np.atleast_2d(points)
    k = pts.shape[-1]
    if k == env.input_dim:
        lo, hi = env.bounds()
    elif k == env.dim:
        lo, hi = env.lower, env.upper
    else:
        raise InvalidArgument(f"points have {k} coordinates, environment expects {env.dim} or {env.input_dim}")
    out = np.clip(pts, lo, hi)
    return out[0] if squeeze else out.reshape(points.shape)


def point_segment_distance(points, a, b) -> np.ndarray:
    """Distance from each point to the segment [a, b]."""
    points = np.atleast_2d(points)
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    denom = ab @ ab
    t = np.zeros(len(points)) if denom == 0 else np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def distance_to_polyline(points, polyline: Sequence) -> np.ndarray:
    """Distance from each point to the nearest segment of a polyline."""
    poly = np.atleast_2d(np.asarray(polyline, dtype=float))
    if len(poly) == 1:
        return np.linalg.norm(np.atleast_2d(points) - poly[0], axis=1)
    return np.min([point_segment_distance(points, poly[i], poly[i + 1]) for i in range(len(poly) - 1)], axis=0)
