"""Synthetic ground truth, full-GP reconstruction and path scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .env import Environment, Path, make_rng, segment_lengths
from .errors import InvalidArgument, ResourceLimit
from .kernel import JITTER_LADDER, RbfKernel, jittered_cholesky

MAX_FIELD_POINTS = 10_000
MAX_OBSERVATIONS = 5_000
# Field draws start from a much smaller jitter so the added white noise stays
# far below the reconstruction tolerances used downstream.
FIELD_JITTER_LADDER = (1e-10, 1e-8) + tuple(JITTER_LADDER)


class OutOfBounds(InvalidArgument):
    """A waypoint lies outside the field's environment."""


@dataclass
class Field:
    """Ground-truth values on a regular lattice.

    ``axes`` holds one coordinate vector per input (spatial first, time last)
    and ``values`` has shape ``tuple(len(a) for a in axes)``. Flattened
    points are row-major with the last axis varying fastest.
    """

    axes: List[np.ndarray]
    values: np.ndarray
    kernel: RbfKernel
    env: Environment
    seed: int = 0
    noise_variance: float = 1e-2

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self.values = np.asarray(self.values, dtype=float).reshape([len(a) for a in self.axes])
        self._interp = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def has_time(self) -> bool:
        return len(self.axes) > self.env.dim

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def flat_values(self) -> np.ndarray:
        return self.values.ravel()

    def interpolate(self, pts) -> np.ndarray:
        """Multilinear interpolation of the field (clamped to the grid)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self._interp is None:
            self._interp = RegularGridInterpolator(self.axes, self.values, method="linear")
        lo = np.array([a[0] for a in self.axes])
        hi = np.array([a[-1] for a in self.axes])
        return self._interp(np.clip(pts, lo, hi))


def _axes_for(env: Environment, resolution, time_resolution=None, time_range=None):
    res = np.broadcast_to(np.atleast_1d(resolution), (env.dim,)).astype(int)
    if np.any(res < 2):
        raise InvalidArgument("resolution must be >= 2 along every axis")
    axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(env.lower, env.upper, res)]
    if env.has_time:
        t0, t1 = time_range if time_range is not None else env.time_horizon
        nt = int(time_resolution if time_resolution is not None else res[0])
        if nt < 2:
            raise InvalidArgument("time resolution must be >= 2")
        axes.append(np.linspace(t0, t1, nt))
    return axes


def sample_gp_field(kernel: RbfKernel, env: Environment, resolution, seed=0, time_resolution=None,
                    time_range=None, noise_variance: float = 1e-2) -> Field:
    """Exact zero-mean GP prior draw on a regular grid over ``env``.

    Args:
        kernel: generating kernel.
        env: environment; the grid covers its bounds inclusively.
        resolution: points per spatial axis (int or per-axis sequence).
        seed: RNG seed.
        time_resolution: points along time (defaults to ``resolution``).
        time_range: optional (t0, t1) overriding the horizon, e.g. to cover
            past samples at negative times.
        noise_variance: recorded on the field for later evaluation.

    Raises:
        ResourceLimit: if the grid exceeds 10^4 points.
    """
    axes = _axes_for(env, resolution, time_resolution, time_range)
    size = int(np.prod([len(a) for a in axes]))
    if size > MAX_FIELD_POINTS:
        raise ResourceLimit(f"grid of {size} points exceeds {MAX_FIELD_POINTS}; lower the resolution")
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    K = kernel.cov(pts, pts)
    L, _ = jittered_cholesky(K, kernel.variance, FIELD_JITTER_LADDER)
    z = make_rng(seed).standard_normal(size)
    return Field(axes, L @ z, kernel, env, int(seed), noise_variance)


def gp_posterior(kernel: RbfKernel, noise_variance: float, obs_X, obs_y, query_X, chunk: int = 2048):
    """Posterior mean and variance of a zero-mean GP at ``query_X``.

    Returns:
        (means, variances); variances are clamped at zero.
    """
    obs_X = np.atleast_2d(np.asarray(obs_X, dtype=float))
    obs_y = np.asarray(obs_y, dtype=float).ravel()
    query_X = np.atleast_2d(np.asarray(query_X, dtype=float))
    if len(obs_X) < 1:
        raise InvalidArgument("need at least one observation")
    if len(obs_X) != len(obs_y):
        raise InvalidArgument("observation inputs and values differ in length")
    if len(obs_X) > MAX_OBSERVATIONS:
        raise ResourceLimit(f"{len(obs_X)} observations exceed the dense limit {MAX_OBSERVATIONS}")
    Koo = kernel.cov(obs_X, obs_X) + noise_variance * np.eye(len(obs_X))
    try:
        cf = cho_factor(Koo, lower=True)
    except LinAlgError:
        # raises NumericalFailure once the ladder is exhausted
        L, _ = jittered_cholesky(Koo, kernel.variance, JITTER_LADDER)
        cf = (L, True)
    alpha = cho_solve(cf, obs_y)
    L = np.tril(cf[0])
    means = np.empty(len(query_X))
    var = np.empty(len(query_X))
    for s in range(0, len(query_X), chunk):
        Kqo = kernel.cov(query_X[s : s + chunk], obs_X)
        means[s : s + chunk] = Kqo @ alpha
        V = solve_triangular(L, Kqo.T, lower=True)
        var[s : s + chunk] = kernel.variance - np.einsum("ij,ij->j", V, V)
    return means, np.maximum(var, 0.0)


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size != truth.size or pred.size < 1:
        raise InvalidArgument(f"rmse needs equal non-empty lengths, got {pred.size} and {truth.size}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _input_cols(path: Path, field: Field) -> np.ndarray:
    """Columns that the field is indexed by: spatial, plus time when present."""
    cols = path.spatial
    if field.has_time:
        if not path.has_time:
            raise InvalidArgument("spatio-temporal field needs paths with a time column")
        cols = np.hstack([cols, path.times[:, None]])
    return cols


def sample_along(path: Path, field: Field, step: float) -> np.ndarray:
    """Points every ``step`` meters of spatial arc length from the first waypoint.

    Time (when present) is interpolated linearly along with position.
    """
    wp = _input_cols(path, field)
    if len(wp) == 1:
        return wp.copy()
    seg = segment_lengths(path)
    total = seg.sum()
    if total <= 0:
        return wp[:1].copy()
    # floor(total / step) + 1 samples, starting at the first waypoint
    count = int(np.floor(total / step * (1 + 1e-12))) + 1
    targets = np.minimum(np.arange(count) * step, total)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(seg[idx] > 0, (targets - cum[idx]) / seg[idx], 0.0)
    frac = np.clip(frac, 0.0, 1.0)[:, None]
    return wp[idx] + frac * (wp[idx + 1] - wp[idx])


def _as_path(p, i, field: Field) -> Path:
    if isinstance(p, Path):
        return p
    arr = np.atleast_2d(np.asarray(p, dtype=float))
    return Path(arr, robot_id=i, has_time=field.has_time, n_spatial=field.env.dim)


@dataclass
class EvalResult:
    rmse: float
    predictions: np.ndarray
    variances: np.ndarray
    observations: np.ndarray
    n_obs: int


def collect_observations(field: Field, paths: Sequence, sensing: str = "discrete", step: Optional[float] = None):
    """Sensing locations for a set of paths (validated against the field bounds)."""
    if sensing not in ("discrete", "continuous"):
        raise InvalidArgument(f"sensing must be 'discrete' or 'continuous', got {sensing!r}")
    if sensing == "continuous":
        if step is None:
            step = float(field.kernel.lengthscales[: field.env.dim].min()) / 5.0
        if not step > 0:
            raise InvalidArgument("step must be positive")
    lo = np.array([a[0] for a in field.axes])
    hi = np.array([a[-1] for a in field.axes])
    obs = []
    for i, p in enumerate(paths):
        path = _as_path(p, i, field)
        cols = _input_cols(path, field)
        tol = 1e-9 * np.maximum(1.0, np.abs(hi - lo))
        bad = np.flatnonzero(np.any((cols < lo - tol) | (cols > hi + tol), axis=1))
        if bad.size:
            raise OutOfBounds(f"robot {path.robot_id} waypoint {bad[0]} at {cols[bad[0]].tolist()} is outside the field")
        obs.append(sample_along(path, field, step) if sensing == "continuous" else cols)
    if not obs or sum(len(o) for o in obs) == 0:
        raise InvalidArgument("no observations collected")
    return np.vstack(obs)


def evaluate_paths(field: Field, paths: Sequence, sensing: str = "discrete", step: Optional[float] = None,
                   noise_variance: Optional[float] = None, extra_obs=None, query_mask=None) -> EvalResult:
    """Reconstruction RMSE of the field from data gathered along ``paths``.

    Ground truth at sensing points comes from multilinear interpolation of
    the grid. The full GP with the field's kernel predicts every grid point
    (or those selected by ``query_mask``) and the RMSE is taken against the
    grid values.

    Args:
        field: ground truth.
        paths: :class:`Path` objects or waypoint arrays.
        sensing: ``discrete`` (waypoints only) or ``continuous`` (every
            ``step`` meters along each path; default lengthscale / 5).
        noise_variance: GP noise (defaults to the field's).
        extra_obs: optional (X, y) observations added to the path data.
        query_mask: boolean mask over flattened grid points to score.
    """
    noise = field.noise_variance if noise_variance is None else noise_variance
    obs_X = collect_observations(field, paths, sensing, step)
    obs_y = field.interpolate(obs_X)
    if extra_obs is not None:
        ex_X, ex_y = extra_obs
        obs_X = np.vstack([obs_X, np.atleast_2d(ex_X)])
        obs_y = np.concatenate([obs_y, np.ravel(ex_y)])
    q = field.points()
    truth = field.flat_values()
    if query_mask is not None:
        q, truth = q[query_mask], truth[query_mask]
    mean, var = gp_posterior(field.kernel, noise, obs_X, obs_y, q)
    return EvalResult(rmse(mean, truth), mean, var, obs_X, len(obs_X))


def greedy_mi_placement(kernel: RbfKernel, candidates, k: int, noise_variance: float = 1e-2,
                        return_gains: bool = False):
    """Greedy mutual-information placement over a discrete candidate set.

    Each step adds the candidate y maximizing var(y | A) / var(y | rest),
    where ``rest`` is every unselected candidate other than y. Both variances
    include ``noise_variance`` on the diagonal. Ties go to the lowest index.

    Returns:
        Array of selected indices (and the per-step gains if requested).
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    N = len(C)
    if not 1 <= k < N:
        raise InvalidArgument(f"k must satisfy 1 <= k < {N}")
    if N > 1000:
        raise ResourceLimit("greedy MI is limited to 1000 candidates")
    K = kernel.cov(C, C) + noise_variance * np.eye(N)
    selected: List[int] = []
    gains = []
    for _ in range(k):
        rest = np.setdiff1d(np.arange(N), selected)
        if selected:
            A = np.array(selected)
            LA = np.linalg.cholesky(K[np.ix_(A, A)])
            V = solve_triangular(LA, K[np.ix_(A, rest)], lower=True)
            num = K[rest, rest] - np.einsum("ij,ij->j", V, V)
        else:
            num = K[rest, rest].copy()
        P = cho_solve(cho_factor(K[np.ix_(rest, rest)], lower=True), np.eye(len(rest)))
        den = 1.0 / np.diag(P)
        gain = num / den
        j = int(np.argmax(gain))
        selected.append(int(rest[j]))
        gains.append(float(gain[j]))
    sel = np.array(selected, dtype=int)
    return (sel, np.array(gains)) if return_gains else sel
