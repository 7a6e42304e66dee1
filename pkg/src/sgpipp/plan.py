"""Single- and multi-robot informative path planners.

Both planners follow the same recipe: draw unlabeled samples, start the
inducing points at a random subset, give them a visiting order (TSP, VRP or
time), then run the penalized ELBO ascent with the chosen sensing model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .env import Environment, Path, path_length, resample_path
from .errors import InfeasibleConstraint, InvalidArgument
from .kernel import RbfKernel
from .penalties import (  # noqa: F401  (re-exported)
    PenaltyConfig,
    accel_penalty,
    distance_penalty,
    velocity_penalty,
)
from .route import assign_waypoints, tsp_order, vrp_routes
from .sgp import (
    InducingPaths,
    ObjectiveConfig,
    SgpModel,
    init_problem,
    optimize,
    random_sensor_params,
)
from .transform import SensingModel


@dataclass(frozen=True)
class PastData:
    """Locations of samples collected before planning; time column <= 0."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if np.any(pts[:, -1] > 0):
            raise InvalidArgument("past samples must have time <= 0 (minutes before now)")
        object.__setattr__(self, "points", pts)


@dataclass
class PlanResult:
    """Planned paths plus optimizer diagnostics."""

    paths: List[Path]
    objective: float
    elbo: float
    trace: np.ndarray
    warning: Optional[str] = None
    model: Optional[SgpModel] = None

    @property
    def path(self) -> Path:
        return self.paths[0]

    @property
    def lengths(self) -> List[float]:
        return [path_length(p) for p in self.paths]

    def waypoints(self) -> np.ndarray:
        """(r, t, q) array of all waypoints."""
        return np.stack([p.waypoints for p in self.paths])


def space_time_combine(X_space, X_time, r: int) -> np.ndarray:
    """Pair r * t spatial points with t shared times.

    ``X_space`` is row-major as r blocks of t rows. ``X_time`` is sorted
    first, so every robot visits its waypoints in time order and all robots
    share the time of waypoint i.

    Returns:
        (r, t, d + 1) array.
    """
    X_space = np.atleast_2d(np.asarray(X_space, dtype=float))
    X_time = np.sort(np.ravel(np.asarray(X_time, dtype=float)))
    t = X_time.size
    if r < 1 or X_space.shape[0] != r * t:
        raise InvalidArgument(f"X_space has {X_space.shape[0]} rows, expected r * t = {r * t}")
    space = X_space.reshape(r, t, -1)
    times = np.broadcast_to(X_time[None, :, None], (r, t, 1))
    return np.concatenate([space, times], axis=2)


def space_time_combine_vjp(grad, r: int):
    """Split a gradient on combined points into (X_space, X_time) gradients."""
    grad = np.asarray(grad)
    return grad[..., :-1].reshape(r * grad.shape[1], -1), grad[..., -1].sum(0)


def attach_past_data(model: SgpModel, Xm: InducingPaths, past: PastData) -> InducingPaths:
    """Add past samples as frozen auxiliary inducing points."""
    if not Xm.has_time:
        raise InvalidArgument("past data needs spatio-temporal planning")
    if np.any(model.train_X[:, -1] < 0):
        raise InvalidArgument("training samples must lie on the non-negative timeline")
    pts = past.points if isinstance(past, PastData) else PastData(past).points
    if pts.shape[1] != model.kernel.input_dim:
        raise InvalidArgument(f"past samples have {pts.shape[1]} columns, expected {model.kernel.input_dim}")
    aux = pts if Xm.aux is None else np.vstack([Xm.aux, pts])
    out = Xm.copy()
    out.aux = aux.copy()
    return out


def _penalties_active(penalties: Optional[PenaltyConfig]) -> bool:
    return penalties is not None and penalties.active


def _endpoint(env: Environment, pt, which: str) -> np.ndarray:
    pt = np.asarray(pt, dtype=float).ravel()
    if env.has_time and pt.size == env.dim:
        pt = np.append(pt, env.time_horizon[0] if which == "start" else env.time_horizon[1])
    if pt.size != env.input_dim:
        raise InvalidArgument(f"{which} point needs {env.dim} (or {env.input_dim} with time) coordinates")
    if not env.contains(pt[None])[0]:
        raise InvalidArgument(f"{which} point {pt} lies outside the environment")
    return pt


def _order(points: np.ndarray, env: Environment, fixed_start: bool, fixed_end: bool, seed) -> np.ndarray:
    if env.has_time:
        return np.argsort(points[:, env.dim], kind="stable")
    tour = tsp_order(points[:, : env.dim], fixed_start=0 if fixed_start else None,
                     fixed_end=len(points) - 1 if fixed_end else None, seed=seed)
    return tour.order


def plan_single(kernel: RbfKernel, env: Environment, s: int, cfg: Optional[ObjectiveConfig] = None,
                penalties: Optional[PenaltyConfig] = None, sensing: Optional[SensingModel] = None, seed=0, *,
                noise_variance: float = 1e-2, n: Optional[int] = None, fixed_start=None, fixed_end=None,
                past: Optional[PastData] = None) -> PlanResult:
    """Plan one path of ``s`` waypoints.

    Without routing constraints, endpoints or sequential sensing the objective
    ignores visiting order, so placements are optimized first and ordered
    afterwards. Otherwise the initial points are ordered first and the
    penalized objective is optimized on the ordered path.

    Args:
        kernel: kernel over the environment's inputs.
        env: planning environment.
        s: waypoint count.
        cfg: optimizer settings (its penalties/sensing are overridden).
        penalties: routing constraints.
        sensing: sensing model (default point sensing).
        seed: RNG seed.
        noise_variance: SGP noise variance.
        n: unlabeled sample count (default by input dimension).
        fixed_start, fixed_end: optional frozen endpoints.
        past: samples collected before planning (spatio-temporal only).

    Raises:
        InfeasibleConstraint: when a distance budget is shorter than the
            straight line between the fixed endpoints.
    """
    if s < 2:
        raise InvalidArgument("a path needs s >= 2 waypoints")
    sensing = sensing or SensingModel()
    cfg = replace(cfg or ObjectiveConfig(), penalties=penalties, sensing=sensing)
    if sensing.extra_params and env.has_time:
        raise InvalidArgument("FoV sensing models are planar; drop the time horizon")
    fs = None if fixed_start is None else _endpoint(env, fixed_start, "start")
    fe = None if fixed_end is None else _endpoint(env, fixed_end, "end")
    if _penalties_active(penalties) and penalties.distance_budget is not None and fs is not None and fe is not None:
        gap = float(np.linalg.norm(fs[: env.dim] - fe[: env.dim]))
        if penalties.distance_budget < gap:
            raise InfeasibleConstraint(f"distance budget {penalties.distance_budget} is below the endpoint gap {gap:.6g}")

    model, X0, rng = init_problem(kernel, env, s, n, seed, noise_variance)
    extra = random_sensor_params(rng, sensing, s)
    if fs is not None:
        X0[0] = fs
    if fe is not None:
        X0[-1] = fe
    order_free = (sensing.kind != "arc" and not _penalties_active(penalties) and fs is None and fe is None)
    if not order_free:
        X0 = X0[_order(X0, env, fs is not None, fe is not None, seed)]
    if extra is not None:
        X0 = np.hstack([X0, extra])
    freeze = np.zeros(X0.shape, dtype=bool)
    if fs is not None:
        freeze[0, : env.input_dim] = True
    if fe is not None:
        freeze[-1, : env.input_dim] = True
    paths = InducingPaths(X0[None], freeze[None], has_time=env.has_time, n_spatial=env.dim)
    if past is not None:
        paths = attach_past_data(model, paths, past)
    res = optimize(model, paths, cfg, env)
    wp = res.paths.points[0]
    if order_free:
        wp = wp[_order(wp, env, False, False, seed)]
    path = Path(wp, robot_id=0, has_time=env.has_time, n_spatial=env.dim)
    return PlanResult([path], res.objective, res.elbo, res.trace, res.warning, model)


def plan_multi(kernel: RbfKernel, env: Environment, s: int, r: int, cfg: Optional[ObjectiveConfig] = None,
               penalties: Optional[PenaltyConfig] = None, sensing: Optional[SensingModel] = None, seed=0, *,
               noise_variance: float = 1e-2, n: Optional[int] = None, past: Optional[PastData] = None,
               decompose: bool = False) -> PlanResult:
    """Plan ``r`` paths of ``s`` waypoints each.

    The r * s initial points are split by :func:`vrp_routes`, each route is
    resampled to ``s`` waypoints, and the joint penalized objective (penalties
    summed over paths) is optimized. With ``decompose`` (spatio-temporal
    only) all robots share one time per waypoint index and the result is
    re-indexed with :func:`assign_waypoints`.
    """
    if r < 1:
        raise InvalidArgument("need at least one robot")
    if s < 2:
        raise InvalidArgument("each path needs s >= 2 waypoints")
    if decompose and not env.has_time:
        raise InvalidArgument("space-time decomposition needs a time horizon")
    if r == 1 and not decompose:
        return plan_single(kernel, env, s, cfg, penalties, sensing, seed,
                           noise_variance=noise_variance, n=n, past=past)
    sensing = sensing or SensingModel()
    cfg = replace(cfg or ObjectiveConfig(), penalties=penalties, sensing=sensing)
    if sensing.extra_params and env.has_time:
        raise InvalidArgument("FoV sensing models are planar; drop the time horizon")
    d = env.dim

    model, X0, rng = init_problem(kernel, env, r * s, n, seed, noise_variance)
    extra = random_sensor_params(rng, sensing, r * s)
    if extra is not None:
        X0 = np.hstack([X0, extra])
    routes = []
    for tour in vrp_routes(X0[:, :d], r, seed):
        pts = X0[tour.order]
        if env.has_time:
            pts = pts[np.argsort(pts[:, d], kind="stable")]
        if len(pts) == s:
            routes.append(pts)
        else:
            routes.append(resample_path(Path(pts, has_time=env.has_time, n_spatial=d), s).waypoints)
    points = np.stack(routes)
    if decompose:
        times = np.sort(points[:, :, d].mean(axis=0))
        points[:, :, d] = times[None, :]
    paths = InducingPaths(points, has_time=env.has_time, n_spatial=d, shared_time=decompose)
    if past is not None:
        paths = attach_past_data(model, paths, past)
    res = optimize(model, paths, cfg, env)
    wp = res.paths.points

    order_free = sensing.kind != "arc" and not _penalties_active(penalties)
    if decompose:
        wp = assign_waypoints(wp, n_spatial=d) if wp.shape[2] == d + 1 else wp
    elif order_free and env.has_time:
        wp = np.stack([p[np.argsort(p[:, d], kind="stable")] for p in wp])
    elif order_free:
        flat = wp.reshape(r * s, -1)
        wp = np.stack([flat[t.order] for t in vrp_routes(flat[:, :d], r, seed)])
    out = [Path(w, robot_id=i, has_time=env.has_time, n_spatial=d) for i, w in enumerate(wp)]
    return PlanResult(out, res.objective, res.elbo, res.trace, res.warning, model)
