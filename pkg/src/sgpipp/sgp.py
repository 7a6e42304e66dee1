"""Zero-label sparse GP: Nystrom factorization, ELBO, gradients and optimizer.

The training labels and the prior mean are fixed at zero, so the ELBO reduces
to the complexity and trace terms and depends only on where the inducing
points sit relative to the (unlabeled) training inputs. Maximizing it spreads
the inducing points so that they explain as much of the field's prior
variance as possible, which is what makes them good sensing locations.

All quantities are computed through the m x m Cholesky factor of K_mm (or of
the aggregated T^T K T); the n x n matrix Q_nn is only formed on request.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .env import Environment, make_rng, sample_uniform
from .errors import InvalidArgument, NumericalFailure
from .kernel import RbfKernel, jittered_cholesky
from .penalties import (
    PenaltyConfig,
    accel_penalty,
    accel_penalty_grad,
    distance_penalty,
    distance_penalty_grad,
    velocity_penalty,
    velocity_penalty_grad,
)
from .transform import SensingModel, block_aggregation

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def default_train_size(input_dim: int) -> int:
    """Number of unlabeled samples used when none is given."""
    return 1000 if input_dim <= 2 else 2000


@dataclass
class Nystrom:
    """Cached factorization behind Q_nn = K_nm K_mm^-1 K_mn.

    With an aggregation matrix T, ``Kmn`` is T^T K(E, X) and ``Kmm`` is
    T^T K(E, E) T; everything below is unchanged.

    Attributes:
        Kmn: (m, n) cross covariance.
        L: lower Cholesky factor of the jittered Kmm.
        A: L^-1 Kmn / noise_std.
        LB: lower Cholesky factor of I + A A^T.
        jitter: absolute jitter added to Kmm's diagonal.
    """

    Kmn: np.ndarray
    L: np.ndarray
    A: np.ndarray
    AAT: np.ndarray
    LB: np.ndarray
    noise_variance: float
    jitter: float

    @property
    def m(self) -> int:
        return self.L.shape[0]

    def diag(self) -> np.ndarray:
        """diag(Q_nn) without forming Q_nn."""
        return self.noise_variance * np.einsum("ij,ij->j", self.A, self.A)

    def trace(self) -> float:
        return self.noise_variance * float(np.trace(self.AAT))

    def dense(self) -> np.ndarray:
        """Materialize the n x n matrix Q_nn (testing and small problems only)."""
        return self.noise_variance * self.A.T @ self.A


@dataclass(frozen=True)
class SgpModel:
    """Sparse GP with zero mean and zero labels on fixed training inputs.

    Args:
        kernel: covariance function.
        train_X: (n, d) unlabeled training inputs.
        noise_variance: observation noise variance.
    """

    kernel: RbfKernel
    train_X: np.ndarray
    noise_variance: float

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.train_X, dtype=float))
        if X.shape[0] < 1:
            raise InvalidArgument("need at least one training point")
        if X.shape[1] != self.kernel.input_dim:
            raise InvalidArgument(f"training inputs have dimension {X.shape[1]}, kernel expects {self.kernel.input_dim}")
        if not self.noise_variance > 0:
            raise InvalidArgument("noise_variance must be positive")
        X.setflags(write=False)
        object.__setattr__(self, "train_X", X)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def n(self) -> int:
        return self.train_X.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.zeros(self.n)

    def _cov_blocks(self, Z, T):
        Kzx = self.kernel.cov(Z, self.train_X)
        Kzz = self.kernel.cov(Z, Z)
        if T is None:
            return Kzx, Kzz, Kzx, Kzz
        Kmn = T.T @ Kzx
        Kmm = T.T @ Kzz @ T
        return Kzx, Kzz, Kmn, 0.5 * (Kmm + Kmm.T)

    def _factor(self, Kmn, Kmm) -> Nystrom:
        L, jitter = jittered_cholesky(Kmm, self.kernel.variance)
        sigma = np.sqrt(self.noise_variance)
        A = solve_triangular(L, Kmn, lower=True, check_finite=False) / sigma
        AAT = A @ A.T
        B = AAT + np.eye(len(AAT))
        LB, _ = jittered_cholesky(B, 1.0, ladder=(0.0, 1e-10, 1e-8))
        return Nystrom(Kmn, L, A, AAT, LB, self.noise_variance, jitter)

    def nystrom(self, Z, T=None) -> Nystrom:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        _, _, Kmn, Kmm = self._cov_blocks(Z, T)
        return self._factor(Kmn, Kmm)

    def _elbo_from(self, ny: Nystrom) -> float:
        n = self.n
        logdet_B = 2.0 * np.log(np.diag(ny.LB)).sum()
        trace_knn = self.kernel.variance * n
        return float(
            -0.5 * n * LOG_2PI
            - 0.5 * (n * np.log(self.noise_variance) + logdet_B)
            - 0.5 * trace_knn / self.noise_variance
            + 0.5 * np.trace(ny.AAT)
        )

    def elbo(self, Z, T=None) -> float:
        return self._elbo_from(self.nystrom(Z, T))

    def terms(self, Z, T=None) -> dict:
        """The ELBO split into its constant, data-fit, complexity and trace terms."""
        ny = self.nystrom(Z, T)
        n = self.n
        logdet = n * np.log(self.noise_variance) + 2.0 * np.log(np.diag(ny.LB)).sum()
        resid = self.kernel.variance * n - ny.trace()
        return {
            "constant": -0.5 * n * LOG_2PI,
            "data_fit": 0.0,
            "complexity": -0.5 * logdet,
            "trace": -0.5 * resid / self.noise_variance,
            "trace_residual": resid,
        }

    def elbo_and_grad(self, Z, T=None):
        """ELBO and its gradient with respect to the rows of ``Z``.

        Args:
            Z: (k, d) inducing (or expanded) points.
            T: optional (k, m) aggregation matrix.

        Returns:
            (F, dF/dZ) with dF/dZ of shape (k, d).
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Kzx, Kzz, Kmn, Kmm = self._cov_blocks(Z, T)
        ny = self._factor(Kmn, Kmm)
        F = self._elbo_from(ny)

        sigma = np.sqrt(self.noise_variance)
        Binv = cho_solve((ny.LB, True), np.eye(ny.m), check_finite=False)
        C = np.eye(ny.m) - Binv  # = AAT (I + AAT)^-1
        # dF/dKmn = L^-T C A / sigma ; dF/dKmm = -1/2 L^-T C AAT L^-1
        G_mn = solve_triangular(ny.L, C @ ny.A, lower=True, trans="T", check_finite=False) / sigma
        W = solve_triangular(ny.L, C @ ny.AAT, lower=True, trans="T", check_finite=False)
        G_mm = -0.5 * solve_triangular(ny.L, W.T, lower=True, trans="T", check_finite=False).T
        if T is not None:
            G_mn = T @ G_mn
            G_mm = T @ G_mm @ T.T
        grad = self.kernel.grad_first(Z, self.train_X, G_mn, Kzx) + self.kernel.grad_self(Z, G_mm, Kzz)
        return F, grad

    def full_gp_log_marginal(self) -> float:
        """Dense log N(0 | 0, K_nn + noise I), the exact GP evidence of zero labels."""
        K = self.kernel.cov(self.train_X, self.train_X) + self.noise_variance * np.eye(self.n)
        L = np.linalg.cholesky(K)
        return float(-0.5 * self.n * LOG_2PI - np.log(np.diag(L)).sum())


def compute_qnn(model: SgpModel, Xm) -> Nystrom:
    """Nystrom factorization for inducing points ``Xm``; call ``.dense()`` for Q_nn."""
    return model.nystrom(Xm)


def elbo(model: SgpModel, Xm) -> float:
    return model.elbo(Xm)


def elbo_grad(model: SgpModel, Xm, freeze_mask=None) -> np.ndarray:
    """dF/dXm with frozen coordinates set to zero."""
    _, g = model.elbo_and_grad(Xm)
    if freeze_mask is not None:
        g = np.where(np.asarray(freeze_mask, dtype=bool), 0.0, g)
    return g


@dataclass
class InducingPaths:
    """Ordered inducing points for ``r`` robots with ``t`` waypoints each.

    Attributes:
        points: (r, t, q) waypoint parameters. Columns are the spatial
            coordinates, then time when ``has_time``, then a sensor parameter
            (heading or height) for FoV sensing.
        freeze_mask: boolean array shaped like ``points``; True entries are
            never updated.
        aux: (k, D) auxiliary inducing points that enter Q_nn but are never
            moved and never belong to a path.
        shared_time: all robots share one time value per waypoint index
            (space-time decomposition).
    """

    points: np.ndarray
    freeze_mask: Optional[np.ndarray] = None
    aux: Optional[np.ndarray] = None
    has_time: bool = False
    n_spatial: int = 2
    shared_time: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 2:
            pts = pts[None]
        if pts.ndim != 3:
            raise InvalidArgument("points must have shape (r, t, q)")
        self.points = pts.copy()
        if self.freeze_mask is None:
            self.freeze_mask = np.zeros(pts.shape, dtype=bool)
        else:
            self.freeze_mask = np.broadcast_to(np.asarray(self.freeze_mask, dtype=bool), pts.shape).copy()
        if self.aux is not None:
            self.aux = np.atleast_2d(np.asarray(self.aux, dtype=float)).copy()
            if len(self.aux) == 0:
                self.aux = None
        if self.shared_time and not self.has_time:
            raise InvalidArgument("shared_time requires a time column")

    @property
    def r(self) -> int:
        return self.points.shape[0]

    @property
    def t(self) -> int:
        return self.points.shape[1]

    @property
    def time_col(self) -> Optional[int]:
        return self.n_spatial if self.has_time else None

    def copy(self, points=None) -> "InducingPaths":
        return replace(
            self,
            points=self.points.copy() if points is None else points,
            freeze_mask=self.freeze_mask.copy(),
            aux=None if self.aux is None else self.aux.copy(),
        )


@dataclass(frozen=True)
class ObjectiveConfig:
    """Optimizer and objective settings.

    Attributes:
        penalties: routing constraints (None for none).
        sensing: sensing model used for expansion/aggregation.
        learning_rate: Adam step size in normalized coordinates.
        max_iters: iteration cap.
        tol: relative objective change, over ``window`` iterations, that
            counts as converged.
        seed: reserved for stochastic initialization by callers.
    """

    penalties: Optional[PenaltyConfig] = None
    sensing: SensingModel = field(default_factory=SensingModel)
    learning_rate: float = 1e-2
    max_iters: int = 2000
    tol: float = 1e-6
    seed: int = 0
    window: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if not self.tol > 0:
            raise InvalidArgument("tol must be positive")


@dataclass
class OptimizeResult:
    """Outcome of :func:`optimize`.

    ``objective`` is the penalized objective of the returned (best-seen)
    iterate and ``elbo`` its unpenalized ELBO. ``trace`` holds the penalized
    objective of every iterate, starting with the initial one.
    """

    paths: InducingPaths
    trace: np.ndarray
    objective: float
    elbo: float
    iterations: int
    warning: Optional[str] = None

    def __iter__(self):
        yield self.paths
        yield self.trace


def param_bounds(env: Environment, sensing: SensingModel, has_time: bool):
    """Per-column (lower, scale, clip) for waypoint parameters.

    ``clip`` is False for unbounded columns (the line FoV heading).
    """
    lo = list(env.lower)
    scale = list(env.extent)
    clip = [True] * env.dim
    if has_time:
        t0, t1 = env.time_horizon
        lo.append(t0)
        scale.append(t1 - t0)
        clip.append(True)
    if sensing.kind == "line_fov":
        lo.append(0.0)
        scale.append(2.0 * np.pi)
        clip.append(False)
    elif sensing.kind == "square_fov_height":
        h0, h1 = sensing.height_bounds
        lo.append(h0)
        scale.append(h1 - h0)
        clip.append(True)
    return np.array(lo), np.array(scale), np.array(clip)


class PathObjective:
    """Penalized ELBO of a set of ordered paths and its gradient.

    F_hat = F - (n variance / noise_variance) * sum of penalties, where the
    distance penalty is measured in units of the largest environment side
    and speed/acceleration penalties relative to their limits.
    """

    def __init__(self, model: SgpModel, env: Environment, sensing: SensingModel,
                 penalties: Optional[PenaltyConfig], paths: InducingPaths):
        self.model = model
        self.env = env
        self.sensing = sensing
        self.penalties = penalties if penalties is not None and penalties.active else None
        self.n_spatial = paths.n_spatial
        self.has_time = paths.has_time
        self.aux = paths.aux
        self.r, self.t = paths.r, paths.t
        if self.penalties is not None and self.penalties.needs_time and not self.has_time:
            raise InvalidArgument("velocity/acceleration limits need a time dimension")
        if sensing.kind == "arc" and self.t < 2:
            raise InvalidArgument("arc sensing needs at least two waypoints per path")
        self.penalty_scale = model.n * model.kernel.variance / model.noise_variance
        self.length_unit = float(env.extent.max())
        self.T = None
        if sensing.kind != "point" and sensing.aggregate:
            sizes = [sensing.group_size] * (sensing.n_groups(self.t) * self.r)
            if self.aux is not None:
                sizes += [1] * len(self.aux)
            self.T = block_aggregation(sizes).matrix

    def expanded(self, pts: np.ndarray) -> np.ndarray:
        E = np.concatenate([self.sensing.expand(p) for p in pts], axis=0)
        if self.aux is not None:
            E = np.concatenate([E, self.aux], axis=0)
        return E

    def penalty(self, pts) -> float:
        if self.penalties is None:
            return 0.0
        pc, total = self.penalties, 0.0
        k = self.n_spatial
        for p in pts:
            if pc.distance_budget is not None:
                total += distance_penalty(p, pc.distance_budget, pc.weight / self.length_unit, k)
            if pc.velocity_limit is not None:
                total += velocity_penalty(p[:, : k + 1], pc.velocity_limit, pc.weight / pc.velocity_limit, k)
            if pc.accel_limit is not None:
                total += accel_penalty(p[:, : k + 1], pc.accel_limit, pc.weight / pc.accel_limit, k)
        return total

    def penalty_grad(self, pts) -> np.ndarray:
        g = np.zeros_like(pts)
        if self.penalties is None:
            return g
        pc, k = self.penalties, self.n_spatial
        for i, p in enumerate(pts):
            if pc.distance_budget is not None:
                g[i] += distance_penalty_grad(p, pc.distance_budget, pc.weight / self.length_unit, k)
            if pc.velocity_limit is not None:
                g[i, :, : k + 1] += velocity_penalty_grad(p[:, : k + 1], pc.velocity_limit, pc.weight / pc.velocity_limit, k)
            if pc.accel_limit is not None:
                g[i, :, : k + 1] += accel_penalty_grad(p[:, : k + 1], pc.accel_limit, pc.weight / pc.accel_limit, k)
        return g

    def value(self, pts):
        """Return (F_hat, F)."""
        F = self.model.elbo(self.expanded(pts), self.T)
        return F - self.penalty_scale * self.penalty(pts), F

    def value_and_grad(self, pts):
        """Return (F_hat, F, dF_hat/dpts)."""
        E = self.expanded(pts)
        F, gE = self.model.elbo_and_grad(E, self.T)
        grad = np.empty_like(pts)
        start = 0
        for i, p in enumerate(pts):
            k = len(self.sensing.expand(p)) if self.sensing.kind != "point" else len(p)
            grad[i] = self.sensing.expand_vjp(p, gE[start : start + k])
            start += k
        Fh = F
        if self.penalties is not None:
            Fh = F - self.penalty_scale * self.penalty(pts)
            grad -= self.penalty_scale * self.penalty_grad(pts)
        return Fh, F, grad


def _sort_time(pts, tcol, frozen):
    """Make time non-decreasing along each path by sorting the time column.

    Frozen first/last times bound the interior before sorting so they stay put.
    """
    out = pts.copy()
    for i in range(len(out)):
        tt = out[i, :, tcol]
        lo = tt[0] if frozen[i, 0, tcol] else -np.inf
        hi = tt[-1] if frozen[i, -1, tcol] else np.inf
        tt = np.clip(tt, lo, hi)
        out[i, :, tcol] = np.sort(tt)
    return out


def optimize(model: SgpModel, Xm0: InducingPaths, cfg: ObjectiveConfig, env: Environment) -> OptimizeResult:
    """Projected Adam ascent on the penalized ELBO.

    Coordinates are normalized by the environment extent before stepping,
    clamped to the environment after every step, and time columns are kept
    sorted along each path. The best iterate seen is returned.
    """
    objective = PathObjective(model, env, cfg.sensing, cfg.penalties, Xm0)
    X0 = Xm0.points
    frozen = Xm0.freeze_mask
    tcol = Xm0.time_col
    lo, scale, clip = param_bounds(env, cfg.sensing, Xm0.has_time)
    if lo.size != X0.shape[2]:
        raise InvalidArgument(f"waypoints have {X0.shape[2]} columns, environment/sensing imply {lo.size}")

    # shared time: the free time parameters are one per waypoint index
    shared = Xm0.shared_time
    free = ~frozen
    if shared:
        free = free.copy()
        t_free = ~frozen[:, :, tcol].any(axis=0)
        free[:, :, tcol] = False
        free[0, :, tcol] = t_free

    def normalize(X):
        return (X - lo) / scale

    def denormalize(U):
        return lo + U * scale

    def project(X):
        U = normalize(X)
        U = np.where(clip, np.clip(U, 0.0, 1.0), U)
        X = denormalize(U)
        if shared:
            X[:, :, tcol] = X[0, :, tcol][None, :]
        X = np.where(frozen, X0, X)
        if tcol is not None:
            X = _sort_time(X, tcol, frozen)
            if shared:
                X[:, :, tcol] = X[0, :, tcol][None, :]
        return np.where(frozen, X0, X)

    X = X0.copy()
    warning = None
    try:
        Fh, F, g = objective.value_and_grad(X)
    except NumericalFailure as exc:
        raise NumericalFailure(f"initial objective failed: {exc}") from exc
    trace = [Fh]
    best = (Fh, F, X.copy())
    m = np.zeros_like(X)
    v = np.zeros_like(X)
    it = 0
    if not free.any():
        return OptimizeResult(Xm0.copy(), np.array(trace), Fh, F, 0, None)
    for it in range(1, cfg.max_iters + 1):
        if shared:
            g = g.copy()
            g[0, :, tcol] = g[:, :, tcol].sum(axis=0)
        gu = np.where(free, g * scale, 0.0)
        m = cfg.beta1 * m + (1 - cfg.beta1) * gu
        v = cfg.beta2 * v + (1 - cfg.beta2) * gu * gu
        mhat = m / (1 - cfg.beta1**it)
        vhat = v / (1 - cfg.beta2**it)
        U = normalize(X) + cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        Xn = denormalize(U)
        if shared:
            Xn[:, :, tcol] = Xn[0, :, tcol][None, :]
        X = project(Xn)
        try:
            Fh, F, g = objective.value_and_grad(X)
        except NumericalFailure as exc:
            warning = f"numerical failure at iteration {it}: {exc}"
            log.warning(warning)
            break
        if not np.isfinite(Fh):
            warning = f"non-finite objective at iteration {it}"
            log.warning(warning)
            break
        trace.append(Fh)
        if Fh > best[0]:
            best = (Fh, F, X.copy())
        w = cfg.window
        if len(trace) > w:
            ref = trace[-1 - w]
            if abs(trace[-1] - ref) <= cfg.tol * max(abs(ref), 1e-12):
                break
    return OptimizeResult(Xm0.copy(points=best[2]), np.array(trace), best[0], best[1], it, warning)


def init_problem(kernel: RbfKernel, env: Environment, s: int, n: Optional[int], seed,
                 noise_variance: float):
    """Sample the unlabeled training set and a random subset of ``s`` of its points.

    Returns:
        (model, Xm0, rng). The generator has consumed exactly the training
        draw and the subset draw, so callers continue from the same state.
    """
    if n is None:
        n = default_train_size(env.input_dim)
    if s > n:
        raise InvalidArgument(f"s={s} exceeds the number of training samples n={n}")
    if kernel.input_dim != env.input_dim:
        raise InvalidArgument(f"kernel has {kernel.input_dim} lengthscales, environment has {env.input_dim} inputs")
    rng = make_rng(seed)
    X = sample_uniform(env, n, rng)
    idx = rng.choice(n, size=s, replace=False)
    return SgpModel(kernel, X, noise_variance), X[idx].copy(), rng


def random_sensor_params(rng, sensing: SensingModel, s: int) -> Optional[np.ndarray]:
    """Random heading or height column for FoV sensing (None otherwise)."""
    if sensing.kind == "line_fov":
        return rng.uniform(0.0, 2.0 * np.pi, size=(s, 1))
    if sensing.kind == "square_fov_height":
        h0, h1 = sensing.height_bounds
        return rng.uniform(h0, h1, size=(s, 1))
    return None


def continuous_sgp_placement(kernel: RbfKernel, env: Environment, s: int, n: Optional[int] = None, seed=0,
                             noise_variance: float = 1e-2, cfg: Optional[ObjectiveConfig] = None,
                             sensing: Optional[SensingModel] = None) -> np.ndarray:
    """Sensor placements from an unpenalized zero-label SGP.

    Samples ``n`` unlabeled points, starts the ``s`` inducing points at a
    random subset of them and maximizes the ELBO.

    Returns:
        (s, q) placements inside ``env``; q includes a heading/height column
        for FoV sensing.
    """
    cfg = cfg or ObjectiveConfig()
    sensing = sensing or SensingModel()
    if sensing.kind == "arc":
        raise InvalidArgument("arc sensing needs ordered paths; use the planners")
    cfg = replace(cfg, penalties=None, sensing=sensing)
    model, Xm0, rng = init_problem(kernel, env, s, n, seed, noise_variance)
    extra = random_sensor_params(rng, sensing, s)
    if extra is not None:
        if env.has_time:
            raise InvalidArgument("FoV sensing is planar; drop the time horizon")
        Xm0 = np.hstack([Xm0, extra])
    paths = InducingPaths(Xm0[None], has_time=env.has_time, n_spatial=env.dim)
    return optimize(model, paths, cfg, env).paths.points[0]

