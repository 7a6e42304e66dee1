"""Open-path TSP, balanced VRP partitioning and waypoint-transition assignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .env import make_rng
from .errors import InvalidArgument

_EPS = 1e-12


@dataclass(frozen=True)
class Tour:
    """Visiting order over a point set; ``order`` indexes the caller's points."""

    order: np.ndarray
    open: bool = True
    fixed_start: Optional[int] = None
    fixed_end: Optional[int] = None

    def length(self, points) -> float:
        pts = np.asarray(points, dtype=float)[self.order]
        total = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
        if not self.open and len(pts) > 1:
            total += np.linalg.norm(pts[-1] - pts[0])
        return float(total)

    def __len__(self):
        return len(self.order)


def _dist_matrix(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def open_path_length(D, order) -> float:
    order = np.asarray(order)
    return float(D[order[:-1], order[1:]].sum())


def nearest_neighbor(D, start: int, end: Optional[int] = None) -> List[int]:
    """Greedy nearest-neighbor path from ``start``; ``end`` is appended last."""
    n = len(D)
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    if end is not None:
        visited[end] = True
    order = [start]
    cur = start
    for _ in range(n - 1 - int(end is not None and end != start)):
        d = np.where(visited, np.inf, D[cur])
        cur = int(np.argmin(d))
        visited[cur] = True
        order.append(cur)
    if end is not None and end != start:
        order.append(end)
    return order


def _move_delta(D, route, i, k):
    """Length change from reversing route[i..k] of an open path."""
    n = len(route)
    a, b = route[i], route[k]
    before = route[i - 1] if i > 0 else None
    after = route[k + 1] if k < n - 1 else None
    delta = 0.0
    if before is not None:
        delta += D[before, b] - D[before, a]
    if after is not None:
        delta += D[a, after] - D[b, after]
    return delta


def _move_range(n, start_fixed, end_fixed):
    i_lo = 1 if start_fixed else 0
    k_hi = n - 2 if end_fixed else n - 1
    return i_lo, k_hi


def two_opt(D, route, start_fixed=True, end_fixed=False) -> List[int]:
    """First-improvement 2-opt on an open path until no move improves it.

    Reversing a prefix or suffix is allowed when that endpoint is free.
    """
    route = list(route)
    n = len(route)
    i_lo, k_hi = _move_range(n, start_fixed, end_fixed)
    improved = True
    while improved:
        improved = False
        for i in range(i_lo, k_hi):
            for k in range(i + 1, k_hi + 1):
                if _move_delta(D, route, i, k) < -_EPS:
                    route[i : k + 1] = route[i : k + 1][::-1]
                    improved = True
    return route


def has_improving_move(D, route, start_fixed=True, end_fixed=False, tol=1e-9) -> bool:
    """True if any single 2-opt reversal shortens the open path by more than ``tol``."""
    n = len(route)
    i_lo, k_hi = _move_range(n, start_fixed, end_fixed)
    return any(_move_delta(D, route, i, k) < -tol for i in range(i_lo, k_hi) for k in range(i + 1, k_hi + 1))


def tsp_order(points, fixed_start: Optional[int] = None, fixed_end: Optional[int] = None, seed=0) -> Tour:
    """Open-path tour: nearest-neighbor construction then 2-opt.

    With a free start, every point is tried as the nearest-neighbor origin and
    the shortest construction is kept. The heuristic is deterministic; ``seed``
    is accepted for interface symmetry with :func:`vrp_routes`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if n < 2:
        raise InvalidArgument("a tour needs at least two points")
    for name, idx in (("fixed_start", fixed_start), ("fixed_end", fixed_end)):
        if idx is not None and not 0 <= idx < n:
            raise InvalidArgument(f"{name}={idx} out of range for {n} points")
    if fixed_start is not None and fixed_start == fixed_end:
        raise InvalidArgument("fixed_start and fixed_end must differ")
    D = _dist_matrix(pts)
    if fixed_start is not None:
        starts = [fixed_start]
    else:
        starts = [i for i in range(n) if i != fixed_end]
    best = None
    for s in starts:
        cand = nearest_neighbor(D, s, fixed_end)
        length = open_path_length(D, cand)
        if best is None or length < best[0] - _EPS:
            best = (length, cand)
    route = two_opt(D, best[1], start_fixed=fixed_start is not None, end_fixed=fixed_end is not None)
    return Tour(np.array(route, dtype=int), True, fixed_start, fixed_end)


def _kmeans_pp(pts, r, rng):
    centers = [pts[rng.integers(len(pts))]]
    for _ in range(1, r):
        d2 = np.min(((pts[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(pts[rng.integers(len(pts))])
            continue
        centers.append(pts[rng.choice(len(pts), p=d2 / total)])
    return np.array(centers)


def _balanced_assign(dist, cap):
    """Nearest-center assignment, then move overflow to the nearest under-full cluster."""
    n, r = dist.shape
    labels = np.argmin(dist, axis=1)
    counts = np.bincount(labels, minlength=r)
    while counts.max() > cap:
        over = int(np.argmax(counts))
        members = np.flatnonzero(labels == over)
        open_ = counts < cap
        alt = np.where(open_[None, :], dist[members], np.inf)
        target = np.argmin(alt, axis=1)
        cost = alt[np.arange(len(members)), target] - dist[members, over]
        j = int(np.argmin(cost))
        labels[members[j]] = target[j]
        counts[over] -= 1
        counts[target[j]] += 1
    # never leave a cluster empty
    for c in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        j = members[np.argmin(dist[members, c])]
        labels[j] = c
        counts[big] -= 1
        counts[c] += 1
    return labels


def balanced_kmeans(points, r: int, seed=0, max_iter: int = 100) -> np.ndarray:
    """Cluster labels with every cluster holding at most ceil(N / r) points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rng = make_rng(seed)
    cap = int(np.ceil(len(pts) / r))
    centers = _kmeans_pp(pts, r, rng)
    labels = None
    for _ in range(max_iter):
        dist = np.sqrt(((pts[:, None, :] - centers[None]) ** 2).sum(-1))
        new = _balanced_assign(dist, cap)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([pts[labels == c].mean(0) for c in range(r)])
    return labels


def vrp_routes(points, r: int, seed=0) -> List[Tour]:
    """Split points among ``r`` robots and order each share as an open path.

    Partition by seeded balanced k-means on the given coordinates, then
    :func:`tsp_order` per cluster. Tour orders index the full point set.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if r < 1:
        raise InvalidArgument("need at least one robot")
    if r > len(pts):
        raise InvalidArgument(f"{r} robots but only {len(pts)} points")
    if r == 1:
        return [tsp_order(pts, seed=seed)]
    labels = balanced_kmeans(pts, r, seed)
    tours = []
    for c in range(r):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 1:
            tours.append(Tour(idx.copy()))
            continue
        t = tsp_order(pts[idx], seed=seed)
        tours.append(Tour(idx[t.order]))
    return tours


def hungarian(C) -> np.ndarray:
    """Exact minimum-cost assignment for a square cost matrix.

    Shortest augmenting path with row/column potentials, O(r^3).

    Returns:
        ``a`` with ``a[j]`` the column assigned to row ``j``.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n:
        raise InvalidArgument("cost matrix must be square")
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[col] = row matched to col (1-based), 0 = free
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    a = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        a[p[j] - 1] = j - 1
    return a


def transition_costs(X, n_spatial: Optional[int] = None) -> np.ndarray:
    """Per-timestep sum of robot displacement lengths, shape (t - 1,)."""
    X = np.asarray(X, dtype=float)
    d = X.shape[2] - 1 if n_spatial is None else n_spatial
    return np.linalg.norm(np.diff(X[:, :, :d], axis=1), axis=2).sum(0)


def assign_waypoints(X, n_spatial: Optional[int] = None) -> np.ndarray:
    """Re-index waypoints so each timestep transition is a minimum-cost matching.

    For each step i the r x r cost C[j, k] = |X[j, i] - X[k, i + 1]| over the
    spatial coordinates is solved exactly and the waypoints at i + 1 are
    permuted accordingly.

    Args:
        X: (r, t, d + 1) waypoints, time last.
        n_spatial: spatial column count (default: all but the last column).
    """
    X = np.array(X, dtype=float)
    if X.ndim != 3:
        raise InvalidArgument("waypoints must have shape (r, t, d + 1)")
    r, t, k = X.shape
    d = k - 1 if n_spatial is None else n_spatial
    if r < 1 or t < 2 or not 1 <= d <= k:
        raise InvalidArgument(f"invalid waypoint array shape {X.shape}")
    for i in range(t - 1):
        C = np.linalg.norm(X[:, i, None, :d] - X[None, :, i + 1, :d], axis=2)
        A = hungarian(C)
        X[:, i + 1] = X[A, i + 1]
    return X
