"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (also collected into the terminal
summary). Tolerances are fixed constants below; the seeded setups are
described in each test.
"""

import itertools
import json
import time

import numpy as np

from sgpipp import cli
from sgpipp.env import Environment, make_rng, sample_uniform
from sgpipp.evaluate import evaluate_paths, greedy_mi_placement, sample_gp_field
from sgpipp.kernel import RbfKernel
from sgpipp.penalties import PenaltyConfig
from sgpipp.plan import PastData, plan_multi, plan_single
from sgpipp.route import _dist_matrix, assign_waypoints, open_path_length, transition_costs, tsp_order
from sgpipp.sgp import InducingPaths, PathObjective, SgpModel, continuous_sgp_placement
from sgpipp.transform import SensingModel

UNIT = Environment([0, 0], [1, 1])
K_REF = RbfKernel(1.0, [0.2, 0.2])
SEEDS = range(10)


def _fd_rel_error(obj, pts, h):
    _, _, g = obj.value_and_grad(pts)
    fd = np.zeros_like(pts)
    for idx in np.ndindex(*pts.shape):
        p, m = pts.copy(), pts.copy()
        p[idx] += h[idx[-1]]
        m[idx] -= h[idx[-1]]
        fd[idx] = (obj.value(p)[0] - obj.value(m)[0]) / (2 * h[idx[-1]])
    return np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300)


def test_c01_gradient_correctness(report):
    """50 instances, n <= 100, m <= 20, d <= 3, point/arc/FoV sensing, rel. error < 1e-4 in < 60 s."""
    rng = make_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        d = [1, 2, 3][i % 3]
        m = [1, 5, 20][(i // 3) % 3]
        kinds = ["point", "arc"] + (["line_fov", "square_fov_height"] if d == 2 else [])
        kind = kinds[i % len(kinds)]
        if kind == "arc":
            m = max(m, 2)
        n = int(rng.integers(20, 101))
        env = Environment(np.zeros(d), np.ones(d))
        ls = rng.uniform(0.2, 0.6, size=d)
        kernel = RbfKernel(float(rng.uniform(0.5, 2.0)), ls)
        model = SgpModel(kernel, sample_uniform(env, n, rng), float(rng.uniform(0.01, 0.2)))
        pts = rng.uniform(0.1, 0.9, size=(1, m, d))
        sensing = {"point": SensingModel.point(), "arc": SensingModel.arc(5),
                   "line_fov": SensingModel.line_fov(0.2, 4),
                   "square_fov_height": SensingModel.square_fov_height(0.3, 3, (0.1, 0.6))}[kind]
        h = list(1e-5 * ls)
        if sensing.extra_params:
            extra = rng.uniform(0, 2 * np.pi, (1, m, 1)) if kind == "line_fov" else rng.uniform(0.1, 0.6, (1, m, 1))
            pts = np.concatenate([pts, extra], axis=2)
            h.append(1e-5)
        obj = PathObjective(model, env, sensing, None, InducingPaths(pts, n_spatial=d))
        worst = max(worst, _fd_rel_error(obj, pts, np.array(h)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 60
    report(1, "gradient correctness", ok, f"worst rel err {worst:.2e} < 1e-4, {elapsed:.1f} s < 60 s")
    assert ok


def test_c02_vfe_collapse(report):
    """Inducing = training (n = 50): trace residual and ELBO vs full-GP evidence."""
    X = sample_uniform(UNIT, 50, seed=0)
    model = SgpModel(K_REF, X, 1.0)
    resid = abs(model.terms(X)["trace_residual"])
    F, G = model.elbo(X), model.full_gp_log_marginal()
    rel = abs(F - G) / abs(G)
    ok = resid < 1e-6 * 50 * K_REF.variance and rel < 1e-6
    report(2, "VFE collapse", ok, f"|Tr(Knn-Qnn)| {resid:.3e} < {5e-5:.1e}, rel gap {rel:.2e} < 1e-6")
    assert ok


def test_c03_placement_quality(report):
    """s = 16 on a 25 x 25 grid field vs greedy MI and 10 random placements, 10 seeds."""
    ours, mi, rand = [], [], []
    for seed in SEEDS:
        field = sample_gp_field(K_REF, UNIT, 25, seed=seed, noise_variance=0.01)
        X = continuous_sgp_placement(K_REF, UNIT, 16, seed=seed)
        ours.append(evaluate_paths(field, [X]).rmse)
        grid = field.points()
        mi.append(evaluate_paths(field, [grid[greedy_mi_placement(K_REF, grid, 16, 0.01)]]).rmse)
        rand.append(np.mean([evaluate_paths(field, [sample_uniform(UNIT, 16, seed=1000 * seed + j)]).rmse
                             for j in range(10)]))
    a, b, c = np.mean(ours), np.mean(mi), np.mean(rand)
    ok = a <= 1.10 * b and a <= 0.90 * c
    report(3, "placement quality", ok, f"SGP {a:.4f} <= 1.10 x MI {b:.4f} and <= 0.90 x random {c:.4f}")
    assert ok


def test_c04_budget_saturation(report):
    """[0, 50]^2 with lengthscales (7.70, 19.46): length in [0.9c, 1.01c] on >= 8/10 seeds per budget."""
    env = Environment([0, 0], [50, 50])
    kernel = RbfKernel(1.0, [7.70, 19.46])
    hits = {}
    for c in (10.0, 20.0, 40.0):
        lengths = [plan_single(kernel, env, 10, penalties=PenaltyConfig(distance_budget=c), seed=s).lengths[0]
                   for s in SEEDS]
        hits[c] = sum(0.9 * c <= L <= 1.01 * c for L in lengths)
    ok = all(v >= 8 for v in hits.values())
    report(4, "budget saturation", ok, ", ".join(f"c={c:g}: {v}/10" for c, v in hits.items()))
    assert ok


def test_c05_rmse_vs_waypoints(report):
    """10-seed mean RMSE for s = 5, 10, ..., 30 decreases with at most one inversion."""
    sizes = list(range(5, 35, 5))
    means = []
    fields = [sample_gp_field(K_REF, UNIT, 25, seed=s) for s in SEEDS]
    for s in sizes:
        means.append(np.mean([evaluate_paths(f, plan_single(K_REF, UNIT, s, seed=seed).paths).rmse
                              for seed, f in zip(SEEDS, fields)]))
    inversions = int(np.sum(np.diff(means) >= 0))
    ok = inversions <= 1
    report(5, "RMSE vs waypoints", ok, "means " + " ".join(f"{m:.3f}" for m in means) + f", {inversions} inversions")
    assert ok


def test_c06_arc_vs_point(report):
    """Continuous-sensing evaluation, s = 10: arc (p = 10) beats point on >= 7/10 seeds."""
    wins = 0
    for seed in SEEDS:
        field = sample_gp_field(K_REF, UNIT, 25, seed=seed)
        arc = plan_single(K_REF, UNIT, 10, sensing=SensingModel.arc(10), seed=seed)
        point = plan_single(K_REF, UNIT, 10, seed=seed)
        wins += evaluate_paths(field, arc.paths, "continuous").rmse < evaluate_paths(field, point.paths, "continuous").rmse
    ok = wins >= 7
    report(6, "arc vs point sensing", ok, f"arc wins {wins}/10 >= 7")
    assert ok


def test_c07_assignment_optimality(report):
    """Per-timestep cost equals the exhaustive minimum, r = 2..5, 100 instances each."""
    failures = 0
    for r in range(2, 6):
        perms = [list(p) for p in itertools.permutations(range(r))]
        for inst in range(100):
            X = make_rng(10_000 * r + inst).uniform(size=(r, 4, 3))
            out = assign_waypoints(X)
            cost = transition_costs(out)
            for i in range(3):
                best = min(np.linalg.norm(out[:, i, :2] - out[p, i + 1, :2], axis=1).sum() for p in perms)
                failures += not abs(cost[i] - best) <= 1e-12
    ok = failures == 0
    report(7, "assignment optimality", ok, f"{failures} failures over 400 instances")
    assert ok


def test_c08_aggregation_speedup(report):
    """ELBO + gradient at m = 20, p = 10: aggregated vs 200 free points, median of 20 runs."""
    from sgpipp.transform import aggregation_matrix, expand_line_fov

    rng = make_rng(8)
    model = SgpModel(K_REF, sample_uniform(UNIT, 1000, rng), 0.01)
    Xm = np.column_stack([rng.uniform(size=(20, 2)), rng.uniform(0, 2 * np.pi, 20)])
    E = expand_line_fov(Xm, 0.2, 10)
    T = aggregation_matrix(20, 10).matrix

    def median_time(fn):
        fn()
        ts = []
        for _ in range(20):
            t = time.perf_counter()
            fn()
            ts.append(time.perf_counter() - t)
        return float(np.median(ts))

    agg = median_time(lambda: model.elbo_and_grad(E, T))
    free = median_time(lambda: model.elbo_and_grad(E))
    ratio = agg / free
    ok = ratio <= 0.5
    report(8, "aggregation speedup", ok, f"{agg * 1e3:.2f} ms / {free * 1e3:.2f} ms = {ratio:.2f} <= 0.5")
    assert ok


def test_c09_past_data(report):
    """5 past samples at t in [-1, 0]: paths move away and combined RMSE drops on >= 7/10 seeds."""
    env = Environment([0, 0], [1, 1], time_horizon=(0, 4))
    kernel = RbfKernel(1.0, [0.2, 0.2, 8.0])
    farther = better = 0
    for seed in SEEDS:
        rng = make_rng(1000 + seed)
        past = np.column_stack([rng.uniform(0, 1, (5, 2)), rng.uniform(-1, 0, 5)])
        field = sample_gp_field(kernel, env, 15, seed=seed, time_resolution=11, time_range=(-1, 4))
        extra = (past, field.interpolate(past))
        now = field.points()[:, 2] >= 0
        base = plan_single(kernel, env, 10, seed=seed)
        with_past = plan_single(kernel, env, 10, seed=seed, past=PastData(past))

        def min_dist(res):
            return np.linalg.norm(res.path.spatial[:, None] - past[None, :, :2], axis=2).min()

        farther += min_dist(with_past) > min_dist(base)
        better += (evaluate_paths(field, with_past.paths, extra_obs=extra, query_mask=now).rmse
                   < evaluate_paths(field, base.paths, extra_obs=extra, query_mask=now).rmse)
    ok = farther >= 7 and better >= 7
    report(9, "past data", ok, f"farther {farther}/10, lower RMSE {better}/10 (need >= 7 each)")
    assert ok


def test_c10_multi_robot_benefit(report):
    """r = 2 vs r = 1 at s = 10 per path: lower RMSE on >= 8/10 seeds."""
    wins = 0
    for seed in SEEDS:
        field = sample_gp_field(K_REF, UNIT, 25, seed=seed)
        two = plan_multi(K_REF, UNIT, 10, 2, seed=seed)
        one = plan_multi(K_REF, UNIT, 10, 1, seed=seed)
        wins += evaluate_paths(field, two.paths).rmse < evaluate_paths(field, one.paths).rmse
    ok = wins >= 8
    report(10, "multi-robot benefit", ok, f"r=2 wins {wins}/10 >= 8")
    assert ok


def test_c11_cli_determinism(report, tmp_path, capsys):
    """gen-data, plan, eval and plot produce byte-identical files across two runs."""
    cfg = {
        "environment": {"lower": [0, 0], "upper": [1, 1], "time_horizon": [0, 10]},
        "kernel": {"variance": 1.0, "lengthscales": [0.2, 0.2, 3.0]},
        "robots": 2, "waypoints": 8, "seed": 5, "train_samples": 400,
        "penalties": {"velocity_limit": 0.3},
        "field": {"resolution": 12, "time_resolution": 6},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    files = {}
    codes = []
    for run in ("a", "b"):
        out = tmp_path / run
        codes.append(cli.main(["gen-data", "-c", str(cfg_path), "-o", str(out)]))
        codes.append(cli.main(["plan", "-c", str(cfg_path), "--field", str(out / "field.csv"), "-o", str(out)]))
        codes.append(cli.main(["eval", "--paths", str(out / "paths.json"), "--field", str(out / "field.csv"),
                               "--sensing", "continuous", "-o", str(out)]))
        codes.append(cli.main(["plot", "--paths", str(out / "paths.json"), "--field", str(out / "field.csv"),
                               "-o", str(out)]))
        files[run] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    capsys.readouterr()
    expected = {"field.csv", "field.meta.json", "paths.json", "trace.csv", "report.json", "plot.svg"}
    same = files["a"] == files["b"]
    ok = same and set(files["a"]) == expected and all(c == 0 for c in codes)
    report(11, "CLI determinism", ok, f"{len(files['a'])} files, byte-identical: {same}, exit codes {sorted(set(codes))}")
    assert ok


def test_c12_tsp_sanity(report):
    """Open-path heuristic within 1.2 x of brute force on 100 seeded 8-point instances."""
    perms = np.array(list(itertools.permutations(range(8))))
    worst = 0.0
    for seed in range(100):
        pts = make_rng(seed).uniform(size=(8, 2))
        D = _dist_matrix(pts)
        opt = D[perms[:, :-1], perms[:, 1:]].sum(1).min()
        ours = open_path_length(D, tsp_order(pts, seed=seed).order)
        worst = max(worst, ours / opt)
    ok = worst <= 1.2
    report(12, "TSP sanity", ok, f"worst ratio {worst:.4f} <= 1.2")
    assert ok
