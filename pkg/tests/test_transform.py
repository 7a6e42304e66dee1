import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgpipp.env import Environment, make_rng, sample_uniform
from sgpipp.errors import InvalidArgument
from sgpipp.kernel import RbfKernel
from sgpipp.sgp import InducingPaths, PathObjective, SgpModel, compute_qnn
from sgpipp.transform import (
    SensingModel,
    aggregation_matrix,
    block_aggregation,
    expand_interpolate,
    expand_line_fov,
    expand_square_fov_height,
    qnn_aggregated,
)

UNIT = Environment([0, 0], [1, 1])


def test_interpolate_inclusive():
    out = expand_interpolate([(0, 0), (3, 0)], 4)
    np.testing.assert_allclose(out, [(0, 0), (1, 0), (2, 0), (3, 0)], atol=1e-15)


def test_interpolate_p2_gives_segment_endpoints():
    Xm = np.array([(0, 0), (1, 2), (3, 3)], dtype=float)
    np.testing.assert_array_equal(expand_interpolate(Xm, 2), Xm[[0, 1, 1, 2]])


def test_interpolate_count():
    assert expand_interpolate(np.zeros((5, 2)) + np.arange(5)[:, None], 7).shape == (28, 2)


def test_interpolate_errors():
    with pytest.raises(InvalidArgument):
        expand_interpolate([(0, 0)], 3)
    with pytest.raises(InvalidArgument):
        expand_interpolate([(0, 0), (1, 1)], 1)


def test_line_fov_axis_aligned_and_rotated():
    np.testing.assert_allclose(expand_line_fov([(0, 0, 0)], 2, 3), [(0, 0), (1, 0), (2, 0)], atol=1e-15)
    np.testing.assert_allclose(expand_line_fov([(0, 0, np.pi / 2)], 2, 3), [(0, 0), (0, 1), (0, 2)], atol=1e-15)
    with pytest.raises(InvalidArgument):
        expand_line_fov([(0, 0)], 1.0, 3)


def _pdist(P):
    return np.linalg.norm(P[:, None] - P[None], axis=2)


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(0.1, 5), st.integers(1, 8))
def test_line_fov_rigid_in_theta(theta, length, p):
    a = expand_line_fov([(0.3, -0.2, 0.0)], length, p)
    b = expand_line_fov([(0.3, -0.2, theta)], length, p)
    np.testing.assert_allclose(_pdist(a), _pdist(b), atol=1e-9)


def test_square_fov_corners():
    out = expand_square_fov_height([(0, 0, 1)], np.pi / 4, 2)
    assert sorted(map(tuple, np.round(out, 12))) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def test_square_fov_centroid_and_scaling():
    rng = make_rng(0)
    Xm = np.column_stack([rng.uniform(size=(6, 2)), rng.uniform(0.5, 3, size=6)])
    out = expand_square_fov_height(Xm, 0.4, 4).reshape(6, 16, 2)
    np.testing.assert_allclose(out.mean(1), Xm[:, :2], atol=1e-12)
    doubled = Xm.copy()
    doubled[:, 2] *= 2
    out2 = expand_square_fov_height(doubled, 0.4, 4).reshape(6, 16, 2)
    for a, b in zip(out, out2):
        np.testing.assert_allclose(_pdist(b), 2 * _pdist(a), atol=1e-12)


def test_square_fov_rejects_nonpositive_height():
    with pytest.raises(InvalidArgument):
        expand_square_fov_height([(0, 0, 0.0)], 0.5, 3)


def test_aggregation_matrix_example():
    T = aggregation_matrix(3, 2).matrix
    expected_T = [[.5, .5, 0, 0, 0, 0], [0, 0, .5, .5, 0, 0], [0, 0, 0, 0, .5, .5]]
    np.testing.assert_array_equal(T.T, expected_T)
    np.testing.assert_array_equal(aggregation_matrix(4, 1).matrix, np.eye(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_aggregation_matrix_structure(groups, p):
    T = aggregation_matrix(groups, p).matrix
    assert T.shape == (groups * p, groups)
    np.testing.assert_allclose(T.sum(0), 1.0)
    assert np.all((T != 0).sum(1) == 1)


def test_block_aggregation_mixed_sizes():
    T = block_aggregation([2, 1, 3]).matrix
    np.testing.assert_allclose(T.sum(0), 1.0)
    assert T.shape == (6, 3)
    assert T[2, 1] == 1.0 and T[5, 2] == pytest.approx(1 / 3)


def test_qnn_aggregated_identity_equals_plain():
    k = RbfKernel(1.0, [0.3, 0.3])
    model = SgpModel(k, sample_uniform(UNIT, 40, seed=1), 0.1)
    E = sample_uniform(UNIT, 6, seed=2)
    a = qnn_aggregated(model, E, aggregation_matrix(6, 1))
    np.testing.assert_allclose(a.dense(), compute_qnn(model, E).dense(), rtol=1e-10, atol=1e-14)
    assert model.elbo(E, np.eye(6)) == pytest.approx(model.elbo(E), rel=1e-10)


def test_qnn_aggregated_block_means():
    k = RbfKernel(1.0, [0.3, 0.3])
    E = sample_uniform(UNIT, 12, seed=3)
    model = SgpModel(k, sample_uniform(UNIT, 20, seed=4), 0.1)
    agg = aggregation_matrix(4, 3)
    ny = qnn_aggregated(model, E, agg)
    assert ny.L.shape == (4, 4)
    K = k.cov(E, E)
    blocks = np.array([[K[3 * i : 3 * i + 3, 3 * j : 3 * j + 3].mean() for j in range(4)] for i in range(4)])
    np.testing.assert_allclose(agg.matrix.T @ K @ agg.matrix, blocks, rtol=1e-12)
    with pytest.raises(InvalidArgument):
        qnn_aggregated(model, E[:10], agg)


def test_factorized_side_independent_of_p():
    k = RbfKernel(1.0, [0.3, 0.3])
    model = SgpModel(k, sample_uniform(UNIT, 20, seed=5), 0.1)
    for p in (2, 5, 9):
        E = expand_interpolate(sample_uniform(UNIT, 5, seed=p), p)
        assert qnn_aggregated(model, E, aggregation_matrix(4, p)).L.shape == (4, 4)


def test_sensing_model_counts_and_validation():
    assert SensingModel.arc(7).n_groups(5) == 4
    assert SensingModel.line_fov(1.0, 5).n_groups(5) == 5
    assert SensingModel.square_fov_height(0.5, g=3).group_size == 9
    with pytest.raises(InvalidArgument):
        SensingModel("cone")
    with pytest.raises(InvalidArgument):
        SensingModel.arc(1)
    with pytest.raises(InvalidArgument):
        SensingModel.square_fov_height(np.pi / 2)


def _fd_check(obj, pts, h=1e-6):
    _, _, g = obj.value_and_grad(pts)
    fd = np.zeros_like(pts)
    for idx in np.ndindex(*pts.shape):
        p, m = pts.copy(), pts.copy()
        p[idx] += h
        m[idx] -= h
        fd[idx] = (obj.value(p)[0] - obj.value(m)[0]) / (2 * h)
    return np.linalg.norm(g - fd) / np.linalg.norm(fd)


@pytest.mark.parametrize(
    "sensing, extra",
    [
        (SensingModel.arc(6), None),
        (SensingModel.line_fov(0.3, 4), (0.0, 2 * np.pi)),
        (SensingModel.square_fov_height(0.3, g=3, height_bounds=(0.2, 1.0)), (0.2, 1.0)),
    ],
)
def test_gradient_through_expansion_and_aggregation(sensing, extra):
    rng = make_rng(6)
    k = RbfKernel(1.0, [0.25, 0.25])
    model = SgpModel(k, sample_uniform(UNIT, 60, seed=7), 0.05)
    pts = rng.uniform(0.2, 0.8, size=(1, 5, 2))
    if extra is not None:
        pts = np.concatenate([pts, rng.uniform(*extra, size=(1, 5, 1))], axis=2)
    paths = InducingPaths(pts, n_spatial=2)
    obj = PathObjective(model, UNIT, sensing, None, paths)
    assert _fd_check(obj, pts) < 1e-4


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (4, 2), elements=st.floats(-1, 1, allow_nan=False, width=64)), st.integers(2, 6))
def test_interpolate_vjp_is_adjoint(Xm, p):
    from sgpipp.transform import interpolate_vjp

    G = make_rng(8).normal(size=((4 - 1) * p, 2))
    dX = make_rng(9).normal(size=Xm.shape)
    lhs = np.sum(G * expand_interpolate(dX, p))
    rhs = np.sum(interpolate_vjp(Xm, G, p) * dX)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
