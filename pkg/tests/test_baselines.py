import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from fazekit.baselines import (DifferentialConfig, DifferentialNet, Poly3Corrector, apply_poly3,
                               differential_predict, fit_poly3, gaze_vector_of_por, por_from_gaze,
                               por_of_gaze_vector, poly_terms, train_differential)
from fazekit.errors import InvalidArgumentError, NoIntersectionError
from fazekit.geometry import euler_to_rotation

from metahelpers import BASE

ORIGIN = np.array([0.0, 0.0, 600.0])


def test_por_examples():
    np.testing.assert_allclose(por_from_gaze(ORIGIN, [0, 0, -1]), [0, 0])
    np.testing.assert_allclose(por_from_gaze(ORIGIN, [0.1, 0, -1]), [60, 0], atol=1e-12)
    with pytest.raises(NoIntersectionError):
        por_from_gaze(ORIGIN, [0, 0, 1])
    with pytest.raises(NoIntersectionError):
        por_from_gaze(ORIGIN, [1, 0, 0])


@given(st.floats(0.01, 100), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_por_scale_invariant(scale, x, y):
    d = np.array([x, y, -1.0])
    np.testing.assert_allclose(por_from_gaze(ORIGIN, scale * d), por_from_gaze(ORIGIN, d), atol=1e-12, rtol=1e-12)


def test_por_gaze_round_trip(rng):
    por = rng.uniform(-300, 300, size=(50, 2))
    np.testing.assert_allclose(por_of_gaze_vector(gaze_vector_of_por(por)), por, atol=1e-9)


def _cubic(rng):
    cx, cy = rng.normal(size=10), rng.normal(size=10)
    return cx, cy, (lambda p: np.stack([poly_terms(p) @ cx, poly_terms(p) @ cy], axis=-1))


def test_cubic_recovered_exactly(rng):
    _, _, f = _cubic(rng)
    observed = rng.uniform(-200, 200, size=(20, 2))
    c = fit_poly3(observed, f(observed))
    assert c.degree == 3 and not c.regularized
    assert c.residual < 1e-6
    fresh = rng.uniform(-200, 200, size=(20, 2))
    np.testing.assert_allclose(apply_poly3(c, fresh), f(fresh), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("k,degree", [(1, 0), (2, 0), (3, 1), (5, 1), (6, 2), (9, 2), (10, 3)])
def test_degree_ladder(rng, k, degree):
    observed = rng.uniform(-100, 100, size=(k, 2))
    c = fit_poly3(observed, observed + [1.0, 2.0])
    assert c.degree == degree
    assert np.count_nonzero(c.coef_x[{0: 1, 1: 3, 2: 6, 3: 10}[degree]:]) == 0


def test_single_sample_translation():
    c = fit_poly3([[10.0, 20.0]], [[15.0, 17.0]])
    assert c.degree == 0 and c.residual == 0
    np.testing.assert_allclose(apply_poly3(c, [0.0, 0.0]), [5.0, -3.0])
    np.testing.assert_allclose(apply_poly3(c, [-40.0, 3.0]), [-35.0, 0.0])


def test_identity_fit(rng):
    pts = rng.uniform(-100, 100, size=(15, 2))
    c = fit_poly3(pts, pts)
    assert c.residual < 1e-9
    np.testing.assert_allclose(c.coef_x, 0, atol=1e-9)
    np.testing.assert_allclose(apply_poly3(c, pts), pts, atol=1e-9)


def test_hand_evaluated_cubic():
    # dx = 1 + 2x - y + x^3 ; dy = 3 + xy - y^2 + x y^2
    cx = np.array([1, 2, -1, 0, 0, 0, 1, 0, 0, 0], dtype=float)
    cy = np.array([3, 0, 0, 0, 1, -1, 0, 0, 1, 0], dtype=float)
    # at (1, 2): dx = 1 + 2 - 2 + 1 = 2 ; dy = 3 + 2 - 4 + 4 = 5
    np.testing.assert_allclose(apply_poly3(Poly3Corrector(cx, cy), [1.0, 2.0]), [3.0, 7.0])


def test_degenerate_design_regularized(rng):
    # collinear points: the linear design is rank deficient
    t = rng.uniform(-1, 1, size=4)
    pts = np.stack([t, 2 * t], axis=-1)
    c = fit_poly3(pts, pts + 1)
    assert c.regularized
    assert np.all(np.isfinite(c.coef_x)) and np.all(np.isfinite(c.coef_y))


def test_fit_rejects_bad_input():
    with pytest.raises(InvalidArgumentError):
        fit_poly3(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(InvalidArgumentError):
        Poly3Corrector(np.zeros(9), np.zeros(10))


class _Constant(torch.nn.Module):
    def __init__(self, delta):
        super().__init__()
        self.delta = torch.tensor(delta, dtype=torch.float32)

    def forward(self, q, r):
        return self.delta.expand(q.shape[:-2] + (2,))


def test_differential_predict_examples():
    code = np.ones((1, 3, 2), dtype=np.float32)
    np.testing.assert_allclose(differential_predict(_Constant([0, 0]), code, [[0.1, 0.2]], code[0]), [0.1, 0.2],
                               atol=1e-7)
    np.testing.assert_allclose(differential_predict(_Constant([0.05, -0.1]), code, [[0.1, 0.2]], code[0]),
                               [0.15, 0.1], atol=1e-7)
    two = np.ones((2, 3, 2), dtype=np.float32)
    np.testing.assert_allclose(differential_predict(_Constant([0, 0]), two, [[0.1, 0.1], [0.3, 0.3]], code),
                               [[0.2, 0.2]], atol=1e-7)
    with pytest.raises(InvalidArgumentError):
        differential_predict(_Constant([0, 0]), np.zeros((0, 3, 2)), np.zeros((0, 2)), code[0])


def _pair_data(seed, persons=6, n=80):
    rng = np.random.default_rng(seed)
    codes, angles, ids = [], [], []
    for p in range(persons):
        a = rng.uniform(-0.4, 0.4, size=(n, 2))
        off = rng.uniform(-0.08, 0.08, size=2)
        codes.append(euler_to_rotation(a + off) @ BASE)
        angles.append(a)
        ids.append(np.full(n, p))
    return np.concatenate(codes), np.concatenate(angles), np.concatenate(ids)


@pytest.fixture(scope="module")
def trained():
    codes, angles, ids = _pair_data(0)
    cfg = DifferentialConfig(steps=3000, batch_size=128, lr=3e-3)
    return train_differential(codes, angles, ids, cfg, seed=1), cfg


def test_differential_training_and_determinism(trained):
    (net, losses), cfg = trained
    assert losses[-1] < 0.5 * losses[0]
    codes, angles, ids = _pair_data(0)
    short = DifferentialConfig(steps=50, batch_size=16)
    a, _ = train_differential(codes, angles, ids, short, seed=3)
    b, _ = train_differential(codes, angles, ids, short, seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_differential_self_pair_and_antisymmetry(trained):
    (net, _), _ = trained
    codes, angles, _ = _pair_data(7, persons=1, n=200)
    z = torch.as_tensor(codes, dtype=torch.float32)
    with torch.no_grad():
        perm = torch.randperm(len(z), generator=torch.Generator().manual_seed(0))
        ab = net(z, z[perm]).numpy()
        ba = net(z[perm], z).numpy()
        self_pair = net(z, z).numpy()
    pair_err = np.abs(ab - (angles - angles[perm.numpy()])).mean()
    assert np.abs(self_pair).mean() < 3 * pair_err
    assert np.abs(ab + ba).mean() < 0.2 * np.abs(ab).mean()


def test_differential_needs_pairs():
    with pytest.raises(InvalidArgumentError):
        train_differential(np.zeros((2, 3, 2)), np.zeros((2, 2)), [0, 1])
