import numpy as np
import pytest

from hypertax import geometry as geo

CURVATURES = [0.1, 1.0, 2.0, 5.0, 10.0]


def random_ball_points(rng, n, dim, c, radius=0.9):
    """Points with norm uniformly below radius * max ball norm."""
    direction = rng.normal(size=(n, dim))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    scale = rng.uniform(0.0, radius, size=(n, 1)) / np.sqrt(c)
    return direction * scale


def test_mobius_left_identity_and_inverse():
    rng = np.random.default_rng(10)
    for c in CURVATURES:
        v = random_ball_points(rng, 50, 4, c)
        zero = np.zeros_like(v)
        assert np.allclose(geo.mobius_add(zero, v, c), v, atol=1e-12)
        assert np.max(np.abs(geo.mobius_add(-v, v, c))) < 1e-12


def test_mobius_euclidean_limit():
    rng = np.random.default_rng(11)
    c = 1e-9
    v = rng.uniform(-0.5, 0.5, size=(200, 3))
    w = rng.uniform(-0.5, 0.5, size=(200, 3))
    got = geo.mobius_add(v, w, c)
    assert np.max(np.abs(got - (v + w))) < 1e-6
    # single hand case from the Euclidean-limit reading
    out = geo.mobius_add(np.array([0.1, 0.0]), np.array([0.2, 0.0]), c)
    assert np.allclose(out, [0.3, 0.0], atol=1e-6)


def test_exp0_fixed_values():
    assert np.array_equal(geo.exp0(np.zeros(3), 1.0), np.zeros(3))
    out = geo.exp0(np.array([1.0, 0.0]), 1.0)
    assert abs(out[0] - np.tanh(1.0)) < 1e-15
    assert out[1] == 0.0


def test_exp0_norm_identity():
    rng = np.random.default_rng(12)
    for c in CURVATURES:
        e = rng.normal(size=(100, 5)) * rng.uniform(0, 3 / np.sqrt(c))
        norms = np.linalg.norm(geo.exp0(e, c), axis=-1)
        expected = np.tanh(np.sqrt(c) * np.linalg.norm(e, axis=-1)) / np.sqrt(c)
        assert np.allclose(norms, expected, atol=1e-12)


def test_exp0_log0_roundtrip():
    rng = np.random.default_rng(13)
    for c in CURVATURES:
        e = rng.normal(size=(200, 6))
        e *= rng.uniform(0, 3, size=(200, 1)) / np.linalg.norm(e, axis=-1, keepdims=True)
        back = geo.log0(geo.exp0(e, c), c)
        assert np.max(np.abs(back - e)) < 1e-9
        h = random_ball_points(rng, 200, 6, c)
        again = geo.exp0(geo.log0(h, c), c)
        assert np.max(np.abs(again - h)) < 1e-9


def test_log0_fixed_values():
    assert np.array_equal(geo.log0(np.zeros(2), 1.0), np.zeros(2))
    out = geo.log0(np.array([0.761594, 0.0]), 1.0)
    assert abs(out[0] - 1.0) < 1e-5
    with pytest.raises(ValueError):
        geo.log0(np.array([1.0, 0.0]), 1.0)


def test_conformal_factor():
    assert geo.conformal_factor(np.zeros(3), 1.0) == 2.0
    x = np.array([np.sqrt(0.5), 0.0])
    assert abs(geo.conformal_factor(x, 1.0) - 4.0) < 1e-12
    # monotone in the norm
    norms = np.linspace(0, 0.9, 30)
    lam = [geo.conformal_factor(np.array([r, 0.0]), 1.0) for r in norms]
    assert np.all(np.diff(lam) > 0)
    assert min(lam) >= 2.0
    with pytest.raises(ValueError):
        geo.conformal_factor(np.array([1.0, 0.0]), 1.0)


def test_signed_distance_zero_on_own_hyperplane():
    rng = np.random.default_rng(14)
    for c in CURVATURES:
        o = random_ball_points(rng, 20, 4, c)
        r = rng.normal(size=(20, 4))
        zeta = geo.signed_distance(o, o, r, c)
        assert np.max(np.abs(zeta)) < 1e-9


def test_signed_distance_odd_and_homogeneous_in_r():
    rng = np.random.default_rng(15)
    for c in CURVATURES:
        h = random_ball_points(rng, 50, 4, c)
        o = random_ball_points(rng, 50, 4, c)
        r = rng.normal(size=(50, 4))
        z = geo.signed_distance(h, o, r, c)
        assert np.allclose(geo.signed_distance(h, o, -r, c), -z, atol=1e-12)
        assert np.allclose(geo.signed_distance(h, o, 2.0 * r, c), 2.0 * z,
                           rtol=1e-12, atol=1e-12)


def test_signed_distance_rejects_degenerate_orientation():
    with pytest.raises(ValueError):
        geo.signed_distance(np.zeros(3), np.zeros(3), np.zeros(3), 1.0)


def test_project_to_ball():
    c = 1.0
    inside = np.array([0.3, 0.1])
    assert np.array_equal(geo.project_to_ball(inside, c), inside)
    out = geo.project_to_ball(np.array([2.0, 0.0]), c)
    assert np.allclose(out, [1.0 - geo.EPS_BALL, 0.0])
    twice = geo.project_to_ball(out, c)
    assert np.array_equal(twice, out)


def test_closure_under_operations():
    rng = np.random.default_rng(16)
    for c in CURVATURES:
        v = random_ball_points(rng, 300, 3, c, radius=1.0 - 1e-9)
        w = random_ball_points(rng, 300, 3, c, radius=1.0 - 1e-9)
        for result in (geo.mobius_add(v, w, c),
                       geo.exp0(rng.normal(size=(300, 3)) * 5, c),
                       geo.project_to_ball(rng.normal(size=(300, 3)) * 10, c)):
            assert np.all(c * np.sum(result * result, axis=-1) < 1.0)


def test_kernels_stay_finite_near_boundary():
    rng = np.random.default_rng(17)
    for c in CURVATURES:
        shell = geo.project_to_ball(rng.normal(size=(100, 4)) * 100, c)
        o = random_ball_points(rng, 100, 4, c, radius=0.999)
        r = rng.normal(size=(100, 4))
        for value in (geo.signed_distance(shell, o, r, c),
                      geo.conformal_factor(shell, c),
                      geo.log0(shell, c),
                      geo.mobius_add(shell, o, c)):
            assert np.all(np.isfinite(value))


def test_non_finite_inputs_rejected():
    bad = np.array([np.nan, 0.0])
    with pytest.raises(ValueError):
        geo.exp0(bad, 1.0)
    with pytest.raises(ValueError):
        geo.mobius_add(bad, np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        geo.project_to_ball(np.array([np.inf, 0.0]), 1.0)
