import numpy as np
import pytest

from odecheck import registry


def test_keys_are_the_four_systems():
    assert registry.keys() == ["study1", "fhn", "lotka-volterra", "tcell"]


@pytest.mark.parametrize(
    "key, theta",
    [
        ("study1", [-0.06, -0.24]),
        ("fhn", [3.0, 0.2, 0.34]),
        ("lotka-volterra", [1.0, -1.5, -1.5, 2.0]),
    ],
)
def test_true_parameters(key, theta):
    entry = registry.get(key)
    np.testing.assert_array_equal(entry.theta0, theta)
    assert entry.tau == 10.0
    lo, hi = entry.model.theta_bounds.T
    assert np.all(lo <= entry.theta0) and np.all(entry.theta0 <= hi)


def test_aliases_and_unknown_key():
    assert registry.get("LV").key == "lotka-volterra"
    assert registry.get("fitzhugh-nagumo").key == "fhn"
    assert registry.study_key(3) == "lotka-volterra"
    with pytest.raises(KeyError):
        registry.get("nope")


def test_null_switches_off_disturbances():
    entry = registry.get("study1")
    assert entry.null_model().consts[1:3].tolist() == [0.0, 0.0]
    assert entry.truth(1.0, 0.5, "H12").consts.tolist() == [10.0, 1.0, 0.5, 2.0]


@pytest.mark.parametrize(
    "variant, d1, d2",
    [
        ("H11", lambda u: 0.4 * np.cos(u), lambda u: 0.4 * np.cos(u)),
        ("H12", lambda u: 0.1 * u**3, lambda u: 0.1 * u**3),
        ("H13", lambda u: 2.0 * np.exp(u), lambda u: 5.0 * np.exp(u)),
    ],
)
def test_linear_disturbances(variant, d1, d2):
    model = registry.get("study1").truth(1.0, 1.0, variant)
    x = np.array([0.7, -1.3])
    theta = np.array([-0.06, -0.24])
    u1 = theta[0] * x[0]
    u2 = theta[0] * x[0] + theta[1] * x[1]
    expect = 10.0 * np.array([u1 + d1(u1), u2 + d2(u2)])
    np.testing.assert_allclose(model.f(0.0, x, theta), expect, rtol=1e-14)


def test_lv_and_fhn_disturbances():
    x = np.array([1.2, 0.8])
    lv = registry.get("lv").truth(0.0, 1.0)
    th = np.array([1.0, -1.5, -1.5, 2.0])
    expect = 10 * np.array([x[0] - 1.5 * x[0] * x[1], -1.5 * x[1] + 2 * x[0] * x[1] + 4.0 * x[0]])
    np.testing.assert_allclose(lv.f(0.0, x, th), expect, rtol=1e-14)
    fhn = registry.get("fhn").truth(1.0, 0.0)
    th = np.array([3.0, 0.2, 0.34])
    v, r = x
    expect = 10 * np.array([3 * (v + r - v**3 / 3) + v * r, -(v + 0.2 * r - 0.34) / 3])
    np.testing.assert_allclose(fhn.f(0.0, x, th), expect, rtol=1e-14)


def test_tcell_forcing_delay_and_shape():
    entry = registry.get("tcell")
    model = entry.model
    assert model.p == 3 and model.q == 5
    assert model.consts[4] == pytest.approx(0.308)
    tf, vf = registry.load_forcing(registry.DATA_DIR / "tcell_forcing.csv")
    x = np.array([8.0, 9.0, 7.0])
    out = model.f(0.5, x, entry.theta0)
    d = np.interp(0.5 - 0.308, tf, vf)
    rho_m, gamma_ms = entry.theta0[0], entry.theta0[3]
    # delta_m and gamma_ml are fixed at zero
    assert out[0] == pytest.approx(10 * (rho_m * d - gamma_ms), rel=1e-12)


def test_default_gm_gain():
    assert registry.default_gm_c("study1-H12") == 1.0
    assert registry.default_gm_c("fhn") == 0.2
