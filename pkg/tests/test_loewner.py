import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwlab.loewner import CurvePolyline, DrivingSample, SelfIntersectionError, \
    _drift_integrand_dipolar, bubble_from_radius, bubble_integral, dipolar_drift_correction, \
    drift_correction_t0, endpoint_histogram, extract_driving, girsanov_drift_estimate, \
    integrate_chain, lerw_kappa_estimate, martingale_N, n_observable, quadrature_observers, \
    quadratic_variation, sample_chordal_sle, sample_dipolar_sle2, sample_sle_ensemble, \
    slit_forward, slit_forward_real, slit_inverse, trace, trace_fast
from lerwlab.correlators import endpoint_density
from lerwlab.nu import NuField

bulk = st.builds(complex, st.floats(-4, 4), st.floats(0.01, 4))


def _brownian(n, t=1.0, seed=0):
    rng = np.random.default_rng(seed)
    times = np.linspace(0, t, n + 1)
    xi = np.concatenate([[0.0], np.cumsum(rng.normal(0, np.sqrt(2 * t / n), n))])
    return DrivingSample(times, xi, 2.0, "chordal", 0.0, None)


# --- slit maps ------------------------------------------------------------------------

@given(bulk, st.floats(-2, 2), st.floats(1e-4, 1.0))
def test_slit_inverse_roundtrip(z, xi, dt):
    w = slit_forward(z, xi, dt)
    assert w.imag >= 0
    assert complex(slit_inverse(w, xi, dt)) == pytest.approx(z, abs=1e-9 * (1 + abs(z)))


@given(st.floats(-2, 2), st.floats(1e-4, 1.0))
def test_slit_tip_maps_to_driving_point(xi, dt):
    tip = xi + 2j * np.sqrt(dt)
    assert complex(slit_forward(tip, xi, dt)) == pytest.approx(xi, abs=1e-6)


def test_slit_hydrodynamic_normalisation():
    z = 1e4 + 3e3j
    dt = 0.3
    assert complex(slit_forward(z, 0.2, dt) - z) * z == pytest.approx(2 * dt, rel=1e-3)


def test_real_points_keep_their_side():
    x = np.array([-1.0, -0.01, 0.01, 1.0])
    y = slit_forward_real(x, 0.0, 0.1)
    assert np.all(np.sign(y) == np.sign(x))
    np.testing.assert_allclose(y, slit_forward(x + 0j, 0.0, 0.1).real)


# --- chain integration ------------------------------------------------------------------

def test_zero_driving_chain_is_exact():
    n = 64
    d = DrivingSample(np.linspace(0, 1, n + 1), np.zeros(n + 1), 2.0, "chordal", 0.0, None)
    z = np.array([0.5 + 1j, -1 + 0.3j, 3j])
    for method in ("slit", "rk"):
        ch = integrate_chain(d, z, boundary=[], method=method, swallow_factor=0)
        r = np.sqrt(z * z + 4.0)
        np.testing.assert_allclose(ch.g[-1], np.where(r.imag < 0, -r, r), atol=1e-7)


def test_rk_agrees_with_slit_on_brownian_driving():
    d = _brownian(2000, seed=3)
    z = np.array([0.5 + 1j, 3 + 0.5j, -2 + 2j])
    a = integrate_chain(d, z, boundary=[], method="slit")
    b = integrate_chain(d, z, boundary=[], method="rk")
    np.testing.assert_allclose(a.g[-1], b.g[-1], atol=1e-6)
    np.testing.assert_allclose(a.gp[-1], b.gp[-1], rtol=1e-5)


def test_chain_validation():
    d = _brownian(10)
    with pytest.raises(ValueError):
        integrate_chain(d, [1 - 1j])
    with pytest.raises(ValueError):
        integrate_chain(d, [1j], boundary=[], method="euler")
    with pytest.raises(ValueError):
        DrivingSample([0, 0.1, 0.1], [0, 0, 0])
    with pytest.raises(ValueError):
        d.restrict(0.123)


def test_swallowed_observer_is_marked():
    d = DrivingSample(np.linspace(0, 1, 101), np.zeros(101), 2.0, "chordal", 0.0, None)
    ch = integrate_chain(d, [0.5j, 5j], boundary=[])
    assert ch.swallowed[0] > 0 and ch.swallowed[1] == -1
    assert np.isnan(ch.g[-1, 0])


# --- zipper ------------------------------------------------------------------------------

def test_vertical_segment_driving():
    h = 0.7
    d = extract_driving([0, 1j * h])
    assert d.times[-1] == pytest.approx(h * h / 4)
    assert d.xi[-1] == pytest.approx(0.0)


def test_zipper_roundtrip():
    d = _brownian(400, t=0.5, seed=1)
    curve = trace_fast(d)
    np.testing.assert_allclose(curve.vertices, trace(d).vertices, atol=1e-10)
    back = extract_driving(curve)
    assert back.times[-1] == pytest.approx(0.5, rel=0.05)
    xi = back(d.times[1:])
    assert np.sqrt(np.mean((xi - d.xi[1:]) ** 2)) < 0.05


def test_self_intersection_rejected():
    loop = [0, 1j, 1 + 1j, 1 + 2j, 0.5 + 2j, 0.5 + 0.5j, 2 + 0.5j]
    with pytest.raises(SelfIntersectionError):
        CurvePolyline(loop).check_simple()
    with pytest.raises(ValueError):
        CurvePolyline([1j, 2j])


# --- SLE sampling ----------------------------------------------------------------------

def test_sle_ensemble_reproducible_per_stream():
    a = sample_sle_ensemble(0.0, (1, 3), 0.2, 1e-3, 5, 6)
    b = sample_sle_ensemble(0.0, (1, 3), 0.2, 1e-3, 5, 3, first_stream=3)
    np.testing.assert_array_equal(a.xi[3:], b.xi)
    d = sample_dipolar_sle2(0.0, (1, 3), 0.2, 1e-3, 5, stream=4)
    assert d.xi[-1] == a.xi[4]


def test_sle_ensemble_validation():
    with pytest.raises(ValueError):
        sample_sle_ensemble(2.0, (1, 3), 1, 1e-3, 0, 1)
    with pytest.raises(ValueError):
        sample_sle_ensemble(0.0, 0.0, 1, 1e-3, 0, 1, variant="chordal")
    with pytest.raises(ValueError):
        sample_sle_ensemble(0.0, (1, 3), 1, 1e-3, 0, 1, variant="radial")


def test_quadratic_variation_rate():
    qv = []
    for s in range(40):
        d = sample_chordal_sle(0.0, 10.0, 0.5, 1e-3, 7, stream=s)
        v, t = quadratic_variation(d)
        qv.append(v / t)
    assert np.mean(qv) == pytest.approx(2.0, abs=5 * np.std(qv) / np.sqrt(len(qv)))


def test_endpoint_histogram_matches_density():
    edges = np.linspace(1, 3, 5)
    h = endpoint_histogram(0.0, (1, 3), edges, 4.0, 1e-3, 2, 300)
    assert h.frequency.sum() == pytest.approx(1.0)
    from scipy.integrate import quad
    ref = [quad(lambda x: endpoint_density(0.0, (1, 3), x), a, b)[0]
           for a, b in zip(edges[:-1], edges[1:])]
    z = (h.frequency - ref) / h.std_error
    assert np.max(np.abs(z)) < 4.5
    with pytest.raises(ValueError):
        endpoint_histogram(0.0, (1, 3), [1, 2], 1, 1e-3, 0, 2)


def test_lerw_kappa_smoke():
    k = lerw_kappa_estimate(20, seed=1, mesh=1 / 32)
    assert k.n_curves == 20 and k.std_error > 0
    assert 1.0 < k.value < 3.0


# --- observables -------------------------------------------------------------------

def test_bubble_quadrature_matches_conformal_radius():
    d = _brownian(500, seed=4)
    z = 0.4 + 1.5j
    ch = integrate_chain(d, [z], boundary=[], swallow_factor=0)
    np.testing.assert_allclose(bubble_integral(ch, z), bubble_from_radius(ch, z),
                               rtol=1e-6, atol=1e-12)
    assert np.all(np.diff(bubble_integral(ch, z)) >= 0)


def test_n_martingale_small_sample():
    z = 1 + 1j
    ens = sample_sle_ensemble(0.0, (1, 3), 0.1, 1e-3, 11, 2000, observers=[z],
                              snapshot_times=[0.1])
    xi, force, _, g, gp = ens.snapshots[0.1]
    n_t = n_observable(g, gp, xi, force)[:, 0]
    n_0 = n_observable(np.array([z]), np.ones(1), 0.0, np.array([1.0, 3.0]))[0]
    assert abs(n_t.mean() - n_0) < 4 * n_t.std() / np.sqrt(len(n_t))


def test_martingale_N_series_starts_at_initial_value():
    d = sample_dipolar_sle2(0.0, (1, 3), 0.05, 1e-3, 3)
    z = 1 + 1j
    ch = integrate_chain(d, [z])
    n = martingale_N(ch, z)
    n_0 = n_observable(np.array([z]), np.ones(1), 0.0, np.array([1.0, 3.0]))[0]
    assert n[0] == pytest.approx(n_0)
    with pytest.raises(KeyError):
        martingale_N(ch, 2 + 2j)


@given(bulk)
def test_dipolar_drift_integrand_mirror_antisymmetry(z):
    # z -> 3 conj(z) / (4 conj(z) - 3) swaps the two force points 1, 3 and fixes 0
    w = np.conj(z)
    f = 3 * w / (4 * w - 3)
    if abs(4 * w - 3) < 1e-3 or abs(z) < 1e-3:
        return
    a = _drift_integrand_dipolar(z, 0.0, 1.0, 3.0)
    b = _drift_integrand_dipolar(f, 0.0, 1.0, 3.0)
    assert b == pytest.approx(-a, rel=1e-8, abs=1e-10)


def test_drift_correction_nodes_match_adaptive_quadrature():
    nu = NuField.disk(2j, 0.5)
    d = DrivingSample([0.0, 1e-9], [0.0, 0.0], 2.0, "dipolar", 0.0, (1.0, 3.0))
    ch = integrate_chain(d, quadrature_observers(nu), swallow_factor=0)
    assert dipolar_drift_correction(ch, nu) == pytest.approx(
        drift_correction_t0(0.0, (1, 3), nu), rel=1e-6)


def test_girsanov_drift_matches_quadrature():
    nu = NuField.disk(2j, 0.5)
    est = girsanov_drift_estimate(0.0, (1, 3), nu, 1e-5, 20_000, seed=2)
    ref = drift_correction_t0(0.0, (1, 3), nu)
    assert abs(est.value - ref) < 4 * est.std_error + 0.02 * abs(ref)
