import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwlab.lattice import LatticeDomain, cell_windows, estimate_hitting_ratio, \
    estimate_local_time_moment, estimate_partition_ratio, exact_local_time_moment, is_simple, \
    loop_erase, loop_erase_array, loop_erase_chronological, run_rb_moments, run_walks, \
    sample_chordal_lerw, sample_walk
from lerwlab.nu import NuField

steps = st.lists(st.sampled_from([(1, 0), (-1, 0), (0, 1), (0, -1)]), min_size=0, max_size=300)


def _path(moves):
    p = [(0, 0)]
    for dx, dy in moves:
        p.append((p[-1][0] + dx, p[-1][1] + dy))
    return p


@pytest.fixture(scope="module")
def small():
    return LatticeDomain(1 / 16, -3, 3, 3, (0.5, 1.0))


# --- loop erasure -------------------------------------------------------------------

@given(steps)
def test_loop_erasure_invariants(moves):
    p = _path(moves)
    le = loop_erase(p)
    assert le.sites[0] == p[0] and le.sites[-1] == p[-1]
    assert is_simple(le.sites)
    assert set(le.sites) <= set(p)
    for a, b in zip(le.sites[:-1], le.sites[1:]):
        assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


@given(steps)
def test_loop_erasure_constructions_agree(moves):
    p = _path(moves)
    a = loop_erase(p).sites
    b = loop_erase_chronological(p).sites
    arr = np.array(p, dtype=np.int64)
    c = [tuple(int(v) for v in s) for s in loop_erase_array(arr, -310, -310, 621, 621)]
    assert a == b == c


def test_loop_erasure_examples():
    assert loop_erase([0, 1, 2, 1, 2, 3]).sites == [0, 1, 2, 3]
    assert loop_erase([0, 1, 0, 1]).sites == [0, 1]
    assert loop_erase([(0, 0)]).sites == [(0, 0)]
    with pytest.raises(ValueError):
        loop_erase([0, 2])
    with pytest.raises(ValueError):
        loop_erase([])


def test_chordal_lerw_is_simple_and_starts_on_axis():
    for s in range(5):
        p = sample_chordal_lerw(40, 1, s)
        assert tuple(p[0]) == (0, 0) and tuple(p[1]) == (0, 1)
        assert is_simple([tuple(v) for v in p])
        assert np.all(p[1:, 1] > 0)
        assert p[-1, 0] ** 2 + p[-1, 1] ** 2 >= 40 ** 2


# --- domain -----------------------------------------------------------------------------

def test_domain_validation():
    with pytest.raises(ValueError):
        LatticeDomain(0.1, -1.05, 1, 1, (0.2, 0.4))
    with pytest.raises(ValueError):
        LatticeDomain(0.25, -1, 1, 1, (0.5, 2.0))


@given(st.floats(-2.5, 2.0), st.floats(0.01, 0.3), st.floats(0.01, 0.3))
def test_target_weights_additive(lo, l1, l2):
    d = LatticeDomain(1 / 16, -3, 3, 3, (lo, lo + l1 + l2))
    w = d.target_weights()
    w1 = d.target_weights((lo, lo + l1))
    w2 = d.target_weights((lo + l1, lo + l1 + l2))
    np.testing.assert_allclose(w, w1 + w2, atol=1e-12)
    assert w.sum() * d.mesh == pytest.approx(l1 + l2, abs=1e-9)


def test_cell_windows_sum_to_area(small):
    org, w = cell_windows(small, [0.5 + 0.5j, 1.03 + 0.71j], side=4)
    np.testing.assert_allclose(w.sum(axis=(1, 2)), 16.0)
    with pytest.raises(ValueError):
        cell_windows(small, [0.5 + 0.5j, 0.52 + 0.5j])
    with pytest.raises(ValueError):
        cell_windows(small, [0.5 + 0.05j])


# --- walks ----------------------------------------------------------------------------

def test_sample_walk_reproducible_and_exits(small):
    a = sample_walk(small, (20, 3), 5, seed=2)
    b = sample_walk(small, (20, 3), 5, seed=2)
    np.testing.assert_array_equal(a.path, b.path)
    assert not small.is_interior(*a.exit_site)
    assert sum(a.local_time.values()) == a.length
    assert a.weight == 1.0


def test_run_walks_matches_single_walk_streams(small):
    b = run_walks(small, (20, 3), 30, seed=4)
    for k in (0, 7, 29):
        w = sample_walk(small, (20, 3), k, seed=4)
        assert (b.exit_i[k], b.exit_j[k]) == w.exit_site
        assert b.steps[k] == w.length


def test_run_walks_independent_of_workers(small):
    a = run_walks(small, small.start_site(0.0), 4000, seed=1, workers=1)
    b = run_walks(small, small.start_site(0.0), 4000, seed=1, workers=4)
    np.testing.assert_array_equal(a.exit_i, b.exit_i)
    np.testing.assert_array_equal(a.weight, b.weight)


def test_walk_weight_is_killing_factor(small):
    d = small.with_nu(NuField.constant(2.0))
    w = sample_walk(d, (20, 3), 1, seed=3)
    assert w.weight == pytest.approx(np.exp(-2.0 * d.step_time * w.length))


@pytest.mark.parametrize("nu", [None, NuField.disk(0.5 + 0.6j, 0.3, 2.0)])
def test_mc_exit_probability_matches_exact_lattice(small, nu):
    d = small if nu is None else small.with_nu(nu)
    start = d.start_site(0.0)
    exact = d.harmonic_measure()[start]
    est = estimate_partition_ratio(d, start, None, 200_000, seed=7)
    assert abs(est.value - exact) < 4 * est.std_error


def test_hitting_ratio_of_full_interval_is_one(small):
    est = estimate_hitting_ratio(small, small.start_site(0.0), small.target, 2000, seed=1)
    assert est.value == 1.0


@pytest.mark.parametrize("cells", [[0.5 + 0.5j], [0.5 + 0.5j, 0.25 + 0.75j]])
def test_local_time_moments_match_exact_lattice(small, cells):
    start = small.start_site(0.0)
    exact = exact_local_time_moment(small, start, cells)
    vals, _ = run_rb_moments(small, start, cells, 200_000, seed=3)
    x = vals[:, 0]
    assert abs(x.mean() - exact) < 4 * x.std() / np.sqrt(len(x))


def test_plain_and_rao_blackwell_estimators_agree(small):
    start = small.start_site(0.0)
    cells = [0.5 + 0.5j]
    exact = exact_local_time_moment(small, start, cells)
    plain = estimate_local_time_moment(small, start, cells, None, 200_000, seed=5)
    assert abs(plain.value - exact) < 4 * plain.std_error


def test_splitting_and_roulette_unbiased(small):
    start = small.start_site(0.0)
    cells = [0.5 + 0.5j]
    exact = exact_local_time_moment(small, start, cells)
    vals, _ = run_rb_moments(small, start, cells, 100_000, seed=9, roulette=1.0,
                             split_radii=(2 / 16, 4 / 16))
    x = vals[:, 0]
    assert abs(x.mean() - exact) < 4 * x.std() / np.sqrt(len(x))


def test_exact_moment_with_killing_below_critical(small):
    start = small.start_site(0.0)
    cells = [0.5 + 0.5j]
    a = exact_local_time_moment(small, start, cells)
    b = exact_local_time_moment(small.with_nu(NuField.constant(1.0)), start, cells)
    assert 0 < b < a


def test_start_must_be_interior(small):
    with pytest.raises(ValueError):
        run_walks(small, (0, 0), 10, seed=0)
