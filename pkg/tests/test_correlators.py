import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.integrate import quad

from lerwlab.correlators import CorrelatorSpec, DiagramTerm, bulk_correlator, \
    connected_correlator, connected_correlator_bruteforce, correlator_recursion_check, \
    count_terms, cumulant_factorization_check, diagram_terms, endpoint_density, vacuum, \
    wick_sum, wick_sum_permutations
from lerwlab.geometry import DomainError, excursion_kernel, green_h, harmonic_measure_h, \
    partition_chordal, partition_dipolar

bulk = st.builds(complex, st.floats(-3, 5), st.floats(0.1, 3))
GENERIC = [0.3 + 0.7j, 1.4 + 0.4j, 2.2 + 1.1j, -0.6 + 0.9j]


def _separated(pts, d=0.05):
    return all(abs(a - b) > d for i, a in enumerate(pts) for b in pts[:i])


@pytest.mark.parametrize("terminal", [(1.0, 3.0), 2.0])
def test_zero_point_function_is_partition(terminal):
    s = CorrelatorSpec(0.0, terminal)
    ref = partition_chordal(0, 2.0) if s.chordal else partition_dipolar(0, (1, 3))
    assert connected_correlator(s) == ref


def test_one_point_function_closed_form():
    z = 1 + 1j
    s = CorrelatorSpec(0.0, (1, 3), [z])
    ref = excursion_kernel(0, z) * harmonic_measure_h(z, (1, 3))
    assert connected_correlator(s) == pytest.approx(ref)


@given(st.lists(bulk, min_size=1, max_size=5), st.sampled_from([(1.0, 3.0), 2.5]))
def test_dynamic_programme_matches_permutation_sum(pts, terminal):
    assume(_separated(pts))
    s = CorrelatorSpec(0.0, terminal, pts)
    assert connected_correlator(s) == pytest.approx(connected_correlator_bruteforce(s), rel=1e-12)


@given(st.lists(bulk, min_size=2, max_size=4))
def test_connected_correlator_symmetric(pts):
    assume(_separated(pts))
    s = CorrelatorSpec(0.0, (1.0, 3.0), pts)
    assert connected_correlator(s) == pytest.approx(
        connected_correlator(s.with_insertions(pts[::-1])), rel=1e-12)


def test_bulk_correlator_reduces_to_boundary_one():
    # G(w, z) / Im w -> K(x0, z) as w -> x0
    s = CorrelatorSpec(0.0, (1.0, 3.0), GENERIC[:2])
    eps = 1e-6
    assert bulk_correlator(1j * eps, s) / eps == pytest.approx(connected_correlator(s), rel=1e-4)


@pytest.mark.parametrize("n", [0, 1, 2, 3])
def test_bulk_correlator_harmonic_away_from_insertions(n):
    s = CorrelatorSpec(0.0, (1.0, 3.0), GENERIC[:n])
    probes = [0.8 + 1.8j, 2.9 + 0.6j, -1.5 + 1.0j]
    worst, used = correlator_recursion_check(s, probes, 1e-3)
    assert used == 3
    assert worst < 1e-4


def test_bulk_correlator_jump_at_insertion():
    # flux of C(.; z) around z recovers the insertion-free bulk function H(z; I)
    z = 1.2 + 0.8j
    s = CorrelatorSpec(0.0, (1.0, 3.0), [z])
    r = 0.05
    th = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    flux = 0.0
    h = 1e-5
    for t in th:
        e = np.exp(1j * t)
        w = z + r * e
        d = (bulk_correlator(w + h * e, s) - bulk_correlator(w - h * e, s)) / (2 * h)
        flux += d * r * (2 * np.pi / len(th))
    assert -flux / 2 == pytest.approx(harmonic_measure_h(z, (1, 3)), rel=1e-2)


def test_spec_validation():
    with pytest.raises(DomainError):
        CorrelatorSpec(2.0, (1.0, 3.0))
    with pytest.raises(DomainError):
        CorrelatorSpec(0.0, 0.0)
    with pytest.raises(DomainError):
        CorrelatorSpec(0.0, (1, 3), [1 - 1j])
    with pytest.raises(DomainError):
        CorrelatorSpec(0.0, (1, 3), [1j, 1j])


# --- end-point density --------------------------------------------------------------

def test_endpoint_density_frozen():
    assert endpoint_density(0.0, (1, 2), 1.5) == pytest.approx(8 / 9, rel=1e-14)


@given(st.floats(-5, 5), st.floats(0.05, 4), st.floats(0.1, 5), st.booleans(),
       st.floats(0.01, 0.99))
def test_endpoint_density_ratio_identity(a, length, gap, left, frac):
    b = a + length
    x0 = a - gap if left else b + gap
    x = a + frac * length
    lhs = endpoint_density(x0, (a, b), x)
    rhs = 0.5 * partition_chordal(x0, x) / partition_dipolar(x0, (a, b))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("x0,iv", [(0.0, (1, 3)), (5.0, (-1, 2)), (0.0, (0.01, 10))])
def test_endpoint_density_normalised(x0, iv):
    total, _ = quad(lambda x: endpoint_density(x0, iv, x), *iv, epsabs=1e-13, epsrel=1e-13)
    assert total == pytest.approx(1.0, abs=1e-10)


# --- diagram sums ---------------------------------------------------------------------

@pytest.mark.parametrize("n,count", [(0, 1), (1, 1), (2, 3), (3, 11), (4, 53)])
def test_term_count(n, count):
    # D(n+1) + D(n) with D the derangement numbers
    assert count_terms(n) == count


def test_diagram_term_validation():
    with pytest.raises(ValueError):
        DiagramTerm((0,), ((0, 1),))
    with pytest.raises(ValueError):
        DiagramTerm((), ((0,),))


@pytest.mark.parametrize("sign", [1, -1])
@pytest.mark.parametrize("terminal", [(1.0, 3.0), 2.0])
@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_two_enumerators_agree(sign, terminal, n):
    s = CorrelatorSpec(0.0, terminal, GENERIC[:n])
    assert wick_sum(s, sign) == pytest.approx(wick_sum_permutations(s, sign), rel=1e-12)


@pytest.mark.parametrize("sign", [1, -1])
@pytest.mark.parametrize("n", [2, 3])
def test_cumulant_factorisation(sign, n):
    s = CorrelatorSpec(0.0, (1.0, 3.0), GENERIC[:n])
    assert cumulant_factorization_check(s, loop_sign=sign) < 1e-10


def test_two_point_diagram_sum_by_hand():
    z1, z2 = GENERIC[:2]
    s = CorrelatorSpec(0.0, (1.0, 3.0), [z1, z2])
    g = green_h(z1, z2)
    loops = partition_dipolar(0, (1, 3)) * g * g
    for sign in (1, -1):
        assert wick_sum(s, sign) == pytest.approx(connected_correlator(s) + sign * loops, rel=1e-13)


def test_vacuum_two_and_three_points():
    z = GENERIC[:3]
    g = lambda a, b: green_h(z[a], z[b])
    assert vacuum(z[:2]) == pytest.approx(g(0, 1) ** 2)
    assert vacuum(z[:1]) == 0.0
    assert vacuum([]) == 1.0
    assert vacuum(z, -1) == pytest.approx(-2 * g(0, 1) * g(1, 2) * g(2, 0))


def test_diagram_terms_cover_every_index():
    for t in diagram_terms(4):
        used = sorted(list(t.chain) + [i for c in t.cycles for i in c])
        assert used == [0, 1, 2, 3]
