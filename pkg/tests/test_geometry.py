import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwlab.geometry import BoundaryInterval, DiscreteDirichletProblem, DomainError, \
    as_interval, conformal_radius, excursion_kernel, green_h, harmonic_measure_h, mobius_h, \
    partition_chordal, partition_dipolar, solve_discrete_dirichlet, spd_solve, \
    assemble_operator

bulk = st.builds(complex, st.floats(-5, 5), st.floats(0.05, 5))
real = st.floats(-5, 5)


# --- frozen values -------------------------------------------------------------

def test_green_frozen():
    assert green_h(1j, 2j) == pytest.approx(np.log(3) / np.pi, rel=1e-14)


def test_excursion_kernel_frozen():
    assert excursion_kernel(0.0, 1j) == pytest.approx(2 / np.pi, rel=1e-14)


def test_harmonic_measure_frozen():
    assert harmonic_measure_h(1j, (-1, 1)) == pytest.approx(0.5, rel=1e-14)
    assert harmonic_measure_h(1j, (0, 1e9)) == pytest.approx(0.5, rel=1e-8)


def test_partition_functions_frozen():
    assert partition_dipolar(0.0, (1, 3)) == pytest.approx(2 / 3 / np.pi)
    assert partition_chordal(0.0, 1.0) == pytest.approx(2 / np.pi)


def test_conformal_radius_identity():
    assert conformal_radius(3j, 3j, 1.0) == pytest.approx(6.0)


# --- properties ------------------------------------------------------------------

@given(bulk, bulk)
def test_green_symmetric_and_positive(z, w):
    if abs(z - w) < 1e-6:
        return
    assert green_h(z, w) == pytest.approx(green_h(w, z), rel=1e-12)
    assert green_h(z, w) > 0


@given(bulk, bulk)
def test_green_laplacian_vanishes_off_diagonal(z, w):
    h = 1e-3
    if abs(z - w) < 0.2 or z.imag < 0.1:
        return
    lap = sum(green_h(z + d, w) for d in (h, -h, 1j * h, -1j * h)) - 4 * green_h(z, w)
    assert abs(lap / h ** 2) < 1e-3 * (1 + abs(green_h(z, w)) / abs(z - w) ** 2)


@given(bulk, real)
def test_excursion_kernel_is_normal_derivative_of_green(z, x):
    # K(x, z) = lim (1/eps) * 2 G(z, x + i eps) as eps -> 0, with G ~ 2 y eps / (pi |z-x|^2)
    if abs(z - x) < 0.1:
        return
    eps = 1e-6
    approx = green_h(z, x + 1j * eps) / eps
    assert approx == pytest.approx(excursion_kernel(x, z), rel=1e-4)


@given(bulk, real, st.floats(0.01, 3), st.floats(0.01, 3))
def test_harmonic_measure_additive(z, a, l1, l2):
    whole = harmonic_measure_h(z, (a, a + l1 + l2))
    parts = harmonic_measure_h(z, (a, a + l1)) + harmonic_measure_h(z, (a + l1, a + l1 + l2))
    assert whole == pytest.approx(parts, abs=1e-12)
    assert 0 <= whole <= 1


@given(bulk, bulk, st.floats(0.2, 3), st.floats(-2, 2))
def test_green_mobius_invariant(z, w, a, b):
    # z -> a z + b and z -> -1/z preserve H; G is conformally invariant
    if abs(z - w) < 1e-3:
        return
    g = green_h(z, w)
    assert green_h(mobius_h(z, a, b, 0, 1), mobius_h(w, a, b, 0, 1)) == pytest.approx(g, rel=1e-9)
    assert green_h(mobius_h(z, 0, -1, 1, 0), mobius_h(w, 0, -1, 1, 0)) == pytest.approx(g, rel=1e-9)


@pytest.mark.parametrize("fn,args", [
    (green_h, (1j, 1j)),
    (green_h, (1.0 + 0j, 1j)),
    (excursion_kernel, (0.0, 0j)),
    (harmonic_measure_h, (-1j, (0, 1))),
    (partition_dipolar, (2.0, (1, 3))),
    (partition_chordal, (1.0, 1.0)),
])
def test_domain_errors(fn, args):
    with pytest.raises(DomainError):
        fn(*args)


def test_interval_validation():
    with pytest.raises(ValueError):
        BoundaryInterval(1.0, 1.0)
    assert tuple(as_interval([0, 2])) == (0.0, 2.0)
    assert as_interval((0, 2)).length == 2


# --- discrete Dirichlet solver ------------------------------------------------------

def _box(n):
    vals = np.zeros((n + 1, n + 1))
    interior = np.zeros_like(vals, dtype=bool)
    interior[1:n, 1:n] = True
    return vals, interior


def test_discrete_solver_reproduces_linear_functions():
    n = 20
    vals, interior = _box(n)
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    exact = 0.3 * i - 0.7 * j + 2 + 0.01 * (i * i - j * j)   # discrete harmonic
    vals[~interior] = exact[~interior]
    u = solve_discrete_dirichlet(DiscreteDirichletProblem(vals, interior))
    np.testing.assert_allclose(u, exact, atol=1e-9)


def test_discrete_solver_with_killing_matches_dense():
    n = 12
    vals, interior = _box(n)
    vals[0, :] = 1.0
    kill = np.full(vals.shape, 0.05)
    u = solve_discrete_dirichlet(DiscreteDirichletProblem(vals, interior, kill))
    A, idx = assemble_operator(interior, kill)
    from lerwlab.geometry import boundary_rhs
    b = boundary_rhs(vals, interior, idx)
    np.testing.assert_allclose(u[interior], np.linalg.solve(A.toarray(), b), atol=1e-9)
    # killing lowers the solution below the harmonic one
    h = solve_discrete_dirichlet(DiscreteDirichletProblem(vals, interior))
    assert np.all(u[interior] < h[interior])


def test_discrete_problem_validation():
    vals, interior = _box(4)
    bad = interior.copy()
    bad[0, 2] = True
    with pytest.raises(ValueError):
        DiscreteDirichletProblem(vals, bad)
    v2 = vals.copy()
    v2[0, 0] = np.nan
    with pytest.raises(ValueError):
        DiscreteDirichletProblem(v2, interior)


def test_spd_solve_multiple_rhs():
    _, interior = _box(10)
    A, _ = assemble_operator(interior)
    rhs = np.random.default_rng(0).normal(size=(A.shape[0], 3))
    x = spd_solve(A, rhs)
    np.testing.assert_allclose(A @ x, rhs, atol=1e-8)
