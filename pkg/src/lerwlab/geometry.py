"""Half-plane kernels and the discrete Dirichlet solver used as their lattice oracle.

All closed forms take complex bulk points ``z`` with ``z.imag > 0`` and real
boundary points. The Green's function is normalised by
``Laplacian_z G(z, w) = -2 delta(z - w)``, i.e. it is the occupation density of
standard planar Brownian motion (generator ``Laplacian / 2``) killed on the
real axis.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

COINCIDENT = 1e-12


class DomainError(ValueError):
    """Argument outside the domain of a kernel (coincident or non-bulk points)."""


@dataclass(frozen=True)
class BoundaryInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def length(self):
        return self.hi - self.lo

    def contains(self, x):
        return self.lo <= x <= self.hi

    def __iter__(self):
        yield self.lo
        yield self.hi


def as_interval(s):
    if isinstance(s, BoundaryInterval):
        return s
    lo, hi = s
    return BoundaryInterval(float(lo), float(hi))


def _bulk(z):
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise DomainError("bulk point must have positive imaginary part")
    return z


def green_h(z, w):
    """Dirichlet Green's function of the upper half-plane, ``-(1/pi) log|z-w|/|z-conj(w)|``.

    Vectorised over broadcastable ``z`` and ``w``.
    """
    z = _bulk(z)
    w = _bulk(w)
    d = np.abs(z - w)
    if np.any(d < COINCIDENT):
        raise DomainError("coincident points in green_h")
    return -np.log(d / np.abs(z - np.conj(w))) / np.pi


def excursion_kernel(x0, z):
    """Boundary-to-bulk excursion kernel ``K(x0, z) = -(2/pi) Im 1/(z - x0)``."""
    z = np.asarray(z, dtype=complex)
    d = z - x0
    if np.any(np.abs(d) < COINCIDENT):
        raise DomainError("z coincides with boundary point")
    if np.any(z.imag < 0):
        raise DomainError("z below the real axis")
    return -2.0 / np.pi * np.imag(1.0 / d)


def harmonic_measure_h(z, s):
    """Harmonic measure of the boundary interval ``s`` seen from ``z``.

    ``(1/pi) (arg(z - hi) - arg(z - lo))``, each argument taken with atan2 so
    the expression is continuous in the open half-plane.
    """
    lo, hi = as_interval(s)
    z = _bulk(z)
    a_hi = np.arctan2(z.imag, z.real - hi)
    a_lo = np.arctan2(z.imag, z.real - lo)
    return (a_hi - a_lo) / np.pi


def conformal_radius(z, g_of_z, gprime_of_z):
    """Conformal radius ``2 Im g(z) / |g'(z)|`` of ``z`` in the domain mapped out by ``g``.

    ``z`` is accepted for signature symmetry; only the map values enter.
    """
    g = np.asarray(g_of_z, dtype=complex)
    gp = np.abs(np.asarray(gprime_of_z, dtype=complex))
    if np.any(gp == 0):
        raise DomainError("zero derivative")
    if np.any(g.imag <= 0):
        raise DomainError("image must lie in the upper half-plane")
    return 2.0 * g.imag / gp


def partition_dipolar(x0, s):
    """Critical partition function ``Z0`` from ``x0`` to interval ``s``."""
    lo, hi = as_interval(s)
    if lo <= x0 <= hi:
        raise DomainError("start point inside the target interval")
    return (hi - lo) / ((x0 - hi) * (x0 - lo)) / np.pi


def partition_chordal(x0, x_inf):
    """Critical chordal partition function ``(2/pi) (x_inf - x0)^-2``."""
    if abs(x_inf - x0) < COINCIDENT:
        raise DomainError("coincident boundary points")
    return 2.0 / np.pi / (x_inf - x0) ** 2


def mobius_h(z, a, b, c, d):
    """Apply the real Mobius map ``(a z + b)/(c z + d)`` (``ad - bc > 0``) preserving H."""
    return (a * z + b) / (c * z + d)


# --- discrete Dirichlet problem on a rectangular grid -----------------------

@dataclass
class DiscreteDirichletProblem:
    """Dirichlet data on the sites of an ``(nx+1) x (ny+1)`` rectangular grid.

    ``interior`` marks unknown sites; every other site of ``values`` is a
    boundary value. ``killing`` is an optional per-site rate ``c`` turning the
    equation into ``mean(neighbours) - u = c u`` (zero for the harmonic case).
    """
    values: np.ndarray
    interior: np.ndarray
    killing: np.ndarray = None

    def __post_init__(self):
        if self.values.shape != self.interior.shape:
            raise ValueError("values and interior mask shapes differ")
        if np.any(np.isnan(self.values[~self.interior])):
            raise ValueError("every boundary site needs a value")
        if self.interior[0, :].any() or self.interior[-1, :].any() \
                or self.interior[:, 0].any() or self.interior[:, -1].any():
            raise ValueError("grid frame sites must be boundary sites")


def _check_connected(interior):
    # Every interior component must touch a boundary site.
    from scipy.ndimage import label
    lab, n = label(interior)
    if n == 0:
        return
    touching = np.zeros(n + 1, dtype=bool)
    boundary = ~interior
    for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb_boundary = np.roll(boundary, shift, axis=(0, 1))
        touching[np.unique(lab[interior & nb_boundary])] = True
    if not touching[1:].all():
        raise ValueError("interior component without boundary")


def assemble_operator(interior, killing=None):
    """Sparse matrix of ``(4 + 4c) u - sum(neighbours)`` on interior sites.

    Returns ``(A, index)`` with ``index[i, j]`` the unknown number of site
    ``(i, j)`` or -1.
    """
    idx = -np.ones(interior.shape, dtype=np.int64)
    n = int(interior.sum())
    idx[interior] = np.arange(n)
    diag = np.full(n, 4.0)
    if killing is not None:
        diag += 4.0 * killing[interior]
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [diag]
    ii, jj = np.nonzero(interior)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = idx[ii + di, jj + dj]
        m = nb >= 0
        rows.append(idx[ii[m], jj[m]])
        cols.append(nb[m])
        vals.append(-np.ones(m.sum()))
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return A, idx


def boundary_rhs(values, interior, idx):
    """Right-hand side collecting boundary neighbours of each interior site."""
    n = int(interior.sum())
    b = np.zeros(n)
    ii, jj = np.nonzero(interior)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ii + di, jj + dj
        m = ~interior[ni, nj]
        np.add.at(b, idx[ii[m], jj[m]], values[ni[m], nj[m]])
    return b


def spd_solver(A, tol=1e-12):
    """Return ``solve(rhs)`` for the SPD M-matrix ``A`` (AMG-preconditioned CG).

    The multigrid hierarchy is built once and reused across calls. ``rhs``
    may hold several right-hand sides as columns. Raises ``RuntimeError`` if
    a relative residual exceeds ``tol`` by more than a factor 100.
    """
    import pyamg

    # the hierarchy setup draws a random start vector from numpy's global
    # state; pin it so solutions are reproducible, then restore the caller's
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
    finally:
        np.random.set_state(state)

    def solve(rhs):
        rhs = np.asarray(rhs, dtype=float)
        cols = rhs.reshape(rhs.shape[0], -1)
        out = np.empty_like(cols)
        for k in range(cols.shape[1]):
            b = cols[:, k]
            nb = np.linalg.norm(b)
            if nb == 0:
                out[:, k] = 0.0
                continue
            x = ml.solve(b, tol=tol, accel="cg", maxiter=500)
            res = np.linalg.norm(b - A @ x) / nb
            if res > 100 * tol:
                raise RuntimeError(f"linear solve did not converge: residual {res:.3e}")
            out[:, k] = x
        return out.reshape(rhs.shape)

    return solve


def spd_solve(A, rhs, tol=1e-12):
    """One-shot :func:`spd_solver`."""
    return spd_solver(A, tol)(rhs)


def solve_discrete_dirichlet(p, tol=1e-12):
    """Discrete harmonic (or killed-harmonic) extension of boundary data.

    Returns a full grid array equal to ``p.values`` on boundary sites.
    """
    _check_connected(p.interior)
    A, idx = assemble_operator(p.interior, p.killing)
    b = boundary_rhs(p.values, p.interior, idx)
    u = spd_solve(A, b, tol=tol)
    out = np.array(p.values, dtype=float, copy=True)
    out[p.interior] = u
    return out
