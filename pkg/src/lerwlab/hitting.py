"""Subinterval hitting probabilities of off-critical LERW in the half-plane.

The end point of the (weighted) walk started at ``x0`` lands in ``sub`` with
probability ``Gamma_sub / Gamma_universe`` evaluated as the start approaches
``x0``, where ``Gamma_S`` solves ``(Laplacian/2 - nu) Gamma = 0`` with boundary
value ``1_S`` on the real axis. Three evaluations are offered: the closed form
at ``nu = 0``, a finite-difference solve and the first-order expansion in the
amplitude of ``nu``.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoundaryInterval, DomainError, as_interval, assemble_operator, \
    boundary_rhs, excursion_kernel, green_h, harmonic_measure_h, partition_dipolar, \
    spd_solver
from .nu import NuField

DEGENERATE = 1e-14


class DegenerateQuery(ValueError):
    """Both hitting functionals vanish at the probe; the ratio is undefined."""


@dataclass(frozen=True)
class HittingQuery:
    x0: float
    universe: BoundaryInterval
    sub: BoundaryInterval
    nu: NuField = field(default_factory=NuField.zero)

    def __post_init__(self):
        u = as_interval(self.universe)
        s = as_interval(self.sub)
        object.__setattr__(self, "universe", u)
        object.__setattr__(self, "sub", s)
        if u.contains(self.x0):
            raise DomainError("x0 lies in the universe interval")
        if s.lo < u.lo or s.hi > u.hi:
            raise ValueError("sub must be contained in universe")

    def with_sub(self, sub):
        return HittingQuery(self.x0, self.universe, sub, self.nu)

    def with_nu(self, nu):
        return HittingQuery(self.x0, self.universe, self.sub, nu)


def critical_hitting_probability(q):
    """Closed-form ``nu = 0`` probability, the ratio of the two partition functions."""
    if not q.nu.is_zero:
        raise ValueError("closed form holds only for nu = 0")
    return partition_dipolar(q.x0, q.sub) / partition_dipolar(q.x0, q.universe)


# --- finite differences -------------------------------------------------------

@dataclass
class GammaGrid:
    """Nodal values of ``Gamma`` on ``[x_lo, x_lo + nx h] x [0, ny h]``."""
    h: float
    x_lo: float
    values: np.ndarray        # (nx + 1, ny + 1)
    target: BoundaryInterval
    residual: float = 0.0

    @property
    def shape(self):
        return self.values.shape

    @property
    def x_hi(self):
        return self.x_lo + (self.values.shape[0] - 1) * self.h

    @property
    def y_hi(self):
        return (self.values.shape[1] - 1) * self.h

    def node(self, z):
        z = complex(z)
        return int(round((z.real - self.x_lo) / self.h)), int(round(z.imag / self.h))

    def coords(self):
        x = self.x_lo + self.h * np.arange(self.values.shape[0])
        y = self.h * np.arange(self.values.shape[1])
        return x, y

    def __call__(self, z):
        """Bilinear interpolation at the points ``z``."""
        z = np.asarray(z, dtype=complex)
        fx = (z.real - self.x_lo) / self.h
        fy = z.imag / self.h
        nx, ny = self.values.shape[0] - 1, self.values.shape[1] - 1
        if np.any((fx < 0) | (fx > nx) | (fy < 0) | (fy > ny)):
            raise ValueError("point outside the grid")
        i = np.clip(np.floor(fx).astype(int), 0, nx - 1)
        j = np.clip(np.floor(fy).astype(int), 0, ny - 1)
        tx, ty = fx - i, fy - j
        v = self.values
        return ((1 - tx) * (1 - ty) * v[i, j] + tx * (1 - ty) * v[i + 1, j]
                + (1 - tx) * ty * v[i, j + 1] + tx * ty * v[i + 1, j + 1])


def default_extent(q, margin=1.0):
    """Truncation box ``(x_lo, x_hi, y_hi)`` around ``x0``, the universe and supp(nu)."""
    xs = [q.x0, q.universe.lo, q.universe.hi]
    ys = [0.0]
    box = q.nu.support_box if not q.nu.is_zero else None
    if q.nu.shape == "constant" and not q.nu.is_zero and box is None:
        raise ValueError("nu without compact support needs an explicit extent")
    if box is not None:
        xs += [box[0], box[1]]
        ys += [box[3]]
    lo, hi = min(xs), max(xs)
    span = max(hi - lo, max(ys))
    return lo - margin * span, hi + margin * span, max(ys) + margin * span


def _grid(q, h, extent):
    x_lo, x_hi, y_hi = default_extent(q) if extent is None else extent
    # align so that x0 is a node
    k_lo = int(np.floor((q.x0 - x_lo) / h))
    k_hi = int(np.ceil((x_hi - q.x0) / h))
    ny = int(np.ceil(y_hi / h))
    return q.x0 - k_lo * h, k_lo + k_hi, ny


def _far_correction(grid, nu, far_pts):
    # Gamma - Gamma_0 = -int G(w, z) nu(z) Gamma(z) d^2z, smooth in w away from supp(nu)
    nodes, wts = nu.quadrature_nodes(24, 48)
    keep = wts > 0
    nodes, wts = nodes[keep], wts[keep]
    src = nu.eps * wts * grid(nodes)
    out = np.empty(len(far_pts))
    for k in range(0, len(far_pts), 2048):
        w = far_pts[k:k + 2048, None]
        out[k:k + 2048] = -(green_h(w, nodes[None, :]) @ src)
    return out


def _solve_many(q, targets, h, extent, tol, far_iter=None):
    x_lo, nx, ny = _grid(q, h, extent)
    if nx < 4 or ny < 4:
        raise ValueError("grid too coarse for the extent")
    x = x_lo + h * np.arange(nx + 1)
    y = h * np.arange(ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    interior = np.zeros((nx + 1, ny + 1), dtype=bool)
    interior[1:nx, 1:ny] = True
    killing = None
    if not q.nu.is_zero:
        nu = q.nu.cell_average(X, Y, h)
        if np.any(nu < 0):
            raise ValueError("nu must be nonnegative")
        killing = 0.5 * h ** 2 * nu
    if far_iter is None:
        far_iter = 0 if q.nu.is_zero or q.nu.shape == "constant" and q.nu.box is None else 3
    A, idx = assemble_operator(interior, killing)
    solve = spd_solver(A, tol)
    far = np.zeros_like(interior)
    far[0, 1:] = far[-1, 1:] = True
    far[:, -1] = True
    far_pts = X[far] + 1j * Y[far]
    grids = []
    for s in targets:
        s = as_interval(s)
        vals = np.zeros((nx + 1, ny + 1))
        cover = np.clip(np.minimum(x + h / 2, s.hi) - np.maximum(x - h / 2, s.lo), 0, None)
        vals[:, 0] = cover / h
        gamma0 = harmonic_measure_h(far_pts, s)
        vals[far] = gamma0
        for it in range(far_iter + 1):
            b = boundary_rhs(vals, interior, idx)
            sol = solve(b)
            res = float(np.linalg.norm(b - A @ sol) / max(np.linalg.norm(b), 1e-300))
            vals[interior] = sol
            g = GammaGrid(h, x_lo, vals.copy(), s, res)
            if it < far_iter:
                vals[far] = gamma0 + _far_correction(g, q.nu, far_pts)
        grids.append(g)
    return grids


def solve_gamma(q, h, extent=None, target="sub", tol=1e-10, far_iter=None):
    """Finite-difference ``Gamma`` for ``q.sub`` (or ``q.universe``).

    Five-point Laplacian with killing ``h^2 nu / 2`` per node (``nu`` averaged
    over each node's cell), boundary data ``1`` on the target and ``0`` on the
    rest of the axis (end points weighted by the covered fraction of their
    cell). On the far boundary ``Gamma`` starts from the critical harmonic
    measure and, for compactly supported ``nu``, is then corrected
    ``far_iter`` times by the exact representation
    ``Gamma = Gamma_0 - int G(., z) nu(z) Gamma(z) d^2z`` evaluated with the
    current solution.
    """
    s = q.sub if target == "sub" else q.universe
    return _solve_many(q, [s], h, extent, tol, far_iter)[0]


def _probe_ratio(gs, gu, q):
    i0, _ = gs.node(q.x0)
    a, b = gs.values[i0, 1], gu.values[i0, 1]
    if a < DEGENERATE and b < DEGENERATE:
        raise DegenerateQuery("both functionals vanish at the probe")
    return a / b


def offcritical_hitting_probability(q, h, extent=None, tol=1e-10, richardson=True,
                                    far_iter=None):
    """``Gamma_sub / Gamma_universe`` at the first interior node above ``x0``.

    With ``richardson`` the ratio is computed at meshes ``h`` and ``h/2`` and
    combined as ``(4 p(h/2) - p(h)) / 3``.
    """
    gs, gu = _solve_many(q, [q.sub, q.universe], h, extent, tol, far_iter)
    p = _probe_ratio(gs, gu, q)
    if richardson:
        gs, gu = _solve_many(q, [q.sub, q.universe], h / 2, extent, tol, far_iter)
        p = (4 * _probe_ratio(gs, gu, q) - p) / 3
    return float(np.clip(p, 0.0, 1.0))


# --- perturbation theory --------------------------------------------------------

def first_order_hitting(q, epsrel=1e-8):
    """Critical probability plus the first-order correction in the amplitude of ``nu``.

    ``P0 + eps int nu_tilde K(x0, z) [Z0_sub H(z; U) / Z0_U^2 - H(z; sub) / Z0_U] d^2z``.
    """
    zs = partition_dipolar(q.x0, q.sub)
    zu = partition_dipolar(q.x0, q.universe)
    p0 = zs / zu
    if q.nu.is_zero:
        return p0

    def f(z):
        k = excursion_kernel(q.x0, z)
        return k * (zs * harmonic_measure_h(z, q.universe) / zu ** 2
                    - harmonic_measure_h(z, q.sub) / zu)

    return float(p0 + q.nu.eps * q.nu.integrate(f, epsrel=epsrel))


def gamma_first_order_term(w, sub, nu, epsrel=1e-8):
    """``Gamma_1(w) = -int nu_tilde(z) H(z; sub) G(w, z) d^2z`` (unit amplitude)."""
    if nu.is_zero:
        return 0.0
    w = complex(w)

    def f(z):
        if abs(z - w) < 1e-14:
            return 0.0
        return harmonic_measure_h(z, sub) * green_h(w, z)

    return -float(nu.integrate(f, singular_point=w, epsrel=epsrel))
