"""Square-lattice random walks in a truncated half-plane, their loop erasures and
off-critical importance weights.

Sites are integer pairs ``(i, j)`` at macroscopic position
``(x_lo + i a, j a)``. Row ``j = 0`` is the real axis; the other three sides of
the box form an absorbing far boundary on which exits count as missing the
target.

One lattice step is charged the Brownian time ``a^2 / 2``: with that clock the
walk converges to standard planar Brownian motion (generator ``Laplacian/2``),
so occupation times and killing weights match the continuum kernels of
:mod:`lerwlab.geometry` without further rescaling.
"""

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .geometry import BoundaryInterval, DiscreteDirichletProblem, as_interval, \
    solve_discrete_dirichlet
from .nu import NuField
from .rng import philox_block, to_unit

STEP_CAP = 10 ** 9


class StepCapExceeded(RuntimeError):
    pass


@dataclass
class Estimate:
    """Monte Carlo mean with its standard error; unpacks as ``(value, std_error)``."""
    value: float
    std_error: float
    n: int
    degenerate: bool = False

    def __iter__(self):
        yield self.value
        yield self.std_error

    @classmethod
    def from_samples(cls, x, degenerate=False):
        x = np.asarray(x, dtype=float)
        n = x.size
        se = x.std(ddof=1) / np.sqrt(n) if n > 1 else np.inf
        return cls(float(x.mean()), float(se), n, degenerate)


@dataclass
class LatticeDomain:
    """Truncated half-plane box ``[x_lo, x_hi] x (0, y_hi]`` at mesh ``a``.

    ``target`` is a boundary interval of the real axis. A real-axis site owns
    the dual segment ``[x - a/2, x + a/2]`` and its target weight is the
    fraction of that segment covered by ``target`` (so interval end points
    sitting on sites count one half, and partitions of an interval are exactly
    additive).
    """
    mesh: float
    x_lo: float
    x_hi: float
    y_hi: float
    target: BoundaryInterval
    nu: NuField = None
    _lw: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        a = self.mesh
        if a <= 0:
            raise ValueError("mesh must be positive")
        self.target = as_interval(self.target)
        for name in ("x_lo", "x_hi", "y_hi"):
            v = getattr(self, name) / a
            if abs(v - round(v)) > 1e-9:
                raise ValueError(f"{name} must be a multiple of the mesh")
        if not (self.x_lo < self.target.lo and self.target.hi < self.x_hi):
            raise ValueError("target must lie inside the box")
        if self.nu is None:
            self.nu = NuField.zero()

    @property
    def nx(self):
        return int(round((self.x_hi - self.x_lo) / self.mesh))

    @property
    def ny(self):
        return int(round(self.y_hi / self.mesh))

    @property
    def step_time(self):
        return self.mesh ** 2 / 2.0

    def site(self, z):
        """Nearest lattice site to the complex point ``z``."""
        z = complex(z)
        return (int(round((z.real - self.x_lo) / self.mesh)), int(round(z.imag / self.mesh)))

    def position(self, i, j):
        return complex(self.x_lo + i * self.mesh, j * self.mesh)

    def is_interior(self, i, j):
        return 0 < i < self.nx and 0 < j < self.ny

    def start_site(self, x0):
        """Interior site one mesh above the boundary point ``x0``."""
        i, _ = self.site(x0)
        return (i, 1)

    def target_weights(self, s=None):
        """Target weight of every real-axis site ``i = 0..nx``."""
        lo, hi = self.target if s is None else as_interval(s)
        x = self.x_lo + np.arange(self.nx + 1) * self.mesh
        a = self.mesh
        cover = np.clip(np.minimum(x + a / 2, hi) - np.maximum(x - a / 2, lo), 0, None)
        w = cover / a
        w[0] = w[-1] = 0.0
        return w

    def log_weights(self):
        """Per-visit log weight ``nu(site) a^2 / 2`` on the full site grid (cached)."""
        if self._lw is None:
            if self.nu.is_zero:
                self._lw = np.zeros((self.nx + 1, self.ny + 1))
            else:
                i = np.arange(self.nx + 1)[:, None]
                j = np.arange(self.ny + 1)[None, :]
                z = self.x_lo + i * self.mesh + 1j * j * self.mesh
                self._lw = self.nu(z) * self.step_time
        return self._lw

    def with_nu(self, nu):
        return LatticeDomain(self.mesh, self.x_lo, self.x_hi, self.y_hi, self.target, nu)

    def with_target(self, s):
        d = LatticeDomain(self.mesh, self.x_lo, self.x_hi, self.y_hi, s, self.nu)
        d._lw = self._lw
        return d

    def dirichlet_problem(self, s=None):
        """Lattice harmonic measure of the target (or of ``s``) as a Dirichlet problem."""
        nx, ny = self.nx, self.ny
        vals = np.zeros((nx + 1, ny + 1))
        vals[:, 0] = self.target_weights(s)
        interior = np.zeros_like(vals, dtype=bool)
        interior[1:nx, 1:ny] = True
        vals[interior] = np.nan
        vals[interior] = 0.0
        return DiscreteDirichletProblem(vals, interior)

    def harmonic_measure(self, s=None):
        """Exact lattice exit probabilities (killing included when ``nu`` is set)."""
        p = self.dirichlet_problem(s)
        if not self.nu.is_zero:
            p.killing = np.expm1(self.log_weights())
        return solve_discrete_dirichlet(p)

    def to_dict(self):
        return {"mesh": self.mesh, "box": [self.x_lo, self.x_hi, self.y_hi],
                "target": [self.target.lo, self.target.hi], "nu": self.nu.to_dict()}


@dataclass
class WalkSample:
    path: np.ndarray          # (L+1, 2) integer sites W_0..W_tau
    exit_site: tuple
    local_time: dict          # site -> visit count over 0 <= j < tau
    weight: float

    @property
    def length(self):
        return len(self.path) - 1


@dataclass
class SimplePath:
    sites: list

    def __len__(self):
        return len(self.sites)


# --- numba kernels ------------------------------------------------------------

_U3 = np.uint64(3)


@nb.njit(cache=True)
def _walk(i0, j0, nx, ny, lw, seed, stream, cap, cell_org, cell_w, record):
    """Run one walk; returns (exit_i, exit_j, steps, logw, cell_acc, path)."""
    ncell = cell_org.shape[0]
    wdim = cell_w.shape[1]
    acc = np.zeros(ncell)
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    i = i0
    j = j0
    steps = 0
    logw = 0.0
    blk = 0
    word = 4
    bits = np.uint64(0)
    nbits = 0
    w0 = np.uint64(0)
    w1 = np.uint64(0)
    w2 = np.uint64(0)
    w3 = np.uint64(0)
    cap_path = 1024 if record else 1
    path = np.empty((cap_path, 2), dtype=np.int64)
    if record:
        path[0, 0] = i
        path[0, 1] = j
    while True:
        logw += lw[i, j]
        for c in range(ncell):
            di = i - cell_org[c, 0]
            dj = j - cell_org[c, 1]
            if 0 <= di < wdim and 0 <= dj < wdim:
                acc[c] += cell_w[c, di, dj]
        if nbits == 0:
            if word == 4:
                w0, w1, w2, w3 = philox_block(np.uint64(blk), np.uint64(0), np.uint64(0),
                                              np.uint64(0), k0, k1)
                blk += 1
                word = 0
            if word == 0:
                bits = w0
            elif word == 1:
                bits = w1
            elif word == 2:
                bits = w2
            else:
                bits = w3
            word += 1
            nbits = 32
        d = bits & _U3
        bits = bits >> np.uint64(2)
        nbits -= 1
        if d == 0:
            i += 1
        elif d == 1:
            i -= 1
        elif d == 2:
            j += 1
        else:
            j -= 1
        steps += 1
        if record:
            if steps >= path.shape[0]:
                new = np.empty((2 * path.shape[0], 2), dtype=np.int64)
                new[:path.shape[0]] = path
                path = new
            path[steps, 0] = i
            path[steps, 1] = j
        if i == 0 or i == nx or j == 0 or j == ny:
            break
        if steps >= cap:
            return i, j, -1, logw, acc, path[:steps + 1]
    return i, j, steps, logw, acc, path[:steps + 1]


@nb.njit(cache=True, parallel=True)
def _run_walks(i0, j0, nx, ny, lw, seed, first, n, cap, cell_org, cell_w):
    exit_i = np.empty(n, dtype=np.int64)
    exit_j = np.empty(n, dtype=np.int64)
    steps = np.empty(n, dtype=np.int64)
    logw = np.empty(n)
    acc = np.empty((n, cell_org.shape[0]))
    for s in nb.prange(n):
        ei, ej, st, lg, a, _ = _walk(i0, j0, nx, ny, lw, seed, first + s, cap,
                                     cell_org, cell_w, False)
        exit_i[s] = ei
        exit_j[s] = ej
        steps[s] = st
        logw[s] = lg
        acc[s, :] = a
    return exit_i, exit_j, steps, logw, acc


_NO_CELLS = (np.zeros((0, 2), dtype=np.int64), np.zeros((0, 1, 1)))


def _check_start(domain, start):
    i, j = start
    if not domain.is_interior(i, j):
        raise ValueError(f"start site {start} is not interior")
    return int(i), int(j)


def sample_walk(domain, start, rng_stream, seed=0):
    """One simple random walk from ``start`` until it first hits the boundary.

    ``rng_stream`` is the stream index within ``seed``; the same pair always
    reproduces the same walk.
    """
    i0, j0 = _check_start(domain, start)
    org, w = _NO_CELLS
    ei, ej, st, lg, _, path = _walk(i0, j0, domain.nx, domain.ny, domain.log_weights(),
                                    np.uint64(seed), np.uint64(rng_stream), STEP_CAP,
                                    org, w, True)
    if st < 0:
        raise StepCapExceeded("step cap exceeded")
    sites, counts = np.unique(path[:-1], axis=0, return_counts=True)
    lt = {(int(a), int(b)): int(c) for (a, b), c in zip(sites, counts)}
    return WalkSample(path=path, exit_site=(int(ei), int(ej)), local_time=lt, weight=float(np.exp(-lg)))


@dataclass
class WalkBatch:
    """Per-sample summaries of ``n`` walks (no paths)."""
    exit_i: np.ndarray
    exit_j: np.ndarray
    steps: np.ndarray
    weight: np.ndarray
    cell_time: np.ndarray     # (n, ncell) occupation times in Brownian units

    def exit_weight(self, domain, s=None):
        """Target weight of each walk's exit site (zero off the real axis)."""
        tw = domain.target_weights(s)
        return np.where(self.exit_j == 0, tw[np.clip(self.exit_i, 0, domain.nx)], 0.0)


def run_walks(domain, start, n, seed, first_stream=0, cells=(), workers=None):
    """Simulate ``n`` walks with streams ``first_stream .. first_stream + n - 1``."""
    i0, j0 = _check_start(domain, start)
    org, w = cell_windows(domain, cells) if len(cells) else _NO_CELLS
    if workers:
        nb.set_num_threads(min(int(workers), nb.config.NUMBA_NUM_THREADS))
    ei, ej, st, lg, acc = _run_walks(i0, j0, domain.nx, domain.ny, domain.log_weights(),
                                     np.uint64(seed), np.uint64(first_stream), int(n), STEP_CAP,
                                     org, w)
    if np.any(st < 0):
        raise StepCapExceeded("step cap exceeded")
    return WalkBatch(ei, ej, st, np.exp(-lg), acc * domain.step_time)


def cell_windows(domain, cells, side=4):
    """Fractional site weights of ``side*a`` squares centred at the points ``cells``.

    A site contributes the fraction of its dual square covered by the cell,
    so the weights of a cell sum to ``side^2``. Returns ``(origins, weights)``
    for the walk kernel. Overlapping cells are rejected.
    """
    a = domain.mesh
    half = side * a / 2
    cells = [complex(c) for c in cells]
    for k, c in enumerate(cells):
        if c.imag - half <= 0:
            raise ValueError(f"cell {k} crosses the real axis")
        for c2 in cells[:k]:
            if abs(c.real - c2.real) < 2 * half and abs(c.imag - c2.imag) < 2 * half:
                raise ValueError("overlapping cells")
    wdim = side + 2
    org = np.zeros((len(cells), 2), dtype=np.int64)
    wts = np.zeros((len(cells), wdim, wdim))
    for k, c in enumerate(cells):
        ci = (c.real - domain.x_lo) / a
        cj = c.imag / a
        i_start = int(np.floor(ci - side / 2 - 0.5))
        j_start = int(np.floor(cj - side / 2 - 0.5))
        org[k] = (i_start, j_start)
        for di in range(wdim):
            ox = np.clip(min(i_start + di + 0.5, ci + side / 2) - max(i_start + di - 0.5, ci - side / 2), 0, None)
            for dj in range(wdim):
                oy = np.clip(min(j_start + dj + 0.5, cj + side / 2) - max(j_start + dj - 0.5, cj - side / 2), 0, None)
                wts[k, di, dj] = ox * oy
    return org, wts


# --- loop erasure ----------------------------------------------------------

def _key(s):
    if isinstance(s, (tuple, list, np.ndarray)):
        return tuple(int(v) for v in s)
    return int(s)


def _check_adjacent(keys):
    for p, q in zip(keys[:-1], keys[1:]):
        d = abs(p - q) if isinstance(p, int) else sum(abs(u - v) for u, v in zip(p, q))
        if d != 1:
            raise ValueError(f"consecutive sites {p} and {q} are not lattice neighbours")


def loop_erase(path, check=True):
    """Loop erasure by the last-visit construction.

    ``gamma_0 = W_0``; repeatedly jump to the last visit of the current site
    and continue from the step after it.
    """
    keys = [_key(s) for s in path]
    if not keys:
        raise ValueError("empty path")
    if check:
        _check_adjacent(keys)
    last = {}
    for m, k in enumerate(keys):
        last[k] = m
    out = []
    m = 0
    n = len(keys) - 1
    while True:
        m = last[keys[m]]
        out.append(keys[m])
        if m == n:
            break
        m += 1
    return SimplePath(out)


def loop_erase_chronological(path, check=True):
    """Loop erasure by erasing each loop as soon as it closes."""
    keys = [_key(s) for s in path]
    if not keys:
        raise ValueError("empty path")
    if check:
        _check_adjacent(keys)
    out = []
    where = {}
    for k in keys:
        if k in where:
            cut = where[k]
            for dropped in out[cut + 1:]:
                del where[dropped]
            del out[cut + 1:]
        else:
            where[k] = len(out)
            out.append(k)
    return SimplePath(out)


@nb.njit(cache=True)
def loop_erase_array(path, i_min, j_min, ni, nj):
    """Chronological erasure of an ``(L, 2)`` integer path inside a bounding box."""
    where = -np.ones((ni, nj), dtype=np.int64)
    out = np.empty_like(path)
    n = 0
    for t in range(path.shape[0]):
        a = path[t, 0] - i_min
        b = path[t, 1] - j_min
        k = where[a, b]
        if k >= 0:
            for r in range(k + 1, n):
                where[out[r, 0] - i_min, out[r, 1] - j_min] = -1
            n = k + 1
        else:
            where[a, b] = n
            out[n, 0] = path[t, 0]
            out[n, 1] = path[t, 1]
            n += 1
    return out[:n]


def is_simple(sites):
    keys = [_key(s) for s in sites]
    return len(set(keys)) == len(keys)


# --- estimators --------------------------------------------------------------

def estimate_partition_ratio(domain, start, nu, n_samples, seed, first_stream=0, workers=None):
    """MC estimate of ``E[w 1{exit in target}]`` (killing weight ``w`` from ``nu``)."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    d = domain.with_nu(nu) if nu is not None else domain
    b = run_walks(d, start, n_samples, seed, first_stream, workers=workers)
    x = b.weight * b.exit_weight(d)
    return Estimate.from_samples(x, degenerate=not np.any(x > 0))


def estimate_local_time_moment(domain, start, cells, nu, n_samples, seed, first_stream=0,
                               workers=None):
    """MC estimate of ``E[prod_k T_k  w 1{exit in target}]``.

    ``T_k`` is the occupation time (Brownian units) of the ``4a`` square cell
    centred at ``cells[k]``; dividing by ``a`` and by the cell areas gives the
    boundary-normalised correlator density.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    d = domain.with_nu(nu) if nu is not None else domain
    b = run_walks(d, start, n_samples, seed, first_stream, cells=cells, workers=workers)
    x = b.weight * b.exit_weight(d)
    if len(cells):
        x = x * np.prod(b.cell_time, axis=1)
    return Estimate.from_samples(x, degenerate=not np.any(x > 0))


def estimate_hitting_ratio(domain, start, sub, n_samples, seed, first_stream=0, workers=None):
    """Weighted MC ratio ``E[w 1{sub}] / E[w 1{target}]`` with delta-method error."""
    b = run_walks(domain, start, n_samples, seed, first_stream, workers=workers)
    num = b.weight * b.exit_weight(domain, sub)
    den = b.weight * b.exit_weight(domain)
    if not np.any(den > 0):
        return Estimate(np.nan, np.inf, n_samples, True)
    r = num.sum() / den.sum()
    resid = num - r * den
    se = np.sqrt(np.sum(resid ** 2)) / den.sum()
    return Estimate(float(r), float(se), int(n_samples), False)


# --- walks conditioned to escape (chordal LERW to infinity) ------------------

@nb.njit(cache=True)
def _escape_walk(radius, seed, stream):
    """Walk from (0, 1) conditioned never to return to the axis (Doob transform
    by ``h(i, j) = j``), run until it leaves the half-disk of ``radius`` sites."""
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    path = np.empty((1024, 2), dtype=np.int64)
    i = 0
    j = 1
    path[0, 0] = 0
    path[0, 1] = 1
    n = 0
    blk = 0
    word = 4
    w = (np.uint64(0), np.uint64(0), np.uint64(0), np.uint64(0))
    r2 = radius * radius
    while i * i + j * j < r2:
        if word == 4:
            w = philox_block(np.uint64(blk), np.uint64(0), np.uint64(0), np.uint64(0), k0, k1)
            blk += 1
            word = 0
        u = to_unit(w[word])
        word += 1
        p_up = (j + 1) / (4.0 * j)
        p_down = (j - 1) / (4.0 * j)
        if u < 0.25:
            i += 1
        elif u < 0.5:
            i -= 1
        elif u < 0.5 + p_up:
            j += 1
        else:
            j -= 1
        n += 1
        if n >= path.shape[0]:
            new = np.empty((2 * path.shape[0], 2), dtype=np.int64)
            new[:path.shape[0]] = path
            path = new
        path[n, 0] = i
        path[n, 1] = j
    return path[:n + 1]


def sample_chordal_lerw(radius_sites, seed, stream):
    """Loop erasure of an escaping walk from the site above the origin.

    Returns integer vertices ``(i, j)`` starting with the boundary point
    ``(0, 0)``; the portion well inside ``radius_sites`` approximates chordal
    LERW in the half-plane from 0 to infinity.
    """
    path = _escape_walk(int(radius_sites), np.uint64(seed), np.uint64(stream))
    r = int(radius_sites) + 2
    le = loop_erase_array(path, -r, 0, 2 * r + 1, r + 1)
    return np.vstack([[0, 0], le])



# --- Rao-Blackwellised moments ----------------------------------------------

@nb.njit(cache=True)
def _walk_rb(i0, j0, nx, ny, lw, seed, stream, cap, cell_org, cell_w, u, ci, cj, r0,
             split_r2, split_k):
    """Conditional-expectation estimate of ``E[prod_k T_k w u]`` for one root walk.

    ``prod_k T_k`` telescopes into per-step increments; each increment is
    known at its step and multiplies the exact probability ``u(W_t)`` (one row
    per target) of the remaining walk ending in the target, together with the
    killing weight accumulated strictly before ``t``.

    Variance reduction, both unbiased:

    * first-passage splitting: when a particle first gets farther than
      ``sqrt(split_r2[m])`` (lattice units) from its start it is replaced by
      ``split_k`` copies of weight ``1 / split_k``;
    * beyond ``r0`` from ``(ci, cj)`` a particle is thinned by Russian
      roulette at every doubling of its record distance (survival 1/2,
      weight x2); ``r0 <= 0`` disables this.

    Particle ``p`` of a root walk reads Philox counters ``(block, p)``.
    """
    ncell = cell_org.shape[0]
    nobs = u.shape[0]
    wdim = cell_w.shape[1]
    nlev = split_r2.shape[0]
    out = np.zeros(nobs)
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    size = 16
    st_ij = np.empty((size, 2), dtype=np.int64)
    st_f = np.empty((size, 3 + ncell))       # logw, weight, roulette threshold, acc
    st_m = np.empty(size, dtype=np.int64)    # next split level
    st_id = np.empty(size, dtype=np.int64)
    st_ij[0, 0] = i0
    st_ij[0, 1] = j0
    st_f[0, 0] = 0.0
    st_f[0, 1] = 1.0
    st_f[0, 2] = r0 * r0 if r0 > 0 else np.inf
    st_f[0, 3:] = 0.0
    st_m[0] = 0
    st_id[0] = 0
    top = 1
    next_id = 1
    steps = 0
    acc = np.zeros(ncell)
    while top > 0:
        top -= 1
        i = st_ij[top, 0]
        j = st_ij[top, 1]
        logw = st_f[top, 0]
        wt = st_f[top, 1]
        nxt = st_f[top, 2]
        acc[:] = st_f[top, 3:]
        lev = st_m[top]
        cid = np.uint64(st_id[top])
        blk = 0
        word = 4
        bits = np.uint64(0)
        nbits = 0
        w0 = np.uint64(0)
        w1 = np.uint64(0)
        w2 = np.uint64(0)
        w3 = np.uint64(0)
        while True:
            old = 1.0
            new = 1.0
            hit = False
            for c in range(ncell):
                old *= acc[c]
                di = i - cell_org[c, 0]
                dj = j - cell_org[c, 1]
                if 0 <= di < wdim and 0 <= dj < wdim and cell_w[c, di, dj] > 0:
                    acc[c] += cell_w[c, di, dj]
                    hit = True
                new *= acc[c]
            if hit:
                f = wt * (new - old) * np.exp(-logw)
                for o in range(nobs):
                    out[o] += f * u[o, i, j]
            logw += lw[i, j]
            if nbits == 0:
                if word == 4:
                    w0, w1, w2, w3 = philox_block(np.uint64(blk), cid, np.uint64(0),
                                                  np.uint64(0), k0, k1)
                    blk += 1
                    word = 0
                if word == 0:
                    bits = w0
                elif word == 1:
                    bits = w1
                elif word == 2:
                    bits = w2
                else:
                    bits = w3
                word += 1
                nbits = 32
            d = bits & _U3
            bits = bits >> np.uint64(2)
            nbits -= 1
            if d == 0:
                i += 1
            elif d == 1:
                i -= 1
            elif d == 2:
                j += 1
            else:
                j -= 1
            steps += 1
            if i == 0 or i == nx or j == 0 or j == ny:
                break
            if steps >= cap:
                return out, -1
            r2 = (i - ci) ** 2 + (j - cj) ** 2
            if r2 > nxt:
                nxt *= 4.0
                r = philox_block(np.uint64(blk), cid, np.uint64(1), np.uint64(0), k0, k1)
                if to_unit(r[0]) < 0.5:
                    wt *= 2.0
                else:
                    break
            while lev < nlev and (i - i0) ** 2 + (j - j0) ** 2 > split_r2[lev]:
                lev += 1
                wt /= split_k
                for _ in range(split_k - 1):
                    if top == st_m.shape[0]:
                        n2 = 2 * top
                        t_ij = np.empty((n2, 2), dtype=np.int64)
                        t_ij[:top] = st_ij[:top]
                        st_ij = t_ij
                        t_f = np.empty((n2, st_f.shape[1]))
                        t_f[:top] = st_f[:top]
                        st_f = t_f
                        t_m = np.empty(n2, dtype=np.int64)
                        t_m[:top] = st_m[:top]
                        st_m = t_m
                        t_id = np.empty(n2, dtype=np.int64)
                        t_id[:top] = st_id[:top]
                        st_id = t_id
                    st_ij[top, 0] = i
                    st_ij[top, 1] = j
                    st_f[top, 0] = logw
                    st_f[top, 1] = wt
                    st_f[top, 2] = nxt
                    st_f[top, 3:] = acc
                    st_m[top] = lev
                    st_id[top] = next_id
                    next_id += 1
                    top += 1
    return out, steps


@nb.njit(cache=True, parallel=True)
def _run_rb(i0, j0, nx, ny, lw, seed, first, n, cap, cell_org, cell_w, u, ci, cj, r0,
            split_r2, split_k):
    vals = np.empty((n, u.shape[0]))
    steps = np.empty(n, dtype=np.int64)
    for s in nb.prange(n):
        v, st = _walk_rb(i0, j0, nx, ny, lw, seed, first + s, cap, cell_org, cell_w, u,
                         ci, cj, r0, split_r2, split_k)
        vals[s, :] = v
        steps[s] = st
    return vals, steps


def run_rb_moments(domain, start, cells, n, seed, targets=None, first_stream=0,
                   roulette=None, split_radii=(), split_k=2, workers=None, side=4):
    """Per-walk Rao-Blackwellised samples of ``E[prod_k T_k w 1{exit in s}]``.

    Returns ``(values, steps)`` with ``values[:, k]`` for ``targets[k]``
    (default: the domain target). ``roulette`` is the radius (macroscopic
    units, about the cell centroid) beyond which far excursions are thinned.
    ``split_radii`` (macroscopic, about the start site) are the first-passage
    splitting levels. Cells are ``side * a`` squares. Needs at least one cell; the ``n = 0`` moment is a plain exit probability.
    """
    if not len(cells):
        raise ValueError("at least one cell is required")
    i0, j0 = _check_start(domain, start)
    org, w = cell_windows(domain, cells, side)
    targets = [domain.target] if targets is None else list(targets)
    u = np.array([domain.harmonic_measure(s) for s in targets])
    c = np.mean([complex(v) for v in cells])
    ci = (c.real - domain.x_lo) / domain.mesh
    cj = c.imag / domain.mesh
    r0 = roulette / domain.mesh if roulette else 0.0
    if workers:
        nb.set_num_threads(min(int(workers), nb.config.NUMBA_NUM_THREADS))
    split_r2 = (np.sort(np.asarray(split_radii, dtype=float)) / domain.mesh) ** 2
    vals, steps = _run_rb(i0, j0, domain.nx, domain.ny, domain.log_weights(), np.uint64(seed),
                          np.uint64(first_stream), int(n), STEP_CAP, org, w, u, ci, cj, r0,
                          split_r2, int(split_k))
    if np.any(steps < 0):
        raise StepCapExceeded("step cap exceeded")
    return vals * domain.step_time ** len(cells), steps


def exact_local_time_moment(domain, start, cells, s=None, side=4):
    """Exact lattice value of ``E[prod_k T_k w 1{exit in s}]`` by linear solves.

    Sums over orderings of the cells the chain ``G w_1 G w_2 ... G (w_n u)``
    with ``G`` the (killed) lattice Green's function; for disjoint cells this
    is exactly the walk expectation estimated by :func:`run_rb_moments`.
    """
    import itertools
    from .geometry import assemble_operator, boundary_rhs, spd_solver
    i0, j0 = _check_start(domain, start)
    p = domain.dirichlet_problem(s)
    interior = p.interior
    killing = np.expm1(domain.log_weights()) if not domain.nu.is_zero else None
    A, idx = assemble_operator(interior, killing)
    solve = spd_solver(A)
    u = np.array(p.values, dtype=float)
    u[interior] = solve(boundary_rhs(p.values, interior, idx))
    org, w = cell_windows(domain, cells, side)
    grids = []
    for k in range(len(cells)):
        g = np.zeros_like(u)
        oi, oj = org[k]
        g[oi:oi + w.shape[1], oj:oj + w.shape[2]] = w[k]
        grids.append(g)
    total = 0.0
    for perm in itertools.permutations(range(len(cells))):
        v = u
        for k in reversed(perm):
            # F = f + e^{-lw} mean(F at neighbours)  <=>  A F = 4 e^{lw} f
            rhs = 4.0 * (grids[k] * v)[interior]
            if killing is not None:
                rhs = rhs * (1.0 + killing[interior])
            x = np.zeros_like(u)
            x[interior] = solve(rhs)
            v = x
        total += v[i0, j0]
    return total * domain.step_time ** len(cells)
