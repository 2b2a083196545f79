"""Chordal Loewner evolution in the upper half-plane: integration, SLE sampling,
driving-function extraction and the martingale observables of dipolar SLE_2.

Driving functions are stored on a time grid ``t_0 = 0 < t_1 < ... < t_M``
and read with the right-point convention: on ``(t_{k-1}, t_k]`` the driving
is constant and equal to ``xi[k]`` (``xi[0]`` is the start point). Under a
constant driving the Loewner flow is an explicit vertical-slit map, so the
default integrator composes these maps exactly; ``method="rk"`` integrates
the ODE itself as an independent check.
"""

from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.integrate import solve_ivp

from .geometry import as_interval, excursion_kernel, harmonic_measure_h, partition_chordal, \
    partition_dipolar
from .rng import normals_at, philox_block, to_unit

VARIANTS = ("chordal", "dipolar")


# --- elementary slit maps -----------------------------------------------------

def slit_forward(w, xi, dt):
    """Flow ``dg/dt = 2/(g - xi)`` for time ``dt`` at constant ``xi``.

    ``xi + sqrt((w - xi)^2 + 4 dt)`` on the branch with ``Im >= 0``; real
    points keep the side of ``xi`` they started on.
    """
    u = np.asarray(w, dtype=complex) - xi
    r = np.sqrt(u * u + 4.0 * dt)
    flip = (r.imag < 0) | ((r.imag == 0) & (u.real < 0))
    return xi + np.where(flip, -r, r)


def slit_forward_real(x, xi, dt):
    u = np.asarray(x, dtype=float) - xi
    return xi + np.sign(u) * np.sqrt(u * u + 4.0 * dt)


def slit_inverse(w, xi, dt):
    """Inverse of :func:`slit_forward`: ``xi + sqrt((w - xi)^2 - 4 dt)``, ``Im >= 0``."""
    u = np.asarray(w, dtype=complex) - xi
    r = np.sqrt(u * u - 4.0 * dt)
    flip = (r.imag < 0) | ((r.imag == 0) & (u.real < 0))
    return xi + np.where(flip, -r, r)


# --- data types ------------------------------------------------------------------

@dataclass
class DrivingSample:
    """Driving function on a time grid plus the SLE parameters that produced it."""
    times: np.ndarray
    xi: np.ndarray
    kappa: float = 2.0
    variant: str = "dipolar"
    x0: float = 0.0
    terminal: object = None     # x_inf (chordal) or (x_plus, x_minus) (dipolar)
    stopped: bool = False       # curve reached its target before the last time

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        if self.times.shape != self.xi.shape or self.times.ndim != 1:
            raise ValueError("times and xi must be 1-d arrays of equal length")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.xi[0] != self.x0:
            self.x0 = float(self.xi[0])

    @property
    def rho(self):
        return self.kappa - 6 if self.variant == "chordal" else (self.kappa - 6) / 2

    def restrict(self, t):
        """Driving on ``[0, t]`` (``t`` must be a grid time)."""
        k = int(np.searchsorted(self.times, t))
        if k >= len(self.times) or not np.isclose(self.times[k], t, rtol=0, atol=1e-14):
            raise ValueError("t is not a grid time")
        return DrivingSample(self.times[:k + 1], self.xi[:k + 1], self.kappa, self.variant,
                             self.x0, self.terminal, False)

    def __call__(self, t):
        """Piecewise-linear interpolation of the grid values (for resampling)."""
        return np.interp(t, self.times, self.xi)


@dataclass
class LoewnerChain:
    """Tracked images under ``g_t`` at every grid time.

    ``g``/``gp`` have shape ``(M + 1, P)`` for ``P`` bulk observers;
    ``boundary`` has shape ``(M + 1, B)`` (``X+, X-`` or ``eta`` first, then
    any extra real observers). ``swallowed[p]`` is the first grid index at
    which observer ``p`` was dropped (``-1`` if never); values from there on
    are ``nan``.
    """
    times: np.ndarray
    xi: np.ndarray
    observers: np.ndarray
    g: np.ndarray
    gp: np.ndarray
    boundary: np.ndarray
    swallowed: np.ndarray
    driving: DrivingSample = None

    def index_of(self, points):
        """Observer indices of ``points`` (must have been seeded exactly)."""
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        lookup = {complex(z): k for k, z in enumerate(self.observers)}
        try:
            return np.array([lookup[complex(z)] for z in pts], dtype=int)
        except KeyError:
            raise KeyError("point was not seeded as an observer") from None

    def time_index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[k], t, rtol=0, atol=1e-12):
            raise ValueError(f"t = {t} is not a grid time")
        return k

    def conformal_radius(self):
        return 2.0 * self.g.imag / np.abs(self.gp)


def integrate_chain(driving, observers=(), boundary=None, method="slit", swallow_factor=10.0,
                    rtol=1e-9):
    """Track bulk ``observers`` (and real ``boundary`` points) under the Loewner flow.

    ``boundary`` defaults to the force points of ``driving`` (``x+, x-`` for
    dipolar, ``x_inf`` for chordal). An observer is dropped once
    ``|g - xi| < swallow_factor * sqrt(kappa dt)``; pass ``0`` to keep all.
    """
    t = driving.times
    xi = driving.xi
    z = np.atleast_1d(np.asarray(observers, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("observers must lie in the upper half-plane")
    if boundary is None:
        boundary = _force_points(driving)
    b = np.atleast_1d(np.asarray(boundary, dtype=float))
    M = len(t) - 1
    g = np.empty((M + 1, len(z)), dtype=complex)
    gp = np.empty((M + 1, len(z)), dtype=complex)
    bd = np.empty((M + 1, len(b)))
    g[0], gp[0], bd[0] = z, 1.0, b
    alive = np.ones(len(z), dtype=bool)
    swallowed = -np.ones(len(z), dtype=int)
    cur, curp, curb = z.copy(), np.ones(len(z), dtype=complex), b.copy()
    for k in range(1, M + 1):
        dt = t[k] - t[k - 1]
        x = xi[k]
        if method == "slit":
            new = slit_forward(cur, x, dt)
            curp = curp * (cur - x) / (new - x)
            cur = new
        elif method == "rk":
            cur, curp = _rk_step(cur, curp, x, dt, rtol, 10.0 * np.sqrt(driving.kappa * dt))
        else:
            raise ValueError("method must be 'slit' or 'rk'")
        curb = slit_forward_real(curb, x, dt)
        if swallow_factor > 0:
            thr = swallow_factor * np.sqrt(driving.kappa * dt)
            dead = alive & (np.abs(cur - x) < thr)
            swallowed[dead] = k
            alive &= ~dead
        g[k] = np.where(alive, cur, np.nan)
        gp[k] = np.where(alive, curp, np.nan)
        bd[k] = curb
    return LoewnerChain(t.copy(), xi.copy(), z, g, gp, bd, swallowed, driving)


def _force_points(driving):
    if driving.terminal is None:
        return np.zeros(0)
    if driving.variant == "chordal":
        return np.array([float(driving.terminal)])
    lo, hi = as_interval(driving.terminal)
    return np.array([lo, hi])


def _rk_step(z, zp, xi, dt, rtol, near):
    # Adaptive RK45 on (g, g') for one step at constant driving; points close
    # to the driving use the analytic slit map instead.
    out, outp = z.copy(), zp.copy()
    close = np.abs(z - xi) < near
    if np.any(close):
        new = slit_forward(z[close], xi, dt)
        outp[close] = zp[close] * (z[close] - xi) / (new - xi)
        out[close] = new
    idx = np.nonzero(~close)[0]
    if len(idx) == 0:
        return out, outp

    def rhs(_, y):
        n = len(idx)
        g = y[:n] + 1j * y[n:2 * n]
        p = y[2 * n:3 * n] + 1j * y[3 * n:]
        dg = 2.0 / (g - xi)
        dp = -2.0 * p / (g - xi) ** 2
        return np.concatenate([dg.real, dg.imag, dp.real, dp.imag])

    y0 = np.concatenate([z[idx].real, z[idx].imag, zp[idx].real, zp[idx].imag])
    sol = solve_ivp(rhs, (0.0, dt), y0, method="RK45", rtol=rtol, atol=rtol * 1e-3)
    if not sol.success:
        raise RuntimeError(f"Loewner ODE step failed: {sol.message}")
    y = sol.y[:, -1]
    n = len(idx)
    out[idx] = y[:n] + 1j * y[n:2 * n]
    outp[idx] = y[2 * n:3 * n] + 1j * y[3 * n:]
    return out, outp


# --- SLE sampling -------------------------------------------------------------------

@dataclass
class SLEEnsemble:
    """Batch of Euler-Maruyama SLE paths advanced in lock-step.

    ``snapshots[t]`` holds ``(xi, force, real, g, gp)`` for every path at time
    ``t`` (paths stopped earlier contribute their stopped state). ``paths``
    keeps the full driving of each path when requested.
    """
    variant: str
    kappa: float
    x0: float
    terminal: object
    stop_time: np.ndarray
    stopped: np.ndarray
    xi: np.ndarray                 # final driving value per path
    force: np.ndarray              # final force-point images (P, 1 or 2)
    real: np.ndarray               # final images of the extra real observers
    g: np.ndarray                  # final bulk observer images
    gp: np.ndarray
    observers: np.ndarray
    real_observers: np.ndarray
    snapshots: dict = field(default_factory=dict)
    paths: list = None
    n_steps: int = 0

    def driving(self, p):
        if self.paths is None:
            raise ValueError("paths were not kept")
        t, x = self.paths[p]
        return DrivingSample(t, x, self.kappa, self.variant, self.x0, self.terminal,
                             bool(self.stopped[p]))


def sle_drift(xi, force, variant, kappa=2.0):
    """Critical drift ``rho / (xi - X)`` summed over the force points."""
    rho = kappa - 6 if variant == "chordal" else (kappa - 6) / 2
    return np.sum(rho / (xi[:, None] - force), axis=1)


@nb.njit(cache=True)
def _normal(k0, k1, step):
    w = philox_block(np.uint64(step), np.uint64(1), np.uint64(0), np.uint64(0), k0, k1)
    u1 = 1.0 - to_unit(w[0])
    u2 = to_unit(w[1])
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@nb.njit(cache=True)
def _csqrt_up(v, u_real):
    r = np.sqrt(v)
    if r.imag < 0 or (r.imag == 0 and u_real < 0):
        r = -r
    return r


@nb.njit(cache=True)
def _sle_path(x0, force0, rho, kappa, t_max, dt, seed, stream, z, r0, snaps, stop_gap,
              gap_factor, keep, max_steps, snap_xi, snap_force, snap_real, snap_g, snap_gp):
    k0 = np.uint64(seed)
    k1 = np.uint64(stream)
    nf = force0.shape[0]
    force = force0.copy()
    real = r0.copy()
    g = z.copy()
    gp = np.ones(z.shape[0], dtype=np.complex128)
    xi = x0
    t = 0.0
    cap = 1024 if keep else 1
    pt = np.empty(cap)
    px = np.empty(cap)
    pt[0] = 0.0
    px[0] = x0
    n = 1
    si = 0
    while si < snaps.shape[0] and snaps[si] <= 0.0:
        snap_xi[si] = xi
        snap_force[si, :] = force
        snap_real[si, :] = real
        snap_g[si, :] = g
        snap_gp[si, :] = gp
        si += 1
    step = 0
    stopped = False
    while t < t_max - 1e-12:
        if step >= max_steps:
            return xi, t, False, force, real, g, gp, pt[:n], px[:n], -1
        gap = np.inf
        drift = 0.0
        for f in range(nf):
            d = xi - force[f]
            gap = min(gap, abs(d))
            drift += rho / d
        h = min(dt, gap_factor * gap * gap)
        nxt = t_max if si >= snaps.shape[0] else snaps[si]
        h = min(h, nxt - t)
        xn = xi + drift * h + np.sqrt(kappa * h) * _normal(k0, k1, step)
        for f in range(nf):
            u = force[f] - xn
            force[f] = xn + np.sign(u) * np.sqrt(u * u + 4.0 * h)
        for r in range(real.shape[0]):
            u = real[r] - xn
            real[r] = xn + np.sign(u) * np.sqrt(u * u + 4.0 * h)
        for p in range(g.shape[0]):
            u = g[p] - xn
            w = xn + _csqrt_up(u * u + 4.0 * h, u.real)
            gp[p] = gp[p] * u / (w - xn)
            g[p] = w
        xi = xn
        t += h
        step += 1
        if keep:
            if n == pt.shape[0]:
                a = np.empty(2 * n)
                a[:n] = pt
                pt = a
                b = np.empty(2 * n)
                b[:n] = px
                px = b
            pt[n] = t
            px[n] = xi
            n += 1
        gap = np.inf
        for f in range(nf):
            gap = min(gap, abs(xi - force[f]))
        if gap < stop_gap:
            stopped = True
            break
        while si < snaps.shape[0] and t >= snaps[si] - 1e-12:
            snap_xi[si] = xi
            snap_force[si, :] = force
            snap_real[si, :] = real
            snap_g[si, :] = g
            snap_gp[si, :] = gp
            si += 1
    # a stopped path keeps its state at every later snapshot
    while si < snaps.shape[0]:
        snap_xi[si] = xi
        snap_force[si, :] = force
        snap_real[si, :] = real
        snap_g[si, :] = g
        snap_gp[si, :] = gp
        si += 1
    return xi, t, stopped, force, real, g, gp, pt[:n], px[:n], step


@nb.njit(cache=True, parallel=True)
def _sle_batch(x0, force0, rho, kappa, t_max, dt, seed, ids, z, r0, snaps, stop_gap,
               gap_factor, max_steps):
    P = ids.shape[0]
    S = snaps.shape[0]
    nf = force0.shape[0]
    o_xi = np.empty(P)
    o_t = np.empty(P)
    o_stop = np.zeros(P, dtype=np.bool_)
    o_force = np.empty((P, nf))
    o_real = np.empty((P, r0.shape[0]))
    o_g = np.empty((P, z.shape[0]), dtype=np.complex128)
    o_gp = np.empty((P, z.shape[0]), dtype=np.complex128)
    o_steps = np.empty(P, dtype=np.int64)
    s_xi = np.empty((S, P))
    s_force = np.empty((S, P, nf))
    s_real = np.empty((S, P, r0.shape[0]))
    s_g = np.empty((S, P, z.shape[0]), dtype=np.complex128)
    s_gp = np.empty((S, P, z.shape[0]), dtype=np.complex128)
    for p in nb.prange(P):
        sx = np.empty(S)
        sf = np.empty((S, nf))
        sr = np.empty((S, r0.shape[0]))
        sg = np.empty((S, z.shape[0]), dtype=np.complex128)
        sgp = np.empty((S, z.shape[0]), dtype=np.complex128)
        xi, t, st, f, r, g, gp, _, _, n = _sle_path(x0, force0, rho, kappa, t_max, dt, seed,
                                                  ids[p], z, r0, snaps, stop_gap, gap_factor,
                                                  False, max_steps, sx, sf, sr, sg, sgp)
        o_xi[p] = xi
        o_t[p] = t
        o_stop[p] = st
        o_force[p] = f
        o_real[p] = r
        o_g[p] = g
        o_gp[p] = gp
        o_steps[p] = n
        s_xi[:, p] = sx
        s_force[:, p] = sf
        s_real[:, p] = sr
        s_g[:, p] = sg
        s_gp[:, p] = sgp
    return o_xi, o_t, o_stop, o_force, o_real, o_g, o_gp, o_steps, s_xi, s_force, s_real, s_g, s_gp


def sample_sle_ensemble(x0, terminal, t_max, dt, seed, n_paths, variant="dipolar", kappa=2.0,
                        observers=(), real_observers=(), snapshot_times=(), first_stream=0,
                        stop_gap=1e-3, gap_factor=3e-4, keep_paths=False, max_steps=10 ** 8):
    """Euler-Maruyama sampling of chordal/dipolar SLE_kappa driving functions.

    Step ``k`` of path ``p`` draws the normal of counter ``(k, 1)`` in stream
    ``(seed, first_stream + p)`` (see :func:`lerwlab.rng.normals_at`), sets
    ``xi_k = xi_{k-1} + drift dt + sqrt(kappa dt) N`` and then applies the
    slit map with ``xi_k`` to the force points and observers (the
    right-point convention of :func:`integrate_chain`). The step is
    ``min(dt, gap_factor * gap^2)`` where ``gap`` is the distance to the
    nearest force point; a path stops when ``gap < stop_gap`` (the curve has
    reached its target) or at ``t_max``. Steps are shortened to land on
    ``snapshot_times``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if variant == "dipolar":
        lo, hi = as_interval(terminal)
        if lo <= x0 <= hi:
            raise ValueError("x0 must lie outside the interval")
        force0 = np.array([lo, hi], dtype=float)
        rho = (kappa - 6) / 2
    else:
        if terminal == x0:
            raise ValueError("x_inf coincides with x0")
        force0 = np.array([float(terminal)])
        rho = kappa - 6
    if dt <= 0 or t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    ids = np.arange(first_stream, first_stream + int(n_paths), dtype=np.uint64)
    z = np.atleast_1d(np.asarray(observers, dtype=complex))
    if np.any(z.imag <= 0):
        raise ValueError("observers must lie in the upper half-plane")
    r0 = np.atleast_1d(np.asarray(real_observers, dtype=float))
    snaps = np.array(sorted(float(s) for s in snapshot_times if 0 <= s <= t_max))
    args = (float(x0), force0, float(rho), float(kappa), float(t_max), float(dt), np.uint64(seed))
    if keep_paths:
        paths, outs = [], []
        S = len(snaps)
        snap = [np.empty((S, len(ids))), np.empty((S, len(ids), len(force0))),
                np.empty((S, len(ids), len(r0))), np.empty((S, len(ids), len(z)), complex),
                np.empty((S, len(ids), len(z)), complex)]
        for p, sid in enumerate(ids):
            sx, sf = np.empty(S), np.empty((S, len(force0)))
            sr, sg, sgp = np.empty((S, len(r0))), np.empty((S, len(z)), complex), \
                np.empty((S, len(z)), complex)
            res = _sle_path(*args, sid, z, r0, snaps, stop_gap, gap_factor, True, max_steps,
                            sx, sf, sr, sg, sgp)
            if res[9] < 0:
                raise RuntimeError("step limit reached")
            outs.append(res)
            paths.append((res[7].copy(), res[8].copy()))
            for k, arr in enumerate((sx, sf, sr, sg, sgp)):
                snap[k][:, p] = arr
        xi = np.array([o[0] for o in outs])
        t = np.array([o[1] for o in outs])
        stopped = np.array([o[2] for o in outs])
        force = np.array([o[3] for o in outs]).reshape(len(ids), -1)
        real = np.array([o[4] for o in outs]).reshape(len(ids), len(r0))
        g = np.array([o[5] for o in outs]).reshape(len(ids), len(z))
        gp = np.array([o[6] for o in outs]).reshape(len(ids), len(z))
        steps = np.array([o[9] for o in outs])
    else:
        paths = None
        xi, t, stopped, force, real, g, gp, steps, *snap = _sle_batch(
            *args, ids, z, r0, snaps, stop_gap, gap_factor, max_steps)
        if np.any(steps < 0):
            raise RuntimeError("step limit reached")
    snapshots = {float(s): tuple(a[k] for a in snap) for k, s in enumerate(snaps)}
    return SLEEnsemble(variant, kappa, float(x0), terminal, t, stopped, xi, force, real, g, gp,
                       z, r0, snapshots, paths, int(steps.max()) if len(steps) else 0)


def sample_dipolar_sle2(x0, interval, t_max, dt, seed, stream=0, **kw):
    """One dipolar SLE_2 driving function (``rho_d = -2``) from ``x0`` towards ``interval``."""
    ens = sample_sle_ensemble(x0, interval, t_max, dt, seed, 1, "dipolar", 2.0,
                              first_stream=stream, keep_paths=True, **kw)
    return ens.driving(0)


def sample_chordal_sle(x0, x_inf, t_max, dt, seed, stream=0, kappa=2.0, **kw):
    """One chordal SLE_kappa driving from ``x0`` to ``x_inf`` (``rho_c = kappa - 6``)."""
    ens = sample_sle_ensemble(x0, x_inf, t_max, dt, seed, 1, "chordal", kappa,
                              first_stream=stream, keep_paths=True, **kw)
    return ens.driving(0)


def quadratic_variation(driving, t=None):
    """``sum (xi_k - xi_{k-1})^2`` over ``[0, t]`` and the elapsed time."""
    times, xi = driving.times, driving.xi
    if t is not None:
        k = int(np.searchsorted(times, t + 1e-14))
        times, xi = times[:k], xi[:k]
    return float(np.sum(np.diff(xi) ** 2)), float(times[-1])


@dataclass
class EndpointHistogram:
    edges: np.ndarray
    frequency: np.ndarray          # per-bin probability
    std_error: np.ndarray
    n_paths: int
    stopped_fraction: float


def endpoint_histogram(x0, interval, edges, t_max, dt, seed, n_paths, first_stream=0, **kw):
    """Rao-Blackwellised end-point law of dipolar SLE_2 over the bins ``edges``.

    The bin edges are carried along as real observers. At the stop time the
    conditional probability of ending in a bin is the ratio of critical
    partition functions ``Z0(xi; mapped bin) / Z0(xi; mapped interval)``, which
    is averaged over paths. ``edges`` must span ``interval`` exactly.
    """
    lo, hi = as_interval(interval)
    edges = np.asarray(edges, dtype=float)
    if not (np.isclose(edges[0], lo) and np.isclose(edges[-1], hi)) or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must increase from one end of the interval to the other")
    ens = sample_sle_ensemble(x0, (lo, hi), t_max, dt, seed, n_paths, "dipolar", 2.0,
                              real_observers=edges[1:-1], first_stream=first_stream, **kw)
    e = np.concatenate([ens.force[:, :1], ens.real, ens.force[:, 1:]], axis=1)
    xi = ens.xi[:, None]
    z = (e[:, 1:] - e[:, :-1]) / ((xi - e[:, 1:]) * (xi - e[:, :-1]))
    p = z / z.sum(axis=1, keepdims=True)
    return EndpointHistogram(edges, p.mean(axis=0), p.std(axis=0, ddof=1) / np.sqrt(len(p)),
                             int(n_paths), float(ens.stopped.mean()))


# --- zipper ---------------------------------------------------------------------------

class SelfIntersectionError(ValueError):
    pass


@nb.njit(cache=True)
def _zip(w):
    m = w.shape[0]
    xi = np.empty(m)
    dts = np.empty(m)
    w = w.copy()
    for k in range(m):
        wk = w[k]
        x = wk.real
        d = wk.imag * wk.imag / 4.0
        xi[k] = x
        dts[k] = d
        for j in range(k + 1, m):
            u = w[j] - x
            r = np.sqrt(u * u + 4.0 * d)
            if r.imag < 0 or (r.imag == 0 and u.real < 0):
                r = -r
            w[j] = x + r
    return xi, dts


@nb.njit(cache=True)
def _segments_cross(p, q):
    # proper crossings between non-adjacent segments of the polyline
    n = p.shape[0] - 1
    for a in range(n):
        ax, ay, bx, by = p[a].real, p[a].imag, p[a + 1].real, p[a + 1].imag
        for b in range(a + 2, n):
            cx, cy, dx, dy = p[b].real, p[b].imag, p[b + 1].real, p[b + 1].imag
            d1 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            d2 = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
            d3 = (dx - cx) * (ay - cy) - (dy - cy) * (ax - cx)
            d4 = (dx - cx) * (by - cy) - (dy - cy) * (bx - cx)
            if d1 * d2 <= 0 and d3 * d4 <= 0:
                if d1 == 0 and d2 == 0:
                    # collinear: overlap test on the projections
                    if max(min(ax, bx), min(cx, dx)) <= min(max(ax, bx), max(cx, dx)) and \
                            max(min(ay, by), min(cy, dy)) <= min(max(ay, by), max(cy, dy)):
                        return True
                    continue
                return True
    return False


@dataclass
class CurvePolyline:
    """Polyline ``gamma_0 in R, gamma_1, ..., gamma_m in H``."""
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=complex)
        if v.ndim != 1 or len(v) < 2:
            raise ValueError("need at least two vertices")
        if v[0].imag != 0:
            raise ValueError("curve must start on the real axis")
        if np.any(v[1:].imag <= 0):
            raise ValueError("vertices after the first must lie in the upper half-plane")
        self.vertices = v

    def check_simple(self):
        if _segments_cross(self.vertices, self.vertices):
            raise SelfIntersectionError("polyline intersects itself")

    def __len__(self):
        return len(self.vertices)


def extract_driving(curve, check=True):
    """Vertical-slit zipper: driving function whose slit chain passes through the vertices.

    Vertex ``k`` is mapped by the composition of the previous slit maps to
    ``w_k``; the next slit is the vertical segment below ``w_k``, so
    ``xi_k = Re w_k`` and ``dt_k = (Im w_k)^2 / 4``.
    """
    if not isinstance(curve, CurvePolyline):
        curve = CurvePolyline(curve)
    if check:
        curve.check_simple()
    v = curve.vertices
    xi, dts = _zip(v[1:] - 0.0)
    # the first slit is based at the start point only up to the zipper's
    # vertical-segment approximation; keep the grid convention xi[0] = gamma_0
    times = np.concatenate([[0.0], np.cumsum(dts)])
    return DrivingSample(times, np.concatenate([[v[0].real], xi]), 2.0, "chordal", v[0].real,
                         None, False)


def trace(driving, every=1):
    """Exact tips ``g_{t_k}^{-1}(xi_k)`` of the slit chain, for ``k`` in steps of ``every``.

    Returns a :class:`CurvePolyline` starting at ``xi_0``.
    """
    t, xi = driving.times, driving.xi
    dts = np.diff(t)
    ks = np.arange(every, len(t), every)
    tips = np.empty(len(ks), dtype=complex)
    for n, k in enumerate(ks):
        w = complex(xi[k])
        for j in range(k, 0, -1):
            w = complex(slit_inverse(w, xi[j], dts[j - 1]))
        tips[n] = w
    return CurvePolyline(np.concatenate([[complex(xi[0])], tips]))


def trace_fast(driving, every=1):
    """Vectorised :func:`trace`: all requested tips pulled back together."""
    t, xi = driving.times, driving.xi
    dts = np.diff(t)
    ks = np.arange(every, len(t), every)
    w = xi[ks].astype(complex)
    for j in range(len(t) - 1, 0, -1):
        sel = ks >= j
        if sel.any():
            w[sel] = slit_inverse(w[sel], xi[j], dts[j - 1])
    return CurvePolyline(np.concatenate([[complex(xi[0])], w]))


@dataclass
class KappaEstimate:
    value: float
    std_error: float
    n_curves: int
    mean_time: float


def lerw_kappa_estimate(n_curves, seed, mesh=1 / 64, radius=2.0, escape_factor=1.5,
                        delta=0.01, first_stream=0):
    """Driving-increment variance of lattice chordal LERW, ``sum (d xi)^2 / sum dt``.

    Each curve is the loop erasure of a walk conditioned to escape, sampled
    out to ``escape_factor * radius`` and cut at its first exit from the
    half-disk of ``radius`` (macroscopic units). The zipper driving is read
    as a step function on a grid of spacing ``delta`` up to the largest grid
    time before the cut; the ratio estimator pools all increments and its
    error is the delta-method SE over curves.
    """
    from .lattice import sample_chordal_lerw
    r_sites = radius / mesh
    big = int(np.ceil(escape_factor * r_sites))
    num = np.zeros(n_curves)
    den = np.zeros(n_curves)
    for c in range(n_curves):
        p = sample_chordal_lerw(big, seed, first_stream + c)
        out = p[:, 0] ** 2 + p[:, 1] ** 2 >= r_sites ** 2
        k = int(np.argmax(out)) if out.any() else len(p) - 1
        d = extract_driving((p[:k + 1, 0] + 1j * p[:k + 1, 1]) * mesh, check=False)
        m = int(d.times[-1] / delta)
        if m == 0:
            continue
        grid = np.arange(m + 1) * delta
        xi = d.xi[np.searchsorted(d.times, grid, side="right") - 1]
        num[c] = np.sum(np.diff(xi) ** 2)
        den[c] = m * delta
    kappa = num.sum() / den.sum()
    se = np.sqrt(np.sum((num - kappa * den) ** 2)) / den.sum()
    return KappaEstimate(float(kappa), float(se), int(n_curves), float(den.mean()))


# --- observables -------------------------------------------------------------------------

def _n_value(g, gp, xi, force, variant):
    first = -np.log(2.0 * g.imag / np.abs(gp)) / np.pi
    if variant == "chordal":
        eta = force[..., 0]
        second = excursion_kernel(xi, g) * excursion_kernel(eta, g) / partition_chordal(xi, eta)
    else:
        xp, xm = force[..., 0], force[..., 1]
        h = (np.arctan2(g.imag, g.real - xm) - np.arctan2(g.imag, g.real - xp)) / np.pi
        z0 = (xm - xp) / ((xi - xm) * (xi - xp)) / np.pi
        second = excursion_kernel(xi, g) * h / z0
    return first + second


def n_observable(g, gp, xi, force, variant="dipolar"):
    """One-point function ``N`` of the perturbing field at ``g`` in the slit domain.

    Broadcasts over paths: ``g, gp`` shape ``(..., P)`` with ``xi`` shape
    ``(...)`` and ``force`` shape ``(..., F)``.
    """
    xi = np.asarray(xi, dtype=float)
    force = np.asarray(force, dtype=float)
    return _n_value(np.asarray(g), np.asarray(gp), xi[..., None], force[..., None, :], variant)


def martingale_N(chain, z, variant=None):
    """Time series ``N_t(z)`` along ``chain`` for the seeded observer ``z``.

    Entries after the observer was swallowed are ``nan``.
    """
    variant = variant or chain.driving.variant
    p = chain.index_of(z)[0]
    nf = 1 if variant == "chordal" else 2
    return n_observable(chain.g[:, p:p + 1], chain.gp[:, p:p + 1], chain.xi,
                        chain.boundary[:, :nf], variant)[:, 0]


def bubble_integral(chain, z, n_gauss=8):
    """``(4/pi) int_0^t (Im g_s)^2 / |g_s - xi_s|^4 ds`` at every grid time.

    Within a step ``g_s`` is the explicit slit flow, integrated by
    Gauss-Legendre on ``sqrt``-spaced nodes, which removes the endpoint
    behaviour of the integrand.
    """
    p = chain.index_of(z)[0]
    t = chain.times
    out = np.zeros(len(t))
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * (xg + 1)
    for k in range(1, len(t)):
        g0 = chain.g[k - 1, p]
        if np.isnan(g0):
            out[k:] = np.nan
            break
        dt = t[k] - t[k - 1]
        x = chain.xi[k]
        # substitute s = dt * v^2 so the integrand is smooth at the start
        v = s
        gs = slit_forward(g0, x, dt * v ** 2)
        f = gs.imag ** 2 / np.abs(gs - x) ** 4
        out[k] = out[k - 1] + 4.0 / np.pi * np.sum(0.5 * wg * f * 2 * v * dt)
    return out


def bubble_from_radius(chain, z):
    """``A_t - A_0 = -(1/pi) log(rho_t / rho_0)`` from the tracked conformal radius."""
    p = chain.index_of(z)[0]
    rho = chain.conformal_radius()[:, p]
    return -np.log(rho / rho[0]) / np.pi


def _node_values(chain, nu):
    nodes, w = nu.quadrature_nodes()
    keep = w > 0
    idx = chain.index_of(nodes[keep])
    if np.any(chain.swallowed[idx] >= 0):
        raise ValueError("a quadrature node inside supp(nu) was swallowed")
    return idx, w[keep]


def quadrature_observers(nu):
    """Observer points for :func:`integrate_chain` needed by the nu-functionals."""
    nodes, w = nu.quadrature_nodes()
    return nodes[w > 0]


def interface_energy(chain, nu):
    """``-(1/pi) int nu(z) log(rho_t(z) / rho_0(z)) d^2z`` at every grid time."""
    if nu.is_zero:
        return np.zeros(len(chain.times))
    idx, w = _node_values(chain, nu)
    rho = chain.conformal_radius()[:, idx]
    return -nu.eps * (np.log(rho / rho[0]) @ w) / np.pi


def first_order_RN(chain, nu, variant=None):
    """``(1 - eps int nu_tilde N_t) / (1 - eps int nu_tilde N_0)`` at every grid time."""
    if nu.is_zero:
        return np.ones(len(chain.times))
    variant = variant or chain.driving.variant
    idx, w = _node_values(chain, nu)
    nf = 1 if variant == "chordal" else 2
    N = n_observable(chain.g[:, idx], chain.gp[:, idx], chain.xi, chain.boundary[:, :nf], variant)
    s = N @ w
    return (1 - nu.eps * s) / (1 - nu.eps * s[0])


def _drift_integrand_dipolar(g, xi, xp, xm):
    h = (np.arctan2(g.imag, g.real - xm) - np.arctan2(g.imag, g.real - xp)) / np.pi
    return 4.0 * h / (xm - xp) * np.imag((g - xm) * (g - xp) / (g - xi) ** 2)


def _drift_integrand_chordal(g, xi, eta):
    return 2.0 * excursion_kernel(eta, g) * np.imag((g - eta) ** 2 / (g - xi) ** 2)


def dipolar_drift_correction(chain, nu, k=0):
    """First-order drift correction at grid index ``k`` by quadrature on the seeded nodes.

    ``4 eps int nu_tilde H(g; [X+, X-]) / (X- - X+) Im((g - X-)(g - X+)/(g - xi)^2)``.
    """
    if nu.is_zero:
        return 0.0
    idx, w = _node_values(chain, nu)
    g = chain.g[k, idx]
    xp, xm = chain.boundary[k, 0], chain.boundary[k, 1]
    return float(nu.eps * np.sum(w * _drift_integrand_dipolar(g, chain.xi[k], xp, xm)))


def chordal_drift_correction(chain, nu, k=0):
    """``2 eps int nu_tilde K(eta; g) Im((g - eta)^2 / (g - xi)^2)`` at grid index ``k``."""
    if nu.is_zero:
        return 0.0
    idx, w = _node_values(chain, nu)
    g = chain.g[k, idx]
    return float(nu.eps * np.sum(w * _drift_integrand_chordal(g, chain.xi[k], chain.boundary[k, 0])))


def drift_correction_t0(x0, terminal, nu, variant="dipolar", epsrel=1e-9):
    """The drift correction at ``t = 0`` (identity chain) by adaptive quadrature."""
    if nu.is_zero:
        return 0.0
    if variant == "dipolar":
        xp, xm = as_interval(terminal)
        f = lambda z: _drift_integrand_dipolar(z, x0, xp, xm)
    else:
        f = lambda z: _drift_integrand_chordal(z, x0, float(terminal))
    return float(nu.eps * nu.integrate(f, epsrel=epsrel))


def dipolar_drift(chain, nu, k=0):
    """Total first-order drift: critical ``SLE_2(-2, -2)`` part plus the correction."""
    xi = chain.xi[k]
    xp, xm = chain.boundary[k, 0], chain.boundary[k, 1]
    return -2.0 / (xi - xp) - 2.0 / (xi - xm) + dipolar_drift_correction(chain, nu, k)


@dataclass
class DriftEstimate:
    value: float
    std_error: float
    n: int

    def __iter__(self):
        yield self.value
        yield self.std_error


def girsanov_drift_estimate(x0, terminal, nu, dt, n, seed, variant="dipolar",
                            n_radial=16, n_angle=32, first_stream=0):
    """Drift of ``xi`` induced by the first-order weight ``1 - eps int nu_tilde N_t``.

    One critical Euler step of length ``dt`` per sample, with antithetic
    noise pairs; the estimate is ``E[dxi * d(-eps int nu_tilde N)] / dt``,
    i.e. the covariation rate of the driving with the log-weight.
    """
    nodes, w = nu.quadrature_nodes(n_radial, n_angle)
    keep = w > 0
    nodes, w = nodes[keep], w[keep]
    force0 = (np.array(tuple(as_interval(terminal)), dtype=float) if variant == "dipolar"
              else np.array([float(terminal)]))
    xi0 = np.array([float(x0)])
    N0 = n_observable(nodes[None, :], np.ones((1, len(nodes))), xi0, force0[None, :], variant)[0]
    F0 = -nu.eps * N0 @ w
    ids = np.arange(first_stream, first_stream + n, dtype=np.uint64)
    noise = normals_at(seed, ids, 0)
    drift = sle_drift(xi0, force0[None, :], variant)[0]
    vals = np.empty(n)
    chunk = 4096
    for a in range(0, n, chunk):
        e = noise[a:a + chunk]
        pair = []
        for sgn in (1.0, -1.0):
            x1 = x0 + drift * dt + sgn * np.sqrt(2.0 * dt) * e
            f1 = slit_forward_real(force0[None, :], x1[:, None], dt)
            g1 = slit_forward(nodes[None, :], x1[:, None], dt)
            gp1 = (nodes[None, :] - x1[:, None]) / (g1 - x1[:, None])
            N1 = n_observable(g1, gp1, x1, f1, variant)
            F1 = -nu.eps * N1 @ w
            pair.append((x1 - x0) * (F1 - F0) / dt)
        vals[a:a + chunk] = 0.5 * (pair[0] + pair[1])
    return DriftEstimate(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n)), int(n))
