"""Named experiment recipes, one per acceptance check, and their result records.

Each recipe takes a validated :class:`~lerwlab.config.ExperimentConfig` and
returns a list of :class:`ResultRecord`. Records with a ``passed`` flag are
checks; the others carry data (histogram bins, driving traces, field slices)
for :mod:`lerwlab.plotting`.
"""

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad

from .config import ConfigError
from .geometry import DomainError, as_interval, partition_chordal, partition_dipolar

CSV_FIELDS = ("experiment", "method", "value", "std_error", "tolerance", "n", "passed", "seed",
              "wall_time", "params")


@dataclass
class ResultRecord:
    experiment: str
    method: str
    value: float
    std_error: float = None
    tolerance: float = None
    n: int = None
    passed: bool = None
    seed: int = None
    wall_time: float = 0.0
    params: dict = field(default_factory=dict)

    def row(self):
        d = asdict(self)
        d["params"] = json.dumps(self.params, sort_keys=True)
        for k in ("value", "std_error", "tolerance", "wall_time"):
            if d[k] is not None:
                d[k] = repr(float(d[k]))
        return d


def records_to_csv(records, include_wall_time=True):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        row = r.row()
        if not include_wall_time:
            row["wall_time"] = ""
        w.writerow(row)
    return buf.getvalue()


def _parse(v, kind):
    if v == "" or v == "None":
        return None
    if kind == "bool":
        return v == "True"
    return kind(v)


def records_from_csv(text):
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(ResultRecord(row["experiment"], row["method"], _parse(row["value"], float),
                                _parse(row["std_error"], float), _parse(row["tolerance"], float),
                                _parse(row["n"], int), _parse(row["passed"], "bool"),
                                _parse(row["seed"], int), _parse(row["wall_time"], float) or 0.0,
                                json.loads(row["params"]) if row["params"] else {}))
    return out


class _Timer:
    def __init__(self):
        self.t = time.perf_counter()

    def lap(self):
        now = time.perf_counter()
        dt, self.t = now - self.t, now
        return dt


def _sub_seed(seed, k):
    # distinct Philox keys for the independent sub-runs of one recipe
    return int(seed) * 64 + int(k)


def _interval(cfg, key):
    v = cfg.params[key]
    if len(v) != 2:
        raise cfg.error("expected [lo, hi]", f"params.{key}")
    try:
        return as_interval(v)
    except (ValueError, TypeError) as e:
        raise cfg.error(str(e), f"params.{key}") from None


def _nu(cfg, key="nu", eps=None):
    from .nu import NuField, NuSpecError
    try:
        nu = NuField.from_dict(cfg.params[key])
    except NuSpecError as e:
        sub = e.field.split(".", 1)[1] if e.field and "." in e.field else None
        path = f"params.{key}" + (f".{sub}" if sub else "")
        raise cfg.error(str(e).split(": ", 1)[-1], path) from None
    return nu if eps is None else nu.scaled(eps)


def _positive(cfg, *keys):
    for k in keys:
        v = cfg.params[k]
        if isinstance(v, list):
            bad = [x for x in v if not (isinstance(x, (int, float)) and x > 0)]
        else:
            bad = [] if v > 0 else [v]
        if bad:
            raise cfg.error(f"must be positive, got {bad[0]!r}", f"params.{k}")


def _mesh_box(cfg):
    a = cfg.params["mesh"]
    x_lo, x_hi, y_hi = cfg.params["box"]
    for name, v in zip(("x_lo", "x_hi", "y_hi"), (x_lo, x_hi, y_hi)):
        if abs(v / a - round(v / a)) > 1e-9:
            raise cfg.error(f"{name} = {v} is not a multiple of the mesh", "params.box")
    return a, x_lo, x_hi, y_hi


def _hitting_geometry(cfg):
    from .hitting import HittingQuery
    u = _interval(cfg, "universe")
    s = _interval(cfg, "sub")
    try:
        q = HittingQuery(cfg.params["x0"], u, s)
    except (DomainError, ValueError) as e:
        raise cfg.error(str(e), "params.sub" if "sub" in str(e) else "params.x0") from None
    if "box" in cfg.params:
        _, x_lo, x_hi, y_hi = _mesh_box(cfg)
        if not (x_lo < min(q.x0, u.lo) and max(q.x0, u.hi) < x_hi and y_hi > 0):
            raise cfg.error("box must contain x0 and the universe interval", "params.box")
    return q


# --- criterion 1 -------------------------------------------------------------------

def _validate_critical_hitting(cfg):
    _hitting_geometry(cfg)
    _positive(cfg, "mesh", "n_walks", "pde_h", "pde_tol", "mc_sigma", "slice_h")


def run_critical_hitting(cfg):
    from .hitting import critical_hitting_probability, offcritical_hitting_probability, \
        solve_gamma
    from .lattice import LatticeDomain, estimate_hitting_ratio
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    q = _hitting_geometry(cfg)
    T = _Timer()
    exact = critical_hitting_probability(q)
    recs = [ResultRecord(name, "closed_form", exact, seed=seed, wall_time=T.lap())]
    pde = offcritical_hitting_probability(q, p["pde_h"])
    recs.append(ResultRecord(name, "pde", pde, tolerance=p["pde_tol"],
                             passed=bool(abs(pde - exact) <= p["pde_tol"]), seed=seed,
                             wall_time=T.lap(), params={"h": p["pde_h"], "richardson": True}))
    a, x_lo, x_hi, y_hi = _mesh_box(cfg)
    dom = LatticeDomain(a, x_lo, x_hi, y_hi, q.universe)
    est = estimate_hitting_ratio(dom, dom.start_site(q.x0), q.sub, p["n_walks"], _sub_seed(seed, 0))
    recs.append(ResultRecord(name, "mc", est.value, est.std_error,
                             tolerance=p["mc_sigma"] * est.std_error,
                             n=p["n_walks"],
                             passed=bool(abs(est.value - exact) <= p["mc_sigma"] * est.std_error),
                             seed=seed, wall_time=T.lap(), params={"mesh": a}))
    g = solve_gamma(q, p["slice_h"])
    xs, ys = g.coords()
    x_lo_s, x_hi_s, y_hi_s = p["slice_window"]
    for i in np.nonzero((xs >= x_lo_s - 1e-12) & (xs <= x_hi_s + 1e-12))[0]:
        for j in np.nonzero(ys <= y_hi_s + 1e-12)[0]:
            recs.append(ResultRecord(name, "gamma_slice", float(g.values[i, j]), seed=seed,
                                     params={"x": float(xs[i]), "y": float(ys[j]),
                                             "target": [q.sub.lo, q.sub.hi]}))
    recs[-1].wall_time = T.lap()
    return recs


# --- criterion 2 -------------------------------------------------------------------

def _validate_hitting_triangle(cfg):
    _hitting_geometry(cfg)
    _nu(cfg)
    _positive(cfg, "mesh", "n_walks", "pde_h", "mc_sigma")
    eps = cfg.params["eps"]
    if not eps or any(not isinstance(e, (int, float)) or e < 0 for e in eps):
        raise cfg.error("expected a list of non-negative amplitudes", "params.eps")
    lo, hi = cfg.params["scaling_band"]
    if not 0 < lo < hi:
        raise cfg.error("expected [lo, hi] with 0 < lo < hi", "params.scaling_band")


def run_hitting_triangle(cfg):
    from .hitting import critical_hitting_probability, first_order_hitting, \
        offcritical_hitting_probability
    from .lattice import LatticeDomain, estimate_hitting_ratio
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    q0 = _hitting_geometry(cfg)
    a, x_lo, x_hi, y_hi = _mesh_box(cfg)
    T = _Timer()
    recs = []
    exact = critical_hitting_probability(q0)
    base = offcritical_hitting_probability(q0, p["pde_h"])
    recs.append(ResultRecord(name, "pde_baseline", base, seed=seed, wall_time=T.lap(),
                             params={"eps": 0.0, "h": p["pde_h"]}))
    dev = {}
    for k, eps in enumerate(sorted(set(float(e) for e in p["eps"]))):
        nu = _nu(cfg, eps=eps)
        q = q0.with_nu(nu)
        tag = {"eps": eps}
        if eps == 0:
            recs.append(ResultRecord(name, "closed_form", exact, seed=seed, params=tag))
            pde = base
        else:
            pde = offcritical_hitting_probability(q, p["pde_h"])
        recs.append(ResultRecord(name, "pde", pde, seed=seed, wall_time=T.lap(),
                                 params={**tag, "h": p["pde_h"]}))
        dom = LatticeDomain(a, x_lo, x_hi, y_hi, q.universe, nu)
        est = estimate_hitting_ratio(dom, dom.start_site(q.x0), q.sub, p["n_walks"],
                                     _sub_seed(seed, k))
        tol = p["mc_sigma"] * est.std_error
        recs.append(ResultRecord(name, "mc", est.value, est.std_error, tolerance=tol,
                                 n=p["n_walks"], passed=bool(abs(est.value - pde) <= tol),
                                 seed=seed, wall_time=T.lap(), params={**tag, "mesh": a}))
        fo = first_order_hitting(q)
        recs.append(ResultRecord(name, "first_order", fo, seed=seed, wall_time=T.lap(),
                                 params=tag))
        if eps > 0:
            # discretisation error cancels against the eps = 0 solve
            dev[eps] = (pde - base) - (fo - exact)
            recs.append(ResultRecord(name, "deviation", dev[eps], seed=seed, params=tag))
    if len(dev) >= 2:
        e1, e2 = sorted(dev)[-2:]
        r = (e2 / e1) ** 2
        lo, hi = p["scaling_band"]
        ratio = dev[e2] / dev[e1]
        recs.append(ResultRecord(name, "deviation_ratio", ratio, tolerance=None, seed=seed,
                                 passed=bool(lo * r / 4 <= ratio <= hi * r / 4),
                                 params={"eps": [e1, e2], "band": [lo * r / 4, hi * r / 4]}))
    return recs


# --- criterion 3 -------------------------------------------------------------------

def _validate_correlator_check(cfg):
    p = cfg.params
    s = _interval(cfg, "target")
    if s.contains(p["x0"]):
        raise cfg.error("x0 lies in the target interval", "params.x0")
    _positive(cfg, "mesh", "n_samples", "rel_tol", "cell_side")
    _mesh_box(cfg)
    for k, pts in enumerate(p["insertions"]):
        if not isinstance(pts, list) or not pts:
            raise cfg.error("expected a non-empty list of [x, y] points",
                            f"params.insertions[{k}]")
        for z in pts:
            if not (isinstance(z, list) and len(z) == 2 and z[1] > 0):
                raise cfg.error(f"bad bulk point {z!r}", f"params.insertions[{k}]")


def run_correlator_check(cfg):
    from .correlators import CorrelatorSpec, connected_correlator
    from .lattice import LatticeDomain, exact_local_time_moment, run_rb_moments
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    a, x_lo, x_hi, y_hi = _mesh_box(cfg)
    s = _interval(cfg, "target")
    dom = LatticeDomain(a, x_lo, x_hi, y_hi, s)
    start = dom.start_site(p["x0"])
    side = int(p["cell_side"])
    T = _Timer()
    recs = []
    for k, pts in enumerate(p["insertions"]):
        cells = [complex(x, y) for x, y in pts]
        n = len(cells)
        tag = {"n": n, "insertions": pts}
        cont = connected_correlator(CorrelatorSpec(p["x0"], s, cells))
        recs.append(ResultRecord(name, "continuum", cont, seed=seed, wall_time=T.lap(),
                                 params=tag))
        norm = a * (side * a) ** (2 * n)
        if p["exact_lattice"]:
            lat = exact_local_time_moment(dom, start, cells, side=side) / norm
            recs.append(ResultRecord(name, "lattice_exact", lat, seed=seed, wall_time=T.lap(),
                                     params=tag))
        vals, _ = run_rb_moments(dom, start, cells, p["n_samples"], _sub_seed(seed, k),
                                 roulette=p["roulette"],
                                 split_radii=tuple(r * a for r in p["split_radii"]),
                                 split_k=p["split_k"], workers=cfg.workers, side=side)
        x = vals[:, 0] / norm
        m, se = float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))
        recs.append(ResultRecord(name, "mc", m, se, tolerance=p["rel_tol"] * abs(cont),
                                 n=p["n_samples"],
                                 passed=bool(abs(m - cont) <= p["rel_tol"] * abs(cont)),
                                 seed=seed, wall_time=T.lap(), params={**tag, "mesh": a}))
    return recs


# --- criterion 4 -------------------------------------------------------------------

def _validate_cumulant_check(cfg):
    p = cfg.params
    if any(s not in (1, -1) for s in p["loop_signs"]):
        raise cfg.error("loop signs must be +1 or -1", "params.loop_signs")
    pts = p["points"]
    if any(not (isinstance(z, list) and len(z) == 2 and z[1] > 0) for z in pts):
        raise cfg.error("expected [x, y] bulk points", "params.points")
    if max(p["ns"]) > len(pts) or min(p["ns"]) < 1:
        raise cfg.error("each n must be between 1 and the number of points", "params.ns")
    _interval(cfg, "terminal")


def run_cumulant_check(cfg):
    from .correlators import CorrelatorSpec, cumulant_factorization_check, wick_sum, \
        wick_sum_permutations
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    T = _Timer()
    pts = [complex(x, y) for x, y in p["points"]]
    recs = []
    terminals = [("dipolar", as_interval(p["terminal"]))]
    if p["x_inf"] is not None:
        terminals.append(("chordal", float(p["x_inf"])))
    for variant, term in terminals:
        for sign in p["loop_signs"]:
            worst = 0.0
            for n in p["ns"]:
                spec = CorrelatorSpec(p["x0"], term, pts[:n])
                d = cumulant_factorization_check(spec, loop_sign=sign)
                a, b = wick_sum(spec, sign), wick_sum_permutations(spec, sign)
                worst = max(worst, d, abs(a - b) / abs(a))
            recs.append(ResultRecord(name, f"factorization_{variant}", worst,
                                     tolerance=p["tol"], passed=bool(worst < p["tol"]),
                                     seed=seed, wall_time=T.lap(),
                                     params={"loop_sign": sign, "ns": p["ns"]}))
    return recs


# --- criterion 5 -------------------------------------------------------------------

def _validate_endpoint_density(cfg):
    p = cfg.params
    s = _interval(cfg, "interval")
    if s.contains(p["x0"]):
        raise cfg.error("x0 lies in the interval", "params.x0")
    _positive(cfg, "n_paths", "t_max", "dt", "bins", "n_configs", "sigma")


def run_endpoint_density(cfg):
    from .correlators import endpoint_density
    from .loewner import endpoint_histogram
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    x0 = p["x0"]
    lo, hi = _interval(cfg, "interval")
    T = _Timer()
    total, _ = quad(lambda x: endpoint_density(x0, (lo, hi), x), lo, hi, epsabs=1e-13,
                    epsrel=1e-13)
    recs = [ResultRecord(name, "density_integral", total, tolerance=p["integral_tol"],
                         passed=bool(abs(total - 1) <= p["integral_tol"]), seed=seed,
                         wall_time=T.lap())]
    rng = np.random.default_rng(_sub_seed(seed, 1))
    worst = 0.0
    for _ in range(p["n_configs"]):
        a, b = np.sort(rng.uniform(-5, 5, 2))
        if b - a < 0.1:
            b = a + 0.1
        side = rng.choice([-1.0, 1.0])
        y0 = a - rng.uniform(0.1, 5) if side < 0 else b + rng.uniform(0.1, 5)
        xi = rng.uniform(a + 1e-3, b - 1e-3)
        lhs = endpoint_density(y0, (a, b), xi)
        rhs = 0.5 * partition_chordal(y0, xi) / partition_dipolar(y0, (a, b))
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    recs.append(ResultRecord(name, "ratio_identity", worst, tolerance=p["identity_tol"],
                             n=p["n_configs"], passed=bool(worst <= p["identity_tol"]), seed=seed,
                             wall_time=T.lap()))
    edges = np.linspace(lo, hi, p["bins"] + 1)
    h = endpoint_histogram(x0, (lo, hi), edges, p["t_max"], p["dt"], _sub_seed(seed, 2),
                           p["n_paths"])
    wall = T.lap()
    zmax = 0.0
    for k in range(p["bins"]):
        a, b = edges[k], edges[k + 1]
        w = b - a
        expect, _ = quad(lambda x: endpoint_density(x0, (lo, hi), x), a, b)
        z = (h.frequency[k] - expect) / h.std_error[k]
        zmax = max(zmax, abs(z))
        recs.append(ResultRecord(
            name, "rb_histogram", h.frequency[k] / w, h.std_error[k] / w,
            tolerance=p["sigma"] * h.std_error[k] / w, n=p["n_paths"],
            passed=bool(abs(z) <= p["sigma"]), seed=seed,
            params={"bin_center": 0.5 * (a + b), "lo": a, "hi": b,
                    "A_of_x": expect / w, "A_at_center": endpoint_density(x0, (lo, hi),
                                                                           0.5 * (a + b))}))
    recs.append(ResultRecord(name, "histogram_max_z", zmax, tolerance=p["sigma"], n=p["n_paths"],
                             passed=bool(zmax <= p["sigma"]), seed=seed, wall_time=wall,
                             params={"stopped_fraction": h.stopped_fraction}))
    return recs


# --- criterion 6 -------------------------------------------------------------------

def _validate_loewner_exactness(cfg):
    _positive(cfg, "t", "n_steps", "tol")
    if any(not (isinstance(z, list) and len(z) == 2 and z[1] > 0) for z in cfg.params["observers"]):
        raise cfg.error("expected [x, y] bulk points", "params.observers")
    if any(m not in ("slit", "rk") for m in cfg.params["methods"]):
        raise cfg.error("methods are 'slit' and 'rk'", "params.methods")


def run_loewner_exactness(cfg):
    from .loewner import DrivingSample, integrate_chain
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    T = _Timer()
    t = p["t"]
    z = np.array([complex(x, y) for x, y in p["observers"]])
    d = DrivingSample(np.linspace(0, t, p["n_steps"] + 1), np.zeros(p["n_steps"] + 1))
    root = np.sqrt(z * z + 4 * t)
    root = np.where(root.imag < 0, -root, root)
    recs = []
    for method in p["methods"]:
        c = integrate_chain(d, z, swallow_factor=0, method=method)
        eg = float(np.max(np.abs(c.g[-1] / root - 1)))
        ep = float(np.max(np.abs(c.gp[-1] / (z / root) - 1)))
        err = max(eg, ep)
        recs.append(ResultRecord(name, method, err, tolerance=p["tol"], passed=bool(err <= p["tol"]),
                                 seed=seed, wall_time=T.lap(),
                                 params={"max_rel_err_g": eg, "max_rel_err_gprime": ep}))
    return recs


# --- criterion 7 -------------------------------------------------------------------

def _validate_zipper_roundtrip(cfg):
    p = cfg.params
    _positive(cfg, "vertex_counts", "t_max", "fine_factor", "rms_tol", "halving_factor")
    if any(not (isinstance(c, list) and len(c) == 3) for c in p["driving_terms"]):
        raise cfg.error("expected [amplitude, frequency, phase] triples", "params.driving_terms")
    if len(p["vertex_counts"]) < 2:
        raise cfg.error("need at least two vertex counts", "params.vertex_counts")


def _driving_fn(p):
    terms = np.array(p["driving_terms"], dtype=float)
    shift = p["driving_shift"]

    def f(t):
        t = np.asarray(t, dtype=float)
        return shift + sum(a * np.sin(w * t + ph) for a, w, ph in terms)

    return f


def run_zipper_roundtrip(cfg):
    from .loewner import DrivingSample, extract_driving, trace_fast
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    T = _Timer()
    f = _driving_fn(p)
    F = int(p["fine_factor"])
    recs = []
    rms = {}
    counts = sorted(int(m) for m in p["vertex_counts"])
    for m in counts:
        tt = np.linspace(0, p["t_max"], F * m + 1)
        curve = trace_fast(DrivingSample(tt, f(tt), x0=float(f(0.0))), every=F)
        ex = extract_driving(curve)
        # each extracted value is the constant driving of one step: compare at the midpoint
        mid = 0.5 * (ex.times[1:] + ex.times[:-1])
        rms[m] = float(np.sqrt(np.mean((ex.xi[1:] - f(mid)) ** 2)))
        right = float(np.sqrt(np.mean((ex.xi[1:] - f(ex.times[1:])) ** 2)))
        recs.append(ResultRecord(name, "rms_error", rms[m], tolerance=p["rms_tol"], n=m,
                                 passed=bool(rms[m] <= p["rms_tol"]), seed=seed,
                                 wall_time=T.lap(), params={"rms_right_point": right}))
        if m == counts[0]:
            for tk, xk in zip(ex.times, ex.xi):
                recs.append(ResultRecord(name, "driving_trace", float(xk), n=m, seed=seed,
                                         params={"t": float(tk), "xi_true": float(f(tk))}))
    for m1, m2 in zip(counts[:-1], counts[1:]):
        ratio = rms[m1] / rms[m2]
        need = p["halving_factor"] * (m2 / m1)
        recs.append(ResultRecord(name, "refinement_ratio", ratio, tolerance=need,
                                 passed=bool(ratio >= need), seed=seed,
                                 params={"from": m1, "to": m2}))
    return recs


# --- criterion 8 -------------------------------------------------------------------

def _validate_martingale_test(cfg):
    p = cfg.params
    s = _interval(cfg, "interval")
    if s.contains(p["x0"]):
        raise cfg.error("x0 lies in the interval", "params.x0")
    _positive(cfg, "times", "dt", "n_paths", "sigma", "bubble_tol", "monotone_grid")
    if any(not (isinstance(z, list) and len(z) == 2 and z[1] > 0) for z in p["observers"]):
        raise cfg.error("expected [x, y] bulk points", "params.observers")


def run_martingale_test(cfg):
    from .loewner import bubble_from_radius, bubble_integral, integrate_chain, n_observable, \
        sample_dipolar_sle2, sample_sle_ensemble
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    x0 = p["x0"]
    lo, hi = _interval(cfg, "interval")
    z = np.array([complex(x, y) for x, y in p["observers"]])
    times = sorted(float(t) for t in p["times"])
    t_max = times[-1]
    grid = np.linspace(0, t_max, int(p["monotone_grid"]) + 1)[1:]
    snaps = sorted(set(np.round(np.concatenate([grid, times]), 12)))
    T = _Timer()
    ens = sample_sle_ensemble(x0, (lo, hi), t_max, p["dt"], _sub_seed(seed, 0), p["n_paths"],
                              observers=z, snapshot_times=snaps)
    wall = T.lap()
    N0 = n_observable(z[None, :], np.ones((1, len(z))), np.array([x0]),
                      np.array([[lo, hi]]))[0]
    recs = []
    for t in times:
        xi, force, _, g, gp = ens.snapshots[round(t, 12)]
        N = n_observable(g, gp, xi, force)
        for k, zk in enumerate(z):
            col = N[:, k]
            col = col[np.isfinite(col)]
            m, se = float(col.mean()), float(col.std(ddof=1) / np.sqrt(len(col)))
            recs.append(ResultRecord(name, "N_mean", m, se, tolerance=p["sigma"] * se,
                                     n=len(col), passed=bool(abs(m - N0[k]) <= p["sigma"] * se),
                                     seed=seed, wall_time=wall,
                                     params={"t": t, "z": [float(zk.real), float(zk.imag)],
                                             "N0": float(N0[k])}))
    # A_t = -(1/pi) log(conformal radius) on the snapshot grid, per path
    A = np.stack([-np.log(2 * ens.snapshots[s][3].imag / np.abs(ens.snapshots[s][4])) / np.pi
                  for s in snaps])
    A0 = -np.log(2 * z.imag) / np.pi
    A = np.concatenate([np.broadcast_to(A0, (1,) + A.shape[1:]), A])
    dA = np.diff(A, axis=0)
    ok = np.isfinite(dA)
    violations = int(np.sum(dA[ok] < 0))
    recs.append(ResultRecord(name, "A_monotone_violations", violations, tolerance=0,
                             n=int(ok.sum()), passed=violations == 0, seed=seed,
                             params={"grid_points": len(snaps)}))
    d = sample_dipolar_sle2(x0, (lo, hi), t_max, p["dt"], _sub_seed(seed, 1))
    chain = integrate_chain(d, z, swallow_factor=0)
    worst = 0.0
    for zk in z:
        b1 = bubble_integral(chain, zk)[-1]
        b2 = bubble_from_radius(chain, zk)[-1]
        worst = max(worst, abs(b1 - b2) / abs(b2))
    recs.append(ResultRecord(name, "bubble_vs_radius", worst, tolerance=p["bubble_tol"],
                             passed=bool(worst <= p["bubble_tol"]), seed=seed, wall_time=T.lap(),
                             params={"t": float(d.times[-1])}))
    return recs


# --- criterion 9 -------------------------------------------------------------------

def _validate_drift_routes(cfg):
    p = cfg.params
    s = _interval(cfg, "interval")
    if s.contains(p["x0"]):
        raise cfg.error("x0 lies in the interval", "params.x0")
    _nu(cfg)
    _positive(cfg, "dt", "n", "rel_tol")


def run_drift_routes(cfg):
    from .loewner import drift_correction_t0, girsanov_drift_estimate
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    lo, hi = _interval(cfg, "interval")
    nu = _nu(cfg)
    T = _Timer()
    qv = drift_correction_t0(p["x0"], (lo, hi), nu)
    recs = [ResultRecord(name, "quadrature", qv, seed=seed, wall_time=T.lap())]
    est = girsanov_drift_estimate(p["x0"], (lo, hi), nu, p["dt"], p["n"], _sub_seed(seed, 0))
    tol = p["rel_tol"] * abs(qv)
    recs.append(ResultRecord(name, "girsanov", est.value, est.std_error, tolerance=tol, n=p["n"],
                             passed=bool(abs(est.value - qv) <= tol), seed=seed,
                             wall_time=T.lap(),
                             params={"dt": p["dt"], "z": (est.value - qv) / est.std_error}))
    return recs


# --- criterion 10 ------------------------------------------------------------------

def _validate_qv_kappa(cfg):
    p = cfg.params
    s = _interval(cfg, "interval")
    if s.contains(p["x0"]):
        raise cfg.error("x0 lies in the interval", "params.x0")
    _positive(cfg, "t_max", "dt", "n_paths", "sigma", "n_curves", "mesh", "radius", "delta",
              "kappa_rel_tol")
    if p["escape_factor"] <= 1:
        raise cfg.error("must exceed 1", "params.escape_factor")


def run_qv_kappa(cfg):
    from .loewner import lerw_kappa_estimate, quadratic_variation, sample_sle_ensemble
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    lo, hi = _interval(cfg, "interval")
    T = _Timer()
    ens = sample_sle_ensemble(p["x0"], (lo, hi), p["t_max"], p["dt"], _sub_seed(seed, 0),
                              p["n_paths"], keep_paths=True)
    r = np.array([quadratic_variation(ens.driving(k)) for k in range(p["n_paths"])])
    q = r[:, 0] / r[:, 1]
    m, se = float(q.mean()), float(q.std(ddof=1) / np.sqrt(len(q)))
    recs = [ResultRecord(name, "qv_rate", m, se, tolerance=p["sigma"] * se, n=p["n_paths"],
                         passed=bool(abs(m - 2.0) <= p["sigma"] * se), seed=seed,
                         wall_time=T.lap(), params={"expected": 2.0, "dt": p["dt"]})]
    k = lerw_kappa_estimate(p["n_curves"], _sub_seed(seed, 1), p["mesh"], p["radius"],
                            p["escape_factor"], p["delta"])
    recs.append(ResultRecord(name, "lerw_kappa", k.value, k.std_error,
                             tolerance=p["kappa_rel_tol"] * 2.0, n=p["n_curves"],
                             passed=bool(abs(k.value - 2.0) <= p["kappa_rel_tol"] * 2.0),
                             seed=seed, wall_time=T.lap(),
                             params={"mesh": p["mesh"], "delta": p["delta"],
                                     "mean_time": k.mean_time}))
    return recs


# --- criterion 11 ------------------------------------------------------------------

def _validate_toy_appendix(cfg):
    from .toy import ToyParams
    p = cfg.params
    _positive(cfg, "mu", "max_len", "n_samples", "ns", "sigma", "bm_t", "bm_steps")
    if ToyParams(p["mu"], p["gamma"]).w >= 1:
        raise cfg.error("2 mu cosh(gamma) must be below 1", "params.mu")


def run_toy_appendix(cfg):
    from .toy import ToyParams, brownian_martingale_mean, dressed_drift, toy_martingale_means, \
        toy_partition, toy_partition_bruteforce
    p, seed, name = cfg.params, cfg.seed, cfg.experiment
    T = _Timer()
    tp = ToyParams(p["mu"], p["gamma"])
    Z, L, V = toy_partition(tp)
    Zb, Lb, Vb, tail = toy_partition_bruteforce(tp, p["max_len"])
    # length-weighted tail: sum_{n > N} n w^n
    w, N = tp.w, p["max_len"]
    ltail = w ** (N + 1) * ((N + 1) - N * w) / (1 - w) ** 2
    recs = [
        ResultRecord(name, "Z", Z, tolerance=tail, passed=bool(-1e-14 <= Z - Zb <= tail + 1e-14),
                     seed=seed, params={"bruteforce": float(Zb), "max_len": N}),
        ResultRecord(name, "mean_length", L, tolerance=ltail,
                     passed=bool(-1e-14 <= L - Lb <= ltail + 1e-14),
                     seed=seed, params={"bruteforce": float(Lb), "max_len": N}),
        ResultRecord(name, "endpoint_variance", V, seed=seed, wall_time=T.lap(),
                     params={"bruteforce": float(Vb), "max_len": N}),
    ]
    for r in toy_martingale_means(p["mart_gamma"], p["ns"], p["n_samples"], _sub_seed(seed, 0)):
        recs.append(ResultRecord(name, "Q_mean", r.mean, r.se, tolerance=p["sigma"] * r.se,
                                 n=p["n_samples"], passed=bool(abs(r.z) <= p["sigma"]),
                                 seed=seed, params={"steps": r.n, "gamma": p["mart_gamma"]}))
    recs[-1].wall_time = T.lap()
    n = max(p["ns"])
    m, se = dressed_drift(p["mart_gamma"], n, p["n_samples"], _sub_seed(seed, 1))
    ex = n * np.tanh(p["mart_gamma"])
    recs.append(ResultRecord(name, "dressed_drift", m, se, tolerance=p["sigma"] * se,
                             n=p["n_samples"], passed=bool(abs(m - ex) <= p["sigma"] * se),
                             seed=seed, wall_time=T.lap(), params={"steps": n, "expected": float(ex)}))
    b = brownian_martingale_mean(p["bm_g"], p["bm_t"], p["bm_steps"], p["n_samples"],
                                 _sub_seed(seed, 2))
    recs.append(ResultRecord(name, "M_mean", b.mean, b.se, tolerance=p["sigma"] * b.se,
                             n=p["n_samples"], passed=bool(abs(b.z) <= p["sigma"]), seed=seed,
                             wall_time=T.lap(), params={"g": p["bm_g"], "t": p["bm_t"]}))
    return recs


# --- registry --------------------------------------------------------------------------

@dataclass(frozen=True)
class Experiment:
    name: str
    criterion: int
    summary: str
    defaults: dict
    run: object
    validate: object


_DISK = {"shape": "disk", "eps": 1.0, "center": [0.0, 2.0], "radius": 0.5}

EXPERIMENTS = {e.name: e for e in (
    Experiment("critical-hitting", 1, "critical subinterval hitting: closed form, PDE, MC",
               {"x0": 0.0, "universe": [1.0, 3.0], "sub": [1.0, 2.0], "mesh": 1 / 64,
                "box": [-8.0, 8.0, 8.0], "n_walks": 100_000, "pde_h": 1 / 32, "pde_tol": 1e-3,
                "mc_sigma": 3.0, "slice_h": 1 / 16, "slice_window": [-1.0, 4.0, 3.0]},
               run_critical_hitting, _validate_critical_hitting),
    Experiment("hitting-triangle", 2, "off-critical hitting: PDE vs weighted MC vs first order",
               {"x0": 0.0, "universe": [1.0, 3.0], "sub": [1.0, 2.0], "nu": dict(_DISK),
                "eps": [0.1, 0.2, 0.4], "mesh": 1 / 64, "box": [-8.0, 8.0, 8.0],
                "n_walks": 100_000, "pde_h": 1 / 32, "mc_sigma": 3.0,
                "scaling_band": [2.0, 8.0]},
               run_hitting_triangle, _validate_hitting_triangle),
    Experiment("correlator-check", 3, "local-time moments vs connected correlators",
               {"x0": 0.0, "target": [0.25, 0.75], "mesh": 1 / 64, "box": [-6.0, 6.0, 6.0],
                "cell_side": 4, "insertions": [[[0.25, 0.25]], [[0.25, 0.25], [0.5, 0.25]]],
                "n_samples": 1_000_000, "rel_tol": 0.05, "roulette": 0.5,
                "split_radii": [2.0, 4.0, 8.0], "split_k": 2, "exact_lattice": True},
               run_correlator_check, _validate_correlator_check),
    Experiment("cumulant-check", 4, "diagram sum factorises into connected parts times loops",
               {"x0": 0.0, "terminal": [1.0, 3.0], "x_inf": 2.0,
                "points": [[0.3, 0.7], [1.4, 0.4], [2.2, 1.1]], "ns": [2, 3],
                "loop_signs": [1, -1], "tol": 1e-10},
               run_cumulant_check, _validate_cumulant_check),
    Experiment("endpoint-density", 5, "end-point law of dipolar LERW / SLE_2",
               {"x0": 0.0, "interval": [1.0, 3.0], "n_paths": 10_000, "t_max": 4.0, "dt": 1e-3,
                "bins": 8, "sigma": 3.0, "integral_tol": 1e-10, "n_configs": 100,
                "identity_tol": 1e-12},
               run_endpoint_density, _validate_endpoint_density),
    Experiment("loewner-exactness", 6, "zero driving reproduces sqrt(z^2 + 4t)",
               {"t": 1.0, "n_steps": 1000, "observers": [[0.0, 1.0], [0.5, 0.5], [2.0, 0.1],
                                                         [-1.0, 2.0]],
                "methods": ["slit", "rk"], "tol": 1e-6},
               run_loewner_exactness, _validate_loewner_exactness),
    Experiment("zipper-roundtrip", 7, "driving extraction from curves of known driving",
               {"driving_terms": [[0.6, 3.0, 0.0], [0.3, 7.0, np.pi / 2]], "driving_shift": -0.3,
                "t_max": 1.0, "vertex_counts": [1000, 2000], "fine_factor": 16,
                "rms_tol": 5e-3, "halving_factor": 1.0},
               run_zipper_roundtrip, _validate_zipper_roundtrip),
    Experiment("martingale-test", 8, "N_t(z) martingale, A_t monotone, bubble integral",
               {"x0": 0.0, "interval": [1.0, 3.0], "observers": [[1.0, 1.0], [2.0, 0.5]],
                "times": [0.1, 0.2], "dt": 1e-4, "n_paths": 10_000, "sigma": 3.0,
                "monotone_grid": 20, "bubble_tol": 1e-6},
               run_martingale_test, _validate_martingale_test),
    Experiment("drift-routes", 9, "first-order drift: quadrature vs Girsanov",
               {"x0": 0.0, "interval": [1.0, 3.0], "nu": dict(_DISK), "dt": 1e-5, "n": 100_000,
                "rel_tol": 0.05},
               run_drift_routes, _validate_drift_routes),
    Experiment("qv-kappa", 10, "quadratic variation of SLE_2 and kappa from lattice LERW",
               {"x0": 0.0, "interval": [1.0, 3.0], "t_max": 1.0, "dt": 1e-3, "n_paths": 400,
                "sigma": 3.0, "n_curves": 10_000, "mesh": 1 / 64, "radius": 2.0,
                "escape_factor": 1.5, "delta": 0.01, "kappa_rel_tol": 0.1},
               run_qv_kappa, _validate_qv_kappa),
    Experiment("toy-appendix", 11, "1D weighted walk: partition function and martingales",
               {"mu": 0.25, "gamma": 0.0, "max_len": 40, "mart_gamma": 0.1,
                "ns": [1, 10, 100], "n_samples": 100_000, "sigma": 3.0, "bm_g": 1.0,
                "bm_t": 1.0, "bm_steps": 100},
               run_toy_appendix, _validate_toy_appendix),
)}


def list_experiments():
    return [(e.criterion, e.name, e.summary) for e in
            sorted(EXPERIMENTS.values(), key=lambda e: e.criterion)]


def run_experiment(cfg):
    """Run the recipe named by ``cfg`` and return its records.

    ``cfg.workers`` sets the thread count of the parallel kernels; results do
    not depend on it because every walk or path draws from its own
    counter-based stream.
    """
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}", "experiment")
    import numba
    numba.set_num_threads(max(1, min(int(cfg.workers), numba.config.NUMBA_NUM_THREADS)))
    return EXPERIMENTS[cfg.experiment].run(cfg)


def all_passed(records):
    flags = [r.passed for r in records if r.passed is not None]
    return bool(flags) and all(flags)
