"""Columnar plot data from result records, and matplotlib renderings of it."""

import csv
import os

import numpy as np

KINDS = {
    "endpoint-histogram": ("rb_histogram", ("bin_center", "frequency", "A_of_x", "std_error")),
    "driving-trace": ("driving_trace", ("t", "xi")),
    "gamma-slice": ("gamma_slice", ("x", "y", "gamma_value")),
}


class PlotDataError(ValueError):
    pass


def _rows(records, kind):
    method, cols = KINDS[kind]
    rows = []
    for r in records:
        if r.method != method:
            continue
        if kind == "endpoint-histogram":
            rows.append((r.params["bin_center"], r.value, r.params["A_of_x"], r.std_error))
        elif kind == "driving-trace":
            rows.append((r.params["t"], r.value))
        else:
            rows.append((r.params["x"], r.params["y"], r.value))
    return cols, rows


def available_kinds(records):
    methods = {r.method for r in records}
    return [k for k, (m, _) in KINDS.items() if m in methods]


def emit_plot_data(records, kind, path):
    """Write the ``kind`` columns of ``records`` as headered CSV to ``path``.

    Records must all come from one experiment and contain data for ``kind``.
    Returns the number of data rows.
    """
    if kind not in KINDS:
        raise PlotDataError(f"unknown kind {kind!r}; expected one of {sorted(KINDS)}")
    exps = {r.experiment for r in records}
    if len(exps) > 1:
        raise PlotDataError(f"records mix experiments: {sorted(exps)}")
    cols, rows = _rows(records, kind)
    if not rows:
        raise PlotDataError(f"no {kind} data in these records")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    return len(rows)


def read_plot_data(path):
    with open(path, encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r])
    return header, data


def render(kind, csv_path, png_path):
    """Render a column file written by :func:`emit_plot_data` to ``png_path``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, d = read_plot_data(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "endpoint-histogram":
        x, freq, A, se = d.T
        width = np.diff(x).min() if len(x) > 1 else 1.0
        ax.bar(x, freq, width=0.9 * width, yerr=3 * se, alpha=0.6, label="SLE$_2$ (3 SE)")
        ax.plot(x, A, "ko-", label="A(x)")
        ax.set_xlabel("end point")
        ax.set_ylabel("density")
        ax.legend()
    elif kind == "driving-trace":
        ax.plot(d[:, 0], d[:, 1], lw=1)
        ax.set_xlabel("t")
        ax.set_ylabel(r"$\xi_t$")
    elif kind == "gamma-slice":
        xs, ys = np.unique(d[:, 0]), np.unique(d[:, 1])
        grid = np.full((len(ys), len(xs)), np.nan)
        grid[np.searchsorted(ys, d[:, 1]), np.searchsorted(xs, d[:, 0])] = d[:, 2]
        m = ax.pcolormesh(xs, ys, grid, shading="nearest")
        fig.colorbar(m, ax=ax, label=r"$\Gamma$")
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    else:
        raise PlotDataError(f"unknown kind {kind!r}")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def write_report(records, out_dir):
    """Emit every available plot kind as ``<kind>.csv`` plus ``<kind>.png``."""
    written = []
    for kind in available_kinds(records):
        c = os.path.join(out_dir, f"{kind}.csv")
        emit_plot_data(records, kind, c)
        written += [c, render(kind, c, os.path.join(out_dir, f"{kind}.png"))]
    return written
