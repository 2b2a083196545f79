"""Command-line entry point: ``lerwlab run | list-experiments | emit-plot-data``."""

import argparse
import os
import platform
import sys
import time

import yaml

from .config import ConfigError, default_config, load_config
from .experiments import EXPERIMENTS, all_passed, list_experiments, records_from_csv, \
    records_to_csv, run_experiment
from .plotting import KINDS, PlotDataError, emit_plot_data, render, write_report

EXIT_CONFIG = 2
EXIT_FAILED = 3


def _versions():
    import numba
    import numpy
    import pyamg
    import scipy
    from . import __version__
    return {"lerwlab": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pyamg": pyamg.__version__}


def _summary_lines(records):
    for r in records:
        if r.passed is None:
            continue
        err = f" +- {r.std_error:.3g}" if r.std_error is not None else ""
        tol = f" (tol {r.tolerance:.3g})" if r.tolerance is not None else ""
        yield f"  {'PASS' if r.passed else 'FAIL'}  {r.method:<24} {r.value:.6g}{err}{tol}"


def cmd_run(args):
    if args.config:
        cfg = load_config(args.config, seed=args.seed, workers=args.workers, out=args.out)
    elif args.experiment:
        cfg = default_config(args.experiment, seed=args.seed or 0, workers=args.workers or 1,
                             out=args.out)
    else:
        raise ConfigError("give --config or --experiment")
    out = cfg.out or os.path.join("results", cfg.experiment)
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    records = run_experiment(cfg)
    wall = time.perf_counter() - t0
    with open(os.path.join(out, "records.csv"), "w", encoding="utf-8") as f:
        f.write(records_to_csv(records))
    meta = {"config": cfg.to_dict(), "criterion": EXPERIMENTS[cfg.experiment].criterion,
            "all_passed": all_passed(records), "wall_time": round(wall, 3),
            "n_records": len(records), "versions": _versions()}
    with open(os.path.join(out, "metadata.yaml"), "w", encoding="utf-8") as f:
        yaml.safe_dump(meta, f, sort_keys=False)
    files = [] if args.no_report else write_report(records, out)
    print(f"{cfg.experiment}: {'PASS' if meta['all_passed'] else 'FAIL'} "
          f"({wall:.1f} s, {len(records)} records -> {out})")
    for line in _summary_lines(records):
        print(line)
    for f in files:
        print(f"  wrote {f}")
    return 0 if meta["all_passed"] else EXIT_FAILED


def cmd_list(args):
    for crit, name, summary in list_experiments():
        print(f"{crit:>2}  {name:<20} {summary}")
        if args.defaults:
            text = yaml.safe_dump(EXPERIMENTS[name].defaults, sort_keys=False)
            print("".join(f"      {line}\n" for line in text.splitlines()), end="")
    return 0


def cmd_emit(args):
    src = args.records
    if os.path.isdir(src):
        src = os.path.join(src, "records.csv")
    with open(src, encoding="utf-8") as f:
        records = records_from_csv(f.read())
    out = args.out or os.path.join(os.path.dirname(src), f"{args.kind}.csv")
    n = emit_plot_data(records, args.kind, out)
    print(f"wrote {n} rows to {out}")
    if args.png:
        png = os.path.splitext(out)[0] + ".png"
        render(args.kind, out, png)
        print(f"wrote {png}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="lerwlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment and write records, metadata and plots")
    r.add_argument("--config", help="YAML run configuration")
    r.add_argument("--experiment", choices=sorted(EXPERIMENTS),
                   help="run a recipe with its defaults (instead of --config)")
    r.add_argument("--seed", type=int, help="override the configured seed")
    r.add_argument("--workers", type=int, help="threads for the parallel kernels")
    r.add_argument("--out", help="output directory (default results/<experiment>)")
    r.add_argument("--no-report", action="store_true", help="skip plot files")
    r.set_defaults(func=cmd_run)

    ls = sub.add_parser("list-experiments", help="list the named recipes")
    ls.add_argument("--defaults", action="store_true", help="also print default parameters")
    ls.set_defaults(func=cmd_list)

    e = sub.add_parser("emit-plot-data", help="write columnar plot data from stored records")
    e.add_argument("--records", required=True, help="records.csv or a run directory")
    e.add_argument("--kind", required=True, choices=sorted(KINDS))
    e.add_argument("--out", help="output CSV path")
    e.add_argument("--png", action="store_true", help="also render a PNG next to the CSV")
    e.set_defaults(func=cmd_emit)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (PlotDataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
