import os

import numpy as np
import pytest
import yaml

from lerwlab.cli import EXIT_CONFIG, main
from lerwlab.config import ConfigError, default_config, load_config, parse_config
from lerwlab.experiments import EXPERIMENTS, ResultRecord, list_experiments, records_from_csv, \
    records_to_csv, run_experiment
from lerwlab.plotting import KINDS, PlotDataError, available_kinds, emit_plot_data, \
    read_plot_data, render

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

SMALL_HITTING = {"mesh": 1 / 16, "box": [-3.0, 4.0, 3.0], "n_walks": 2000, "pde_h": 0.125,
                 "slice_h": 0.25, "slice_window": [0.0, 1.0, 0.5]}

BAD_NU = """experiment: hitting-triangle
seed: 3
params:
  nu:
    shape: disk
    eps: 1.0
    center: [0.0, 2.0]
    radius: -0.5
"""


# --- configuration -----------------------------------------------------------------

def test_parse_merges_defaults():
    cfg = parse_config("experiment: critical-hitting\nseed: 4\nparams:\n  n_walks: 10\n")
    assert cfg.seed == 4 and cfg.workers == 1
    assert cfg.params["n_walks"] == 10
    assert cfg.params["pde_tol"] == EXPERIMENTS["critical-hitting"].defaults["pde_tol"]
    assert yaml.safe_load(cfg.dump())["params"] == cfg.params


def test_overrides_beat_document():
    cfg = parse_config("experiment: toy-appendix\nseed: 4\nworkers: 2\n", seed=9, workers=3,
                       out="x")
    assert (cfg.seed, cfg.workers, cfg.out) == (9, 3, "x")


@pytest.mark.parametrize("name", sorted(EXPERIMENTS))
def test_shipped_configs_load(name):
    cfg = load_config(os.path.join(CONFIGS, f"{name}.yaml"))
    assert cfg.experiment == name


def test_registry_lists_eleven_criteria():
    crits = [c for c, _, _ in list_experiments()]
    assert sorted(crits) == list(range(1, 12))


def test_malformed_nu_names_field_and_line():
    with pytest.raises(ConfigError) as e:
        parse_config(BAD_NU)
    assert e.value.field == "params.nu.radius"
    assert e.value.line == 8
    assert "line 8" in str(e.value)


@pytest.mark.parametrize("text,field,line", [
    ("experiment: nope\n", "experiment", 1),
    ("experiment: toy-appendix\ncolour: red\n", "colour", 2),
    ("experiment: toy-appendix\nparams:\n  flavour: 1\n", "params.flavour", 3),
    ("experiment: critical-hitting\nparams:\n  n_walks: lots\n", "params.n_walks", 3),
    ("experiment: critical-hitting\nworkers: 0\n", "workers", 2),
    ("experiment: critical-hitting\nparams:\n  box: [-8.0, 8.0, 8.01]\n", "params.box", 3),
    ("experiment: critical-hitting\nparams:\n  sub: [0.5, 2.0]\n", "params.sub", 3),
    ("seed: 1\n", "experiment", 1),
])
def test_config_errors(text, field, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.field == field
    assert e.value.line == line


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as e:
        parse_config("experiment: toy-appendix\nparams: [1,\n")
    assert e.value.line is not None


def test_integral_float_accepted_for_int():
    cfg = parse_config("experiment: critical-hitting\nparams:\n  n_walks: 1.0e+3\n")
    assert cfg.params["n_walks"] == 1000 and isinstance(cfg.params["n_walks"], int)


# --- records ------------------------------------------------------------------------

def test_records_csv_roundtrip():
    recs = [ResultRecord("e", "m", 0.5, 0.01, 0.03, 10, True, 1, 0.2, {"x": 1.5, "k": [1, 2]}),
            ResultRecord("e", "n", 1.0)]
    back = records_from_csv(records_to_csv(recs))
    assert back == recs


def test_run_deterministic_across_workers():
    a = run_experiment(default_config("critical-hitting", seed=2, workers=1, **SMALL_HITTING))
    b = run_experiment(default_config("critical-hitting", seed=2, workers=2, **SMALL_HITTING))
    assert records_to_csv(a, include_wall_time=False) == records_to_csv(b, include_wall_time=False)


# --- plotting -------------------------------------------------------------------------

def _gamma_records():
    return [ResultRecord("critical-hitting", "gamma_slice", x * y, params={"x": x, "y": y})
            for x in (0.0, 0.5, 1.0) for y in (0.25, 0.5)]


@pytest.mark.parametrize("kind", sorted(KINDS))
def test_plot_columns_contract(tmp_path, kind):
    method, cols = KINDS[kind]
    params = {"bin_center": 1.5, "A_of_x": 0.4, "t": 0.1, "x": 1.0, "y": 2.0}
    recs = [ResultRecord("e", method, 0.25 * k, 0.01, params=params) for k in range(3)]
    assert available_kinds(recs) == [kind]
    path = tmp_path / "d.csv"
    assert emit_plot_data(recs, kind, str(path)) == 3
    header, data = read_plot_data(str(path))
    assert tuple(header) == cols
    assert data.shape == (3, len(cols))


def test_plot_data_errors(tmp_path):
    recs = _gamma_records()
    with pytest.raises(PlotDataError):
        emit_plot_data(recs + [ResultRecord("other", "gamma_slice", 0.0,
                                            params={"x": 0, "y": 0})], "gamma-slice",
                       str(tmp_path / "a.csv"))
    with pytest.raises(PlotDataError):
        emit_plot_data(recs, "driving-trace", str(tmp_path / "b.csv"))
    with pytest.raises(PlotDataError):
        emit_plot_data(recs, "scatter", str(tmp_path / "c.csv"))


@pytest.mark.parametrize("kind", sorted(KINDS))
def test_render_writes_png(tmp_path, kind):
    method, cols = KINDS[kind]
    params = {"bin_center": 1.5, "A_of_x": 0.4, "t": 0.1, "x": 1.0, "y": 2.0}
    recs = [ResultRecord("e", method, 0.1, 0.01, params={**params, "x": x, "y": y,
                                                         "t": x, "bin_center": x})
            for x in (0.0, 0.5, 1.0) for y in (0.25, 0.5)]
    emit_plot_data(recs, kind, str(tmp_path / "d.csv"))
    render(kind, str(tmp_path / "d.csv"), str(tmp_path / "d.png"))
    with open(tmp_path / "d.png", "rb") as f:
        assert f.read(8) == b"\x89PNG\r\n\x1a\n"


# --- command line ---------------------------------------------------------------------

def test_cli_list(capsys):
    assert main(["list-experiments"]) == 0
    out = capsys.readouterr().out
    for name in EXPERIMENTS:
        assert name in out


def test_cli_run_and_emit(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: zipper-roundtrip\nparams:\n  vertex_counts: [200, 400]\n"
                   "  rms_tol: 0.05\n")
    out = tmp_path / "run"
    code = main(["run", "--config", str(cfg), "--seed", "5", "--workers", "1", "--out", str(out)])
    assert code in (0, 3)
    meta = yaml.safe_load((out / "metadata.yaml").read_text())
    assert meta["config"]["seed"] == 5
    assert meta["config"]["params"]["fine_factor"] == 16
    assert (out / "records.csv").exists()
    assert (out / "driving-trace.png").exists()
    dest = tmp_path / "trace.csv"
    assert main(["emit-plot-data", "--records", str(out), "--kind", "driving-trace",
                 "--out", str(dest), "--png"]) == 0
    header, data = read_plot_data(str(dest))
    assert header == ["t", "xi"] and len(data) > 10
    assert np.all(np.diff(data[:, 0]) > 0)
    assert (tmp_path / "trace.png").exists()
    assert main(["emit-plot-data", "--records", str(out), "--kind", "gamma-slice"]) == EXIT_CONFIG


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(BAD_NU)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line 8" in err and "params.nu.radius" in err
