"""Run configuration: one YAML document per run, validated before any compute.

Layout::

    experiment: critical-hitting
    seed: 1
    workers: 1
    out: results/critical-hitting
    params:
      n_walks: 100000

Every recipe declares its parameters with defaults; the merged mapping
(defaults plus overrides) is what gets written back with the results, so an
output directory is self-describing.
"""

import copy
from dataclasses import dataclass, field

import yaml

TOP_LEVEL = ("experiment", "seed", "workers", "out", "params")


class ConfigError(ValueError):
    """Invalid configuration; carries the offending ``field`` and source ``line``."""

    def __init__(self, msg, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)


def _line_map(node, prefix="", out=None):
    """Map dotted key paths to 1-based source lines of a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _line_map(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = v.start_mark.line + 1
            _line_map(v, path, out)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    workers: int = 1
    out: str = None
    params: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict, repr=False, compare=False)

    def line(self, path):
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path.rsplit(".", 1)[0] if "." in path else ""
        return None

    def error(self, msg, path):
        return ConfigError(msg, path, self.line(path))

    def to_dict(self):
        return {"experiment": self.experiment, "seed": self.seed, "workers": self.workers,
                "out": self.out, "params": copy.deepcopy(self.params)}

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _check_type(value, default, path, cfg):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise cfg.error(f"expected true/false, got {value!r}", path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise cfg.error(f"expected an integer, got {value!r}", path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise cfg.error(f"expected a number, got {value!r}", path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise cfg.error(f"expected a string, got {value!r}", path)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise cfg.error(f"expected a list, got {value!r}", path)
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise cfg.error(f"expected a mapping, got {value!r}", path)
        return value
    return value


def build_config(raw, lines=None, seed=None, workers=None, out=None):
    """Validate a parsed mapping and merge recipe defaults.

    ``seed``, ``workers`` and ``out`` override the document when given.
    Raises :class:`ConfigError` naming the field (and line) at fault.
    """
    from .experiments import EXPERIMENTS

    lines = lines or {}
    probe = ExperimentConfig("?", lines=lines)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", None, 1)
    extra = [k for k in raw if k not in TOP_LEVEL]
    if extra:
        raise probe.error(f"unknown key (allowed: {', '.join(TOP_LEVEL)})", str(extra[0]))
    name = raw.get("experiment")
    if name is None:
        raise ConfigError("missing", "experiment", 1)
    if name not in EXPERIMENTS:
        raise probe.error(f"unknown experiment {name!r}; see list-experiments", "experiment")
    exp = EXPERIMENTS[name]
    cfg = ExperimentConfig(name, lines=lines)
    cfg.seed = _check_type(raw.get("seed", 0) if seed is None else seed, 0, "seed", cfg)
    cfg.workers = _check_type(raw.get("workers", 1) if workers is None else workers, 1,
                              "workers", cfg)
    if cfg.workers < 1:
        raise cfg.error("must be at least 1", "workers")
    if cfg.seed < 0:
        raise cfg.error("must be non-negative", "seed")
    o = raw.get("out") if out is None else out
    cfg.out = None if o is None else str(o)
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise cfg.error("expected a mapping", "params")
    merged = copy.deepcopy(exp.defaults)
    for k, v in params.items():
        path = f"params.{k}"
        if k not in exp.defaults:
            raise cfg.error(f"unknown parameter for {name} (allowed: {', '.join(exp.defaults)})",
                            path)
        merged[k] = _check_type(v, exp.defaults[k], path, cfg)
    cfg.params = merged
    exp.validate(cfg)
    return cfg


def parse_config(text, seed=None, workers=None, out=None):
    """Parse and validate a YAML document (see :func:`build_config`)."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}", None,
                          mark.line + 1 if mark else None) from None
    return build_config(raw, _line_map(node) if node is not None else {}, seed, workers, out)


def load_config(path, seed=None, workers=None, out=None):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), seed, workers, out)


def default_config(name, seed=0, workers=1, out=None, **params):
    """Config for recipe ``name`` with its defaults, optionally overriding ``params``."""
    return build_config({"experiment": name, "seed": seed, "workers": workers, "out": out,
                         "params": params})
