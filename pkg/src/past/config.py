"""Experiment configuration: dataclasses plus an INI reader/writer.

Sections: [data], [model], [optim], [defense], [run]. Grids (alpha, lambda)
are comma-separated lists.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from .data import SyntheticSpec
from .nn import OptimConfig

DEFENSES = ("none", "past", "l1", "l2", "lossgap")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path
        self.message = message


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    csv_path: str | None = None
    has_header: bool = False


@dataclass(frozen=True)
class DefenseConfig:
    name: str = "none"
    lam: tuple[float, ...] = (1e-2,)
    alpha: tuple[float, ...] | None = (2.5,)
    mu: float = 1.0
    gap_batch_limit: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    layer_widths: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    optim: OptimConfig = field(default_factory=OptimConfig)
    tuning_lr0: float = 0.01
    standard_epochs: int = 60
    tuning_epochs: int = 20
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    seed: int = 0
    out_dir: str = "runs/default"
    query_size: int | None = None

    def with_defense(self, **kw) -> "ExperimentConfig":
        return replace(self, defense=replace(self.defense, **kw))

    def tuning_optim(self) -> OptimConfig:
        return replace(self.optim, lr0=self.tuning_lr0)


def _floats(text: str, where: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(where, f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(where, "grid must not be empty")
    return vals


def parse_grid(text: str, where: str) -> tuple[float, ...]:
    return _floats(text, where)


def _get(cp, section, key, conv, default, where=None):
    where = where or f"{section}.{key}"
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, f"cannot parse {raw!r} ({exc})") from None


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


KNOWN = {
    "data": {"source", "num_classes", "dim", "per_class_count", "cluster_spread", "label_noise",
             "csv_path", "has_header"},
    "model": {"layer_widths", "activation"},
    "optim": {"lr0", "momentum", "weight_decay", "batch_size", "tuning_lr0"},
    "defense": {"name", "lambda", "alpha", "mu", "gap_batch_limit"},
    "run": {"seed", "standard_epochs", "tuning_epochs", "out_dir", "query_size"},
}


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    for section in cp.sections():
        if section not in KNOWN:
            raise ConfigError(section, "unknown section")
        for key in cp[section]:
            if key not in KNOWN[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    base = ExperimentConfig()
    source = _get(cp, "data", "source", str, "synthetic")
    csv_path = _get(cp, "data", "csv_path", str, None)
    synth_keys = {"num_classes", "dim", "per_class_count", "cluster_spread", "label_noise"}
    has_synth = cp.has_section("data") and any(cp.has_option("data", k) for k in synth_keys)
    if source == "synthetic":
        if csv_path is not None:
            raise ConfigError("data.csv_path", "given together with source = synthetic; pick one data source")
        d = SyntheticSpec()
        try:
            synth = SyntheticSpec(
                num_classes=_get(cp, "data", "num_classes", int, d.num_classes),
                dim=_get(cp, "data", "dim", int, d.dim),
                per_class_count=_get(cp, "data", "per_class_count", int, d.per_class_count),
                cluster_spread=_get(cp, "data", "cluster_spread", float, d.cluster_spread),
                label_noise=_get(cp, "data", "label_noise", float, d.label_noise),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("data", str(exc)) from None
        data = DataConfig("synthetic", synth, None)
    elif source == "csv":
        if csv_path is None:
            raise ConfigError("data.csv_path", "required when source = csv")
        if has_synth:
            raise ConfigError("data", "synthetic generator keys given together with source = csv")
        data = DataConfig("csv", None, csv_path, _get(cp, "data", "has_header", _bool, False))
    else:
        raise ConfigError("data.source", f"must be 'synthetic' or 'csv', got {source!r}")

    widths = _get(cp, "model", "layer_widths", lambda s: tuple(int(t) for t in s.split(",")), base.layer_widths)
    if not widths or any(w < 1 for w in widths):
        raise ConfigError("model.layer_widths", "widths must be positive integers")
    activation = _get(cp, "model", "activation", str, base.activation)
    if activation not in ("relu", "tanh"):
        raise ConfigError("model.activation", f"must be relu or tanh, got {activation!r}")

    o = base.optim
    try:
        optim = OptimConfig(
            lr0=_get(cp, "optim", "lr0", float, o.lr0),
            momentum=_get(cp, "optim", "momentum", float, o.momentum),
            weight_decay=_get(cp, "optim", "weight_decay", float, o.weight_decay),
            batch_size=_get(cp, "optim", "batch_size", int, o.batch_size),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("optim", str(exc)) from None
    tuning_lr0 = _get(cp, "optim", "tuning_lr0", float, base.tuning_lr0)
    if not tuning_lr0 > 0:
        raise ConfigError("optim.tuning_lr0", "must be > 0")

    dd = base.defense
    name = _get(cp, "defense", "name", str, dd.name)
    if name not in DEFENSES:
        raise ConfigError("defense.name", f"must be one of {DEFENSES}, got {name!r}")
    lam = _get(cp, "defense", "lambda", lambda s: _floats(s, "defense.lambda"), dd.lam)
    alpha = _get(cp, "defense", "alpha", lambda s: _floats(s, "defense.alpha"), dd.alpha)
    if cp.has_section("defense") and not cp.has_option("defense", "alpha") and name == "past":
        alpha = None
    mu = _get(cp, "defense", "mu", float, dd.mu)
    gbl = _get(cp, "defense", "gap_batch_limit", int, None)
    defense = DefenseConfig(name, lam, alpha, mu, gbl)
    validate_defense(defense)

    cfg = ExperimentConfig(
        data=data,
        layer_widths=widths,
        activation=activation,
        optim=optim,
        tuning_lr0=tuning_lr0,
        standard_epochs=_get(cp, "run", "standard_epochs", int, base.standard_epochs),
        tuning_epochs=_get(cp, "run", "tuning_epochs", int, base.tuning_epochs),
        defense=defense,
        seed=_get(cp, "run", "seed", int, base.seed),
        out_dir=_get(cp, "run", "out_dir", str, base.out_dir),
        query_size=_get(cp, "run", "query_size", int, None),
    )
    if cfg.standard_epochs < 1:
        raise ConfigError("run.standard_epochs", "must be >= 1")
    if cfg.tuning_epochs < 1:
        raise ConfigError("run.tuning_epochs", "must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("run.seed", "must be a non-negative integer")
    return cfg


def validate_defense(d: DefenseConfig) -> None:
    if d.name == "past" and not d.alpha:
        raise ConfigError("defense.alpha", "defense = past requires alpha")
    if any(v < 0 for v in d.lam):
        raise ConfigError("defense.lambda", "must be >= 0")
    if d.alpha and any(v < 0 for v in d.alpha):
        raise ConfigError("defense.alpha", "must be >= 0")
    if d.mu < 0:
        raise ConfigError("defense.mu", "must be >= 0")
    if d.gap_batch_limit is not None and d.gap_batch_limit < 1:
        raise ConfigError("defense.gap_batch_limit", "must be a positive integer")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    return parse_config(path.read_text())


def _fmt_grid(vals):
    return ",".join(repr(float(v)) for v in vals)


def dump_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    if cfg.data.source == "synthetic":
        s = cfg.data.synthetic
        cp["data"] = {
            "source": "synthetic",
            "num_classes": str(s.num_classes),
            "dim": str(s.dim),
            "per_class_count": str(s.per_class_count),
            "cluster_spread": repr(s.cluster_spread),
            "label_noise": repr(s.label_noise),
        }
    else:
        cp["data"] = {"source": "csv", "csv_path": cfg.data.csv_path, "has_header": str(cfg.data.has_header).lower()}
    cp["model"] = {"layer_widths": ",".join(map(str, cfg.layer_widths)), "activation": cfg.activation}
    o = cfg.optim
    cp["optim"] = {
        "lr0": repr(o.lr0),
        "momentum": repr(o.momentum),
        "weight_decay": repr(o.weight_decay),
        "batch_size": str(o.batch_size),
        "tuning_lr0": repr(cfg.tuning_lr0),
    }
    d = cfg.defense
    sect = {"name": d.name, "lambda": _fmt_grid(d.lam), "mu": repr(d.mu)}
    if d.alpha:
        sect["alpha"] = _fmt_grid(d.alpha)
    if d.gap_batch_limit is not None:
        sect["gap_batch_limit"] = str(d.gap_batch_limit)
    cp["defense"] = sect
    run = {
        "seed": str(cfg.seed),
        "standard_epochs": str(cfg.standard_epochs),
        "tuning_epochs": str(cfg.tuning_epochs),
        "out_dir": cfg.out_dir,
    }
    if cfg.query_size is not None:
        run["query_size"] = str(cfg.query_size)
    cp["run"] = run
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
