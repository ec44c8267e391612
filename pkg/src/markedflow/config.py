"""Flat ``key = value`` run configuration with a typed schema.

Blank lines and ``#`` comments are ignored. Every key has a type, a default
and an optional range; unknown keys are rejected with a spelling hint.
A bare leaf name such as ``epochs`` may stand for its full key
(``train.epochs``) whenever no other key shares that leaf.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .event_data import ParseError
from .hawkes import HawkesSpec
from .sampling import SampleConfig
from .training import TrainConfig

log = logging.getLogger(__name__)


class ConfigError(ParseError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "on", "yes", "1"):
        return True
    if low in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _parse_matrix(text: str) -> tuple[tuple[float, ...], ...]:
    """Rows separated by ``;``, entries by commas or spaces."""
    return tuple(_parse_floats(row) for row in text.split(";") if row.strip())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(", ".join(repr(x) for x in row) for row in value)
    if isinstance(value, tuple):
        return ", ".join(str(x) for x in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    doc: str
    check: Callable[[Any], bool] | None = None
    rule: str = ""

    @property
    def type_name(self) -> str:
        return {
            int: "int", float: "float", str: "str", _parse_bool: "bool", _parse_floats: "float list",
            _parse_ints: "int list", _parse_matrix: "matrix",
        }[self.parse]


def _pos(x) -> bool:
    return x > 0


def _ge1(x) -> bool:
    return x >= 1


SCHEMA: tuple[Key, ...] = (
    Key("data.path", str, "", "event file, one sequence per line"),
    Key("data.num_marks", int, 2, "number of mark types M", _ge1, ">= 1"),
    Key("data.split", _parse_floats, (0.8, 0.1, 0.1), "train/validation/test fractions",
        lambda f: len(f) == 3 and all(x > 0 for x in f) and abs(sum(f) - 1) < 1e-9, "three positive values summing to 1"),
    Key("data.split_seed", int, 0, "seed of the dataset split", lambda x: x >= 0, ">= 0"),
    Key("model.dim", int, 16, "history embedding size D (8, 16 or 32 recommended)", _ge1, ">= 1"),
    Key("model.layers", int, 1, "encoder layers (1 to 3 recommended)", _ge1, ">= 1"),
    Key("model.heads", int, 1, "attention heads; must divide model.dim", _ge1, ">= 1"),
    Key("model.psi_blocks", int, 2, "residual blocks in the output network", _ge1, ">= 1"),
    Key("model.sigma1", float, 0.001, "final standard deviation of the interval flow", lambda x: 0 < x < 1, "in (0, 1)"),
    Key("model.beta1", float, 1.0, "final accuracy of the mark flow", _pos, "> 0"),
    Key("model.x_min", float, -1.0, "lower clip of the normalised interval estimate"),
    Key("model.x_max", float, 1.0, "upper clip of the normalised interval estimate"),
    Key("model.flow_variance", str, "standard", "interval flow variance: standard or scaled",
        lambda x: x in ("standard", "scaled"), "standard or scaled"),
    Key("model.joint_noise", _parse_bool, True, "correlate interval and mark sender noise"),
    Key("train.K", int, 100, "discretisation steps K", _ge1, ">= 1"),
    Key("train.epochs", int, 200, "training epochs", _ge1, ">= 1"),
    Key("train.lr", float, 1e-4, "learning rate", _pos, "> 0"),
    Key("train.optimizer", str, "sgd", "sgd or adam", lambda x: x in ("sgd", "adam"), "sgd or adam"),
    Key("train.batch_size", int, 1, "sequences per update", _ge1, ">= 1"),
    Key("train.mc_samples", int, 1, "sender draws per loss term", _ge1, ">= 1"),
    Key("train.checkpoint_every", int, 0, "also checkpoint every N epochs (0 = only at the end)", lambda x: x >= 0, ">= 0"),
    Key("train.log_vlb", _parse_bool, False, "log the validation-split bound after each epoch"),
    Key("seed", int, 0, "seed of initialisation, training and sampling", lambda x: x >= 0, ">= 0"),
    Key("seeds", _parse_ints, (0, 1, 2), "seeds of multi-seed evaluation", lambda s: len(s) >= 1 and min(s) >= 0, "nonempty, >= 0"),
    Key("eval.num_samples", int, 100, "samples L per predicted event", _ge1, ">= 1"),
    Key("eval.point", str, "median", "point prediction rule: median or mean", lambda x: x in ("median", "mean"), "median or mean"),
    Key("eval.vlb", _parse_bool, True, "also report the variational bound"),
    Key("sample.count", int, 10, "draws recorded per held-out event", _ge1, ">= 1"),
    Key("inspect.bins", int, 11, "histogram bins of the cross-covariance", _ge1, ">= 1"),
    Key("output_dir", str, "runs", "directory receiving every output"),
    Key("hawkes.base_rates", _parse_floats, (0.2, 0.2), "base intensity per mark", lambda v: all(x > 0 for x in v), "all > 0"),
    Key("hawkes.excitation", _parse_matrix, ((0.8, 0.0), (0.0, 0.8)), "M x M excitation, rows separated by ';'",
        lambda m: all(x >= 0 for row in m for x in row), "all >= 0"),
    Key("hawkes.decay", float, 1.0, "kernel decay rate", _pos, "> 0"),
    Key("hawkes.horizon", float, 20.0, "observation window length", _pos, "> 0"),
    Key("hawkes.coupling_scales", _parse_floats, (0.2, 5.0), "interval multiplier after each mark",
        lambda v: all(x > 0 for x in v), "all > 0"),
    Key("hawkes.num_sequences", int, 500, "sequences to simulate", _ge1, ">= 1"),
)

_BY_NAME = {k.name: k for k in SCHEMA}
_leaf_counts: dict[str, list[str]] = {}
for _k in SCHEMA:
    _leaf_counts.setdefault(_k.name.rsplit(".", 1)[-1], []).append(_k.name)
# a bare leaf name (``epochs``) stands for its full key when it is unambiguous
_ALIASES = {leaf: names[0] for leaf, names in _leaf_counts.items() if len(names) == 1 and leaf not in _BY_NAME}


def canonical(name: str) -> str:
    if name in _BY_NAME:
        return name
    if name in _ALIASES:
        return _ALIASES[name]
    raise ConfigError(_unknown(name))


class Config(dict):
    """Validated mapping from key name to typed value."""

    def __getattr__(self, name: str):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def replace(self, **changes) -> "Config":
        out = Config(self)
        for name, value in changes.items():
            out[canonical(name)] = value
        _validate(out)
        return out

    def to_text(self) -> str:
        return "".join(f"{k.name} = {_fmt(self[k.name])}\n" for k in SCHEMA)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def to_json(self) -> dict:
        return {k: (list(map(list, v)) if k == "hawkes.excitation" else list(v) if isinstance(v, tuple) else v) for k, v in self.items()}

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"], lr=self["train.lr"], K=self["train.K"], sigma1=self["model.sigma1"],
            beta1=self["model.beta1"], joint_noise=self["model.joint_noise"], mc_samples=self["train.mc_samples"],
            seed=self["seed"], batch_size=self["train.batch_size"], optimizer=self["train.optimizer"],
            dim=self["model.dim"], layers=self["model.layers"], heads=self["model.heads"],
            psi_blocks=self["model.psi_blocks"], x_min=self["model.x_min"], x_max=self["model.x_max"],
            flow_variance=self["model.flow_variance"], checkpoint_every=self["train.checkpoint_every"],
        )

    def sample_config(self, seed: int | None = None) -> SampleConfig:
        return SampleConfig(
            K=self["train.K"], num_samples=self["eval.num_samples"], seed=self["seed"] if seed is None else seed,
            point=self["eval.point"],
        )

    def hawkes_spec(self) -> HawkesSpec:
        return HawkesSpec(
            base_rates=np.array(self["hawkes.base_rates"]), excitation=np.array(self["hawkes.excitation"]),
            decay=self["hawkes.decay"], horizon=self["hawkes.horizon"],
            coupling_scales=np.array(self["hawkes.coupling_scales"]),
        )


def _unknown(name: str) -> str:
    close = difflib.get_close_matches(name, list(_BY_NAME) + list(_ALIASES), n=1)
    if not close:
        leaf = difflib.get_close_matches(name.rsplit(".", 1)[-1], list(_ALIASES), n=1)
        close = [_ALIASES[leaf[0]]] if leaf else []
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return f"unknown key {name!r}{hint}"


def _validate(cfg: Config) -> None:
    for key in SCHEMA:
        value = cfg[key.name]
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"{key.name}: value must be finite")
        if key.check is not None and not key.check(value):
            raise ConfigError(f"{key.name}: value {_fmt(value)} out of range ({key.rule})")
    if cfg["model.x_min"] >= cfg["model.x_max"]:
        raise ConfigError("model.x_min: must be below model.x_max")
    if cfg["model.dim"] % cfg["model.heads"]:
        raise ConfigError("model.heads: must divide model.dim")
    if cfg["model.dim"] % 2:
        raise ConfigError("model.dim: must be even")
    M = len(cfg["hawkes.base_rates"])
    exc = cfg["hawkes.excitation"]
    if len(exc) != M or any(len(row) != M for row in exc):
        raise ConfigError(f"hawkes.excitation: must be {M} x {M} to match hawkes.base_rates")
    if len(cfg["hawkes.coupling_scales"]) != M:
        raise ConfigError(f"hawkes.coupling_scales: needs {M} entries to match hawkes.base_rates")
    if cfg["model.dim"] not in (8, 16, 32):
        log.warning("model.dim = %d is outside the explored grid {8, 16, 32}", cfg["model.dim"])
    if cfg["model.layers"] not in (1, 2, 3):
        log.warning("model.layers = %d is outside the explored grid {1, 2, 3}", cfg["model.layers"])


def defaults() -> Config:
    return Config({k.name: k.default for k in SCHEMA})


def parse_config_text(text: str, source: str = "<config>") -> Config:
    cfg = defaults()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        name, value = (part.strip() for part in line.split("=", 1))
        try:
            name = canonical(name)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
        if name in seen:
            raise ConfigError(f"{source}:{lineno}: {name} already set on line {seen[name]}")
        seen[name] = lineno
        key = _BY_NAME[name]
        try:
            cfg[name] = key.parse(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {name}: cannot read {value!r} as {key.type_name}") from exc
    _validate(cfg)
    return cfg


def parse_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def schema_text() -> str:
    """Aligned table of every key with type, default and description."""
    rows = [(k.name, k.type_name, _fmt(k.default), k.doc + (f" [{k.rule}]" if k.rule else "")) for k in SCHEMA]
    widths = [max(len(r[i]) for r in rows + [("key", "type", "default", "")]) for i in range(3)]
    head = f"{'key':<{widths[0]}}  {'type':<{widths[1]}}  {'default':<{widths[2]}}  description"
    body = [f"{a:<{widths[0]}}  {b:<{widths[1]}}  {c:<{widths[2]}}  {d}" for a, b, c, d in rows]
    return "\n".join([head, *body]) + "\n"


def dump_json(cfg: Config) -> str:
    return json.dumps(cfg.to_json(), sort_keys=True)
