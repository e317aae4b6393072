"""Run configuration: defaults, YAML loading, strict key checking, overrides and digest.

Precedence, lowest to highest: built-in defaults, the config file, command-line flags.
"""

from __future__ import annotations

import copy
import dataclasses
import datetime as dt
import hashlib
import json
from pathlib import Path

import yaml

from .embed import Attri2VecConfig, SageConfig, WalkConfig
from .ingest import DEFAULT_PRIMARY_CARE, StudyWindow
from .linkpred import ExperimentSettings
from .synth import SynthConfig


class ConfigError(ValueError):
    """Bad configuration; ``key`` is the dotted path of the offending entry when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def _fields(cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.default is not dataclasses.MISSING:
            value = f.default
        else:
            value = f.default_factory()
        if isinstance(value, tuple):
            value = list(value)
        if dataclasses.is_dataclass(value):
            value = _fields(type(value))
        out[f.name] = value
    return out


def default_config() -> dict:
    experiment = _fields(ExperimentSettings, skip=("walk", "sage", "attri2vec"))
    experiment.update({
        "models": ["node2vec", "graphsage", "attri2vec"],
        "feature_sets": ["without_social", "with_social"],
        "replicates": 5,
        "walk": _fields(WalkConfig),
        "graphsage": _fields(SageConfig),
        "attri2vec": _fields(Attri2VecConfig),
    })
    return {
        "seed": 0,
        "out_dir": "out",
        "jobs": 1,
        "paths": {"consultations": None, "physicians": None},
        "study": {
            "start": "2012-01-01",
            "end": "2017-12-31",
            "max_gap_days": 30,
            "primary_care": list(DEFAULT_PRIMARY_CARE),
            "study_end_year": 2017,
        },
        "synth": _fields(SynthConfig, skip=("seed", "start", "end")),
        "embed": {"model": "graphsage", "features": "with_social"},
        "experiment": experiment,
        "explain": {
            "feature_set": "base",
            "n_explain": 200,
            "background_size": 100,
            "epochs": 30,
            "top_k": 10,
        },
    }


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    """Merge ``update`` into ``base`` in place; unknown keys raise."""
    if not isinstance(update, dict):
        raise ConfigError(f"expected a mapping at {prefix or 'top level'}", prefix or None)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{path}'", path)
        if isinstance(base[key], dict):
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file at ``path``, then dotted-key ``overrides``."""
    cfg = default_config()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} does not parse: {exc}") from exc
        if loaded is not None:
            _merge(cfg, loaded)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    validate(cfg)
    return cfg


def _date(value, key) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{key}: not an ISO date: {value!r}", key) from exc


def _build(cls, values: dict, key: str, **extra):
    kw = {}
    for f in dataclasses.fields(cls):
        if f.name in values:
            v = values[f.name]
            kw[f.name] = tuple(v) if isinstance(v, list) else v
    kw.update(extra)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}", key) from exc


def validate(cfg: dict) -> None:
    """Build every typed config once so bad values fail before any stage runs."""
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer", "seed")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise ConfigError("jobs must be a positive integer", "jobs")
    for key in ("consultations", "physicians"):
        p = cfg["paths"].get(key)
        if p is not None and not Path(p).exists():
            raise ConfigError(f"paths.{key}: file not found: {p}", f"paths.{key}")
    if bool(cfg["paths"].get("consultations")) != bool(cfg["paths"].get("physicians")):
        raise ConfigError("paths.consultations and paths.physicians must be given together", "paths")
    study_window(cfg)
    gap = cfg["study"]["max_gap_days"]
    if gap is not None and (not isinstance(gap, (int, float)) or gap < 0):
        raise ConfigError("study.max_gap_days must be a non-negative number", "study.max_gap_days")
    synth_config(cfg)
    experiment_settings(cfg)
    exp = cfg["experiment"]
    from .embed import FEATURE_SETS, MODELS
    from .explain import FEATURE_SETS as EXPLAIN_SETS
    for m in exp["models"]:
        if m not in MODELS:
            raise ConfigError(f"experiment.models: unknown model {m!r}", "experiment.models")
    for f in exp["feature_sets"]:
        if f not in FEATURE_SETS:
            raise ConfigError(f"experiment.feature_sets: unknown feature set {f!r}",
                              "experiment.feature_sets")
    if not isinstance(exp["replicates"], int) or exp["replicates"] < 1:
        raise ConfigError("experiment.replicates must be a positive integer", "experiment.replicates")
    if cfg["embed"]["model"] not in MODELS:
        raise ConfigError(f"embed.model: unknown model {cfg['embed']['model']!r}", "embed.model")
    if cfg["embed"]["features"] not in FEATURE_SETS:
        raise ConfigError(f"embed.features: unknown feature set {cfg['embed']['features']!r}",
                          "embed.features")
    ex = cfg["explain"]
    if ex["feature_set"] not in EXPLAIN_SETS:
        raise ConfigError(f"explain.feature_set: unknown feature set {ex['feature_set']!r}",
                          "explain.feature_set")
    for key in ("n_explain", "background_size", "epochs", "top_k"):
        if not isinstance(ex[key], int) or ex[key] < 1:
            raise ConfigError(f"explain.{key} must be a positive integer", f"explain.{key}")


def study_window(cfg: dict) -> StudyWindow:
    s = cfg["study"]
    try:
        return StudyWindow(_date(s["start"], "study.start"), _date(s["end"], "study.end"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"study: {exc}", "study") from exc


def synth_config(cfg: dict) -> SynthConfig:
    w = study_window(cfg)
    return _build(SynthConfig, cfg["synth"], "synth", seed=cfg["seed"], start=w.start, end=w.end)


def experiment_settings(cfg: dict) -> ExperimentSettings:
    e = cfg["experiment"]
    a2v = dict(e["attri2vec"])
    a2v_walk = _build(WalkConfig, a2v.pop("walks"), "experiment.attri2vec.walks")
    scalars = {k: v for k, v in e.items()
               if k not in ("walk", "graphsage", "attri2vec", "models", "feature_sets", "replicates")}
    return _build(
        ExperimentSettings, scalars, "experiment",
        walk=_build(WalkConfig, e["walk"], "experiment.walk"),
        sage=_build(SageConfig, e["graphsage"], "experiment.graphsage"),
        attri2vec=_build(Attri2VecConfig, a2v, "experiment.attri2vec", walks=a2v_walk),
    )


def replicate_seeds(cfg: dict) -> list[int]:
    return [cfg["seed"] + i for i in range(cfg["experiment"]["replicates"])]


def canonical(cfg: dict) -> str:
    """Stable JSON of everything that can change an output (not where outputs go, nor jobs)."""
    body = copy.deepcopy(cfg)
    body.pop("out_dir", None)
    body.pop("jobs", None)
    for key, path in body["paths"].items():
        if path is not None:
            body["paths"][key] = {"path": str(path), "sha256": _file_sha(path)}
    return json.dumps(body, sort_keys=True, default=str, separators=(",", ":"))


def _file_sha(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(json.loads(json.dumps(cfg, default=str)), sort_keys=True)
