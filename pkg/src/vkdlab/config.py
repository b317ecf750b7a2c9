"""Experiment configuration: TOML in, validated dataclasses out.

Every table and key is listed in ``DEFAULTS``; anything else is rejected
before any computation or file I/O happens.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .numerics import ceil_count
from .toy_mllm import COMPONENTS, Dims
from .unlearn import SCOPES, ConfigError, UnlearnConfig, baseline_defaults

METHODS = ("vkd", "ga", "ga_diff", "kl_min", "npo", "prune_only")
BASELINE_NAMES = {"ga": "GA", "ga_diff": "GA_Diff", "kl_min": "KL_Min", "npo": "NPO",
                  "prune_only": "PruneOnly"}
SWEEP_PARAMETERS = ("alpha", "beta")

_UNLEARN_KEYS = {f.name for f in fields(UnlearnConfig)}

# All defaults in one place. An empty [unlearn] table means the method defaults.
DEFAULTS: dict = {
    "seeds": [0],
    "out": "out",
    "method": "vkd",
    "data": {
        "n_entities": 40,
        "n_attributes": 4,
        "forget_ratio": 0.05,
        "views_per_entity": 6,
        "noise_sigma": 0.1,
        "image_dim": 32,
        "n_answers": 8,
        "n_realworld": 10,
    },
    "model": {"h1": 64, "h2": 64, "d_model": 32, "fusion": 64},
    "vanilla": {"epochs": 150, "lr": 0.05, "batch_size": 32},
    # any UnlearnConfig field; scope may also be "vision" or "full"; TOML has no
    # null, so the string "none" clears optional fields such as max_grad_norm
    "unlearn": {},
    "attack": {"fractions": [0.1, 0.2, 0.3], "epochs": 5, "lr": 0.01, "scope": "unlearned",
               "batch_size": 8},
    "sweep": {"parameter": "beta", "grid": [0.0, 0.1, 0.3, 1.0]},
}


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict  # fully resolved, JSON-serialisable

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def method(self) -> str:
        return self.raw["method"]

    @property
    def data(self) -> dict:
        return dict(self.raw["data"])

    @property
    def vanilla(self) -> dict:
        return dict(self.raw["vanilla"])

    @property
    def attack(self) -> dict:
        return dict(self.raw["attack"])

    @property
    def sweep(self) -> dict:
        return dict(self.raw["sweep"])

    def dims(self) -> Dims:
        d = self.raw["data"]
        return Dims(image_dim=d["image_dim"], n_answers=d["n_answers"],
                    n_entities=d["n_entities"] + d["n_realworld"],
                    n_attributes=d["n_attributes"], **self.raw["model"])

    def unlearn_config(self, **overrides) -> UnlearnConfig:
        kw = {**self.raw["unlearn"], **overrides}
        kw["scope"] = tuple(kw["scope"])
        return UnlearnConfig(**kw)

    def attack_scope(self) -> tuple[str, ...]:
        scope = self.raw["attack"]["scope"]
        if scope == "unlearned":
            return tuple(self.raw["unlearn"]["scope"])
        return _scope_tuple(scope, "attack.scope")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["seeds"] = [seed]
        return ExperimentConfig(raw)

    def with_out(self, out) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["out"] = str(out)
        return ExperimentConfig(raw)


def _scope_tuple(value, where: str) -> tuple[str, ...]:
    if isinstance(value, str):
        if value not in SCOPES:
            raise ConfigError(f"{where}: unknown scope {value!r}")
        return SCOPES[value]
    if not isinstance(value, (list, tuple)) or not value or not set(value) <= set(COMPONENTS):
        raise ConfigError(f"{where}: scope must be 'vision', 'full' or a list drawn from {COMPONENTS}")
    return tuple(c for c in COMPONENTS if c in set(value))


def _check_keys(table: dict, allowed, where: str) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _typed(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        value = float(value)
    return value


def resolve(doc: dict | None = None) -> ExperimentConfig:
    """Merge ``doc`` over the defaults and validate everything."""
    doc = copy.deepcopy(doc or {})
    _check_keys(doc, DEFAULTS, "config")
    raw: dict = {}
    for key, default in DEFAULTS.items():
        if isinstance(default, dict) and key != "unlearn":
            table = doc.get(key, {})
            if not isinstance(table, dict):
                raise ConfigError(f"[{key}] must be a table")
            _check_keys(table, default, f"[{key}]")
            raw[key] = {k: _typed(table.get(k, v), v, f"{key}.{k}") for k, v in default.items()}
        elif key != "unlearn":
            raw[key] = doc.get(key, default)

    seeds = raw["seeds"]
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)):
        raise ConfigError("seeds must be a non-empty list of non-negative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    if not isinstance(raw["out"], str) or not raw["out"]:
        raise ConfigError("out must be a non-empty path string")
    if raw["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {raw['method']!r}")

    d = raw["data"]
    if not 0 < d["forget_ratio"] < 1:
        raise ConfigError("data.forget_ratio must lie strictly between 0 and 1")
    if d["noise_sigma"] < 0:
        raise ConfigError("data.noise_sigma must be non-negative")
    if (d["n_entities"] < 2 or d["n_attributes"] < 1 or d["views_per_entity"] < 1
            or d["n_realworld"] < 0 or d["image_dim"] < 1 or d["n_answers"] < 2):
        raise ConfigError("data sizes out of range")
    if ceil_count(d["forget_ratio"], d["n_entities"]) >= d["n_entities"]:
        raise ConfigError("data.forget_ratio leaves no retain entities")
    if any(v < 1 for v in raw["model"].values()):
        raise ConfigError("model widths must be positive")
    v = raw["vanilla"]
    if v["epochs"] < 0 or v["lr"] < 0 or v["batch_size"] < 1:
        raise ConfigError("vanilla hyperparameters out of range")

    raw["unlearn"] = _resolve_unlearn(doc.get("unlearn", {}), raw["method"])

    a = raw["attack"]
    fractions = a["fractions"]
    if not isinstance(fractions, list) or not fractions:
        raise ConfigError("attack.fractions must be a non-empty list")
    a["fractions"] = [_typed(f, 0.0, "attack.fractions[]") for f in fractions]
    if not all(0 < f <= 1 for f in a["fractions"]):
        raise ConfigError("attack fractions must lie in (0, 1]")
    if a["epochs"] < 1 or a["lr"] < 0 or a["batch_size"] < 1:
        raise ConfigError("attack epochs >= 1, lr >= 0 and batch_size >= 1 required")
    if a["scope"] != "unlearned":
        a["scope"] = list(_scope_tuple(a["scope"], "attack.scope"))

    s = raw["sweep"]
    if s["parameter"] not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep.parameter must be one of {SWEEP_PARAMETERS}")
    if not isinstance(s["grid"], list) or not s["grid"]:
        raise ConfigError("sweep.grid must be a non-empty list")
    s["grid"] = [_typed(g, 0.0, "sweep.grid[]") for g in s["grid"]]
    for value in s["grid"]:
        UnlearnConfig(**{**_unlearn_kwargs(raw["unlearn"]), s["parameter"]: value})
    return ExperimentConfig(raw)


def _unlearn_kwargs(table: dict) -> dict:
    kw = dict(table)
    kw["scope"] = tuple(kw["scope"])
    return kw


def _resolve_unlearn(table, method: str) -> dict:
    if not isinstance(table, dict):
        raise ConfigError("[unlearn] must be a table")
    _check_keys(table, _UNLEARN_KEYS, "[unlearn]")
    base = UnlearnConfig() if method == "vkd" else baseline_defaults(scope=SCOPES["full"])
    kw = {}
    for f in fields(UnlearnConfig):
        if f.name not in table:
            continue
        value = table[f.name]
        if f.name == "scope":
            value = _scope_tuple(value, "unlearn.scope")
        elif f.name in ("prune_ratio", "d_I", "max_grad_norm", "retain_batch_size"):
            value = None if value == "none" else value
        kw[f.name] = value
    if "d_I" in kw and kw["d_I"] is not None and "prune_ratio" not in kw:
        kw["prune_ratio"] = None
    try:
        cfg = UnlearnConfig(**{**_asdict(base), **kw})
    except TypeError as exc:
        raise ConfigError(f"[unlearn]: {exc}") from exc
    if method == "vkd" and "W" in cfg.scope and not cfg.allow_llm_update:
        raise ConfigError("unlearn.scope includes W; set allow_llm_update = true for that ablation")
    out = _asdict(cfg)
    out["scope"] = list(cfg.scope)
    return out


def _asdict(cfg: UnlearnConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def load(path) -> ExperimentConfig:
    """Parse a TOML file. Syntax errors surface as ``ConfigError``."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return resolve(doc)

