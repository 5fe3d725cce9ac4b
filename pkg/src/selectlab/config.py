"""Flat ``key = value`` experiment configuration files.

Keys are dotted (``dgp.theta_true``, ``run.n_steps``); vectors are comma
separated; ``#`` starts a comment. Settings resolve as built-in default, then
file, then command-line override.
"""

from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path

import numpy as np

from .harness import ExperimentConfig
from .model import ConfigError, Dgp, IndexMap, LinkFunction
from .strategies import StrategySpec

SIMULATE_DEFAULTS = {
    "dgp.link": "logistic",
    "dgp.link.table_u": "",
    "dgp.link.table_p": "",
    "dgp.index": "linear",
    "dgp.theta_true": "1, 1",
    "dgp.domain.lower": "0, 0",
    "dgp.domain.upper": "1, 1",
    "dgp.covariate_law": "uniform",
    "dgp.normal.mean": "",
    "dgp.normal.cov": "",
    "prior.mean": "2, 1",
    "prior.cov": "0.75, 0.75",
    "prior.resolution": "201",
    "prior.width": "6",
    "strategy.kind": "randomized_most_likely",
    "strategy.mode": "domain",
    "strategy.anchor": "",
    "strategy.arms": "50",
    "strategy.domain_resolution": "51",
    "run.n_steps": "1000",
    "run.batch_size": "100",
    "run.replications": "50",
    "run.master_seed": "20240917",
    "run.snapshot_steps": "",
}

COMPARE_DEFAULTS = {
    **SIMULATE_DEFAULTS,
    "dgp.index": "transformed-1d",
    "dgp.theta_true": "-1",
    "dgp.domain.lower": "0",
    "dgp.domain.upper": "1",
    "dgp.covariate_law": "equally-spaced",
    "prior.mean": "2",
    "prior.cov": "0.75",
    "strategy.mode": "batch",
    "run.snapshot_steps": "0, 50, 1000",
}

# command-line shortcuts for the most common overrides
SHORTCUTS = {
    "replications": "run.replications",
    "n_steps": "run.n_steps",
    "seed": "run.master_seed",
}


def _normalize_value(v: str) -> str:
    return ", ".join(p.strip() for p in v.split(",")) if v.strip() else ""


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = _normalize_value(value)
    return out


def parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = (s.strip() for s in item.split("=", 1))
    return key, _normalize_value(value)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``square_rml.cfg`` ...)."""
    ref = resources.files("selectlab") / "configs" / name
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(ref))


def resolve_config_path(spec: str) -> Path:
    p = Path(spec)
    if p.is_file():
        return p
    if not p.exists() and p.parent == Path("."):
        return bundled_config(p.name if p.suffix else p.name + ".cfg")
    raise ConfigError(f"config file {spec!r} not found")


def resolve_settings(defaults: dict, file_settings: dict, overrides: dict) -> dict:
    settings = dict(defaults)
    for layer in (file_settings, overrides):
        for key, value in layer.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r}")
            settings[key] = value
    return settings


def canonical_text(settings: dict) -> str:
    return "".join(f"{k} = {settings[k]}\n" for k in sorted(settings))


def config_hash(settings: dict) -> str:
    return hashlib.sha256(canonical_text(settings).encode()).hexdigest()


def _vec(settings, key, required=True):
    raw = settings[key]
    if not raw:
        if required:
            raise ConfigError(f"{key} is required")
        return None
    try:
        return tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {raw!r}") from None


def _int(settings, key):
    try:
        return int(settings[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {settings[key]!r}") from None


def _float(settings, key):
    try:
        return float(settings[key])
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {settings[key]!r}") from None


def _cov(settings, key, k):
    # k values give a diagonal, k * k a full row-major matrix
    cov = _vec(settings, key)
    return np.array(cov).reshape(k, k) if k > 1 and len(cov) == k * k else cov


def build_dgp(settings: dict) -> Dgp:
    theta = _vec(settings, "dgp.theta_true")
    k = len(theta)
    link_kind = settings["dgp.link"]
    if link_kind == "tabulated":
        link = LinkFunction(
            "tabulated", _vec(settings, "dgp.link.table_u"), _vec(settings, "dgp.link.table_p")
        )
    else:
        link = LinkFunction(link_kind)
    law = settings["dgp.covariate_law"]
    normal_mean = normal_cov = None
    if law == "normal":
        normal_mean = _vec(settings, "dgp.normal.mean")
        normal_cov = _cov(settings, "dgp.normal.cov", k)
    return Dgp(
        link=link,
        index=IndexMap(settings["dgp.index"], k),
        theta_true=theta,
        lower=_vec(settings, "dgp.domain.lower"),
        upper=_vec(settings, "dgp.domain.upper"),
        covariate_law=law,
        normal_mean=normal_mean,
        normal_cov=normal_cov,
    )


def _strategy(settings: dict, kind: str) -> StrategySpec:
    return StrategySpec(
        kind=kind,
        mode=settings["strategy.mode"],
        anchor=_vec(settings, "strategy.anchor", required=False),
        arms=_int(settings, "strategy.arms"),
        domain_resolution=_int(settings, "strategy.domain_resolution"),
    )


def build_experiment(settings: dict, kind: str = None) -> ExperimentConfig:
    dgp = build_dgp(settings)
    snaps = _vec(settings, "run.snapshot_steps", required=False) or ()
    cov = _cov(settings, "prior.cov", dgp.k)
    return ExperimentConfig(
        dgp=dgp,
        prior_mean=_vec(settings, "prior.mean"),
        prior_cov=cov,
        strategy=_strategy(settings, kind or settings["strategy.kind"]),
        n_steps=_int(settings, "run.n_steps"),
        batch_size=_int(settings, "run.batch_size"),
        replications=_int(settings, "run.replications"),
        master_seed=_int(settings, "run.master_seed"),
        snapshot_steps=tuple(int(s) for s in snaps),
        prior_resolution=_int(settings, "prior.resolution"),
        prior_width=_float(settings, "prior.width"),
    )


def build_pair(settings: dict) -> tuple:
    """RML and Thompson configs sharing everything but the strategy."""
    return (
        build_experiment(settings, "randomized_most_likely"),
        build_experiment(settings, "thompson"),
    )


def load_settings(path, defaults: dict, overrides: dict = None) -> dict:
    p = resolve_config_path(str(path)) if path is not None else None
    file_settings = parse_config_text(p.read_text(), str(p)) if p is not None else {}
    return resolve_settings(defaults, file_settings, overrides or {})
