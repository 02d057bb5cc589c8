"""Declarative run configuration: YAML with strict key validation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .hamiltonian import HamiltonianFamily
from .model import ModelConfig
from .sampler import SamplerConfig
from .trainer import TrainConfig

_MODEL_KEYS = {"n_layers", "d_e", "n_heads", "d", "n_param_channels", "max_context"}
_FAMILY_KEYS = {"name", "fixed", "prior", "sizes"}
_TRAINER_KEYS = {
    "iterations",
    "i_warmup",
    "beta1",
    "beta2",
    "adam_eps",
    "scale_cap",
    "mode",
    "finetune_offset",
    "energy_shift",
    "grad_clip_norm",
    "checkpoint_interval",
}
_SAMPLER_KEYS = {"n_batch", "n_unique"}
_TOP_KEYS = {"model", "family", "trainer", "sampler", "symmetries", "output_dir", "seed"}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    family: HamiltonianFamily
    trainer: TrainConfig
    sampler: SamplerConfig
    symmetries: tuple[str, ...]
    output_dir: str | None
    seed: int
    raw_text: str


def _require_mapping(obj, name: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return obj


def _check_keys(section: dict, allowed: set[str], name: str):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in section {name!r}")


def parse_run_config(path, seed_override: int | None = None, out_override: str | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(data, _TOP_KEYS, "top level")
    for required in ("model", "family", "trainer", "sampler"):
        if required not in data:
            raise ConfigError(f"missing required section {required!r}")
    if "seed" not in data and seed_override is None:
        raise ConfigError("missing required key 'seed'")

    fam_sec = _require_mapping(data["family"], "family")
    _check_keys(fam_sec, _FAMILY_KEYS, "family")
    for required in ("name", "prior", "sizes"):
        if required not in fam_sec:
            raise ConfigError(f"family section is missing {required!r}")
    prior = {
        str(k): (float(v[0]), float(v[1])) for k, v in _require_mapping(fam_sec["prior"], "family.prior").items()
    }
    family = HamiltonianFamily(
        name=str(fam_sec["name"]),
        prior=prior,
        sizes=tuple(int(s) for s in fam_sec["sizes"]),
        fixed={str(k): float(v) for k, v in fam_sec.get("fixed", {}).items()},
    )

    model_sec = dict(_require_mapping(data["model"], "model"))
    _check_keys(model_sec, _MODEL_KEYS, "model")
    for required in ("n_layers", "d_e", "n_heads"):
        if required not in model_sec:
            raise ConfigError(f"model section is missing {required!r}")
    derived_channels = len(family.prior) + 2
    model_sec.setdefault("n_param_channels", derived_channels)
    if model_sec["n_param_channels"] != derived_channels:
        raise ConfigError(
            f"model.n_param_channels={model_sec['n_param_channels']} does not match the "
            f"family ({len(family.prior)} couplings need {derived_channels})"
        )
    try:
        model = ModelConfig(**{k: int(v) for k, v in model_sec.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sampler_sec = _require_mapping(data["sampler"], "sampler")
    _check_keys(sampler_sec, _SAMPLER_KEYS, "sampler")
    for required in ("n_batch", "n_unique"):
        if required not in sampler_sec:
            raise ConfigError(f"sampler section is missing {required!r}")
    seed = int(seed_override if seed_override is not None else data.get("seed", 0))
    try:
        sampler = SamplerConfig(
            n_batch=int(sampler_sec["n_batch"]), n_unique=int(sampler_sec["n_unique"]), seed=seed
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    trainer_sec = dict(_require_mapping(data["trainer"], "trainer"))
    _check_keys(trainer_sec, _TRAINER_KEYS, "trainer")
    if "iterations" not in trainer_sec:
        raise ConfigError("trainer section is missing 'iterations'")
    clip = trainer_sec.get("grad_clip_norm")
    trainer_sec["grad_clip_norm"] = None if clip is None else float(clip)
    try:
        trainer = TrainConfig(sampler=sampler, seed=seed, **trainer_sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    symmetries = data.get("symmetries", []) or []
    if not isinstance(symmetries, list):
        raise ConfigError("'symmetries' must be a list")

    return RunConfig(
        model=model,
        family=family,
        trainer=trainer,
        sampler=sampler,
        symmetries=tuple(str(s) for s in symmetries),
        output_dir=str(out_override) if out_override is not None else data.get("output_dir"),
        seed=seed,
        raw_text=text,
    )
