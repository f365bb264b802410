"""JSON training configuration consumed by ``xmodal train``.

Example::

    {
      "seed": 0,
      "loss": "contrastive",
      "mining": "all_pairs",
      "temperature": 0.07,
      "batch_size": 32,
      "lr0": 0.0001,
      "max_epochs": 100,
      "hidden": 512,
      "out_dim": 512,
      "strategy": "ATAE-NP-F",
      "clean": "clotho",
      "noisy": "fsd50k",
      "datasets": {
        "clotho": {"manifest": "clotho.jsonl", "noise_tier": "clean"},
        "fsd50k": {"manifest": "fsd.jsonl", "embedding_root": "emb/", "noise_tier": "noisy"}
      }
    }

``loss`` is ``contrastive`` or ``nt_xent``; ``mining`` is ``all_pairs`` or
``cross_modal_only``. Instead of ``strategy`` an explicit ``stages`` list of
``{"train_datasets": [...], "kind": "train|pretrain|finetune", "inherit": bool}``
may be given. Relative paths are resolved against the config file's directory. The
validation split of the ``clean`` dataset drives model selection.
"""
import json
import os
from dataclasses import dataclass

from .data_model import NoiseTier, load_manifest
from .errors import InvalidConfig
from .training import StageConfig, TrainConfig, configure_strategy

_SCALARS = ("loss", "mining", "temperature", "batch_size", "seed", "lr0", "max_epochs", "hidden",
            "out_dim", "plateau_patience", "lr_factor", "stop_patience")
_KNOWN = set(_SCALARS) | {"strategy", "stages", "clean", "noisy", "datasets"}


@dataclass
class DatasetSpec:
    name: str
    manifest: str
    embedding_root: str
    noise_tier: NoiseTier

    def load(self):
        return load_manifest(self.manifest, self.embedding_root, name=self.name, noise_tier=self.noise_tier)


@dataclass
class RunSpec:
    config: TrainConfig
    datasets: dict
    clean: str
    noisy: str

    def load_datasets(self):
        needed = {n for st in self.config.stages for n in st.train_datasets} | {self.clean}
        return {n: self.datasets[n].load() for n in sorted(needed)}


def parse_config(raw, base_dir=".", strategy=None, seed=None):
    if not isinstance(raw, dict):
        raise InvalidConfig("config must be a JSON object")
    unknown = set(raw) - _KNOWN
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    specs = {}
    for name, entry in (raw.get("datasets") or {}).items():
        if isinstance(entry, str):
            entry = {"manifest": entry}
        if "manifest" not in entry:
            raise InvalidConfig(f"dataset {name!r} has no manifest")
        manifest = os.path.join(base_dir, entry["manifest"])
        root = os.path.join(base_dir, entry.get("embedding_root", os.path.dirname(entry["manifest"])))
        try:
            tier = NoiseTier(entry.get("noise_tier", "clean"))
        except ValueError:
            raise InvalidConfig(f"dataset {name!r}: bad noise_tier {entry.get('noise_tier')!r}") from None
        specs[name] = DatasetSpec(name, manifest, root, tier)
    clean = raw.get("clean", "clean")
    noisy = raw.get("noisy", "noisy")
    if clean not in specs:
        raise InvalidConfig(f"clean dataset {clean!r} is not defined under 'datasets'")

    strategy = strategy or raw.get("strategy")
    if strategy is not None:
        stages = configure_strategy(strategy, clean, noisy)
    elif raw.get("stages"):
        try:
            stages = tuple(StageConfig(tuple(s["train_datasets"]), s.get("kind", "train"), bool(s.get("inherit", False)))
                           for s in raw["stages"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad stage entry: {exc}") from None
    else:
        raise InvalidConfig("config needs a 'strategy' or a 'stages' list")
    for st in stages:
        for n in st.train_datasets:
            if n not in specs:
                raise InvalidConfig(f"stage uses dataset {n!r} which is not defined under 'datasets'")

    kwargs = {k: raw[k] for k in _SCALARS if k in raw}
    if seed is not None:
        kwargs["seed"] = seed
    try:
        config = TrainConfig(stages=stages, **kwargs)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None
    return RunSpec(config, specs, clean, noisy)


def load_config(path, strategy=None, seed=None):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(raw, os.path.dirname(os.path.abspath(path)), strategy, seed)
