"""Run configuration: one nested JSON tree with dotted-path overrides.

Every section is validated against its module's config type before any
command performs side effects, and the merged tree gets a content digest
(stable under key reordering) that is logged with every artifact.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .losses import LossWeights
from .model import ModelConfig
from .response import WelchConfig
from .synthesis import SynthesisConfig
from .training import TrainConfig
from .truss import TrussGenConfig
from .uq import UQConfig
from .util import digest


class ConfigError(ValueError):
    """Invalid run configuration."""


def default_tree() -> dict:
    """Desk-scale defaults for every section."""
    return {
        "generation": SynthesisConfig(
            truss=TrussGenConfig(n_nodes=(8, 20)),
            welch=WelchConfig(),
            n_train=200, n_val=50, n_test=50,
        ).to_dict(),
        "model": ModelConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "loss": {
            "lambda_freq": 1.0, "lambda_zeta": 1.0, "lambda_crps": 0.1,
            "lambda_phi": 1.0, "lambda_ortho": 0.01, "kl_weight": 1e-3,
            "lambda_evi": 0.01, "mode_weights": [1.0, 1.0, 2.0, 2.0],
        },
        "uq": {"mc_passes": 20, "swag_samples": 20,
               "levels": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], "seed": 0},
    }


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    path, raw = text.split("=", 1)
    keys = path.strip().split(".")
    if not all(keys):
        raise ConfigError(f"bad override path {path!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # plain string
    return keys, value


def _apply_override(tree: dict, keys: list[str], value) -> None:
    node = tree
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config section {'.'.join(keys)!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
    node[keys[-1]] = value


@dataclass
class RunConfig:
    tree: dict
    synthesis: SynthesisConfig
    model: ModelConfig
    train: TrainConfig
    weights: LossWeights
    uq: UQConfig
    digest: str
    provenance: str

    @property
    def n_modes(self) -> int:
        return self.synthesis.truss.n_modes


def build_run_config(config_path=None, overrides: list[str] | None = None) -> RunConfig:
    """Merge defaults, an optional config file, and dotted overrides."""
    tree = default_tree()
    provenance = "defaults"
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        tree = _deep_merge(tree, loaded)
        provenance = str(path)
    for text in overrides or []:
        keys, value = _parse_override(text)
        _apply_override(tree, keys, value)
        provenance += f" +{text}"

    try:
        synthesis = SynthesisConfig.from_dict(tree["generation"])
        synthesis.validate()
        model = ModelConfig.from_dict(tree["model"])
        model.validate()
        train = TrainConfig.from_dict(tree["train"])
        train.validate()
        loss_d = dict(tree["loss"])
        loss_d["mode_weights"] = tuple(loss_d["mode_weights"])
        weights = LossWeights(**loss_d)
        weights.validate()
        uq_d = dict(tree["uq"])
        uq_d["levels"] = tuple(uq_d["levels"])
        uq_cfg = UQConfig(**uq_d)
        uq_cfg.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    if model.n_modes != synthesis.truss.n_modes:
        raise ConfigError(
            f"model.n_modes={model.n_modes} != generation.truss.n_modes={synthesis.truss.n_modes}"
        )
    return RunConfig(
        tree=tree,
        synthesis=synthesis,
        model=model,
        train=train,
        weights=weights,
        uq=uq_cfg,
        digest=digest(tree),
        provenance=provenance,
    )
