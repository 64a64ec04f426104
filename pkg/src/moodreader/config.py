"""Experiment configuration: nested YAML/JSON merged over defaults."""
from __future__ import annotations

import copy
from dataclasses import asdict
from pathlib import Path

from .data import SPLIT_MODES, read_structured
from .experiment import TrainConfig
from .mbsm import MbsmConfig
from .model import FULL, ModelConfig, parse_preset
from .nn import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "repeats": 1,
    "dataset": {
        "source": "synthetic",  # "synthetic" | "manifest"
        "manifest": None,
        "synthetic": {
            "n_classes": 3,
            "n_subjects": 10,
            "trials_per_subject": 15,
            "samples_per_trial": 2,
            "separability": 2.0,
        },
    },
    "split": {"ratio": 0.8, "by": "subject"},
    "model": asdict(ModelConfig(preset=FULL)),
    "train": asdict(TrainConfig()),
    "pretrain": {
        "steps": 200,
        "batch_size": 8,
        "lr": 3e-3,
        "n_spans": 64,  # synthetic spans, used when no manifest is given
        "manifest": None,  # pretrain on the raw spans of a dataset manifest instead
        "mask_ratio": 0.75,
        "token_size": 40,
        "encoder_depth": 6,
        "decoder_depth": 2,
        "encoder": None,  # checkpoint to reuse instead of pretraining
    },
    "ablation": {"arms": None},
}


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and key != "synthetic":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be a mapping")
            out[key] = {**base[key], **value}
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = _merge(cfg, read_structured(path))
        for section in ("dataset", "pretrain"):
            if cfg[section]["manifest"] and not Path(cfg[section]["manifest"]).is_absolute():
                cfg[section]["manifest"] = str(path.parent / cfg[section]["manifest"])
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["dataset"]["source"] not in ("synthetic", "manifest"):
        raise ConfigError(f"dataset.source must be 'synthetic' or 'manifest', got {cfg['dataset']['source']!r}")
    if cfg["dataset"]["source"] == "manifest" and not cfg["dataset"]["manifest"]:
        raise ConfigError("dataset.manifest is required when dataset.source is 'manifest'")
    if cfg["split"]["by"] not in SPLIT_MODES:
        raise ConfigError(f"split.by must be one of {SPLIT_MODES}")
    if not 0.0 < float(cfg["split"]["ratio"]) < 1.0:
        raise ConfigError("split.ratio must lie strictly between 0 and 1")
    if int(cfg["repeats"]) < 1:
        raise ConfigError("repeats must be at least 1")
    ModelConfig.from_dict(cfg["model"])
    parse_preset(cfg["model"]["preset"])
    for arm in cfg["ablation"]["arms"] or ():
        parse_preset(arm)
    TrainConfig.from_dict(cfg["train"])
    mbsm_config(cfg).validate()


def mbsm_config(cfg: dict) -> MbsmConfig:
    pc = cfg["pretrain"]
    return MbsmConfig(n_channels=cfg["model"]["n_channels"], d_model=cfg["model"]["d_encoder"],
                      token_size=int(pc["token_size"]), encoder_depth=int(pc["encoder_depth"]),
                      decoder_depth=int(pc["decoder_depth"]), mask_ratio=float(pc["mask_ratio"]))
