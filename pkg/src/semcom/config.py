"""Run configuration documents.

A run is described by one JSON document with sections "train", "model",
"channel", and "data", plus a top-level "rho". The canonical fingerprint
is the SHA-256 of the document serialized with sorted keys, so it is
stable under key reordering; checkpoints record the fingerprint they were
trained with.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .channel import ChannelSpec
from .data_io import VideoClip, load_clip, make_synthetic_clip
from .errors import ConfigError
from .training import TrainConfig

DATA_DIR_ENV = "SEMCOM_DATA_DIR"

_TRANSLATE_SHIFTS = [(1, 0), (0, 1), (2, 0), (0, 2), (1, 1), (-1, 0), (0, -1), (2, 1)]

MODEL_KEYS = {
    "t", "flow_feature_dim", "flow_divisor", "key_channels", "flow_channels",
    "chosen_channels", "fused_channels", "semantic_channels", "unet_widths",
    "y1", "y2", "squeeze_ratio", "power",
}

TRAIN_KEYS = {
    "learning_rate", "batch_size", "steps", "t", "rho", "snr_low", "snr_high",
    "seed", "loss", "channel_family", "power", "stop_mse", "flow_divisor",
}


def fingerprint(document: dict) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class RunConfig:
    document: dict
    train: TrainConfig
    channel: ChannelSpec
    model_overrides: dict = field(default_factory=dict)
    rho: float = 0.031
    data: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.document)


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}", "required key is missing")
    return section[key]


def _check_keys(section: dict, allowed: set[str], path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


def parse_config(document: dict) -> RunConfig:
    if not isinstance(document, dict):
        raise ConfigError("<root>", "config must be a JSON object")

    train_doc = document.get("train")
    if not isinstance(train_doc, dict):
        raise ConfigError("train", "required section is missing")
    _check_keys(train_doc, TRAIN_KEYS, "train")
    _require(train_doc, "learning_rate", "train")
    _require(train_doc, "steps", "train")
    fields = dict(train_doc)
    fields.setdefault("rho", document.get("rho", 0.031))
    try:
        train = TrainConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from exc

    model_doc = document.get("model", {})
    if not isinstance(model_doc, dict):
        raise ConfigError("model", "must be an object")
    _check_keys(model_doc, MODEL_KEYS, "model")
    overrides = dict(model_doc)
    if "unet_widths" in overrides:
        overrides["unet_widths"] = tuple(overrides["unet_widths"])

    channel_doc = document.get("channel", {})
    if not isinstance(channel_doc, dict):
        raise ConfigError("channel", "must be an object")
    try:
        channel = ChannelSpec(
            family=channel_doc.get("family", "awgn"),
            snr_test_db=float(channel_doc.get("snr_test_db", 10.0)),
            snr_est_db=channel_doc.get("snr_est_db"),
            power=float(channel_doc.get("power", 1.0)),
            seed=int(channel_doc.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError("channel", str(exc)) from exc

    data_doc = document.get("data", {})
    if not isinstance(data_doc, dict):
        raise ConfigError("data", "must be an object")

    rho = float(document.get("rho", train.rho))
    return RunConfig(document=document, train=train, channel=channel,
                     model_overrides=overrides, rho=rho, data=data_doc)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            document = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("<path>", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<path>", f"invalid JSON in {path}: {exc}") from exc
    return parse_config(document)


def load_dataset(data: dict, group_size_default: int = 2) -> list[VideoClip]:
    """Materialize the dataset a config's "data" section describes."""
    if "synthetic" in data:
        spec = data["synthetic"]
        count = int(spec.get("count", 8))
        kind = spec.get("kind", "translate")
        height = int(spec.get("height", 32))
        width = int(spec.get("width", 32))
        group = int(spec.get("group_size", group_size_default))
        seed = int(spec.get("seed", 0))
        clips = []
        for i in range(count):
            shift = _TRANSLATE_SHIFTS[i % len(_TRANSLATE_SHIFTS)]
            clips.append(make_synthetic_clip(kind, height, width, group,
                                             shift=shift, seed=seed + i))
        return clips

    directory = data.get("dir") or os.environ.get(DATA_DIR_ENV)
    if not directory:
        raise ConfigError("data.dir", f"no dataset directory (set it or {DATA_DIR_ENV})")
    group = int(data.get("group_size", group_size_default))
    target = data.get("target_hw")
    target_hw = tuple(target) if target else None
    names = sorted(f for f in os.listdir(directory) if f.endswith(".svc1"))
    if not names:
        raise ConfigError("data.dir", f"no .svc1 clips under {directory}")
    return [load_clip(os.path.join(directory, n), group, target_hw) for n in names]
