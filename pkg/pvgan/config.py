"""
pvgan — Centralized Configuration

Process-level settings come from environment variables; run settings come from
a JSON config file holding three sections (train, model, dataset) that map
onto the dataclasses below. Modules import their defaults from here instead of
defining their own copies.
"""

import dataclasses
import hashlib
import json
import logging
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from pvgan.errors import ConfigError

# ── Paths ──────────────────────────────────────────────────────────────────────
# REPO_DIR is the repository root (parent of the pvgan/ package)
REPO_DIR = Path(__file__).parent.parent

OUTPUT_ROOT = Path(os.environ.get("PVGAN_OUTPUT_ROOT", str(REPO_DIR / "runs")))
DATA_ROOT = Path(os.environ.get("PVGAN_DATA_ROOT", str(REPO_DIR / "data")))

# ── Process settings ───────────────────────────────────────────────────────────
# 1 = single-threaded deterministic math; 0 = leave the torch default alone
THREADS = int(os.environ.get("PVGAN_THREADS", "1"))
LOG_LEVEL = os.environ.get("PVGAN_LOG_LEVEL", "INFO").upper()
LOAD_WORKERS = int(os.environ.get("PVGAN_LOAD_WORKERS", "4"))

# ── Domain constants ───────────────────────────────────────────────────────────
SUPPORTED_CONDITION_COUNTS = (2, 4)
PAIRING_MODES = ("paired", "unpaired", "split-half")
CONDITION_ENCODINGS = ("scalar", "one-hot")
LATENT_PRIORS = ("normal", "uniform")
GENERATOR_LOSSES = ("non_saturating", "minimax")
DTYPES = ("float32", "float64")
BINARIZE_THRESHOLD = 0.5

_log = logging.getLogger(__name__)


def configure_threads(threads: int = THREADS) -> None:
    """Pin torch's intra-op thread count. threads=1 gives reproducible reductions."""
    import torch

    if threads > 0:
        torch.set_num_threads(threads)
    if threads == 1:
        torch.use_deterministic_algorithms(True, warn_only=True)
    _log.debug(f"math threads: {torch.get_num_threads()}")


def is_supported_resolution(resolution: int) -> bool:
    """Resolutions are 4·2^k with k ≥ 1 (at least one strided layer)."""
    r = resolution
    if r < 8 or r % 4:
        return False
    k = r // 4
    return k & (k - 1) == 0


# ── Config dataclasses ─────────────────────────────────────────────────────────

@dataclass
class ModelConfig:
    resolution: int = 32
    latent_dim: int = 200
    base_channels: int = 256
    n_conditions: int = 2
    condition_encoding: str = "scalar"
    leaky_slope: float = 0.2
    init_std: float = 0.02
    latent_prior: str = "normal"

    def validate(self) -> "ModelConfig":
        if not is_supported_resolution(self.resolution):
            raise ConfigError("model.resolution", f"unsupported resolution {self.resolution} (need 4·2^k, k≥1)")
        if self.latent_dim < 1:
            raise ConfigError("model.latent_dim", "must be ≥ 1")
        if self.base_channels < 1:
            raise ConfigError("model.base_channels", "must be ≥ 1")
        if self.n_conditions not in SUPPORTED_CONDITION_COUNTS:
            raise ConfigError("model.n_conditions", f"must be one of {SUPPORTED_CONDITION_COUNTS}")
        if self.condition_encoding not in CONDITION_ENCODINGS:
            raise ConfigError("model.condition_encoding", f"must be one of {CONDITION_ENCODINGS}")
        if self.latent_prior not in LATENT_PRIORS:
            raise ConfigError("model.latent_prior", f"must be one of {LATENT_PRIORS}")
        if not 0 <= self.leaky_slope < 1:
            raise ConfigError("model.leaky_slope", "must be in [0, 1)")
        if self.init_std <= 0:
            raise ConfigError("model.init_std", "must be > 0")
        return self


@dataclass
class TrainConfig:
    lr_generator: float = 0.0025
    lr_discriminator: float = 0.00005
    lr_paired: Optional[float] = None  # paired-step optimizer; None = lr_generator
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 1500
    max_steps: int = 0  # 0 = no step cap
    gate_threshold: float = 0.95
    paired_step_enabled: bool = True
    pair_loss_weight: float = 1.0
    generator_loss: str = "non_saturating"
    seed: int = 0
    prob_clamp: float = 1e-7
    checkpoint_every: int = 50  # epochs
    dtype: str = "float32"

    def validate(self) -> "TrainConfig":
        if self.lr_generator <= 0:
            raise ConfigError("train.lr_generator", "must be > 0")
        if self.lr_discriminator <= 0:
            raise ConfigError("train.lr_discriminator", "must be > 0")
        if self.lr_paired is not None and self.lr_paired <= 0:
            raise ConfigError("train.lr_paired", "must be > 0")
        if not 0 <= self.adam_beta1 < 1:
            raise ConfigError("train.adam_beta1", "must be in [0, 1)")
        if not 0 <= self.adam_beta2 < 1:
            raise ConfigError("train.adam_beta2", "must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("train.adam_eps", "must be > 0")
        if not 0 < self.gate_threshold <= 1:
            raise ConfigError("train.gate_threshold", "must be in (0, 1]")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size", "must be ≥ 2")
        if self.epochs < 0:
            raise ConfigError("train.epochs", "must be ≥ 0")
        if self.max_steps < 0:
            raise ConfigError("train.max_steps", "must be ≥ 0")
        if not 0 < self.prob_clamp < 0.5:
            raise ConfigError("train.prob_clamp", "must be in (0, 0.5)")
        if self.pair_loss_weight < 0:
            raise ConfigError("train.pair_loss_weight", "must be ≥ 0")
        if self.generator_loss not in GENERATOR_LOSSES:
            raise ConfigError("train.generator_loss", f"must be one of {GENERATOR_LOSSES}")
        if self.checkpoint_every < 1:
            raise ConfigError("train.checkpoint_every", "must be ≥ 1")
        if self.dtype not in DTYPES:
            raise ConfigError("train.dtype", f"must be one of {DTYPES}")
        return self


@dataclass
class DatasetSpec:
    class_name: str = "chair"
    resolution: int = 32
    n_conditions: int = 2
    pairing_mode: str = "paired"
    root_path: str = str(DATA_ROOT)
    seed: int = 0
    synthetic: bool = False
    synthetic_count: int = 200

    def validate(self) -> "DatasetSpec":
        if self.n_conditions not in SUPPORTED_CONDITION_COUNTS:
            raise ConfigError("dataset.n_conditions", f"must be one of {SUPPORTED_CONDITION_COUNTS}")
        if self.pairing_mode not in PAIRING_MODES:
            raise ConfigError("dataset.pairing_mode", f"must be one of {PAIRING_MODES}")
        if not is_supported_resolution(self.resolution):
            raise ConfigError("dataset.resolution", f"unsupported resolution {self.resolution}")
        if self.synthetic and self.resolution not in (8, 16, 32):
            raise ConfigError("dataset.resolution", "synthetic data supports 8, 16 or 32")
        if self.synthetic_count < 1:
            raise ConfigError("dataset.synthetic_count", "must be ≥ 1")
        return self


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def validate(self) -> "RunConfig":
        self.train.validate()
        self.model.validate()
        self.dataset.validate()
        if self.model.resolution != self.dataset.resolution:
            raise ConfigError("model.resolution", "must equal dataset.resolution")
        if self.model.n_conditions != self.dataset.n_conditions:
            raise ConfigError("model.n_conditions", "must equal dataset.n_conditions")
        return self

    def to_tree(self) -> dict:
        return {
            "train": dataclasses.asdict(self.train),
            "model": dataclasses.asdict(self.model),
            "dataset": dataclasses.asdict(self.dataset),
        }


_SECTIONS = {"train": TrainConfig, "model": ModelConfig, "dataset": DatasetSpec}


def _coerce(key: str, value, target_type):
    """Coerce a JSON or command-line value to a dataclass field type."""
    if typing.get_origin(target_type) is typing.Union:
        args = [a for a in typing.get_args(target_type) if a is not type(None)]
        if value is None or value == "none":
            return None
        target_type = args[0]
    try:
        if target_type is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if target_type is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if target_type is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot interpret {value!r} as {target_type.__name__}") from None


def _build_section(name: str, values: dict):
    cls = _SECTIONS[name]
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in values.items():
        if key not in hints:
            raise ConfigError(f"{name}.{key}", "unknown key")
        kwargs[key] = _coerce(f"{name}.{key}", value, hints[key])
    return cls(**kwargs)


def run_config_from_tree(tree: dict) -> RunConfig:
    """Build and validate a RunConfig from a {train, model, dataset} tree.

    Missing model.resolution / model.n_conditions are taken from the dataset
    section so a config only has to state them once.
    """
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for name in tree:
        if name not in _SECTIONS:
            raise ConfigError(name, "unknown section")
    dataset = dict(tree.get("dataset", {}))
    model = dict(tree.get("model", {}))
    for shared in ("resolution", "n_conditions"):
        if shared in dataset and shared not in model:
            model[shared] = dataset[shared]
        elif shared in model and shared not in dataset:
            dataset[shared] = model[shared]
    cfg = RunConfig(
        train=_build_section("train", dict(tree.get("train", {}))),
        model=_build_section("model", model),
        dataset=_build_section("dataset", dataset),
    )
    return cfg.validate()


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        tree = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"{path} is not valid JSON: {e}") from None
    return run_config_from_tree(tree)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply 'section.key=value' overrides on top of a resolved config."""
    tree = cfg.to_tree()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        dotted, value = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(dotted, "override key must be section.key")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(section, "unknown section")
        tree[section][key] = value
        # shared keys move together
        if key in ("resolution", "n_conditions") and section in ("model", "dataset"):
            other = "dataset" if section == "model" else "model"
            tree[other][key] = value
    return run_config_from_tree(tree)


def config_hash(tree: dict) -> str:
    """Git-style blob hash of the canonical JSON form of a config tree."""
    payload = json.dumps(tree, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = f"blob {len(payload)}\0".encode("ascii")
    return hashlib.sha1(header + payload).hexdigest()
