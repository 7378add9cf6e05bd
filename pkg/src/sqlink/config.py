"""Run configuration: one dataclass shared by the CLI and the library.

The `desk` defaults below are sized for CPU-only runs on the mini corpus;
`paper_preset` returns the documented full-scale settings (graph dim 512,
8 layers, 8 heads, decoder 512/128/128, 200 epochs, batch 20, lr 1e-4).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

ABLATIONS = ("no_probe", "no_implicit", "no_reg", "exact_match", "no_linking")
ORACLE_MODES = ("columns", "tables", "schema", "full")

CACHE_ENV_VAR = "SQLINK_CACHE_DIR"

# Fields that affect model behavior; paths and output knobs are excluded
# from the config hash so relocating directories does not invalidate it.
_HASH_EXCLUDE = {"data_dir", "cache_dir", "ckpt_dir", "report_dir",
                 "train_file", "dev_file", "snapshot_every", "eval_every"}


@dataclass
class RunConfig:
    # paths
    data_dir: str = "data/mini"
    cache_dir: str = "cache"
    ckpt_dir: str = "ckpt"
    report_dir: str = "report"
    train_file: str = "examples.json"
    dev_file: str = "dev.json"
    # probing
    tau: float = 0.7
    normalize_scores: bool = True
    # contextual encoder
    encoder_dim: int = 64
    encoder_layers: int = 2
    encoder_seed: int = 0
    freeze_encoder: bool = True
    # linking graph
    fusion_lambda: float = 0.2
    sim_dim: int | None = None  # defaults to encoder_dim
    mention_threshold: float = 0.0
    # graph encoder
    graph_dim: int = 128
    rgat_layers: int = 2
    rgat_heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.2
    # decoder
    decoder_hidden: int = 128
    action_dim: int = 64
    type_dim: int = 32
    beam: int = 4
    max_actions: int = 200
    # training
    mu: float = 1.0
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    warmup_ratio: float = 0.1
    batch_size: int = 8
    epochs: int = 100
    grad_clip: float = 5.0
    seed: int = 1
    early_stop_em: float | None = None  # stop once train exact match reaches this
    snapshot_every: int = 25
    eval_every: int = 10
    # modes
    ablation: str | None = None
    oracle: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ConfigError(
                f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.oracle is not None and self.oracle not in ORACLE_MODES:
            raise ConfigError(
                f"unknown oracle mode {self.oracle!r}; choose from {ORACLE_MODES}")
        if not 0.0 <= self.fusion_lambda <= 1.0:
            raise ConfigError("lambda must be in [0, 1]")
        if self.mu < 0:
            raise ConfigError("mu must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.normalize_scores and not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must be in [0, 1] with normalization on")
        if self.graph_dim % self.rgat_heads:
            raise ConfigError("graph dim must be divisible by head count")

    @property
    def effective_lambda(self) -> float:
        """Ablations remap the fusion weight: no probe graph means 0 (drop
        the probed matrix), no implicit learning means 1 (probed only)."""
        if self.ablation == "no_probe":
            return 0.0
        if self.ablation == "no_implicit":
            return 1.0
        return self.fusion_lambda

    @property
    def effective_mu(self) -> float:
        if self.ablation in ("no_reg", "exact_match", "no_linking"):
            return 0.0
        return self.mu

    @property
    def uses_learner(self) -> bool:
        return self.ablation not in ("exact_match", "no_linking")

    def resolved_cache_dir(self) -> Path:
        return Path(os.environ.get(CACHE_ENV_VAR, self.cache_dir))

    def config_hash(self) -> str:
        payload = {k: v for k, v in dataclasses.asdict(self).items()
                   if k not in _HASH_EXCLUDE}
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(payload)


def paper_preset(**overrides) -> RunConfig:
    """Full-scale hyperparameters as documented; not sized for CPU runs."""
    base = dict(
        graph_dim=512, rgat_layers=8, rgat_heads=8,
        decoder_hidden=512, action_dim=128, type_dim=128,
        epochs=200, batch_size=20, learning_rate=1e-4,
    )
    base.update(overrides)
    return RunConfig(**base)
