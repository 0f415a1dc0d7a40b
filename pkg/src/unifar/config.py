"""Configuration objects and JSON config-file loading.

Numeric training defaults follow the published recipe: temperature 0.08,
KL weight annealed 0.3 -> 0.5, learning rates 2e-5 (base encoder and facet
anchors) / 5e-5 (other aggregation modules), 2 epochs, batch size 4 with
gradient accumulation 4 and a 5% linear warm-up.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import UnknownLabel

FACET_NAMES = ("background", "method", "result")

# Short facet codes used by the FTU / triplet file formats.
FACET_SHORT = {"background": "bg", "method": "mt", "result": "rs"}
FACET_FROM_SHORT = {v: k for k, v in FACET_SHORT.items()}


def canonical_facet(name: str) -> str:
    """Map either a short code or a full facet name to the full name."""
    full = FACET_FROM_SHORT.get(name, name)
    if full not in FACET_NAMES:
        raise UnknownLabel(
            f"unknown facet {name!r}; expected one of {list(FACET_NAMES)} "
            f"or short codes {list(FACET_FROM_SHORT)}"
        )
    return full


@dataclass
class EncoderConfig:
    base_model_name: str = "lookup"
    hidden_size: int = 768
    vocab_size: int = 50000
    max_sequence_length: int = 512
    sentence_splitter: str = "rules"  # "rules" | "newline"


@dataclass
class AggregationConfig:
    n_facet: int = 3
    facet_names: tuple[str, ...] = FACET_NAMES
    head_count: int = 8
    anchor_init: str = "random"  # "random" | "equal" | "facet_words"
    anchor_init_std: float = 0.02
    freeze_anchors: bool = False
    use_input_context: bool = True
    # None follows the sentence-count selector; "sentence"/"token" pins a branch
    # (the single-branch ablation switches).
    branch_override: Optional[str] = None

    def __post_init__(self):
        self.facet_names = tuple(self.facet_names)
        if len(self.facet_names) != self.n_facet:
            raise ValueError(
                f"{self.n_facet} facets but {len(self.facet_names)} facet names"
            )
        if len(set(self.facet_names)) != self.n_facet:
            raise ValueError("facet names must be distinct")


@dataclass
class TrainConfig:
    epochs: int = 2
    batch_size: int = 4
    grad_accumulation: int = 4
    warmup_fraction: float = 0.05
    lr_base: float = 2e-5
    lr_aggregation: float = 5e-5
    temperature: float = 0.08
    lambda_start: float = 0.3
    lambda_end: float = 0.5
    seed: int = 42
    sim_kind: str = "cosine"
    route_gradients: bool = True
    cross_ftu_negatives: bool = False
    qd_freeze_aggregation: bool = False
    max_steps: Optional[int] = None
    checkpoint_every: Optional[int] = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup fraction must be in [0, 1]")
        for name in ("epochs", "batch_size", "grad_accumulation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def mpnet_low_lr() -> TrainConfig:
    """Preset with the smaller 3e-6 base learning rate used for MPNet-class
    encoders, preserving the stronger base model's semantics."""
    return TrainConfig(lr_base=3e-6)


TRAIN_PRESETS = {"default": TrainConfig, "mpnet_low_lr": mpnet_low_lr}


@dataclass
class RunConfig:
    """Bundle of the three config sections as read from one JSON file."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _build_section(cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(path: str | Path) -> RunConfig:
    """Load a sectioned JSON config file; missing sections use defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must contain a JSON object")
    unknown = set(data) - {"encoder", "aggregation", "train"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(
        encoder=_build_section(EncoderConfig, data.get("encoder", {})),
        aggregation=_build_section(AggregationConfig, data.get("aggregation", {})),
        train=_build_section(TrainConfig, data.get("train", {})),
    )


def config_metadata(run: RunConfig, seed: int | None = None) -> dict:
    """Provenance block echoed into every artifact this package writes."""
    meta = {
        "tool": "unifar",
        "encoder": dataclasses.asdict(run.encoder),
        "aggregation": dataclasses.asdict(run.aggregation),
        "train": dataclasses.asdict(run.train),
    }
    meta["aggregation"]["facet_names"] = list(run.aggregation.facet_names)
    if seed is not None:
        meta["seed"] = seed
    return meta
