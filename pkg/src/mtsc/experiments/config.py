"""Experiment configuration.

A config file is YAML with these optional sections (defaults in brackets)::

    model:      d [32], fusion_hidden [32], lora_rank [4], lora_alpha [8.0]
    data:       n_public [2000], n_client [1000], n_test [500],
                public_noise [0.1], client_noise [0.15]
    pretrain:   steps [1500], clean_fraction [0.5], batch_size [64], learning_rate [0.003],
                semantic_weight [1.0]
    federation: num_clients [4], local_steps [5], rounds [20], batch_size [32],
                learning_rate [0.002], train_with_channel_noise [true],
                snr_range [[-6, 12]], budget_range [[8, 32]]
    channel:    k_factor [3.0], fading ["block" | "static"]
    sweep:      snr_grid [-6..12 step 3], seeds [[0, 1, 2, 3, 4]], budget [16],
                arms [all three], tasks [all four]
    rag:        enabled [false], tx_gate [0.3], rx_gate [0.3], top_k [3]

Unknown sections or keys are rejected.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from ..channel import ChannelState
from ..models import TASKS, ModelConfig
from ..nn import OptimizerConfig

ARMS = ("proposed", "baseline1_traditional", "baseline2_no_lam")


@dataclass(frozen=True)
class ModelSection:
    d: int = 32
    fusion_hidden: int = 32
    lora_rank: int = 4
    lora_alpha: float = 8.0


@dataclass(frozen=True)
class DataSection:
    n_public: int = 2000
    n_client: int = 1000
    n_test: int = 500
    public_noise: float = 0.1
    client_noise: float = 0.15


@dataclass(frozen=True)
class PretrainSection:
    steps: int = 1500
    clean_fraction: float = 0.5
    batch_size: int = 64
    learning_rate: float = 3e-3
    semantic_weight: float = 1.0


@dataclass(frozen=True)
class FederationSection:
    num_clients: int = 4
    local_steps: int = 5
    rounds: int = 20
    batch_size: int = 32
    learning_rate: float = 2e-3
    train_with_channel_noise: bool = True
    snr_range: tuple = (-6.0, 12.0)
    budget_range: tuple = (8, 32)


@dataclass(frozen=True)
class ChannelSection:
    k_factor: float = 3.0
    fading: str = "block"


@dataclass(frozen=True)
class SweepSection:
    snr_grid: tuple = (-6.0, -3.0, 0.0, 3.0, 6.0, 9.0, 12.0)
    seeds: tuple = (0, 1, 2, 3, 4)
    budget: int = 16
    arms: tuple = ARMS
    tasks: tuple = TASKS


@dataclass(frozen=True)
class RagSection:
    enabled: bool = False
    tx_gate: float = 0.3
    rx_gate: float = 0.3
    top_k: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    federation: FederationSection = field(default_factory=FederationSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    rag: RagSection = field(default_factory=RagSection)

    def __post_init__(self):
        bad = [a for a in self.sweep.arms if a not in ARMS]
        if bad:
            raise ValueError(f"unknown arms {bad}; choose from {ARMS}")
        bad = [t for t in self.sweep.tasks if t not in TASKS]
        if bad:
            raise ValueError(f"unknown tasks {bad}; choose from {TASKS}")
        if self.channel.fading not in ("block", "static"):
            raise ValueError("channel.fading must be 'block' or 'static'")

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(d=m.d, fusion_hidden=m.fusion_hidden, lora_rank=m.lora_rank, lora_alpha=m.lora_alpha)

    def channel_state(self, snr_db: float = 0.0) -> ChannelState:
        return ChannelState(snr_db, k_factor=self.channel.k_factor, fading_mode=self.channel.fading)

    def pretrain_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig("adam", self.pretrain.learning_rate)

    def to_dict(self) -> dict:
        return {f.name: _plain(asdict(getattr(self, f.name))) for f in fields(self)}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _section(cls, values: dict, name: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}")
    out = {}
    for k, v in values.items():
        out[k] = tuple(v) if isinstance(v, list) else v
    return replace(cls(), **out)


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    raw = raw or {}
    sections = {f.name: f.default_factory for f in fields(ExperimentConfig)}
    unknown = set(raw) - set(sections)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    built = {name: _section(type(factory()), raw.get(name) or {}, name) for name, factory in sections.items()}
    return ExperimentConfig(**built)


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as f:
        return config_from_dict(yaml.safe_load(f))
