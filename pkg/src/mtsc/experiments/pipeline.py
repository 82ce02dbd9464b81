"""Per-seed data generation and training of every comparison arm."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..data import Dataset, SyntheticDatasetSpec, generate_dataset
from ..federation import RoundConfig, TrainLog, run_training
from ..io import load_checkpoint, save_checkpoint
from ..models import MTSCModel, ModelConfig
from ..nn import OptimizerConfig
from ..rag import KnowledgeBase
from ..rng import RngHandle
from ..training import LinkConfig, centralized_train, pretrain
from .baselines import baseline2_config, clean_forward
from .config import ExperimentConfig


@dataclass
class SeedData:
    public: Dataset
    shards: list[Dataset]
    test: Dataset


def make_data(cfg: ExperimentConfig, seed: int) -> SeedData:
    """Public pre-training corpus plus client shards and a held-out test set.

    Public and client data come from different seed-derived streams and
    differ in intra-class noise.
    """
    root = RngHandle(seed)
    d = cfg.data
    public = generate_dataset(
        SyntheticDatasetSpec(d.n_public, 0, 0, seed=root.child("public").derive_seed(), noise=d.public_noise)
    )["train"]
    private = generate_dataset(
        SyntheticDatasetSpec(d.n_client, 0, d.n_test, seed=root.child("private").derive_seed(), noise=d.client_noise)
    )
    c = cfg.federation.num_clients
    idx = np.arange(len(private["train"]))
    shards = [private["train"].subset(idx[idx % c == k]) for k in range(c)]
    return SeedData(public, shards, private["test"])


def arm_model_config(cfg: ExperimentConfig, arm: str) -> ModelConfig:
    base = cfg.model_config()
    return baseline2_config(base) if arm == "baseline2_no_lam" else base


def round_config(cfg: ExperimentConfig, seed_handle: RngHandle) -> RoundConfig:
    f = cfg.federation
    return RoundConfig(
        num_clients=f.num_clients,
        local_steps=f.local_steps,
        rounds=f.rounds,
        batch_size=f.batch_size,
        train_with_channel_noise=f.train_with_channel_noise,
        channel=cfg.channel_state(),
        snr_range=tuple(f.snr_range),
        budget_range=tuple(f.budget_range),
        optimizer=OptimizerConfig("adam", f.learning_rate),
        seed=seed_handle.derive_seed(),
    )


def noisy_link(cfg: ExperimentConfig) -> LinkConfig:
    f = cfg.federation
    return LinkConfig(
        noise=True,
        snr_range=tuple(f.snr_range),
        budget_range=tuple(f.budget_range),
        k_factor=cfg.channel.k_factor,
        fading=cfg.channel.fading == "block",
    )


def pretrain_arm(cfg: ExperimentConfig, arm: str, seed: int, data: SeedData) -> MTSCModel:
    """Phase I for one arm; baseline2 has no pre-training stage."""
    root = RngHandle(seed).child(arm)
    model = MTSCModel(arm_model_config(cfg, arm), root.child("init"))
    p = cfg.pretrain
    if arm == "proposed":
        clean = int(round(p.clean_fraction * p.steps))
        pretrain(
            model, data.public, p.steps, root.child("pretrain"), noisy_link(cfg), cfg.pretrain_optimizer(),
            p.batch_size, clean, semantic_weight=p.semantic_weight,
        )
    elif arm == "baseline1_traditional":
        pretrain(model, data.public, p.steps, root.child("pretrain"), LinkConfig(bypass=True), cfg.pretrain_optimizer(), p.batch_size)
    return model


def finetune_arm(cfg: ExperimentConfig, arm: str, seed: int, model: MTSCModel, data: SeedData) -> TrainLog | list[float]:
    """Phase II on the client shards.

    The semantic arms use the split protocol.  The traditional arm has no
    learned link to split, so it gets the same number of updates centrally
    on the pooled client data with the link bypassed.
    """
    root = RngHandle(seed).child(arm)
    rc = round_config(cfg, root.child("federation"))
    if arm == "baseline1_traditional":
        model.prepare_finetune()
        pooled = data.shards[0]
        for shard in data.shards[1:]:
            pooled = Dataset(**{k: np.concatenate([getattr(pooled, k), getattr(shard, k)]) for k in vars(pooled)})
        steps = rc.rounds * rc.num_clients * rc.local_steps
        return centralized_train(model, pooled, steps, root.child("finetune"), LinkConfig(bypass=True), rc.optimizer, rc.batch_size)
    if arm == "proposed":
        model.prepare_finetune()
    return run_training(model, data.shards, rc)


def train_arms(cfg: ExperimentConfig, seed: int, data: SeedData | None = None, arms=None) -> dict[str, MTSCModel]:
    data = data or make_data(cfg, seed)
    out = {}
    for arm in arms or cfg.sweep.arms:
        model = pretrain_arm(cfg, arm, seed, data)
        finetune_arm(cfg, arm, seed, model, data)
        out[arm] = model
    return out


def build_kbs(model: MTSCModel, data: Dataset, scope_prefix: str = "") -> tuple[KnowledgeBase, KnowledgeBase]:
    """Class-prototype knowledge bases: mean transmitter semantics per class
    (client side) and mean decoder representation per class (server side)."""
    clean = clean_forward(model, data.inputs(), tasks=())
    tx, rx = KnowledgeBase("local", model.cfg.d), KnowledgeBase("global", model.cfg.d)
    for c in np.unique(data.label):
        rows = data.label == c
        for kb, feats in ((tx, clean["sv"]), (rx, clean["rep"])):
            proto = feats[rows].mean(axis=0)
            if np.any(proto):
                kb.insert(proto, proto, f"{scope_prefix}class{int(c)}")
    return tx, rx


def checkpoint_path(directory, arm: str, seed: int) -> str:
    return os.path.join(directory, f"{arm}_seed{seed}.mtsc")


def save_model(path, model: MTSCModel):
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    save_checkpoint(path, model.state_dict())


def load_model(path, model_cfg: ModelConfig) -> MTSCModel:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing checkpoint {path}")
    model = MTSCModel(model_cfg)
    model.load_state_dict(load_checkpoint(path))
    return model
