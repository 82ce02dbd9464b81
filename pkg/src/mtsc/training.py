"""Losses, per-step link sampling and centralized (Phase I) training."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import nn
from .adaptive import allocate_batch, score_importance
from .data import Dataset
from .models import TASKS, LinkDraws, MTSCModel, link_batch
from .nn import Optimizer, OptimizerConfig, Tensor
from .rng import RngHandle


@dataclass(frozen=True)
class LinkConfig:
    """How the link is sampled for each training step.

    ``snr_range``/``budget_range`` are inclusive ranges drawn per sample;
    ``noise=False`` keeps allocation adaptive but skips the channel;
    ``bypass=True`` removes JSC coding altogether (semantic vector handed
    straight to the fusion decoder).
    """

    noise: bool = True
    snr_range: tuple[float, float] = (-6.0, 12.0)
    budget_range: tuple[int, int] = (8, 32)
    k_factor: float = 3.0
    fading: bool = True
    bypass: bool = False


@dataclass
class StepDraw:
    idx: np.ndarray
    snr_db: np.ndarray
    budget: np.ndarray
    draws: LinkDraws


def draw_step(gen: np.random.Generator, n_data: int, batch_size: int, link: LinkConfig, max_symbols: int = 32) -> StepDraw:
    """All randomness for one training step, in a fixed draw order."""
    idx = gen.choice(n_data, size=min(batch_size, n_data), replace=False)
    n = idx.size
    snr = gen.uniform(link.snr_range[0], link.snr_range[1], size=n)
    budget = gen.integers(link.budget_range[0], link.budget_range[1] + 1, size=n)
    draws = LinkDraws.draw(gen, n, max_symbols, link.k_factor, link.fading)
    return StepDraw(idx, snr, budget, draws)


def task_losses(model: MTSCModel, rep: Tensor, targets: dict, tasks: Sequence[str] = TASKS) -> dict[str, Tensor]:
    cfg = model.cfg
    out = {}
    for task in tasks:
        pred = model.heads.decode(rep, task)
        if task in ("classify", "vqa"):
            out[task] = nn.cross_entropy_loss(pred, targets[task])
        elif task == "caption":
            out[task] = nn.cross_entropy_loss(
                pred.reshape(-1, cfg.vocab), np.asarray(targets[task]).reshape(-1)
            )
        elif task == "reconstruct":
            out[task] = nn.mse_loss(pred, np.asarray(targets[task]).reshape(pred.shape))
        else:
            raise KeyError(f"unknown task {task!r}")
    return out


def multitask_loss(parts: dict[str, Tensor]) -> Tensor:
    """Unweighted mean of per-task losses."""
    total = None
    for t in parts.values():
        total = t if total is None else nn.add(total, t)
    return nn.mul(total, 1.0 / len(parts))


def allocation_for(model: MTSCModel, sv: np.ndarray, snr_db, budget) -> np.ndarray:
    scores = np.stack([score_importance(r, model.cfg.n_blocks) for r in sv])
    return allocate_batch(scores, snr_db, budget)


def semantic_loss(sv_hat: Tensor, sv: np.ndarray) -> Tensor:
    """MSE of the received semantic estimate against the (constant) transmitted
    vector, normalized by the vector's mean power."""
    power = float(np.mean(sv**2))
    return nn.mul(nn.mse_loss(sv_hat, sv), 1.0 / max(power, 1e-12))


def composite_loss(
    model: MTSCModel,
    data: Dataset,
    step: StepDraw,
    link: LinkConfig,
    tasks: Sequence[str] = TASKS,
    semantic_weight: float = 0.0,
):
    """Un-split forward of the whole pipeline for one step; returns (loss, parts).

    ``semantic_weight > 0`` adds ``semantic_loss`` so the JSC decoder stays an
    estimator of the semantic vector; it is reported as ``parts["semantic"]``.
    """
    inputs, targets = data.inputs(step.idx), data.targets(step.idx)
    sv = model.semantic(inputs)
    if link.bypass:
        sv_hat = sv
    else:
        alloc = allocation_for(model, sv.data, step.snr_db, step.budget)
        x = model.jsc_encode_slots(sv, alloc)
        if link.noise:
            x = nn.straight_through(x, link_batch(x.data, alloc, step.snr_db, step.draws))
        sv_hat = model.jsc_decode_slots(x, alloc)
    rep = model.fusion_decode(sv_hat)
    parts = task_losses(model, rep, targets, tasks)
    loss = multitask_loss(parts)
    if semantic_weight > 0 and not link.bypass:
        parts["semantic"] = semantic_loss(sv_hat, sv.data)
        loss = nn.add(loss, nn.mul(parts["semantic"], semantic_weight))
    return loss, parts


def centralized_train(
    model: MTSCModel,
    data: Dataset,
    steps: int,
    rng: RngHandle,
    link: LinkConfig = LinkConfig(),
    optimizer: OptimizerConfig = OptimizerConfig("adam", 3e-3),
    batch_size: int = 64,
    tasks: Sequence[str] = TASKS,
    opt: Optimizer | None = None,
    log_every: int = 0,
    semantic_weight: float = 0.0,
) -> list[float]:
    """Plain monolithic training of every trainable tensor.  Used for Phase I
    pre-training and as the reference for the split protocol."""
    gen = rng.generator()
    opt = opt or Optimizer(optimizer)
    params = model.named_parameters()
    losses = []
    for i in range(steps):
        step = draw_step(gen, len(data), batch_size, link, model.cfg.max_total_symbols)
        loss, _ = composite_loss(model, data, step, link, tasks, semantic_weight)
        loss.backward()
        opt.step(params)
        nn.zero_grad(params)
        losses.append(loss.item())
        if log_every and (i + 1) % log_every == 0:
            print(f"step {i + 1:5d}  loss {np.mean(losses[-log_every:]):.4f}")
    return losses


def pretrain(
    model: MTSCModel,
    public: Dataset,
    steps: int,
    rng: RngHandle,
    link: LinkConfig = LinkConfig(),
    optimizer: OptimizerConfig = OptimizerConfig("adam", 3e-3),
    batch_size: int = 64,
    clean_steps: int = 0,
    log_every: int = 0,
    semantic_weight: float = 0.0,
) -> list[float]:
    """Phase I: train the full pipeline on public data with adapters disabled.

    The first ``clean_steps`` steps skip the channel (allocation and JSC
    coding still run); the remaining ``steps - clean_steps`` use ``link``.
    ``semantic_weight`` is passed to ``composite_loss``.
    Starting clean lets the encoders pick up fine-grained features such as
    the question token before noise pushes them toward coarse, robust ones.
    """
    if not 0 <= clean_steps <= steps:
        raise ValueError("clean_steps must lie in [0, steps]")
    model.freeze_fusion_base(False)
    model.set_adapters_trainable(False)
    opt = Optimizer(optimizer)
    clean = replace(link, noise=False)
    kw = dict(batch_size=batch_size, opt=opt, log_every=log_every, semantic_weight=semantic_weight)
    losses = centralized_train(model, public, clean_steps, rng.child("clean"), clean, **kw)
    losses += centralized_train(model, public, steps - clean_steps, rng.child("noisy"), link, **kw)
    return losses
