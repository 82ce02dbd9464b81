"""Per-client model compression: global magnitude pruning, symmetric uniform
quantization, a memory/MAC cost model and exhaustive plan search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .io import QuantSection, encode_tensors

PRUNE_RATES = (0.0, 0.25, 0.5, 0.75)
QUANT_BITS = (4, 8, 16, 32)


class InfeasiblePlanError(RuntimeError):
    """No plan in the grid satisfies the client's memory and compute budgets."""


@dataclass(frozen=True)
class ClientProfile:
    mem_budget_bytes: int
    compute_budget_mac: int
    min_accuracy: float = 0.0

    def __post_init__(self):
        if self.mem_budget_bytes <= 0 or self.compute_budget_mac <= 0:
            raise ValueError("budgets must be positive")
        if not 0.0 <= self.min_accuracy <= 1.0:
            raise ValueError("min_accuracy must lie in [0, 1]")


@dataclass(frozen=True, order=True)
class CompressionPlan:
    prune_rate: float = 0.0
    quant_bits: int = 32

    def __post_init__(self):
        if self.prune_rate not in PRUNE_RATES:
            raise ValueError(f"prune_rate must be one of {PRUNE_RATES}")
        if self.quant_bits not in QUANT_BITS:
            raise ValueError(f"quant_bits must be one of {QUANT_BITS}")


def plan_grid() -> list[CompressionPlan]:
    return [CompressionPlan(r, b) for r, b in itertools.product(PRUNE_RATES, QUANT_BITS)]


def is_weight(name: str) -> bool:
    """Weights are pruned and quantized; biases and LoRA factors are exempt."""
    return name.endswith(".W") or name.endswith("text_emb")


def prune_magnitude(params: dict[str, np.ndarray], rate: float):
    """Zero the ceil(rate * n) smallest-magnitude weights across all tensors.

    Ties are broken by (tensor name, flat index), ascending.  Returns
    ``(pruned, masks)``; masks are True where a weight survives.
    """
    if rate not in PRUNE_RATES:
        raise ValueError(f"prune rate must be one of {PRUNE_RATES}")
    names = sorted(params)
    flat = [np.asarray(params[n], dtype=np.float64).reshape(-1) for n in names]
    n_total = sum(f.size for f in flat)
    n_drop = math.ceil(rate * n_total)
    keep = [np.ones(f.size, dtype=bool) for f in flat]
    if n_drop:
        mags = np.concatenate([np.abs(f) for f in flat])
        tensor_id = np.concatenate([np.full(f.size, i) for i, f in enumerate(flat)])
        index = np.concatenate([np.arange(f.size) for f in flat])
        order = np.lexsort((index, tensor_id, mags))[:n_drop]
        for j in order:
            keep[tensor_id[j]][index[j]] = False
    pruned, masks = {}, {}
    for n, f, k in zip(names, flat, keep):
        shape = np.shape(params[n])
        pruned[n] = np.where(k, f, 0.0).reshape(shape)
        masks[n] = k.reshape(shape)
    return {n: pruned[n] for n in params}, {n: masks[n] for n in params}


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_uniform(tensor, bits: int):
    """Symmetric per-tensor quantization -> (integer codes as float64, scale)."""
    w = np.asarray(tensor, dtype=np.float64)
    if bits == 32:
        return w.copy(), 1.0
    if bits not in (4, 8, 16):
        raise ValueError("bits must be 4, 8, 16 (or 32 to bypass)")
    qmax = 2 ** (bits - 1) - 1
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    if peak == 0.0:
        return np.zeros_like(w), 0.0
    scale = peak / qmax
    codes = np.clip(_round_half_away(w / scale), -qmax, qmax)
    return codes, scale


def dequantize(codes, scale: float, bits: int = 8) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    if bits == 32:
        return codes.copy()
    return codes * scale


def estimate_cost(params: dict[str, np.ndarray], plan: CompressionPlan, dense: Iterable[str] | None = None):
    """``(mem_bytes, mac_count)`` for the compressible weights under ``plan``.

    Memory counts surviving weights at the plan's bit width plus a one-bit
    mask per weight when pruning.  MACs count one multiply-accumulate per
    surviving entry of each dense weight matrix (2-D tensors by default).
    """
    n = sum(np.size(v) for v in params.values())
    kept = n - math.ceil(plan.prune_rate * n)
    mask_bits = n if plan.prune_rate > 0 else 0
    mem = math.ceil((kept * plan.quant_bits + mask_bits) / 8)
    dense_names = set(dense) if dense is not None else {k for k, v in params.items() if np.ndim(v) == 2}
    macs = sum(np.size(params[k]) for k in dense_names)
    return mem, math.ceil(macs * (1.0 - plan.prune_rate))


@dataclass
class CompressedModel:
    params: dict[str, np.ndarray]  # dequantized, ready to load
    codes: dict[str, np.ndarray]
    scales: dict[str, float]
    masks: dict[str, np.ndarray]
    plan: CompressionPlan

    def to_bytes(self) -> bytes:
        quant = {
            n: QuantSection(self.plan.quant_bits, self.scales[n], self.masks[n].reshape(-1))
            for n in self.codes
        }
        return encode_tensors(self.codes, quant)


def compress(params: dict[str, np.ndarray], plan: CompressionPlan) -> CompressedModel:
    pruned, masks = prune_magnitude(params, plan.prune_rate)
    codes, scales, deq = {}, {}, {}
    for name, w in pruned.items():
        c, s = quantize_uniform(w, plan.quant_bits)
        codes[name], scales[name] = c, s
        deq[name] = dequantize(c, s, plan.quant_bits)
    return CompressedModel(deq, codes, scales, masks, plan)


@dataclass
class PlanChoice:
    plan: CompressionPlan
    accuracy: float
    mem_bytes: int
    mac_count: int
    meets_accuracy: bool
    table: list[tuple[CompressionPlan, int, int, float]] = field(default_factory=list, repr=False)


def optimize_plan(
    profile: ClientProfile,
    params: dict[str, np.ndarray],
    eval_fn: Callable[[CompressionPlan], float],
    dense: Iterable[str] | None = None,
) -> PlanChoice:
    """Exhaustive search over the 16-plan grid.

    Objective (lexicographic): fewest MACs, then higher accuracy, then fewer
    bits, among plans inside both budgets that reach ``min_accuracy``.  When
    no budget-feasible plan reaches the floor, the most accurate
    budget-feasible plan is returned with ``meets_accuracy=False``.
    """
    dense = list(dense) if dense is not None else None
    table = []
    for plan in plan_grid():
        mem, mac = estimate_cost(params, plan, dense)
        fits = mem <= profile.mem_budget_bytes and mac <= profile.compute_budget_mac
        acc = float(eval_fn(plan)) if fits else float("nan")
        table.append((plan, mem, mac, acc))
    in_budget = [row for row in table if not math.isnan(row[3])]
    if not in_budget:
        raise InfeasiblePlanError(
            f"no plan fits mem <= {profile.mem_budget_bytes} B and mac <= {profile.compute_budget_mac}"
        )
    good = [row for row in in_budget if row[3] >= profile.min_accuracy]
    if good:
        plan, mem, mac, acc = min(good, key=lambda r: (r[2], -r[3], r[0].quant_bits, r[0].prune_rate))
        return PlanChoice(plan, acc, mem, mac, True, table)
    plan, mem, mac, acc = min(in_budget, key=lambda r: (-r[3], r[2], r[0].quant_bits, r[0].prune_rate))
    return PlanChoice(plan, acc, mem, mac, False, table)
