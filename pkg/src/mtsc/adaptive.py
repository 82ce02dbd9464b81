"""Importance-aware variable-rate symbol allocation.

Blocks of the semantic vector are scored by their share of the total L2 norm.
The symbol budget is then split between an even share (robust at low SNR) and
an importance-proportional share (efficient at high SNR), and integerized with
the largest-remainder rule under a per-block cap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

N_BLOCKS = 8
BLOCK_SIZE = 4
BLOCK_CAP = 4
SNR_LO = -6.0
SNR_HI = 12.0


@dataclass(frozen=True)
class RateAllocation:
    s: tuple[int, ...]
    total_budget: int
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def total(self) -> int:
        return int(sum(self.s))

    def __post_init__(self):
        if any(v < 0 or v > BLOCK_CAP for v in self.s):
            raise ValueError(f"per-block symbol counts must lie in [0, {BLOCK_CAP}]: {self.s}")

    def to_bytes(self) -> bytes:
        """Side-info wire format: (block_id u8, s_i u8) per block."""
        return b"".join(struct.pack("<BB", i, v) for i, v in enumerate(self.s))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "RateAllocation":
        if len(raw) % 2:
            raise ValueError("allocation side info must be (block_id, s_i) byte pairs")
        pairs = [struct.unpack("<BB", raw[i : i + 2]) for i in range(0, len(raw), 2)]
        ids = [p[0] for p in pairs]
        if ids != list(range(len(pairs))):
            raise ValueError(f"block ids out of order: {ids}")
        s = tuple(p[1] for p in pairs)
        return cls(s, sum(s))


def uniform_allocation(total_budget: int, n_blocks: int = N_BLOCKS) -> RateAllocation:
    return allocate_from_lambda(np.full(n_blocks, 1.0 / n_blocks), 0.0, total_budget)


def score_importance(sv, n_blocks: int = N_BLOCKS) -> np.ndarray:
    """Per-block L2 norm shares; an all-zero vector scores uniformly."""
    values = np.asarray(getattr(sv, "values", sv), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("semantic vector has non-finite entries")
    norms = np.linalg.norm(values.reshape(n_blocks, -1), axis=1)
    total = norms.sum()
    if total == 0.0:
        return np.full(n_blocks, 1.0 / n_blocks)
    return norms / total


def snr_weight(snr_db: float, snr_lo: float = SNR_LO, snr_hi: float = SNR_HI) -> float:
    """Interpolation weight between even (0) and importance-proportional (1) shares."""
    return min(1.0, max(0.0, (snr_db - snr_lo) / (snr_hi - snr_lo)))


def allocate_from_lambda(scores, lam: float, total_budget: int, cap: int = BLOCK_CAP) -> RateAllocation:
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    warnings: list[str] = []
    budget = int(total_budget)
    if budget < 0:
        raise ValueError("total_budget must be non-negative")
    if budget > cap * n:
        warnings.append(f"budget {budget} clamped to {cap * n}")
        budget = cap * n

    target = budget * (lam * scores + (1.0 - lam) / n)
    s = np.minimum(np.floor(target).astype(int), cap)
    remainder = target - np.floor(target)
    # descending remainder, ties to the lower block index
    order = sorted(range(n), key=lambda i: (-remainder[i], i))
    left = budget - int(s.sum())
    while left > 0:
        for i in order:
            if left == 0:
                break
            if s[i] < cap:
                s[i] += 1
                left -= 1
    return RateAllocation(tuple(int(v) for v in s), int(total_budget), tuple(warnings))


def allocate_rates(scores, snr_db: float, total_budget: int, snr_lo: float = SNR_LO, snr_hi: float = SNR_HI) -> RateAllocation:
    """Channel- and importance-aware allocation of ``total_budget`` symbols.

    ``snr_db`` may also be a ChannelState.
    """
    snr = getattr(snr_db, "snr_db", snr_db)
    return allocate_from_lambda(scores, snr_weight(snr, snr_lo, snr_hi), total_budget)


def allocate_batch(scores: np.ndarray, snr_db, total_budget) -> np.ndarray:
    """Row-wise ``allocate_rates``; returns an int array (n, blocks)."""
    scores = np.atleast_2d(scores)
    n = scores.shape[0]
    snr = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (n,))
    budget = np.broadcast_to(np.asarray(total_budget), (n,))
    return np.array(
        [allocate_rates(scores[i], float(snr[i]), int(budget[i])).s for i in range(n)], dtype=np.int64
    ).reshape(n, scores.shape[1])


def importance_weighted_distortion(sv, sv_hat, scores, n_blocks: int = N_BLOCKS) -> float:
    a = np.asarray(getattr(sv, "values", sv), dtype=np.float64)
    b = np.asarray(getattr(sv_hat, "values", sv_hat), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    err = ((a - b).reshape(n_blocks, -1) ** 2).sum(axis=1)
    return float(np.dot(np.asarray(scores, dtype=np.float64), err))

