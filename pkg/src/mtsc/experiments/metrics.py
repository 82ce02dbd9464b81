"""Task metrics: accuracy, PSNR, BLEU-1 and importance-weighted distortion."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from ..adaptive import importance_weighted_distortion
from ..data import PAD

PSNR_CAP = 99.0
METRIC_FOR_TASK = {
    "classify": "accuracy",
    "vqa": "accuracy",
    "caption": "bleu1",
    "reconstruct": "psnr_db",
    "semantic": "iw_distortion",
}


def compute_psnr(ref, test, max_val: float = 1.0) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val**2 / mse))


def compute_bleu1(candidate, reference) -> float:
    """Clipped unigram precision times brevity penalty."""
    cand, ref = list(candidate), list(reference)
    if not ref:
        raise ValueError("reference must be non-empty")
    if not cand:
        return 0.0
    ref_counts = Counter(ref)
    clipped = sum(min(c, ref_counts[t]) for t, c in Counter(cand).items())
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(cand)))
    return bp * clipped / len(cand)


def strip_pad(tokens) -> list[int]:
    return [int(t) for t in tokens if t != PAD]


def caption_bleu1(pred_tokens: np.ndarray, ref_tokens: np.ndarray) -> float:
    """Mean BLEU-1 over rows, padding removed from both sides."""
    return float(np.mean([compute_bleu1(strip_pad(p), strip_pad(r)) for p, r in zip(pred_tokens, ref_tokens)]))


def task_metrics(outputs: dict, targets: dict, tasks) -> dict[str, float]:
    """One scalar per task from batched head outputs."""
    out = {}
    for task in tasks:
        pred = outputs[task]
        if task in ("classify", "vqa"):
            out[task] = float(np.mean(pred.argmax(axis=1) == targets[task]))
        elif task == "caption":
            out[task] = caption_bleu1(pred.argmax(axis=2), targets[task])
        elif task == "reconstruct":
            ref = np.asarray(targets[task]).reshape(pred.shape)
            out[task] = float(np.mean([compute_psnr(r, np.clip(p, 0.0, 1.0)) for r, p in zip(ref, pred)]))
    return out


def mean_iw_distortion(sv: np.ndarray, sv_hat: np.ndarray, scores: np.ndarray) -> float:
    return float(np.mean([importance_weighted_distortion(a, b, s) for a, b, s in zip(sv, sv_hat, scores)]))
