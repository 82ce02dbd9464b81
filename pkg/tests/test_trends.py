"""Sweep trends beyond the acceptance criteria, on the shared five-seed sweep."""

import numpy as np
import pytest

from mtsc.experiments.config import ARMS
from mtsc.experiments.sweep import per_seed


def means(records, arm, task):
    table = per_seed(records, arm, task)
    return [float(np.mean(list(table[s].values()))) for s in sorted(table)]


@pytest.mark.parametrize("arm", ARMS)
def test_psnr_increases_for_every_arm(default_sweep, arm):
    psnr = means(default_sweep, arm, "reconstruct")
    assert all(b > a for a, b in zip(psnr, psnr[1:])), psnr


@pytest.mark.xfail(
    strict=True,
    reason="QPSK BER over K=3 Rician fading still falls about 2.5x from 9 to 12 dB, so the "
    "traditional arm keeps improving; observed changes are 4-15% per task",
)
@pytest.mark.parametrize("task", ["classify", "vqa", "caption", "reconstruct"])
def test_traditional_arm_flat_above_9db(default_sweep, task):
    table = per_seed(default_sweep, "baseline1_traditional", task)
    at9 = np.mean(list(table[9.0].values()))
    at12 = np.mean(list(table[12.0].values()))
    assert abs(at12 - at9) / abs(at12) < 0.02
