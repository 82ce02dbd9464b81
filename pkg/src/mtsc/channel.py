"""Wireless link: power normalization, Rician block fading, AWGN, ZF equalization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .rng import RngHandle

ERASURE_THRESHOLD = 1e-12


@dataclass(frozen=True)
class ChannelState:
    """Channel configuration for one transmission.

    ``fading_mode="block"`` draws one Rician coefficient per transmission;
    ``"static"`` disables fading (h = 1, pure AWGN).
    """

    snr_db: float
    k_factor: float = 3.0
    rng: RngHandle = field(default_factory=lambda: RngHandle(0))
    fading_mode: str = "block"

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.k_factor < 0:
            raise ValueError("Rician K-factor must be non-negative")
        if self.fading_mode not in ("block", "static"):
            raise ValueError(f"unknown fading mode {self.fading_mode!r}")

    @property
    def noise_var(self) -> float:
        return snr_db_to_noise_var(self.snr_db)


class Normalized(NamedTuple):
    blocks: list[np.ndarray]
    scale: float
    zero_power: bool


def _as_blocks(blocks) -> list[np.ndarray]:
    return [np.asarray(b, dtype=np.complex128).reshape(-1) for b in blocks]


def power_normalize(blocks: Sequence) -> Normalized:
    """Scale the concatenated transmission to unit average symbol power.

    The returned ``scale`` is the amplitude factor that was applied, so the
    receiver can undo it.  An all-zero transmission is passed through with
    ``zero_power=True``.
    """
    blocks = _as_blocks(blocks)
    flat = np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.complex128)
    if flat.size == 0:
        raise ValueError("power_normalize needs at least one symbol")
    power = float(np.mean(np.abs(flat) ** 2))
    if power == 0.0:
        return Normalized(blocks, 1.0, True)
    scale = 1.0 / math.sqrt(power)
    return Normalized([b * scale for b in blocks], scale, False)


def snr_db_to_noise_var(snr_db: float, signal_power: float = 1.0):
    """Total complex noise variance; each of I and Q carries half."""
    return signal_power / 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0)


def rician_gain(k_factor: float, gen: np.random.Generator, size) -> np.ndarray:
    """Draw h = sqrt(K/(K+1)) + sqrt(1/(K+1)) g with g ~ CN(0, 1)."""
    g = gen.standard_normal(tuple(np.atleast_1d(size)) + (2,)) @ np.array([1.0, 1j]) / math.sqrt(2.0)
    los = math.sqrt(k_factor / (k_factor + 1.0))
    nlos = math.sqrt(1.0 / (k_factor + 1.0))
    return los + nlos * g


def apply_channel_batch(
    x: np.ndarray,
    snr_db,
    gen: np.random.Generator,
    k_factor: float = 3.0,
    fading: bool = True,
):
    """Vectorized channel over rows of ``x`` (n transmissions x m symbols).

    Each row gets its own fading coefficient.  Draw order is fixed: first the
    n fading draws, then the n*m noise draws, so a row's randomness depends
    only on the generator state and the shape.

    Returns ``(y, h, sigma2)`` with ``h`` and ``sigma2`` of length n.
    """
    x = np.asarray(x, dtype=np.complex128)
    n, m = x.shape
    fade = rician_gain(k_factor, gen, n)
    h = fade if fading else np.ones(n, dtype=np.complex128)
    sigma2 = np.broadcast_to(snr_db_to_noise_var(snr_db), (n,)).astype(np.float64)
    w = gen.standard_normal((n, m, 2)) @ np.array([1.0, 1j])
    noise = w * np.sqrt(sigma2 / 2.0)[:, None]
    return h[:, None] * x + noise, h, sigma2


def apply_channel(blocks: Sequence, state: ChannelState):
    """Pass one power-normalized transmission through the channel.

    Stateless: the same ``state`` (including its RngHandle) always produces
    the same realization.  Returns the received blocks and the per-block
    fading coefficient (constant across blocks under block fading).
    """
    blocks = _as_blocks(blocks)
    sizes = [b.size for b in blocks]
    flat = np.concatenate(blocks) if blocks else np.zeros(0, dtype=np.complex128)
    y, h, _ = apply_channel_batch(
        flat[None, :],
        state.snr_db,
        state.rng.generator(),
        k_factor=state.k_factor,
        fading=state.fading_mode == "block",
    )
    bounds = np.cumsum([0] + sizes)
    received = [y[0, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
    return received, np.full(len(blocks), h[0])


def equalize(received: Sequence, h, threshold: float = ERASURE_THRESHOLD):
    """Zero-forcing with perfect CSI.

    Returns ``(x_hat, erased)``.  Blocks whose |h| falls below ``threshold``
    are marked erased and returned as zeros for downstream imputation.
    """
    received = _as_blocks(received)
    h = np.broadcast_to(np.asarray(h, dtype=np.complex128), (len(received),))
    erased = np.abs(h) < threshold
    x_hat = [np.zeros_like(y) if e else y / hb for y, hb, e in zip(received, h, erased)]
    return x_hat, erased


def empirical_snr_db(x: np.ndarray, y: np.ndarray, h: np.ndarray) -> float:
    """Received SNR: faded signal power over residual noise power."""
    x = np.asarray(x)
    signal = np.asarray(h).reshape(-1, *([1] * (x.ndim - 1))) * x
    noise = np.asarray(y) - signal
    return 10.0 * math.log10(np.mean(np.abs(signal) ** 2) / np.mean(np.abs(noise) ** 2))


def write_channel_trace(path, sample_ids, h, sigma2):
    """CSV export of fading realizations: sample_id, h_re, h_im, sigma2."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "h_re", "h_im", "sigma2"])
        for sid, hv, s2 in zip(sample_ids, np.asarray(h), np.asarray(sigma2)):
            writer.writerow([int(sid), repr(float(hv.real)), repr(float(hv.imag)), repr(float(s2))])
