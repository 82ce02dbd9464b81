"""Comparison arms.

``baseline1_traditional`` sends the raw payload with separate source and
channel coding: 8-bit uniform quantization, Gray-mapped QPSK, the same fading
channel, zero-forcing and hard decisions.  A model trained without any link
then runs on the reconstructed payload.

``baseline2_no_lam`` keeps the proposed topology but swaps the pre-trained
fusion stack for a narrow one trained from scratch without adapters.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import integrate, special, stats

from ..adaptive import score_importance
from ..data import VOCAB
from ..models import LinkDraws, ModelConfig, MTSCModel, TASKS, run_batch

PAYLOAD_BITS = 8


# -- QPSK modem ------------------------------------------------------------------


def qpsk_modulate(bits: np.ndarray) -> np.ndarray:
    """Gray QPSK, unit energy: (b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1] % 2:
        raise ValueError("QPSK needs an even number of bits")
    b = bits.reshape(bits.shape[:-1] + (-1, 2)).astype(np.float64)
    return ((1 - 2 * b[..., 0]) + 1j * (1 - 2 * b[..., 1])) / np.sqrt(2.0)


def qpsk_demodulate(symbols: np.ndarray) -> np.ndarray:
    out = np.empty(symbols.shape + (2,), dtype=np.uint8)
    out[..., 0] = symbols.real < 0
    out[..., 1] = symbols.imag < 0
    return out.reshape(symbols.shape[:-1] + (-1,))


def q_function(x):
    return 0.5 * special.erfc(np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


def qpsk_ber_awgn(snr_db: float) -> float:
    """Per-bit error rate of Gray QPSK at symbol SNR ``snr_db``."""
    return float(q_function(np.sqrt(10.0 ** (snr_db / 10.0))))


def qpsk_ber_rician(snr_db: float, k_factor: float = 3.0) -> float:
    """Average of Q(sqrt(|h|^2 SNR)) over unit-power Rician |h|^2.

    2 (K + 1) |h|^2 is non-central chi-square with 2 degrees of freedom and
    non-centrality 2K.
    """
    snr = 10.0 ** (snr_db / 10.0)
    c = 2.0 * (k_factor + 1.0)
    dist = stats.ncx2(df=2, nc=2.0 * k_factor) if k_factor > 0 else stats.chi2(df=2)
    # integrate over the effective support; [0, inf) misses the narrow peak at large K
    lo, hi = dist.ppf(1e-15), dist.isf(1e-15)
    f = lambda u: q_function(np.sqrt(u / c * snr)) * dist.pdf(u)
    val, _ = integrate.quad(f, lo, hi, points=[dist.mean()], limit=400, epsabs=1e-14)
    return float(val)


# -- payload coding ----------------------------------------------------------------


def quantize_payload(inputs: dict) -> np.ndarray:
    """Raw image/text/audio -> (n, n_values) uint8 codes."""
    image = np.clip(np.round(np.asarray(inputs["image"]) * 255.0), 0, 255)
    text = np.asarray(inputs["text"])
    audio = np.clip(np.round((np.asarray(inputs["audio"]) + 1.0) * 127.5), 0, 255)
    return np.concatenate([image, text, audio], axis=1).astype(np.uint8)


def dequantize_payload(codes: np.ndarray, image_px: int, text_len: int) -> dict:
    codes = codes.astype(np.float64)
    image = codes[:, :image_px] / 255.0
    text = codes[:, image_px : image_px + text_len].astype(np.int64) % VOCAB
    audio = codes[:, image_px + text_len :] / 127.5 - 1.0
    return {"image": image, "text": text, "audio": audio}


def payload_symbols(inputs: dict) -> int:
    return quantize_payload({k: v[:1] for k, v in inputs.items()}).shape[1] * PAYLOAD_BITS // 2


def transmit_payload(inputs: dict, snr_db, draws: LinkDraws):
    """Quantize, QPSK over the fading channel, ZF + hard decisions.

    Returns ``(reconstructed inputs, bit error rate)``.
    """
    codes = quantize_payload(inputs)
    n = codes.shape[0]
    bits = np.unpackbits(codes, axis=1)
    x = qpsk_modulate(bits)
    m = x.shape[1]
    sigma = np.sqrt(np.broadcast_to(10.0 ** (-np.asarray(snr_db, dtype=np.float64) / 10.0), (n,)))
    y = draws.h[:, None] * x + sigma[:, None] * draws.w[:, :m]
    x_hat = y / draws.h[:, None]
    bits_hat = qpsk_demodulate(x_hat)
    ber = float(np.mean(bits_hat != bits))
    codes_hat = np.packbits(bits_hat, axis=1)
    image_px = np.asarray(inputs["image"]).shape[1]
    text_len = np.asarray(inputs["text"]).shape[1]
    return dequantize_payload(codes_hat, image_px, text_len), ber


def clean_forward(model: MTSCModel, inputs: dict, tasks=TASKS) -> dict:
    """Pipeline with the link removed: semantics go straight to the decoder."""
    sv = model.semantic(inputs)
    rep = model.fusion_decode(sv)
    out = {t: model.heads.decode(rep, t).data for t in tasks}
    out.update(sv=sv.data, rep=rep.data)
    return out


def run_baseline1(model: MTSCModel, inputs: dict, snr_db, draws: LinkDraws | None, tasks=TASKS) -> dict:
    """Separate source/channel coding; ``draws=None`` is a noiseless link."""
    if draws is None:
        rx_inputs, ber = {k: np.asarray(inputs[k]) for k in ("image", "text", "audio")}, 0.0
        rx_inputs = dequantize_payload(quantize_payload(rx_inputs), rx_inputs["image"].shape[1], rx_inputs["text"].shape[1])
    else:
        rx_inputs, ber = transmit_payload(inputs, snr_db, draws)
    out = clean_forward(model, rx_inputs, tasks)
    sv_ref = model.semantic(inputs).data
    out.update(
        sv_hat=out["sv"],
        sv=sv_ref,
        scores=np.stack([score_importance(r, model.cfg.n_blocks) for r in sv_ref]),
        ber=ber,
    )
    return out


def baseline2_config(cfg: ModelConfig = ModelConfig()) -> ModelConfig:
    """Quarter-width fusion stack without adapters."""
    return replace(cfg, fusion_hidden=max(1, cfg.fusion_hidden // 4), use_lora=False)


def run_baseline2(model: MTSCModel, inputs: dict, snr_db, budget, draws: LinkDraws | None, tasks=TASKS) -> dict:
    return run_batch(model, inputs, snr_db, budget, draws, tasks)
