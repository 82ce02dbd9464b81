"""Multi-modal, multi-task semantic transceiver.

Transmitter: modality encoders -> fusion encoder (frozen base + LoRA) ->
variable-rate JSC encoder.  Receiver: JSC decoder -> fusion decoder -> one
head per task.  Every task reads the same decoded representation, so a single
transmission serves all requested tasks.

Batched code works in a *slot layout*: a float array ``(n, blocks, 2 * cap)``
holding, for every block, up to ``cap`` complex symbols as interleaved
(re, im) pairs.  Slots beyond a block's allocation are zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .adaptive import RateAllocation, allocate_batch, score_importance
from .channel import (
    ERASURE_THRESHOLD,
    ChannelState,
    apply_channel,
    apply_channel_batch,
    equalize,
    power_normalize,
)
from .nn import DenseLayer, LoraAdapter, Module, Tensor, lora_forward
from .rng import RngHandle

MODALITIES = ("image", "text", "audio")
TASKS = ("classify", "reconstruct", "vqa", "caption")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    n_blocks: int = 8
    block_size: int = 4
    max_symbols: int = 4
    vocab: int = 64
    text_len: int = 16
    image_side: int = 16
    audio_len: int = 64
    audio_bins: int = 8
    modality_dim: int = 32
    fusion_hidden: int = 32
    lora_rank: int = 4
    lora_alpha: float = 8.0
    use_lora: bool = True
    n_classes: int = 10
    n_answers: int = 10
    caption_slots: int = 8

    @property
    def n_pixels(self) -> int:
        return self.image_side * self.image_side

    @property
    def max_total_symbols(self) -> int:
        return self.n_blocks * self.max_symbols


# -- domain types -----------------------------------------------------------


@dataclass
class ModalitySample:
    modality: str
    payload: np.ndarray

    def validate(self, cfg: ModelConfig = ModelConfig()) -> np.ndarray:
        """Return the payload in canonical flat form or raise ValueError."""
        if self.modality == "image":
            x = np.asarray(self.payload, dtype=np.float64).reshape(-1)
            if x.size != cfg.n_pixels:
                raise ValueError(f"image needs {cfg.n_pixels} pixels, got {x.size}")
            if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
                raise ValueError("pixel values must lie in [0, 1]")
            return x
        if self.modality == "text":
            ids = np.asarray(self.payload).reshape(-1)
            if ids.size > cfg.text_len:
                raise ValueError(f"text longer than {cfg.text_len} tokens")
            if not np.issubdtype(ids.dtype, np.integer):
                raise ValueError("token ids must be integers")
            if np.any(ids < 0) or np.any(ids >= cfg.vocab):
                raise ValueError(f"token id out of range [0, {cfg.vocab})")
            out = np.zeros(cfg.text_len, dtype=np.int64)
            out[: ids.size] = ids
            pad = np.flatnonzero(out == 0)
            if pad.size and np.any(out[pad[0] :] != 0):
                raise ValueError("padding tokens may only appear at the tail")
            return out
        if self.modality == "audio":
            x = np.asarray(self.payload, dtype=np.float64).reshape(-1)
            if x.size != cfg.audio_len:
                raise ValueError(f"audio needs {cfg.audio_len} samples, got {x.size}")
            if np.any(np.abs(x) > 1) or not np.all(np.isfinite(x)):
                raise ValueError("audio samples must lie in [-1, 1]")
            return x
        raise ValueError(f"unknown modality {self.modality!r}")


@dataclass
class SemanticVector:
    values: np.ndarray
    source_mask: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("semantic vector must be finite")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str

    def __post_init__(self):
        if self.task_id not in TASKS:
            raise ValueError(f"unknown task {self.task_id!r}")

    def arity(self, cfg: ModelConfig = ModelConfig()):
        return {
            "classify": (cfg.n_classes,),
            "reconstruct": (cfg.n_pixels,),
            "vqa": (cfg.n_answers,),
            "caption": (cfg.caption_slots, cfg.vocab),
        }[self.task_id]


def audio_energy(wave: np.ndarray, n_bins: int = 8) -> np.ndarray:
    """Band energies of the one-sided spectrum (DC dropped), normalized so a
    unit-amplitude tone contributes 1 to its band."""
    wave = np.atleast_2d(np.asarray(wave, dtype=np.float64))
    n = wave.shape[1]
    spec = np.abs(np.fft.rfft(wave, axis=1)[:, 1 : n // 2 + 1]) ** 2 / (n / 2) ** 2
    return spec.reshape(wave.shape[0], n_bins, -1).sum(axis=2)


# -- network blocks ---------------------------------------------------------


class ModalityEncoders(Module):
    def __init__(self, cfg: ModelConfig, rng: RngHandle | None):
        c = (lambda *k: rng.child(*k)) if rng is not None else (lambda *k: None)
        m = cfg.modality_dim
        self.image1 = DenseLayer(cfg.n_pixels, m, c("image1"))
        self.image2 = DenseLayer(m, m, c("image2"))
        emb = np.zeros((cfg.vocab, m)) if rng is None else 0.5 * c("emb").generator().standard_normal((cfg.vocab, m))
        self.text_emb = Tensor(emb, requires_grad=True)
        self.text_proj = DenseLayer(m, m, c("text_proj"))
        self.audio_proj = DenseLayer(cfg.audio_bins, m, c("audio_proj"))
        self._cfg = cfg

    def image(self, x) -> Tensor:
        h = nn.tanh(nn.dense_forward(nn.as_tensor(x), self.image1))
        return nn.tanh(nn.dense_forward(h, self.image2))

    def text(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        pooled = nn.mean(nn.embedding(self.text_emb, ids), axis=1)
        return nn.tanh(nn.dense_forward(pooled, self.text_proj))

    def audio(self, wave) -> Tensor:
        feats = Tensor(audio_energy(wave, self._cfg.audio_bins))
        return nn.tanh(nn.dense_forward(feats, self.audio_proj))


class _LoraStack(Module):
    """Two dense layers with optional LoRA adapters."""

    def __init__(self, dims: Sequence[int], cfg: ModelConfig, rng: RngHandle | None):
        c = (lambda *k: rng.child(*k)) if rng is not None else (lambda *k: None)
        self.l1 = DenseLayer(dims[0], dims[1], c("l1"))
        self.l2 = DenseLayer(dims[1], dims[2], c("l2"))
        self.adapters: dict[str, LoraAdapter] = {}
        if cfg.use_lora:
            for key, layer in (("l1", self.l1), ("l2", self.l2)):
                rank = min(cfg.lora_rank, layer.d_in, layer.d_out)
                self.adapters[key] = LoraAdapter(layer.d_in, layer.d_out, rank, cfg.lora_alpha, c("lora", key))

    def freeze_base(self, frozen: bool = True):
        self.l1.frozen = frozen
        self.l2.frozen = frozen

    def layer(self, key: str, x: Tensor) -> Tensor:
        return lora_forward(x, getattr(self, key), self.adapters.get(key))


class FusionEncoder(_LoraStack):
    def __init__(self, cfg: ModelConfig, rng: RngHandle | None):
        super().__init__((len(MODALITIES) * cfg.modality_dim, cfg.fusion_hidden, cfg.d), cfg, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.layer("l2", nn.tanh(self.layer("l1", x)))


class FusionDecoder(_LoraStack):
    def __init__(self, cfg: ModelConfig, rng: RngHandle | None):
        super().__init__((cfg.d, cfg.fusion_hidden, cfg.d), cfg, rng)

    def forward(self, x: Tensor) -> Tensor:
        return nn.tanh(self.layer("l2", nn.tanh(self.layer("l1", x))))


class JSCEncoder(Module):
    """One dense projection per rate tier s = 1..cap: block_size -> 2 s reals."""

    def __init__(self, cfg: ModelConfig, rng: RngHandle | None):
        self.tiers = {
            str(s): DenseLayer(cfg.block_size, 2 * s, None if rng is None else rng.child("tier", s))
            for s in range(1, cfg.max_symbols + 1)
        }


class JSCDecoder(Module):
    """One dense map per rate tier s = 1..cap: 2 s reals -> block_size."""

    def __init__(self, cfg: ModelConfig, rng: RngHandle | None):
        self.tiers = {
            str(s): DenseLayer(2 * s, cfg.block_size, None if rng is None else rng.child("tier", s))
            for s in range(1, cfg.max_symbols + 1)
        }


class TaskDecoders(Module):
    def __init__(self, cfg: ModelConfig, rng: RngHandle | None):
        c = (lambda *k: rng.child(*k)) if rng is not None else (lambda *k: None)
        self.heads = {
            "classify": DenseLayer(cfg.d, cfg.n_classes, c("classify")),
            "reconstruct": DenseLayer(cfg.d, cfg.n_pixels, c("reconstruct")),
            "vqa": DenseLayer(cfg.d, cfg.n_answers, c("vqa")),
            "caption": DenseLayer(cfg.d, cfg.caption_slots * cfg.vocab, c("caption")),
        }
        self._cfg = cfg

    def decode(self, rep: Tensor, task: str) -> Tensor:
        if task not in self.heads:
            raise KeyError(f"unknown task {task!r}")
        out = nn.dense_forward(rep, self.heads[task])
        if task == "reconstruct":
            return nn.sigmoid(out)
        if task == "caption":
            return out.reshape(rep.shape[0], self._cfg.caption_slots, self._cfg.vocab)
        return out


def identity_tier(s: int, block_size: int = 4) -> np.ndarray:
    """Rate-tier weight that repeats the block features cyclically over 2 s reals."""
    w = np.zeros((2 * s, block_size))
    w[np.arange(2 * s), np.arange(2 * s) % block_size] = 1.0
    return w


class MTSCModel(Module):
    """The full transceiver; ``device`` and ``server`` name its split."""

    DEVICE = ("encoders", "fusion_enc", "jsc_enc", "heads")
    SERVER = ("jsc_dec", "fusion_dec")

    def __init__(self, cfg: ModelConfig = ModelConfig(), rng: RngHandle | None = None):
        c = (lambda *k: rng.child(*k)) if rng is not None else (lambda *k: None)
        self.encoders = ModalityEncoders(cfg, c("encoders"))
        self.fusion_enc = FusionEncoder(cfg, c("fusion_enc"))
        self.jsc_enc = JSCEncoder(cfg, c("jsc_enc"))
        self.heads = TaskDecoders(cfg, c("heads"))
        self.jsc_dec = JSCDecoder(cfg, c("jsc_dec"))
        self.fusion_dec = FusionDecoder(cfg, c("fusion_dec"))
        self._cfg = cfg

    @property
    def cfg(self) -> ModelConfig:
        return self._cfg

    # -- split bookkeeping --

    def side(self, which: str) -> dict[str, Module]:
        names = {"device": self.DEVICE, "server": self.SERVER}[which]
        return {n: getattr(self, n) for n in names}

    def side_tensors(self, which: str) -> dict[str, Tensor]:
        out = {}
        for n, mod in self.side(which).items():
            out.update(mod.named_tensors(n + "."))
        return out

    def side_parameters(self, which: str) -> dict[str, Tensor]:
        return {k: t for k, t in self.side_tensors(which).items() if t.requires_grad}

    def freeze_fusion_base(self, frozen: bool = True):
        self.fusion_enc.freeze_base(frozen)
        self.fusion_dec.freeze_base(frozen)

    def set_adapters_trainable(self, trainable: bool):
        for stack in (self.fusion_enc, self.fusion_dec):
            for adapter in stack.adapters.values():
                adapter.A.requires_grad = trainable
                adapter.B.requires_grad = trainable

    def prepare_finetune(self):
        """Freeze the pre-trained fusion bases and train only their adapters."""
        if self.cfg.use_lora:
            self.freeze_fusion_base(True)
            self.set_adapters_trainable(True)

    def clone(self) -> "MTSCModel":
        import copy

        self.zero_grad()
        return copy.deepcopy(self)

    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.named_tensors())

    # -- transmitter --

    def modality_features(self, inputs: dict) -> dict[str, Tensor]:
        feats = {}
        if inputs.get("image") is not None:
            feats["image"] = self.encoders.image(np.asarray(inputs["image"]).reshape(-1, self.cfg.n_pixels))
        if inputs.get("text") is not None:
            feats["text"] = self.encoders.text(inputs["text"])
        if inputs.get("audio") is not None:
            feats["audio"] = self.encoders.audio(inputs["audio"])
        return feats

    def fuse(self, feats: dict[str, Tensor]) -> Tensor:
        if not feats:
            raise ValueError("at least one modality feature is required")
        n = next(iter(feats.values())).shape[0]
        slots = [feats.get(m, Tensor(np.zeros((n, self.cfg.modality_dim)))) for m in MODALITIES]
        return self.fusion_enc.forward(nn.concat(slots, axis=1))

    def semantic(self, inputs: dict) -> Tensor:
        return self.fuse(self.modality_features(inputs))

    def tier_masks(self, alloc: np.ndarray) -> dict[int, np.ndarray]:
        alloc = np.asarray(alloc).reshape(-1)
        return {s: (alloc == s).astype(np.float64)[:, None] for s in range(1, self.cfg.max_symbols + 1)}

    def jsc_encode_slots(self, sv: Tensor, alloc: np.ndarray) -> Tensor:
        """(n, d) semantic rows -> (n, blocks, 2 cap) slot layout."""
        cfg = self.cfg
        n = sv.shape[0]
        alloc = np.asarray(alloc)
        if alloc.shape != (n, cfg.n_blocks):
            raise ValueError(f"allocation shape {alloc.shape} != {(n, cfg.n_blocks)}")
        if np.any(alloc < 0) or np.any(alloc > cfg.max_symbols):
            raise ValueError(f"per-block allocation exceeds [0, {cfg.max_symbols}]")
        rows = sv.reshape(n * cfg.n_blocks, cfg.block_size)
        width = 2 * cfg.max_symbols
        out = None
        for s, mask in self.tier_masks(alloc).items():
            if not mask.any():
                continue
            y = nn.dense_forward(rows, self.jsc_enc.tiers[str(s)])
            if 2 * s < width:
                y = nn.concat([y, Tensor(np.zeros((rows.shape[0], width - 2 * s)))], axis=1)
            term = nn.mul(y, mask)
            out = term if out is None else nn.add(out, term)
        if out is None:
            out = Tensor(np.zeros((rows.shape[0], width)))
        return out.reshape(n, cfg.n_blocks, width)

    # -- receiver --

    def jsc_decode_slots(self, slots: Tensor, alloc: np.ndarray) -> Tensor:
        cfg = self.cfg
        n = slots.shape[0]
        rows = slots.reshape(n * cfg.n_blocks, 2 * cfg.max_symbols)
        out = None
        for s, mask in self.tier_masks(alloc).items():
            if not mask.any():
                continue
            part = rows if s == cfg.max_symbols else nn.getitem(rows, (slice(None), slice(0, 2 * s)))
            term = nn.mul(nn.dense_forward(part, self.jsc_dec.tiers[str(s)]), mask)
            out = term if out is None else nn.add(out, term)
        if out is None:
            out = Tensor(np.zeros((n * cfg.n_blocks, cfg.block_size)))
        return out.reshape(n, cfg.d)

    def fusion_decode(self, sv_hat: Tensor) -> Tensor:
        return self.fusion_dec.forward(sv_hat)

    def task_outputs(self, rep: Tensor, tasks: Iterable[str]) -> dict[str, Tensor]:
        return {t: self.heads.decode(rep, t) for t in tasks}


# -- batched link --------------------------------------------------------------


def slot_valid_mask(alloc: np.ndarray, cap: int = 4) -> np.ndarray:
    """Boolean (n, blocks, cap): True where a complex symbol is emitted."""
    return np.arange(cap)[None, None, :] < np.asarray(alloc)[:, :, None]


def slots_to_complex(x: np.ndarray) -> np.ndarray:
    return x[..., 0::2] + 1j * x[..., 1::2]


def complex_to_slots(z: np.ndarray) -> np.ndarray:
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


@dataclass
class LinkDraws:
    """Pre-drawn channel randomness for n transmissions of up to m symbols.

    Noise is stored at unit variance so one draw can be reused across SNR
    points (common random numbers across a sweep).
    """

    h: np.ndarray  # (n,) complex
    w: np.ndarray  # (n, m) complex, CN(0, 1)

    @classmethod
    def draw(cls, gen: np.random.Generator, n: int, m: int, k_factor: float = 3.0, fading: bool = True):
        zeros = np.zeros((n, m), dtype=np.complex128)
        y, h, _ = apply_channel_batch(zeros, 0.0, gen, k_factor=k_factor, fading=fading)
        return cls(h=h, w=y)


def pack_symbols(z: np.ndarray, alloc: np.ndarray) -> np.ndarray:
    """Slot-layout complex (n, blocks, cap) -> emitted symbols in block-major
    order, zero-padded to (n, blocks * cap)."""
    n, b, cap = z.shape
    valid = slot_valid_mask(alloc, cap).reshape(n, -1)
    order = np.cumsum(valid, axis=1) - 1
    rows, cols = np.nonzero(valid)
    packed = np.zeros((n, b * cap), dtype=np.complex128)
    packed[rows, order[rows, cols]] = z.reshape(n, -1)[rows, cols]
    return packed


def unpack_symbols(packed: np.ndarray, alloc: np.ndarray) -> np.ndarray:
    alloc = np.asarray(alloc)
    n, b = alloc.shape
    cap = packed.shape[1] // b
    valid = slot_valid_mask(alloc, cap).reshape(n, -1)
    order = np.cumsum(valid, axis=1) - 1
    rows, cols = np.nonzero(valid)
    z = np.zeros((n, b * cap), dtype=np.complex128)
    z[rows, cols] = packed[rows, order[rows, cols]]
    return z.reshape(n, b, cap)


def tx_batch(slots: np.ndarray, alloc: np.ndarray, snr_db, draws: LinkDraws):
    """Transmitter + channel: power-normalize each row, fade, add noise.

    Returns ``(y, h, scale)`` with ``y`` complex in slot layout.  Emitted
    symbols take noise samples in emission order (block-major), so a row
    with S symbols uses ``draws.w[:, :S]``.
    """
    n, b, width = slots.shape
    cap = width // 2
    valid = slot_valid_mask(alloc, cap)
    z = slots_to_complex(slots)
    count = valid.reshape(n, -1).sum(axis=1)
    energy = (np.abs(z) ** 2 * valid).reshape(n, -1).sum(axis=1)
    power = np.where(count > 0, energy / np.maximum(count, 1), 0.0)
    zero_power = power == 0.0
    scale = 1.0 / np.sqrt(np.where(zero_power, 1.0, power))

    sigma2 = np.broadcast_to(10.0 ** (-np.asarray(snr_db, dtype=np.float64) / 10.0), (n,))
    noise = unpack_symbols(draws.w[:, : b * cap], alloc) * np.sqrt(sigma2)[:, None, None]
    y = draws.h[:, None, None] * (z * scale[:, None, None]) + noise
    return np.where(valid, y, 0.0), draws.h.copy(), scale


def rx_batch(y: np.ndarray, h: np.ndarray, scale: np.ndarray, alloc: np.ndarray) -> np.ndarray:
    """Receiver: zero-forcing with perfect CSI, undo power scaling; returns
    real slot layout.  Rows in a deep fade are erased (all zeros)."""
    erased = np.abs(h) < ERASURE_THRESHOLD
    safe_h = np.where(erased, 1.0, h)
    x_hat = np.where(erased[:, None, None], 0.0, y / safe_h[:, None, None]) / scale[:, None, None]
    x_hat = np.where(slot_valid_mask(alloc, y.shape[2]), x_hat, 0.0)
    return complex_to_slots(x_hat)


def link_batch(slots: np.ndarray, alloc: np.ndarray, snr_db, draws: LinkDraws) -> np.ndarray:
    y, h, scale = tx_batch(slots, alloc, snr_db, draws)
    return rx_batch(y, h, scale, alloc)


# -- per-instance reference path ------------------------------------------------


def encode_modality(sample: ModalitySample, model: MTSCModel) -> np.ndarray:
    payload = sample.validate(model.cfg)
    feats = model.modality_features({sample.modality: payload[None, :]})
    return feats[sample.modality].data[0].copy()


def fuse_semantics(features, model: MTSCModel) -> SemanticVector:
    present: dict[str, np.ndarray] = {}
    for modality, feat in features:
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        if modality in present:
            raise ValueError(f"duplicate modality {modality!r}")
        present[modality] = np.asarray(feat, dtype=np.float64).reshape(1, -1)
    out = model.fuse({m: Tensor(f) for m, f in present.items()})
    return SemanticVector(out.data[0].copy(), frozenset(present))


def jsc_encode(sv: SemanticVector, alloc: RateAllocation, model: MTSCModel) -> list[np.ndarray]:
    """Semantic vector -> one complex block per semantic block (possibly empty)."""
    cfg = model.cfg
    if len(alloc.s) != cfg.n_blocks:
        raise ValueError(f"allocation covers {len(alloc.s)} blocks, expected {cfg.n_blocks}")
    a = np.asarray(alloc.s, dtype=np.int64)[None, :]
    slots = model.jsc_encode_slots(Tensor(np.asarray(sv.values).reshape(1, -1)), a).data[0]
    z = slots_to_complex(slots)
    return [z[i, : a[0, i]].copy() for i in range(cfg.n_blocks)]


def jsc_decode(blocks: Sequence, alloc: RateAllocation, model: MTSCModel) -> SemanticVector:
    cfg = model.cfg
    if len(blocks) != cfg.n_blocks or len(alloc.s) != cfg.n_blocks:
        raise ValueError("block count does not match the allocation")
    slots = np.zeros((1, cfg.n_blocks, 2 * cfg.max_symbols))
    for i, (blk, s) in enumerate(zip(blocks, alloc.s)):
        blk = np.asarray(blk, dtype=np.complex128).reshape(-1)
        if blk.size != s:
            raise ValueError(f"block {i}: {blk.size} symbols received but allocation says {s}")
        slots[0, i, : 2 * s] = complex_to_slots(blk)
    a = np.asarray(alloc.s, dtype=np.int64)[None, :]
    return SemanticVector(model.jsc_decode_slots(Tensor(slots), a).data[0].copy())


def fusion_decode(sv_hat: SemanticVector, model: MTSCModel) -> np.ndarray:
    return model.fusion_decode(Tensor(np.asarray(sv_hat.values).reshape(1, -1))).data[0].copy()


def task_decode(rep: np.ndarray, task: TaskSpec | str, model: MTSCModel) -> np.ndarray:
    task_id = task.task_id if isinstance(task, TaskSpec) else task
    if task_id not in TASKS:
        raise KeyError(f"unknown task {task_id!r}")
    return model.heads.decode(Tensor(np.asarray(rep).reshape(1, -1)), task_id).data[0].copy()


@dataclass
class PipelineResult:
    outputs: dict[str, np.ndarray]
    n_symbols: int
    channel_uses: int
    sv: SemanticVector
    sv_hat: SemanticVector
    alloc: RateAllocation
    scores: np.ndarray
    h: complex | None = None


def transmit(blocks: list[np.ndarray], channel: ChannelState | None):
    """Normalize, pass through ``channel`` (None = ideal link), equalize, rescale."""
    if channel is None or sum(b.size for b in blocks) == 0:
        return [b.copy() for b in blocks], None
    norm = power_normalize(blocks)
    received, h = apply_channel(norm.blocks, channel)
    x_hat, erased = equalize(received, h)
    return [xb / norm.scale for xb in x_hat], complex(h[0])


def forward_pipeline(
    samples: Sequence[ModalitySample],
    tasks: Sequence[str | TaskSpec],
    model: MTSCModel,
    channel: ChannelState | None,
    total_budget: int = 32,
    allocator=None,
    tx_kb=None,
    rx_kb=None,
    tx_gate: float = 0.3,
    rx_gate: float = 0.3,
    kb_top_k: int = 3,
) -> PipelineResult:
    """Run one instance end to end through a single channel use.

    ``allocator(scores, snr_db, budget) -> RateAllocation`` defaults to the
    importance/channel-aware rule; ``channel=None`` is an ideal link
    (allocation then uses the high-SNR end).
    """
    from .adaptive import allocate_rates
    from .rag import augment_semantics, kb_retrieve

    feats = [(s.modality, encode_modality(s, model)) for s in samples]
    sv = fuse_semantics(feats, model)
    if tx_kb is not None and len(tx_kb):
        sv = SemanticVector(augment_semantics(sv.values, kb_retrieve(tx_kb, sv.values, kb_top_k), tx_gate), sv.source_mask)
    scores = score_importance(sv.values, model.cfg.n_blocks)
    snr = channel.snr_db if channel is not None else float("inf")
    alloc = (allocator or allocate_rates)(scores, snr, total_budget)
    blocks = jsc_encode(sv, alloc, model)
    received, h = transmit(blocks, channel)
    sv_hat = jsc_decode(received, alloc, model)
    rep = fusion_decode(sv_hat, model)
    if rx_kb is not None and len(rx_kb) and np.any(rep):
        rep = augment_semantics(rep, kb_retrieve(rx_kb, rep, kb_top_k), rx_gate)
    outputs = {}
    for t in tasks:
        task_id = t.task_id if isinstance(t, TaskSpec) else t
        outputs[task_id] = task_decode(rep, task_id, model)
    return PipelineResult(outputs, sum(b.size for b in blocks), 1, sv, sv_hat, alloc, scores, h)


def batch_inputs(inputs: dict) -> dict:
    return {m: inputs[m] for m in MODALITIES if inputs.get(m) is not None}


def run_batch(
    model: MTSCModel,
    inputs: dict,
    snr_db,
    budget,
    draws: LinkDraws | None,
    tasks: Sequence[str] = TASKS,
    uniform: bool = False,
    tx_kb=None,
    rx_kb=None,
    tx_gate: float = 0.3,
    rx_gate: float = 0.3,
    kb_top_k: int = 3,
):
    """Vectorized inference over a batch; ``draws=None`` is an ideal link.

    Returns a dict with per-task output arrays plus ``sv``, ``sv_hat``,
    ``alloc``, ``scores`` and ``rep``.
    """
    from .adaptive import allocate_from_lambda
    from .rag import augment_batch

    sv = model.semantic(batch_inputs(inputs))
    sv_data = sv.data
    if tx_kb is not None and len(tx_kb):
        sv_data = augment_batch(tx_kb, sv_data, tx_gate, kb_top_k)
    n = sv_data.shape[0]
    scores = np.stack([score_importance(r, model.cfg.n_blocks) for r in sv_data])
    if uniform:
        alloc = np.array([allocate_from_lambda(scores[i], 0.0, int(np.broadcast_to(budget, (n,))[i])).s for i in range(n)])
    else:
        snr_for_alloc = np.inf if draws is None else snr_db
        alloc = allocate_batch(scores, snr_for_alloc, budget)
    slots = model.jsc_encode_slots(Tensor(sv_data), alloc).data
    if draws is not None:
        slots = link_batch(slots, alloc, snr_db, draws)
    sv_hat = model.jsc_decode_slots(Tensor(slots), alloc).data
    rep = model.fusion_decode(Tensor(sv_hat)).data
    if rx_kb is not None and len(rx_kb):
        rep = augment_batch(rx_kb, rep, rx_gate, kb_top_k)
    out = {t: model.heads.decode(Tensor(rep), t).data for t in tasks}
    out.update(sv=sv_data, sv_hat=sv_hat, alloc=alloc, scores=scores, rep=rep)
    return out
