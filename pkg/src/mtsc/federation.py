"""Federated split fine-tuning.

Each client owns the device half of the transceiver (modality encoders,
fusion encoder, JSC encoder, task heads) and its private data.  The edge
server owns the receiver half (JSC decoder, fusion decoder).  One local
step is a four-message exchange:

    client --ActivationMessage-->    server   (channel symbols + allocation)
    client <--RepresentationMessage-- server  (fusion-decoder output)
    client --GradientMessage-->      server   (dLoss/d representation)
    client <--GradientMessage--      server   (dLoss/d JSC-decoder input)

Labels never leave the client.  After E local steps every client uploads
its trainable device-side tensors, the server averages them (FedAvg) and
broadcasts the result.  The server keeps one isolated copy of its own
trainables per client and averages those at the same barrier, so results
do not depend on the order in which clients are served.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from typing import BinaryIO, Sequence

import numpy as np

from . import nn
from .channel import ChannelState
from .data import Dataset
from .io import decode_tensors, encode_tensors
from .models import (
    TASKS,
    LinkDraws,
    MTSCModel,
    complex_to_slots,
    pack_symbols,
    rx_batch,
    slots_to_complex,
    tx_batch,
    unpack_symbols,
)
from .nn import Optimizer, OptimizerConfig, Tensor
from .rng import RngHandle
from .training import LinkConfig, allocation_for, draw_step, multitask_loss, task_losses


@dataclass(frozen=True)
class RoundConfig:
    num_clients: int = 4
    local_steps: int = 5
    rounds: int = 20
    batch_size: int = 32
    train_with_channel_noise: bool = True
    channel: ChannelState = field(default_factory=lambda: ChannelState(snr_db=3.0))
    # per-sample SNR drawn uniformly from this range; None pins it to channel.snr_db
    snr_range: tuple[float, float] | None = (-6.0, 12.0)
    budget_range: tuple[int, int] = (8, 32)
    weights: tuple[float, ...] | None = None
    optimizer: OptimizerConfig = OptimizerConfig("adam", 2e-3)
    tasks: tuple[str, ...] = TASKS
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1 or self.local_steps < 1 or self.rounds < 0:
            raise ValueError("need num_clients >= 1, local_steps >= 1, rounds >= 0")
        if self.weights is not None:
            if len(self.weights) != self.num_clients:
                raise ValueError("one weight per client required")
            check_weights(self.weights)

    def link(self) -> LinkConfig:
        snr = self.snr_range if self.snr_range is not None else (self.channel.snr_db,) * 2
        return LinkConfig(
            noise=self.train_with_channel_noise,
            snr_range=snr,
            budget_range=self.budget_range,
            k_factor=self.channel.k_factor,
            fading=self.channel.fading_mode == "block",
        )

    def client_weights(self, sizes: Sequence[int]) -> tuple[float, ...]:
        if self.weights is not None:
            return tuple(self.weights)
        total = float(sum(sizes))
        return tuple(s / total for s in sizes)


def check_weights(weights: Sequence[float]):
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-9):
        raise ValueError(f"weights must be non-negative and sum to 1, got {list(weights)}")


# -- messages ------------------------------------------------------------------
#
# Message fields are numeric arrays plus routing integers.  None of the types
# has a slot for raw modality payloads or labels.

ACTIVATION, REPRESENTATION, GRAD_UP, GRAD_DOWN, UPDATE, BROADCAST = range(1, 7)


@dataclass
class ActivationMessage:
    client_id: int
    batch_ids: np.ndarray  # (n,) opaque sample handles
    symbols: np.ndarray  # (n, blocks * cap) complex, emitted symbols zero-padded
    alloc: np.ndarray  # (n, blocks) symbols per block
    h: np.ndarray  # (n,) complex gain (perfect CSI side info)
    scale: np.ndarray  # (n,) transmitter power scale

    tag = ACTIVATION

    def __post_init__(self):
        n = self.batch_ids.shape[0]
        if not (self.symbols.shape[0] == self.alloc.shape[0] == self.h.shape[0] == self.scale.shape[0] == n):
            raise ValueError("inconsistent batch size across activation fields")

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "batch_ids": self.batch_ids.astype(np.float64),
            "symbols.re": self.symbols.real,
            "symbols.im": self.symbols.imag,
            "alloc": self.alloc.astype(np.float64),
            "h.re": self.h.real,
            "h.im": self.h.imag,
            "scale": self.scale,
        }


@dataclass
class RepresentationMessage:
    client_id: int
    rep: np.ndarray  # (n, d)

    tag = REPRESENTATION

    def tensors(self):
        return {"rep": self.rep}


@dataclass
class GradientMessage:
    client_id: int
    grad: np.ndarray
    to_server: bool = True

    def __post_init__(self):
        if not np.all(np.isfinite(self.grad)):
            raise FloatingPointError("non-finite gradient message")

    @property
    def tag(self):
        return GRAD_UP if self.to_server else GRAD_DOWN

    def tensors(self):
        return {"grad": self.grad}


@dataclass
class UpdateMessage:
    client_id: int
    params: dict[str, np.ndarray]
    n_samples: int
    broadcast: bool = False

    @property
    def tag(self):
        return BROADCAST if self.broadcast else UPDATE

    def tensors(self):
        return dict(self.params)


def payload(msg) -> bytes:
    return encode_tensors(msg.tensors())


def message_fields(cls) -> tuple[str, ...]:
    return tuple(f.name for f in fields(cls))


# -- trace file ----------------------------------------------------------------

_RECORD = struct.Struct("<BIIQ")


def write_record(stream: BinaryIO, tag: int, client_id: int, round_idx: int, body: bytes):
    stream.write(_RECORD.pack(tag, client_id, round_idx, len(body)))
    stream.write(body)
    stream.write(b"\n")


def read_trace(path) -> list[tuple[int, int, int, dict[str, np.ndarray]]]:
    """Parse a protocol trace into (tag, client_id, round, tensors) tuples."""
    out = []
    with open(path, "rb") as f:
        while True:
            head = f.read(_RECORD.size)
            if not head:
                break
            tag, cid, rnd, n = _RECORD.unpack(head)
            body = f.read(n)
            if f.read(1) != b"\n":
                raise ValueError("malformed trace record")
            out.append((tag, cid, rnd, decode_tensors(body)[0]))
    return out


class MessageBus:
    """In-process transport that counts payload bytes and optionally traces."""

    def __init__(self, trace: BinaryIO | None = None):
        self.trace = trace
        self.bytes = 0
        self.round = 0

    def send(self, msg):
        body = payload(msg)
        self.bytes += len(body)
        if self.trace is not None:
            write_record(self.trace, msg.tag, msg.client_id, self.round, body)
        return msg


# -- parties -------------------------------------------------------------------


class Client:
    def __init__(self, client_id: int, model: MTSCModel, data: Dataset, rng: RngHandle, config: RoundConfig):
        self.id = client_id
        self.model = model
        self.data = data
        self.gen = rng.generator()
        self.link = config.link()
        self.batch_size = config.batch_size
        self.tasks = config.tasks
        self.opt = Optimizer(config.optimizer)
        self._tape: Tensor | None = None
        self._targets = None
        self._rep: Tensor | None = None

    def params(self) -> dict[str, Tensor]:
        return self.model.side_parameters("device")

    def forward(self) -> ActivationMessage:
        m = self.model
        step = draw_step(self.gen, len(self.data), self.batch_size, self.link, m.cfg.max_total_symbols)
        sv = m.semantic(self.data.inputs(step.idx))
        alloc = allocation_for(m, sv.data, step.snr_db, step.budget)
        x = m.jsc_encode_slots(sv, alloc)
        self._tape, self._targets = x, self.data.targets(step.idx)
        ids = self.data.ids[step.idx]
        if self.link.noise:
            y, h, scale = tx_batch(x.data, alloc, step.snr_db, step.draws)
        else:
            y, h, scale = slots_to_complex(x.data), np.ones(len(ids), complex), np.ones(len(ids))
        return ActivationMessage(self.id, ids, pack_symbols(y, alloc), alloc, h, scale)

    def loss_backward(self, msg: RepresentationMessage):
        rep = Tensor(msg.rep, requires_grad=True)
        parts = task_losses(self.model, rep, self._targets, self.tasks)
        loss = multitask_loss(parts)
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"client {self.id}: non-finite loss")
        loss.backward()
        self._rep = rep
        grad = GradientMessage(self.id, rep.grad, to_server=True)
        return grad, loss.item(), {k: v.item() for k, v in parts.items()}

    def update(self, msg: GradientMessage):
        if self._tape is None or msg.grad.shape != self._tape.shape:
            raise RuntimeError(f"client {self.id}: boundary gradient does not match the retained tape")
        # straight-through: the link is treated as identity in the backward pass
        self._tape.backward(msg.grad)
        params = self.params()
        self.opt.step(params)
        nn.zero_grad(params)
        self._tape = self._targets = self._rep = None

    def make_update(self) -> UpdateMessage:
        return UpdateMessage(self.id, {k: t.data.copy() for k, t in self.params().items()}, len(self.data))

    def load(self, params: dict[str, np.ndarray]):
        for k, t in self.params().items():
            t.data = params[k].copy()


class Server:
    """Receiver half with per-client isolated state."""

    def __init__(self, model: MTSCModel, client_ids: Sequence[int], config: RoundConfig):
        self.models = {cid: model.clone() for cid in client_ids}
        self.opts = {cid: Optimizer(config.optimizer) for cid in client_ids}
        self._tapes: dict[int, tuple[Tensor, Tensor]] = {}

    def params(self, cid: int) -> dict[str, Tensor]:
        return self.models[cid].side_parameters("server")

    def forward(self, msg: ActivationMessage) -> RepresentationMessage:
        m = self.models[msg.client_id]
        if msg.alloc.shape != (msg.batch_ids.shape[0], m.cfg.n_blocks):
            raise ValueError(f"allocation shape {msg.alloc.shape} does not match the decoder")
        y = unpack_symbols(msg.symbols, msg.alloc)
        slots = rx_batch(y, msg.h, msg.scale, msg.alloc)
        leaf = Tensor(slots, requires_grad=True)
        rep = m.fusion_decode(m.jsc_decode_slots(leaf, msg.alloc))
        self._tapes[msg.client_id] = (leaf, rep)
        return RepresentationMessage(msg.client_id, rep.data.copy())

    def backward(self, msg: GradientMessage) -> GradientMessage:
        tape = self._tapes.pop(msg.client_id, None)
        if tape is None:
            raise RuntimeError(f"no forward tape for client {msg.client_id}")
        leaf, rep = tape
        if rep.requires_grad:
            rep.backward(msg.grad)
        g = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
        params = self.params(msg.client_id)
        self.opts[msg.client_id].step(params)
        nn.zero_grad(params)
        return GradientMessage(msg.client_id, g, to_server=False)

    def aggregate_own(self, weights: Sequence[float]):
        ids = sorted(self.models)
        views = [{k: t.data for k, t in self.params(c).items()} for c in ids]
        avg = fedavg(views, weights)
        for c in ids:
            for k, t in self.params(c).items():
                t.data = avg[k].copy()


# -- aggregation ---------------------------------------------------------------


def fedavg(params: Sequence[dict[str, np.ndarray]], weights: Sequence[float]) -> dict[str, np.ndarray]:
    """Weighted parameter mean, accumulated in list order.

    Zero-weight entries are skipped and the result is clipped elementwise to
    the range spanned by the contributing entries, so identical inputs come
    back bit-exact and the output always lies in their convex hull.
    """
    check_weights(weights)
    if len(params) != len(weights):
        raise ValueError("one weight per update required")
    names = list(params[0])
    for i, p in enumerate(params):
        if list(p) != names:
            raise ValueError(f"update {i} carries tensors {sorted(p)} but expected {sorted(names)}")
    out = {}
    for name in names:
        shape = np.shape(params[0][name])
        acc = np.zeros(shape)
        lo = hi = None
        for i, (p, w) in enumerate(zip(params, weights)):
            arr = np.asarray(p[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"tensor {name!r}: update {i} has shape {arr.shape}, expected {shape}")
            if w == 0:
                continue
            acc = acc + w * arr
            lo = arr if lo is None else np.minimum(lo, arr)
            hi = arr if hi is None else np.maximum(hi, arr)
        out[name] = np.clip(acc, lo, hi)
    return out


def aggregate(updates: Sequence[UpdateMessage], weights: Sequence[float]) -> dict[str, np.ndarray]:
    """FedAvg over client updates in ascending client-id order."""
    if len(updates) != len(weights):
        raise ValueError("one weight per update required")
    order = sorted(range(len(updates)), key=lambda i: updates[i].client_id)
    return fedavg([updates[i].params for i in order], [weights[i] for i in order])


# -- driver --------------------------------------------------------------------


@dataclass
class RoundLog:
    round: int
    loss: float
    task_losses: dict[str, float]
    bytes: int


@dataclass
class TrainLog:
    rounds: list[RoundLog] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    @property
    def total_bytes(self) -> int:
        return sum(r.bytes for r in self.rounds)

    def to_csv(self, path):
        tasks = sorted({t for r in self.rounds for t in r.task_losses})
        with open(path, "w") as f:
            f.write(",".join(["round", "loss", *[f"loss_{t}" for t in tasks], "bytes"]) + "\n")
            for r in self.rounds:
                cells = [str(r.round), repr(r.loss), *[repr(r.task_losses[t]) for t in tasks], str(r.bytes)]
                f.write(",".join(cells) + "\n")


def run_training(
    model: MTSCModel,
    client_data: Sequence[Dataset],
    config: RoundConfig,
    trace: BinaryIO | None = None,
) -> TrainLog:
    """Fine-tune ``model`` in place with the split protocol.

    The model should already carry Phase I weights; ``prepare_finetune`` is
    the caller's choice (it decides what is trainable).
    """
    if len(client_data) != config.num_clients:
        raise ValueError(f"{config.num_clients} clients configured but {len(client_data)} datasets given")
    log = TrainLog()
    if config.rounds == 0:
        return log
    root = RngHandle(config.seed)
    ids = list(range(config.num_clients))
    weights = config.client_weights([len(d) for d in client_data])
    clients = [Client(c, model.clone(), client_data[c], root.child("client", c), config) for c in ids]
    server = Server(model, ids, config)
    bus = MessageBus(trace)

    for r in range(config.rounds):
        bus.round = r
        start = bus.bytes
        losses, parts = [], {t: [] for t in config.tasks}
        for client in clients:
            for _ in range(config.local_steps):
                act = bus.send(client.forward())
                rep = bus.send(server.forward(act))
                up, loss, per_task = client.loss_backward(rep)
                down = bus.send(server.backward(bus.send(up)))
                client.update(down)
                losses.append(loss)
                for t, v in per_task.items():
                    parts[t].append(v)
        log.step_losses.extend(losses)

        updates = [bus.send(c.make_update()) for c in clients]
        global_params = aggregate(updates, weights)
        server.aggregate_own(weights)
        for c in clients:
            bus.send(UpdateMessage(c.id, global_params, 0, broadcast=True))
            c.load(global_params)
        log.rounds.append(
            RoundLog(r, float(np.mean(losses)), {t: float(np.mean(v)) for t, v in parts.items()}, bus.bytes - start)
        )

    # write the agreed state back into the caller's model
    final = clients[0].model.side_tensors("device")
    for k, t in model.side_tensors("device").items():
        t.data = final[k].data.copy()
    served = server.models[0].side_tensors("server")
    for k, t in model.side_tensors("server").items():
        t.data = served[k].data.copy()
    return log
