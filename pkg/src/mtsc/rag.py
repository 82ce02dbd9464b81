"""Plug-in vector knowledge bases with exact cosine retrieval.

A knowledge base stores (key, value) vector pairs.  Retrieval is an exact
scan; augmentation blends a semantic vector with a softmax-weighted mixture of
the retrieved values.  Nothing here touches model parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

KB_MAGIC = b"MTSCKB1"
DIM = 32


@dataclass(frozen=True)
class KbEntry:
    key: np.ndarray
    value: np.ndarray
    tag: str = ""
    insert_index: int = -1


@dataclass(frozen=True)
class Retrieved:
    entry: KbEntry
    similarity: float


class KnowledgeBase:
    """Append-only store; ``scope`` is ``"local"`` (client) or ``"global"`` (server)."""

    def __init__(self, scope: str = "local", dim: int = DIM):
        if scope not in ("local", "global"):
            raise ValueError(f"scope must be 'local' or 'global', got {scope!r}")
        self._scope = scope
        self.dim = dim
        self._entries: list[KbEntry] = []
        self._unit_cache: np.ndarray | None = None
        self._next = 0

    @property
    def scope(self) -> str:
        return self._scope

    @property
    def entries(self) -> tuple[KbEntry, ...]:
        return tuple(self._entries)

    def __len__(self):
        return len(self._entries)

    def insert(self, key, value, tag: str = "") -> KbEntry:
        key = np.array(key, dtype=np.float64).reshape(-1)
        value = np.array(value, dtype=np.float64).reshape(-1)
        if key.size != self.dim or value.size != self.dim:
            raise ValueError(f"key and value must have {self.dim} entries")
        norm = np.linalg.norm(key)
        if norm == 0.0:
            raise ValueError("zero key rejected: cosine similarity undefined")
        entry = KbEntry(key, value, tag, self._next)
        self._next += 1
        self._entries.append(entry)
        self._unit_cache = None
        return entry

    def extend(self, keys, values, tags: Sequence[str] | None = None):
        """Bulk insert; same validation as ``insert``."""
        keys = np.asarray(keys, dtype=np.float64).reshape(-1, self.dim)
        values = np.asarray(values, dtype=np.float64).reshape(-1, self.dim)
        norms = np.linalg.norm(keys, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("zero key rejected: cosine similarity undefined")
        tags = list(tags) if tags is not None else [""] * len(keys)
        for k, v, t in zip(keys, values, tags):
            self._entries.append(KbEntry(k.copy(), v.copy(), t, self._next))
            self._next += 1
        self._unit_cache = None

    @property
    def _unit(self) -> np.ndarray:
        if self._unit_cache is None:
            if self._entries:
                keys = np.stack([e.key for e in self._entries])
                self._unit_cache = keys / np.linalg.norm(keys, axis=1, keepdims=True)
            else:
                self._unit_cache = np.zeros((0, self.dim))
        return self._unit_cache

    def similarities(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        qn = np.linalg.norm(q)
        if qn == 0.0:
            raise ValueError("zero query rejected")
        return self._unit @ (q / qn)

    def top_k(self, query, k: int) -> list[tuple[int, float]]:
        """Exact top-k as (position, similarity), descending, ties to older entries."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._entries:
            return []
        sims = self.similarities(query)
        k = min(k, sims.size)
        if k < sims.size:
            # keep every entry tied with the k-th best so tie-breaking stays exact
            kth = np.partition(sims, sims.size - k)[sims.size - k]
            cand = np.flatnonzero(sims >= kth)
        else:
            cand = np.arange(sims.size)
        order = cand[np.lexsort((cand, -sims[cand]))][:k]
        return [(int(i), float(sims[i])) for i in order]


def kb_insert(kb: KnowledgeBase, entry_or_key, value=None, tag: str = "") -> KnowledgeBase:
    if isinstance(entry_or_key, KbEntry):
        kb.insert(entry_or_key.key, entry_or_key.value, entry_or_key.tag)
    else:
        kb.insert(entry_or_key, value, tag)
    return kb


def kb_retrieve(kb: KnowledgeBase, query, k: int = 3) -> list[Retrieved]:
    """Exact top-k by cosine similarity; an empty knowledge base yields ``[]``."""
    return [Retrieved(kb._entries[i], s) for i, s in kb.top_k(query, k)]


def augment_semantics(sv, retrieved: Sequence[Retrieved], lambda_gate: float = 0.3) -> np.ndarray:
    """Gated blend of ``sv`` with the similarity-softmax mixture of retrieved values."""
    if not 0.0 <= lambda_gate <= 1.0:
        raise ValueError("lambda_gate must lie in [0, 1]")
    sv = np.asarray(getattr(sv, "values", sv), dtype=np.float64)
    if not retrieved or lambda_gate == 0.0:
        return sv.copy()
    sims = np.array([r.similarity for r in retrieved])
    w = np.exp(sims - sims.max())
    w /= w.sum()
    mix = sum(wj * r.entry.value for wj, r in zip(w, retrieved))
    return (1.0 - lambda_gate) * sv + lambda_gate * mix


def augment_batch(kb: KnowledgeBase, rows: np.ndarray, lambda_gate: float, k: int = 3) -> np.ndarray:
    """Row-wise ``augment_semantics``; zero rows are passed through."""
    out = np.array(rows, dtype=np.float64, copy=True)
    if not len(kb) or lambda_gate == 0.0:
        return out
    for i, row in enumerate(rows):
        if np.any(row):
            out[i] = augment_semantics(row, kb_retrieve(kb, row, k), lambda_gate)
    return out


# -- persistence -------------------------------------------------------------


def save_kb(kb: KnowledgeBase, path):
    with open(path, "wb") as fh:
        fh.write(KB_MAGIC)
        fh.write(struct.pack("<Q", len(kb)))
        for e in kb.entries:
            fh.write(np.asarray(e.key, dtype="<f8").tobytes())
            fh.write(np.asarray(e.value, dtype="<f8").tobytes())
            tag = e.tag.encode("utf-8")
            fh.write(struct.pack("<I", len(tag)))
            fh.write(tag)
            fh.write(struct.pack("<Q", e.insert_index))


def load_kb(path, scope: str = "local", dim: int = DIM) -> KnowledgeBase:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(KB_MAGIC):
        raise ValueError("not an MTSCKB1 file")
    pos = len(KB_MAGIC)
    (count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    kb = KnowledgeBase(scope, dim)
    width = 8 * dim
    for _ in range(count):
        key = np.frombuffer(raw, "<f8", dim, pos).astype(np.float64)
        value = np.frombuffer(raw, "<f8", dim, pos + width).astype(np.float64)
        pos += 2 * width
        (n,) = struct.unpack_from("<I", raw, pos)
        tag = raw[pos + 4 : pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (index,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        kb._entries.append(KbEntry(key, value, tag, int(index)))
        kb._next = max(kb._next, int(index) + 1)
    return kb
