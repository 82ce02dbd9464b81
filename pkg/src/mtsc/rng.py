"""Counter-based, splittable random streams.

Every consumer of randomness gets its own ``RngHandle``.  A handle is a
``(seed, stream_id)`` pair that keys a Philox-4x64 generator, so the value at a
given draw index depends only on those two words and never on what other
components drew before.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _mix(stream_id: int, label: str | int) -> int:
    digest = hashlib.blake2b(
        f"{stream_id}/{label}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngHandle:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def child(self, *labels: str | int) -> "RngHandle":
        """Derive an independent stream; the same labels always give the same stream."""
        sid = self.stream_id
        for label in labels:
            sid = _mix(sid, label)
        return RngHandle(self.seed, sid)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at draw index 0 of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def derive_seed(self) -> int:
        """A 63-bit integer seed that depends on both seed and stream."""
        return int(self.generator().integers(0, 2**63 - 1))
