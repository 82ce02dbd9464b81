"""Synthetic aligned image / text / audio corpus with four task labels.

Each sample belongs to one of ten classes.  The image is an anti-aliased
rendering of a class shape with position and rotation jitter, the text is a
question token followed by a class-conditioned caption, and the audio is a
tone at a class-indexed frequency.  Task targets are the class, a VQA answer
that depends on both class and question, the clean caption and the image.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .rng import RngHandle

SIDE = 16
TEXT_LEN = 16
AUDIO_LEN = 64
CAPTION_SLOTS = 8
VOCAB = 64
N_CLASSES = 10

PAD = 0
QUESTION_TOKENS = (1, 2, 3, 4)
ARTICLE = 5
ADJ0, NOUN0, VERB0, FILLER0 = 6, 16, 26, 36
N_FILLERS = VOCAB - FILLER0
ANSWER_SHIFT = (0, 3, 5, 8)
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0
    n_classes: int = N_CLASSES
    grammar: str = "basic"
    noise: float = 0.1


@dataclass
class Dataset:
    ids: np.ndarray
    image: np.ndarray  # (n, 256) in [0, 1]
    text: np.ndarray  # (n, 16) token ids, tail-padded
    audio: np.ndarray  # (n, 64) in [-1, 1]
    label: np.ndarray
    question: np.ndarray
    answer: np.ndarray
    caption: np.ndarray  # (n, 8) token ids, tail-padded

    def __len__(self):
        return self.ids.size

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(**{k: v[idx] for k, v in vars(self).items()})

    def inputs(self, idx=None) -> dict:
        sel = slice(None) if idx is None else np.asarray(idx)
        return {"image": self.image[sel], "text": self.text[sel], "audio": self.audio[sel]}

    def targets(self, idx=None) -> dict:
        sel = slice(None) if idx is None else np.asarray(idx)
        return {
            "classify": self.label[sel],
            "vqa": self.answer[sel],
            "caption": self.caption[sel],
            "reconstruct": self.image[sel],
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        for key, value in vars(self).items():
            h.update(key.encode())
            h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()


# -- rendering ---------------------------------------------------------------

_SUPER = 4
_grid = (np.arange(SIDE * _SUPER) + 0.5) / _SUPER - 0.5


def _shape_mask(c: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    r = np.hypot(u, v)
    if c == 0:
        return r < 4.5
    if c == 1:
        return (np.abs(u) < 3.8) & (np.abs(v) < 3.8)
    if c == 2:
        return (r > 3.0) & (r < 5.5)
    if c == 3:
        return (np.abs(v) < 1.5) & (np.abs(u) < 6.0)
    if c == 4:
        return (np.abs(u) < 1.5) & (np.abs(v) < 6.0)
    if c == 5:
        return ((np.abs(v) < 1.0) | (np.abs(u) < 1.0)) & (np.abs(u) < 5.5) & (np.abs(v) < 5.5)
    if c == 6:
        return ((np.abs(u - v) < 1.4) | (np.abs(u + v) < 1.4)) & (r < 6.5)
    if c == 7:
        return (v < 4.0) & (v > -5.0 + 2 * np.abs(u))
    if c == 8:
        return r < 2.5
    return ((np.abs(u) < 1.2) & (np.abs(v) < 5.5)) | ((np.abs(v - 4.3) < 1.2) & (u > -1.2) & (u < 4.5))


def render_image(c: int, dx: float, dy: float, angle: float) -> np.ndarray:
    yy, xx = np.meshgrid(_grid, _grid, indexing="ij")
    x0, y0 = xx - (SIDE - 1) / 2 - dx, yy - (SIDE - 1) / 2 - dy
    ca, sa = np.cos(angle), np.sin(angle)
    u, v = ca * x0 + sa * y0, -sa * x0 + ca * y0
    mask = _shape_mask(c, u, v).astype(np.float64)
    return mask.reshape(SIDE, _SUPER, SIDE, _SUPER).mean(axis=(1, 3))


# -- text --------------------------------------------------------------------


def class_fillers(c: int) -> np.ndarray:
    return FILLER0 + (3 * c + np.arange(4)) % N_FILLERS


def make_caption(c: int, length: int, gen: np.random.Generator) -> np.ndarray:
    words = [ARTICLE, ADJ0 + c, NOUN0 + c, VERB0 + c]
    words += list(gen.choice(class_fillers(c), size=length - 4))
    out = np.zeros(CAPTION_SLOTS, dtype=np.int64)
    out[:length] = words
    return out


def generate_split(n: int, offset: int, rng: RngHandle, spec: SyntheticDatasetSpec) -> Dataset:
    gen = rng.generator()
    ids = offset + np.arange(n)
    label = np.arange(n) % spec.n_classes
    image = np.zeros((n, SIDE * SIDE))
    text = np.zeros((n, TEXT_LEN), dtype=np.int64)
    audio = np.zeros((n, AUDIO_LEN))
    question = gen.integers(0, len(QUESTION_TOKENS), size=n)
    caption = np.zeros((n, CAPTION_SLOTS), dtype=np.int64)
    t = np.arange(AUDIO_LEN)
    for i in range(n):
        c = int(label[i])
        dx, dy = gen.uniform(-1.5, 1.5, size=2)
        angle = gen.uniform(-0.35, 0.35)
        img = gen.uniform(0.7, 1.0) * render_image(c, dx, dy, angle)
        img += spec.noise * gen.standard_normal(img.shape)
        image[i] = np.clip(img, 0.0, 1.0).reshape(-1)

        length = int(gen.integers(4, CAPTION_SLOTS + 1))
        caption[i] = make_caption(c, length, gen)
        observed = caption[i, :length].copy()
        flip = gen.random(length) < spec.noise
        observed[flip] = FILLER0 + gen.integers(0, N_FILLERS, size=int(flip.sum()))
        text[i, 0] = QUESTION_TOKENS[question[i]]
        text[i, 1 : 1 + length] = observed

        freq = 2 + 3 * c
        amp = gen.uniform(0.4, 0.7)
        phase = gen.uniform(0, 2 * np.pi)
        wave = amp * np.sin(2 * np.pi * freq * t / AUDIO_LEN + phase)
        wave += 0.5 * spec.noise * gen.standard_normal(AUDIO_LEN)
        audio[i] = np.clip(wave, -1.0, 1.0)
    answer = (label + np.asarray(ANSWER_SHIFT)[question]) % spec.n_classes
    return Dataset(ids, image, text, audio, label, question, answer, caption)


def generate_dataset(spec: SyntheticDatasetSpec) -> dict[str, Dataset]:
    """Train/val/test splits, each from its own seed-derived stream."""
    if spec.grammar != "basic":
        raise ValueError(f"unknown caption grammar {spec.grammar!r}")
    root = RngHandle(spec.seed).child("dataset")
    sizes = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    out, offset = {}, 0
    for name in SPLITS:
        out[name] = generate_split(sizes[name], offset, root.child(name), spec)
        offset += sizes[name]
    return out
