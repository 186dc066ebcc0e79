"""Trainable stand-in for the 3D-conv feature extractor and its classification head.

``encode`` maps raw frame vectors to a t x d feature sequence (per-frame
affine + tanh, then non-overlapping temporal mean pooling). ``classify``
mean-pools that sequence and applies an affine head with independent
sigmoids per class.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


def uniform_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class EncoderParams:
    W: Tensor
    b: Tensor
    rho: int = 4

    @classmethod
    def init(cls, rng, d_in: int, d: int, rho: int = 4) -> "EncoderParams":
        if rho < 1:
            raise ValueError("downsample factor must be >= 1")
        return cls(ad.parameter(uniform_init(rng, d_in, d), "enc.W"),
                   ad.parameter(np.zeros((1, d)), "enc.b"), rho)

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {"enc.W": self.W, "enc.b": self.b}


@dataclass
class HeadParams:
    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng, d: int, K: int) -> "HeadParams":
        return cls(ad.parameter(uniform_init(rng, d, K), "head.W"),
                   ad.parameter(np.zeros((1, K)), "head.b"))

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {"head.W": self.W, "head.b": self.b}


def encode(frames, enc: EncoderParams) -> Tensor:
    frames = frames if isinstance(frames, Tensor) else ad.constant(frames)
    if frames.shape[1] != enc.d_in:
        raise ShapeError(f"encode: frames have {frames.shape[1]} dims, encoder expects {enc.d_in}")
    if frames.shape[0] == 0:
        raise ShapeError("encode: empty clip")
    h = ad.tanh(ad.add(ad.matmul(frames, enc.W), enc.b))
    return ad.window_mean_pool(h, enc.rho)


def affine_head(pooled: Tensor, head: HeadParams) -> Tensor:
    if pooled.shape[1] != head.W.shape[0]:
        raise ShapeError(f"head: feature dim {pooled.shape[1]} vs head input {head.W.shape[0]}")
    return ad.add(ad.matmul(pooled, head.W), head.b)


def head_logits(X: Tensor, head: HeadParams) -> Tensor:
    return affine_head(ad.mean_rows(X), head)


def classify(X: Tensor, head: HeadParams) -> np.ndarray:
    """Per-class probabilities (1 x K), not normalised across classes."""
    with ad.no_grad():
        return ad.sigmoid(head_logits(X, head).value)


def clip_embedding(frames, enc: EncoderParams) -> np.ndarray:
    """Temporal mean of the encoder output, the 1 x d feature used for prototypes."""
    with ad.no_grad():
        return ad.mean_rows(encode(frames, enc)).value


@dataclass
class Classifier:
    """Encoder + pooled head: the base recogniser and its jointly trained twin."""

    enc: EncoderParams
    head: HeadParams

    @classmethod
    def init(cls, rng, d_in: int, d: int, K: int, rho: int = 4) -> "Classifier":
        return cls(EncoderParams.init(rng, d_in, d, rho), HeadParams.init(rng, d, K))

    @property
    def K(self) -> int:
        return self.head.K

    def named(self) -> dict[str, Tensor]:
        return {**self.enc.named(), **self.head.named()}

    def logits(self, frames) -> Tensor:
        return head_logits(encode(frames, self.enc), self.head)

    def predict(self, frames) -> np.ndarray:
        with ad.no_grad():
            return ad.sigmoid(self.logits(frames).value)

    def checkpoint_sections(self) -> dict[str, np.ndarray]:
        out = {k: t.value for k, t in self.named().items()}
        out["enc.rho"] = np.array([[float(self.enc.rho)]])
        return out

    @classmethod
    def from_sections(cls, sec: dict[str, np.ndarray]) -> "Classifier":
        enc, head = _encoder_from(sec), _head_from(sec)
        return cls(enc, head)


def _need(sec: dict, name: str) -> np.ndarray:
    if name not in sec:
        raise CheckpointError(f"checkpoint is missing section {name!r}")
    return sec[name]


def _encoder_from(sec: dict) -> EncoderParams:
    rho = int(_need(sec, "enc.rho")[0, 0])
    return EncoderParams(ad.parameter(_need(sec, "enc.W"), "enc.W"),
                         ad.parameter(_need(sec, "enc.b"), "enc.b"), rho)


def _head_from(sec: dict) -> HeadParams:
    return HeadParams(ad.parameter(_need(sec, "head.W"), "head.W"),
                      ad.parameter(_need(sec, "head.b"), "head.b"))


# --- checkpoint files -------------------------------------------------------


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, sections: dict[str, np.ndarray]) -> None:
    """Text checkpoint: ``#name rows cols`` header then CSV rows, repeated."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name, m in sections.items():
            m = ad.as_matrix(m)
            fh.write(f"#{name} {m.shape[0]} {m.shape[1]}\n")
            for row in m:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    sections: dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines):
        head = lines[i]
        if not head.startswith("#"):
            raise CheckpointError(f"{path}:{i + 1}: expected '#name rows cols' header")
        try:
            name, rows, cols = head[1:].split(" ")
            rows, cols = int(rows), int(cols)
        except ValueError:
            raise CheckpointError(f"{path}:{i + 1}: malformed header {head!r}") from None
        body = lines[i + 1:i + 1 + rows]
        if len(body) != rows:
            raise CheckpointError(f"{path}: section {name} truncated")
        data = np.empty((rows, cols))
        for r, line in enumerate(body):
            vals = line.split(",")
            if len(vals) != cols:
                raise CheckpointError(f"{path}:{i + 2 + r}: expected {cols} values, got {len(vals)}")
            data[r] = [float(v) for v in vals]
        sections[name] = data
        i += 1 + rows
    return sections
