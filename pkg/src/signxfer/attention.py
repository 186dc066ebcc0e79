"""Domain-invariant descriptor and memory-augmented temporal attention.

Given clip features X (t x d) and a frozen prototype memory M (K x d):

    r = softmax_rows(X W_X (M W_M)^T)          correlation with each prototype
    U = r M (W_M + W_delta)                    memory re-weighted per frame
    Z = U W_u + X ;  P = maxpool_t(Z)          descriptor
    S = P W_P (X W_Q)^T ;  A = softmax(S)      temporal attention
    V = A (X W_V W_O)                          attended residual
    logits = (P + V) W_cls + b_cls
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .backbone import (EncoderParams, HeadParams, _encoder_from, _head_from,
                       _need, affine_head, encode, uniform_init)

ATTENTION_NAMES = ("W_X", "W_M", "W_delta", "W_u", "W_P", "W_Q", "W_V", "W_O")


@dataclass
class AttentionParams:
    W_X: Tensor
    W_M: Tensor
    W_delta: Tensor
    W_u: Tensor
    W_P: Tensor
    W_Q: Tensor
    W_V: Tensor
    W_O: Tensor

    def __post_init__(self):
        d, d1 = self.W_X.shape
        d2 = self.W_P.shape[1]
        expected = {"W_X": (d, d1), "W_M": (d, d1), "W_delta": (d, d1), "W_u": (d1, d),
                    "W_P": (d, d2), "W_Q": (d, d2), "W_V": (d, d2), "W_O": (d2, d)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not d2 < d:
            raise ShapeError(f"attention width d''={d2} must be smaller than d={d}")

    @classmethod
    def init(cls, rng, d: int, d_prime: int | None = None,
             d_dprime: int | None = None) -> "AttentionParams":
        d1 = d_prime or max(1, d // 2)
        d2 = d_dprime or max(1, d // 4)
        shapes = {"W_X": (d, d1), "W_M": (d, d1), "W_delta": (d, d1), "W_u": (d1, d),
                  "W_P": (d, d2), "W_Q": (d, d2), "W_V": (d, d2), "W_O": (d2, d)}
        mats = {}
        for name in ATTENTION_NAMES:
            r, c = shapes[name]
            # no alignment-error compensation at the start
            value = np.zeros((r, c)) if name == "W_delta" else uniform_init(rng, r, c)
            mats[name] = ad.parameter(value, f"att.{name}")
        return cls(**mats)

    @classmethod
    def from_arrays(cls, **arrays) -> "AttentionParams":
        return cls(**{k: ad.parameter(v, f"att.{k}") for k, v in arrays.items()})

    def named(self) -> dict[str, Tensor]:
        return {f"att.{n}": getattr(self, n) for n in ATTENTION_NAMES}


@dataclass
class ForwardTrace:
    r: np.ndarray
    U: np.ndarray
    Z: np.ndarray
    P: np.ndarray
    S: np.ndarray
    A: np.ndarray
    V: np.ndarray
    fused: np.ndarray
    logits: np.ndarray


def _check_memory(X: Tensor, M: Tensor):
    if X.shape[1] != M.shape[1]:
        raise ShapeError(f"features are {X.shape[1]}-d but memory rows are {M.shape[1]}-d")


def correlation(X: Tensor, M: Tensor, p: AttentionParams) -> Tensor:
    _check_memory(X, M)
    return ad.row_softmax(ad.matmul(ad.matmul(X, p.W_X), ad.transpose(ad.matmul(M, p.W_M))))


def reweight_memory(r: Tensor, M: Tensor, p: AttentionParams) -> Tensor:
    if r.shape[1] != M.shape[0]:
        raise ShapeError(f"correlation has {r.shape[1]} columns, memory has {M.shape[0]} rows")
    return ad.matmul(ad.matmul(r, M), ad.add(p.W_M, p.W_delta))


def domain_invariant_descriptor(U: Tensor, X: Tensor, p: AttentionParams) -> tuple[Tensor, Tensor]:
    Z = ad.add(ad.matmul(U, p.W_u), X)
    return Z, ad.temporal_maxpool(Z)


def similarity(P: Tensor, X: Tensor, p: AttentionParams) -> Tensor:
    return ad.matmul(ad.matmul(P, p.W_P), ad.transpose(ad.matmul(X, p.W_Q)))


def temporal_attention(P: Tensor, X: Tensor, p: AttentionParams) -> Tensor:
    return ad.row_softmax(similarity(P, X, p))


def attend(A: Tensor, X: Tensor, p: AttentionParams) -> Tensor:
    if A.shape[1] != X.shape[0]:
        raise ShapeError(f"attention covers {A.shape[1]} steps but X has {X.shape[0]}")
    return ad.matmul(A, ad.matmul(ad.matmul(X, p.W_V), p.W_O))


def forward_features(X: Tensor, M, att: AttentionParams,
                     head: HeadParams) -> tuple[Tensor, ForwardTrace]:
    """Descriptor, attention and residual classification on encoded features."""
    M = M if isinstance(M, Tensor) else ad.constant(M)
    if M.shape[0] != head.K:
        raise ShapeError(f"memory has {M.shape[0]} classes, head has {head.K}")
    r = correlation(X, M, att)
    U = reweight_memory(r, M, att)
    Z, P = domain_invariant_descriptor(U, X, att)
    S = similarity(P, X, att)
    A = ad.row_softmax(S)
    V = attend(A, X, att)
    fused = ad.add(P, V)
    logits = affine_head(fused, head)
    trace = ForwardTrace(r.value, U.value, Z.value, P.value, S.value, A.value,
                         V.value, fused.value, logits.value)
    return logits, trace


def forward_full(frames, M, enc: EncoderParams, att: AttentionParams,
                 head: HeadParams) -> tuple[Tensor, ForwardTrace]:
    return forward_features(encode(frames, enc), M, att, head)


@dataclass
class FullModel:
    """Encoder, attention and head trained against a frozen prototype memory."""

    enc: EncoderParams
    att: AttentionParams
    head: HeadParams

    @property
    def K(self) -> int:
        return self.head.K

    def named(self) -> dict[str, Tensor]:
        return {**self.enc.named(), **self.att.named(), **self.head.named()}

    def logits(self, frames, memory) -> Tensor:
        return forward_full(frames, memory, self.enc, self.att, self.head)[0]

    def predict(self, frames, memory) -> np.ndarray:
        with ad.no_grad():
            return ad.sigmoid(self.logits(frames, memory).value)

    def trace(self, frames, memory) -> ForwardTrace:
        with ad.no_grad():
            return forward_full(frames, memory, self.enc, self.att, self.head)[1]

    def checkpoint_sections(self) -> dict[str, np.ndarray]:
        out = {k: t.value for k, t in self.named().items()}
        out["enc.rho"] = np.array([[float(self.enc.rho)]])
        return out

    @classmethod
    def from_sections(cls, sec: dict[str, np.ndarray]) -> "FullModel":
        att = AttentionParams.from_arrays(**{n: _need(sec, f"att.{n}") for n in ATTENTION_NAMES})
        return cls(_encoder_from(sec), att, _head_from(sec))
