"""Prototype memory: one class centroid per row, frozen once built."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import Classifier, clip_embedding
from .corpus import IsolatedSample
from .extraction import CandidateSet

logger = logging.getLogger(__name__)

SOURCE_TAGS = ("news-aligned", "iso-base", "iso-aligned", "both-aligned")


class EmptyClassError(ValueError):
    pass


@dataclass(eq=False)
class PrototypeMemory:
    M: np.ndarray
    glosses: list[str]
    source_tag: str = "news-aligned"

    def __post_init__(self):
        if self.M.shape[0] != len(self.glosses):
            raise ValueError(f"memory has {self.M.shape[0]} rows but {len(self.glosses)} glosses")
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source_tag!r}; expected one of {SOURCE_TAGS}")
        self.M = np.array(self.M, dtype=np.float64)
        self.M.flags.writeable = False

    @property
    def K(self) -> int:
        return self.M.shape[0]

    @property
    def d(self) -> int:
        return self.M.shape[1]

    def __eq__(self, other):
        return (isinstance(other, PrototypeMemory) and self.glosses == other.glosses
                and self.source_tag == other.source_tag and np.array_equal(self.M, other.M))


def build_prototype(features: list[np.ndarray], name: str = "?") -> np.ndarray:
    if not features:
        raise EmptyClassError(f"class {name!r} has no samples to average")
    return np.mean(np.vstack(features), axis=0, keepdims=True)


def build_memory(glosses: list[str], source_tag: str = "news-aligned", *,
                 candidates: CandidateSet | None = None,
                 isolated: list[IsolatedSample] = (),
                 aligned: Classifier | None = None,
                 base: Classifier | None = None,
                 fallback: bool = False) -> PrototypeMemory:
    """Class centroids of clip embeddings taken from the source named by ``source_tag``.

    news-aligned: extracted news windows through the aligned encoder.
    iso-base: isolated training clips through the base encoder.
    iso-aligned: isolated training clips through the aligned encoder.
    both-aligned: the union of the two, aligned encoder.

    With ``fallback`` a class lacking news windows uses its isolated clips
    (aligned encoder) instead of raising.
    """
    if source_tag not in SOURCE_TAGS:
        raise ValueError(f"unknown source tag {source_tag!r}")
    enc = (base if source_tag == "iso-base" else aligned)
    if enc is None:
        raise ValueError(f"source tag {source_tag} needs the "
                         f"{'base' if source_tag == 'iso-base' else 'aligned'} model")
    K = len(glosses)
    news = {j: [] for j in range(K)}
    iso = {j: [] for j in range(K)}
    if source_tag in ("news-aligned", "both-aligned"):
        if candidates is None:
            raise ValueError(f"source tag {source_tag} needs a candidate set")
        for c in candidates.all():
            news[c.cls].append(c.frames)
    if source_tag != "news-aligned" or fallback:
        for s in isolated:
            iso[s.label].append(s.frames)

    rows, empty = [], []
    for j in range(K):
        if source_tag == "news-aligned":
            clips = news[j]
            if not clips and fallback and iso[j]:
                logger.warning("memory: class %s has no news windows, using isolated clips", glosses[j])
                clips = iso[j]
        elif source_tag == "both-aligned":
            clips = iso[j] + news[j]
        else:
            clips = iso[j]
        if not clips:
            empty.append(glosses[j])
            continue
        rows.append(build_prototype([clip_embedding(f, enc.enc) for f in clips], glosses[j]))
    if empty:
        raise EmptyClassError(f"no {source_tag} samples for classes: {', '.join(empty)}")
    return PrototypeMemory(np.vstack(rows), list(glosses), source_tag)


def save_memory(path, mem: PrototypeMemory) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{mem.K} {mem.d} {mem.source_tag}\n")
        for g, row in zip(mem.glosses, mem.M):
            fh.write(g + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_memory(path) -> PrototypeMemory:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"memory file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty memory file")
    try:
        K, d, tag = lines[0].split(" ")
        K, d = int(K), int(d)
    except ValueError:
        raise ValueError(f"{path}:1: expected 'K d source-tag' header") from None
    if len(lines) - 1 != K:
        raise ValueError(f"{path}: header says {K} classes, found {len(lines) - 1} rows")
    glosses, M = [], np.empty((K, d))
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != d + 1:
            raise ValueError(f"{path}:{i + 2}: expected gloss and {d} values")
        glosses.append(parts[0])
        M[i] = [float(v) for v in parts[1:]]
    return PrototypeMemory(M, glosses, tag)
