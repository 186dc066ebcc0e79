"""Mining news signs from subtitled streams with a pretrained recogniser.

For every stream and every class whose gloss appears in the lemmatised
subtitles, the window (over all sizes and start positions) that scores
highest for that class is kept if its score is strictly above ``epsilon``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus, GlossVocabulary, IsolatedSample, NewsStream, lemmatize_tokens

logger = logging.getLogger(__name__)


@dataclass
class ExtractionConfig:
    min_window: int = 9
    max_window: int = 16
    stride: int = 1
    epsilon: float = 0.3

    def __post_init__(self):
        if self.min_window < 1 or self.max_window < self.min_window:
            raise ValueError("window sizes must satisfy 1 <= min_window <= max_window")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie strictly between 0 and 1")

    @property
    def sizes(self) -> range:
        return range(self.min_window, self.max_window + 1)


@dataclass
class ScoredWindow:
    start: int
    end: int
    probs: np.ndarray  # 1 x K

    @property
    def size(self) -> int:
        return self.end - self.start


@dataclass(eq=False)
class Candidate:
    stream_id: str
    cls: int
    start: int
    end: int
    score: float
    frames: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, Candidate)
                and (self.stream_id, self.cls, self.start, self.end, self.score)
                == (other.stream_id, other.cls, other.start, other.end, other.score)
                and np.array_equal(self.frames, other.frames))


@dataclass
class CandidateSet:
    by_class: dict[int, list[Candidate]] = field(default_factory=dict)

    def add(self, cand: Candidate) -> None:
        """Insert, keeping at most one window per (stream, class): the higher score wins."""
        bucket = self.by_class.setdefault(cand.cls, [])
        for i, old in enumerate(bucket):
            if old.stream_id == cand.stream_id:
                if cand.score > old.score:
                    bucket[i] = cand
                return
        bucket.append(cand)

    def all(self) -> list[Candidate]:
        return [c for k in sorted(self.by_class) for c in
                sorted(self.by_class[k], key=lambda c: c.stream_id)]

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_class.values())

    def classes(self) -> list[int]:
        return sorted(k for k, v in self.by_class.items() if v)


def iter_windows(length: int, sizes, stride: int = 1):
    for size in sizes:
        for start in range(0, length - size + 1, stride):
            yield start, start + size


def score_windows(frames: np.ndarray, predict, cfg: ExtractionConfig) -> list[ScoredWindow]:
    """Score every (size, start) window with ``predict(frames) -> 1 x K``."""
    return [ScoredWindow(a, b, predict(frames[a:b]))
            for a, b in iter_windows(len(frames), cfg.sizes, cfg.stride)]


def extract_best_window(stream: NewsStream, cls: int, windows: list[ScoredWindow],
                        vocab: GlossVocabulary | None = None) -> Candidate | None:
    """Highest-scoring window for ``cls``; ties go to the earliest start, then the smallest size.

    Returns None when the stream's subtitles do not mention the class (only
    checked when ``vocab`` is given) or there are no windows.
    """
    if vocab is not None and vocab.glosses[cls] not in lemmatize_tokens(stream.tokens, vocab):
        return None
    if not windows:
        return None
    best = min(windows, key=lambda w: (-w.probs[0, cls], w.start, w.size))
    return Candidate(stream.id, cls, best.start, best.end, float(best.probs[0, cls]),
                     stream.frames[best.start:best.end])


def filter_by_threshold(candidates, epsilon: float) -> CandidateSet:
    out = CandidateSet()
    for c in candidates:
        if c.score > epsilon:
            out.add(c)
    return out


def matched_classes(stream: NewsStream, vocab: GlossVocabulary) -> list[int]:
    lemmas = set(lemmatize_tokens(stream.tokens, vocab))
    return [j for j, g in enumerate(vocab.glosses) if g in lemmas]


def extract_candidates(streams: list[NewsStream], vocab: GlossVocabulary, predict,
                       cfg: ExtractionConfig) -> CandidateSet:
    best = []
    for stream in sorted(streams, key=lambda s: s.id):
        classes = matched_classes(stream, vocab)
        if not classes:
            continue
        windows = score_windows(stream.frames, predict, cfg)
        for j in classes:
            cand = extract_best_window(stream, j, windows)
            if cand is not None:
                best.append(cand)
    kept = filter_by_threshold(best, cfg.epsilon)
    logger.info("extraction: %d subtitle-matched windows, %d above epsilon=%.2f",
                len(best), len(kept), cfg.epsilon)
    return kept


def candidates_as_samples(cands: CandidateSet) -> list[IsolatedSample]:
    return [IsolatedSample(f"{c.stream_id}_c{c.cls:03d}_{c.start}_{c.end}", c.frames, c.cls, "train")
            for c in cands.all()]


def write_candidates(path, cands: CandidateSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in cands.all():
            fh.write(f"{c.cls}\t{c.stream_id}\t{c.start}\t{c.end}\t{c.score!r}\n")


def read_candidates(path, corpus: Corpus) -> CandidateSet:
    """Reload a candidate dump, re-slicing window frames from the corpus streams."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"candidate file not found: {path}")
    streams = {s.id: s for s in corpus.streams}
    out = CandidateSet()
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{n}: expected 5 fields, got {len(parts)}")
        cls, sid, a, b, score = int(parts[0]), parts[1], int(parts[2]), int(parts[3]), float(parts[4])
        if sid not in streams:
            raise ValueError(f"{path}:{n}: unknown stream {sid!r}")
        out.add(Candidate(sid, cls, a, b, score, streams[sid].frames[a:b]))
    return out
