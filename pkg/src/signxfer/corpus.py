"""Seeded two-domain synthetic corpus and the on-disk dataset layout.

Isolated clips: a shared "raise hands" gesture, the class gesture stretched to
a slow tempo, a shared "lower hands" gesture, plus noise. News streams: long
background motion with short (9-16 frame) class gestures passed through an
affine domain shift, and subtitle tokens that name the signed glosses (with
occasional glosses that are mentioned but never signed).

The same reader/writer handles externally extracted features as long as they
follow the layout documented in ``write_dataset``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

GLOSSES = [
    "book", "drink", "computer", "before", "chair", "go", "clothes", "who", "candy",
    "cousin", "deaf", "fine", "help", "no", "thin", "walk", "year", "yes", "all",
    "black", "cool", "finish", "hot", "like", "many", "mother", "now", "orange",
    "table", "thanksgiving", "what", "woman", "bed", "blue", "bowling", "can", "dog",
    "family", "fish", "graduate", "hat", "hearing", "kiss", "language", "later", "man",
    "shirt", "study", "tall", "white", "wrong", "accident", "apple", "bird", "change",
    "color", "corn", "cow", "dance", "dark", "doctor", "eat", "enjoy", "forget", "give",
    "last", "meet", "pink", "pizza", "play", "school", "secretary", "short", "time",
    "want", "work", "africa", "basketball", "birthday", "brown", "but", "cheat", "city",
    "cook", "decide", "full", "how", "jacket", "letter", "medicine", "need", "paint",
    "paper", "pull", "purple", "right", "same", "son", "tell", "thursday",
]

FILLER_WORDS = [
    "the", "a", "today", "minister", "said", "weather", "report", "will", "be", "in",
    "of", "and", "people", "government", "new", "week", "after", "police", "state",
    "news", "on", "for", "this", "local", "council", "from", "announced", "tonight",
]

N_BASIS = 4


class DatasetError(ValueError):
    """Malformed or missing dataset content."""


@dataclass
class GlossVocabulary:
    glosses: list[str]
    lemmas: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.glosses) < 2:
            raise ValueError("vocabulary needs at least two glosses")
        if len(set(self.glosses)) != len(self.glosses):
            raise ValueError("gloss names must be unique")
        for g in self.glosses:
            if g != g.lower():
                raise ValueError(f"gloss {g!r} is not lowercase")

    @property
    def K(self) -> int:
        return len(self.glosses)

    def index(self, gloss: str) -> int:
        return self.glosses.index(gloss)


@dataclass(eq=False)
class IsolatedSample:
    id: str
    frames: np.ndarray
    label: int
    split: str = "train"

    def __eq__(self, other):
        return (isinstance(other, IsolatedSample) and self.id == other.id
                and self.label == other.label and self.split == other.split
                and np.array_equal(self.frames, other.frames))


@dataclass(eq=False)
class NewsStream:
    id: str
    frames: np.ndarray
    tokens: list[str]
    spans: list[tuple[int, int, int]] = field(default_factory=list)
    split: str = "train"

    def __eq__(self, other):
        return (isinstance(other, NewsStream) and self.id == other.id
                and self.tokens == other.tokens and self.spans == other.spans
                and self.split == other.split and np.array_equal(self.frames, other.frames))


@dataclass
class Corpus:
    isolated: list[IsolatedSample]
    streams: list[NewsStream]
    vocab: GlossVocabulary

    def split(self, name: str) -> list[IsolatedSample]:
        return [s for s in self.isolated if s.split == name]

    def news(self, name: str) -> list[NewsStream]:
        return [s for s in self.streams if s.split == name]


@dataclass
class SynthConfig:
    n_classes: int = 20
    train_per_class: int = 15
    val_per_class: int = 4
    test_per_class: int = 10
    n_streams: int = 60
    n_test_streams: int = 20
    d_in: int = 16
    sign_length: tuple[int, int] = (24, 40)
    gesture_length: tuple[int, int] = (12, 20)
    news_sign_length: tuple[int, int] = (9, 16)
    stream_length: tuple[int, int] = (260, 340)
    signs_per_stream: tuple[int, int] = (4, 8)
    shift_strength: float = 0.6
    shift_offset: float = 0.5
    noise: float = 0.7
    news_noise: float | None = None
    class_separation: float = 0.4
    gesture_amplitude: float = 2.5
    gesture_jitter: float = 0.8
    background_amplitude: float = 1.0
    n_fillers: int = 40
    filler_separation: float | None = None
    distractor_rate: float = 0.3
    filler_tokens: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "train_per_class", "n_streams", "d_in"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.noise < 0 or (self.news_noise is not None and self.news_noise < 0):
            raise ValueError("noise must be >= 0")
        for name in ("sign_length", "gesture_length", "news_sign_length",
                     "stream_length", "signs_per_stream"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must be a range lo <= hi with lo >= 1")
            setattr(self, name, (int(lo), int(hi)))
        if self.signs_per_stream[1] * self.news_sign_length[1] > self.stream_length[0]:
            raise ValueError("stream_length too short to hold signs_per_stream signs "
                             "of the longest news_sign_length")


def gloss_names(K: int) -> list[str]:
    names = GLOSSES[:K]
    names += [f"gloss{i}" for i in range(len(names), K)]
    return names


def inflections(gloss: str) -> list[str]:
    stem = gloss[:-1] if gloss.endswith("e") else gloss
    return [gloss + "s", stem + "ed", stem + "ing"]


def build_vocabulary(K: int) -> GlossVocabulary:
    glosses = gloss_names(K)
    table = {}
    for g in glosses:
        for form in inflections(g):
            if form not in glosses:
                table.setdefault(form, g)
    return GlossVocabulary(glosses, table)


def lemmatize_tokens(tokens: list[str], vocab: GlossVocabulary) -> list[str]:
    out = []
    for tok in tokens:
        low = tok.lower()
        out.append(vocab.lemmas.get(low, low))
    return out


# --- trajectories -----------------------------------------------------------


def sample_curve(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Evaluate a smooth cosine-basis curve at ``n`` evenly spaced points of [0, 1]."""
    tau = np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)
    basis = np.cos(np.pi * np.outer(tau, np.arange(coeffs.shape[0])))
    return basis @ coeffs


@dataclass
class Templates:
    classes: list[np.ndarray]
    fillers: list[np.ndarray]
    raise_hands: np.ndarray
    lower_hands: np.ndarray
    shift_matrix: np.ndarray
    shift_offset: np.ndarray

    def shift(self, frames: np.ndarray) -> np.ndarray:
        return frames @ self.shift_matrix.T + self.shift_offset


def class_templates(cfg: SynthConfig) -> Templates:
    """The latent gestures and domain shift implied by ``cfg.seed``."""
    rng = np.random.default_rng([cfg.seed, 0])
    decay = 1.0 / (1.0 + np.arange(N_BASIS))[:, None]
    common = rng.normal(size=(N_BASIS, cfg.d_in)) * decay
    classes = [common + cfg.class_separation * rng.normal(size=(N_BASIS, cfg.d_in)) * decay
               for _ in range(cfg.n_classes)]
    raise_hands = rng.normal(size=(N_BASIS, cfg.d_in)) * decay
    lower_hands = rng.normal(size=(N_BASIS, cfg.d_in)) * decay
    perturb = rng.normal(size=(cfg.d_in, cfg.d_in)) / np.sqrt(cfg.d_in)
    shift_matrix = np.eye(cfg.d_in) + cfg.shift_strength * perturb
    shift_offset = cfg.shift_offset * rng.normal(size=cfg.d_in)
    # out-of-vocabulary signs that make up the rest of a news stream
    sep = cfg.class_separation if cfg.filler_separation is None else cfg.filler_separation
    fillers = [common + sep * rng.normal(size=(N_BASIS, cfg.d_in)) * decay
               for _ in range(cfg.n_fillers)]
    return Templates(classes, fillers, raise_hands, lower_hands, shift_matrix, shift_offset)


def _isolated_clip(tpl: Templates, label: int, cfg: SynthConfig, rng) -> np.ndarray:
    n_up = rng.integers(cfg.gesture_length[0], cfg.gesture_length[1] + 1)
    n_sign = rng.integers(cfg.sign_length[0], cfg.sign_length[1] + 1)
    n_down = rng.integers(cfg.gesture_length[0], cfg.gesture_length[1] + 1)
    amp = cfg.gesture_amplitude * rng.uniform(1.0 - cfg.gesture_jitter, 1.0 + cfg.gesture_jitter, size=2)
    frames = np.vstack([
        amp[0] * sample_curve(tpl.raise_hands, n_up),
        sample_curve(tpl.classes[label], n_sign),
        amp[1] * sample_curve(tpl.lower_hands, n_down),
    ])
    return frames + cfg.noise * rng.normal(size=frames.shape)


def _news_stream(tpl: Templates, vocab: GlossVocabulary, cfg: SynthConfig, rng,
                 sid: str, split: str) -> NewsStream:
    T = int(rng.integers(cfg.stream_length[0], cfg.stream_length[1] + 1))
    frames = np.empty((T, cfg.d_in))
    n_signs = int(rng.integers(cfg.signs_per_stream[0], cfg.signs_per_stream[1] + 1))
    lengths = rng.integers(cfg.news_sign_length[0], cfg.news_sign_length[1] + 1, size=n_signs)
    # non-overlapping placement: random gaps distributed over the free frames
    free = T - int(lengths.sum())
    cuts = np.sort(rng.integers(0, free + 1, size=n_signs))
    classes = rng.integers(0, cfg.n_classes, size=n_signs)
    spans = []
    offset = 0
    for i in range(n_signs):
        start = offset + int(cuts[i])
        end = start + int(lengths[i])
        frames[start:end] = tpl.shift(sample_curve(tpl.classes[classes[i]], end - start))
        spans.append((int(classes[i]), start, end))
        offset += int(lengths[i])
    gaps, prev = [], 0
    for _, a, b in spans:
        gaps.append((prev, a))
        prev = b
    gaps.append((prev, T))
    for a, b in gaps:
        _fill_background(frames, a, b, tpl, cfg, rng)
    sigma = cfg.noise if cfg.news_noise is None else cfg.news_noise
    frames = frames + sigma * rng.normal(size=frames.shape)

    tokens = []
    for c, _, _ in spans:
        tokens += list(rng.choice(FILLER_WORDS, size=rng.integers(0, 3)))
        tokens.append(_surface_form(vocab.glosses[c], rng))
    if rng.random() < cfg.distractor_rate:
        phantom = int(rng.integers(0, cfg.n_classes))
        tokens.insert(int(rng.integers(0, len(tokens) + 1)), _surface_form(vocab.glosses[phantom], rng))
    tokens += list(rng.choice(FILLER_WORDS, size=cfg.filler_tokens))
    return NewsStream(sid, frames, [str(t) for t in tokens], spans, split)


def _fill_background(frames, a: int, b: int, tpl: Templates, cfg: SynthConfig, rng) -> None:
    lo, hi = cfg.news_sign_length
    while a < b:
        n = min(int(rng.integers(lo, hi + 1)), b - a)
        if tpl.fillers:
            k = int(rng.integers(0, len(tpl.fillers)))
            frames[a:a + n] = cfg.background_amplitude * tpl.shift(sample_curve(tpl.fillers[k], n))
        else:
            frames[a:a + n] = tpl.shift_offset
        a += n


def _surface_form(gloss: str, rng) -> str:
    form = str(rng.choice([gloss] + inflections(gloss)))
    return form.upper() if rng.random() < 0.25 else form


def generate_corpus(cfg: SynthConfig) -> Corpus:
    tpl = class_templates(cfg)
    vocab = build_vocabulary(cfg.n_classes)
    rng = np.random.default_rng([cfg.seed, 1])
    isolated = []
    for split, per_class in (("train", cfg.train_per_class), ("val", cfg.val_per_class),
                             ("test", cfg.test_per_class)):
        for c in range(cfg.n_classes):
            for i in range(per_class):
                isolated.append(IsolatedSample(f"iso_{split}_{c:03d}_{i:03d}",
                                               _isolated_clip(tpl, c, cfg, rng), c, split))
    streams = []
    for split, n in (("train", cfg.n_streams), ("test", cfg.n_test_streams)):
        for i in range(n):
            streams.append(_news_stream(tpl, vocab, cfg, rng, f"news_{split}_{i:04d}", split))
    return Corpus(isolated, streams, vocab)


# --- on-disk layout ---------------------------------------------------------

INDEX_HEADER = ["id", "kind", "class", "split", "path", "t_raw", "d_in"]


def write_matrix_csv(path: Path, m: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path: Path, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing matrix file: {path}")
    data = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            parts = line.rstrip("\n").split(",")
            if cols is None:
                cols = len(parts)
            if len(parts) != cols:
                raise DatasetError(f"{path}: row {i} has {len(parts)} values, expected {cols}")
            try:
                data.append([float(p) for p in parts])
            except ValueError as exc:
                raise DatasetError(f"{path}: row {i}: {exc}") from None
    if rows is not None and len(data) != rows:
        raise DatasetError(f"{path}: {len(data)} rows, header says {rows}")
    return np.array(data, dtype=np.float64).reshape(len(data), cols or 0)


def write_dataset(directory, corpus: Corpus) -> None:
    """Write ``corpus`` as::

        index.tsv            id kind class split path t_raw d_in
        vocab.txt            one gloss per line, line number = class index
        lemmas.tsv           surface-form <tab> lemma
        iso/<id>.csv         one frame per row
        news/<id>.csv
        subtitles/<id>.txt   whitespace-separated tokens
        spans/<id>.tsv       class start end (half-open)
    """
    root = Path(directory)
    for sub in ("iso", "news", "subtitles", "spans"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    for s in corpus.isolated:
        rel = f"iso/{s.id}.csv"
        write_matrix_csv(root / rel, s.frames)
        rows.append([s.id, "iso", str(s.label), s.split, rel, *map(str, s.frames.shape)])
    for s in corpus.streams:
        rel = f"news/{s.id}.csv"
        write_matrix_csv(root / rel, s.frames)
        rows.append([s.id, "news", "-", s.split, rel, *map(str, s.frames.shape)])
        (root / "subtitles" / f"{s.id}.txt").write_text(" ".join(s.tokens) + "\n", encoding="utf-8")
        with open(root / "spans" / f"{s.id}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for c, a, b in s.spans:
                fh.write(f"{c}\t{a}\t{b}\n")
    with open(root / "index.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(INDEX_HEADER) + "\n")
        for r in rows:
            fh.write("\t".join(r) + "\n")
    (root / "vocab.txt").write_text("".join(g + "\n" for g in corpus.vocab.glosses), encoding="utf-8")
    with open(root / "lemmas.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for form, lemma in corpus.vocab.lemmas.items():
            fh.write(f"{form}\t{lemma}\n")


def read_dataset(directory) -> Corpus:
    root = Path(directory)
    index = root / "index.tsv"
    if not index.exists():
        raise DatasetError(f"missing index file: {index}")
    vocab_path = root / "vocab.txt"
    if not vocab_path.exists():
        raise DatasetError(f"missing vocabulary file: {vocab_path}")
    glosses = [ln for ln in vocab_path.read_text(encoding="utf-8").split("\n") if ln]
    lemmas = {}
    lemma_path = root / "lemmas.tsv"
    if lemma_path.exists():
        for n, line in enumerate(lemma_path.read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{lemma_path}:{n}: expected 2 fields, got {len(parts)}")
            lemmas[parts[0]] = parts[1]
    vocab = GlossVocabulary(glosses, lemmas)

    isolated, streams = [], []
    with open(index, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for n, line in enumerate(lines, 1):
        fields = line.split("\t")
        if n == 1 and fields == INDEX_HEADER:
            continue
        if len(fields) != len(INDEX_HEADER):
            raise DatasetError(f"{index}:{n}: expected {len(INDEX_HEADER)} fields, got {len(fields)}")
        sid, kind, cls, split, rel, t_raw, d_in = fields
        try:
            t_raw, d_in = int(t_raw), int(d_in)
        except ValueError:
            raise DatasetError(f"{index}:{n}: t_raw/d_in must be integers") from None
        try:
            frames = read_matrix_csv(root / rel, t_raw, d_in)
        except DatasetError as exc:
            raise DatasetError(f"{index}:{n}: {exc}") from None
        if kind == "iso":
            try:
                label = int(cls)
            except ValueError:
                raise DatasetError(f"{index}:{n}: isolated sample needs a class index") from None
            if not 0 <= label < vocab.K:
                raise DatasetError(f"{index}:{n}: class {label} outside vocabulary of {vocab.K}")
            isolated.append(IsolatedSample(sid, frames, label, split))
        elif kind == "news":
            streams.append(NewsStream(sid, frames, _read_tokens(root, sid),
                                      _read_spans(root, sid, t_raw), split))
        else:
            raise DatasetError(f"{index}:{n}: unknown kind {kind!r}")
    return Corpus(isolated, streams, vocab)


def _read_tokens(root: Path, sid: str) -> list[str]:
    path = root / "subtitles" / f"{sid}.txt"
    if not path.exists():
        raise DatasetError(f"missing subtitle file: {path}")
    return path.read_text(encoding="utf-8").split()


def _read_spans(root: Path, sid: str, t_raw: int) -> list[tuple[int, int, int]]:
    path = root / "spans" / f"{sid}.tsv"
    if not path.exists():
        return []
    spans = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split("\t")
        try:
            c, a, b = (int(p) for p in parts)
        except ValueError:
            raise DatasetError(f"{path}:{n}: expected 'class start end' integers") from None
        if not 0 <= a < b <= t_raw:
            raise DatasetError(f"{path}:{n}: span [{a},{b}) outside stream of {t_raw} frames")
        spans.append((c, a, b))
    return spans


def dataset_files(directory) -> list[Path]:
    root = Path(directory)
    return sorted(p for p in root.rglob("*") if p.is_file())


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
