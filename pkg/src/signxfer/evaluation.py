"""Recognition and temporal-localization metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .extraction import iter_windows

TIOU_THRESHOLDS = (0.1, 0.3, 0.5, 0.7)


@dataclass(frozen=True)
class Span:
    cls: int
    start: int
    end: int
    score: float = 1.0

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"span needs start < end, got [{self.start}, {self.end})")


def tiou(a: Span, b: Span) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start))
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / union


# --- recognition ------------------------------------------------------------


def topk_hits(logits: np.ndarray, labels: Sequence[int], k: int) -> np.ndarray:
    """Whether each true label is among the k largest logits (ties favour lower class index)."""
    logits = np.asarray(logits, dtype=np.float64)
    K = logits.shape[1]
    if not 1 <= k <= K:
        raise ValueError(f"k={k} outside 1..{K}")
    # stable sort on -logit keeps lower indices first among equals
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return np.array([labels[i] in order[i] for i in range(len(labels))], dtype=bool)


def topk_accuracy(logits, labels: Sequence[int], k: int = 1, mode: str = "micro") -> float:
    labels = list(labels)
    hits = topk_hits(logits, labels, k)
    if mode == "micro":
        return 100.0 * hits.mean()
    if mode != "macro":
        raise ValueError(f"mode must be 'micro' or 'macro', got {mode!r}")
    K = np.asarray(logits).shape[1]
    per_class = per_class_accuracy(hits, labels, K)
    empty = [j for j, v in enumerate(per_class) if v is None]
    if empty:
        raise ValueError(f"macro accuracy undefined: no test samples for class(es) {empty}")
    return float(np.mean(per_class))


def per_class_accuracy(hits: np.ndarray, labels: list[int], K: int) -> list[float | None]:
    out: list[float | None] = []
    labels_arr = np.asarray(labels)
    for j in range(K):
        mask = labels_arr == j
        out.append(100.0 * hits[mask].mean() if mask.any() else None)
    return out


# --- localization -----------------------------------------------------------


def temporal_nms(spans: list[Span], threshold: float = 0.5) -> list[Span]:
    """Greedy per-class suppression of spans overlapping a kept one by more than ``threshold``."""
    kept: list[Span] = []
    for s in sorted(spans, key=lambda s: (-s.score, s.start, s.end)):
        if all(k.cls != s.cls or tiou(k, s) <= threshold for k in kept):
            kept.append(s)
    return kept


def localize(frames: np.ndarray, predict: Callable[[np.ndarray], np.ndarray],
             sizes=range(9, 17), stride: int = 1, gate: float = 0.2,
             nms: float | None = 0.5) -> list[Span]:
    """Sliding-window sign detection; class probabilities strictly above ``gate`` fire."""
    dets = []
    for a, b in iter_windows(len(frames), sizes, stride):
        probs = predict(frames[a:b])[0]
        for j in np.flatnonzero(probs > gate):
            dets.append(Span(int(j), a, b, float(probs[j])))
    if nms is not None:
        dets = temporal_nms(dets, nms)
    return sorted(dets, key=lambda s: (-s.score, s.cls, s.start, s.end))


def average_precision(tp: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP for detections already sorted by descending score."""
    if n_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def match_detections(dets: list[tuple[str, Span]], gts: list[tuple[str, Span]],
                     threshold: float) -> list[bool]:
    """Greedy matching in descending score order; each ground truth is used at most once."""
    used = [False] * len(gts)
    flags = []
    for vid, d in dets:
        best, best_iou = -1, -1.0
        for g, (gvid, gt) in enumerate(gts):
            if used[g] or gvid != vid:
                continue
            o = tiou(d, gt)
            if o > best_iou:
                best, best_iou = g, o
        if best >= 0 and best_iou >= threshold:
            used[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def map_at_tiou(detections: list[tuple[str, Span]], ground_truth: list[tuple[str, Span]],
                thresholds=TIOU_THRESHOLDS) -> dict[float, float]:
    """Mean over classes with ground truth of per-class AP, at each tIoU threshold.

    ``detections`` and ``ground_truth`` pair a video id with a span.
    """
    classes = sorted({s.cls for _, s in ground_truth})
    out = {}
    for th in thresholds:
        aps = []
        for c in classes:
            gts = [(v, s) for v, s in ground_truth if s.cls == c]
            dets = sorted(((v, s) for v, s in detections if s.cls == c),
                          key=lambda vs: (-vs[1].score, vs[0], vs[1].start, vs[1].end))
            aps.append(average_precision(match_detections(dets, gts, th), len(gts)))
        out[th] = 100.0 * float(np.mean(aps)) if aps else float("nan")
    return out


# --- attention-derived outputs ---------------------------------------------


def sign_signature(attention: np.ndarray, rho: int = 1) -> tuple[int, tuple[int, int]]:
    """Most attended step (lowest on ties) and the raw-frame range it pools."""
    a = np.asarray(attention).reshape(-1)
    idx = int(np.argmax(a))
    return idx, (idx * rho, (idx + 1) * rho)


def agreement_filter(pairs: list[tuple[Span, Span]],
                     min_tiou: float = 0.5) -> tuple[list[tuple[Span, Span]], float | None]:
    """Keep annotation pairs with tIoU >= ``min_tiou``; also report the pre-filter mean tIoU."""
    if not pairs:
        return [], None
    scores = [tiou(a, b) for a, b in pairs]
    kept = [p for p, s in zip(pairs, scores) if s >= min_tiou]
    return kept, float(np.mean(scores))


# --- reports ----------------------------------------------------------------


@dataclass
class EvalReport:
    micro_top1: float
    micro_top5: float
    macro_top1: float
    macro_top5: float
    per_class: list[float | None] = field(default_factory=list)
    map_by_tiou: dict[float, float] = field(default_factory=dict)
    name: str = ""

    def rows(self) -> list[tuple[str, str]]:
        rows = [("micro_top1", self.micro_top1), ("micro_top5", self.micro_top5),
                ("macro_top1", self.macro_top1), ("macro_top5", self.macro_top5)]
        rows += [(f"map@{th}", v) for th, v in sorted(self.map_by_tiou.items())]
        rows += [(f"class_{j}_top1", v) for j, v in enumerate(self.per_class)]
        return [(k, "-" if v is None else repr(float(v))) for k, v in rows]

    def to_tsv(self) -> str:
        return "metric\tvalue\n" + "".join(f"{k}\t{v}\n" for k, v in self.rows())

    def table(self) -> str:
        lines = [f"{self.name or 'model'}",
                 f"  micro top-1 {self.micro_top1:6.2f}   top-5 {self.micro_top5:6.2f}",
                 f"  macro top-1 {self.macro_top1:6.2f}   top-5 {self.macro_top5:6.2f}"]
        if self.map_by_tiou:
            lines.append("  mAP@tIoU " + "  ".join(f"{th}:{v:5.1f}" for th, v in sorted(self.map_by_tiou.items())))
        return "\n".join(lines)


def recognition_report(logits: np.ndarray, labels: list[int], name: str = "") -> EvalReport:
    K = logits.shape[1]
    k5 = min(5, K)
    hits = topk_hits(logits, labels, 1)
    return EvalReport(
        micro_top1=topk_accuracy(logits, labels, 1, "micro"),
        micro_top5=topk_accuracy(logits, labels, k5, "micro"),
        macro_top1=topk_accuracy(logits, labels, 1, "macro"),
        macro_top5=topk_accuracy(logits, labels, k5, "macro"),
        per_class=per_class_accuracy(hits, labels, K),
        name=name,
    )


def centroid_gap(embed: Callable[[np.ndarray], np.ndarray], iso: list, news: list) -> float:
    """Mean distance between each class's isolated and news feature centroids.

    ``iso`` and ``news`` are (frames, label) pairs; classes missing from either side are skipped.
    """
    def centroids(items):
        by = {}
        for frames, label in items:
            by.setdefault(label, []).append(embed(frames)[0])
        return {c: np.mean(v, axis=0) for c, v in by.items()}

    ci, cn = centroids(iso), centroids(news)
    common = sorted(set(ci) & set(cn))
    return float(np.mean([np.linalg.norm(ci[c] - cn[c]) for c in common]))
