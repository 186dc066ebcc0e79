"""Three-stage training: base recogniser, joint (coarse alignment), full model."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, FullModel
from .backbone import Classifier
from .corpus import IsolatedSample
from .extraction import CandidateSet, candidates_as_samples
from .memory import PrototypeMemory

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class ModelConfig:
    d: int = 32
    rho: int = 4
    d_prime: int | None = None
    d_dprime: int | None = None


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-7
    target_length: int = 64
    seed: int = 0
    stage: str = "base"
    freeze_encoder: bool = False
    init_from_base: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.target_length < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and target_length >= 1 required")
        if self.stage not in ("base", "joint", "full"):
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_top1: list[float] = field(default_factory=list)
    checkpoint: str = ""
    seed: int = 0
    config: dict = field(default_factory=dict)

    def to_tsv(self) -> str:
        lines = [f"# seed\t{self.seed}", f"# checkpoint\t{self.checkpoint}"]
        lines += [f"# {k}\t{v}" for k, v in self.config.items()]
        lines.append("epoch\tloss\tval_micro_top1")
        for i, loss in enumerate(self.losses):
            val = self.val_top1[i] if i < len(self.val_top1) else float("nan")
            lines.append(f"{i + 1}\t{loss!r}\t{val!r}")
        return "\n".join(lines) + "\n"


def temporal_augment(frames: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random ``length``-frame crop, or cyclic repetition when the clip is shorter."""
    t = len(frames)
    if t >= length:
        s = int(rng.integers(0, t - length + 1))
        return frames[s:s + length]
    return frames[np.arange(length) % t]


def _one_hot(labels, K: int) -> np.ndarray:
    y = np.zeros((len(labels), K))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def _check_classes(samples: list[IsolatedSample], K: int) -> None:
    present = {s.label for s in samples}
    missing = [j for j in range(K) if j not in present]
    if missing:
        raise ValueError(f"classes without training samples: {missing}")


def micro_top1(predict: Callable[[np.ndarray], np.ndarray], samples: list[IsolatedSample]) -> float:
    if not samples:
        return float("nan")
    hits = sum(int(np.argmax(predict(s.frames)[0]) == s.label) for s in samples)
    return 100.0 * hits / len(samples)


def fit(params: dict[str, ad.Tensor], logits_fn: Callable[[np.ndarray], ad.Tensor],
        samples: list[IsolatedSample], augment: list[bool], K: int, cfg: TrainConfig,
        rng: np.random.Generator, val: Callable[[], float] | None = None) -> TrainReport:
    """Mini-batch Adam on mean BCE against one-hot labels."""
    opt = ad.Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    report = TrainReport(seed=cfg.seed, config=asdict(cfg))
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            outs = []
            for i in idx:
                frames = samples[i].frames
                if augment[i]:
                    frames = temporal_augment(frames, cfg.target_length, rng)
                outs.append(logits_fn(frames))
            y = _one_hot([samples[i].label for i in idx], K)
            loss = ad.sigmoid_bce(ad.vstack(outs), y)
            if not np.isfinite(loss.value[0, 0]):
                raise NumericalError(f"non-finite loss at epoch {epoch + 1}")
            ad.backward(loss, params.values())
            opt.step()
            total += loss.value[0, 0] * len(idx)
            count += len(idx)
        report.losses.append(total / max(count, 1))
        if val is not None:
            report.val_top1.append(val())
        logger.debug("%s epoch %d loss %.5f", cfg.stage, epoch + 1, report.losses[-1])
    return report


def train_classifier(samples: list[IsolatedSample], K: int, d_in: int, cfg: TrainConfig,
                     model_cfg: ModelConfig = ModelConfig(), augment: list[bool] | None = None,
                     init: Classifier | None = None,
                     val_samples: list[IsolatedSample] = ()) -> tuple[Classifier, TrainReport]:
    _check_classes(samples, K)
    rng = np.random.default_rng(cfg.seed)
    model = copy.deepcopy(init) if init is not None else \
        Classifier.init(rng, d_in, model_cfg.d, K, model_cfg.rho)
    if augment is None:
        augment = [True] * len(samples)
    val = (lambda: micro_top1(model.predict, list(val_samples))) if val_samples else None
    report = fit(model.named(), model.logits, samples, augment, K, cfg, rng, val)
    return model, report


def train_base(isolated: list[IsolatedSample], K: int, cfg: TrainConfig,
               model_cfg: ModelConfig = ModelConfig(),
               extra: list[IsolatedSample] = (),
               val_samples: list[IsolatedSample] = ()) -> tuple[Classifier, TrainReport]:
    """Train F on isolated clips; ``extra`` appends news windows as plain samples."""
    d_in = isolated[0].frames.shape[1]
    samples = list(isolated) + list(extra)
    augment = [True] * len(isolated) + [False] * len(extra)
    return train_classifier(samples, K, d_in, cfg, model_cfg, augment, val_samples=val_samples)


def joint_samples(isolated: list[IsolatedSample], candidates: CandidateSet) -> tuple[list, list]:
    if len(candidates) == 0:
        raise ValueError("joint training needs at least one extracted news window")
    news = candidates_as_samples(candidates)
    return list(isolated) + news, [True] * len(isolated) + [False] * len(news)


def train_joint(isolated: list[IsolatedSample], candidates: CandidateSet, K: int,
                cfg: TrainConfig, model_cfg: ModelConfig = ModelConfig(),
                base: Classifier | None = None,
                val_samples: list[IsolatedSample] = ()) -> tuple[Classifier, TrainReport]:
    """Train F-hat on isolated clips plus extracted news windows labelled by class.

    F-hat starts from fresh weights unless ``cfg.init_from_base`` is set.
    """
    samples, augment = joint_samples(isolated, candidates)
    d_in = isolated[0].frames.shape[1]
    init = base if (cfg.init_from_base and base is not None) else None
    return train_classifier(samples, K, d_in, cfg, model_cfg, augment, init, val_samples)


def init_full_model(base: Classifier, rng, model_cfg: ModelConfig = ModelConfig()) -> FullModel:
    enc = copy.deepcopy(base.enc)
    head = copy.deepcopy(base.head)
    att = AttentionParams.init(rng, enc.d, model_cfg.d_prime, model_cfg.d_dprime)
    return FullModel(enc, att, head)


def train_full(isolated: list[IsolatedSample], memory: PrototypeMemory, base: Classifier,
               cfg: TrainConfig, model_cfg: ModelConfig = ModelConfig(),
               val_samples: list[IsolatedSample] = ()) -> tuple[FullModel, TrainReport]:
    """End-to-end training of encoder (from F), attention and head; memory stays fixed."""
    K = base.K
    if memory.K != K:
        raise ValueError(f"memory has {memory.K} classes, model has {K}")
    if memory.d != base.enc.d:
        raise ValueError(f"memory rows are {memory.d}-d, encoder emits {base.enc.d}")
    _check_classes(isolated, K)
    rng = np.random.default_rng(cfg.seed)
    model = init_full_model(base, rng, model_cfg)
    params = model.named()
    if cfg.freeze_encoder:
        params = {k: v for k, v in params.items() if not k.startswith("enc.")}
    M = ad.constant(memory.M)
    val = ((lambda: micro_top1(lambda f: model.predict(f, M), list(val_samples)))
           if val_samples else None)
    report = fit(params, lambda f: model.logits(f, M), isolated, [True] * len(isolated),
                 K, cfg, rng, val)
    return model, report
