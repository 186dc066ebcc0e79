import numpy as np
import pytest

from signxfer import autodiff as ad
from signxfer.backbone import Classifier
from signxfer.corpus import IsolatedSample, SynthConfig, generate_corpus
from signxfer.extraction import Candidate, CandidateSet
from signxfer.memory import PrototypeMemory
from signxfer.training import (ModelConfig, NumericalError, TrainConfig, fit, joint_samples,
                               temporal_augment, train_base, train_full, train_joint)

SMALL = ModelConfig(d=8, rho=2)


def toy_samples(rng, n_per_class=1, K=2, t=12, d_in=3):
    return [IsolatedSample(f"s{c}_{i}", rng.normal(size=(t, d_in)) + 2 * c, c, "train")
            for c in range(K) for i in range(n_per_class)]


def test_augment_identity_at_target_length():
    frames = np.arange(64.0).reshape(64, 1)
    assert np.array_equal(temporal_augment(frames, 64, np.random.default_rng(0)), frames)


def test_augment_cyclic_repeat():
    frames = np.arange(3.0).reshape(3, 1)
    out = temporal_augment(frames, 7, np.random.default_rng(0))
    assert out.ravel().tolist() == [0, 1, 2, 0, 1, 2, 0]


def test_augment_crop_bounds():
    frames = np.arange(100.0).reshape(100, 1)
    rng = np.random.default_rng(1)
    starts = set()
    for _ in range(300):
        out = temporal_augment(frames, 64, rng)
        assert len(out) == 64
        s = int(out[0, 0])
        assert 0 <= s <= 36 and np.array_equal(out.ravel(), np.arange(s, s + 64))
        starts.add(s)
    assert min(starts) == 0 and max(starts) == 36


def test_one_epoch_reduces_loss_on_toy_set():
    rng = np.random.default_rng(2)
    samples = toy_samples(rng)
    cfg = TrainConfig(epochs=1, batch_size=2, lr=1e-2, target_length=12, seed=3)
    model = Classifier.init(np.random.default_rng(cfg.seed), 3, 8, 2, rho=2)

    def loss():
        logits = ad.vstack([model.logits(s.frames) for s in samples])
        return ad.sigmoid_bce(logits, np.eye(2)).value[0, 0]

    before = loss()
    fit(model.named(), model.logits, samples, [False, False], 2, cfg, np.random.default_rng(0))
    assert loss() < before


def test_same_seed_same_model():
    rng = np.random.default_rng(4)
    samples = toy_samples(rng, 3)
    cfg = TrainConfig(epochs=3, target_length=8, seed=5)
    a, ra = train_base(samples, 2, cfg, SMALL)
    b, rb = train_base(samples, 2, cfg, SMALL)
    assert ra.losses == rb.losses
    for k, t in a.named().items():
        assert np.array_equal(t.value, b.named()[k].value)


def test_zero_lr_leaves_parameters():
    rng = np.random.default_rng(6)
    samples = toy_samples(rng, 2)
    cfg = TrainConfig(epochs=2, lr=0.0, weight_decay=0.0, target_length=8, seed=7)
    trained, _ = train_base(samples, 2, cfg, SMALL)
    fresh = Classifier.init(np.random.default_rng(7), 3, 8, 2, rho=2)
    for k, t in fresh.named().items():
        assert np.array_equal(t.value, trained.named()[k].value)


def test_missing_class_rejected():
    rng = np.random.default_rng(8)
    samples = [s for s in toy_samples(rng) if s.label == 0]
    with pytest.raises(ValueError, match="classes without"):
        train_base(samples, 2, TrainConfig(epochs=1), SMALL)


def test_nan_loss_raises():
    rng = np.random.default_rng(9)
    samples = toy_samples(rng)
    samples[0] = IsolatedSample("bad", np.full((12, 3), np.nan), 0, "train")
    with pytest.raises(NumericalError):
        train_base(samples, 2, TrainConfig(epochs=1), SMALL)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(stage="other")


def test_joint_requires_candidates():
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError, match="at least one"):
        train_joint(toy_samples(rng), CandidateSet(), 2, TrainConfig(epochs=1), SMALL)


def test_joint_sample_bookkeeping():
    rng = np.random.default_rng(11)
    iso = toy_samples(rng, 2)
    cs = CandidateSet()
    for i in range(3):
        cs.add(Candidate(f"n{i}", i % 2, 0, 9, 0.9, rng.normal(size=(9, 3))))
    samples, augment = joint_samples(iso, cs)
    assert len(samples) == len(iso) + 3
    assert augment == [True] * 4 + [False] * 3


def test_joint_news_windows_are_shuffled_in():
    rng = np.random.default_rng(12)
    iso = toy_samples(rng, 4)
    cs = CandidateSet()
    for i in range(4):
        cs.add(Candidate(f"n{i}", i % 2, 0, 9, 0.9, rng.normal(size=(9, 3))))
    samples, _ = joint_samples(iso, cs)
    order = np.random.default_rng(TrainConfig().seed).permutation(len(samples))
    news_positions = [p for p, i in enumerate(order) if i >= len(iso)]
    assert news_positions != list(range(len(iso), len(samples)))


def full_fixture(rng, epochs=2):
    samples = toy_samples(rng, 2, t=12)
    base, _ = train_base(samples, 2, TrainConfig(epochs=1, target_length=8), SMALL)
    mem = PrototypeMemory(rng.normal(size=(2, 8)), ["a", "b"])
    return samples, base, mem


def test_memory_frozen_and_delta_moves():
    rng = np.random.default_rng(13)
    samples, base, mem = full_fixture(rng)
    before = mem.M.tobytes()
    model, report = train_full(samples, mem, base, TrainConfig(epochs=2, target_length=8, stage="full"), SMALL)
    assert mem.M.tobytes() == before
    assert np.any(model.att.W_delta.value != 0.0)
    assert all(np.isfinite(report.losses))


def test_full_encoder_starts_from_base():
    rng = np.random.default_rng(14)
    samples, base, mem = full_fixture(rng)
    model, _ = train_full(samples, mem, base, TrainConfig(epochs=0, stage="full"), SMALL)
    assert np.array_equal(model.enc.W.value, base.enc.W.value)
    assert model.enc.W is not base.enc.W


def test_freeze_encoder():
    rng = np.random.default_rng(15)
    samples, base, mem = full_fixture(rng)
    cfg = TrainConfig(epochs=2, target_length=8, stage="full", freeze_encoder=True)
    model, _ = train_full(samples, mem, base, cfg, SMALL)
    assert np.array_equal(model.enc.W.value, base.enc.W.value)
    assert not np.array_equal(model.head.W.value, base.head.W.value)


def test_memory_mismatch_rejected():
    rng = np.random.default_rng(16)
    samples, base, _ = full_fixture(rng)
    with pytest.raises(ValueError, match="classes"):
        train_full(samples, PrototypeMemory(np.zeros((3, 8)), ["a", "b", "c"]), base,
                   TrainConfig(epochs=1), SMALL)


def test_report_tsv():
    rng = np.random.default_rng(17)
    samples = toy_samples(rng)
    _, report = train_base(samples, 2, TrainConfig(epochs=2, target_length=8), SMALL,
                           val_samples=samples)
    lines = report.to_tsv().splitlines()
    assert "epoch\tloss\tval_micro_top1" in lines
    assert len(report.losses) == len(report.val_top1) == 2


def test_full_loss_drops_by_epoch_five_on_reference_corpus():
    cfg = SynthConfig(seed=0)
    corpus = generate_corpus(cfg)
    train = corpus.split("train")
    base, _ = train_base(train, cfg.n_classes, TrainConfig(epochs=5, seed=1))
    mem = PrototypeMemory(np.vstack([
        np.mean([np.tanh(s.frames @ base.enc.W.value + base.enc.b.value).mean(axis=0)
                 for s in train if s.label == c], axis=0) for c in range(cfg.n_classes)]),
        corpus.vocab.glosses, "iso-base")
    _, report = train_full(train, mem, base, TrainConfig(epochs=5, seed=3, stage="full"))
    assert report.losses[4] < report.losses[0]
