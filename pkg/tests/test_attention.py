import numpy as np
import pytest

from signxfer import autodiff as ad
from signxfer.attention import (ATTENTION_NAMES, AttentionParams, FullModel, attend,
                                correlation, domain_invariant_descriptor, forward_features,
                                reweight_memory, similarity, temporal_attention)
from signxfer.backbone import EncoderParams, HeadParams, encode
from signxfer.autodiff import ShapeError

import oracles


def random_params(rng, d=8, d1=4, d2=2):
    p = AttentionParams.init(rng, d, d1, d2)
    p.W_delta.value = rng.normal(size=(d, d1)) * 0.3
    return p


def arrays(p):
    return {n: getattr(p, n).value for n in ATTENTION_NAMES}


def const(a):
    return ad.constant(np.asarray(a, dtype=float))


# --- correlation --------------------------------------------------------------


def test_zero_wx_gives_uniform_rows():
    rng = np.random.default_rng(0)
    p = random_params(rng)
    p.W_X.value = np.zeros_like(p.W_X.value)
    r = correlation(const(rng.normal(size=(5, 8))), const(rng.normal(size=(3, 8))), p).value
    assert np.allclose(r, 1 / 3, atol=1e-15)


def test_single_prototype_gives_ones():
    rng = np.random.default_rng(1)
    p = random_params(rng)
    r = correlation(const(rng.normal(size=(4, 8))), const(rng.normal(size=(1, 8))), p).value
    assert np.array_equal(r, np.ones((4, 1)))


def test_correlation_hand_example():
    one = ad.parameter([[1.0]])
    p = AttentionParams(W_X=one, W_M=ad.parameter([[1.0]]), W_delta=ad.parameter([[0.0]]),
                        W_u=ad.parameter([[1.0]]), W_P=ad.parameter(np.zeros((1, 0))),
                        W_Q=ad.parameter(np.zeros((1, 0))), W_V=ad.parameter(np.zeros((1, 0))),
                        W_O=ad.parameter(np.zeros((0, 1))))
    r = correlation(const([[2.0]]), const([[1.0], [-1.0]]), p).value
    # frozen from a hand evaluation: softmax([2, -2])
    assert np.allclose(r, [[0.98201, 0.01799]], atol=5e-6)


# --- re-weighting, descriptor ------------------------------------------------


def test_cancelled_delta_zeroes_u():
    rng = np.random.default_rng(2)
    p = random_params(rng)
    p.W_delta.value = -p.W_M.value
    X, M = const(rng.normal(size=(3, 8))), const(rng.normal(size=(4, 8)))
    U = reweight_memory(correlation(X, M, p), M, p).value
    assert np.allclose(U, 0.0, atol=1e-15)


def test_one_hot_correlation_selects_prototype():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    M = rng.normal(size=(4, 8))
    r = np.zeros((1, 4))
    r[0, 2] = 1.0
    U = reweight_memory(const(r), const(M), p).value
    assert np.allclose(U, M[2:3] @ (p.W_M.value + p.W_delta.value), atol=1e-14)


def test_reweight_matches_unfused_oracle():
    rng = np.random.default_rng(4)
    p = random_params(rng)
    r, M = oracles.softmax_rows(rng.normal(size=(5, 3))), rng.normal(size=(3, 8))
    U = reweight_memory(const(r), const(M), p).value
    ref = oracles.matmul_loops(oracles.matmul_loops(r, M), p.W_M.value + p.W_delta.value)
    assert np.max(np.abs(U - ref)) <= 1e-12


def test_zero_wu_is_residual_identity():
    rng = np.random.default_rng(5)
    p = random_params(rng)
    p.W_u.value = np.zeros_like(p.W_u.value)
    X = rng.normal(size=(6, 8))
    Z, P = domain_invariant_descriptor(const(rng.normal(size=(6, 4))), const(X), p)
    assert np.array_equal(Z.value, X)
    assert np.array_equal(P.value, X.max(axis=0, keepdims=True))


def test_single_step_descriptor():
    rng = np.random.default_rng(6)
    p = random_params(rng)
    Z, P = domain_invariant_descriptor(const(rng.normal(size=(1, 4))), const(rng.normal(size=(1, 8))), p)
    assert np.array_equal(Z.value, P.value)


def test_descriptor_matches_formula():
    rng = np.random.default_rng(7)
    p = random_params(rng)
    U, X = rng.normal(size=(5, 4)), rng.normal(size=(5, 8))
    Z, P = domain_invariant_descriptor(const(U), const(X), p)
    ref = oracles.matmul_loops(U, p.W_u.value) + X
    assert np.max(np.abs(Z.value - ref)) <= 1e-12
    assert np.max(np.abs(P.value - ref.max(axis=0))) <= 1e-12


# --- temporal attention -------------------------------------------------------


def test_attention_single_step():
    rng = np.random.default_rng(8)
    p = random_params(rng)
    A = temporal_attention(const(rng.normal(size=(1, 8))), const(rng.normal(size=(1, 8))), p)
    assert np.array_equal(A.value, [[1.0]])


def test_zero_wp_gives_uniform_attention():
    rng = np.random.default_rng(9)
    p = random_params(rng)
    p.W_P.value = np.zeros_like(p.W_P.value)
    A = temporal_attention(const(rng.normal(size=(1, 8))), const(rng.normal(size=(7, 8))), p)
    assert np.allclose(A.value, 1 / 7, atol=1e-15)


def test_duplicate_rows_equal_weight():
    rng = np.random.default_rng(10)
    p = random_params(rng)
    X = rng.normal(size=(5, 8))
    X[3] = X[1]
    A = temporal_attention(const(rng.normal(size=(1, 8))), const(X), p).value
    assert A[0, 1] == A[0, 3]


def test_similarity_shape():
    rng = np.random.default_rng(11)
    p = random_params(rng)
    assert similarity(const(rng.normal(size=(1, 8))), const(rng.normal(size=(6, 8))), p).shape == (1, 6)


def test_attend_single_step_and_zero_wo():
    rng = np.random.default_rng(12)
    p = random_params(rng)
    X = rng.normal(size=(1, 8))
    V = attend(const([[1.0]]), const(X), p).value
    assert np.allclose(V, X @ p.W_V.value @ p.W_O.value, atol=1e-15)
    p.W_O.value = np.zeros_like(p.W_O.value)
    assert np.array_equal(attend(const([[0.5, 0.5]]), const(rng.normal(size=(2, 8))), p).value,
                          np.zeros((1, 8)))


def test_attend_matches_unfused_oracle():
    rng = np.random.default_rng(13)
    p = random_params(rng)
    A, X = oracles.softmax_rows(rng.normal(size=(1, 6))), rng.normal(size=(6, 8))
    V = attend(const(A), const(X), p).value
    ref = oracles.matmul_loops(oracles.matmul_loops(oracles.matmul_loops(A, X), p.W_V.value), p.W_O.value)
    assert np.max(np.abs(V - ref)) <= 1e-12


# --- whole model --------------------------------------------------------------


def make_model(rng, d_in=5, d=8, K=3, rho=2):
    enc = EncoderParams.init(rng, d_in, d, rho)
    return FullModel(enc, random_params(rng, d, d // 2, d // 4), HeadParams.init(rng, d, K))


def test_baseline_degeneration():
    rng = np.random.default_rng(14)
    model = make_model(rng)
    model.att.W_u.value = np.zeros_like(model.att.W_u.value)
    model.att.W_O.value = np.zeros_like(model.att.W_O.value)
    frames, M = rng.normal(size=(11, 5)), rng.normal(size=(3, 8))
    X = encode(frames, model.enc).value
    expected = X.max(axis=0, keepdims=True) @ model.head.W.value + model.head.b.value
    assert np.array_equal(model.logits(frames, const(M)).value, expected)


def test_memory_row_permutation():
    rng = np.random.default_rng(15)
    model = make_model(rng)
    frames, M = rng.normal(size=(9, 5)), rng.normal(size=(3, 8))
    perm = [2, 0, 1]
    a = model.logits(frames, const(M)).value
    b = model.logits(frames, const(M[perm])).value
    assert np.allclose(a, b, atol=1e-12)


def test_matches_equation_oracle():
    rng = np.random.default_rng(16)
    model = make_model(rng)
    frames, M = rng.normal(size=(10, 5)), rng.normal(size=(3, 8))
    ours = model.logits(frames, const(M)).value
    enc = {"W": model.enc.W.value, "b": model.enc.b.value, "rho": model.enc.rho}
    head = {"W": model.head.W.value, "b": model.head.b.value}
    ref = oracles.full_logits(frames, M, enc, arrays(model.att), head)
    assert np.max(np.abs(ours - ref)) <= 1e-10


def test_trace_fields_consistent():
    rng = np.random.default_rng(17)
    model = make_model(rng)
    tr = model.trace(rng.normal(size=(8, 5)), const(rng.normal(size=(3, 8))))
    assert tr.r.shape == (4, 3) and tr.A.shape == (1, 4)
    assert np.allclose(tr.fused, tr.P + tr.V)


def test_init_decisions():
    p = AttentionParams.init(np.random.default_rng(18), 32)
    assert p.W_X.shape == (32, 16) and p.W_P.shape == (32, 8)
    assert np.array_equal(p.W_delta.value, np.zeros((32, 16)))
    assert np.all(np.abs(p.W_u.value) <= 1 / np.sqrt(16))


def test_shape_errors():
    rng = np.random.default_rng(19)
    model = make_model(rng)
    with pytest.raises(ShapeError):
        model.logits(rng.normal(size=(8, 5)), const(rng.normal(size=(3, 7))))
    with pytest.raises(ShapeError):
        model.logits(rng.normal(size=(8, 5)), const(rng.normal(size=(4, 8))))
    with pytest.raises(ShapeError):
        AttentionParams.init(rng, 8, 4, 8)


def test_forward_features_accepts_arrays():
    rng = np.random.default_rng(20)
    model = make_model(rng)
    X = encode(rng.normal(size=(8, 5)), model.enc)
    M = rng.normal(size=(3, 8))
    a, _ = forward_features(X, M, model.att, model.head)
    b, _ = forward_features(X, const(M), model.att, model.head)
    assert np.array_equal(a.value, b.value)


def test_checkpoint_sections_round_trip():
    rng = np.random.default_rng(21)
    model = make_model(rng)
    back = FullModel.from_sections(model.checkpoint_sections())
    frames, M = rng.normal(size=(9, 5)), const(rng.normal(size=(3, 8)))
    assert np.array_equal(back.logits(frames, M).value, model.logits(frames, M).value)
