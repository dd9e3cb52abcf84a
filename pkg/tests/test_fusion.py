import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcsep.autodiff import GradTape, Tensor, ops
from pcsep.autodiff.gradcheck import check_gradients
from pcsep.errors import DimensionError
from pcsep.fusion import (
    INSTRUMENTS,
    FusionParams,
    bce_loss,
    fuse,
    fuse_logits,
    ideal_binary_mask,
    ideal_binary_masks,
    one_hot,
)


def loop_fuse(v, S, alpha, beta):
    K, H, W = S.shape
    out = np.zeros((H, W))
    for t in range(H):
        for f in range(W):
            z = beta
            for k in range(K):
                z += alpha[k] * v[k] * S[k, t, f]
            out[t, f] = 1.0 / (1.0 + math.exp(-z))
    return out


def loop_bce(p, y):
    total = 0.0
    for pi, yi in zip(p.ravel(), y.ravel()):
        pi = min(max(pi, 1e-7), 1 - 1e-7)
        total += -(yi * math.log(pi) + (1 - yi) * math.log(1 - pi))
    return total / p.size


@pytest.mark.parametrize("k0", range(5))
def test_one_hot_selects_channel_bitwise(k0):
    rng = np.random.default_rng(k0)
    S = rng.normal(scale=4.0, size=(5, 16, 16))
    params = FusionParams(5)
    m = fuse(one_hot(INSTRUMENTS[k0]), Tensor(S), params).data
    np.testing.assert_array_equal(m, ops._sigmoid(S[k0]))


def test_one_hot_selects_channel_batched():
    rng = np.random.default_rng(11)
    S = rng.normal(scale=3.0, size=(2, 5, 8, 8))
    v = np.stack([np.stack([one_hot("cello"), one_hot("violin")])] * 2)
    m = fuse(v, Tensor(S), FusionParams(5)).data
    np.testing.assert_array_equal(m[:, 0], ops._sigmoid(S[:, 0]))
    np.testing.assert_array_equal(m[:, 1], ops._sigmoid(S[:, 4]))


def test_zero_v_gives_constant():
    S = np.random.default_rng(0).normal(size=(4, 6, 6))
    m = fuse(np.zeros(4), Tensor(S), FusionParams(4, beta=0.7)).data
    np.testing.assert_allclose(m, 1 / (1 + math.exp(-0.7)), atol=1e-15)


def test_matches_loop_oracle():
    rng = np.random.default_rng(1)
    K = 6
    v = rng.uniform(size=K)
    S = rng.normal(size=(K, 7, 5))
    params = FusionParams(K)
    params.alpha.data = rng.normal(size=K)
    params.beta.data = rng.normal(size=1)
    got = fuse(v, Tensor(S), params).data
    want = loop_fuse(v, S, params.alpha.data, params.beta.data[0])
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_k_mismatch():
    with pytest.raises(DimensionError):
        fuse(np.ones(3), Tensor(np.zeros((4, 2, 2))), FusionParams(4))
    with pytest.raises(DimensionError):
        fuse(np.ones(4), Tensor(np.zeros((4, 2, 2))), FusionParams(5))


def test_predicted_mask_open_interval():
    rng = np.random.default_rng(2)
    m = fuse(rng.uniform(size=4), Tensor(rng.normal(size=(4, 9, 9))), FusionParams(4)).data
    assert np.all((m > 0) & (m < 1))


def test_one_hot_contract():
    for i, name in enumerate(INSTRUMENTS):
        h = one_hot(name)
        assert h.shape == (5,) and h.sum() == 1 and h[i] == 1
    with pytest.raises(ValueError):
        one_hot("banjo")


def test_fusion_gradients():
    rng = np.random.default_rng(3)
    params = FusionParams(4)
    params.alpha.data = rng.normal(size=4)
    v = Tensor(rng.uniform(size=(2, 2, 4)), requires_grad=True)
    S = Tensor(rng.normal(size=(2, 4, 5, 5)), requires_grad=True)
    y = (rng.uniform(size=(2, 2, 5, 5)) > 0.5).astype(float)

    def loss():
        return bce_loss(fuse(v, S, params), y)

    errs = check_gradients(loss, {"v": v, "S": S, **params.named_parameters()}, samples=20, rng=rng)
    assert max(errs.values()) < 1e-4, errs


# ---------------------------------------------------------------- IBM


def test_ibm_examples():
    a = np.array([[3.0, 2.0, 5.0]])
    b = np.array([[2.0, 2.0, 6.0]])
    np.testing.assert_array_equal(ideal_binary_mask([a, b], 0), [[1, 1, 0]])
    np.testing.assert_array_equal(ideal_binary_mask([a, b], 1), [[0, 1, 1]])
    np.testing.assert_array_equal(ideal_binary_mask([a], 0), np.ones((1, 3)))


def test_ibm_uses_magnitude():
    a = np.array([-3.0 + 0j, 1j])
    b = np.array([2.0, 0.5])
    np.testing.assert_array_equal(ideal_binary_mask([a, b], 0), [1, 1])


def test_ibm_shape_mismatch():
    with pytest.raises(DimensionError):
        ideal_binary_mask([np.ones((2, 2)), np.ones((2, 3))], 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10_000))
def test_ibm_covers_every_bin(n, seed):
    rng = np.random.default_rng(seed)
    # coarse values to force ties
    mags = [rng.integers(0, 3, size=(4, 5)).astype(float) for _ in range(n)]
    masks = ideal_binary_masks(mags)
    assert set(np.unique(masks)) <= {0.0, 1.0}
    assert np.all(masks.sum(axis=0) >= 1)


# ---------------------------------------------------------------- BCE


def test_bce_perfect_prediction_hits_clamp():
    y = np.array([0.0, 1.0, 1.0, 0.0])
    loss = bce_loss(Tensor(y.copy()), y).data
    assert 0 < loss < 2e-7
    assert loss == pytest.approx(-math.log(1 - 1e-7), rel=1e-9)


def test_bce_half():
    y = (np.random.default_rng(0).uniform(size=(3, 3)) > 0.5).astype(float)
    assert bce_loss(Tensor(np.full((3, 3), 0.5)), y).data == pytest.approx(math.log(2), abs=1e-15)


def test_bce_loop_oracle():
    rng = np.random.default_rng(4)
    p = rng.uniform(size=(6, 7))
    p[0, 0] = 0.0
    p[0, 1] = 1.0
    y = (rng.uniform(size=(6, 7)) > 0.5).astype(float)
    assert float(bce_loss(Tensor(p), y).data) == pytest.approx(loop_bce(p, y), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_bce_non_negative(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(size=10)
    y = (rng.uniform(size=10) > 0.5).astype(float)
    assert float(bce_loss(Tensor(p), y).data) >= 0


def test_bce_logit_gradient():
    rng = np.random.default_rng(5)
    z = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    y = (rng.uniform(size=(4, 5)) > 0.5).astype(float)
    with GradTape() as tape:
        p = ops.sigmoid(z)
        loss = bce_loss(p, y)
    tape.backward(loss)
    np.testing.assert_allclose(z.grad, (p.data - y) / y.size, atol=1e-15)
    errs = check_gradients(lambda: bce_loss(ops.sigmoid(z), y), {"z": z}, samples=None)
    assert errs["z"] < 1e-6


def test_fuse_logits_shape():
    rng = np.random.default_rng(6)
    z = fuse_logits(rng.uniform(size=(3, 2, 4)), Tensor(rng.normal(size=(3, 4, 8, 8))), FusionParams(4))
    assert z.shape == (3, 2, 8, 8)
