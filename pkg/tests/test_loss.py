import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadadapt.exceptions import NumericalError, UsageError
from roadadapt.loss import (
    LossReport,
    LossWeights,
    adversarial_loss,
    conformity_loss,
    discriminator_loss,
    masked_bce,
    total_loss,
)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_bce_examples():
    loss, _ = masked_bce(np.array([[0.5]]), np.array([[1]]), np.array([[1]]))
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    loss, grad = masked_bce(np.full((2, 2), 0.3), np.ones((2, 2), np.uint8), np.zeros((2, 2), np.uint8))
    assert loss == 0 and not grad.any()
    loss, _ = masked_bce(np.array([[0.9, 0.2]]), np.array([[1, 0]]), np.array([[1, 1]]))
    oracle = (-math.log(0.9) - math.log(0.8)) / 2
    assert loss == pytest.approx(oracle, abs=1e-12)
    assert loss == pytest.approx(0.164252, abs=1e-6)


def test_bce_saturated_is_finite():
    loss, grad = masked_bce(np.array([[0.0, 1.0]]), np.array([[1, 0]]))
    assert math.isfinite(loss) and np.all(np.isfinite(grad))
    assert loss == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_bce_selected_normalization():
    p = np.array([[0.9, 0.2, 0.5]])
    y = np.array([[1, 0, 1]])
    m = np.array([[1, 1, 0]])
    a, _ = masked_bce(p, y, m, normalize="pixels")
    b, _ = masked_bce(p, y, m, normalize="selected")
    assert b == pytest.approx(a * 3 / 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["pixels", "selected"]))
def test_bce_gradient(seed, normalize):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, (3, 4))
    y = rng.integers(0, 2, (3, 4))
    m = rng.integers(0, 2, (3, 4))
    _, g = masked_bce(p, y, m, normalize)
    num = central_diff(lambda x: masked_bce(x, y, m, normalize)[0], p)
    np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-9)


def test_bce_shape_and_value_errors():
    with pytest.raises(UsageError):
        masked_bce(np.zeros((2, 2)), np.zeros((2, 3), np.uint8))
    with pytest.raises(UsageError):
        masked_bce(np.full((2, 2), 1.5), np.zeros((2, 2), np.uint8))
    with pytest.raises(UsageError):
        masked_bce(np.zeros((2, 2)), np.full((2, 2), 2))


def test_conformity_examples():
    p = np.random.default_rng(1).random((4, 4))
    assert conformity_loss(p, p, np.ones((4, 4), np.uint8))[0] == 0
    loss, _, _ = conformity_loss(np.array([[0.9]]), np.array([[0.4]]), np.array([[1]]))
    assert loss == pytest.approx(0.25)
    loss, gr, gs = conformity_loss(p, 1 - p, np.zeros((4, 4), np.uint8))
    assert loss == 0 and not gr.any() and not gs.any()


@pytest.mark.parametrize("reduction", ["sum", "mean", "gated"])
@pytest.mark.parametrize("detach", [False, True])
def test_conformity_gradient(reduction, detach):
    rng = np.random.default_rng(2)
    a, b = rng.uniform(0.1, 0.9, (2, 3, 3))
    gate = rng.integers(0, 2, (3, 3))
    _, ga, gb = conformity_loss(a, b, gate, detach, reduction)
    np.testing.assert_allclose(ga, central_diff(lambda x: conformity_loss(x, b, gate, reduction=reduction)[0], a), atol=1e-8)
    if detach:
        assert not gb.any()
    else:
        np.testing.assert_allclose(gb, central_diff(lambda x: conformity_loss(a, x, gate, reduction=reduction)[0], b), atol=1e-8)


def test_conformity_reductions_scale():
    a, b = np.full((2, 2), 0.9), np.full((2, 2), 0.4)
    gate = np.array([[1, 0], [0, 0]])
    s = conformity_loss(a, b, gate, reduction="sum")[0]
    assert conformity_loss(a, b, gate, reduction="mean")[0] == pytest.approx(s / 4)
    assert conformity_loss(a, b, gate, reduction="gated")[0] == pytest.approx(s)


def test_discriminator_examples():
    half = np.full((3, 3), 0.5)
    assert discriminator_loss(half, 0)[0] == pytest.approx(math.log(2))
    assert discriminator_loss(half, 1)[0] == pytest.approx(math.log(2))
    assert discriminator_loss(np.ones((2, 2)), 1)[0] == pytest.approx(0, abs=1e-6)
    assert discriminator_loss(np.full((2, 2), 0.25), 0)[0] == pytest.approx(-math.log(0.75), abs=1e-12)
    assert discriminator_loss(np.full((2, 2), 0.25), 0)[0] == pytest.approx(0.287682, abs=1e-6)
    with pytest.raises(UsageError):
        discriminator_loss(half, 2)


def test_adversarial_examples():
    assert adversarial_loss(np.ones((2, 2)))[0] == pytest.approx(0, abs=1e-6)
    assert adversarial_loss(np.full((2, 2), 0.25))[0] == pytest.approx(math.log(4))
    assert adversarial_loss(np.full((2, 2), 0.5))[0] == pytest.approx(math.log(2))


@pytest.mark.parametrize("label", [0, 1])
def test_discriminator_gradient(label):
    d = np.random.default_rng(3).uniform(0.05, 0.95, (3, 3))
    _, g = discriminator_loss(d, label)
    np.testing.assert_allclose(g, central_diff(lambda x: discriminator_loss(x, label)[0], d), rtol=1e-5)


def test_total_loss_examples():
    r = total_loss({"seg_src": 1.0, "conformity": 0.2, "adversarial": 0.5})
    assert r.composite == 1.0
    assert r.total == pytest.approx(1.025, abs=1e-12)
    assert total_loss(LossReport()).total == 0
    parts = {"seg_src": 0.3, "skel_src": 0.2, "seg_tgt": 0.4, "skel_tgt": 0.1, "conformity": 3.0, "adversarial": 2.0}
    r = total_loss(parts, LossWeights(0, 0))
    assert r.total == r.composite == pytest.approx(1.0)


def test_total_loss_rejects_non_finite():
    with pytest.raises(NumericalError):
        total_loss({"seg_src": float("nan")})
    with pytest.raises(UsageError):
        LossWeights(beta=-1)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 10), min_size=6, max_size=6), st.floats(0, 1), st.floats(0, 1))
def test_total_loss_linear_in_weights(vals, beta, lam):
    keys = ["seg_src", "skel_src", "seg_tgt", "skel_tgt", "conformity", "adversarial"]
    parts = dict(zip(keys, vals))
    r = total_loss(parts, LossWeights(beta, lam))
    assert r.total == pytest.approx(sum(vals[:4]) + beta * vals[4] + lam * vals[5])
    assert r.total >= r.composite


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bce_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    p = rng.random((4, 5))
    y = rng.integers(0, 2, (4, 5))
    m = rng.integers(0, 2, (4, 5))
    perm = rng.permutation(20)
    shuffle = lambda a: a.ravel()[perm].reshape(4, 5)  # noqa: E731
    loss, grad = masked_bce(p, y, m)
    loss_p, grad_p = masked_bce(shuffle(p), shuffle(y), shuffle(m))
    assert loss_p == pytest.approx(loss, rel=1e-12, abs=1e-15)
    np.testing.assert_array_equal(grad_p, shuffle(grad))
    assert np.all(grad[m == 0] == 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_conformity_nonnegative_and_zero_iff_agree(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((5, 5))
    gate = rng.integers(0, 2, (5, 5))
    b = np.where(gate == 1, a, rng.random((5, 5)))
    assert conformity_loss(a, b, gate)[0] == 0
    c = rng.random((5, 5))
    loss = conformity_loss(a, c, gate)[0]
    assert loss >= 0
    assert (loss == 0) == bool(np.all(a[gate == 1] == c[gate == 1]))
