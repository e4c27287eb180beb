import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semisupcon import losses
from semisupcon.exceptions import LabelOutOfRange, NoValidAnchor, NonPositiveTemperature, OddRowCount
from semisupcon.losses import ContrastiveBatch, ce_prototype_loss, cross_entropy_masked, self_loss, ssc_loss, supcon_loss
from semisupcon.numerics import SeededRng, row_normalize
from semisupcon.oracles import central_difference, max_relative_error, naive_prototype_ce, naive_ssc, naive_supcon
from semisupcon.verify import random_batch

LN_1P_EINV = math.log(1 + math.exp(-1))   # 0.313262
LN_2PE = math.log(2 + math.e)             # 1.551445

Z3 = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
Z4 = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]]


def test_reference_constants():
    assert LN_1P_EINV == pytest.approx(0.313262, abs=1e-6)
    assert LN_2PE == pytest.approx(1.551445, abs=1e-6)


def test_supcon_examples_against_oracle():
    assert supcon_loss([[1.0, 0.0], [1.0, 0.0]], [0, 0], 1.0).value == 0.0
    out = supcon_loss(Z3, [0, 0, 1], 1.0)
    assert naive_supcon(Z3, [0, 0, 1], 1.0) == pytest.approx(LN_1P_EINV, abs=1e-14)
    assert out.value == pytest.approx(LN_1P_EINV, abs=1e-12)
    assert out.per_anchor[2] == 0.0  # no positive: skipped
    assert naive_supcon(Z4, [0, 0, 1, 1], 1.0) == pytest.approx(LN_2PE, abs=1e-14)
    assert supcon_loss(Z4, [0, 0, 1, 1], 1.0).value == pytest.approx(LN_2PE, abs=1e-12)


def test_supcon_errors():
    with pytest.raises(NoValidAnchor):
        supcon_loss([[1.0, 0.0], [0.0, 1.0]], [0, 1], 1.0)
    with pytest.raises(NonPositiveTemperature):
        supcon_loss(Z4, [0, 0, 1, 1], 0.0)


def test_ssc_examples():
    z = row_normalize(SeededRng(1).normal(size=(9, 4)))
    y = [0, 1, 2, 0, 1, 2, 0, 0, 1]
    full = ssc_loss(ContrastiveBatch(z, y), 0.1)
    assert full.value == supcon_loss(z, y, 0.1).value
    out = ssc_loss(ContrastiveBatch(Z3, [0, 0, 1], [1.0, 1.0, 0.0]), 1.0)
    assert out.value == pytest.approx(naive_ssc(Z3, [0, 0, 1], [1, 1, 0], [True] * 3, 1.0), abs=1e-14)
    assert out.value == pytest.approx(LN_1P_EINV, abs=1e-12)
    lam = SeededRng(2).uniform(0.1, 2, size=9)
    a = ssc_loss(ContrastiveBatch(z, y, lam), 0.1).value
    b = ssc_loss(ContrastiveBatch(z, y, 2 * lam), 0.1).value
    assert abs(a - b) < 1e-12


def test_loss_output_normalisation_identity():
    batch = random_batch(SeededRng(4))
    out = ssc_loss(batch, 0.5)
    anchors = out.extra["anchors"]
    expected = np.sum(batch.lam[anchors] * out.per_anchor[anchors]) / batch.lam[anchors].sum()
    assert out.value == pytest.approx(expected, abs=1e-12)
    assert out.grad_z.shape == batch.z.shape


def test_masked_rows_still_negatives():
    z = row_normalize(SeededRng(5).normal(size=(5, 3)))
    y = [0, 0, 1, 1, 2]
    mask = [True, True, False, False, True]
    with_neg = ssc_loss(ContrastiveBatch(z, y, anchor_mask=mask), 0.5)
    without = ssc_loss(ContrastiveBatch(z[[0, 1, 4]], [0, 0, 2]), 0.5)
    assert with_neg.value != pytest.approx(without.value)
    ref = naive_ssc(z.tolist(), y, [1.0] * 5, mask, 0.5)
    assert with_neg.value == pytest.approx(ref, abs=1e-12)
    # masked-out rows receive gradient through the denominators
    assert np.abs(with_neg.grad_z[2]).max() > 0


def test_oracle_equivalence_random():
    rng = SeededRng(6)
    for c in range(60):
        t = (0.01, 0.1, 1.0)[c % 3]
        b = random_batch(rng)
        ref = naive_ssc(b.z.tolist(), b.y.tolist(), b.lam.tolist(), b.anchor_mask.tolist(), t)
        assert abs(ssc_loss(b, t).value - ref) < 1e-9


@pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
def test_ssc_gradient_finite_differences(t):
    rng = SeededRng(7)
    for _ in range(4):
        b = random_batch(rng, n_max=10, d_max=5, k_max=3)
        z = b.z.copy()
        num = central_difference(lambda: ssc_loss(ContrastiveBatch(z, b.y, b.lam, b.anchor_mask), t).value, [z])
        assert max_relative_error([ssc_loss(b, t).grad_z], num) < 1e-4


def test_ce_prototype_gradients():
    rng = SeededRng(8)
    zx = row_normalize(rng.normal(size=(5, 4)))
    protos = row_normalize(rng.normal(size=(3, 4)))
    y = np.array([0, 2, 1, 1, 0])
    out = ce_prototype_loss(zx, y, protos)
    num = central_difference(lambda: ce_prototype_loss(zx, y, protos).value, [zx, protos])
    assert max_relative_error([out.grad_z, out.extra["grad_prototypes"]], num) < 1e-4


def test_rotation_invariance():
    rng = SeededRng(9)
    b = random_batch(rng, d_max=6)
    q, _ = np.linalg.qr(rng.normal(size=(b.z.shape[1],) * 2))
    rotated = ContrastiveBatch(b.z @ q, b.y, b.lam, b.anchor_mask)
    assert abs(ssc_loss(b, 0.1).value - ssc_loss(rotated, 0.1).value) < 1e-9


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_permutation_equivariance(seed):
    rng = SeededRng(seed)
    b = random_batch(rng)
    perm = rng.permutation(len(b))
    out = ssc_loss(b, 0.2)
    pb = ContrastiveBatch(b.z[perm], b.y[perm], b.lam[perm], b.anchor_mask[perm])
    pout = ssc_loss(pb, 0.2)
    assert abs(out.value - pout.value) < 1e-12
    np.testing.assert_allclose(pout.grad_z, out.grad_z[perm], atol=1e-10)


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
@settings(max_examples=40, deadline=None)
def test_lambda_scale_invariance(seed, c):
    b = random_batch(SeededRng(seed))
    scaled = ContrastiveBatch(b.z, b.y, c * b.lam, b.anchor_mask)
    assert abs(ssc_loss(b, 0.3).value - ssc_loss(scaled, 0.3).value) < 1e-12


def test_temperature_range_finite():
    rng = SeededRng(10)
    z = row_normalize(rng.normal(size=(12, 6)))
    y = rng.integers(0, 3, 12)
    for t in (0.01, 0.1, 1.0):
        out = supcon_loss(z, y, t)
        assert np.isfinite(out.value) and np.isfinite(out.grad_z).all()
        assert np.isfinite(out.per_anchor).all()


def test_self_loss_examples():
    assert self_loss([[1.0, 0.0], [1.0, 0.0]], 1, 0.1).value == 0.0
    z = row_normalize(SeededRng(11).normal(size=(8, 5)))
    assert self_loss(z, 4, 0.1).value == supcon_loss(z, [0, 1, 2, 3, 0, 1, 2, 3], 0.1).value
    # sibling views of Z4 are identical (rows i and i + mu_b), which gives
    # ln(2+e) - 1; ln(2+e) needs orthogonal siblings
    assert naive_supcon(Z4, [0, 1, 0, 1], 1.0) == pytest.approx(LN_2PE - 1, abs=1e-14)
    assert self_loss(Z4, 2, 1.0).value == pytest.approx(LN_2PE - 1, abs=1e-12)
    flipped = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
    assert self_loss(flipped, 2, 1.0).value == pytest.approx(LN_2PE, abs=1e-12)
    with pytest.raises(OddRowCount):
        self_loss(Z3, 2, 1.0)


def test_ce_prototype_examples():
    out = ce_prototype_loss([[1.0, 0.0]], [0], [[1.0, 0.0], [0.0, 1.0]])
    assert out.value == pytest.approx(LN_1P_EINV, abs=1e-12)
    z = row_normalize(SeededRng(12).normal(size=(6, 3)))
    same = np.tile(row_normalize([[1.0, 2.0, 3.0]]), (4, 1))
    assert ce_prototype_loss(z, [0, 1, 2, 3, 0, 1], same).value == pytest.approx(math.log(4), abs=1e-12)
    with pytest.raises(LabelOutOfRange):
        ce_prototype_loss(z, [0, 1, 2, 3, 0, 4], same)


def test_ce_prototype_matches_anchored_ssc_and_oracle():
    rng = SeededRng(13)
    for _ in range(30):
        b, d, k = int(rng.integers(1, 10)), int(rng.integers(2, 7)), int(rng.integers(2, 6))
        z = row_normalize(rng.normal(size=(b, d)))
        protos = row_normalize(rng.normal(size=(k, d)))
        y = rng.integers(0, k, b)
        ce = ce_prototype_loss(z, y, protos).value
        anchored = np.mean([ssc_loss(losses.anchored_prototype_batch(zi, yi, protos), 1.0).value for zi, yi in zip(z, y)])
        assert abs(ce - anchored) < 1e-9
        assert abs(ce - naive_prototype_ce(z, y, protos)) < 1e-12


def test_cross_entropy_masked_examples():
    logits = np.array([[1.0, 0.0], [0.3, -2.0]])
    assert cross_entropy_masked(logits, [0, 1], [False, False]) == 0.0
    assert cross_entropy_masked([[1.0, 0.0]], [0], [True]) == pytest.approx(LN_1P_EINV, abs=1e-12)
    assert cross_entropy_masked(np.zeros((3, 4)), [0, 1, 3], [True] * 3) == pytest.approx(math.log(4), abs=1e-12)
    # 1/n over all rows, not over masked rows only
    half = cross_entropy_masked(np.array([[1.0, 0.0], [1.0, 0.0]]), [0, 0], [True, False])
    assert half == pytest.approx(LN_1P_EINV / 2, abs=1e-12)
    with pytest.raises(LabelOutOfRange):
        cross_entropy_masked(logits, [0, 2], [True, True])


def test_cross_entropy_masked_gradient():
    rng = SeededRng(14)
    logits = rng.normal(size=(6, 4))
    t = rng.integers(0, 4, 6)
    m = rng.random(6) < 0.5
    _, g = losses.cross_entropy_masked_grad(logits, t, m)
    num = central_difference(lambda: cross_entropy_masked(logits, t, m), [logits])
    assert max_relative_error([g], num) < 1e-6
