"""Triplet loss against hand-computed cosine geometry."""

import numpy as np
import pytest

from deepvox.loss import TripletLossConfig, cosine_triplet_loss
from deepvox.nd import Tensor


def unit_rows(rng, n, d=8):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def ref_loss(a, p, n, margin, hinge, reduction):
    def cos(u, v):
        num = np.sum(u * v, axis=-1)
        return num / (np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1))

    t = cos(a, n) - cos(a, p) + margin
    if hinge:
        t = np.maximum(t, 0.0)
    if t.ndim == 0:
        return float(t)
    return float(t.mean() if reduction == "mean" else t.sum())


def test_config_validation():
    TripletLossConfig()
    with pytest.raises(ValueError, match="margin"):
        TripletLossConfig(margin_alpha=2.5)
    with pytest.raises(ValueError, match="margin"):
        TripletLossConfig(margin_alpha=-0.1)
    with pytest.raises(ValueError, match="reduction"):
        TripletLossConfig(reduction="max")


def test_orthogonal_case_exact():
    # cos(a,p)=1, cos(a,n)=0: raw term = margin - 1... with margin 0.2 the
    # hinge clamps -0.8 to zero
    a = Tensor(np.array([1.0, 0.0]))
    p = Tensor(np.array([2.0, 0.0]))
    n = Tensor(np.array([0.0, 3.0]))
    assert cosine_triplet_loss(a, p, n).item() == 0.0
    raw = cosine_triplet_loss(a, p, n, TripletLossConfig(hinge=False))
    assert raw.item() == pytest.approx(-0.8, abs=1e-12)


def test_adversarial_case_exact():
    # positive orthogonal, negative parallel: term = 1 - 0 + 0.2
    a = Tensor(np.array([1.0, 0.0]))
    p = Tensor(np.array([0.0, 1.0]))
    n = Tensor(np.array([5.0, 0.0]))
    assert cosine_triplet_loss(a, p, n).item() == pytest.approx(1.2, abs=1e-12)


def test_margin_shift_exact():
    rng = np.random.default_rng(0)
    a, p, n = (Tensor(unit_rows(rng, 4)) for _ in range(3))
    lo = cosine_triplet_loss(a, p, n, TripletLossConfig(margin_alpha=0.0, hinge=False))
    hi = cosine_triplet_loss(a, p, n, TripletLossConfig(margin_alpha=0.5, hinge=False))
    assert hi.item() - lo.item() == pytest.approx(0.5, abs=1e-12)


def test_scale_invariance():
    rng = np.random.default_rng(1)
    a, p, n = (unit_rows(rng, 5) for _ in range(3))
    base = cosine_triplet_loss(Tensor(a), Tensor(p), Tensor(n)).item()
    scaled = cosine_triplet_loss(Tensor(3.0 * a), Tensor(0.25 * p), Tensor(7.0 * n)).item()
    assert scaled == pytest.approx(base, abs=1e-12)


def test_matches_reference_batch():
    rng = np.random.default_rng(2)
    a, p, n = (unit_rows(rng, 16) for _ in range(3))
    for hinge in (True, False):
        for reduction in ("mean", "sum"):
            cfg = TripletLossConfig(margin_alpha=0.2, hinge=hinge, reduction=reduction)
            got = cosine_triplet_loss(Tensor(a), Tensor(p), Tensor(n), cfg).item()
            want = ref_loss(a, p, n, 0.2, hinge, reduction)
            assert got == pytest.approx(want, abs=1e-12)


def test_sum_is_n_times_mean():
    rng = np.random.default_rng(3)
    a, p, n = (unit_rows(rng, 6) for _ in range(3))
    m = cosine_triplet_loss(Tensor(a), Tensor(p), Tensor(n),
                            TripletLossConfig(reduction="mean")).item()
    s = cosine_triplet_loss(Tensor(a), Tensor(p), Tensor(n),
                            TripletLossConfig(reduction="sum")).item()
    assert s == pytest.approx(6.0 * m, rel=1e-12)


def test_hinge_nonnegative_and_dominates_raw():
    rng = np.random.default_rng(4)
    for trial in range(10):
        a, p, n = (unit_rows(rng, 3) for _ in range(3))
        hinged = cosine_triplet_loss(Tensor(a), Tensor(p), Tensor(n)).item()
        raw = cosine_triplet_loss(Tensor(a), Tensor(p), Tensor(n),
                                  TripletLossConfig(hinge=False)).item()
        assert hinged >= 0.0
        assert hinged >= raw - 1e-12


def test_gradient_pushes_similarities_apart():
    rng = np.random.default_rng(5)
    a = Tensor(unit_rows(rng, 4), requires_grad=True)
    p = Tensor(unit_rows(rng, 4), requires_grad=True)
    n = Tensor(unit_rows(rng, 4), requires_grad=True)
    loss = cosine_triplet_loss(a, p, n, TripletLossConfig(margin_alpha=2.0))
    loss.backward()
    assert a.grad is not None and p.grad is not None and n.grad is not None
    # a step against the gradient must lower the loss
    lr = 1e-3
    a2 = Tensor(a.data - lr * a.grad)
    p2 = Tensor(p.data - lr * p.grad)
    n2 = Tensor(n.data - lr * n.grad)
    after = cosine_triplet_loss(a2, p2, n2, TripletLossConfig(margin_alpha=2.0))
    assert after.item() < loss.item()
