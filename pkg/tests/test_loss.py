import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from innmorph.errors import ShapeError
from innmorph.loss import (
    LossWeights,
    bce_tag_loss,
    bce_tag_loss_from_logits,
    composite_inflection_loss,
    composite_lemmatization_loss,
    cosine_loss,
    sigmoid,
)
from innmorph.numerics import finite_difference_grad, max_relative_error

PAPER_WEIGHTS = LossWeights(20, 10, 80, 1)


def test_cosine_special_angles():
    a = np.array([1.0, 2.0, -1.0])
    assert cosine_loss(a, a)[0] == pytest.approx(0.0, abs=1e-15)
    assert cosine_loss([1.0, 0.0], [0.0, 3.0])[0] == pytest.approx(1.0)
    assert cosine_loss(a, -a)[0] == pytest.approx(2.0)


def test_cosine_rejects_zero_and_mismatch():
    with pytest.raises(ValueError, match="zero"):
        cosine_loss([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError, match="zero"):
        cosine_loss([1.0, 0.0], [0.0, 0.0])
    with pytest.raises(ShapeError):
        cosine_loss([1.0, 0.0], [1.0, 0.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(1e-3, 1e3),
)
def test_cosine_scale_invariance(a, b, c):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    assert cosine_loss(c * a, b)[0] == pytest.approx(cosine_loss(a, b)[0], abs=1e-12)
    assert 0.0 <= cosine_loss(a, b)[0] <= 2.0


def test_cosine_gradient(rng):
    for _ in range(50):
        p, g = rng.standard_normal((2, 8))
        _, grad = cosine_loss(p, g)
        assert max_relative_error(grad, finite_difference_grad(lambda v: cosine_loss(v, g)[0], p)) < 1e-4


def test_cosine_batched_rows(rng):
    p, g = rng.standard_normal((2, 4, 5))
    loss, grad = cosine_loss(p, g)
    for i in range(4):
        li, gi = cosine_loss(p[i], g[i])
        assert loss[i] == pytest.approx(li)
        np.testing.assert_allclose(grad[i], gi)


def test_bce_examples():
    assert bce_tag_loss([1.0, 0.0], [1, 0])[0] == pytest.approx(0.0, abs=1e-6)
    assert bce_tag_loss([0.5], [1])[0] == pytest.approx(np.log(2), abs=1e-12)
    assert bce_tag_loss([0.5, 0.5], [1, 0])[0] == pytest.approx(np.log(2), abs=1e-12)


def test_bce_errors():
    with pytest.raises(ShapeError):
        bce_tag_loss([0.5, 0.5], [1])
    with pytest.raises(ValueError):
        bce_tag_loss([0.5], [0.3])


def test_bce_minimised_at_target_on_grid():
    grid = np.linspace(0.001, 0.999, 999)
    for t in (0, 1):
        losses = [bce_tag_loss([a], [t])[0] for a in grid]
        assert grid[int(np.argmin(losses))] == pytest.approx(float(t), abs=0.0011)


def test_bce_gradient_is_wrt_preactivation(rng):
    for _ in range(50):
        logits = rng.normal(0, 2, 6)
        gold = rng.integers(0, 2, 6).astype(float)
        _, grad = bce_tag_loss(sigmoid(logits), gold)
        num = finite_difference_grad(lambda lg: bce_tag_loss(sigmoid(lg), gold)[0], logits)
        assert max_relative_error(grad, num) < 1e-4


def test_bce_from_logits_matches_and_is_stable(rng):
    logits = rng.normal(0, 2, 6)
    gold = np.array([1, 0, 1, 1, 0, 0], dtype=float)
    assert bce_tag_loss_from_logits(logits, gold)[0] == pytest.approx(bce_tag_loss(sigmoid(logits), gold)[0])
    big = np.array([800.0, -800.0])
    loss, grad = bce_tag_loss_from_logits(big, np.array([0.0, 1.0]))
    assert np.isfinite(loss) and loss == pytest.approx(800.0)
    assert np.all(np.isfinite(grad))
    for _ in range(50):
        lg = rng.normal(0, 3, 6)
        _, g = bce_tag_loss_from_logits(lg, gold)
        num = finite_difference_grad(lambda v: bce_tag_loss_from_logits(v, gold)[0], lg)
        assert max_relative_error(g, num) < 1e-4


def test_sigmoid_zero_is_half():
    assert sigmoid(0.0) == 0.5
    assert np.all(sigmoid(np.array([-1000.0, 1000.0])) == [0.0, 1.0])


def test_inflection_composite():
    assert composite_inflection_loss(0, 0, 0, 0, PAPER_WEIGHTS) == 0
    assert composite_inflection_loss(1, 1, 1, 1, PAPER_WEIGHTS) == 111
    assert composite_inflection_loss(0.3, 0.7, 0.9, 0.4, LossWeights(1, 0, 0, 0)) == 0.3


def test_lemmatization_composite():
    assert composite_lemmatization_loss(0, 0, 0, PAPER_WEIGHTS) == 0
    assert composite_lemmatization_loss(0.5, 0.25, 0.1, PAPER_WEIGHTS) == pytest.approx(30.1, abs=1e-12)
    no_z = LossWeights(20, 10, 80, 0)
    assert composite_lemmatization_loss(0.5, 0.25, 123.0, no_z) == composite_lemmatization_loss(0.5, 0.25, 0.0, no_z)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=8, max_size=8))
def test_composite_is_linear(vals):
    a, b = np.array(vals[:4]), np.array(vals[4:])
    total = composite_inflection_loss(*(a + b), PAPER_WEIGHTS)
    split = composite_inflection_loss(*a, PAPER_WEIGHTS) + composite_inflection_loss(*b, PAPER_WEIGHTS)
    assert total == pytest.approx(split, rel=1e-12, abs=1e-12)


def test_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(-1, 0, 0, 0)
