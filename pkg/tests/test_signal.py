import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from popsignal.core import ValidationError
from popsignal.signal import (NO_LEARNING, POP, POS_NEG, PopSeries, ZeroNormFeature, cosine,
                              extract, fill_gaps, form_signal, group_by_step, mean_cosine)


@pytest.mark.parametrize("a, b, expected", [
    ([2, 3], [2, 3], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 0], [1, 1], 1 / math.sqrt(2)),
])
def test_cosine_examples(a, b, expected):
    assert cosine(a, b) == pytest.approx(expected, abs=1e-12)


def test_zero_norm_is_an_error():
    with pytest.raises(ZeroNormFeature):
        cosine([0, 0], [1, 0])
    with pytest.raises(ZeroNormFeature):
        mean_cosine(np.array([[1.0, 0], [0, 0]]), np.array([1.0, 0]))


def test_self_similarity_gives_ones():
    z = np.array([0.3, 0.1, 2.0])
    pop = form_signal(z, {k: z[None, :] for k in range(1, 6)}, 5, 100)
    assert pop.main.to_numpy().tolist() == pytest.approx([1.0] * 5, abs=1e-12)
    assert pop.main.start == 95 and len(pop.main) == 5


def test_hand_computed_step():
    pop = form_signal(np.array([1.0, 0.0]), {1: np.array([[1.0, 0.0], [0.0, 1.0]])}, 1, 10)
    assert pop.main.values[0] == pytest.approx(0.5, abs=1e-9)


def test_empty_step_interpolated():
    probe = np.array([1.0, 0.0])
    at = lambda c: np.array([[c, math.sqrt(1 - c * c)]])  # noqa: E731  cosine c with the probe
    pop = form_signal(probe, {3: at(0.2), 1: at(0.4)}, 3, 50)
    assert pop.main.to_numpy() == pytest.approx([0.2, 0.3, 0.4], abs=1e-9)
    assert pop.coverage == ((1,), (0,), (1,))


def test_ordering_oldest_first():
    probe = np.array([1.0, 0.0])
    at = lambda c: np.array([[c, math.sqrt(1 - c * c)]])  # noqa: E731
    pop = form_signal(probe, {1: at(0.9), 2: at(0.5), 3: at(0.1)}, 3, 20)
    # step k is week 20 - k, so the oldest week comes from k = 3
    assert list(pop.main.index) == [17, 18, 19]
    assert pop.main.to_numpy() == pytest.approx([0.1, 0.5, 0.9])


def test_fill_gaps_edges():
    assert fill_gaps([None, 0.2, None, None, 0.8, None]).tolist() == pytest.approx(
        [0.2, 0.2, 0.4, 0.6, 0.8, 0.8])
    with pytest.raises(ValidationError):
        fill_gaps([None, None])


def test_all_steps_empty():
    with pytest.raises(ValidationError):
        form_signal(np.ones(2), {}, 4, 10)


def test_pos_neg_channels_and_csv():
    probe = np.array([1.0, 0.0])
    pos = {1: np.array([[1.0, 0.0]]), 2: np.array([[1.0, 1.0]])}
    neg = {1: np.array([[0.0, 1.0]]), 2: np.array([[0.0, 1.0], [1.0, 0.0]])}
    pop = form_signal(probe, pos, 2, 30, "p1", POS_NEG, negative_features=neg)
    assert pop.matrix().shape == (2, 2)
    assert pop.matrix()[1].tolist() == pytest.approx([0.5, 0.0])
    text = pop.to_csv()
    assert "week,value,value_neg" in text and "# channels=positive,negative" in text
    back = PopSeries.from_csv(text)
    assert back.variant == POS_NEG and back.probe_id == "p1"
    assert back.coverage == ((1, 2), (1, 1))
    np.testing.assert_allclose(back.matrix(), pop.matrix(), atol=1e-9)
    with pytest.raises(ValidationError):
        form_signal(probe, pos, 2, 30, variant=POS_NEG)
    with pytest.raises(ValidationError):
        form_signal(probe, pos, 2, 30, variant="sideways")


def _random_steps(rng, k_past, dim, empty_frac=0.3):
    out = {}
    for k in range(1, k_past + 1):
        if rng.random() > empty_frac or k == 1:
            out[k] = rng.standard_normal((int(rng.integers(1, 6)), dim))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 60), st.floats(1e-3, 1e3))
def test_scale_invariance_and_length(seed, k_past, c):
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(5)
    steps = _random_steps(rng, k_past, 5)
    a = form_signal(probe, steps, k_past, 500)
    b = form_signal(c * probe, {k: c * v for k, v in steps.items()}, k_past, 500)
    assert len(a.main) == k_past
    np.testing.assert_allclose(a.main.to_numpy(), b.main.to_numpy(), atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(4)
    steps = _random_steps(rng, 8, 4)
    shuffled = {k: v[rng.permutation(len(v))] for k, v in steps.items()}
    a = form_signal(probe, steps, 8, 100).main.to_numpy()
    b = form_signal(probe, shuffled, 8, 100).main.to_numpy()
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_group_by_step_and_extract():
    steps = np.array([2, 1, 2, 3])
    feats = np.arange(8.0).reshape(4, 2)
    g = group_by_step(steps, feats, np.array([True, True, False, True]))
    assert sorted(g) == [1, 2, 3]
    assert g[2].tolist() == [[0.0, 1.0]]
    assert np.array_equal(extract(None, feats), feats)
    assert np.array_equal(extract(lambda X: 2 * X, feats), 2 * feats)


def test_no_learning_variant_label():
    pop = form_signal(np.ones(2), {1: np.ones((1, 2))}, 1, 5, variant=NO_LEARNING)
    assert pop.variant == NO_LEARNING and POP != NO_LEARNING
