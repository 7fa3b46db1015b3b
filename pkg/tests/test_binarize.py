import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from bidense.binarize import (VARIANTS, BinarizerKind, Dab, DabParams, Elastic, LearnedThreshold,
                              PlainSign, binarize_activations, binarize_weights, binary_entropy,
                              channel_entropy, optimal_alpha, scale_dab, threshold_dab)
from bidense.tensor import pack_signs, unpack_signs

from oracles import grid_l2_minimiser

finite = st.floats(-50, 50, allow_nan=False)


def test_dab_params_start_at_identity():
    p = DabParams()
    assert (p.k, p.b, p.a) == (0.0, 0.0, 0.0)
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 4))
    bits, cache = binarize_activations(x, Dab())
    assert np.all(cache.beta == 0) and np.all(cache.alpha == 1)


def test_dab_params_reject_non_finite():
    with pytest.raises(ValueError):
        DabParams(k=np.nan)


@pytest.mark.parametrize("x,k,b,expected", [
    (np.random.default_rng(3).normal(size=10), 0.0, 0.5, 0.5),
    (np.full(7, 3.0), 1.0, 0.0, 3.0),
    (np.array([1.0, 3.0]), 0.5, -0.1, 0.9),
])
def test_threshold_dab(x, k, b, expected):
    assert threshold_dab(x, k, b) == pytest.approx(expected, abs=1e-15)


def test_scale_dab_examples(rng):
    assert scale_dab(rng.normal(size=9), 0.0) == 1.0
    assert scale_dab(np.array([1.0, -1.0]), 1.0) == 1.0
    assert scale_dab(np.array([2.0, -2.0]), 1.0) == pytest.approx(math.e, rel=1e-15)


@pytest.mark.parametrize("fn", [lambda x: threshold_dab(x, 1, 0), lambda x: scale_dab(x, 1),
                                optimal_alpha])
def test_statistics_of_empty_tensor_rejected(fn):
    with pytest.raises(ValueError):
        fn(np.array([]))


@given(hnp.arrays(np.float64, st.integers(1, 40), elements=finite), st.floats(-5, 5))
def test_dab_scale_strictly_positive(x, a):
    assert scale_dab(x, a) > 0


def test_optimal_alpha_examples():
    assert optimal_alpha([1.0, -3.0, 2.0]) == 2.0
    assert optimal_alpha(np.zeros(4)) == 0.0


def test_optimal_alpha_matches_grid_search():
    x = np.array([1.0, -3.0, 2.0])
    grid = np.round(np.arange(1, 41) * 0.1, 10)
    best, errs = grid_l2_minimiser(x, grid)
    assert best == pytest.approx(2.0)
    assert min(errs) == pytest.approx(2.0)


def test_dab_with_zero_params_equals_plain_sign(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    a, ca = binarize_activations(x, Dab())
    b, cb = binarize_activations(x, PlainSign())
    np.testing.assert_array_equal(a.words, b.words)
    np.testing.assert_array_equal(a.scale, b.scale)


def test_learned_threshold_shifts_signs():
    x = np.array([0.1, 0.3]).reshape(1, 1, 1, 2)
    bits, _ = binarize_activations(x, LearnedThreshold(0.2))
    assert bits.bits().ravel().tolist() == [False, True]


def test_learned_threshold_per_channel():
    x = np.array([0.5, 0.5]).reshape(1, 2, 1, 1)
    bits, _ = binarize_activations(x, LearnedThreshold(np.array([0.0, 1.0])))
    assert bits.bits().ravel().tolist() == [True, False]


def test_elastic_uses_learned_scale():
    x = np.array([0.5, -0.5]).reshape(1, 1, 1, 2)
    bits, _ = binarize_activations(x, Elastic(alpha=0.7, beta=0.0))
    np.testing.assert_array_equal(unpack_signs(bits).ravel(), [0.7, -0.7])
    with pytest.raises(ValueError):
        Elastic(alpha=0.0)


def test_dab_is_shift_invariant_with_unit_k(rng):
    x = rng.normal(size=(2, 4, 5, 5))
    kind = Dab(k=1.0, b=0.0, a=0.0)
    a, ca = binarize_activations(x, kind)
    b, cb = binarize_activations(x + 100.0, kind)
    np.testing.assert_array_equal(a.words, b.words)
    np.testing.assert_array_equal(a.scale, b.scale)


def test_dab_shift_invariance_exact_on_dyadic_values():
    # with exactly representable sums the shifted input is literally identical
    x = np.arange(-8, 8, dtype=np.float64).reshape(1, 1, 4, 4) / 4
    kind = Dab(k=1.0, b=0.25, a=0.7)
    a, ca = binarize_activations(x, kind)
    b, cb = binarize_activations(x + 64.0, kind)
    np.testing.assert_array_equal(ca.shifted, cb.shifted)
    np.testing.assert_array_equal(a.scale, b.scale)


@given(hnp.arrays(np.float64, (2, 2, 4, 4), elements=st.floats(-4, 4)),
       st.integers(-8, 8), st.floats(-2, 2), st.floats(-2, 2))
def test_dab_bits_invariant_under_dyadic_shift(x, shift, b, a):
    x = np.round(x * 16) / 16  # dyadic values over 32 elements keep the mean exact
    kind = Dab(k=1.0, b=round(b * 16) / 16, a=a)
    p, cp = binarize_activations(x, kind)
    q, cq = binarize_activations(x + shift, kind)
    np.testing.assert_array_equal(p.words, q.words)
    np.testing.assert_array_equal(p.scale, q.scale)


def test_dab_statistics_per_sample(rng):
    x = rng.normal(size=(3, 2, 4, 4)) + np.array([0, 5, -5])[:, None, None, None]
    kind = Dab(k=1.0, b=0.0, a=0.5)
    bits, cache = binarize_activations(x, kind)
    for i in range(3):
        beta = threshold_dab(x[i], 1.0, 0.0)
        assert cache.beta[i, 0] == pytest.approx(beta, abs=1e-12)
        assert cache.alpha[i] == pytest.approx(scale_dab(x[i] - beta, 0.5), rel=1e-12)


def test_per_channel_flag_only_changes_threshold(rng):
    x = rng.normal(size=(2, 3, 4, 4)) + np.array([1.0, -2.0, 3.0])[None, :, None, None]
    bits, cache = binarize_activations(x, Dab(k=1.0), per_channel=True)
    per_plane = x.mean(axis=(2, 3))
    np.testing.assert_allclose(cache.beta, per_plane, atol=1e-12)
    assert cache.alpha.shape == (2,)


@pytest.mark.parametrize("name", sorted(VARIANTS))
def test_every_variant_binarizes(name, rng):
    x = rng.normal(size=(2, 3, 4, 4)) + 0.3
    kind = BinarizerKind(name, DabParams(0.5, 0.1, 0.3), beta=0.2, alpha=0.9)
    bits, cache = binarize_activations(x, kind)
    assert bits.shape == x.shape
    assert np.all(cache.alpha > 0) and np.all(cache.mad >= 0)


def test_raw_mad_variant_uses_mad(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    bits, cache = binarize_activations(x, BinarizerKind("dab_raw_mad_scale"))
    np.testing.assert_allclose(bits.scale, np.abs(x).mean(axis=(1, 2, 3)), rtol=1e-14)


def test_constant_input_raw_mad_is_floored():
    bits, cache = binarize_activations(np.ones((1, 1, 2, 2)), BinarizerKind("dab_raw_mad_scale", Dab(k=1.0).dab))
    assert bits.scale[0] > 0


def test_unknown_variant_rejected():
    with pytest.raises(ValueError, match="unknown binarizer"):
        BinarizerKind("nope")


def test_binarize_weights_example():
    w = np.array([0.5, -1.5, 1.0]).reshape(1, 3, 1, 1)
    bits, scales = binarize_weights(w)
    assert bits.bits().ravel().tolist() == [True, False, True]
    assert scales.tolist() == [1.0]


def test_constant_filter_gets_zero_scale():
    bits, scales = binarize_weights(np.full((2, 2, 3, 3), 0.7))
    assert bits.bits().all()
    assert scales.tolist() == [0.0, 0.0]


def test_weight_scale_matches_grid_oracle(rng):
    w = rng.normal(size=(3, 4, 3, 3))
    bits, scales = binarize_weights(w)
    for c in range(3):
        centred = (w[c] - w[c].mean()).ravel()
        grid = np.linspace(0.001, 3 * scales[c], 3000)
        best, _ = grid_l2_minimiser(centred, grid)
        assert abs(best - scales[c]) <= grid[1] - grid[0]


def test_rebinarizing_is_idempotent(rng):
    w = rng.normal(size=(4, 3, 3, 3))
    a, sa = binarize_weights(w)
    b, sb = binarize_weights(w)
    np.testing.assert_array_equal(a.words, b.words)
    np.testing.assert_array_equal(sa, sb)


@pytest.mark.parametrize("p,expected", [(0.5, math.log(2)), (0.0, 0.0), (1.0, 0.0),
                                         (0.25, 0.5623351446188083)])
def test_binary_entropy_values(p, expected):
    assert binary_entropy(p) == pytest.approx(expected, abs=1e-15)


def test_channel_entropy_all_ones():
    ent, mean = channel_entropy(pack_signs(np.ones((2, 3, 2, 2))))
    assert mean == 0.0 and ent.tolist() == [0.0] * 3


def test_channel_entropy_counts_over_batch_and_space():
    x = np.array([1.0, -1.0, 1.0, 1.0]).reshape(2, 1, 1, 2)
    ent, mean = channel_entropy(pack_signs(x))
    assert mean == pytest.approx(binary_entropy(0.75))


@given(st.floats(0, 1))
def test_entropy_bounds(p):
    h = float(binary_entropy(p))
    assert 0.0 <= h <= math.log(2) + 1e-15
    if abs(p - 0.5) > 1e-9:
        assert h < math.log(2)


@given(st.floats(-3, 3), st.floats(0.0, 3.0))
def test_dab_scale_linearisation_bound(a, m):
    z = a * (m - 1)
    if abs(z) <= 0.1:
        assert abs(math.exp(z) - (1 + z)) <= 10 * z * z + 1e-15


def test_dab_entropy_beats_plain_sign_and_mis_fit_threshold():
    rng = np.random.default_rng(99)
    learned = LearnedThreshold(beta=-1.5)  # fitted to a different shift
    dab, plain = Dab(k=1.0, b=0.0), PlainSign()
    wins = 0
    for _ in range(100):
        shift = rng.choice([-1, 1]) * rng.uniform(0.5, 3.0)
        x = rng.normal(size=(4, 8, 8, 8)) + shift
        e_dab = channel_entropy(binarize_activations(x, dab)[0])[1]
        e_plain = channel_entropy(binarize_activations(x, plain)[0])[1]
        e_learned = channel_entropy(binarize_activations(x, learned)[0])[1]
        assert e_dab >= e_plain
        wins += e_dab >= e_learned
    assert wins == 100
