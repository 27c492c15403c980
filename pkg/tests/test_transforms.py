import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edd_har.transforms import (
    ALL_KINDS,
    TransformKind as K,
    TransformParams,
    apply,
    augment_with_transforms,
    build_pretext_dataset,
)

windows = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).standard_normal((6, 40)))


def test_eight_kinds_with_stable_codes():
    assert len(ALL_KINDS) == 8
    assert [int(k) for k in ALL_KINDS] == list(range(8))
    assert K(4) is K.TIME_REVERSAL


@pytest.mark.parametrize("kind", [K.TIME_REVERSAL, K.NEGATION])
def test_involutions(kind, rng):
    x = rng.standard_normal((6, 50))
    np.testing.assert_array_equal(apply(kind, apply(kind, x, 0), 1), x)


def test_channel_shuffle_permutes_channels(rng):
    x = rng.standard_normal((6, 30))
    y = apply(K.CHANNEL_SHUFFLING, x, 3)
    np.testing.assert_array_equal(np.sort(y, axis=0), np.sort(x, axis=0))
    assert sorted(map(tuple, y)) == sorted(map(tuple, x))


def test_scaling_multiplies_every_value(rng):
    x = rng.standard_normal((6, 30))
    y = apply(K.SCALING, x, 9)
    s = y[0, 0] / x[0, 0]
    np.testing.assert_allclose(y, s * x, rtol=1e-14)
    assert 0.7 <= s <= 1.1 and abs(s - 1) > 1e-3


@settings(max_examples=25, deadline=None)
@given(windows, st.sampled_from(ALL_KINDS), st.integers(0, 1000))
def test_shape_preserved_and_deterministic(x, kind, seed):
    a = apply(kind, x, seed)
    assert a.shape == x.shape
    np.testing.assert_array_equal(a, apply(kind, x, seed))


@settings(max_examples=25, deadline=None)
@given(windows, st.integers(0, 1000))
def test_permutation_preserves_per_channel_values(x, seed):
    y = apply(K.WINDOW_PERMUTATION, x, seed)
    np.testing.assert_array_equal(np.sort(y, axis=1), np.sort(x, axis=1))


@settings(max_examples=25, deadline=None)
@given(windows, st.integers(0, 1000))
def test_rotation_preserves_block_norms(x, seed):
    y = apply(K.ROTATION, x, seed)
    for b in (slice(0, 3), slice(3, 6)):
        np.testing.assert_allclose(np.linalg.norm(y[b], axis=0), np.linalg.norm(x[b], axis=0), atol=1e-9)


def test_rotation_is_shared_by_both_blocks(rng):
    x = rng.standard_normal((6, 20))
    x[3:] = x[:3]
    y = apply(K.ROTATION, x, 4)
    np.testing.assert_allclose(y[3:], y[:3], atol=1e-14)


def test_noising_mean_absolute_deviation():
    x = np.zeros((6, 20000))
    y = apply(K.NOISING, x, 0, TransformParams(noise_sigma=0.05))
    expected = 0.05 * np.sqrt(2 / np.pi)
    assert abs(np.mean(np.abs(y - x)) / expected - 1) < 0.1


def test_time_warp_keeps_endpoints_and_monotone_ramp(rng):
    ramp = np.tile(np.linspace(0, 1, 60), (6, 1))
    y = apply(K.TIME_WARPING, ramp, 2)
    assert y[0, 0] == 0.0 and abs(y[0, -1] - 1.0) < 1e-12
    assert np.all(np.diff(y[0]) > 0)


@pytest.mark.parametrize("params", [
    TransformParams(noise_sigma=0), TransformParams(permutation_segments=1),
    TransformParams(scale_low=1.2, scale_high=1.1), TransformParams(warp_knots=1),
    TransformParams(warp_strength=1.5),
])
def test_invalid_parameters(params, rng):
    with pytest.raises(ValueError):
        apply(K.NOISING, rng.standard_normal((6, 20)), 0, params)


def test_rotation_needs_axis_triples(rng):
    with pytest.raises(ValueError, match="3-axis"):
        apply(K.ROTATION, rng.standard_normal((4, 20)), 0)


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        apply(K.NEGATION, np.full((6, 5), np.inf), 0)


def test_pretext_dataset_pairs_and_balance(rng):
    x = rng.standard_normal((7, 6, 24))
    pre = build_pretext_dataset(x, seed=5)
    assert pre.num_tasks == 8 and len(pre) == 7
    for k in range(8):
        xs, ys = pre.task(k)
        assert xs.shape == (14, 6, 24)
        assert ys.sum() == 7 and len(ys) == 14
        np.testing.assert_array_equal(xs[7:], x)
    np.testing.assert_array_equal(pre.transformed[int(K.NEGATION)], -x)


def test_pretext_zero_window_negation_still_positive():
    pre = build_pretext_dataset(np.zeros((1, 6, 10)), seed=0)
    xs, ys = pre.task(int(K.NEGATION))
    np.testing.assert_array_equal(xs[0], xs[1])
    assert ys.tolist() == [1.0, 0.0]


def test_pretext_dataset_reproducible(rng):
    x = rng.standard_normal((5, 6, 24))
    a, b = build_pretext_dataset(x, 11), build_pretext_dataset(x, 11)
    assert a.transformed.tobytes() == b.transformed.tobytes()


def test_augmented_set_is_originals_plus_every_transform(rng):
    x = rng.standard_normal((10, 6, 24))
    aug = augment_with_transforms(x, 0)
    assert aug.shape == (90, 6, 24)
    np.testing.assert_array_equal(aug[:10], x)
    np.testing.assert_array_equal(aug[10 * (1 + int(K.TIME_REVERSAL)):10 * (2 + int(K.TIME_REVERSAL))],
                                  x[:, :, ::-1])
