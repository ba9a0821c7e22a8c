"""Feature perturbations, interpolation, fitted distributions and sampling."""
import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import truncnorm

from schemas.errors import PerturbationError, UsageError
from schemas.run_schemas import PerturbationKind, PerturbationSpec
from services.analysis_service import (
    activate_single_unit,
    binarize,
    drop_least_then_binarize,
    dropout_random,
    fit_distribution,
    interpolate,
    keep_top_k,
    norm_ratio,
    perturb,
    sample_features,
    zero_top_k,
)


def sparse_vectors(rng, count=20, size=200):
    """Non-negative vectors with roughly half their entries zero."""
    for _ in range(count):
        yield np.maximum(rng.standard_normal(size), 0.0)


# ==================== Binarize ====================

def test_binarize_examples():
    c = 5 / np.sqrt(2)
    np.testing.assert_allclose(binarize([0.0, 3.0, 4.0]), [0.0, c, c])
    np.testing.assert_allclose(binarize([-1.0, 1.0]), [-1.0, 1.0])


def test_binarize_preserves_norm_and_is_idempotent(rng):
    for phi in sparse_vectors(rng):
        phi[:3] = -phi[:3]
        once = binarize(phi)
        assert norm_ratio(phi, once) == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(binarize(once), once, rtol=1e-6)
        np.testing.assert_array_equal(once == 0, phi == 0)


def test_binarize_all_zero():
    with pytest.raises(PerturbationError):
        binarize(np.zeros(4))


# ==================== Dropout ====================

def test_dropout_of_ones():
    out = dropout_random(np.ones(4), 0.5, np.random.default_rng(0))
    assert sorted(out.tolist()) == pytest.approx([0.0, 0.0, np.sqrt(2), np.sqrt(2)])


def test_dropout_zero_fraction_is_identity(rng):
    phi = rng.standard_normal(10)
    np.testing.assert_allclose(dropout_random(phi, 0.0, rng), phi)


def test_dropout_is_seeded_and_norm_preserving(rng):
    phi = rng.random(101) + 0.1
    first = dropout_random(phi, 0.5, np.random.default_rng(4))
    second = dropout_random(phi, 0.5, np.random.default_rng(4))
    np.testing.assert_array_equal(first, second)
    assert int((first == 0).sum()) == 50
    assert norm_ratio(phi, first) == pytest.approx(1.0, abs=1e-6)


def test_dropout_with_nothing_left():
    with pytest.raises(PerturbationError):
        dropout_random(np.array([0.0, 0.0, 1.0]), 1.0, np.random.default_rng(0))


def test_dropout_fraction_range():
    with pytest.raises(UsageError):
        dropout_random(np.ones(3), 1.5)


# ==================== Drop-least-then-binarize ====================

def test_drop_least_example():
    out = drop_least_then_binarize(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), 0.5)
    assert out[:3].tolist() == [0.0, 0.0, 0.0]
    assert out[3] == pytest.approx(out[4])
    assert np.linalg.norm(out) == pytest.approx(np.sqrt(30.0))


def test_drop_least_ties_zero_lowest_index_first():
    out = drop_least_then_binarize(np.full(4, 2.0), 0.5)
    assert out[:2].tolist() == [0.0, 0.0]
    assert out[2] > 0 and out[3] > 0


def test_drop_least_preserves_norm(rng):
    for phi in sparse_vectors(rng):
        assert norm_ratio(phi, drop_least_then_binarize(phi, 0.5)) == pytest.approx(1.0, abs=1e-6)


# ==================== Top-k ====================

def test_top_k_example():
    phi = np.array([5.0, 1.0, 3.0])
    np.testing.assert_array_equal(keep_top_k(phi, 1), [5.0, 0.0, 0.0])
    np.testing.assert_array_equal(zero_top_k(phi, 1), [0.0, 1.0, 3.0])
    np.testing.assert_array_equal(keep_top_k(phi, 3), phi)


def test_top_k_partition(rng):
    phi = rng.standard_normal((1, 10, 1, 1))
    for k in (1, 5, 10):
        np.testing.assert_array_equal(keep_top_k(phi, k) + zero_top_k(phi, k), phi)


def test_top_k_range():
    with pytest.raises(UsageError):
        keep_top_k(np.ones(3), 4)


# ==================== Perturbation specs ====================

def test_spec_defaults():
    assert PerturbationSpec(kind="dropout_random").fraction == 0.5
    assert PerturbationSpec(kind="zero_top_k").k == 5
    assert PerturbationSpec(kind="binarize").fraction is None


def test_spec_rejects_foreign_parameters():
    with pytest.raises(ValidationError):
        PerturbationSpec(kind="binarize", fraction=0.3)
    with pytest.raises(ValidationError):
        PerturbationSpec(kind="dropout_random", k=2)
    with pytest.raises(ValidationError):
        PerturbationSpec(kind="dropout_random", fraction=1.5)


def test_perturb_dispatch(rng):
    phi = rng.random(20) + 0.1
    np.testing.assert_array_equal(
        perturb(phi, PerturbationSpec(kind=PerturbationKind.KEEP_TOP_K, k=3)), keep_top_k(phi, 3)
    )
    np.testing.assert_array_equal(
        perturb(phi, PerturbationSpec(kind="dropout_random", seed=8)),
        dropout_random(phi, 0.5, np.random.default_rng(8)),
    )


# ==================== Interpolation ====================

def test_interpolation_endpoints_are_exact(rng):
    a, b = rng.standard_normal((1, 4, 2, 2)), rng.standard_normal((1, 4, 2, 2))
    frames = interpolate(a, b, 6)
    assert len(frames) == 6
    np.testing.assert_array_equal(frames[0], a)
    np.testing.assert_array_equal(frames[-1], b)


def test_interpolation_midpoint_and_collinearity(rng):
    v = rng.standard_normal(8)
    np.testing.assert_allclose(interpolate(v, -v, 3)[1], np.zeros(8), atol=1e-15)

    frames = interpolate(rng.standard_normal(8), rng.standard_normal(8), 5)
    # equal spacing: consecutive differences are constant
    steps = np.diff(np.stack(frames), axis=0)
    np.testing.assert_allclose(steps, np.broadcast_to(steps[0], steps.shape), atol=1e-12)


def test_interpolation_errors():
    with pytest.raises(UsageError):
        interpolate(np.ones(3), np.ones(3), 1)
    with pytest.raises(UsageError):
        interpolate(np.ones(3), np.ones(4), 3)


# ==================== Distributions ====================

def test_histogram_fit_properties():
    features = [np.array([2.0, 0.0 if i % 2 else 1.0 + i, 0.0]).reshape(1, 3, 1, 1) for i in range(10)]
    dist = fit_distribution(features, mode="histogram", bins=4)
    assert dist.feature_shape == (3, 1, 1)
    np.testing.assert_array_equal(dist.counts.sum(axis=1) + dist.zero_counts, [10, 10, 10])
    np.testing.assert_allclose(dist.zero_fraction, [0.0, 0.5, 1.0])
    # constant dimension occupies a single bin
    assert int((dist.counts[0] > 0).sum()) == 1


def test_fit_errors(rng):
    with pytest.raises(UsageError):
        fit_distribution([])
    with pytest.raises(UsageError):
        fit_distribution([np.ones(4)])
    with pytest.raises(UsageError):
        fit_distribution([np.ones(4), np.ones(4)], mode="kde")


def test_sampled_sparsity_matches_fit(rng):
    features = list(sparse_vectors(rng, count=50, size=30))
    dist = fit_distribution(features, bins=16)
    samples = sample_features(dist, alpha=1.0, rng=np.random.default_rng(1), count=10_000)
    assert samples.shape == (10_000, 30, 1, 1)
    observed = (samples.reshape(10_000, -1) == 0).mean(axis=0)
    assert np.max(np.abs(observed - dist.zero_fraction)) <= 0.02


def test_histogram_samples_stay_in_range(rng):
    stacked = np.stack(list(sparse_vectors(rng, count=40, size=25)))
    dist = fit_distribution(list(stacked), bins=8)
    samples = sample_features(dist, alpha=2.0, rng=np.random.default_rng(2), count=500).reshape(500, -1)
    for d in range(25):
        observed = stacked[:, d][stacked[:, d] != 0]
        drawn = samples[:, d][samples[:, d] != 0]
        if observed.size == 0:
            assert drawn.size == 0
            continue
        assert drawn.min() >= 2.0 * observed.min() - 1e-9
        assert drawn.max() <= 2.0 * observed.max() + 1e-9


def test_trunc_gaussian_samples_are_non_negative(rng):
    dist = fit_distribution(list(sparse_vectors(rng)), mode="trunc_gaussian")
    samples = sample_features(dist, rng=np.random.default_rng(3), count=200)
    assert samples.min() >= 0.0
    assert dist.std > 0


def test_trunc_gaussian_recovers_the_untruncated_parameters():
    values = truncnorm.rvs(-2.0, np.inf, loc=1.0, scale=0.5, size=(500, 100),
                           random_state=np.random.default_rng(0))
    dist = fit_distribution(list(values), mode="trunc_gaussian")
    # the sample moments would be about 1.028 and 0.471
    assert dist.mean == pytest.approx(1.0, abs=0.01)
    assert dist.std == pytest.approx(0.5, abs=0.01)
    assert dist.lower == 0.0


def test_sampling_is_seeded_and_alpha_scales(rng):
    dist = fit_distribution(list(sparse_vectors(rng)))
    first = sample_features(dist, rng=np.random.default_rng(6), count=3)
    second = sample_features(dist, rng=np.random.default_rng(6), count=3)
    np.testing.assert_array_equal(first, second)
    assert not sample_features(dist, alpha=0.0, rng=np.random.default_rng(6), count=3).any()


def test_activate_single_unit():
    out = activate_single_unit((4, 2, 2), unit=5, value=3.0)
    assert out.shape == (1, 4, 2, 2)
    assert out.reshape(-1)[5] == 3.0
    assert out.sum() == 3.0
    with pytest.raises(UsageError):
        activate_single_unit((4, 2, 2), unit=16)
