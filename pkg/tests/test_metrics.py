# tests/test_metrics.py
import os
import sys

import numpy as np
import pytest
from scipy.linalg import sqrtm

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from services.errors import ClassifierOutputError, DimensionMismatchError, InputError, NotPSDError
from services.metrics import (
    FeatureStats, feature_extract, fid, inception_score, parse_feature_kind, sqrtm_psd,
)


def random_psd(rng, d):
    root = rng.normal(size=(d, d))
    return root @ root.T


def stats(mean, cov, count=100):
    return FeatureStats(np.asarray(mean, dtype=float), np.asarray(cov, dtype=float), count)


# ---------------- FID ----------------

def test_fid_identical_statistics():
    rng = np.random.default_rng(0)
    a = stats(rng.normal(size=5), random_psd(rng, 5))
    assert fid(a, a) == pytest.approx(0.0, abs=1e-9)


def test_fid_equal_covariances_is_mean_shift():
    a = stats([0.0, 0.0], np.eye(2))
    b = stats([3.0, 0.0], np.eye(2))
    assert fid(a, b) == pytest.approx(9.0, abs=1e-9)


def test_fid_commuting_diagonals():
    a = stats([1.0, 1.0], np.diag([1.0, 4.0]))
    b = stats([1.0, 1.0], np.diag([4.0, 1.0]))
    assert fid(a, b) == pytest.approx(2.0, abs=1e-12)


def test_fid_symmetric_and_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(200):
        d = int(rng.integers(1, 6))
        a = stats(rng.normal(size=d), random_psd(rng, d))
        b = stats(rng.normal(size=d), random_psd(rng, d))
        assert fid(a, b) >= 0.0
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-9, rel=1e-9)


def test_fid_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        fid(stats([0.0], [[1.0]]), stats([0.0, 0.0], np.eye(2)))


def test_sqrtm_round_trip():
    rng = np.random.default_rng(2)
    for d in (1, 4, 16, 32):
        cov = random_psd(rng, d)
        root = sqrtm_psd(cov)
        assert np.linalg.norm(root @ root - cov) <= 1e-9 * np.linalg.norm(cov)
        assert np.allclose(root, np.real(sqrtm(cov)), atol=1e-6)


def test_sqrtm_clamps_tiny_negative_eigenvalues():
    cov = np.diag([1.0, -1e-12])
    assert np.allclose(sqrtm_psd(cov), np.diag([1.0, 0.0]), atol=1e-15)
    with pytest.raises(NotPSDError):
        sqrtm_psd(np.diag([1.0, -1.0]))


# ---------------- Inception Score ----------------

def test_uniform_classifier_scores_one():
    samples = np.zeros((20, 1, 4))
    mean, std = inception_score(samples, lambda batch: np.full((len(batch), 4), 0.25), splits=5)
    assert mean == 1.0
    assert std == 0.0


def test_confident_balanced_classifier_scores_class_count():
    samples = np.arange(10, dtype=float).reshape(10, 1)

    def classifier(batch):
        labels = batch[:, 0].astype(int) % 2
        return np.eye(2)[labels]

    mean, _ = inception_score(samples, classifier, splits=1)
    assert mean == pytest.approx(2.0, abs=1e-12)


def test_three_class_hand_computation():
    probs = np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]])
    expected = np.exp(0.9 * np.log(2.7) + 2 * 0.05 * np.log(0.15))
    mean, _ = inception_score(np.zeros((3, 1)), lambda batch: probs, splits=1)
    assert mean == pytest.approx(expected, abs=1e-12)


def test_score_between_one_and_class_count():
    rng = np.random.default_rng(3)
    for _ in range(50):
        probs = rng.dirichlet(np.ones(5) * 0.3, size=40)
        mean, _ = inception_score(np.zeros((40, 1)), lambda batch: probs, splits=4)
        assert 1.0 - 1e-9 <= mean <= 5.0 + 1e-9


def test_invalid_classifier_output():
    samples = np.zeros((4, 1))
    with pytest.raises(ClassifierOutputError):
        inception_score(samples, lambda batch: np.full((4, 2), 0.6), splits=1)
    with pytest.raises(ClassifierOutputError):
        inception_score(samples, lambda batch: np.array([[1.5, -0.5]] * 4), splits=1)
    with pytest.raises(InputError):
        inception_score(samples, lambda batch: np.full((4, 2), 0.5), splits=5)


# ---------------- features ----------------

def test_merged_shards_match_single_pass():
    rng = np.random.default_rng(4)
    features = rng.normal(size=(50, 3))
    whole = FeatureStats.from_features(features)
    merged = FeatureStats.from_features(features[:20]).merge(FeatureStats.from_features(features[20:]))
    assert merged.count == 50
    assert np.allclose(merged.mean, whole.mean, atol=1e-12)
    assert np.allclose(merged.cov, whole.cov, atol=1e-12)


def test_repeated_sample_has_zero_covariance():
    samples = np.ones((5, 2, 4))
    result = feature_extract(samples)
    assert np.array_equal(result.cov, np.zeros((8, 8)))


def test_raw_swatch_features_have_256_dimensions():
    samples = np.random.default_rng(5).uniform(-1, 1, size=(4, 64, 4))
    samples[..., 0] = 0.0
    assert feature_extract(samples, "raw").dim == 256


def test_projection_is_seeded():
    samples = np.random.default_rng(6).normal(size=(10, 3, 4))
    first = feature_extract(samples, "proj:5:1")
    again = feature_extract(samples, "proj:5:1")
    other = feature_extract(samples, "proj:5:2")
    assert first.dim == 5
    assert first.extractor == "proj:5:1"
    assert np.array_equal(first.mean, again.mean) and np.array_equal(first.cov, again.cov)
    assert not np.allclose(first.mean, other.mean)


def test_feature_kind_parsing():
    assert parse_feature_kind("raw").label == "raw"
    assert parse_feature_kind("proj:8:3").dim == 8
    for text in ("proj:x:1", "proj:0:1", "pca"):
        with pytest.raises(InputError):
            parse_feature_kind(text)


def test_covariance_needs_two_samples():
    with pytest.raises(InputError):
        feature_extract(np.zeros((1, 2, 4)))
