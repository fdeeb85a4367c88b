"""
Metrics Module - Frechet distance and Inception Score over pluggable features.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.special import rel_entr

from services.errors import (
    ClassifierOutputError, DimensionMismatchError, InputError, NotPSDError,
)

logger = logging.getLogger(__name__)

PSD_TOL = 1e-9
FID_FLOOR = -1e-7
PROB_TOL = 1e-9
DEFAULT_SPLITS = 10


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int
    extractor: str = "raw"

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def from_features(cls, features, extractor: str = "raw") -> "FeatureStats":
        """Mean and unbiased covariance of an (N, d) feature matrix."""
        features = np.asarray(features, dtype=float)
        if features.ndim != 2:
            raise DimensionMismatchError(f"Features must be a 2-D array, got shape {features.shape}.")
        if features.shape[0] < 2:
            raise InputError("At least two samples are needed for a covariance.")
        cov = np.atleast_2d(np.cov(features, rowvar=False, ddof=1))
        return cls(features.mean(axis=0), 0.5 * (cov + cov.T), features.shape[0], extractor)

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Pooled statistics of two disjoint shards."""
        if self.dim != other.dim:
            raise DimensionMismatchError(f"Cannot merge statistics of dimension {self.dim} and {other.dim}.")
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        scatter = (self.cov * (self.count - 1) + other.cov * (other.count - 1)
                   + np.outer(delta, delta) * self.count * other.count / n)
        return FeatureStats(mean, scatter / (n - 1), n, self.extractor)

    def to_dict(self) -> Dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(), "count": self.count,
                "extractor": self.extractor}


def sqrtm_psd(matrix) -> np.ndarray:
    """
    Symmetric square root via eigendecomposition.

    Raises:
        NotPSDError: an eigenvalue is below -PSD_TOL (relative to the largest magnitude).
    """
    matrix = np.asarray(matrix, dtype=float)
    sym = 0.5 * (matrix + matrix.T)
    values, vectors = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(values).max(initial=0.0)))
    if values.size and values.min() < -PSD_TOL * scale:
        raise NotPSDError(f"Matrix has eigenvalue {values.min():.3e} below zero.")
    root = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * root) @ vectors.T


def fid(stats_a: FeatureStats, stats_b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0."""
    if stats_a.dim != stats_b.dim:
        raise DimensionMismatchError(f"Feature dimensions differ: {stats_a.dim} vs {stats_b.dim}.")
    root_a = sqrtm_psd(stats_a.cov)
    cross = sqrtm_psd(root_a @ stats_b.cov @ root_a)
    diff = stats_a.mean - stats_b.mean
    value = float(diff @ diff + np.trace(stats_a.cov) + np.trace(stats_b.cov) - 2.0 * np.trace(cross))
    if value < FID_FLOOR:
        logger.warning("FID evaluated to %.3e before clamping", value)
    return max(value, 0.0)


def check_probabilities(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise ClassifierOutputError(f"Classifier must return an (N, K) array, got shape {probs.shape}.")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise ClassifierOutputError("Classifier returned negative or non-finite probabilities.")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > PROB_TOL):
        raise ClassifierOutputError("Classifier rows do not sum to 1.")
    return probs


def inception_score(samples, classifier: Callable[[np.ndarray], np.ndarray],
                    splits: int = DEFAULT_SPLITS) -> Tuple[float, float]:
    """
    exp(E_x KL(p(y|x) || p(y))) per split; mean and population std over splits.

    Args:
        samples: batch passed to the classifier as one array
        classifier: maps the batch to an (N, K) matrix of class posteriors
        splits: number of equal-size groups (at most N)

    Returns:
        tuple: (mean: float, std: float)
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] == 0:
        raise InputError("Inception score needs at least one sample.")
    if splits < 1 or splits > samples.shape[0]:
        raise InputError(f"splits must be between 1 and {samples.shape[0]}, got {splits}.")
    probs = check_probabilities(classifier(samples))
    if probs.shape[0] != samples.shape[0]:
        raise ClassifierOutputError("Classifier returned a different number of rows than samples.")
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0)
        kl = rel_entr(part, marginal[None, :]).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


@dataclass(frozen=True)
class FeatureKind:
    name: str
    dim: Optional[int] = None
    seed: Optional[int] = None

    @property
    def label(self) -> str:
        return "raw" if self.name == "raw" else f"proj:{self.dim}:{self.seed}"


def parse_feature_kind(text: str) -> FeatureKind:
    """'raw' or 'proj:d:seed'."""
    if text == "raw":
        return FeatureKind("raw")
    parts = text.split(":")
    if len(parts) == 3 and parts[0] == "proj":
        try:
            dim, seed = int(parts[1]), int(parts[2])
        except ValueError:
            raise InputError(f"Malformed feature kind {text!r}.") from None
        if dim < 1:
            raise InputError("Projection dimension must be positive.")
        return FeatureKind("proj", dim, seed)
    raise InputError(f"Unknown feature kind {text!r}; use raw or proj:d:seed.")


def feature_extract(samples, kind="raw") -> FeatureStats:
    """
    Features of quaternion vector samples (N, n, 4).

    raw flattens the 4n real components; proj:d:seed applies a fixed Gaussian
    projection to d dimensions drawn from the seed.
    """
    if isinstance(kind, str):
        kind = parse_feature_kind(kind)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim < 2 or samples.shape[0] < 2:
        raise InputError("Feature statistics need at least two samples.")
    raw = samples.reshape(samples.shape[0], -1)
    if kind.name == "raw":
        features = raw
    else:
        rng = np.random.default_rng(kind.seed)
        projection = rng.normal(size=(raw.shape[1], kind.dim)) / np.sqrt(kind.dim)
        features = raw @ projection
    return FeatureStats.from_features(features, kind.label)


def metric_report(metric: str, value: float, std: Optional[float] = None,
                  config: Optional[Dict] = None) -> Dict:
    report = {"metric": metric, "value": value, "config": config or {}}
    if std is not None:
        report["std"] = std
    return report
