"""Score-to-label policies under a hard acceptance budget.

``top_k_label`` accepts exactly the k highest scores. ``fair_top_k_label``
instead samples k accepted users from the predicted-positive pool with
probability proportional to inverse local density (plus a small score
bonus), then drops unselected high scorers from the training set so the
random rejections do not poison the next fit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Cohort
from .errors import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

BANDWIDTH_FLOOR = 1e-6
DENSITY_FLOOR = np.finfo(float).tiny


@dataclass
class KdeConfig:
    """Gaussian product kernel; bandwidth is Scott's rule or a fixed value."""

    bandwidth: float | str = "scott"

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "scott":
                raise ConfigurationError(f"unknown bandwidth rule: {self.bandwidth!r}")
        elif self.bandwidth <= 0:
            raise ConfigurationError("fixed bandwidth must be positive")


@dataclass
class LabelDecision:
    """Binary labels plus the mask of rows kept for training."""

    labels: np.ndarray
    train_mask: np.ndarray
    policy: str

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_mask = np.asarray(self.train_mask, dtype=bool)
        if self.labels.shape != self.train_mask.shape:
            raise ContractError("labels and train_mask must align")


def top_k_label(scores, k: int) -> LabelDecision:
    """Accept the min(k, n) highest scores; ties go to the lower row index."""
    if k < 0:
        raise ConfigurationError("k must be nonnegative")
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    take = min(k, n)
    if take > 0:
        order = np.argsort(-scores, kind="stable")
        labels[order[:take]] = 1
    return LabelDecision(labels, np.ones(n, dtype=bool), "top_k")


def _bandwidths(points: np.ndarray, cfg: KdeConfig) -> np.ndarray:
    n, d = points.shape
    if isinstance(cfg.bandwidth, str):
        bw = points.std(axis=0) * n ** (-1.0 / (d + 4))
    else:
        bw = np.full(d, float(cfg.bandwidth))
    return np.maximum(bw, BANDWIDTH_FLOOR)


def _density_batch(points: np.ndarray, queries: np.ndarray, cfg: KdeConfig) -> np.ndarray:
    bw = _bandwidths(points, cfg)
    zp = points / bw
    zq = queries / bw
    # Pairwise squared distances in bandwidth-scaled coordinates.
    sq = (
        np.sum(zq**2, axis=1)[:, None]
        + np.sum(zp**2, axis=1)[None, :]
        - 2.0 * zq @ zp.T
    )
    norm = np.prod(bw * np.sqrt(2.0 * np.pi))
    dens = np.exp(-0.5 * np.maximum(sq, 0.0)).mean(axis=1) / norm
    return np.maximum(dens, DENSITY_FLOOR)


def kde_density(points, query, cfg: KdeConfig) -> float:
    """Gaussian KDE estimate at one query point; strictly positive."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ContractError("density estimation needs a nonempty 2-D point set")
    query = np.asarray(query, dtype=float)
    if query.shape != (points.shape[1],):
        raise ContractError("query must match the point dimension")
    return float(_density_batch(points, query[None, :], cfg)[0])


def fair_top_k_label(
    features,
    scores,
    k: int,
    kappa: float,
    kde_cfg: KdeConfig,
    rng: np.random.Generator,
) -> LabelDecision:
    """Diversity-weighted acceptance among predicted positives.

    Candidates are rows with score >= 0.5. Each gets weight
    ``1/density + kappa * score`` and min(k, #candidates) of them are drawn
    without replacement, each draw proportional to the remaining weights
    (implemented as an exponential race, which has the same per-draw
    marginals). Unselected rows with score > 0.5 are excluded from training.
    """
    if k < 0:
        raise ConfigurationError("k must be nonnegative")
    if kappa < 0:
        raise ConfigurationError("kappa must be nonnegative")
    features = np.asarray(features, dtype=float)
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if features.shape[0] != n:
        raise ContractError("features and scores must align")
    labels = np.zeros(n, dtype=np.int64)
    candidates = np.flatnonzero(scores >= 0.5)
    take = min(k, candidates.size)
    if take > 0:
        pool = features[candidates]
        density = _density_batch(pool, pool, kde_cfg)
        weights = 1.0 / density + kappa * scores[candidates]
        if not np.all(np.isfinite(weights)) or weights.sum() == 0.0:
            logger.warning("degenerate fair-top-k weights; falling back to uniform selection")
            weights = np.ones(candidates.size)
        race = rng.exponential(size=candidates.size) / weights
        chosen = candidates[np.argsort(race, kind="stable")[:take]]
        labels[chosen] = 1
    train_mask = ~((labels == 0) & (scores > 0.5))
    return LabelDecision(labels, train_mask, "fair_top_k")


def apply_train_mask(cohort: Cohort, decision: LabelDecision) -> Cohort:
    """Labeled training cohort: decision labels applied, masked rows dropped.

    Rows excluded here still exist in the round's population (for metrics
    and next-round sampling); they are only hidden from the optimizer.
    """
    if len(decision.labels) != len(cohort):
        raise ContractError("decision does not match the cohort size")
    keep = decision.train_mask
    return Cohort(
        features=cohort.features[keep].copy(),
        labels=decision.labels[keep].copy(),
        scores=None if cohort.scores is None else cohort.scores[keep].copy(),
        recoursed=cohort.recoursed[keep].copy(),
        round=cohort.round,
    )
