"""Numeric verification of the gradient-balance analysis.

The quantity checked is F = u - x*h(x) - xhat + xhat*h(xhat): the shift in
the stationarity balance when a marginally accepted user (feature value u)
is displaced from the accepted set by a recoursed user (x -> xhat). Four
published sign conditions are tested by Monte Carlo over the constraint
region; condition 4 admits counterexamples inside the region, so its
violation rate is reported rather than asserted. Two retraining
propositions (failed recourse, shrunken budget) are spot-checked on small
logistic instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FeatureSchema
from .errors import ContractError
from .labeling import top_k_label
from .metrics import higher_standard
from .models import init_logistic, predict_logit, predict_score, train
from .recourse import lemma1_fixed_point
from .update import UpdateStrategy

CONDITION_NAMES = {
    1: "u >= (1 - alpha) * xhat",
    2: "x < u < xhat and x/xhat > beta",
    3: "u <= x and x/xhat < beta",
    4: "u < x/2",
}


@dataclass
class FInstance:
    """One point of the constraint region, with derived alpha and beta."""

    x: float
    xhat: float
    hx: float
    hxhat: float
    u: float

    def __post_init__(self):
        ok = (
            0.0 <= self.x < self.xhat
            and self.hx < self.hxhat
            and 0.0 <= self.hx < 0.5
            and 0.5 <= self.hxhat <= 1.0
            and self.u >= 0.0
        )
        if not ok:
            raise ContractError("instance violates the constraint region")

    @property
    def alpha(self) -> float:
        return self.hxhat - self.hx

    @property
    def beta(self) -> float:
        return (1.0 - self.hxhat) / (1.0 - self.hx)


def f_value(inst: FInstance) -> float:
    """F = u - x*h(x) - xhat + xhat*h(xhat); exactly linear in u."""
    return inst.u - inst.x * inst.hx - inst.xhat + inst.xhat * inst.hxhat


def _antecedents(inst: FInstance) -> dict[int, bool]:
    return {
        1: inst.u >= (1.0 - inst.alpha) * inst.xhat and inst.hx > 0.0,
        2: inst.x < inst.u < inst.xhat and inst.x / inst.xhat > inst.beta,
        3: inst.u <= inst.x and inst.x / inst.xhat < inst.beta,
        4: inst.u < 0.5 * inst.x,
    }


# Claimed sign of F under each condition's antecedent.
_CLAIMED_SIGN = {1: +1, 2: +1, 3: -1, 4: -1}


@dataclass
class ConditionReport:
    f: float
    holds: dict[int, bool]
    violated: list[int]


def f_condition_check(inst: FInstance) -> ConditionReport:
    """Which condition antecedents hold, and which claimed signs F defies."""
    f = f_value(inst)
    holds = _antecedents(inst)
    violated = [
        c
        for c, active in holds.items()
        if active and (f <= 0.0 if _CLAIMED_SIGN[c] > 0 else f >= 0.0)
    ]
    return ConditionReport(f=f, holds=holds, violated=violated)


def sample_instance(rng: np.random.Generator, scale: float = 2.0) -> FInstance:
    """Uniform rejection sample of the constraint region."""
    while True:
        x = rng.uniform(0.0, scale)
        xhat = rng.uniform(0.0, scale)
        if xhat <= x:
            continue
        return FInstance(
            x=x,
            xhat=xhat,
            hx=rng.uniform(0.0, 0.5),
            hxhat=rng.uniform(0.5, 1.0),
            u=rng.uniform(0.0, scale),
        )


@dataclass
class ConditionSuite:
    samples: int
    antecedent_counts: dict[int, int]
    violation_counts: dict[int, int]

    def violation_rate(self, condition: int) -> float:
        hits = self.antecedent_counts[condition]
        return self.violation_counts[condition] / hits if hits else 0.0


def condition_suite(
    n_samples: int, seed: int, scale: float = 2.0, margin: float = 1e-9
) -> ConditionSuite:
    """Monte Carlo over the region; boundary-grazing draws are discarded.

    An instance within ``margin`` of a condition's antecedent boundary (or
    of F = 0) is not counted for that condition, so floating-point sign
    flips cannot masquerade as violations.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, scale, size=2 * n_samples)
    xhat = rng.uniform(0.0, scale, size=2 * n_samples)
    keep = xhat > x + margin
    x, xhat = x[keep][:n_samples], xhat[keep][:n_samples]
    n = x.shape[0]
    hx = rng.uniform(0.0, 0.5, size=n)
    hxhat = rng.uniform(0.5, 1.0, size=n)
    u = rng.uniform(0.0, scale, size=n)

    alpha = hxhat - hx
    beta = (1.0 - hxhat) / (1.0 - hx)
    f = u - x * hx - xhat + xhat * hxhat
    clear_of_zero = np.abs(f) > margin

    ratio = x / xhat
    holds = {
        1: (u >= (1.0 - alpha) * xhat + margin) & (hx > margin),
        2: (u > x + margin) & (u < xhat - margin) & (ratio > beta + margin),
        3: (u < x - margin) & (ratio < beta - margin),
        4: u < 0.5 * x - margin,
    }
    antecedent_counts = {}
    violation_counts = {}
    for c, active in holds.items():
        active = active & clear_of_zero
        antecedent_counts[c] = int(active.sum())
        if _CLAIMED_SIGN[c] > 0:
            violation_counts[c] = int((active & (f < 0)).sum())
        else:
            violation_counts[c] = int((active & (f > 0)).sum())
    return ConditionSuite(n, antecedent_counts, violation_counts)


def condition4_counterexample() -> FInstance:
    """A region point where u < x/2 yet F is clearly positive (~ +0.48)."""
    return FInstance(x=1.0, xhat=1.01, hx=0.0, hxhat=0.99, u=0.49)


# --- small retraining instances -------------------------------------------

_TOY_EPOCHS = 400
_TOY_LR = 0.05


@dataclass
class SpotCheck:
    kind: str
    seed: int
    baseline_mean_logit: float
    perturbed_mean_logit: float

    @property
    def decreased(self) -> bool:
        return self.perturbed_mean_logit < self.baseline_mean_logit


def _toy_instance(rng: np.random.Generator, n: int = 40, d: int = 2):
    offset = 1.2 / np.sqrt(d)
    labels = (rng.random(n) < 0.5).astype(np.int64)
    signs = np.where(labels == 1, 1.0, -1.0)
    features = rng.standard_normal((n, d)) + signs[:, None] * offset
    test = rng.standard_normal((200, d)) + np.where(
        rng.random(200) < 0.5, 1.0, -1.0
    )[:, None] * offset
    schema = FeatureSchema(
        names=[f"f{i}" for i in range(d)],
        actionable=np.ones(d, dtype=bool),
        cost_weights=np.ones(d),
    )
    model = init_logistic(d)
    model, _ = train(model, features, labels, UpdateStrategy(), _TOY_EPOCHS, _TOY_LR)
    return features, labels, test, schema, model


def _retrain(model, features, labels):
    updated, _ = train(model, features, labels, UpdateStrategy(), _TOY_EPOCHS, _TOY_LR)
    return updated


def proposition_spot_check(kind: str, seed: int) -> SpotCheck:
    """Perturb one training point and report the mean-logit direction.

    ``failed_recourse``: a rejected, negatively labeled user improves their
    features but keeps label 0. ``limited_resource``: the weakest accepted
    user is demoted to label 0. Both retrain warm from the fitted model and
    compare mean test logits.
    """
    if kind not in ("failed_recourse", "limited_resource"):
        raise ContractError(f"unknown proposition check: {kind!r}")
    rng = np.random.default_rng(seed)
    features, labels, test, schema, model = _toy_instance(rng)
    scores = predict_score(model, features)
    base = higher_standard(model, test)

    new_features = features.copy()
    new_labels = labels.copy()
    if kind == "failed_recourse":
        rejected = np.flatnonzero((scores < 0.5) & (labels == 0))
        if rejected.size == 0:
            raise ContractError("toy instance has no rejected negative user")
        user = rejected[np.argmax(scores[rejected])]
        # Smallest lam whose action still leaves the user rejected.
        for lam in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0):
            action = lemma1_fixed_point(model, features[user], schema, lam)
            moved = features[user] + action
            if predict_score(model, moved) < 0.5 and np.linalg.norm(action) > 1e-6:
                new_features[user] = moved
                break
        else:
            raise ContractError("could not build a failed-recourse perturbation")
    else:
        accepted = np.flatnonzero((scores >= 0.5) & (labels == 1))
        if accepted.size == 0:
            raise ContractError("toy instance has no accepted positive user")
        user = accepted[np.argmin(scores[accepted])]
        new_labels[user] = 0

    updated = _retrain(model, new_features, new_labels)
    return SpotCheck(kind, seed, base, higher_standard(updated, test))


@dataclass
class ThresholdCheck:
    seed: int
    recoursed_in_top_k: bool
    base_accuracy: float
    best_shifted_accuracy: float
    found: bool
    shifted_models_scanned: int = field(default=0)


def theorem1_threshold_check(seed: int, n: int = 50, k: int | None = None) -> ThresholdCheck:
    """When a recoursed user enters the top-k, some stricter bias shift
    matches or beats the original accuracy on the relabeled set.

    Scans every threshold between consecutive sorted logits (bias shifts
    delta < 0 only, i.e. models with a lower mean score).
    """
    rng = np.random.default_rng(seed)
    features, labels, _, schema, model = _toy_instance(rng, n=n)
    if k is None:
        k = n // 3
    scores = predict_score(model, features)

    rejected = np.flatnonzero(scores < 0.5)
    if rejected.size == 0:
        raise ContractError("toy instance has no rejected user")
    user = rejected[np.argmax(scores[rejected])]
    moved = features.copy()
    for lam in (0.05, 0.1, 0.2, 0.4):
        action = lemma1_fixed_point(model, features[user], schema, lam)
        moved[user] = features[user] + action
        new_scores = predict_score(model, moved)
        order = np.argsort(-new_scores, kind="stable")
        if user in order[:k]:
            break
    new_scores = predict_score(model, moved)
    decision = top_k_label(new_scores, k)
    in_top_k = bool(decision.labels[user] == 1)

    logits = predict_logit(model, moved)
    predictions = (logits >= 0.0).astype(np.int64)
    base_acc = float((predictions == decision.labels).mean())

    sorted_logits = np.sort(logits)
    cuts = np.concatenate(
        [[sorted_logits[0] - 1.0], (sorted_logits[:-1] + sorted_logits[1:]) / 2.0]
    )
    best = 0.0
    found = False
    scanned = 0
    for cut in cuts:
        delta = -cut  # shifted bias b' = b + delta; stricter only
        if delta >= 0.0:
            continue
        scanned += 1
        shifted_pred = (logits + delta >= 0.0).astype(np.int64)
        acc = float((shifted_pred == decision.labels).mean())
        best = max(best, acc)
        if acc >= base_acc:
            found = True
    return ThresholdCheck(seed, in_top_k, base_acc, best, found, scanned)
