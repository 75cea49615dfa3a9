"""Per-round evaluation metrics and the round-record CSV layout.

All metrics against the test set use the fixed, frozen test cohort;
"standards" are compared on mean pre-sigmoid logits, whose ordering equals
the mean-score ordering because the sigmoid is monotone.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .data import Cohort
from .errors import ContractError
from .models import ScoreModel, predict_logit, predict_score


class BalancedAccuracy(NamedTuple):
    value: float
    degenerate: bool


class TestAcceptance(NamedTuple):
    value: float
    guarded: bool


def _features_of(dataset) -> np.ndarray:
    if isinstance(dataset, Cohort):
        return dataset.features
    return np.asarray(dataset, dtype=float)


def balanced_accuracy(predictions, truths) -> BalancedAccuracy:
    """Mean of recall and specificity.

    When only one class is present in ``truths`` the present-class rate is
    returned with ``degenerate=True`` instead of failing mid-run.
    """
    predictions = np.asarray(predictions).astype(np.int64)
    truths = np.asarray(truths).astype(np.int64)
    if predictions.shape != truths.shape or predictions.ndim != 1 or predictions.size == 0:
        raise ContractError("predictions and truths must be aligned nonempty vectors")
    pos = truths == 1
    neg = ~pos
    if not pos.any():
        return BalancedAccuracy(float((predictions[neg] == 0).mean()), True)
    if not neg.any():
        return BalancedAccuracy(float((predictions[pos] == 1).mean()), True)
    recall = float((predictions[pos] == 1).mean())
    specificity = float((predictions[neg] == 0).mean())
    return BalancedAccuracy(0.5 * (recall + specificity), False)


def stba(past_accuracies: Mapping[int, float], t: int, window: int) -> float | None:
    """Mean balanced accuracy of the round-t model over the previous
    ``window`` rounds' labeled cohorts; the current round is excluded.

    Returns None when no past round exists (t = 1).
    """
    if t < 1:
        raise ContractError("stba is defined for rounds t >= 1")
    lo = max(1, t - window)
    values = [past_accuracies[j] for j in range(lo, t) if j in past_accuracies]
    if not values:
        return None
    return float(np.mean(values))


def higher_standard(model: ScoreModel, test_set) -> float:
    """Mean test-set logit; a drop between rounds means a stricter model."""
    features = _features_of(test_set)
    if features.shape[0] == 0:
        raise ContractError("higher_standard needs a nonempty test set")
    return float(np.mean(predict_logit(model, features)))


def tar(model: ScoreModel, test_set) -> TestAcceptance:
    """Accepted/rejected ratio on the test set (score threshold 0.5).

    The denominator is floored at 1 so an all-accepting model yields the
    accepted count; ``guarded`` reports when that floor was applied.
    """
    features = _features_of(test_set)
    if features.shape[0] == 0:
        raise ContractError("tar needs a nonempty test set")
    logits = predict_logit(model, features)
    accepted = int(np.sum(logits >= 0.0))
    rejected = int(logits.shape[0] - accepted)
    return TestAcceptance(accepted / max(1, rejected), rejected == 0)


def ftr(recoursed_features, next_model: ScoreModel) -> float | None:
    """Fraction of recoursed users the next model still rejects."""
    features = np.asarray(recoursed_features, dtype=float)
    if features.shape[0] == 0:
        return None
    scores = np.atleast_1d(predict_score(next_model, features))
    return float(np.mean(scores < 0.5))


def avg_recourse_cost(costs) -> float | None:
    """Mean per-user recourse cost; None when nobody acted."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        return None
    return float(costs.mean())


@dataclass
class RoundRecord:
    """One metrics row; optional fields are None when undefined that round."""

    round: int
    higher_standard: float
    tar: float
    tar_guarded: bool
    jsd: float
    accepted: int
    saturated: bool
    stba: float | None = None
    ftr: float | None = None
    avg_recourse_cost: float | None = None

    def __post_init__(self):
        if self.round < 0 or self.accepted < 0:
            raise ContractError("round and accepted count must be nonnegative")
        if self.tar < 0:
            raise ContractError("tar must be nonnegative")
        if not 0.0 <= self.jsd <= 1.0:
            raise ContractError("jsd must lie in [0, 1]")
        for name in ("stba", "ftr"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1]")
        if self.avg_recourse_cost is not None and self.avg_recourse_cost < 0:
            raise ContractError("avg_recourse_cost must be nonnegative")


CSV_COLUMNS = [
    "round",
    "stba",
    "higher_standard",
    "tar",
    "tar_guarded",
    "ftr",
    "avg_recourse_cost",
    "jsd",
    "accepted",
    "saturated",
]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records) -> str:
    """Deterministic CSV text: one row per round, absent values empty."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(
            [
                _cell(r.round),
                _cell(r.stba),
                _cell(r.higher_standard),
                _cell(r.tar),
                _cell(r.tar_guarded),
                _cell(r.ftr),
                _cell(r.avg_recourse_cost),
                _cell(r.jsd),
                _cell(r.accepted),
                _cell(r.saturated),
            ]
        )
    return out.getvalue()


def read_metrics_csv(path) -> dict[str, list]:
    """Parse a metrics CSV back into columns (floats, with None for blanks)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for name, raw in row.items():
                if raw == "":
                    columns[name].append(None)
                elif name in ("round", "accepted"):
                    columns[name].append(int(raw))
                elif name in ("tar_guarded", "saturated"):
                    columns[name].append(raw == "true")
                else:
                    columns[name].append(float(raw))
    return columns
