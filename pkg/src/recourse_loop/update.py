"""Model-update strategies: plain BCE, short-memory synaptic-importance
regularization, and a variant whose strength adapts to how separable the
previous round's labels were (via Jensen-Shannon divergence of the score
histograms).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError

STRATEGY_KINDS = ("static", "continual", "dcl")
SCORE_BINS = 20


@dataclass
class Histogram:
    """Fixed-bin mass histogram; all-zero masses encode an empty sample."""

    bin_edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.shape[0] != self.bin_edges.shape[0] - 1:
            raise ContractError("need one more bin edge than mass")
        if np.any(self.masses < 0):
            raise ContractError("histogram masses must be nonnegative")
        total = self.masses.sum()
        if total != 0.0 and abs(total - 1.0) > 1e-12:
            raise ContractError("histogram masses must sum to 1 (or all be zero)")

    @property
    def empty(self) -> bool:
        return float(self.masses.sum()) == 0.0


def score_histogram(scores, bins: int = SCORE_BINS) -> Histogram:
    """Equal-width histogram of scores over [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return Histogram(edges, np.zeros(bins))
    counts, _ = np.histogram(scores, bins=edges)
    return Histogram(edges, counts / counts.sum())


def _kl_bits(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / m[mask])))


def jsd(p: Histogram, q: Histogram) -> float:
    """Base-2 Jensen-Shannon divergence, in [0, 1]; 0*log0 counts as 0."""
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise ContractError("histograms must share bin edges")
    if p.empty and q.empty:
        raise ContractError("JSD is undefined for two empty histograms")
    mid = 0.5 * (p.masses + q.masses)
    return 0.5 * _kl_bits(p.masses, mid) + 0.5 * _kl_bits(q.masses, mid)


def dcl_tau(tau: float, jsd_prev: float, jsd_floor: float) -> float:
    """Adaptive strength tau / max(jsd_prev, jsd_floor)."""
    if tau <= 0:
        raise ContractError("tau must be positive")
    return tau / max(jsd_prev, jsd_floor)


def si_accumulate(trace) -> np.ndarray:
    """Per-parameter importance from one round's path: sum of
    max(0, -g_k * dtheta_k) over steps."""
    if trace.gradients.shape[0] == 0:
        return np.zeros_like(trace.theta_start)
    return np.maximum(-trace.gradients * trace.deltas, 0.0).sum(axis=0)


@dataclass
class TaskRecord:
    """Importance and total parameter movement of one finished round."""

    omega: np.ndarray
    delta: np.ndarray


def _recency_weights(n_tasks: int, window: int) -> np.ndarray:
    # A task s rounds old gets ((window - s + 1) / window)^3; newest s = 1.
    ages = np.arange(n_tasks, 0, -1)
    raw = ((window - ages + 1) / window) ** 3
    return raw / raw.sum()


def omega_regularizer(history, theta, window: int, epsilon: float = 1e-3) -> np.ndarray:
    """Per-parameter penalty strength from the last ``window`` tasks.

    Cubic recency weighting, normalized over the window; empty history
    yields zero strength everywhere.
    """
    recent = list(history)[-window:]
    if not recent:
        return np.zeros_like(np.asarray(theta, dtype=float))
    weights = _recency_weights(len(recent), window)
    omega = np.zeros_like(recent[0].omega)
    for w_u, task in zip(weights, recent):
        omega += w_u * task.omega / (task.delta**2 + epsilon)
    return omega


def regularized_loss(base_loss: float, theta, anchor, omega, tau_eff: float) -> float:
    """base_loss + tau_eff * sum(omega * (anchor - theta)^2)."""
    theta = np.asarray(theta, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if theta.shape != anchor.shape or theta.shape != omega.shape:
        raise ContractError("theta, anchor, and omega shapes must match")
    return float(base_loss + tau_eff * np.sum(omega * (anchor - theta) ** 2))


@dataclass
class UpdateStrategy:
    """Owns the retention hyperparameters and the rolling task history.

    ``static`` ignores everything and trains on plain BCE. ``continual``
    anchors each round's parameters to the previous round with constant
    strength ``tau``; ``dcl`` divides ``tau`` by the previous round's
    label-separation JSD, tightening retention when the round collapsed.
    """

    kind: str = "static"
    tau: float = 1e-5
    window: int = 5
    epsilon: float = 1e-3
    jsd_floor: float = 1e-3
    history: deque = field(default_factory=deque)
    last_jsd: float | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigurationError(f"unknown update strategy: {self.kind!r}")
        if self.tau < 0:
            raise ConfigurationError("tau must be nonnegative")
        if self.kind == "dcl" and self.tau == 0:
            raise ConfigurationError("dcl needs tau > 0")
        if self.window < 1:
            raise ConfigurationError("window must be at least 1")
        if self.epsilon <= 0 or self.jsd_floor <= 0:
            raise ConfigurationError("epsilon and jsd_floor must be positive")

    def effective_tau(self) -> float:
        if self.kind == "static":
            return 0.0
        if self.kind == "continual":
            return self.tau
        if self.last_jsd is None:
            return self.tau
        return dcl_tau(self.tau, self.last_jsd, self.jsd_floor)

    def penalty_for_round(self, theta) -> tuple[float, np.ndarray, np.ndarray]:
        """(tau_eff, omega, anchor) to apply while training one round."""
        theta = np.asarray(theta, dtype=float)
        anchor = theta.copy()
        if self.kind == "static" or not self.history:
            return 0.0 if self.kind == "static" else self.effective_tau(), np.zeros_like(theta), anchor
        omega = omega_regularizer(self.history, theta, self.window, self.epsilon)
        return self.effective_tau(), omega, anchor

    def record_task(self, trace, jsd_value: float | None) -> None:
        """Fold one finished round into the history (no-op when static)."""
        if self.kind == "static":
            return
        omega_u = si_accumulate(trace)
        delta_u = trace.theta_end - trace.theta_start
        self.history.append(TaskRecord(omega_u, delta_u))
        while len(self.history) > self.window:
            self.history.popleft()
        if jsd_value is not None:
            self.last_jsd = jsd_value
