"""Recourse actions for rejected users.

A rejected user moves their actionable features to minimize
``bce(h(x'), p) + lam * cost(x, x')`` by gradient descent. For logistic
models the stationary point has the closed form
``a_i = (1 - h(x + a)) / (2 lam) * w_i / c_i`` (target p = 1), solved here
by damped fixed-point iteration and used as an oracle for the solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import FeatureSchema
from .errors import ContractError, OracleError, SolverError
from .models import ScoreModel, grad_logit_input, predict_score

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass
class RecourseConfig:
    """Solver knobs: lam trades cost against the score target ``quality``."""

    lam: float = 0.1
    quality: float = 0.9
    step_size: float = 0.05
    max_iters: int = 200
    tolerance: float = 1e-6
    init_jitter: float = 0.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ContractError("lam must be positive")
        if not 0.5 < self.quality <= 1.0:
            raise ContractError("quality must lie in (0.5, 1]")
        if self.step_size <= 0 or self.tolerance <= 0:
            raise ContractError("step_size and tolerance must be positive")
        if self.max_iters < 1:
            raise ContractError("max_iters must be at least 1")
        if self.init_jitter < 0:
            raise ContractError("init_jitter must be nonnegative")


@dataclass
class RecourseOutcome:
    new_features: np.ndarray
    cost: float
    achieved_score: float
    converged: bool
    iterations: int


def recourse_cost(x, x_new, schema: FeatureSchema) -> float:
    """Weighted squared distance over actionable coordinates plus the offset."""
    x = np.asarray(x, dtype=float)
    x_new = np.asarray(x_new, dtype=float)
    if x.shape != x_new.shape or x.shape != (schema.dim,):
        raise ContractError("feature vectors must match the schema dimension")
    mask = schema.actionable
    diff = x_new[mask] - x[mask]
    return float(np.sum(schema.cost_weights[mask] * diff**2) + schema.cost_offset)


def _target_bce(scores: np.ndarray, target: float) -> np.ndarray:
    s = np.clip(scores, LOG_CLAMP, 1.0 - LOG_CLAMP)
    return -(target * np.log(s) + (1.0 - target) * np.log(1.0 - s))


def batch_recourse(
    model: ScoreModel,
    features,
    schema: FeatureSchema,
    cfg: RecourseConfig,
    rng: np.random.Generator | None = None,
    on_error: str = "raise",
) -> list[RecourseOutcome]:
    """Run the recourse solver for several rejected users at once.

    All rows share the model and config, so the descent iterations are
    vectorized across users; each row stops independently once its score
    reaches ``quality * (1 - tolerance)`` or its objective stalls.
    ``on_error="skip"`` reverts rows that hit non-finite gradients to their
    original features (with a warning) instead of raising.
    """
    x0 = np.array(features, dtype=float)
    if x0.ndim != 2 or x0.shape[1] != schema.dim:
        raise ContractError("features must be a (n, d) matrix matching the schema")
    start_scores = np.atleast_1d(predict_score(model, x0))
    if np.any(start_scores >= 0.5):
        raise ContractError("recourse is only defined for rejected users (score < 0.5)")

    n = x0.shape[0]
    mask = schema.actionable
    weights = schema.cost_weights
    if not mask.any():
        return [
            RecourseOutcome(x0[i].copy(), recourse_cost(x0[i], x0[i], schema),
                            float(start_scores[i]), False, 0)
            for i in range(n)
        ]

    x = x0.copy()
    if cfg.init_jitter > 0 and rng is not None:
        x[:, mask] += cfg.init_jitter * rng.standard_normal((n, mask.sum()))

    score_stop = cfg.quality * (1.0 - cfg.tolerance)

    def objective(rows, xr):
        s = np.atleast_1d(predict_score(model, xr))
        diff = xr[:, mask] - x0[rows][:, mask]
        cost = np.sum(weights[mask] * diff**2, axis=1) + schema.cost_offset
        return _target_bce(s, cfg.quality) + cfg.lam * cost, s

    active = np.ones(n, dtype=bool)
    iterations = np.zeros(n, dtype=int)
    prev_obj, scores = objective(np.arange(n), x)
    cost_curvature = 2.0 * cfg.lam * float(weights[mask].max())
    for _ in range(cfg.max_iters):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        xr = x[rows]
        s = np.atleast_1d(predict_score(model, xr))
        logit_grad = grad_logit_input(model, xr)
        grad = (s - cfg.quality)[:, None] * logit_grad
        grad += 2.0 * cfg.lam * weights * (xr - x0[rows])
        grad[:, ~mask] = 0.0
        # Per-row step: local smoothness bound so descent stays stable
        # however sharp the model gets, plus a one-logit trust region so
        # users far below the boundary still make scale-free progress.
        gain = np.sum(logit_grad[:, mask] ** 2, axis=1)
        curvature = s * (1.0 - s) * gain + cost_curvature
        step = cfg.step_size / np.maximum(1.0, curvature)
        logit_move = np.abs(s - cfg.quality) * gain
        step = np.minimum(step, 1.0 / np.maximum(logit_move, 1e-30))
        bad = ~np.isfinite(grad).all(axis=1)
        if bad.any():
            if on_error == "raise":
                raise SolverError(
                    f"non-finite recourse gradient at iteration {iterations[rows[bad][0]]} "
                    f"(score {s[bad][0]:.6g})"
                )
            logger.warning("recourse solver hit non-finite gradients for %d user(s); "
                           "their actions are skipped", int(bad.sum()))
            x[rows[bad]] = x0[rows[bad]]
            active[rows[bad]] = False
            rows = rows[~bad]
            if rows.size == 0:
                continue
            xr = x[rows]
            grad = grad[~bad]
            step = step[~bad]
        x[rows] = xr - step[:, None] * grad
        iterations[rows] += 1
        new_obj, new_s = objective(rows, x[rows])
        improvement = prev_obj[rows] - new_obj
        scores[rows] = new_s
        prev_obj[rows] = new_obj
        done = (new_s >= score_stop) | (improvement < cfg.tolerance)
        active[rows[done]] = False

    return [
        RecourseOutcome(
            new_features=x[i].copy(),
            cost=recourse_cost(x0[i], x[i], schema),
            achieved_score=float(scores[i]),
            converged=bool(scores[i] >= score_stop),
            iterations=int(iterations[i]),
        )
        for i in range(n)
    ]


def recourse_action(
    model: ScoreModel,
    x,
    schema: FeatureSchema,
    cfg: RecourseConfig,
    rng: np.random.Generator | None = None,
) -> RecourseOutcome:
    """Recourse for a single rejected user; see ``batch_recourse``."""
    x = np.asarray(x, dtype=float)
    if predict_score(model, x) >= 0.5:
        raise ContractError("user is already accepted; recourse does not apply")
    return batch_recourse(model, x[None, :], schema, cfg, rng=rng)[0]


def lemma1_fixed_point(
    model: ScoreModel,
    x,
    schema: FeatureSchema,
    lam: float,
    tolerance: float = 1e-8,
    max_iters: int = 10_000,
    damping: float = 0.5,
) -> np.ndarray:
    """Closed-form logistic action via damped fixed-point iteration.

    Solves ``a_i = (1 - h(x + a)) / (2 lam) * w_i / c_i`` on actionable
    coordinates to within ``tolerance`` (sup norm of the residual); the
    resulting action is coordinate-wise proportional to ``w_i / c_i``.
    """
    if model.kind != "logistic":
        raise ContractError("the closed form only applies to logistic models")
    if lam <= 0:
        raise ContractError("lam must be positive")
    x = np.asarray(x, dtype=float)
    direction = np.where(schema.actionable, model.theta[:-1] / schema.cost_weights, 0.0)
    a = np.zeros(schema.dim)
    for _ in range(max_iters):
        h = predict_score(model, x + a)
        target = (1.0 - h) / (2.0 * lam) * direction
        residual = np.max(np.abs(target - a))
        if residual < tolerance:
            return a
        a = a + damping * (target - a)
    raise OracleError(f"fixed point did not converge within {max_iters} iterations")
