"""Score models (logistic regression and a two-layer MLP) with analytic
gradients, BCE loss, an ADAM optimizer, and full-batch training.

Parameters live in one flat vector per model. Logistic packs ``[w, b]``;
the MLP packs ``[W1.ravel(), b1, W2, b2]`` with a ReLU hidden layer and a
scalar linear head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, DataError
from .update import UpdateStrategy

SCORE_CLAMP = 1e-7
DEFAULT_LEARNING_RATES = {"logistic": 1e-2, "mlp": 1e-3}
DEFAULT_HIDDEN_WIDTH = 16


@dataclass
class ScoreModel:
    kind: str
    theta: np.ndarray
    dim: int
    hidden_width: int | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.kind not in ("logistic", "mlp"):
            raise ContractError(f"unknown model kind: {self.kind!r}")
        if self.kind == "mlp" and not self.hidden_width:
            raise ContractError("mlp models need a hidden_width")
        if self.theta.shape != (self.n_params,):
            raise ContractError(
                f"{self.kind} model with d={self.dim} expects "
                f"{self.n_params} parameters, got {self.theta.shape}"
            )

    @property
    def n_params(self) -> int:
        if self.kind == "logistic":
            return self.dim + 1
        h = self.hidden_width
        return h * self.dim + h + h + 1

    def with_theta(self, theta: np.ndarray) -> "ScoreModel":
        return replace(self, theta=np.asarray(theta, dtype=float))


def init_logistic(d: int) -> ScoreModel:
    """Zero-initialized logistic model (score 0.5 everywhere)."""
    return ScoreModel(kind="logistic", theta=np.zeros(d + 1), dim=d)


def init_mlp(d: int, hidden_width: int, rng: np.random.Generator) -> ScoreModel:
    """MLP with uniform(+-1/sqrt(fan_in)) initialization for each layer."""
    h = hidden_width
    b1_bound = 1.0 / np.sqrt(d)
    b2_bound = 1.0 / np.sqrt(h)
    theta = np.concatenate(
        [
            rng.uniform(-b1_bound, b1_bound, size=h * d),
            rng.uniform(-b1_bound, b1_bound, size=h),
            rng.uniform(-b2_bound, b2_bound, size=h),
            rng.uniform(-b2_bound, b2_bound, size=1),
        ]
    )
    return ScoreModel(kind="mlp", theta=theta, dim=d, hidden_width=h)


def _unpack_mlp(model: ScoreModel):
    d, h = model.dim, model.hidden_width
    t = model.theta
    w1 = t[: h * d].reshape(h, d)
    b1 = t[h * d : h * d + h]
    w2 = t[h * d + h : h * d + 2 * h]
    b2 = t[-1]
    return w1, b1, w2, b2


def _as_batch(model: ScoreModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != model.dim:
        raise ContractError(f"expected feature dimension {model.dim}, got shape {x.shape}")
    return batch, single


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_logit(model: ScoreModel, x):
    """Pre-sigmoid output; accepts one feature vector or a (n, d) batch."""
    batch, single = _as_batch(model, x)
    if model.kind == "logistic":
        out = batch @ model.theta[:-1] + model.theta[-1]
    else:
        w1, b1, w2, b2 = _unpack_mlp(model)
        out = np.maximum(batch @ w1.T + b1, 0.0) @ w2 + b2
    return float(out[0]) if single else out


def predict_score(model: ScoreModel, x):
    """sigmoid(logit), the acceptance score in [0, 1]."""
    out = _sigmoid(predict_logit(model, x))
    return float(out) if np.ndim(out) == 0 else out


def grad_logit_input(model: ScoreModel, x):
    """d logit / d x, shaped like the input."""
    batch, single = _as_batch(model, x)
    if model.kind == "logistic":
        grad = np.broadcast_to(model.theta[:-1], batch.shape).copy()
    else:
        w1, b1, w2, _ = _unpack_mlp(model)
        active = (batch @ w1.T + b1) > 0
        grad = (active * w2) @ w1
    return grad[0] if single else grad


def grad_input(model: ScoreModel, x):
    """d score / d x = s(1 - s) * d logit / d x."""
    batch, single = _as_batch(model, x)
    s = _sigmoid(predict_logit(model, batch))
    grad = (s * (1.0 - s))[:, None] * grad_logit_input(model, batch)
    return grad[0] if single else grad


def bce_loss(scores, labels) -> float:
    """Mean binary cross entropy with scores clamped away from {0, 1}."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels must have the same length")
    s = np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return float(-np.mean(labels * np.log(s) + (1.0 - labels) * np.log(1.0 - s)))


def grad_params(model: ScoreModel, batch, labels) -> np.ndarray:
    """Analytic gradient of the mean BCE over a batch, flat like theta."""
    batch = np.asarray(batch, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ContractError("gradient needs a nonempty 2-D batch")
    if labels.shape != (batch.shape[0],):
        raise ContractError("labels must align with batch rows")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ContractError("labels must be binary")
    n = batch.shape[0]
    # d BCE / d logit = (s - y); the mean folds into r.
    if model.kind == "logistic":
        s = _sigmoid(batch @ model.theta[:-1] + model.theta[-1])
        r = (s - labels) / n
        return np.concatenate([r @ batch, [r.sum()]])
    w1, b1, w2, _ = _unpack_mlp(model)
    z1 = batch @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    s = _sigmoid(a1 @ w2 + model.theta[-1])
    r = (s - labels) / n
    g_w2 = r @ a1
    g_b2 = r.sum()
    delta1 = (r[:, None] * w2) * (z1 > 0)
    g_w1 = delta1.T @ batch
    g_b1 = delta1.sum(axis=0)
    return np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]])


@dataclass
class OptimizerState:
    """Bias-corrected ADAM state; a value, never mutated in place."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def fresh_optimizer(n_params: int, learning_rate: float) -> OptimizerState:
    return OptimizerState(
        first_moment=np.zeros(n_params),
        second_moment=np.zeros(n_params),
        learning_rate=learning_rate,
    )


def adam_step(theta, gradient, state: OptimizerState) -> tuple[np.ndarray, OptimizerState]:
    theta = np.asarray(theta, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if theta.shape != gradient.shape or theta.shape != state.first_moment.shape:
        raise ContractError("theta, gradient, and optimizer state shapes must match")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_theta = theta - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_theta, replace(state, first_moment=m, second_moment=v, step_count=t)


@dataclass
class TrainTrace:
    """Per-step record of one training run.

    ``gradients[i]`` is the objective gradient at step i, ``deltas[i]`` the
    parameter change applied by step i; ``losses`` holds the objective before
    each step plus the final value (length steps + 1).
    """

    gradients: np.ndarray
    deltas: np.ndarray
    losses: np.ndarray
    theta_start: np.ndarray
    theta_end: np.ndarray


def train(
    model: ScoreModel,
    features,
    labels,
    strategy: UpdateStrategy,
    epochs: int,
    learning_rate: float | None = None,
) -> tuple[ScoreModel, TrainTrace]:
    """Full-batch ADAM on mean BCE plus the strategy's quadratic penalty.

    Training always warm-starts from the model's current parameters; the
    anchor for the penalty is the parameter vector at entry. ``epochs == 0``
    returns the model unchanged with an empty trace.
    """
    features = np.asarray(features, dtype=float)
    if labels is None:
        raise ContractError("training requires a labeled cohort")
    labels = np.asarray(labels, dtype=float)
    theta = model.theta.copy()
    n_params = theta.shape[0]
    if epochs == 0:
        empty = np.zeros((0, n_params))
        loss0 = bce_loss(predict_score(model, features), labels)
        return model, TrainTrace(empty, empty.copy(), np.array([loss0]), theta, theta.copy())

    tau_eff, omega, anchor = strategy.penalty_for_round(theta)
    lr = DEFAULT_LEARNING_RATES[model.kind] if learning_rate is None else learning_rate
    state = fresh_optimizer(n_params, lr)

    def objective(th):
        scores = predict_score(model.with_theta(th), features)
        penalty = tau_eff * np.sum(omega * (th - anchor) ** 2)
        return bce_loss(scores, labels) + penalty

    gradients = np.empty((epochs, n_params))
    deltas = np.empty((epochs, n_params))
    losses = np.empty(epochs + 1)
    for step in range(epochs):
        losses[step] = objective(theta)
        g = grad_params(model.with_theta(theta), features, labels)
        g += 2.0 * tau_eff * omega * (theta - anchor)
        new_theta, state = adam_step(theta, g, state)
        gradients[step] = g
        deltas[step] = new_theta - theta
        theta = new_theta
    losses[-1] = objective(theta)
    trace = TrainTrace(gradients, deltas, losses, anchor, theta.copy())
    return model.with_theta(theta), trace


def model_to_json(model: ScoreModel) -> str:
    """Serialize to a named-array JSON layout, bit-exact on round trip.

    Values are written with 17 significant decimal digits, enough to
    reconstruct every float64 exactly.
    """
    if model.kind == "logistic":
        arrays = [
            ("weights", [model.dim], model.theta[:-1]),
            ("bias", [1], model.theta[-1:]),
        ]
    else:
        w1, b1, w2, b2 = _unpack_mlp(model)
        arrays = [
            ("hidden_weights", [model.hidden_width, model.dim], w1.ravel()),
            ("hidden_bias", [model.hidden_width], b1),
            ("head_weights", [model.hidden_width], w2),
            ("head_bias", [1], np.array([b2])),
        ]
    parts = [
        '{"kind": %s, "dim": %d, "hidden_width": %s, "arrays": ['
        % (json.dumps(model.kind), model.dim, json.dumps(model.hidden_width))
    ]
    for i, (name, shape, values) in enumerate(arrays):
        txt = ", ".join("%.17g" % v for v in values)
        parts.append(
            '{"name": %s, "shape": %s, "values": [%s]}%s'
            % (json.dumps(name), json.dumps(shape), txt, "," if i < len(arrays) - 1 else "")
        )
    parts.append("]}")
    return "\n".join(parts)


def model_from_json(text: str) -> ScoreModel:
    doc = json.loads(text)
    try:
        kind = doc["kind"]
        arrays = {a["name"]: np.array(a["values"], dtype=float) for a in doc["arrays"]}
        if kind == "logistic":
            theta = np.concatenate([arrays["weights"], arrays["bias"]])
        else:
            theta = np.concatenate(
                [
                    arrays["hidden_weights"],
                    arrays["hidden_bias"],
                    arrays["head_weights"],
                    arrays["head_bias"],
                ]
            )
        return ScoreModel(
            kind=kind, theta=theta, dim=doc["dim"], hidden_width=doc["hidden_width"]
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model checkpoint: {exc}") from exc
