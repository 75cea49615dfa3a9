"""The round loop: sample a cohort, let rejected users respond, label under
the acceptance budget, retrain warm, and record metrics.

Every artifact is a pure function of (config, seed): the run RNG is
consumed in a fixed order and all training is full-batch. The archive keeps
enough per-round state (cohorts, masks, checkpoints, recourse costs) to
recompute the metrics CSV exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .data import (
    COST_PROFILES,
    Cohort,
    FeatureSchema,
    PopulationSource,
    generate_synthetic,
    load_csv,
    sample_round,
    train_test_split,
)
from .errors import ConfigurationError, ContractError
from .labeling import KdeConfig, apply_train_mask, fair_top_k_label, top_k_label
from .metrics import (
    RoundRecord,
    avg_recourse_cost,
    balanced_accuracy,
    ftr,
    higher_standard,
    records_to_csv,
    stba,
    tar,
)
from .models import (
    DEFAULT_HIDDEN_WIDTH,
    ScoreModel,
    init_logistic,
    init_mlp,
    model_from_json,
    model_to_json,
    predict_score,
    train,
)
from .recourse import RecourseConfig, batch_recourse, recourse_cost
from .update import UpdateStrategy, jsd, score_histogram

logger = logging.getLogger(__name__)


@dataclass
class DatasetConfig:
    """Synthetic two-cluster data, or a CSV with a declared schema sidecar."""

    kind: str = "synthetic"
    d: int = 20
    n_actionable: int = 17
    cost_profile: str = "uniform"
    path: str | None = None
    label_column: str | None = None
    features: list[dict] | None = None
    cost_offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ConfigurationError(f"dataset.kind must be synthetic or csv, got {self.kind!r}")
        if self.kind == "synthetic":
            if self.cost_profile not in COST_PROFILES:
                raise ConfigurationError(
                    f"dataset.cost_profile must be one of {COST_PROFILES}, got {self.cost_profile!r}"
                )
            if not 0 < self.n_actionable <= self.d:
                raise ConfigurationError("dataset.n_actionable must satisfy 0 < n_actionable <= d")
        else:
            if not self.path or not self.label_column or not self.features:
                raise ConfigurationError(
                    "dataset.kind=csv requires path, label_column, and a features schema list"
                )

    def schema(self) -> FeatureSchema | None:
        if self.kind != "csv":
            return None
        try:
            return FeatureSchema(
                names=[f["name"] for f in self.features],
                actionable=np.array([bool(f["actionable"]) for f in self.features]),
                cost_weights=np.array([float(f["cost_weight"]) for f in self.features]),
                cost_offset=self.cost_offset,
            )
        except KeyError as exc:
            raise ConfigurationError(f"dataset.features entries need key {exc}") from exc


@dataclass
class PolicyConfig:
    kind: str = "top_k"
    kappa: float = 1e-4
    bandwidth: float | str = "scott"

    def __post_init__(self):
        if self.kind not in ("top_k", "fair_top_k"):
            raise ConfigurationError(f"policy.kind must be top_k or fair_top_k, got {self.kind!r}")
        if self.kappa < 0:
            raise ConfigurationError("policy.kappa must be nonnegative")
        KdeConfig(bandwidth=self.bandwidth)

    def kde(self) -> KdeConfig:
        return KdeConfig(bandwidth=self.bandwidth)


@dataclass
class StrategyConfig:
    kind: str = "static"
    tau: float = 1e-5
    window: int = 5
    epsilon: float = 1e-3
    jsd_floor: float = 1e-3

    def build(self) -> UpdateStrategy:
        return UpdateStrategy(
            kind=self.kind,
            tau=self.tau,
            window=self.window,
            epsilon=self.epsilon,
            jsd_floor=self.jsd_floor,
        )


@dataclass
class ModelTrainingConfig:
    kind: str = "logistic"
    hidden_width: int = DEFAULT_HIDDEN_WIDTH
    learning_rate: float | None = None
    epochs: int = 100
    bootstrap_epochs: int = 300

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ConfigurationError(f"model.kind must be logistic or mlp, got {self.kind!r}")
        if self.hidden_width < 1:
            raise ConfigurationError("model.hidden_width must be at least 1")
        if self.epochs < 0 or self.bootstrap_epochs < 0:
            raise ConfigurationError("epoch counts must be nonnegative")


@dataclass
class SimulationConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    model: ModelTrainingConfig = field(default_factory=ModelTrainingConfig)
    recourse: RecourseConfig = field(default_factory=RecourseConfig)
    n: int = 1000
    test_fraction: float = 0.2
    k_fraction: float = 0.5
    rounds: int = 70
    mix_ratio: float = 0.5
    recourse_ratio: float = 0.5
    submit_partial: bool = True
    stba_window: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError("n must be at least 2")
        if not 0 < self.test_fraction < 1:
            raise ConfigurationError("test_fraction must lie strictly between 0 and 1")
        if not 0 < self.k_fraction <= 1:
            raise ConfigurationError("k_fraction must lie in (0, 1]")
        if self.rounds < 1:
            raise ConfigurationError("rounds must be at least 1")
        if not 0 <= self.mix_ratio <= 1:
            raise ConfigurationError("mix_ratio must lie in [0, 1]")
        if not 0 <= self.recourse_ratio <= 1:
            raise ConfigurationError("recourse_ratio must lie in [0, 1]")
        if self.stba_window < 1:
            raise ConfigurationError("stba_window must be at least 1")

    @property
    def k(self) -> int:
        return max(1, int(round(self.k_fraction * self.n)))

    @property
    def method(self) -> str:
        return f"{self.policy.kind}+{self.strategy.kind}"


@dataclass
class RunArchive:
    """Everything needed to replay the metrics CSV of one run."""

    config: SimulationConfig
    schema: FeatureSchema
    source: PopulationSource
    models: list[ScoreModel] = field(default_factory=list)
    cohorts: list[Cohort] = field(default_factory=list)
    train_masks: list[np.ndarray] = field(default_factory=list)
    recourse_costs: list[np.ndarray] = field(default_factory=list)
    records: list[RoundRecord] = field(default_factory=list)
    partial: bool = False

    def csv_text(self) -> str:
        return records_to_csv(self.records)


@dataclass
class SimulationState:
    config: SimulationConfig
    schema: FeatureSchema
    source: PopulationSource
    model: ScoreModel
    strategy: UpdateStrategy
    prev_cohort: Cohort
    rng: np.random.Generator
    archive: RunArchive
    last_trace: object | None = None


def _label_jsd(model: ScoreModel, cohort: Cohort) -> float:
    """Separation of the freshly trained model's scores by assigned label."""
    scores = np.atleast_1d(predict_score(model, cohort.features))
    positive = score_histogram(scores[cohort.labels == 1])
    negative = score_histogram(scores[cohort.labels == 0])
    return jsd(positive, negative)


def bootstrap(config: SimulationConfig) -> SimulationState:
    """Build the population, carve out the frozen test set, and fit h0 on
    the original distribution's ground-truth labels."""
    if config.dataset.kind == "synthetic":
        pool_size = int(round(config.n / (1.0 - config.test_fraction)))
        schema, pool = generate_synthetic(
            seed=config.seed,
            n=pool_size,
            d=config.dataset.d,
            n_actionable=config.dataset.n_actionable,
            cost_profile=config.dataset.cost_profile,
        )
    else:
        schema = config.dataset.schema()
        pool = load_csv(config.dataset.path, schema, config.dataset.label_column)

    rng = np.random.default_rng([config.seed, 1])
    original, test = train_test_split(pool, config.test_fraction, rng)
    source = PopulationSource(
        kind=config.dataset.kind, seed=config.seed, original_pool=original, test_set=test
    )

    if config.model.kind == "logistic":
        model = init_logistic(schema.dim)
    else:
        model = init_mlp(schema.dim, config.model.hidden_width, rng)
    model, trace = train(
        model,
        original.features,
        original.labels,
        UpdateStrategy(kind="static"),
        config.model.bootstrap_epochs,
        config.model.learning_rate,
    )

    strategy = config.strategy.build()
    jsd0 = _label_jsd(model, original)
    strategy.record_task(trace, jsd0)

    archive = RunArchive(config=config, schema=schema, source=source)
    archive.models.append(model)
    archive.cohorts.append(original)
    archive.train_masks.append(np.ones(len(original), dtype=bool))
    archive.recourse_costs.append(np.zeros(0))
    return SimulationState(
        config=config,
        schema=schema,
        source=source,
        model=model,
        strategy=strategy,
        prev_cohort=original,
        rng=rng,
        archive=archive,
        last_trace=trace,
    )


def run_round(state: SimulationState, t: int) -> RoundRecord:
    """Execute round t and append its artifacts to the archive."""
    config = state.config
    rng = state.rng
    k = config.k

    cohort = sample_round(
        state.source.original_pool, state.prev_cohort, config.mix_ratio, config.n, rng
    )
    scores = np.atleast_1d(predict_score(state.model, cohort.features))
    rejected = scores < 0.5
    acting = rejected & (rng.random(len(cohort)) < config.recourse_ratio)

    features = cohort.features.copy()
    costs = np.zeros(0)
    if acting.any():
        outcomes = batch_recourse(
            state.model, features[acting], state.schema, config.recourse, on_error="skip"
        )
        submitted = np.stack([o.new_features for o in outcomes])
        if not config.submit_partial:
            converged = np.array([o.converged for o in outcomes])
            submitted[~converged] = features[acting][~converged]
        originals = features[acting]
        features[acting] = submitted
        costs = np.array(
            [recourse_cost(orig, new, state.schema) for orig, new in zip(originals, submitted)]
        )
        scores = scores.copy()
        scores[acting] = np.atleast_1d(predict_score(state.model, submitted))

    if config.policy.kind == "top_k":
        decision = top_k_label(scores, k)
    else:
        decision = fair_top_k_label(
            features, scores, k, config.policy.kappa, config.policy.kde(), rng
        )
    labeled = Cohort(
        features=features, labels=decision.labels, scores=scores, recoursed=acting, round=t
    )
    train_cohort = apply_train_mask(labeled, decision)

    new_model, trace = train(
        state.model,
        train_cohort.features,
        train_cohort.labels,
        state.strategy,
        config.model.epochs,
        config.model.learning_rate,
    )
    jsd_t = _label_jsd(new_model, train_cohort)
    state.strategy.record_task(trace, jsd_t)

    archive = state.archive
    past_accuracy = {}
    for j in range(max(1, t - config.stba_window), t):
        past = archive.cohorts[j]
        mask = archive.train_masks[j]
        predictions = np.atleast_1d(predict_score(new_model, past.features[mask])) >= 0.5
        past_accuracy[j] = balanced_accuracy(predictions, past.labels[mask]).value

    previous = archive.cohorts[t - 1]
    ftr_value = None
    if previous.recoursed.any():
        ftr_value = ftr(previous.features[previous.recoursed], new_model)

    acceptance = tar(new_model, state.source.test_set)
    record = RoundRecord(
        round=t,
        higher_standard=higher_standard(new_model, state.source.test_set),
        tar=acceptance.value,
        tar_guarded=acceptance.guarded,
        jsd=jsd_t,
        accepted=int(decision.labels.sum()),
        saturated=int(decision.labels.sum()) == k,
        stba=stba(past_accuracy, t, config.stba_window),
        ftr=ftr_value,
        avg_recourse_cost=avg_recourse_cost(costs),
    )

    archive.models.append(new_model)
    archive.cohorts.append(labeled)
    archive.train_masks.append(decision.train_mask)
    archive.recourse_costs.append(costs)
    archive.records.append(record)
    state.model = new_model
    state.prev_cohort = labeled
    state.last_trace = trace
    return record


def run_simulation(config: SimulationConfig, out_dir=None) -> RunArchive:
    """Bootstrap then run every round; optionally persist the archive.

    On a mid-run failure the archive (flushed through the last complete
    round) is still written before the error propagates.
    """
    state = bootstrap(config)
    archive = state.archive
    try:
        for t in range(1, config.rounds + 1):
            run_round(state, t)
    except Exception:
        archive.partial = True
        if out_dir is not None:
            write_archive(archive, out_dir)
        raise
    if out_dir is not None:
        write_archive(archive, out_dir)
    return archive


# --- configuration (de)serialization ---------------------------------------

_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "policy": PolicyConfig,
    "strategy": StrategyConfig,
    "model": ModelTrainingConfig,
    "recourse": RecourseConfig,
}


def config_from_dict(doc: dict) -> SimulationConfig:
    """Strict construction: unknown keys anywhere are configuration errors."""
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration root must be a mapping")
    kwargs = {}
    top_fields = {f for f in SimulationConfig.__dataclass_fields__}
    for key, value in doc.items():
        if key not in top_fields:
            raise ConfigurationError(f"unknown configuration key: {key}")
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigurationError(f"configuration section {key} must be a mapping")
            section_type = _SECTION_TYPES[key]
            section_fields = set(section_type.__dataclass_fields__)
            for sub in value:
                if sub not in section_fields:
                    raise ConfigurationError(f"unknown configuration key: {key}.{sub}")
            try:
                kwargs[key] = section_type(**value)
            except TypeError as exc:
                raise ConfigurationError(f"bad configuration section {key}: {exc}") from exc
        else:
            kwargs[key] = value
    try:
        return SimulationConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad configuration: {exc}") from exc


def config_to_dict(config: SimulationConfig) -> dict:
    return asdict(config)


def config_digest(config: SimulationConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# --- archive persistence and replay -----------------------------------------

def _round_name(t: int) -> str:
    return f"round_{t:04d}"


def write_archive(archive: RunArchive, out_dir) -> None:
    out_dir = str(out_dir)
    rounds_dir = os.path.join(out_dir, "rounds")
    checkpoints_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(rounds_dir, exist_ok=True)
    os.makedirs(checkpoints_dir, exist_ok=True)

    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config_to_dict(archive.config), fh, sort_keys=True, indent=2)
        fh.write("\n")
    manifest = {
        "config_digest": config_digest(archive.config),
        "seed": archive.config.seed,
        "tool_version": __version__,
        "rounds_completed": len(archive.records),
        "partial": archive.partial,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")

    np.savez(os.path.join(out_dir, "test_set.npz"), features=archive.source.test_set.features)
    for t, cohort in enumerate(archive.cohorts):
        np.savez(
            os.path.join(rounds_dir, _round_name(t) + ".npz"),
            features=cohort.features,
            labels=cohort.labels,
            recoursed=cohort.recoursed,
            train_mask=archive.train_masks[t],
            recourse_costs=archive.recourse_costs[t],
        )
    for t, model in enumerate(archive.models):
        with open(os.path.join(checkpoints_dir, _round_name(t) + ".json"), "w") as fh:
            fh.write(model_to_json(model))
            fh.write("\n")
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        fh.write(archive.csv_text())


def replay_records(out_dir) -> list[RoundRecord]:
    """Recompute every round record from the stored archive alone."""
    out_dir = str(out_dir)
    with open(os.path.join(out_dir, "config.json")) as fh:
        config = config_from_dict(json.load(fh))
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    rounds_completed = manifest["rounds_completed"]
    test_features = np.load(os.path.join(out_dir, "test_set.npz"))["features"]

    models = []
    rounds = []
    for t in range(rounds_completed + 1):
        with open(os.path.join(out_dir, "checkpoints", _round_name(t) + ".json")) as fh:
            models.append(model_from_json(fh.read()))
        rounds.append(np.load(os.path.join(out_dir, "rounds", _round_name(t) + ".npz")))

    records = []
    for t in range(1, rounds_completed + 1):
        model = models[t]
        data = rounds[t]
        past_accuracy = {}
        for j in range(max(1, t - config.stba_window), t):
            past = rounds[j]
            mask = past["train_mask"]
            predictions = np.atleast_1d(predict_score(model, past["features"][mask])) >= 0.5
            past_accuracy[j] = balanced_accuracy(predictions, past["labels"][mask]).value
        previous = rounds[t - 1]
        ftr_value = None
        if previous["recoursed"].any():
            ftr_value = ftr(previous["features"][previous["recoursed"]], model)
        mask = data["train_mask"]
        train_scores = np.atleast_1d(predict_score(model, data["features"][mask]))
        train_labels = data["labels"][mask]
        jsd_t = jsd(
            score_histogram(train_scores[train_labels == 1]),
            score_histogram(train_scores[train_labels == 0]),
        )
        acceptance = tar(model, test_features)
        accepted = int(data["labels"].sum())
        records.append(
            RoundRecord(
                round=t,
                higher_standard=higher_standard(model, test_features),
                tar=acceptance.value,
                tar_guarded=acceptance.guarded,
                jsd=jsd_t,
                accepted=accepted,
                saturated=accepted == config.k,
                stba=stba(past_accuracy, t, config.stba_window),
                ftr=ftr_value,
                avg_recourse_cost=avg_recourse_cost(data["recourse_costs"]),
            )
        )
    return records


def replay_csv(out_dir) -> str:
    return records_to_csv(replay_records(out_dir))
