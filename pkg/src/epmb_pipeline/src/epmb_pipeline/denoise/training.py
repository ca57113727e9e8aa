"""EPM-labeled training sets, classifier training and inference."""

import logging
import time
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from epmb_core.core_types import EpmFrame, Event, EventStream, SensorGeometry
from epmb_core.errors import EmptySequenceError, GeometryMismatchError, SingleClassError
from epmb_core.windows import window_of
from epmb_pipeline.config import bench_config
from epmb_pipeline.denoise.filters import FilterResult
from epmb_pipeline.denoise.model import HIDDEN_SIZES, DenoiserModel, Objective
from epmb_pipeline.denoise.store import FeatureSpec, replay_features

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-7
EVENT_RECORD = np.dtype([("t", "<i8"), ("x", "<i4"), ("y", "<i4"), ("p", "i1")])


@dataclass(frozen=True)
class LabeledEvent:
    """An event with its EPM value ``soft`` and the optimal label ``hard = soft > 0.5``."""

    event: Event
    soft: float
    hard: int


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Features and labels of the in-window events on valid EPM pixels."""

    geometry: SensorGeometry
    events: np.ndarray
    features: np.ndarray
    soft: np.ndarray
    hard: np.ndarray
    spec: FeatureSpec

    def __len__(self) -> int:
        return len(self.soft)

    def __iter__(self) -> Iterator[LabeledEvent]:
        for record, soft, hard in zip(self.events.tolist(), self.soft.tolist(), self.hard.tolist()):
            t, x, y, p = record
            yield LabeledEvent(event=Event(x=x, y=y, t=t, p=p), soft=soft, hard=hard)

    @classmethod
    def merge(cls, sets: Sequence["TrainingSet"]) -> "TrainingSet":
        """Concatenate sets built on the same sensor with the same features."""
        if not sets:
            raise EmptySequenceError("Nothing to merge")
        first = sets[0]
        for other in sets[1:]:
            if other.spec != first.spec:
                raise GeometryMismatchError(f"Feature specs differ: {first.spec} vs {other.spec}")
            if other.geometry != first.geometry:
                raise GeometryMismatchError("Training sets come from different sensors")
        return cls(
            geometry=first.geometry,
            events=np.concatenate([s.events for s in sets]),
            features=np.concatenate([s.features for s in sets]),
            soft=np.concatenate([s.soft for s in sets]),
            hard=np.concatenate([s.hard for s in sets]),
            spec=first.spec,
        )


def build_training_set(
    stream: EventStream, masks: Sequence[EpmFrame], spec: FeatureSpec | None = None, batch_size: int | None = None
) -> TrainingSet:
    """Label every event inside an exposure window whose pixel is valid in that window's EPM.

    The whole stream is replayed, so features see history from between exposures.
    """
    spec = spec or FeatureSpec()
    windows = [mask.window for mask in masks]
    for mask in masks:
        stream.geometry.check_frame(mask.values, f"EPM of window {mask.window_start}")
    window = window_of(stream.t, windows)
    soft = np.full(len(stream), np.nan)
    selected = np.zeros(len(stream), dtype=bool)
    for w, mask in enumerate(masks):
        inside = np.flatnonzero(window == w)
        ys, xs = stream.y[inside], stream.x[inside]
        valid = mask.valid.values[ys, xs]
        selected[inside[valid]] = True
        soft[inside[valid]] = mask.values[ys[valid], xs[valid]]

    started = time.perf_counter()
    indices, features = [], []
    for batch_indices, batch in replay_features(stream, spec, selected, batch_size):
        indices.append(batch_indices)
        features.append(batch)
    order = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
    labels = soft[order]
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info(f"Labeled {len(order)} of {len(stream)} events for training ({elapsed_ms:.0f} ms)")
    events = np.zeros(len(order), dtype=EVENT_RECORD)
    for name in ("t", "x", "y", "p"):
        events[name] = getattr(stream, name)[order]
    return TrainingSet(
        geometry=stream.geometry,
        events=events,
        features=np.concatenate(features) if features else np.empty((0, spec.size), dtype=np.float32),
        soft=labels,
        hard=(labels > 0.5).astype(np.uint8),
        spec=spec,
    )


class TrainingConfig(BaseModel):
    """Optimizer and schedule of ``train``."""

    objective: Objective = Objective.HARD
    epochs: int = Field(default=10, gt=0)
    batch_size: int = Field(default=128, gt=0)
    learning_rate: float = Field(default=1e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    hidden: tuple[int, ...] = HIDDEN_SIZES
    seed: int = Field(default_factory=lambda: bench_config.seed)


def objective_loss(
    objective: Objective, p: np.ndarray, soft: np.ndarray, hard: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean loss of a batch and its gradient with respect to the output logits.

    soft-reward maximizes ``p M + (1 - p)(1 - M)``, soft-l1 minimizes ``|M - p|`` and hard
    minimizes the cross-entropy against ``E_opt``.
    """
    n = len(p)
    match objective:
        case Objective.SOFT_REWARD:
            loss = -np.mean(p * soft + (1 - p) * (1 - soft))
            grad_p = -(2 * soft - 1) / n
        case Objective.SOFT_L1:
            loss = np.mean(np.abs(soft - p))
            grad_p = np.sign(p - soft) / n
        case Objective.HARD:
            q = np.clip(p, LOG_CLAMP, 1 - LOG_CLAMP)
            loss = -np.mean(hard * np.log(q) + (1 - hard) * np.log(1 - q))
            return float(loss), ((p - hard) / n).astype(np.float32)
        case _:
            raise ValueError(f"Unknown objective {objective!r}")
    return float(loss), (grad_p * p * (1 - p)).astype(np.float32)


class Adam:
    def __init__(self, shapes: list[tuple[int, ...]], config: TrainingConfig) -> None:
        self.config = config
        self.step = 0
        self.m = [np.zeros(shape, dtype=np.float32) for shape in shapes]
        self.v = [np.zeros(shape, dtype=np.float32) for shape in shapes]

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.config
        self.step += 1
        scale = c.learning_rate * np.sqrt(1 - c.beta2**self.step) / (1 - c.beta1**self.step)
        for param, grad, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * grad
            v *= c.beta2
            v += (1 - c.beta2) * grad * grad
            param -= (scale * m / (np.sqrt(v) + 1e-8)).astype(np.float32)


def _gradients(model: DenoiserModel, activations: list[np.ndarray], delta: np.ndarray) -> list[np.ndarray]:
    grads: list[np.ndarray] = []
    delta = delta.reshape(-1, 1)
    for i in range(len(model.layers) - 1, -1, -1):
        grads[:0] = [activations[i].T @ delta, delta.sum(axis=0)]
        if i:
            delta = (delta @ model.layers[i].weights.T) * (activations[i] > 0)
    return grads


def _check_trainable(data: TrainingSet) -> None:
    if not len(data):
        raise EmptySequenceError("Training set is empty")
    if data.hard.min() == data.hard.max():
        raise SingleClassError(f"Training set has only class {int(data.hard[0])}")


def train(data: TrainingSet, config: TrainingConfig | None = None) -> DenoiserModel:
    """Mini-batch Adam training of a fresh network under one objective.

    The same set and config always give the same weights and loss trajectory.

    Raises:
        EmptySequenceError: If the set is empty
        SingleClassError: If every event has the same optimal label
    """
    config = config or TrainingConfig()
    _check_trainable(data)
    model = DenoiserModel.initialize(data.spec, data.geometry, config.objective, config.seed, config.hidden)
    params = [array for layer in model.layers for array in (layer.weights, layer.bias)]
    optimizer = Adam([p.shape for p in params], config)
    rng = np.random.default_rng(config.seed)
    soft, hard = data.soft.astype(np.float32), data.hard.astype(np.float32)
    started = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for begin in range(0, len(order), config.batch_size):
            batch = order[begin : begin + config.batch_size]
            activations = model.activations(data.features[batch])
            loss, delta = objective_loss(config.objective, activations[-1][:, 0], soft[batch], hard[batch])
            optimizer.update(params, _gradients(model, activations, delta))
            total += loss * len(batch)
        model.loss_history.append(total / len(order))
        logger.debug(f"Epoch {epoch + 1}/{config.epochs}: loss {model.loss_history[-1]:.6f}")
    model.epochs = config.epochs
    elapsed_ms = (time.perf_counter() - started) * 1000
    logger.info(
        f"Trained {config.objective} model on {len(data)} events for {config.epochs} epochs "
        f"(final loss {model.loss_history[-1]:.6f}, {elapsed_ms:.0f} ms)"
    )
    return model


def accuracy(model: DenoiserModel, data: TrainingSet) -> float:
    """Fraction of events whose thresholded score equals the optimal label."""
    return float(np.mean((model.predict(data.features) > 0.5) == data.hard.astype(bool)))


@dataclass(frozen=True)
class ThresholdScores:
    """Objective values of the rules ``E = [feature <= thresholds[j]]``."""

    thresholds: np.ndarray
    reward: np.ndarray
    l1: np.ndarray
    error: np.ndarray

    @property
    def best_reward(self) -> int:
        return int(np.argmax(self.reward))

    @property
    def best_l1(self) -> int:
        return int(np.argmin(self.l1))

    @property
    def best_error(self) -> int:
        return int(np.argmin(self.error))


def threshold_rule_scores(values: np.ndarray, soft: np.ndarray) -> ThresholdScores:
    """Scores of every single-feature threshold rule under the three training objectives.

    The first rule (threshold ``-inf``) selects no event; each further rule adds the events
    with the next larger feature value.
    """
    values, soft = np.asarray(values, dtype=np.float64), np.asarray(soft, dtype=np.float64)
    hard = (soft > 0.5).astype(np.float64)
    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    last_of_value = np.flatnonzero(np.append(np.diff(sorted_values) != 0, True))
    thresholds = np.concatenate(([-np.inf], sorted_values[last_of_value]))

    def selected_sum(column: np.ndarray) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(column[order])[last_of_value]))

    m_sel, h_sel = selected_sum(soft), selected_sum(hard)
    m_total, h_total, count = soft.sum(), hard.sum(), np.concatenate(([0], last_of_value + 1))
    reward = m_sel + (len(soft) - count - (m_total - m_sel))
    l1 = (count - m_sel) + (m_total - m_sel)
    error = (count - h_sel) + (h_total - h_sel)
    return ThresholdScores(thresholds=thresholds, reward=reward, l1=l1, error=error)


def score_events(model: DenoiserModel, stream: EventStream, batch_size: int | None = None) -> np.ndarray:
    """Classifier score of every event, replaying only the stream itself.

    Raises:
        GeometryMismatchError: If the stream comes from a different sensor than the training data
    """
    if stream.geometry != model.geometry:
        raise GeometryMismatchError(
            f"Model was trained on a {model.geometry.width}x{model.geometry.height} sensor, "
            f"stream is {stream.geometry.width}x{stream.geometry.height}"
        )
    scores = np.zeros(len(stream), dtype=np.float32)
    for indices, features in replay_features(stream, model.spec, batch_size=batch_size):
        scores[indices] = model.predict(features)
    return scores


def classify(model: DenoiserModel, stream: EventStream, batch_size: int | None = None) -> FilterResult:
    """Keep the events scored above 0.5."""
    started = time.perf_counter()
    result = FilterResult.split(stream, score_events(model, stream, batch_size) > 0.5)
    elapsed = time.perf_counter() - started
    rate = len(stream) / elapsed if elapsed > 0 else float("inf")
    logger.info(f"Classified {len(stream)} events, kept {len(result.kept)} ({rate:.0f} events/s)")
    return result
