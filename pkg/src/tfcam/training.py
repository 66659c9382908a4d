"""Mini-batch Adam training on class-weighted binary cross-entropy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Adam, NonFiniteGradientError, Tape, Tensor, backward, ops
from .core.nn import iter_parameters
from .models import ForwardArtifacts, ModelConfig, NumericalError, forward, init_params
from .validation import check_binary_labels, check_both_classes, check_sequences

logger = logging.getLogger(__name__)


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, batch: int, reason: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {reason}")
        self.epoch, self.batch = epoch, batch


@dataclass
class TrainedModel:
    config: ModelConfig
    params: dict
    history: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def parameters(self) -> list:
        return iter_parameters(self.params)

    def named_parameters(self) -> dict:
        return {p.name: p for p in self.parameters()}

    def forward(self, X) -> ForwardArtifacts:
        return forward(X, self.params, self.config)

    def explain(self, X, batch_size: int = 256) -> ForwardArtifacts:
        """Forward pass in chunks, concatenating the detached artifacts."""
        X = np.asarray(X, dtype=np.float64)
        parts = [self.forward(X[i:i + batch_size]) for i in range(0, len(X), batch_size)]
        merged = {}
        for name in ("alpha", "beta", "contributions", "attention",
                     "aggregated_attention", "bias_terms"):
            values = [getattr(p, name) for p in parts]
            merged[name] = None if values[0] is None else np.concatenate(values)
        logits = np.concatenate([p.logits.data for p in parts])
        return ForwardArtifacts(logits=Tensor(logits), **merged)

    def decision_function(self, X, batch_size: int = 256) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.concatenate([self.forward(X[i:i + batch_size]).logits.data
                               for i in range(0, len(X), batch_size)])

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def initialize(config: ModelConfig) -> TrainedModel:
    init_rng, _ = _rngs(config.seed)
    return TrainedModel(config, init_params(config, init_rng))


def _rngs(seed: int):
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(shuffle_seq)


def train(dataset, config: ModelConfig) -> TrainedModel:
    """Fit a fresh model on ``dataset`` (anything with ``X`` and ``y``).

    ``config.pos_weight`` defaults to the negative/positive ratio of the
    training labels.  The same seed reproduces the same history and weights.
    """
    X = check_sequences(dataset.X, config.n_timesteps, config.n_features)
    y = check_binary_labels(dataset.y, len(X))
    check_both_classes(y)
    pos_weight = config.pos_weight
    if pos_weight is None:
        pos_weight = float((y == 0).sum() / (y == 1).sum())
    init_rng, shuffle_rng = _rngs(config.seed)
    model = TrainedModel(config, init_params(config, init_rng),
                         metadata={"pos_weight": pos_weight})
    opt = Adam(model.parameters(), lr=config.learning_rate)
    yf = y.astype(np.float64)
    n = len(X)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                try:
                    logits = forward(X[idx], model.params, config).logits
                except NumericalError as exc:
                    raise TrainingDivergedError(epoch, b, str(exc)) from exc
                loss = ops.weighted_bce_loss(logits, yf[idx], pos_weight)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, b)
            backward(tape, loss)
            try:
                opt.step()
            except NonFiniteGradientError as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from exc
            total += value * len(idx)
        model.history.append(total / n)
        logger.debug("%s epoch %d loss %.6f", config.model_kind, epoch, model.history[-1])
    return model


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def predict(model: TrainedModel, X) -> np.ndarray:
    """Probabilities of the positive outcome, in input order."""
    X = check_sequences(X, model.config.n_timesteps, model.config.n_features)
    return sigmoid(model.decision_function(X))


def with_config(model: TrainedModel, **changes) -> TrainedModel:
    return replace(model, config=replace(model.config, **changes))
