"""TFCAM and its two baselines as pure forward functions over parameter trees.

``tfcam``
    Embedding plus sinusoidal positions feed a transformer encoder stack
    (contextual states ``Z`` and per-head attention) and two bidirectional
    LSTM branches producing temporal weights ``alpha`` (softmax over time)
    and feature gates ``beta`` (tanh over the embedding).  The logit is
    ``w . sum_t alpha_t * (beta_t * Z_t) + b``.
``retain``
    Reverse-time GRU branches gate the embeddings directly, so the logit
    decomposes exactly into per-(time, feature) contributions plus biases.
``lstm``
    Unidirectional LSTM over the embeddings, last hidden state to a logit.

For ``tfcam`` and ``retain`` the contribution matrix is
``C[b,t,i] = alpha[b,t] * X[b,t,i] * sum_d w[d] * beta[b,t,d] * W_emb[i,d]``.
For ``retain`` this is exact; for ``tfcam`` it routes through the
embedding rather than the encoder states, so it is a linearised reading.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .core import Tensor, nn, ops
from .core.ops import DimensionError
from .explainability import aggregate_attention

MODEL_KINDS = ("tfcam", "retain", "lstm")

# explainability levels each architecture exposes
CAPABILITIES = {
    "lstm": {"feature": False, "temporal": False, "cross": False},
    "retain": {"feature": True, "temporal": True, "cross": False},
    "tfcam": {"feature": True, "temporal": True, "cross": True},
}


class NumericalError(FloatingPointError):
    pass


class NonFiniteActivationError(NumericalError):
    pass


@dataclass
class ModelConfig:
    model_kind: str = "tfcam"
    n_features: int = 20
    n_timesteps: int = 8
    embed_dim: int = 32
    lstm_hidden: int = 32
    n_layers: int = 2
    n_heads: int = 4
    causal_attention: bool = True
    seed: int = 0
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    pos_weight: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.n_timesteps < 1:
            raise ValueError("n_timesteps must be >= 1")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ValueError(f"embed_dim must be even, got {self.embed_dim}")
        if self.n_heads < 1 or self.embed_dim % self.n_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
        if self.lstm_hidden < 1 or self.n_layers < 1:
            raise ValueError("lstm_hidden and n_layers must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        if self.pos_weight is not None and not self.pos_weight > 0:
            raise ValueError("pos_weight must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ForwardArtifacts:
    """Outputs of one forward pass.

    ``logits`` is a Tensor (taped when a tape is active); everything else is
    a detached float64 array.  ``attention`` is ``[B,L,H,T,T]`` and, like
    ``aggregated_attention``, is indexed ``[source t, target t']``: column
    ``t'`` holds how query position ``t'`` distributes over earlier keys.
    """

    logits: Tensor
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    contributions: Optional[np.ndarray] = None
    attention: Optional[np.ndarray] = None
    aggregated_attention: Optional[np.ndarray] = None
    bias_terms: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict, repr=False)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict:
    F, D, Hd = config.n_features, config.embed_dim, config.lstm_hidden
    params = {"embed": nn.init_linear(rng, F, D, "embed")}
    if config.model_kind == "tfcam":
        params["encoder"] = [nn.init_encoder_layer(rng, D, f"encoder.{i}")
                             for i in range(config.n_layers)]
        params["alpha_rnn"] = nn.init_bilstm(rng, D, Hd, "alpha_rnn")
        params["alpha_head"] = nn.init_linear(rng, 2 * Hd, 1, "alpha_head")
        params["beta_rnn"] = nn.init_bilstm(rng, D, Hd, "beta_rnn")
        params["beta_head"] = nn.init_linear(rng, 2 * Hd, D, "beta_head")
        params["out"] = nn.init_linear(rng, D, 1, "out")
    elif config.model_kind == "retain":
        params["alpha_rnn"] = nn.init_gru(rng, D, Hd, "alpha_rnn")
        params["alpha_head"] = nn.init_linear(rng, Hd, 1, "alpha_head")
        params["beta_rnn"] = nn.init_gru(rng, D, Hd, "beta_rnn")
        params["beta_head"] = nn.init_linear(rng, Hd, D, "beta_head")
        params["out"] = nn.init_linear(rng, D, 1, "out")
    else:
        params["rnn"] = nn.init_lstm(rng, D, Hd, "rnn")
        params["out"] = nn.init_linear(rng, Hd, 1, "out")
    return params


def _check_input(X, config: ModelConfig) -> Tensor:
    X = X if isinstance(X, Tensor) else Tensor(X)
    expected = (config.n_timesteps, config.n_features)
    if X.ndim != 3 or X.shape[1:] != expected:
        raise DimensionError(
            f"input shape {X.shape} does not match [B, T={expected[0]}, F={expected[1]}]")
    if not np.all(np.isfinite(X.data)):
        raise ValueError("input contains NaN or Inf")
    return X


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivationError(f"non-finite values in {name}")


def contribution_matrix(X: np.ndarray, alpha: np.ndarray, beta: np.ndarray,
                        out_w: np.ndarray, embed_w: np.ndarray) -> np.ndarray:
    proj = (beta * out_w) @ embed_w.T
    return alpha[..., None] * X * proj


def _temporal_weights(states, head) -> Tensor:
    scores = ops.linear(states, head["W"], head["b"])
    B, T, _ = scores.shape
    return ops.softmax(ops.reshape(scores, (B, T)), axis=-1)


def tfcam_forward(X, params: dict, config: ModelConfig) -> ForwardArtifacts:
    X = _check_input(X, config)
    B, T, _ = X.shape
    pe = nn.positional_encoding(T, config.embed_dim)
    E = ops.linear(X, params["embed"]["W"], params["embed"]["b"]) + pe

    Z, head_weights = E, []
    for layer in params["encoder"]:
        Z, w = nn.encoder_layer(Z, layer, config.n_heads, config.causal_attention)
        head_weights.append(w.data)

    alpha = _temporal_weights(nn.bilstm(E, params["alpha_rnn"]), params["alpha_head"])
    beta_states = nn.bilstm(E, params["beta_rnn"])
    beta = ops.tanh(ops.linear(beta_states, params["beta_head"]["W"], params["beta_head"]["b"]))

    gated = ops.reshape(alpha, (B, T, 1)) * beta * Z
    context = ops.sum(gated, axis=1)
    logit = ops.linear(context, params["out"]["W"], params["out"]["b"])
    logits = ops.reshape(logit, (B,))

    # [B,L,H,q,k] -> [B,L,H,k,q]: source time first, target time second
    per_head = np.stack(head_weights, axis=1).swapaxes(-1, -2)
    C = contribution_matrix(X.data, alpha.data, beta.data,
                            params["out"]["W"].data[:, 0], params["embed"]["W"].data)
    art = ForwardArtifacts(
        logits=logits, alpha=alpha.data, beta=beta.data, contributions=C,
        attention=per_head, aggregated_attention=aggregate_attention(per_head))
    _validate(art)
    return art


def retain_forward(X, params: dict, config: ModelConfig) -> ForwardArtifacts:
    X = _check_input(X, config)
    B, T, _ = X.shape
    v = ops.linear(X, params["embed"]["W"], params["embed"]["b"])
    alpha = _temporal_weights(nn.gru(v, params["alpha_rnn"], reverse=True), params["alpha_head"])
    g = nn.gru(v, params["beta_rnn"], reverse=True)
    beta = ops.tanh(ops.linear(g, params["beta_head"]["W"], params["beta_head"]["b"]))
    context = ops.sum(ops.reshape(alpha, (B, T, 1)) * beta * v, axis=1)
    logits = ops.reshape(ops.linear(context, params["out"]["W"], params["out"]["b"]), (B,))

    w_out = params["out"]["W"].data[:, 0]
    C = contribution_matrix(X.data, alpha.data, beta.data, w_out, params["embed"]["W"].data)
    bias = params["out"]["b"].data[0] + np.einsum(
        "bt,btd,d->b", alpha.data, beta.data, w_out * params["embed"]["b"].data)
    art = ForwardArtifacts(logits=logits, alpha=alpha.data, beta=beta.data,
                           contributions=C, bias_terms=bias)
    _validate(art)
    return art


def lstm_forward(X, params: dict, config: ModelConfig) -> ForwardArtifacts:
    X = _check_input(X, config)
    B = X.shape[0]
    v = ops.linear(X, params["embed"]["W"], params["embed"]["b"])
    h = nn.lstm(v, params["rnn"])
    last = h[:, -1]
    logits = ops.reshape(ops.linear(last, params["out"]["W"], params["out"]["b"]), (B,))
    art = ForwardArtifacts(logits=logits)
    _validate(art)
    return art


FORWARD = {"tfcam": tfcam_forward, "retain": retain_forward, "lstm": lstm_forward}


def forward(X, params: dict, config: ModelConfig) -> ForwardArtifacts:
    # overflow surfaces as NonFiniteActivationError from _validate instead
    with np.errstate(over="ignore", invalid="ignore"):
        return FORWARD[config.model_kind](X, params, config)


def _validate(art: ForwardArtifacts, tol: float = 1e-9) -> None:
    _finite("logits", art.logits.data)
    for name in ("alpha", "beta", "contributions", "aggregated_attention"):
        value = getattr(art, name)
        if value is not None:
            _finite(name, value)
    if art.alpha is not None and art.alpha.size:
        if np.max(np.abs(art.alpha.sum(axis=-1) - 1.0)) > tol:
            raise NumericalError("temporal weights lost normalization")
    if art.aggregated_attention is not None and art.aggregated_attention.size:
        if np.max(np.abs(art.aggregated_attention.sum(axis=-2) - 1.0)) > tol:
            raise NumericalError("aggregated attention lost per-query normalization")
