"""Leaky-ReLU MLP classifier with an optional L2 feature-normalization layer.

Layout: ``x -> [affine -> leaky_relu] * len(hidden_dims) -> affine -> z``
(the feature layer, no activation), then optionally ``z / max(||z||, eps)``,
then the linear decision layer ``logits = features @ W + b``.

The pre-normalization norms ``||z||`` are recorded during the forward pass as
a plain observation. They never enter the loss, so nothing can differentiate
through them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import LabelError, ShapeError
from .linalg import Rng, as_matrix, row_l2_norms


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    feature_dim: int = 16
    num_classes: int = 8
    leaky_slope: float = 0.01
    normalize: bool = True
    epsilon: float = 1e-12
    use_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, self.feature_dim, self.num_classes, *self.hidden_dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every encoder affine map, feature layer last."""
        sizes = [self.input_dim, *self.hidden_dims, self.feature_dim]
        return list(zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class ModelParams:
    enc_weights: tuple[np.ndarray, ...]
    enc_biases: tuple[np.ndarray, ...]
    W: np.ndarray
    b: np.ndarray | None

    def arrays(self) -> list[np.ndarray]:
        out = [*self.enc_weights, *self.enc_biases, self.W]
        if self.b is not None:
            out.append(self.b)
        return out

    def with_arrays(self, arrays) -> "ModelParams":
        n = len(self.enc_weights)
        arrays = list(arrays)
        return ModelParams(
            enc_weights=tuple(arrays[:n]),
            enc_biases=tuple(arrays[n : 2 * n]),
            W=arrays[2 * n],
            b=arrays[2 * n + 1] if self.b is not None else None,
        )

    def check(self, config: ModelConfig) -> None:
        dims = config.layer_dims
        if len(self.enc_weights) != len(dims) or len(self.enc_biases) != len(dims):
            raise ShapeError("encoder depth does not match config")
        for (fi, fo), w, b in zip(dims, self.enc_weights, self.enc_biases):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ShapeError(f"encoder layer expected {(fi, fo)}, got {w.shape}/{b.shape}")
        if self.W.shape != (config.feature_dim, config.num_classes):
            raise ShapeError(f"decision weights have shape {self.W.shape}")
        if (self.b is not None) != config.use_bias:
            raise ShapeError("decision bias presence does not match config.use_bias")
        if self.b is not None and self.b.shape != (config.num_classes,):
            raise ShapeError(f"decision bias has shape {self.b.shape}")


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]  # input to each encoder affine map
    z: np.ndarray
    recorded_norms: np.ndarray
    z_norm: np.ndarray | None
    logits: np.ndarray
    softmax: np.ndarray

    @property
    def features(self) -> np.ndarray:
        """What the decision layer actually consumed."""
        return self.z if self.z_norm is None else self.z_norm


@dataclass
class Gradients:
    enc_weights: list[np.ndarray]
    enc_biases: list[np.ndarray]
    W: np.ndarray
    b: np.ndarray | None
    dL_dz: np.ndarray
    loss: float = field(default=float("nan"))

    def arrays(self) -> list[np.ndarray]:
        out = [*self.enc_weights, *self.enc_biases, self.W]
        if self.b is not None:
            out.append(self.b)
        return out


def leaky_relu(u: np.ndarray, slope: float) -> np.ndarray:
    return np.where(u > 0, u, slope * u)


def l2_normalize_rows(z, epsilon: float = 1e-12) -> np.ndarray:
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    z = as_matrix(z, "z")
    denom = np.maximum(row_l2_norms(z), epsilon)
    return z / denom[:, None]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """He-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in config.layer_dims:
        ws.append(rng.normal((fan_in, fan_out), np.sqrt(2.0 / fan_in)))
        bs.append(np.zeros(fan_out))
    W = rng.normal((config.feature_dim, config.num_classes), np.sqrt(2.0 / config.feature_dim))
    b = np.zeros(config.num_classes) if config.use_bias else None
    return ModelParams(tuple(ws), tuple(bs), W, b)


def forward(params: ModelParams, config: ModelConfig, x) -> ForwardTrace:
    x = as_matrix(x, "x")
    if x.shape[1] != config.input_dim:
        raise ShapeError(f"x has {x.shape[1]} columns, model expects {config.input_dim}")
    params.check(config)

    h = x
    pre, acts = [], []
    last = len(params.enc_weights) - 1
    for i, (w, b) in enumerate(zip(params.enc_weights, params.enc_biases)):
        acts.append(h)
        u = h @ w + b
        if i < last:
            pre.append(u)
            h = leaky_relu(u, config.leaky_slope)
        else:
            h = u
    z = h
    recorded = row_l2_norms(z).copy()

    z_norm = l2_normalize_rows(z, config.epsilon) if config.normalize else None
    feats = z if z_norm is None else z_norm
    logits = feats @ params.W
    if params.b is not None:
        logits = logits + params.b
    return ForwardTrace(x, pre, acts, z, recorded, z_norm, logits, softmax(logits))


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels must lie in [0, {k - 1}]")
    labels = labels.astype(np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def backward(params: ModelParams, config: ModelConfig, trace: ForwardTrace, labels) -> Gradients:
    n = trace.z.shape[0]
    if trace.z.shape[1] != config.feature_dim or trace.logits.shape[1] != config.num_classes:
        raise ShapeError("trace does not match model config")
    if len(trace.activations) != len(params.enc_weights):
        raise ShapeError("trace depth does not match parameters")
    loss, g_logits = softmax_cross_entropy(trace.logits, labels)

    feats = trace.features
    gW = feats.T @ g_logits
    gb = g_logits.sum(axis=0) if params.b is not None else None
    g_feats = g_logits @ params.W.T

    if config.normalize:
        norms = trace.recorded_norms
        big = norms > config.epsilon
        g_z = g_feats / config.epsilon
        zhat = trace.z_norm[big]
        g = g_feats[big]
        # (I - zhat zhat^T) g / ||z||
        proj = g - zhat * np.einsum("ij,ij->i", zhat, g)[:, None]
        g_z[big] = proj / norms[big][:, None]
    else:
        g_z = g_feats.copy()

    gws, gbs = [], []
    g_h = g_z
    for i in range(len(params.enc_weights) - 1, -1, -1):
        gws.append(trace.activations[i].T @ g_h)
        gbs.append(g_h.sum(axis=0))
        if i > 0:
            g_act = g_h @ params.enc_weights[i].T
            u = trace.pre_activations[i - 1]
            g_h = g_act * np.where(u > 0, 1.0, config.leaky_slope)
    gws.reverse()
    gbs.reverse()
    assert g_z.shape == (n, config.feature_dim)
    return Gradients(gws, gbs, gW, gb, g_z, loss)


def loss_of(params: ModelParams, config: ModelConfig, x, labels) -> float:
    return softmax_cross_entropy(forward(params, config, x).logits, labels)[0]


def with_normalize(config: ModelConfig, normalize: bool) -> ModelConfig:
    return replace(config, normalize=normalize)
