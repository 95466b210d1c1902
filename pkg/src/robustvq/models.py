"""Small encoder / decoder / classifier stacks with hand-written gradients.

The model is ``encoder -> [batch norm] -> [VQ bottleneck] -> head`` where
the head is either a discretized-likelihood decoder (autoencoding) or a
softmax classifier. Losses are batch means in nats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .normalization import BatchNormState, batchnorm_backward, batchnorm_forward
from .numerics import as_matrix
from .quantizer import (
    Codebook,
    LossBreakdown,
    QuantizerConfig,
    quantize,
    straight_through_backward,
    vq_loss,
)

__all__ = [
    "Layer",
    "MlpStack",
    "mlp",
    "encoder_forward",
    "log_softmax",
    "recon_nll",
    "classify_nll",
    "VQModel",
    "ForwardCache",
    "encode",
    "forward_from_latents",
    "model_forward",
    "full_backward",
]

_ACTS = ("tanh", "linear")


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    act: str = "tanh"

    def __post_init__(self):
        if self.act not in _ACTS:
            raise ValueError(f"unknown nonlinearity {self.act!r}")
        if self.b.shape != (self.W.shape[1],):
            raise ShapeError(f"bias shape {self.b.shape} does not match weights {self.W.shape}")


@dataclass
class MlpStack:
    layers: list

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.W.shape[1] != nxt.W.shape[0]:
                raise ShapeError(f"layer shapes do not compose: {prev.W.shape} -> {nxt.W.shape}")

    @property
    def d_in(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def d_out(self) -> int:
        return self.layers[-1].W.shape[1]

    def forward(self, x):
        x = as_matrix(x, "x")
        if x.shape[1] != self.d_in:
            raise ShapeError(f"input has {x.shape[1]} cols, stack expects {self.d_in}")
        inputs, outputs = [], []
        h = x
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.W + layer.b
            h = np.tanh(z) if layer.act == "tanh" else z
            outputs.append(h)
        return h, (inputs, outputs)

    def backward(self, grad_out, cache):
        """Returns ``(grad_in, [(dW, db), ...])`` in layer order."""
        if cache is None:
            raise ValueError("backward needs the forward cache")
        inputs, outputs = cache
        g = as_matrix(grad_out, "grad_out")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.act == "tanh":
                g = g * (1.0 - outputs[i] ** 2)
            grads[i] = (inputs[i].T @ g, g.sum(axis=0))
            g = g @ layer.W.T
        return g, grads


def mlp(sizes, rng: np.random.Generator, final_act: str = "linear") -> MlpStack:
    """Stack with tanh hidden layers and scaled-normal (1/sqrt(fan_in)) weights."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        act = final_act if i == len(sizes) - 2 else "tanh"
        layers.append(Layer(rng.standard_normal((a, b)) / np.sqrt(a), np.zeros(b), act))
    return MlpStack(layers)


def encoder_forward(x, stack: MlpStack):
    """Latents e(x) and the cache needed by ``stack.backward``."""
    return stack.forward(x)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def recon_nll(x_true, logits, levels: int, with_grad: bool = False):
    """Mean over the batch of -log p(x | q(x)) under independent per-dimension
    categoricals with ``levels`` values.

    ``x_true`` holds integer levels (n, D); ``logits`` is (n, D*levels).
    """
    x_true = np.asarray(x_true)
    n, D = x_true.shape
    logits = as_matrix(logits, "logits")
    if logits.shape != (n, D * levels):
        raise ShapeError(f"logits shape {logits.shape} != {(n, D * levels)}")
    if x_true.min() < 0 or x_true.max() >= levels:
        raise ValueError(f"level index out of range for {levels} levels")
    lp = log_softmax(logits.reshape(n, D, levels))
    picked = np.take_along_axis(lp, x_true[..., None], axis=-1)[..., 0]
    nll = float(-picked.sum() / n)
    if not with_grad:
        return nll
    grad = np.exp(lp)
    np.put_along_axis(grad, x_true[..., None], np.take_along_axis(grad, x_true[..., None], -1) - 1.0, -1)
    return nll, grad.reshape(n, D * levels) / n


def classify_nll(labels, logits, with_grad: bool = False):
    """Mean softmax cross-entropy of integer ``labels`` under ``logits`` (n, C)."""
    labels = np.asarray(labels).reshape(-1)
    logits = as_matrix(logits, "logits")
    n, C = logits.shape
    if labels.shape[0] != n:
        raise ShapeError("one label per row required")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"label out of range for {C} classes")
    lp = log_softmax(logits)
    nll = float(-lp[np.arange(n), labels].sum() / n)
    if not with_grad:
        return nll
    grad = np.exp(lp)
    grad[np.arange(n), labels] -= 1.0
    return nll, grad / n


@dataclass
class VQModel:
    """Encoder, optional batch norm, optional VQ bottleneck and a task head.

    ``codebooks is None`` means no bottleneck at all.
    """

    encoder: MlpStack
    head: MlpStack
    task: str
    levels: int = 16
    bn: BatchNormState | None = None
    codebooks: list | None = None
    qcfg: QuantizerConfig = field(default_factory=QuantizerConfig)

    @property
    def latent_dim(self) -> int:
        return self.encoder.d_out

    def params(self) -> dict:
        """Every trainable array by name (live references, not copies)."""
        p = {}
        for prefix, stack in (("enc", self.encoder), ("head", self.head)):
            for i, layer in enumerate(stack.layers):
                p[f"{prefix}.{i}.W"] = layer.W
                p[f"{prefix}.{i}.b"] = layer.b
        if self.bn is not None:
            p["bn.gain"] = self.bn.gain
            p["bn.bias"] = self.bn.bias
        for h, cb in enumerate(self.codebooks or []):
            p[f"codebook.{h}"] = cb.words
        return p

    def load_params(self, values: dict) -> None:
        """Copy arrays from ``values`` into the live parameters, in place."""
        for name, arr in self.params().items():
            arr[...] = values[name]


@dataclass
class ForwardCache:
    enc: tuple
    bn: object
    latents: np.ndarray
    quantized: np.ndarray
    assignment: object
    head: tuple
    head_grad: np.ndarray
    gamma_commit: float
    quantized_on: bool


def encode(model: VQModel, x, training: bool = True):
    """Encoder (and batch norm, when present). Returns ``(e, enc_cache, bn_cache)``."""
    e, enc_cache = model.encoder.forward(x)
    bn_cache = None
    if model.bn is not None:
        e, bn_cache = batchnorm_forward(e, model.bn, training)
    return e, enc_cache, bn_cache


def forward_from_latents(model: VQModel, e, enc_cache, bn_cache, targets,
                         quantize_on: bool = True, task_weight: float = 1.0):
    """Bottleneck, head and loss on already-encoded latents ``e``."""
    assignment = None
    if quantize_on and model.codebooks is not None:
        q, assignment = quantize(e, model.codebooks, model.qcfg)
    else:
        q = e
    out, head_cache = model.head.forward(q)
    if model.task == "autoencode":
        task, g_out = recon_nll(targets, out, model.levels, with_grad=True)
    elif model.task == "classify":
        task, g_out = classify_nll(targets, out, with_grad=True)
    else:
        raise ValueError(f"unknown task {model.task!r}")
    gamma = model.qcfg.gamma_commit if assignment is not None else 0.0
    loss = vq_loss(e, q, task_weight * task, gamma)
    cache = ForwardCache(enc_cache, bn_cache, e, q, assignment, head_cache,
                         task_weight * g_out, gamma, assignment is not None)
    return loss, cache


def model_forward(model: VQModel, x, targets, quantize_on: bool = True, training: bool = True,
                  task_weight: float = 1.0):
    """Forward pass and loss.

    ``x`` is the float encoder input; ``targets`` are integer levels
    (autoencode) or class labels (classify). With ``quantize_on=False`` (or
    no bottleneck) the latents pass through unchanged.
    Returns ``(LossBreakdown, ForwardCache)``.
    """
    e, enc_cache, bn_cache = encode(model, x, training)
    return forward_from_latents(model, e, enc_cache, bn_cache, targets, quantize_on, task_weight)


def full_backward(model: VQModel, cache: ForwardCache | None) -> dict:
    """Gradients of the total loss for every non-codebook parameter.

    The path is head -> straight-through bottleneck (plus commitment term)
    -> batch norm -> encoder. Codebook gradients come from
    :func:`robustvq.quantizer.codebook_grad`.
    """
    if cache is None:
        raise ValueError("full_backward needs the forward cache")
    grads = {}
    g_q, head_grads = model.head.backward(cache.head_grad, cache.head)
    for i, (dW, db) in enumerate(head_grads):
        grads[f"head.{i}.W"] = dW
        grads[f"head.{i}.b"] = db
    if cache.quantized_on:
        g_e = straight_through_backward(g_q, cache.latents, cache.quantized, cache.gamma_commit)
    else:
        g_e = g_q
    if model.bn is not None:
        g_e, g_gain, g_bias = batchnorm_backward(g_e, cache.bn)
        grads["bn.gain"] = g_gain
        grads["bn.bias"] = g_bias
    _, enc_grads = model.encoder.backward(g_e, cache.enc)
    for i, (dW, db) in enumerate(enc_grads):
        grads[f"enc.{i}.W"] = dW
        grads[f"enc.{i}.b"] = db
    return grads
