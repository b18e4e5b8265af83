"""
Compact convolutional autoencoder on numpy arrays

Encoder: four (conv 4x4 stride 2 pad 1 -> batch norm -> ReLU) blocks.
Decoder: mirrored conv-transpose blocks, the last one ending in a sigmoid.
No skip connections. Forward keeps an activation cache; backward walks it
in reverse and returns gradients for every trainable tensor.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Literal, Mapping, MutableMapping, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ModelError

logger = logging.getLogger(__name__)

KERNEL = 4
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
DEFAULT_CHANNELS = (32, 64, 128, 256)

Mode = Literal["train", "eval"]


class LayerKind(str, Enum):
    CONV = "conv4x4s2"
    CONV_TRANSPOSE = "convtranspose4x4s2"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int
    out_channels: int
    name: str

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "in": self.in_channels, "out": self.out_channels, "name": self.name}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LayerSpec":
        return cls(LayerKind(d["kind"]), int(d["in"]), int(d["out"]), str(d["name"]))


def build_architecture(channels: tuple[int, ...] = DEFAULT_CHANNELS, in_channels: int = 3) -> tuple[LayerSpec, ...]:
    """Ordered layer list for an encoder of the given widths and its mirror"""
    if len(channels) != 4:
        raise ModelError("bad_architecture", f"Expected four encoder widths, got {channels}")

    layers: list[LayerSpec] = []
    prev = in_channels
    for i, width in enumerate(channels):
        layers += [
            LayerSpec(LayerKind.CONV, prev, width, f"enc{i}.conv"),
            LayerSpec(LayerKind.BATCHNORM, width, width, f"enc{i}.bn"),
            LayerSpec(LayerKind.RELU, width, width, f"enc{i}.relu"),
        ]
        prev = width

    targets = list(reversed(channels[:-1])) + [in_channels]
    for j, width in enumerate(targets):
        layers.append(LayerSpec(LayerKind.CONV_TRANSPOSE, prev, width, f"dec{j}.convt"))
        if j < len(targets) - 1:
            layers += [
                LayerSpec(LayerKind.BATCHNORM, width, width, f"dec{j}.bn"),
                LayerSpec(LayerKind.RELU, width, width, f"dec{j}.relu"),
            ]
        else:
            layers.append(LayerSpec(LayerKind.SIGMOID, width, width, f"dec{j}.sigmoid"))
        prev = width
    return tuple(layers)


@dataclass
class ModelParams:
    """Learnable tensors and batch-norm running statistics, keyed by name"""
    architecture: tuple[LayerSpec, ...]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def trainable_names(self) -> list[str]:
        return [n for n in self.tensors if not n.endswith((".running_mean", ".running_var"))]

    def num_parameters(self) -> int:
        return int(sum(self.tensors[n].size for n in self.trainable_names))

    def signature(self) -> tuple:
        return tuple((n, t.shape) for n, t in self.tensors.items())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.architecture, {n: t.astype(dtype) for n, t in self.tensors.items()})

    @property
    def latent_channels(self) -> int:
        return [l for l in self.architecture if l.kind is LayerKind.CONV][-1].out_channels


def init_params(seed: int, channels: tuple[int, ...] = DEFAULT_CHANNELS, dtype=np.float32) -> ModelParams:
    """
    Kaiming-style initialization, deterministic per seed

    Conv and conv-transpose weights ~ N(0, 2 / (in_channels * 16)), biases 0,
    batch norm scale 1 / shift 0 / running mean 0 / running var 1.
    """
    rng = np.random.default_rng(seed)
    arch = build_architecture(channels)
    tensors: dict[str, np.ndarray] = {}
    for layer in arch:
        if layer.kind in (LayerKind.CONV, LayerKind.CONV_TRANSPOSE):
            fan_in = layer.in_channels * KERNEL * KERNEL
            shape = (layer.out_channels, layer.in_channels, KERNEL, KERNEL)
            tensors[f"{layer.name}.weight"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
            tensors[f"{layer.name}.bias"] = np.zeros(layer.out_channels, dtype=dtype)
        elif layer.kind is LayerKind.BATCHNORM:
            c = layer.out_channels
            tensors[f"{layer.name}.scale"] = np.ones(c, dtype=dtype)
            tensors[f"{layer.name}.shift"] = np.zeros(c, dtype=dtype)
            tensors[f"{layer.name}.running_mean"] = np.zeros(c, dtype=dtype)
            tensors[f"{layer.name}.running_var"] = np.ones(c, dtype=dtype)
    params = ModelParams(arch, tensors)
    logger.debug("Initialized %d parameters, latent width %d (seed=%d)",
                 params.num_parameters(), params.latent_channels, seed)
    return params


# ---------------------------------------------------------------------------
# Layer kernels
# ---------------------------------------------------------------------------

def _windows(padded: np.ndarray) -> np.ndarray:
    """(N, C, 2H+2, 2W+2) -> strided (N, C, H, W, 4, 4) view of stride-2 4x4 windows"""
    return sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))[:, :, ::2, ::2]


def _scatter(cols: np.ndarray) -> np.ndarray:
    """Adjoint of _windows on a padded grid: (N, H, W, C, 4, 4) -> (N, C, 2H, 2W), padding cropped"""
    n, h, w, c = cols.shape[:4]
    out = np.zeros((n, c, 2 * h + 2, 2 * w + 2), dtype=cols.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            out[:, :, i:i + 2 * h:2, j:j + 2 * w:2] += cols[..., i, j].transpose(0, 3, 1, 2)
    return out[:, :, 1:-1, 1:-1]


def _pad(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


def conv_forward(x, weight, bias):
    """4x4 stride-2 pad-1 convolution; spatial size halves exactly"""
    win = _windows(_pad(x))
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return out + bias[None, :, None, None], win


def conv_backward(grad, win, weight):
    d_weight = np.tensordot(grad, win, axes=([0, 2, 3], [0, 2, 3]))
    d_bias = grad.sum(axis=(0, 2, 3))
    d_x = _scatter(np.tensordot(grad, weight, axes=([1], [0])))  # (N, H, W, C, 4, 4)
    return d_x, d_weight, d_bias


def convt_forward(x, weight, bias):
    """4x4 stride-2 pad-1 transposed convolution; spatial size doubles exactly"""
    cols = np.tensordot(x, weight, axes=([1], [1]))  # (N, H, W, O, 4, 4)
    return _scatter(cols) + bias[None, :, None, None]


def convt_backward(grad, x, weight):
    win = _windows(_pad(grad))  # (N, O, H, W, 4, 4)
    d_x = np.tensordot(win, weight, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    d_weight = np.tensordot(win, x, axes=([0, 2, 3], [0, 2, 3])).transpose(0, 3, 1, 2)
    d_bias = grad.sum(axis=(0, 2, 3))
    return d_x, d_weight, d_bias


def batchnorm_forward(x, scale, shift, running_mean, running_var, mode: Mode):
    """Per-channel batch norm; train mode updates the running stats in place"""
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    return scale[None, :, None, None] * x_hat + shift[None, :, None, None], (x_hat, inv_std)


def batchnorm_backward(grad, x_hat, inv_std, scale):
    """Train-mode backward, including the path through the batch statistics"""
    m = grad.shape[0] * grad.shape[2] * grad.shape[3]
    d_scale = (grad * x_hat).sum(axis=(0, 2, 3))
    d_shift = grad.sum(axis=(0, 2, 3))
    d_xhat = grad * scale[None, :, None, None]
    d_x = (inv_std[None, :, None, None] / m) * (
        m * d_xhat
        - d_xhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - x_hat * (d_xhat * x_hat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return d_x, d_scale, d_shift


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(grad, active):
    return grad * active


def sigmoid_forward(x):
    y = expit(x)
    return y, y


def sigmoid_backward(grad, y):
    return grad * y * (1.0 - y)


# ---------------------------------------------------------------------------
# Network passes
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Activations retained by a forward pass for the backward pass"""
    signature: tuple
    mode: Mode
    entries: list[tuple[LayerSpec, Any]]
    output: np.ndarray


def _check_input(params: ModelParams, batch: np.ndarray, mode: Mode) -> None:
    if batch.ndim != 4 or batch.shape[1] != params.architecture[0].in_channels:
        raise ModelError("bad_input", f"Expected (N, {params.architecture[0].in_channels}, H, W) input, got {batch.shape}")
    if batch.shape[2] % 16 or batch.shape[3] % 16:
        raise ModelError("bad_input", f"Spatial dims must be multiples of 16, got {batch.shape[2:]}")
    if mode == "train" and batch.shape[0] < 2:
        raise ModelError("batch_too_small", "Train-mode forward needs at least 2 images for batch statistics")


def _run(params: ModelParams, batch: np.ndarray, mode: Mode, layers) -> tuple[np.ndarray, list]:
    t = params.tensors
    x = batch
    entries = []
    for layer in layers:
        name = layer.name
        if layer.kind is LayerKind.CONV:
            y, win = conv_forward(x, t[f"{name}.weight"], t[f"{name}.bias"])
            entries.append((layer, win))
        elif layer.kind is LayerKind.CONV_TRANSPOSE:
            y = convt_forward(x, t[f"{name}.weight"], t[f"{name}.bias"])
            entries.append((layer, x))
        elif layer.kind is LayerKind.BATCHNORM:
            y, stats = batchnorm_forward(
                x, t[f"{name}.scale"], t[f"{name}.shift"],
                t[f"{name}.running_mean"], t[f"{name}.running_var"], mode,
            )
            entries.append((layer, stats))
        elif layer.kind is LayerKind.RELU:
            y, active = relu_forward(x)
            entries.append((layer, active))
        else:
            y, saved = sigmoid_forward(x)
            entries.append((layer, saved))
        x = y
    return x, entries


def forward(params: ModelParams, batch: np.ndarray, mode: Mode = "eval") -> tuple[np.ndarray, ForwardCache]:
    """
    Reconstructs a batch

    Args:
        params: Model parameters (batch-norm running stats updated in train mode)
        batch: (N, 3, H, W) with H, W multiples of 16
        mode: "train" uses batch statistics, "eval" running statistics

    Returns:
        (reconstruction of the same shape, cache for backward)
    """
    _check_input(params, batch, mode)
    out, entries = _run(params, batch, mode, params.architecture)
    return out, ForwardCache(params.signature(), mode, entries, out)


def encode(params: ModelParams, batch: np.ndarray, mode: Mode = "eval") -> np.ndarray:
    """Latent map: the encoder output, (N, latent_channels, H/16, W/16)"""
    _check_input(params, batch, mode)
    n_encoder = sum(1 for l in params.architecture if l.name.startswith("enc"))
    latent, _ = _run(params, batch, mode, params.architecture[:n_encoder])
    return latent


def backward(params: ModelParams, cache: ForwardCache, grad_output: np.ndarray) -> dict[str, np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss w.r.t. every trainable tensor

    Args:
        params: The parameters the cached forward pass used
        cache: Cache from a train-mode forward
        grad_output: dLoss/dReconstruction, same shape as the reconstruction

    Returns:
        Gradient per trainable tensor name; key "input" holds dLoss/dInput
    """
    if cache.signature != params.signature():
        raise ModelError("cache_mismatch", "Forward cache was produced with different parameters")
    if cache.mode != "train":
        raise ModelError("cache_mismatch", "Backward needs a cache from a train-mode forward")
    if grad_output.shape != cache.output.shape:
        raise ModelError("bad_gradient", f"Gradient shape {grad_output.shape} != output shape {cache.output.shape}")

    t = params.tensors
    grads: dict[str, np.ndarray] = {}
    g = grad_output
    for layer, saved in reversed(cache.entries):
        name = layer.name
        if layer.kind is LayerKind.SIGMOID:
            g = sigmoid_backward(g, saved)
        elif layer.kind is LayerKind.RELU:
            g = relu_backward(g, saved)
        elif layer.kind is LayerKind.BATCHNORM:
            x_hat, inv_std = saved
            g, grads[f"{name}.scale"], grads[f"{name}.shift"] = batchnorm_backward(g, x_hat, inv_std, t[f"{name}.scale"])
        elif layer.kind is LayerKind.CONV_TRANSPOSE:
            g, grads[f"{name}.weight"], grads[f"{name}.bias"] = convt_backward(g, saved, t[f"{name}.weight"])
        else:
            g, grads[f"{name}.weight"], grads[f"{name}.bias"] = conv_backward(g, saved, t[f"{name}.weight"])
    grads["input"] = g
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimState:
    """First/second-moment accumulators per trainable tensor and the step counter"""
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Union[ModelParams, Mapping[str, np.ndarray]]) -> "OptimState":
        tensors = _tensor_map(params)
        names = params.trainable_names if isinstance(params, ModelParams) else list(tensors)
        return cls(
            m={n: np.zeros_like(tensors[n]) for n in names},
            v={n: np.zeros_like(tensors[n]) for n in names},
        )


def _tensor_map(params) -> MutableMapping[str, np.ndarray]:
    return params.tensors if isinstance(params, ModelParams) else params


def adam_step(params, grads: Mapping[str, np.ndarray], state: OptimState, lr: float):
    """
    One bias-corrected Adam update, in place

    Args:
        params: ModelParams or a name -> array mapping
        grads: Gradient per tensor in state
        state: Optimizer state; its step counter is incremented
        lr: Learning rate

    Returns:
        (params, state)
    """
    tensors = _tensor_map(params)
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.step
    bc2 = 1.0 - ADAM_BETA2 ** state.step
    for name, m in state.m.items():
        g = grads[name]
        if g.shape != m.shape:
            raise ModelError("bad_gradient", f"Gradient for {name} has shape {g.shape}, expected {m.shape}")
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        tensors[name] -= (lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)).astype(tensors[name].dtype)
    return params, state
