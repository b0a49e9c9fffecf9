"""Small convolutional network kernel with exact reverse-mode gradients.

Every layer is ``conv(same padding, stride 1) -> [batchnorm] -> activation ->
[dropout]``. A forward pass in train mode returns a tape that `backward` uses to
compute exact parameter gradients and the gradient with respect to the input.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Mode = Literal["train", "infer"]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NonFiniteError(FloatingPointError):
    def __init__(self, msg: str, layer: int | None = None, iteration: int | None = None):
        super().__init__(msg)
        self.layer = layer
        self.iteration = iteration


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    activation: str = "relu"
    use_batchnorm: bool = True
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1 or min(self.kernel) < 1:
            raise ValueError(f"invalid layer dims: {self}")
        if self.activation not in ("relu", "sigmoid", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass(frozen=True)
class NetSpec:
    input_channels: int
    hidden: tuple[ConvLayerSpec, ...]
    output: ConvLayerSpec
    output_shape: tuple[int, int]

    def __post_init__(self):
        layers = self.layers
        prev = self.input_channels
        for k, layer in enumerate(layers):
            if layer.in_channels != prev:
                raise ValueError(f"layer {k} expects {layer.in_channels} channels, gets {prev}")
            prev = layer.out_channels
        if self.output.out_channels != 1 or self.output.activation != "sigmoid":
            raise ValueError("output layer must be a single-channel sigmoid map")

    @property
    def layers(self) -> tuple[ConvLayerSpec, ...]:
        return tuple(self.hidden) + (self.output,)

    @classmethod
    def conv_stack(
        cls,
        input_channels: int,
        output_shape: tuple[int, int],
        channels: tuple[int, ...] = (16, 32, 32, 32, 16),
        kernel: tuple[int, int] = (3, 3),
        dropout_rate: float = 0.1,
        use_batchnorm: bool = True,
    ) -> "NetSpec":
        """Hidden 3x3 ReLU conv layers followed by a 1x1 sigmoid output layer."""
        hidden = []
        prev = input_channels
        for c in channels:
            hidden.append(ConvLayerSpec(prev, c, kernel, "relu", use_batchnorm, dropout_rate))
            prev = c
        out = ConvLayerSpec(prev, 1, (1, 1), "sigmoid", False, 0.0)
        return cls(input_channels, tuple(hidden), out, tuple(output_shape))


@dataclass(frozen=True, eq=False)
class NetParams:
    """Trainable arrays plus batch-norm running statistics, keyed ``"<layer>.<name>"``."""

    weights: dict[str, np.ndarray]
    stats: dict[str, np.ndarray] = field(default_factory=dict)

    def with_stats(self, stats: dict[str, np.ndarray]) -> "NetParams":
        return replace(self, stats={**self.stats, **stats})

    def arrays(self) -> dict[str, np.ndarray]:
        return {**self.weights, **self.stats}

    def __eq__(self, other):
        if not isinstance(other, NetParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def init_params(spec: NetSpec, seed) -> NetParams:
    """He-style init: weights ~ N(0, 1/fan_in), zero biases, identity batch-norm."""
    rng = np.random.default_rng(seed)
    weights, stats = {}, {}
    for k, layer in enumerate(spec.layers):
        kh, kw = layer.kernel
        fan_in = layer.in_channels * kh * kw
        weights[f"{k}.weight"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (layer.out_channels, layer.in_channels, kh, kw))
        weights[f"{k}.bias"] = np.zeros(layer.out_channels)
        if layer.use_batchnorm:
            weights[f"{k}.gamma"] = np.ones(layer.out_channels)
            weights[f"{k}.beta"] = np.zeros(layer.out_channels)
            stats[f"{k}.running_mean"] = np.zeros(layer.out_channels)
            stats[f"{k}.running_var"] = np.ones(layer.out_channels)
    return NetParams(weights, stats)


def _pads(kernel):
    kh, kw = kernel
    return (kh - 1) // 2, (kw - 1) // 2


def _im2col(x, kernel):
    """(B, H, W, C) -> (B*H*W, C*kh*kw) patches with same padding."""
    kh, kw = kernel
    if kh == kw == 1:
        return x.reshape(-1, x.shape[3])
    ph, pw = _pads(kernel)
    xp = np.pad(x, ((0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw), (0, 0)))
    B, H, W, C = x.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # B, H, W, C, kh, kw
    return win.reshape(B * H * W, C * kh * kw)


def _col2im(dcols, x_shape, kernel):
    kh, kw = kernel
    B, H, W, C = x_shape
    if kh == kw == 1:
        return dcols.reshape(B, H, W, C)
    ph, pw = _pads(kernel)
    d = dcols.reshape(B, H, W, C, kh, kw)
    dxp = np.zeros((B, H + kh - 1, W + kw - 1, C))
    for a in range(kh):
        for b in range(kw):
            dxp[:, a:a + H, b:b + W, :] += d[..., a, b]
    return dxp[:, ph:ph + H, pw:pw + W, :]


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Tape:
    spec: NetSpec
    params: NetParams
    input_shape: tuple
    caches: list
    new_stats: dict[str, np.ndarray]


def forward(spec: NetSpec, params: NetParams, x: np.ndarray, mode: Mode = "train", rng=None):
    """Run the network on ``x`` of shape (batch, channels, N, M).

    Returns ``(out, tape)`` with ``out`` of shape (batch, N, M). In train mode
    batch-norm uses batch statistics and dropout draws its masks from `rng`;
    updated running statistics are returned in ``tape.new_stats`` and never
    written into `params`. Infer mode uses running statistics and no dropout.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 4 or x.shape[1] != spec.input_channels or x.shape[2:] != tuple(spec.output_shape):
        raise ValueError(
            f"input shape {x.shape} does not match (batch, {spec.input_channels}, {spec.output_shape[0]}, {spec.output_shape[1]})"
        )
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite network input", layer=-1)
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng(0)
    w = params.weights
    caches, new_stats = [], {}
    h = x.transpose(0, 2, 3, 1)  # channels-last internally
    for k, layer in enumerate(spec.layers):
        c = {}
        Wt = w[f"{k}.weight"]
        cols = _im2col(h, layer.kernel)
        z = (cols @ Wt.reshape(layer.out_channels, -1).T + w[f"{k}.bias"]).reshape(*h.shape[:3], -1)
        c["cols"], c["in_shape"] = cols, h.shape
        if layer.use_batchnorm:
            if train:
                mu = z.mean(axis=(0, 1, 2))
                var = z.var(axis=(0, 1, 2))
                n = z.size // z.shape[3]
                unbiased = var * n / max(n - 1, 1)
                new_stats[f"{k}.running_mean"] = (1 - BN_MOMENTUM) * params.stats[f"{k}.running_mean"] + BN_MOMENTUM * mu
                new_stats[f"{k}.running_var"] = (1 - BN_MOMENTUM) * params.stats[f"{k}.running_var"] + BN_MOMENTUM * unbiased
            else:
                mu, var = params.stats[f"{k}.running_mean"], params.stats[f"{k}.running_var"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv_std
            c["xhat"], c["inv_std"] = xhat, inv_std
            z = w[f"{k}.gamma"] * xhat + w[f"{k}.beta"]
        if layer.activation == "relu":
            c["active"] = z > 0
            z = np.where(c["active"], z, 0.0)
        elif layer.activation == "sigmoid":
            z = _sigmoid(z)
            c["sig"] = z
        if train and layer.dropout_rate > 0:
            keep = 1.0 - layer.dropout_rate
            c["drop"] = (rng.random(z.shape) < keep) / keep
            z = z * c["drop"]
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"non-finite activation in layer {k}", layer=k)
        caches.append(c)
        h = z
    tape = Tape(spec, params, x.shape, caches, new_stats)
    return h[..., 0], tape


def backward(tape: Tape, grad_out: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of ``sum(grad_out * out)``.

    Returns ``(param_grads, input_grad)``. Batch-norm gradients assume the tape
    came from a train-mode pass.
    """
    spec, w = tape.spec, tape.params.weights
    B, _, H, W = tape.input_shape
    grad_out = np.asarray(grad_out, dtype=float)
    if grad_out.shape != (B, H, W):
        raise ValueError(f"gradient shape {grad_out.shape} does not match output {(B, H, W)}")
    g = grad_out[..., None]
    grads = {}
    for k in range(len(spec.layers) - 1, -1, -1):
        layer, c = spec.layers[k], tape.caches[k]
        if "drop" in c:
            g = g * c["drop"]
        if layer.activation == "relu":
            g = np.where(c["active"], g, 0.0)
        elif layer.activation == "sigmoid":
            s = c["sig"]
            g = g * s * (1.0 - s)
        if layer.use_batchnorm:
            xhat, inv_std = c["xhat"], c["inv_std"]
            grads[f"{k}.gamma"] = (g * xhat).sum(axis=(0, 1, 2))
            grads[f"{k}.beta"] = g.sum(axis=(0, 1, 2))
            dxhat = g * w[f"{k}.gamma"]
            n = g.size // g.shape[3]
            s1 = dxhat.sum(axis=(0, 1, 2))
            s2 = (dxhat * xhat).sum(axis=(0, 1, 2))
            g = inv_std / n * (n * dxhat - s1 - xhat * s2)
        O = layer.out_channels
        g2 = g.reshape(-1, O)
        Wt = w[f"{k}.weight"]
        grads[f"{k}.weight"] = (g2.T @ c["cols"]).reshape(Wt.shape)
        grads[f"{k}.bias"] = g2.sum(axis=0)
        g = _col2im(g2 @ Wt.reshape(O, -1), c["in_shape"], layer.kernel)
    return grads, g.transpose(0, 3, 1, 2)


@dataclass(frozen=True, eq=False)
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: NetParams, learning_rate: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        zeros = {k: np.zeros_like(a) for k, a in params.weights.items()}
        return cls(0, zeros, {k: a.copy() for k, a in zeros.items()}, learning_rate, beta1, beta2, eps)


def adam_step(params: NetParams, grads: dict[str, np.ndarray], state: AdamState) -> tuple[NetParams, AdamState]:
    if grads.keys() != params.weights.keys():
        raise ValueError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params.weights)}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_w, new_m, new_v = {}, {}, {}
    for k, p in params.weights.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_w[k] = p - state.learning_rate * mhat / (np.sqrt(vhat) + state.eps)
        new_m[k], new_v[k] = m, v
    return replace(params, weights=new_w), replace(state, step=t, m=new_m, v=new_v)


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays (and a JSON metadata block) to an ``.npz`` container."""
    payload = dict(arrays)
    if meta is not None:
        payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict | None]:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
        meta = json.loads(str(z["__meta__"])) if "__meta__" in z.files else None
    return arrays, meta


def save_params(path, params: NetParams) -> None:
    save_arrays(path, {f"w/{k}": v for k, v in params.weights.items()} | {f"s/{k}": v for k, v in params.stats.items()})


def load_params(path) -> NetParams:
    arrays, _ = load_arrays(path)
    return split_params(arrays)


def split_params(arrays: dict[str, np.ndarray], prefix: str = "") -> NetParams:
    w = {k[len(prefix) + 2:]: v for k, v in arrays.items() if k.startswith(prefix + "w/")}
    s = {k[len(prefix) + 2:]: v for k, v in arrays.items() if k.startswith(prefix + "s/")}
    return NetParams(w, s)
