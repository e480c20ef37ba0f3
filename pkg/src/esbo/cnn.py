"""Deep 1-D convolutional profit surrogate: forward, exact gradients, storage.

The network maps a schedule of length ``input_length`` (one input channel) to
a scalar profit estimate through a stack of weight-shared convolutions with
Softplus(beta) activations between them.  All arithmetic is float64.  The
public interface works in original units; normalization (input scaling and
target de-standardization) is composed into the forward map.

Internally activations are held channels-last ``(batch, length, channels)``
and each convolution runs as one GEMM on a gathered patch matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from esbo.dataset import Normalization

CHECKPOINT_VERSION = 1


class ModelFormatError(ValueError):
    """Checkpoint file malformed or inconsistent with its own metadata."""


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride) < 1:
            raise ValueError(f"non-positive convolution hyperparameter: {self}")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")

    def out_length(self, in_length: int) -> int:
        out = (in_length + 2 * self.padding - self.kernel) // self.stride + 1
        if out < 1:
            raise ValueError(
                f"kernel {self.kernel} / stride {self.stride} / padding {self.padding} "
                f"leaves no output positions for input length {in_length}"
            )
        return out

    @property
    def parameter_count(self) -> int:
        return self.in_channels * self.kernel * self.out_channels + self.out_channels


@dataclass
class ConvLayer:
    spec: ConvLayerSpec
    weight: np.ndarray = None  # (out_channels, in_channels, kernel)
    bias: np.ndarray = None    # (out_channels,), shared across positions

    def __post_init__(self):
        s = self.spec
        if self.weight is None:
            self.weight = np.zeros((s.out_channels, s.in_channels, s.kernel))
        if self.bias is None:
            self.bias = np.zeros(s.out_channels)
        if self.weight.shape != (s.out_channels, s.in_channels, s.kernel):
            raise ValueError(f"weight shape {self.weight.shape} does not match {s}")
        if self.bias.shape != (s.out_channels,):
            raise ValueError(f"bias shape {self.bias.shape} does not match {s}")


def softplus(z, beta: float):
    """Numerically stable (1/beta) * ln(1 + exp(beta z))."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-beta * np.abs(z))) / beta


def _softplus_with_cache(z, beta):
    e = np.abs(z)
    e *= -beta
    np.exp(e, out=e)
    pos = z >= 0
    out = np.log1p(e)
    out *= 1.0 / beta
    np.add(out, np.maximum(z, 0.0), out=out)
    return out, e, pos


def _sigmoid_from_cache(e, pos):
    # softplus'(z) = sigmoid(beta z); reuses e = exp(-beta |z|) from the forward
    num = np.where(pos, 1.0, e)
    num /= 1.0 + e
    return num


class ConvSurrogate:
    """Profit surrogate; immutable during forward/gradient evaluation."""

    def __init__(self, layers: list[ConvLayer], beta: float, input_length: int,
                 normalization: Normalization | None = None):
        if beta <= 0:
            raise ValueError("beta must be > 0")
        self.layers = layers
        self.beta = beta
        self.input_length = input_length
        if normalization is None:
            normalization = Normalization(np.ones(input_length), 0.0, 1.0)
        self.normalization = normalization
        self.lengths = self._chain_lengths()
        if self.lengths[-1] != 1 or layers[-1].spec.out_channels != 1:
            raise ValueError("network must end in a single scalar output")
        if layers[0].spec.in_channels != 1:
            raise ValueError("input layer must carry one channel")

    def _chain_lengths(self) -> list[int]:
        lengths = [self.input_length]
        for i, layer in enumerate(self.layers):
            if i and layer.spec.in_channels != self.layers[i - 1].spec.out_channels:
                raise ValueError(f"channel mismatch between layers {i - 1} and {i}")
            lengths.append(layer.spec.out_length(lengths[-1]))
        return lengths

    # ---- counts -----------------------------------------------------------

    def neuron_counts(self) -> list[int]:
        """Neurons per layer, input layer first: N_k = L_k * C_k."""
        channels = [1] + [layer.spec.out_channels for layer in self.layers]
        return [length * ch for length, ch in zip(self.lengths, channels)]

    def parameter_count(self) -> int:
        return sum(layer.spec.parameter_count for layer in self.layers)

    # ---- core computation (normalized space) ------------------------------

    def _forward_core(self, x: np.ndarray, keep: bool = False):
        """x: (B, input_length) normalized; returns (y (B,), caches or None)."""
        b = x.shape[0]
        h = np.ascontiguousarray(x)[:, :, None]  # (B, L, 1)
        caches = [] if keep else None
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z2, cols2, l_out = _conv_forward(h, layer)
            if i == last:
                act2, cache_e, cache_pos = z2, None, None
            else:
                act2, cache_e, cache_pos = _softplus_with_cache(z2, self.beta)
            if keep:
                caches.append((cols2, cache_e, cache_pos, h.shape))
            h = act2.reshape(b, l_out, layer.spec.out_channels)
        y = h[:, 0, 0]
        return y, caches

    def _backward_core(self, caches, dy: np.ndarray, want_param_grads: bool,
                       want_input_grad: bool):
        """Reverse accumulation from dL/dy (B,). Returns (param_grads, dx)."""
        b = dy.shape[0]
        dh = dy.reshape(b * 1, 1)  # final layer: L_out = 1, C_out = 1
        param_grads = [None] * len(self.layers) if want_param_grads else None
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            layer = self.layers[i]
            cols2, cache_e, cache_pos, in_shape = caches[i]
            if i == last:
                dz2 = dh
            else:
                dz2 = _sigmoid_from_cache(cache_e, cache_pos)
                dz2 *= dh
            if want_param_grads:
                s = layer.spec
                dw2 = cols2.T @ dz2  # (S*C_in, C_out)
                db = dz2.sum(axis=0)
                dw = dw2.reshape(s.kernel, s.in_channels, s.out_channels).transpose(2, 1, 0)
                param_grads[i] = (dw, db)
            if i == 0 and not want_input_grad:
                dh = None
                break
            dh = _conv_backward_input(dz2, layer, in_shape)
        dx = None
        if want_input_grad:
            dx = dh.reshape(caches[0][3][0], self.input_length)
        return param_grads, dx

    def predict_normalized(self, x: np.ndarray) -> np.ndarray:
        y, _ = self._forward_core(np.atleast_2d(x), keep=False)
        return y

    def loss_and_param_grads(self, x: np.ndarray, t: np.ndarray):
        """Normalized-space MSE and its exact parameter gradients (trainer path)."""
        y, caches = self._forward_core(x, keep=True)
        resid = y - t
        loss = float(np.mean(resid**2))
        dy = (2.0 / x.shape[0]) * resid
        grads, _ = self._backward_core(caches, dy, want_param_grads=True,
                                       want_input_grad=False)
        return loss, grads

    # ---- public interface (original units) --------------------------------

    def _normalize_input(self, q: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(q, dtype=float)) / self.normalization.input_scale

    def forward(self, q):
        """Profit estimate in original units; accepts (H,) or (N, H)."""
        q = np.asarray(q, dtype=float)
        y, _ = self._forward_core(self._normalize_input(q), keep=False)
        out = self.normalization.target_mean + self.normalization.target_std * y
        return float(out[0]) if q.ndim == 1 else out

    def grad_input(self, q):
        """Exact gradient of the profit estimate with respect to the schedule."""
        q = np.asarray(q, dtype=float)
        _, grads = self.value_and_grad_input(np.atleast_2d(q))
        return grads[0] if q.ndim == 1 else grads

    def value_and_grad_input(self, q: np.ndarray):
        """Batched (values (N,), gradients (N, H)) in original units."""
        x = self._normalize_input(q)
        y, caches = self._forward_core(x, keep=True)
        dy = np.full(y.shape[0], self.normalization.target_std)
        _, dx = self._backward_core(caches, dy, want_param_grads=False,
                                    want_input_grad=True)
        values = self.normalization.target_mean + self.normalization.target_std * y
        return values, dx / self.normalization.input_scale

    def grad_params(self, q: np.ndarray, targets: np.ndarray):
        """Exact gradients of the original-unit MSE loss, one (dW, db) per layer.

        Shared parameters accumulate over all positions they serve.
        """
        x = self._normalize_input(q)
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        y, caches = self._forward_core(x, keep=True)
        mu, sd = self.normalization.target_mean, self.normalization.target_std
        resid = (mu + sd * y) - targets
        dy = (2.0 / x.shape[0]) * resid * sd
        grads, _ = self._backward_core(caches, dy, want_param_grads=True,
                                       want_input_grad=False)
        return grads

    def mse(self, q: np.ndarray, targets: np.ndarray) -> float:
        pred = self.forward(np.atleast_2d(q))
        return float(np.mean((pred - np.atleast_1d(targets))**2))

    def copy_parameters(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(layer.weight.copy(), layer.bias.copy()) for layer in self.layers]

    def set_parameters(self, params) -> None:
        for layer, (w, b) in zip(self.layers, params):
            if layer.weight.shape != w.shape or layer.bias.shape != b.shape:
                raise ModelFormatError("parameter shapes do not match the architecture")
            layer.weight[...] = w
            layer.bias[...] = b


def _conv_forward(h: np.ndarray, layer: ConvLayer):
    """h: (B, L_in, C_in) -> (z2 (B*L_out, C_out), cols2, L_out)."""
    s = layer.spec
    b, l_in, c_in = h.shape
    l_out = s.out_length(l_in)
    if s.kernel == 1 and s.stride == 1 and s.padding == 0:
        cols2 = h.reshape(b * l_in, c_in)
    else:
        if s.padding:
            hp = np.zeros((b, l_in + 2 * s.padding, c_in))
            hp[:, s.padding:s.padding + l_in, :] = h
        else:
            hp = h
        cols = np.empty((b, l_out, s.kernel, c_in))
        for k in range(s.kernel):
            cols[:, :, k, :] = hp[:, k:k + l_out * s.stride:s.stride, :]
        cols2 = cols.reshape(b * l_out, s.kernel * c_in)
    w2 = layer.weight.transpose(2, 1, 0).reshape(s.kernel * c_in, s.out_channels)
    z2 = cols2 @ w2
    z2 += layer.bias
    return z2, cols2, l_out


def _conv_backward_input(dz2: np.ndarray, layer: ConvLayer, in_shape):
    """dz2: (B*L_out, C_out) -> gradient wrt the layer input, as (B*L_in, C_in)."""
    s = layer.spec
    b, l_in, c_in = in_shape
    w2 = layer.weight.transpose(2, 1, 0).reshape(s.kernel * c_in, s.out_channels)
    dcols2 = dz2 @ w2.T
    if s.kernel == 1 and s.stride == 1 and s.padding == 0:
        return dcols2
    l_out = s.out_length(l_in)
    dcols = dcols2.reshape(b, l_out, s.kernel, c_in)
    dhp = np.zeros((b, l_in + 2 * s.padding, c_in))
    for k in range(s.kernel):
        # per-k target positions are distinct, so fancy-free strided += is exact
        dhp[:, k:k + l_out * s.stride:s.stride, :] += dcols[:, :, k, :]
    dh = dhp[:, s.padding:s.padding + l_in, :] if s.padding else dhp
    return dh.reshape(b * l_in, c_in)


def layer_dense_matrix(layer: ConvLayer, in_length: int) -> tuple[np.ndarray, np.ndarray]:
    """Unroll a convolution to its dense affine map on position-major vectors.

    Flattening convention: entry ``l * C + c`` of the vector is channel ``c``
    at position ``l``.  The result is block-diagonal for kernel 1 and block
    banded (tridiagonal for kernel 3, stride 1) with repeated blocks.
    """
    s = layer.spec
    l_out = layer.spec.out_length(in_length)
    w_dense = np.zeros((l_out * s.out_channels, in_length * s.in_channels))
    for lo in range(l_out):
        for k in range(s.kernel):
            li = lo * s.stride + k - s.padding
            if 0 <= li < in_length:
                w_dense[
                    lo * s.out_channels:(lo + 1) * s.out_channels,
                    li * s.in_channels:(li + 1) * s.in_channels,
                ] = layer.weight[:, :, k]
    b_dense = np.tile(layer.bias, l_out)
    return w_dense, b_dense


DEFAULT_HIDDEN_CHANNELS = (32, 32, 64, 64, 128, 128)


def build_default_architecture(horizon: int = 24,
                               hidden_channels=DEFAULT_HIDDEN_CHANNELS,
                               beta: float = 50.0,
                               normalization: Normalization | None = None) -> ConvSurrogate:
    """Eight-layer network (input, six hidden, scalar output).

    For horizon 24 the per-layer lengths are 24, 24, 24, 12, 6, 3, 1, 1.
    Other horizons keep the kernels, strides and paddings of the first five
    convolutions and collapse whatever length remains with the sixth; lengths
    that drop below one position are rejected.
    """
    if len(hidden_channels) != 6:
        raise ValueError("hidden_channels must list six channel counts")
    c = [1, *hidden_channels, 1]
    length = horizon
    specs = []
    plan = [  # kernel, stride, padding for the first five convolutions
        (1, 1, 0),
        (3, 1, 1),
        (3, 2, 1),
        (3, 2, 1),
        (3, 2, 1),
    ]
    for i, (kernel, stride, padding) in enumerate(plan):
        spec = ConvLayerSpec(c[i], c[i + 1], kernel, stride, padding)
        length = spec.out_length(length)
        specs.append(spec)
    # sixth convolution collapses the remaining length in a single window
    spec = ConvLayerSpec(c[5], c[6], kernel=length, stride=1, padding=0)
    length = spec.out_length(length)
    specs.append(spec)
    specs.append(ConvLayerSpec(c[6], c[7], kernel=1, stride=1, padding=0))
    layers = [ConvLayer(spec=s) for s in specs]
    return ConvSurrogate(layers, beta=beta, input_length=horizon,
                         normalization=normalization)


def init_params(net: ConvSurrogate, seed: int) -> ConvSurrogate:
    """Uniform +-sqrt(1/(C_in*S)) initialization for weights and biases."""
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        s = layer.spec
        a = np.sqrt(1.0 / (s.in_channels * s.kernel))
        layer.weight[...] = rng.uniform(-a, a, size=layer.weight.shape)
        layer.bias[...] = rng.uniform(-a, a, size=layer.bias.shape)
    return net


def save_model(net: ConvSurrogate, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "beta": net.beta,
        "input_length": net.input_length,
        "layers": [
            {
                "in_channels": layer.spec.in_channels,
                "out_channels": layer.spec.out_channels,
                "kernel": layer.spec.kernel,
                "stride": layer.spec.stride,
                "padding": layer.spec.padding,
            }
            for layer in net.layers
        ],
        "normalization": {
            "input_scale": list(net.normalization.input_scale),
            "target_mean": net.normalization.target_mean,
            "target_std": net.normalization.target_std,
        },
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for i, layer in enumerate(net.layers):
        arrays[f"w{i}"] = layer.weight
        arrays[f"b{i}"] = layer.bias
    np.savez(path, **arrays)


def load_model(path) -> ConvSurrogate:
    with np.load(path, allow_pickle=False) as data:
        try:
            meta = json.loads(str(data["meta"]))
        except KeyError:
            raise ModelFormatError(f"{path}: missing checkpoint metadata") from None
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ModelFormatError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        norm = Normalization(
            input_scale=np.array(meta["normalization"]["input_scale"]),
            target_mean=meta["normalization"]["target_mean"],
            target_std=meta["normalization"]["target_std"],
        )
        layers = []
        for i, ls in enumerate(meta["layers"]):
            spec = ConvLayerSpec(ls["in_channels"], ls["out_channels"], ls["kernel"],
                                 ls["stride"], ls["padding"])
            try:
                w = data[f"w{i}"]
                b = data[f"b{i}"]
            except KeyError:
                raise ModelFormatError(f"{path}: missing arrays for layer {i}") from None
            if w.shape != (spec.out_channels, spec.in_channels, spec.kernel) or \
                    b.shape != (spec.out_channels,):
                raise ModelFormatError(
                    f"{path}: layer {i} arrays {w.shape}/{b.shape} do not match the "
                    f"declared architecture {spec}"
                )
            layers.append(ConvLayer(spec=spec, weight=w.copy(), bias=b.copy()))
    return ConvSurrogate(layers, beta=meta["beta"], input_length=meta["input_length"],
                         normalization=norm)
