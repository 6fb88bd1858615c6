"""Network specs, flat parameter vectors, forward passes and exact gradients.

Two architectures are supported:

* :class:`MlpSpec` -- a SIREN coordinate network. Every hidden layer computes
  ``sin(omega0 * (W a + b))``; the head is linear.
* :class:`CnnSpec` -- a compact hourglass conv net in the deep-image-prior
  style: stride-2 3×3 conv encoder, nearest-upsample + 3×3 conv decoder,
  1×1 conv skip branches concatenated into the decoder, sigmoid head.

Gradients are hand-derived reverse-mode passes. :func:`vjp` returns the
output together with a pullback closure so training loops evaluate the
forward pass once per step.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import ParameterError, ShapeError, UnsupportedConfigurationError
from .tensor import (
    Rng,
    as_tensor,
    conv2d_backward,
    conv2d_cols,
    sample_uniform,
    upsample_nearest,
    upsample_nearest_backward,
)

LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int = 2
    hidden_dim: int = 64
    num_hidden_layers: int = 3
    out_dim: int = 1
    omega0: float = 30.0
    # "identity" and use_bias=False exist for linear-model checks
    activation: str = "sine"
    use_bias: bool = True

    def __post_init__(self):
        for name in ("in_dim", "hidden_dim", "out_dim"):
            if getattr(self, name) < 1:
                raise ParameterError(f"MlpSpec.{name} must be >= 1")
        if self.num_hidden_layers < 0:
            raise ParameterError("MlpSpec.num_hidden_layers must be >= 0")
        if not self.omega0 > 0:
            raise ParameterError("MlpSpec.omega0 must be > 0")
        if self.activation not in ("sine", "identity"):
            raise ParameterError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class CnnSpec:
    input_channels: int = 8
    input_hw: tuple[int, int] = (64, 64)
    encoder_channels: tuple[int, ...] = (16, 32)
    decoder_channels: tuple[int, ...] = (32, 16)
    skip_channels: int = 4
    output_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_hw", tuple(int(v) for v in self.input_hw))
        object.__setattr__(self, "encoder_channels", tuple(int(v) for v in self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(int(v) for v in self.decoder_channels))
        chans = (
            self.input_channels,
            self.skip_channels,
            self.output_channels,
            *self.encoder_channels,
            *self.decoder_channels,
        )
        if any(c < 1 for c in chans):
            raise ParameterError("CnnSpec: every channel count must be >= 1")
        if len(self.encoder_channels) != len(self.decoder_channels):
            raise ParameterError("CnnSpec: encoder and decoder lists must have equal length")
        if not self.encoder_channels:
            raise ParameterError("CnnSpec: need at least one encoder level")
        div = 2 ** len(self.encoder_channels)
        h, w = self.input_hw
        if h < div or w < div or h % div or w % div:
            raise ParameterError(f"CnnSpec: input_hw {self.input_hw} not divisible by {div}")

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)


NetSpec = Union[MlpSpec, CnnSpec]


def spec_to_dict(spec: NetSpec) -> dict:
    d = asdict(spec)
    d["kind"] = "mlp" if isinstance(spec, MlpSpec) else "cnn"
    return d


def spec_hash(spec: NetSpec) -> str:
    blob = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# parameter vectors


@dataclass(frozen=True)
class Slot:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def _make_layout(entries: list[tuple[str, tuple[int, ...]]]) -> tuple[Slot, ...]:
    slots, off = [], 0
    for name, shape in entries:
        slots.append(Slot(name, tuple(shape), off))
        off += int(np.prod(shape))
    return tuple(slots)


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus the layer layout that slices it."""

    values: np.ndarray
    layout: tuple[Slot, ...] = field(repr=False)

    def __post_init__(self):
        self.values = as_tensor(self.values).reshape(-1)
        expected = sum(s.size for s in self.layout)
        if self.values.size != expected:
            raise ShapeError(f"ParamVector: {self.values.size} values for layout of {expected}")

    def __len__(self) -> int:
        return self.values.size

    def unflatten(self) -> dict[str, np.ndarray]:
        """Name -> array views into ``values``."""
        return {
            s.name: self.values[s.offset : s.offset + s.size].reshape(s.shape) for s in self.layout
        }

    @classmethod
    def flatten(cls, layout: tuple[Slot, ...], arrays: dict[str, np.ndarray]) -> "ParamVector":
        parts = []
        for s in layout:
            a = as_tensor(arrays[s.name])
            if a.shape != s.shape:
                raise ShapeError(f"{s.name}: expected {s.shape}, got {a.shape}")
            parts.append(a.reshape(-1))
        values = np.concatenate(parts) if parts else np.zeros(0)
        return cls(values, layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


def mlp_layout(spec: MlpSpec) -> tuple[Slot, ...]:
    entries = []
    fan_in = spec.in_dim
    for i in range(spec.num_hidden_layers):
        entries.append((f"sine{i}.weight", (spec.hidden_dim, fan_in)))
        if spec.use_bias:
            entries.append((f"sine{i}.bias", (spec.hidden_dim,)))
        fan_in = spec.hidden_dim
    entries.append(("head.weight", (spec.out_dim, fan_in)))
    if spec.use_bias:
        entries.append(("head.bias", (spec.out_dim,)))
    return _make_layout(entries)


def _cnn_level_channels(spec: CnnSpec) -> list[int]:
    # channel count of the feature map at each resolution level, input first
    return [spec.input_channels, *spec.encoder_channels[:-1]]


def cnn_layout(spec: CnnSpec) -> tuple[Slot, ...]:
    entries = []
    prev = spec.input_channels
    for i, c in enumerate(spec.encoder_channels):
        entries += [(f"enc{i}.weight", (c, prev, 3, 3)), (f"enc{i}.bias", (c,))]
        prev = c
    for i, c in enumerate(_cnn_level_channels(spec)):
        entries += [
            (f"skip{i}.weight", (spec.skip_channels, c, 1, 1)),
            (f"skip{i}.bias", (spec.skip_channels,)),
        ]
    prev = spec.encoder_channels[-1]
    for j, c in enumerate(spec.decoder_channels):
        entries += [
            (f"dec{j}.weight", (c, prev + spec.skip_channels, 3, 3)),
            (f"dec{j}.bias", (c,)),
        ]
        prev = c
    entries += [
        ("head.weight", (spec.output_channels, prev, 1, 1)),
        ("head.bias", (spec.output_channels,)),
    ]
    return _make_layout(entries)


def layout_for(spec: NetSpec) -> tuple[Slot, ...]:
    if isinstance(spec, MlpSpec):
        return mlp_layout(spec)
    if isinstance(spec, CnnSpec):
        return cnn_layout(spec)
    raise TypeError(f"unknown network spec {type(spec).__name__}")


def num_params(spec: NetSpec) -> int:
    return sum(s.size for s in layout_for(spec))


def zeros(spec: NetSpec) -> ParamVector:
    layout = layout_for(spec)
    return ParamVector(np.zeros(sum(s.size for s in layout)), layout)


def siren_bounds(spec: MlpSpec) -> dict[str, float]:
    """Uniform init half-widths per weight tensor (SIREN scheme)."""
    bounds = {}
    fan_in = spec.in_dim
    for i in range(spec.num_hidden_layers):
        bounds[f"sine{i}.weight"] = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / spec.omega0
        fan_in = spec.hidden_dim
    bounds["head.weight"] = np.sqrt(6.0 / fan_in) / spec.omega0
    return bounds


def init_siren(spec: MlpSpec, rng: Rng) -> ParamVector:
    """SIREN init: first layer U(-1/d, 1/d), later layers U(±sqrt(6/n)/omega0), zero biases."""
    layout = mlp_layout(spec)
    bounds = siren_bounds(spec)
    arrays = {}
    for s in layout:
        if s.name.endswith(".bias"):
            arrays[s.name] = np.zeros(s.shape)
        else:
            b = bounds[s.name]
            arrays[s.name] = sample_uniform(rng, s.shape, -b, b)
    return ParamVector.flatten(layout, arrays)


def cnn_bounds(spec: CnnSpec) -> dict[str, float]:
    """Kaiming-uniform half-width sqrt(6 / fan_in) for every conv kernel."""
    return {
        s.name: float(np.sqrt(6.0 / (s.shape[1] * s.shape[2] * s.shape[3])))
        for s in cnn_layout(spec)
        if s.name.endswith(".weight")
    }


def init_cnn(spec: CnnSpec, rng: Rng) -> ParamVector:
    layout = cnn_layout(spec)
    bounds = cnn_bounds(spec)
    arrays = {}
    for s in layout:
        if s.name.endswith(".bias"):
            arrays[s.name] = np.zeros(s.shape)
        else:
            b = bounds[s.name]
            arrays[s.name] = sample_uniform(rng, s.shape, -b, b)
    return ParamVector.flatten(layout, arrays)


def init_params(spec: NetSpec, rng: Rng) -> ParamVector:
    if isinstance(spec, MlpSpec):
        return init_siren(spec, rng)
    return init_cnn(spec, rng)


# --------------------------------------------------------------------------
# MLP


def _check_mlp_input(spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"MLP input must be n×{spec.in_dim}, got {x.shape}")
    return x


def _mlp_vjp(spec: MlpSpec, params: ParamVector, x: np.ndarray):
    p = params.unflatten()
    w0 = spec.omega0
    sine = spec.activation == "sine"
    # omega0 is folded into the (small) weight matrices: sin(x @ (w0 W)^T + w0 b)
    scaled = {}
    for i in range(spec.num_hidden_layers):
        scale = w0 if sine else 1.0
        scaled[f"sine{i}.weight"] = scale * p[f"sine{i}.weight"]
        if spec.use_bias:
            scaled[f"sine{i}.bias"] = scale * p[f"sine{i}.bias"]
    acts = [x]
    cosines = []
    a = x
    for i in range(spec.num_hidden_layers):
        z = a @ scaled[f"sine{i}.weight"].T
        if spec.use_bias:
            z += scaled[f"sine{i}.bias"]
        if sine:
            a = np.sin(z)
            cosines.append(np.cos(z))
        else:
            a = z
            cosines.append(None)
        acts.append(a)
    out = a @ p["head.weight"].T
    if spec.use_bias:
        out = out + p["head.bias"]

    def layer_grads(g: np.ndarray, per_sample: bool):
        grads = {}
        a_last = acts[-1]
        if per_sample:
            grads["head.weight"] = g[:, :, None] * a_last[:, None, :]
        else:
            grads["head.weight"] = g.T @ a_last
        if spec.use_bias:
            grads["head.bias"] = g if per_sample else g.sum(axis=0)
        ga = g @ p["head.weight"]
        for i in reversed(range(spec.num_hidden_layers)):
            # d sin(w0 u)/du = w0 cos(w0 u); w0 is applied to the small tensors below
            gz = ga * cosines[i] if cosines[i] is not None else ga
            a_in = acts[i]
            scale = w0 if sine else 1.0
            if per_sample:
                grads[f"sine{i}.weight"] = scale * (gz[:, :, None] * a_in[:, None, :])
            else:
                grads[f"sine{i}.weight"] = scale * (gz.T @ a_in)
            if spec.use_bias:
                grads[f"sine{i}.bias"] = scale * gz if per_sample else scale * gz.sum(axis=0)
            if i:
                ga = gz @ scaled[f"sine{i}.weight"]
        return grads

    def pullback(g: np.ndarray) -> ParamVector:
        g = as_tensor(g)
        if g.shape != out.shape:
            raise ShapeError(f"output_grad {g.shape} != output {out.shape}")
        return ParamVector.flatten(params.layout, layer_grads(g, per_sample=False))

    def jac() -> np.ndarray:
        n = x.shape[0]
        grads = layer_grads(np.ones((n, 1)), per_sample=True)
        return np.concatenate([grads[s.name].reshape(n, -1) for s in params.layout], axis=1)

    return out, pullback, jac


# --------------------------------------------------------------------------
# CNN


def _lrelu(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _lrelu_grad(z):
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _conv(x, w, b, stride, padding, cache: list):
    out, cols = conv2d_cols(x, w, stride, padding)
    cache.append(cols)
    out += b[:, None, None]
    return out


def _cnn_vjp(spec: CnnSpec, params: ParamVector, x: np.ndarray):
    x = as_tensor(x)
    expected = (spec.input_channels, *spec.input_hw)
    if x.shape != expected:
        raise ShapeError(f"CNN input must be {expected}, got {x.shape}")
    p = params.unflatten()
    L = spec.depth

    # encoder: levels[0] is the input, levels[i] the i-th stride-2 feature map
    levels = [x]
    enc_cols, skip_cols, dec_cols = [], [], []
    enc_pre = []
    for i in range(L):
        z = _conv(levels[-1], p[f"enc{i}.weight"], p[f"enc{i}.bias"], 2, 1, enc_cols)
        enc_pre.append(z)
        levels.append(_lrelu(z))

    skip_pre = []
    skips = []
    for i in range(L):
        z = _conv(levels[i], p[f"skip{i}.weight"], p[f"skip{i}.bias"], 1, 0, skip_cols)
        skip_pre.append(z)
        skips.append(_lrelu(z))

    d = levels[L]
    dec_in = []
    dec_pre = []
    for j in range(L):
        lvl = L - 1 - j
        u = upsample_nearest(d, 2)
        cat = np.concatenate([u, skips[lvl]], axis=0)
        z = _conv(cat, p[f"dec{j}.weight"], p[f"dec{j}.bias"], 1, 1, dec_cols)
        dec_in.append(cat)
        dec_pre.append(z)
        d = _lrelu(z)

    head_cols = []
    logits = _conv(d, p["head.weight"], p["head.bias"], 1, 0, head_cols)
    out = 1.0 / (1.0 + np.exp(-logits))

    def pullback(g: np.ndarray) -> ParamVector:
        g = as_tensor(g)
        if g.shape != out.shape:
            raise ShapeError(f"output_grad {g.shape} != output {out.shape}")
        grads = {}
        gl = g * out * (1.0 - out)
        grads["head.bias"] = gl.sum(axis=(1, 2))
        gd, grads["head.weight"] = conv2d_backward(d, p["head.weight"], gl, 1, 0, head_cols[0])
        gskip = [None] * L
        for j in reversed(range(L)):
            lvl = L - 1 - j
            gz = gd * _lrelu_grad(dec_pre[j])
            grads[f"dec{j}.bias"] = gz.sum(axis=(1, 2))
            gcat, grads[f"dec{j}.weight"] = conv2d_backward(
                dec_in[j], p[f"dec{j}.weight"], gz, 1, 1, dec_cols[j]
            )
            n_up = gcat.shape[0] - spec.skip_channels
            gskip[lvl] = gcat[n_up:]
            gd = upsample_nearest_backward(gcat[:n_up], 2)
        # gd is now the gradient w.r.t. the deepest encoder map
        glevel = [np.zeros_like(a) for a in levels]
        glevel[L] = gd
        for i in range(L):
            gz = gskip[i] * _lrelu_grad(skip_pre[i])
            grads[f"skip{i}.bias"] = gz.sum(axis=(1, 2))
            gin, grads[f"skip{i}.weight"] = conv2d_backward(
                levels[i], p[f"skip{i}.weight"], gz, 1, 0, skip_cols[i]
            )
            glevel[i] = glevel[i] + gin
        for i in reversed(range(L)):
            gz = glevel[i + 1] * _lrelu_grad(enc_pre[i])
            grads[f"enc{i}.bias"] = gz.sum(axis=(1, 2))
            gin, grads[f"enc{i}.weight"] = conv2d_backward(
                levels[i], p[f"enc{i}.weight"], gz, 2, 1, enc_cols[i]
            )
            glevel[i] = glevel[i] + gin
        return ParamVector.flatten(params.layout, grads)

    return out, pullback, None


# --------------------------------------------------------------------------
# public entry points


def _check_params(spec: NetSpec, params: ParamVector):
    if params.layout != layout_for(spec):
        raise ShapeError("parameter layout does not match the network spec")


def vjp(spec: NetSpec, params: ParamVector, x) -> tuple[np.ndarray, Callable[[np.ndarray], ParamVector]]:
    """Run the forward pass; return ``(output, pullback)``.

    ``pullback(g)`` is the gradient of ``sum(output * g)`` w.r.t. the parameters.
    """
    _check_params(spec, params)
    if isinstance(spec, MlpSpec):
        out, pullback, _ = _mlp_vjp(spec, params, _check_mlp_input(spec, x))
    else:
        out, pullback, _ = _cnn_vjp(spec, params, x)
    return out, pullback


def forward(spec: NetSpec, params: ParamVector, x) -> np.ndarray:
    """Network output.

    MLP: ``x`` is n×in_dim (or one coordinate), output n×out_dim.
    CNN: ``x`` is C0×H×W, output out_channels×H×W.
    """
    return vjp(spec, params, x)[0]


def backward(spec: NetSpec, params: ParamVector, x, output_grad) -> ParamVector:
    return vjp(spec, params, x)[1](output_grad)


def jacobian(spec: NetSpec, params: ParamVector, x) -> np.ndarray:
    """Per-sample gradients of a scalar-output MLP: row i is d f(x_i) / d theta."""
    if not isinstance(spec, MlpSpec):
        raise UnsupportedConfigurationError(
            "per-sample Jacobians are defined for scalar-output coordinate MLPs only"
        )
    if spec.out_dim != 1:
        raise UnsupportedConfigurationError(
            f"Jacobian rows need out_dim == 1 (got {spec.out_dim}); "
            "analyse each output channel separately or convert to grayscale"
        )
    _check_params(spec, params)
    _, _, jac = _mlp_vjp(spec, params, _check_mlp_input(spec, x))
    return jac()


def jacobian_row(spec: NetSpec, params: ParamVector, x) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"jacobian_row takes a single input vector, got {x.shape}")
    return jacobian(spec, params, x[None])[0]
