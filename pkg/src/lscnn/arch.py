"""Sequential architectures: lsCNN, PatchNet and the shallow grayscale variant.

An :class:`ArchitectureSpec` is a declarative layer list. Each ``conv``
entry is implicitly followed by batchnorm + scale + ReLU, and so is
``fc``; ``softmax`` is a plain linear map to two logits.

Parameters live in a flat ``dict[str, ndarray]`` with stable keys::

    Conv1.weight Conv1.bias BN1.mean BN1.var BN1.gamma BN1.beta
    ...
    FC1.weight FC1.bias FC1-BN.mean FC1-BN.var FC1-BN.gamma FC1-BN.beta
    Softmax.weight Softmax.bias

Class index 0 is *real*, index 1 is *attack*.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .errors import ShapeError
from .tensor import DTYPE, fill_normal

REAL = 0
ATTACK = 1

INIT_STD = 1e-4


@dataclass(frozen=True)
class LayerDesc:
    kind: str  # conv | pool | fc | dropout | softmax
    name: str
    out: int = 0
    kernel: int = 0
    stride: int = 1
    rate: float = 0.0


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_channels: int
    input_size: int
    layers: tuple = field(default_factory=tuple)

    @property
    def input_shape(self):
        return (self.input_channels, self.input_size, self.input_size)

    def digest(self) -> bytes:
        """32-byte SHA-256 of the canonical JSON form; keys checkpoints to a spec."""
        doc = {
            "name": self.name,
            "input_channels": self.input_channels,
            "input_size": self.input_size,
            "layers": [asdict(l) for l in self.layers],
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()

    def conv_layers(self):
        return [l for l in self.layers if l.kind == "conv"]

    def conv_widths(self):
        return [l.out for l in self.conv_layers()]

    def with_dropout(self, rate):
        layers = tuple(
            LayerDesc(l.kind, l.name, l.out, l.kernel, l.stride, rate) if l.kind == "dropout" else l
            for l in self.layers
        )
        return ArchitectureSpec(self.name, self.input_channels, self.input_size, layers)


def bn_name(conv_or_fc: LayerDesc) -> str:
    if conv_or_fc.kind == "conv":
        return "BN" + conv_or_fc.name[len("Conv"):]
    return conv_or_fc.name + "-BN"


def _stack(name, channels, size, widths, kernel, stride, fc, dropout=L.DROPOUT_RATE):
    layers = []
    for i, w in enumerate(widths, start=1):
        layers.append(LayerDesc("conv", f"Conv{i}", out=w, kernel=kernel, stride=stride))
        layers.append(LayerDesc("pool", f"Pool{i}", kernel=2, stride=2))
    layers.append(LayerDesc("fc", "FC1", out=fc))
    layers.append(LayerDesc("dropout", "Drop1", rate=dropout))
    layers.append(LayerDesc("softmax", "Softmax", out=2))
    spec = ArchitectureSpec(name, channels, size, tuple(layers))
    infer_shapes(spec)
    return spec


def build_lscnn(dropout=L.DROPOUT_RATE) -> ArchitectureSpec:
    return _stack("lscnn", 3, 96, [27, 36, 45, 54], 3, 1, 450, dropout)


def build_patchnet(dropout=L.DROPOUT_RATE) -> ArchitectureSpec:
    return _stack("patchnet", 3, 32, [3, 4, 5, 6], 3, 1, 50, dropout)


def build_nuaa_variant(for_patch: bool, dropout=L.DROPOUT_RATE) -> ArchitectureSpec:
    """Two conv/pool stages with 5x5 stride-2 kernels on grayscale input."""
    if for_patch:
        return _stack("nuaa-patchnet", 1, 21, [10, 15], 5, 2, 150, dropout)
    return _stack("nuaa-lscnn", 1, 64, [90, 135], 5, 2, 1350, dropout)


ARCHITECTURES = {
    "lscnn": (build_lscnn, build_patchnet),
    "nuaa": (lambda dropout=L.DROPOUT_RATE: build_nuaa_variant(False, dropout),
             lambda dropout=L.DROPOUT_RATE: build_nuaa_variant(True, dropout)),
}


def infer_shapes(spec: ArchitectureSpec):
    """Per-layer ``(name, input_shape, output_shape)``.

    Map shapes are ``(C, H, W)``, vector shapes ``(F,)``.
    """
    shape = spec.input_shape
    rows = []
    for layer in spec.layers:
        if layer.kind == "conv":
            c, h, w = shape
            if h < layer.kernel or w < layer.kernel:
                raise ShapeError(f"{layer.name}: {h}x{w} input smaller than {layer.kernel}x{layer.kernel} kernel")
            out = (layer.out, (h - layer.kernel) // layer.stride + 1, (w - layer.kernel) // layer.stride + 1)
        elif layer.kind == "pool":
            c, h, w = shape
            out = (c, L.pool_output_size(h, layer.kernel, layer.stride),
                   L.pool_output_size(w, layer.kernel, layer.stride))
        elif layer.kind in ("fc", "softmax"):
            out = (layer.out,)
        elif layer.kind == "dropout":
            out = shape
        else:
            raise ShapeError(f"unknown layer kind {layer.kind!r}")
        rows.append((layer.name, shape, out))
        shape = out
    if not spec.layers or spec.layers[-1].kind != "softmax" or spec.layers[-1].out != 2:
        raise ShapeError("architecture must end in a 2-way softmax")
    return rows


def param_shapes(spec: ArchitectureSpec):
    """Ordered ``{name: shape}`` for every tensor in the model."""
    shapes = {}
    for layer, (_, inp, out) in zip(spec.layers, infer_shapes(spec)):
        if layer.kind == "conv":
            shapes[f"{layer.name}.weight"] = (layer.out, inp[0], layer.kernel, layer.kernel)
            shapes[f"{layer.name}.bias"] = (layer.out,)
        elif layer.kind in ("fc", "softmax"):
            shapes[f"{layer.name}.weight"] = (layer.out, int(np.prod(inp)))
            shapes[f"{layer.name}.bias"] = (layer.out,)
        else:
            continue
        if layer.kind in ("conv", "fc"):
            bn = bn_name(layer)
            for stat in ("mean", "var", "gamma", "beta"):
                shapes[f"{bn}.{stat}"] = (layer.out,)
    return shapes


def is_trainable(name: str) -> bool:
    return not (name.endswith(".mean") or name.endswith(".var"))


def init_params(spec: ArchitectureSpec, std: float, rng, dtype=DTYPE):
    """Weights ~ Normal(0, std), biases 0, batchnorm at identity."""
    params = {}
    for name, shape in param_shapes(spec).items():
        suffix = name.rsplit(".", 1)[1]
        if suffix == "weight":
            params[name] = fill_normal(shape, 0.0, std, rng, dtype)
        elif suffix in ("var", "gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def check_params(spec: ArchitectureSpec, params):
    expected = param_shapes(spec)
    missing = sorted(set(expected) - set(params))
    if missing:
        raise ShapeError(f"missing parameters for {spec.name}: {missing}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {tuple(params[name].shape)}")


def forward(spec, params, x, mode=L.INFER, rng=None, *, bn_eps=L.BN_EPS, bn_ema=L.BN_EMA,
            stop_at=None):
    """Run the stack on a batch ``x`` (N x C x H x W).

    Returns ``(logits, probs, cache)``. ``cache["running"]`` holds the
    batchnorm running statistics updated by a train-mode pass; apply them
    with :func:`apply_running_stats`. With ``stop_at=<layer name>`` the
    activation after that layer (after BN+ReLU for conv/fc) is returned in
    place of the logits and ``probs`` is None.
    """
    if x.ndim != 4 or tuple(x.shape[1:]) != spec.input_shape:
        raise ShapeError(f"{spec.name} expects N x {spec.input_shape}, got {x.shape}")
    if mode == L.TRAIN and any(l.kind == "dropout" and l.rate > 0 for l in spec.layers) and rng is None:
        raise ShapeError("train-mode forward with dropout needs an rng")
    steps = []
    running = {}
    h = x
    for layer in spec.layers:
        if layer.kind == "conv":
            h, c = L.conv2d_forward(h, params[f"{layer.name}.weight"], params[f"{layer.name}.bias"], layer.stride)
            steps.append(("conv", layer.name, c))
        elif layer.kind == "pool":
            h, c = L.maxpool_forward(h, layer.kernel, layer.stride)
            steps.append(("pool", layer.name, c))
        elif layer.kind in ("fc", "softmax"):
            h, c = L.fc_forward(h, params[f"{layer.name}.weight"], params[f"{layer.name}.bias"])
            steps.append(("fc", layer.name, c))
        elif layer.kind == "dropout":
            h, c = L.dropout_forward(h, layer.rate, mode, rng)
            steps.append(("dropout", layer.name, c))
        if layer.kind in ("conv", "fc"):
            bn = bn_name(layer)
            h, c, rm, rv = L.bn_relu_forward(
                h, params[f"{bn}.gamma"], params[f"{bn}.beta"], params[f"{bn}.mean"], params[f"{bn}.var"],
                mode, bn_eps, bn_ema,
            )
            if mode == L.TRAIN:
                running[f"{bn}.mean"] = rm
                running[f"{bn}.var"] = rv
            steps.append(("bn_relu", bn, c))
        if stop_at is not None and layer.name == stop_at:
            return h, None, {"steps": steps, "running": running, "mode": mode}
    logits = h
    probs = L.softmax(logits)
    return logits, probs, {"steps": steps, "running": running, "mode": mode}


def backward(spec, params, cache, grad_logits):
    """Parameter gradients for every trainable tensor, given dLoss/dlogits."""
    grads = {}
    d = grad_logits
    steps = cache["steps"]
    for i in range(len(steps) - 1, -1, -1):
        kind, name, c = steps[i]
        if kind == "conv":
            d, g = L.conv2d_backward(d, c, need_input_grad=i > 0)
        else:
            d, g = L.layer_backward(kind, c, d)
        for pname, val in g.items():
            grads[f"{name}.{pname}"] = val
    return grads


def apply_running_stats(params, cache):
    params.update(cache["running"])
    return params


def loss_and_grads(spec, params, x, labels, rng=None, **kw):
    """Train-mode forward + backward. Returns ``(loss, probs, grads, cache)``."""
    logits, _, cache = forward(spec, params, x, L.TRAIN, rng, **kw)
    loss, probs, dlogits = L.softmax_xent(logits, labels)
    grads = backward(spec, params, cache, dlogits)
    return loss, probs, grads, cache


def predict_proba(spec, params, x, batch_size=64):
    """Infer-mode class probabilities, processed in chunks."""
    out = []
    for i in range(0, x.shape[0], batch_size):
        _, p, _ = forward(spec, params, x[i:i + batch_size], L.INFER)
        out.append(p)
    return np.concatenate(out) if out else np.zeros((0, 2), dtype=DTYPE)
