"""Sequential CNN built from the primitives in :mod:`.ops`."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .adam import AdamState

KINDS = ("conv3x3", "maxpool2x2", "relu", "dropout", "flatten", "dense", "softmax")
PARAMETRIC = ("conv3x3", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int = 0  # filters for conv3x3, units for dense
    rate: float = 0.0  # dropout only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in PARAMETRIC and self.size < 1:
            raise ValueError(f"{self.kind} needs a positive size")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def Conv3x3(filters):
    return LayerSpec("conv3x3", filters)


def Dense(units):
    return LayerSpec("dense", units)


def Dropout(rate):
    return LayerSpec("dropout", rate=rate)


ReLU = LayerSpec("relu")
MaxPool2x2 = LayerSpec("maxpool2x2")
Flatten = LayerSpec("flatten")
Softmax = LayerSpec("softmax")


def output_shape(spec: LayerSpec, shape: tuple) -> tuple:
    """Shape of one sample after ``spec``; raises if the layer cannot accept ``shape``."""
    k = spec.kind
    if k == "conv3x3":
        if len(shape) != 3:
            raise ValueError(f"conv3x3 needs (h, w, c) input, got {shape}")
        return shape[0], shape[1], spec.size
    if k == "maxpool2x2":
        if len(shape) != 3 or shape[0] % 2 or shape[1] % 2:
            raise ValueError(f"maxpool2x2 needs even (h, w, c) input, got {shape}")
        return shape[0] // 2, shape[1] // 2, shape[2]
    if k == "flatten":
        return (int(np.prod(shape)),)
    if k == "dense":
        if len(shape) != 1:
            raise ValueError(f"dense needs flat input, got {shape}")
        return (spec.size,)
    if k == "softmax" and len(shape) != 1:
        raise ValueError(f"softmax needs flat input, got {shape}")
    return shape


class Model:
    """Ordered layer stack with float parameters and optional optimizer state.

    The stack must end in ``Dense(2), Softmax``. Parameters live in
    ``self.params`` as one ``{"w", "b"}`` dict per layer (empty for
    parameter-free layers).
    """

    def __init__(self, layers, input_shape=(32, 32, 3), seed=0, dtype=np.float32, init=True):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in layers]
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        self.class_count = 2
        self.meta: dict = {}
        self.optimizer: AdamState | None = None
        if len(self.layers) < 2 or self.layers[-1].kind != "softmax" or self.layers[-2] != Dense(2):
            raise ValueError("model must end with Dense(2) followed by Softmax")
        if any(l.kind == "softmax" for l in self.layers[:-1]):
            raise ValueError("softmax is only allowed as the final layer")
        self.shapes = [self.input_shape]
        for spec in self.layers:
            self.shapes.append(output_shape(spec, self.shapes[-1]))
        self.params = [{} for _ in self.layers]
        if init:
            self._init_params(dtype)

    def _init_params(self, dtype):
        """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
        rng = np.random.default_rng(self.seed)
        for i, spec in enumerate(self.layers):
            fan_in_shape = self.shapes[i]
            if spec.kind == "conv3x3":
                c_in = fan_in_shape[2]
                shape, fan_in = (3, 3, c_in, spec.size), 9 * c_in
            elif spec.kind == "dense":
                shape, fan_in = (fan_in_shape[0], spec.size), fan_in_shape[0]
            else:
                continue
            limit = np.sqrt(6.0 / fan_in)
            self.params[i] = {
                "w": rng.uniform(-limit, limit, size=shape).astype(dtype),
                "b": np.zeros(spec.size, dtype=dtype),
            }

    def param_shapes(self) -> list[tuple]:
        out = []
        for i, spec in enumerate(self.layers):
            if spec.kind == "conv3x3":
                out += [(3, 3, self.shapes[i][2], spec.size), (spec.size,)]
            elif spec.kind == "dense":
                out += [(self.shapes[i][0], spec.size), (spec.size,)]
        return out

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays in layer order (w then b)."""
        return [p[k] for p in self.params for k in ("w", "b") if k in p]

    def set_parameters(self, arrays) -> None:
        arrays = list(arrays)
        shapes = self.param_shapes()
        if len(arrays) != len(shapes):
            raise ValueError(f"expected {len(shapes)} parameter arrays, got {len(arrays)}")
        for a, s in zip(arrays, shapes):
            if tuple(a.shape) != s:
                raise ValueError(f"parameter shape {a.shape} does not match layer shape {s}")
        it = iter(arrays)
        for i, spec in enumerate(self.layers):
            if spec.kind in PARAMETRIC:
                self.params[i] = {"w": next(it), "b": next(it)}

    def astype(self, dtype) -> "Model":
        other = self.copy()
        other.set_parameters([p.astype(dtype) for p in self.parameters()])
        return other

    def copy(self) -> "Model":
        other = Model(self.layers, self.input_shape, self.seed, init=False)
        other.set_parameters([p.copy() for p in self.parameters()])
        other.meta = dict(self.meta)
        return other

    def _run(self, x, training, rng, keep):
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ValueError(f"batch shape {x.shape} does not match input (n, {self.input_shape})")
        cache = []
        for spec, p in zip(self.layers, self.params):
            inp, aux = x, None
            k = spec.kind
            if k == "conv3x3":
                x = ops.conv3x3_forward(x, p["w"], p["b"])
            elif k == "relu":
                x = ops.relu(x)
            elif k == "maxpool2x2":
                x, aux = ops.maxpool2x2(x)
            elif k == "dropout":
                x, aux = ops.dropout(x, spec.rate, training, rng)
            elif k == "flatten":
                x = x.reshape(x.shape[0], -1)
            elif k == "dense":
                x = ops.dense_forward(x, p["w"], p["b"])
            elif k == "softmax":
                # logits are kept in the cache; softmax+loss backward is fused
                x = ops.softmax(x)
            if keep:
                cache.append((inp, aux))
        return x, cache

    def forward(self, x, training=False, rng=None):
        """Class probabilities for a (n, h, w, c) batch."""
        if training and rng is None:
            rng = np.random.default_rng(self.seed)
        probs, _ = self._run(x, training, rng, keep=False)
        return probs

    def predict_proba(self, x):
        return self.forward(x, training=False)

    def backward(self, x, labels, rng=None, training=True):
        """Forward in training mode, then backpropagate the mean SCC loss.

        Returns ``(loss, grads)`` with ``grads`` aligned to :meth:`parameters`.
        """
        if training and rng is None:
            rng = np.random.default_rng(self.seed)
        probs, cache = self._run(x, training, rng, keep=True)
        loss, g = ops.scc_loss(probs, labels)
        grads = []
        for spec, p, (inp, aux) in zip(reversed(self.layers), reversed(self.params), reversed(cache)):
            k = spec.kind
            if k == "softmax":
                continue
            if k == "dense":
                g, gw, gb = ops.dense_backward(inp, p["w"], g)
                grads += [gb, gw]
            elif k == "conv3x3":
                g, gw, gb = ops.conv3x3_backward(inp, p["w"], g)
                grads += [gb, gw]
            elif k == "relu":
                g = ops.relu_backward(inp, g)
            elif k == "maxpool2x2":
                g = ops.maxpool2x2_backward(g, aux)
            elif k == "dropout":
                if aux is not None:
                    g = g * aux
            elif k == "flatten":
                g = g.reshape(inp.shape)
        return loss, grads[::-1]

    def loss(self, x, labels, training=False, rng=None) -> float:
        probs, _ = self._run(x, training, rng, keep=False)
        return ops.scc_loss(probs, labels)[0]

    def describe(self) -> dict:
        return {
            "layers": [l.to_dict() for l in self.layers],
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "class_count": self.class_count,
        }


def reference_layers(filters=(16, 32, 64), dense_units=128, dropout=0.2) -> list[LayerSpec]:
    layers = []
    for f in filters:
        layers += [Conv3x3(f), ReLU, MaxPool2x2]
    layers += [Dropout(dropout), Flatten, Dense(dense_units), ReLU, Dense(2), Softmax]
    return layers


def build_reference_model(seed=0, input_shape=(32, 32, 3), **kwargs) -> Model:
    """Three conv/pool blocks, dropout, a ReLU dense head and a 2-way softmax."""
    return Model(reference_layers(**kwargs), input_shape, seed)
