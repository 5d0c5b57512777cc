"""Layers whose weights can be constrained to a manifold.

Layers lower onto :class:`~riemnet.autograd.Graph` primitives through
``build(graph, x)``. A weight constraint is requested with
``weight_manifold=`` and resolved by :func:`manifold_for_shape`, which picks
the orientation that makes the request well-posed.
"""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from .autograd import Graph, Node, Parameter
from .errors import DegenerateShape, IncompatibleShape, InvalidInitialValue, ShapeMismatch
from .linalg import as_tensor
from .manifolds import Euclidean, Manifold, PositiveDefinite, Stiefel

_REQUEST_ALIASES = {
    None: None,
    "none": None,
    "euclidean": None,
    "stiefel": "stiefel",
    "spd": "spd",
    "positivedefinite": "spd",
    "positive_definite": "spd",
}


def _normalize_request(request) -> Optional[str]:
    if request is Stiefel:
        return "stiefel"
    if request is PositiveDefinite:
        return "spd"
    if request is Euclidean:
        return None
    key = request.lower() if isinstance(request, str) else request
    try:
        return _REQUEST_ALIASES[key]
    except (KeyError, TypeError):
        raise ValueError(f"unknown weight manifold request {request!r}") from None


def manifold_for_shape(request, shape) -> Manifold:
    """Descriptor for a ``rows x cols`` weight under ``request``.

    A Stiefel request on a wide matrix (rows < cols) yields a transposed
    ``Stiefel(cols, rows)`` so that n >= p always holds. ``Stiefel(1, 1)``
    is accepted although it is just the two points {-1, +1}.
    """
    rows, cols = (int(d) for d in shape)
    if rows < 1 or cols < 1:
        raise DegenerateShape(f"weight shape {(rows, cols)} has an empty dimension")
    kind = _normalize_request(request)
    if kind is None:
        return Euclidean(rows, cols)
    if kind == "stiefel":
        return Stiefel(max(rows, cols), min(rows, cols), transposed=rows < cols)
    if rows != cols:
        raise IncompatibleShape(f"PositiveDefinite weight must be square, got {rows}x{cols}")
    return PositiveDefinite(rows)


class Module:
    def parameters(self) -> list[Parameter]:
        return []

    def build(self, graph: Graph, x: Node) -> Node:
        raise NotImplementedError


class _Weighted(Module):
    weight: Parameter
    bias: Optional[Parameter]
    fan_in: int

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def _make_params(self, rows, cols, weight_manifold, weight, bias, rng):
        self.weight_manifold_request = _normalize_request(weight_manifold)
        self.weight = Parameter(np.zeros((rows, cols)), manifold_for_shape(weight_manifold, (rows, cols)),
                                name="weight")
        self.bias = Parameter(np.zeros(rows), name="bias") if bias else None
        init_weight(self, value=weight, rng=rng)


def init_weight(layer, value=None, rng=None) -> None:
    """(Re)initialize a layer's weight and bias.

    Constrained weights get a random manifold point, unconstrained ones
    ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``. A user ``value`` must lie on the
    weight's manifold.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    w = layer.weight
    bound = 1.0 / math.sqrt(layer.fan_in)
    if value is not None:
        value = as_tensor(value, copy=True)
        if value.size != math.prod(w.shape):
            raise InvalidInitialValue(f"initial weight has {value.size} entries, expected shape {w.shape}")
        value = value.reshape(w.shape)
        if not w.manifold.is_point(value, 1e-8):
            raise InvalidInitialValue(f"initial weight is not a point of {w.manifold}")
        w.value = value
    elif isinstance(w.manifold, Euclidean):
        w.value = rng.uniform(-bound, bound, size=w.shape)
    else:
        w.value = w.manifold.rand(rng)
    if layer.bias is not None:
        layer.bias.value = rng.uniform(-bound, bound, size=layer.bias.shape)


class Linear(_Weighted):
    """``y = x W^T + b`` with W stored as (out_features, in_features)."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True, weight_manifold=None,
                 weight=None, rng=None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.fan_in = self.in_features
        self._make_params(self.out_features, self.in_features, weight_manifold, weight, bias, rng)

    def __repr__(self):
        return f"Linear({self.in_features}, {self.out_features}, weight_manifold={self.weight.manifold})"

    def build(self, graph, x):
        if len(x.shape) != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"{self!r}: input shape {x.shape}")
        y = graph.matmul(x, graph.transpose(graph.param(self.weight)))
        if self.bias is not None:
            y = graph.add_bias(y, graph.param(self.bias))
        return y


class Conv2d(_Weighted):
    """2-D cross-correlation lowered to im2col + matmul.

    The weight is stored matricized as (out_channels, in_channels*kh*kw),
    kernel column fastest, which is exactly the matrix a manifold
    constraint applies to. ``kernel`` gives the 4-D view.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size, stride: int = 1, padding: int = 0,
                 bias: bool = True, weight_manifold=None, weight=None, rng=None):
        kh, kw = (kernel_size, kernel_size) if np.isscalar(kernel_size) else kernel_size
        if stride < 1 or padding < 0:
            raise ValueError(f"stride {stride} / padding {padding}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = (int(kh), int(kw))
        self.stride = int(stride)
        self.padding = int(padding)
        self.fan_in = self.in_channels * self.kernel_size[0] * self.kernel_size[1]
        self._make_params(self.out_channels, self.fan_in, weight_manifold, weight, bias, rng)

    def __repr__(self):
        return (f"Conv2d({self.in_channels}, {self.out_channels}, kernel_size={self.kernel_size}, "
                f"stride={self.stride}, padding={self.padding}, weight_manifold={self.weight.manifold})")

    @property
    def kernel(self) -> np.ndarray:
        return self.weight.value.reshape(self.out_channels, self.in_channels, *self.kernel_size)

    def build(self, graph, x):
        if len(x.shape) != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"{self!r}: input shape {x.shape}")
        kh, kw = self.kernel_size
        cols = graph.im2col(x, kh, kw, self.stride, self.padding)
        y = graph.matmul(cols, graph.transpose(graph.param(self.weight)))
        if self.bias is not None:
            y = graph.add_bias(y, graph.param(self.bias))
        b = x.shape[0]
        oh = (x.shape[2] + 2 * self.padding - kh) // self.stride + 1
        ow = (x.shape[3] + 2 * self.padding - kw) // self.stride + 1
        y = graph.reshape(y, (b, oh, ow, self.out_channels))
        return graph.permute(y, (0, 3, 1, 2))


class ReLU(Module):
    def build(self, graph, x):
        return graph.relu(x)

    def __repr__(self):
        return "ReLU()"


class LogSoftmax(Module):
    def __init__(self, dim: int = 1):
        if dim not in (1, -1):
            raise ValueError("LogSoftmax only supports dim=1 on (batch, classes) input")
        self.dim = dim

    def build(self, graph, x):
        return graph.log_softmax_rows(x)

    def __repr__(self):
        return "LogSoftmax(dim=1)"


class Flatten(Module):
    def build(self, graph, x):
        return graph.reshape(x, (x.shape[0], math.prod(x.shape[1:])))

    def __repr__(self):
        return "Flatten()"


class Sequential(Module):
    """Layers applied in order. Parameters are named ``<index>.weight`` /
    ``<index>.bias``; a layer or parameter may appear only once."""

    def __init__(self, *layers: Module):
        seen_layers: set[int] = set()
        seen_params: set[int] = set()
        for i, layer in enumerate(layers):
            if not isinstance(layer, Module):
                raise TypeError(f"element {i} is not a layer: {layer!r}")
            if id(layer) in seen_layers:
                raise ValueError(f"layer {layer!r} appears more than once")
            seen_layers.add(id(layer))
            for p in layer.parameters():
                if p.id in seen_params:
                    raise ValueError(f"parameter {p.name} is shared between layers")
                seen_params.add(p.id)
        self.layers = list(layers)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, _Weighted):
                layer.weight.name = f"{i}.weight"
                if layer.bias is not None:
                    layer.bias.name = f"{i}.bias"

    def __iter__(self) -> Iterator[Module]:
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def __repr__(self):
        return "Sequential(\n" + "".join(f"  ({i}): {l!r}\n" for i, l in enumerate(self.layers)) + ")"

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def build(self, graph, x):
        for layer in self.layers:
            x = layer.build(graph, x)
        return x


def collect_parameters(model: Module) -> list[Parameter]:
    return model.parameters()


def forward(model: Module, x) -> tuple[Graph, np.ndarray]:
    """Run ``model`` on a batch on a fresh tape; returns the tape and output."""
    x = as_tensor(x)
    graph = Graph()
    model.build(graph, graph.input("x", x.shape))
    return graph, graph.forward({"x": x})


def nll_graph(model: Module, x, targets) -> Graph:
    """Tape computing the mean NLL of ``model(x)`` (which must end in
    LogSoftmax) against integer ``targets``; already evaluated."""
    x = as_tensor(x)
    graph = Graph()
    out = model.build(graph, graph.input("x", x.shape))
    graph.nll_loss_mean(out, targets)
    graph.forward({"x": x})
    return graph


def orthogonal_mlp(sizes, weight_manifold="stiefel", rng=None) -> Sequential:
    """Linear layers with ReLU between them and LogSoftmax at the output.

    ``weight_manifold`` is one request for every layer or a list with one
    entry per layer.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    n_layers = len(sizes) - 1
    requests = list(weight_manifold) if isinstance(weight_manifold, (list, tuple)) else [weight_manifold] * n_layers
    if len(requests) != n_layers:
        raise ValueError(f"{len(requests)} manifold requests for {n_layers} layers")
    layers: list[Module] = []
    for i in range(n_layers):
        layers.append(Linear(sizes[i], sizes[i + 1], weight_manifold=requests[i], rng=rng))
        layers.append(ReLU() if i < n_layers - 1 else LogSoftmax(dim=1))
    return Sequential(*layers)
