"""Reverse-mode automatic differentiation on an explicit tape.

A :class:`Graph` is built one primitive at a time; every builder call runs
shape inference immediately, so a malformed graph is rejected before any
data is touched. :meth:`Graph.forward` binds named inputs and evaluates the
tape in order, :meth:`Graph.backward` walks it in reverse and accumulates
Euclidean gradients into each :class:`Parameter`'s ``egrad``.

Models rebuild their graph on every forward call, so the tape is dynamic.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import BackwardBeforeForward, InvalidGeometry, NonScalarOutput, ShapeMismatch, UnboundInput
from .linalg import as_tensor
from .manifolds import Euclidean, Manifold

_param_ids = itertools.count()

OP_KINDS = frozenset({
    "matmul", "add_bias", "relu", "log_softmax_rows", "nll_loss_mean",
    "reshape", "im2col", "scale", "sum",
    # objective-building extras, not used by any layer
    "add", "mul", "permute",
})
LEAF_KINDS = frozenset({"input", "param", "const"})


class Parameter:
    """A trainable tensor living on a manifold.

    ``egrad`` accumulates the back-propagated (Euclidean) gradient;
    ``rgrad`` holds the Riemannian gradient once an optimizer has converted
    it.
    """

    def __init__(self, value, manifold: Optional[Manifold] = None, name: Optional[str] = None,
                 requires_grad: bool = True):
        self.value = as_tensor(value, copy=True)
        self.manifold = manifold if manifold is not None else Euclidean(self.value.shape)
        if tuple(self.manifold.shape) != self.value.shape:
            raise ShapeMismatch(f"value shape {self.value.shape} does not match manifold {self.manifold}")
        self.id = next(_param_ids)
        self.name = name if name is not None else f"param{self.id}"
        self.requires_grad = requires_grad
        self.egrad: Optional[np.ndarray] = None
        self.rgrad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Parameter(name={self.name!r}, manifold={self.manifold}, shape={self.shape})"


def zero_grad(parameters: Iterable[Parameter]) -> None:
    for p in parameters:
        p.egrad = None
        p.rgrad = None


@dataclass(eq=False)
class Node:
    graph: "Graph" = field(repr=False)
    index: int
    kind: str
    inputs: tuple
    shape: tuple
    attrs: dict = field(default_factory=dict)
    needs_grad: bool = False

    @property
    def value(self) -> np.ndarray:
        return self.graph.values[self.index]


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise InvalidGeometry(
            f"size {size}, kernel {kernel}, stride {stride}, padding {pad} gives a non-integral output size")
    return span // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Patches of a (B, C, H, W) batch as rows of a (B*H'*W', C*kh*kw) matrix,
    columns ordered (channel, kernel row, kernel col) with kernel col fastest."""
    b, c, h, w = x.shape
    oh, ow = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    img = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((b, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = img[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * kh * kw)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the image."""
    b, c, h, w = shape
    oh, ow = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    col = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            img[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += col[:, :, i, j]
    return img[:, :, pad:pad + h, pad:pad + w]


class Graph:
    """Tape of primitive operations; the last node added is the output."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[Optional[np.ndarray]] = []
        self.parameters: list[Parameter] = []
        self._param_nodes: dict[int, Node] = {}
        self._bound: Optional[dict] = None

    # -- construction --------------------------------------------------------

    def _add(self, kind, inputs=(), shape=(), needs_grad=None, **attrs) -> Node:
        if needs_grad is None:
            needs_grad = any(n.needs_grad for n in inputs)
        for n in inputs:
            if n.graph is not self:
                raise ValueError("node belongs to a different graph")
        node = Node(self, len(self.nodes), kind, tuple(n.index for n in inputs), tuple(shape), attrs, needs_grad)
        self.nodes.append(node)
        self.values.append(None)
        self._bound = None
        return node

    def _mismatch(self, kind, msg):
        return ShapeMismatch(f"node {len(self.nodes)} ({kind}): {msg}")

    @property
    def output(self) -> Node:
        if not self.nodes:
            raise ValueError("empty graph")
        return self.nodes[-1]

    def input(self, name: str, shape: Sequence[int]) -> Node:
        shape = tuple(int(d) for d in shape)
        if not shape or min(shape) < 1:
            raise self._mismatch("input", f"invalid shape {shape}")
        if any(n.kind == "input" and n.attrs["name"] == name for n in self.nodes):
            raise ValueError(f"duplicate input name {name!r}")
        return self._add("input", (), shape, needs_grad=False, name=name)

    def const(self, value) -> Node:
        value = as_tensor(value, copy=True)
        return self._add("const", (), value.shape, needs_grad=False, value=value)

    def param(self, p: Parameter) -> Node:
        node = self._param_nodes.get(p.id)
        if node is None:
            node = self._add("param", (), p.shape, needs_grad=p.requires_grad, parameter=p)
            self._param_nodes[p.id] = node
            self.parameters.append(p)
        return node

    def matmul(self, a: Node, b: Node) -> Node:
        if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
            raise self._mismatch("matmul", f"cannot multiply {a.shape} by {b.shape}")
        return self._add("matmul", (a, b), (a.shape[0], b.shape[1]))

    def add_bias(self, x: Node, bias: Node) -> Node:
        if len(x.shape) != 2 or bias.shape != (x.shape[1],):
            raise self._mismatch("add_bias", f"bias {bias.shape} does not fit rows of {x.shape}")
        return self._add("add_bias", (x, bias), x.shape)

    def relu(self, x: Node) -> Node:
        return self._add("relu", (x,), x.shape)

    def log_softmax_rows(self, x: Node) -> Node:
        if len(x.shape) != 2:
            raise self._mismatch("log_softmax_rows", f"expected a matrix, got {x.shape}")
        return self._add("log_softmax_rows", (x,), x.shape)

    def nll_loss_mean(self, logp: Node, targets) -> Node:
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        if len(logp.shape) != 2 or targets.shape[0] != logp.shape[0]:
            raise self._mismatch("nll_loss_mean", f"{targets.shape[0]} targets for scores {logp.shape}")
        if targets.size and (targets.min() < 0 or targets.max() >= logp.shape[1]):
            raise self._mismatch("nll_loss_mean", f"target outside [0, {logp.shape[1]})")
        return self._add("nll_loss_mean", (logp,), (1,), targets=targets)

    def reshape(self, x: Node, shape: Sequence[int]) -> Node:
        shape = tuple(int(d) for d in shape)
        if math.prod(shape) != math.prod(x.shape) or min(shape) < 1:
            raise self._mismatch("reshape", f"cannot reshape {x.shape} to {shape}")
        return self._add("reshape", (x,), shape)

    def im2col(self, x: Node, kh: int, kw: int, stride: int = 1, padding: int = 0) -> Node:
        if len(x.shape) != 4:
            raise self._mismatch("im2col", f"expected (batch, channels, h, w), got {x.shape}")
        if stride < 1 or padding < 0 or kh < 1 or kw < 1:
            raise InvalidGeometry(f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
        b, c, h, w = x.shape
        oh, ow = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
        return self._add("im2col", (x,), (b * oh * ow, c * kh * kw), kh=kh, kw=kw, stride=stride, padding=padding)

    def scale(self, x: Node, factor: float) -> Node:
        return self._add("scale", (x,), x.shape, factor=float(factor))

    def sum(self, x: Node) -> Node:
        return self._add("sum", (x,), (1,))

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise self._mismatch("add", f"{a.shape} vs {b.shape}")
        return self._add("add", (a, b), a.shape)

    def mul(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise self._mismatch("mul", f"{a.shape} vs {b.shape}")
        return self._add("mul", (a, b), a.shape)

    def permute(self, x: Node, axes: Sequence[int]) -> Node:
        axes = tuple(int(a) for a in axes)
        if sorted(axes) != list(range(len(x.shape))):
            raise self._mismatch("permute", f"axes {axes} for shape {x.shape}")
        return self._add("permute", (x,), tuple(x.shape[a] for a in axes), axes=axes)

    def transpose(self, x: Node) -> Node:
        return self.permute(x, (1, 0))

    # -- evaluation ----------------------------------------------------------

    def forward(self, inputs: Optional[Mapping[str, object]] = None) -> np.ndarray:
        """Bind ``inputs`` by name, evaluate every node, return the output value."""
        inputs = dict(inputs or {})
        # validate every binding before converting or reading any data
        for node in self.nodes:
            if node.kind != "input":
                continue
            name = node.attrs["name"]
            if name not in inputs:
                raise UnboundInput(f"input {name!r} is not bound")
            got = tuple(getattr(inputs[name], "shape", np.shape(inputs[name])))
            if got != node.shape:
                raise ShapeMismatch(f"node {node.index} (input {name!r}): expected {node.shape}, got {got}")
        for node in self.nodes:
            if node.kind == "param" and node.attrs["parameter"].shape != node.shape:
                raise ShapeMismatch(f"node {node.index} (param): parameter shape changed")

        vals = self.values
        for node in self.nodes:
            vals[node.index] = self._eval(node, inputs)
        self._bound = inputs
        return vals[-1]

    def _eval(self, node: Node, inputs) -> np.ndarray:
        k = node.kind
        a = node.attrs
        if k == "input":
            return as_tensor(inputs[a["name"]])
        if k == "const":
            return a["value"]
        if k == "param":
            return a["parameter"].value
        xs = [self.values[i] for i in node.inputs]
        if k == "matmul":
            return xs[0] @ xs[1]
        if k == "add_bias":
            return xs[0] + xs[1]
        if k == "relu":
            return np.maximum(xs[0], 0.0)
        if k == "log_softmax_rows":
            z = xs[0] - xs[0].max(axis=1, keepdims=True)
            return z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        if k == "nll_loss_mean":
            t = a["targets"]
            return np.array([-xs[0][np.arange(t.size), t].mean()])
        if k == "reshape":
            return xs[0].reshape(node.shape)
        if k == "im2col":
            return im2col(xs[0], a["kh"], a["kw"], a["stride"], a["padding"])
        if k == "scale":
            return a["factor"] * xs[0]
        if k == "sum":
            return np.array([xs[0].sum()])
        if k == "add":
            return xs[0] + xs[1]
        if k == "mul":
            return xs[0] * xs[1]
        if k == "permute":
            return xs[0].transpose(a["axes"])
        raise ValueError(f"unknown op kind {k!r}")

    def backward(self) -> None:
        """Accumulate d(output)/d(value) into ``egrad`` of every parameter."""
        if self._bound is None:
            raise BackwardBeforeForward("forward has not run on this graph")
        out = self.output
        if out.shape != (1,):
            raise NonScalarOutput(f"output shape {out.shape} is not scalar")

        grads: dict[int, np.ndarray] = {out.index: np.ones(1)}
        for node in reversed(self.nodes):
            g = grads.pop(node.index, None)
            if g is None or not node.needs_grad:
                continue
            if node.kind == "param":
                p = node.attrs["parameter"]
                p.egrad = g.copy() if p.egrad is None else p.egrad + g
                continue
            for i, gi in zip(node.inputs, self._vjp(node, g)):
                if gi is None or not self.nodes[i].needs_grad:
                    continue
                grads[i] = gi if i not in grads else grads[i] + gi

    def _vjp(self, node: Node, g: np.ndarray):
        k = node.kind
        a = node.attrs
        xs = [self.values[i] for i in node.inputs]
        if k == "matmul":
            return g @ xs[1].T, xs[0].T @ g
        if k == "add_bias":
            return g, g.sum(axis=0)
        if k == "relu":
            return (g * (xs[0] > 0.0),)
        if k == "log_softmax_rows":
            soft = np.exp(self.values[node.index])
            return (g - soft * g.sum(axis=1, keepdims=True),)
        if k == "nll_loss_mean":
            t = a["targets"]
            gx = np.zeros_like(xs[0])
            gx[np.arange(t.size), t] = -g[0] / t.size
            return (gx,)
        if k == "reshape":
            return (g.reshape(xs[0].shape),)
        if k == "im2col":
            return (col2im(g, xs[0].shape, a["kh"], a["kw"], a["stride"], a["padding"]),)
        if k == "scale":
            return (a["factor"] * g,)
        if k == "sum":
            return (np.full(xs[0].shape, g[0]),)
        if k == "add":
            return g, g
        if k == "mul":
            return g * xs[1], g * xs[0]
        if k == "permute":
            return (g.transpose(np.argsort(a["axes"])),)
        raise ValueError(f"no gradient rule for {k!r}")


def grad_check(graph: Graph, param: Parameter, h: float = 1e-6) -> float:
    """Max relative error between backward and central differences for one
    parameter, using the inputs of the graph's last forward call.

    Gradients of every parameter on the graph are restored afterwards.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError(f"step {h} outside [1e-8, 1e-4]")
    if graph._bound is None:
        raise BackwardBeforeForward("grad_check needs a prior forward call to know the inputs")
    inputs = graph._bound
    saved = {p.id: (p.egrad, p.rgrad) for p in graph.parameters}
    try:
        for p in graph.parameters:
            p.egrad = None
        graph.forward(inputs)
        graph.backward()
        analytic = np.zeros(param.shape) if param.egrad is None else param.egrad.copy()

        original = param.value
        work = original.copy()
        flat = work.reshape(-1)
        numeric = np.empty(flat.size)
        param.value = work
        try:
            for i in range(flat.size):
                x0 = flat[i]
                flat[i] = x0 + h
                fp = graph.forward(inputs)[0]
                flat[i] = x0 - h
                fm = graph.forward(inputs)[0]
                flat[i] = x0
                numeric[i] = (fp - fm) / (2.0 * h)
        finally:
            param.value = original
        graph.forward(inputs)
    finally:
        for p in graph.parameters:
            p.egrad, p.rgrad = saved[p.id]
    err = np.abs(analytic.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max())
