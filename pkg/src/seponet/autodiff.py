"""Reverse-mode tape and order-2 Taylor jets.

Two mechanisms live here.

* :class:`Tape` records primitive operations on :class:`Var` nodes in
  execution order and replays their adjoint rules in reverse to obtain
  parameter gradients.
* :class:`Jet2` carries a value together with raw first and second
  derivatives with respect to scalar coordinate inputs. Jets are pushed
  through affine and activation layers by closed-form rules, and those rules
  are themselves tape primitives with hand-written adjoints, so a loss built
  from jet derivatives is differentiated by a single reverse sweep.

Jets are stored stacked along a leading axis of length ``1 + 2*A`` for ``A``
seeded directions: ``[v, d1_1, ..., d1_A, d2_1, ..., d2_A]``, where ``d2_a``
is the pure second derivative along direction ``a``. Mixed second derivatives
are never formed.

Every public operation accepts plain arrays too; when no operand is a
:class:`Var` the forward rule runs directly on NumPy values and nothing is
recorded.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .tensor import DTYPE, DimensionError


class Var:
    """A node on a :class:`Tape`."""

    __slots__ = ("tape", "idx", "value", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a Var is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=DTYPE))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        if p != 2:
            raise ValueError("only squaring is supported")
        return square(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)


# ---------------------------------------------------------------------------
# primitive registry


@dataclass(frozen=True)
class Primitive:
    """Forward rule ``f(*values, **attrs) -> (out, ctx)`` and adjoint rule
    ``b(g, ctx, needs) -> tuple of input cotangents`` (``None`` where not needed)."""

    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[..., tuple]


PRIMITIVES: dict[str, Primitive] = {}


def primitive(name):
    def register(cls):
        PRIMITIVES[name] = Primitive(name, cls.forward, cls.backward)
        return cls

    return register


@dataclass
class _Node:
    op: Primitive | None
    inputs: tuple  # tape indices, or None for constant operands
    ctx: Any
    requires_grad: bool


class Tape:
    """Ordered record of primitive applications.

    Node ids are assigned in execution order, so inputs always precede the
    operations that consume them and a reverse scan visits each node once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, requires_grad: bool = True) -> Var:
        value = np.asarray(value, dtype=DTYPE)
        self.nodes.append(_Node(None, (), None, requires_grad))
        self.values.append(value)
        return Var(self, len(self.nodes) - 1, value, requires_grad)

    def record(self, op: str | Primitive, inputs: Sequence, **attrs) -> Var:
        """Apply ``op`` to ``inputs`` and append the result node."""
        if isinstance(op, str):
            try:
                op = PRIMITIVES[op]
            except KeyError:
                raise RuntimeError(f"unknown primitive {op!r}") from None
        ids = []
        vals = []
        requires = False
        for x in inputs:
            if isinstance(x, Var):
                if x.tape is not self:
                    raise RuntimeError("operand belongs to a different tape")
                ids.append(x.idx)
                vals.append(x.value)
                requires = requires or x.requires_grad
            else:
                ids.append(None)
                vals.append(x)
        out, ctx = op.forward(*vals, **attrs)
        self.nodes.append(_Node(op, tuple(ids), ctx if requires else None, requires))
        self.values.append(out)
        return Var(self, len(self.nodes) - 1, out, requires)

    def backward(self, output: Var, seed=None) -> "Gradients":
        if output.tape is not self or output.idx >= len(self.nodes):
            raise RuntimeError("output is not on this tape")
        if seed is None:
            seed = np.ones_like(output.value)
        seed = np.asarray(seed, dtype=DTYPE)
        if seed.shape != output.value.shape:
            raise DimensionError(
                f"seed shape {seed.shape} does not match output shape {output.value.shape}"
            )
        grads: list[np.ndarray | None] = [None] * (output.idx + 1)
        grads[output.idx] = seed
        nodes = self.nodes
        for i in range(output.idx, -1, -1):
            g = grads[i]
            node = nodes[i]
            if g is None or node.op is None or not node.requires_grad:
                continue
            needs = tuple(j is not None and nodes[j].requires_grad for j in node.inputs)
            if not any(needs):
                continue
            in_grads = node.op.backward(g, node.ctx, needs)
            for j, need, gj in zip(node.inputs, needs, in_grads):
                if not need or gj is None:
                    continue
                if grads[j] is None:
                    grads[j] = gj
                else:
                    grads[j] = grads[j] + gj
            if i != output.idx:
                grads[i] = None
        leaves = {
            j: (grads[j] if grads[j] is not None else np.zeros_like(self.values[j]))
            for j, n in enumerate(nodes[: output.idx + 1])
            if n.op is None and n.requires_grad
        }
        for j, n in enumerate(nodes[output.idx + 1 :], start=output.idx + 1):
            if n.op is None and n.requires_grad:
                leaves[j] = np.zeros_like(self.values[j])
        return Gradients(leaves)


class Gradients(dict):
    """Leaf cotangents keyed by node id; index with the leaf :class:`Var`."""

    def __getitem__(self, key):
        if isinstance(key, Var):
            key = key.idx
        return super().__getitem__(key)


def backward(tape: Tape, output: Var, seed=None) -> Gradients:
    return tape.backward(output, seed)


def tape_record(tape: Tape, op, inputs, **attrs) -> Var:
    return tape.record(op, inputs, **attrs)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _apply(name: str, inputs: Sequence, **attrs):
    for x in inputs:
        if isinstance(x, Var):
            return x.tape.record(PRIMITIVES[name], inputs, **attrs)
    out, _ = PRIMITIVES[name].forward(*inputs, **attrs)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural primitives


@primitive("add")
class _Add:
    @staticmethod
    def forward(a, b):
        return np.add(a, b), (np.shape(a), np.shape(b))

    @staticmethod
    def backward(g, ctx, needs):
        sa, sb = ctx
        return (
            _unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(g, sb) if needs[1] else None,
        )


@primitive("sub")
class _Sub:
    @staticmethod
    def forward(a, b):
        return np.subtract(a, b), (np.shape(a), np.shape(b))

    @staticmethod
    def backward(g, ctx, needs):
        sa, sb = ctx
        return (
            _unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(-g, sb) if needs[1] else None,
        )


@primitive("mul")
class _Mul:
    @staticmethod
    def forward(a, b):
        return np.multiply(a, b), (a, b)

    @staticmethod
    def backward(g, ctx, needs):
        a, b = ctx
        return (
            _unbroadcast(g * b, np.shape(a)) if needs[0] else None,
            _unbroadcast(g * a, np.shape(b)) if needs[1] else None,
        )


@primitive("neg")
class _Neg:
    @staticmethod
    def forward(a):
        return np.negative(a), None

    @staticmethod
    def backward(g, ctx, needs):
        return (-g,)


@primitive("square")
class _Square:
    @staticmethod
    def forward(a):
        return np.square(a), a

    @staticmethod
    def backward(g, a, needs):
        return (2.0 * g * a,)


@primitive("sin")
class _Sin:
    @staticmethod
    def forward(a):
        return np.sin(a), a

    @staticmethod
    def backward(g, a, needs):
        return (g * np.cos(a),)


@primitive("tanh")
class _Tanh:
    @staticmethod
    def forward(a):
        t = np.tanh(a)
        return t, t

    @staticmethod
    def backward(g, t, needs):
        return (g * (1.0 - t * t),)


@primitive("sum")
class _Sum:
    @staticmethod
    def forward(a):
        a = np.asarray(a)
        return np.asarray(a.sum()), a.shape

    @staticmethod
    def backward(g, shape, needs):
        return (np.broadcast_to(g, shape).copy(),)


@primitive("mean_square")
class _MeanSquare:
    @staticmethod
    def forward(a):
        a = np.asarray(a)
        return np.asarray(np.mean(a * a)), a

    @staticmethod
    def backward(g, a, needs):
        return ((2.0 / a.size) * g * a,)


@primitive("matmul")
class _Matmul:
    @staticmethod
    def forward(a, b):
        if np.ndim(a) != 2 or np.ndim(b) != 2 or np.shape(a)[1] != np.shape(b)[0]:
            raise DimensionError(f"cannot multiply shapes {np.shape(a)} and {np.shape(b)}")
        return a @ b, (a, b)

    @staticmethod
    def backward(g, ctx, needs):
        a, b = ctx
        return (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None)


@primitive("affine")
class _Affine:
    """``x @ W.T + b`` with ``W`` stored ``out x in``."""

    @staticmethod
    def forward(x, W, b):
        if np.ndim(x) != 2 or np.shape(x)[1] != np.shape(W)[1]:
            raise DimensionError(f"input shape {np.shape(x)} does not fit weight {np.shape(W)}")
        return x @ W.T + b, (x, W)

    @staticmethod
    def backward(g, ctx, needs):
        x, W = ctx
        return (
            g @ W if needs[0] else None,
            g.T @ x if needs[1] else None,
            g.sum(axis=0) if needs[2] else None,
        )


@primitive("getitem")
class _GetItem:
    @staticmethod
    def forward(a, key):
        return a[key], (np.shape(a), key)

    @staticmethod
    def backward(g, ctx, needs):
        shape, key = ctx
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, key, g)
        return (out, None)


@primitive("reshape")
class _Reshape:
    @staticmethod
    def forward(a, shape):
        return np.reshape(a, shape), np.shape(a)

    @staticmethod
    def backward(g, shape, needs):
        return (g.reshape(shape), None)


@primitive("concatenate")
class _Concatenate:
    @staticmethod
    def forward(*arrays, axis=0):
        sizes = [np.shape(a)[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis), (sizes, axis)

    @staticmethod
    def backward(g, ctx, needs):
        sizes, axis = ctx
        splits = np.cumsum(sizes)[:-1]
        parts = np.split(g, splits, axis=axis)
        return tuple(p if n else None for p, n in zip(parts, needs))


def _einsum_grad_spec(spec: str, i: int) -> str:
    lhs, out = spec.split("->")
    ins = lhs.split(",")
    others = [s for j, s in enumerate(ins) if j != i]
    return ",".join([out] + others) + "->" + ins[i]


@primitive("einsum")
class _Einsum:
    """Einstein summation. Each operand index must appear in the output or in
    another operand, which holds for every contraction used in this package.

    The forward pass uses the unoptimised loop so summed indices are visited
    in a fixed order independent of operand sizes (padding a sum with exact
    zeros leaves the result bit-identical)."""

    @staticmethod
    def forward(*operands, spec):
        return np.einsum(spec, *operands, optimize=False), (operands, spec)

    @staticmethod
    def backward(g, ctx, needs):
        operands, spec = ctx
        grads = []
        for i, need in enumerate(needs):
            if not need:
                grads.append(None)
                continue
            others = [op for j, op in enumerate(operands) if j != i]
            grads.append(np.einsum(_einsum_grad_spec(spec, i), g, *others, optimize=True))
        return tuple(grads)


# ---------------------------------------------------------------------------
# public differentiable functions


def add(a, b):
    return _apply("add", (a, b))


def sub(a, b):
    return _apply("sub", (a, b))


def mul(a, b):
    return _apply("mul", (a, b))


def neg(a):
    return _apply("neg", (a,))


def square(a):
    return _apply("square", (a,))


def sin(a):
    return _apply("sin", (a,))


def tanh(a):
    return _apply("tanh", (a,))


def total(a):
    return _apply("sum", (a,))


def mean_square(a):
    return _apply("mean_square", (a,))


def matmul(a, b):
    return _apply("matmul", (a, b))


def affine(x, W, b):
    return _apply("affine", (x, W, b))


def getitem(a, key):
    return _apply("getitem", (a, key))


def reshape(a, shape):
    return _apply("reshape", (a, tuple(shape)))


def concatenate(arrays: Sequence, axis: int = 0):
    return _apply("concatenate", tuple(arrays), axis=axis)


def einsum(spec: str, *operands):
    return _apply("einsum", operands, spec=spec)


# ---------------------------------------------------------------------------
# order-2 jets


def _act_derivs(kind: str, v: np.ndarray):
    """Value and first three derivatives of the activation at ``v``."""
    if kind == "sine":
        s = np.sin(v)
        c = np.cos(v)
        return s, c, -s, -c
    if kind == "tanh":
        t = np.tanh(v)
        g1 = 1.0 - t * t
        return t, g1, -2.0 * t * g1, g1 * (6.0 * t * t - 2.0)
    raise ValueError(f"unsupported activation {kind!r}")


def activate(x, kind: str):
    if kind == "sine":
        return sin(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unsupported activation {kind!r}")


@primitive("jet_affine")
class _JetAffine:
    @staticmethod
    def forward(J, W, b):
        if np.ndim(J) != 3 or np.shape(J)[2] != np.shape(W)[1]:
            raise DimensionError(f"jet shape {np.shape(J)} does not fit weight {np.shape(W)}")
        out = J @ W.T
        out[0] += b
        return out, (J, W)

    @staticmethod
    def backward(g, ctx, needs):
        J, W = ctx
        gJ = g @ W if needs[0] else None
        gW = None
        if needs[1]:
            gW = g.reshape(-1, g.shape[-1]).T @ J.reshape(-1, J.shape[-1])
        gb = g[0].sum(axis=0) if needs[2] else None
        return gJ, gW, gb


@primitive("jet_activation")
class _JetActivation:
    @staticmethod
    def forward(J, kind):
        n_dirs = (J.shape[0] - 1) // 2
        g0, g1, g2, g3 = _act_derivs(kind, J[0])
        out = np.empty_like(J)
        out[0] = g0
        d1 = J[1 : 1 + n_dirs]
        d2 = J[1 + n_dirs :]
        out[1 : 1 + n_dirs] = g1 * d1
        out[1 + n_dirs :] = g2 * d1 * d1 + g1 * d2
        return out, (d1, d2, g1, g2, g3)

    @staticmethod
    def backward(G, ctx, needs):
        d1, d2, g1, g2, g3 = ctx
        n_dirs = d1.shape[0]
        Gv = G[0]
        G1 = G[1 : 1 + n_dirs]
        G2 = G[1 + n_dirs :]
        gJ = np.empty_like(G)
        gJ[0] = Gv * g1 + (G1 * g2 * d1 + G2 * (g3 * d1 * d1 + g2 * d2)).sum(axis=0)
        gJ[1 : 1 + n_dirs] = G1 * g1 + 2.0 * G2 * g2 * d1
        gJ[1 + n_dirs :] = G2 * g1
        return gJ, None


class Jet2:
    """Value with raw first/second derivatives along ``n_dirs`` directions.

    ``stack`` has shape ``(1 + 2*n_dirs, n, width)`` and may be a :class:`Var`
    or a plain array.
    """

    __slots__ = ("stack", "n_dirs")

    def __init__(self, stack, n_dirs: int = 1):
        if np.shape(value_of(stack))[0] != 1 + 2 * n_dirs:
            raise DimensionError("jet stack length must be 1 + 2*n_dirs")
        self.stack = stack
        self.n_dirs = n_dirs

    @classmethod
    def seed(cls, y, directions: Sequence[int] | None = None) -> "Jet2":
        """Jet of the coordinates themselves.

        ``y`` is ``(n,)`` or ``(n, d)``; direction ``a`` seeds ``d1 = e_a``.
        """
        y = np.asarray(y, dtype=DTYPE)
        if y.ndim == 1:
            y = y[:, None]
        n, d = y.shape
        if directions is None:
            directions = list(range(d))
        A = len(directions)
        stack = np.zeros((1 + 2 * A, n, d), dtype=DTYPE)
        stack[0] = y
        for a, axis in enumerate(directions):
            stack[1 + a, :, axis] = 1.0
        return cls(stack, A)

    @classmethod
    def from_parts(cls, v, d1, d2) -> "Jet2":
        return cls(np.stack([np.asarray(v), np.asarray(d1), np.asarray(d2)]).astype(DTYPE), 1)

    @property
    def v(self):
        return getitem(self.stack, 0)

    @property
    def d1(self):
        return self.first(0)

    @property
    def d2(self):
        return self.second(0)

    def first(self, a: int):
        return getitem(self.stack, 1 + a)

    def second(self, a: int):
        return getitem(self.stack, 1 + self.n_dirs + a)

    def rows(self, key) -> "Jet2":
        return Jet2(getitem(self.stack, (slice(None), key)), self.n_dirs)

    @property
    def shape(self):
        return np.shape(value_of(self.stack))[1:]


def jet_affine(j: Jet2, W, b) -> Jet2:
    """``(W v + b, W d1, W d2)``."""
    return Jet2(_apply("jet_affine", (j.stack, W, b)), j.n_dirs)


def jet_activation(j: Jet2, kind: str) -> Jet2:
    """Push a jet through an elementwise activation (chain rule to order 2)."""
    if kind not in ("sine", "tanh"):
        raise ValueError(f"unsupported activation {kind!r}")
    return Jet2(_apply("jet_activation", (j.stack, kind)), j.n_dirs)


def jet_through_layers(layers, activation: str, j: Jet2) -> Jet2:
    for W, b in layers[:-1]:
        j = jet_activation(jet_affine(j, W, b), activation)
    W, b = layers[-1]
    return jet_affine(j, W, b)


def jet_through_mlp(params, y, layers=None) -> Jet2:
    """Jet of a scalar-input MLP at the points ``y``.

    ``params`` is an :class:`~seponet.nets.MlpParams`; ``layers`` optionally
    replaces its weights with tape variables. Returns the stacked
    ``(value, d/dy, d2/dy2)`` over all outputs.
    """
    if params.in_dim != 1:
        raise ValueError(f"jet_through_mlp needs a scalar-input network, got in_dim={params.in_dim}")
    y = np.atleast_1d(np.asarray(y, dtype=DTYPE))
    return jet_through_layers(layers if layers is not None else params.layers, params.activation, Jet2.seed(y))
