"""Dense/sparse matrix algebra with a small reverse-mode autodiff tape and Adam.

Every value is a 2-D float64 numpy array. Sparse operands are scipy CSR
matrices and are always constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

SIGMOID_EPS = 1e-7
LOG_FLOOR = 1e-12

OPS = (
    "leaf", "matmul", "spmm", "add", "mul", "scalar_mul", "relu", "sigmoid",
    "exp", "log", "sum", "slice_rows", "concat_rows", "transpose", "max0", "leaky_relu",
    "gram", "weighted_bce_logits",
)


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, np.ndarray) and x.dtype == np.float64 and x.ndim == 2:
        return x
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def sparse_from_entries(rows: int, cols: int, entries) -> sp.csr_matrix:
    """Build a CSR matrix from (row, col, value) triples.

    Duplicate coordinates are rejected; the CSR result is sorted by (row, col).
    """
    entries = list(entries)
    if entries:
        r, c, v = (np.asarray(a) for a in zip(*entries))
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("sparse entries must be finite")
    keys = np.asarray(r, dtype=np.int64) * cols + np.asarray(c, dtype=np.int64)
    if len(np.unique(keys)) != len(keys):
        raise ValueError("duplicate (row, col) entries")
    m = sp.csr_matrix((v, (r, c)), shape=(rows, cols), dtype=np.float64)
    m.sort_indices()
    return m


class Node:
    """A matrix value on the autodiff tape."""

    __slots__ = ("value", "_grad", "op", "parents", "requires_grad", "_backward", "name")

    def __init__(self, value, op="leaf", parents=(), requires_grad=False, name=None):
        self.value = _as_matrix(value)
        self._grad = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    def accumulate(self, g) -> None:
        self._grad = g if self._grad is None else self._grad + g

    def zero_grad(self):
        self._grad = None

    def detach(self) -> "Node":
        return Node(self.value.copy())

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"

    # operator sugar; constants are wrapped as non-differentiable leaves
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scalar_mul(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scalar_mul(self, -1.0))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def parameter(value, name=None) -> Node:
    return Node(np.array(value, dtype=np.float64, ndmin=2), requires_grad=True, name=name)


def constant(value) -> Node:
    return Node(value)


def _lift(x) -> Node:
    if isinstance(x, Node):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise DimensionError("scalar constants must be applied via scalar_mul or an explicit matrix")
    return Node(arr)


def _check_finite(node: Node) -> Node:
    if not np.all(np.isfinite(node.value)):
        raise NumericError(f"non-finite value produced by op {node.op}")
    return node


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    out = Node(a.value @ b.value, "matmul", (a, b))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad @ b.value.T)
        if b.requires_grad:
            b.accumulate(a.value.T @ out.grad)

    out._backward = backward
    return _check_finite(out)


def spmm(a: sp.spmatrix, b) -> Node:
    """Sparse constant times dense node; differentiable in ``b`` only."""
    b = _lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"spmm shapes {a.shape} @ {b.shape}")
    out = Node(np.asarray(a @ b.value), "spmm", (b,))

    def backward():
        if b.requires_grad:
            b.accumulate(np.asarray(a.T @ out.grad))

    out._backward = backward
    return _check_finite(out)


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shapes {a.shape} + {b.shape}")
    out = Node(a.value + b.value, "add", (a, b))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad)
        if b.requires_grad:
            b.accumulate(out.grad)

    out._backward = backward
    return out


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes {a.shape} * {b.shape}")
    out = Node(a.value * b.value, "mul", (a, b))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * b.value)
        if b.requires_grad:
            b.accumulate(out.grad * a.value)

    out._backward = backward
    return out


def scalar_mul(a, c: float) -> Node:
    a = _lift(a)
    out = Node(a.value * c, "scalar_mul", (a,))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * c)

    out._backward = backward
    return out


def relu(a) -> Node:
    a = _lift(a)
    mask = a.value > 0
    out = Node(np.where(mask, a.value, 0.0), "relu", (a,))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * mask)

    out._backward = backward
    return out


def max0(a) -> Node:
    """Rectifier used on latent samples; same kink convention as relu."""
    out = relu(a)
    out.op = "max0"
    return out


def sigmoid_value(x):
    """Logistic sigmoid on plain arrays or floats (unclamped)."""
    return expit(np.asarray(x, dtype=np.float64))


def sigmoid(a) -> Node:
    """Logistic sigmoid clamped to [SIGMOID_EPS, 1 - SIGMOID_EPS]."""
    a = _lift(a)
    raw = sigmoid_value(a.value)
    value = np.clip(raw, SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    clamped = value != raw
    out = Node(value, "sigmoid", (a,))

    def backward():
        if a.requires_grad:
            d = raw * (1.0 - raw)
            if clamped.any():
                d[clamped] = 0.0
            d *= out.grad
            a.accumulate(d)

    out._backward = backward
    return out


def gram_value(x) -> np.ndarray:
    """x xᵀ summed column by column in index order, so every entry is exactly
    symmetric and equals the same-order dot product of its two rows."""
    x = _as_matrix(x)
    out = np.multiply.outer(x[:, 0], x[:, 0])
    if x.shape[1] > 1:
        tmp = np.empty_like(out)
        for k in range(1, x.shape[1]):
            np.multiply.outer(x[:, k], x[:, k], out=tmp)
            out += tmp
    return out


def gram(a) -> Node:
    a = _lift(a)
    out = Node(gram_value(a.value), "gram", (a,))

    def backward():
        if a.requires_grad:
            g = out.grad
            a.accumulate((g + g.T) @ a.value)

    out._backward = backward
    return _check_finite(out)


def weighted_bce_logits(a, sign, weight, signed_weight=None) -> Node:
    """-mean(weight * log q) with q = clamped sigmoid(sign * a).

    For a binary target t, sign = 2t - 1 turns q into p where t = 1 and 1 - p
    where t = 0, so this is the weighted cross-entropy of sigmoid(a) in one
    primitive. Clamped entries get zero gradient, as in ``sigmoid``.
    """
    a = _lift(a)
    if a.shape != np.shape(sign) or a.shape != np.shape(weight):
        raise DimensionError(f"logits {a.shape} vs target {np.shape(sign)}")
    q = expit(a.value * sign)
    clamped = (q < SIGMOID_EPS) | (q > 1.0 - SIGMOID_EPS)
    any_clamped = bool(clamped.any())
    if any_clamped:
        np.clip(q, SIGMOID_EPS, 1.0 - SIGMOID_EPS, out=q)
    n = q.size
    out = Node(np.array([[-np.vdot(weight, np.log(q)) / n]]), "weighted_bce_logits", (a,))

    def backward():
        if a.requires_grad:
            sw = signed_weight if signed_weight is not None else weight * sign
            g = q - 1.0
            g *= sw
            if any_clamped:
                g[clamped] = 0.0
            g *= out.grad[0, 0] / n
            a.accumulate(g)

    out._backward = backward
    return _check_finite(out)


def exp(a) -> Node:
    a = _lift(a)
    out = Node(np.exp(a.value), "exp", (a,))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * out.value)

    out._backward = backward
    return _check_finite(out)


def log(a) -> Node:
    """log(max(x, LOG_FLOOR)); zero gradient below the floor."""
    a = _lift(a)
    x = a.value
    floored = x <= LOG_FLOOR
    any_floored = bool(floored.any())
    safe = np.maximum(x, LOG_FLOOR) if any_floored else x
    out = Node(np.log(safe), "log", (a,))

    def backward():
        if a.requires_grad:
            g = out.grad / safe
            if any_floored:
                g[floored] = 0.0
            a.accumulate(g)

    out._backward = backward
    return out


def sum_all(a) -> Node:
    a = _lift(a)
    out = Node(a.value.sum(), "sum", (a,))

    def backward():
        if a.requires_grad:
            a.accumulate(np.full_like(a.value, out.grad[0, 0]))

    out._backward = backward
    return _check_finite(out)


def mean_all(a) -> Node:
    a = _lift(a)
    return scalar_mul(sum_all(a), 1.0 / a.value.size)


def slice_rows(a, start: int, stop: int) -> Node:
    a = _lift(a)
    out = Node(a.value[start:stop], "slice_rows", (a,))

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.value)
            g[start:stop] = out.grad
            a.accumulate(g)

    out._backward = backward
    return out


def concat_rows(nodes) -> Node:
    nodes = [_lift(n) for n in nodes]
    cols = {n.shape[1] for n in nodes}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows column mismatch {sorted(cols)}")
    out = Node(np.vstack([n.value for n in nodes]), "concat_rows", nodes)
    offsets = np.cumsum([0] + [n.shape[0] for n in nodes])

    def backward():
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad:
                n.accumulate(out.grad[lo:hi])

    out._backward = backward
    return out


def transpose(a) -> Node:
    a = _lift(a)
    out = Node(a.value.T.copy(), "transpose", (a,))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad.T)

    out._backward = backward
    return out


def leaky_relu(a, slope: float = 0.2) -> Node:
    a = _lift(a)
    scale = np.where(a.value > 0, 1.0, slope)
    out = Node(a.value * scale, "leaky_relu", (a,))

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * scale)

    out._backward = backward
    return out


def clip(a, lo: float, hi: float) -> Node:
    """Clamp built from relu: max(min(x, hi), lo)."""
    a = _lift(a)
    shape = a.shape
    upper = add(a, scalar_mul(relu(add(a, np.full(shape, -hi))), -1.0))
    return add(relu(add(upper, np.full(shape, -lo))), np.full(shape, lo))


def add_row(a, row) -> Node:
    """Add a 1×C row to every row of ``a`` (implemented as ones @ row)."""
    a, row = _lift(a), _lift(row)
    return add(a, matmul(np.ones((a.shape[0], 1)), row))


def _topological(root: Node):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d loss / d leaf into every reachable leaf's ``grad``."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a 1x1 loss, got {loss.shape}")
    order = _topological(loss)
    # intermediate grads start fresh each call; leaf grads accumulate
    for node in order:
        if node.op != "leaf":
            node.zero_grad()
    loss.accumulate(np.ones((1, 1)))
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


@dataclass
class Adam:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("Adam needs 0 < beta1, beta2 < 1 and eps > 0")

    def step(self, params) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(params):
            g = p.grad
            if i not in self.m:
                self.m[i] = np.zeros_like(p.value)
                self.v[i] = np.zeros_like(p.value)
            if self.m[i].shape != p.value.shape:
                raise DimensionError(f"parameter {i} changed shape")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.zero_grad()


def finite_difference_check(loss_fn, params, h=1e-5, n_coords=100, seed=0) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` takes no arguments and builds a fresh 1×1 loss node from the
    current values of ``params``. Coordinates are sampled with a seeded RNG.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.value).all():
        raise NumericError("loss is not finite")
    backward(loss)
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.value.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        picks = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in picks]
    worst = 0.0
    for i, j in coords:
        p = params[i]
        flat = p.value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = float(loss_fn().value[0, 0])
        flat[j] = orig - h
        down = float(loss_fn().value[0, 0])
        flat[j] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError("loss is not finite")
        numeric = (up - down) / (2 * h)
        analytic = p.grad.reshape(-1)[j]
        err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
