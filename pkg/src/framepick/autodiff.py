"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` is an append-only tape of nodes. Leaves are constants or
named parameters living in a :class:`ParameterStore`; interior nodes are
built with :meth:`Graph.apply` from a fixed set of primitive kinds. Node ids
referenced as inputs are always smaller than the referencing id, so the tape
is topologically ordered by construction and :meth:`Graph.backward` is a
single reverse sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DomainError, EvaluationError, ShapeError

NORM_EPS = 1e-12   # guard for l2-normalize / cosine denominators
LOG_MIN = 1e-300   # log(x) requires x >= LOG_MIN

PRIMITIVE_KINDS = (
    "add",
    "subtract",
    "scalar-multiply",
    "elementwise-multiply",
    "matrix-vector-product",
    "matrix-matrix-product",
    "dot",
    "l2-norm",
    "l2-normalize",
    "cosine-similarity",
    "sigmoid",
    "tanh",
    "log",
    "exp",
    "sum",
    "mean",
    "concat",
    "softmax-with-temperature",
    "cross-entropy-with-logits",
)


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _require_vector(kind: str, a: np.ndarray, role: str = "operand") -> None:
    if a.ndim != 1:
        raise ShapeError(f"{kind}: {role} must be a vector, got shape {a.shape}")


def _require_same_shape(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: operand shapes {a.shape} and {b.shape} differ")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        positive = 1.0 / (1.0 + np.exp(-x))
        ex = np.exp(x)
        negative = ex / (1.0 + ex)
    return np.where(x >= 0, positive, negative)


def _softmax(x: np.ndarray, tau: float) -> np.ndarray:
    z = x / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)


class ParameterStore:
    """Named float64 tensors with same-shaped gradient accumulators."""

    def __init__(self) -> None:
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self._values:
            raise ContractError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise DomainError(f"parameter {name!r} has non-finite entries")
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)

    def names(self) -> list[str]:
        return list(self._values)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def set_value(self, name: str, value) -> None:
        arr = np.array(value, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise ShapeError(
                f"parameter {name!r}: shapes {arr.shape} and "
                f"{self._values[name].shape} differ"
            )
        self._values[name] = arr

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self._grads[name] += grad

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def gradient_norms(self) -> dict[str, float]:
        return {name: float(np.linalg.norm(g)) for name, g in self._grads.items()}

    def sgd_step(self, learning_rate: float) -> None:
        """In-place gradient-descent update; a zero rate leaves values untouched."""
        if learning_rate == 0.0:
            return
        for name, value in self._values.items():
            value -= learning_rate * self._grads[name]


class Graph:
    """Append-only computation tape. Confined to one logical thread."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._param_ids: dict[tuple[int, str], int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def value(self, node_id: int) -> np.ndarray:
        """Forward value of a node. Treat the returned array as read-only."""
        return self.nodes[node_id].value

    def constant(self, value) -> int:
        arr = _as_array(value)
        if not np.isfinite(arr).all():
            raise DomainError("constant leaf has non-finite entries")
        return self._push(Node("const", (), arr))

    def parameter(self, store: ParameterStore, name: str) -> int:
        """Leaf bound to a store tensor; repeated requests reuse one node."""
        key = (id(store), name)
        if key in self._param_ids:
            return self._param_ids[key]
        node_id = self._push(
            Node("param", (), store.value(name).copy(), {"store": store, "name": name})
        )
        self._param_ids[key] = node_id
        return node_id

    def apply(self, kind: str, *inputs: int, **attrs) -> int:
        """Append a primitive node and return its id.

        Raises ShapeError for incompatible operands, DomainError for numeric
        domain violations (tau <= 0, log/exp out of range), ContractError for
        invalid attributes.
        """
        if kind not in _FORWARD:
            raise ContractError(f"unknown primitive kind {kind!r}")
        for nid in inputs:
            if not 0 <= nid < len(self.nodes):
                raise ContractError(f"{kind}: input node id {nid} out of range")
        values = [self.nodes[nid].value for nid in inputs]
        out, extra = _FORWARD[kind](values, attrs)
        node_attrs = dict(attrs)
        node_attrs.update(extra)
        return self._push(Node(kind, tuple(inputs), out, node_attrs))

    def backward(self, root: int) -> dict[int, np.ndarray]:
        """Reverse sweep from a scalar root.

        Adjoints of parameter leaves are accumulated (additively) into their
        owning store's gradient slots; constants receive no accumulation.
        Returns the adjoint of the root and of every node through which a
        parameter influences it; subgraphs with no parameter upstream are not
        differentiated.
        """
        root_node = self.nodes[root]
        if root_node.value.shape != ():
            raise ContractError(
                f"backward root must be scalar, got shape {root_node.value.shape}"
            )
        nodes = self.nodes
        needs = bytearray(root + 1)
        for nid in range(root + 1):
            node = nodes[nid]
            if node.kind == "param":
                needs[nid] = 1
            else:
                for i in node.inputs:
                    if needs[i]:
                        needs[nid] = 1
                        break
        adjoints: dict[int, np.ndarray] = {root: np.asarray(1.0)}
        for nid in range(root, -1, -1):
            g = adjoints.get(nid)
            if g is None:
                continue
            node = nodes[nid]
            if node.kind == "param":
                node.attrs["store"].accumulate(node.attrs["name"], g)
                continue
            if node.kind == "const":
                continue
            values = [nodes[i].value for i in node.inputs]
            grads = _BACKWARD[node.kind](node, values, g)
            for input_id, grad in zip(node.inputs, grads):
                if grad is None or not needs[input_id]:
                    continue
                if input_id in adjoints:
                    adjoints[input_id] = adjoints[input_id] + grad
                else:
                    adjoints[input_id] = grad
        return adjoints

    def count_kind(self, kind: str) -> int:
        return sum(1 for node in self.nodes if node.kind == kind)


# ---------------------------------------------------------------------------
# primitive forward implementations: values, attrs -> (output, extra_attrs)

def _fw_add(values, attrs):
    a, b = values
    _require_same_shape("add", a, b)
    return a + b, {}


def _fw_subtract(values, attrs):
    a, b = values
    _require_same_shape("subtract", a, b)
    return a - b, {}


def _fw_scalar_multiply(values, attrs):
    s, x = values
    if s.ndim != 0:
        raise ShapeError(f"scalar-multiply: first operand must be scalar, got shape {s.shape}")
    return s * x, {}


def _fw_elementwise_multiply(values, attrs):
    a, b = values
    _require_same_shape("elementwise-multiply", a, b)
    return a * b, {}


def _fw_matvec(values, attrs):
    m, x = values
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise ShapeError(
            f"matrix-vector-product: operand shapes {m.shape} and {x.shape} are incompatible"
        )
    return m @ x, {}


def _fw_matmat(values, attrs):
    a, b = values
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matrix-matrix-product: operand shapes {a.shape} and {b.shape} are incompatible"
        )
    return a @ b, {}


def _fw_dot(values, attrs):
    a, b = values
    _require_vector("dot", a)
    _require_same_shape("dot", a, b)
    return np.asarray(a @ b), {}


def _fw_l2_norm(values, attrs):
    (x,) = values
    _require_vector("l2-norm", x)
    return np.asarray(np.linalg.norm(x)), {}


def _fw_l2_normalize(values, attrs):
    (x,) = values
    _require_vector("l2-normalize", x)
    norm = float(np.linalg.norm(x))
    return x / max(norm, NORM_EPS), {"norm": norm}


def _fw_cosine(values, attrs):
    a, b = values
    _require_vector("cosine-similarity", a)
    _require_same_shape("cosine-similarity", a, b)
    na = max(float(np.linalg.norm(a)), NORM_EPS)
    nb = max(float(np.linalg.norm(b)), NORM_EPS)
    return np.asarray((a @ b) / (na * nb)), {"na": na, "nb": nb}


def _fw_sigmoid(values, attrs):
    return _sigmoid(values[0]), {}


def _fw_tanh(values, attrs):
    return np.tanh(values[0]), {}


def _fw_log(values, attrs):
    (x,) = values
    if np.any(x < LOG_MIN):
        raise DomainError(f"log: input below {LOG_MIN:g}")
    return np.log(x), {}


def _fw_exp(values, attrs):
    with np.errstate(over="ignore"):
        out = np.exp(values[0])
    if not np.isfinite(out).all():
        raise DomainError("exp: result overflows float64")
    return out, {}


def _fw_sum(values, attrs):
    return np.asarray(values[0].sum()), {}


def _fw_mean(values, attrs):
    return np.asarray(values[0].mean()), {}


def _fw_concat(values, attrs):
    if not values:
        raise ContractError("concat: needs at least one input")
    pieces = []
    for v in values:
        if v.ndim > 1:
            raise ShapeError(f"concat: operands must be scalars or vectors, got shape {v.shape}")
        pieces.append(np.atleast_1d(v))
    return np.concatenate(pieces), {}


def _fw_softmax(values, attrs):
    (x,) = values
    _require_vector("softmax-with-temperature", x)
    tau = attrs.get("tau")
    if tau is None:
        raise ContractError("softmax-with-temperature: missing tau attribute")
    if not tau > 0:
        raise DomainError(f"softmax-with-temperature: tau must be positive, got {tau}")
    return _softmax(x, float(tau)), {}


def _fw_cross_entropy(values, attrs):
    (x,) = values
    _require_vector("cross-entropy-with-logits", x)
    target = attrs.get("target")
    if target is None or not isinstance(target, (int, np.integer)):
        raise ContractError("cross-entropy-with-logits: missing integer target attribute")
    if not 0 <= target < x.shape[0]:
        raise ContractError(
            f"cross-entropy-with-logits: target {target} out of range for {x.shape[0]} logits"
        )
    m = x.max()
    lse = m + np.log(np.exp(x - m).sum())
    return np.asarray(lse - x[target]), {}


_FORWARD: dict[str, Callable] = {
    "add": _fw_add,
    "subtract": _fw_subtract,
    "scalar-multiply": _fw_scalar_multiply,
    "elementwise-multiply": _fw_elementwise_multiply,
    "matrix-vector-product": _fw_matvec,
    "matrix-matrix-product": _fw_matmat,
    "dot": _fw_dot,
    "l2-norm": _fw_l2_norm,
    "l2-normalize": _fw_l2_normalize,
    "cosine-similarity": _fw_cosine,
    "sigmoid": _fw_sigmoid,
    "tanh": _fw_tanh,
    "log": _fw_log,
    "exp": _fw_exp,
    "sum": _fw_sum,
    "mean": _fw_mean,
    "concat": _fw_concat,
    "softmax-with-temperature": _fw_softmax,
    "cross-entropy-with-logits": _fw_cross_entropy,
}


# ---------------------------------------------------------------------------
# primitive vector-Jacobian products: node, input values, upstream -> grads

def _bw_add(node, values, g):
    return g, g


def _bw_subtract(node, values, g):
    return g, -g


def _bw_scalar_multiply(node, values, g):
    s, x = values
    return np.asarray((g * x).sum()), s * g


def _bw_elementwise_multiply(node, values, g):
    a, b = values
    return g * b, g * a


def _bw_matvec(node, values, g):
    m, x = values
    return g[:, None] * x[None, :], m.T @ g


def _bw_matmat(node, values, g):
    a, b = values
    return g @ b.T, a.T @ g


def _bw_dot(node, values, g):
    a, b = values
    return g * b, g * a


def _bw_l2_norm(node, values, g):
    (x,) = values
    return (g * x / max(float(node.value), NORM_EPS),)


def _bw_l2_normalize(node, values, g):
    (x,) = values
    norm = node.attrs["norm"]
    if norm <= NORM_EPS:
        return (g / NORM_EPS,)
    y = node.value
    return ((g - y * (y @ g)) / norm,)


def _bw_cosine(node, values, g):
    a, b = values
    na, nb = node.attrs["na"], node.attrs["nb"]
    c = float(node.value)
    ga = g * (b / (na * nb) - c * a / (na * na))
    gb = g * (a / (na * nb) - c * b / (nb * nb))
    return ga, gb


def _bw_sigmoid(node, values, g):
    y = node.value
    return (g * y * (1.0 - y),)


def _bw_tanh(node, values, g):
    y = node.value
    return (g * (1.0 - y * y),)


def _bw_log(node, values, g):
    return (g / values[0],)


def _bw_exp(node, values, g):
    return (g * node.value,)


def _bw_sum(node, values, g):
    return (np.broadcast_to(g, values[0].shape).copy(),)


def _bw_mean(node, values, g):
    x = values[0]
    return (np.broadcast_to(g / x.size, x.shape).copy(),)


def _bw_concat(node, values, g):
    grads = []
    offset = 0
    for v in values:
        length = 1 if v.ndim == 0 else v.shape[0]
        piece = g[offset : offset + length]
        grads.append(piece.reshape(v.shape))
        offset += length
    return tuple(grads)


def _bw_softmax(node, values, g):
    p = node.value
    tau = float(node.attrs["tau"])
    return ((p * (g - (g @ p))) / tau,)


def _bw_cross_entropy(node, values, g):
    x = values[0]
    p = _softmax(x, 1.0)
    p[node.attrs["target"]] -= 1.0
    return (g * p,)


_BACKWARD: dict[str, Callable] = {
    "add": _bw_add,
    "subtract": _bw_subtract,
    "scalar-multiply": _bw_scalar_multiply,
    "elementwise-multiply": _bw_elementwise_multiply,
    "matrix-vector-product": _bw_matvec,
    "matrix-matrix-product": _bw_matmat,
    "dot": _bw_dot,
    "l2-norm": _bw_l2_norm,
    "l2-normalize": _bw_l2_normalize,
    "cosine-similarity": _bw_cosine,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "log": _bw_log,
    "exp": _bw_exp,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "concat": _bw_concat,
    "softmax-with-temperature": _bw_softmax,
    "cross-entropy-with-logits": _bw_cross_entropy,
}


# ---------------------------------------------------------------------------
# finite-difference gradient checking

@dataclass(frozen=True)
class GradCheckReport:
    parameters: dict[str, float]   # per-parameter max relative error
    max_relative_error: float
    tolerance: float
    passed: bool
    worst_parameter: str | None = None


def grad_check(
    build: Callable[[], tuple[Graph, int]],
    store: ParameterStore,
    step: float = 1e-6,
    tolerance: float = 1e-4,
    denominator_floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``build`` must construct a fresh graph from the store's current values
    and return (graph, scalar root id); any randomness must be frozen inside
    it. Every coordinate of every store parameter is perturbed by ``step``.
    The relative error denominator is floored at ``denominator_floor`` so
    vanishing gradients are compared at absolute scale
    ``tolerance * denominator_floor``. Gradient slots are reset as a side
    effect.
    """
    if not step > 0:
        raise DomainError(f"grad_check: step must be positive, got {step}")
    store.zero_grads()
    graph, root = build()
    if not np.isfinite(graph.value(root)):
        raise EvaluationError("grad_check: non-finite value at the unperturbed point")
    graph.backward(root)
    analytic = {name: store.grad(name).copy() for name in store.names()}

    per_parameter: dict[str, float] = {}
    for name in store.names():
        values = store.value(name)
        fd = np.zeros_like(values)
        for i in range(values.size):
            original = values.flat[i]
            values.flat[i] = original + step
            g_plus, r_plus = build()
            plus = float(g_plus.value(r_plus))
            values.flat[i] = original - step
            g_minus, r_minus = build()
            minus = float(g_minus.value(r_minus))
            values.flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise EvaluationError(
                    f"grad_check: non-finite value while perturbing parameter {name!r}"
                )
            fd.flat[i] = (plus - minus) / (2.0 * step)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), denominator_floor)
        rel = np.abs(a - fd) / denom
        per_parameter[name] = float(rel.max()) if rel.size else 0.0

    worst = max(per_parameter, key=per_parameter.get) if per_parameter else None
    max_rel = per_parameter[worst] if worst is not None else 0.0
    return GradCheckReport(
        parameters=per_parameter,
        max_relative_error=max_rel,
        tolerance=tolerance,
        passed=max_rel <= tolerance,
        worst_parameter=worst,
    )
