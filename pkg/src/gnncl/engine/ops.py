"""Tensor operations with composable vector-Jacobian products.

Every differentiable operation records a node whose VJP is itself built
from these same operations. Running a backward pass with
``create_graph=True`` on a HIGHER_ORDER tape therefore records the
backward computation too, and a second backward pass differentiates
through it. The one deliberate exception is ``binary_cross_entropy``,
whose VJP is a fused numpy kernel: it refuses to record on HIGHER_ORDER
tapes.

Stabilizing shifts (the row max in ``cross_entropy``, the per-segment
max in ``segment_softmax``) are detached constants. Softmax is shift
invariant, so the detachment changes no derivative of any order.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .tensor import (
    DomainError,
    EmptyBatchError,
    GradientMap,
    MissingDependencyError,
    Node,
    SegmentError,
    ShapeError,
    Tape,
    TapeMode,
    TapeModeError,
    Tensor,
    active_tape,
    as_tensor,
)

# Operations whose VJPs are opaque kernels rather than compositions.
FIRST_ORDER_ONLY = frozenset({"binary_cross_entropy"})


def _apply(op: str, data: np.ndarray, inputs: Sequence[Tensor],
           vjp_builder) -> Tensor:
    """Wrap ``data`` in a Tensor and record the op if a tape is live."""
    out = Tensor(data)
    tape = active_tape()
    if tape is None or not tape._recording:
        return out
    ids = tuple(tape.node_id_of(t) for t in inputs)
    if all(i is None for i in ids):
        return out
    if tape.mode is TapeMode.HIGHER_ORDER and op in FIRST_ORDER_ONLY:
        raise TapeModeError(
            f"'{op}' cannot record on a HIGHER_ORDER tape; its backward "
            "pass is not differentiable")
    nid = tape.append(Node(op, ids, vjp_builder(out)))
    out._link(tape, nid)
    return out


def _sum_to_data(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra < 0:
        raise ShapeError(f"cannot reduce shape {g.shape} to {shape}")
    s = g.sum(axis=tuple(range(extra))) if extra else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and s.shape[i] != 1)
    if axes:
        s = s.sum(axis=axes, keepdims=True)
    if s.shape != tuple(shape):
        raise ShapeError(f"cannot reduce shape {g.shape} to {shape}")
    return s


# ---------------------------------------------------------------------------
# shape plumbing

def sum_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to ``shape`` (inverse of broadcasting)."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = _sum_to_data(x.data, shape)
    xs = x.shape

    def build(out):
        def vjp(g):
            return (broadcast_to(g, xs),)
        return vjp

    return _apply("sum_to", data, (x,), build)


def broadcast_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    xs = x.shape

    def build(out):
        def vjp(g):
            return (sum_to(g, xs),)
        return vjp

    return _apply("broadcast_to", np.ascontiguousarray(data), (x,), build)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    xs = x.shape

    def build(out):
        def vjp(g):
            return (reshape(g, xs),)
        return vjp

    return _apply("reshape", x.data.reshape(shape), (x,), build)


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")

    def build(out):
        def vjp(g):
            return (transpose(g),)
        return vjp

    return _apply("transpose", x.data.T.copy(), (x,), build)


# ---------------------------------------------------------------------------
# arithmetic

def add(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    xs, ys = x.shape, y.shape

    def build(out):
        def vjp(g):
            return (sum_to(g, xs), sum_to(g, ys))
        return vjp

    return _apply("add", x.data + y.data, (x, y), build)


def sub(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    xs, ys = x.shape, y.shape

    def build(out):
        def vjp(g):
            return (sum_to(g, xs), neg(sum_to(g, ys)))
        return vjp

    return _apply("sub", x.data - y.data, (x, y), build)


def mul(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    xs, ys = x.shape, y.shape

    def build(out):
        def vjp(g):
            return (sum_to(mul(g, y), xs), sum_to(mul(g, x), ys))
        return vjp

    return _apply("mul", x.data * y.data, (x, y), build)


def div(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if np.any(y.data == 0.0):
        raise DomainError("division by zero")
    xs, ys = x.shape, y.shape

    def build(out):
        def vjp(g):
            gx = sum_to(div(g, y), xs)
            gy = sum_to(neg(mul(g, div(x, mul(y, y)))), ys)
            return (gx, gy)
        return vjp

    return _apply("div", x.data / y.data, (x, y), build)


def neg(x) -> Tensor:
    x = as_tensor(x)

    def build(out):
        def vjp(g):
            return (neg(g),)
        return vjp

    return _apply("neg", -x.data, (x,), build)


def square(x) -> Tensor:
    x = as_tensor(x)

    def build(out):
        def vjp(g):
            return (mul(g, mul(Tensor(2.0), x)),)
        return vjp

    return _apply("square", np.square(x.data), (x,), build)


def abs_(x) -> Tensor:
    """Elementwise absolute value.

    The VJP multiplies by sign(x) held constant, so the derivative at 0
    is 0 and all second derivatives vanish.
    """
    x = as_tensor(x)
    sgn = Tensor(np.sign(x.data))

    def build(out):
        def vjp(g):
            return (mul(g, sgn),)
        return vjp

    return _apply("abs", np.abs(x.data), (x,), build)


def exp(x) -> Tensor:
    x = as_tensor(x)

    def build(out):
        def vjp(g):
            return (mul(g, out),)
        return vjp

    return _apply("exp", np.exp(x.data), (x,), build)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")

    def build(out):
        def vjp(g):
            return (div(g, x),)
        return vjp

    return _apply("log", np.log(x.data), (x,), build)


def tanh(x) -> Tensor:
    x = as_tensor(x)

    def build(out):
        def vjp(g):
            return (mul(g, sub(Tensor(1.0), mul(out, out))),)
        return vjp

    return _apply("tanh", np.tanh(x.data), (x,), build)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    z = x.data
    data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def build(out):
        def vjp(g):
            return (mul(g, mul(out, sub(Tensor(1.0), out))),)
        return vjp

    return _apply("sigmoid", data, (x,), build)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = Tensor((x.data > 0).astype(np.float64))

    def build(out):
        def vjp(g):
            return (mul(g, mask),)
        return vjp

    return _apply("relu", np.maximum(x.data, 0.0), (x,), build)


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    x = as_tensor(x)
    slope = Tensor(np.where(x.data > 0, 1.0, alpha))

    def build(out):
        def vjp(g):
            return (mul(g, slope),)
        return vjp

    return _apply("leaky_relu", np.where(x.data > 0, x.data, alpha * x.data),
                  (x,), build)


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > 0).astype(np.float64)
    data = np.where(x.data > 0, x.data, alpha * np.expm1(x.data))
    pos = Tensor(mask)
    rest = Tensor(1.0 - mask)
    a = Tensor(float(alpha))

    def build(out):
        def vjp(g):
            # derivative is 1 on the positive side, alpha*e^x = out+alpha
            # on the other
            d = add(pos, mul(rest, add(out, a)))
            return (mul(g, d),)
        return vjp

    return _apply("elu", data, (x,), build)


def matmul(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul shapes {x.shape} and {y.shape} do not align")

    def build(out):
        def vjp(g):
            return (matmul(g, transpose(y)), matmul(transpose(x), g))
        return vjp

    return _apply("matmul", x.data @ y.data, (x, y), build)


# ---------------------------------------------------------------------------
# reductions

def sum_(x) -> Tensor:
    x = as_tensor(x)
    xs = x.shape

    def build(out):
        def vjp(g):
            return (broadcast_to(g, xs),)
        return vjp

    return _apply("sum", np.asarray(x.data.sum()), (x,), build)


def sum_axis(x, axis: int, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    kept = list(x.shape)
    kept[axis] = 1
    xs = x.shape

    def build(out):
        def vjp(g):
            return (broadcast_to(reshape(g, tuple(kept)), xs),)
        return vjp

    return _apply("sum_axis", x.data.sum(axis=axis, keepdims=keepdims),
                  (x,), build)


def mean_(x) -> Tensor:
    x = as_tensor(x)
    if x.size == 0:
        raise EmptyBatchError("mean over an empty tensor")
    return div(sum_(x), Tensor(float(x.size)))


def l1_norm(x) -> Tensor:
    return sum_(abs_(x))


def sq_l2_norm(x) -> Tensor:
    return sum_(square(x))


# ---------------------------------------------------------------------------
# indexed gathers and scatters

def _check_index(idx, upper: int, what: str) -> np.ndarray:
    idx = np.asarray(idx)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"{what} must be a 1-D integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= upper):
        raise ShapeError(f"{what} out of range [0, {upper})")
    return idx.astype(np.int64)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows ``x[idx]`` (first axis); duplicates allowed."""
    x = as_tensor(x)
    idx = _check_index(idx, x.shape[0], "row index")
    n = x.shape[0]

    def build(out):
        def vjp(g):
            return (scatter_sum(g, idx, n),)
        return vjp

    return _apply("gather_rows", x.data[idx], (x,), build)


def scatter_sum(x: Tensor, idx, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets given by ``idx``."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise SegmentError("segment ids must be a 1-D integer array")
    if idx.shape[0] != x.shape[0]:
        raise ShapeError(
            f"{x.shape[0]} rows but {idx.shape[0]} segment ids")
    if num_segments <= 0:
        raise SegmentError("num_segments must be positive")
    if idx.size and (idx.min() < 0 or idx.max() >= num_segments):
        raise SegmentError(f"segment ids out of range [0, {num_segments})")
    idx = idx.astype(np.int64)
    data = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(data, idx, x.data)

    def build(out):
        def vjp(g):
            return (gather_rows(g, idx),)
        return vjp

    return _apply("scatter_sum", data, (x,), build)


def segment_softmax(scores: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax over groups of a 1-D score vector.

    ``segment_ids[e]`` names the group of ``scores[e]``; entries of each
    group sum to 1 in the output. Every group in ``[0, num_segments)``
    must be non-empty. The per-group max is subtracted as a constant
    before exponentiation; shift invariance keeps all derivatives exact.
    """
    scores = as_tensor(scores)
    if scores.ndim != 1:
        raise ShapeError(f"scores must be 1-D, got shape {scores.shape}")
    idx = np.asarray(segment_ids)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise SegmentError("segment ids must be a 1-D integer array")
    if idx.shape[0] != scores.shape[0]:
        raise ShapeError(
            f"{scores.shape[0]} scores but {idx.shape[0]} segment ids")
    if num_segments <= 0:
        raise SegmentError("num_segments must be positive")
    if idx.size == 0:
        raise SegmentError("segment_softmax over zero scores")
    if idx.min() < 0 or idx.max() >= num_segments:
        raise SegmentError(f"segment ids out of range [0, {num_segments})")
    counts = np.bincount(idx, minlength=num_segments)
    if np.any(counts == 0):
        empty = int(np.argmin(counts))
        raise SegmentError(f"segment {empty} has no entries")
    idx = idx.astype(np.int64)

    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, idx, scores.data)
    shifted = sub(scores, Tensor(seg_max[idx]))
    num = exp(shifted)
    denom = scatter_sum(num, idx, num_segments)
    return div(num, gather_rows(denom, idx))


# ---------------------------------------------------------------------------
# losses

def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log softmax of a 2-D logit matrix."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {logits.shape}")
    row_max = Tensor(logits.data.max(axis=1, keepdims=True))
    z = sub(logits, row_max)
    lse = log(sum_axis(exp(z), axis=1, keepdims=True))
    return sub(z, lse)


def cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean negative log likelihood of integer ``labels`` under ``logits``.

    ``mask`` optionally restricts the mean to a subset of rows, given
    either as a boolean vector over rows or as row indices.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {logits.shape}")
    labels = np.asarray(labels)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype == np.bool_:
            if mask.shape != (logits.shape[0],):
                raise ShapeError(
                    f"boolean mask of shape {mask.shape} does not cover "
                    f"{logits.shape[0]} rows")
            idx = np.nonzero(mask)[0]
        else:
            idx = _check_index(mask, logits.shape[0], "row index")
        if idx.size == 0:
            raise EmptyBatchError("cross_entropy mask selects zero rows")
        logits = gather_rows(logits, idx)
        labels = labels[idx]
    n, c = logits.shape
    if n == 0:
        raise EmptyBatchError("cross_entropy over zero rows")
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError(f"labels must be {n} integers")
    if labels.min() < 0 or labels.max() >= c:
        raise DomainError(f"labels out of range [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    logp = log_softmax(logits)
    picked = sum_(mul(logp, Tensor(onehot)))
    return neg(div(picked, Tensor(float(n))))


def binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean sigmoid cross entropy with a fused, first-order-only VJP.

    Works from raw logits with the usual log1p(exp(-|z|)) stabilization.
    Raises :class:`TapeModeError` if asked to record on a HIGHER_ORDER
    tape, because the gradient kernel is opaque to the tape.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(
            f"targets shape {t.shape} != logits shape {logits.shape}")
    if logits.size == 0:
        raise EmptyBatchError("binary_cross_entropy over zero elements")
    if np.any((t < 0.0) | (t > 1.0)):
        raise DomainError("targets must lie in [0, 1]")
    z = logits.data
    val = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = float(z.size)
    p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def build(out):
        def vjp(g):
            return (Tensor(g.data * (p - t) / n),)
        return vjp

    return _apply("binary_cross_entropy", np.asarray(val.sum() / n),
                  (logits,), build)


# ---------------------------------------------------------------------------
# backward

def _target_node_id(tape: Tape, t: Tensor) -> Optional[int]:
    if t._tape is not None and t._tape() is tape and t._node_id is not None:
        return t._node_id
    return tape._leaf_ids.get(id(t))


def backward(loss: Tensor, params: Sequence[Tensor],
             create_graph: bool = False) -> GradientMap:
    """Gradients of a scalar ``loss`` with respect to ``params``.

    Every call sweeps the tape afresh and returns a new map; nothing
    accumulates between calls. Params that were registered on the tape
    but do not influence the loss get zero gradients; params the tape
    has never seen raise :class:`MissingDependencyError`.

    With ``create_graph=True`` (HIGHER_ORDER tapes only) the backward
    computation is recorded, so returned gradients can be differentiated
    again.
    """
    if loss.shape != ():
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if loss._tape is None or loss._tape() is None:
        raise MissingDependencyError("loss was not recorded on any live tape")
    tape = loss._tape()
    if create_graph and tape.mode is not TapeMode.HIGHER_ORDER:
        raise TapeModeError("create_graph=True needs a HIGHER_ORDER tape")

    targets = {}
    for p in params:
        nid = _target_node_id(tape, p)
        if nid is None:
            raise MissingDependencyError(
                "gradient target was never used on the loss tape")
        targets[id(p)] = nid

    adjoint: Dict[int, Tensor] = {loss._node_id: Tensor(np.ones(()))}
    stop = min(targets.values(), default=loss._node_id)

    def sweep():
        for nid in range(loss._node_id, stop - 1, -1):
            g = adjoint.get(nid)
            if g is None:
                continue
            node = tape.nodes[nid]
            if node.vjp is None:
                continue
            grads = node.vjp(g)
            for slot, gin in zip(node.inputs, grads):
                if slot is None or gin is None:
                    continue
                held = adjoint.get(slot)
                adjoint[slot] = gin if held is None else add(held, gin)

    if create_graph:
        sweep()
    else:
        with tape.paused():
            sweep()

    out: GradientMap = {}
    for p in params:
        g = adjoint.get(targets[id(p)])
        if g is None:
            g = Tensor(np.zeros(p.shape))
        out[p] = g
    return out
