"""Dense 2-D tensors with reverse-mode automatic differentiation.

Everything is a float64 matrix: scalars are 1x1, row vectors 1xN. The graph is
rebuilt on every forward pass (define-by-run) and ``backward`` walks it once in
reverse topological order. Besides the elementary ops, a few fused ops
(multi-head attention, LSTM sequences, the two logit losses) carry hand-written
backward passes so the per-node Python overhead stays small enough to train on
a single core. When no input requires gradients a node records nothing, which
makes frozen-parameter inference cheap.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit as _expit


def _as_matrix(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim == 2:
        return a
    raise ValueError(f"tensors are 2-D matrices; got shape {a.shape}")


class Tensor:
    """One node of the differentiation graph."""

    __slots__ = ("values", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, values, requires_grad: bool = False, parents: tuple = ()):
        self.values = _as_matrix(values)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _acc(t: Tensor, g: np.ndarray) -> None:
    # Never mutate a stored gradient in place: closures may hand the same
    # array to several parents.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _reduce_to(shape: tuple[int, int], g: np.ndarray) -> np.ndarray:
    """Undo numpy broadcasting: sum g down to the original operand shape."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape[1] != b.values.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    out_vals = a.values @ b.values
    if not _needs_grad(a, b):
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            _acc(a, g @ b.values.T)
        if b.requires_grad:
            _acc(b, a.values.T @ g)

    out._backward = backward
    return out


def _broadcast_ok(sa, sb) -> bool:
    if sa == sb:
        return True
    return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcast_ok(a.values.shape, b.values.shape):
        raise ValueError(f"add: shapes not broadcastable: {a.shape} + {b.shape}")
    out_vals = a.values + b.values
    if not _needs_grad(a, b):
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            _acc(a, _reduce_to(a.shape, g))
        if b.requires_grad:
            _acc(b, _reduce_to(b.shape, g))

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcast_ok(a.shape, b.shape):
        raise ValueError(f"sub: shapes not broadcastable: {a.shape} - {b.shape}")
    out_vals = a.values - b.values
    if not _needs_grad(a, b):
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            _acc(a, _reduce_to(a.shape, g))
        if b.requires_grad:
            _acc(b, _reduce_to(b.shape, -g))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcast_ok(a.shape, b.shape):
        raise ValueError(f"mul: shapes not broadcastable: {a.shape} * {b.shape}")
    out_vals = a.values * b.values
    if not _needs_grad(a, b):
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            _acc(a, _reduce_to(a.shape, g * b.values))
        if b.requires_grad:
            _acc(b, _reduce_to(b.shape, g * a.values))

    out._backward = backward
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out_vals = a.values * s
    if not a.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, g * s)

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ValueError(f"concat: axis must be 0 or 1, got {axis}")
    other = 1 - axis
    sizes = [t.shape[axis] for t in tensors]
    if len({t.shape[other] for t in tensors}) != 1:
        raise ValueError(
            f"concat: mismatched shapes along axis {other}: {[t.shape for t in tensors]}"
        )
    out_vals = np.concatenate([t.values for t in tensors], axis=axis)
    if not _needs_grad(*tensors):
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=tuple(tensors))

    def backward(g):
        lo = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                piece = g[lo : lo + size] if axis == 0 else g[:, lo : lo + size]
                _acc(t, piece)
            lo += size

    out._backward = backward
    return out


def slice_rows(a: Tensor, lo: int, hi: int) -> Tensor:
    return _slice(a, 0, lo, hi)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    return _slice(a, 1, lo, hi)


def _slice(a: Tensor, axis: int, lo: int, hi: int) -> Tensor:
    n = a.shape[axis]
    if not (0 <= lo < hi <= n):
        raise ValueError(f"slice: [{lo}:{hi}] out of bounds for axis {axis} of {a.shape}")
    out_vals = a.values[lo:hi] if axis == 0 else a.values[:, lo:hi]
    if not a.requires_grad:
        return Tensor(out_vals.copy())
    out = Tensor(out_vals.copy(), requires_grad=True, parents=(a,))

    def backward(g):
        full = np.zeros_like(a.values)
        if axis == 0:
            full[lo:hi] = g
        else:
            full[:, lo:hi] = g
        _acc(a, full)

    out._backward = backward
    return out


def sum_all(a: Tensor) -> Tensor:
    out_vals = np.array([[a.values.sum()]])
    if not a.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, np.full_like(a.values, g[0, 0]))

    out._backward = backward
    return out


def repeat_rows(a: Tensor, m: int) -> Tensor:
    """Each row repeated m times in place: (T, d) -> (T*m, d)."""
    out_vals = np.repeat(a.values, m, axis=0)
    if not a.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, g.reshape(a.shape[0], m, a.shape[1]).sum(axis=1))

    out._backward = backward
    return out


def row_sums(a: Tensor) -> Tensor:
    """Sum along each row: (n, d) -> (n, 1)."""
    out_vals = a.values.sum(axis=1, keepdims=True)
    if not a.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, np.broadcast_to(g, a.values.shape).copy())

    out._backward = backward
    return out


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    """Row-major reshape; element count must be unchanged."""
    if rows * cols != a.values.size:
        raise ValueError(f"reshape: cannot view {a.shape} as ({rows}, {cols})")
    out_vals = a.values.reshape(rows, cols)
    if not a.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, g.reshape(a.values.shape))

    out._backward = backward
    return out


def sum_row_blocks(a: Tensor, m: int) -> Tensor:
    """Sum each block of m consecutive rows: (T*m, d) -> (T, d)."""
    rows, cols = a.shape
    if rows % m != 0:
        raise ValueError(f"sum_row_blocks: {rows} rows not divisible by block size {m}")
    out_vals = a.values.reshape(rows // m, m, cols).sum(axis=1)
    if not a.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, np.repeat(g, m, axis=0))

    out._backward = backward
    return out


def _sigmoid_vals(v: np.ndarray) -> np.ndarray:
    # scipy's expit: one stable ufunc call, no overflow on either tail
    return _expit(v)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_vals(a.values)
    if not a.requires_grad:
        return Tensor(y)
    out = Tensor(y, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, g * y * (1.0 - y))

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    if not a.requires_grad:
        return Tensor(y)
    out = Tensor(y, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, g * (1.0 - y * y))

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    y = np.maximum(0.0, a.values)
    if not a.requires_grad:
        return Tensor(y)
    out = Tensor(y, requires_grad=True, parents=(a,))

    def backward(g):
        _acc(a, g * (a.values > 0))

    out._backward = backward
    return out


def relu_affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """max(0, x @ w + b) as one node."""
    if x.values.shape[1] != w.values.shape[0]:
        raise ValueError(f"relu_affine: inner dimensions differ: {x.shape} @ {w.shape}")
    pre = x.values @ w.values + b.values
    y = np.maximum(0.0, pre)
    if not _needs_grad(x, w, b):
        return Tensor(y)
    out = Tensor(y, requires_grad=True, parents=(x, w, b))

    def backward(g):
        gpre = g * (pre > 0)
        if x.requires_grad:
            _acc(x, gpre @ w.values.T)
        if w.requires_grad:
            _acc(w, x.values.T @ gpre)
        if b.requires_grad:
            _acc(b, _reduce_to(b.shape, gpre))

    out._backward = backward
    return out


def softmax_lastdim(a: Tensor) -> Tensor:
    v = a.values
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    if not a.requires_grad:
        return Tensor(y)
    out = Tensor(y, requires_grad=True, parents=(a,))

    def backward(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        _acc(a, y * (g - dot))

    out._backward = backward
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization with learnable gain and bias (1 x d each)."""
    d = a.shape[1]
    if gain.shape != (1, d) or bias.shape != (1, d):
        raise ValueError(f"layer_norm: gain/bias must be (1, {d}); got {gain.shape}, {bias.shape}")
    mu = a.values.mean(axis=1, keepdims=True)
    centered = a.values - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gain.values + bias.values
    if not _needs_grad(a, gain, bias):
        return Tensor(y)
    out = Tensor(y, requires_grad=True, parents=(a, gain, bias))

    def backward(g):
        if gain.requires_grad:
            _acc(gain, (g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            _acc(bias, g.sum(axis=0, keepdims=True))
        if a.requires_grad:
            gx = g * gain.values
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            _acc(a, inv * (gx - m1 - xhat * m2))

    out._backward = backward
    return out


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("embedding: ids must be a non-empty 1-D sequence")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ValueError(f"embedding: id out of range for table with {table.shape[0]} rows")
    out_vals = table.values[idx]
    if not table.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(table,))

    def backward(g):
        full = np.zeros_like(table.values)
        np.add.at(full, idx, g)
        _acc(table, full)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# fused ops
# ---------------------------------------------------------------------------


def causal_mask(n: int) -> np.ndarray:
    """Boolean (n, n) mask: position i may attend to positions <= i."""
    return np.tril(np.ones((n, n), dtype=bool))


def multihead_attention(
    q: Tensor, k: Tensor, v: Tensor, n_heads: int, scale_factor: float, mask: np.ndarray | None = None
) -> Tensor:
    """Scaled dot-product attention over already-projected q/k/v (N x Ha).

    Heads are column blocks of width Ha / n_heads; outputs are re-concatenated
    in head order. ``mask`` is a boolean (N, N) matrix of allowed positions
    (True = may attend); disallowed logits are -inf before the softmax.
    """
    n, ha = q.shape
    if k.shape != (n, ha) or v.shape != (n, ha):
        raise ValueError(f"attention: q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if ha % n_heads != 0:
        raise ValueError(f"attention: width {ha} not divisible by {n_heads} heads")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n, n):
            raise ValueError(f"attention: mask shape {mask.shape} does not match {n} positions")
    hd = ha // n_heads
    qh = q.values.reshape(n, n_heads, hd)
    kh = k.values.reshape(n, n_heads, hd)
    vh = v.values.reshape(n, n_heads, hd)
    scores = np.einsum("ihd,jhd->hij", qh, kh) * scale_factor
    if mask is not None:
        scores = np.where(mask[None, :, :], scores, -np.inf)
    shifted = scores - scores.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=2, keepdims=True)
    out_vals = np.einsum("hij,jhd->ihd", attn, vh).reshape(n, ha)
    if not _needs_grad(q, k, v):
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(q, k, v))

    def backward(g):
        gh = g.reshape(n, n_heads, hd)
        d_attn = np.einsum("ihd,jhd->hij", gh, vh)
        d_scores = attn * (d_attn - (attn * d_attn).sum(axis=2, keepdims=True))
        if q.requires_grad:
            _acc(q, (np.einsum("hij,jhd->ihd", d_scores, kh) * scale_factor).reshape(n, ha))
        if k.requires_grad:
            _acc(k, (np.einsum("hij,ihd->jhd", d_scores, qh) * scale_factor).reshape(n, ha))
        if v.requires_grad:
            _acc(v, np.einsum("hij,ihd->jhd", attn, gh).reshape(n, ha))

    out._backward = backward
    return out


def lstm_sequence(
    x: Tensor, h0: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, reverse: bool = False
) -> Tensor:
    """Run an LSTM over the rows of x; returns the hidden state per row.

    x: (T, d); h0: (1, H); w_x: (d, 4H); w_h: (H, 4H); b: (1, 4H). The four
    gate blocks are column slices in the order input, forget, candidate,
    output. The initial cell state is zero. Output row t is the hidden state
    after consuming row t, aligned to input positions for both directions.
    """
    t_len, d = x.shape
    hidden = h0.shape[1]
    if w_x.shape != (d, 4 * hidden) or w_h.shape != (hidden, 4 * hidden) or b.shape != (1, 4 * hidden):
        raise ValueError(
            f"lstm: inconsistent shapes x={x.shape} h0={h0.shape} "
            f"w_x={w_x.shape} w_h={w_h.shape} b={b.shape}"
        )
    order = list(range(t_len - 1, -1, -1)) if reverse else list(range(t_len))
    pre_x = x.values @ w_x.values + b.values

    gates_i = np.empty((t_len, hidden))
    gates_f = np.empty((t_len, hidden))
    gates_g = np.empty((t_len, hidden))
    gates_o = np.empty((t_len, hidden))
    c_prev = np.empty((t_len, hidden))
    h_prev = np.empty((t_len, hidden))
    tanh_c = np.empty((t_len, hidden))
    out_vals = np.empty((t_len, hidden))

    w_h_vals = w_h.values
    h = h0.values[0]
    c = np.zeros(hidden)
    for t in order:
        z = pre_x[t] + h @ w_h_vals
        i = _sigmoid_vals(z[:hidden])
        f = _sigmoid_vals(z[hidden : 2 * hidden])
        gg = np.tanh(z[2 * hidden : 3 * hidden])
        o = _sigmoid_vals(z[3 * hidden :])
        h_prev[t] = h
        c_prev[t] = c
        c = f * c
        c += i * gg
        tc = np.tanh(c)
        h = o * tc
        gates_i[t] = i
        gates_f[t] = f
        gates_g[t] = gg
        gates_o[t] = o
        tanh_c[t] = tc
        out_vals[t] = h

    if not _needs_grad(x, h0, w_x, w_h, b):
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(x, h0, w_x, w_h, b))

    def backward(g):
        dz_all = np.empty((t_len, 4 * hidden))
        dh_next = np.zeros(hidden)
        dc_next = np.zeros(hidden)
        for t in reversed(order):
            dh = g[t] + dh_next
            do = dh * tanh_c[t]
            dc = dc_next + dh * gates_o[t] * (1.0 - tanh_c[t] ** 2)
            di = dc * gates_g[t]
            df = dc * c_prev[t]
            dg = dc * gates_i[t]
            dz = dz_all[t]
            dz[:hidden] = di * gates_i[t] * (1.0 - gates_i[t])
            dz[hidden : 2 * hidden] = df * gates_f[t] * (1.0 - gates_f[t])
            dz[2 * hidden : 3 * hidden] = dg * (1.0 - gates_g[t] ** 2)
            dz[3 * hidden :] = do * gates_o[t] * (1.0 - gates_o[t])
            dh_next = dz @ w_h.values.T
            dc_next = dc * gates_f[t]
        if x.requires_grad:
            _acc(x, dz_all @ w_x.values.T)
        if h0.requires_grad:
            _acc(h0, dh_next.reshape(1, hidden))
        if w_x.requires_grad:
            _acc(w_x, x.values.T @ dz_all)
        if w_h.requires_grad:
            _acc(w_h, h_prev.T @ dz_all)
        if b.requires_grad:
            _acc(b, dz_all.sum(axis=0, keepdims=True))

    out._backward = backward
    return out


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Binary cross entropy on logits: sum over rows of the per-row mean.

    One row per turn and one column per act label, so the result is the sum
    over turns of the mean-over-labels loss.
    """
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"bce: targets shape {y.shape} does not match logits {logits.shape}")
    z = logits.values
    per_elem = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n_cols = z.shape[1]
    out_vals = np.array([[per_elem.sum() / n_cols]])
    if not logits.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(logits,))

    def backward(g):
        _acc(logits, g[0, 0] * (_sigmoid_vals(z) - y) / n_cols)

    out._backward = backward
    return out


def ce_with_logits(logits: Tensor, target_ids) -> Tensor:
    """Softmax cross entropy on logits, averaged over rows (tokens)."""
    ids = np.asarray(target_ids, dtype=np.intp)
    n, k = logits.shape
    if ids.shape != (n,):
        raise ValueError(f"ce: need one target per row, got {ids.shape} for {n} rows")
    if ids.min() < 0 or ids.max() >= k:
        raise ValueError(f"ce: target id out of range for {k} classes")
    z = logits.values
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    out_vals = np.array([[(lse - z[np.arange(n), ids]).mean()]])
    if not logits.requires_grad:
        return Tensor(out_vals)
    out = Tensor(out_vals, requires_grad=True, parents=(logits,))

    def backward(g):
        soft = np.exp(z - m)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), ids] -= 1.0
        _acc(logits, g[0, 0] * soft / n)

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# graph walk, generic dispatcher, gradient checking
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad for every tensor the scalar loss depends on."""
    if loss.values.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((1, 1))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


_OPS = {
    "matmul": lambda inputs, kw: matmul(*inputs),
    "add": lambda inputs, kw: add(*inputs),
    "sub": lambda inputs, kw: sub(*inputs),
    "mul": lambda inputs, kw: mul(*inputs),
    "concat": lambda inputs, kw: concat(inputs, axis=kw.get("axis", 1)),
    "softmax_lastdim": lambda inputs, kw: softmax_lastdim(inputs[0]),
    "sigmoid": lambda inputs, kw: sigmoid(inputs[0]),
    "tanh": lambda inputs, kw: tanh(inputs[0]),
    "relu": lambda inputs, kw: relu(inputs[0]),
    "relu_affine": lambda inputs, kw: relu_affine(*inputs),
    "layer_norm": lambda inputs, kw: layer_norm(*inputs, eps=kw.get("eps", 1e-5)),
    "slice": lambda inputs, kw: _slice(inputs[0], kw.get("axis", 0), kw["start"], kw["stop"]),
    "sum": lambda inputs, kw: sum_all(inputs[0]),
    "row_sums": lambda inputs, kw: row_sums(inputs[0]),
    "reshape": lambda inputs, kw: reshape(inputs[0], kw["rows"], kw["cols"]),
    "repeat_rows": lambda inputs, kw: repeat_rows(inputs[0], kw["m"]),
    "sum_row_blocks": lambda inputs, kw: sum_row_blocks(inputs[0], kw["m"]),
    "embedding": lambda inputs, kw: embedding(inputs[0], kw["ids"]),
    "attention": lambda inputs, kw: multihead_attention(
        *inputs, n_heads=kw["n_heads"], scale_factor=kw["scale_factor"], mask=kw.get("mask")
    ),
    "lstm": lambda inputs, kw: lstm_sequence(*inputs, reverse=kw.get("reverse", False)),
    "bce_logits": lambda inputs, kw: bce_with_logits(inputs[0], kw["targets"]),
    "ce_logits": lambda inputs, kw: ce_with_logits(inputs[0], kw["target_ids"]),
}


def forward_op(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Uniform entry point: build one forward node of the given kind."""
    try:
        op = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; known: {sorted(_OPS)}") from None
    return op(list(inputs), kwargs)


def grad_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar map against central differences.

    Returns the maximum over coordinates of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    base = _as_matrix(np.array(point, dtype=np.float64, copy=True))
    x = Tensor(base.copy(), requires_grad=True)
    out = fn(x)
    if out.values.size != 1:
        raise ValueError(f"grad_check: function must be scalar-valued, got shape {out.shape}")
    if not np.isfinite(out.values[0, 0]):
        raise ValueError("grad_check: function not finite at the base point")
    backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(base)

    worst = 0.0
    flat = base.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        f_plus = fn(Tensor(base.copy())).item()
        flat[idx] = orig - eps
        f_minus = fn(Tensor(base.copy())).item()
        flat[idx] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"grad_check: non-finite evaluation at coordinate {idx}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic.reshape(-1)[idx]
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst
