"""Dense float64 tensors with a reverse-mode tape.

Every op returns a new :class:`Tensor`; when any input requires a gradient the
output remembers its parents and a closure mapping the output gradient to
input gradients. :func:`backward` walks that graph once in reverse
topological order. There are no higher-order gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class Parameter(Tensor):
    """A named learned tensor; ``grad`` always exists and matches the shape."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every reachable leaf."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                node.grad += g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = grads[k] + pg if k in grads else pg


# --------------------------------------------------------------------------
# primitive ops
# --------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def matmul(a, b) -> Tensor:
    """``(..., k) @ (k, n)``, ``(k,) @ (k, n)`` or batched ``(B, m, k) @ (B, k, n)``."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    ok = av.ndim >= 1 and bv.ndim >= 2 and av.shape[-1] == bv.shape[-2]
    if bv.ndim > 2:
        ok = ok and av.ndim == bv.ndim and av.shape[:-2] == bv.shape[:-2]
    if not ok:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    out = av @ bv

    if bv.ndim == 2:
        k, n = bv.shape

        def fn(g):
            da = g @ bv.T
            db = av.reshape(-1, k).T @ g.reshape(-1, n)
            return da, db

    else:

        def fn(g):
            return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return _node(out, (a, b), fn)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, ts, lambda g: np.split(g, splits, axis=axis))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def masked_softmax(x, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis restricted to ``mask`` entries.

    A row whose mask is all zero yields all-zero weights (the empty attended
    set convention) rather than NaN.
    """
    x = as_tensor(x)
    v = x.value
    if mask is None:
        m = np.ones_like(v)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=np.float64), v.shape)
    live = m > 0
    mx = np.where(live, v, -np.inf).max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(np.where(live, v - mx, -np.inf))
    den = e.sum(axis=-1, keepdims=True)
    y = e / np.where(den > 0, den, 1.0)
    return _node(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def softmax(x) -> Tensor:
    return masked_softmax(x, None)


def dropout(x, p: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.value * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits, target) -> Tensor:
    """Mean negative log-likelihood of integer ``target`` under softmax(``logits``).

    ``logits`` is a single score vector with an int target, or (B, C) with a
    length-B target array.
    """
    logits = as_tensor(logits)
    z = logits.value
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if z2.ndim != 2 or t.shape != (z2.shape[0],):
        raise ValueError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    mx = z2.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(z2 - mx).sum(axis=1))
    rows = np.arange(z2.shape[0])
    loss = float(np.mean(lse - z2[rows, t]))
    p = np.exp(z2 - lse[:, None])

    def fn(g):
        d = p.copy()
        d[rows, t] -= 1.0
        d *= g / z2.shape[0]
        return (d[0] if single else d,)

    return _node(np.array(loss), (logits,), fn)


def take(x, idx) -> Tensor:
    """Gather rows of ``x`` along axis 0; ``idx`` may have any integer shape."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def fn(g):
        d = np.zeros(shape)
        np.add.at(d, idx, g)
        return (d,)

    return _node(x.value[idx], (x,), fn)


def index(x, key) -> Tensor:
    """Basic (non-fancy) indexing."""
    x = as_tensor(x)
    shape = x.shape

    def fn(g):
        d = np.zeros(shape)
        d[key] = g
        return (d,)

    return _node(x.value[key], (x,), fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.value.sum(axis=axis)

    def fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(out), (x,), fn)


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.value.size
    shape = x.shape
    return _node(np.asarray(x.value.mean()), (x,), lambda g: (np.full(shape, g / n),))


def blend(new, old, keep_new: np.ndarray) -> Tensor:
    """``keep_new * new + (1 - keep_new) * old`` with a constant 0/1 selector."""
    new, old = as_tensor(new), as_tensor(old)
    m = np.asarray(keep_new, dtype=np.float64)
    out = m * new.value + (1.0 - m) * old.value
    return _node(
        out,
        (new, old),
        lambda g: (_unbroadcast(g * m, new.shape), _unbroadcast(g * (1.0 - m), old.shape)),
    )


# --------------------------------------------------------------------------
# LSTM. Weight layout: W has shape (D + H, 4H), rows [input; recurrent],
# columns [input gate, forget gate, output gate, candidate]; b has shape (4H,).
# --------------------------------------------------------------------------


def lstm_cell(x, h_prev, c_prev, W, b) -> tuple[Tensor, Tensor]:
    """One LSTM step composed from primitive ops (reference path)."""
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    H = c_prev.shape[-1]
    if W.shape != (x.shape[-1] + H, 4 * H) or b.shape != (4 * H,):
        raise ValueError(
            f"lstm_cell: input {x.shape}, state {c_prev.shape} incompatible with "
            f"W {W.shape}, b {b.shape}"
        )
    z = add(matmul(concat([x, h_prev], axis=-1), W), b)
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = tanh(z[..., 3 * H :])
    c = add(mul(f, c_prev), mul(i, g))
    return mul(o, tanh(c)), c


def lstm_step(x, h_prev, c_prev, W, b, keep: np.ndarray | None = None) -> Tensor:
    """Fused LSTM step for a batch; returns the stacked state ``[h, c]`` of shape (2, B, H).

    Rows where ``keep`` is 0 carry ``(h_prev, c_prev)`` through unchanged.
    """
    x, h_prev, c_prev, W, b = (as_tensor(t) for t in (x, h_prev, c_prev, W, b))
    B, H = c_prev.shape
    D = x.shape[1]
    if W.shape != (D + H, 4 * H) or b.shape != (4 * H,) or h_prev.shape != (B, H) or x.shape[0] != B:
        raise ValueError(
            f"lstm_step: input {x.shape}, state {c_prev.shape} incompatible with W {W.shape}, b {b.shape}"
        )
    xh = np.concatenate([x.value, h_prev.value], axis=1)
    z = xh @ W.value + b.value
    h, c, acts, tc = kernels.lstm_gates_forward(z, c_prev.value)
    m = np.ones((B, 1)) if keep is None else np.asarray(keep, dtype=np.float64).reshape(B, 1)
    h = m * h + (1.0 - m) * h_prev.value
    c = m * c + (1.0 - m) * c_prev.value
    cp = c_prev.value
    Wv = W.value

    def fn(g):
        dh, dc = g[0], g[1]
        dz, dcp = kernels.lstm_gates_backward(m * dh, m * dc, acts, tc, cp)
        dz = dz * m
        dxh = dz @ Wv.T
        return (
            dxh[:, :D],
            dxh[:, D:] + (1.0 - m) * dh,
            dcp * m + (1.0 - m) * dc,
            xh.T @ dz,
            dz.sum(axis=0),
        )

    return _node(np.stack([h, c]), (x, h_prev, c_prev, W, b), fn)


def lstm_sequence(x, mask: np.ndarray, W, b) -> Tensor:
    """Run a fused LSTM over a padded batch ``x`` of shape (B, T, D).

    ``mask`` (B, T) marks real positions; padding must follow the real
    tokens. At padded steps the state is carried, so ``out[:, -1]`` is each
    row's last real hidden state. Initial state is zero. Returns (B, T, H).
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    B, T, D = x.shape
    H = b.shape[0] // 4
    if W.shape != (D + H, 4 * H) or b.shape != (4 * H,):
        raise ValueError(f"lstm_sequence: input {x.shape} incompatible with W {W.shape}, b {b.shape}")
    m = np.asarray(mask, dtype=np.float64).reshape(B, T)
    Wx, Wh = W.value[:D], W.value[D:]
    zx = (x.value.reshape(B * T, D) @ Wx).reshape(B, T, 4 * H) + b.value
    hs = np.zeros((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        mt = m[:, t : t + 1]
        z = zx[:, t] + h @ Wh
        hn, cn, acts, tc = kernels.lstm_gates_forward(z, c)
        cache.append((h, c, acts, tc))
        h = mt * hn + (1.0 - mt) * h
        c = mt * cn + (1.0 - mt) * c
        hs[:, t] = h
    xv = x.value

    def fn(g):
        dzs = np.zeros((B, T, 4 * H))
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        dWh = np.zeros_like(Wh)
        for t in range(T - 1, -1, -1):
            mt = m[:, t : t + 1]
            dh = dh + g[:, t]
            h_prev, c_prev, acts, tc = cache[t]
            dz, dcp = kernels.lstm_gates_backward(mt * dh, mt * dc, acts, tc, c_prev)
            dz *= mt
            dzs[:, t] = dz
            dWh += h_prev.T @ dz
            dh = dz @ Wh.T + (1.0 - mt) * dh
            dc = dcp * mt + (1.0 - mt) * dc
        dz2 = dzs.reshape(B * T, 4 * H)
        dx = (dz2 @ Wx.T).reshape(B, T, D)
        dWx = xv.reshape(B * T, D).T @ dz2
        return dx, np.concatenate([dWx, dWh], axis=0), dz2.sum(axis=0)

    return _node(hs, (x, W, b), fn)
