"""Minimal dense tensor math with reverse-mode differentiation.

Tensors are 2-D numpy arrays (scalars for losses). Every op records a closure
that pushes gradients to its inputs; ``Tensor.backward`` replays them in
reverse topological order. Parameters live in a ``ParamStore`` and are updated
with Adam.
"""

from __future__ import annotations

import hashlib
import math
from contextlib import contextmanager
from typing import Callable, Iterator

import numpy as np
from numpy.typing import ArrayLike

from .errors import IdOutOfRangeError, OptimizerStateError, ShapeError

_LN2 = math.log(2.0)
_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data: ArrayLike, *, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.data.shape} dtype={self.data.dtype}>"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype).reshape(self.data.shape)
        else:
            self.grad += g.reshape(self.data.shape)

    def backward(self, grad: ArrayLike | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() on non-scalar tensor of shape {self.data.shape}")
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _as_tensor(x: Tensor | ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W^T + b for x of shape (N, in), W (out, in), b (out,)."""
    x, W = _as_tensor(x), _as_tensor(W)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: x{x.shape} incompatible with W{W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias{b.shape} incompatible with W{W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data

    def backward(g: np.ndarray) -> None:
        x._accumulate(g @ W.data)
        W._accumulate(g.T @ x.data)
        if b is not None:
            b._accumulate(g.sum(axis=0))

    parents = (x, W) if b is None else (x, W, b)
    return _make(y, parents, backward)


def _check_ids(ids: ArrayLike, size: int) -> np.ndarray:
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (int(idx.min()) < 0 or int(idx.max()) >= size):
        raise IdOutOfRangeError(f"ids must lie in [0, {size}), got [{int(idx.min())}, {int(idx.max())}]")
    return idx


def embedding_lookup(table: Tensor, ids: ArrayLike) -> Tensor:
    """Row gather from a (K, C) table."""
    idx = _check_ids(ids, table.shape[0]).reshape(-1)

    def backward(g: np.ndarray) -> None:
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        table._accumulate(gt)

    return _make(table.data[idx], (table,), backward)


_BAG_CHUNK_CELLS = 1 << 20


def embedding_mean(table: Tensor, ids: ArrayLike) -> Tensor:
    """Mean of table rows over the columns of an (N, V) id matrix."""
    idx = _check_ids(ids, table.shape[0])
    if idx.ndim != 2:
        raise ShapeError(f"embedding_mean expects an (N, V) id matrix, got {idx.shape}")
    n, v = idx.shape
    k = table.shape[0]
    chunk = max(1, _BAG_CHUNK_CELLS // max(k, 1))

    def counts(lo: int, hi: int) -> np.ndarray:
        flat = (np.arange(hi - lo, dtype=np.int64)[:, None] * k + idx[lo:hi]).reshape(-1)
        c = np.bincount(flat, minlength=(hi - lo) * k).reshape(hi - lo, k)
        return c.astype(table.data.dtype) / np.asarray(v, dtype=table.data.dtype)

    out = np.zeros((n, table.shape[1]), dtype=table.data.dtype)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        out[lo:hi] = counts(lo, hi) @ table.data

    def backward(g: np.ndarray) -> None:
        gt = np.zeros_like(table.data)
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            gt += counts(lo, hi).T @ g[lo:hi]
        table._accumulate(gt)

    return _make(out, (table,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * mask)

    return _make(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise sum of two equally shaped tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g: np.ndarray) -> None:
        x._accumulate(g * c)

    return _make(x.data * np.asarray(c, dtype=x.data.dtype), (x,), backward)


def gather_rows(x: Tensor, index: ArrayLike) -> Tensor:
    """y[i] = x[index[i]]; used to broadcast parent rows to their children."""
    idx = _check_ids(index, x.shape[0]).reshape(-1)

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        x._accumulate(gx)

    return _make(x.data[idx], (x,), backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: shapes {a.shape} and {b.shape} do not align")
    split = a.shape[1]

    def backward(g: np.ndarray) -> None:
        a._accumulate(g[:, :split])
        b._accumulate(g[:, split:])

    dtype = np.result_type(a.data.dtype, b.data.dtype)
    return _make(np.concatenate([a.data, b.data], axis=1).astype(dtype), (a, b), backward)


def masked_mean(
    rows: Tensor,
    mask: ArrayLike | None = None,
    groups: ArrayLike | None = None,
    num_groups: int | None = None,
) -> Tensor:
    """Per-group mean over rows where ``mask`` is set.

    Without ``groups`` all rows form a single group and the result is (1, C).
    A group with no valid row yields the zero vector.
    """
    if rows.data.ndim != 2:
        raise ShapeError(f"masked_mean expects (N, C) rows, got {rows.shape}")
    n = rows.shape[0]
    valid = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if valid.shape != (n,):
        raise ShapeError(f"mask length {valid.size} != row count {n}")
    if groups is None:
        gid = np.zeros(n, dtype=np.int64)
        count = 1
    else:
        gid = np.asarray(groups, dtype=np.int64).reshape(-1)
        if gid.shape != (n,):
            raise ShapeError(f"groups length {gid.size} != row count {n}")
        count = int(num_groups) if num_groups is not None else (int(gid.max()) + 1 if n else 0)
        if n and (int(gid.min()) < 0 or int(gid.max()) >= count):
            raise IdOutOfRangeError(f"group ids must lie in [0, {count})")

    sel = np.flatnonzero(valid)
    g_sel = gid[sel]
    denom = np.maximum(np.bincount(g_sel, minlength=count), 1).astype(rows.data.dtype)[:, None]
    sums = np.zeros((count, rows.shape[1]), dtype=rows.data.dtype)
    np.add.at(sums, g_sel, rows.data[sel])

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(rows.data)
        gx[sel] = g[g_sel] / denom[g_sel]
        rows._accumulate(gx)

    return _make(sums / denom, (rows,), backward)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64."""
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def softmax_cross_entropy(logits: Tensor, targets: ArrayLike) -> Tensor:
    """Mean cross-entropy in bits between softmax(logits) and integer targets."""
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be (N, K), got {logits.shape}")
    n, k = logits.shape
    t = _check_ids(targets, k).reshape(-1)
    if t.shape != (n,) or n == 0:
        raise ShapeError(f"targets length {t.size} does not match {n} logit rows")
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, t].mean() / _LN2

    def backward(g: np.ndarray) -> None:
        p = np.exp(logp)
        p[rows, t] -= 1.0
        logits._accumulate(p * (float(g) / (n * _LN2)))

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


class ParamStore:
    """Named parameters, their gradients and Adam state."""

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.step = 0
        self._rng = np.random.default_rng(seed)
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def create(self, name: str, shape: tuple[int, ...], *, fan_in: int | None = None, zero: bool = False) -> Tensor:
        """Register a float32 parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) (or zeros)."""
        if name in self.params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        if zero:
            data = np.zeros(shape, dtype=np.float32)
        else:
            bound = 1.0 / math.sqrt(fan_in if fan_in else shape[-1])
            data = self._rng.uniform(-bound, bound, size=shape).astype(np.float32)
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def num_parameters(self) -> int:
        return sum(int(p.data.size) for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        missing = sorted(set(self.params) - set(arrays))
        extra = sorted(set(arrays) - set(self.params))
        if missing or extra:
            raise ShapeError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, p in self.params.items():
            a = np.asarray(arrays[name], dtype=np.float32)
            if a.shape != p.data.shape:
                raise ShapeError(f"{name}: checkpoint shape {a.shape} != model shape {p.data.shape}")
            p.data = a.copy()
            p.grad = None

    def fingerprint(self) -> int:
        """u64 digest of parameter names, shapes and bytes."""
        h = hashlib.blake2b(digest_size=8)
        for name in sorted(self.params):
            a = np.ascontiguousarray(self.params[name].data, dtype="<f4")
            h.update(name.encode("utf-8"))
            h.update(repr(a.shape).encode("ascii"))
            h.update(a.tobytes())
        return int.from_bytes(h.digest(), "little")


def sgd_adam_step(
    store: ParamStore,
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One Adam update over every parameter, then clear gradients."""
    missing = [name for name, p in store.items() if p.grad is None]
    if missing:
        raise OptimizerStateError(f"no gradient for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.items():
        g = p.grad.astype(np.float32)
        m = store._m.setdefault(name, np.zeros_like(p.data))
        v = store._v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
        p.grad = None
    return store
