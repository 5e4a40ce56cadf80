"""Dense float32 tensors with a reverse-mode gradient tape.

Deliberately small: only the primitives the answer model composes
(matmul, elementwise arithmetic, relu / sigmoid / log / exp, softmax,
cross-entropy, concat, embedding mean) plus SGD / Adam and a central
finite-difference checker. No views, no strides, no broadcasting beyond
scalar <-> tensor, no higher-order derivatives.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12  # log(x) is computed as log(max(x, LOG_FLOOR))
EXP_CEIL = 88.0    # float32 exp overflows just above e**88; inputs are clipped


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class Tensor:
    """Shape-immutable float32 buffer with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def tolist(self):
        return self.data.tolist()

    def detach(self) -> "Tensor":
        """Same data buffer, severed from the tape (no gradient flows in)."""
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def _add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; module-level functions do the work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)


class Tape:
    """Ordered record of primitive ops applied while the tape is active.

    Operations append in execution order, so the record is topologically
    sorted by construction; backward() walks it exactly once, in reverse.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STACK.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad of every requires_grad tensor reachable from loss."""
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss._add_grad(np.ones((), dtype=np.float32))
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)


_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum(), dtype=np.float32)
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _elementwise_shapes(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"elementwise op needs matching shapes or a scalar, got {a.shape} vs {b.shape}")


def _make(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req)
    tape = _active_tape()
    if tape is not None and req:
        tape.record(out, backward_fn(out))
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b)

    def back(out):
        def fn(g):
            if a.requires_grad:
                a._add_grad(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._add_grad(_unbroadcast(g, b.shape))
        return fn

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b)

    def back(out):
        def fn(g):
            if a.requires_grad:
                a._add_grad(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._add_grad(-_unbroadcast(g, b.shape))
        return fn

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _elementwise_shapes(a, b)

    def back(out):
        def fn(g):
            if a.requires_grad:
                a._add_grad(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._add_grad(_unbroadcast(g * a.data, b.shape))
        return fn

    return _make(a.data * b.data, (a, b), back)


def scale(a, c: float) -> Tensor:
    """a * c for a plain float constant c (no gradient into c)."""
    a = _as_tensor(a)
    c = float(c)

    def back(out):
        def fn(g):
            if a.requires_grad:
                a._add_grad(g * np.float32(c))
        return fn

    return _make(a.data * np.float32(c), (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 2-D x 2-D or 2-D x 1-D, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    if b.data.ndim == 1:
        def back(out):
            def fn(g):
                if a.requires_grad:
                    a._add_grad(np.outer(g, b.data))
                if b.requires_grad:
                    b._add_grad(a.data.T @ g)
            return fn
    else:
        def back(out):
            def fn(g):
                if a.requires_grad:
                    a._add_grad(g @ b.data.T)
                if b.requires_grad:
                    b._add_grad(a.data.T @ g)
            return fn

    return _make(a.data @ b.data, (a, b), back)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, np.float32(0.0))

    def back(out):
        mask = (a.data > 0).astype(np.float32)

        def fn(g):
            if a.requires_grad:
                a._add_grad(g * mask)
        return fn

    return _make(out_data, (a,), back)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x))).astype(np.float32)

    def back(out):
        s = out.data

        def fn(g):
            if a.requires_grad:
                a._add_grad(g * s * (1.0 - s))
        return fn

    return _make(out_data, (a,), back)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    clipped = np.minimum(a.data, np.float32(EXP_CEIL))
    out_data = np.exp(clipped)

    def back(out):
        mask = (a.data <= EXP_CEIL).astype(np.float32)

        def fn(g):
            if a.requires_grad:
                a._add_grad(g * out.data * mask)
        return fn

    return _make(out_data, (a,), back)


def log(a) -> Tensor:
    """log(max(a, LOG_FLOOR)); gradient is zero in the clamped region."""
    a = _as_tensor(a)
    floored = np.maximum(a.data, np.float32(LOG_FLOOR))
    out_data = np.log(floored)

    def back(out):
        inv = np.where(a.data >= LOG_FLOOR, 1.0 / floored, 0.0).astype(np.float32)

        def fn(g):
            if a.requires_grad:
                a._add_grad(g * inv)
        return fn

    return _make(out_data, (a,), back)


def softmax(z: Tensor) -> Tensor:
    """Probability vector over a 1-D score tensor, max-subtracted for stability."""
    z = _as_tensor(z)
    if z.data.ndim != 1 or z.data.size < 1:
        raise ShapeError(f"softmax needs a non-empty 1-D tensor, got shape {z.shape}")
    shifted = z.data - z.data.max()
    e = np.exp(shifted)
    out_data = (e / e.sum()).astype(np.float32)

    def back(out):
        s = out.data

        def fn(g):
            if z.requires_grad:
                z._add_grad(s * (g - np.float32((g * s).sum())))
        return fn

    return _make(out_data, (z,), back)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], computed via a stable log-sum-exp."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy needs 1-D logits, got shape {logits.shape}")
    n = logits.data.size
    target = int(target)
    if not 0 <= target < n:
        raise IndexError(f"answer index {target} out of range [0, {n})")
    m = logits.data.max()
    e = np.exp(logits.data - m)
    lse = m + np.log(e.sum())
    out_data = np.asarray(lse - logits.data[target], dtype=np.float32)

    def back(out):
        p = (e / e.sum()).astype(np.float32)

        def fn(g):
            if logits.requires_grad:
                d = p.copy()
                d[target] -= np.float32(1.0)
                logits._add_grad(d * g)
        return fn

    return _make(out_data, (logits,), back)


def concat(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"concat joins 1-D tensors, got {a.shape} and {b.shape}")
    la = a.data.size

    def back(out):
        def fn(g):
            if a.requires_grad:
                a._add_grad(g[:la])
            if b.requires_grad:
                b._add_grad(g[la:])
        return fn

    return _make(np.concatenate([a.data, b.data]), (a, b), back)


def embed_mean(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Mean of the table rows selected by indices (bag-of-words pooling)."""
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeError(f"embed_mean needs a 2-D table, got shape {table.shape}")
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        raise ShapeError("embed_mean needs at least one index")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    out_data = table.data[idx].mean(axis=0)

    def back(out):
        def fn(g):
            if table.requires_grad:
                if table.grad is None:
                    table.grad = np.zeros_like(table.data)
                np.add.at(table.grad, idx, g / np.float32(idx.size))
        return fn

    return _make(out_data, (table,), back)


def _check_finite(name: str, g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient for parameter '{name}'")


def step_sgd(params: dict[str, Tensor], lr: float) -> None:
    """In-place vanilla SGD update; parameters without gradients are untouched."""
    for name, p in params.items():
        if p.grad is None:
            continue
        _check_finite(name, p.grad)
        p.data -= np.float32(lr) * p.grad


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-2):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        step_sgd(self.params, self.lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


class Adam:
    """Adam with bias correction; per-parameter float32 moment state."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        c1 = np.float32(1.0 - self.beta1 ** self._t)
        c2 = np.float32(1.0 - self.beta2 ** self._t)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            _check_finite(name, g)
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (np.float32(1.0) - b1) * g
            v *= b2
            v += (np.float32(1.0) - b2) * g * g
            p.data -= np.float32(self.lr) * (m / c1) / (np.sqrt(v / c2) + np.float32(self.eps))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-3, tol: float = 1e-3) -> dict:
    """Compare the tape gradient of scalar f(x) to central finite differences.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1.0); the unit
    floor scores near-zero gradients on absolute error, which is the right
    call at float32 finite-difference noise levels.
    """
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        y = f(x)
        tape.backward(y)
    analytic = (x.grad.copy() if x.grad is not None else np.zeros_like(x.data)).reshape(-1).astype(np.float64)

    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + np.float32(eps)
        fp = f(x).item()
        flat[i] = orig - np.float32(eps)
        fm = f(x).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    rel = np.abs(analytic - numeric) / denom
    max_rel = float(rel.max()) if rel.size else 0.0
    return {
        "max_rel_err": max_rel,
        "mean_rel_err": float(rel.mean()) if rel.size else 0.0,
        "n_coords": int(flat.size),
        "ok": max_rel <= tol,
    }
