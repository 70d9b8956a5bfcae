"""Dense float64 tensors with reverse-mode differentiation.

Every value in this package is a :class:`Tensor`: a numpy float64 array plus
an optional gradient slot. Operations that touch a gradient-requiring input
record a :class:`TapeNode`; :func:`backward` replays the recorded nodes in
reverse execution order, so gradient accumulation order is deterministic.
:func:`finite_diff_grad` is the independent oracle the analytic rules are
tested against.
"""

from __future__ import annotations

import ctypes
import itertools
import os
from typing import Callable, Optional, Sequence

import numpy as np


def _tune_malloc() -> None:
    # Elementwise chains allocate several >128KB temporaries per call; with
    # glibc's default trim/mmap thresholds every iteration returns those pages
    # to the kernel and faults them back in, which dominates the runtime of
    # small-model forwards. Keeping freed pages in the arena fixes that.
    if os.environ.get("GREAT_NO_MALLOC_TUNING"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_malloc()

__all__ = [
    "Tensor",
    "TapeNode",
    "ShapeError",
    "NumericalError",
    "backward",
    "finite_diff_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "transpose",
    "reshape",
    "concat",
    "slice_axis",
    "tsum",
    "tmean",
    "psum",
    "relu",
    "gelu",
    "softmax",
    "layer_norm",
    "cross_entropy",
]


class ShapeError(ValueError):
    """Operand extents do not match what an operation requires."""


class NumericalError(RuntimeError):
    """A computation produced or encountered a non-finite value."""


# Monotone id shared by all tapes; node order within one thread of control
# therefore equals forward execution order.
_SEQ = itertools.count()


class TapeNode:
    __slots__ = ("seq", "out", "inputs", "vjp", "name")

    def __init__(self, out: "Tensor", inputs: tuple, vjp: Callable, name: str):
        self.seq = next(_SEQ)
        self.out = out
        self.inputs = inputs
        self.vjp = vjp  # grad_out -> tuple of grads aligned with inputs
        self.name = name


class Tensor:
    """A float64 array, immutable after construction except the grad slot."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # arithmetic sugar; the module-level functions do the work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple, vjp: Callable, name: str) -> Tensor:
    rg = False
    for t in inputs:
        if t.requires_grad:
            rg = True
            break
    out = Tensor(data, requires_grad=rg)
    if rg:
        out.node = TapeNode(out, inputs, vjp, name)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every gradient-requiring tensor reachable from ``loss``.

    ``loss`` must be scalar and must have been produced by a recorded
    operation. Nodes are replayed strictly in reverse execution order, so
    accumulation is deterministic.
    """
    if loss.data.size != 1:
        raise ShapeError(
            f"backward needs a scalar loss, got shape {loss.data.shape}"
        )
    if loss.node is None:
        raise ValueError(
            "backward called on a tensor that is not on the tape "
            "(no recorded operation produced it)"
        )

    # Collect the reachable part of the tape.
    nodes = []
    seen = set()
    stack = [loss.node]
    while stack:
        nd = stack.pop()
        if id(nd) in seen:
            continue
        seen.add(id(nd))
        nodes.append(nd)
        for t in nd.inputs:
            if t.node is not None and id(t.node) not in seen:
                stack.append(t.node)
    nodes.sort(key=lambda nd: nd.seq)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for nd in reversed(nodes):
        g = grads.pop(id(nd.out), None)
        if g is None:
            continue
        out = nd.out
        out.grad = g if out.grad is None else out.grad + g
        for t, gi in zip(nd.inputs, nd.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi
            if t.node is None:
                leaves[id(t)] = t
    for tid, t in leaves.items():
        g = grads.get(tid)
        if g is not None:
            t.grad = g if t.grad is None else t.grad + g


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry.

    The independent oracle for :func:`backward`: it never touches the tape
    (perturbed copies are built with ``requires_grad=False``).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = np.array(x.data, dtype=np.float64)
    out = np.empty_like(base)
    flat = base.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(base)))
        flat[i] = orig - eps
        fm = float(f(Tensor(base)))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            idx = tuple(int(k) for k in np.unravel_index(i, base.shape))
            raise NumericalError(
                f"non-finite evaluation while perturbing entry {idx}: "
                f"f(+eps)={fp}, f(-eps)={fm}"
            )
        gflat[i] = (fp - fm) / (2.0 * eps)
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy stacking semantics (2-d, or batched 3-d)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)
        return ga, gb

    return _make(data, (a, b), vjp, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _make(data, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _make(data, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(data, (a, b), vjp, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inv = [0] * len(axes)
    for i, ax in enumerate(axes):
        inv[ax] = i
    inv = tuple(inv)
    return _make(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose"
    )


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(parts), vjp, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis (adjoint scatters back with zeros)."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _make(a.data[idx].copy(), (a,), vjp, "slice")


def tsum(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape
    return _make(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum"
    )


def tmean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape
    n = a.data.size
    return _make(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, shape),),
        "mean",
    )


def psum(a: Tensor, axis: int = 0) -> Tensor:
    """Order-canonical sum along one axis.

    Terms are sorted before reduction, so the result depends only on the
    multiset of addends: permuting slices along ``axis`` leaves the output
    bit-identical. This is what makes the patch-projection reduction exactly
    equivariant under patch permutations.
    """
    a = _as_tensor(a)
    data = np.sort(a.data, axis=axis).sum(axis=axis)
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _make(data, (a,), vjp, "psum")


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), vjp, "relu")


_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    u = x2 * _GELU_K
    u += 1.0
    u *= x
    u *= _GELU_C
    t = np.tanh(u, out=u)
    out = t + 1.0
    out *= x
    out *= 0.5

    def vjp(g):
        # d/dx = 0.5(1+t) + 0.5 x (1-t^2) c (1 + 3k x^2)
        du = x2 * (3.0 * _GELU_K)
        du += 1.0
        du *= _GELU_C
        du *= 1.0 - t * t
        du *= x
        du += 1.0 + t
        du *= 0.5
        du *= g
        return (du,)

    return _make(out, (a,), vjp, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Exponentiate-and-normalize along ``axis``, max-subtracted for stability."""
    a = _as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {a.data.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), vjp, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Zero-mean unit-variance normalization over the last axis.

    Uses the population variance; ``gamma`` and ``beta`` must be 1-d with the
    last extent of ``x``.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"layer_norm gamma/beta must have shape ({c},), got "
            f"{gamma.data.shape} and {beta.data.shape}"
        )
    inv_c = 1.0 / c
    mu = x.data.sum(axis=-1, keepdims=True)
    mu *= inv_c
    xc = x.data - mu
    var = (xc * xc).sum(axis=-1, keepdims=True)
    var *= inv_c
    var += eps
    inv_std = np.sqrt(var, out=var)
    np.reciprocal(inv_std, out=inv_std)
    xhat = xc
    xhat *= inv_std
    gdata = gamma.data

    def vjp(g):
        dxhat = g * gdata
        m1 = dxhat.sum(axis=-1, keepdims=True)
        m1 *= inv_c
        m2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        m2 *= inv_c
        dx = dxhat
        dx -= m1
        dx -= xhat * m2
        dx *= inv_std
        lead = tuple(range(x.data.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gdata + beta.data, (x, gamma, beta), vjp, "layer_norm")


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under ``logits``.

    ``logits`` has class scores along the last axis; ``target`` holds class
    indices with the leading shape of ``logits``. Stable via max subtraction.
    """
    logits = _as_tensor(logits)
    t = np.asarray(target)
    c = logits.data.shape[-1]
    if t.shape != logits.data.shape[:-1]:
        raise ShapeError(
            f"cross_entropy target shape {t.shape} does not match "
            f"logit leading shape {logits.data.shape[:-1]}"
        )
    if t.size and (t.min() < 0 or t.max() >= c):
        raise ValueError(f"cross_entropy target ids must lie in [0, {c})")
    flat = logits.data.reshape(-1, c)
    ids = t.reshape(-1).astype(np.intp)
    n = flat.shape[0]
    rows = np.arange(n)
    z = flat - flat.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    probs = ez
    probs /= denom
    nll = np.log(denom[:, 0])
    nll -= z[rows, ids]

    def vjp(g):
        gl = probs.copy()
        gl[rows, ids] -= 1.0
        gl *= float(g) / n
        return (gl.reshape(logits.data.shape),)

    return _make(np.asarray(nll.mean()), (logits,), vjp, "cross_entropy")
