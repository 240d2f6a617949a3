"""A small reverse-mode tensor engine covering exactly the layers the model uses.

Arrays are channels-last (``N, H, W, C``); a leading batch axis is optional
for the convolution and pooling ops. Operations executed inside an active
:class:`Graph` record a backward closure; ``Graph.backward`` replays them in
reverse order and sums the contributions of every consumer into ``.grad``.

Training runs in float32. :func:`grad_check` promotes everything to float64.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError

_local = threading.local()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    """Tape of executed operations; use as a context manager."""

    def __init__(self):
        self.ops: list[tuple[str, Callable[[], None]]] = []
        self._done = False

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, name: str, backward: Callable[[], None]) -> None:
        self.ops.append((name, backward))

    def backward(self, output: Tensor, grad=None) -> None:
        if self._done:
            raise RuntimeError("backward already ran on this graph")
        if grad is None:
            if output.size != 1:
                raise ShapeError("a seed gradient is required for non-scalar outputs")
            grad = np.ones_like(output.data)
        output.grad = np.asarray(grad, dtype=output.dtype).reshape(output.shape)
        for _, fn in reversed(self.ops):
            fn()
        self._done = True


def active_graph() -> Graph | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _record(name: str, out: Tensor, inputs: Sequence[Tensor], backward) -> Tensor:
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True

        def run():
            if out.grad is not None:
                backward(out.grad)

        graph.record(name, run)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# convolution

def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected a rank-{rank} or rank-{rank + 1} array, got shape {x.shape}")


def im2col(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N*H*W, C*9) patches of the zero-padded 3x3 neighbourhood.

    Column order is (c, dy, dx), matching a (Cout, Cin, 3, 3) weight flattened
    row-major.
    """
    n, h, w, c = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return np.ascontiguousarray(windows).reshape(n * h * w, c * 9)


def col2im(cols: np.ndarray, shape) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back onto the input."""
    n, h, w, c = shape
    cols = cols.reshape(n, h, w, c, 3, 3)
    padded = np.zeros((n, h + 2, w + 2, c), dtype=cols.dtype)
    for dy in range(3):
        for dx in range(3):
            padded[:, dy:dy + h, dx:dx + w, :] += cols[..., dy, dx]
    return padded[:, 1:-1, 1:-1, :]


def conv2d(x, weight, bias) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1; channels-last in and out."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xb, squeeze = _batched(x.data, 3)
    cout = weight.shape[0]
    if weight.data.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv weight must be (Cout, Cin, 3, 3), got {weight.shape}")
    if weight.shape[1] != xb.shape[3]:
        raise ShapeError(f"conv expects {weight.shape[1]} input channels, got {xb.shape[3]}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv bias must have shape ({cout},), got {bias.shape}")
    n, h, w, _ = xb.shape
    cols = im2col(xb)
    w2 = weight.data.reshape(cout, -1)
    out = (cols @ w2.T + bias.data).reshape(n, h, w, cout)
    result = Tensor(out[0] if squeeze else out)

    def backward(g):
        g2 = g.reshape(-1, cout)
        _accumulate(weight, (g2.T @ cols).reshape(weight.shape))
        _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            dx = col2im(g2 @ w2, xb.shape)
            _accumulate(x, dx[0] if squeeze else dx)

    return _record("conv2d", result, (x, weight, bias), backward)


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Direct-loop convolution used to cross-check the im2col path. Slow."""
    x = np.asarray(x)
    xb, squeeze = _batched(x, 3)
    n, h, w, cin = xb.shape
    cout = weight.shape[0]
    out = np.zeros((n, h, w, cout), dtype=np.result_type(x, weight))
    for b in range(n):
        for y in range(h):
            for xx in range(w):
                for o in range(cout):
                    acc = bias[o]
                    for c in range(cin):
                        for dy in range(3):
                            for dx in range(3):
                                yy, xs = y + dy - 1, xx + dx - 1
                                if 0 <= yy < h and 0 <= xs < w:
                                    acc += xb[b, yy, xs, c] * weight[o, c, dy, dx]
                    out[b, y, xx, o] = acc
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# pooling and pointwise ops

def maxpool2d(x) -> Tensor:
    """2x2 max pooling, stride 2. Ties route the gradient to the first cell in
    row-major window order."""
    x = as_tensor(x)
    xb, squeeze = _batched(x.data, 3)
    n, h, w, c = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial extents, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = xb.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    result = Tensor(out[0] if squeeze else out)

    def backward(g):
        g = g.reshape(n, h2, w2, c)
        routed = np.zeros((n, h2, w2, c, 4), dtype=g.dtype)
        np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
        dx = routed.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        _accumulate(x, dx[0] if squeeze else dx)

    return _record("maxpool2d", result, (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    result = Tensor(np.where(mask, x.data, np.zeros((), dtype=x.dtype)))

    def backward(g):
        _accumulate(x, np.where(mask, g, np.zeros((), dtype=g.dtype)))

    return _record("relu", result, (x,), backward)


def linear(x, weight, bias) -> Tensor:
    """``W x + b`` for a vector or a (batch, n) matrix of row vectors."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.data.ndim != 2 or x.data.ndim not in (1, 2):
        raise ShapeError(f"linear expects rank-1/2 input and rank-2 weight, got {x.shape}, {weight.shape}")
    m, n = weight.shape
    if x.shape[-1] != n:
        raise ShapeError(f"linear input has length {x.shape[-1]}, weight expects {n}")
    if bias.shape != (m,):
        raise ShapeError(f"linear bias must have shape ({m},), got {bias.shape}")
    # one matrix-vector product per row: BLAS picks different kernels for
    # different batch sizes, which would make outputs depend on batch composition
    if x.data.ndim == 1:
        out = weight.data @ x.data
    else:
        out = np.empty((x.shape[0], m), dtype=np.result_type(x.data, weight.data))
        for i, row in enumerate(x.data):
            out[i] = weight.data @ row
    result = Tensor(out + bias.data)

    def backward(g):
        g2 = g.reshape(-1, m)
        x2 = x.data.reshape(-1, n)
        _accumulate(weight, g2.T @ x2)
        _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, g @ weight.data)

    return _record("linear", result, (x, weight, bias), backward)


def _generator(rng_state) -> np.random.Generator:
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    return np.random.default_rng(rng_state)


def dropout(x, p: float, mode: str = "train", rng_state=None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); eval mode is the identity."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    keep = _generator(rng_state).random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    result = Tensor(x.data * mask)

    def backward(g):
        _accumulate(x, g * mask)

    return _record("dropout", result, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    result = Tensor(x.data.reshape(shape))

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _record("reshape", result, (x,), backward)


def flatten(x, start_axis: int = 0) -> Tensor:
    """Row-major flattening of every axis from ``start_axis`` on (H, then W, then C)."""
    x = as_tensor(x)
    return reshape(x, x.shape[:start_axis] + (-1,))


def unflatten(x, shape) -> Tensor:
    return reshape(x, shape)


def concat(a, b) -> Tensor:
    """Join along the last axis; rank-1 vectors or equal-batch rank-2 matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim > 2 or b.data.ndim > 2 or a.data.ndim != b.data.ndim:
        raise ShapeError(f"concat takes two vectors (or batches of vectors), got {a.shape}, {b.shape}")
    if a.data.ndim == 2 and a.shape[0] != b.shape[0]:
        raise ShapeError("concat batch sizes differ")
    split = a.shape[-1]
    result = Tensor(np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=-1))

    def backward(g):
        _accumulate(a, g[..., :split])
        _accumulate(b, g[..., split:])

    return _record("concat", result, (a, b), backward)


def mse_loss(pred, target) -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse_loss needs at least one element")
    diff = pred.data - target
    result = Tensor(np.asarray(np.mean(diff * diff), dtype=pred.dtype))

    def backward(g):
        _accumulate(pred, g * (2.0 / diff.size) * diff)

    return _record("mse_loss", result, (pred,), backward)


# ---------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tolerance: float
    per_input: list[float] = field(default_factory=list)
    retries: int = 0
    kink: bool = False

    def __bool__(self):
        return self.passed


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # error relative to the gradient's own scale; coordinates with near-zero
    # true gradient would otherwise amplify finite-difference noise
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale < 1e-12:
        return 0.0 if np.abs(analytic - numeric).max(initial=0.0) < 1e-12 else np.inf
    return float(np.abs(analytic - numeric).max() / scale)


def grad_check(fn: Callable[..., Tensor], inputs, epsilon: float = 1e-6, tolerance: float = 1e-4,
               wrt: Sequence[int] | None = None, seed: int = 0, max_retries: int = 5,
               kink_factor: float = 10.0) -> GradCheckReport:
    """Compare backward-pass gradients of ``fn`` with central differences.

    ``inputs`` is a list of arrays, or a callable ``rng -> list of arrays``
    which is re-sampled when a point of non-differentiability is hit (a
    second difference far above the smooth-curvature bound). The scalar
    objective is ``sum(R * fn(*inputs))`` for a fixed random projection R.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ParameterError("epsilon must lie in [1e-6, 1e-4]")
    rng = np.random.default_rng(seed)
    report = None
    for attempt in range(max_retries + 1):
        raw = inputs(rng) if callable(inputs) else inputs
        arrays = [np.array(a, dtype=np.float64) for a in raw]
        idx = list(range(len(arrays))) if wrt is None else list(wrt)
        report = _check_once(fn, arrays, idx, epsilon, tolerance, rng, kink_factor)
        report.retries = attempt
        if not report.kink or not callable(inputs):
            return report
    return report


def _check_once(fn, arrays, idx, eps, tol, rng, kink_factor) -> GradCheckReport:
    probe = fn(*[Tensor(a) for a in arrays])
    proj = rng.standard_normal(probe.shape) if probe.data.ndim else np.float64(1.0)

    def objective(arrs):
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * proj))

    with Graph() as graph:
        tensors = [Tensor(a.copy(), requires_grad=i in idx) for i, a in enumerate(arrays)]
        out = fn(*tensors)
        graph.backward(out, proj)
    f0 = objective(arrays)
    kink_tol = kink_factor * eps * eps * (1.0 + abs(f0))
    errors, kink = [], False
    for i in idx:
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        numeric = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = objective(arrays)
            flat[k] = orig - eps
            fm = objective(arrays)
            flat[k] = orig
            numeric.reshape(-1)[k] = (fp - fm) / (2 * eps)
            if abs(fp - 2 * f0 + fm) > kink_tol:
                kink = True
        errors.append(_relative_error(analytic, numeric))
    worst = max(errors, default=0.0)
    return GradCheckReport(worst, worst <= tol and not kink, tol, errors, kink=kink)
