"""Minimal reverse-mode autodiff over dense 2-D float64 arrays.

Only the operations the survival network actually needs are provided.
Every tensor is a 2-D matrix (scalars are 1x1); gradients are checked
against central finite differences by ``check_gradients``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import DimensionError

_LOG_FLOOR = 1e-12
_LN_EPS = 1e-5


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Node in the computation graph. ``data`` is always 2-D float64."""

    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, name=None):
        self.data = _as_2d(data)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on non-scalar shape {self.shape}")
        return float(self.data[0, 0])

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar output through the whole graph."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar loss")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar so compositions read naturally.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """Named trainable leaf. Gradient persists across backward calls."""

    __slots__ = ()

    def __init__(self, data, name):
        super().__init__(data, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """Leaf tensor that does not require a gradient."""
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise / broadcast arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def back(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(out_data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def back(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor(out_data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def back(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def back(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor(out_data, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def back(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor(out_data, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    def back(g):
        a._accumulate(g.T)

    return Tensor(a.data.T, (a,), back)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=True)
    if not keepdims and axis is None:
        pass  # keep 1x1 shape; tensors stay 2-D

    def back(g):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return Tensor(out_data, (a,), back)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over the row axis: (N, d) -> (1, d)."""
    n = a.shape[0]
    out_data = a.data.mean(axis=0, keepdims=True)

    def back(g):
        a._accumulate(np.broadcast_to(g / n, a.shape).copy())

    return Tensor(out_data, (a,), back)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        x._accumulate(s * (g - dot))

    return Tensor(s, (x,), back)


def gelu(x: Tensor) -> Tensor:
    # Exact erf form, not the tanh approximation.
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out_data = x.data * cdf

    def back(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        x._accumulate(g * (cdf + x.data * pdf))

    return Tensor(out_data, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    s = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-x.data)),
                 np.exp(x.data) / (1.0 + np.exp(x.data)))

    def back(g):
        x._accumulate(g * s * (1.0 - s))

    return Tensor(s, (x,), back)


def log(x: Tensor, floor: float = _LOG_FLOOR) -> Tensor:
    clipped = np.maximum(x.data, floor)
    out_data = np.log(clipped)

    def back(g):
        # Floored entries are treated as constants.
        x._accumulate(np.where(x.data > floor, g / clipped, 0.0))

    return Tensor(out_data, (x,), back)


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)

    def back(g):
        x._accumulate(g * 0.5 / r)

    return Tensor(r, (x,), back)


def absval(x: Tensor) -> Tensor:
    def back(g):
        x._accumulate(g * np.sign(x.data))

    return Tensor(np.abs(x.data), (x,), back)


# ---------------------------------------------------------------------------
# structural ops


def concat_rows(parts: list[Tensor]) -> Tensor:
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise DimensionError("concat_rows column mismatch")
    out_data = np.vstack([p.data for p in parts])

    def back(g):
        i = 0
        for p in parts:
            n = p.shape[0]
            p._accumulate(g[i:i + n])
            i += n

    return Tensor(out_data, tuple(parts), back)


def concat_cols(parts: list[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise DimensionError("concat_cols row mismatch")
    out_data = np.hstack([p.data for p in parts])

    def back(g):
        j = 0
        for p in parts:
            n = p.shape[1]
            p._accumulate(g[:, j:j + n])
            j += n

    return Tensor(out_data, tuple(parts), back)


def slice_rows(a: Tensor, i0: int, i1: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[i0:i1] = g
        a._accumulate(full)

    return Tensor(a.data[i0:i1].copy(), (a,), back)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[:, j0:j1] = g
        a._accumulate(full)

    return Tensor(a.data[:, j0:j1].copy(), (a,), back)


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return Tensor(a.data[idx].copy(), (a,), back)


# ---------------------------------------------------------------------------
# composite layers


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Per-row normalization followed by an affine map.

    ``gain`` and ``bias`` are (1, d) tensors matching x's columns.
    """
    if gain.shape[1] != x.shape[1] or bias.shape[1] != x.shape[1]:
        raise DimensionError(
            f"layer_norm affine length {gain.shape[1]} vs {x.shape[1]} columns")
    d = x.shape[1]
    mu = tsum(x, axis=1, keepdims=True) * (1.0 / d)
    xc = x - mu
    var = tsum(mul(xc, xc), axis=1, keepdims=True) * (1.0 / d)
    xn = xc / sqrt(var + constant(eps))
    return xn * gain + bias


def kl_divergence(r: Tensor, g: Tensor, validate: bool = True) -> Tensor:
    """KL(r || g) for row probability vectors, with 0*log(0) := 0.

    g is floored at 1e-12 before the division.
    """
    if r.shape != g.shape:
        raise DimensionError(f"kl_divergence shapes {r.shape} vs {g.shape}")
    if validate:
        for name, v in (("r", r.data), ("g", g.data)):
            if (v < -1e-12).any():
                raise ValueError(f"{name} has negative entries")
            if abs(v.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} does not sum to 1 (got {v.sum()!r})")
    g_floor = np.maximum(g.data, _LOG_FLOOR)
    log_ratio = np.where(r.data > 0, np.log(np.maximum(r.data, _LOG_FLOOR)) - np.log(g_floor), 0.0)
    out_data = np.array([[np.sum(r.data * log_ratio)]])

    def back(grad):
        s = grad[0, 0]
        r._accumulate(s * np.where(r.data > 0, log_ratio + 1.0, 0.0))
        g._accumulate(s * np.where(g.data > _LOG_FLOOR, -r.data / g_floor, 0.0))

    return Tensor(out_data, (r, g), back)


def pyramid_positional_conv(tokens: Tensor, kernels: list[Tensor]) -> Tensor:
    """Multi-kernel depthwise positional convolution over patch tokens.

    The first row of ``tokens`` is a CLS token and passes through unchanged.
    The remaining N rows are padded to a square count by repeating leading
    tokens, laid out channel-first on a sqrt(M) x sqrt(M) grid, convolved
    depthwise with each kernel (zero "same" padding), and summed with the
    input grid. Each kernel has shape (d, k, k) with k odd.
    """
    n_total, d = tokens.shape
    n = n_total - 1
    if n < 1:
        raise DimensionError("pyramid_positional_conv needs at least one patch token")
    side = math.isqrt(n)
    if side * side < n:
        side += 1
    m = side * side

    x = tokens.data[1:]
    padded = np.vstack([x, x[: m - n]]) if m > n else x
    grid = padded.T.reshape(d, side, side)

    windows = []
    out_grid = grid.copy()
    for k in kernels:
        # kernels are stored flat as (d, s*s); recover s
        s = int(round(math.sqrt(k.data.shape[1])))
        kd = k.data.reshape(d, s, s)
        p = s // 2
        padded_grid = np.pad(grid, ((0, 0), (p, p), (p, p)))
        win = sliding_window_view(padded_grid, (s, s), axis=(1, 2))
        windows.append((win, kd, s))
        out_grid = out_grid + np.einsum("dhwij,dij->dhw", win, kd)

    out_patches = out_grid.reshape(d, m).T[:n]
    out_data = np.vstack([tokens.data[0:1], out_patches])

    def back(g):
        g_cls = g[0:1]
        g_patches = np.zeros((m, d))
        g_patches[:n] = g[1:]
        g_grid = g_patches.T.reshape(d, side, side)

        # input grid receives the identity branch plus each conv transpose
        acc = g_grid.copy()
        for (win, kd, s), kern in zip(windows, kernels):
            p = s // 2
            # gradient w.r.t. kernel
            gk = np.einsum("dhwij,dhw->dij", win, g_grid)
            kern._accumulate(gk.reshape(d, s * s))
            # gradient w.r.t. grid: correlate upstream grad with flipped kernel
            gpad = np.pad(g_grid, ((0, 0), (p, p), (p, p)))
            gwin = sliding_window_view(gpad, (s, s), axis=(1, 2))
            acc += np.einsum("dhwij,dij->dhw", gwin, kd[:, ::-1, ::-1])

        g_flat = acc.reshape(d, m).T
        g_x = g_flat[:n].copy()
        if m > n:
            g_x[: m - n] += g_flat[n:]
        full = np.vstack([g_cls, g_x])
        tokens._accumulate(full)

    return Tensor(out_data, (tokens, *kernels), back)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckFailure:
    parameter: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    n_checked: int
    failures: list[GradCheckFailure] = field(default_factory=list)

    def __str__(self):
        head = "PASS" if self.passed else "FAIL"
        lines = [f"{head}: {self.n_checked} entries, max rel err {self.max_rel_err:.3e}"]
        for f in self.failures[:20]:
            lines.append(
                f"  {f.parameter}{list(f.index)}: analytic={f.analytic:.6e} "
                f"numeric={f.numeric:.6e} rel_err={f.rel_err:.3e}")
        return "\n".join(lines)


def check_gradients(loss_fn, params: list[Parameter], tol: float = 1e-4,
                    step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of a scalar loss against central differences.

    ``loss_fn`` must rebuild the computation from the current parameter
    values on every call and return a scalar Tensor.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {id(p): p.grad.copy() for p in params}

    failures = []
    max_rel = 0.0
    n = 0
    for p in params:
        a = analytic[id(p)]
        it = np.nditer(p.data, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p.data[idx]
            p.data[idx] = orig + step
            lo_plus = loss_fn().item()
            p.data[idx] = orig - step
            lo_minus = loss_fn().item()
            p.data[idx] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * step)
            rel = abs(a[idx] - numeric) / max(1.0, abs(numeric))
            max_rel = max(max_rel, rel)
            n += 1
            if rel > tol:
                failures.append(GradCheckFailure(p.name, idx, float(a[idx]),
                                                 float(numeric), float(rel)))
            it.iternext()
    return GradCheckReport(passed=not failures, max_rel_err=max_rel,
                           n_checked=n, failures=failures)
