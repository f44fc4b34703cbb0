"""Dense tensors with reverse-mode automatic differentiation.

A computation graph is built dynamically as operations run; calling
``backward()`` on a scalar root sweeps it once in reverse topological order
and then frees the graph, so each forward pass owns its own graph. Only the
operations the network actually needs live here: elementwise arithmetic,
matmul, 2-d convolution (plain and transposed), pooling, and a handful of
reductions.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_PRECISIONS = {"single": np.float32, "double": np.float64}
_default_dtype = np.float32


def set_precision(name: str) -> None:
    """Select the scalar width ("single" or "double") for new tensors."""
    global _default_dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected 'single' or 'double'")
    _default_dtype = _PRECISIONS[name]


def get_precision() -> str:
    return "single" if _default_dtype == np.float32 else "double"


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default scalar width."""
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array with an optional gradient buffer and graph link."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, inputs: Sequence["Tensor"],
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out._prev = tuple(inputs)
            out._backward = lambda: backward(out.grad)
        return out

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor.

        The root must be scalar. The graph is freed afterwards, so a second
        backward requires a fresh forward pass.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        # Iterative topological order; graphs can be deep.
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
        # Free the graph; leaves keep their grads.
        for node in order:
            node._prev = ()
            node._backward = None

    # -- elementwise arithmetic ---------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))
        return Tensor._result(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))
        return Tensor._result(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)
        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / (other.data ** 2),
                                               other.data.shape))
        return Tensor._result(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return self._coerce(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        exponent = float(exponent)
        def backward(g):
            if self.requires_grad:
                if exponent == 0.0:
                    return
                self._accumulate(g * exponent * self.data ** (exponent - 1.0))
        return Tensor._result(self.data ** exponent, (self,), backward)

    def log(self) -> "Tensor":
        def backward(g):
            if self.requires_grad:
                self._accumulate(g / self.data)
        return Tensor._result(np.log(self.data), (self,), backward)

    def clip(self, low: float, high: float) -> "Tensor":
        # Gradient passes only strictly inside the interval.
        mask = (self.data > low) & (self.data < high)
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * mask)
        return Tensor._result(np.clip(self.data, low, high), (self,), backward)

    def relu(self) -> "Tensor":
        mask = self.data > 0
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * mask)
        return Tensor._result(np.maximum(self.data, 0), (self,), backward)

    def sigmoid(self) -> "Tensor":
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        def backward(g):
            if self.requires_grad:
                self._accumulate(g * out * (1.0 - out))
        return Tensor._result(out, (self,), backward)

    # -- reductions and linear algebra ---------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.data.shape).copy())
            else:
                expanded = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(expanded, self.data.shape).copy())
        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims),
                              (self,), backward)

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.data.size)

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(f"matmul expects 2-d operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul shapes do not chain: {self.shape} @ {other.shape}")
        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)
        return Tensor._result(self.data @ other.data, (self, other), backward)

    __matmul__ = matmul


# -- im2col machinery shared by the convolution ops ---------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int,
            ph: int, pw: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int,
            sh: int, sw: int, ph: int, pw: int, oh: int, ow: int) -> np.ndarray:
    n, c, h, w = x_shape
    padded = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += cols[:, :, i, j]
    if ph or pw:
        return padded[:, :, ph:ph + h, pw:pw + w]
    return padded


def _check_pair(value, name: str) -> tuple[int, int]:
    a, b = int(value[0]), int(value[1])
    if name == "stride" and (a < 1 or b < 1):
        raise ValueError(f"stride components must be >= 1, got {value}")
    if name == "padding" and (a < 0 or b < 0):
        raise ValueError(f"padding components must be >= 0, got {value}")
    return a, b


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-d cross-correlation of NCHW input with an OIHW kernel, zero-padded."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    sh, sw = _check_pair(stride, "stride")
    ph, pw = _check_pair(padding, "padding")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = kernel.shape
    if cin != kcin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} has {cin} channels, "
                         f"kernel {kernel.shape} expects {kcin}")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"kernel {kernel.shape} larger than padded input {x.shape}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")

    cols, oh, ow = _im2col(x.data, kh, kw, sh, sw, ph, pw)
    w_mat = kernel.data.reshape(cout, cin * kh * kw)
    out = np.matmul(w_mat, cols).reshape(n, cout, oh, ow)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        inputs = (x, kernel, bias)
    else:
        inputs = (x, kernel)

    def backward(g):
        g_mat = g.reshape(n, cout, oh * ow)
        if x.requires_grad:
            g_cols = np.matmul(w_mat.T, g_mat)
            x._accumulate(_col2im(g_cols, x.data.shape, kh, kw, sh, sw, ph, pw, oh, ow))
        if kernel.requires_grad:
            gw = np.tensordot(g_mat, cols, axes=([0, 2], [0, 2]))
            kernel._accumulate(gw.reshape(kernel.data.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return Tensor._result(out, inputs, backward)


def conv2d_transpose(x: Tensor, kernel: Tensor, stride=(1, 1)) -> Tensor:
    """Transposed 2-d convolution (the adjoint of conv2d's input map).

    The kernel is laid out [c_in, c_out, kh, kw]; output spatial size is
    (H-1)*stride + kernel.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects 4-d input and kernel, "
                         f"got {x.shape} and {kernel.shape}")
    sh, sw = _check_pair(stride, "stride")
    n, cin, h, w = x.shape
    kcin, cout, kh, kw = kernel.shape
    if cin != kcin:
        raise ShapeError(f"conv2d_transpose channel mismatch: input {x.shape} has {cin} "
                         f"channels, kernel {kernel.shape} expects {kcin}")
    oh = (h - 1) * sh + kh
    ow = (w - 1) * sw + kw
    w_mat = kernel.data.reshape(cin, cout * kh * kw)
    x_mat = x.data.reshape(n, cin, h * w)
    cols = np.matmul(w_mat.T, x_mat)
    out = _col2im(cols, (n, cout, oh, ow), kh, kw, sh, sw, 0, 0, h, w)

    def backward(g):
        g_cols, goh, gow = _im2col(g, kh, kw, sh, sw, 0, 0)
        if x.requires_grad:
            gx = np.matmul(w_mat, g_cols).reshape(n, cin, h, w)
            x._accumulate(gx)
        if kernel.requires_grad:
            gw = np.tensordot(x_mat, g_cols, axes=([0, 2], [0, 2]))
            kernel._accumulate(gw.reshape(kernel.data.shape))

    return Tensor._result(out, (x, kernel), backward)


def maxpool2d(x: Tensor, window=(2, 2), stride=(2, 2)) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first
    window element in row-major order."""
    if tuple(window) != (2, 2) or tuple(stride) != (2, 2):
        raise ValueError("maxpool2d supports window (2,2) with stride (2,2) only")
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects a 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    oh, ow = h // 2, w // 2
    windows = (x.data.reshape(n, c, oh, 2, ow, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, oh, ow, 4))
    idx = windows.argmax(axis=4)
    out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        buf = np.zeros((n, c, oh, ow, 4), dtype=g.dtype)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=4)
        gx = (buf.reshape(n, c, oh, ow, 2, 2)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h, w))
        x._accumulate(gx)

    return Tensor._result(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError(f"concat_channels expects 4-d inputs, got {a.shape} and {b.shape}")
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(f"concat_channels needs matching N/H/W, got {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return Tensor._result(np.concatenate((a.data, b.data), axis=1), (a, b), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Select channels [start, stop) of an NCHW tensor."""
    if x.data.ndim != 4:
        raise ShapeError(f"slice_channels expects a 4-d input, got {x.shape}")

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            x._accumulate(gx)

    return Tensor._result(x.data[:, start:stop].copy(), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Channel-wise spatial mean: NCHW -> NC."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-d input, got {x.shape}")
    n, c, h, w = x.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy())

    return Tensor._result(x.data.mean(axis=(2, 3)), (x,), backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ weight + bias for NF inputs."""
    if x.data.ndim != 2:
        raise ShapeError(f"dense expects a 2-d input, got {x.shape}")
    if weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense weight {weight.shape} does not match input {x.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense bias {bias.shape} does not match weight {weight.shape}")
    return x.matmul(weight) + bias


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Zero each element independently with probability ``rate`` and scale
    survivors by 1/(1-rate); identity when not training or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return Tensor._result(x.data * mask, (x,), backward)


def grad_check(f: Callable[[], Tensor], leaves: Iterable[Tensor], h: float = 1e-5,
               num_coords: int = 20, rng: np.random.Generator | None = None,
               zero_tol: float = 1e-8) -> float:
    """Compare analytic grads of the scalar program ``f`` against central
    finite differences at sampled coordinates of each leaf.

    Returns the max over sampled coordinates of
    |analytic - numeric| / max(1e-12, |analytic| + |numeric|).

    Coordinates where both sides are below ``zero_tol`` in magnitude are
    treated as agreeing: a truly zero gradient meets finite-difference
    rounding noise there, and the ratio would measure only that noise.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    rng = rng or np.random.default_rng(0)
    leaves = list(leaves)
    for leaf in leaves:
        leaf.zero_grad()
    root = f()
    root.backward()
    analytic = [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)
                for leaf in leaves]
    worst = 0.0
    for leaf, grad in zip(leaves, analytic):
        count = min(num_coords, leaf.data.size)
        coords = rng.choice(leaf.data.size, size=count, replace=False)
        for flat in coords:
            original = leaf.data.flat[flat]
            leaf.data.flat[flat] = original + h
            f_plus = float(f().data)
            leaf.data.flat[flat] = original - h
            f_minus = float(f().data)
            leaf.data.flat[flat] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(grad.flat[flat])
            if abs(a) < zero_tol and abs(numeric) < zero_tol:
                continue
            rel = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
