"""Dense NCHW tensors with reverse-mode automatic differentiation.

Only the operations the depth network actually needs are implemented:
convolution (cross-correlation convention), leaky ReLU, 2x max pooling,
2x bilinear upsampling (align_corners=False, edge clamped), channel
concatenation, elementwise arithmetic and full reductions. Training runs
in float32; float64 exists for finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "add_elementwise",
    "backward",
    "bilinear_upsample2x",
    "clamp",
    "concat_channels",
    "conv1x1",
    "conv2d",
    "leaky_relu",
    "maxpool2x",
    "mean_all",
    "sigmoid",
    "sum_all",
    "tslice",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def _as_array(data, dtype):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense numeric array plus optional linkage into the autodiff graph.

    ``data`` is a numpy array (float32 or float64). Gradients accumulate by
    sum into ``.grad`` when ``backward`` runs. Tensors are treated as
    immutable once used in the graph; the optimizer alone mutates ``.data``
    of leaf weights between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, dtype=None,
                 _parents=(), _backward_fn=None, _op=""):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self._op!r})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # operator sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def abs(self):
        return abs_(self)

    def backward(self):
        return backward(self)


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, backward_fn, op):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req,
                  _parents=tuple(parents) if req else (),
                  _backward_fn=backward_fn if req else None, _op=op)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = _make(data, (a, b), None, "add")

    def bw():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    out = _make(data, (a, b), None, "sub")

    def bw():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(-out.grad, b.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = _make(data, (a, b), None, "mul")

    def bw():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}")
    out = _make(data, (a, b), None, "div")

    def bw():
        _accumulate(a, _unbroadcast(out.grad / b.data, a.shape))
        _accumulate(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def add_elementwise(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; equal shapes, or a 1-channel b broadcast over a's channels."""
    if a.shape != b.shape:
        ok = (len(a.shape) == 4 and len(b.shape) == 4
              and b.shape[1] == 1 and a.shape[0] == b.shape[0]
              and a.shape[2:] == b.shape[2:])
        if not ok:
            raise ShapeError(
                f"add_elementwise: incompatible shapes {a.shape} and {b.shape}")
    return add(a, b)


def abs_(a: Tensor) -> Tensor:
    out = _make(np.abs(a.data), (a,), None, "abs")

    def bw():
        _accumulate(a, out.grad * np.sign(a.data))

    out._backward_fn = bw if out.requires_grad else None
    return out


def sigmoid(a: Tensor) -> Tensor:
    # evaluated in the branch-stable form to avoid overflow for large |x|
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = _make(s, (a,), None, "sigmoid")

    def bw():
        _accumulate(a, out.grad * s * (1.0 - s))

    out._backward_fn = bw if out.requires_grad else None
    return out


def leaky_relu(a: Tensor, alpha: float) -> Tensor:
    """x for x >= 0, alpha*x otherwise; alpha in [0, 1)."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"leaky_relu: alpha must be in [0, 1), got {alpha}")
    mask = a.data >= 0
    out = _make(np.where(mask, a.data, alpha * a.data), (a,), None, "leaky_relu")

    def bw():
        _accumulate(a, np.where(mask, out.grad, alpha * out.grad))

    out._backward_fn = bw if out.requires_grad else None
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is passed through strictly inside the range."""
    inside = (a.data > lo) & (a.data < hi)
    out = _make(np.clip(a.data, lo, hi), (a,), None, "clamp")

    def bw():
        _accumulate(a, out.grad * inside)

    out._backward_fn = bw if out.requires_grad else None
    return out


def sum_all(a: Tensor) -> Tensor:
    out = _make(a.data.sum(dtype=a.dtype).reshape(1), (a,), None, "sum")

    def bw():
        _accumulate(a, np.broadcast_to(out.grad.reshape(()), a.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = _make((a.data.sum(dtype=a.dtype) / n).reshape(1), (a,), None, "mean")

    def bw():
        _accumulate(a, np.broadcast_to(out.grad.reshape(()) / n, a.shape))

    out._backward_fn = bw if out.requires_grad else None
    return out


def tslice(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing with gradient scatter into the source."""
    out = _make(a.data[key], (a,), None, "slice")

    def bw():
        g = np.zeros_like(a.data)
        g[key] = out.grad
        _accumulate(a, g)

    out._backward_fn = bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# structured ops


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 4 or len(b.shape) != 4:
        raise ShapeError("concat_channels: both inputs must be 4-D NCHW")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = _make(np.concatenate([a.data, b.data], axis=1), (a, b), None, "concat")

    def bw():
        _accumulate(a, out.grad[:, :ca])
        _accumulate(b, out.grad[:, ca:])

    out._backward_fn = bw if out.requires_grad else None
    return out


def _im2col(x: np.ndarray, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * ho:stride,
                                 j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(gcols: np.ndarray, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    gcols = gcols.reshape(n, c, kh, kw, ho, wo)
    gx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                gcols[:, :, i, j]
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad]
    return gx


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding (no kernel flip)."""
    if len(x.shape) != 4 or len(kernel.shape) != 4:
        raise ShapeError(
            f"conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, cin, h, w = x.shape
    cout, ck, kh, kw = kernel.shape
    if ck != cin:
        raise ShapeError(
            f"conv2d: input channels {x.shape} do not match kernel {kernel.shape}")
    if bias.shape != (cout,):
        raise ShapeError(
            f"conv2d: bias shape {bias.shape} does not match kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} or padding={padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")

    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    k2 = kernel.data.reshape(cout, cin * kh * kw)
    y = np.matmul(k2, cols)  # (n, cout, ho*wo)
    y += bias.data.reshape(1, cout, 1)
    out = _make(y.reshape(n, cout, ho, wo), (x, kernel, bias), None, "conv2d")

    def bw():
        g = out.grad.reshape(n, cout, ho * wo)
        if kernel.requires_grad:
            # batched GEMM beats einsum here: sum_n g[n] @ cols[n].T
            gk = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(kernel, gk.reshape(kernel.shape))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(k2.T, g)
            _accumulate(x, _col2im(gcols, x.shape, kh, kw, stride, padding))

    out._backward_fn = bw if out.requires_grad else None
    return out


def conv1x1(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel channel mixing; a conv2d with a 1x1 kernel, stride 1, no padding."""
    if len(kernel.shape) != 4 or kernel.shape[2:] != (1, 1):
        raise ShapeError(f"conv1x1: kernel must be [C',C,1,1], got {kernel.shape}")
    return conv2d(x, kernel, bias, stride=1, padding=0)


def maxpool2x(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; gradient goes to the first max in row-major order."""
    if len(x.shape) != 4:
        raise ShapeError(f"maxpool2x: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x: extents must be even, got {x.shape}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)  # argmax picks the first occurrence on ties
    out = _make(np.take_along_axis(win, arg[..., None], axis=-1)[..., 0],
                (x,), None, "maxpool2x")

    def bw():
        g = np.zeros((n, c, h // 2, w // 2, 4), dtype=x.dtype)
        np.put_along_axis(g, arg[..., None], out.grad[..., None], axis=-1)
        g = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        _accumulate(x, g.reshape(n, c, h, w))

    out._backward_fn = bw if out.requires_grad else None
    return out


def _up2_last(x: np.ndarray) -> np.ndarray:
    """Double the last axis with align_corners=False bilinear weights, edge clamped."""
    xm1 = np.concatenate([x[..., :1], x[..., :-1]], axis=-1)
    xp1 = np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],), dtype=x.dtype)
    out[..., 0::2] = 0.25 * xm1 + 0.75 * x
    out[..., 1::2] = 0.75 * x + 0.25 * xp1
    return out


def _up2_last_T(g: np.ndarray) -> np.ndarray:
    """Transpose of _up2_last applied to an output-sized gradient."""
    ge = g[..., 0::2]
    go = g[..., 1::2]
    gx = 0.75 * ge + 0.75 * go
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., 0] += 0.25 * ge[..., 0]
    gx[..., 1:] += 0.25 * go[..., :-1]
    gx[..., -1] += 0.25 * go[..., -1]
    return gx


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double H and W; sample centers at (i+0.5)/2 - 0.5, edges clamped."""
    if len(x.shape) != 4:
        raise ShapeError(f"bilinear_upsample2x: expected 4-D input, got {x.shape}")
    y = _up2_last(x.data)
    y = _up2_last(y.swapaxes(2, 3)).swapaxes(2, 3)
    out = _make(y, (x,), None, "upsample2x")

    def bw():
        g = _up2_last_T(out.grad.swapaxes(2, 3)).swapaxes(2, 3)
        _accumulate(x, _up2_last_T(g))

    out._backward_fn = bw if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor):
    """Propagate gradients from a scalar loss through the recorded graph.

    Returns a map {tensor: gradient array} over every requires_grad tensor
    reachable from the loss. Repeated use of a tensor accumulates by sum.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn()
    grads = {t: t.grad for t in topo if t.requires_grad and t.grad is not None}
    # tear the graph down: the backward closures reference their own output
    # tensor, and those reference cycles (with large saved buffers) otherwise
    # sit around until a full gc pass
    for node in topo:
        node._parents = ()
        node._backward_fn = None
    return grads
