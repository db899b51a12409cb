"""Dense 4-d tensors with tape-based reverse-mode differentiation.

Layout is NHWC (batch, height, width, channels), double precision by
default. Operations record a backward closure onto the innermost active
Tape; replaying the tape in reverse accumulates gradients additively into
every input, so a tensor consumed by several ops receives the sum of all
contributions.
"""

import threading

import numpy as np

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype):
    """Switch the construction dtype (float32 is an opt-in fast mode;
    gradient-check tolerances assume float64)."""
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


class Tensor:
    """A numpy array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name=None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def accum_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# --- tape -------------------------------------------------------------

_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = _LOCAL.tapes = []
    return stack


class Tape:
    """Ordered record of executed operations (one backward closure each).

    A tape belongs to one logical training thread; distinct tapes may run
    in parallel threads (the active-tape stack is thread-local).
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records = []

    def __len__(self):
        return len(self._records)

    def record(self, fn):
        self._records.append(fn)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _record(fn):
    tape = active_tape()
    if tape is not None:
        tape.record(fn)


def backward(tape, loss, params=None):
    """Replay `tape` in reverse, accumulating gradients from scalar `loss`.

    Each recorded operation is visited exactly once. If `params` (a dict
    of name -> Tensor) is given, parameters untouched by the replay get a
    zero gradient and the gradient arrays are returned keyed by name.
    """
    if not isinstance(tape, Tape):
        raise TypeError("backward expects a Tape")
    if len(tape) == 0:
        raise ValueError("backward on an empty tape")
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for fn in reversed(tape._records):
        fn()
    if params is None:
        return None
    out = {}
    for name, p in params.items():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out[name] = p.grad
    return out


# --- elementwise and matrix ops ----------------------------------------


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def bwd():
        g = out.grad
        if g is None:
            return
        a.accum_grad(g)
        b.accum_grad(g)

    _record(bwd)
    return out


def relu(x):
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accum_grad(g * (x.data > 0))

    _record(bwd)
    return out


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s)

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accum_grad(g * s * (1.0 - s))

    _record(bwd)
    return out


def softmax_rows(x):
    """Row-wise softmax of a 2-d tensor, stabilized by per-row max subtraction."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def bwd():
        g = out.grad
        if g is None:
            return
        # row-wise Jacobian-vector product
        x.accum_grad(s * (g - (g * s).sum(axis=1, keepdims=True)))

    _record(bwd)
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd():
        g = out.grad
        if g is None:
            return
        a.accum_grad(g @ b.data.T)
        b.accum_grad(a.data.T @ g)

    _record(bwd)
    return out


def transpose2d(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got shape {x.shape}")
    out = Tensor(x.data.T.copy())

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accum_grad(g.T)

    _record(bwd)
    return out


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accum_grad(g.reshape(x.shape))

    _record(bwd)
    return out


def concat_channels(parts):
    """Concatenate 4-d tensors along the channel axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    base = parts[0].shape
    for p in parts:
        if p.ndim != 4 or p.shape[:3] != base[:3]:
            raise ShapeError(
                f"concat_channels spatial dims differ: {p.shape} vs {base}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=3))
    widths = [p.shape[3] for p in parts]

    def bwd():
        g = out.grad
        if g is None:
            return
        offset = 0
        for p, w in zip(parts, widths):
            p.accum_grad(g[:, :, :, offset : offset + w])
            offset += w

    _record(bwd)
    return out


def sum_all(x):
    """Scalar sum of every element."""
    x = as_tensor(x)
    out = Tensor(x.data.sum())

    def bwd():
        g = out.grad
        if g is None:
            return
        x.accum_grad(np.broadcast_to(g, x.shape))

    _record(bwd)
    return out


# --- padding / cropping -------------------------------------------------


def replicate_pad(x, bottom, right):
    """Replicate the bottom row / right column `bottom` / `right` times."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"replicate_pad expects a 4-d tensor, got {x.shape}")
    if bottom < 0 or right < 0:
        raise ValueError("pad amounts must be non-negative")
    if bottom == 0 and right == 0:
        return x
    _, h, w, _ = x.shape
    out = Tensor(np.pad(x.data, ((0, 0), (0, bottom), (0, right), (0, 0)), mode="edge"))

    def bwd():
        g = out.grad
        if g is None:
            return
        gx = g[:, :h, :w, :].copy()
        # replicated cells are copies of the edge, so their gradients fold back
        if bottom:
            gx[:, h - 1, :, :] += g[:, h:, :w, :].sum(axis=1)
        if right:
            gx[:, :, w - 1, :] += g[:, :h, w:, :].sum(axis=2)
        if bottom and right:
            gx[:, h - 1, w - 1, :] += g[:, h:, w:, :].sum(axis=(1, 2))
        x.accum_grad(gx)

    _record(bwd)
    return out


def crop(x, height, width):
    """Keep the top-left height x width window."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"crop expects a 4-d tensor, got {x.shape}")
    if height > x.shape[1] or width > x.shape[2]:
        raise ShapeError(f"crop {height}x{width} exceeds input {x.shape}")
    if (height, width) == x.shape[1:3]:
        return x
    out = Tensor(x.data[:, :height, :width, :].copy())

    def bwd():
        g = out.grad
        if g is None:
            return
        gx = np.zeros_like(x.data)
        gx[:, :height, :width, :] = g
        x.accum_grad(gx)

    _record(bwd)
    return out


# --- convolution --------------------------------------------------------


def _same_geometry(size, k, stride):
    out = -(-size // stride)  # ceil division
    pad = max((out - 1) * stride + k - size, 0)
    return out, pad // 2, pad - pad // 2


def conv_output_geometry(h, w, kh, kw, stride, padding):
    """Output spatial size and (top,bottom,left,right) zero padding."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        ho, pt, pb = _same_geometry(h, kh, stride)
        wo, pl, pr = _same_geometry(w, kw, stride)
        return ho, wo, (pt, pb, pl, pr)
    if padding == "valid":
        if h < kh or w < kw:
            raise ShapeError(f"valid conv: input {h}x{w} smaller than kernel {kh}x{kw}")
        return (h - kh) // stride + 1, (w - kw) // stride + 1, (0, 0, 0, 0)
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _im2col(xp, kh, kw, stride, ho, wo):
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[
                :, i : i + ho * stride : stride, j : j + wo * stride : stride, :
            ]
    return cols.reshape(n * ho * wo, kh * kw * c)


def _col2im(cols, xp_shape, kh, kw, stride, ho, wo):
    n, _, _, c = xp_shape
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            xp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += (
                cols[:, :, :, i, j, :]
            )
    return xp


def _check_bias(bias, cout):
    bias = as_tensor(bias)
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} channels")
    return bias


def conv2d(x, kernel, bias=None, stride=1, padding="same"):
    """2-d convolution, NHWC input against an (kh, kw, cin, cout) kernel.

    With padding='same' and stride=1 the spatial size is preserved.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-d, got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-d, got {kernel.shape}")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(
            f"kernel expects {kcin} input channels but input has {cin}"
        )
    ho, wo, (pt, pb, pl, pr) = conv_output_geometry(h, w, kh, kw, stride, padding)
    if bias is not None:
        bias = _check_bias(bias, cout)

    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    flat = cols @ kmat
    if bias is not None:
        flat = flat + bias.data
    out = Tensor(flat.reshape(n, ho, wo, cout))

    def bwd():
        g = out.grad
        if g is None:
            return
        gflat = g.reshape(n * ho * wo, cout)
        kernel.accum_grad((cols.T @ gflat).reshape(kernel.shape))
        if bias is not None:
            bias.accum_grad(gflat.sum(axis=0))
        gxp = _col2im(gflat @ kmat.T, xp.shape, kh, kw, stride, ho, wo)
        x.accum_grad(gxp[:, pt : pt + h, pl : pl + w, :])

    _record(bwd)
    return out


def conv2d_transpose(x, kernel, bias=None, stride=2):
    """Exact adjoint of same-padded conv2d with the given kernel and stride.

    The kernel keeps conv orientation (kh, kw, c_out, c_in): a transpose fed
    c_in channels emits c_out channels at stride times the spatial size, so
    <conv2d(u, k, stride=s), v> == <u, conv2d_transpose(v, k, stride=s)> for
    bias-free kernels.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(
            f"conv2d_transpose expects 4-d operands, got {x.shape} and {kernel.shape}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n, h, w, cy = x.shape
    kh, kw, cx, kcy = kernel.shape
    if kcy != cy:
        raise ShapeError(f"kernel expects {kcy} input channels but input has {cy}")
    hx, wx = h * stride, w * stride
    ho, wo, (pt, pb, pl, pr) = conv_output_geometry(hx, wx, kh, kw, stride, "same")
    # same padding guarantees the adjoint restores exactly stride x the size
    assert (ho, wo) == (h, w)
    if bias is not None:
        bias = _check_bias(bias, cx)

    kmat = kernel.data.reshape(kh * kw * cx, cy)
    xflat = x.data.reshape(n * h * w, cy)
    up = _col2im(xflat @ kmat.T, (n, hx + pt + pb, wx + pl + pr, cx), kh, kw, stride, h, w)
    data = up[:, pt : pt + hx, pl : pl + wx, :]
    if bias is not None:
        data = data + bias.data
    out = Tensor(data)

    def bwd():
        g = out.grad
        if g is None:
            return
        gp = np.pad(g, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        gcols = _im2col(gp, kh, kw, stride, h, w)
        x.accum_grad((gcols @ kmat).reshape(n, h, w, cy))
        kernel.accum_grad((gcols.T @ xflat).reshape(kernel.shape))
        if bias is not None:
            bias.accum_grad(g.sum(axis=(0, 1, 2)))

    _record(bwd)
    return out


def maxpool2d(x, window):
    """Non-overlapping max pooling; non-divisible edges are replicate-padded."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects a 4-d tensor, got {x.shape}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    _, h, w, _ = x.shape
    x = replicate_pad(x, (-h) % window, (-w) % window)
    n, hp, wp, c = x.shape
    ho, wo = hp // window, wp // window

    stack = np.empty((n, ho, wo, window * window, c), dtype=x.data.dtype)
    k = 0
    for p in range(window):
        for q in range(window):
            stack[:, :, :, k, :] = x.data[:, p::window, q::window, :]
            k += 1
    idx = stack.argmax(axis=3)  # first max wins; recorded for backward
    out = Tensor(np.take_along_axis(stack, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :])

    def bwd():
        g = out.grad
        if g is None:
            return
        gx = np.zeros_like(x.data)
        k = 0
        for p in range(window):
            for q in range(window):
                gx[:, p::window, q::window, :] += g * (idx == k)
                k += 1
        x.accum_grad(gx)

    _record(bwd)
    return out


# --- verification oracle -------------------------------------------------


def finite_diff_grad(fn, point, eps=1e-6):
    """Central-difference gradient of a scalar-valued fn at `point`.

    `fn` must be deterministic; `point.data` is perturbed in place and
    restored. Independent of the tape machinery by construction.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    point = as_tensor(point)
    flat = point.data.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn(point))
        flat[i] = orig - eps
        lo = float(fn(point))
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return Tensor(grad.reshape(point.shape))
