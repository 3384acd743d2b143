"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float32 or float64). Every operation that sees a
tensor requiring gradients records its inputs and a backward closure on the
output; ``Tensor.backward`` walks the recorded graph once, in reverse
topological order, and accumulates gradients additively on every tensor
that requires them. Verification tests run in 64-bit; training may use
32-bit for speed.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Shapes or axes inconsistent with the operation's contract."""


class ContractError(ValueError):
    """A precondition of the operation was violated."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


_FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(np.float64)
    return arr


class Tensor:
    """n-dimensional float array with an optional gradient slot.

    ``grad`` is lazily allocated during backward and always matches
    ``data`` in shape. Tensors with ``requires_grad=False`` never
    accumulate gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward_fn = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Propagate gradients from this scalar to every reachable tensor.

        Gradients from multiple uses of the same tensor sum. Raises
        ``ContractError`` if this tensor is not scalar.
        """
        if self.data.shape != ():
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        # Iterative post-order DFS; recursion would overflow on long
        # recurrent chains (LSTM over hundreds of steps).
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)


def _wrap(other, like):
    if isinstance(other, Tensor):
        return other
    return Tensor(np.asarray(other, dtype=like.dtype))


def _record(data, parents, backward_fn, op):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def _unbroadcast(g, shape):
    """Sum out the axes numpy broadcasting added or expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _wrap(b, a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _record(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _wrap(b, a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _record(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _wrap(b, a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _record(a.data * b.data, (a, b), bw, "mul")


def power(x, p):
    """Elementwise x**p for a fixed python scalar exponent."""
    p = float(p)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * p * x.data ** (p - 1.0))

    return _record(x.data ** p, (x,), bw, "pow")


def tsum(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)

    def bw(g):
        if not x.requires_grad:
            return
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _record(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw, "sum")


def tmean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))

    def bw(g):
        if not x.requires_grad:
            return
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        x._accumulate(np.broadcast_to(g, x.shape) / count)

    return _record(x.data.mean(axis=axes, keepdims=keepdims), (x,), bw, "mean")


def _norm_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = x.shape

    def bw(g):
        if x.requires_grad:
            x._accumulate(g.reshape(old))

    return _record(x.data.reshape(shape), (x,), bw, "reshape")


def transpose(x, *axes):
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g.transpose(inv))

    return _record(x.data.transpose(axes), (x,), bw, "transpose")


def take(x, idx):
    """Basic (slice/integer) indexing with scatter-add backward."""

    def bw(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[idx] += g

    return _record(x.data[idx], (x,), bw, "take")


def concat(tensors, axis=0):
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x):
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * out * (1.0 - out))

    return _record(out, (x,), bw, "sigmoid")


def tanh(x):
    out = np.tanh(x.data)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out * out))

    return _record(out, (x,), bw, "tanh")


def elu(x):
    d = x.data
    neg = d <= 0
    out = d.copy()
    out[neg] = np.expm1(d[neg])

    def bw(g):
        if x.requires_grad:
            dd = np.ones_like(d)
            dd[neg] = out[neg] + 1.0
            x._accumulate(g * dd)

    return _record(out, (x,), bw, "elu")


def pointwise(x, kind):
    """Dispatch by activation name; kinds: 'elu', 'sigmoid'."""
    if kind == "elu":
        return elu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ContractError(f"unknown pointwise kind {kind!r}")


def softmax(x, axis):
    """Softmax along ``axis``; slices sum to one. Max-subtracted for stability."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for rank {x.ndim}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if x.requires_grad:
            x._accumulate((g - (g * out).sum(axis=axis, keepdims=True)) * out)

    return _record(out, (x,), bw, "softmax")


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product of 2-D tensors, or batched over equal leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _record(a.data @ b.data, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# 2-D convolution / transposed convolution
# ---------------------------------------------------------------------------

def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _windows(xp, kshape, stride, dilation, out_spatial):
    """Strided view of padded input: (B, C, To, Fo, kT, kF). No copy."""
    kT, kF = kshape
    sT, sF = stride
    dT, dF = dilation
    eT, eF = dT * (kT - 1) + 1, dF * (kF - 1) + 1
    w = np.lib.stride_tricks.sliding_window_view(xp, (eT, eF), axis=(2, 3))
    w = w[:, :, :: sT, :: sF, :: dT, :: dF]
    To, Fo = out_spatial
    return w[:, :, :To, :Fo]


def _conv_out_size(n, k, s, p, d):
    eff = d * (k - 1) + 1
    return (n + 2 * p - eff) // s + 1


def _conv_forward_raw(x, w, stride, padding, dilation):
    sT, sF = stride
    pT, pF = padding
    Co, Ci, kT, kF = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pT, pT), (pF, pF)))
    To = _conv_out_size(x.shape[2], kT, sT, pT, dilation[0])
    Fo = _conv_out_size(x.shape[3], kF, sF, pF, dilation[1])
    B = x.shape[0]
    cols = _im2col(xp, (kT, kF), stride, dilation, (To, Fo))
    y = cols @ w.reshape(Co, -1).T
    return y.reshape(B, To, Fo, Co).transpose(0, 3, 1, 2), xp


def _im2col(xp, kshape, stride, dilation, out_spatial):
    """Materialized patch matrix (B*To*Fo, Ci*kT*kF) from the padded input."""
    win = _windows(xp, kshape, stride, dilation, out_spatial)
    B, Ci = xp.shape[0], xp.shape[1]
    To, Fo = out_spatial
    kT, kF = kshape
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        B * To * Fo, Ci * kT * kF
    )


def _conv_weight_grad_raw(xp, dy, stride, dilation, kshape):
    B, Co, To, Fo = dy.shape
    Ci = xp.shape[1]
    cols = _im2col(xp, kshape, stride, dilation, (To, Fo))
    dy_mat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(B * To * Fo, Co)
    return (dy_mat.T @ cols).reshape(Co, Ci, kshape[0], kshape[1])


def _conv_input_grad_raw(dy, w, stride, padding, dilation, out_spatial, output_padding=(0, 0)):
    """Transpose of the correlation: scatter dy through w back to input size."""
    sT, sF = stride
    pT, pF = padding
    dT, dF = dilation
    Co, Ci, kT, kF = w.shape
    B, _, To, Fo = dy.shape
    accT = (To - 1) * sT + dT * (kT - 1) + 1 + output_padding[0]
    accF = (Fo - 1) * sF + dF * (kF - 1) + 1 + output_padding[1]
    acc = np.zeros((B, Ci, accT, accF), dtype=dy.dtype)
    for a in range(kT):
        for b in range(kF):
            contrib = np.tensordot(w[:, :, a, b], dy, axes=([0], [1]))  # (Ci, B, To, Fo)
            acc[:, :, a * dT : a * dT + sT * To : sT, b * dF : b * dF + sF * Fo : sF] += (
                contrib.transpose(1, 0, 2, 3)
            )
    T_out, F_out = out_spatial
    return acc[:, :, pT : pT + T_out, pF : pF + F_out]


def _lift(x):
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected rank-3 (C,T,F) or rank-4 (B,C,T,F) input, got {x.shape}")


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)):
    """Cross-correlation of x (C_in,T,F) or (B,C_in,T,F) with w (C_out,C_in,kT,kF).

    Output spatial extents follow floor((n + 2p - k)/s) + 1. Raises
    ``DimensionError`` when the kernel does not fit the padded input.
    """
    stride, padding = _pair(stride), _pair(padding)
    x4, lifted = _lift(x)
    Co, Ci, kT, kF = w.shape
    if x4.shape[1] != Ci:
        raise DimensionError(f"conv2d channel mismatch: input {x4.shape} vs weight {w.shape}")
    if x4.shape[2] + 2 * padding[0] < kT or x4.shape[3] + 2 * padding[1] < kF:
        raise DimensionError(
            f"conv2d kernel {(kT, kF)} larger than padded input {x4.shape} with padding {padding}"
        )
    y, xp = _conv_forward_raw(x4.data, w.data, stride, padding, (1, 1))
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1)
    in_spatial = (x4.shape[2], x4.shape[3])

    def bw(g):
        g4 = g.reshape(y.shape)
        if b is not None and b.requires_grad:
            b._accumulate(g4.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w._accumulate(_conv_weight_grad_raw(xp, g4, stride, (1, 1), (kT, kF)))
        if x.requires_grad:
            gx = _conv_input_grad_raw(g4, w.data, stride, padding, (1, 1), in_spatial)
            x._accumulate(gx.reshape(x.shape))

    parents = (x, w) if b is None else (x, w, b)
    out = _record(y if not lifted else y.reshape(y.shape[1:]), parents, bw, "conv2d")
    return out


def deconv2d(x, w, b=None, stride=(1, 1), padding=(0, 0), output_padding=(0, 0), dilation=(1, 1)):
    """Transposed convolution; exact adjoint of conv2d with shared geometry.

    Weight layout is (C_in, C_out, kT, kF): sharing one array between a
    conv2d and this op (bias-free) satisfies <conv2d(x), y> == <x, deconv2d(y)>.
    Dilation is accepted but defaults to 1. Output extent is
    (n-1)*s - 2p + d*(k-1) + 1 + output_padding.
    """
    stride, padding = _pair(stride), _pair(padding)
    output_padding, dilation = _pair(output_padding), _pair(dilation)
    for op_, s in zip(output_padding, stride):
        if not 0 <= op_ < max(s, 1):
            raise DimensionError(f"output_padding {output_padding} must be < stride {stride}")
    x4, lifted = _lift(x)
    Cin, Cout, kT, kF = w.shape
    if x4.shape[1] != Cin:
        raise DimensionError(f"deconv2d channel mismatch: input {x4.shape} vs weight {w.shape}")
    T_out = (x4.shape[2] - 1) * stride[0] - 2 * padding[0] + dilation[0] * (kT - 1) + 1 + output_padding[0]
    F_out = (x4.shape[3] - 1) * stride[1] - 2 * padding[1] + dilation[1] * (kF - 1) + 1 + output_padding[1]
    if T_out <= 0 or F_out <= 0:
        raise DimensionError(f"deconv2d geometry yields empty output ({T_out}, {F_out})")
    y = _conv_input_grad_raw(x4.data, w.data, stride, padding, dilation, (T_out, F_out), output_padding)
    if b is not None:
        y = y + b.data.reshape(1, -1, 1, 1)

    def bw(g):
        g4 = g.reshape(y.shape)
        if b is not None and b.requires_grad:
            b._accumulate(g4.sum(axis=(0, 2, 3)))
        gp = np.pad(g4, ((0, 0), (0, 0), (padding[0], padding[0]), (padding[1], padding[1])))
        if w.requires_grad:
            w._accumulate(_conv_weight_grad_raw(gp, x4.data, stride, dilation, (kT, kF)))
        if x.requires_grad:
            gx, _ = _conv_forward_raw(g4, w.data, stride, padding, dilation)
            x._accumulate(gx.reshape(x.shape))

    parents = (x, w) if b is None else (x, w, b)
    return _record(y if not lifted else y.reshape(y.shape[1:]), parents, bw, "deconv2d")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm2d(x, gamma, beta, state, training):
    """Per-channel normalization over all non-channel axes.

    Train mode uses batch statistics and updates ``state`` running buffers
    with its momentum; eval mode normalizes by the running buffers.
    """
    x4, lifted = _lift(x)
    C = x4.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm affine shape {gamma.shape} does not match {C} channels")
    if x4.size // C == 0:
        raise NumericError("batchnorm over a zero-size channel")
    if training:
        m = x4.mean(axis=(0, 2, 3), keepdims=True)
        centered = sub(x4, m)
        v = tmean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        xhat = mul(centered, power(add(v, state.eps), -0.5))
        n = x4.size // C
        state.running_mean *= state.momentum
        state.running_mean += (1.0 - state.momentum) * m.data.reshape(C)
        state.running_var *= state.momentum
        state.running_var += (1.0 - state.momentum) * v.data.reshape(C) * (n / max(n - 1, 1))
    else:
        rm = state.running_mean.reshape(1, C, 1, 1).astype(x4.dtype)
        rv = state.running_var.reshape(1, C, 1, 1).astype(x4.dtype)
        xhat = mul(sub(x4, Tensor(rm)), Tensor(1.0 / np.sqrt(rv + state.eps)))
    out = add(mul(xhat, reshape(gamma, (1, C, 1, 1))), reshape(beta, (1, C, 1, 1)))
    return reshape(out, x.shape) if lifted else out


# ---------------------------------------------------------------------------
# overlap-add frame decoding (1-D transposed convolution over time)
# ---------------------------------------------------------------------------

def overlap_add_decode(frames, kernel, hop):
    """Decode frame features to a waveform via a strided 1-D transposed conv.

    frames: (T, D) or (B, T, D); kernel: (D, win) with hop dividing win.
    Each frame projects onto a length-``win`` segment placed at t*hop;
    overlapping segments sum. Output length is (T-1)*hop + win.
    """
    D, win = kernel.shape
    if win % hop != 0:
        raise DimensionError(f"hop {hop} must divide kernel length {win}")
    if frames.shape[-1] != D:
        raise DimensionError(f"frame feature dim {frames.shape[-1]} != kernel input dim {D}")
    lifted = frames.ndim == 2
    f3 = frames.data.reshape((1,) + frames.shape) if lifted else frames.data
    B, T, _ = f3.shape
    n_out = (T - 1) * hop + win
    rows = f3 @ kernel.data  # (B, T, win)
    y = np.zeros((B, n_out), dtype=rows.dtype)
    for c in range(win // hop):
        y[:, c * hop : c * hop + T * hop] += rows[:, :, c * hop : (c + 1) * hop].reshape(B, T * hop)

    def bw(g):
        g2 = g.reshape(B, n_out)
        drows = np.empty_like(rows)
        for c in range(win // hop):
            drows[:, :, c * hop : (c + 1) * hop] = g2[:, c * hop : c * hop + T * hop].reshape(B, T, hop)
        if frames.requires_grad:
            gf = drows @ kernel.data.T
            frames._accumulate(gf.reshape(frames.shape))
        if kernel.requires_grad:
            kernel._accumulate(f3.reshape(B * T, D).T @ drows.reshape(B * T, win))

    out = y[0] if lifted else y
    return _record(out, (frames, kernel), bw, "overlap_add")


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

class GradCheckReport:
    """Worst-coordinate comparison of analytic vs central-difference gradients."""

    def __init__(self, max_rel_error, passed, worst):
        self.max_rel_error = max_rel_error
        self.passed = passed
        self.worst = worst

    def __repr__(self):
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_error={self.max_rel_error:.3e}, worst={self.worst})"


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-3)


def grad_check(f, x, h=1e-5, tol=1e-4):
    """Compare the analytic gradient of scalar f(x) against central differences.

    Requires 64-bit input. Returns a report whose ``passed`` flag is True
    iff the max per-coordinate relative error is <= tol.
    """
    if x.dtype != np.float64:
        raise ContractError("grad_check requires float64 tensors")
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    max_err, worst = 0.0, None
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        err = _rel_err(analytic.reshape(-1)[i], numeric)
        if err > max_err:
            max_err, worst = err, (i, analytic.reshape(-1)[i], numeric)
    return GradCheckReport(max_err, max_err <= tol, worst)


def grad_check_params(f, params, h=1e-5, tol=1e-4, sample=None, rng=None):
    """grad_check over a set of named parameter tensors.

    ``f()`` takes no arguments and recomputes the scalar loss from the
    current parameter values. ``sample`` limits the number of coordinates
    checked per tensor (chosen with ``rng``); None checks all of them.
    Returns {name: GradCheckReport}.
    """
    params = list(params)
    for _, p in params:
        if p.dtype != np.float64:
            raise ContractError("grad_check requires float64 parameters")
        p.zero_grad()
    out = f()
    out.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for name, p in params}
    reports = {}
    for name, p in params:
        flat = p.data.reshape(-1)
        idx = range(flat.size)
        if sample is not None and flat.size > sample:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=sample, replace=False)
        max_err, worst = 0.0, None
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = _rel_err(analytic[name].reshape(-1)[i], numeric)
            if err > max_err:
                max_err, worst = err, (int(i), analytic[name].reshape(-1)[i], numeric)
        reports[name] = GradCheckReport(max_err, max_err <= tol, worst)
    return reports
