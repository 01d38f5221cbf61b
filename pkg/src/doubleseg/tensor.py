"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value in this package is a `Tensor`: a dense ``(n, c, h, w)`` float
array plus an optional gradient buffer.  Operations executed while a `Tape`
is active are recorded onto that tape (define-by-run); `backward` then walks
the tape once in reverse and accumulates gradients into every leaf that was
created with ``requires_grad=True``.

Training runs in float32; float64 is available for gradient verification,
where central finite differences need the extra headroom.  All forward
computation is deterministic for a fixed BLAS configuration: there is no
op-level threading in this module, so run-to-run results are bitwise
identical.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "tensor",
    "conv2d",
    "conv_transpose2d",
    "batchnorm2d",
    "relu",
    "sigmoid",
    "maxpool2d",
    "bilinear_upsample2x",
    "concat_channels",
    "slice_channels",
    "add",
    "mul",
    "global_avg_pool",
    "weighted_sum",
    "bce_loss",
    "backward",
]


class ShapeError(ValueError):
    """Raised when an operation is recorded with incompatible shapes."""


_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense ``(n, c, h, w)`` array, optionally tracked for gradients.

    Scalars (losses) use shape ``(1, 1, 1, 1)``; per-channel parameters such
    as biases and norm scales use ``(1, c, 1, 1)``.  ``grad`` is ``None``
    until `backward` populates it and always matches ``data`` in shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-d (n, c, h, w); got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Convenience constructor; reshapes scalars to ``(1, 1, 1, 1)``."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    return Tensor(arr, requires_grad=requires_grad, dtype=dtype)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended in execution order, so every node's inputs precede it
    and a single reverse sweep visits each node exactly once.  A tape is
    single-use: record one forward pass, call `backward`, discard.
    """

    def __init__(self):
        # node: (tensor, backward_fn | None, input_ids)
        self.nodes = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def _register(self, t: Tensor) -> int:
        if t._tape is self and t.node_id is not None:
            return t.node_id
        t._tape = self
        t.node_id = len(self.nodes)
        self.nodes.append((t, None, ()))
        return t.node_id

    def _record(self, out: Tensor, inputs, backward_fn):
        ids = tuple(self._register(t) for t in inputs)
        out._tape = self
        out.node_id = len(self.nodes)
        self.nodes.append((out, backward_fn, ids))

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into every tracked leaf's ``grad``."""
        if loss._tape is not self or loss.node_id is None:
            raise ValueError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.node_id] = np.ones_like(loss.data)
        for i in range(loss.node_id, -1, -1):
            g = grads[i]
            if g is None:
                continue
            t, fn, ids = self.nodes[i]
            if fn is not None:
                for j, gi in zip(ids, fn(g)):
                    if gi is None:
                        continue
                    if grads[j] is None:
                        grads[j] = gi
                    else:
                        grads[j] += gi
            elif t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            grads[i] = None


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _tracked(t: Tensor, tape) -> bool:
    return t.requires_grad or (t._tape is tape and t.node_id is not None)


def _finish(out_data, inputs, backward_builder) -> Tensor:
    """Wrap forward output; record on the active tape when grads can flow.

    ``backward_builder`` is called lazily (only when recording) with the
    tuple of per-input "needs gradient" flags and must return a function
    ``go -> tuple_of_input_grads`` producing freshly allocated arrays.
    """
    tape = _active_tape()
    out = Tensor(out_data)
    if tape is None:
        return out
    needs = tuple(_tracked(t, tape) for t in inputs)
    if not any(needs):
        return out
    tape._record(out, inputs, backward_builder(needs))
    return out


def backward(loss: Tensor):
    """Run the reverse sweep for the tape that recorded ``loss``."""
    if loss._tape is None:
        raise ValueError("loss is not attached to a tape; run the forward pass "
                         "inside a `with Tape() as tape:` block")
    loss._tape.backward(loss)


# ---------------------------------------------------------------------------
# Convolution machinery (im2col fast path)
# ---------------------------------------------------------------------------

def _conv_out_size(size: int, k: int, stride: int, pad: int, dilation: int) -> int:
    eff = dilation * (k - 1) + 1
    return (size + 2 * pad - eff) // stride + 1


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, groups: int):
    """Patch matrix of padded input ``xp``.

    Returns ``cols`` with shape ``(g, n*ho*wo, cg*k*k)`` plus ``(ho, wo)``.
    """
    n, cin, hp, wp = xp.shape
    eff = dilation * (k - 1) + 1
    v = sliding_window_view(xp, (eff, eff), axis=(2, 3))
    v = v[:, :, ::stride, ::stride, ::dilation, ::dilation]
    ho, wo = v.shape[2], v.shape[3]
    cg = cin // groups
    v = v.reshape(n, groups, cg, ho, wo, k, k).transpose(1, 0, 3, 4, 2, 5, 6)
    cols = np.ascontiguousarray(v).reshape(groups, n * ho * wo, cg * k * k)
    return cols, ho, wo


def _corr2d(x: np.ndarray, w: np.ndarray, stride: int, pad: int, dilation: int,
            groups: int, cols=None):
    """Cross-correlate ``x`` with ``w``; the shared fast path for all convs."""
    n = x.shape[0]
    cout, cg, k, _ = w.shape
    if cols is None:
        cols, ho, wo = _im2col(_pad_hw(x, pad), k, stride, dilation, groups)
    else:
        cols, ho, wo = cols
    og = cout // groups
    wmat = w.reshape(groups, og, cg * k * k)
    out = np.matmul(cols, wmat.transpose(0, 2, 1))          # (g, n*ho*wo, og)
    out = out.reshape(groups, n, ho, wo, og).transpose(1, 0, 4, 2, 3)
    return np.ascontiguousarray(out.reshape(n, cout, ho, wo)), (cols, ho, wo)


def _grad_w_from_cols(cols, go: np.ndarray, groups: int, w_shape):
    """d(out)/d(w) given the saved patch matrix and the output gradient."""
    cout, cg, k, _ = w_shape
    n, _, ho, wo = go.shape
    og = cout // groups
    gom = go.reshape(n, groups, og, ho, wo).transpose(1, 0, 3, 4, 2)
    gom = np.ascontiguousarray(gom).reshape(groups, n * ho * wo, og)
    gw = np.matmul(gom.transpose(0, 2, 1), cols)             # (g, og, cg*k*k)
    return gw.reshape(cout, cg, k, k)


def _grad_x_corr(go: np.ndarray, w: np.ndarray, stride: int, pad: int,
                 dilation: int, groups: int, x_hw):
    """Adjoint of `_corr2d` w.r.t. its input (also conv-transpose forward)."""
    n, cout, ho, wo = go.shape
    _, cg, k, _ = w.shape
    h, wdt = x_hw
    eff = dilation * (k - 1) + 1
    hp, wp = h + 2 * pad, wdt + 2 * pad
    # zero-stuff by stride, keeping remainder rows/cols the window never reached
    gu = np.zeros((n, cout, hp - eff + 1, wp - eff + 1), dtype=go.dtype)
    gu[:, :, ::stride, ::stride] = go
    # swap in/out channels within each group and flip taps spatially
    og = cout // groups
    wt = w.reshape(groups, og, cg, k, k).transpose(0, 2, 1, 3, 4)[..., ::-1, ::-1]
    wt = np.ascontiguousarray(wt).reshape(groups * cg, og, k, k)
    gx, _ = _corr2d(gu, wt, 1, eff - 1, dilation, groups)
    if pad:
        gx = np.ascontiguousarray(gx[:, :, pad:pad + h, pad:pad + wdt])
    return gx


def _check_conv_args(stride, pad, dilation):
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if dilation < 1:
        raise ShapeError(f"dilation must be >= 1, got {dilation}")
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D cross-correlation with stride, zero padding, dilation and groups.

    ``w`` has shape ``(c_out, c_in/groups, k, k)``; ``groups == c_in`` gives a
    depthwise convolution.  Output spatial size follows the usual floor rule.
    Differentiable w.r.t. ``x``, ``w`` and ``b``.
    """
    _check_conv_args(stride, pad, dilation)
    n, cin, h, wdt = x.shape
    cout, cg, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"only square kernels supported, got {k}x{k2}")
    if cin % groups != 0:
        raise ShapeError(f"groups={groups} does not divide c_in={cin}")
    if cout % groups != 0:
        raise ShapeError(f"groups={groups} does not divide c_out={cout}")
    if cg != cin // groups:
        raise ShapeError(
            f"kernel dim 1 is {cg}, expected c_in/groups = {cin}//{groups} = {cin // groups}")
    if b is not None and b.shape != (1, cout, 1, 1):
        raise ShapeError(f"bias shape {b.shape} != (1, {cout}, 1, 1)")
    ho = _conv_out_size(h, k, stride, pad, dilation)
    wo = _conv_out_size(wdt, k, stride, pad, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"kernel k={k} dilation={dilation} does not fit input h,w=({h},{wdt}) with pad={pad}")

    out, (cols, _, _) = _corr2d(x.data, w.data, stride, pad, dilation, groups)
    if b is not None:
        out += b.data
    xd, wd = x.data, w.data
    inputs = (x, w) if b is None else (x, w, b)

    def build(needs):
        def bwd(go):
            gx = _grad_x_corr(go, wd, stride, pad, dilation, groups,
                              (h, wdt)) if needs[0] else None
            gw = _grad_w_from_cols(cols, go, groups, wd.shape) if needs[1] else None
            if b is None:
                return gx, gw
            gb = go.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1) if needs[2] else None
            return gx, gw, gb
        return bwd

    return _finish(out, inputs, build)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution: the exact adjoint of `conv2d` w.r.t. its input.

    ``w`` has shape ``(c_in, c_out, k, k)``; the output spatial size is
    ``(h - 1) * stride - 2 * pad + k``.
    """
    _check_conv_args(stride, pad, 1)
    n, cin, h, wdt = x.shape
    cin_w, cout, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"only square kernels supported, got {k}x{k2}")
    if cin_w != cin:
        raise ShapeError(f"kernel dim 0 is {cin_w}, expected c_in={cin}")
    if b is not None and b.shape != (1, cout, 1, 1):
        raise ShapeError(f"bias shape {b.shape} != (1, {cout}, 1, 1)")
    ho = (h - 1) * stride - 2 * pad + k
    wo = (wdt - 1) * stride - 2 * pad + k
    if ho < 1 or wo < 1:
        raise ShapeError(f"output size ({ho},{wo}) is empty; reduce pad or grow input")

    # forward: treat x as the output-gradient of a conv with weight layout
    # (c_in, c_out, k, k) seen from the conv side
    out = _grad_x_corr(x.data, w.data, stride, pad, 1, 1, (ho, wo))
    if b is not None:
        out = out + b.data
    xd, wd = x.data, w.data
    inputs = (x, w) if b is None else (x, w, b)

    def build(needs):
        def bwd(go):
            gx = gw = None
            if needs[0]:
                gx, _ = _corr2d(go, wd, stride, pad, 1, 1)
            if needs[1]:
                cols, _, _ = _im2col(_pad_hw(go, pad), k, stride, 1, 1)
                gw = _grad_w_from_cols(cols, xd, 1, (cin, cout, k, k))
            if b is None:
                return gx, gw
            gb = go.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1) if needs[2] else None
            return gx, gw, gb
        return bwd

    return _finish(out, inputs, build)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1,
                epsilon: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over the ``(n, h, w)`` axes.

    Train mode normalizes with batch statistics and updates the running
    buffers in place (biased variance, exponential moving average with
    ``momentum``); eval mode normalizes with the running buffers.
    ``gamma``/``beta``/buffers all have shape ``(1, c, 1, 1)``.
    """
    if epsilon <= 0:
        raise ShapeError(f"epsilon must be > 0, got {epsilon}")
    c = x.shape[1]
    for name, t in (("gamma", gamma.data), ("beta", beta.data),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (1, c, 1, 1):
            raise ShapeError(f"{name} shape {t.shape} != (1, {c}, 1, 1) for c={c} input")
    xd = x.data
    if training:
        mu = xd.mean(axis=(0, 2, 3), keepdims=True)
        var = xd.var(axis=(0, 2, 3), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(xd.dtype, copy=False)
        var = running_var.astype(xd.dtype, copy=False)
    istd = 1.0 / np.sqrt(var + np.asarray(epsilon, dtype=xd.dtype))
    xhat = (xd - mu) * istd
    out = gamma.data * xhat + beta.data
    nhw = xd.shape[0] * xd.shape[2] * xd.shape[3]
    gd = gamma.data

    def build(needs):
        def bwd(go):
            gx = ggamma = gbeta = None
            if needs[0]:
                if training:
                    dxhat = go * gd
                    m1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
                    m2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                    gx = (dxhat - m1 - xhat * m2) * istd
                else:
                    gx = go * (gd * istd)
            if needs[1]:
                ggamma = (go * xhat).sum(axis=(0, 2, 3), keepdims=True)
            if needs[2]:
                gbeta = go.sum(axis=(0, 2, 3), keepdims=True)
            return gx, ggamma, gbeta
        return bwd

    return _finish(out, (x, gamma, beta), build)


# ---------------------------------------------------------------------------
# Elementwise, pooling, resampling
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    xd = x.data

    def build(needs):
        def bwd(go):
            return (go * (xd > 0),)
        return bwd

    return _finish(out, (x,), build)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # stable in both tails; never exponentiates a large positive argument
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def build(needs):
        def bwd(go):
            return (go * out * (1.0 - out),)
        return bwd

    return _finish(out, (x,), build)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add shapes differ: {x.shape} vs {y.shape}")

    def build(needs):
        def bwd(go):
            return (go.copy() if needs[0] else None,
                    go.copy() if needs[1] else None)
        return bwd

    return _finish(x.data + y.data, (x, y), build)


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"mul shapes differ: {x.shape} vs {y.shape}")
    xd, yd = x.data, y.data

    def build(needs):
        def bwd(go):
            return (go * yd if needs[0] else None,
                    go * xd if needs[1] else None)
        return bwd

    return _finish(xd * yd, (x, y), build)


def concat_channels(tensors) -> Tensor:
    """Stack tensors along the channel axis; ``(n, h, w)`` must match."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = tensors[0].shape
    for i, t in enumerate(tensors[1:], start=1):
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            raise ShapeError(
                f"concat_channels operand {i} has (n,h,w)=({tn},{th},{tw}), "
                f"expected ({n},{h},{w})")
    out = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def build(needs):
        def bwd(go):
            parts = np.split(go, splits, axis=1)
            return tuple(np.ascontiguousarray(p) if need else None
                         for p, need in zip(parts, needs))
        return bwd

    return _finish(out, tuple(tensors), build)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """View ``x[:, start:stop]`` as a new tensor (inverse of concat)."""
    n, c, h, w = x.shape
    if not (0 <= start < stop <= c):
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for c={c}")
    out = np.ascontiguousarray(x.data[:, start:stop])

    def build(needs):
        def bwd(go):
            gx = np.zeros((n, c, h, w), dtype=go.dtype)
            gx[:, start:stop] = go
            return (gx,)
        return bwd

    return _finish(out, (x,), build)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if kernel < 1 or stride < 1:
        raise ShapeError(f"kernel/stride must be >= 1, got {kernel}/{stride}")
    if h < kernel or w < kernel:
        raise ShapeError(f"pool kernel {kernel} exceeds input h,w=({h},{w})")
    v = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))
    v = v[:, :, ::stride, ::stride]
    ho, wo = v.shape[2], v.shape[3]
    flat = v.reshape(n, c, ho, wo, kernel * kernel)
    amax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, amax[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out)

    def build(needs):
        def bwd(go):
            gx = np.zeros((n, c, h, w), dtype=go.dtype)
            nn, cc, hh, ww = np.indices((n, c, ho, wo), sparse=False)
            hi = hh * stride + amax // kernel
            wi = ww * stride + amax % kernel
            np.add.at(gx, (nn, cc, hi, wi), go)
            return (gx,)
        return bwd

    return _finish(out, (x,), build)


_UPSAMPLE_CACHE: dict = {}


def _upsample_matrix(size: int, dtype) -> np.ndarray:
    """1-D 2x bilinear interpolation matrix (2*size x size), edge-clamped."""
    key = (size, np.dtype(dtype).str)
    m = _UPSAMPLE_CACHE.get(key)
    if m is None:
        m = np.zeros((2 * size, size), dtype=dtype)
        for i in range(2 * size):
            src = (i + 0.5) / 2.0 - 0.5
            lo = int(np.floor(src))
            frac = src - lo
            lo_c = min(max(lo, 0), size - 1)
            hi_c = min(max(lo + 1, 0), size - 1)
            m[i, lo_c] += 1.0 - frac
            m[i, hi_c] += frac
        _UPSAMPLE_CACHE[key] = m
    return m


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double both spatial dims by separable bilinear interpolation."""
    n, c, h, w = x.shape
    uh = _upsample_matrix(h, x.dtype)
    uw = _upsample_matrix(w, x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def build(needs):
        def bwd(go):
            return (np.matmul(np.matmul(uh.T, go), uw),)
        return bwd

    return _finish(out, (x,), build)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes, keeping ``(n, c, 1, 1)``."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def build(needs):
        def bwd(go):
            return (np.broadcast_to(go / (h * w), (n, c, h, w)).copy(),)
        return bwd

    return _finish(out, (x,), build)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection ``sum(x * weights)`` with constant weights.

    Handy for reducing any output to a scalar in gradient checks and tests.
    """
    wgt = np.asarray(weights, dtype=x.dtype)
    if wgt.shape != x.shape:
        raise ShapeError(f"weights shape {wgt.shape} != tensor shape {x.shape}")
    out = np.array(np.sum(x.data * wgt)).reshape(1, 1, 1, 1)

    def build(needs):
        def bwd(go):
            return (go.reshape(()) * wgt,)
        return bwd

    return _finish(out, (x,), build)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def bce_loss(logits: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy evaluated from logits.

    Uses the log-sum-exp form ``max(z,0) - z*t + log1p(exp(-|z|))`` so no
    probability is ever clamped or logged directly.  ``target`` must contain
    only 0 and 1.
    """
    if logits.shape != target.shape:
        raise ShapeError(f"logits shape {logits.shape} != target shape {target.shape}")
    t = target.data
    if not np.all((t == 0) | (t == 1)):
        bad = t[(t != 0) & (t != 1)].reshape(-1)[0]
        raise ValueError(f"bce_loss target must be binary; found value {bad!r}")
    z = logits.data
    per_pixel = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.array(per_pixel.mean()).reshape(1, 1, 1, 1)
    npix = z.size

    def build(needs):
        def bwd(go):
            g = go.reshape(()) * (_sigmoid(z) - t) / npix
            return (g, None)
        return bwd

    return _finish(out, (logits, target), build)
