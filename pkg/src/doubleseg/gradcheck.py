"""Central finite-difference verification of every differentiable primitive.

Each registered case builds random small inputs, runs the primitive under a
tape to get analytic gradients, then sweeps every differentiable input
element with a central difference of the same scalar projection.  Checks run
in float64 by default; float32 finite differences are too noisy for the
tolerances used here.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-5


def _leaf(rng, shape, dtype, scale=1.0):
    return T.Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=dtype)


def _distinct_leaf(rng, shape, dtype, gap=0.05):
    # entries with a guaranteed minimum gap, so pooling argmaxes cannot flip
    # inside the finite-difference step
    size = int(np.prod(shape))
    vals = (rng.permutation(size).astype(np.float64) - size / 2.0) * gap
    return T.Tensor(vals.reshape(shape), requires_grad=True, dtype=dtype)


def _case_conv2d(rng, dtype):
    groups = int(rng.choice([1, 1, 2]))
    cg = int(rng.integers(1, 3))
    cin = groups * cg
    cout = groups * int(rng.integers(1, 3))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    dilation = int(rng.integers(1, 3)) if k > 1 else 1
    pad = int(rng.integers(0, 2))
    eff = dilation * (k - 1) + 1
    h = int(rng.integers(eff, 8))
    w = int(rng.integers(eff, 8))
    n = int(rng.integers(1, 3))
    x = _leaf(rng, (n, cin, h, w), dtype)
    wt = _leaf(rng, (cout, cg, k, k), dtype)
    b = _leaf(rng, (1, cout, 1, 1), dtype)

    def fwd(x, wt, b):
        return T.conv2d(x, wt, b, stride=stride, pad=pad, dilation=dilation,
                        groups=groups)

    return [x, wt, b], [True, True, True], fwd


def _case_conv_transpose2d(rng, dtype):
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, k))
    h = int(rng.integers(2, 7))
    w = int(rng.integers(2, 7))
    if (h - 1) * stride - 2 * pad + k < 1 or (w - 1) * stride - 2 * pad + k < 1:
        pad = 0
    n = int(rng.integers(1, 3))
    x = _leaf(rng, (n, cin, h, w), dtype)
    wt = _leaf(rng, (cin, cout, k, k), dtype)
    b = _leaf(rng, (1, cout, 1, 1), dtype)

    def fwd(x, wt, b):
        return T.conv_transpose2d(x, wt, b, stride=stride, pad=pad)

    return [x, wt, b], [True, True, True], fwd


def _bn_inputs(rng, dtype):
    n, c = int(rng.integers(2, 3)), int(rng.integers(1, 4))
    h, w = int(rng.integers(2, 8)), int(rng.integers(2, 8))
    x = _leaf(rng, (n, c, h, w), dtype)
    gamma = T.Tensor(rng.uniform(0.5, 1.5, (1, c, 1, 1)), requires_grad=True, dtype=dtype)
    beta = _leaf(rng, (1, c, 1, 1), dtype)
    rmean = rng.standard_normal((1, c, 1, 1)).astype(dtype) * 0.1
    rvar = rng.uniform(0.5, 1.5, (1, c, 1, 1)).astype(dtype)
    return x, gamma, beta, rmean, rvar


def _case_batchnorm_train(rng, dtype):
    x, gamma, beta, rmean, rvar = _bn_inputs(rng, dtype)

    def fwd(x, gamma, beta):
        return T.batchnorm2d(x, gamma, beta, rmean, rvar, training=True)

    return [x, gamma, beta], [True, True, True], fwd


def _case_batchnorm_eval(rng, dtype):
    x, gamma, beta, rmean, rvar = _bn_inputs(rng, dtype)

    def fwd(x, gamma, beta):
        return T.batchnorm2d(x, gamma, beta, rmean, rvar, training=False)

    return [x, gamma, beta], [True, True, True], fwd


def _case_relu(rng, dtype):
    shape = (2, int(rng.integers(1, 5)), int(rng.integers(1, 8)), int(rng.integers(1, 8)))
    x = _leaf(rng, shape, dtype)
    x.data[np.abs(x.data) < 0.1] += 0.2  # stay clear of the kink
    return [x], [True], T.relu


def _case_sigmoid(rng, dtype):
    shape = (2, int(rng.integers(1, 5)), int(rng.integers(1, 8)), int(rng.integers(1, 8)))
    return [_leaf(rng, shape, dtype, scale=2.0)], [True], T.sigmoid


def _case_maxpool2d(rng, dtype):
    kernel = int(rng.integers(2, 4))
    stride = int(rng.integers(1, 3))
    h = int(rng.integers(kernel, 8))
    w = int(rng.integers(kernel, 8))
    x = _distinct_leaf(rng, (2, int(rng.integers(1, 4)), h, w), dtype)

    def fwd(x):
        return T.maxpool2d(x, kernel=kernel, stride=stride)

    return [x], [True], fwd


def _case_bilinear_upsample2x(rng, dtype):
    shape = (2, int(rng.integers(1, 4)), int(rng.integers(1, 8)), int(rng.integers(1, 8)))
    return [_leaf(rng, shape, dtype)], [True], T.bilinear_upsample2x


def _case_concat_channels(rng, dtype):
    n, h, w = 2, int(rng.integers(1, 7)), int(rng.integers(1, 7))
    parts = [_leaf(rng, (n, int(rng.integers(1, 4)), h, w), dtype) for _ in range(3)]

    def fwd(a, b, c):
        return T.concat_channels([a, b, c])

    return parts, [True, True, True], fwd


def _case_add(rng, dtype):
    shape = (2, int(rng.integers(1, 5)), int(rng.integers(1, 8)), int(rng.integers(1, 8)))
    return [_leaf(rng, shape, dtype), _leaf(rng, shape, dtype)], [True, True], T.add


def _case_mul(rng, dtype):
    shape = (2, int(rng.integers(1, 5)), int(rng.integers(1, 8)), int(rng.integers(1, 8)))
    return [_leaf(rng, shape, dtype), _leaf(rng, shape, dtype)], [True, True], T.mul


def _case_slice_channels(rng, dtype):
    c = int(rng.integers(2, 6))
    start = int(rng.integers(0, c - 1))
    stop = int(rng.integers(start + 1, c + 1))
    x = _leaf(rng, (2, c, int(rng.integers(1, 7)), int(rng.integers(1, 7))), dtype)

    def fwd(x):
        return T.slice_channels(x, start, stop)

    return [x], [True], fwd


def _case_global_avg_pool(rng, dtype):
    shape = (2, int(rng.integers(1, 5)), int(rng.integers(2, 8)), int(rng.integers(2, 8)))
    return [_leaf(rng, shape, dtype)], [True], T.global_avg_pool


def _case_bce_loss(rng, dtype):
    shape = (2, 1, int(rng.integers(2, 8)), int(rng.integers(2, 8)))
    logits = _leaf(rng, shape, dtype, scale=2.0)
    target = T.Tensor(rng.integers(0, 2, shape).astype(np.float64), dtype=dtype)

    def fwd(logits):
        return T.bce_loss(logits, target)

    return [logits], [True], fwd


REGISTRY = {
    "conv2d": _case_conv2d,
    "conv_transpose2d": _case_conv_transpose2d,
    "batchnorm2d_train": _case_batchnorm_train,
    "batchnorm2d_eval": _case_batchnorm_eval,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "maxpool2d": _case_maxpool2d,
    "bilinear_upsample2x": _case_bilinear_upsample2x,
    "concat_channels": _case_concat_channels,
    "add": _case_add,
    "mul": _case_mul,
    "slice_channels": _case_slice_channels,
    "global_avg_pool": _case_global_avg_pool,
    "bce_loss": _case_bce_loss,
}


def check_case(inputs, diff_flags, fwd, step=DEFAULT_STEP, corrupt=False) -> float:
    """Max relative error between analytic and central-difference gradients."""
    with T.Tape() as tape:
        out = fwd(*inputs)
        rng_proj = np.random.default_rng(0)
        proj = rng_proj.standard_normal(out.shape).astype(out.dtype)
        loss = T.weighted_sum(out, proj)
    tape.backward(loss)

    def loss_value():
        o = fwd(*inputs)
        return float(np.sum(o.data * proj))

    worst = 0.0
    for pos, (inp, diff) in enumerate(zip(inputs, diff_flags)):
        if not diff:
            continue
        analytic = inp.grad.copy()
        if corrupt and pos == 0:
            analytic = analytic * 1.01 + 1e-3
        fd = np.zeros_like(inp.data)
        flat = inp.data.reshape(-1)
        fd_flat = fd.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp = loss_value()
            flat[j] = orig - step
            lm = loss_value()
            flat[j] = orig
            fd_flat[j] = (lp - lm) / (2.0 * step)
        denom = max(1.0, float(np.abs(analytic).max()), float(np.abs(fd).max()))
        err = float(np.abs(analytic - fd).max()) / denom
        worst = max(worst, err)
    return worst


def check_op(name: str, shapes: int = 5, seed: int = 0, dtype=np.float64,
             step: float = DEFAULT_STEP, corrupt: bool = False) -> float:
    """Run ``shapes`` random instances of one primitive; return worst error."""
    builder = REGISTRY[name]
    rng = np.random.default_rng((seed, hash(name) & 0xFFFF))
    worst = 0.0
    for _ in range(shapes):
        inputs, flags, fwd = builder(rng, dtype)
        worst = max(worst, check_case(inputs, flags, fwd, step=step, corrupt=corrupt))
    return worst


def run_all(ops=None, shapes: int = 5, seed: int = 0, dtype=np.float64,
            step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL,
            corrupt: bool = False, report=print) -> dict:
    """Check every (or the named) primitive; returns ``{op: max_rel_err}``."""
    names = list(REGISTRY) if ops is None else list(ops)
    results = {}
    for name in names:
        err = check_op(name, shapes=shapes, seed=seed, dtype=dtype, step=step,
                       corrupt=corrupt)
        results[name] = err
        status = "PASS" if err < tol else "FAIL"
        report(f"{name:<22s} max_rel_err={err:.3e}  {status}")
    return results
