"""Central finite-difference oracle shared by the gradient tests."""
from __future__ import annotations

import numpy as np

from edd_har import numerics as F
from edd_har.numerics import Tape, Tensor, backward, mul, tsum

STEP = 1e-5


def _projected_loss(fn, arrays, proj):
    out = fn(*[Tensor(a) for a in arrays])
    return float(np.sum(out.data * proj))


def gradcheck(fn, arrays, rng, step: float = STEP) -> float:
    """Worst |analytic - fd| / max(1, |fd|) over every input element.

    The scalar loss is sum(fn(*inputs) * P) for a fixed random projection P,
    which exercises the full Jacobian rather than a single output.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
        proj = rng.standard_normal(out.shape)
        loss = tsum(mul(out, Tensor(proj)))
    backward(tape, loss)
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = leaves[k].grad if leaves[k].grad is not None else np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += step
            minus[k][idx] -= step
            fd = (_projected_loss(fn, plus, proj) - _projected_loss(fn, minus, proj)) / (2 * step)
            err = abs(analytic[idx] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst


def _positive(rng, shape):
    return rng.uniform(0.5, 3.0, size=shape)


def _away_from_zero(rng, shape):
    # keeps relu / clip kinks out of the finite-difference stencil
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 0.05, 0.1 * np.sign(x) + x, x)


def _distinct_max(rng, shape):
    # unique maxima so max-pool is differentiable at the sample point
    x = rng.standard_normal(shape)
    return x + np.arange(shape[-1]) * 1e-3 * rng.permutation(shape[-1])


def _dropout_fn():
    rate = 0.3

    def fn(x):
        return F.dropout(x, rate, np.random.default_rng(7), training=True)

    return fn

# name -> (callable over Tensors, input generator(rng) -> list of arrays)
PRIMITIVE_CASES = {
    "add": (F.add, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4,))]),
    "sub": (F.sub, lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 1))]),
    "mul": (F.mul, lambda r: [r.standard_normal((2, 3)), r.standard_normal((2, 3))]),
    "div": (F.div, lambda r: [r.standard_normal((2, 3)), _positive(r, (2, 3))]),
    "neg": (F.neg, lambda r: [r.standard_normal((5,))]),
    "scale": (lambda x: F.scale(x, -1.7), lambda r: [r.standard_normal((2, 3))]),
    "exp": (F.exp, lambda r: [r.standard_normal((2, 3))]),
    "log": (F.log, lambda r: [_positive(r, (2, 3))]),
    "relu": (F.relu, lambda r: [_away_from_zero(r, (3, 4))]),
    "sigmoid": (F.sigmoid, lambda r: [3 * r.standard_normal((3, 4))]),
    "softplus": (F.softplus, lambda r: [3 * r.standard_normal((3, 4))]),
    "clip": (lambda x: F.clip(x, -0.5, 0.5), lambda r: [_away_from_zero(r, (3, 4)) * 0.8 + 0.02]),
    "lgamma": (F.lgamma_t, lambda r: [_positive(r, (2, 3))]),
    "sum": (lambda x: F.tsum(x, axis=1), lambda r: [r.standard_normal((3, 4))]),
    "mean": (lambda x: F.mean(x, axis=0, keepdims=True), lambda r: [r.standard_normal((3, 4))]),
    "reshape": (lambda x: F.reshape(x, (6, 2)), lambda r: [r.standard_normal((3, 4))]),
    "getitem": (lambda x: x[np.array([0, 2, 2])], lambda r: [r.standard_normal((3, 4))]),
    "concat": (lambda a, b: F.concat([a, b], axis=1),
               lambda r: [r.standard_normal((2, 3)), r.standard_normal((2, 2))]),
    "linear": (F.linear, lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2)),
                                    r.standard_normal((2,))]),
    "conv1d": (F.conv1d, lambda r: [r.standard_normal((2, 3, 9)), r.standard_normal((4, 3, 3)),
                                    r.standard_normal((4,))]),
    "conv1d_stride2": (lambda x, w, b: F.conv1d(x, w, b, stride=2),
                       lambda r: [r.standard_normal((2, 2, 10)), r.standard_normal((3, 2, 4)),
                                  r.standard_normal((3,))]),
    "global_max_pool": (F.global_max_pool, lambda r: [_distinct_max(r, (2, 3, 6))]),
    "dropout": (_dropout_fn(), lambda r: [r.standard_normal((4, 5))]),
    "softmax_T1": (F.softmax, lambda r: [r.standard_normal((3, 4))]),
    "softmax_T3": (lambda x: F.softmax(x, temperature=3.0), lambda r: [r.standard_normal((3, 4))]),
    "log_softmax": (lambda x: F.log_softmax(x, temperature=2.0),
                    lambda r: [r.standard_normal((3, 4))]),
}
