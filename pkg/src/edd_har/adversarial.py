"""Fast gradient sign perturbations against a model's own point prediction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as F
from .data import LabeledDataset
from .numerics import Tape, Tensor, backward


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float = 0.1
    batch_size: int = 256

    def __post_init__(self):
        if not (self.epsilon >= 0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be a finite value >= 0, got {self.epsilon}")


def input_gradient(model, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d/dx of the summed cross-entropy of ``model.log_point`` against labels ``y``.

    Summing (rather than averaging) keeps each row's gradient equal to that
    sample's own loss gradient.
    """
    xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    k = None
    with Tape() as tape:
        lp = model.log_point(xt)
        k = lp.shape[1]
        if np.any((y < 0) | (y >= k)):
            raise ValueError(f"labels must lie in [0, {k})")
        loss = F.neg(F.tsum(F.mul(lp, Tensor(np.eye(k)[y]))))
    backward(tape, loss)
    for p in model.parameters():
        p.grad = None
    g = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("FGSM: non-finite input gradient")
    return g


def fgsm(model, x: np.ndarray, y, cfg: FgsmConfig) -> np.ndarray:
    """x + eps * sign(grad_x CE). Works on one (C, T) window or an (N, C, T) batch."""
    x = np.asarray(x, dtype=np.float64)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if cfg.epsilon == 0:
        return x.copy()
    single = x.ndim == 2
    xb = x[None] if single else x
    if len(y) != len(xb):
        raise ValueError(f"{len(y)} labels for {len(xb)} windows")
    out = np.empty_like(xb)
    for i in range(0, len(xb), cfg.batch_size):
        sl = slice(i, i + cfg.batch_size)
        out[sl] = xb[sl] + cfg.epsilon * np.sign(input_gradient(model, xb[sl], y[sl]))
    return out[0] if single else out


def perturb_dataset(model, d: LabeledDataset, cfg: FgsmConfig) -> LabeledDataset:
    """White-box FGSM copy of ``d`` against ``model``; labels and metadata unchanged."""
    return LabeledDataset(fgsm(model, d.windows, d.labels, cfg), d.labels.copy(), d.class_names,
                          None if d.participants is None else d.participants.copy(), d.sample_rate)
