from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


class Adam:
    """Adaptive-moment optimizer over a fixed parameter list.

    Parameters flagged ``frozen`` are never written, whatever their gradient.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        self.state.m = [np.zeros_like(p.data) for p in self.params]
        self.state.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        st = self.state
        active = [i for i, p in enumerate(self.params) if not p.frozen]
        for i in active:
            if self.params[i].grad is None:
                name = self.params[i].name or f"#{i}"
                raise ValueError(f"optimizer_step: parameter {name} has no gradient")
        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        for i in active:
            p = self.params[i]
            g = p.grad
            st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g
            st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g
            p.data = p.data - st.lr * (st.m[i] / bc1) / (np.sqrt(st.v[i] / bc2) + st.eps)


def optimizer_step(opt: Adam, params: Sequence[Tensor] | None = None) -> None:
    """Functional wrapper: one Adam update followed by clearing the gradients."""
    if params is not None and [id(p) for p in params] != [id(p) for p in opt.params]:
        raise ValueError("optimizer_step: parameter list does not match optimizer state")
    opt.step()
    opt.zero_grad()
