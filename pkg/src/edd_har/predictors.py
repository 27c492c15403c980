"""Uniform wrappers over the three evaluated model kinds.

Each predictor exposes a differentiable log point prediction (used by the
attack) and a raw inference output that the uncertainty functions consume.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as F
from .models import _LOG_ALPHA_MAX, _LOG_ALPHA_MIN, Network, forward_dirichlet, logits
from .numerics import Tensor
from .training import ensemble_predict
from .uncertainty import UncertaintyTriple, dirichlet_uncertainty, ensemble_uncertainty, entropy


def _batched(fn, x: np.ndarray, batch_size: int) -> np.ndarray:
    return np.concatenate([fn(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


@dataclass
class SinglePredictor:
    net: Network
    kind: str = "single"

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def log_point(self, x: Tensor) -> Tensor:
        return F.log_softmax(logits(self.net, x))

    def output(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """(N, K) class probabilities."""
        return _batched(lambda b: F.softmax(logits(self.net, b)).data, x, batch_size)

    def point(self, out: np.ndarray) -> np.ndarray:
        return out

    def uncertainty(self, out: np.ndarray) -> UncertaintyTriple:
        # one model has no disagreement term: everything is aleatoric
        h = entropy(out)
        return UncertaintyTriple(h, h.copy())


@dataclass
class EnsemblePredictor:
    members: list[Network]
    kind: str = "ensemble"

    def parameters(self) -> list[Tensor]:
        return [p for m in self.members for p in m.parameters()]

    def log_point(self, x: Tensor) -> Tensor:
        """log of the member-mean distribution; differentiates through all members."""
        probs = [F.softmax(logits(m, x)) for m in self.members]
        total = probs[0]
        for p in probs[1:]:
            total = F.add(total, p)
        return F.log(F.scale(total, 1.0 / len(self.members)))

    def output(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """(N, M, K) member distributions."""
        return ensemble_predict(self.members, x, batch_size)

    def point(self, out: np.ndarray) -> np.ndarray:
        return out.mean(axis=1)

    def uncertainty(self, out: np.ndarray) -> UncertaintyTriple:
        return ensemble_uncertainty(out)


@dataclass
class DirichletPredictor:
    net: Network
    kind: str = "dirichlet"

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def log_point(self, x: Tensor) -> Tensor:
        # log mu = log_softmax of the clamped log-concentrations at T = 1
        return F.log_softmax(F.clip(logits(self.net, x), _LOG_ALPHA_MIN, _LOG_ALPHA_MAX))

    def output(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """(N, K) concentrations at temperature 1."""
        return _batched(lambda b: forward_dirichlet(self.net, b), x, batch_size)

    def point(self, out: np.ndarray) -> np.ndarray:
        return out / out.sum(axis=1, keepdims=True)

    def uncertainty(self, out: np.ndarray) -> UncertaintyTriple:
        return dirichlet_uncertainty(out)


Predictor = SinglePredictor | EnsemblePredictor | DirichletPredictor
