"""Entropy-based total / aleatoric / epistemic uncertainty, in nats."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.special import digamma


@dataclass(frozen=True)
class UncertaintyTriple:
    total: np.ndarray
    aleatoric: np.ndarray

    @property
    def epistemic(self) -> np.ndarray:
        # defined as the difference, so additivity holds exactly
        return self.total - self.aleatoric

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"total": self.total, "aleatoric": self.aleatoric, "epistemic": self.epistemic}


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shannon entropy with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=axis)


def _check_distributions(p: np.ndarray, tol: float = 1e-6) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    bad = np.abs(p.sum(axis=-1) - 1.0) > tol
    if np.any(bad):
        raise ValueError(f"{int(bad.sum())} distribution(s) do not sum to 1")


def ensemble_uncertainty(probs: np.ndarray) -> UncertaintyTriple:
    """``probs`` is (N, M, K) or (M, K): M member distributions per sample.

    total = entropy of the member mean, aleatoric = mean member entropy,
    epistemic = their difference (the mutual information).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim < 2 or probs.shape[-2] < 1:
        raise ValueError(f"expected (..., M, K) member distributions, got {probs.shape}")
    _check_distributions(probs)
    total = entropy(probs.mean(axis=-2))
    aleatoric = entropy(probs).mean(axis=-1)
    return UncertaintyTriple(total, aleatoric)


def dirichlet_uncertainty(alpha: np.ndarray, printed_form: bool = False) -> UncertaintyTriple:
    """Closed-form decomposition for a Dirichlet over the class simplex.

    Aleatoric is the expected categorical entropy,
    -sum_i mu_i (psi(alpha_i + 1) - psi(S + 1)).
    ``printed_form=True`` drops the +1 shifts instead; that variant can exceed
    the total (e.g. alpha = (1, 1) gives 1 > ln 2) and is kept only for
    side-by-side comparison.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(~(alpha > 0)):
        raise ValueError("Dirichlet concentrations must be > 0")
    s = alpha.sum(axis=-1, keepdims=True)
    mu = alpha / s
    total = entropy(mu)
    shift = 0.0 if printed_form else 1.0
    aleatoric = -np.sum(mu * (digamma(alpha + shift) - digamma(s + shift)), axis=-1)
    return UncertaintyTriple(total, aleatoric)


def total_uncertainty_score(output: np.ndarray, kind: str) -> np.ndarray:
    """Per-sample total uncertainty used for ranking.

    kind: ``"single"`` -> (N, K) probabilities; ``"ensemble"`` -> (N, M, K);
    ``"dirichlet"`` -> (N, K) concentrations.
    """
    if kind == "single":
        return entropy(output)
    if kind == "ensemble":
        return ensemble_uncertainty(output).total
    if kind == "dirichlet":
        return dirichlet_uncertainty(output).total
    raise ValueError(f"unknown model kind {kind!r}")
