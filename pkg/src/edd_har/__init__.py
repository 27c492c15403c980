"""Uncertainty-aware activity recognition: self-supervised ensembles distilled into a Dirichlet prior network."""

__version__ = "0.1.0"
