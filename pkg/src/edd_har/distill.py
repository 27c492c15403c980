"""Ensemble distribution distillation into a Dirichlet prior network.

The training loop anneals a shared temperature for model and targets and
grows the maximum depth of weighted-combination samples as epochs advance.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as F
from .data import UnlabeledDataset
from .models import ArchConfig, Network, build_classifier, dirichlet_alpha, logits, transfer_base
from .numerics import Adam, Tape, Tensor, backward
from .numerics.special import lgamma
from .rng import as_int, split
from .training import TrainingDiverged, ensemble_predict
from .transforms import TransformParams, augment_with_transforms

log = logging.getLogger(__name__)

TARGET_FLOOR = 1e-6


@dataclass(frozen=True)
class AnnealSchedule:
    t0: float = 10.0
    rate: float = 0.25
    t_max: float = 10.0

    def __post_init__(self):
        if self.t0 < 1 or self.rate < 0 or self.t_max < 1:
            raise ValueError(f"invalid anneal schedule {self}")


@dataclass(frozen=True)
class ComboConfig:
    weight: float = 0.5
    max_combos: int = 4
    rate: float = 0.05

    def __post_init__(self):
        if not 0 < self.weight <= 1:
            raise ValueError(f"combo weight must be in (0, 1], got {self.weight}")
        if self.max_combos < 1 or self.rate < 0:
            raise ValueError(f"invalid combo config {self}")


def temperature_at(schedule: AnnealSchedule, epoch: int) -> float:
    """t0 - rate * epoch, clamped to [1, t_max]."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return float(min(max(schedule.t0 - schedule.rate * epoch, 1.0), schedule.t_max))


def combo_depth_at(combos: ComboConfig, epoch: int) -> int:
    """floor(rate * epoch), capped at max_combos."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    # tolerance guards products like 0.29 * 100 = 28.999999999999996
    return int(min(math.floor(combos.rate * epoch + 1e-9), combos.max_combos))


def weighted_combo(samples, r: float) -> np.ndarray:
    """sum_i r^i x_i / sum_i r^i over the leading axis of ``samples``."""
    xs = [np.asarray(s, dtype=np.float64) for s in samples]
    if not xs:
        raise ValueError("weighted_combo needs at least one sample")
    shape = xs[0].shape
    for s in xs[1:]:
        if s.shape != shape:
            raise F.ShapeError("weighted_combo", shape, s.shape)
    w = r ** np.arange(len(xs), dtype=np.float64)
    acc = np.zeros(shape)
    for wi, x in zip(w, xs):
        acc = acc + wi * x
    return acc / w.sum()


def temper(probs: np.ndarray, t: float) -> np.ndarray:
    """p^(1/t), renormalised along the class axis. Identity at t = 1."""
    probs = np.asarray(probs, dtype=np.float64)
    if t == 1.0:
        return probs.copy()
    with np.errstate(divide="ignore"):
        z = np.log(probs) / t
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def floor_probs(probs: np.ndarray, floor: float = TARGET_FLOOR) -> np.ndarray:
    p = np.maximum(probs, floor)
    return p / p.sum(axis=-1, keepdims=True)


def dirichlet_log_density(alpha: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """ln Dir(pi; alpha) = lnG(S) - sum lnG(alpha_i) + sum (alpha_i - 1) ln pi_i."""
    alpha = np.asarray(alpha, dtype=np.float64)
    s = alpha.sum(axis=-1)
    return lgamma(s) - lgamma(alpha).sum(axis=-1) + ((alpha - 1.0) * np.log(pi)).sum(axis=-1)


def dirichlet_nll(alpha: Tensor, targets: np.ndarray, t: float = 1.0) -> Tensor:
    """Mean over samples and members of -ln Dir(pi_m; alpha).

    ``alpha`` is (B, K); ``targets`` is (B, M, K) member distributions, tempered
    at ``t`` and floored before taking logs.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 3 or targets.shape[0] != alpha.shape[0] or targets.shape[2] != alpha.shape[1]:
        raise F.ShapeError("dirichlet_nll", alpha.shape, targets.shape)
    mean_log_pi = np.log(floor_probs(temper(targets, t))).mean(axis=1)
    s = F.tsum(alpha, axis=1)
    ll = F.sub(F.lgamma_t(s), F.tsum(F.lgamma_t(alpha), axis=1))
    ll = F.add(ll, F.tsum(F.mul(F.sub(alpha, 1.0), Tensor(mean_log_pi)), axis=1))
    bad = ~np.isfinite(ll.data)
    if np.any(bad):
        raise FloatingPointError(f"dirichlet_nll: non-finite log density at sample {int(np.argmax(bad))}")
    return F.neg(F.mean(ll))


@dataclass
class DistillConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    steps_per_epoch: int = 0          # 0: one shuffled pass over the augmented set
    n_frozen: int = 0
    use_pretrained: bool = True
    use_transforms: bool = True
    use_combos: bool = True
    width: float = 1.0
    seed: int = 0


def build_augmented(d_u: UnlabeledDataset, seed, use_transforms: bool = True,
                    params: TransformParams = TransformParams()) -> np.ndarray:
    """Every unlabeled window plus, optionally, each of its transformed versions."""
    if not use_transforms:
        return d_u.windows.copy()
    return augment_with_transforms(d_u.windows, as_int(seed), params=params)


def _combo_batch(pool: np.ndarray, idx: np.ndarray, depth: int, r: float,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Replace each pool[idx[j]] by its combo with n ~ U{0..depth} extra draws.

    Returns the batch and a mask of rows that received at least one extra sample.
    """
    x = pool[idx].copy()
    mixed = np.zeros(len(idx), dtype=bool)
    if depth == 0:
        return x, mixed
    counts = rng.integers(0, depth + 1, size=len(idx))
    for j, n in enumerate(counts):
        if n == 0:
            continue
        extra = pool[rng.integers(0, len(pool), size=n)]
        x[j] = weighted_combo([x[j], *extra], r)
        mixed[j] = True
    return x, mixed


class _EpochLog:
    FIELDS = ("epoch", "temperature", "combo_depth", "mean_nll")

    def __init__(self, path: Path | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.FIELDS)

    def append(self, row: dict) -> None:
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([row[k] for k in self.FIELDS])


def distill(members: list[Network], d_u: UnlabeledDataset, pretrained: Network | None,
            schedule: AnnealSchedule, combos: ComboConfig, cfg: DistillConfig,
            arch: ArchConfig | None = None, tparams: TransformParams = TransformParams(),
            log_path=None) -> tuple[Network, dict]:
    """Train a Dirichlet prior network on the (frozen) ensemble's member distributions."""
    if not members:
        raise ValueError("cannot distill an empty ensemble")
    ss = split(cfg.seed, 4)
    pool = build_augmented(d_u, ss[0], cfg.use_transforms, tparams)
    cached = ensemble_predict(members, pool)
    _, c, length = pool.shape
    k = members[0].num_outputs
    if arch is None:
        arch = pretrained.arch if pretrained is not None else members[0].arch
    net = build_classifier(c, length, k, cfg.width, ss[1], arch)
    if cfg.use_pretrained and pretrained is not None:
        transfer_base(pretrained, net, cfg.n_frozen)

    opt = Adam(net.trainable(), lr=cfg.lr)
    rng = np.random.default_rng(ss[2])
    drop_rng = np.random.default_rng(ss[3])
    history = {"epoch": [], "temperature": [], "combo_depth": [], "mean_nll": [], "mixed_fraction": []}
    elog = _EpochLog(log_path)
    steps = cfg.steps_per_epoch or math.ceil(len(pool) / cfg.batch_size)
    for epoch in range(cfg.epochs):
        t = temperature_at(schedule, epoch)
        depth = combo_depth_at(combos, epoch) if cfg.use_combos else 0
        order = rng.permutation(len(pool))
        total, seen, mixed_count = 0.0, 0, 0
        for step in range(steps):
            start = (step * cfg.batch_size) % len(pool)
            idx = order[start:start + cfg.batch_size]
            x, mixed = _combo_batch(pool, idx, depth, combos.weight, rng)
            targets = cached[idx].copy()
            if mixed.any():
                targets[mixed] = ensemble_predict(members, x[mixed])
            try:
                with Tape() as tape:
                    alpha = dirichlet_alpha(logits(net, x, True, drop_rng), t)
                    loss = dirichlet_nll(alpha, targets, t)
            except FloatingPointError as err:
                raise TrainingDiverged(f"distillation diverged at epoch {epoch}: {err}", epoch) from err
            backward(tape, loss)
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(idx)
            seen += len(idx)
            mixed_count += int(mixed.sum())
        row = {"epoch": epoch, "temperature": t, "combo_depth": depth,
               "mean_nll": total / seen}
        elog.append(row)
        for key, value in row.items():
            history[key].append(value)
        history["mixed_fraction"].append(mixed_count / seen)
        log.info("distill epoch %d: t=%.2f depth=%d nll=%.4f", epoch, t, depth, total / seen)
    history["augmented_size"] = len(pool)
    return net, history
