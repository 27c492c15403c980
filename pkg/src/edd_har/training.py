"""Pretext training, supervised fine-tuning and ensemble construction."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as F
from .data import LabeledDataset, UnlabeledDataset
from .models import (
    ArchConfig,
    Network,
    build_classifier,
    build_pretext,
    forward_classifier,
    logits,
    pretext_logits,
    transfer_base,
)
from .numerics import Adam, Tape, Tensor, backward
from .rng import as_int, split
from .transforms import ALL_KINDS, PretextDataset, TransformParams, build_pretext_dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, member: int | None = None):
        self.epoch = epoch
        self.member = member
        super().__init__(message)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    patience: int = 5
    per_class: int = 50
    holdout: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.patience < 1:
            raise ValueError(f"invalid training config: {self}")


@dataclass
class EnsembleConfig:
    members: int = 5
    width_low: float = 0.75
    width_high: float = 1.25
    seed: int = 0
    seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.members < 1:
            raise ValueError("ensemble needs at least one member")
        if not self.seeds:
            ss = np.random.SeedSequence(self.seed)
            self.seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(self.members)]
        if len(self.seeds) != self.members or len(set(self.seeds)) != self.members:
            raise ValueError("member seeds must be distinct, one per member")

    def widths(self) -> list[float]:
        return [float(np.random.default_rng(s).uniform(self.width_low, self.width_high))
                for s in self.seeds]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _check_finite(loss: Tensor, epoch: int, what: str) -> None:
    if not np.isfinite(loss.data).all():
        raise TrainingDiverged(f"{what}: non-finite loss at epoch {epoch}", epoch=epoch)


def binary_cross_entropy_with_logits(z: Tensor, target: np.ndarray) -> Tensor:
    """Mean of softplus(z) - y z, the stable form of BCE on logits."""
    return F.mean(F.sub(F.softplus(z), F.mul(z, Tensor(target))))


def cross_entropy(z: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.eye(z.shape[1])[labels]
    return F.neg(F.mean(F.tsum(F.mul(F.log_softmax(z), Tensor(onehot)), axis=1)))


def _pretext_loss(net: Network, data: PretextDataset, idx, training: bool, rng) -> tuple[Tensor, float]:
    """Mean over heads of each head's balanced BCE; also returns mean head accuracy."""
    n, t = len(idx), data.num_tasks
    x = np.concatenate([data.originals[idx], *data.transformed[:, idx]])
    z = pretext_logits(net, x, training, rng)       # ((1 + t) n, t)
    orig = F.getitem(z, (slice(0, n), slice(None)))
    losses, correct = [], 0.0
    for k in range(t):
        pos = F.getitem(z, (slice((k + 1) * n, (k + 2) * n), slice(k, k + 1)))
        neg = F.getitem(orig, (slice(None), slice(k, k + 1)))
        both = F.concat([pos, neg], axis=0)
        target = np.concatenate([np.ones((n, 1)), np.zeros((n, 1))])
        losses.append(binary_cross_entropy_with_logits(both, target))
        correct += float(np.mean((both.data > 0) == (target > 0.5)))
    total = losses[0]
    for extra in losses[1:]:
        total = F.add(total, extra)
    return F.scale(total, 1.0 / t), correct / t


def evaluate_pretext(net: Network, data: PretextDataset, batch_size: int = 256) -> tuple[float, float]:
    """(loss, mean head accuracy) in inference mode."""
    n = len(data)
    loss = acc = 0.0
    for i in range(0, n, batch_size):
        idx = np.arange(i, min(n, i + batch_size))
        l, a = _pretext_loss(net, data, idx, False, None)
        loss += l.item() * len(idx)
        acc += a * len(idx)
    return loss / n, acc / n


def train_pretext(d: UnlabeledDataset, cfg: TrainConfig, width: float = 1.0,
                  arch: ArchConfig = ArchConfig(), transform_params: TransformParams = TransformParams(),
                  net: Network | None = None) -> tuple[Network, dict]:
    """Joint multi-task transform recognition with early stopping on a held-out slice."""
    if len(d) == 0:
        raise ValueError("pretext training needs windows")
    ss = split(cfg.seed, 4)
    _, c, length = d.windows.shape
    if net is None:
        net = build_pretext(c, length, len(ALL_KINDS), width, ss[0], arch)
    history = {"train_loss": [], "val_loss": [], "val_acc": []}
    if cfg.epochs == 0:
        return net, history

    data = build_pretext_dataset(d.windows, as_int(ss[1]), params=transform_params)
    rng = np.random.default_rng(ss[2])
    perm = rng.permutation(len(data))
    n_val = max(1, int(round(cfg.holdout * len(data)))) if len(data) > 1 else 0
    val, train = data.subset(perm[:n_val]), data.subset(perm[n_val:])
    if len(train) == 0:
        train = val

    opt = Adam(net.trainable(), lr=cfg.lr)
    best = (np.inf, [p.data.copy() for p in net.parameters()])
    stale = 0
    drop_rng = np.random.default_rng(ss[3])
    for epoch in range(cfg.epochs):
        running = 0.0
        for idx in _batches(len(train), cfg.batch_size, rng):
            with Tape() as tape:
                loss, _ = _pretext_loss(net, train, idx, True, drop_rng)
            _check_finite(loss, epoch, "pretext")
            backward(tape, loss)
            opt.step()
            opt.zero_grad()
            running += loss.item() * len(idx)
        vl, va = evaluate_pretext(net, val if len(val) else train)
        history["train_loss"].append(running / len(train))
        history["val_loss"].append(vl)
        history["val_acc"].append(va)
        log.info("pretext epoch %d: train %.4f val %.4f acc %.3f", epoch, running / len(train), vl, va)
        if vl < best[0]:
            best = (vl, [p.data.copy() for p in net.parameters()])
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    for p, saved in zip(net.parameters(), best[1]):
        p.data = saved
    return net, history


def train_supervised(base: Network, d: LabeledDataset, n_frozen: int, cfg: TrainConfig,
                     width: float | None = None, arch: ArchConfig | None = None) -> tuple[Network, dict]:
    """Classifier on labeled windows, initialised from ``base``'s convolutional layers."""
    if len(d) == 0:
        raise ValueError("supervised training needs at least one labeled window")
    ss = split(cfg.seed, 3)
    _, c, length = d.windows.shape
    net = build_classifier(c, length, d.num_classes, base.width if width is None else width,
                           ss[0], base.arch if arch is None else arch)
    transfer_base(base, net, n_frozen)
    opt = Adam(net.trainable(), lr=cfg.lr)
    rng = np.random.default_rng(ss[1])
    drop_rng = np.random.default_rng(ss[2])
    history = {"train_loss": [], "train_acc": []}
    for epoch in range(cfg.epochs):
        running = 0.0
        for idx in _batches(len(d), cfg.batch_size, rng):
            with Tape() as tape:
                loss = cross_entropy(logits(net, d.windows[idx], True, drop_rng), d.labels[idx])
            _check_finite(loss, epoch, "supervised")
            backward(tape, loss)
            opt.step()
            opt.zero_grad()
            running += loss.item() * len(idx)
        history["train_loss"].append(running / len(d))
    history["train_acc"].append(float(np.mean(predict_labels([net], d.windows) == d.labels)))
    return net, history


@dataclass
class MemberResult:
    index: int
    seed: int
    width: float
    pretext: Network
    classifier: Network | None = None
    history: dict = field(default_factory=dict)


def member_pretext(index: int, seed: int, width: float, d_u: UnlabeledDataset, tcfg: TrainConfig,
                   arch: ArchConfig, tparams: TransformParams) -> MemberResult:
    cfg = TrainConfig(**{**tcfg.__dict__, "seed": seed})
    try:
        net, hist = train_pretext(d_u, cfg, width, arch, tparams)
    except TrainingDiverged as err:
        raise TrainingDiverged(f"member {index}: {err}", err.epoch, index) from err
    return MemberResult(index, seed, width, net, history={"pretext": hist})


def member_supervised(member: MemberResult, d_l: LabeledDataset, n_frozen: int,
                      tcfg: TrainConfig) -> MemberResult:
    cfg = TrainConfig(**{**tcfg.__dict__, "seed": member.seed + 1})
    try:
        net, hist = train_supervised(member.pretext, d_l, n_frozen, cfg)
    except TrainingDiverged as err:
        raise TrainingDiverged(f"member {member.index}: {err}", err.epoch, member.index) from err
    member.classifier = net
    member.history["supervised"] = hist
    return member


def train_ensemble(d_u: UnlabeledDataset, d_l: LabeledDataset, ecfg: EnsembleConfig,
                   pretext_cfg: TrainConfig, supervised_cfg: TrainConfig, n_frozen: int = 0,
                   arch: ArchConfig = ArchConfig(),
                   tparams: TransformParams = TransformParams()) -> list[MemberResult]:
    """Every member independently: width draw, pretext training, transfer, fine-tune."""
    members = []
    for i, (seed, width) in enumerate(zip(ecfg.seeds, ecfg.widths())):
        m = member_pretext(i, seed, width, d_u, pretext_cfg, arch, tparams)
        members.append(member_supervised(m, d_l, n_frozen, supervised_cfg))
        log.info("member %d (width %.3f) trained", i, width)
    return members


def ensemble_predict(members: list[Network], x: np.ndarray, batch_size: int = 512,
                     temperature: float = 1.0) -> np.ndarray:
    """Per-member class distributions, shape (N, M, K). Not averaged."""
    if not members:
        raise ValueError("ensemble is empty")
    ks = {m.num_outputs for m in members}
    if len(ks) != 1:
        raise ValueError(f"ensemble members disagree on number of classes: {sorted(ks)}")
    out = np.empty((len(x), len(members), ks.pop()))
    for i in range(0, len(x), batch_size):
        sl = slice(i, i + batch_size)
        for j, m in enumerate(members):
            out[sl, j] = forward_classifier(m, x[sl], temperature)
    return out


def predict_labels(members: list[Network], x: np.ndarray) -> np.ndarray:
    return ensemble_predict(members, x).mean(axis=1).argmax(axis=1)
