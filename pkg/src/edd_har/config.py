"""INI run configuration: one section per pipeline module, typed and validated."""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Bad or unknown configuration key; the message names ``section.key``."""


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class DataSection:
    dataset: str = "synthetic"
    root: str = ""
    length: int = 128
    overlap: float = 0.5
    per_class: int = 50


@dataclass
class SyntheticSection:
    classes: int = 3
    channels: int = 6
    length: int = 64
    windows: int = 3000
    participants: int = 12
    train_participants: int = 8
    noise: float = 0.05
    overlap_mix: float = 0.6
    participant_shift: float = 0.5
    seed: int = 0


@dataclass
class ModelsSection:
    filters: tuple[int, ...] = (32, 64, 96)
    kernels: tuple[int, ...] = (24, 16, 8)
    dropout: float = 0.1
    head_units: int = 256


@dataclass
class TransformsSection:
    noise_sigma: float = 0.05
    scale_low: float = 0.7
    scale_high: float = 1.1
    permutation_segments: int = 4
    warp_knots: int = 4
    warp_strength: float = 0.2


@dataclass
class TrainingSection:
    members: int = 5
    width_low: float = 0.75
    width_high: float = 1.25
    pretext_epochs: int = 30
    pretext_patience: int = 5
    supervised_epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    n_frozen: int = 0


@dataclass
class DistillSection:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    steps_per_epoch: int = 0
    t0: float = 10.0
    temperature_rate: float = 0.25
    t_max: float = 10.0
    combo_weight: float = 0.5
    max_combos: int = 4
    combo_rate: float = 0.05
    n_frozen: int = 0
    use_pretrained: bool = True
    use_transforms: bool = True
    use_combos: bool = True


@dataclass
class EvalSection:
    eps: tuple[float, ...] = (0.0, 0.1)
    seeds: tuple[int, ...] = (0,)
    quantiles: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)


SECTIONS = {
    "data": DataSection,
    "synthetic": SyntheticSection,
    "models": ModelsSection,
    "transforms": TransformsSection,
    "training": TrainingSection,
    "distill": DistillSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    models: ModelsSection = field(default_factory=ModelsSection)
    transforms: TransformsSection = field(default_factory=TransformsSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    distill: DistillSection = field(default_factory=DistillSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def section_hash(self, *names: str) -> str:
        """Stable digest over the named sections (all sections if none given)."""
        d = self.to_dict()
        picked = {n: d[n] for n in (names or SECTIONS)}
        blob = json.dumps(picked, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return _bool(raw)
        if isinstance(default, tuple):
            return _ints(raw) if default and isinstance(default[0], int) else _floats(raw)
        return type(default)(raw.strip())
    except ValueError as err:
        raise ConfigError(f"{section}.{key}: {err}") from None


def _validate(cfg: RunConfig) -> None:
    checks = [
        ("data.length", cfg.data.length >= 2),
        ("data.overlap", 0 <= cfg.data.overlap < 1),
        ("data.per_class", cfg.data.per_class >= 1),
        ("models.kernels", len(cfg.models.kernels) == len(cfg.models.filters)),
        ("models.dropout", 0 <= cfg.models.dropout < 1),
        ("training.members", cfg.training.members >= 1),
        ("training.width_low", 0 < cfg.training.width_low <= cfg.training.width_high),
        ("training.lr", cfg.training.lr > 0),
        ("distill.epochs", cfg.distill.epochs >= 1),
        ("distill.t0", cfg.distill.t0 >= 1),
        ("distill.t_max", cfg.distill.t_max >= 1),
        ("distill.temperature_rate", cfg.distill.temperature_rate >= 0),
        ("distill.combo_weight", 0 < cfg.distill.combo_weight <= 1),
        ("distill.max_combos", cfg.distill.max_combos >= 1),
        ("distill.combo_rate", cfg.distill.combo_rate >= 0),
        ("eval.eps", len(cfg.eval.eps) > 0 and all(e >= 0 for e in cfg.eval.eps)),
        ("eval.seeds", len(cfg.eval.seeds) > 0 and len(set(cfg.eval.seeds)) == len(cfg.eval.seeds)),
        ("eval.quantiles", all(0 < q <= 1 for q in cfg.eval.quantiles)),
    ]
    for key, ok in checks:
        if not ok:
            raise ConfigError(f"{key}: invalid value")


def parse_config(text: str = "") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"config syntax: {err}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown section (expected one of {sorted(SECTIONS)})")
        target = getattr(cfg, section)
        known = {f.name for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{section}.{key}: unknown key")
            setattr(target, key, _convert(section, key, raw, getattr(target, key)))
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text)
