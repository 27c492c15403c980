"""Datasets: windowing, normalisation, label budgets, readers and caching.

Windows are stored batched as ``(N, channels, timesteps)`` float64 arrays.
Channel order is accelerometer xyz followed by gyroscope xyz.
"""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .binio import read_container, write_container

log = logging.getLogger(__name__)

ACC = slice(0, 3)
GYRO = slice(3, 6)
TARGET_RATE = 50.0
MAX_GAP_S = 1.0


class DataError(ValueError):
    """Malformed or missing input data."""


@dataclass(frozen=True)
class LabeledDataset:
    windows: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    participants: np.ndarray
    sample_rate: float = TARGET_RATE

    def __post_init__(self):
        n = len(self.windows)
        if self.windows.ndim != 3:
            raise DataError(f"windows must be (N, C, T), got shape {self.windows.shape}")
        if len(self.labels) != n or len(self.participants) != n:
            raise DataError(f"length mismatch: {n} windows, {len(self.labels)} labels, "
                            f"{len(self.participants)} participant ids")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label outside [0, K)")
        if not np.all(np.isfinite(self.windows)):
            raise DataError("non-finite values in windows")

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return replace(self, windows=self.windows[idx], labels=self.labels[idx],
                       participants=self.participants[idx])

    def unlabeled(self) -> "UnlabeledDataset":
        return UnlabeledDataset(self.windows, self.participants, self.sample_rate)


@dataclass(frozen=True)
class UnlabeledDataset:
    windows: np.ndarray
    participants: np.ndarray
    sample_rate: float = TARGET_RATE

    def __post_init__(self):
        if len(self.windows) == 0:
            raise DataError("unlabeled dataset is empty")
        if len(self.participants) != len(self.windows):
            raise DataError("windows and participant ids differ in length")

    def __len__(self) -> int:
        return len(self.windows)


@dataclass(frozen=True)
class NormalizationStats:
    acc_scale: float
    gyro_scale: float | None = None

    def __post_init__(self):
        for s in (self.acc_scale, self.gyro_scale):
            if s is not None and not s > 0:
                raise DataError(f"normalisation scale must be > 0, got {s}")

    def apply(self, windows: np.ndarray) -> np.ndarray:
        out = np.array(windows, dtype=np.float64, copy=True)
        out[:, ACC] /= self.acc_scale
        if self.gyro_scale is not None:
            out[:, GYRO] /= self.gyro_scale
        return out


# --- core operations -------------------------------------------------------

def window(stream: np.ndarray, length: int, overlap: float) -> np.ndarray:
    """Cut a (C, T) stream into (n, C, length) windows.

    Consecutive windows start ``round(length * (1 - overlap))`` steps apart;
    a tail shorter than ``length`` is dropped.
    """
    if length < 2:
        raise ValueError(f"window length must be >= 2, got {length}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    stream = np.asarray(stream, dtype=np.float64)
    step = max(1, int(round(length * (1.0 - overlap))))
    total = stream.shape[-1]
    if total < length:
        return np.empty((0, stream.shape[0], length))
    starts = np.arange(0, total - length + 1, step)
    return np.stack([stream[:, s:s + length] for s in starts])


def modality_mean_std(windows: np.ndarray) -> tuple[float, float | None]:
    """Mean over windows and channels of the per-window, per-channel std."""
    std = windows.std(axis=2)
    acc = float(std[:, ACC].mean())
    gyro = float(std[:, GYRO].mean()) if windows.shape[1] > 3 else None
    return acc, gyro


def compute_normalization(train_windows: np.ndarray) -> NormalizationStats:
    acc, gyro = modality_mean_std(train_windows)
    if acc == 0 or gyro == 0:
        raise DataError("zero mean standard deviation in a modality; cannot normalise")
    return NormalizationStats(acc, gyro)


def normalize(train: LabeledDataset, *others: LabeledDataset):
    """Rescale so the training set's mean per-window std is 1 per modality.

    Stats come from ``train`` only and are applied unchanged to ``others``.
    Returns ``(rescaled_train, [rescaled_others...], stats)``.
    """
    stats = compute_normalization(train.windows)
    scaled = [replace(d, windows=stats.apply(d.windows)) for d in (train, *others)]
    return scaled[0], scaled[1:], stats


def sample_labeled_subset(d: LabeledDataset, per_class: int, seed: int) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    picked = []
    for k, name in enumerate(d.class_names):
        idx = np.flatnonzero(d.labels == k)
        if len(idx) < per_class:
            raise DataError(f"class {name!r} has {len(idx)} instances, need {per_class}")
        picked.append(np.sort(rng.choice(idx, size=per_class, replace=False)))
    return d.subset(np.concatenate(picked))


def split_by_participant(d: LabeledDataset, train_ids, val_ids) -> tuple[LabeledDataset, LabeledDataset]:
    train_ids, val_ids = set(train_ids), set(val_ids)
    if train_ids & val_ids:
        raise DataError(f"participants in both splits: {sorted(train_ids & val_ids)}")
    tr = np.isin(d.participants, list(train_ids))
    va = np.isin(d.participants, list(val_ids))
    return d.subset(np.flatnonzero(tr)), d.subset(np.flatnonzero(va))


def subsample_per_participant(d: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    keep = []
    for pid in np.unique(d.participants):
        idx = np.flatnonzero(d.participants == pid)
        keep.append(np.sort(rng.choice(idx, size=min(n, len(idx)), replace=False)))
    return d.subset(np.concatenate(keep))


def resample(times: np.ndarray, values: np.ndarray, rate: float = TARGET_RATE,
             start: float | None = None, stop: float | None = None) -> np.ndarray:
    """Linear interpolation of (C, T) samples at ``times`` (seconds) onto a uniform grid."""
    start = times[0] if start is None else start
    stop = times[-1] if stop is None else stop
    grid = np.arange(start, stop + 1e-12, 1.0 / rate)
    return np.stack([np.interp(grid, times, ch) for ch in values])


def _runs(times: np.ndarray, max_gap: float = MAX_GAP_S) -> list[slice]:
    """Split a sorted time vector into runs without gaps above ``max_gap``."""
    if len(times) == 0:
        return []
    breaks = np.flatnonzero(np.diff(times) > max_gap) + 1
    edges = [0, *breaks.tolist(), len(times)]
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


# --- synthetic data --------------------------------------------------------

@dataclass
class SyntheticConfig:
    classes: int = 3
    channels: int = 6
    length: int = 64
    windows: int = 3000
    participants: int = 12
    train_participants: int = 8
    noise: float = 0.05
    overlap_mix: float = 0.6
    participant_shift: float = 0.5
    sample_rate: float = TARGET_RATE
    seed: int = 0

    @classmethod
    def from_mapping(cls, values: dict) -> "SyntheticConfig":
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown synthetic config keys: {sorted(unknown)}")
        kwargs = {}
        for name, f in cls.__dataclass_fields__.items():
            if name in values:
                kwargs[name] = type(f.default)(values[name])
        return cls(**kwargs)


def _small_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def make_synthetic(cfg: SyntheticConfig) -> tuple[LabeledDataset, dict]:
    """Class-dependent periodic windows with noise and per-participant device drift.

    Each class has a cadence, a static (gravity-like) offset per channel and
    three harmonics per channel with fixed relative phases, so waveforms are
    asymmetric in time and sign. A window blends its own class with a random
    other class (weight up to ``overlap_mix``), which makes some windows
    genuinely ambiguous. Participants differ by channel gains and a small
    device rotation.
    """
    if cfg.classes < 2 or cfg.channels < 1 or cfg.length < 2:
        raise DataError("synthetic config needs >= 2 classes, >= 1 channel, length >= 2")
    if not 0 < cfg.train_participants < cfg.participants:
        raise DataError("train_participants must lie strictly between 0 and participants")
    rng = np.random.default_rng(cfg.seed)
    k, c, length, n = cfg.classes, cfg.channels, cfg.length, cfg.windows
    cadence = rng.uniform(1.0, 3.0, size=k)
    harm_amp = rng.uniform(0.1, 1.0, size=(k, c, 3)) / np.arange(1, 4)
    harm_phase = rng.uniform(0, 2 * np.pi, size=(k, c, 3))
    offsets = 0.6 * rng.standard_normal((k, c))
    gains = np.exp(0.5 * cfg.participant_shift * rng.standard_normal((cfg.participants, c)))
    rotations = [_small_rotation(rng, np.pi * cfg.participant_shift / 2) for _ in range(cfg.participants)]

    t = np.arange(length) / cfg.sample_rate
    labels = np.arange(n) % k
    rng.shuffle(labels)
    participants = rng.integers(0, cfg.participants, size=n)
    h = np.arange(1, 4)

    def proto(cls_idx):
        f = cadence[cls_idx] * (1.0 + 0.1 * rng.standard_normal(len(cls_idx)))
        theta = rng.uniform(0, 2 * np.pi, size=len(cls_idx))
        amp = harm_amp[cls_idx] * (1.0 + 0.2 * rng.standard_normal((len(cls_idx), c, 1)))
        arg = (2 * np.pi * f[:, None, None, None] * h[None, None, :, None] * t
               + (h * theta[:, None])[:, None, :, None] + harm_phase[cls_idx][..., None])
        return (amp[..., None] * np.sin(arg)).sum(axis=2) + offsets[cls_idx][..., None]

    other = (labels + rng.integers(1, k, size=n)) % k
    mix = rng.uniform(0.0, cfg.overlap_mix, size=n)[:, None, None]
    x = (1.0 - mix) * proto(labels) + mix * proto(other)
    x = x * gains[participants][..., None]
    for i in range(0, c - c % 3, 3):
        for p in range(cfg.participants):
            sel = participants == p
            x[sel, i:i + 3] = np.einsum("ij,njt->nit", rotations[p], x[sel, i:i + 3])
    x = x + cfg.noise * rng.standard_normal(x.shape)

    ds = LabeledDataset(x, labels, tuple(f"class_{i}" for i in range(k)),
                        participants + 1, cfg.sample_rate)
    meta = {
        "name": "synthetic",
        "train_participants": list(range(1, cfg.train_participants + 1)),
        "val_participants": list(range(cfg.train_participants + 1, cfg.participants + 1)),
        "config": dict(cfg.__dict__),
    }
    return ds, meta


# --- public corpora --------------------------------------------------------

@dataclass
class DatasetSource:
    name: str
    root: Path | None = None
    length: int = 128
    overlap: float = 0.5
    options: dict = field(default_factory=dict)


HHAR_CLASSES = ("bike", "sit", "stand", "walk", "stairsup", "stairsdown")
UCI_CLASSES = ("WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING", "STANDING", "LAYING")
MOTIONSENSE_CLASSES = ("dws", "ups", "wlk", "jog", "sit", "std")
PAMAP2_ACTIVITIES = {1: "lying", 2: "sitting", 3: "standing", 4: "walking", 5: "running",
                     6: "cycling", 7: "nordic_walking", 12: "ascending_stairs",
                     13: "descending_stairs", 16: "vacuum_cleaning", 17: "ironing",
                     24: "rope_jumping"}


def _float(text: str, path: Path, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: cannot parse {column}={text!r} as a number") from None


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing input file: {path}")
    return path


def _read_hhar_sensor(path: Path) -> dict:
    """(user, device, label) -> (times_s, (3, T) values)."""
    groups: dict[tuple, list] = {}
    with open(_require(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        need = ["Creation_Time", "x", "y", "z", "User", "Device", "gt"]
        if header is None or any(h not in header for h in need):
            raise DataError(f"{path}:1: missing column(s) {[h for h in need if h not in (header or [])]}")
        col = {h: header.index(h) for h in need}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            label = row[col["gt"]]
            if label not in HHAR_CLASSES:
                continue
            key = (row[col["User"]], row[col["Device"]], label)
            t = _float(row[col["Creation_Time"]], path, lineno, "Creation_Time") * 1e-9
            xyz = [_float(row[col[a]], path, lineno, a) for a in "xyz"]
            groups.setdefault(key, []).append((t, *xyz))
    out = {}
    for key, rows in groups.items():
        arr = np.array(sorted(rows))
        out[key] = (arr[:, 0], arr[:, 1:].T)
    return out


def _aligned_streams(acc_t, acc_v, gyr_t, gyr_v, rate):
    """Resample overlapping gap-free stretches of two sensors onto one grid."""
    streams = []
    for ra in _runs(acc_t):
        for rg in _runs(gyr_t):
            lo = max(acc_t[ra][0], gyr_t[rg][0])
            hi = min(acc_t[ra][-1], gyr_t[rg][-1])
            if hi - lo < 2.0 / rate:
                continue
            a = resample(acc_t[ra], acc_v[:, ra], rate, lo, hi)
            g = resample(gyr_t[rg], gyr_v[:, rg], rate, lo, hi)
            n = min(a.shape[1], g.shape[1])
            streams.append(np.concatenate([a[:, :n], g[:, :n]]))
    return streams


def _assemble(chunks: list[tuple[np.ndarray, int, int]], class_names, rate) -> LabeledDataset:
    wins = [w for w, _, _ in chunks if len(w)]
    if not wins:
        raise DataError("no complete windows could be cut from the input")
    labels = np.concatenate([np.full(len(w), y) for w, y, _ in chunks if len(w)])
    parts = np.concatenate([np.full(len(w), p) for w, _, p in chunks if len(w)])
    return LabeledDataset(np.concatenate(wins), labels, tuple(class_names), parts, rate)


def load_hhar(src: DatasetSource) -> tuple[LabeledDataset, dict]:
    root = Path(src.root)
    acc = _read_hhar_sensor(root / "Phones_accelerometer.csv")
    gyr = _read_hhar_sensor(root / "Phones_gyroscope.csv")
    users = sorted({k[0] for k in acc})
    user_ids = {u: i + 1 for i, u in enumerate(users)}
    chunks = []
    for key in sorted(acc):
        if key not in gyr:
            continue
        user, _, label = key
        for stream in _aligned_streams(*acc[key], *gyr[key], TARGET_RATE):
            chunks.append((window(stream, src.length, src.overlap),
                           HHAR_CLASSES.index(label), user_ids[user]))
    ds = _assemble(chunks, HHAR_CLASSES, TARGET_RATE)
    ids = sorted(user_ids.values())
    return ds, {"name": "hhar", "users": user_ids,
                "train_participants": [i for i in ids if i <= 6],
                "val_participants": [i for i in ids if i > 6],
                "train_per_participant": int(src.options.get("train_per_participant", 1000))}


def _read_matrix(path: Path, width: int | None = None) -> np.ndarray:
    rows = []
    with open(_require(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if width is not None and len(parts) != width:
                raise DataError(f"{path}:{lineno}: expected {width} values, got {len(parts)}")
            rows.append([_float(p, path, lineno, f"col{i}") for i, p in enumerate(parts)])
    return np.array(rows)


def load_uci_har(src: DatasetSource) -> tuple[LabeledDataset, dict]:
    root = Path(src.root)
    if (root / "UCI HAR Dataset").is_dir():
        root = root / "UCI HAR Dataset"
    parts = []
    split_ids = {}
    for group in ("train", "test"):
        sig = root / group / "Inertial Signals"
        names = [f"total_acc_{a}_{group}.txt" for a in "xyz"] + [f"body_gyro_{a}_{group}.txt" for a in "xyz"]
        chans = [_read_matrix(sig / n) for n in names]
        if len({c.shape for c in chans}) != 1:
            raise DataError(f"{sig}: inertial signal files disagree in shape")
        y = _read_matrix(root / group / f"y_{group}.txt", 1)[:, 0].astype(int) - 1
        subj = _read_matrix(root / group / f"subject_{group}.txt", 1)[:, 0].astype(int)
        if not len(y) == len(subj) == len(chans[0]):
            raise DataError(f"{root / group}: label/subject/signal row counts differ")
        parts.append(LabeledDataset(np.stack(chans, axis=1), y, UCI_CLASSES, subj, TARGET_RATE))
        split_ids[group] = sorted(set(subj.tolist()))
    ds = LabeledDataset(np.concatenate([p.windows for p in parts]),
                        np.concatenate([p.labels for p in parts]), UCI_CLASSES,
                        np.concatenate([p.participants for p in parts]), TARGET_RATE)
    return ds, {"name": "uci_har", "train_participants": split_ids["train"],
                "val_participants": split_ids["test"], "prewindowed": True}


_MS_DIR = re.compile(r"^(dws|ups|wlk|jog|sit|std)_(\d+)$")
_MS_FILE = re.compile(r"^sub_(\d+)\.csv$")


def load_motionsense(src: DatasetSource) -> tuple[LabeledDataset, dict]:
    root = Path(src.root)
    if (root / "A_DeviceMotion_data").is_dir():
        root = root / "A_DeviceMotion_data"
    acc_cols = [("gravity." + a, "userAcceleration." + a) for a in "xyz"]
    gyro_cols = ["rotationRate." + a for a in "xyz"]
    chunks = []
    trial_dirs = sorted(p for p in root.iterdir() if p.is_dir() and _MS_DIR.match(p.name))
    if not trial_dirs:
        raise DataError(f"{root}: no MotionSense trial directories found")
    for d in trial_dirs:
        label = MOTIONSENSE_CLASSES.index(_MS_DIR.match(d.name).group(1))
        for f in sorted(d.iterdir()):
            m = _MS_FILE.match(f.name)
            if not m:
                continue
            with open(f, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                need = [c for pair in acc_cols for c in pair] + gyro_cols
                missing = [c for c in need if c not in header]
                if missing:
                    raise DataError(f"{f}:1: missing channel column(s) {missing}")
                col = {h: header.index(h) for h in need}
                rows = []
                for lineno, row in enumerate(reader, start=2):
                    if len(row) != len(header):
                        raise DataError(f"{f}:{lineno}: expected {len(header)} fields, got {len(row)}")
                    acc = [_float(row[col[g]], f, lineno, g) + _float(row[col[u]], f, lineno, u)
                           for g, u in acc_cols]
                    gyr = [_float(row[col[g]], f, lineno, g) for g in gyro_cols]
                    rows.append(acc + gyr)
            stream = np.array(rows).T
            chunks.append((window(stream, src.length, src.overlap), label, int(m.group(1))))
    ds = _assemble(chunks, MOTIONSENSE_CLASSES, TARGET_RATE)
    return ds, {"name": "motionsense", "train_participants": list(range(1, 17)),
                "val_participants": list(range(17, 25))}


# column indices in the PAMAP2 Protocol files
_PAMAP_TIME, _PAMAP_ACT = 0, 1
_PAMAP_WRIST_ACC = (4, 5, 6)   # +-16 g accelerometer, hand IMU
_PAMAP_WRIST_GYRO = (10, 11, 12)
_PAMAP_COLUMNS = 54


def load_pamap2(src: DatasetSource) -> tuple[LabeledDataset, dict]:
    root = Path(src.root)
    if (root / "Protocol").is_dir():
        root = root / "Protocol"
    files = sorted(root.glob("subject1*.dat"))
    if not files:
        raise DataError(f"{root}: no subject1xx.dat files found")
    acts = sorted(PAMAP2_ACTIVITIES)
    chunks = []
    for f in files:
        subject = int(f.stem.replace("subject", "")) - 100
        data = _read_matrix(f, _PAMAP_COLUMNS)
        cols = list(_PAMAP_WRIST_ACC + _PAMAP_WRIST_GYRO)
        ok = np.all(np.isfinite(data[:, cols]), axis=1)
        data = data[ok]
        act = data[:, _PAMAP_ACT].astype(int)
        # contiguous blocks of one protocol activity
        edges = np.flatnonzero(np.diff(act)) + 1
        for block in np.split(np.arange(len(act)), edges):
            a = act[block[0]]
            if a not in PAMAP2_ACTIVITIES:
                continue
            t = data[block, _PAMAP_TIME]
            vals = data[block][:, cols].T
            for run in _runs(t):
                if run.stop - run.start < 2:
                    continue
                stream = resample(t[run], vals[:, run], TARGET_RATE)
                chunks.append((window(stream, src.length, src.overlap), acts.index(a), subject))
    ds = _assemble(chunks, [PAMAP2_ACTIVITIES[a] for a in acts], TARGET_RATE)
    present = sorted(set(ds.participants.tolist()))
    return ds, {"name": "pamap2", "train_participants": [p for p in present if p <= 6],
                "val_participants": [p for p in present if p > 6]}


LOADERS = {
    "hhar": load_hhar,
    "uci_har": load_uci_har,
    "motionsense": load_motionsense,
    "pamap2": load_pamap2,
}


def load_dataset(src: DatasetSource) -> tuple[LabeledDataset, dict]:
    if src.name == "synthetic":
        cfg = SyntheticConfig.from_mapping(src.options)
        return make_synthetic(cfg)
    try:
        loader = LOADERS[src.name]
    except KeyError:
        raise DataError(f"unknown dataset {src.name!r}; choose from "
                        f"{['synthetic', *LOADERS]}") from None
    if src.root is None:
        raise DataError(f"dataset {src.name!r} needs a root path")
    ds, meta = loader(src)
    meta.setdefault("window_length", src.length)
    meta.setdefault("overlap", src.overlap)
    meta["resample_rate"] = TARGET_RATE
    log.info("loaded %s: %d windows, %d classes", src.name, len(ds), ds.num_classes)
    return ds, meta


def train_val_split(ds: LabeledDataset, meta: dict, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    train, val = split_by_participant(ds, meta["train_participants"], meta["val_participants"])
    per = meta.get("train_per_participant")
    if per:
        train = subsample_per_participant(train, int(per), seed)
    return train, val


# --- cache -----------------------------------------------------------------

def save_cache(path, datasets: dict[str, LabeledDataset], meta: dict) -> None:
    arrays = {}
    info = {"meta": meta, "splits": {}}
    for name, d in datasets.items():
        arrays[f"{name}/windows"] = d.windows
        arrays[f"{name}/labels"] = d.labels
        arrays[f"{name}/participants"] = d.participants
        info["splits"][name] = {"class_names": list(d.class_names), "sample_rate": d.sample_rate}
    write_container(path, "dataset", arrays, info)


def load_cache(path) -> tuple[dict[str, LabeledDataset], dict]:
    arrays, info = read_container(path, "dataset")
    out = {}
    for name, spec in info["splits"].items():
        out[name] = LabeledDataset(arrays[f"{name}/windows"],
                                   arrays[f"{name}/labels"].astype(np.int64),
                                   tuple(spec["class_names"]),
                                   arrays[f"{name}/participants"].astype(np.int64),
                                   spec["sample_rate"])
    return out, info["meta"]

