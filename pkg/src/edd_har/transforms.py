"""The eight signal transformations used by the pretext task and as augmentation."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.interpolate import CubicSpline


class TransformKind(IntEnum):
    NOISING = 0
    SCALING = 1
    ROTATION = 2
    NEGATION = 3
    TIME_REVERSAL = 4
    WINDOW_PERMUTATION = 5
    TIME_WARPING = 6
    CHANNEL_SHUFFLING = 7


ALL_KINDS = tuple(TransformKind)


@dataclass(frozen=True)
class TransformParams:
    noise_sigma: float = 0.05
    scale_low: float = 0.7
    scale_high: float = 1.1
    permutation_segments: int = 4
    warp_knots: int = 4
    warp_strength: float = 0.2

    def validate(self) -> None:
        if not self.noise_sigma > 0:
            raise ValueError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if not 0 < self.scale_low < self.scale_high:
            raise ValueError("scale range must satisfy 0 < low < high")
        if self.permutation_segments < 2:
            raise ValueError("permutation_segments must be >= 2")
        if self.warp_knots < 2:
            raise ValueError("warp_knots must be >= 2")
        if not 0 < self.warp_strength < 1:
            raise ValueError("warp_strength must be in (0, 1)")


DEFAULT_PARAMS = TransformParams()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed 3-D rotation matrix (unit quaternion method)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _scale_factor(rng, p: TransformParams) -> float:
    while True:
        s = rng.uniform(p.scale_low, p.scale_high)
        if abs(s - 1.0) > 1e-3:
            return s


def _warp_path(length: int, rng, p: TransformParams) -> np.ndarray:
    # smooth positive speed curve through random knots; its integral is the new time axis
    knots_x = np.linspace(0, length - 1, p.warp_knots + 2)
    knots_y = np.clip(1.0 + p.warp_strength * rng.standard_normal(p.warp_knots + 2), 0.2, None)
    speed = np.clip(CubicSpline(knots_x, knots_y)(np.arange(length)), 0.05, None)
    path = np.concatenate([[0.0], np.cumsum(speed[:-1])])
    return path * (length - 1) / path[-1]


def _one(kind: TransformKind, x: np.ndarray, rng: np.random.Generator, p: TransformParams) -> np.ndarray:
    c, length = x.shape
    if kind is TransformKind.NOISING:
        return x + p.noise_sigma * rng.standard_normal(x.shape)
    if kind is TransformKind.SCALING:
        return x * _scale_factor(rng, p)
    if kind is TransformKind.ROTATION:
        if c % 3:
            raise ValueError(f"rotation needs channels in 3-axis blocks, got {c} channels")
        rot = random_rotation(rng)
        return np.concatenate([rot @ x[i:i + 3] for i in range(0, c, 3)])
    if kind is TransformKind.NEGATION:
        return -x
    if kind is TransformKind.TIME_REVERSAL:
        return x[:, ::-1].copy()
    if kind is TransformKind.WINDOW_PERMUTATION:
        if length < p.permutation_segments:
            raise ValueError("window shorter than the number of permutation segments")
        segs = np.array_split(np.arange(length), p.permutation_segments)
        order = rng.permutation(len(segs))
        return x[:, np.concatenate([segs[i] for i in order])]
    if kind is TransformKind.TIME_WARPING:
        path = _warp_path(length, rng, p)
        grid = np.arange(length)
        return np.stack([np.interp(path, grid, ch) for ch in x])
    if kind is TransformKind.CHANNEL_SHUFFLING:
        return x[rng.permutation(c)]
    raise ValueError(f"unknown transform {kind!r}")


def apply(kind, x: np.ndarray, seed, params: TransformParams = DEFAULT_PARAMS) -> np.ndarray:
    """Transform one (C, T) window. ``seed`` may be an int or a Generator."""
    kind = TransformKind(kind)
    params.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a (channels, timesteps) window, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("window contains non-finite values")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _one(kind, x, rng, params)


def apply_batch(kind, windows: np.ndarray, rng: np.random.Generator,
                params: TransformParams = DEFAULT_PARAMS) -> np.ndarray:
    """Transform each window of an (N, C, T) batch with its own random draw."""
    kind = TransformKind(kind)
    params.validate()
    if kind is TransformKind.NEGATION:
        return -windows
    if kind is TransformKind.TIME_REVERSAL:
        return windows[:, :, ::-1].copy()
    if kind is TransformKind.NOISING:
        return windows + params.noise_sigma * rng.standard_normal(windows.shape)
    return np.stack([_one(kind, w, rng, params) for w in windows])


@dataclass
class PretextDataset:
    """Per-task binary data: task k holds (T_k(x), 1) and (x, 0) for every window x."""

    originals: np.ndarray      # (N, C, T)
    transformed: np.ndarray    # (n_tasks, N, C, T)
    kinds: tuple[TransformKind, ...]

    @property
    def num_tasks(self) -> int:
        return len(self.kinds)

    def __len__(self) -> int:
        return len(self.originals)

    def task(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.originals)
        x = np.concatenate([self.transformed[k], self.originals])
        y = np.concatenate([np.ones(n), np.zeros(n)])
        return x, y

    def subset(self, idx) -> "PretextDataset":
        return PretextDataset(self.originals[idx], self.transformed[:, idx], self.kinds)


def build_pretext_dataset(windows: np.ndarray, seed: int, kinds=ALL_KINDS,
                          params: TransformParams = DEFAULT_PARAMS) -> PretextDataset:
    windows = np.asarray(windows, dtype=np.float64)
    if len(windows) == 0:
        raise ValueError("cannot build a pretext dataset from zero windows")
    kinds = tuple(TransformKind(k) for k in kinds)
    root = np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in root.spawn(len(kinds))]
    transformed = np.stack([apply_batch(k, windows, r, params) for k, r in zip(kinds, rngs)])
    return PretextDataset(windows, transformed, kinds)


def augment_with_transforms(windows: np.ndarray, seed: int, kinds=ALL_KINDS,
                            params: TransformParams = DEFAULT_PARAMS) -> np.ndarray:
    """Originals followed by every transform's output: (1 + len(kinds)) * N windows."""
    pre = build_pretext_dataset(windows, seed, kinds, params)
    return np.concatenate([pre.originals, *pre.transformed])
