"""Temporal-convolution networks: shared base plus classifier or pretext heads."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as F
from .binio import read_container, write_container
from .numerics import Tensor
from .rng import split

ALPHA_MIN = 1e-6
ALPHA_MAX = 1e6
_LOG_ALPHA_MIN = math.log(ALPHA_MIN)
_LOG_ALPHA_MAX = math.log(ALPHA_MAX)


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    filters: tuple[int, ...] = (32, 64, 96)
    kernels: tuple[int, ...] = (24, 16, 8)
    dropout: float = 0.1
    head_units: int = 256

    def scaled_filters(self, width: float) -> tuple[int, ...]:
        return tuple(math.ceil(f * width - 1e-9) for f in self.filters)

    def scaled_head(self, width: float) -> int:
        return math.ceil(self.head_units * width - 1e-9)

    def receptive_field(self) -> int:
        return sum(k - 1 for k in self.kernels) + 1


@dataclass
class Layer:
    kind: str               # "conv" | "dense"
    weight: Tensor
    bias: Tensor

    @property
    def frozen(self) -> bool:
        return self.weight.frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.weight.frozen = value
        self.bias.frozen = value


@dataclass
class Network:
    """Ordered layers plus the descriptor needed to rebuild them.

    ``head`` is ``"classifier"`` (K-way logits; also used as the Dirichlet
    prior network), ``"pretext"`` (one binary head per transform), or
    ``None`` for a bare base.
    """

    in_channels: int
    length: int
    width: float
    arch: ArchConfig
    layers: dict[str, Layer] = field(default_factory=dict)
    head: str | None = None
    num_outputs: int = 0

    @property
    def base_names(self) -> list[str]:
        return [f"conv{i}" for i in range(len(self.arch.filters))]

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers.values() for t in (layer.weight, layer.bias)]

    def trainable(self) -> list[Tensor]:
        return [t for t in self.parameters() if not t.frozen]

    def descriptor(self) -> dict:
        return {
            "in_channels": self.in_channels, "length": self.length, "width": self.width,
            "filters": list(self.arch.filters), "kernels": list(self.arch.kernels),
            "dropout": self.arch.dropout, "head_units": self.arch.head_units,
            "head": self.head, "num_outputs": self.num_outputs,
            "layers": [[name, layer.kind] for name, layer in self.layers.items()],
        }


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def _init_layer(rng, kind: str, shape: tuple[int, ...], name: str) -> Layer:
    fan_in = int(np.prod(shape[1:])) if kind == "conv" else shape[0]
    w = Tensor(_truncated_normal(rng, shape, math.sqrt(2.0 / fan_in)), requires_grad=True,
               name=f"{name}.weight")
    n_out = shape[0] if kind == "conv" else shape[1]
    b = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias")
    return Layer(kind, w, b)


def build_base(in_channels: int, length: int, width: float = 1.0, seed=0,
               arch: ArchConfig = ArchConfig()) -> Network:
    """Three conv blocks (filters scaled by ``width``, rounded up) ending in global max-pool."""
    if width <= 0:
        raise ArchitectureError(f"width multiplier must be positive, got {width}")
    if len(arch.filters) != len(arch.kernels):
        raise ArchitectureError("filters and kernels must have equal length")
    if length < arch.receptive_field():
        raise ArchitectureError(f"input length {length} is shorter than the receptive field "
                                f"{arch.receptive_field()}")
    rng = np.random.default_rng(seed)
    net = Network(in_channels, length, width, arch)
    prev = in_channels
    for i, (f, k) in enumerate(zip(arch.scaled_filters(width), arch.kernels)):
        net.layers[f"conv{i}"] = _init_layer(rng, "conv", (f, prev, k), f"conv{i}")
        prev = f
    return net


def _feature_dim(net: Network) -> int:
    return net.arch.scaled_filters(net.width)[-1]


def add_classifier_head(net: Network, num_classes: int, seed=0) -> Network:
    rng = np.random.default_rng(seed)
    hidden = net.arch.scaled_head(net.width)
    net.layers["fc"] = _init_layer(rng, "dense", (_feature_dim(net), hidden), "fc")
    net.layers["out"] = _init_layer(rng, "dense", (hidden, num_classes), "out")
    net.head, net.num_outputs = "classifier", num_classes
    return net


def add_pretext_heads(net: Network, num_tasks: int, seed=0) -> Network:
    rng = np.random.default_rng(seed)
    hidden = net.arch.scaled_head(net.width)
    for k in range(num_tasks):
        net.layers[f"task{k}.fc"] = _init_layer(rng, "dense", (_feature_dim(net), hidden), f"task{k}.fc")
        net.layers[f"task{k}.out"] = _init_layer(rng, "dense", (hidden, 1), f"task{k}.out")
    net.head, net.num_outputs = "pretext", num_tasks
    return net


def build_classifier(in_channels, length, num_classes, width=1.0, seed=0,
                     arch: ArchConfig = ArchConfig()) -> Network:
    ss = split(seed, 2)
    net = build_base(in_channels, length, width, ss[0], arch)
    return add_classifier_head(net, num_classes, ss[1])


def build_pretext(in_channels, length, num_tasks=8, width=1.0, seed=0,
                  arch: ArchConfig = ArchConfig()) -> Network:
    ss = split(seed, 2)
    net = build_base(in_channels, length, width, ss[0], arch)
    return add_pretext_heads(net, num_tasks, ss[1])


# --- forward passes --------------------------------------------------------

def _as_input(net: Network, x) -> Tensor:
    x = F.as_tensor(x)
    if x.ndim != 3 or x.shape[1] != net.in_channels or x.shape[2] != net.length:
        raise F.ShapeError("network input", x.shape, (None, net.in_channels, net.length))
    return x


def features(net: Network, x, training: bool = False, rng=None) -> Tensor:
    h = _as_input(net, x)
    for name in net.base_names:
        layer = net.layers[name]
        h = F.relu(F.conv1d(h, layer.weight, layer.bias))
        h = F.dropout(h, net.arch.dropout, rng, training)
    return F.global_max_pool(h)


def _dense_block(net: Network, h: Tensor, prefix: str, training: bool, rng) -> Tensor:
    fc, out = net.layers[f"{prefix}fc"], net.layers[f"{prefix}out"]
    h = F.relu(F.linear(h, fc.weight, fc.bias))
    h = F.dropout(h, net.arch.dropout, rng, training)
    return F.linear(h, out.weight, out.bias)


def logits(net: Network, x, training: bool = False, rng=None) -> Tensor:
    if net.head != "classifier":
        raise ArchitectureError(f"network has no classification head (head={net.head!r})")
    return _dense_block(net, features(net, x, training, rng), "", training, rng)


def pretext_logits(net: Network, x, training: bool = False, rng=None) -> Tensor:
    """(B, n_tasks) binary logits, one column per transform head."""
    if net.head != "pretext":
        raise ArchitectureError(f"network has no pretext heads (head={net.head!r})")
    h = features(net, x, training, rng)
    cols = [_dense_block(net, h, f"task{k}.", training, rng) for k in range(net.num_outputs)]
    return F.concat(cols, axis=1)


def forward_classifier(net: Network, x, temperature: float = 1.0) -> np.ndarray:
    """Inference-mode class probabilities, (B, K)."""
    return F.softmax(logits(net, x), temperature).data


def dirichlet_alpha(z: Tensor, temperature: float = 1.0) -> Tensor:
    """alpha = exp(z / T), clamped to [ALPHA_MIN, ALPHA_MAX] (clamp applied in log space)."""
    if temperature < 1.0:
        raise ValueError(f"Dirichlet temperature must be >= 1, got {temperature}")
    if not np.all(np.isfinite(z.data)):
        raise FloatingPointError("non-finite logits in Dirichlet head")
    return F.exp(F.clip(F.scale(z, 1.0 / temperature), _LOG_ALPHA_MIN, _LOG_ALPHA_MAX))


def forward_dirichlet(net: Network, x, temperature: float = 1.0) -> np.ndarray:
    return dirichlet_alpha(logits(net, x), temperature).data


def forward_pretext(net: Network, x) -> np.ndarray:
    return F.sigmoid(pretext_logits(net, x)).data


def transfer_base(src: Network, dst: Network, n_frozen: int) -> Network:
    """Copy the convolutional base of ``src`` into ``dst`` and freeze its first ``n_frozen`` layers."""
    n_base = len(dst.base_names)
    if not 0 <= n_frozen <= n_base:
        raise ArchitectureError(f"n_frozen must be in [0, {n_base}], got {n_frozen}")
    if src.base_names != dst.base_names or src.in_channels != dst.in_channels:
        raise ArchitectureError("source and destination bases differ")
    for i, name in enumerate(dst.base_names):
        s, d = src.layers[name], dst.layers[name]
        if s.weight.shape != d.weight.shape:
            raise ArchitectureError(f"{name}: shape {s.weight.shape} != {d.weight.shape}")
        d.weight.data = s.weight.data.copy()
        d.bias.data = s.bias.data.copy()
        d.frozen = i < n_frozen
    return dst


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, net: Network, extra: dict | None = None, rng_state: dict | None = None) -> None:
    arrays = {}
    frozen = {}
    for name, layer in net.layers.items():
        arrays[f"{name}.weight"] = layer.weight.data
        arrays[f"{name}.bias"] = layer.bias.data
        frozen[name] = layer.frozen
    meta = {"arch": net.descriptor(), "frozen": frozen, "extra": extra or {},
            "rng_state": rng_state}
    write_container(path, "model", arrays, meta)


def load_checkpoint(path) -> tuple[Network, dict]:
    arrays, meta = read_container(path, "model")
    d = meta["arch"]
    arch = ArchConfig(tuple(d["filters"]), tuple(d["kernels"]), d["dropout"], d["head_units"])
    net = Network(d["in_channels"], d["length"], d["width"], arch, head=d["head"],
                  num_outputs=d["num_outputs"])
    for name, kind in d["layers"]:
        w = Tensor(arrays[f"{name}.weight"], requires_grad=True, name=f"{name}.weight")
        b = Tensor(arrays[f"{name}.bias"], requires_grad=True, name=f"{name}.bias")
        net.layers[name] = Layer(kind, w, b)
        net.layers[name].frozen = meta["frozen"][name]
    return net, meta
