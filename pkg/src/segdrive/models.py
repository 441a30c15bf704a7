"""The three regressors and their shared twin regression towers.

All models map their input to a ``(N, 2)`` tensor of normalized
``(speed, angle)`` predictions.

* ``A``: single frame + mask, ``(N, 3+C, H, W)``
* ``B``: ten frames + masks stacked on channels, ``(N, 10*(3+C), H, W)``
* ``C``: ten frames + masks as a sequence, ``(N, 10, 3+C, H, W)``, through
  three feature extractors, a fuse MLP and a bidirectional GRU
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
import torch.nn as nn

from . import SEQ_LEN
from .backbones import Trunk, adapt_first_conv, build_trunk
from .errors import ConfigError

MODEL_IDS = ("A", "B", "C")
TOWER_AB = (200, 50, 10)
TOWER_C = (256, 128, 32)


class Tower(nn.Module):
    """Dense stack ending in one scalar: (Linear -> BatchNorm -> ReLU) per hidden
    layer, then a bare Linear. ``norm=False`` swaps BatchNorm for identity."""

    def __init__(self, in_dim: int, layer_sizes: Sequence[int], norm: bool = True):
        super().__init__()
        if any(s <= 0 for s in layer_sizes) or in_dim <= 0:
            raise ValueError(f"layer sizes must be positive: {in_dim}, {list(layer_sizes)}")
        self.in_dim = in_dim
        self.layer_sizes = tuple(layer_sizes)
        layers: list[nn.Module] = []
        prev = in_dim
        for size in layer_sizes:
            layers += [nn.Linear(prev, size), nn.BatchNorm1d(size) if norm else nn.Identity(), nn.ReLU()]
            prev = size
        layers.append(nn.Linear(prev, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.ndim != 2 or features.shape[1] != self.in_dim:
            raise ValueError(f"tower expects (N, {self.in_dim}) features, got {tuple(features.shape)}")
        return self.net(features).squeeze(1)


def tower_forward(features: torch.Tensor, tower: Tower) -> torch.Tensor:
    """(D,) -> scalar tensor, or (N, D) -> (N,)."""
    if features.ndim == 1:
        return tower(features.unsqueeze(0))[0]
    return tower(features)


class TwinHead(nn.Module):
    def __init__(self, in_dim: int, layer_sizes: Sequence[int], norm: bool = True):
        super().__init__()
        self.speed = Tower(in_dim, layer_sizes, norm)
        self.angle = Tower(in_dim, layer_sizes, norm)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return torch.stack([self.speed(features), self.angle(features)], dim=1)


def _check_input(x: torch.Tensor, shape_tail: tuple[int, ...], what: str) -> None:
    ok = x.ndim == len(shape_tail) + 1 and all(
        want is None or have == want for have, want in zip(x.shape[1:], shape_tail)
    )
    if not ok:
        tail = ", ".join("*" if s is None else str(s) for s in shape_tail)
        raise ValueError(f"{what} expects input (N, {tail}), got {tuple(x.shape)}")


class CNNRegressor(nn.Module):
    """Trunk -> pooled features -> speed and angle towers (models A and B)."""

    def __init__(self, trunk: Trunk, in_channels: int, tower_sizes: Sequence[int] = TOWER_AB,
                 tower_norm: bool = True):
        super().__init__()
        if trunk.in_channels != in_channels:
            trunk = adapt_first_conv(trunk, in_channels)
        self.in_channels = in_channels
        self.trunk = trunk
        self.head = TwinHead(trunk.feature_dim, tower_sizes, tower_norm)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, (self.in_channels, None, None), type(self).__name__)
        return self.head(self.trunk(x))


class SingleFrameCNN(CNNRegressor):
    """Model A."""


class StackedCNN(CNNRegressor):
    """Model B."""


class BiGRURegressor(nn.Module):
    """Model C.

    Per frame: the three extractor features are concatenated and fused to a
    vector. The fused sequence runs through a bidirectional GRU; the last
    time step (both directions) is joined with the newest frame's fused
    vector after a separate dense block, then fed to the towers.
    """

    def __init__(self, extractors: Sequence[Trunk], in_channels: int,
                 fuse_sizes: Sequence[int] = (512, 128), dropout: float = 0.5,
                 gru_hidden: int = 64, gru_layers: int = 3,
                 tower_sizes: Sequence[int] = TOWER_C, tower_norm: bool = True,
                 freeze_extractors: bool = True, seq_len: int = SEQ_LEN):
        super().__init__()
        if len(extractors) == 0:
            raise ValueError("model C needs at least one feature extractor")
        self.in_channels = in_channels
        self.seq_len = seq_len
        self.freeze_extractors = freeze_extractors
        self.extractors = nn.ModuleList(
            t if t.in_channels == in_channels else adapt_first_conv(t, in_channels) for t in extractors
        )
        if freeze_extractors:
            for p in self.extractors.parameters():
                p.requires_grad_(False)

        fuse: list[nn.Module] = []
        prev = sum(t.feature_dim for t in self.extractors)
        for size in fuse_sizes:
            fuse += [nn.Linear(prev, size), nn.ReLU(), nn.Dropout(dropout)]
            prev = size
        self.fuse = nn.Sequential(*fuse)
        self.fused_dim = prev
        self.gru = nn.GRU(prev, gru_hidden, num_layers=gru_layers, batch_first=True, bidirectional=True)
        self.skip = nn.Sequential(nn.Linear(prev, prev), nn.ReLU())
        self.head = TwinHead(2 * gru_hidden + prev, tower_sizes, tower_norm)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.freeze_extractors:
            # frozen trunks keep their running statistics
            self.extractors.eval()
        return self

    def frame_features(self, frames: torch.Tensor) -> torch.Tensor:
        """(M, C, H, W) -> (M, fused_dim)."""
        feats = torch.cat([t(frames) for t in self.extractors], dim=1)
        return self.fuse(feats)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, (self.seq_len, self.in_channels, None, None), "BiGRURegressor")
        n, t = x.shape[:2]
        fused = self.frame_features(x.flatten(0, 1)).view(n, t, -1)
        seq_out, _ = self.gru(fused)
        joined = torch.cat([seq_out[:, -1], self.skip(fused[:, -1])], dim=1)
        return self.head(joined)


# --------------------------------------------------------------------------
# construction


@dataclass
class ArchConfig:
    backbone: str = "densenet121"
    pretrained: str | None = None
    num_classes: int = 20
    tower_norm: bool = True
    tower_sizes: list[int] | None = None
    # model C
    extractors: list[str] = field(default_factory=lambda: ["resnet34", "densenet121", "model_a"])
    extractor_weights: dict[str, str] = field(default_factory=dict)
    model_a_checkpoint: str | None = None
    fuse_sizes: list[int] = field(default_factory=lambda: [512, 128])
    dropout: float = 0.5
    gru_hidden: int = 64
    gru_layers: int = 3
    freeze_extractors: bool = True

    @property
    def frame_channels(self) -> int:
        return 3 + self.num_classes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict | None) -> "ArchConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        cfg = cls(**data)
        if not 0.0 <= cfg.dropout <= 1.0:
            raise ConfigError(f"model.dropout={cfg.dropout} outside [0, 1]")
        return cfg


def input_channels(model_id: str, arch: ArchConfig) -> int:
    return arch.frame_channels * (SEQ_LEN if model_id == "B" else 1)


def _model_a_trunk(arch: ArchConfig) -> Trunk:
    trunk = adapt_first_conv(build_trunk(arch.backbone, arch.pretrained), arch.frame_channels)
    if arch.model_a_checkpoint:
        from .checkpoint import load_checkpoint

        ckpt = load_checkpoint(arch.model_a_checkpoint)
        if ckpt["model_id"] != "A":
            raise ConfigError(f"{arch.model_a_checkpoint} holds model {ckpt['model_id']}, not A")
        prefix = "trunk."
        trunk.load_state_dict({k[len(prefix):]: v for k, v in ckpt["state_dict"].items() if k.startswith(prefix)})
    return trunk


def build_model(model_id: str, arch: ArchConfig | None = None) -> nn.Module:
    arch = arch or ArchConfig()
    if model_id not in MODEL_IDS:
        raise ConfigError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")
    if model_id in ("A", "B"):
        cls = SingleFrameCNN if model_id == "A" else StackedCNN
        return cls(build_trunk(arch.backbone, arch.pretrained), input_channels(model_id, arch),
                   arch.tower_sizes or TOWER_AB, arch.tower_norm)
    extractors = []
    for family in arch.extractors:
        if family == "model_a":
            extractors.append(_model_a_trunk(arch))
        else:
            extractors.append(build_trunk(family, arch.extractor_weights.get(family)))
    return BiGRURegressor(
        extractors, arch.frame_channels, arch.fuse_sizes, arch.dropout, arch.gru_hidden,
        arch.gru_layers, arch.tower_sizes or TOWER_C, arch.tower_norm, arch.freeze_extractors,
    )


def parameter_count(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)
