"""Convolutional trunks producing globally average-pooled feature vectors, and
first-convolution widening so 3-channel trunks accept mask channels."""
from __future__ import annotations

import copy
import re
from collections import OrderedDict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision.models as tvm

FAMILIES = ("densenet121", "densenet201", "resnet34", "tiny")
TINY_FEATURE_DIM = 8

# torchvision's legacy DenseNet checkpoints use "norm.1" style keys
_DENSENET_KEY = re.compile(
    r"^(.*denselayer\d+\.(?:norm|relu|conv))\.((?:[12])\.(?:weight|bias|running_mean|running_var))$"
)


class Trunk(nn.Module):
    """Convolutional body followed by global average pooling.

    ``first_conv`` names the input convolution inside ``body`` so it can be
    widened by :func:`adapt_first_conv`.
    """

    def __init__(self, family: str, body: nn.Module, first_conv: str, feature_dim: int):
        super().__init__()
        self.family = family
        self.body = body
        self.first_conv = first_conv
        self.feature_dim = feature_dim

    @property
    def in_channels(self) -> int:
        return self.body.get_submodule(self.first_conv).in_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"{self.family} trunk expects (N, {self.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        y = self.body(x)
        return F.adaptive_avg_pool2d(y, 1).flatten(1)


def _load_weights(model: nn.Module, path: str | Path, family: str) -> None:
    state = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    if family.startswith("densenet"):
        for key in list(state):
            m = _DENSENET_KEY.match(key)
            if m:
                state[m.group(1) + m.group(2)] = state.pop(key)
    model.load_state_dict(state, strict=False)


def build_trunk(family: str, pretrained_source: str | Path | None = None) -> Trunk:
    """3-channel trunk of the given family; optional weight file (never downloaded)."""
    if family in ("densenet121", "densenet201"):
        net = getattr(tvm, family)(weights=None)
        if pretrained_source:
            _load_weights(net, pretrained_source, family)
        body = nn.Sequential(OrderedDict(features=net.features, relu=nn.ReLU(inplace=False)))
        return Trunk(family, body, "features.conv0", net.classifier.in_features)
    if family == "resnet34":
        net = tvm.resnet34(weights=None)
        if pretrained_source:
            _load_weights(net, pretrained_source, family)
        names = ["conv1", "bn1", "relu", "maxpool", "layer1", "layer2", "layer3", "layer4"]
        body = nn.Sequential(OrderedDict((n, getattr(net, n)) for n in names))
        return Trunk(family, body, "conv1", net.fc.in_features)
    if family == "tiny":
        body = nn.Sequential(OrderedDict(
            conv1=nn.Conv2d(3, 8, 3, stride=2, padding=1),
            relu1=nn.ReLU(),
            conv2=nn.Conv2d(8, TINY_FEATURE_DIM, 3, stride=2, padding=1),
            relu2=nn.ReLU(),
        ))
        if pretrained_source:
            body.load_state_dict(torch.load(pretrained_source, map_location="cpu", weights_only=True))
        return Trunk(family, body, "conv1", TINY_FEATURE_DIM)
    raise ValueError(f"unknown backbone family {family!r}; expected one of {FAMILIES}")


def adapt_first_conv(trunk: Trunk, new_channels: int) -> Trunk:
    """Copy of ``trunk`` whose first convolution takes ``new_channels`` inputs.

    Existing input-channel weights are kept and the extra slices are zero, so
    zero-valued extra channels reproduce the original activations.
    """
    old = trunk.body.get_submodule(trunk.first_conv)
    if new_channels < 3:
        raise ValueError(f"new_channels must be >= 3, got {new_channels}")
    if new_channels < old.in_channels:
        raise ValueError(f"cannot narrow first conv from {old.in_channels} to {new_channels} channels")
    out = copy.deepcopy(trunk)
    if new_channels == old.in_channels:
        return out
    conv = nn.Conv2d(new_channels, old.out_channels, old.kernel_size, stride=old.stride,
                     padding=old.padding, dilation=old.dilation, groups=old.groups,
                     bias=old.bias is not None, padding_mode=old.padding_mode)
    conv = conv.to(dtype=old.weight.dtype)
    with torch.no_grad():
        conv.weight.zero_()
        conv.weight[:, : old.in_channels] = old.weight
        if old.bias is not None:
            conv.bias.copy_(old.bias)
    parent_name, _, leaf = trunk.first_conv.rpartition(".")
    parent = out.body.get_submodule(parent_name) if parent_name else out.body
    setattr(parent, leaf, conv)
    return out


def extract_hidden_features(extractor: Trunk, frame: torch.Tensor) -> torch.Tensor:
    """Pooled post-convolution features; ``frame`` is (C, H, W) or (N, C, H, W)."""
    single = frame.ndim == 3
    feats = extractor(frame.unsqueeze(0) if single else frame)
    return feats[0] if single else feats
