"""Two-branch feature extractor with hybrid attention after the first stage and
per-level concat fusion."""
from __future__ import annotations

import dataclasses
import math

import torch
from torch import nn

from .attention import HybridAttention, downsample_mask


@dataclasses.dataclass
class StageSpec:
    out_channels: int
    stride: int = 2
    depth: int = 1

    def __post_init__(self):
        if self.out_channels < 1 or self.depth < 1:
            raise ValueError("stage channels and depth must be positive")
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ValueError(f"stage stride {self.stride} is not a power of two")


@dataclasses.dataclass
class BackboneConfig:
    """Stage layout shared by both branches.

    The first stage ends where hybrid attention is inserted; ``fusion_levels``
    are stage indices whose outputs are fused and handed to the detector.
    """

    stages: list[StageSpec] = dataclasses.field(
        default_factory=lambda: [StageSpec(8, 4), StageSpec(16, 2), StageSpec(32, 2), StageSpec(64, 2)]
    )
    fusion_levels: tuple[int, ...] | None = None
    fusion_channels: tuple[int, ...] | None = None
    rgb_channels: int = 3
    thermal_channels: int = 1
    use_ha: bool = True
    bn_momentum: float = 0.1
    init_std: float = 0.01

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageSpec) else StageSpec(*s) if isinstance(s, (list, tuple))
                       else StageSpec(**s) for s in self.stages]
        if len(self.stages) < 2:
            raise ValueError("need at least two stages (one before and one after attention)")
        n = len(self.stages)
        if self.fusion_levels is None:
            self.fusion_levels = tuple(range(max(0, n - 3), n))
        self.fusion_levels = tuple(int(i) for i in self.fusion_levels)
        if any(not 0 <= i < n for i in self.fusion_levels) or list(self.fusion_levels) != sorted(set(self.fusion_levels)):
            raise ValueError(f"fusion levels {self.fusion_levels} must be increasing stage indices")
        if self.fusion_channels is None:
            self.fusion_channels = tuple(self.stages[i].out_channels for i in self.fusion_levels)
        self.fusion_channels = tuple(int(c) for c in self.fusion_channels)
        if len(self.fusion_channels) != len(self.fusion_levels):
            raise ValueError("one fusion channel count per fusion level")

    @property
    def cumulative_strides(self) -> list[int]:
        out, s = [], 1
        for st in self.stages:
            s *= st.stride
            out.append(s)
        return out

    @property
    def level_strides(self) -> list[int]:
        cs = self.cumulative_strides
        return [cs[i] for i in self.fusion_levels]

    def check_input(self, h: int, w: int):
        total = self.cumulative_strides[-1]
        if h % total or w % total:
            raise ValueError(f"input {h}x{w} is not divisible by the total stride {total}")

    def level_shapes(self, h: int, w: int) -> list[tuple[int, int]]:
        self.check_input(h, w)
        return [(h // s, w // s) for s in self.level_strides]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fusion_levels"] = list(self.fusion_levels)
        d["fusion_channels"] = list(self.fusion_channels)
        return d


def conv_bn_relu(cin, cout, k=3, stride=1, momentum=0.1, bias=False):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=bias),
        nn.BatchNorm2d(cout, momentum=momentum),
        nn.ReLU(inplace=True),
    )


class Stage(nn.Sequential):
    """conv3x3-BN-ReLU repeated ``depth`` times; a stride above 2 becomes a chain of stride-2 convs."""

    def __init__(self, in_channels: int, spec: StageSpec, momentum=0.1):
        n_down = int(math.log2(spec.stride))
        layers, cin = [], in_channels
        for i in range(max(spec.depth, n_down)):
            layers.append(conv_bn_relu(cin, spec.out_channels, 3, 2 if i < n_down else 1, momentum))
            cin = spec.out_channels
        super().__init__(*layers)
        self.in_channels = in_channels
        self.out_channels = spec.out_channels
        self.stride = spec.stride


def extract_stage(x: torch.Tensor, stage: Stage) -> torch.Tensor:
    if x.shape[1] != stage.in_channels:
        raise ValueError(f"stage expects {stage.in_channels} channels, got {x.shape[1]}")
    return stage(x)


class FusionLayer(nn.Module):
    """Concatenate both modalities along channels, then conv1x1 + BN + ReLU."""

    def __init__(self, c_rgb: int, c_thermal: int, out_channels: int, momentum=0.1):
        super().__init__()
        self.conv = nn.Conv2d(c_rgb + c_thermal, out_channels, 1, bias=True)
        self.bn = nn.BatchNorm2d(out_channels, momentum=momentum)
        self.out_channels = out_channels

    def forward(self, f_rgb, f_thermal):
        return torch.relu(self.bn(self.conv(torch.cat([f_rgb, f_thermal], dim=1))))


def fuse_level(f_rgb: torch.Tensor, f_thermal: torch.Tensor, fusion: FusionLayer) -> torch.Tensor:
    if f_rgb.shape[-2:] != f_thermal.shape[-2:]:
        raise ValueError(f"cannot fuse {tuple(f_rgb.shape[-2:])} with {tuple(f_thermal.shape[-2:])}")
    return fusion(f_rgb, f_thermal)


def init_weights(module: nn.Module, std: float = 0.01):
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, std=std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        mom = cfg.bn_momentum

        def branch(cin):
            stages = []
            for spec in cfg.stages:
                stages.append(Stage(cin, spec, mom))
                cin = spec.out_channels
            return nn.ModuleList(stages)

        self.rgb = branch(cfg.rgb_channels)
        self.thermal = branch(cfg.thermal_channels)
        self.ha = HybridAttention(cfg.stages[0].out_channels, cfg.init_std) if cfg.use_ha else None
        self.fusion = nn.ModuleList(
            FusionLayer(cfg.stages[i].out_channels, cfg.stages[i].out_channels, c, mom)
            for i, c in zip(cfg.fusion_levels, cfg.fusion_channels)
        )
        init_weights(self, cfg.init_std)

    def forward(self, rgb, thermal, m_rgb=None, m_thermal=None) -> list[torch.Tensor]:
        """Fused pyramid, one map per fusion level.

        ``m_rgb``/``m_thermal`` are ``(B, H, W)`` availability maps at image
        resolution; ``None`` means fully available.
        """
        if rgb.shape[0] != thermal.shape[0] or rgb.shape[-2:] != thermal.shape[-2:]:
            raise ValueError(f"rgb {tuple(rgb.shape)} and thermal {tuple(thermal.shape)} are not co-registered")
        self.cfg.check_input(*rgb.shape[-2:])
        fr = extract_stage(rgb, self.rgb[0])
        ft = extract_stage(thermal, self.thermal[0])
        if self.ha is not None:
            h, w = fr.shape[-2:]
            mr = torch.ones(fr.shape[0], h, w, dtype=fr.dtype) if m_rgb is None else downsample_mask(m_rgb, h, w).to(fr.dtype)
            mt = torch.ones(fr.shape[0], h, w, dtype=fr.dtype) if m_thermal is None else downsample_mask(m_thermal, h, w).to(fr.dtype)
            fr, ft = self.ha(fr, ft, mr, mt)
        feats = [(fr, ft)]
        for i in range(1, len(self.cfg.stages)):
            fr = extract_stage(fr, self.rgb[i])
            ft = extract_stage(ft, self.thermal[i])
            feats.append((fr, ft))
        return [fuse_level(*feats[lvl], fusion) for lvl, fusion in zip(self.cfg.fusion_levels, self.fusion)]
