"""Hybrid attention over two modality feature maps.

Features are masked by modality availability, projected to queries, keys and
values with bias-free 1x1 convolutions, and attended with the *sum* of the two
queries. Where one modality is blacked out its queries, keys and values are
exactly zero, so the other modality falls back to self-attention there.

Feature maps are ``(B, C, H, W)`` tensors; masks are ``(B, H, W)`` or ``(H, W)``
binary maps at the same spatial resolution.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn


def _as_tensor(x, dtype=None):
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _check_binary(m: torch.Tensor, name="mask"):
    if not bool(((m == 0) | (m == 1)).all()):
        raise ValueError(f"{name} must be binary (0/1)")


def _area_weights(src: int, dst: int) -> torch.Tensor:
    """``(dst, src)`` matrix whose rows average the source cells covered by each target cell."""
    edges = np.arange(dst + 1) * (src / dst)
    w = np.zeros((dst, src))
    for i in range(dst):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), min(src, int(np.ceil(hi)))):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return torch.from_numpy(w / w.sum(axis=1, keepdims=True))


def downsample_mask(mask, target_h: int, target_w: int):
    """Area-average ``mask`` to ``target_h x target_w`` and threshold at 0.5 (ties -> 1).

    Accepts ``(H, W)`` or ``(B, H, W)``; returns the same container kind
    (numpy uint8 in, numpy uint8 out; tensors stay tensors).
    """
    was_numpy = not isinstance(mask, torch.Tensor)
    m = _as_tensor(mask)
    _check_binary(m)
    h, w = m.shape[-2:]
    if not (1 <= target_h <= h and 1 <= target_w <= w):
        raise ValueError(f"cannot downsample {h}x{w} mask to {target_h}x{target_w}")
    if (target_h, target_w) == (h, w):
        out = (m != 0)
    else:
        md = m.to(torch.float64)
        avg = _area_weights(h, target_h) @ md @ _area_weights(w, target_w).T
        out = avg >= 0.5 - 1e-9
    if was_numpy:
        return out.numpy().astype(np.uint8)
    return out.to(mask.dtype if mask.dtype.is_floating_point else torch.uint8)


def _mask4d(m: torch.Tensor, f: torch.Tensor) -> torch.Tensor:
    m = _as_tensor(m)
    if m.dim() == 2:
        m = m.unsqueeze(0)
    if m.shape[-2:] != f.shape[-2:]:
        raise ValueError(f"mask {tuple(m.shape[-2:])} does not match features {tuple(f.shape[-2:])}")
    if m.shape[0] not in (1, f.shape[0]):
        raise ValueError(f"mask batch {m.shape[0]} does not match feature batch {f.shape[0]}")
    return m.to(f.dtype).unsqueeze(1)


def apply_mask(f: torch.Tensor, m) -> torch.Tensor:
    """Zero every channel of ``f`` wherever ``m`` is 0."""
    return f * _mask4d(m, f)


def _conv1x1(f: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    return torch.einsum("oc,bchw->bohw", w, f)


def project_qkv(f: torch.Tensor, w_q, w_k, w_v):
    c = f.shape[1]
    for name, w in (("W_Q", w_q), ("W_K", w_k), ("W_V", w_v)):
        if tuple(w.shape) != (c, c):
            raise ValueError(f"{name} has shape {tuple(w.shape)}, expected ({c}, {c})")
    return _conv1x1(f, w_q), _conv1x1(f, w_k), _conv1x1(f, w_v)


def combined_query(q_rgb: torch.Tensor, q_thermal: torch.Tensor) -> torch.Tensor:
    if q_rgb.shape != q_thermal.shape:
        raise ValueError(f"query shapes differ: {tuple(q_rgb.shape)} vs {tuple(q_thermal.shape)}")
    return q_rgb + q_thermal


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Row-stochastic ``(B, N, N)`` matrix; tokens are (y, x) positions in row-major order."""
    b, c = q.shape[:2]
    qt = q.reshape(b, c, -1).transpose(1, 2)
    kt = k.reshape(b, c, -1)
    logits = torch.bmm(qt, kt) / math.sqrt(c)
    return torch.softmax(logits, dim=-1)


def attend(q_c: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """``softmax(Q^T K / sqrt(C)) V`` over flattened spatial tokens, reshaped back to maps."""
    if not (q_c.shape == k.shape == v.shape):
        raise ValueError("query, key and value maps must share a shape")
    for t in (q_c, k, v):
        if not bool(torch.isfinite(t).all()):
            raise ValueError("attention inputs must be finite")
    b, c, h, w = v.shape
    a = attention_weights(q_c, k)
    vt = v.reshape(b, c, -1).transpose(1, 2)
    return torch.bmm(a, vt).transpose(1, 2).reshape(b, c, h, w)


@dataclasses.dataclass(frozen=True)
class HAParams:
    w_q_rgb: torch.Tensor
    w_k_rgb: torch.Tensor
    w_v_rgb: torch.Tensor
    w_q_thermal: torch.Tensor
    w_k_thermal: torch.Tensor
    w_v_thermal: torch.Tensor

    @classmethod
    def random(cls, channels: int, generator=None, dtype=torch.float64, std=None) -> "HAParams":
        std = 1.0 / math.sqrt(channels) if std is None else std
        ws = [torch.randn(channels, channels, generator=generator, dtype=dtype) * std for _ in range(6)]
        return cls(*ws)

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in dataclasses.fields(self))


def self_attention(f_in: torch.Tensor, m, w_q, w_k, w_v) -> torch.Tensor:
    """Single-modality reference: ``m*F + softmax(Q^T K) V`` from that modality alone."""
    f = apply_mask(f_in, m)
    q, k, v = project_qkv(f, w_q, w_k, w_v)
    return f + attend(q, k, v)


def hybrid_attention(f_rgb_in, f_thermal_in, m_rgb, m_thermal, params: HAParams):
    """Return the enhanced ``(f'_rgb, f'_thermal)`` maps (masked features + attended features)."""
    if f_rgb_in.shape != f_thermal_in.shape:
        raise ValueError(
            f"feature shapes differ: {tuple(f_rgb_in.shape)} vs {tuple(f_thermal_in.shape)}"
        )
    f_rgb = apply_mask(f_rgb_in, m_rgb)
    f_th = apply_mask(f_thermal_in, m_thermal)
    q_rgb, k_rgb, v_rgb = project_qkv(f_rgb, params.w_q_rgb, params.w_k_rgb, params.w_v_rgb)
    q_th, k_th, v_th = project_qkv(f_th, params.w_q_thermal, params.w_k_thermal, params.w_v_thermal)
    q_c = combined_query(q_rgb, q_th)
    return f_rgb + attend(q_c, k_rgb, v_rgb), f_th + attend(q_c, k_th, v_th)


class HybridAttention(nn.Module):
    """Learnable hybrid-attention block holding the six 1x1 projections."""

    def __init__(self, channels: int, init_std: float = 0.01):
        super().__init__()
        self.channels = channels
        names = ("q_rgb", "k_rgb", "v_rgb", "q_thermal", "k_thermal", "v_thermal")
        self.proj = nn.ModuleDict({n: nn.Conv2d(channels, channels, 1, bias=False) for n in names})
        for conv in self.proj.values():
            nn.init.normal_(conv.weight, std=init_std)

    def params(self) -> HAParams:
        p = {n: c.weight[:, :, 0, 0] for n, c in self.proj.items()}
        return HAParams(
            p["q_rgb"], p["k_rgb"], p["v_rgb"], p["q_thermal"], p["k_thermal"], p["v_thermal"]
        )

    def forward(self, f_rgb, f_thermal, m_rgb, m_thermal):
        return hybrid_attention(f_rgb, f_thermal, m_rgb, m_thermal, self.params())
