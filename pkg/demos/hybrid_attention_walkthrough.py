"""
Hybrid attention, step by step
==============================

Masks remove blacked-out features before the 1x1 projections, so keys and
values from a missing region are zero. The two query maps are summed, which
means each modality cross-attends where both exist and falls back to
self-attention where one is gone.
"""

import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from hamlpd.attention import (HAParams, apply_mask, attention_weights, combined_query,
                              downsample_mask, hybrid_attention, project_qkv, self_attention)
from hamlpd.blackout import scenario_masks

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(parents=True, exist_ok=True)
torch.set_printoptions(precision=3)

# feature maps on an 8x10 grid with 4 channels, random projections
g = torch.Generator().manual_seed(0)
C, H, W = 4, 8, 10
F_rgb = torch.randn(1, C, H, W, generator=g, dtype=torch.float64)
F_th = torch.randn(1, C, H, W, generator=g, dtype=torch.float64)
params = HAParams.random(C, generator=g, dtype=torch.float64)

# image-resolution sides blackout (RGB left third, thermal right third), pooled to the grid
m_rgb_img, m_th_img = scenario_masks(64, 80, "sides_rt")
m_rgb = torch.from_numpy(downsample_mask(m_rgb_img, H, W)).double()[None]
m_th = torch.from_numpy(downsample_mask(m_th_img, H, W)).double()[None]
print("rgb mask columns :", m_rgb[0, 0].int().tolist())
print("therm mask columns:", m_th[0, 0].int().tolist())

# keys and values vanish where the mask is zero
f = apply_mask(F_rgb, m_rgb)
q_r, k_r, v_r = project_qkv(f, params.w_q_rgb, params.w_k_rgb, params.w_v_rgb)
print("max |K_rgb| inside the RGB blackout:", k_r[..., m_rgb[0] == 0].abs().max().item())

# the combined query drives both attention maps
q_t, k_t, _ = project_qkv(apply_mask(F_th, m_th), params.w_q_thermal, params.w_k_thermal, params.w_v_thermal)
q_c = combined_query(q_r, q_t)
A_rgb = attention_weights(q_c, k_r)[0]
A_th = attention_weights(q_c, k_t)[0]

fig, axes = plt.subplots(1, 2, figsize=(9, 4))
for ax, A, name in zip(axes, (A_rgb, A_th), ("keys: RGB", "keys: thermal")):
    ax.imshow(A.numpy(), cmap="viridis")
    ax.set_title(name)
    ax.set_xlabel("key token (row-major)")
axes[0].set_ylabel("query token")
fig.tight_layout()
fig.savefig(out_dir / "hybrid_attention_weights.png", dpi=80)

# with the RGB sensor gone entirely, the thermal output is plain self-attention
zero = torch.zeros_like(m_rgb)
_, out_th = hybrid_attention(F_rgb, F_th, zero, m_th, params)
ref = self_attention(F_th, m_th, params.w_q_thermal, params.w_k_thermal, params.w_v_thermal)
print("thermal output equals self-attention bit for bit:", torch.equal(out_th, ref))
print("wrote", out_dir / "hybrid_attention_weights.png")
