"""
Blackout scenarios on a synthetic scene
=======================================

One RGB/thermal pair rendered by the synthetic generator, shown under the six
inference conditions. Zeroed pixels are where a modality has no data.
"""

import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from hamlpd.blackout import ALL_SCENARIOS, apply_scenario
from hamlpd.data import SynthConfig, generate_scene, scene_rng

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(parents=True, exist_ok=True)

# a 256x320 scene with a few pedestrians; seed fixed so the figure is stable
cfg = SynthConfig(min_pedestrians=3, max_pedestrians=4, night_fraction=0.0)
pair = generate_scene(scene_rng(0, "train", 3), cfg, "demo")
print("pedestrians:", [(tuple(int(v) for v in g.box), g.visible_rgb, g.visible_thermal) for g in pair.gts])

fig, axes = plt.subplots(2, len(ALL_SCENARIOS), figsize=(3 * len(ALL_SCENARIOS), 5))
for col, scenario in enumerate(ALL_SCENARIOS):
    blacked, m_rgb, m_th = apply_scenario(pair, scenario)
    axes[0, col].imshow(blacked.rgb)
    axes[1, col].imshow(blacked.thermal[..., 0], cmap="inferno", vmin=0, vmax=255)
    axes[0, col].set_title(scenario.value)
    # fraction of the frame each modality still covers
    axes[1, col].set_xlabel(f"rgb {m_rgb.mean():.0%} / thermal {m_th.mean():.0%}")
for ax in axes.flat:
    ax.set_xticks([])
    ax.set_yticks([])
axes[0, 0].set_ylabel("RGB")
axes[1, 0].set_ylabel("thermal")
fig.tight_layout()
fig.savefig(out_dir / "blackout_scenarios.png", dpi=80)
print("wrote", out_dir / "blackout_scenarios.png")
