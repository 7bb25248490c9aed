"""Charts and markdown summaries from one or more metrics files."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import MRCurve, read_metrics  # noqa: E402


def load_series(paths, labels=None) -> list[tuple[str, list[dict]]]:
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("at least one metrics file is required")
    labels = list(labels) if labels else [p.stem for p in paths]
    if len(labels) != len(paths):
        raise ValueError(f"got {len(labels)} labels for {len(paths)} metrics files")
    return [(lab, read_metrics(p)) for lab, p in zip(labels, paths)]


def mr_cells(records: list[dict]) -> dict[tuple[str, str], float | None]:
    return {(r["scenario"], r["split"]): r["mr"] for r in records}


def scenarios_of(series) -> list[str]:
    seen = []
    for _, recs in series:
        for r in recs:
            if r["scenario"] not in seen:
                seen.append(r["scenario"])
    return seen


def average_difference(method: list[dict], baseline: list[dict]) -> float | None:
    """Mean of (method MR - baseline MR) over the scenario/split cells both define."""
    a, b = mr_cells(method), mr_cells(baseline)
    diffs = [a[k] - b[k] for k in a if k in b and a[k] is not None and b[k] is not None]
    return float(np.mean(diffs)) if diffs else None


def bar_chart(series, out_dir: Path, split: str = "all") -> tuple[Path, Path]:
    scen = scenarios_of(series)
    values = [[mr_cells(recs).get((s, split)) for s in scen] for _, recs in series]
    csv_path = out_dir / "mr_by_scenario.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario"] + [lab for lab, _ in series])
        for i, s in enumerate(scen):
            w.writerow([s] + ["" if v[i] is None else f"{v[i]:.4f}" for v in values])

    fig, ax = plt.subplots(figsize=(1.6 * len(scen) + 2, 4))
    width = 0.8 / len(series)
    x = np.arange(len(scen))
    for k, (lab, _) in enumerate(series):
        ax.bar(x + (k - (len(series) - 1) / 2) * width, [np.nan if v is None else v for v in values[k]],
               width, label=lab)
    ax.set_xticks(x, scen, rotation=20)
    ax.set_ylabel(f"MR ({split}) %")
    ax.legend()
    fig.tight_layout()
    svg_path = out_dir / "mr_by_scenario.svg"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path, csv_path


def curve_chart(series, out_dir: Path, split: str = "all") -> tuple[Path, Path]:
    """FPPI vs miss-rate curves on log-log axes, one panel per scenario."""
    scen = scenarios_of(series)
    csv_path = out_dir / "curves.csv"
    fig, axes = plt.subplots(1, len(scen), figsize=(3.2 * len(scen), 3.2), squeeze=False)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "scenario", "split", "fppi", "miss_rate"])
        for ax, s in zip(axes[0], scen):
            for lab, recs in series:
                rec = next((r for r in recs if r["scenario"] == s and r["split"] == split), None)
                if rec is None or rec["curve"] is None:
                    continue
                c = MRCurve.from_dict(rec["curve"])
                for f, m in zip(c.fppi, c.miss_rate):
                    w.writerow([lab, s, split, f"{f:.6g}", f"{m:.6g}"])
                # zero fppi cannot sit on a log axis
                fppi = np.maximum(c.fppi, 1e-3)
                ax.step(fppi, c.miss_rate, where="post", label=f"{lab} ({rec['mr']:.1f}%)")
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlim(1e-3, 1e1)
            ax.set_ylim(1e-2, 1.05)
            ax.set_title(s)
            ax.set_xlabel("FPPI")
            ax.legend(fontsize=6)
        axes[0][0].set_ylabel("miss rate")
    fig.tight_layout()
    svg_path = out_dir / "curves.svg"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return svg_path, csv_path


def summary_markdown(series) -> str:
    scen = scenarios_of(series)
    base = series[0][1]
    head = ["method"] + [f"{s} MR(All)" for s in scen] + ["avg. difference"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for k, (lab, recs) in enumerate(series):
        cells = mr_cells(recs)
        row = [lab] + ["-" if cells.get((s, "all")) is None else f"{cells[(s, 'all')]:.2f}" for s in scen]
        diff = None if k == 0 else average_difference(recs, base)
        row.append("-" if diff is None else f"{diff:+.2f}")
        lines.append("| " + " | ".join(row) + " |")
    note = f"\nAverage difference: mean over scenario/split cells of (MR - MR of `{series[0][0]}`).\n"
    return "\n".join(lines) + "\n" + note


def write_report(metrics_paths, out_dir, labels=None) -> dict[str, Path]:
    series = load_series(metrics_paths, labels)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bar_svg, bar_csv = bar_chart(series, out)
    cur_svg, cur_csv = curve_chart(series, out)
    md = out / "summary.md"
    md.write_text(summary_markdown(series))
    return {"bar_svg": bar_svg, "bar_csv": bar_csv, "curves_svg": cur_svg, "curves_csv": cur_csv, "summary": md}
