"""``hamlpd`` command line: synth, train, eval, simulate, report.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from PIL import Image

from . import config as config_mod
from .blackout import ALL_SCENARIOS, Scenario, apply_scenario
from .data import generate_dataset, load_manifest, load_split, write_pair
from .evaluation import write_metrics
from .model import CheckpointError, load_checkpoint, read_checkpoint_header
from .trainer import TrainingDiverged, evaluate_scenarios, train

log = logging.getLogger("hamlpd")


class CommandError(Exception):
    """Runtime failure reported as ``error: ...`` with exit code 1."""


def _require_dataset(path) -> Path:
    path = Path(path)
    try:
        load_manifest(path)
    except FileNotFoundError as e:
        raise CommandError(f"no dataset at {path}: {e}") from None
    return path


def cmd_synth(args) -> int:
    cfg = config_mod.load(args.config) if args.config else config_mod.from_dict({})
    try:
        generate_dataset(cfg.synth, args.out)
    except OSError as e:
        raise CommandError(str(e)) from None
    print(Path(args.out) / "manifest.json")
    return 0


def cmd_train(args) -> int:
    cfg = config_mod.load(args.config) if args.config else config_mod.from_dict({})
    data = _require_dataset(args.data)
    if "no-ha" in args.ablate:
        cfg.model.backbone.use_ha = False
    if "no-aug" in args.ablate:
        cfg.train.masking = None
    pairs = load_split(data, args.split)
    if not pairs:
        raise CommandError(f"split {args.split!r} of {data} is empty")
    size = tuple(pairs[0].rgb.shape[:2])
    if size != tuple(cfg.model.image_size):
        raise CommandError(f"dataset images are {size[0]}x{size[1]} but the model expects "
                           f"{cfg.model.image_size[0]}x{cfg.model.image_size[1]}")
    try:
        res = train(pairs, cfg.model, cfg.train, out_dir=args.out)
    except TrainingDiverged as e:
        raise CommandError(str(e)) from None
    print(res.checkpoint)
    return 0


def _parse_scenarios(raw: str) -> list[Scenario]:
    if raw == "all":
        return list(ALL_SCENARIOS)
    return [Scenario.parse(s.strip()) for s in raw.split(",") if s.strip()]


def cmd_eval(args) -> int:
    try:
        header = read_checkpoint_header(args.checkpoint)
        model = load_checkpoint(args.checkpoint)
    except CheckpointError as e:
        raise CommandError(str(e)) from None
    data = _require_dataset(args.data)
    min_height = args.min_height
    if min_height is None:
        min_height = header.get("extra", {}).get("train", {}).get("min_height", 55.0)
    pairs = load_split(data, args.split)
    table = evaluate_scenarios(model, pairs, args.scenarios, min_height=min_height)
    text = table.format()
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_metrics(out, table.records)
        out.with_suffix(".txt").write_text(text + "\n")
    return 0


def _write_mask(path, m):
    Image.fromarray(m.astype(bool)).convert("1").save(path)


def cmd_simulate(args) -> int:
    data = _require_dataset(args.data)
    out = Path(args.out)
    pairs = load_split(data, args.split)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in pairs:
        blacked, m_rgb, m_th = apply_scenario(pair, args.scenario)
        write_pair(out, blacked)
        _write_mask(out / "masks" / f"{pair.image_id}_rgb.png", m_rgb)
        _write_mask(out / "masks" / f"{pair.image_id}_thermal.png", m_th)
        entries.append({"image_id": pair.image_id, "tag": pair.tag})
    manifest = {"scenario": args.scenario.value, "source": str(data), args.split: entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(out / "manifest.json")
    return 0


def cmd_report(args) -> int:
    from .report import write_report

    missing = [p for p in args.metrics if not Path(p).is_file()]
    if missing:
        raise CommandError(f"metrics file not found: {', '.join(missing)}")
    try:
        paths = write_report(args.metrics, args.out, args.labels)
    except (KeyError, json.JSONDecodeError) as e:
        raise CommandError(f"malformed metrics file: {e}") from None
    print(paths["summary"])
    return 0


def _scenario_arg(raw):
    try:
        return Scenario.parse(raw)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _scenarios_arg(raw):
    try:
        return _parse_scenarios(raw)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hamlpd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--config", help="experiment JSON (uses its 'synth' section)")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    t = sub.add_parser("train", help="train a detector on a dataset directory")
    t.add_argument("--config", help="experiment JSON ('model' and 'train' sections)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--ablate", action="append", default=[], choices=["no-ha", "no-aug"],
                   help="drop hybrid attention and/or masking augmentation (repeatable)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="MR table over blackout scenarios")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--scenarios", type=_scenarios_arg, default=list(ALL_SCENARIOS),
                   help="comma-separated scenario names or 'all'")
    e.add_argument("--min-height", type=float, default=None,
                   help="reasonable-subset height (default: the value used in training)")
    e.add_argument("--out", help="metrics JSON path; an aligned .txt table is written next to it")
    e.set_defaults(fn=cmd_eval)

    m = sub.add_parser("simulate", help="write blackout-applied pairs and their masks")
    m.add_argument("--data", required=True)
    m.add_argument("--scenario", type=_scenario_arg, required=True)
    m.add_argument("--split", default="test")
    m.add_argument("--out", required=True)
    m.set_defaults(fn=cmd_simulate)

    r = sub.add_parser("report", help="charts and markdown summary from metrics files")
    r.add_argument("--metrics", nargs="+", required=True, help="first file is the baseline")
    r.add_argument("--labels", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "report" and args.labels and len(args.labels) != len(args.metrics):
        parser.error("--labels must match --metrics one to one")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (CommandError, config_mod.ConfigError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
