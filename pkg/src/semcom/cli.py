"""Command-line entry point.

Subcommands: synth, train, sweep, detect, bench, kb-sim. Every run is
reproducible from (--config, --seed); CSV files are byte-stable, figures
are rendered next to them unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dataset as ds
from . import harness, report
from .channel import RngStream
from .errors import SemcomError


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None,
                   help="JSON experiment config (all fields optional)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config base seed")
    p.add_argument("--out", type=Path, default=Path("out"),
                   help="output directory (default: ./out)")
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering, write CSV only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semcom",
        description="Desk-scale cooperative semantic communication experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate the synthetic dataset containers"),
        ("train", "train the learned codecs and save checkpoints"),
        ("sweep", "classification sweep over schemes and SNRs"),
        ("detect", "multi-view detection experiment"),
        ("bench", "per-image runtime comparison of both chains"),
        ("kb-sim", "run the knowledge-base update simulation"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--models", type=Path, default=None,
                           help="checkpoint directory (default: --out)")
        if name == "detect" or name == "bench":
            p.add_argument("--models", type=Path, default=None)
    return parser


def _models_dir(args) -> Path:
    return args.models if getattr(args, "models", None) else args.out


def cmd_synth(cfg, args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    stream = RngStream(cfg.base_seed)
    det, cls = ds.synth_dataset(cfg.dataset, stream,
                                det_count=cfg.sweep.det_test_scenes,
                                cls_count=cfg.sweep.test_scenes)
    cls_path = out / "classification.svds"
    det_path = out / "detection.svds"
    ds.save_svds(cls, cfg.dataset, "classification", cls_path)
    ds.save_svds(det, cfg.dataset, "detection", det_path)
    print(f"wrote {cls_path} ({len(cls)} scenes) and {det_path} ({len(det)} scenes)")
    return 0


def cmd_train(cfg, args) -> int:
    models, history = harness.train_models(cfg)
    paths = harness.save_models(models, args.out)
    hist_path = args.out / "train_history.csv"
    harness.write_history_csv(history, hist_path)
    print("checkpoints:", ", ".join(str(p) for p in paths))
    print("history:", hist_path)
    if not args.no_figures:
        print("figure:", report.plot_history(history, args.out / "train_history.png"))
    return 0


def cmd_sweep(cfg, args) -> int:
    models = harness.load_models(cfg, _models_dir(args))
    records = harness.run_classification_sweep(cfg, models)
    csv_path = harness.emit_csv(records, args.out / "classification_sweep.csv")
    print("records:", csv_path)
    k, budget = harness.classification_budgets(cfg)
    print(f"channel budget: learned {k} symbols/image, "
          f"digital {budget} symbols/image")
    if not args.no_figures:
        print("figure:", report.plot_classification(
            records, args.out / "classification_sweep.png"))
    return 0


def cmd_detect(cfg, args) -> int:
    models = harness.load_models(cfg, _models_dir(args))
    records = harness.run_detection_experiment(cfg, models)
    csv_path = harness.emit_csv(records, args.out / "detection_experiment.csv")
    print("records:", csv_path)
    if not args.no_figures:
        print("figure:", report.plot_detection(
            records, args.out / "detection_experiment.png"))
    return 0


def cmd_bench(cfg, args) -> int:
    models = harness.load_models(cfg, _models_dir(args))
    records = harness.bench(cfg, models)
    csv_path = harness.emit_csv(records, args.out / "bench.csv")
    print("records:", csv_path)
    for r in harness.sort_records(records):
        if r.metric == "wall_ms":
            print(f"  {r.scheme}: {r.value:.2f} ms/image (median)")
    if not args.no_figures:
        print("figure:", report.plot_bench(records, args.out / "bench.png"))
    return 0


def cmd_kb_sim(cfg, args) -> int:
    trace, nodes = harness.kb_demo(seed=cfg.base_seed)
    args.out.mkdir(parents=True, exist_ok=True)
    trace_path = args.out / "kb_trace.txt"
    trace_path.write_text("\n".join(trace) + "\n", encoding="utf-8")
    servers = {nid: n for nid, n in nodes.items() if n.kind == "edge_server"}
    versions = {nid: n.shared_version for nid, n in sorted(servers.items())}
    print("trace:", trace_path, f"({len(trace)} events)")
    print("final shared versions:", versions)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "detect": cmd_detect,
    "bench": cmd_bench,
    "kb-sim": cmd_kb_sim,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = harness.load_config(args.config, seed=args.seed)
    try:
        return _COMMANDS[args.command](cfg, args)
    except SemcomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
