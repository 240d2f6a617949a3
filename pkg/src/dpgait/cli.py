"""Command-line entry point: ``dpgait <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence (or a
failed gradient check).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import __version__
from .errors import DpgError, UsageError
from .skeleton_io import (DEFAULT_CONFIDENCE_FLOOR, DatasetManifest, ManifestEntry, Target,
                          impute_missing, ingest_clip_csv, ingest_pose_json, slice_windows,
                          split_by_patient, write_clip_csv)

log = logging.getLogger("dpgait")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def _float_tuple(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _target(text: str) -> Target:
    try:
        return Target.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _write_invocation(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    flags = {k: (v.value if isinstance(v, Target) else list(v) if isinstance(v, tuple) else v)
             for k, v in vars(args).items() if k != "func"}
    doc = {"version": __version__, "command": args.command, "flags": flags,
           "seed": flags.get("seed")}
    path = out_dir / "invocation.json"
    # eval writes next to train by default; keep the earlier record under its command name
    if path.exists():
        try:
            previous = json.loads(path.read_text()).get("command")
        except ValueError:
            previous = None
        if previous and previous != args.command:
            path.replace(out_dir / f"invocation.{previous}.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    from .synth import write_synthetic

    if args.n_videos < 1:
        raise UsageError("--n-videos must be >= 1")
    out = Path(args.out_dir)
    manifest = write_synthetic(out, args.n_videos, args.frames_per_video, args.seed,
                               args.videos_per_patient, args.pose_json)
    _write_invocation(out, args)
    print(f"wrote {len(manifest)} clips from {args.n_videos} videos to {out}")
    return EXIT_OK


def _pose_video_dirs(path: Path) -> list[Path]:
    if any(p.suffix.lower() == ".json" for p in path.iterdir()):
        return [path]
    return sorted(p for p in path.iterdir() if p.is_dir())


def _is_manifest(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        return fh.readline().strip().split(",")[0] == "clip_path"


def cmd_encode(args) -> int:
    from .pattern_encoder import encode_pair, write_pair

    src, out = Path(args.input), Path(args.out_dir)
    if not src.exists():
        raise UsageError(f"input {src} does not exist")
    sides = ("L", "R") if args.side == "both" else (args.side,)
    image_dir = out / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    # (clip, manifest entry) pairs to encode
    work: list[tuple] = []
    if src.is_dir():
        clip_dir = out / "clips"
        clip_dir.mkdir(parents=True, exist_ok=True)
        videos = _pose_video_dirs(src)
        for vdir in videos:
            vid = vdir.name
            pid = args.patient_id or vid
            frames = ingest_pose_json(vdir, vid)
            for clip in slice_windows(frames, vid, pid):
                clip = impute_missing(clip, args.confidence_floor)
                rel = f"clips/{vid}_{clip.start_frame}.csv"
                write_clip_csv(clip, out / rel)
                work.append((clip, ManifestEntry(rel, vid, pid)))
        log.info("ingested %d videos into %d clips", len(videos), len(work))
    elif _is_manifest(src):
        manifest = DatasetManifest.read_csv(src)
        for e in manifest:
            clip = impute_missing(manifest.load_clip(e), args.confidence_floor)
            rel = os.path.relpath(manifest.resolve(e), out)
            work.append((clip, ManifestEntry(rel, e.video_id, e.patient_id, e.split, dict(e.labels))))
    else:
        clip = ingest_clip_csv(src, patient_id=args.patient_id)
        work.append((clip, ManifestEntry(os.path.relpath(src, out), clip.video_id, clip.patient_id)))

    n_images = 0
    for clip, _ in work:
        for side in sides:
            n_images += len(write_pair(encode_pair(clip, side), image_dir, args.format))
    DatasetManifest([e for _, e in work], out).write_csv(out / "manifest.csv")
    _write_invocation(out, args)
    print(f"encoded {len(work)} clips into {n_images} images under {image_dir}")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = DatasetManifest.read_csv(args.manifest)
    if len(args.ratios) != 3 or min(args.ratios) <= 0:
        raise UsageError("--ratios needs three positive numbers")
    result = split_by_patient(manifest, args.ratios, args.seed)
    out = Path(args.out) if args.out else Path(args.manifest)
    result.entries = [_rebase(e, manifest.root, out.parent) for e in result.entries]
    result.root = out.parent
    result.write_csv(out)
    _write_invocation(out.parent, args)
    counts = {s: len({e.patient_id for e in result.partition(s)}) for s in ("train", "val", "test")}
    print("patients per split: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def _rebase(entry: ManifestEntry, old_root: Path, new_root: Path) -> ManifestEntry:
    p = Path(entry.clip_path)
    if not p.is_absolute():
        entry.clip_path = os.path.relpath(old_root / p, new_root)
    return entry


def _model_config(args, target: Target):
    from .dpg_model import DpgConfig

    return DpgConfig(conv_channels=args.conv_channels, fc_widths=args.fc_widths,
                     dropout_p=args.dropout, shared_branches=args.shared_branches,
                     target=target.value, side=args.side, seed=args.seed)


def cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    if not Path(args.manifest).is_file():
        raise UsageError(f"manifest {args.manifest} not found")
    manifest = DatasetManifest.read_csv(args.manifest)
    tcfg = TrainConfig(batch_size=args.batch, learning_rate=args.lr, epochs=args.epochs,
                       plateau_factor=args.plateau_factor, plateau_patience=args.plateau_patience,
                       min_lr=args.min_lr, early_stop_patience=args.early_stop_patience,
                       seed=args.seed)
    run_dir = Path(args.run_dir) / f"{args.target.value}_{args.side}"
    _write_invocation(run_dir, args)
    result = train(manifest, args.target, args.side, tcfg, _model_config(args, args.target), run_dir)
    run = result.log
    print(f"{run.status}: {len(run.records)} epochs, best epoch {run.best_epoch}, "
          f"best val MSE {run.best_val_mse:.6g}; outputs in {run_dir}")
    return EXIT_DIVERGED if run.status == "diverged" else EXIT_OK


def cmd_eval(args) -> int:
    from .dpg_model import load_checkpoint
    from .evaluator import evaluate

    model = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.read_csv(args.manifest)
    report = evaluate(model, manifest, args.partition)
    out = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    report.write(out)
    _write_invocation(out, args)
    print(report.render_table(), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .dpg_model import load_checkpoint
    from .trainer import predict_batch

    model = load_checkpoint(args.checkpoint)
    side = args.side or model.config.side
    clips = [ingest_clip_csv(p) for p in args.clip]
    preds = predict_batch(model, clips, side, args.target)
    rows = [{"clip": str(p), "prediction": float(v)} for p, v in zip(args.clip, preds)]
    for r in rows:
        print(f"{r['clip']}\t{r['prediction']:.6f}")
    if args.out_dir:
        out = Path(args.out_dir)
        _write_invocation(out, args)
        (out / "predictions.json").write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_suite

    results = run_suite(args.seeds, args.epsilon, args.tolerance, args.model_tolerance,
                        args.model_seeds)
    worst: dict[str, float] = {}
    ok = True
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.report.max_rel_error)
        ok &= r.report.passed
    for name, err in worst.items():
        passed = all(r.report.passed for r in results if r.name == name)
        print(f"{'PASS' if passed else 'FAIL'}  {name:<20} max rel error {err:.2e}")
    if args.out_dir:
        _write_invocation(Path(args.out_dir), args)
    return EXIT_OK if ok else EXIT_DIVERGED


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpgait", description="Dual-pattern gait regression pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress (default: off)")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic walking dataset")
    p.add_argument("--n-videos", type=int, default=10, help="number of videos (default: 10)")
    p.add_argument("--frames-per-video", type=int, default=310, help="frames per video (default: 310)")
    p.add_argument("--videos-per-patient", type=int, default=1, help="(default: 1)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--pose-json", action="store_true",
                   help="also write per-frame pose JSON under pose/ (default: off)")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", parents=[common], help="encode clips into coordinate/trajectory pattern images")
    p.add_argument("--input", required=True,
                   help="clip CSV, manifest CSV, or pose-JSON directory (one video or one subdirectory per video)")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--side", choices=["L", "R", "both"], default="both", help="(default: both)")
    p.add_argument("--confidence-floor", type=float, default=DEFAULT_CONFIDENCE_FLOOR,
                   help=f"landmarks below this confidence are interpolated (default: {DEFAULT_CONFIDENCE_FLOOR})")
    p.add_argument("--format", choices=["png", "raw"], default="png", help="(default: png)")
    p.add_argument("--patient-id", default=None, help="patient id for pose/clip input (default: video id)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("split", parents=[common], help="assign patients to train/val/test")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="output manifest (default: overwrite --manifest)")
    p.add_argument("--ratios", type=_float_tuple, default=(8.0, 1.0, 1.0), help="(default: 8,1,1)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train one (target, side) model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", type=_target, required=True, help="GDI, KneeFlex, Cadence or StepLen")
    p.add_argument("--side", choices=["L", "R"], required=True)
    p.add_argument("--epochs", type=int, default=30, help="(default: 30)")
    p.add_argument("--batch", type=int, default=32, help="(default: 32)")
    p.add_argument("--lr", type=float, default=0.001, help="(default: 0.001)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--run-dir", default="runs", help="runs root; outputs go to <run-dir>/<target>_<side> (default: runs)")
    p.add_argument("--conv-channels", type=_int_tuple, default=(32, 64, 128), help="(default: 32,64,128)")
    p.add_argument("--fc-widths", type=_int_tuple, default=(512, 256, 128, 64), help="(default: 512,256,128,64)")
    p.add_argument("--dropout", type=float, default=0.5, help="(default: 0.5)")
    p.add_argument("--shared-branches", action="store_true", help="share conv weights (default: off)")
    p.add_argument("--plateau-factor", type=float, default=0.1, help="(default: 0.1)")
    p.add_argument("--plateau-patience", type=int, default=3, help="(default: 3)")
    p.add_argument("--min-lr", type=float, default=1e-6, help="(default: 1e-6)")
    p.add_argument("--early-stop-patience", type=int, default=7, help="(default: 7)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="MAE of a checkpoint on a manifest partition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--partition", choices=["test", "val"], default="test", help="(default: test)")
    p.add_argument("--out-dir", default=None, help="report directory (default: the checkpoint's directory)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="predict the gait parameter for clip CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", nargs="+", required=True)
    p.add_argument("--side", choices=["L", "R"], default=None, help="(default: the checkpoint's side)")
    p.add_argument("--target", type=_target, default=None, help="asserted target (default: unchecked)")
    p.add_argument("--out-dir", default=None, help="also write predictions.json here (default: none)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every backward pass")
    p.add_argument("--seeds", type=int, default=20, help="(default: 20)")
    p.add_argument("--model-seeds", type=int, default=3, help="(default: 3)")
    p.add_argument("--epsilon", type=float, default=1e-6, help="(default: 1e-6)")
    p.add_argument("--tolerance", type=float, default=1e-4, help="(default: 1e-4)")
    p.add_argument("--model-tolerance", type=float, default=1e-3, help="(default: 1e-3)")
    p.add_argument("--out-dir", default=None, help="write invocation.json here (default: none)")
    p.set_defaults(func=cmd_gradcheck)
    parser.commands = dict(sub.choices)
    return parser


def _thread_limit():
    n = os.environ.get("DPG_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except UsageError as exc:
        parser.commands[args.command].print_usage(sys.stderr)
        print(f"dpgait {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DpgError as exc:
        print(f"dpgait {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"dpgait {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
