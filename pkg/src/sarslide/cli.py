"""Command-line pipeline: synth -> compose -> sample -> train -> eval -> map (+ report).

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to stderr;
results are written to files only.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .detection import export_detections, slide
from .nn.model import build_reference_model
from .raster import RECIPES, GridFormatError, NormalizationSpec, compose, normalize, read_grid, read_sources, write_grid
from .sampling import AugmentationConfig, extract_patches, load_patchset, read_polygons, save_patchset, split
from .synth import SynthConfig, SynthError, generate, write_scene
from .training import EvalReport, TrainConfig, evaluate, format_table, train

log = logging.getLogger("sarslide")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


REQUIRED = {
    "synth": ["out"],
    "compose": ["sources", "out"],
    "sample": ["composite", "polygons", "out"],
    "train": ["patches", "out"],
    "eval": ["model", "patches", "out"],
    "map": ["model", "scene", "out"],
    "report": ["inputs", "out"],
}


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--threads", type=int, default=1, help="worker threads; 1 keeps runs bitwise reproducible")
    g.add_argument("--verbose", "-v", action="count", default=0, help="more logging on stderr (repeatable)")
    g.add_argument("--config", metavar="JSON", help="JSON file of flag values; explicit flags take precedence")
    return p


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="sarslide", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    common = _common()
    subs = {}

    def add(name, help_):
        subs[name] = sub.add_parser(name, help=help_, description=help_, parents=[common])
        return subs[name]

    p = add("synth", "generate a synthetic scene directory")
    p.add_argument("--out", help="scene directory to create (required)")
    p.add_argument("--landslides", type=int, default=20, help="number of landslides")
    p.add_argument("--backgrounds", type=int, help="number of non-landslide polygons (default: --landslides)")
    p.add_argument("--height", type=int, default=384, help="scene rows")
    p.add_argument("--width", type=int, default=384, help="scene columns")
    p.add_argument("--contrast", type=float, default=2.0, help="VV amplitude factor inside landslides")
    p.add_argument("--contrast-vh", type=float, default=1.7, help="VH amplitude factor inside landslides")
    p.add_argument("--looks", type=float, default=4.0, help="speckle looks")

    p = add("compose", "stack source bands into a 3-band composite")
    p.add_argument("--recipe", choices=list(RECIPES), help="composite name")
    p.add_argument("--all", action="store_true", help="compose every recipe into the --out directory")
    p.add_argument("--sources", help="directory holding <band>.grid source files (required)")
    p.add_argument("--out", help="output .grid path, or directory with --all (required)")

    p = add("sample", "cut labeled patches from a composite and split them")
    p.add_argument("--composite", help="3-band composite .grid (required)")
    p.add_argument("--polygons", help="GeoJSON polygons in pixel coordinates (required)")
    p.add_argument("--out", help="patch set directory (required)")
    p.add_argument("--stride", type=int, default=13, help="window stride in pixels")
    p.add_argument("--min-overlap", type=float, default=0.5, help="minimum window fraction inside the polygon")
    p.add_argument("--test-fraction", type=float, default=0.2, help="fraction of patches held out per label")

    p = add("train", "train the CNN on a patch set")
    p.add_argument("--patches", help="patch set directory (required)")
    p.add_argument("--out", help="checkpoint path (required)")
    p.add_argument("--init", help="resume from this checkpoint instead of a fresh model")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--early-stop-patience", type=int, help="stop after N epochs without test-loss improvement")
    p.add_argument("--no-augment", action="store_true", help="disable all augmentation")
    p.add_argument("--no-flip", action="store_true", help="disable random flips")
    p.add_argument("--max-rotation", type=float, default=36.0, help="degrees")
    p.add_argument("--max-zoom", type=float, default=0.1)
    p.add_argument("--max-translation", type=float, default=0.1)
    p.add_argument("--report", help="write the test EvalReport here (JSON, plus a .txt table)")

    p = add("eval", "evaluate a checkpoint on a patch set split")
    p.add_argument("--model", help="checkpoint (required)")
    p.add_argument("--patches", help="patch set directory (required)")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", help="EvalReport JSON path (required); a .txt table is written alongside")

    p = add("map", "sliding-window detection over a scene")
    p.add_argument("--model", help="checkpoint (required)")
    p.add_argument("--scene", help="3-band composite .grid (required)")
    p.add_argument("--out", help="output directory (required)")
    p.add_argument("--step", type=int, default=2, help="window step in pixels")
    p.add_argument("--batch", type=int, default=64, help="windows per forward pass")
    p.add_argument("--threshold", type=float, default=0.5, help="landslide probability threshold")

    p = add("report", "tabulate several EvalReports side by side")
    p.add_argument("--inputs", nargs="+", help="EvalReport JSON files (required)")
    p.add_argument("--names", nargs="+", help="row names (default: file stems)")
    p.add_argument("--out", help="text table path (required); a .json aggregate is written alongside")
    return parser, subs


def _parse(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required: " + ", ".join(subs))
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read --config: {e}") from e
        if isinstance(cfg.get("augmentation"), dict):
            aug = cfg.pop("augmentation")
            cfg.update({k: v for k, v in aug.items() if k in ("max_rotation", "max_zoom", "max_translation")})
            if aug.get("flip_horizontal") is False and aug.get("flip_vertical") is False:
                cfg["no_flip"] = True
        sp = subs[args.command]
        known = {a.dest for a in sp._actions} - {"help", "config"}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"--config has unknown keys for {args.command}: {sorted(unknown)}")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    missing = [d for d in REQUIRED[args.command] if getattr(args, d) in (None, [])]
    if missing:
        raise UsageError(f"{args.command}: missing required flag(s) " +
                         ", ".join("--" + m.replace("_", "-") for m in missing))
    if args.command == "compose" and not (args.all or args.recipe):
        raise UsageError("compose: give --recipe NAME or --all")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return args


def _write_report(report: EvalReport, path, name: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    path.with_suffix(".txt").write_text(format_table({name: report}))


def cmd_synth(args):
    cfg = SynthConfig(height=args.height, width=args.width, landslide_count=args.landslides,
                      background_count=args.backgrounds, contrast=args.contrast,
                      contrast_vh=args.contrast_vh, looks=args.looks, seed=args.seed)
    write_scene(generate(cfg), args.out)
    log.info("wrote scene to %s", args.out)


def cmd_compose(args):
    sources = read_sources(args.sources)
    if not sources:
        raise FileNotFoundError(f"no source band grids found in {args.sources}")
    if args.all:
        for name in RECIPES:
            write_grid(compose(name, sources), Path(args.out) / f"{name}.grid")
    else:
        write_grid(compose(args.recipe, sources), args.out)


def cmd_sample(args):
    grid = read_grid(args.composite)
    normed, stats = normalize(grid)
    patches = extract_patches(normed, read_polygons(args.polygons), stride=args.stride,
                              min_overlap=args.min_overlap)
    ps = split(patches, args.test_fraction, args.seed)
    ps.normalization = {**stats.to_dict(), "bands": grid.band_names}
    save_patchset(ps, args.out)
    log.info("patches: %s", ps.class_counts)


def cmd_train(args):
    ps = load_patchset(args.patches)
    model = load_checkpoint(args.init) if args.init else build_reference_model(args.seed)
    if ps.normalization:
        model.meta["normalization"] = ps.normalization
    if args.no_augment:
        aug = AugmentationConfig.off(args.seed)
    else:
        aug = AugmentationConfig(not args.no_flip, not args.no_flip, args.max_rotation, args.max_zoom,
                                 args.max_translation, args.seed)
    cfg = TrainConfig(args.epochs, args.batch_size, args.learning_rate, aug, args.seed, args.early_stop_patience)
    model, report = train(model, ps, cfg)
    save_checkpoint(model, args.out)
    if args.report:
        _write_report(report, args.report, Path(args.patches).name)
    log.info("test accuracy %.4f", report.accuracy)


def cmd_eval(args):
    model = load_checkpoint(args.model)
    ps = load_patchset(args.patches)
    _write_report(evaluate(model, getattr(ps, args.split)), args.out, Path(args.patches).name)


def cmd_map(args):
    model = load_checkpoint(args.model)
    scene = read_grid(args.scene)
    stats = model.meta.get("normalization")
    if stats:
        scene, _ = normalize(scene, NormalizationSpec.from_dict(stats))
    else:
        log.warning("checkpoint has no normalization statistics; scaling the scene by its own min/max")
        scene, _ = normalize(scene)
    ds = slide(scene, model, step=args.step, batch=args.batch, threshold=args.threshold, threads=args.threads)
    export_detections(ds, args.out)
    log.info("%d windows, %d detections", len(ds.centers), len(ds.detections))


def cmd_report(args):
    names = args.names or [Path(p).stem for p in args.inputs]
    if len(names) != len(args.inputs):
        raise UsageError("--names must match --inputs one to one")
    rows = {n: EvalReport.from_dict(json.loads(Path(p).read_text())) for n, p in zip(names, args.inputs)}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_table(rows))
    out.with_suffix(".json").write_text(json.dumps({n: r.to_dict() for n, r in rows.items()}, indent=1) + "\n")


COMMANDS = {
    "synth": cmd_synth, "compose": cmd_compose, "sample": cmd_sample, "train": cmd_train,
    "eval": cmd_eval, "map": cmd_map, "report": cmd_report,
}

DATA_ERRORS = (GridFormatError, CheckpointError, SynthError, ValueError, KeyError, OSError)


def run(argv=None) -> int:
    try:
        args = _parse(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    # map parallelizes over window batches itself; keep BLAS single-threaded there
    blas_threads = 1 if args.command == "map" else args.threads
    try:
        with threadpool_limits(limits=blas_threads):
            COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())
