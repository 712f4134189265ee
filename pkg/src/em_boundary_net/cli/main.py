"""
Command-Line Interface for EM Boundary Net.

Subcommands:
    synth      generate a synthetic dataset directory
    train      train a network and write a checkpoint plus a log
    infer      compute a boundary map for a stack
    eval       score boundary maps (pixel error, Rand scores, PR curves)
    recursive  run the two-stage recursive protocol
    bench      time direct against FFT convolution per layer
    inspect    dump a named feature map as PGM slices

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

import argparse
import itertools
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from ..config.settings import Settings, reload_settings
from ..convolution.method_factory import ConvolutionEngine
from ..core.evaluation import summarize_map
from ..core.inference import crop_to_map, infer, pad_to_stack
from ..core.netgraph import conv_layers, field_of_view, forward, infer_plan, param_count
from ..core.recursive import recursive_pipeline, second_stage_maps, stage_inputs
from ..core.spec_parser import load_spec
from ..core.training import Trainer, derive_boundary_labels
from ..data.checkpoint import checkpoint_spec, load_checkpoint, save_checkpoint
from ..data.dataset import read_dataset, synth_dataset
from ..data.volume_io import read_volume, write_volume
from ..models.errors import EngineError, NumericalError, ShapeError, UsageError
from ..models.training import PUBLISHED_PRESETS, TrainConfig
from ..models.volume import StackMeta

logger = logging.getLogger(__name__)
console = Console()

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that exits with status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def triple(text: str) -> Tuple[int, int, int]:
    """argparse type for `X,Y,Z`."""
    parts = text.replace("x", ",").split(",")
    if len(parts) != 3 or not all(p.strip().isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"expected X,Y,Z, got {text!r}")
    values = tuple(int(p) for p in parts)
    if min(values) < 1:
        raise argparse.ArgumentTypeError("components must be positive")
    return values


def grid_entry(text: str) -> Tuple[str, List[float]]:
    """argparse type for `name=v1,v2,...`."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=v1,v2,..., got {text!r}")
    name, values = text.split("=", 1)
    try:
        numbers = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric value in {text!r}")
    if not name.strip() or not numbers:
        raise argparse.ArgumentTypeError(f"expected a name and at least one value, got {text!r}")
    return name.strip(), numbers


def expand_grid(entries: Sequence[Tuple[str, List[float]]]) -> List[Dict[str, float]]:
    """Cartesian product of `name=values` entries."""
    names = [name for name, _ in entries]
    return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in entries))]


def create_parser() -> argparse.ArgumentParser:
    """
    Create the argument parser for the CLI.

    Returns:
        Configured ArgumentParser instance
    """
    common = UsageParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="Engine worker cap (default: available cores)")
    common.add_argument("--deterministic", action="store_true",
                        help="Fixed accumulation order; results reproducible bit-for-bit")
    common.add_argument("--log-level", default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level (default: settings value)")

    parser = UsageParser(
        prog="em-boundary-net",
        description="EM Boundary Net - dense boundary detection for anisotropic EM stacks."
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synth", parents=[common], formatter_class=fmt,
                       help="Generate a synthetic dataset directory")
    p.add_argument("--seed", type=int, default=0, help="Seed of the first stack")
    p.add_argument("--dims", type=triple, default=(96, 96, 16), help="Stack extent X,Y,Z")
    p.add_argument("--cells", type=int, default=30, help="Cells per stack")
    p.add_argument("--stacks", type=int, default=4, help="Number of stacks")
    p.add_argument("--z-blur", type=float, default=0.5,
                   help="Per-slice misalignment bound in pixels")
    p.add_argument("--noise", type=float, default=0.05, help="Additive noise sd")
    p.add_argument("--out", type=Path, required=True, help="Output directory")

    p = sub.add_parser("train", parents=[common], formatter_class=fmt,
                       help="Train a network")
    p.add_argument("--net", help="Spec file or shipped net name "
                   "(n4, vd2d, vd2d3d, small2d, small2d3d); taken from --resume if omitted")
    p.add_argument("--data", type=Path, required=True, help="Dataset directory")
    p.add_argument("--updates", type=int, default=None,
                   help="Total updates (default: 1000, or the preset's)")
    p.add_argument("--lr", type=float, default=0.01, help="Learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="Momentum")
    p.add_argument("--patch", type=triple, default=None,
                   help="Output patch PX,PY,PZ (default: 32,32,1, or the preset's)")
    p.add_argument("--preset", choices=sorted(PUBLISHED_PRESETS), default=None,
                   help="Published patch size and update count")
    p.add_argument("--seed", type=int, default=0, help="Initialization and sampling seed")
    p.add_argument("--no-rebalance", action="store_true", help="Unweighted loss")
    p.add_argument("--no-augment", action="store_true", help="No rotations/flips")
    p.add_argument("--no-tune", action="store_true",
                   help="Skip direct/FFT self-tuning (always off in deterministic mode)")
    p.add_argument("--log-every", type=int, default=100, help="Updates between log records")
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="Updates between checkpoints (default: settings value, 0 = end only)")
    p.add_argument("--resume", type=Path, default=None, help="Checkpoint to resume from")
    p.add_argument("--log", type=Path, default=None,
                   help="Training log file (default: <out>.log)")
    p.add_argument("--out", type=Path, required=True, help="Checkpoint file")

    p = sub.add_parser("infer", parents=[common], formatter_class=fmt,
                       help="Compute a boundary map")
    p.add_argument("--ckpt", type=Path, required=True, help="Checkpoint file")
    p.add_argument("--image", type=Path, required=True, help="Image volume")
    p.add_argument("--recursive-map", type=Path, default=None,
                   help="First-stage boundary map (two-input networks)")
    p.add_argument("--patch", type=triple, default=None,
                   help="Output tile X,Y,Z (default: settings value)")
    p.add_argument("--full", action="store_true",
                   help="Pad the map to the stack dims with 0.5")
    p.add_argument("--out", type=Path, required=True, help="Boundary-map volume")

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt,
                       help="Score boundary maps against a segmentation")
    p.add_argument("--map", type=Path, nargs="+", required=True, help="Boundary-map volume(s)")
    p.add_argument("--truth", type=Path, required=True, help="Ground-truth label volume")
    p.add_argument("--algo", choices=["cc", "ws", "all"], default="all",
                   help="Segmentation back-end")
    p.add_argument("--grid", type=grid_entry, nargs="+", default=None,
                   help="Parameter grid as name=v1,v2,... entries, e.g. t=0.3,0.5 "
                   "(default: the back-end's grid)")
    p.add_argument("--curves", type=Path, default=None,
                   help="Directory for PR-curve files (default: print to stdout)")

    p = sub.add_parser("recursive", parents=[common], formatter_class=fmt,
                       help="Two-stage recursive training")
    p.add_argument("--net1", required=True, help="Stage-1 spec (one input)")
    p.add_argument("--net2", required=True, help="Stage-2 spec (image and recursive map)")
    p.add_argument("--data", type=Path, required=True, help="Training dataset directory")
    p.add_argument("--extra-data", type=Path, default=None,
                   help="Dataset used only by the second stage")
    p.add_argument("--updates1", type=int, default=1000, help="Stage-1 updates")
    p.add_argument("--updates2", type=int, default=1000, help="Stage-2 updates")
    p.add_argument("--continue-updates", type=int, default=0,
                   help="Further stage-1 updates; their maps replace the preliminary ones "
                   "for evaluation")
    p.add_argument("--patch1", type=triple, default=(32, 32, 1), help="Stage-1 output patch")
    p.add_argument("--patch2", type=triple, default=(32, 32, 1), help="Stage-2 output patch")
    p.add_argument("--lr", type=float, default=0.01, help="Learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="Momentum")
    p.add_argument("--seed", type=int, default=0, help="Seed")
    p.add_argument("--eval-data", type=Path, default=None,
                   help="Held-out dataset to write stage-1 and stage-2 maps for")
    p.add_argument("--out", type=Path, required=True, help="Output directory")

    p = sub.add_parser("bench", parents=[common], formatter_class=fmt,
                       help="Time direct and FFT convolution per layer")
    p.add_argument("--net", required=True, help="Spec file or shipped net name")
    p.add_argument("--shape", type=triple, required=True, help="Input extent X,Y,Z")
    p.add_argument("--trials", type=int, default=3, help="Timing repetitions per method")

    p = sub.add_parser("inspect", parents=[common], formatter_class=fmt,
                       help="Dump a dense feature map as PGM slices")
    p.add_argument("--ckpt", type=Path, required=True, help="Checkpoint file")
    p.add_argument("--image", type=Path, required=True, help="Image volume")
    p.add_argument("--recursive-map", type=Path, default=None,
                   help="First-stage boundary map (two-input networks)")
    p.add_argument("--node", default=None, help="Node to dump (lists nodes when omitted)")
    p.add_argument("--out", type=Path, default=Path("inspect"), help="Output directory")

    return parser


def configure(args: argparse.Namespace) -> Settings:
    """Apply CLI overrides to settings and set up logging."""
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.deterministic:
        overrides["deterministic"] = True
    if args.log_level:
        overrides["log_level"] = args.log_level
    if getattr(args, "checkpoint_every", None) is not None:
        overrides["checkpoint_every"] = args.checkpoint_every
    settings = reload_settings(**overrides)
    logging.basicConfig(level=getattr(logging, settings.log_level),
                        format='%(asctime)s - %(levelname)s - %(message)s', force=True)
    return settings


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

def run_synth(args: argparse.Namespace, settings: Settings) -> None:
    names = synth_dataset(args.out, args.seed, args.stacks, args.dims, args.cells,
                          args.z_blur, args.noise)
    console.print(f"Wrote {len(names)} stack(s) to {args.out}: {', '.join(names)}")


def _tune(engine: ConvolutionEngine, spec, dims: Sequence[int], enabled: bool) -> None:
    if engine.deterministic or not enabled:
        return
    engine.tune(conv_layers(spec, dims))


def run_train(args: argparse.Namespace, settings: Settings) -> None:
    checkpoint = load_checkpoint(args.resume) if args.resume else None
    if checkpoint is not None:
        spec = checkpoint_spec(checkpoint)
    elif args.net:
        spec = load_spec(args.net)
    else:
        raise UsageError("train needs --net or --resume")

    values = {"learning_rate": args.lr, "momentum": args.momentum, "seed": args.seed,
              "rebalance": not args.no_rebalance, "augment": not args.no_augment,
              "log_every": args.log_every}
    if args.updates is not None:
        values["updates"] = args.updates
    if args.patch is not None:
        values["patch"] = args.patch
    cfg = TrainConfig.preset(args.preset, **values) if args.preset else TrainConfig(**values)

    pairs = read_dataset(args.data)
    engine = ConvolutionEngine(settings)
    fov = field_of_view(spec)
    _tune(engine, spec, tuple(p + f - 1 for p, f in zip(cfg.patch, fov)), not args.no_tune)

    log_path = args.log or args.out.with_name(args.out.name + ".log")
    trainer = Trainer(spec, pairs, cfg, engine=engine, settings=settings, log_path=log_path,
                      params=checkpoint.params if checkpoint else None,
                      start_update=checkpoint.update if checkpoint else 0,
                      rng_state=checkpoint.rng_state if checkpoint else None,
                      smoothed_loss=checkpoint.smoothed_loss if checkpoint else None)
    _, log = trainer.run(on_checkpoint=lambda t: save_checkpoint(
        args.out, spec, t.params, t.update, t.rng_state, smoothed_loss=t.smoothed_loss))
    if log:
        console.print(f"Trained to update {trainer.update}: smoothed loss "
                      f"{log[-1].smoothed_loss:.4f}, patch pixel error {log[-1].pixel_error:.4f}")
    console.print(f"Checkpoint: {args.out}  Log: {log_path}")


def _read_inputs(spec, image_path: Path, map_path: Optional[Path]) -> Dict[str, np.ndarray]:
    image = read_volume(image_path).data
    recursive_map = read_volume(map_path).data if map_path else None
    return stage_inputs(spec, image, recursive_map)


def run_infer(args: argparse.Namespace, settings: Settings) -> None:
    checkpoint = load_checkpoint(args.ckpt)
    spec = checkpoint_spec(checkpoint)
    inputs = _read_inputs(spec, args.image, args.recursive_map)
    engine = ConvolutionEngine(settings)
    patch = args.patch or settings.infer_patch
    fov = field_of_view(spec)
    _tune(engine, spec, tuple(p + f - 1 for p, f in zip(patch, fov)), True)
    boundary = infer(spec, checkpoint.params, inputs, patch, engine=engine)
    if not np.all(np.isfinite(boundary)):
        raise NumericalError("boundary map contains non-finite values")
    if args.full:
        boundary = pad_to_stack(boundary, fov, next(iter(inputs.values())).shape)
    write_volume(args.out, boundary, StackMeta(dims=boundary.shape, dtype="f32",
                                               role="boundary_map"))
    console.print(f"Boundary map {boundary.shape} written to {args.out}")


def run_eval(args: argparse.Namespace, settings: Settings) -> None:
    truth_full = read_volume(args.truth).data
    algos = ["cc", "ws"] if args.algo == "all" else [args.algo]
    grids = None
    if args.grid:
        if len(algos) != 1:
            raise UsageError("--grid needs a single --algo")
        grids = {algos[0]: expand_grid(args.grid)}

    table = Table(title="Boundary map scores")
    table.add_column("map")
    table.add_column("threshold", justify="right")
    table.add_column("pixel error", justify="right")
    for algo in algos:
        table.add_column(f"{algo} best F", justify="right")
        table.add_column(f"{algo} params")

    for map_path in args.map:
        boundary = read_volume(map_path).data.astype(np.float32)
        fov = tuple(t - m + 1 for t, m in zip(truth_full.shape, boundary.shape))
        if min(fov) < 1:
            raise ShapeError(f"{map_path}: map dims {boundary.shape} exceed truth dims "
                              f"{truth_full.shape}")
        truth = crop_to_map(truth_full, fov)
        labels = crop_to_map(derive_boundary_labels(truth_full), fov)
        summary, reports = summarize_map(map_path.name, boundary, truth, labels, algos, grids,
                                         workers=settings.worker_count())
        row = [summary.name, f"{summary.threshold:.2f}", f"{summary.pixel_error:.4f}"]
        for algo in algos:
            best = summary.best_rand.get(algo)
            row += ([f"{best.scores.f:.4f}", ", ".join(f"{k}={v:g}" for k, v in best.params.items())]
                    if best else ["-", "undefined"])
            text = reports[algo].to_csv()
            if args.curves:
                args.curves.mkdir(parents=True, exist_ok=True)
                curve_path = args.curves / f"{map_path.name}.{algo}.csv"
                curve_path.write_text(text)
                logger.info(f"Wrote PR curve {curve_path}")
            else:
                console.print(f"# {map_path.name} {algo}", markup=False)
                console.print(text, end="", markup=False, highlight=False)
        table.add_row(*row)
    console.print(table)


def run_recursive(args: argparse.Namespace, settings: Settings) -> None:
    stage1 = load_spec(args.net1)
    stage2 = load_spec(args.net2)
    pairs = read_dataset(args.data)
    extra = read_dataset(args.extra_data) if args.extra_data else []
    common = {"learning_rate": args.lr, "momentum": args.momentum, "seed": args.seed}
    cfg1 = TrainConfig(updates=args.updates1, patch=args.patch1, **common)
    cfg2 = TrainConfig(updates=args.updates2, patch=args.patch2, **common)
    engine = ConvolutionEngine(settings)
    args.out.mkdir(parents=True, exist_ok=True)

    def on_checkpoint(stage: str, trainer: Trainer) -> None:
        save_checkpoint(args.out / f"{stage}.ckpt", trainer.spec, trainer.params,
                        trainer.update, trainer.rng_state, smoothed_loss=trainer.smoothed_loss)

    result = recursive_pipeline(stage1, stage2, pairs, extra, cfg1, cfg2,
                                continue_updates=args.continue_updates, engine=engine,
                                infer_patch=settings.infer_patch, log_dir=args.out,
                                on_checkpoint=on_checkpoint)

    for folder, maps in (("preliminary", result.preliminary_maps), ("final", result.final_maps)):
        for pair, m in zip(list(pairs) + list(extra), maps):
            write_volume(args.out / folder / f"{pair.name}_map", m,
                         StackMeta(dims=m.shape, dtype="f32", role="boundary_map"))

    if args.eval_data:
        held_out = read_dataset(args.eval_data)
        fov1 = field_of_view(stage1)
        first = []
        for pair in held_out:
            valid = infer(stage1, result.params1, stage_inputs(stage1, pair.image),
                          settings.infer_patch, engine=engine)
            write_volume(args.out / "eval" / f"{pair.name}_stage1", valid,
                         StackMeta(dims=valid.shape, dtype="f32", role="boundary_map"))
            first.append(pad_to_stack(valid, fov1, pair.dims))
        second = second_stage_maps(stage2, result.params2, held_out, first,
                                   settings.infer_patch, engine=engine)
        for pair, m in zip(held_out, second):
            write_volume(args.out / "eval" / f"{pair.name}_stage2", m,
                         StackMeta(dims=m.shape, dtype="f32", role="boundary_map"))

    console.print(f"Stage 1 and stage 2 checkpoints, maps and logs written to {args.out}; "
                  f"warm-started layers: {', '.join(result.warm_started)}")


def run_bench(args: argparse.Namespace, settings: Settings) -> None:
    spec = load_spec(args.net)
    engine = ConvolutionEngine(settings, deterministic=False)
    reports = engine.tune(conv_layers(spec, args.shape), trials=args.trials)

    table = Table(title=f"Convolution timing, {param_count(spec):,} parameters, "
                        f"field of view {field_of_view(spec)}")
    for column in ("node", "input", "kernel", "sparsity", "direct ms", "fft ms",
                   "rel. diff", "choice", "note"):
        table.add_column(column)
    for report in reports:
        table.add_row(*report.to_row())
    console.print(table)


def write_pgm(path: Path, plane: np.ndarray) -> None:
    """Write an 8-bit grayscale plane indexed [x, y] as binary PGM."""
    rows = np.ascontiguousarray(plane.T.astype(np.uint8))
    height, width = rows.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + rows.tobytes())


def run_inspect(args: argparse.Namespace, settings: Settings) -> None:
    checkpoint = load_checkpoint(args.ckpt)
    spec = checkpoint_spec(checkpoint)
    inputs = _read_inputs(spec, args.image, args.recursive_map)
    engine = ConvolutionEngine(settings)
    result = forward(spec, checkpoint.params, inputs, keep_maps=True, engine=engine,
                     plan=infer_plan(spec))

    if args.node is None:
        table = Table(title="Feature maps")
        table.add_column("node")
        table.add_column("kind")
        table.add_column("maps x dims")
        for node in spec.nodes:
            table.add_row(node.name, node.kind,
                          "x".join(str(n) for n in result.maps[node.name].shape))
        console.print(table)
        return
    if args.node not in result.maps:
        raise UsageError(f"unknown node {args.node!r}")

    maps = result.maps[args.node]
    args.out.mkdir(parents=True, exist_ok=True)
    for c in range(maps.shape[0]):
        volume = maps[c]
        lo, hi = float(volume.min()), float(volume.max())
        scaled = np.zeros_like(volume) if hi == lo else (volume - lo) / (hi - lo) * 255.0
        for z in range(volume.shape[2]):
            write_pgm(args.out / f"{args.node}_c{c:03d}_z{z:03d}.pgm", np.rint(scaled[:, :, z]))
    console.print(f"Wrote {maps.shape[0]} map(s) x {maps.shape[3]} slice(s) of "
                  f"{args.node!r} to {args.out}")


COMMANDS = {
    "synth": run_synth,
    "train": run_train,
    "infer": run_infer,
    "eval": run_eval,
    "recursive": run_recursive,
    "bench": run_bench,
    "inspect": run_inspect,
}


def main(args: Optional[List[str]] = None) -> int:
    """
    Main function to run the EM Boundary Net CLI.

    Args:
        args: Command-line arguments (for testing purposes)

    Returns:
        Process exit status
    """
    parser = create_parser()
    parsed_args = parser.parse_args(args)

    try:
        settings = configure(parsed_args)
        COMMANDS[parsed_args.command](parsed_args, settings)
    except EngineError as e:
        logger.error(str(e))
        return e.exit_code
    except ValidationError as e:
        logger.error("; ".join(err["msg"] for err in e.errors()))
        return USAGE_ERROR
    except OSError as e:
        logger.error(f"{e.filename or ''}: {e.strerror or e}")
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
