"""Command-line harness: scene generation, estimators and the benchmark tables.

Artifacts go under ``--out``; a JSON run report goes to stdout so that output
directories stay byte-identical across re-runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from gaze_aware import bench, io
from gaze_aware.awareness import fg_estimate, recursive_run
from gaze_aware.config import Config, ConfigError, load_config
from gaze_aware.grid import FlowField
from gaze_aware.objective import SequenceBatch, total_loss
from gaze_aware.refine import apply_noise
from gaze_aware.synth import GroundTruth, SceneSpec, make_ground_truth

log = logging.getLogger("gaze_aware")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 1 instead of argparse's 2 (reserved for numerical failure)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


@dataclass
class RunReport:
    command: str
    config_hash: str
    seed: int
    rows: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    threads: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def thread_budget() -> int:
    """Parallelism cap from ``GAZE_AWARE_THREADS`` (0 = auto). Benchmarks currently run serially."""
    raw = os.environ.get("GAZE_AWARE_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"GAZE_AWARE_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InputError("GAZE_AWARE_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


# --- scene packages -------------------------------------------------------------


def write_package(gt: GroundTruth, out: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    meta = {"spec": gt.spec.to_dict(), "clipped": list(gt.clipped)}
    io.write_json(meta, out / "scene.json")
    io.write_heatmap_sequence(np.clip(gt.frames, 0, 1), out / "frames", "frame")
    io.write_heatmap_sequence(gt.masks.astype(float), out / "masks", "mask")
    io.write_flow(gt.flows, out / "flow.bin")
    io.write_gaze_jsonl(gt.scanpath, out / "gaze.jsonl")
    io.write_annotations_jsonl(gt.annotations, out / "annotations.jsonl")
    io.write_heatmap_sequence(gt.awareness, out / "awareness", "aw")
    io.write_mass_csv(gt.awareness, out / "awareness_mass.csv")
    return sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())


@dataclass
class Package:
    frames: np.ndarray
    flows: list[FlowField]
    gaze: list
    annotations: list
    awareness: np.ndarray | None = None


def read_package(path: Path, gaze_path: str | None = None) -> Package:
    if not path.is_dir():
        raise InputError(f"scene package {path} does not exist")
    frames = io.read_heatmap_sequence(path / "frames", "frame")
    flows = io.read_flow(path / "flow.bin")
    gaze = io.read_gaze_jsonl(gaze_path or path / "gaze.jsonl")
    ann = io.read_annotations_jsonl(path / "annotations.jsonl") if (path / "annotations.jsonl").exists() else []
    aw = io.read_heatmap_sequence(path / "awareness", "aw") if (path / "awareness").is_dir() else None
    if len(flows) < len(frames) - 1:
        raise InputError(f"{len(frames)} frames need {len(frames) - 1} flow fields, got {len(flows)}")
    if len(gaze) != len(frames):
        raise InputError(f"{len(frames)} frames but {len(gaze)} gaze records")
    return Package(frames, flows, gaze, ann, aw)


# --- subcommands ----------------------------------------------------------------


def cmd_synth(args, cfg: Config, out: Path, report: RunReport):
    spec = None
    if args.scene:
        try:
            spec = SceneSpec.from_dict(json.loads(Path(args.scene).read_text()))
        except (TypeError, KeyError, json.JSONDecodeError) as e:
            raise InputError(f"{args.scene}: bad scene spec ({e})") from None
    gt = make_ground_truth(cfg.seed, cfg.synth, cfg.estimator, cfg.weights, spec=spec)
    report.outputs = write_package(gt, out)
    report.rows = [{"frames": gt.spec.frames, "objects": len(gt.spec.objects), "clipped": list(gt.clipped)}]


def _gaze_input(pkg: Package, args, cfg: Config):
    if args.noise is None:
        return pkg.gaze
    return apply_noise(pkg.gaze, replace(cfg.noise, sigma_n=args.noise, seed=bench.sub_seed(cfg.seed, 8)))


def _write_estimate(stack, out: Path, report: RunReport):
    io.write_heatmap_sequence(stack, out / "awareness", "aw")
    io.write_mass_csv(stack, out / "mass.csv")
    report.outputs = ["awareness/", "mass.csv"]
    report.rows = [{"frame": t, "mass": float(m.sum())} for t, m in enumerate(stack)]


def cmd_fg(args, cfg: Config, out: Path, report: RunReport):
    pkg = read_package(Path(args.package), args.gaze)
    gaze = _gaze_input(pkg, args, cfg)
    _write_estimate(fg_estimate(gaze, pkg.flows, cfg.estimator, pkg.frames.shape[1:]), out, report)


def cmd_estimate(args, cfg: Config, out: Path, report: RunReport):
    pkg = read_package(Path(args.package), args.gaze)
    gaze = _gaze_input(pkg, args, cfg)
    shape = pkg.frames.shape[1:]
    if args.method == "recursive":
        est = recursive_run(gaze, pkg.flows, cfg.estimator, cfg.weights, shape=shape)
    else:
        sigma = args.noise if args.noise is not None else cfg.noise.sigma_n
        batch = SequenceBatch(pkg.frames, gaze, pkg.flows[: len(pkg.frames) - 1], annotations=pkg.annotations)
        fit = bench.variational_estimate(batch, cfg, sigma)
        est = fit.awareness
        report.rows.append({"initial_loss": fit.initial_loss, "loss": fit.loss, "iterations": fit.iterations})
    _write_estimate(est, out, report)


def cmd_objective(args, cfg: Config, out: Path, report: RunReport):
    pkg = read_package(Path(args.package), args.gaze)
    maps = Path(args.maps) if args.maps else Path(args.package)
    aw = io.read_heatmap_sequence(maps / "awareness", "aw")
    pg = None
    if (maps / "gaze_density").is_dir():
        pg = np.stack([m / m.sum() for m in io.read_heatmap_sequence(maps / "gaze_density", "pg")])
    batch = SequenceBatch(pkg.frames, pkg.gaze, pkg.flows[: len(pkg.frames) - 1], aw, pg, pkg.annotations)
    weights = cfg.variational if args.weights == "variational" else cfg.weights
    rep = total_loss(batch, weights)
    rows = rep.csv_rows()
    io.write_csv(out / "objective.csv", ("term", "value", "weighted"), rows + [("total", rep.total, rep.total)])
    report.outputs = ["objective.csv"]
    report.rows = [{"term": t, "value": v, "weighted": w} for t, v, w in rows]


def _table(out: Path, name: str, header, rows, fmt=None):
    values = [tuple(getattr(r, h) for h in header) for r in rows] if fmt is None else [fmt(r) for r in rows]
    io.write_csv(out / name, header, values)
    return [dict(zip(header, v)) for v in values]


def cmd_denoise_bench(args, cfg: Config, out: Path, report: RunReport):
    rows = bench.denoise_benchmark(bench.scenes(cfg, cfg.seed), cfg.bench.sigma_denoise, cfg, cfg.seed)
    header = ("sigma_n", "raw_mae", "obj_mae", "sal_mae", "cond_mae")
    report.rows = _table(out, "denoise.csv", header, rows, lambda r: (r.sigma_n,) + tuple(f"{getattr(r, h):.1f}" for h in header[1:]))
    report.outputs = ["denoise.csv"]


def cmd_recalibrate_bench(args, cfg: Config, out: Path, report: RunReport):
    rows = bench.recalibrate_benchmark(cfg, cfg.seed, args.mode)
    report.rows = _table(out, "recalibrate.csv", ("sigma_n", "before", "after"), rows)
    report.outputs = ["recalibrate.csv"]


def cmd_awareness_bench(args, cfg: Config, out: Path, report: RunReport):
    rows = bench.awareness_benchmark(bench.scenes(cfg, cfg.seed), cfg.bench.sigma_awareness, cfg, cfg.seed)
    report.rows = _table(out, "awareness.csv", ("sigma_n", "mse_fg", "mse_var"), rows)
    report.outputs = ["awareness.csv"]


def cmd_ablate(args, cfg: Config, out: Path, report: RunReport):
    rows = bench.ablation(bench.scenes(cfg, cfg.seed), cfg, cfg.seed)
    report.rows = _table(out, "ablation.csv", ("removed", "mse"), rows)
    report.outputs = ["ablation.csv"]


def cmd_gradcheck(args, cfg: Config, out: Path, report: RunReport):
    rows = bench.gradcheck_rows(cfg.seed)
    report.rows = _table(out, "gradcheck.csv", ("term", "max_rel_error", "passed"), rows)
    report.outputs = ["gradcheck.csv"]
    if not all(r.passed for r in rows):
        raise FloatingPointError("gradient check failed for " + ", ".join(r.term for r in rows if not r.passed))


def cmd_eval_saliency(args, cfg: Config, out: Path, report: RunReport):
    rows = bench.eval_saliency(bench.scenes(cfg, cfg.seed), cfg, cfg.seed)
    report.rows = _table(out, "saliency.csv", ("method", "kl", "cc", "ig"), rows)
    report.outputs = ["saliency.csv"]


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic scene package"),
    "fg": (cmd_fg, "filtered-gaze baseline on a scene package"),
    "estimate": (cmd_estimate, "recursive or variational awareness estimate"),
    "denoise-bench": (cmd_denoise_bench, "gaze denoising MAE table"),
    "recalibrate-bench": (cmd_recalibrate_bench, "calibration error before/after correction"),
    "awareness-bench": (cmd_awareness_bench, "awareness MSE of FG vs variational across noise"),
    "ablate": (cmd_ablate, "leave-one-out over variational loss terms"),
    "objective": (cmd_objective, "score a map package term by term"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every objective gradient"),
    "eval-saliency": (cmd_eval_saliency, "KL / CC / IG of saliency predictors"),
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the flags without defaults so they cannot reset earlier values
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults for omitted keys)", **kw)
    common.add_argument("--seed", type=int, help="overrides the config seed", **kw)
    common.add_argument("--out", help="output directory (default: out)", **(kw or {"default": "out"}))
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gaze-aware", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    local = _global_flags(True)
    subs = {name: sub.add_parser(name, help=text, parents=[local]) for name, (_, text) in COMMANDS.items()}

    subs["synth"].add_argument("--scene", help="SceneSpec JSON (random scene from the seed if omitted)")
    for name in ("fg", "estimate", "objective"):
        subs[name].add_argument("--package", required=True, help="scene package directory written by synth")
        subs[name].add_argument("--gaze", help="gaze JSONL replacing the package's gaze.jsonl")
    for name in ("fg", "estimate"):
        subs[name].add_argument("--noise", type=float, help="corrupt the gaze with this sigma_n first")
    subs["estimate"].add_argument("--method", choices=("recursive", "variational"), default="recursive")
    subs["objective"].add_argument("--maps", help="directory with awareness/ (and optional gaze_density/) PGMs")
    subs["objective"].add_argument("--weights", choices=("default", "variational"), default="default")
    subs["recalibrate-bench"].add_argument("--mode", choices=("supervised", "self-supervised"), default="supervised")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise InputError("--seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, seed=args.seed)
        report = RunReport(args.command, cfg.digest(), cfg.seed, threads=thread_budget())
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](args, cfg, out, report)
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ConfigError, io.FormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    report.wall_time = round(time.perf_counter() - t0, 3)
    print(report.to_json())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
