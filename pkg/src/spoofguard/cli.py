"""Command-line entry point: simulate, train, detect, eval, export-images.

Settings resolve as: command-line flag, then ``SPOOFGUARD_SEED`` (seed only),
then the ``--config`` file (flat ``key=value`` lines), then built-in
defaults.  The resolved configuration is echoed into every artifact.

Exit codes: 0 ok, 1 spoofing detected, 2 usage, 3 data, 4 compatibility.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, ae, chansim, detector, evalkit
from .imaging import GridSpec, export_pgm, images_to_matrix, make_histogram
from .iq import IqFormatError, Label, chunk, load_capture, load_chunks

log = logging.getLogger("spoofguard")

EXIT_OK, EXIT_SPOOF, EXIT_USAGE, EXIT_DATA, EXIT_COMPAT = 0, 1, 2, 3, 4
SEED_ENV = "SPOOFGUARD_SEED"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# name -> (type, default, help); flags are --name with dashes
OPTIONS = {
    "seed": (int, 0, "master seed"),
    "n": (int, 1000, "IQ samples per chunk/image"),
    "grid": (int, 224, "grid bins per axis (P = Q)"),
    "range_min": (float, -1.5, "lower edge of the I and Q axes"),
    "range_max": (float, 1.5, "upper edge of the I and Q axes"),
    "epochs": (int, 250, "L-BFGS iterations"),
    "latent": (int, 16, "encoder width"),
    "hidden": (int, 16, "width of both decoder hidden layers"),
    "sparsity": (float, 0.5, "sparsity penalty weight"),
    "sparsity_target": (float, 0.05, "target mean latent activation"),
    "l2": (float, 0.01, "L2 weight penalty"),
    "train_fraction": (float, 0.8, "share of legitimate images used for training"),
    "k": (int, 5, "number of folds"),
    "reps": (int, 1000, "timing repetitions"),
    "chunks": (int, 500, "chunks per class"),
    "legit_sigma": (float, 0.05, "legitimate channel noise std per axis"),
    "spoof_sigma": (float, 0.15, "spoofer channel noise std per axis"),
    "legit_amplitude": (float, 1.0, "legitimate constellation radius"),
    "spoof_amplitude": (float, 1.0, "spoofer constellation radius"),
    "legit_k": (float, math.inf, "legitimate Rician K factor (inf = no fading)"),
    "spoof_k": (float, math.inf, "spoofer Rician K factor (inf = no fading)"),
    "phase_jitter": (float, 0.0, "phase jitter std in radians, both channels"),
    "limit": (int, 0, "maximum number of images (0 = all)"),
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_USAGE, f"{path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(args: argparse.Namespace, names) -> dict:
    """Merge flags, environment, config file and defaults for ``names``."""
    config = read_config_file(args.config) if getattr(args, "config", None) else {}
    out = {}
    for name in names:
        typ, default, _ = OPTIONS[name]
        value = getattr(args, name, None)
        if value is None and name == "seed" and os.environ.get(SEED_ENV):
            value = os.environ[SEED_ENV]
        if value is None and name in config:
            value = config[name]
        if value is None:
            value = default
        try:
            out[name] = typ(value)
        except ValueError:
            raise CliError(EXIT_USAGE, f"invalid value for {name}: {value!r}") from None
    return out


@dataclass
class RunConfig:
    chunk_size: int = 1000
    grid: GridSpec = field(default_factory=GridSpec)
    train: ae.TrainConfig = field(default_factory=ae.TrainConfig)
    k_folds: int = 5
    paths: dict = field(default_factory=dict)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.chunk_size < 1:
            raise CliError(EXIT_USAGE, "chunk size must be >= 1")
        if self.k_folds < 2:
            raise CliError(EXIT_USAGE, "k must be >= 2")

    @classmethod
    def from_values(cls, v: dict, paths: dict) -> "RunConfig":
        try:
            grid = GridSpec.square(v.get("grid", 224), v.get("range_min", -1.5), v.get("range_max", 1.5))
            train = ae.TrainConfig(
                epochs=v.get("epochs", 250),
                sparsity_weight=v.get("sparsity", 0.5),
                sparsity_target=v.get("sparsity_target", 0.05),
                l2_weight=v.get("l2", 0.01),
                latent=v.get("latent", 16),
                hidden=(v.get("hidden", 16),) * 2,
                seed=v.get("seed", 0),
            )
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from None
        known = {"n", "grid", "range_min", "range_max", "epochs", "sparsity", "sparsity_target",
                 "l2", "latent", "hidden", "seed", "k"}
        extra = {k: val for k, val in v.items() if k not in known}
        return cls(v.get("n", 1000), grid, train, v.get("k", 5), {k: str(p) for k, p in paths.items()},
                   v.get("seed", 0), extra)

    def to_dict(self) -> dict:
        extra = {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in self.extra.items()}
        return {
            "chunk_size": self.chunk_size,
            "grid": self.grid.to_dict(),
            "train": self.train.to_dict(),
            "k_folds": self.k_folds,
            "paths": self.paths,
            "seed": self.seed,
            **extra,
        }


def _echo_config(rc: RunConfig, out=None) -> None:
    print("# config " + json.dumps(rc.to_dict(), sort_keys=True), file=out or sys.stdout)


def _load_labeled(data_dir, n: int) -> dict[Label, list]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise CliError(EXIT_DATA, f"data directory {data_dir} does not exist")
    try:
        return load_chunks(data_dir, n)
    except (IqFormatError, OSError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


# -- subcommands ------------------------------------------------------------

SIMULATE_OPTS = ["seed", "n", "chunks", "legit_sigma", "spoof_sigma", "legit_amplitude",
                 "spoof_amplitude", "legit_k", "spoof_k", "phase_jitter"]


def cmd_simulate(args) -> int:
    v = resolve(args, SIMULATE_OPTS)
    if v["chunks"] < 1:
        raise CliError(EXIT_USAGE, "--chunks must be >= 1")
    if v["n"] < 1:
        raise CliError(EXIT_USAGE, "--n must be >= 1")
    try:
        legit = chansim.ChannelParams(v["legit_sigma"], v["legit_amplitude"], v["legit_k"], v["phase_jitter"], v["seed"])
        spoof = chansim.ChannelParams(v["spoof_sigma"], v["spoof_amplitude"], v["spoof_k"], v["phase_jitter"], v["seed"])
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    out = Path(args.out)
    ds = chansim.gen_dataset(legit, spoof, v["chunks"], v["n"], v["seed"])
    try:
        chansim.export_dataset(ds, out)
        rc = RunConfig.from_values(v, {"out": out})
        (out / "simulation.json").write_text(json.dumps(rc.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write to {out}: {exc}") from None
    print(f"legitimate: {len(ds.legit)}")
    print(f"spoofed: {len(ds.spoof)}")
    return EXIT_OK


TRAIN_OPTS = ["seed", "n", "grid", "range_min", "range_max", "epochs", "latent", "hidden",
              "sparsity", "sparsity_target", "l2", "train_fraction"]


def cmd_train(args) -> int:
    v = resolve(args, TRAIN_OPTS)
    rc = RunConfig.from_values(v, {"data": args.data, "model": args.model})
    if not 0.0 < v["train_fraction"] <= 1.0:
        raise CliError(EXIT_USAGE, "--train-fraction must lie in (0, 1]")
    chunks = _load_labeled(args.data, rc.chunk_size)[Label.LEGITIMATE]
    if len(chunks) < 2:
        raise CliError(EXIT_DATA, f"need at least 2 legitimate images, found {len(chunks)}")
    x = images_to_matrix(chunks, rc.grid)
    order = np.random.default_rng(rc.seed).permutation(len(x))
    n_train = max(2, int(round(v["train_fraction"] * len(x))))
    train_idx, hold_idx = np.sort(order[:n_train]), np.sort(order[n_train:])
    if rc.train.epochs == 0:
        print("warning: --epochs 0, writing an untrained detector", file=sys.stderr)

    t0 = time.perf_counter()
    det, result = detector.fit_detector(x[train_idx], rc.train, rc.grid)
    wall = time.perf_counter() - t0
    det.info = {"config": rc.to_dict(), "n_train": int(len(train_idx)), "n_holdout": int(len(hold_idx))}
    if len(hold_idx):
        far = float(np.mean(detector.score(det, x[hold_idx]) > det.tau))
        det.info["holdout_false_alarm_rate"] = far
    try:
        detector.save_detector(det, args.model)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write model {args.model}: {exc}") from None

    _echo_config(rc)
    print(f"images: {len(train_idx)} train, {len(hold_idx)} held out")
    print(f"final loss: {result.loss.total:.6e} (mse {result.loss.mse:.6e})")
    print(f"tau: {det.tau:.6e}")
    if "holdout_false_alarm_rate" in det.info:
        print(f"held-out false alarm rate: {det.info['holdout_false_alarm_rate']:.4f}")
    print(f"wall time: {wall:.2f} s")
    return EXIT_OK


def _detector_or_exit(path) -> detector.DetectorState:
    try:
        return detector.load_detector(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"missing detector file: {exc.filename}") from None
    except (ae.ModelFormatError, ValueError, KeyError) as exc:
        raise CliError(EXIT_COMPAT, f"cannot load detector {path}: {exc}") from None


def _captures(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.iq"))
    if not path.exists():
        raise CliError(EXIT_DATA, f"capture {path} does not exist")
    return [path]


def cmd_detect(args) -> int:
    det = _detector_or_exit(args.model)
    stored = det.info.get("config", {})
    v = resolve(args, ["n", "grid", "range_min", "range_max"])
    n = args.n if args.n is not None else int(stored.get("chunk_size", v["n"]))
    grid = det.grid
    if grid is None:
        grid = GridSpec.square(v["grid"], v["range_min"], v["range_max"])
    elif args.grid is not None and (args.grid, args.grid) != (grid.p, grid.q):
        raise CliError(EXIT_COMPAT, f"--grid {args.grid} does not match detector grid {grid.p}x{grid.q}")
    if grid.size != det.model.dims.d:
        raise CliError(EXIT_COMPAT, f"grid {grid.p}x{grid.q} does not match model input size {det.model.dims.d}")
    rc = RunConfig(n, grid, det.model.config, paths={"model": str(args.model), "capture": str(args.capture)},
                   seed=det.model.config.seed)
    _echo_config(rc)
    print("index\tsource\tmse\ttau\tdecision")
    counts = {d: 0 for d in detector.Decision}
    index = 0
    for path in _captures(args.capture):
        try:
            samples, meta = load_capture(path)
        except (IqFormatError, OSError) as exc:
            raise CliError(EXIT_DATA, str(exc)) from None
        for c in chunk(samples, n, meta.label, meta.source, meta.boundaries):
            verdict = detector.classify(det, make_histogram(c, grid))
            counts[verdict.decision] += 1
            print(f"{index}\t{c.source_id}\t{verdict.mse:.6e}\t{verdict.tau:.6e}\t{verdict.decision.value}")
            index += 1
    n_spoof = counts[detector.Decision.SPOOFED]
    print(f"# summary chunks={index} legitimate={counts[detector.Decision.LEGITIMATE]} spoofed={n_spoof}")
    return EXIT_SPOOF if n_spoof else EXIT_OK


EVAL_OPTS = ["seed", "n", "grid", "range_min", "range_max", "epochs", "latent", "hidden",
             "sparsity", "sparsity_target", "l2", "k", "reps"]


def cmd_eval(args) -> int:
    v = resolve(args, EVAL_OPTS)
    if v["k"] < 2:
        raise CliError(EXIT_USAGE, "--k must be >= 2")
    rc = RunConfig.from_values(v, {"data": args.data, "report": args.report})
    by_label = _load_labeled(args.data, rc.chunk_size)
    legit, spoof = by_label[Label.LEGITIMATE], by_label[Label.SPOOFED]
    if not legit or not spoof:
        raise CliError(EXIT_DATA, f"need both classes, found {len(legit)} legitimate and {len(spoof)} spoofed images")
    if len(legit) < rc.k_folds or len(legit) - len(legit) // rc.k_folds < 2:
        raise CliError(EXIT_DATA, f"{len(legit)} legitimate images are too few for {rc.k_folds} folds")

    first = {}

    def keep_first(i, det, _):
        first.setdefault("det", det)

    report = evalkit.kfold_eval(
        images_to_matrix(legit, rc.grid), images_to_matrix(spoof, rc.grid),
        rc.k_folds, rc.train, rc.seed, rc.grid, on_fold=keep_first,
    )
    if v["reps"] > 0:
        report.timing = evalkit.measure_overhead(first["det"], legit[0], rc.grid, v["reps"])
    report.config = rc.to_dict()

    base = Path(args.report)
    try:
        base.parent.mkdir(parents=True, exist_ok=True)
        base.write_text(report.to_json(), encoding="utf-8")
        base.with_suffix(".txt").write_text(report.to_text(), encoding="utf-8")
        base.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot write report {base}: {exc}") from None
    _echo_config(rc)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_export_images(args) -> int:
    v = resolve(args, ["n", "grid", "range_min", "range_max", "limit"])
    rc = RunConfig.from_values(v, {"capture": args.capture, "out": args.out})
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot create {out}: {exc}") from None
    written = 0
    for path in _captures(args.capture):
        try:
            samples, meta = load_capture(path)
        except (IqFormatError, OSError) as exc:
            raise CliError(EXIT_DATA, str(exc)) from None
        for idx, c in enumerate(chunk(samples, rc.chunk_size, meta.label, meta.source, meta.boundaries)):
            if v["limit"] and written >= v["limit"]:
                break
            export_pgm(make_histogram(c, rc.grid), out / f"{path.stem}_{idx:04d}.pgm")
            written += 1
    (out / "images.json").write_text(json.dumps(rc.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"images written: {written}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add(p: argparse.ArgumentParser, names) -> None:
    for name in names:
        typ, default, help_ = OPTIONS[name]
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                       help=f"{help_} (default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spoofguard", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic legitimate/spoofed dataset")
    _add(p, SIMULATE_OPTS)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a detector on legitimate captures")
    _add(p, TRAIN_OPTS)
    p.add_argument("--data", required=True, help="directory of .iq/.meta captures")
    p.add_argument("--model", default="detector.aemd", help="output model path; a .json sidecar is written next to it")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="classify every chunk of a capture")
    _add(p, ["n", "grid", "range_min", "range_max"])
    p.add_argument("--model", default="detector.aemd")
    p.add_argument("capture", help=".iq file or directory of captures")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="K-fold ROC AUC evaluation and overhead timing")
    _add(p, EVAL_OPTS)
    p.add_argument("--data", required=True)
    p.add_argument("--report", default="report.json", help="JSON report path; .txt and .csv written alongside")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-images", help="write PGM histogram images for a capture")
    _add(p, ["n", "grid", "range_min", "range_max", "limit"])
    p.add_argument("capture")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_export_images)

    for p in sub.choices.values():
        p.add_argument("--config", help="flat key=value configuration file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"spoofguard {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
