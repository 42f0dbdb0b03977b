"""Command-line front end: ingest, train, eval, assess, scenario.

Exit codes: 0 success, 2 input error, 3 precondition failure, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, load_config, parse_overrides
from .data import (
    SplitManifest,
    extract_windows,
    parse_highd,
    parse_ngsim,
    preprocess,
    read_samples,
    split_dataset,
    write_sample_store,
)
from .errors import (
    FormatError,
    InsufficientData,
    InvalidParameter,
    InvalidValue,
    MissingVehicle,
    NumericalError,
    ParseError,
    PredRiskError,
)
from .model import AblationConfig, config_fingerprint
from .planning import default_ax_grid
from .scenarios import SCENARIOS, assess, read_scenario, write_scenario
from .training import evaluate, load_model, train

log = logging.getLogger("predrisk")

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3, 4


class InputError(Exception):
    """Bad paths or arguments detected before any work is done."""


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _write_run_metadata(out: Path, command: str, cfg: RunConfig, extra: dict | None = None):
    doc = {
        "command": command,
        "config": cfg.to_dict(),
        "fingerprint": config_fingerprint(cfg.model, cfg.train, cfg.ablation, cfg.risk),
        "seeds": cfg.seeds,
        "versions": {
            "predrisk": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    doc.update(extra or {})
    _dump(out / "run.json", doc)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} {p} does not exist")
    return p


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.out_dir)


# commands


def cmd_ingest(args, cfg: RunConfig) -> int:
    inputs = list(args.input or cfg.data.inputs)
    metas = list(args.highd_meta or cfg.data.highd_meta)
    if not inputs:
        raise InputError("no input files given ([data] inputs or --input)")
    for p in inputs + metas:
        _require(p, "input")
    if cfg.data.source == "highd" and len(metas) != len(inputs):
        raise InputError("highD needs one recordingMeta file per tracks file")

    recordings, errors = [], []
    for k, path in enumerate(inputs):
        try:
            if cfg.data.source == "ngsim":
                recordings.append(parse_ngsim(path))
            else:
                recordings.append(parse_highd(path, metas[k]))
        except (ParseError, InvalidValue, FormatError) as exc:
            errors.append(f"{path}: {exc}")
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        print(f"{len(errors)} input file(s) failed to parse", file=sys.stderr)
        return EXIT_INPUT

    samples = []
    for k, rec in enumerate(recordings):
        rec = preprocess(rec, cfg.preprocess.cutoff_hz)
        cut = extract_windows(rec, stride=cfg.preprocess.stride_s, window=cfg.preprocess.window_m)
        if len(recordings) > 1:
            cut = [dataclasses.replace(s, sample_id=f"{k}/{s.sample_id}") for s in cut]
        samples.extend(cut)
    manifest = split_dataset(samples, cfg.preprocess.split_seed)
    out = _out_dir(args, cfg)
    meta = {"source": cfg.data.source, "inputs": [Path(p).name for p in inputs],
            "n_samples": len(samples)}
    write_sample_store(out, samples, manifest, meta)
    _write_run_metadata(out, "ingest", cfg)
    print(f"{len(samples)} samples -> {out}")
    return EXIT_OK


def _load_split(store: Path, name: str):
    path = store / f"{name}.jsonl"
    if not path.exists():
        raise InputError(f"split file {path} does not exist")
    return read_samples(path)


def _ablation(args, cfg: RunConfig) -> AblationConfig:
    abl = cfg.ablation
    if args.channels:
        abl = dataclasses.replace(abl, channels=tuple(int(c) for c in args.channels.split(",")))
    if args.positions:
        abl = dataclasses.replace(abl, positions=args.positions)
    if args.motion:
        abl = dataclasses.replace(abl, motion=args.motion)
    return abl


def cmd_train(args, cfg: RunConfig) -> int:
    store = _require(args.data or cfg.data.samples, "sample store")
    if args.resume:
        _require(args.resume, "checkpoint")
    train_s, val_s = _load_split(store, "train"), _load_split(store, "val")
    abl = _ablation(args, cfg)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    result = train(train_s, val_s, cfg.model, cfg.train, abl, checkpoint_dir=out,
                   resume_from=args.resume)
    (out / "loss_curve.csv").write_text(result.loss_curve_csv(), encoding="utf-8")
    cfg = dataclasses.replace(cfg, ablation=abl)
    _write_run_metadata(out, "train", cfg, {"best_epoch": result.best_epoch,
                                             "stopped_early": result.stopped_early})
    print(f"best validation loss {result.best_val:.6g} at epoch {result.best_epoch} -> {out / 'best.json'}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    if bool(args.checkpoint) == bool(args.baseline):
        raise InputError("give exactly one of --checkpoint or --baseline")
    model = args.baseline or str(_require(args.checkpoint, "checkpoint"))
    store = _require(args.data or cfg.data.samples, "sample store")
    samples = _load_split(store, args.split)
    report = evaluate(model, samples)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    _write_run_metadata(out, "eval", cfg, {"split": args.split, "model": report.model})
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_assess(args, cfg: RunConfig) -> int:
    if args.builtin:
        scenario = SCENARIOS[args.builtin]()
    elif args.scenario:
        scenario = read_scenario(_require(args.scenario, "scenario file"))
    else:
        raise InputError("give --scenario FILE or --builtin NAME")
    if args.checkpoint:
        predictor = load_model(_require(args.checkpoint, "checkpoint"))
    else:
        predictor = args.baseline or "cv"
    result = assess(scenario, predictor, cfg.risk, default_ax_grid(cfg.ax_step))
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "risk_map.csv").write_text(result.risk_map.to_csv(), encoding="utf-8")
    (out / "risk_map_header.json").write_text(result.risk_map.header_json(), encoding="utf-8")
    _dump(out / "summary.json", result.summary())
    rows = result.overlay_rows()
    if rows:
        with open(out / "overlay.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ov_id", "step", "t", "pred_x", "pred_y", "true_x", "true_y"])
            w.writerows(rows)
    _write_run_metadata(out, "assess", cfg, {"scenario": scenario.name,
                                              "predictor": result.predictor})
    print(f"risk map {result.risk_map.shape} -> {out / 'risk_map.csv'}")
    return EXIT_OK


def cmd_scenario(args, cfg: RunConfig) -> int:
    path = Path(args.path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_scenario(SCENARIOS[args.name](), path)
    print(f"{args.name} -> {path}")
    return EXIT_OK


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="predrisk", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style run configuration")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", default=[],
                        help="override one configuration value (repeatable)")
    common.add_argument("--out", help="output directory (default: [run] out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse, filter, window and split a dataset")
    p.add_argument("--source", choices=("ngsim", "highd"))
    p.add_argument("--input", action="append", help="trajectory file (repeatable)")
    p.add_argument("--highd-meta", action="append", help="highD recordingMeta file (repeatable)")
    p.add_argument("--split-seed", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train the predictor on a sample store")
    p.add_argument("--data", help="sample store directory written by ingest")
    p.add_argument("--channels", help="active interaction channels, e.g. 1 or 1,2,3")
    p.add_argument("--positions", choices=("pos", "pos+vel", "pos+vel+acc"))
    p.add_argument("--motion", choices=("abs", "abs+rel"))
    p.add_argument("--resume", help="resume from a last.json training checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="per-horizon RMSE report")
    p.add_argument("--data", help="sample store directory")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=("cv", "ca", "oracle"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("assess", parents=[common], help="risk map for a scenario")
    p.add_argument("--scenario", help="scenario CSV file")
    p.add_argument("--builtin", choices=sorted(SCENARIOS))
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=("cv", "ca"))
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("scenario", parents=[common], help="write a built-in scenario file")
    p.add_argument("name", choices=sorted(SCENARIOS))
    p.add_argument("path")
    p.set_defaults(func=cmd_scenario)
    return ap


def _config_from_args(args) -> RunConfig:
    overrides = parse_overrides(args.set)
    if getattr(args, "source", None):
        overrides.setdefault("data", {})["source"] = args.source
    if getattr(args, "split_seed", None) is not None:
        overrides.setdefault("preprocess", {})["split_seed"] = str(args.split_seed)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        return args.func(args, cfg)
    except (InputError, FileNotFoundError, ParseError, InvalidValue, FormatError,
            InvalidParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InsufficientData, MissingVehicle) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PredRiskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
