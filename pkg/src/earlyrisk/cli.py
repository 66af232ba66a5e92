"""Command-line interface.

Subcommands: gen-data, train, eval, compare, schedule. Exit codes:
0 success, 2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import DatasetMeta, SyntheticConfig, generate_synthetic, split_dataset
from .dataio import load_dataset, read_meta, save_dataset, write_meta
from .errors import ConfigError, DataError, DivergenceError, EarlyRiskError
from .evaluation import write_report_files
from .losses import dump_schedule
from .serde import as_float, as_int, as_str, check_keys
from .training import (
    compare,
    evaluate_split,
    load_checkpoint,
    loss_config_from_dict,
    model_from_checkpoint,
    save_checkpoint,
    train,
    train_config_from_dict,
    train_config_to_dict,
    write_comparison_csv,
    write_history_csv,
)

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")

_SYNTH_KEYS = {
    "num_clips",
    "positive_fraction",
    "num_frames",
    "frame_rate_F",
    "D_g",
    "D_l",
    "K",
    "precursor_onset_frames",
    "precursor_growth_tau",
    "noise_sigma",
    "num_classes",
    "seed",
}


def synthetic_config_from_dict(doc: dict, where: str) -> SyntheticConfig:
    check_keys(doc, _SYNTH_KEYS, where)
    if "num_clips" not in doc:
        raise ConfigError(f"{where}: num_clips is required")
    defaults = SyntheticConfig(num_clips=1)
    cfg = SyntheticConfig(
        num_clips=as_int(doc, "num_clips", None, where),
        positive_fraction=as_float(
            doc, "positive_fraction", defaults.positive_fraction, where
        ),
        num_frames=as_int(doc, "num_frames", defaults.num_frames, where),
        frame_rate_F=as_float(doc, "frame_rate_F", defaults.frame_rate_F, where),
        D_g=as_int(doc, "D_g", defaults.D_g, where),
        D_l=as_int(doc, "D_l", defaults.D_l, where),
        K=as_int(doc, "K", defaults.K, where),
        precursor_onset_frames=as_int(
            doc, "precursor_onset_frames", defaults.precursor_onset_frames, where
        ),
        precursor_growth_tau=as_float(
            doc, "precursor_growth_tau", defaults.precursor_growth_tau, where
        ),
        noise_sigma=as_float(doc, "noise_sigma", defaults.noise_sigma, where),
        num_classes=as_int(doc, "num_classes", defaults.num_classes, where),
        seed=as_int(doc, "seed", defaults.seed, where),
    )
    cfg.validate()
    return cfg


def _load_json(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return doc


def cmd_gen_data(args) -> int:
    doc = _load_json(args.config)
    where = str(args.config)
    gen_keys = _SYNTH_KEYS | {"name", "split_fractions", "split_seed"}
    check_keys(doc, gen_keys, where)
    name = as_str(doc, "name", "synthetic", where)
    fractions = doc.get("split_fractions", [0.8, 0.1, 0.1])
    if (
        not isinstance(fractions, (list, tuple))
        or len(fractions) != 3
        or not all(isinstance(f, (int, float)) and not isinstance(f, bool) for f in fractions)
    ):
        raise ConfigError(f"{where}: split_fractions must be three numbers")
    synth = synthetic_config_from_dict(
        {k: v for k, v in doc.items() if k in _SYNTH_KEYS}, where
    )
    split_seed = as_int(doc, "split_seed", synth.seed, where)

    dataset = generate_synthetic(synth)
    splits = dict(zip(SPLIT_NAMES, split_dataset(dataset, tuple(fractions), split_seed)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split_name, split in splits.items():
        save_dataset(out, split, split_name)
    meta = DatasetMeta(
        name=name,
        split_sizes={k: len(v) for k, v in splits.items()},
        frame_rate_F=synth.frame_rate_F,
        num_classes=synth.num_classes,
    )
    meta.validate(total=len(dataset))
    write_meta(out / "meta.json", meta)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in splits.items())
    print(f"wrote dataset {name!r} to {out} ({sizes})")
    return 0


def _load_splits(data_dir: Path, names) -> dict:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    meta = read_meta(data_dir / "meta.json")
    return meta, {
        name: load_dataset(
            data_dir, name, num_classes=meta.num_classes, frame_rate=meta.frame_rate_F
        )
        for name in names
    }


def cmd_train(args) -> int:
    config = train_config_from_dict(_load_json(args.config), str(args.config))
    meta, splits = _load_splits(args.data, SPLIT_NAMES)
    if config.loss.frame_rate_F != meta.frame_rate_F:
        raise ConfigError(
            f"loss frame_rate_F {config.loss.frame_rate_F} does not match the "
            f"dataset rate {meta.frame_rate_F}"
        )
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)

    checkpoint, records = train(config, splits["train"], splits["val"])
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(train_config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_checkpoint(run_dir / "checkpoint.bin", checkpoint)
    write_history_csv(run_dir / "history.csv", records)

    model = model_from_checkpoint(checkpoint)
    report = evaluate_split(model, splits["test"])
    write_report_files(run_dir, report)
    print(
        f"run {run_dir.name}: test mAP {report.macro_ap:.4f}, "
        f"test ATTC {report.macro_attc:.4f} s"
    )
    return 0


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    meta, splits = _load_splits(args.data, (args.split,))
    model = model_from_checkpoint(checkpoint)
    report = evaluate_split(model, splits[args.split])
    out = Path(args.out)
    write_report_files(out, report)
    print(
        f"{args.split} split: mAP {report.macro_ap:.4f}, "
        f"ATTC {report.macro_attc:.4f} s (report in {out})"
    )
    return 0


def cmd_compare(args) -> int:
    comparison = compare(args.run_dirs)
    print(comparison.render_table())
    if args.csv is not None:
        write_comparison_csv(Path(args.csv), comparison)
        print(f"merged CSV written to {args.csv}")
    return 0


def cmd_schedule(args) -> int:
    config = loss_config_from_dict(_load_json(args.config), str(args.config))
    phi_sequence = None
    if args.phi:
        try:
            phi_sequence = [float(x) for x in args.phi.split(",") if x.strip() != ""]
        except ValueError as exc:
            raise ConfigError(f"--phi must be comma-separated numbers: {exc}") from exc
    rows = dump_schedule(config, args.epochs, args.frames, phi_sequence)
    lines = ["epoch,t,d,alpha"]
    lines += [f"{e},{t},{d},{alpha!r}" for e, t, d, alpha in rows]
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"schedule written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="earlyrisk",
        description=(
            "Early incident anticipation: synthetic data generation, training "
            "with EL/LEA/AdaLEA anticipation losses, mAP/ATTC evaluation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset with splits")
    p.add_argument("--config", required=True, help="SyntheticConfig JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and evaluate on the test split")
    p.add_argument("--config", required=True, help="TrainConfig JSON file")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", required=True, help="run directory to create")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=SPLIT_NAMES)
    p.add_argument("--out", default=".", help="directory for report.json and curves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="tabulate metrics across run directories")
    p.add_argument("run_dirs", nargs="+", help="run directories from train")
    p.add_argument("--csv", default=None, help="write the merged per-epoch CSV here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("schedule", help="dump the penalty-weight schedule as CSV")
    p.add_argument("--config", required=True, help="LossConfig JSON file")
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--frames", type=int, required=True, help="clip length T")
    p.add_argument(
        "--phi",
        default="",
        help="comma-separated validated ATTC per completed epoch (AdaLEA)",
    )
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_schedule)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    except (DataError, EarlyRiskError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
