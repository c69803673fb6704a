"""Command-line harness.

    remixgan run      --config cfg.yaml --set scheme=mixup
    remixgan matrix   --schemes none,mixup,remix --fractions 0.1,1.0 --seeds 0,1,2
    remixgan export   --checkpoint runs/x/checkpoint.json --n 8 --out samples/
    remixgan gen-data --n 32 --out data/
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from .config import OUTPUT_ENV, ConfigError, parse_config, schema_help
from .trainer import Trainer, run_experiment

log = logging.getLogger("remixgan")

MATRIX_VERSION = 1
METRICS = ("frechet", "diversity", "content_error")
MATRIX_COLUMNS = ["scheme", "data_fraction", "n_seeds", "n_failed"] + [
    f"{m}_{stat}" for m in METRICS for stat in ("mean", "std")
] + ["errors"]
RUN_COLUMNS = ["scheme", "data_fraction", "seed", "status"] + list(METRICS) + ["error"]


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _run_cell(cell):
    base, overrides = cell
    try:
        report = run_experiment(base.replace(**overrides), progress=False)
        return {"status": "ok", **{m: report.summary[m] for m in METRICS}, "error": ""}
    except Exception as exc:  # recorded per cell; the matrix keeps going
        return {"status": "failed", **{m: float("nan") for m in METRICS}, "error": f"{type(exc).__name__}: {exc}"}


def run_matrix(base_cfg, schemes, fractions, seeds, out_dir=None, jobs=1):
    """Run every (scheme, fraction, seed) and aggregate mean/std over seeds.

    Writes ``runs.csv`` (one row per run) and ``matrix.csv`` (one row per
    scheme x fraction) under ``out_dir`` and returns the aggregated rows.
    """
    if not schemes or not fractions or not seeds:
        raise ValueError("schemes, fractions and seeds must all be nonempty")
    out = Path(out_dir or base_cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for scheme in schemes:
        for fraction in fractions:
            for seed in seeds:
                name = f"{scheme}_f{fraction:g}_s{seed}"
                overrides = dict(scheme=scheme, data_fraction=float(fraction), seed=int(seed),
                                 output_dir=str(out / "runs" / name))
                cells.append(((scheme, float(fraction), int(seed)), (base_cfg, overrides)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, [c for _, c in cells]))
    else:
        results = []
        for key, cell in cells:
            log.info("matrix cell scheme=%s fraction=%g seed=%d", *key)
            results.append(_run_cell(cell))

    run_rows = [{"scheme": k[0], "data_fraction": k[1], "seed": k[2], **r} for (k, _), r in zip(cells, results)]
    with open(out / "runs.csv", "w", newline="") as fh:
        fh.write(f"# remixgan runs v{MATRIX_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(RUN_COLUMNS)
        for row in run_rows:
            w.writerow([_fmt(row[c]) for c in RUN_COLUMNS])

    table = []
    for scheme in schemes:
        for fraction in fractions:
            group = [r for r in run_rows if r["scheme"] == scheme and r["data_fraction"] == float(fraction)]
            ok = [r for r in group if r["status"] == "ok"]
            row = {"scheme": scheme, "data_fraction": float(fraction), "n_seeds": len(ok),
                   "n_failed": len(group) - len(ok),
                   "errors": "; ".join(r["error"] for r in group if r["error"])}
            for m in METRICS:
                vals = np.array([r[m] for r in ok], dtype=np.float64)
                row[f"{m}_mean"] = float(vals.mean()) if vals.size else float("nan")
                row[f"{m}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            table.append(row)
    with open(out / "matrix.csv", "w", newline="") as fh:
        fh.write(f"# remixgan matrix v{MATRIX_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(MATRIX_COLUMNS)
        for row in table:
            w.writerow([_fmt(row[c]) for c in MATRIX_COLUMNS])
    return table, run_rows


def export_samples(checkpoint, n, out_dir):
    """Write ``n`` held-out source/output pairs as PGM files plus ``manifest.csv``."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    trainer, _ = Trainer.from_checkpoint(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = min(n, len(trainer.test_x))
    outputs = trainer.translate(trainer.test_x[:n]) if n else np.zeros((0, 1, 16, 16))
    rows = []
    for i in range(n):
        src, dst = f"source_{i:04d}.pgm", f"output_{i:04d}.pgm"
        data_mod.write_pgm(out / src, trainer.test_x[i, 0])
        data_mod.write_pgm(out / dst, outputs[i, 0])
        rows.append([i, trainer.cfg.n_train + i, src, dst])
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "dataset_index", "source", "output"])
        w.writerows(rows)
    return out / "manifest.csv"


def _parse_sets(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


def _csv_list(text, typ):
    return [typ(t) for t in text.split(",") if t.strip()]


def build_parser():
    keys = "config keys (set in the YAML file or with --set KEY=VALUE):\n" + schema_help()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="remixgan", description="ReMix augmentation experiments on a toy "
                                     "image-translation task.", epilog=keys, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="flat YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", help="shortcut for --set seed=...")
        p.add_argument("--output-dir", help=f"shortcut for --set output_dir=... (env {OUTPUT_ENV} sets the default)")

    p = sub.add_parser("run", help="train and evaluate one configuration", epilog=keys, formatter_class=fmt)
    add_config_args(p)
    p.add_argument("--scheme", help="shortcut for --set scheme=...")
    p.add_argument("--iterations", help="shortcut for --set iterations=...")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("matrix", help="scheme x fraction x seed grid", epilog=keys, formatter_class=fmt)
    add_config_args(p)
    p.add_argument("--schemes", default="none,mixup,remix")
    p.add_argument("--fractions", default="0.1,1.0")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("export", help="write source/output sample pairs from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", help="dump the synthetic dataset as PGM files")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _config_from_args(args):
    overrides = _parse_sets(args.set)
    for flag, key in (("seed", "seed"), ("output_dir", "output_dir"), ("scheme", "scheme"),
                      ("iterations", "iterations")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return parse_config(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            report = run_experiment(cfg, resume=args.resume)
            s = report.summary
            print(f"{cfg.scheme} seed={cfg.seed} fraction={cfg.data_fraction:g}: frechet={s['frechet']:.6g} "
                  f"diversity={s['diversity']:.6g} content_error={s['content_error']:.6g} -> {cfg.output_dir}")
        elif args.command == "matrix":
            cfg = _config_from_args(args)
            table, _ = run_matrix(cfg, _csv_list(args.schemes, str), _csv_list(args.fractions, float),
                                  _csv_list(args.seeds, int), cfg.output_dir, args.jobs)
            for row in table:
                print(f"{row['scheme']:>6} {row['data_fraction']:>5g}  "
                      + "  ".join(f"{m}={row[m + '_mean']:.5g}±{row[m + '_std']:.2g}" for m in METRICS)
                      + (f"  failed={row['n_failed']}" if row["n_failed"] else ""))
            if any(row["n_failed"] for row in table):
                return 1
        elif args.command == "export":
            print(export_samples(args.checkpoint, args.n, args.out))
        elif args.command == "gen-data":
            if args.n < 0:
                raise ValueError("--n must be nonnegative")
            print(data_mod.export_dataset(args.out, args.n, args.seed, args.start))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
