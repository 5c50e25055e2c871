"""Command-line harness: ingest, debug dumps, training, evaluation,
zero-shot runs, sweeps, embedding export and text corruption.

Machine-readable output (manifests, logs, tables) is JSON-lines or CSV on
files/stdout; human logs go to stderr. Exit codes: 0 ok, 2 data error,
3 missing artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import replace

from .cif import parse_cif, expand_symmetry, structure_to_dict
from .config import RunConfig, dump_config, load_config
from .elements import AtomFeatureSpec
from .errors import (ConfigError, MatfuseError, MissingArtifact,
                     NonFiniteLoss)
from .model import fused_embedding
from .text import corrupt_text, describe
from . import training as tr

log = logging.getLogger("matfuse")

EXIT_OK, EXIT_DATA, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4


def _data_dir() -> str:
    return os.environ.get("MATFUSE_DATA_DIR", "")


def _resolve(path: str) -> str:
    root = _data_dir()
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _load_run_config(args) -> RunConfig:
    cfg = load_config(_resolve(args.config)) if args.config else RunConfig()
    train = cfg.train
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if args.precision is not None:
        train = replace(train, precision=args.precision)
    return replace(cfg, train=train)


def _echo_config(cfg: RunConfig, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.toml"), "w") as fh:
        fh.write(dump_config(cfg))


def _require(path: str, what: str) -> str:
    path = _resolve(path)
    if not os.path.exists(path):
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def _load_split_manifest(path: str, cfg: RunConfig):
    records = tr.load_manifest(_require(path, "manifest"))
    if any(r.split is None for r in records):
        records = tr.split_dataset(records, cfg.data.split_fractions,
                                   cfg.train.seed)
    return records


def _featurize_splits(records, cfg: RunConfig, threads: int):
    spec = AtomFeatureSpec()
    raw = {}
    for name in ("train", "val", "test"):
        subset = tr.split_of(records, name)
        raw[name] = tr.featurize_records(subset, cfg.graph, spec,
                                         cfg.data.expand_symmetry,
                                         _data_dir(), threads)
    return raw


def _write_predictions(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "actual", "predicted"])
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args, cfg: RunConfig) -> int:
    cif_dir = _require(args.cif_dir, "CIF directory")
    targets_path = _require(args.targets, "targets file")
    targets = {}
    with open(targets_path) as fh:
        for row in csv.DictReader(fh):
            targets[row["id"]] = float(row["target"])

    os.makedirs(args.out, exist_ok=True)
    text_dir = os.path.join(args.out, "texts")
    os.makedirs(text_dir, exist_ok=True)
    records, skipped = [], 0
    for name in sorted(os.listdir(cif_dir)):
        if not name.endswith(".cif"):
            continue
        rec_id = name[:-4]
        path = os.path.join(cif_dir, name)
        if rec_id not in targets:
            log.warning("skip %s: no target value", rec_id)
            skipped += 1
            continue
        try:
            with open(path) as fh:
                s = expand_symmetry(parse_cif(fh.read(), rec_id))
        except MatfuseError as exc:
            log.warning("skip %s: %s", rec_id, exc)
            skipped += 1
            continue
        text_path = os.path.join(text_dir, rec_id + ".txt")
        with open(text_path, "w") as fh:
            fh.write(describe(s) + "\n")
        records.append(tr.ManifestRecord(rec_id, path, targets[rec_id],
                                         text_path, args.property,
                                         args.units))
    if not records:
        log.error("no usable records (skipped %d)", skipped)
        return EXIT_DATA
    tr.save_manifest(records, os.path.join(args.out, "manifest.jsonl"))
    log.info("wrote %d records (%d skipped) to %s", len(records), skipped,
             args.out)
    return EXIT_OK


def cmd_dump_structure(args, cfg: RunConfig) -> int:
    with open(_require(args.cif, "CIF file")) as fh:
        s = parse_cif(fh.read(), os.path.basename(args.cif))
    if args.expand:
        s = expand_symmetry(s)
    json.dump(structure_to_dict(s), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_describe(args, cfg: RunConfig) -> int:
    with open(_require(args.cif, "CIF file")) as fh:
        s = expand_symmetry(parse_cif(fh.read(), os.path.basename(args.cif)))
    sys.stdout.write(describe(s) + "\n")
    return EXIT_OK


def cmd_corrupt(args, cfg: RunConfig) -> int:
    with open(_require(args.infile, "text file")) as fh:
        text = fh.read()
    with open(args.out, "w") as fh:
        fh.write(corrupt_text(text, args.p, args.seed))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    records = _load_split_manifest(args.manifest, cfg)
    raw = _featurize_splits(records, cfg, args.threads)
    _echo_config(cfg, args.out)
    res = tr.train(raw["train"], raw["val"], cfg.model, cfg.train, cfg.graph)
    ckpt = tr.Checkpoint.from_result(res, cfg.graph)
    tr.save_checkpoint(ckpt, os.path.join(args.out, "checkpoint.bin"))
    with open(os.path.join(args.out, "log.jsonl"), "w") as fh:
        for rec in res.log:
            fh.write(json.dumps(rec) + "\n")
    metrics = {"best_val_mae": res.best_val_mae, "steps": res.steps}
    if raw["test"]:
        test = tr.prepare(raw["test"], res.vocab, cfg.train.max_len)
        ev = tr.evaluate_samples(test, res.params, cfg.model, res.norm,
                                 cfg.train.dtype)
        metrics.update(test_mae=ev["mae"], test_r2=ev["r2"])
        _write_predictions(ev["predictions"],
                           os.path.join(args.out, "predictions.csv"))
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=2)
    log.info("train done: %s", metrics)
    return EXIT_OK


def _load_checkpoint_ctx(path):
    ckpt = tr.load_checkpoint(_require(path, "checkpoint"))
    return (ckpt, ckpt.tensors(), ckpt.model_config(), ckpt.graph_config(),
            ckpt.vocab(), ckpt.target_norm())


def cmd_eval(args, cfg: RunConfig) -> int:
    ckpt, params, mcfg, gcfg, vocab, norm = _load_checkpoint_ctx(
        args.checkpoint)
    records = _load_split_manifest(args.manifest, cfg)
    subset = tr.split_of(records, args.split) or records
    raw = tr.featurize_records(subset, gcfg, AtomFeatureSpec(),
                               cfg.data.expand_symmetry, _data_dir(),
                               args.threads)
    samples = tr.prepare(raw, vocab, ckpt.max_len)
    ev = tr.evaluate_samples(samples, params, mcfg, norm)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    _write_predictions(ev["predictions"],
                       os.path.join(args.out, "predictions.csv"))
    result = {"split": args.split, "mae": ev["mae"], "r2": ev["r2"]}
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(result, fh, indent=2)
    print(json.dumps(result))
    return EXIT_OK


def cmd_zeroshot(args, cfg: RunConfig) -> int:
    ckpt, params, mcfg, gcfg, vocab, norm = _load_checkpoint_ctx(
        args.checkpoint)
    records = tr.load_manifest(_require(args.manifest, "manifest"))
    raw = tr.featurize_records(records, gcfg, AtomFeatureSpec(),
                               cfg.data.expand_symmetry, _data_dir(),
                               args.threads)
    ev = tr.zero_shot_eval(raw, params, mcfg, vocab, norm, ckpt.max_len)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    _write_predictions(ev["predictions"],
                       os.path.join(args.out, "predictions.csv"))
    result = {"mae": ev["mae"], "r2": ev["r2"],
              "unk_fraction": ev["unk_fraction"],
              "target_out_of_range_fraction":
                  ev["target_out_of_range_fraction"]}
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(result, fh, indent=2)
    print(json.dumps(result))
    return EXIT_OK


def cmd_sweep_robustness(args, cfg: RunConfig) -> int:
    records = _load_split_manifest(args.manifest, cfg)
    raw = _featurize_splits(records, cfg, args.threads)
    rows = tr.robustness_sweep(raw["train"], raw["val"], raw["test"],
                               cfg.sweep.robustness_fractions, cfg.model,
                               cfg.train, cfg.graph,
                               cfg.sweep.seeds or None)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    with open(os.path.join(args.out, "robustness.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fraction", "seed", "final_train_mse", "test_mae"])
        for r in rows:
            w.writerow([r["fraction"], r["seed"], r["final_train_mse"],
                        r["test_mae"]])
    return EXIT_OK


def cmd_sweep_corruption(args, cfg: RunConfig) -> int:
    records = _load_split_manifest(args.manifest, cfg)
    raw = _featurize_splits(records, cfg, args.threads)
    rows = tr.corruption_sweep(raw["train"], raw["val"], raw["test"],
                               cfg.sweep.corruption_p, cfg.model, cfg.train,
                               cfg.graph, cfg.sweep.corruption_mode,
                               cfg.sweep.seeds or None)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    with open(os.path.join(args.out, "corruption.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p", "seed", "mode", "final_train_mse", "test_mae"])
        for r in rows:
            w.writerow([r["p"], r["seed"], r["mode"],
                        r["train_loss_curve"][-1], r["test_mae"]])
    return EXIT_OK


def cmd_export_embeddings(args, cfg: RunConfig) -> int:
    ckpt, params, mcfg, gcfg, vocab, norm = _load_checkpoint_ctx(
        args.checkpoint)
    records = tr.load_manifest(_require(args.manifest, "manifest"))
    raw = tr.featurize_records(records, gcfg, AtomFeatureSpec(),
                               cfg.data.expand_symmetry, _data_dir(),
                               args.threads)
    samples = tr.prepare(raw, vocab, ckpt.max_len)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = mcfg.d_m
        w.writerow(["id"] + [f"e{k}" for k in range(dim)] + ["target"])
        for s in samples:
            emb = fused_embedding(s.graph, s.seq, params, mcfg)
            w.writerow([s.id] + [f"{x:.10g}" for x in emb] + [s.target])
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (TOML)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1,
                        help="featurization threads (1 = bit-deterministic)")
    common.add_argument("--precision", choices=("f32", "f64"),
                        help="override numeric precision")

    p = argparse.ArgumentParser(
        prog="matfuse",
        description="Crystal + text fusion model for material property "
                    "prediction")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", parents=[common],
                        help="parse CIFs + targets into a dataset manifest")
    sp.add_argument("--cif-dir", required=True)
    sp.add_argument("--targets", required=True,
                    help="CSV with columns id,target")
    sp.add_argument("--out", required=True)
    sp.add_argument("--property", default="formation_energy_per_atom")
    sp.add_argument("--units", default="eV/atom")
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("dump-structure", parents=[common],
                        help="debug: parse one CIF and dump JSON")
    sp.add_argument("cif")
    sp.add_argument("--expand", action="store_true")
    sp.set_defaults(fn=cmd_dump_structure)

    sp = sub.add_parser("describe", parents=[common],
                        help="print the generated text description")
    sp.add_argument("cif")
    sp.set_defaults(fn=cmd_describe)

    sp = sub.add_parser("corrupt", parents=[common],
                        help="write a corrupted copy of a text file")
    sp.add_argument("--in", dest="infile", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--p", type=float, required=True)
    sp.set_defaults(fn=cmd_corrupt)

    for name, fn, needs_ckpt in (
            ("train", cmd_train, False),
            ("eval", cmd_eval, True),
            ("zeroshot", cmd_zeroshot, True),
            ("sweep-robustness", cmd_sweep_robustness, False),
            ("sweep-corruption", cmd_sweep_corruption, False),
            ("export-embeddings", cmd_export_embeddings, True)):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--out", required=True)
        if needs_ckpt:
            sp.add_argument("--checkpoint", required=True)
        if name == "eval":
            sp.add_argument("--split", default="test",
                            choices=("train", "val", "test"))
        sp.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.seed is None and args.command == "corrupt":
        args.seed = 0
    try:
        cfg = _load_run_config(args)
        return args.fn(args, cfg)
    except MissingArtifact as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(json.dumps({"error": "MissingArtifact", "message": str(exc)}))
        return EXIT_MISSING
    except NonFiniteLoss as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_NUMERIC
    except (MatfuseError, ConfigError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
