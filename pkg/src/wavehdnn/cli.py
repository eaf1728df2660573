"""``wavehdnn`` command line: ingest, synth, train, evaluate, ablate, sweep, report.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
3 checkpoint/dataset mismatch.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data, synthetic, trainer
from . import model as M
from .config import ConfigError, TrainConfig, coerce, load_config
from .metrics import DEFAULT_KS, evaluate

log = logging.getLogger("wavehdnn")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_MISMATCH = 0, 1, 2, 3
METRIC_COLUMNS = tuple(f"{m}@{k}" for k in DEFAULT_KS for m in ("recall", "ndcg"))


class UsageError(Exception):
    pass


class MismatchError(Exception):
    pass


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def git_blob_hash(blob: bytes) -> str:
    """Hash of ``blob`` as git would store it (sha1 over ``blob <len>\\0`` + bytes)."""
    return hashlib.sha1(b"blob %d\0" % len(blob) + blob).hexdigest()


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        out[k] = coerce(k, v)
    return out


def _config(args, **extra) -> TrainConfig:
    overrides = {**_parse_sets(getattr(args, "set", None)), **extra}
    return load_config(getattr(args, "config", None), overrides)


def _load_archive(path) -> data.InteractionDataset:
    p = Path(path)
    if not (p / "meta.json").exists():
        raise UsageError(f"{p} is not a split archive (no meta.json); run `wavehdnn ingest` first")
    return data.read_archive(p)


# -- ingest / synth ---------------------------------------------------------

def cmd_ingest(args) -> int:
    raw = data.load_interactions(args.input)
    ds = data.remap_and_split(raw, args.seed)
    out = data.write_archive(ds, args.out)
    stats = data.compute_stats(ds)
    _write_json(out / "stats.json", {
        "num_users": stats.num_users, "num_items": stats.num_items,
        "num_interactions": stats.num_interactions, "density": stats.density,
        "density_display": data.format_density(stats.density),
        "fingerprint": data.fingerprint(ds)})
    print(stats.table_row(args.name or Path(args.input).name))
    return EXIT_OK


def cmd_synth(args) -> int:
    pairs, _ = synthetic.heterophilic_pairs(num_users=args.users, num_items=args.items, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in pairs:
            fh.write(f"u{u}\ti{i}\n")
    print(f"wrote {len(pairs)} interactions to {out}")
    return EXIT_OK


# -- training runs ----------------------------------------------------------

def run_label(cfg: TrainConfig) -> str:
    if cfg.model == "lightgcn":
        return "lightgcn"
    return "wavehdnn" if cfg.ablation == "full" else f"wavehdnn-{cfg.ablation}"


def train_one(ds, fp: str, cfg: TrainConfig, run_dir: Path, force: bool = False) -> dict:
    """Train one seed into ``run_dir``; returns the finalized manifest.

    A run whose manifest is complete and matches config and data is reused.
    """
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists() and not force:
        old = _read_json(manifest_path)
        if (old.get("status") == "complete" and old.get("config") == cfg.to_dict()
                and old.get("dataset_fingerprint") == fp):
            log.info("%s: matching manifest, skipping (use --force to rerun)", run_dir)
            return old
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"run_id": run_dir.name, "label": run_label(cfg), "config": cfg.to_dict(),
                "dataset_fingerprint": fp, "status": "running", "started": _now()}
    _write_json(manifest_path, manifest)

    graph = trainer.prepare_graph(ds, cfg)
    res = trainer.fit(ds, cfg, graph, log_path=run_dir / "log.jsonl")
    blob = M.save_checkpoint(run_dir / "best.ckpt", res.params, cfg.model, cfg.layers)
    E_u, E_i = M.final_embeddings(cfg.model, res.params, graph, cfg.layers, cfg.ablation)
    reports = {}
    for split in ("val", "test"):
        rep = evaluate(E_u, E_i, ds, split, seed=cfg.seed)
        (run_dir / f"report_{split}.json").write_text(rep.to_json() + "\n", encoding="utf-8")
        reports[split] = rep.to_dict()
    manifest.update(status="aborted" if res.aborted else "complete", finished=_now(),
                    checkpoint_hash=git_blob_hash(blob), best_epoch=res.best_epoch,
                    epochs_run=res.epochs_run, best_val=res.best_val, aborted=res.aborted,
                    graph=graph.info, reports=reports)
    _write_json(manifest_path, manifest)
    return manifest


def aggregate(manifests: list[dict]) -> dict:
    """Mean and population standard deviation per metric and split over seeds."""
    out = {"label": manifests[0]["label"], "runs": [m["run_id"] for m in manifests],
           "seeds": [m["config"]["seed"] for m in manifests], "splits": {}}
    for split in ("val", "test"):
        per = [m["reports"][split]["metrics"] for m in manifests if m["reports"][split]["metrics"]]
        if not per:
            continue
        keys = sorted(per[0])
        out["splits"][split] = {
            "mean": {k: float(np.mean([p[k] for p in per])) for k in keys},
            "std": {k: float(np.std([p[k] for p in per])) for k in keys},
            "n": len(per),
        }
    return out


def train_seeds(ds, cfg: TrainConfig, out: Path, seeds: int, force: bool) -> tuple[list, dict]:
    fp = data.fingerprint(ds)
    manifests = []
    for k in range(seeds):
        c = cfg.with_(seed=cfg.seed + k)
        manifests.append(train_one(ds, fp, c, out / f"seed{c.seed}", force))
    agg = aggregate(manifests)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "aggregate.json", agg)
    return manifests, agg


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _load_archive(args.data)
    manifests, agg = train_seeds(ds, cfg, Path(args.out), args.seeds, args.force)
    test = agg["splits"].get("test", {}).get("mean", {})
    print(json.dumps({"label": agg["label"], "test": test}, sort_keys=True))
    return EXIT_RUNTIME if any(m["status"] != "complete" for m in manifests) else EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    ds = _load_archive(args.data)
    out = Path(args.out)
    failed = False
    rows = []
    for variant in args.variants.split(","):
        c = cfg.with_(model="lightgcn") if variant == "lightgcn" else cfg.with_(ablation=variant)
        manifests, agg = train_seeds(ds, c, out / variant, args.seeds, args.force)
        failed |= any(m["status"] != "complete" for m in manifests)
        rows.append(agg)
    print(render_table(rows, "md", args.split), end="")
    return EXIT_RUNTIME if failed else EXIT_OK


# -- evaluate ---------------------------------------------------------------

def cmd_evaluate(args) -> int:
    ck = M.load_checkpoint(args.checkpoint)
    ds = _load_archive(args.data)
    if (ck.num_users, ck.num_items) != (ds.num_users, ds.num_items):
        raise MismatchError(f"checkpoint has {ck.num_users} users x {ck.num_items} items, "
                            f"dataset has {ds.num_users} users x {ds.num_items} items")
    manifest = Path(args.checkpoint).with_name("manifest.json")
    extra = {"model": ck.kind, "layers": ck.layers, "dim": ck.dim}
    if args.config is None and manifest.exists():
        base = _read_json(manifest)["config"]
        cfg = TrainConfig(**{**base, **_parse_sets(args.set), **extra})
    else:
        cfg = _config(args, **extra)
    graph = trainer.prepare_graph(ds, cfg)
    E_u, E_i = M.final_embeddings(ck.kind, ck.params, graph, ck.layers, cfg.ablation)
    print(evaluate(E_u, E_i, ds, args.split, seed=cfg.seed).to_json())
    return EXIT_OK


# -- sweep ------------------------------------------------------------------

def parse_grid(text: str) -> dict:
    """``key = v1, v2, ...`` lines (brackets optional, ``a..b`` for int ranges)."""
    axes = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"grid line {lineno}: expected 'key = v1, v2, ...'")
        key, raw = (s.strip() for s in line.split("=", 1))
        raw = raw.strip("[]() ")
        if ".." in raw and "," not in raw:
            lo, hi = raw.split("..")
            values = [coerce(key, v) for v in range(int(lo), int(hi) + 1)]
        else:
            values = [coerce(key, v) for v in raw.split(",") if v.strip()]
        if not values:
            raise UsageError(f"grid line {lineno}: axis {key!r} has no values")
        axes[key] = values
    if not axes:
        raise UsageError("grid is empty")
    return axes


def _cell_name(cell: dict) -> str:
    return "_".join(f"{k}={v}" for k, v in cell.items())


def cmd_sweep(args) -> int:
    grid_path = Path(args.grid)
    if not grid_path.exists():
        raise UsageError(f"grid file {grid_path} not found")
    axes = parse_grid(grid_path.read_text(encoding="utf-8"))
    if args.mode == "product":
        cells = [dict(zip(axes, combo)) for combo in itertools.product(*axes.values())]
    else:
        cells = [{k: v} for k, values in axes.items() for v in values]
    cfg = _config(args)
    ds = _load_archive(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    axis_names = list(axes)
    rows, status = [], []
    for cell in cells:
        name = _cell_name(cell)
        try:
            manifests, _ = train_seeds(ds, cfg.with_(**cell), out / name, args.seeds, args.force)
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
            log.error("cell %s failed: %s", name, exc)
            status.append({"cell": name, "status": "failed", "error": str(exc)})
            continue
        status.append({"cell": name, "status": "complete"})
        for m in manifests:
            for split in ("val", "test"):
                for metric, value in m["reports"][split]["metrics"].items():
                    mname, k = metric.split("@")
                    rows.append({"cell": name, **{a: cell.get(a, "") for a in axis_names},
                                 "seed": m["config"]["seed"], "split": split, "metric": mname,
                                 "k": int(k), "value": repr(float(value))})
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, ["cell", *axis_names, "seed", "split", "metric", "k", "value"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _write_json(out / "sweep.json", {"axes": axes, "mode": args.mode, "cells": status})
    print(f"{sum(s['status'] == 'complete' for s in status)}/{len(status)} cells complete; "
          f"{len(rows)} rows in {out / 'sweep.csv'}")
    return EXIT_RUNTIME if all(s["status"] == "failed" for s in status) else EXIT_OK


# -- report -----------------------------------------------------------------

def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def render_table(aggs: list[dict], fmt: str, split: str = "test") -> str:
    rows = [(a["label"], a["splits"].get(split, {}).get("mean", {})) for a in aggs]
    if fmt == "json":
        return json.dumps([{"label": lab, **{c: m.get(c) for c in METRIC_COLUMNS}}
                           for lab, m in rows], indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", *METRIC_COLUMNS])
        for lab, m in rows:
            w.writerow([lab, *(("" if m.get(c) is None else repr(m[c])) for c in METRIC_COLUMNS)])
        return buf.getvalue()
    best = {}
    if len(rows) > 1:
        for c in METRIC_COLUMNS:
            vals = [m[c] for _, m in rows if m.get(c) is not None]
            best[c] = max(vals) if vals else None
    lines = ["| model | " + " | ".join(c.replace("recall", "Recall").replace("ndcg", "NDCG")
                                        for c in METRIC_COLUMNS) + " |",
             "|---" * (len(METRIC_COLUMNS) + 1) + "|"]
    for lab, m in rows:
        cells = []
        for c in METRIC_COLUMNS:
            s = _fmt(m.get(c))
            if s and best.get(c) is not None and m[c] == best[c]:
                s = f"**{s}**"
            cells.append(s)
        lines.append(f"| {lab} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    aggs = []
    for d in args.runs:
        p = Path(d) / "aggregate.json"
        if not p.exists():
            log.warning("%s has no aggregate.json, skipped", d)
            continue
        aggs.append(_read_json(p))
    if not aggs:
        log.error("no run directory had an aggregate.json")
        return EXIT_RUNTIME
    sys.stdout.write(render_table(aggs, args.format, args.split))
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wavehdnn", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="WARNING")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="split raw user<TAB>item interactions 7:1:2")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", help="dataset name for the printed stats row")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic heterophilic benchmark as raw TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=400)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train one or more seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--force", action="store_true")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("val", "test"), default="test")
    _add_config_args(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="train the full model and its single-channel variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--variants", default="full,no_het,no_wave")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--force", action="store_true")
    _add_config_args(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", parents=[common], help="train every grid cell and write a tidy sweep.csv")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--mode", choices=("axes", "product"), default="axes",
                   help="vary one axis at a time (default) or take the cartesian product")
    p.add_argument("--force", action="store_true")
    _add_config_args(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="compare aggregate.json files across run directories")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--format", choices=("json", "csv", "md"), default="md")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, data.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (OSError, M.CheckpointError, FloatingPointError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
