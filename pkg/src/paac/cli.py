"""Command-line entry point: ``paac {prepare,train,eval,sweep,stats}``.

Settings resolve as CLI flag > config file > preset > built-in default, and
every run writes ``config.resolved`` so it can be repeated exactly.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from paac import dataset as ds_mod
from paac.encoder import build_adjacency, propagate, save_embeddings
from paac.errors import PAACError
from paac.evaluation import evaluate, reports_to_csv, reports_to_json, separation_report
from paac.losses import Hyperparams
from paac.trainer import TrainConfig, fit, load_checkpoint

log = logging.getLogger("paac")

PRESETS = {
    "paac": {},
    "simgcl": {"lambda1": 0.0, "gamma": 0.5, "beta": 1.0},
    "lightgcn": {"lambda1": 0.0, "lambda2": 0.0},
}
SWEEPABLE = ("lambda1", "lambda2", "gamma", "beta", "x_ratio")


def _default_seed() -> int:
    return int(os.environ.get("PAAC_SEED", 0))


@dataclass
class RunConfig:
    data_dir: str = ""
    out_dir: str = "runs/default"
    k_list: list = field(default_factory=lambda: [20])
    pareto_pct: float = 20.0
    eval_every: int = 1
    patience: int = 10
    max_epochs: int = 100
    ablation: str = "full"
    preset: str = "paac"
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1e-4
    gamma: float = 0.5
    beta: float = 0.5
    x_ratio: float = 50.0
    tau: float = 0.2
    epsilon: float = 0.1
    layers: int = 2
    lr: float = 1e-3
    dim: int = 64
    batch_size: int = 2048
    seed: int = field(default_factory=_default_seed)
    normalize_views: bool = True
    dtype: str = "float64"
    reduction: str = "sum"

    def hyperparams(self) -> Hyperparams:
        kw = {f: getattr(self, f) for f in Hyperparams.field_names() if hasattr(self, f)}
        kw["epochs"] = self.max_epochs
        return Hyperparams(**kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(hp=self.hyperparams(), eval_every=self.eval_every, patience=self.patience,
                           max_epochs=self.max_epochs, checkpoint_dir=self.out_dir,
                           ablation=self.ablation)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw):
    kinds = {f.name: f for f in fields(RunConfig)}
    if name not in kinds:
        raise KeyError(name)
    default = RunConfig().__getattribute__(name)
    if isinstance(raw, str):
        raw = raw.strip()
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, list):
        items = raw.split(",") if isinstance(raw, str) else raw
        return [int(v) for v in items if str(v).strip()]
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return str(raw)


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ds_mod.ParseError("expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = _coerce(key, value)
        except KeyError:
            raise ds_mod.ParseError(f"unknown config key {key!r}", line=lineno) from None
    return values


def resolve_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    file_values = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_values = parse_config_text(fh.read())
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    preset = overrides.get("preset", file_values.get("preset", "paac"))
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = {**PRESETS[preset], **file_values, **overrides, "preset": preset}
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    cfg.ablation = cfg.ablation.replace("-", "_")
    return cfg


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_prepare(input_path, out_dir, fmt="tsv", k_core=10, test_fraction=0.1,
                val_fraction=0.1, seed=0) -> dict:
    raw = ds_mod.load_interactions(input_path, fmt)
    filtered = ds_mod.k_core_filter(raw, k_core) if k_core > 1 else ds_mod.deduplicate(raw)
    data = ds_mod.build_unbiased_split(filtered, test_fraction, val_fraction, seed)
    stats = ds_mod.write_split_manifest(data, out_dir)
    log.info("prepared %s: M=%d N=%d interactions=%d gini=%.3f", out_dir, stats["M"], stats["N"],
             stats["interactions"], stats["gini_full"])
    return stats


def cmd_train(cfg: RunConfig) -> dict:
    data = ds_mod.read_split_manifest(cfg.data_dir)
    pop = ds_mod.build_popularity_index(data)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    log.info("effective config:\n%s", cfg.to_text())
    with open(os.path.join(cfg.out_dir, "train_log.jsonl"), "w", encoding="utf-8") as log_file:
        report, state = fit(data, cfg.train_config(), pop, log_file=log_file)
    write_json(os.path.join(cfg.out_dir, "report.json"), report.as_dict())
    prop = propagate(state, build_adjacency(data).astype(state.user_base.dtype), cfg.layers)
    save_embeddings(os.path.join(cfg.out_dir, "embeddings.emb"), prop.user_final, prop.item_final)
    return report.as_dict()


def cmd_eval(run_dir, split="test", k_list=None, checkpoint=None, out_prefix=None) -> dict:
    cfg = resolve_config(os.path.join(run_dir, "config.resolved"))
    data = ds_mod.read_split_manifest(cfg.data_dir)
    pop = ds_mod.build_popularity_index(data)
    state, _ = load_checkpoint(checkpoint or os.path.join(run_dir, "best.ckpt"),
                               data.num_users, data.num_items, cfg.dim)
    state = state.astype(cfg.dtype)
    prop = propagate(state, build_adjacency(data).astype(cfg.dtype), cfg.layers)
    reports = evaluate(prop, data, pop, k_list or cfg.k_list, split, cfg.pareto_pct)
    separation = separation_report(prop.item_final, pop, cfg.pareto_pct)
    prefix = os.path.join(run_dir, out_prefix or f"metrics_{split}")
    with open(prefix + ".json", "w", encoding="utf-8") as fh:
        fh.write(reports_to_json(reports, separation))
    with open(prefix + ".csv", "w", encoding="utf-8") as fh:
        fh.write(reports_to_csv(reports))
    write_json(os.path.join(run_dir, f"separation_{split}.json"), separation.as_dict())
    return {"metrics": [r.as_dict() for r in reports], "separation": separation.as_dict()}


def parse_grid(specs) -> dict:
    """``["lambda1=1,10", "gamma=0,0.5"]`` -> ``{"lambda1": [1.0, 10.0], ...}``."""
    grid = {}
    for spec in specs:
        name, _, values = spec.partition("=")
        name = name.strip().replace("-", "_")
        if name not in SWEEPABLE:
            raise ValueError(f"cannot sweep {name!r}; choose from {SWEEPABLE}")
        grid[name] = [float(v) for v in values.split(",") if v.strip()]
        if not grid[name]:
            raise ValueError(f"empty grid for {name}")
    return grid


SWEEP_FIELDS = ("cell", "status", "val_ndcg20", "recall", "hr", "ndcg",
                "ndcg_popular", "ndcg_unpopular", "ndcg_gap", "mmd", "cross_cosine")


def cmd_sweep(cfg: RunConfig, grid: dict) -> list[dict]:
    """Train and evaluate every grid cell; completed cells are reused on rerun."""
    names = sorted(grid)
    rows = []
    for values in itertools.product(*(grid[n] for n in names)):
        params = dict(zip(names, values))
        cell = "_".join(f"{n}={v:g}" for n, v in params.items())
        cell_dir = os.path.join(cfg.out_dir, cell)
        result_path = os.path.join(cell_dir, "result.json")
        if os.path.exists(result_path):
            with open(result_path, encoding="utf-8") as fh:
                rows.append(json.load(fh))
            log.info("cell %s already complete, skipping", cell)
            continue
        row = {"cell": cell, **params}
        try:
            cell_cfg = RunConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)},
                                    **params, "out_dir": cell_dir})
            report = cmd_train(cell_cfg)
            result = cmd_eval(cell_dir, "test", cfg.k_list)
            main = next(m for m in result["metrics"] if m["k"] == 20) if 20 in cfg.k_list \
                else result["metrics"][0]
            row.update(status="ok", val_ndcg20=report["best_val_ndcg"], recall=main["recall"],
                       hr=main["hr"], ndcg=main["ndcg"],
                       ndcg_popular=(main["groups"].get("popular") or {}).get("ndcg"),
                       ndcg_unpopular=(main["groups"].get("unpopular") or {}).get("ndcg"),
                       ndcg_gap=main["gap"].get("ndcg"), mmd=result["separation"]["mmd"],
                       cross_cosine=result["separation"]["cross_cosine"])
            write_json(result_path, row)
        except Exception as exc:  # one failed cell must not stop the sweep
            log.exception("cell %s failed", cell)
            row.update(status=f"error: {exc}")
        rows.append(row)

    rows.sort(key=lambda r: -(r["ndcg"] if r.get("ndcg") is not None else -np.inf))
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[*SWEEP_FIELDS, *names], extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows


def cmd_stats(data_dir=None, input_path=None, fmt="tsv", k_core=10) -> dict:
    if data_dir:
        data = ds_mod.read_split_manifest(data_dir)
        return ds_mod.dataset_stats(data)
    raw = ds_mod.load_interactions(input_path, fmt)
    filtered = ds_mod.k_core_filter(raw, k_core) if k_core > 1 else ds_mod.deduplicate(raw)
    users = {u for u, _ in filtered}
    counts = {}
    for _, i in filtered:
        counts[i] = counts.get(i, 0) + 1
    c = np.array(list(counts.values()))
    return {"M": len(users), "N": len(counts), "interactions": len(filtered),
            "gini": ds_mod.gini(c), "max": int(c.max()), "min": int(c.min()), "mean": float(c.mean())}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "ablation":
            p.add_argument(flag, dest=f.name, default=None,
                           choices=["full", "no-pop-cl", "no-unpop-cl", "no-alignment",
                                    "no_pop_cl", "no_unpop_cl", "no_alignment"])
        elif f.name == "preset":
            p.add_argument(flag, dest=f.name, default=None, choices=sorted(PRESETS))
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def _overrides(args) -> dict:
    return {f.name: getattr(args, f.name) for f in fields(RunConfig)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter and split a raw interaction log")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "csv"])
    p.add_argument("--k-core", type=int, default=10)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="evaluate a trained run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--split", default="test", choices=["test", "valid"])
    p.add_argument("--k-list", default=None, help="comma separated, e.g. 20,50")
    p.add_argument("--checkpoint", default=None)

    p = sub.add_parser("sweep", help="grid search over lambda1/lambda2/gamma/beta/x_ratio")
    _add_run_flags(p)
    p.add_argument("--grid", action="append", required=True, metavar="NAME=V1,V2,...")

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--data-dir")
    p.add_argument("--input")
    p.add_argument("--format", default="tsv", choices=["tsv", "csv"])
    p.add_argument("--k-core", type=int, default=10)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "prepare":
            seed = args.seed if args.seed is not None else _default_seed()
            out = cmd_prepare(args.input, args.out, args.format, args.k_core,
                              args.test_fraction, args.val_fraction, seed)
        elif args.command == "train":
            cfg = resolve_config(args.config, _overrides(args))
            report = cmd_train(cfg)
            out = {k: report[k] for k in ("best_epoch", "best_val_ndcg", "stop_reason", "epochs_run")}
        elif args.command == "eval":
            k_list = [int(k) for k in args.k_list.split(",")] if args.k_list else None
            out = cmd_eval(args.run_dir, args.split, k_list, args.checkpoint)
        elif args.command == "sweep":
            cfg = resolve_config(args.config, _overrides(args))
            rows = cmd_sweep(cfg, parse_grid(args.grid))
            out = {"cells": len(rows), "failed": sum(not r["status"].startswith("ok") for r in rows)}
            if out["failed"]:
                print(json.dumps(out), file=sys.stderr)
                return 1
        else:
            if not (args.data_dir or args.input):
                print("stats needs --data-dir or --input", file=sys.stderr)
                return 2
            out = cmd_stats(args.data_dir, args.input, args.format, args.k_core)
    except (PAACError, OSError, ValueError) as exc:
        print(f"paac {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
