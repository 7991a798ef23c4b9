"""Command-line entry points: synth, prepare, train, evaluate, compare, sweep.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .backbone import NonFiniteError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .dataset import (DataError, SyntheticSpec, filter_attributes, group_stats, load_interactions,
                      load_item_attributes, load_prepared, reindex, save_prepared, split, synthesize)
from .metrics import MetricReport, evaluate, topk_recommend
from .trainer import bilevel_train, write_epoch_log

log = logging.getLogger("fairneg")

OUT_ROOT_ENV = "FAIRNEG_OUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

# metrics where smaller is better; RI flips sign for them
LOWER_IS_BETTER = {"Recall-Disp"}


def resolve_out(out: str | None, default: str) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    path = Path(out if out is not None else default)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stamp(cfg_hash: str, data_hash: str) -> str:
    return f"# config_hash={cfg_hash} data_hash={data_hash}\n"


# ---------------------------------------------------------------------------
# synth / prepare


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    """Write a synthetic ratings file and item-attribute file in the raw input formats."""
    spec = SyntheticSpec(
        num_users=cfg["synth.users"], num_items=cfg["synth.items"], density=cfg["synth.density"],
        item_share=cfg["synth.item_share"], feedback_share=cfg["synth.feedback_share"] or None,
        rank=cfg["synth.rank"], concentration=cfg["synth.concentration"],
        popularity_skew=cfg["synth.popularity_skew"], seed=cfg["synth.seed"],
        labels=cfg["synth.labels"] or None,
    )
    table, groups = synthesize(spec)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ratings.dat", "w") as fh:
        for u, i in zip(table.users.tolist(), table.items.tolist()):
            fh.write(f"{u + 1}::{i + 1}::5::0\n")
    with open(out / "items.csv", "w") as fh:
        for i, a in enumerate(groups.item_group.tolist()):
            fh.write(f"{i + 1},{groups.group_labels[a]}\n")
    return {"ratings": str(out / "ratings.dat"), "attributes": str(out / "items.csv"),
            "groups": list(groups.group_labels), "interactions": len(table)}


def cmd_prepare(cfg: RunConfig, out: Path) -> dict:
    cfg.require("data.ratings", "data.attributes", "data.groups")
    for key in ("data.ratings", "data.attributes"):
        if not Path(cfg[key]).is_file():
            raise DataError(f"{key}: file not found: {cfg[key]}")
    records = load_item_attributes(cfg["data.attributes"], sep=cfg["data.attributes_sep"],
                                   item_col=cfg["data.attr_item_col"], label_col=cfg["data.attr_label_col"],
                                   label_sep=cfg["data.label_sep"] or None)
    attrs = filter_attributes(records, cfg["data.groups"], cfg["data.multi_label"])
    kept = {item for item, _ in attrs}
    pairs = load_interactions(cfg["data.ratings"], sep=cfg["data.ratings_sep"],
                              user_col=cfg["data.user_col"], item_col=cfg["data.item_col"])
    pairs = [p for p in pairs if p[1] in kept]
    # only items rated by someone enter the catalog
    rated = {i for _, i in pairs}
    attrs = [(item, lab) for item, lab in attrs if item in rated]
    table, groups = reindex(pairs, attrs, label_order=cfg["data.groups"])
    data = split(table, cfg["data.split_seed"])
    manifest = save_prepared(data, groups, table, out)
    stats = group_stats(table, groups)
    return {"manifest": manifest, "group_stats": [(s.label, s.n_items, s.n_feedback) for s in stats],
            "num_users": table.num_users, "num_items": table.num_items, "interactions": len(table)}


# ---------------------------------------------------------------------------
# train / evaluate


def cmd_train(cfg: RunConfig, out: Path) -> dict:
    cfg.require("data.prepared")
    data, groups, manifest = load_prepared(cfg["data.prepared"])
    tcfg = cfg.train_config()
    cfg_hash, data_hash = cfg.digest(), manifest["data_hash"]
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    result = bilevel_train(tcfg, data, groups)
    wall = time.time() - t0
    save_checkpoint(result.model, out / "checkpoint.json",
                    extra={"config_hash": cfg_hash, "data_hash": data_hash, "best_epoch": result.best_epoch})
    write_epoch_log(result.logs, out / "epoch_log.csv", header=_stamp(cfg_hash, data_hash))
    run_manifest = {
        "method": cfg.method_name(),
        "config": cfg.to_json(),
        "config_hash": cfg_hash,
        "data_hash": data_hash,
        "split_manifest": manifest,
        "seed": tcfg.seed,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.logs),
        "best_val_recall": result.best_val_recall,
        "early_stopping": {"metric": f"validation Recall@{tcfg.eval_k}", "patience": tcfg.patience},
        "final_distribution": result.distribution.p.tolist(),
        "wall_clock_seconds": wall,
        "version": __version__,
    }
    _write_json(out / "run_manifest.json", run_manifest)
    return run_manifest


def _load_run(run_dir: Path) -> dict:
    path = run_dir / "run_manifest.json"
    if not path.is_file():
        raise DataError(f"{run_dir}: not a run directory (run_manifest.json missing)")
    return json.loads(path.read_text())


def cmd_evaluate(run_dir: Path, cfg: RunConfig | None = None, out: Path | None = None) -> list[MetricReport]:
    run = _load_run(run_dir)
    run_cfg = load_config(None, [f"{k}={_unparse(v)}" for k, v in run["config"].items()])
    if cfg is not None:
        # evaluation-side keys and the data location may be overridden
        for key in ("eval.ks", "eval.aggregation", "data.prepared"):
            run_cfg[key] = cfg[key] if cfg.get(key) not in (None, "") else run_cfg[key]
    data, groups, manifest = load_prepared(run_cfg["data.prepared"])
    model, header = load_checkpoint(run_dir / "checkpoint.json", data.train)
    if header.get("data_hash") != manifest["data_hash"] or run["data_hash"] != manifest["data_hash"]:
        raise DataError("checkpoint and prepared split disagree (data hash mismatch); refusing to evaluate")
    if header.get("config_hash") != run["config_hash"]:
        raise DataError("checkpoint does not belong to this run (config hash mismatch)")
    out = out or run_dir
    out.mkdir(parents=True, exist_ok=True)
    ks = run_cfg["eval.ks"]
    lists = topk_recommend(model, data, max(ks), stage="test")
    reports = []
    for k in ks:
        rep = evaluate(model, data, groups, k, "test", run_cfg["eval.aggregation"], lists=lists)
        payload = rep.to_dict()
        payload.update({"method": run["method"], "config_hash": run["config_hash"], "data_hash": run["data_hash"]})
        _write_json(out / f"report_k{k}.json", payload)
        (out / f"report_k{k}.csv").write_text(_stamp(run["config_hash"], run["data_hash"])
                                               + "method," + rep.to_csv().replace("\n", f"\n{run['method']},", 1))
        reports.append(rep)
    return reports


def _unparse(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


# ---------------------------------------------------------------------------
# compare / sweep

REPORT_COLUMNS = [("Recall-Disp", "recall_disp"), ("Recall-Min", "recall_min"), ("Recall-Avg", "recall_avg"),
                  ("N", "ndcg"), ("P", "precision"), ("R", "recall"), ("F1", "f1")]


def relative_improvement(metric: str, baseline: float, value: float) -> float:
    """Signed relative improvement over the baseline; positive means better."""
    if baseline == 0:
        return 0.0 if value == baseline else math.copysign(math.inf, value - baseline)
    if metric in LOWER_IS_BETTER:
        return (baseline - value) / baseline
    return (value - baseline) / baseline


def compare_reports(rows: list[tuple[str, dict]], k: int, baseline: str, target: str) -> str:
    """CSV table with one row per method plus an ``RI`` row of ``target`` against ``baseline``."""
    names = [n for n, _ in rows]
    if baseline not in names or target not in names:
        raise ConfigError(f"compare needs runs named {baseline!r} and {target!r}; got {names}")
    header = ["method"] + [f"{label}@{k}" for label, _ in REPORT_COLUMNS]
    lines = [",".join(header)]
    by_name = dict(rows)
    for name, rep in rows:
        lines.append(",".join([name] + [repr(float(_nan(rep[key]))) for _, key in REPORT_COLUMNS]))
    ri = []
    for label, key in REPORT_COLUMNS:
        ri.append(f"{100 * relative_improvement(label, _nan(by_name[baseline][key]), _nan(by_name[target][key])):.2f}%")
    lines.append(",".join(["RI"] + ri))
    return "\n".join(lines) + "\n"


def _nan(x):
    return math.nan if x is None else x


def cmd_compare(run_dirs: list[Path], out: Path, baseline: str = "UNS", target: str = "FairNeg") -> list[Path]:
    if len(run_dirs) < 2:
        raise ConfigError("compare needs at least two runs")
    runs = [(_load_run(d), d) for d in run_dirs]
    hashes = {r["data_hash"] for r, _ in runs}
    if len(hashes) != 1:
        raise DataError("runs were trained on different splits (data hash mismatch)")
    ks = sorted(set.intersection(*[set(r["config"]["eval.ks"]) for r, _ in runs]))
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k in ks:
        rows = []
        for run, d in runs:
            path = d / f"report_k{k}.json"
            if not path.is_file():
                raise DataError(f"{d}: report for k={k} missing; run evaluate first")
            rep = json.loads(path.read_text())
            if rep["data_hash"] != run["data_hash"] or rep["config_hash"] != run["config_hash"]:
                raise DataError(f"{path}: report hashes do not match its run")
            rows.append((run["method"], rep))
        target_file = out / f"comparison_k{k}.csv"
        config_hashes = "+".join(r["config_hash"][:12] for r, _ in runs)
        target_file.write_text(_stamp(config_hashes, runs[0][0]["data_hash"])
                               + compare_reports(rows, k, baseline, target))
        written.append(target_file)
    return written


def parse_grid(spec: str) -> tuple[str, list[float]]:
    """``key=lo:hi:step`` (inclusive) or ``key=v1,v2,...``."""
    if "=" not in spec:
        raise ConfigError(f"grid {spec!r} is not of the form key=lo:hi:step or key=v1,v2")
    key, body = spec.split("=", 1)
    key = key.strip()
    if key not in ("train.gamma", "sampler.beta"):
        raise ConfigError(f"sweeps vary train.gamma and/or sampler.beta, not {key!r}")
    body = body.strip()
    if ":" in body:
        try:
            lo, hi, step = (float(x) for x in body.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad range {body!r}") from exc
        if step <= 0 or hi < lo:
            raise ConfigError(f"empty grid {body!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        values = [round(lo + i * step, 10) for i in range(n)]
    else:
        try:
            values = [float(x) for x in body.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad value list {body!r}") from exc
    if not values:
        raise ConfigError(f"empty grid for {key}")
    return key, values


def cmd_sweep(cfg: RunConfig, grids: list[str], out: Path) -> Path:
    if not grids:
        raise ConfigError("sweep needs at least one --grid")
    axes = [parse_grid(g) for g in grids]
    keys = [k for k, _ in axes]
    if len(set(keys)) != len(keys):
        raise ConfigError("each grid key may appear once")
    ks = cfg["eval.ks"]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for n, point in enumerate(itertools.product(*[v for _, v in axes])):
        overrides = {k: v for k, v in zip(keys, point)}
        point_dir = out / ("point_%03d_" % n + "_".join(f"{k.split('.')[1]}{v:g}" for k, v in overrides.items()))
        row = {k: v for k, v in overrides.items()}
        try:
            pcfg = load_config(None, [f"{k}={_unparse(v)}" for k, v in {**cfg, **overrides}.items()])
            cmd_train(pcfg, point_dir)
            for rep in cmd_evaluate(point_dir):
                row[f"Recall-Disp@{rep.k}"] = rep.recall_disp
                row[f"F1@{rep.k}"] = rep.f1
            row["status"] = "ok"
        except Exception as exc:  # a failed point must not stop the sweep
            log.error("sweep point %s failed: %s", overrides, exc)
            row["status"] = f"failed: {type(exc).__name__}: {exc}"
        rows.append(row)
    fields = keys + [f"{m}@{k}" for k in ks for m in ("Recall-Disp", "F1")] + ["status"]
    summary = out / "summary.csv"
    with open(summary, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({f: repr(row[f]) if isinstance(row.get(f), float) else row.get(f, "") for f in fields})
    return summary


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable, wins over the file)")
    common.add_argument("--out", help=f"output directory (relative paths resolve under ${OUT_ROOT_ENV})")
    common.add_argument("--seed", type=int, help="seed for the command (split, training or generator)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fairneg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic raw dataset")
    sub.add_parser("prepare", parents=[common], help="ingest, reindex and split raw data")
    sub.add_parser("train", parents=[common], help="run bi-level training")
    ev = sub.add_parser("evaluate", parents=[common], help="write metric reports for a trained run")
    ev.add_argument("run", help="run directory produced by train")
    cmp_ = sub.add_parser("compare", parents=[common], help="tabulate runs with relative improvement")
    cmp_.add_argument("runs", nargs="+", help="evaluated run directories")
    cmp_.add_argument("--baseline", default="UNS")
    cmp_.add_argument("--target", default="FairNeg")
    sw = sub.add_parser("sweep", parents=[common], help="grid over train.gamma / sampler.beta")
    sw.add_argument("--grid", action="append", default=[], help="key=lo:hi:step or key=v1,v2,...")
    return parser


SEED_KEY = {"synth": "synth.seed", "prepare": "data.split_seed", "train": "train.seed", "sweep": "train.seed"}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None and args.command in SEED_KEY:
            overrides.append(f"{SEED_KEY[args.command]}={args.seed}")
        cfg = load_config(args.config, overrides) if (args.config or overrides) else load_config(None)
        if args.command == "synth":
            info = cmd_synth(cfg, resolve_out(args.out, "synthetic"))
            print(json.dumps(info, indent=2))
        elif args.command == "prepare":
            out = resolve_out(args.out, cfg["data.prepared"] or "prepared")
            info = cmd_prepare(cfg, out)
            print(f"prepared {info['interactions']} interactions ({info['num_users']} users, "
                  f"{info['num_items']} items) into {out}")
            for label, n_items, n_fb in info["group_stats"]:
                print(f"  {label}: {n_items} items, {n_fb} feedback")
        elif args.command == "train":
            out = resolve_out(args.out, "runs/" + cfg.method_name())
            m = cmd_train(cfg, out)
            print(f"{m['method']}: best epoch {m['best_epoch']} of {m['epochs_run']}, "
                  f"val R@{cfg['train.eval_k']}={m['best_val_recall']:.4f} -> {out}")
        elif args.command == "evaluate":
            reports = cmd_evaluate(Path(args.run), cfg if (args.config or args.overrides) else None,
                                   resolve_out(args.out, args.run) if args.out else None)
            for rep in reports:
                print(f"k={rep.k}: Recall-Disp={rep.recall_disp:.4f} Recall-Min={rep.recall_min:.4f} "
                      f"Recall-Avg={rep.recall_avg:.4f} N={rep.ndcg:.4f} P={rep.precision:.4f} R={rep.recall:.4f}")
        elif args.command == "compare":
            for path in cmd_compare([Path(r) for r in args.runs], resolve_out(args.out, "comparison"),
                                    args.baseline, args.target):
                print(path.read_text(), end="")
        elif args.command == "sweep":
            summary = cmd_sweep(cfg, args.grid, resolve_out(args.out, "sweep"))
            print(summary.read_text(), end="")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
