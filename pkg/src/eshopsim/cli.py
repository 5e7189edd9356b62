"""Command-line front end: simulate, build-dataset, train, eval, eshop, report.

Every artifact embeds the configuration hash and master seed; rerunning the
pipeline with the same configuration and seed in single-threaded mode
reproduces every artifact byte for byte (wall-clock timings live in a
separate, non-deterministic timings.json).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from eshopsim.config import ConfigError, ExperimentConfig, config_hash, load_config
from eshopsim.controller import (
    HoComparison,
    degradation_stats,
    infer_countdown,
    oracle_countdown,
    serving_rsrp_at,
    simulate_eshop,
    simulate_legacy,
    standardized_rows,
)
from eshopsim.dataset import (
    DataError,
    WindowBank,
    build_dataset,
    command_times,
    read_dataset,
    reduce_series,
    segment_ids,
    write_dataset,
)
from eshopsim.tcn import TrainingDiverged
from eshopsim.events import EVENT_A3, EVENT_ABORT, EVENT_T0
from eshopsim.scenario import SiteLayout
from eshopsim.seeds import derive_seed
from eshopsim.simulate import (
    read_event_log,
    read_report_log,
    run_scenario,
    write_event_log,
    write_report_log,
)
from eshopsim import tcn

SUMMARY_SCHEMA = "run-summary/1"
REPORT_SCHEMA = "consolidated-report/1"


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------


def _paths(out_dir: str) -> dict[str, str]:
    return {
        "reports": os.path.join(out_dir, "reports.csv"),
        "events": os.path.join(out_dir, "events.csv"),
        "dataset": os.path.join(out_dir, "dataset"),
        "model": os.path.join(out_dir, "model.tcn"),
        "history": os.path.join(out_dir, "history.csv"),
        "metrics": os.path.join(out_dir, "metrics.json"),
        "predictions": os.path.join(out_dir, "predictions.csv"),
        "comparison": os.path.join(out_dir, "comparison.csv"),
        "cdf": os.path.join(out_dir, "cdf.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
        "timings": os.path.join(out_dir, "timings.json"),
    }


def _update_summary(out_dir: str, cfg: ExperimentConfig, section: str, payload: dict) -> None:
    path = _paths(out_dir)["summary"]
    doc = {
        "schema_version": SUMMARY_SCHEMA,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "los_mode": cfg.channel.los_mode,
    }
    if os.path.exists(path):
        with open(path) as fh:
            old = json.load(fh)
        if old.get("config_hash") != doc["config_hash"]:
            raise DataError("run directory belongs to a different configuration")
        doc.update({k: v for k, v in old.items() if k not in doc})
    doc[section] = payload
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _record_timing(out_dir: str, command: str, seconds: float) -> None:
    path = _paths(out_dir)["timings"]
    doc = {}
    if os.path.exists(path):
        with open(path) as fh:
            doc = json.load(fh)
    doc[command] = seconds
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_logs(cfg: ExperimentConfig) -> dict[str, dict]:
    paths = _paths(cfg.output_dir)
    for key in ("reports", "events"):
        if not os.path.exists(paths[key]):
            raise DataError(f"missing log file: {paths[key]} (run 'simulate' first)")
    per_ue = read_report_log(paths["reports"])
    events = read_event_log(paths["events"])
    for ue, rec in per_ue.items():
        rec["episodes"] = events.get(ue, {}).get("episodes", [])
        rec["events"] = events.get(ue, {}).get("events", [])
    return per_ue


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, parallel: int = 0) -> dict:
    t_start = time.perf_counter()
    os.makedirs(cfg.output_dir, exist_ok=True)
    layout = SiteLayout()
    runs = run_scenario(
        cfg.scenario,
        cfg.channel,
        cfg.hcp,
        layout,
        cfg.master_seed,
        d_prep_min_ms=cfg.signaling.d_prep_min_ms,
        d_prep_max_ms=cfg.signaling.d_prep_max_ms,
        parallel=parallel,
    )
    paths = _paths(cfg.output_dir)
    digest = config_hash(cfg)
    write_report_log(paths["reports"], runs, digest, cfg.master_seed)
    write_event_log(paths["events"], runs, digest, cfg.master_seed)
    counts = {EVENT_T0: 0, EVENT_A3: 0, EVENT_ABORT: 0, "CMD": 0}
    for run in runs:
        for ev in run.events:
            counts[ev.kind] = counts.get(ev.kind, 0) + 1
    payload = {
        "num_ues": len(runs),
        "reports_per_ue": int(runs[0].times_ms.size) if runs else 0,
        "t0_count": counts[EVENT_T0],
        "a3_count": counts[EVENT_A3],
        "abort_count": counts[EVENT_ABORT],
        "cmd_count": counts["CMD"],
    }
    _update_summary(cfg.output_dir, cfg, "simulate", payload)
    _record_timing(cfg.output_dir, "simulate", time.perf_counter() - t_start)
    return payload


def cmd_build_dataset(cfg: ExperimentConfig, quiet: bool = False) -> dict:
    t_start = time.perf_counter()
    per_ue = _load_logs(cfg)
    bundle = build_dataset(
        per_ue,
        cfg.dataset,
        split_seed=derive_seed(cfg.master_seed, "split"),
        config_hash=config_hash(cfg),
        master_seed=cfg.master_seed,
    )
    write_dataset(_paths(cfg.output_dir)["dataset"], bundle)
    meta = bundle.meta
    total = meta.kept_count + sum(meta.exclusion_counts.values())
    if total != meta.raw_count:
        raise DataError("exclusion counts do not reconcile with the raw row count")
    if not quiet:
        print("exclusion reconciliation:")
        print(f"  {'raw rows':<20}{meta.raw_count:>10}")
        print(f"  {'kept':<20}{meta.kept_count:>10}")
        for name, count in sorted(meta.exclusion_counts.items()):
            print(f"  {name:<20}{count:>10}")
        print(f"  {'total':<20}{total:>10}  (reconciled)")
    payload = {
        "raw_count": meta.raw_count,
        "kept_count": meta.kept_count,
        "excluded": meta.exclusion_counts,
        "split_sizes": {
            name: int(np.sum(table.reasons == 0)) for name, table in bundle.splits.items()
        },
        "split_ues": {name: len(ues) for name, ues in meta.split_ues.items()},
    }
    _update_summary(cfg.output_dir, cfg, "dataset", payload)
    _record_timing(cfg.output_dir, "build-dataset", time.perf_counter() - t_start)
    return payload


def cmd_train(cfg: ExperimentConfig) -> dict:
    t_start = time.perf_counter()
    paths = _paths(cfg.output_dir)
    bundle = read_dataset(paths["dataset"])
    w = bundle.meta.window_len
    train_bank = WindowBank(bundle.splits["train"], w, dtype=cfg.train.np_dtype)
    val_bank = WindowBank(bundle.splits["val"], w, dtype=cfg.train.np_dtype)
    if len(train_bank) == 0:
        raise DataError("train split holds no samples")
    params, history = tcn.train(train_bank, val_bank, cfg.model, cfg.train)
    digest = config_hash(cfg)
    tcn.save_model(
        paths["model"], params, extra={"config_hash": digest, "master_seed": cfg.master_seed}
    )
    with open(paths["history"], "w", newline="") as fh:
        fh.write(f"# schema=train-history/1 config_hash={digest} master_seed={cfg.master_seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_rmse", "val_rmse"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_rmse"]), repr(row["val_rmse"])])
    best = min(history, key=lambda r: r["val_rmse"])
    payload = {
        "epochs_run": len(history),
        "best_epoch": best["epoch"],
        "best_val_rmse": best["val_rmse"],
        "param_count": params.param_count(),
        "train_samples": len(train_bank),
        "val_samples": len(val_bank),
    }
    _update_summary(cfg.output_dir, cfg, "train", payload)
    _record_timing(cfg.output_dir, "train", time.perf_counter() - t_start)
    return payload


def cmd_eval(cfg: ExperimentConfig, split: str = "test") -> dict:
    t_start = time.perf_counter()
    paths = _paths(cfg.output_dir)
    bundle = read_dataset(paths["dataset"])
    if split not in bundle.splits:
        raise DataError(f"unknown split '{split}'")
    if not os.path.exists(paths["model"]):
        raise DataError("missing model file (run 'train' first)")
    params, header = tcn.load_model(paths["model"])
    digest = config_hash(cfg)
    stored = header.get("extra", {}).get("config_hash")
    if stored is not None and stored != digest:
        raise DataError("model was trained under a different configuration")
    bank = WindowBank(bundle.splits[split], bundle.meta.window_len, dtype=np.float32)
    if len(bank) == 0:
        raise DataError(f"split '{split}' holds no samples")
    preds = tcn.predict(params, bank)
    metrics = tcn.compute_metrics(np.asarray(bank.y, dtype=np.float64), preds)
    with open(paths["metrics"], "w") as fh:
        json.dump(
            {
                "schema_version": "metrics/1",
                "config_hash": digest,
                "master_seed": cfg.master_seed,
                "split": split,
                "metrics": metrics.to_dict(),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    with open(paths["predictions"], "w", newline="") as fh:
        fh.write(
            f"# schema=predictions/1 config_hash={digest} master_seed={cfg.master_seed}\n"
        )
        writer = csv.writer(fh)
        writer.writerow(["ue_id", "t_ms", "actual_tef_s", "predicted_tef_s"])
        for ue, t, ya, yp in zip(bank.ue_ids, bank.t_ms, bank.y, preds):
            writer.writerow([ue, int(t), repr(float(ya)), repr(float(yp))])
    payload = {split: metrics.to_dict()}
    old = {}
    summary_path = paths["summary"]
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            old = json.load(fh).get("eval", {})
    old.update(payload)
    _update_summary(cfg.output_dir, cfg, "eval", old)
    _record_timing(cfg.output_dir, "eval", time.perf_counter() - t_start)
    return payload


def cmd_eshop(cfg: ExperimentConfig, oracle: bool = False) -> dict:
    t_start = time.perf_counter()
    paths = _paths(cfg.output_dir)
    per_ue = _load_logs(cfg)
    params = None
    meta = None
    if not oracle:
        if not os.path.exists(paths["model"]):
            raise DataError("missing model file (run 'train' first, or use --oracle)")
        params, _header = tcn.load_model(paths["model"])
        bundle = read_dataset(paths["dataset"])
        meta = bundle.meta

    comparisons: list[HoComparison] = []
    rsrp_samples: dict[str, tuple[float, float]] = {}
    skipped_gap = 0
    for ue in sorted(per_ue):
        rec = per_ue[ue]
        times = np.asarray(rec["times_ms"], dtype=np.int64)
        episodes = rec["episodes"]
        cmds = command_times(episodes)
        beams, rsrp = reduce_series(np.asarray(rec["l3_rsrp"]))
        if oracle:
            preds = oracle_countdown(times, episodes)
        else:
            rows = standardized_rows(rsrp, beams, meta)
            segs = segment_ids(times, cmds)
            preds = infer_countdown(params, rows, segs, meta.window_len)
        cell_index = {c: i for i, c in enumerate(rec["cell_ids"])}
        prev_cmd = -np.inf
        for k, ep in enumerate(episodes):
            if ep.aborted:
                continue
            if ep.command_ms is None:
                skipped_gap += 1
                continue
            d_prep = float(ep.command_ms) - float(ep.a3_ms)
            legacy = simulate_legacy(ep, d_prep)
            early = simulate_eshop(
                ep, times, preds, d_prep, cfg.signaling, window_start_ms=prev_cmd
            )
            prev_cmd = float(ep.command_ms)
            serving_trace = rsrp[:, cell_index[ep.serving_cell]]
            latest = max(legacy.command_ms, early.command_ms, ep.a3_ms + d_prep)
            if latest > times[-1]:
                skipped_gap += 1
                continue
            episode_id = f"{ue}:{k}"
            rsrp_legacy = serving_rsrp_at(times, serving_trace, legacy.command_ms)
            rsrp_early = serving_rsrp_at(times, serving_trace, early.command_ms)
            rsrp_samples[episode_id] = (
                serving_rsrp_at(times, serving_trace, float(ep.a3_ms)),
                serving_rsrp_at(times, serving_trace, float(ep.a3_ms) + d_prep),
            )
            comparisons.append(
                HoComparison(
                    episode_id=episode_id,
                    ue_id=ue,
                    t0_ms=ep.t0_ms,
                    a3_ms=ep.a3_ms,
                    d_prep_ms=d_prep,
                    legacy_cmd_ms=legacy.command_ms,
                    eshop_cmd_ms=early.command_ms,
                    advance_ms=legacy.command_ms - early.command_ms,
                    rsrp_legacy_cmd_dbm=rsrp_legacy,
                    rsrp_eshop_cmd_dbm=rsrp_early,
                    wasted=early.wasted,
                    fellback=early.fellback,
                )
            )
    if not comparisons:
        raise DataError("no comparable handover episodes in the logs")
    stats = degradation_stats(comparisons, rsrp_samples)

    digest = config_hash(cfg)
    with open(paths["comparison"], "w", newline="") as fh:
        fh.write(f"# schema=ho-comparison/1 config_hash={digest} master_seed={cfg.master_seed}\n")
        writer = csv.writer(fh)
        writer.writerow(
            [
                "episode_id",
                "t0_ms",
                "a3_ms",
                "d_prep_ms",
                "legacy_cmd_ms",
                "eshop_cmd_ms",
                "advance_ms",
                "rsrp_legacy_cmd_dbm",
                "rsrp_eshop_cmd_dbm",
                "wasted",
                "fellback",
            ]
        )
        for c in comparisons:
            writer.writerow(
                [
                    c.episode_id,
                    c.t0_ms,
                    c.a3_ms,
                    repr(c.d_prep_ms),
                    repr(c.legacy_cmd_ms),
                    repr(c.eshop_cmd_ms),
                    repr(c.advance_ms),
                    repr(c.rsrp_legacy_cmd_dbm),
                    repr(c.rsrp_eshop_cmd_dbm),
                    int(c.wasted),
                    int(c.fellback),
                ]
            )
    with open(paths["cdf"], "w", newline="") as fh:
        fh.write(f"# schema=rsrp-drop-cdf/1 config_hash={digest} master_seed={cfg.master_seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["delta_rsrp_db", "cumulative_prob"])
        for x, p in zip(stats.cdf_delta_rsrp_db, stats.cdf_cumulative_prob):
            writer.writerow([repr(float(x)), repr(float(p))])
    payload = {
        "oracle": oracle,
        "n_compared": stats.n_compared,
        "n_skipped_trace_gap": skipped_gap,
        "mean_advance_ms": stats.mean_advance_ms,
        "mean_d_prep_ms": stats.mean_d_prep_ms,
        "wasted_rate": stats.wasted_rate,
        "fallback_rate": stats.fallback_rate,
        "median_benefit_db": float(np.median(stats.benefit_db)),
    }
    _update_summary(cfg.output_dir, cfg, "eshop", payload)
    _record_timing(cfg.output_dir, "eshop", time.perf_counter() - t_start)
    return payload


_REPORT_METRICS = [
    ("evs", ("eval", "test", "evs")),
    ("mape_pct", ("eval", "test", "mape_pct")),
    ("mae", ("eval", "test", "mae")),
    ("rmse_s", ("eval", "test", "rmse_s")),
    ("r2", ("eval", "test", "r2")),
    ("mean_advance_ms", ("eshop", "mean_advance_ms")),
    ("wasted_rate", ("eshop", "wasted_rate")),
    ("fallback_rate", ("eshop", "fallback_rate")),
]


def cmd_report(run_dirs: list[str], out_file: str) -> dict:
    """Merge run summaries into one table with mean and std per metric."""
    summaries = []
    for d in run_dirs:
        path = os.path.join(d, "summary.json")
        if not os.path.exists(path):
            raise DataError(f"missing run summary: {path}")
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema_version") != SUMMARY_SCHEMA:
            raise DataError(
                f"summary schema mismatch in {path}: {doc.get('schema_version')}"
            )
        summaries.append(doc)

    def dig(doc, key_path):
        cur = doc
        for k in key_path:
            if not isinstance(cur, dict) or k not in cur:
                return None
            cur = cur[k]
        return cur

    groups = sorted({doc.get("los_mode", "?") for doc in summaries})
    table: dict[str, dict[str, tuple[float, float]]] = {}
    for metric, key_path in _REPORT_METRICS:
        # metrics live either under eval.test.metrics-like dicts or eshop
        row = {}
        for g in groups:
            vals = []
            for doc in summaries:
                if doc.get("los_mode") != g:
                    continue
                v = dig(doc, key_path)
                if v is None and key_path[0] == "eval":
                    v = dig(doc, ("eval", "test", "metrics", key_path[-1]))
                if v is not None:
                    vals.append(float(v))
            if vals:
                row[g] = (float(np.mean(vals)), float(np.std(vals)))
        if row:
            table[metric] = row

    with open(out_file, "w", newline="") as fh:
        fh.write(f"# schema={REPORT_SCHEMA}\n")
        writer = csv.writer(fh)
        header = ["metric"]
        for g in groups:
            header.extend([f"{g}_mean", f"{g}_std"])
        writer.writerow(header)
        for metric, row in table.items():
            out_row = [metric]
            for g in groups:
                if g in row:
                    out_row.extend([repr(row[g][0]), repr(row[g][1])])
                else:
                    out_row.extend(["", ""])
            writer.writerow(out_row)
    return {"groups": groups, "metrics": list(table)}


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eshopsim",
        description="5G NR mmWave handover simulator with predictive early preparation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON experiment configuration (defaults apply if omitted)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--los", choices=["los", "nlos"], help="override the propagation mode")
        p.add_argument("--parallel", type=int, default=0, help="worker processes for simulation")

    for name in ("simulate", "build-dataset", "train", "eval", "eshop"):
        p = sub.add_parser(name)
        add_common(p)
        if name == "eval":
            p.add_argument("--split", default="test", choices=["train", "val", "test"])
        if name == "eshop":
            p.add_argument(
                "--oracle",
                action="store_true",
                help="feed ground-truth countdowns instead of model predictions",
            )

    p = sub.add_parser("report")
    p.add_argument("runs", nargs="+", help="run directories to merge")
    p.add_argument("--out-file", default="report.csv")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    if args.los is not None:
        cfg.channel.los_mode = args.los
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args.runs, args.out_file)
            return 0
        cfg = _config_from_args(args)
        if args.command == "simulate":
            cmd_simulate(cfg, parallel=args.parallel)
        elif args.command == "build-dataset":
            cmd_build_dataset(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, split=args.split)
        elif args.command == "eshop":
            cmd_eshop(cfg, oracle=args.oracle)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
