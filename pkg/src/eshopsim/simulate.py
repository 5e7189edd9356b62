"""Per-UE simulation loop and the raw report / event log file formats.

Each UE gets independent sub-seeded streams for trajectory, channel and
preparation-latency draws. The loop runs the 10 ms clock, samples the channel
at every 40 ms report instant, feeds the event engine, and applies each
handover command (legacy-timed at A3 + d_prep) as the episode boundary.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from eshopsim.channel import (
    BeamGrid,
    ChannelParams,
    L3FilterState,
    MeasurementReport,
    N_SSB,
    make_report,
)
from eshopsim.events import A3EventEngine, HcpConfig, HoEvent, HoEventRecord
from eshopsim.scenario import ScenarioConfig, SimClock, SiteLayout, position_at, spawn_trajectory
from eshopsim.seeds import derive_seed, rng_from

REPORT_LOG_SCHEMA = "report-log/1"
EVENT_LOG_SCHEMA = "event-log/1"


@dataclass
class UeRun:
    """Everything one UE produced during its simulated lifetime."""

    ue_id: str
    times_ms: np.ndarray  # (N,) report instants
    l3_rsrp: np.ndarray  # (N, 3, 12) filtered beam values
    events: list[HoEvent]
    episodes: list[HoEventRecord]
    cell_ids: tuple[int, int, int]


def run_ue(
    ue_index: int,
    scenario: ScenarioConfig,
    channel_cfg: ChannelParams,
    hcp: HcpConfig,
    layout: SiteLayout,
    master_seed: int,
    d_prep_min_ms: float = 15.0,
    d_prep_max_ms: float = 35.0,
) -> UeRun:
    seed_base = scenario.seed if scenario.seed is not None else master_seed
    ue_id = f"ue{ue_index:03d}"
    traj = spawn_trajectory(
        derive_seed(seed_base, "trajectory", ue_index),
        scenario,
        ue_id=ue_id,
        center_xy=layout.bs_position[:2],
    )
    grid = BeamGrid(layout, channel_cfg.beam_grid)
    chan_rng = rng_from(seed_base, "channel", ue_index)
    prep_rng = rng_from(seed_base, "prep-latency", ue_index)
    from eshopsim.channel import ChannelState  # local import keeps pickling simple

    chan = ChannelState(layout, grid, channel_cfg, chan_rng)
    filt = L3FilterState()
    engine: A3EventEngine | None = None

    times: list[int] = []
    l3_frames: list[np.ndarray] = []
    events: list[HoEvent] = []

    clock = SimClock()
    duration_ms = int(round(scenario.duration_s * 1000.0))
    while clock.time_ms <= duration_ms:
        if clock.at_report:
            t = clock.time_ms
            pos = position_at(traj, t, ue_height_m=layout.ue_height_m)
            raw = chan.sample(pos)
            l3 = filt.update(raw)
            report = make_report(t, layout.cell_ids, filt)
            if engine is None:
                serving0 = layout.cell_ids[int(np.argmax(l3.max(axis=1)))]
                engine = A3EventEngine(ue_id, layout.cell_ids, hcp, serving0)
            if engine.pending is not None and engine.pending.command_ms <= t:
                events.append(engine.apply_handover(engine.pending))
            new_events = engine.step(report)
            for ev in new_events:
                if ev.kind == "A3":
                    rec = engine.episodes[-1]
                    rec.command_ms = rec.a3_ms + float(
                        prep_rng.uniform(d_prep_min_ms, d_prep_max_ms)
                    )
            events.extend(new_events)
            times.append(t)
            l3_frames.append(l3)
        clock.advance()

    return UeRun(
        ue_id=ue_id,
        times_ms=np.asarray(times, dtype=np.int64),
        l3_rsrp=np.stack(l3_frames),
        events=events,
        episodes=engine.episodes if engine is not None else [],
        cell_ids=layout.cell_ids,
    )


def _run_ue_args(args):  # ProcessPoolExecutor needs a top-level callable
    return run_ue(*args)


def run_scenario(
    scenario: ScenarioConfig,
    channel_cfg: ChannelParams,
    hcp: HcpConfig,
    layout: SiteLayout,
    master_seed: int,
    d_prep_min_ms: float = 15.0,
    d_prep_max_ms: float = 35.0,
    parallel: int = 0,
) -> list[UeRun]:
    """Run all UEs; parallel runs stay reproducible through per-UE sub-seeds."""
    argsets = [
        (i, scenario, channel_cfg, hcp, layout, master_seed, d_prep_min_ms, d_prep_max_ms)
        for i in range(scenario.num_ues)
    ]
    if parallel and parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            runs = list(pool.map(_run_ue_args, argsets))
    else:
        runs = [_run_ue_args(a) for a in argsets]
    runs.sort(key=lambda r: r.ue_id)
    return runs


# ---------------------------------------------------------------------------
# log file IO
# ---------------------------------------------------------------------------


def _meta_line(schema: str, config_hash: str, master_seed: int) -> str:
    return f"# schema={schema} config_hash={config_hash} master_seed={master_seed}"


def parse_meta_line(line: str, expected_schema: str) -> dict[str, str]:
    if not line.startswith("# "):
        raise ValueError("missing artifact meta line")
    fields = dict(part.split("=", 1) for part in line[2:].strip().split(" "))
    if fields.get("schema") != expected_schema:
        raise ValueError(
            f"schema mismatch: expected {expected_schema}, found {fields.get('schema')}"
        )
    return fields


def write_report_log(path, runs: list[UeRun], config_hash: str, master_seed: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_meta_line(REPORT_LOG_SCHEMA, config_hash, master_seed) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "ue_id", "cell_id", "beam_id", "l3_rsrp_dbm"])
        for run in runs:
            for n, t in enumerate(run.times_ms):
                frame = run.l3_rsrp[n]
                for ci, cell_id in enumerate(run.cell_ids):
                    row_vals = frame[ci]
                    for b in range(N_SSB):
                        writer.writerow([int(t), run.ue_id, cell_id, b, repr(float(row_vals[b]))])


def read_report_log(path) -> dict[str, dict]:
    """Returns per-UE dict: times (N,), l3_rsrp (N, 3, 12), cell_ids tuple."""
    out: dict[str, dict] = {}
    with open(path, newline="") as fh:
        meta = parse_meta_line(fh.readline(), REPORT_LOG_SCHEMA)
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["t_ms", "ue_id", "cell_id", "beam_id", "l3_rsrp_dbm"]:
            raise ValueError("unexpected report log header")
        acc: dict[str, dict] = {}
        for t_s, ue, cell_s, beam_s, val_s in reader:
            rec = acc.setdefault(ue, {"times": [], "vals": [], "cells": []})
            t = int(t_s)
            if not rec["times"] or rec["times"][-1] != t:
                rec["times"].append(t)
                rec["vals"].append(np.empty((3, N_SSB)))
                rec["cells_seen"] = []
            cell = int(cell_s)
            if cell not in rec["cells"]:
                rec["cells"].append(cell)
            ci = rec["cells"].index(cell)
            rec["vals"][-1][ci, int(beam_s)] = float(val_s)
    for ue, rec in acc.items():
        out[ue] = {
            "times_ms": np.asarray(rec["times"], dtype=np.int64),
            "l3_rsrp": np.stack(rec["vals"]),
            "cell_ids": tuple(rec["cells"]),
            "meta": meta,
        }
    return out


def write_event_log(path, runs: list[UeRun], config_hash: str, master_seed: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_meta_line(EVENT_LOG_SCHEMA, config_hash, master_seed) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["ue_id", "kind", "t_ms", "serving", "target"])
        for run in runs:
            for ev in run.events:
                t = int(ev.t_ms) if float(ev.t_ms).is_integer() else repr(float(ev.t_ms))
                writer.writerow([ev.ue_id, ev.kind, t, ev.serving, ev.target])


def read_event_log(path) -> dict[str, dict]:
    """Returns per-UE dict with the event list and reconstructed episode records."""
    out: dict[str, dict] = {}
    with open(path, newline="") as fh:
        meta = parse_meta_line(fh.readline(), EVENT_LOG_SCHEMA)
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["ue_id", "kind", "t_ms", "serving", "target"]:
            raise ValueError("unexpected event log header")
        for ue, kind, t_s, serving_s, target_s in reader:
            rec = out.setdefault(ue, {"events": [], "episodes": [], "meta": meta})
            ev = HoEvent(ue, kind, float(t_s), int(serving_s), int(target_s))
            rec["events"].append(ev)
    for ue, rec in out.items():
        episodes: list[HoEventRecord] = []
        open_rec: HoEventRecord | None = None
        for ev in rec["events"]:
            if ev.kind == "T0":
                open_rec = HoEventRecord(
                    ue_id=ue,
                    serving_cell=ev.serving,
                    target_cell=ev.target,
                    t0_ms=int(ev.t_ms),
                )
            elif ev.kind == "A3":
                open_rec.a3_ms = int(ev.t_ms)
                episodes.append(open_rec)
                open_rec = None
            elif ev.kind == "ABORT":
                open_rec.aborted = True
                episodes.append(open_rec)
                open_rec = None
            elif ev.kind == "CMD":
                # command for the most recent non-aborted episode
                for rec_ep in reversed(episodes):
                    if not rec_ep.aborted and rec_ep.command_ms is None:
                        rec_ep.command_ms = float(ev.t_ms)
                        break
        rec["episodes"] = episodes
    return out
