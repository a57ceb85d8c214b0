"""Deterministic discrete-event simulation of a full search mission.

One run drives: beaconing, device scan/auto-reconnect state machines,
per-packet link physics, per-NIC decode, snapshot aggregation, direction
estimation with attitude compensation, and the dual-phase mission loop.
All randomness flows through streams derived from the scenario seed, so a
given scenario+seed is bit-reproducible (wall-clock performance numbers go
to a separate perf file outside that guarantee).
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .antenna import AntennaLayout, Manifold, build_manifold, sample_template_many
from .channel import ChannelParams, path_loss_db, sample_rx_vector
from .errors import ConfigError, InsufficientDataError, NoSignalError
from .estimator import DirectionEstimate, RssSnapshot, estimate, estimate_to_dict
from .geometry import Attitude, attitude_matrix
from .lens import BeamTemplate
from .metrics import compute_metrics_from_events, lower_median, lower_percentile
from .mission import MissionState, SearchConfig, apply_attitude, mission_step
from .protocol import Aggregator, DeviceModel, NicReport, verify_credential
from .scenario import (
    ScenarioSpec,
    build_devices,
    build_layout,
    build_search_config,
    build_template,
    drone_attitude,
)
from .trace import TraceWriter, TrajectoryWriter, write_manifest

# event priorities at equal timestamps: beacons first, then device traffic,
# then aggregation deadlines, then the mission step
P_BEACON, P_DEVICE, P_AGG, P_STEP = 0, 1, 2, 3

_manifold_cache: dict[str, Manifold] = {}


def cached_manifold(template_spec, layout_spec) -> Manifold:
    """Build (or reuse) the manifold for a template/layout config pair.

    Keyed on the config contents; file-backed configs are assumed stable
    for the lifetime of the process.
    """
    key = json.dumps(
        {"template": template_spec.model_dump(), "layout": layout_spec.model_dump()},
        sort_keys=True,
    )
    if key not in _manifold_cache:
        t = build_template(template_spec)
        layout = build_layout(layout_spec)
        _manifold_cache[key] = build_manifold(t, layout, template_spec.resolution_deg)
    return _manifold_cache[key]


def world_direction(drone_pos: np.ndarray, device_pos) -> tuple[np.ndarray, float]:
    """Unit direction from drone toward device (down-positive z) and range."""
    dx = device_pos[0] - drone_pos[0]
    dy = device_pos[1] - drone_pos[1]
    dz = drone_pos[2] - device_pos[2]  # positive when the device is below
    d = max(math.sqrt(dx * dx + dy * dy + dz * dz), 1e-6)
    return np.array([dx / d, dy / d, dz / d]), d


def body_direction(world_dir: np.ndarray, att: Attitude) -> np.ndarray:
    """World direction seen in the body frame; folded onto the hemisphere."""
    u = attitude_matrix(att).T @ world_dir
    if u[2] < 0.0:
        horiz = math.hypot(u[0], u[1])
        if horiz < 1e-12:
            return np.array([1.0, 0.0, 0.0])
        return np.array([u[0] / horiz, u[1] / horiz, 0.0])
    return u


@dataclass
class LinkState:
    world_dir: np.ndarray
    body_dir: np.ndarray
    distance_m: float
    gains_dbi: np.ndarray
    path_loss_db: float


def link_state(
    drone_pos: np.ndarray,
    att: Attitude,
    device_pos,
    template: BeamTemplate,
    layout: AntennaLayout,
    ch: ChannelParams,
) -> LinkState:
    w, d = world_direction(drone_pos, device_pos)
    u = body_direction(w, att)
    gains = sample_template_many(template, layout, u[None, :])[0]
    return LinkState(w, u, d, gains, path_loss_db(d, ch))


def downlink_range_horizontal(
    template: BeamTemplate,
    layout: AntennaLayout,
    ch: ChannelParams,
    ap_tx_power_dbm: float,
    device_sensitivity_dbm: float,
    altitude_m: float,
) -> float:
    """Horizontal distance at which the beacon stops being decodable.

    This is the contour that gates association (the device must hear the
    beacon during a scan), evaluated at level attitude along azimuth 0.
    """

    def margin(rho: float) -> float:
        drone = np.array([0.0, 0.0, altitude_m])
        st = link_state(drone, Attitude.level(), (rho, 0.0, 0.0), template, layout, ch)
        down = ap_tx_power_dbm + float(st.gains_dbi.max()) - st.path_loss_db - ch.canopy_loss_db
        return down - device_sensitivity_dbm

    lo, hi = 0.0, 10.0
    if margin(lo) < 0:
        return 0.0
    while margin(hi) >= 0 and hi < 1e6:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class SimResult:
    status: str  # fix | completed | not_found | timeout
    end_time_s: float
    metrics: dict
    fix: tuple[float, float] | None
    n_snapshots: int
    n_estimates: int
    out_dir: str | None = None
    perf: dict = field(default_factory=dict)


class _NullWriter:
    def write(self, event: dict) -> None:
        pass

    def close(self) -> None:
        pass


def run_simulation(spec: ScenarioSpec, out_dir: str | Path | None = None) -> SimResult:
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    template = build_template(spec.template)
    layout = build_layout(spec.layout)
    manifold = cached_manifold(spec.template, spec.layout)
    ch = spec.channel.to_params()
    ap = spec.ap.to_config()
    if ap.n_antennas != layout.n:
        raise ConfigError(f"AP exposes {ap.n_antennas} antennas but layout has {layout.n}")
    cfg: SearchConfig = build_search_config(spec)
    if cfg.guided and not spec.estimate_enabled:
        raise ConfigError("guided search requires estimate_enabled")
    att = drone_attitude(spec)

    n_spec_devices = len(spec.targets) + (
        spec.random_targets.count if spec.random_targets else 0
    )
    streams = np.random.SeedSequence(spec.seed).spawn(n_spec_devices + 2)
    rngs = [np.random.default_rng(s) for s in streams]
    devices = build_devices(spec, rngs[: 1 + n_spec_devices])
    ch_rng = rngs[1 + n_spec_devices]

    # association is gated by beacon audibility, so the range-entry contour
    # is the downlink contour for each device's sensitivity
    range_by_sens: dict[float, float] = {}
    dev_range: dict[str, float] = {}
    for dev in devices:
        if dev.sensitivity_dbm not in range_by_sens:
            range_by_sens[dev.sensitivity_dbm] = downlink_range_horizontal(
                template, layout, ch, ap.tx_power_dbm, dev.sensitivity_dbm, cfg.altitude_m
            )
        dev_range[dev.device_id] = range_by_sens[dev.sensitivity_dbm]
    disc_range = max(dev_range.values()) if dev_range else 0.0

    st = MissionState.start(cfg)
    st.attitude = att

    trace = TraceWriter(out_path / "events.jsonl") if out_path else _NullWriter()
    traj = TrajectoryWriter(out_path / "trajectory.csv") if out_path else None
    snap_rows: list[dict] = []
    all_events: list[dict] = []

    def record(ev: dict) -> None:
        trace.write(ev)
        all_events.append(ev)

    config_dump = spec.model_dump(mode="json")
    record(
        {
            "t": 0.0,
            "event": "meta",
            "seed": spec.seed,
            "discovery_range_m": disc_range,
            "device_ranges_m": dev_range,
            "targets": [
                {
                    "device": d.device_id,
                    "position": [d.position[0], d.position[1], d.position[2]],
                    "mode": d.mode,
                    "is_target": d.saved_ssid == ap.ssid and d.credential == ap.credential,
                }
                for d in devices
            ],
            "aggregation_timeout_s": ap.aggregation_timeout_s,
            "placeholder_dbm": ch.noise_floor_dbm,
            "n_nics": ap.n_nics,
            "antennas_per_nic": ap.antennas_per_nic,
        }
    )
    record({"t": 0.0, "event": "phase", "phase": "exploratory"})

    agg = Aggregator(
        n_nics=ap.n_nics,
        antennas_per_nic=ap.antennas_per_nic,
        timeout_s=ap.aggregation_timeout_s,
        placeholder_dbm=ch.noise_floor_dbm,
        on_event=lambda kind, payload: record({"event": kind, **payload}),
    )

    # piecewise-linear drone motion between mission steps
    seg = {"t": 0.0, "pos": st.position.copy(), "vel": np.zeros(3)}

    def drone_pos(t: float) -> np.ndarray:
        return seg["pos"] + seg["vel"] * (t - seg["t"])

    heap: list[tuple[float, int, int, tuple]] = []
    seq = 0

    def push(t: float, prio: int, item: tuple) -> None:
        nonlocal seq
        heapq.heappush(heap, (t, prio, seq, item))
        seq += 1

    push(0.0, P_STEP, ("step",))
    if spec.trace_beacons:
        push(0.0, P_BEACON, ("beacon",))
    for i, dev in enumerate(devices):
        push(dev.next_event_time(), P_DEVICE, ("device", i))

    verified_srcs: set[int] = set()
    tracked_device: str | None = None
    in_range: set[str] = set()
    pending_estimates: list[DirectionEstimate] = []
    truth_by_key: dict[tuple[int, int], dict] = {}
    device_by_src: dict[int, DeviceModel] = {}
    burst_heard: dict[str, bool] = {}
    scheduled_deadlines: set[float] = set()
    est_latencies_ms: list[float] = []
    n_snapshots = 0
    n_estimates = 0
    status: str | None = None
    end_time = cfg.max_time_s
    last_world_est: DirectionEstimate | None = None

    def mark_in_range(t: float, dev: DeviceModel) -> None:
        if dev.device_id not in in_range:
            in_range.add(dev.device_id)
            record({"t": t, "event": "range_entry", "device": dev.device_id,
                    "range_m": dev_range[dev.device_id]})

    def check_range_entries(t: float) -> None:
        pos = drone_pos(t)
        for dev in devices:
            if dev.device_id in in_range:
                continue
            if math.hypot(dev.position[0] - pos[0], dev.position[1] - pos[1]) <= dev_range[
                dev.device_id
            ]:
                mark_in_range(t, dev)

    def finalize_snapshot(finalized_t: float, snap: RssSnapshot) -> None:
        nonlocal n_snapshots, n_estimates, tracked_device, last_world_est
        n_snapshots += 1
        truth = truth_by_key.pop(snap.key, None)
        row = snap.to_dict()
        row["finalized_t"] = finalized_t
        row["attitude"] = [att.roll, att.pitch, att.yaw]
        if truth:
            row.update(truth)
        record({"event": "snapshot", **row})
        snap_rows.append(row)
        if not spec.estimate_enabled or snap.src not in verified_srcs:
            return
        t0 = time.perf_counter()
        try:
            est = estimate(manifold, snap)
        except (InsufficientDataError, NoSignalError) as exc:
            record({"t": snap.capture_time, "event": "estimate_skipped",
                    "src": snap.src, "sn": snap.sn, "reason": str(exc)})
            return
        est_latencies_ms.append((time.perf_counter() - t0) * 1e3)
        n_estimates += 1
        world_est = apply_attitude(est, att)
        record({"event": "estimate", **estimate_to_dict(est, snap.key),
                "world": [world_est.direction.x, world_est.direction.y,
                          world_est.direction.z]})
        dev = device_by_src.get(snap.src)
        if dev is not None and (tracked_device is None or dev.device_id == tracked_device):
            tracked_device = dev.device_id
            pending_estimates.append(world_est)

    def handle_uplink(t: float, dev: DeviceModel, src: int, sn: int, kind: str,
                      ls: LinkState) -> None:
        means = dev.tx_power_dbm + ls.gains_dbi - ls.path_loss_db - ch.canopy_loss_db
        rss = sample_rx_vector(means, ch, ch_rng)
        device_by_src[src] = dev
        record({"t": t, "event": "mpdu", "device": dev.device_id, "src": src, "sn": sn,
                "kind": kind, "dist_m": ls.distance_m,
                "truth_body": [float(v) for v in ls.body_dir],
                "truth_world": [float(v) for v in ls.world_dir]})
        truth_by_key[(src, sn)] = {
            "device": dev.device_id,
            "truth_body": [float(v) for v in ls.body_dir],
            "truth_world": [float(v) for v in ls.world_dir],
            "dist_m": ls.distance_m,
        }
        any_report = False
        for nic in range(ap.n_nics):
            vals = rss[nic * ap.antennas_per_nic : (nic + 1) * ap.antennas_per_nic]
            if float(vals.max()) >= ch.decode_sensitivity_dbm:
                any_report = True
                record({"t": t, "event": "nic_report", "nic": nic, "src": src, "sn": sn,
                        "rss": [float(v) for v in vals]})
                snap = agg.ingest(NicReport(nic, src, sn, tuple(float(v) for v in vals), t))
                if snap is not None:
                    finalize_snapshot(t, snap)
        if not any_report:
            truth_by_key.pop((src, sn), None)
        else:
            if kind == "auth_frame":
                burst_heard[dev.device_id] = True
            deadline = agg.next_deadline()
            if deadline is not None and deadline not in scheduled_deadlines:
                scheduled_deadlines.add(deadline)
                push(deadline, P_AGG, ("agg_poll", deadline))

    def verifier(dev: DeviceModel) -> bool:
        # credentials must match and at least one auth frame must have been
        # decoded on some NIC: both link directions are required
        return verify_credential(dev, ap) and burst_heard.get(dev.device_id, False)

    def handle_device(t: float, idx: int) -> None:
        dev = devices[idx]
        ls = link_state(drone_pos(t), att, dev.position, template, layout, ch)
        down_rx = ap.tx_power_dbm + float(ls.gains_dbi.max()) - ls.path_loss_db - ch.canopy_loss_db
        audible = down_rx >= dev.sensitivity_dbm and dev.saved_ssid == ap.ssid
        if audible:
            mark_in_range(t, dev)  # audibility implies the contour was crossed
        events = dev.step(t, audible, verifier=verifier)
        for ev in events:
            if ev.kind == "scan":
                record({"t": ev.t, "event": "scan", "device": dev.device_id,
                        "heard": ev.heard, "rx_dbm": down_rx})
                if ev.heard:
                    burst_heard[dev.device_id] = False  # new association attempt
            elif ev.kind in ("probe", "auth_frame", "keepalive"):
                handle_uplink(ev.t, dev, ev.src, ev.sn, ev.kind, ls)
            elif ev.kind == "verify":
                record({"t": ev.t, "event": "verify", "device": dev.device_id,
                        "src": ev.src, "ok": ev.ok})
                if ev.ok:
                    verified_srcs.add(ev.src)
            elif ev.kind == "associate":
                record({"t": ev.t, "event": "associate", "device": dev.device_id,
                        "src": ev.src})
            elif ev.kind == "disassociate":
                record({"t": ev.t, "event": "disassociate", "device": dev.device_id})
        push(dev.next_event_time(), P_DEVICE, ("device", idx))

    check_range_entries(0.0)
    if traj:
        traj.write_row(0.0, st.position, st.phase)

    while heap:
        t, _prio, _seq, item = heapq.heappop(heap)
        if t > cfg.max_time_s:
            status = "timeout"
            end_time = cfg.max_time_s
            break
        kind = item[0]
        if kind == "beacon":
            record({"t": t, "event": "beacon"})
            push(t + ap.beacon_interval_s, P_BEACON, ("beacon",))
        elif kind == "device":
            handle_device(t, item[1])
        elif kind == "agg_poll":
            scheduled_deadlines.discard(item[1])
            for snap in agg.poll(t):
                finalize_snapshot(snap.capture_time + agg.timeout_s, snap)
            deadline = agg.next_deadline()
            if deadline is not None and deadline not in scheduled_deadlines:
                scheduled_deadlines.add(deadline)
                push(deadline, P_AGG, ("agg_poll", deadline))
        elif kind == "step":
            prev_phase = st.phase
            pos_before = st.position.copy()
            new_ests = list(pending_estimates)
            pending_estimates.clear()
            if new_ests:
                last_world_est = new_ests[-1]
            cmd = mission_step(st, cfg, new_ests, cfg.step_s)
            seg["t"], seg["pos"], seg["vel"] = t, pos_before, cmd.velocity
            if st.phase != prev_phase:
                record({"t": t, "event": "phase", "phase": st.phase})
            check_range_entries(st.clock)
            if traj:
                if last_world_est is not None:
                    traj.write_row(st.clock, st.position, st.phase,
                                   last_world_est.theta_deg, last_world_est.phi_deg,
                                   last_world_est.score)
                else:
                    traj.write_row(st.clock, st.position, st.phase)
            if st.phase == "done":
                target_pos = None
                if tracked_device is not None:
                    tracked = next(d for d in devices if d.device_id == tracked_device)
                    target_pos = [tracked.position[0], tracked.position[1]]
                record({"t": st.clock, "event": "fix", "pos": list(st.final_fix),
                        "target_pos": target_pos, "device": tracked_device})
                status = "fix"
                end_time = st.clock
                break
            if st.waypoints_exhausted and st.phase == "exploratory":
                status = "completed" if not cfg.guided else "not_found"
                end_time = st.clock
                break
            push(t + cfg.step_s, P_STEP, ("step",))

    if status is None:
        status = "timeout"

    for snap in agg.poll(end_time):
        finalize_snapshot(snap.capture_time + agg.timeout_s, snap)
    record({"t": end_time, "event": "end", "status": status})

    report = compute_metrics_from_events(all_events)
    metrics = report.to_dict()
    metrics["status"] = status
    metrics["end_time_s"] = end_time

    perf: dict = {}
    if est_latencies_ms:
        perf = {
            "estimate_latency_ms": {
                "median": lower_median(est_latencies_ms),
                "p95": lower_percentile(est_latencies_ms, 95.0),
                "n": len(est_latencies_ms),
            }
        }

    if out_path:
        trace.close()
        if traj:
            traj.close()
        from .trace import write_snapshots_jsonl

        write_snapshots_jsonl(out_path / "snapshots.jsonl", snap_rows)
        with open(out_path / "metrics.json", "w") as fh:
            json.dump(metrics, fh, indent=2, sort_keys=True)
            fh.write("\n")
        # wall-clock measurements: excluded from the determinism guarantee
        with open(out_path / "perf.json", "w") as fh:
            json.dump(perf, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_manifest(out_path / "manifest.json", config_dump, spec.seed)

    return SimResult(
        status=status,
        end_time_s=end_time,
        metrics=metrics,
        fix=st.final_fix,
        n_snapshots=n_snapshots,
        n_estimates=n_estimates,
        out_dir=str(out_path) if out_path else None,
        perf=perf,
    )


def replay_nic_reports(
    events_path: str | Path,
    out_snapshots_path: str | Path,
    estimates_path: str | Path | None = None,
    manifold: Manifold | None = None,
) -> dict:
    """Re-run aggregation (and optionally estimation) over a recorded trace.

    Feeding the recorded NIC reports through a fresh aggregator in
    timestamp order reproduces the run's snapshot stream byte for byte.
    """
    from .estimator import write_estimates_jsonl
    from .trace import read_events, write_snapshots_jsonl

    meta = None
    reports: list[dict] = []
    snapshot_meta: dict[tuple[int, int], dict] = {}
    end_t = None
    for ev in read_events(events_path):
        if ev["event"] == "meta":
            meta = ev
        elif ev["event"] == "nic_report":
            reports.append(ev)
        elif ev["event"] == "snapshot":
            snapshot_meta[(ev["src"], ev["sn"])] = ev
        elif ev["event"] == "end":
            end_t = ev["t"]
    if meta is None:
        raise ValueError("trace has no meta event")

    agg = Aggregator(
        n_nics=meta["n_nics"],
        antennas_per_nic=meta["antennas_per_nic"],
        timeout_s=meta["aggregation_timeout_s"],
        placeholder_dbm=meta["placeholder_dbm"],
    )
    rows: list[dict] = []

    def emit(snap: RssSnapshot, finalized_t: float) -> None:
        row = snap.to_dict()
        row["finalized_t"] = finalized_t
        src = snapshot_meta.get(snap.key, {})
        for k in ("attitude", "device", "truth_body", "truth_world", "dist_m"):
            if k in src:
                row[k] = src[k]
        rows.append(row)

    for ev in reports:
        # live runs ingest before firing a deadline that lands on the same
        # timestamp, so the pre-ingest poll excludes the boundary
        for snap in agg.poll(ev["t"], include_boundary=False):
            emit(snap, snap.capture_time + agg.timeout_s)
        snap = agg.ingest(
            NicReport(ev["nic"], ev["src"], ev["sn"], tuple(ev["rss"]), ev["t"])
        )
        if snap is not None:
            emit(snap, ev["t"])
    if end_t is not None:
        for snap in agg.poll(end_t):
            emit(snap, snap.capture_time + agg.timeout_s)

    write_snapshots_jsonl(out_snapshots_path, rows)
    n_est = 0
    if estimates_path is not None and manifold is not None:
        snaps = [RssSnapshot.from_dict(r) for r in rows]
        n_est = write_estimates_jsonl(estimates_path, snaps, manifold)
    return {"snapshots": len(rows), "estimates": n_est}
