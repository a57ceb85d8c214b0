import json
import math
import numpy as np
import pytest
import yaml

from lenseek.errors import ConfigError
from lenseek.estimator import RssSnapshot, estimate
from lenseek.metrics import compute_metrics_from_events
from lenseek.scenario import ScenarioSpec, load_scenario
from lenseek.simulate import (
    cached_manifold,
    downlink_range_horizontal,
    replay_nic_reports,
    run_simulation,
    world_direction,
)
from lenseek.trace import read_events


def base_scenario(**overrides) -> ScenarioSpec:
    raw = {
        "seed": 5,
        "area": {"xmax": 200.0, "ymax": 200.0},
        "channel": {
            "path_loss_exponent": 2.0,
            "shadowing_sigma_db": 0.0,
            "per_antenna_sigma_db": 0.0,
        },
        "search": {"operational_range_m": 100.0, "altitude_m": 60.0,
                   "speed_mps": 2.0, "max_time_s": 600.0},
        "targets": [{"position": [150.0, 120.0], "mode": "active"}],
    }
    raw.update(overrides)
    return ScenarioSpec.model_validate(raw)


class TestScenarioLoading:
    def test_yaml_round_trip(self, tmp_path):
        spec = base_scenario()
        path = tmp_path / "scenario.yaml"
        path.write_text(yaml.safe_dump(json.loads(spec.model_dump_json())))
        loaded = load_scenario(path)
        assert loaded == spec

    def test_field_diagnostics(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("seed: 1\narea: {xmax: 100, ymax: 100}\ntargets: []\n")
        with pytest.raises(ConfigError, match="targets"):
            load_scenario(path)

    def test_bad_speed_named(self, tmp_path):
        path = tmp_path / "bad2.yaml"
        path.write_text(
            "seed: 1\narea: {xmax: 100, ymax: 100}\n"
            "search: {speed_mps: 99}\n"
            "targets: [{position: [10, 10]}]\n"
        )
        with pytest.raises(ConfigError, match="speed_mps"):
            load_scenario(path)

    def test_missing_template_file(self, tmp_path):
        path = tmp_path / "bad3.yaml"
        path.write_text(
            "seed: 1\narea: {xmax: 100, ymax: 100}\n"
            "template: {kind: file, path: /nonexistent/t.csv}\n"
            "targets: [{position: [10, 10]}]\n"
        )
        with pytest.raises(ConfigError, match="does not exist"):
            load_scenario(path)

    def test_guided_requires_estimates(self):
        spec = base_scenario(estimate_enabled=False)
        with pytest.raises(ConfigError, match="estimate_enabled"):
            run_simulation(spec, None)


class TestWorldDirection:
    def test_target_below_is_down_positive(self):
        w, d = world_direction(np.array([0.0, 0.0, 60.0]), (0.0, 0.0, 0.0))
        assert np.allclose(w, [0, 0, 1])
        assert d == pytest.approx(60.0)

    def test_east_offset(self):
        w, d = world_direction(np.array([0.0, 0.0, 60.0]), (60.0, 0.0, 0.0))
        assert np.allclose(w, [math.sqrt(0.5), 0.0, math.sqrt(0.5)])


class TestDiscoveryRange:
    def test_monotone_in_sensitivity(self):
        from lenseek.antenna import default_layout
        from lenseek.channel import ChannelParams
        from lenseek.lens import synth_template

        t, lay = synth_template(), default_layout()
        ch = ChannelParams(path_loss_exponent=2.0)
        r_tight = downlink_range_horizontal(t, lay, ch, 20.0, -80.0, 60.0)
        r_loose = downlink_range_horizontal(t, lay, ch, 20.0, -90.0, 60.0)
        assert r_loose > r_tight > 0


class TestEndToEnd:
    def test_noiseless_mission_reaches_fix(self, tmp_path):
        res = run_simulation(base_scenario(), tmp_path / "run")
        assert res.status == "fix"
        err = res.metrics["localization_error_m"]
        assert err is not None
        assert err <= 60.0 / math.tan(math.radians(80.0)) + 2.0 + 1e-6

    def test_outputs_written(self, tmp_path):
        out = tmp_path / "run"
        run_simulation(base_scenario(), out)
        for name in ("events.jsonl", "trajectory.csv", "snapshots.jsonl",
                     "metrics.json", "manifest.json", "perf.json"):
            assert (out / name).exists(), name

    def test_trajectory_header(self, tmp_path):
        out = tmp_path / "run"
        run_simulation(base_scenario(), out)
        header = (out / "trajectory.csv").read_text().splitlines()[0]
        assert header == "t_s,x_m,y_m,z_m,phase,est_theta_deg,est_phi_deg,score"

    def test_event_kinds_present(self, tmp_path):
        out = tmp_path / "run"
        run_simulation(base_scenario(), out)
        kinds = {ev["event"] for ev in read_events(out / "events.jsonl")}
        for k in ("meta", "beacon", "scan", "mpdu", "nic_report", "snapshot",
                  "estimate", "verify", "associate", "range_entry", "phase",
                  "fix", "end"):
            assert k in kinds, k

    def test_deterministic_outputs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_simulation(base_scenario(), a)
        run_simulation(base_scenario(), b)
        for name in ("events.jsonl", "trajectory.csv", "snapshots.jsonl", "metrics.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_seed_changes_outputs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_simulation(base_scenario(), a)
        run_simulation(base_scenario(seed=6), b)
        assert (a / "events.jsonl").read_bytes() != (b / "events.jsonl").read_bytes()

    def test_survey_mode_completes_sweep(self, tmp_path):
        spec = base_scenario(
            search={"operational_range_m": 100.0, "altitude_m": 60.0, "speed_mps": 8.0,
                    "guided": False, "max_time_s": 2000.0},
            estimate_enabled=False,
        )
        res = run_simulation(spec, tmp_path / "run")
        assert res.status == "completed"
        assert res.metrics["exploratory_success_rate"] == 1.0

    def test_not_found_without_targets_in_range(self, tmp_path):
        spec = base_scenario(
            targets=[{"position": [150.0, 120.0], "mode": "active",
                      "ssid": "other-net", "credential": "zzz"}],
        )
        res = run_simulation(spec, tmp_path / "run")
        assert res.status == "not_found"
        assert res.metrics["exploratory_success_rate"] is None
        assert res.n_estimates == 0

    def test_bystander_never_verifies(self, tmp_path):
        spec = base_scenario(
            targets=[
                {"position": [150.0, 120.0], "mode": "active"},
                {"position": [100.0, 100.0], "mode": "active", "credential": "wrong"},
            ],
        )
        out = tmp_path / "run"
        res = run_simulation(spec, out)
        verifies = [ev for ev in read_events(out / "events.jsonl") if ev["event"] == "verify"]
        by_dev = {}
        for v in verifies:
            by_dev.setdefault(v["device"], set()).add(v["ok"])
        assert True not in by_dev.get("dev1", {False})

    def test_attitude_compensation_round_trip(self, tmp_path):
        # a constant non-level attitude must not break guided convergence
        spec = base_scenario(attitude={"roll_deg": 3.0, "pitch_deg": 5.0, "yaw_deg": 20.0})
        res = run_simulation(spec, tmp_path / "run")
        assert res.status == "fix"
        assert res.metrics["localization_error_m"] <= 13.0

    def test_measured_template_file_end_to_end(self, tmp_path):
        # a coarse measured-style grid imported from CSV drives the whole
        # pipeline: characterization file -> interpolation -> manifold ->
        # guided mission
        from lenseek.lens import export_template, synth_template

        coarse = synth_template(resolution_deg=10.0)
        path = tmp_path / "measured_10deg.csv"
        export_template(coarse, path)
        spec = base_scenario(template={"kind": "file", "path": str(path),
                                       "resolution_deg": 1.0})
        res = run_simulation(spec, tmp_path / "run")
        assert res.status == "fix"
        assert res.metrics["localization_error_m"] <= 15.0

    @pytest.mark.parametrize("seed,expected", [(5, "fix"), (1, "not_found")])
    def test_power_saving_scan_interval_dominates(self, tmp_path, seed, expected):
        # with a 165 s median scan interval a fast 100 s sweep only finds
        # the device if a scan happens to fire while the drone is audible;
        # both outcomes are legitimate and pinned by seed
        spec = base_scenario(
            seed=seed,
            targets=[{"position": [120.0, 100.0], "mode": "power_saving"}],
            search={"operational_range_m": 100.0, "altitude_m": 60.0,
                    "speed_mps": 2.0, "max_time_s": 1500.0},
        )
        res = run_simulation(spec, tmp_path / "run")
        assert res.status == expected

    def test_one_snapshot_per_decoded_mpdu(self, tmp_path):
        # every MPDU with at least one NIC report yields exactly one
        # finalized snapshot, and finalization latency never exceeds the
        # aggregation timeout
        out = tmp_path / "run"
        run_simulation(base_scenario(), out)
        events = list(read_events(out / "events.jsonl"))
        reported = {(e["src"], e["sn"]) for e in events if e["event"] == "nic_report"}
        snapshots = [e for e in events if e["event"] == "snapshot"]
        snap_keys = [(e["src"], e["sn"]) for e in snapshots]
        assert sorted(snap_keys) == sorted(reported)
        assert len(snap_keys) == len(set(snap_keys))  # finalized exactly once
        timeout = next(e for e in events if e["event"] == "meta")["aggregation_timeout_s"]
        for s in snapshots:
            assert s["finalized_t"] - s["t"] <= timeout + 1e-12

    def test_estimates_match_offline(self, tmp_path):
        out = tmp_path / "run"
        run_simulation(base_scenario(), out)
        spec = base_scenario()
        manifold = cached_manifold(spec.template, spec.layout)
        in_run = {
            (ev["src"], ev["sn"]): ev
            for ev in read_events(out / "events.jsonl")
            if ev["event"] == "estimate"
        }
        n_checked = 0
        with open(out / "snapshots.jsonl") as fh:
            for line in fh:
                row = json.loads(line)
                key = (row["src"], row["sn"])
                if key not in in_run:
                    continue
                snap = RssSnapshot.from_dict(row)
                est = estimate(manifold, snap)
                ev = in_run[key]
                assert est.theta_deg == ev["theta_deg"]
                assert est.phi_deg == ev["phi_deg"]
                assert est.score == ev["score"]
                n_checked += 1
        assert n_checked > 0


class TestReplay:
    def test_snapshot_stream_byte_identical(self, tmp_path):
        out = tmp_path / "run"
        run_simulation(base_scenario(), out)
        replay_out = tmp_path / "replayed.jsonl"
        counts = replay_nic_reports(out / "events.jsonl", replay_out)
        assert counts["snapshots"] > 0
        assert replay_out.read_bytes() == (out / "snapshots.jsonl").read_bytes()

    def test_replay_with_noise_and_timeouts(self, tmp_path):
        # stress the timed-out path: heavy noise makes NICs drop reports
        spec = base_scenario(
            seed=9,
            channel={"path_loss_exponent": 2.6, "shadowing_sigma_db": 6.0,
                     "per_antenna_sigma_db": 3.0, "canopy_loss_db": 6.0},
            search={"operational_range_m": 100.0, "altitude_m": 60.0,
                    "speed_mps": 2.0, "max_time_s": 420.0},
        )
        out = tmp_path / "run"
        run_simulation(spec, out)
        rows = [json.loads(x) for x in (out / "snapshots.jsonl").read_text().splitlines()]
        assert any(not r["complete"] for r in rows), "expected timed-out snapshots"
        incomplete = [r for r in rows if not r["complete"]]
        for r in incomplete:
            assert r["finalized_t"] == pytest.approx(r["t"] + 0.05, abs=1e-12)
            masked = [v for v, ok in zip(r["rss"], r["mask"]) if not ok]
            assert all(v == -100.0 for v in masked)
        replay_out = tmp_path / "replayed.jsonl"
        replay_nic_reports(out / "events.jsonl", replay_out)
        assert replay_out.read_bytes() == (out / "snapshots.jsonl").read_bytes()

    def test_metrics_from_replayed_trace_match_live(self, tmp_path):
        out = tmp_path / "run"
        res = run_simulation(base_scenario(), out)
        events = list(read_events(out / "events.jsonl"))
        recomputed = compute_metrics_from_events(events).to_dict()
        live = {k: v for k, v in res.metrics.items() if k not in ("status", "end_time_s")}
        assert recomputed == live


class TestManifest:
    def test_manifest_reproducibility_fields(self, tmp_path):
        out = tmp_path / "run"
        run_simulation(base_scenario(), out)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 5
        assert "config_hash" in manifest and len(manifest["config_hash"]) == 64
        assert manifest["config"]["area"]["xmax"] == 200.0

    def test_same_config_same_hash(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_simulation(base_scenario(), a)
        run_simulation(base_scenario(), b)
        ha = json.loads((a / "manifest.json").read_text())["config_hash"]
        hb = json.loads((b / "manifest.json").read_text())["config_hash"]
        assert ha == hb
