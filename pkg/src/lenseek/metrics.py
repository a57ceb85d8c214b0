"""Evaluation metrics computed from simulation traces.

Reported medians use the lower-median convention for even sample counts
(the midpoint variant is reported alongside); the convention is stated in
the output metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TraceError

MEDIAN_CONVENTION = "lower"


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise TraceError("median of empty sample")
    return float(v[(v.size - 1) // 2])


def lower_percentile(values, q: float) -> float:
    """Percentile as an order statistic (inverted CDF, no interpolation)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise TraceError("percentile of empty sample")
    idx = max(0, math.ceil(q / 100.0 * v.size) - 1)
    return float(v[idx])


@dataclass
class PrStats:
    med_pr: float
    med_pr_midpoint: float
    median_angular_error_deg: float
    arccos_medpr_deg: float
    p80_angular_error_deg: float
    ambiguous_fraction: float
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "med_pr": self.med_pr,
            "med_pr_midpoint": self.med_pr_midpoint,
            "median_angular_error_deg": self.median_angular_error_deg,
            "arccos_medpr_deg": self.arccos_medpr_deg,
            "p80_angular_error_deg": self.p80_angular_error_deg,
            "ambiguous_fraction": self.ambiguous_fraction,
            "n_samples": self.n_samples,
            "median_convention": MEDIAN_CONVENTION,
        }


def compute_pr_stats(estimated: np.ndarray, truth: np.ndarray) -> PrStats:
    """Projection-rate statistics over paired unit directions.

    Both inputs are (n, 3) arrays in a common frame. The per-sample
    angular error is arccos of the projection rate; the median-of-error
    and arccos-of-median-PR conventions differ in general, so both are
    reported.
    """
    est = np.atleast_2d(np.asarray(estimated, dtype=float))
    tru = np.atleast_2d(np.asarray(truth, dtype=float))
    if est.shape != tru.shape or est.shape[0] == 0:
        raise TraceError("need equal, non-empty estimate/truth arrays")
    pr = np.clip(np.einsum("ij,ij->i", est, tru), -1.0, 1.0)
    err_deg = np.degrees(np.arccos(pr))
    med = lower_median(pr)
    return PrStats(
        med_pr=med,
        med_pr_midpoint=float(np.median(pr)),
        median_angular_error_deg=lower_median(err_deg),
        arccos_medpr_deg=float(math.degrees(math.acos(min(1.0, max(-1.0, med))))),
        p80_angular_error_deg=lower_percentile(err_deg, 80.0),
        ambiguous_fraction=float(np.mean(pr <= 0.0)),
        n_samples=int(pr.size),
    )


def discovery_latency(events: list[dict]) -> dict:
    """Seconds from range entry to first association, per device.

    Devices that never associate are reported under ``not_discovered``.
    Raises if an association lacks a preceding range-entry event.
    """
    entry_t: dict[str, float] = {}
    assoc_t: dict[str, float] = {}
    for ev in events:
        if ev.get("event") == "range_entry":
            entry_t.setdefault(ev["device"], ev["t"])
        elif ev.get("event") == "associate":
            assoc_t.setdefault(ev["device"], ev["t"])
    latencies = {}
    for dev, t_assoc in assoc_t.items():
        if dev not in entry_t:
            raise TraceError(f"device {dev} associated without a range_entry event")
        latencies[dev] = t_assoc - entry_t[dev]
    not_discovered = sorted(set(entry_t) - set(assoc_t))
    out: dict = {"per_device": latencies, "not_discovered": not_discovered}
    if latencies:
        vals = list(latencies.values())
        out["mean_s"] = float(np.mean(vals))
        out["median_s"] = lower_median(vals)
    return out


def localization_error_m(fix_xy, truth_xy) -> float:
    """Horizontal Euclidean distance between fix and ground truth."""
    if fix_xy is None:
        raise TraceError("no fix present")
    fx, fy = float(fix_xy[0]), float(fix_xy[1])
    tx, ty = float(truth_xy[0]), float(truth_xy[1])
    return math.hypot(fx - tx, fy - ty)


def success_rate(discovered: int, total: int) -> float:
    if total <= 0:
        raise TraceError("success rate over zero targets")
    return discovered / total


def bootstrap_ci(
    samples,
    stat=np.median,
    n_boot: int = 1000,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap confidence interval for a sample statistic."""
    rng = rng if rng is not None else np.random.default_rng(0)
    v = np.asarray(samples, dtype=float)
    if v.size == 0:
        raise TraceError("bootstrap of empty sample")
    stats = np.empty(n_boot)
    for i in range(n_boot):
        stats[i] = stat(rng.choice(v, size=v.size, replace=True))
    return (
        float(np.percentile(stats, 100 * alpha / 2)),
        float(np.percentile(stats, 100 * (1 - alpha / 2))),
    )


@dataclass
class MetricsReport:
    """Flat report of the headline metrics for one run."""

    pr: PrStats | None = None
    discovery: dict = field(default_factory=dict)
    discovery_range_m: float | None = None
    exploratory_success_rate: float | None = None
    localization_error_m: float | None = None
    processing_latency_ms: dict = field(default_factory=dict)
    mission: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pr": self.pr.to_dict() if self.pr else None,
            "discovery_latency": self.discovery,
            "discovery_range_m": self.discovery_range_m,
            "exploratory_success_rate": self.exploratory_success_rate,
            "localization_error_m": self.localization_error_m,
            "processing_latency_ms": self.processing_latency_ms,
            "mission": self.mission,
            "median_convention": MEDIAN_CONVENTION,
        }

    def to_csv_row(self) -> tuple[list[str], list]:
        """Header and one flat row for sweep aggregation."""
        d = self.to_dict()
        header, row = [], []

        def add(prefix, obj):
            if isinstance(obj, dict):
                for k, v in obj.items():
                    add(f"{prefix}.{k}" if prefix else k, v)
            elif isinstance(obj, (int, float, str)) or obj is None:
                header.append(prefix)
                row.append("" if obj is None else obj)

        add("", d)
        return header, row


def compute_metrics_from_events(events: list[dict]) -> MetricsReport:
    """Pure post-processing of a recorded event trace into a report."""
    report = MetricsReport()
    est_by_key: dict[tuple[int, int], dict] = {}
    truth_by_key: dict[tuple[int, int], list] = {}
    latencies = []
    meta: dict = {}
    targets_total = 0
    associated: set[str] = set()
    fix = None
    fix_target = None
    phase_times: dict[str, float] = {}

    for ev in events:
        kind = ev.get("event")
        if kind == "meta":
            meta = ev
            targets_total = len(ev.get("targets", []))
        elif kind == "snapshot" and "truth_body" in ev:
            truth_by_key[(ev["src"], ev["sn"])] = ev["truth_body"]
        elif kind == "estimate":
            est_by_key[(ev["src"], ev["sn"])] = ev
            if "latency_ms" in ev:
                latencies.append(ev["latency_ms"])
        elif kind == "associate":
            associated.add(ev["device"])
        elif kind == "phase":
            phase_times.setdefault(ev["phase"], ev["t"])
        elif kind == "fix":
            fix = ev["pos"]
            fix_target = ev.get("target_pos")

    pairs_est, pairs_truth = [], []
    for key, est in est_by_key.items():
        truth = truth_by_key.get(key)
        if truth is not None and "direction" in est:
            pairs_est.append(est["direction"])
            pairs_truth.append(truth)
    if pairs_est:
        report.pr = compute_pr_stats(np.asarray(pairs_est), np.asarray(pairs_truth))

    try:
        report.discovery = discovery_latency(events)
    except TraceError:
        report.discovery = {}
    if "discovery_range_m" in meta:
        report.discovery_range_m = meta["discovery_range_m"]
    if targets_total:
        matching = [t for t in meta.get("targets", []) if t.get("is_target", True)]
        if matching:
            report.exploratory_success_rate = success_rate(
                sum(1 for t in matching if t["device"] in associated), len(matching)
            )
    if fix is not None and fix_target is not None:
        report.localization_error_m = localization_error_m(fix, fix_target)
    if latencies:
        report.processing_latency_ms = {
            "median": lower_median(latencies),
            "p95": lower_percentile(latencies, 95.0),
            "n": len(latencies),
        }
    discovery_times: dict[str, float] = {}
    for ev in events:
        if ev.get("event") == "associate":
            discovery_times.setdefault(ev["device"], ev["t"])
    report.mission = {
        "phase_times_s": phase_times,
        "fix": fix,
        "discovery_times_s": discovery_times,
    }
    return report
