"""Estimator latency and throughput benchmarking."""

from __future__ import annotations

import time

import numpy as np

from .antenna import build_manifold, default_layout, sample_template_many
from .estimator import RssSnapshot, estimate
from .lens import synth_template
from .metrics import lower_median, lower_percentile


def _random_snapshots(template, layout, n: int, sigma_db: float, rng: np.random.Generator):
    """Noisy snapshots at random hemisphere directions (area-uniform)."""
    z = rng.uniform(np.sin(np.radians(5.0)), 1.0, size=n)
    phi = rng.uniform(-np.pi, np.pi, size=n)
    r = np.sqrt(1.0 - z**2)
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    # template vectors plus offset and noise, as the aggregator would emit
    base = sample_template_many(template, layout, dirs)
    obs = base - 70.0 + rng.normal(0.0, sigma_db, size=base.shape)
    snaps = []
    for i in range(n):
        snaps.append(
            RssSnapshot(
                src=0x020000000000 + i,
                sn=i % 4096,
                rss=obs[i],
                valid=np.ones(layout.n, dtype=bool),
                capture_time=float(i),
                complete=True,
            )
        )
    return snaps


def run_bench(
    resolution_deg: float = 1.0,
    n_snapshots: int = 200,
    streams: int = 7,
    sigma_db: float = 2.0,
    seed: int = 0,
) -> dict:
    """Time single-snapshot estimation and multi-stream throughput.

    Latency is measured per call over a warm manifold; throughput
    interleaves ``streams`` independent snapshot queues round-robin, the
    way concurrent per-target traffic reaches the estimator.
    """
    rng = np.random.default_rng(seed)
    template = synth_template(resolution_deg=min(resolution_deg, 1.0))
    layout = default_layout()
    t0 = time.perf_counter()
    manifold = build_manifold(template, layout, resolution_deg)
    build_s = time.perf_counter() - t0

    snaps = _random_snapshots(template, layout, n_snapshots, sigma_db, rng)
    estimate(manifold, snaps[0])  # warm caches

    lat_ms = []
    for snap in snaps:
        t1 = time.perf_counter()
        estimate(manifold, snap)
        lat_ms.append((time.perf_counter() - t1) * 1e3)

    queues = [
        _random_snapshots(template, layout, max(1, n_snapshots // streams), sigma_db, rng)
        for _ in range(streams)
    ]
    total = sum(len(q) for q in queues)
    t2 = time.perf_counter()
    remaining = [list(q) for q in queues]
    while any(remaining):
        for q in remaining:
            if q:
                estimate(manifold, q.pop(0))
    elapsed = time.perf_counter() - t2

    return {
        "resolution_deg": resolution_deg,
        "grid_points": manifold.n_dirs,
        "n_snapshots": n_snapshots,
        "manifold_build_s": build_s,
        "latency_ms": {
            "median": lower_median(lat_ms),
            "p95": lower_percentile(lat_ms, 95.0),
            "mean": float(np.mean(lat_ms)),
        },
        "streams": streams,
        "throughput_snapshots_per_s": total / elapsed if elapsed > 0 else float("inf"),
    }
