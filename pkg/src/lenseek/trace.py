"""Event-trace and run-artifact I/O.

Traces are JSONL: one event object per line with at least ``t`` and
``event`` keys. Key order is fixed at write time so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Iterator

TRAJECTORY_HEADER = ["t_s", "x_m", "y_m", "z_m", "phase", "est_theta_deg", "est_phi_deg", "score"]


class TraceWriter:
    def __init__(self, path: str | Path) -> None:
        self._fh = open(path, "w")

    def write(self, event: dict) -> None:
        self._fh.write(json.dumps(event) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_events(path: str | Path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_snapshots_jsonl(path: str | Path, snapshots: Iterable[dict]) -> int:
    n = 0
    with open(path, "w") as fh:
        for snap in snapshots:
            fh.write(json.dumps(snap) + "\n")
            n += 1
    return n


class TrajectoryWriter:
    def __init__(self, path: str | Path) -> None:
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(TRAJECTORY_HEADER)

    def write_row(
        self,
        t: float,
        pos,
        phase: str,
        est_theta_deg: float | None = None,
        est_phi_deg: float | None = None,
        score: float | None = None,
    ) -> None:
        fmt = lambda v: "" if v is None else repr(float(v))
        self._writer.writerow(
            [repr(float(t)), repr(float(pos[0])), repr(float(pos[1])), repr(float(pos[2])),
             phase, fmt(est_theta_deg), fmt(est_phi_deg), fmt(score)]
        )

    def close(self) -> None:
        self._fh.close()


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path: str | Path, config: dict, seed: int, extra: dict | None = None) -> dict:
    import numpy

    from . import __version__

    manifest = {
        "config_hash": config_hash(config),
        "seed": seed,
        "lenseek_version": __version__,
        "numpy_version": numpy.__version__,
        "config": config,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
