"""Amplitude-only 3D direction estimation from RSS snapshots.

A snapshot is matched against the manifold by de-meaned normalized
correlation: the estimate is the grid direction whose (masked,
re-de-meaned, re-normalized) template vector correlates best with the
de-meaned valid measurements. De-meaning makes the result exactly
invariant to any per-packet constant offset (transmit power, bulk path
loss, common shadowing).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .antenna import Manifold
from .errors import InsufficientDataError, NoSignalError
from .geometry import Direction

DEFAULT_K_MIN = 4
_NORM_EPS = 1e-9


@dataclass(frozen=True)
class RssSnapshot:
    """Per-packet RSS vector across the array with a validity mask.

    ``src`` is the 48-bit source address as an int; ``sn`` the 12-bit
    sequence number. Entries where ``valid`` is False hold the placeholder
    value inserted by the aggregator.
    """

    src: int
    sn: int
    rss: np.ndarray
    valid: np.ndarray
    capture_time: float
    complete: bool

    def __post_init__(self) -> None:
        rss = np.asarray(self.rss, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if rss.shape != valid.shape or rss.ndim != 1:
            raise ValueError("rss and valid mask must be 1-D and equal length")
        if not valid.any():
            raise ValueError("snapshot needs at least one valid entry")
        object.__setattr__(self, "rss", rss)
        object.__setattr__(self, "valid", valid)

    @property
    def key(self) -> tuple[int, int]:
        return (self.src, self.sn)

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def to_dict(self) -> dict:
        return {
            "src": self.src,
            "sn": self.sn,
            "t": self.capture_time,
            "rss": [float(v) for v in self.rss],
            "mask": [bool(v) for v in self.valid],
            "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RssSnapshot":
        return cls(
            src=int(d["src"]),
            sn=int(d["sn"]),
            rss=np.asarray(d["rss"], dtype=float),
            valid=np.asarray(d["mask"], dtype=bool),
            capture_time=float(d["t"]),
            complete=bool(d.get("complete", True)),
        )


@dataclass(frozen=True)
class DirectionEstimate:
    """Estimated bearing with its correlation score."""

    direction: Direction
    theta: float  # elevation, radians
    phi: float    # azimuth, radians
    score: float
    n_valid: int
    timestamp: float

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)

    @property
    def phi_deg(self) -> float:
        return math.degrees(self.phi)


def demean(values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Valid entries minus their mean; invalid entries are dropped."""
    values = np.asarray(values, dtype=float)
    if mask is None:
        picked = values
    else:
        picked = values[np.asarray(mask, dtype=bool)]
    if picked.size < 2:
        raise InsufficientDataError(f"need >= 2 valid entries, got {picked.size}")
    return picked - picked.mean()


def _masked_scores(manifold: Manifold, y_centered: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Correlation of a de-meaned masked observation against every grid row.

    Degenerate rows (near-constant masked template) score -2 so they can
    never win the argmax.
    """
    y_norm = float(np.linalg.norm(y_centered))
    if y_norm < _NORM_EPS:
        raise NoSignalError("observation is constant across valid antennas")
    y_unit = y_centered / y_norm

    if mask.all():
        scores = manifold.centered_unit @ y_unit
        scores[manifold.degenerate] = -2.0
        if np.all(manifold.degenerate):
            raise NoSignalError("template manifold is degenerate for this mask")
        return scores

    sub = manifold.raw[:, mask]
    centered = sub - sub.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    degenerate = norms < _NORM_EPS
    if degenerate.all():
        raise NoSignalError("template manifold is degenerate for this mask")
    safe = np.where(degenerate, 1.0, norms)
    scores = (centered @ y_unit) / safe
    scores[degenerate] = -2.0
    return scores


def estimate(
    manifold: Manifold,
    snap: RssSnapshot,
    k_min: int = DEFAULT_K_MIN,
    use_placeholders: bool = False,
) -> DirectionEstimate:
    """Grid direction maximizing the masked normalized correlation.

    Ties break toward the lowest (theta index, phi index). With
    ``use_placeholders`` the mask is ignored and placeholder values are
    consumed as data (provided for comparison; biased when entries are
    missing).
    """
    mask = np.ones_like(snap.valid) if use_placeholders else snap.valid
    n_valid = int(mask.sum())
    if n_valid < k_min:
        raise InsufficientDataError(
            f"snapshot has {n_valid} valid entries; need >= {k_min}"
        )
    if mask.size != manifold.n_antennas:
        raise ValueError(
            f"snapshot length {mask.size} != manifold antennas {manifold.n_antennas}"
        )
    y_centered = demean(snap.rss, mask)
    scores = _masked_scores(manifold, y_centered, mask)
    idx = int(np.argmax(scores))  # first max = lexicographic tie-break
    return DirectionEstimate(
        direction=Direction.from_array(manifold.directions[idx], normalize=True),
        theta=math.radians(float(manifold.theta_deg[idx])),
        phi=math.radians(float(manifold.phi_deg[idx])),
        score=float(min(1.0, max(-1.0, scores[idx]))),
        n_valid=int(snap.valid.sum()),
        timestamp=snap.capture_time,
    )


def estimate_batch(
    manifold: Manifold,
    snaps: Sequence[RssSnapshot],
    k_min: int = DEFAULT_K_MIN,
    use_placeholders: bool = False,
    on_error: Callable[[int, Exception], None] | None = None,
) -> list[DirectionEstimate | None]:
    """Element-wise :func:`estimate`; failures yield None and are reported
    through ``on_error`` without aborting the batch."""
    out: list[DirectionEstimate | None] = []
    full_idx: list[int] = []
    full_rows: list[np.ndarray] = []
    for i, snap in enumerate(snaps):
        mask = np.ones_like(snap.valid) if use_placeholders else snap.valid
        if mask.all() and mask.size == manifold.n_antennas and mask.size >= k_min:
            full_idx.append(i)
            full_rows.append(snap.rss)
            out.append(None)  # filled in by the vectorized pass
        else:
            try:
                out.append(estimate(manifold, snap, k_min, use_placeholders))
            except Exception as exc:  # surfaced per element
                if on_error is not None:
                    on_error(i, exc)
                out.append(None)

    if full_idx:
        ys = np.asarray(full_rows, dtype=float)
        centered = ys - ys.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(centered, axis=1)
        flat = norms < _NORM_EPS
        safe = np.where(flat, 1.0, norms)
        units = centered / safe[:, None]
        # chunk so the score matrix stays small
        chunk = max(1, int(2e7) // manifold.n_dirs)
        for start in range(0, len(full_idx), chunk):
            block = units[start : start + chunk]
            scores = manifold.centered_unit @ block.T  # (n_dirs, b)
            scores[manifold.degenerate, :] = -2.0
            best = np.argmax(scores, axis=0)
            for j, col in enumerate(range(start, min(start + chunk, len(full_idx)))):
                i = full_idx[col]
                snap = snaps[i]
                if flat[col]:
                    exc: Exception = NoSignalError(
                        "observation is constant across valid antennas"
                    )
                    if on_error is not None:
                        on_error(i, exc)
                    out[i] = None
                    continue
                idx = int(best[j])
                out[i] = DirectionEstimate(
                    direction=Direction.from_array(manifold.directions[idx], normalize=True),
                    theta=math.radians(float(manifold.theta_deg[idx])),
                    phi=math.radians(float(manifold.phi_deg[idx])),
                    score=float(min(1.0, max(-1.0, scores[idx, j]))),
                    n_valid=int(snap.valid.sum()),
                    timestamp=snap.capture_time,
                )
    return out


def identifiability_report(manifold: Manifold, max_error_deg: float = 1.5) -> list[dict]:
    """Grid directions whose own noiseless template vector is not recovered
    within ``max_error_deg``. Exhaustive self-match over the grid."""
    failures = []
    chunk = max(1, int(2e7) // manifold.n_dirs)
    cu = manifold.centered_unit
    for start in range(0, manifold.n_dirs, chunk):
        block = cu[start : start + chunk]
        scores = cu @ block.T
        scores[manifold.degenerate, :] = -2.0
        best = np.argmax(scores, axis=0)
        for j, row in enumerate(range(start, start + block.shape[0])):
            if manifold.degenerate[row]:
                failures.append(
                    {"theta_deg": float(manifold.theta_deg[row]),
                     "phi_deg": float(manifold.phi_deg[row]),
                     "error_deg": 180.0, "reason": "degenerate"}
                )
                continue
            got = int(best[j])
            dot = float(np.clip(manifold.directions[row] @ manifold.directions[got], -1, 1))
            err = math.degrees(math.acos(dot))
            if err > max_error_deg:
                failures.append(
                    {"theta_deg": float(manifold.theta_deg[row]),
                     "phi_deg": float(manifold.phi_deg[row]),
                     "error_deg": err, "reason": "ambiguous"}
                )
    return failures


def objective_disagreement(manifold: Manifold, observations: np.ndarray) -> float:
    """Max angular gap (degrees) between the least-squares argmin over
    de-meaned residuals and the normalized-correlation argmax.

    The two coincide when template norms are constant over the grid; this
    measures how far they drift apart on real observations.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    centered_templates = manifold.raw - manifold.raw.mean(axis=1, keepdims=True)
    tnorm2 = np.einsum("ij,ij->i", centered_templates, centered_templates)
    worst = 0.0
    for y in obs:
        yc = y - y.mean()
        corr = manifold.centered_unit @ (yc / max(np.linalg.norm(yc), _NORM_EPS))
        corr[manifold.degenerate] = -2.0
        cross = centered_templates @ yc
        resid = tnorm2 - 2.0 * cross  # + const ||yc||^2
        resid[manifold.degenerate] = np.inf
        i_corr = int(np.argmax(corr))
        i_ls = int(np.argmin(resid))
        dot = float(np.clip(manifold.directions[i_corr] @ manifold.directions[i_ls], -1, 1))
        worst = max(worst, math.degrees(math.acos(dot)))
    return worst


def read_snapshots_jsonl(path: str | Path) -> list[RssSnapshot]:
    snaps = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                snaps.append(RssSnapshot.from_dict(json.loads(line)))
    return snaps


def estimate_to_dict(est: DirectionEstimate, key: tuple[int, int] | None = None) -> dict:
    d = {
        "theta_deg": est.theta_deg,
        "phi_deg": est.phi_deg,
        "score": est.score,
        "n_valid": est.n_valid,
        "t": est.timestamp,
        "direction": [est.direction.x, est.direction.y, est.direction.z],
    }
    if key is not None:
        d = {"src": key[0], "sn": key[1], **d}
    return d


def write_estimates_jsonl(
    path: str | Path,
    snaps: Iterable[RssSnapshot],
    manifold: Manifold,
    k_min: int = DEFAULT_K_MIN,
    use_placeholders: bool = False,
) -> int:
    """Estimate each snapshot and append one JSON line per input; failed
    estimates record the failure reason. Returns the success count."""
    n_ok = 0
    with open(path, "w") as fh:
        for snap in snaps:
            try:
                est = estimate(manifold, snap, k_min, use_placeholders)
                fh.write(json.dumps(estimate_to_dict(est, snap.key)) + "\n")
                n_ok += 1
            except (InsufficientDataError, NoSignalError) as exc:
                fh.write(
                    json.dumps({"src": snap.src, "sn": snap.sn, "t": snap.capture_time,
                                "error": str(exc)}) + "\n"
                )
    return n_ok
