"""Discrete-event models of the on-drone network side and the victim device.

Covers the multi-NIC beaconing AP abstraction, the device scan /
auto-reconnect / keepalive state machine, and the snapshot aggregator that
fuses per-NIC RSS reports under a (source address, sequence number)
composite key with a finalization timeout.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigError
from .estimator import RssSnapshot

SN_MODULUS = 4096
LOCALLY_ADMINISTERED_BIT = 1 << 41

DEFAULT_BEACON_INTERVAL_S = 0.100
DEFAULT_AGGREGATION_TIMEOUT_S = 0.050
DEFAULT_PLACEHOLDER_DBM = -100.0
DEFAULT_BURST_FRAMES = 8
DEFAULT_BURST_SPAN_S = 0.200
DEFAULT_KEEPALIVE_INTERVAL_S = 1.0
DEFAULT_LOSS_TIMEOUT_S = 5.0

SCAN_MEDIANS_S = {"active": 9.0, "idle": 36.0, "power_saving": 165.0}


@dataclass(frozen=True)
class ApConfig:
    """On-drone ESS: several NICs sharing one SSID with distinct BSSIDs."""

    ssid: str
    credential: str
    n_nics: int = 5
    antennas_per_nic: int = 2
    beacon_interval_s: float = DEFAULT_BEACON_INTERVAL_S
    bssids: tuple[int, ...] = ()
    tx_power_dbm: float = 20.0
    aggregation_timeout_s: float = DEFAULT_AGGREGATION_TIMEOUT_S

    def __post_init__(self) -> None:
        if self.n_nics < 1 or self.antennas_per_nic < 1:
            raise ConfigError("need at least one NIC and one antenna per NIC")
        if self.beacon_interval_s <= 0:
            raise ConfigError("beacon interval must be > 0")
        bssids = self.bssids or tuple(0x020000000000 + i for i in range(self.n_nics))
        if len(bssids) != self.n_nics or len(set(bssids)) != self.n_nics:
            raise ConfigError("bssids must be distinct, one per NIC")
        object.__setattr__(self, "bssids", bssids)

    @property
    def n_antennas(self) -> int:
        return self.n_nics * self.antennas_per_nic


def beacon_times(cfg: ApConfig, horizon_s: float) -> np.ndarray:
    """Beacon timestamps: an exact arithmetic sequence from t=0."""
    if horizon_s <= 0:
        raise ConfigError("horizon must be > 0")
    n = max(1, math.ceil(horizon_s / cfg.beacon_interval_s))
    return np.arange(n) * cfg.beacon_interval_s


class DeviceState(Enum):
    SCANNING = "scanning"
    ASSOCIATING = "associating"
    CONNECTED = "connected"


@dataclass(frozen=True)
class DeviceEvent:
    """Something a device did at a point in time.

    kind: scan | probe | auth_frame | verify | associate | keepalive |
    disassociate. Uplink frames carry (src, sn).
    """

    kind: str
    t: float
    src: int | None = None
    sn: int | None = None
    ok: bool | None = None
    heard: bool | None = None


class DeviceModel:
    """Victim (or bystander) Wi-Fi device with auto-reconnect behavior.

    Scans fire at stochastic intervals (exponential by default, rate
    ln2/median so the stated median is honored). A scan that hears the
    saved network's beacon starts an authentication burst; the credential
    check happens at burst end, after which the device emits periodic
    keepalives until the downlink has been inaudible for the loss timeout.
    """

    def __init__(
        self,
        device_id: str,
        saved_ssid: str,
        credential: str,
        mode: str = "idle",
        position: tuple[float, float, float] = (0.0, 0.0, 0.0),
        tx_power_dbm: float = 15.0,
        sensitivity_dbm: float = -90.0,
        rng: np.random.Generator | None = None,
        scan_median_s: float | None = None,
        scan_distribution: str = "exponential",
        probe_on_scan: bool = True,
        burst_frames: int = DEFAULT_BURST_FRAMES,
        burst_span_s: float = DEFAULT_BURST_SPAN_S,
        keepalive_interval_s: float = DEFAULT_KEEPALIVE_INTERVAL_S,
        loss_timeout_s: float = DEFAULT_LOSS_TIMEOUT_S,
    ) -> None:
        if mode not in SCAN_MEDIANS_S:
            raise ConfigError(f"unknown device mode {mode!r}")
        if scan_distribution not in ("exponential", "fixed"):
            raise ConfigError(f"unknown scan distribution {scan_distribution!r}")
        self.device_id = device_id
        self.saved_ssid = saved_ssid
        self.credential = credential
        self.mode = mode
        self.position = position
        self.tx_power_dbm = tx_power_dbm
        self.sensitivity_dbm = sensitivity_dbm
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.scan_median_s = scan_median_s if scan_median_s is not None else SCAN_MEDIANS_S[mode]
        self.scan_distribution = scan_distribution
        self.probe_on_scan = probe_on_scan
        self.burst_frames = burst_frames
        self.burst_span_s = burst_span_s
        self.keepalive_interval_s = keepalive_interval_s
        self.loss_timeout_s = loss_timeout_s

        self.state = DeviceState.SCANNING
        self.sn_counter = int(self.rng.integers(0, SN_MODULUS))
        self.session_mac: int | None = None
        self.last_audible: float = -math.inf
        self._burst_queue: list[float] = []
        self._next_scan = self._draw_scan_interval()
        self._next_keepalive = math.inf
        self.associated_once = False

    def _draw_scan_interval(self) -> float:
        if self.scan_distribution == "fixed":
            return self.scan_median_s
        return float(self.rng.exponential(self.scan_median_s / math.log(2.0)))

    def _random_mac(self) -> int:
        return int(self.rng.integers(0, 1 << 48)) | LOCALLY_ADMINISTERED_BIT

    def _next_sn(self) -> int:
        sn = self.sn_counter
        self.sn_counter = (self.sn_counter + 1) % SN_MODULUS
        return sn

    def next_event_time(self) -> float:
        if self.state is DeviceState.SCANNING:
            return self._next_scan
        if self.state is DeviceState.ASSOCIATING:
            return self._burst_queue[0]
        return self._next_keepalive

    def step(
        self,
        now: float,
        audible: bool,
        verifier: Callable[["DeviceModel"], bool] | None = None,
    ) -> list[DeviceEvent]:
        """Advance the state machine at its own event time ``now``.

        ``audible`` says whether the saved network's beacon is decodable at
        the device right now (the caller computes it from the link budget).
        ``verifier`` is the AP-side credential check applied at burst end;
        association requires both the verifier and current audibility.
        """
        events: list[DeviceEvent] = []
        if audible:
            self.last_audible = now

        if self.state is DeviceState.SCANNING and now >= self._next_scan:
            events.append(DeviceEvent("scan", now, heard=audible))
            if self.probe_on_scan:
                events.append(DeviceEvent("probe", now, src=self._random_mac(), sn=self._next_sn()))
            if audible:
                self.state = DeviceState.ASSOCIATING
                self.session_mac = self._random_mac()
                steps = np.linspace(0.0, self.burst_span_s, self.burst_frames)
                self._burst_queue = [now + float(dt) for dt in steps]
            else:
                self._next_scan = now + self._draw_scan_interval()

        elif self.state is DeviceState.ASSOCIATING:
            while self._burst_queue and now >= self._burst_queue[0] - 1e-12:
                t = self._burst_queue.pop(0)
                events.append(DeviceEvent("auth_frame", t, src=self.session_mac, sn=self._next_sn()))
            if not self._burst_queue:
                ok = bool(verifier(self)) and audible if verifier is not None else False
                events.append(DeviceEvent("verify", now, src=self.session_mac, ok=ok))
                if ok:
                    self.state = DeviceState.CONNECTED
                    self.associated_once = True
                    self._next_keepalive = now + self.keepalive_interval_s
                    events.append(DeviceEvent("associate", now, src=self.session_mac))
                else:
                    self.state = DeviceState.SCANNING
                    self.session_mac = None
                    self._next_scan = now + self._draw_scan_interval()

        elif self.state is DeviceState.CONNECTED and now >= self._next_keepalive:
            if now - self.last_audible > self.loss_timeout_s:
                events.append(DeviceEvent("disassociate", now, src=self.session_mac))
                self.state = DeviceState.SCANNING
                self.session_mac = None
                self._next_keepalive = math.inf
                self._next_scan = now + self._draw_scan_interval()
            else:
                events.append(
                    DeviceEvent("keepalive", now, src=self.session_mac, sn=self._next_sn())
                )
                self._next_keepalive = now + self.keepalive_interval_s

        return events


def verify_credential(dev: DeviceModel, cfg: ApConfig) -> bool:
    """Abstract credential check: saved network and token must both match."""
    return dev.saved_ssid == cfg.ssid and dev.credential == cfg.credential


@dataclass(frozen=True)
class NicReport:
    """Per-NIC RSS report for one captured MPDU."""

    nic_id: int
    src: int
    sn: int
    rss: tuple[float, ...]
    t: float

    @property
    def key(self) -> tuple[int, int]:
        return (self.src, self.sn)


@dataclass
class _PendingEntry:
    first_arrival: float
    reports: dict[int, tuple[float, ...]] = field(default_factory=dict)


class Aggregator:
    """Fuses per-NIC reports into array-wide snapshots keyed by (src, sn).

    A key finalizes as complete the moment every NIC has reported, or as
    incomplete at exactly first_arrival + timeout with placeholder entries
    for the missing NICs. Duplicate (nic, key) reports keep the first value
    and raise a duplicate event.
    """

    def __init__(
        self,
        n_nics: int = 5,
        antennas_per_nic: int = 2,
        timeout_s: float = DEFAULT_AGGREGATION_TIMEOUT_S,
        placeholder_dbm: float = DEFAULT_PLACEHOLDER_DBM,
        on_event: Callable[[str, dict], None] | None = None,
    ) -> None:
        if n_nics < 1 or antennas_per_nic < 1:
            raise ConfigError("need at least one NIC and one antenna per NIC")
        if timeout_s <= 0:
            raise ConfigError("timeout must be > 0")
        self.n_nics = n_nics
        self.antennas_per_nic = antennas_per_nic
        self.timeout_s = timeout_s
        self.placeholder_dbm = placeholder_dbm
        self.on_event = on_event
        self._pending: dict[tuple[int, int], _PendingEntry] = {}
        self._finalized: dict[tuple[int, int], float] = {}
        self._lock = threading.Lock()
        self.duplicate_count = 0
        self.late_count = 0

    def _emit(self, kind: str, payload: dict) -> None:
        if self.on_event is not None:
            self.on_event(kind, payload)

    def _finalize(self, key: tuple[int, int], entry: _PendingEntry, complete: bool) -> RssSnapshot:
        n = self.n_nics * self.antennas_per_nic
        rss = np.full(n, self.placeholder_dbm)
        valid = np.zeros(n, dtype=bool)
        for nic_id, values in entry.reports.items():
            lo = nic_id * self.antennas_per_nic
            rss[lo : lo + self.antennas_per_nic] = values
            valid[lo : lo + self.antennas_per_nic] = True
        return RssSnapshot(
            src=key[0],
            sn=key[1],
            rss=rss,
            valid=valid,
            capture_time=entry.first_arrival,
            complete=complete,
        )

    def ingest(self, report: NicReport) -> RssSnapshot | None:
        """Store a report; returns the snapshot if the key just completed.

        Safe to call from concurrent ingest streams (one per NIC):
        the keyed buffer is the serialization point. A key finalizes at
        most once; reports arriving after finalization are dropped with a
        late-report event.
        """
        if len(report.rss) != self.antennas_per_nic:
            raise ConfigError(
                f"report carries {len(report.rss)} antennas, expected {self.antennas_per_nic}"
            )
        if not (0 <= report.nic_id < self.n_nics):
            raise ConfigError(f"nic_id {report.nic_id} out of range")
        with self._lock:
            if report.key in self._finalized:
                self.late_count += 1
                self._emit("late_report", {"t": report.t, "nic": report.nic_id,
                                           "src": report.src, "sn": report.sn})
                return None
            entry = self._pending.get(report.key)
            if entry is None:
                entry = _PendingEntry(first_arrival=report.t)
                self._pending[report.key] = entry
            if report.nic_id in entry.reports:
                self.duplicate_count += 1
                self._emit("duplicate_report", {"t": report.t, "nic": report.nic_id,
                                                "src": report.src, "sn": report.sn})
                return None
            entry.reports[report.nic_id] = tuple(report.rss)
            if len(entry.reports) == self.n_nics:
                del self._pending[report.key]
                self._finalized[report.key] = report.t
                return self._finalize(report.key, entry, complete=True)
        return None

    def poll(self, now: float, include_boundary: bool = True) -> list[RssSnapshot]:
        """Finalize every key whose timeout has elapsed, oldest first.

        With ``include_boundary`` False, keys whose deadline falls exactly
        at ``now`` are left pending (used by trace replay to match the
        live ordering of same-timestamp ingests and deadlines).
        """
        with self._lock:
            # compare against first + timeout (the scheduled deadline value)
            # rather than a subtraction, so a poll at exactly the deadline hits
            due = [
                (entry.first_arrival, key)
                for key, entry in self._pending.items()
                if (
                    now >= entry.first_arrival + self.timeout_s
                    if include_boundary
                    else now > entry.first_arrival + self.timeout_s
                )
            ]
            due.sort()
            out = []
            for _, key in due:
                entry = self._pending.pop(key)
                self._finalized[key] = entry.first_arrival + self.timeout_s
                out.append(self._finalize(key, entry, complete=False))
            # forget finalized keys once the sequence-number window has
            # certainly moved past them
            horizon = now - max(1.0, 20.0 * self.timeout_s)
            for key in [k for k, t in self._finalized.items() if t < horizon]:
                del self._finalized[key]
            return out

    def next_deadline(self) -> float | None:
        with self._lock:
            if not self._pending:
                return None
            return min(e.first_arrival for e in self._pending.values()) + self.timeout_s

    @property
    def pending_count(self) -> int:
        return len(self._pending)
