"""Scenario configuration: schema, YAML loading, and conversion to core
objects. All angles in files are degrees; distances metres; powers dBm.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from .antenna import AntennaLayout, default_layout, load_layout_csv
from .channel import ChannelParams
from .errors import ConfigError
from .lens import BeamTemplate, import_template, synth_template
from .mission import Aoi, SearchConfig
from .protocol import ApConfig, DeviceModel


class AreaSpec(BaseModel):
    xmin: float = 0.0
    ymin: float = 0.0
    xmax: float
    ymax: float


class TemplateSpec(BaseModel):
    kind: Literal["synthetic", "file"] = "synthetic"
    peak_dbi: float = 14.0
    hpbw_deg: float = 60.0
    floor_dbi: float = -10.0
    resolution_deg: float = 1.0
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("template.kind=file requires template.path")
        return self


class LayoutSpec(BaseModel):
    kind: Literal["default", "file"] = "default"
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check_path(self):
        if self.kind == "file" and not self.path:
            raise ValueError("layout.kind=file requires layout.path")
        return self


class ChannelSpec(BaseModel):
    frequency_hz: float = 5.745e9
    path_loss_exponent: float = Field(default=3.2, ge=1.6, le=6.0)
    reference_distance_m: float = Field(default=1.0, gt=0)
    shadowing_sigma_db: float = Field(default=4.0, ge=0)
    per_antenna_sigma_db: float = Field(default=2.0, ge=0)
    canopy_loss_db: float = Field(default=0.0, ge=0)
    noise_floor_dbm: float = -100.0
    decode_sensitivity_dbm: float = -94.0

    def to_params(self) -> ChannelParams:
        return ChannelParams(**self.model_dump())


class ApSpec(BaseModel):
    ssid: str = "home-net"
    credential: str = "psk-token"
    n_nics: int = Field(default=5, ge=1)
    antennas_per_nic: int = Field(default=2, ge=1)
    beacon_interval_s: float = Field(default=0.1, gt=0)
    tx_power_dbm: float = 20.0
    aggregation_timeout_s: float = Field(default=0.05, gt=0)

    def to_config(self) -> ApConfig:
        return ApConfig(**self.model_dump())


class SearchSpec(BaseModel):
    operational_range_m: float = Field(default=100.0, gt=0)
    altitude_m: float = Field(default=60.0, gt=0)
    speed_mps: float = Field(default=2.0, gt=0, le=17.0)
    stop_elevation_deg: float = Field(default=80.0, gt=45.0, lt=90.0)
    smoothing_window: int = Field(default=5, ge=1)
    score_gate: float = Field(default=0.5, ge=-1.0, le=1.0)
    leg_mode: Literal["inset", "edge"] = "inset"
    step_s: float = Field(default=1.0, gt=0)
    max_time_s: float = Field(default=3600.0, gt=0)
    guided: bool = True


class TargetSpec(BaseModel):
    position: tuple[float, float] | tuple[float, float, float]
    mode: Literal["active", "idle", "power_saving"] = "idle"
    ssid: Optional[str] = None       # defaults to the AP's SSID
    credential: Optional[str] = None  # defaults to the AP's credential
    tx_power_dbm: float = 15.0
    sensitivity_dbm: float = -90.0
    scan_median_s: Optional[float] = None
    scan_distribution: Literal["exponential", "fixed"] = "exponential"
    probe_on_scan: bool = True


class RandomTargetsSpec(BaseModel):
    count: int = Field(ge=1)
    mode: Literal["active", "idle", "power_saving"] = "active"
    tx_power_dbm: float = 15.0
    sensitivity_dbm: float = -90.0
    margin_m: float = 0.0
    scan_distribution: Literal["exponential", "fixed"] = "exponential"
    probe_on_scan: bool = True


class AttitudeSpec(BaseModel):
    roll_deg: float = 0.0
    pitch_deg: float = 0.0
    yaw_deg: float = 0.0


class ScenarioSpec(BaseModel):
    """Complete description of one simulated mission."""

    seed: int
    area: AreaSpec
    template: TemplateSpec = TemplateSpec()
    layout: LayoutSpec = LayoutSpec()
    channel: ChannelSpec = ChannelSpec()
    ap: ApSpec = ApSpec()
    search: SearchSpec = SearchSpec()
    targets: list[TargetSpec] = []
    random_targets: Optional[RandomTargetsSpec] = None
    attitude: AttitudeSpec = AttitudeSpec()
    estimate_enabled: bool = True
    trace_beacons: bool = True

    @model_validator(mode="after")
    def _check_targets(self):
        if not self.targets and self.random_targets is None:
            raise ValueError("scenario needs targets or random_targets")
        return self


def load_scenario(path: str | Path) -> ScenarioSpec:
    """Parse and validate a YAML scenario; errors name the failing field."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: scenario file must be a mapping")
    try:
        spec = ScenarioSpec.model_validate(raw)
    except ValidationError as exc:
        lines = [
            f"  {'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        ]
        raise ConfigError(f"{path}: invalid scenario:\n" + "\n".join(lines)) from exc
    for file_field in (spec.template.path, spec.layout.path):
        if file_field and not Path(file_field).exists():
            raise ConfigError(f"{path}: referenced file does not exist: {file_field}")
    return spec


def build_template(spec: TemplateSpec) -> BeamTemplate:
    if spec.kind == "file":
        return import_template(spec.path, spec.resolution_deg)
    return synth_template(spec.peak_dbi, spec.hpbw_deg, spec.floor_dbi, spec.resolution_deg)


def build_layout(spec: LayoutSpec) -> AntennaLayout:
    if spec.kind == "file":
        return load_layout_csv(spec.path)
    return default_layout()


def build_search_config(spec: ScenarioSpec) -> SearchConfig:
    a = spec.area
    s = spec.search
    return SearchConfig(
        aoi=Aoi(a.xmin, a.ymin, a.xmax, a.ymax),
        operational_range_m=s.operational_range_m,
        altitude_m=s.altitude_m,
        speed_mps=s.speed_mps,
        stop_elevation_deg=s.stop_elevation_deg,
        smoothing_window=s.smoothing_window,
        score_gate=s.score_gate,
        leg_mode=s.leg_mode,
        step_s=s.step_s,
        max_time_s=s.max_time_s,
        guided=s.guided,
    )


def build_devices(spec: ScenarioSpec, rng_streams: list[np.random.Generator]) -> list[DeviceModel]:
    """Instantiate device models; random placements draw from the first
    stream, each device then owns one derived stream."""
    devices: list[DeviceModel] = []
    specs: list[TargetSpec] = list(spec.targets)
    if spec.random_targets is not None:
        r = spec.random_targets
        placer = rng_streams[0]
        a = spec.area
        for _ in range(r.count):
            x = placer.uniform(a.xmin + r.margin_m, a.xmax - r.margin_m)
            y = placer.uniform(a.ymin + r.margin_m, a.ymax - r.margin_m)
            specs.append(
                TargetSpec(
                    position=(float(x), float(y)),
                    mode=r.mode,
                    tx_power_dbm=r.tx_power_dbm,
                    sensitivity_dbm=r.sensitivity_dbm,
                    scan_distribution=r.scan_distribution,
                    probe_on_scan=r.probe_on_scan,
                )
            )
    if len(rng_streams) < 1 + len(specs):
        raise ConfigError("not enough rng streams for devices")
    for i, t in enumerate(specs):
        pos = tuple(t.position) if len(t.position) == 3 else (t.position[0], t.position[1], 0.0)
        devices.append(
            DeviceModel(
                device_id=f"dev{i}",
                saved_ssid=t.ssid if t.ssid is not None else spec.ap.ssid,
                credential=t.credential if t.credential is not None else spec.ap.credential,
                mode=t.mode,
                position=pos,
                tx_power_dbm=t.tx_power_dbm,
                sensitivity_dbm=t.sensitivity_dbm,
                rng=rng_streams[1 + i],
                scan_median_s=t.scan_median_s,
                scan_distribution=t.scan_distribution,
                probe_on_scan=t.probe_on_scan,
            )
        )
    return devices


def drone_attitude(spec: ScenarioSpec):
    from .geometry import Attitude

    a = spec.attitude
    return Attitude(
        math.radians(a.roll_deg), math.radians(a.pitch_deg), math.radians(a.yaw_deg)
    )
