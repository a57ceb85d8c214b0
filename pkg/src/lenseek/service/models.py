"""Request/response schemas for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from ..scenario import ScenarioSpec


class HealthResponse(BaseModel):
    status: str
    version: str


class LayoutRow(BaseModel):
    index: int
    theta_deg: float
    phi_deg: float


class LayoutResponse(BaseModel):
    n: int
    antennas: list[LayoutRow]


class LensProfileRequest(BaseModel):
    radius_m: float = Field(default=0.075, gt=0)
    eps_material: float = 2.7
    eps_truncation: float = 1.25
    frequency_hz: float = Field(default=5.745e9, gt=0)
    steps: int = Field(default=51, ge=2)
    out_path: Optional[str] = None


class LensProfileRow(BaseModel):
    r_m: float
    eps: float
    n: float
    alpha: float


class LensProfileResponse(BaseModel):
    rows: list[LensProfileRow]
    out_path: Optional[str] = None


class TemplateGenRequest(BaseModel):
    peak_dbi: float = 14.0
    hpbw_deg: float = Field(default=60.0, gt=0, lt=180)
    floor_dbi: float = -10.0
    resolution_deg: float = Field(default=1.0, gt=0)
    out_path: Optional[str] = None


class TemplateImportRequest(BaseModel):
    path: str
    resolution_deg: float = Field(default=1.0, gt=0)
    out_path: Optional[str] = None


class TemplateExportRequest(BaseModel):
    path: str
    out_path: str


class TemplateSummary(BaseModel):
    source: str
    peak_dbi: float
    resolution_deg: float
    n_theta: int
    n_phi: int
    out_path: Optional[str] = None


class SnapshotIn(BaseModel):
    src: int
    sn: int = Field(ge=0, lt=4096)
    rss: list[float]
    mask: Optional[list[bool]] = None
    t: float = 0.0
    complete: bool = True


class EstimateRequest(BaseModel):
    snapshot: SnapshotIn
    k_min: int = 4
    use_placeholders: bool = False


class EstimateResult(BaseModel):
    src: int
    sn: int
    theta_deg: Optional[float] = None
    phi_deg: Optional[float] = None
    score: Optional[float] = None
    n_valid: Optional[int] = None
    t: Optional[float] = None
    direction: Optional[list[float]] = None
    error: Optional[str] = None


class EstimateBatchRequest(BaseModel):
    snapshots: list[SnapshotIn]
    k_min: int = 4
    use_placeholders: bool = False


class EstimateBatchResponse(BaseModel):
    results: list[EstimateResult]


class AggregatorSessionRequest(BaseModel):
    n_nics: int = Field(default=5, ge=1)
    antennas_per_nic: int = Field(default=2, ge=1)
    timeout_s: float = Field(default=0.05, gt=0)
    placeholder_dbm: float = -100.0


class AggregatorSessionResponse(BaseModel):
    session_id: str


class NicReportIn(BaseModel):
    nic_id: int
    src: int
    sn: int = Field(ge=0, lt=4096)
    rss: list[float]
    t: float


class SnapshotOut(BaseModel):
    src: int
    sn: int
    t: float
    rss: list[float]
    mask: list[bool]
    complete: bool


class IngestResponse(BaseModel):
    snapshot: Optional[SnapshotOut] = None
    pending: int
    duplicates: int


class PollRequest(BaseModel):
    now: float


class PollResponse(BaseModel):
    snapshots: list[SnapshotOut]
    pending: int


class SimulateRequest(BaseModel):
    scenario: ScenarioSpec
    out_dir: str
    seed_override: Optional[int] = None


class SimulateResponse(BaseModel):
    status: str
    end_time_s: float
    fix: Optional[list[float]] = None
    n_snapshots: int
    n_estimates: int
    metrics: dict
    out_dir: str


class ReplayRequest(BaseModel):
    events_path: str
    out_snapshots_path: str
    estimates_path: Optional[str] = None


class ReplayResponse(BaseModel):
    snapshots: int
    estimates: int


class MetricsRequest(BaseModel):
    events_path: str
    out_json: Optional[str] = None
    out_csv: Optional[str] = None


class BenchRequest(BaseModel):
    resolution_deg: float = Field(default=1.0, gt=0)
    n_snapshots: int = Field(default=200, ge=1)
    streams: int = Field(default=7, ge=1)
    seed: int = 0
