"""FastAPI service wrapping the core toolkit.

The service holds one active template/layout/manifold (configured at
startup, built lazily) plus any number of aggregator sessions. The CLI is
a thin client of these endpoints, in-process by default.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..antenna import AntennaLayout, Manifold, build_manifold, default_layout, load_layout_csv
from ..bench import run_bench
from ..errors import (
    ConfigError,
    DomainError,
    InsufficientDataError,
    LenseekError,
    NoSignalError,
    ParseError,
)
from ..estimator import RssSnapshot, estimate, estimate_to_dict
from ..lens import (
    BeamTemplate,
    LensDesign,
    export_template,
    import_template,
    profile_table,
    synth_template,
    write_profile_csv,
)
from ..metrics import compute_metrics_from_events
from ..protocol import Aggregator, NicReport
from ..simulate import replay_nic_reports, run_simulation
from ..trace import read_events
from . import models as m


@dataclass
class ServiceSettings:
    """Active template/layout configuration for the estimator endpoints."""

    template_path: str | None = None
    layout_path: str | None = None
    resolution_deg: float = 1.0
    peak_dbi: float = 14.0
    hpbw_deg: float = 60.0
    floor_dbi: float = -10.0


@dataclass
class _State:
    settings: ServiceSettings
    template: BeamTemplate | None = None
    layout: AntennaLayout | None = None
    manifold: Manifold | None = None
    sessions: dict[str, Aggregator] = field(default_factory=dict)
    next_session: int = 1
    lock: threading.Lock = field(default_factory=threading.Lock)

    def get_layout(self) -> AntennaLayout:
        if self.layout is None:
            s = self.settings
            self.layout = load_layout_csv(s.layout_path) if s.layout_path else default_layout()
        return self.layout

    def get_template(self) -> BeamTemplate:
        if self.template is None:
            s = self.settings
            if s.template_path:
                self.template = import_template(s.template_path, s.resolution_deg)
            else:
                self.template = synth_template(
                    s.peak_dbi, s.hpbw_deg, s.floor_dbi, s.resolution_deg
                )
        return self.template

    def get_manifold(self) -> Manifold:
        if self.manifold is None:
            self.manifold = build_manifold(
                self.get_template(), self.get_layout(), self.settings.resolution_deg
            )
        return self.manifold


def _snapshot_from_model(s: m.SnapshotIn) -> RssSnapshot:
    mask = s.mask if s.mask is not None else [True] * len(s.rss)
    return RssSnapshot(
        src=s.src,
        sn=s.sn,
        rss=np.asarray(s.rss, dtype=float),
        valid=np.asarray(mask, dtype=bool),
        capture_time=s.t,
        complete=s.complete,
    )


def _snapshot_out(snap: RssSnapshot) -> m.SnapshotOut:
    return m.SnapshotOut(**snap.to_dict())


def create_app(settings: ServiceSettings | None = None) -> FastAPI:
    state = _State(settings=settings or ServiceSettings())
    app = FastAPI(title="lenseek", version=__version__)

    @app.exception_handler(LenseekError)
    async def _lenseek_error(_, exc: LenseekError):
        from fastapi.responses import JSONResponse

        code = 422 if isinstance(exc, (ConfigError, DomainError, ParseError)) else 400
        return JSONResponse(status_code=code, content={"detail": str(exc)})

    @app.get("/health", response_model=m.HealthResponse)
    def health():
        return m.HealthResponse(status="ok", version=__version__)

    @app.get("/layout", response_model=m.LayoutResponse)
    def layout():
        lay = state.get_layout()
        return m.LayoutResponse(
            n=lay.n,
            antennas=[
                m.LayoutRow(index=i, theta_deg=loc.theta_deg, phi_deg=loc.phi_deg)
                for i, loc in enumerate(lay.locations)
            ],
        )

    @app.post("/lens/profile", response_model=m.LensProfileResponse)
    def lens_profile(req: m.LensProfileRequest):
        design = LensDesign(req.radius_m, req.eps_material, req.eps_truncation, req.frequency_hz)
        rows = profile_table(design, req.steps)
        if req.out_path:
            write_profile_csv(design, req.steps, req.out_path)
        return m.LensProfileResponse(
            rows=[m.LensProfileRow(r_m=r, eps=e, n=n, alpha=a) for r, e, n, a in rows],
            out_path=req.out_path,
        )

    def _template_summary(t: BeamTemplate, out_path: str | None) -> m.TemplateSummary:
        return m.TemplateSummary(
            source=t.source,
            peak_dbi=t.peak_dbi,
            resolution_deg=t.resolution_deg,
            n_theta=int(t.theta_deg.size),
            n_phi=int(t.phi_deg.size),
            out_path=out_path,
        )

    @app.post("/template/synthesize", response_model=m.TemplateSummary)
    def template_synthesize(req: m.TemplateGenRequest):
        t = synth_template(req.peak_dbi, req.hpbw_deg, req.floor_dbi, req.resolution_deg)
        if req.out_path:
            export_template(t, req.out_path)
        return _template_summary(t, req.out_path)

    @app.post("/template/import", response_model=m.TemplateSummary)
    def template_import(req: m.TemplateImportRequest):
        t = import_template(req.path, req.resolution_deg)
        if req.out_path:
            export_template(t, req.out_path)
        return _template_summary(t, req.out_path)

    def _native_res(path: str) -> float:
        from ..lens import _read_template_csv

        theta, _, _ = _read_template_csv(path)
        return float(theta[1] - theta[0])

    @app.post("/template/export", response_model=m.TemplateSummary)
    def template_export(req: m.TemplateExportRequest):
        # round-trip at the file's own resolution (no resampling)
        t = import_template(req.path, _native_res(req.path))
        export_template(t, req.out_path)
        return _template_summary(t, req.out_path)

    @app.get("/template", response_model=m.TemplateSummary)
    def template_active():
        return _template_summary(state.get_template(), None)

    @app.post("/estimate", response_model=m.EstimateResult)
    def estimate_one(req: m.EstimateRequest):
        snap = _snapshot_from_model(req.snapshot)
        manifold = state.get_manifold()
        try:
            est = estimate(manifold, snap, req.k_min, req.use_placeholders)
        except (InsufficientDataError, NoSignalError) as exc:
            return m.EstimateResult(src=snap.src, sn=snap.sn, error=str(exc))
        return m.EstimateResult(**estimate_to_dict(est, snap.key))

    @app.post("/estimate/batch", response_model=m.EstimateBatchResponse)
    def estimate_many(req: m.EstimateBatchRequest):
        manifold = state.get_manifold()
        results = []
        for s in req.snapshots:
            try:
                snap = _snapshot_from_model(s)
                est = estimate(manifold, snap, req.k_min, req.use_placeholders)
                results.append(m.EstimateResult(**estimate_to_dict(est, snap.key)))
            except (InsufficientDataError, NoSignalError, ValueError) as exc:
                results.append(m.EstimateResult(src=s.src, sn=s.sn, error=str(exc)))
        return m.EstimateBatchResponse(results=results)

    @app.post("/aggregator/sessions", response_model=m.AggregatorSessionResponse)
    def aggregator_create(req: m.AggregatorSessionRequest):
        with state.lock:
            session_id = f"agg-{state.next_session}"
            state.next_session += 1
            state.sessions[session_id] = Aggregator(
                n_nics=req.n_nics,
                antennas_per_nic=req.antennas_per_nic,
                timeout_s=req.timeout_s,
                placeholder_dbm=req.placeholder_dbm,
            )
        return m.AggregatorSessionResponse(session_id=session_id)

    def _session(session_id: str) -> Aggregator:
        agg = state.sessions.get(session_id)
        if agg is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return agg

    @app.post("/aggregator/sessions/{session_id}/reports", response_model=m.IngestResponse)
    def aggregator_ingest(session_id: str, req: m.NicReportIn):
        agg = _session(session_id)
        with state.lock:
            snap = agg.ingest(NicReport(req.nic_id, req.src, req.sn, tuple(req.rss), req.t))
        return m.IngestResponse(
            snapshot=_snapshot_out(snap) if snap else None,
            pending=agg.pending_count,
            duplicates=agg.duplicate_count,
        )

    @app.post("/aggregator/sessions/{session_id}/poll", response_model=m.PollResponse)
    def aggregator_poll(session_id: str, req: m.PollRequest):
        agg = _session(session_id)
        with state.lock:
            snaps = agg.poll(req.now)
        return m.PollResponse(
            snapshots=[_snapshot_out(s) for s in snaps], pending=agg.pending_count
        )

    @app.delete("/aggregator/sessions/{session_id}")
    def aggregator_delete(session_id: str):
        _session(session_id)
        with state.lock:
            del state.sessions[session_id]
        return {"deleted": session_id}

    @app.post("/simulate", response_model=m.SimulateResponse)
    def simulate(req: m.SimulateRequest):
        spec = req.scenario
        if req.seed_override is not None:
            spec = spec.model_copy(update={"seed": req.seed_override})
        result = run_simulation(spec, req.out_dir)
        return m.SimulateResponse(
            status=result.status,
            end_time_s=result.end_time_s,
            fix=list(result.fix) if result.fix else None,
            n_snapshots=result.n_snapshots,
            n_estimates=result.n_estimates,
            metrics=result.metrics,
            out_dir=result.out_dir or req.out_dir,
        )

    @app.post("/replay", response_model=m.ReplayResponse)
    def replay(req: m.ReplayRequest):
        manifold = state.get_manifold() if req.estimates_path else None
        counts = replay_nic_reports(
            req.events_path, req.out_snapshots_path, req.estimates_path, manifold
        )
        return m.ReplayResponse(**counts)

    @app.post("/metrics")
    def metrics(req: m.MetricsRequest):
        events = list(read_events(req.events_path))
        report = compute_metrics_from_events(events)
        out = report.to_dict()
        if req.out_json:
            with open(req.out_json, "w") as fh:
                json.dump(out, fh, indent=2, sort_keys=True)
                fh.write("\n")
        if req.out_csv:
            import csv as _csv

            header, row = report.to_csv_row()
            with open(req.out_csv, "w", newline="") as fh:
                w = _csv.writer(fh)
                w.writerow(header)
                w.writerow(row)
        return out

    @app.post("/bench")
    def bench(req: m.BenchRequest):
        return run_bench(req.resolution_deg, req.n_snapshots, req.streams, seed=req.seed)

    app.state.lenseek = state
    return app
