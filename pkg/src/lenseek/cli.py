"""Command-line interface.

Every subcommand is a thin client of the HTTP service: by default the
service app runs in-process (no network); ``--server URL`` (or the
LENSEEK_SERVER env var) targets a running instance instead. Exit codes:
0 success, 2 configuration/input error, 3 mission ended without a fix or
discovery.
"""

from __future__ import annotations

import json
import sys

import click

from . import __version__
from .errors import LenseekError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_FOUND = 3


class ApiClient:
    """httpx-backed client; in-process ASGI transport unless a server URL
    is given."""

    def __init__(self, server: str | None, template: str | None = None,
                 layout: str | None = None, resolution_deg: float = 1.0) -> None:
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            # drive the ASGI app from sync code without a network socket
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # starlette/httpx pairing notice
                from fastapi.testclient import TestClient

            from .service import ServiceSettings, create_app

            app = create_app(
                ServiceSettings(
                    template_path=template, layout_path=layout, resolution_deg=resolution_deg
                )
            )
            self._client = TestClient(app, raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        r = self._client.post(path, json=payload)
        if r.status_code >= 400:
            detail = r.json().get("detail", r.text) if r.headers.get(
                "content-type", ""
            ).startswith("application/json") else r.text
            raise LenseekError(f"{path}: {detail}")
        return r.json()

    def get(self, path: str) -> dict:
        r = self._client.get(path)
        if r.status_code >= 400:
            raise LenseekError(f"{path}: {r.text}")
        return r.json()


def _client(ctx: click.Context) -> ApiClient:
    p = ctx.obj
    return ApiClient(p["server"], p["template"], p["layout"], p["resolution_deg"])


def _echo(ctx: click.Context, payload) -> None:
    if not ctx.obj["quiet"]:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))


@click.group()
@click.version_option(__version__)
@click.option("--server", envvar="LENSEEK_SERVER", default=None,
              help="URL of a running service; default runs in-process.")
@click.option("--template", "template_path", type=click.Path(exists=True), default=None,
              help="Measured beam template CSV (default: synthetic lobe).")
@click.option("--layout", "layout_path", type=click.Path(exists=True), default=None,
              help="Antenna layout CSV (default: 10-element layout).")
@click.option("--resolution-deg", default=1.0, show_default=True,
              help="Template/manifold grid resolution.")
@click.option("--quiet", is_flag=True, default=False, help="Suppress JSON output.")
@click.pass_context
def main(ctx, server, template_path, layout_path, resolution_deg, quiet):
    """Drone Wi-Fi search-and-rescue simulation toolkit."""
    ctx.obj = {
        "server": server,
        "template": template_path,
        "layout": layout_path,
        "resolution_deg": resolution_deg,
        "quiet": quiet,
    }


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="Scenario YAML file.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out-dir", required=True, type=click.Path(), help="Output directory.")
@click.pass_context
def simulate(ctx, config_path, seed, out_dir):
    """Run a full mission simulation from a scenario file."""
    try:
        from .scenario import load_scenario

        spec = load_scenario(config_path)
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    payload = {
        "scenario": json.loads(spec.model_dump_json()),
        "out_dir": str(out_dir),
    }
    if seed is not None:
        payload["seed_override"] = seed
    try:
        result = _client(ctx).post("/simulate", payload)
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    _echo(ctx, result)
    if result["status"] in ("fix", "completed"):
        sys.exit(EXIT_OK)
    sys.exit(EXIT_NOT_FOUND)


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="Snapshot JSONL input.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Estimate JSONL output.")
@click.option("--k-min", default=4, show_default=True)
@click.option("--use-placeholders", is_flag=True, default=False,
              help="Consume placeholder values as data instead of masking.")
@click.pass_context
def estimate(ctx, in_path, out_path, k_min, use_placeholders):
    """Estimate directions for snapshots recorded offline."""
    client = _client(ctx)
    rows = []
    with open(in_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    results = []
    chunk = 512
    try:
        for start in range(0, len(rows), chunk):
            payload = {
                "snapshots": [
                    {k: r[k] for k in ("src", "sn", "rss", "mask", "t", "complete") if k in r}
                    for r in rows[start : start + chunk]
                ],
                "k_min": k_min,
                "use_placeholders": use_placeholders,
            }
            results.extend(client.post("/estimate/batch", payload)["results"])
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    with open(out_path, "w") as fh:
        for r in results:
            clean = {k: v for k, v in r.items() if v is not None}
            fh.write(json.dumps(clean) + "\n")
    _echo(ctx, {"snapshots": len(rows),
                "estimated": sum(1 for r in results if r.get("error") is None)})


@main.group()
def template():
    """Beam template utilities."""


@template.command("gen")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--peak-dbi", default=14.0, show_default=True)
@click.option("--hpbw-deg", default=60.0, show_default=True)
@click.option("--floor-dbi", default=-10.0, show_default=True)
@click.option("--resolution-deg", "res", default=1.0, show_default=True)
@click.pass_context
def template_gen(ctx, out_path, peak_dbi, hpbw_deg, floor_dbi, res):
    """Write a synthetic lobe template as CSV."""
    try:
        out = _client(ctx).post("/template/synthesize", {
            "peak_dbi": peak_dbi, "hpbw_deg": hpbw_deg, "floor_dbi": floor_dbi,
            "resolution_deg": res, "out_path": str(out_path),
        })
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    _echo(ctx, out)


@template.command("import")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--resolution-deg", "res", default=1.0, show_default=True,
              help="Fine grid resolution to interpolate to.")
@click.pass_context
def template_import_cmd(ctx, in_path, out_path, res):
    """Interpolate a coarse measured grid to a fine template CSV."""
    try:
        out = _client(ctx).post("/template/import", {
            "path": str(in_path), "resolution_deg": res, "out_path": str(out_path),
        })
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    _echo(ctx, out)


@template.command("export")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def template_export_cmd(ctx, in_path, out_path):
    """Re-export a template CSV at its own resolution (identity check)."""
    try:
        out = _client(ctx).post("/template/export", {
            "path": str(in_path), "out_path": str(out_path),
        })
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    _echo(ctx, out)


@main.group()
def lens():
    """Lens design utilities."""


@lens.command("profile")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--radius-m", default=0.075, show_default=True)
@click.option("--eps-material", default=2.7, show_default=True)
@click.option("--eps-truncation", default=1.25, show_default=True)
@click.option("--frequency-hz", default=5.745e9, show_default=True)
@click.option("--steps", default=51, show_default=True)
@click.pass_context
def lens_profile(ctx, out_path, radius_m, eps_material, eps_truncation, frequency_hz, steps):
    """Radial permittivity / index / fill-fraction table."""
    try:
        out = _client(ctx).post("/lens/profile", {
            "radius_m": radius_m, "eps_material": eps_material,
            "eps_truncation": eps_truncation, "frequency_hz": frequency_hz,
            "steps": steps, "out_path": str(out_path) if out_path else None,
        })
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    _echo(ctx, out)


@main.group()
def layout():
    """Antenna layout utilities."""


@layout.command("show")
@click.pass_context
def layout_show(ctx):
    """Print the active antenna layout."""
    try:
        out = _client(ctx).get("/layout")
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Snapshot JSONL output.")
@click.option("--estimates", "estimates_path", type=click.Path(), default=None,
              help="Also re-estimate and write estimate JSONL here.")
@click.pass_context
def replay(ctx, events_path, out_path, estimates_path):
    """Replay a recorded trace through the aggregation pipeline."""
    try:
        out = _client(ctx).post("/replay", {
            "events_path": str(events_path),
            "out_snapshots_path": str(out_path),
            "estimates_path": str(estimates_path) if estimates_path else None,
        })
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    _echo(ctx, out)


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_json", type=click.Path(), default=None)
@click.option("--csv", "out_csv", type=click.Path(), default=None)
@click.pass_context
def metrics(ctx, events_path, out_json, out_csv):
    """Compute evaluation metrics from an event trace."""
    try:
        out = _client(ctx).post("/metrics", {
            "events_path": str(events_path),
            "out_json": str(out_json) if out_json else None,
            "out_csv": str(out_csv) if out_csv else None,
        })
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    _echo(ctx, out)


@main.command()
@click.option("--resolution-deg", "res", default=1.0, show_default=True)
@click.option("--snapshots", "n_snapshots", default=200, show_default=True)
@click.option("--streams", default=7, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_context
def bench(ctx, res, n_snapshots, streams, seed):
    """Benchmark estimator latency and multi-stream throughput."""
    try:
        out = _client(ctx).post("/bench", {
            "resolution_deg": res, "n_snapshots": n_snapshots,
            "streams": streams, "seed": seed,
        })
    except LenseekError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.pass_context
def serve(ctx, host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import ServiceSettings, create_app

    p = ctx.obj
    app = create_app(ServiceSettings(
        template_path=p["template"], layout_path=p["layout"],
        resolution_deg=p["resolution_deg"],
    ))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
