"""Gradient-index lens design math and hemisphere beam templates.

The lens side covers the radial permittivity profile of an ideal
gradient-index sphere, its truncation for printability, and the material
volume fraction that realizes a target permittivity with an air/polymer
mixture. The beam side covers the one-time gain template over the upper
hemisphere: either a synthetic axially symmetric lobe or a measured grid
imported from CSV and interpolated to a fine resolution.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import ConfigError, DomainError, ParseError
from .geometry import HemisphereAngles

SPEED_OF_LIGHT = 299_792_458.0

DEFAULT_EPS_MATERIAL = 2.7
DEFAULT_EPS_TRUNCATION = 1.25
DEFAULT_FREQUENCY_HZ = 5.745e9
DEFAULT_RADIUS_M = 0.075

PROFILE_CSV_HEADER = ["r_m", "eps", "n", "alpha"]
TEMPLATE_CSV_HEADER = ["theta_deg", "phi_deg", "gain_db"]


@dataclass(frozen=True)
class LensDesign:
    """Spherical gradient-index lens parameters."""

    radius_m: float = DEFAULT_RADIUS_M
    eps_material: float = DEFAULT_EPS_MATERIAL
    eps_truncation: float = DEFAULT_EPS_TRUNCATION
    frequency_hz: float = DEFAULT_FREQUENCY_HZ

    def __post_init__(self) -> None:
        if self.radius_m <= 0:
            raise ConfigError("lens radius must pass > 0")
        if self.frequency_hz <= 0:
            raise ConfigError("frequency must be > 0")
        if not self.eps_material > self.eps_truncation >= 1.0:
            raise ConfigError(
                "need eps_material > eps_truncation >= 1, got "
                f"{self.eps_material} / {self.eps_truncation}"
            )


def permittivity(r: float, design: LensDesign) -> float:
    """Truncated radial permittivity: max(2 - (r/R)^2, eps_truncation)."""
    if r < 0 or r > design.radius_m:
        raise DomainError(f"radius {r} outside [0, {design.radius_m}]")
    ideal = 2.0 - (r / design.radius_m) ** 2
    return max(ideal, design.eps_truncation)


def refractive_index(r: float, design: LensDesign) -> float:
    """sqrt of the (truncated) permittivity at radius r."""
    return math.sqrt(permittivity(r, design))


def volume_fraction(r: float, design: LensDesign) -> float:
    """Material fill fraction realizing eps(r) with an air/polymer mixture.

    Solves eps = alpha*eps_m + (1-alpha)*1 for alpha.
    """
    if design.eps_material <= 1.0:
        raise ConfigError("eps_material must exceed 1 for the mixing model")
    return (permittivity(r, design) - 1.0) / (design.eps_material - 1.0)


def profile_table(design: LensDesign, steps: int) -> np.ndarray:
    """Radial table of (r, eps, n, alpha), rows from r=0 to r=R."""
    if steps < 2:
        raise ConfigError("steps must be >= 2")
    radii = np.linspace(0.0, design.radius_m, steps)
    rows = np.empty((steps, 4))
    for i, r in enumerate(radii):
        eps = permittivity(float(r), design)
        rows[i] = (r, eps, math.sqrt(eps), volume_fraction(float(r), design))
    return rows


def write_profile_csv(design: LensDesign, steps: int, path: str | Path) -> None:
    rows = profile_table(design, steps)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROFILE_CSV_HEADER)
        for r, eps, n, alpha in rows:
            writer.writerow([repr(float(r)), repr(float(eps)), repr(float(n)), repr(float(alpha))])


@dataclass(frozen=True)
class BeamTemplate:
    """Gain template over the upper hemisphere, dB, uniform (theta, phi) grid.

    ``theta_deg`` ascends 0..90; ``phi_deg`` spans (-180, 180] and is
    periodic. ``gain_db`` has shape (len(theta_deg), len(phi_deg)).
    """

    theta_deg: np.ndarray
    phi_deg: np.ndarray
    gain_db: np.ndarray
    source: str = "synthetic"
    peak_dbi: float = 0.0
    resolution_deg: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        th = np.asarray(self.theta_deg, dtype=float)
        ph = np.asarray(self.phi_deg, dtype=float)
        g = np.asarray(self.gain_db, dtype=float)
        if g.shape != (th.size, ph.size):
            raise ConfigError("gain grid shape does not match axes")
        if not np.all(np.isfinite(g)):
            raise ConfigError("gain grid contains non-finite values")
        res = self.resolution_deg
        if th[0] != 0.0 or th[-1] != 90.0 or not np.allclose(np.diff(th), res):
            raise ConfigError("theta axis must cover [0, 90] uniformly")
        if not np.allclose(np.diff(ph), res) or not math.isclose(ph[-1], 180.0):
            raise ConfigError("phi axis must cover (-180, 180] uniformly")
        if abs(float(g.max()) - self.peak_dbi) > 0.1:
            raise ConfigError(
                f"grid max {g.max():.3f} dB differs from stated peak {self.peak_dbi}"
            )
        object.__setattr__(self, "theta_deg", th)
        object.__setattr__(self, "phi_deg", ph)
        object.__setattr__(self, "gain_db", g)

    def lookup_deg(self, theta_deg, phi_deg) -> np.ndarray:
        """Bilinear gain lookup; exact at grid nodes, periodic in phi.

        Elevations are clamped to [0, 90] (queries below the horizon read
        the horizon row). Accepts scalars or arrays.
        """
        th = np.clip(np.asarray(theta_deg, dtype=float), 0.0, 90.0)
        ph = np.asarray(phi_deg, dtype=float)
        res = self.resolution_deg
        nphi = self.phi_deg.size

        ti = th / res
        i0 = np.clip(np.floor(ti).astype(int), 0, self.theta_deg.size - 1)
        i1 = np.minimum(i0 + 1, self.theta_deg.size - 1)
        tw = ti - i0

        # phi grid starts at -180 + res; wrap indices modulo the period
        pj = (ph - (-180.0 + res)) / res
        j0 = np.floor(pj).astype(int) % nphi
        j1 = (j0 + 1) % nphi
        pw = pj - np.floor(pj)

        g = self.gain_db
        top = g[i0, j0] * (1.0 - pw) + g[i0, j1] * pw
        bot = g[i1, j0] * (1.0 - pw) + g[i1, j1] * pw
        out = top * (1.0 - tw) + bot * tw
        return out if out.ndim else float(out)


def template_gain(t: BeamTemplate, at: HemisphereAngles) -> float:
    """Gain (dB) of the template at a hemisphere direction."""
    return float(t.lookup_deg(at.theta_deg, at.phi_deg))


def _hemisphere_axes(resolution_deg: float) -> tuple[np.ndarray, np.ndarray]:
    if resolution_deg <= 0 or not math.isclose(90.0 / resolution_deg, round(90.0 / resolution_deg)):
        raise ConfigError(f"resolution {resolution_deg} deg must divide 90 evenly")
    n_theta = int(round(90.0 / resolution_deg)) + 1
    n_phi = int(round(360.0 / resolution_deg))
    theta = np.linspace(0.0, 90.0, n_theta)
    phi = np.linspace(-180.0 + resolution_deg, 180.0, n_phi)
    return theta, phi


def synth_template(
    peak_dbi: float = 14.0,
    hpbw_deg: float = 60.0,
    floor_dbi: float = -10.0,
    resolution_deg: float = 1.0,
) -> BeamTemplate:
    """Axially symmetric synthetic lobe about the zenith boresight.

    gain(psi) = max(peak - 3*(2*psi/hpbw)^2, floor), psi = angle from
    boresight, so the half-power point falls exactly at psi = hpbw/2.
    """
    if peak_dbi <= floor_dbi:
        raise ConfigError("peak_dbi must exceed floor_dbi")
    if not (0.0 < hpbw_deg < 180.0):
        raise ConfigError("hpbw must be in (0, 180) degrees")
    theta, phi = _hemisphere_axes(resolution_deg)
    psi = 90.0 - theta  # angle from zenith depends on elevation only
    col = np.maximum(peak_dbi - 3.0 * (2.0 * psi / hpbw_deg) ** 2, floor_dbi)
    gains = np.repeat(col[:, None], phi.size, axis=1)
    return BeamTemplate(
        theta_deg=theta,
        phi_deg=phi,
        gain_db=gains,
        source="synthetic",
        peak_dbi=peak_dbi,
        resolution_deg=resolution_deg,
        meta={"hpbw_deg": hpbw_deg, "floor_dbi": floor_dbi},
    )


def synth_gain_psi(
    psi_deg, peak_dbi: float = 14.0, hpbw_deg: float = 60.0, floor_dbi: float = -10.0
):
    """Closed-form synthetic lobe gain at an angle from boresight."""
    psi = np.asarray(psi_deg, dtype=float)
    out = np.maximum(peak_dbi - 3.0 * (2.0 * psi / hpbw_deg) ** 2, floor_dbi)
    return out if out.ndim else float(out)


def export_template(t: BeamTemplate, path: str | Path) -> None:
    """Write a template grid as CSV, row-major theta-then-phi."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TEMPLATE_CSV_HEADER)
        for i, th in enumerate(t.theta_deg):
            for j, ph in enumerate(t.phi_deg):
                writer.writerow([repr(float(th)), repr(float(ph)), repr(float(t.gain_db[i, j]))])


def _read_template_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TEMPLATE_CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(TEMPLATE_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: malformed row {lineno}: {row}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")

    thetas = sorted({r[0] for r in rows})
    phis = sorted({r[1] for r in rows})
    spacing_t = np.diff(thetas)
    spacing_p = np.diff(phis)
    if len(thetas) < 2 or len(phis) < 2:
        raise ParseError(f"{path}: grid needs at least 2 distinct values per axis")
    if not np.allclose(spacing_t, spacing_t[0]) or not np.allclose(spacing_p, spacing_p[0]):
        raise ParseError(f"{path}: non-uniform grid spacing")
    if not math.isclose(spacing_t[0], spacing_p[0]):
        raise ParseError(f"{path}: theta spacing {spacing_t[0]} != phi spacing {spacing_p[0]}")
    if thetas[0] != 0.0 or thetas[-1] != 90.0:
        raise ParseError(f"{path}: theta must cover [0, 90], got [{thetas[0]}, {thetas[-1]}]")
    if not math.isclose(phis[-1], 180.0):
        raise ParseError(f"{path}: phi must end at 180, got {phis[-1]}")

    t_index = {v: i for i, v in enumerate(thetas)}
    p_index = {v: j for j, v in enumerate(phis)}
    grid = np.full((len(thetas), len(phis)), np.nan)
    for lineno, (th, ph, g) in enumerate(rows, start=2):
        i, j = t_index[th], p_index[ph]
        if not np.isnan(grid[i, j]):
            raise ParseError(f"{path}: duplicate knot at row {lineno} (theta={th}, phi={ph})")
        grid[i, j] = g
    missing = np.argwhere(np.isnan(grid))
    if missing.size:
        i, j = missing[0]
        raise ParseError(
            f"{path}: incomplete grid; missing knot theta={thetas[i]}, phi={phis[j]}"
        )
    return np.asarray(thetas), np.asarray(phis), grid


def import_template(
    path: str | Path, resolution_deg: float = 1.0, source: str = "measured"
) -> BeamTemplate:
    """Load a coarse CSV grid and interpolate it to ``resolution_deg``.

    Bicubic spline with periodic continuation in phi and clamped theta
    boundaries; the interpolant reproduces the input knots exactly.
    """
    theta_c, phi_c, grid = _read_template_csv(path)
    coarse_res = float(theta_c[1] - theta_c[0])

    if math.isclose(coarse_res, resolution_deg):
        fine = grid
        theta_f, phi_f = theta_c, phi_c
    else:
        if resolution_deg > coarse_res:
            raise ConfigError(
                f"target resolution {resolution_deg} is coarser than input {coarse_res}"
            )
        # wrap a few phi columns on each side so the spline is periodic
        pad = min(4, phi_c.size)
        phi_ext = np.concatenate([phi_c[-pad:] - 360.0, phi_c, phi_c[:pad] + 360.0])
        grid_ext = np.concatenate([grid[:, -pad:], grid, grid[:, :pad]], axis=1)
        kx = min(3, theta_c.size - 1)
        ky = min(3, phi_ext.size - 1)
        spline = RectBivariateSpline(theta_c, phi_ext, grid_ext, kx=kx, ky=ky, s=0)
        theta_f, phi_f = _hemisphere_axes(resolution_deg)
        fine = spline(theta_f, phi_f)

    return BeamTemplate(
        theta_deg=theta_f,
        phi_deg=phi_f,
        gain_db=fine,
        source=source,
        peak_dbi=float(fine.max()),
        resolution_deg=float(resolution_deg if not math.isclose(coarse_res, resolution_deg) else coarse_res),
        meta={"input_resolution_deg": coarse_res, "path": str(path)},
    )
