"""Antenna placement on the lens surface and the direction-template manifold.

The manifold pre-computes, for every direction on a hemisphere grid, the
vector of template gains seen by the antenna array when a plane wave
arrives from that direction. Stored vectors are de-meaned and unit-norm so
that estimation reduces to a masked normalized correlation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, ParseError
from .geometry import Direction, HemisphereAngles
from .lens import BeamTemplate

LAYOUT_CSV_HEADER = ["theta_deg", "phi_deg"]

# below this de-meaned norm a template vector carries no usable shape
DEGENERATE_NORM_DB = 1e-9


@dataclass(frozen=True)
class AntennaLayout:
    """Ordered antenna locations on the lens surface (hemisphere angles)."""

    locations: tuple[HemisphereAngles, ...]

    def __post_init__(self) -> None:
        if len(self.locations) < 2:
            raise ConfigError("layout needs at least 2 antennas")
        vecs = self.unit_vectors()
        dots = np.clip(vecs @ vecs.T, -1.0, 1.0)
        np.fill_diagonal(dots, -1.0)
        if np.any(np.degrees(np.arccos(dots)) <= 1.0):
            raise ConfigError("antenna locations must be > 1 degree apart")

    @property
    def n(self) -> int:
        return len(self.locations)

    def unit_vectors(self) -> np.ndarray:
        out = np.empty((len(self.locations), 3))
        for i, loc in enumerate(self.locations):
            ct = math.cos(loc.theta)
            out[i] = (ct * math.cos(loc.phi), ct * math.sin(loc.phi), math.sin(loc.theta))
        return out


def default_layout() -> AntennaLayout:
    """Ten elements: zenith, a 3-element ring at 60 deg elevation, and a
    6-element ring at 30 deg, ring azimuths starting at 0."""
    locs = [HemisphereAngles.from_degrees(90.0, 0.0)]
    locs += [HemisphereAngles.from_degrees(60.0, p) for p in (0.0, 120.0, 240.0)]
    locs += [HemisphereAngles.from_degrees(30.0, p) for p in range(0, 360, 60)]
    return AntennaLayout(tuple(locs))


def save_layout_csv(layout: AntennaLayout, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LAYOUT_CSV_HEADER)
        for loc in layout.locations:
            writer.writerow([repr(loc.theta_deg), repr(loc.phi_deg)])


def load_layout_csv(path: str | Path) -> AntennaLayout:
    locs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != LAYOUT_CSV_HEADER:
            raise ParseError(f"{path}: expected header {','.join(LAYOUT_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                locs.append(HemisphereAngles.from_degrees(float(row[0]), float(row[1])))
            except (ValueError, IndexError, DomainError):
                raise ParseError(f"{path}: malformed row {lineno}: {row}") from None
    return AntennaLayout(tuple(locs))


def _rotated_antenna_angles(dirs: np.ndarray, antennas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each direction u (rows of ``dirs``), angles of R_u^-1 @ L_i.

    Points rotated below the horizon are folded to elevation 0, keeping
    their azimuth (back-lobe response reads the horizon ring).
    Returns (theta_deg, phi_deg) arrays of shape (n_dirs, n_antennas).
    """
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    ct = np.hypot(x, y)
    # azimuth is 0 at the zenith singularity by convention
    phi = np.where(ct > 1e-12, np.arctan2(y, x), 0.0)
    st = np.clip(z, -1.0, 1.0)
    cp, sp = np.cos(phi), np.sin(phi)

    # R_u = Rz(phi) @ Ry(pi/2 - theta); rows of R_u^T written out directly,
    # with cos(pi/2-theta)=sin(theta)=st and sin(pi/2-theta)=cos(theta)=ct
    m = np.empty((dirs.shape[0], 3, 3))
    m[:, 0, 0] = st * cp
    m[:, 0, 1] = st * sp
    m[:, 0, 2] = -ct
    m[:, 1, 0] = -sp
    m[:, 1, 1] = cp
    m[:, 1, 2] = 0.0
    m[:, 2, 0] = ct * cp
    m[:, 2, 1] = ct * sp
    m[:, 2, 2] = st

    rotated = np.einsum("dij,nj->dni", m, antennas)
    rz = np.clip(rotated[:, :, 2], -1.0, 1.0)
    theta = np.degrees(np.maximum(np.arcsin(rz), 0.0))
    phi_r = np.degrees(np.arctan2(rotated[:, :, 1], rotated[:, :, 0]))
    return theta, phi_r


def sample_template_many(t: BeamTemplate, layout: AntennaLayout, dirs: np.ndarray) -> np.ndarray:
    """Template gain vectors for many incident directions at once."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    theta, phi = _rotated_antenna_angles(dirs, layout.unit_vectors())
    return t.lookup_deg(theta, phi)


def sample_template(t: BeamTemplate, layout: AntennaLayout, u: Direction) -> np.ndarray:
    """Per-antenna template gains (dB) for a single incident direction."""
    if u.z < -1e-9:
        raise DomainError("incident direction must lie on the upper hemisphere")
    return sample_template_many(t, layout, u.as_array()[None, :])[0]


@dataclass(frozen=True)
class Manifold:
    """Pre-computed template vectors over a hemisphere grid.

    ``raw`` holds the plain gain vectors; ``centered_unit`` the de-meaned,
    unit-norm versions used for full-mask correlation. Row order is
    theta-major then phi (ascending), which also defines tie-breaking.
    """

    resolution_deg: float
    grid_theta_deg: np.ndarray  # axis values, ascending
    grid_phi_deg: np.ndarray
    directions: np.ndarray      # (n_dirs, 3) unit vectors
    theta_deg: np.ndarray       # (n_dirs,) per-row elevation
    phi_deg: np.ndarray         # (n_dirs,) per-row azimuth
    raw: np.ndarray             # (n_dirs, n_antennas)
    centered_unit: np.ndarray   # (n_dirs, n_antennas)
    degenerate: np.ndarray      # (n_dirs,) bool
    layout: AntennaLayout
    template_source: str = "synthetic"
    meta: dict = field(default_factory=dict)

    @property
    def n_dirs(self) -> int:
        return self.directions.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.raw.shape[1]

    def row_angles(self, idx: int) -> HemisphereAngles:
        return HemisphereAngles.from_degrees(float(self.theta_deg[idx]), float(self.phi_deg[idx]))


def hemisphere_grid(resolution_deg: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flattened hemisphere grid (directions, theta_deg, phi_deg)."""
    if resolution_deg <= 0 or not math.isclose(
        90.0 / resolution_deg, round(90.0 / resolution_deg)
    ):
        raise ConfigError(f"resolution {resolution_deg} must divide 90 evenly")
    n_theta = int(round(90.0 / resolution_deg)) + 1
    n_phi = int(round(360.0 / resolution_deg))
    theta_axis = np.linspace(0.0, 90.0, n_theta)
    phi_axis = np.linspace(-180.0 + resolution_deg, 180.0, n_phi)
    tt, pp = np.meshgrid(theta_axis, phi_axis, indexing="ij")
    th = np.radians(tt.ravel())
    ph = np.radians(pp.ravel())
    ct = np.cos(th)
    dirs = np.stack([ct * np.cos(ph), ct * np.sin(ph), np.sin(th)], axis=1)
    return dirs, tt.ravel(), pp.ravel()


def build_manifold(
    t: BeamTemplate, layout: AntennaLayout, resolution_deg: float = 1.0
) -> Manifold:
    """Sample the template at every grid direction and normalize rows."""
    if layout.n < 2:
        raise ConfigError("layout needs at least 2 antennas")
    dirs, th, ph = hemisphere_grid(resolution_deg)
    raw = sample_template_many(t, layout, dirs)
    centered = raw - raw.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    degenerate = norms < DEGENERATE_NORM_DB
    safe = np.where(degenerate, 1.0, norms)
    centered_unit = centered / safe[:, None]
    centered_unit[degenerate] = 0.0

    n_theta = int(round(90.0 / resolution_deg)) + 1
    n_phi = int(round(360.0 / resolution_deg))
    return Manifold(
        resolution_deg=resolution_deg,
        grid_theta_deg=np.linspace(0.0, 90.0, n_theta),
        grid_phi_deg=np.linspace(-180.0 + resolution_deg, 180.0, n_phi),
        directions=dirs,
        theta_deg=th,
        phi_deg=ph,
        raw=raw,
        centered_unit=centered_unit,
        degenerate=degenerate,
        layout=layout,
        template_source=t.source,
        meta={"peak_dbi": t.peak_dbi, "template_resolution_deg": t.resolution_deg},
    )
