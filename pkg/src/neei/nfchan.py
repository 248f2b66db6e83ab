"""Near-field and far-field channels over a uniform linear array.

Positions are 2D (meters). Channels follow the spherical-wave LoS model

    h_n = sqrt(beta0 * d_n**-alpha) * exp(-j 2 pi d_n / lambda)

with d_n the exact element-to-target distance; the far-field variant replaces
d_n by its first-order (planar wavefront) expansion around the array center.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateRegion,
    DimensionMismatch,
    TargetOnElement,
    ZeroChannel,
)

SPEED_OF_LIGHT = 299_792_458.0
NEG_INF_SENTINEL = -999.0
_ON_ELEMENT_TOL = 1e-9


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array in the plane.

    ``element_spacing`` defaults to half a wavelength.
    """

    num_elements: int
    carrier_freq: float
    element_spacing: float | None = None
    center: tuple[float, float] = (0.0, 0.0)
    axis: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if int(self.num_elements) != self.num_elements or self.num_elements < 1:
            raise ValueError("num_elements must be a positive integer")
        if not self.carrier_freq > 0:
            raise ValueError("carrier_freq must be positive")
        object.__setattr__(self, "num_elements", int(self.num_elements))
        if self.element_spacing is None:
            object.__setattr__(self, "element_spacing", self.wavelength / 2.0)
        if not self.element_spacing > 0:
            raise ValueError("element_spacing must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        ax = (float(self.axis[0]), float(self.axis[1]))
        if abs(math.hypot(*ax) - 1.0) > 1e-12:
            raise ValueError(f"axis must be a unit vector, got norm {math.hypot(*ax)!r}")
        object.__setattr__(self, "axis", ax)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def aperture(self) -> float:
        return (self.num_elements - 1) * self.element_spacing

    @property
    def key(self) -> str:
        """Stable identifier used as ``ChannelVector.geometry_ref``."""
        return (
            f"ula(N={self.num_elements},fc={self.carrier_freq!r},"
            f"d={self.element_spacing!r},c={self.center!r},k={self.axis!r})"
        )

    def offsets(self) -> np.ndarray:
        """Signed element offsets along the axis, in meters."""
        n = np.arange(self.num_elements, dtype=float)
        return (n - (self.num_elements - 1) / 2.0) * self.element_spacing


@dataclass(frozen=True)
class PathlossModel:
    """Power pathloss ``reference_loss * d**-exponent``."""

    reference_loss: float
    exponent: float = 2.0

    def __post_init__(self):
        if not self.reference_loss > 0:
            raise ValueError("reference_loss must be positive")
        if not self.exponent >= 0:
            raise ValueError("exponent must be nonnegative")

    @classmethod
    def free_space(cls, wavelength: float, exponent: float = 2.0) -> "PathlossModel":
        """Free-space reference loss (lambda / 4 pi)^2 at 1 m."""
        return cls((wavelength / (4.0 * math.pi)) ** 2, exponent)

    def __call__(self, d):
        return self.reference_loss * np.power(d, -self.exponent)


@dataclass(frozen=True)
class ChannelVector:
    gains: np.ndarray
    geometry_ref: str = ""

    def __len__(self):
        return len(self.gains)

    @property
    def power(self) -> float:
        """Squared Euclidean norm of the channel."""
        return float(np.vdot(self.gains, self.gains).real)


@dataclass(frozen=True)
class NlosParams:
    """Aggregated Rician scattering term.

    ``rician_k = inf`` disables the NLoS component entirely.
    """

    rician_k: float = math.inf
    nlos_mean: complex = 0.0
    nlos_std: float = 1.0

    def __post_init__(self):
        if not self.rician_k >= 0:
            raise ValueError("rician_k must be nonnegative")
        if not self.nlos_std >= 0:
            raise ValueError("nlos_std must be nonnegative")
        if abs(self.nlos_mean) ** 2 + self.nlos_std**2 <= 0 and math.isfinite(self.rician_k):
            raise ValueError("NLoS term needs a nonzero mean or std")


@dataclass(frozen=True)
class BeamVector:
    weights: np.ndarray

    def __post_init__(self):
        norm = float(np.linalg.norm(self.weights))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"beam weights must have unit norm, got {norm!r}")

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class LinkBudget:
    """Transmit power, noise power (both watts) and bandwidth (Hz)."""

    tx_power: float
    noise_power: float
    bandwidth: float

    def __post_init__(self):
        for name in ("tx_power", "noise_power", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @classmethod
    def from_dbm(cls, tx_power_dbm: float, noise_dbm: float, bandwidth_hz: float) -> "LinkBudget":
        return cls(dbm_to_watt(tx_power_dbm), dbm_to_watt(noise_dbm), bandwidth_hz)


# ---------------------------------------------------------------------------
# geometry and channels


def element_positions(geom: ArrayGeometry) -> np.ndarray:
    """Element coordinates, shape (N_t, 2), ordered by element index."""
    return np.asarray(geom.center) + np.outer(geom.offsets(), np.asarray(geom.axis))


def _distances(geom: ArrayGeometry, points: np.ndarray) -> np.ndarray:
    """Exact distances, shape (M, N_t), for an (M, 2) point batch."""
    elems = element_positions(geom)
    diff = points[:, None, :] - elems[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def near_field_gains(geom: ArrayGeometry, points, pl: PathlossModel, common_distance=False) -> np.ndarray:
    """Vectorized spherical-wave channel for many targets, shape (M, N_t)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = _distances(geom, pts)
    if np.any(d < _ON_ELEMENT_TOL):
        raise TargetOnElement("target coincides with an array element")
    if common_distance:
        dc = np.hypot(*(pts - np.asarray(geom.center)).T)
        mag = np.sqrt(pl(dc))[:, None]
    else:
        mag = np.sqrt(pl(d))
    return mag * np.exp(-2j * np.pi * d / geom.wavelength)


def far_field_gains(geom: ArrayGeometry, points, pl: PathlossModel) -> np.ndarray:
    """Planar-wavefront channel for many targets, shape (M, N_t)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = pts - np.asarray(geom.center)
    d = np.hypot(rel[:, 0], rel[:, 1])
    if np.any(d < _ON_ELEMENT_TOL):
        raise TargetOnElement("target coincides with the array center")
    cos_psi = (rel @ np.asarray(geom.axis)) / d
    dn = d[:, None] - np.outer(cos_psi, geom.offsets())
    mag = np.sqrt(pl(d))[:, None]
    return mag * np.exp(-2j * np.pi * dn / geom.wavelength)


def los_channel_near(geom: ArrayGeometry, target, pl: PathlossModel, common_distance=False) -> ChannelVector:
    """Spherical-wave LoS channel to ``target``.

    With ``common_distance`` the magnitude uses the center distance on every
    element while phases keep the exact per-element distance.
    """
    h = near_field_gains(geom, target, pl, common_distance=common_distance)[0]
    return ChannelVector(h, geom.key)


def los_channel_far(geom: ArrayGeometry, target, pl: PathlossModel) -> ChannelVector:
    h = far_field_gains(geom, target, pl)[0]
    return ChannelVector(h, geom.key)


def apply_nlos(ch: ChannelVector, params: NlosParams, rng_seed: int) -> ChannelVector:
    """Mix a seeded Rician scattering term into ``ch``.

    The scattered part on element n has expected power ``|h_n|^2`` so the
    total expected power is unchanged for every K.
    """
    k = params.rician_k
    if math.isinf(k):
        return ChannelVector(ch.gains.copy(), ch.geometry_ref)
    rng = np.random.default_rng(rng_seed)
    n = len(ch.gains)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    z = params.nlos_mean + params.nlos_std * z / math.sqrt(2.0)
    z /= math.sqrt(abs(params.nlos_mean) ** 2 + params.nlos_std**2)
    g = np.abs(ch.gains) * z
    h = math.sqrt(k / (k + 1.0)) * ch.gains + math.sqrt(1.0 / (k + 1.0)) * g
    return ChannelVector(h, ch.geometry_ref)


# ---------------------------------------------------------------------------
# beams and link metrics


def mrt_beam(ch: ChannelVector) -> BeamVector:
    """Matched (conjugate) beam, the unit-norm maximizer of ``|h^H w|^2``."""
    norm = np.linalg.norm(ch.gains)
    if norm == 0:
        raise ZeroChannel("cannot beamform towards an all-zero channel")
    return BeamVector(np.conj(ch.gains) / norm)


def _weights(beam) -> np.ndarray:
    return beam.weights if isinstance(beam, BeamVector) else np.asarray(beam, dtype=complex)


def beam_gain(ch: ChannelVector, beam) -> float:
    """Effective power gain ``|sum_n h_n w_n|^2``.

    Weights are applied as-is (not conjugated): ``mrt_beam`` already stores the
    conjugate channel.
    """
    w = _weights(beam)
    if len(w) != len(ch.gains):
        raise DimensionMismatch(f"channel has {len(ch.gains)} elements, beam has {len(w)}")
    return float(abs(np.dot(ch.gains, w)) ** 2)


def snr(gain: float, budget: LinkBudget) -> float:
    return budget.tx_power * gain / budget.noise_power


def rate(budget: LinkBudget, snr_linear: float) -> float:
    """Shannon rate in bits/s."""
    return budget.bandwidth * math.log2(1.0 + snr_linear)


def sinr(desired_gain: float, desired_power: float, interferers: Iterable[tuple[float, float]], noise: float) -> float:
    """``P g / (noise + sum p_i g_i)``; ``interferers`` holds (gain, power) pairs."""
    interference = sum(g * p for g, p in interferers)
    return desired_power * desired_gain / (noise + interference)


def rayleigh_distance(geom: ArrayGeometry) -> float:
    return 2.0 * geom.aperture**2 / geom.wavelength


def planar_beam(geom: ArrayGeometry, target, pl: PathlossModel) -> BeamVector:
    """MRT designed on the planar-wave model (steering toward the target angle)."""
    return mrt_beam(los_channel_far(geom, target, pl))


def focused_beam(geom: ArrayGeometry, target, pl: PathlossModel) -> BeamVector:
    """MRT designed on the spherical-wave model (focusing on the target point)."""
    return mrt_beam(los_channel_near(geom, target, pl))


# ---------------------------------------------------------------------------
# heatmaps


@dataclass(frozen=True)
class Heatmap:
    """Row-major dB grid; row j holds cells centered at y0 + (j + 0.5) dy."""

    x0: float
    y0: float
    dx: float
    dy: float
    values: np.ndarray = field(repr=False)

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.dy
        return xs, ys

    def cell_of(self, point) -> tuple[int, int]:
        """(row, col) of the cell containing ``point``."""
        col = int(math.floor((point[0] - self.x0) / self.dx))
        row = int(math.floor((point[1] - self.y0) / self.dy))
        return row, col

    def argmax_cell(self) -> tuple[int, int]:
        idx = int(np.argmax(self.values))
        return divmod(idx, self.nx)


def gain_heatmap(
    geom: ArrayGeometry,
    beam,
    region: Sequence[float],
    resolution,
    pl: PathlossModel,
    normalize: bool = False,
    chunk: int = 4096,
) -> Heatmap:
    """Beam gain in dB over an axis-aligned rectangle.

    ``region`` is (xmin, ymin, xmax, ymax); ``resolution`` is a cell size or a
    (dx, dy) pair. With ``normalize`` each cell holds the beam pattern
    ``|h^H w|^2 / ||h||^2`` instead of the raw gain, which removes the
    pathloss trend and isolates where the beam points.
    """
    xmin, ymin, xmax, ymax = map(float, region)
    if np.ndim(resolution) == 0:
        dx = dy = float(resolution)
    else:
        dx, dy = map(float, resolution)
    if not (dx > 0 and dy > 0):
        raise ValueError("resolution must be positive")
    if not (xmax > xmin and ymax > ymin):
        raise DegenerateRegion(f"region {tuple(region)!r} has no area")
    nx = max(1, int(round((xmax - xmin) / dx)))
    ny = max(1, int(round((ymax - ymin) / dy)))
    w = _weights(beam)
    if len(w) != geom.num_elements:
        raise DimensionMismatch(f"array has {geom.num_elements} elements, beam has {len(w)}")
    xs = xmin + (np.arange(nx) + 0.5) * dx
    ys = ymin + (np.arange(ny) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    out = np.empty(len(pts))
    if not np.any(w):
        out.fill(-np.inf)
        return Heatmap(xmin, ymin, dx, dy, out.reshape(ny, nx))
    for start in range(0, len(pts), chunk):
        h = near_field_gains(geom, pts[start:start + chunk], pl)
        g = np.abs(h @ w) ** 2
        if normalize:
            g = g / np.sum(np.abs(h) ** 2, axis=1)
        with np.errstate(divide="ignore"):
            out[start:start + chunk] = 10.0 * np.log10(g)
    return Heatmap(xmin, ymin, dx, dy, out.reshape(ny, nx))


def write_heatmap(hm: Heatmap, path) -> None:
    """Plain-text heatmap: header ``# x0 y0 dx dy nx ny`` then ny rows."""
    lines = [f"# {_fmt(hm.x0)} {_fmt(hm.y0)} {_fmt(hm.dx)} {_fmt(hm.dy)} {hm.nx} {hm.ny}"]
    for row in hm.values:
        lines.append(" ".join(_fmt(v if np.isfinite(v) else NEG_INF_SENTINEL) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_heatmap(path) -> Heatmap:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("heatmap file must start with a '#' header line")
        x0, y0, dx, dy, nx, ny = header[1:].split()
        values = np.loadtxt(fh, ndmin=2)
    if values.shape != (int(ny), int(nx)):
        raise ValueError(f"expected {ny}x{nx} values, found {values.shape}")
    values = np.where(values == NEG_INF_SENTINEL, -np.inf, values)
    return Heatmap(float(x0), float(y0), float(dx), float(dy), values)


def _fmt(x: float) -> str:
    return f"{x:.11e}"
