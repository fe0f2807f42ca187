"""Multiphoton raster-scan simulation of diamond phantoms.

Lengths are in micrometres. Voxel ``i`` of an axis spans
``[i * size, (i + 1) * size)`` and is sampled at its centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _core
from ._parallel import map_ordered
from .signal_chain import DipSpec, LockinConfig, SpectrumTrace, SweepConfig, simulate_sweep

FOUR_LN2 = 4.0 * math.log(2.0)
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
TRUNCATE_SIGMA = 4.0


@dataclass(frozen=True)
class ChannelConfig:
    name: str
    power_exponent: int
    color: tuple

    def __post_init__(self):
        if self.power_exponent not in (2, 3):
            raise ValueError("power_exponent must be 2 or 3")


CHANNELS = {
    "2PEF": ChannelConfig("2PEF", 2, (1.0, 0.0, 0.0)),
    "SHG": ChannelConfig("SHG", 2, (0.0, 1.0, 0.0)),
    "THG": ChannelConfig("THG", 3, (0.0, 0.0, 1.0)),
    "3PEF": ChannelConfig("3PEF", 3, (0.0, 1.0, 1.0)),
}


def channel(name) -> ChannelConfig:
    if isinstance(name, ChannelConfig):
        return name
    try:
        return CHANNELS[name]
    except KeyError:
        raise ValueError(f"unknown channel {name!r}; expected one of {sorted(CHANNELS)}") from None


@dataclass(frozen=True)
class PSFConfig:
    fwhm_lateral: float = 0.57
    fwhm_axial: float = 3.95

    def __post_init__(self):
        if not (self.fwhm_lateral > 0 and self.fwhm_axial > 0):
            raise ValueError("PSF widths must be positive")

    @property
    def focal_volume(self) -> float:
        """Ellipsoid volume bounded by the half-maximum surface, um^3."""
        return math.pi / 6.0 * self.fwhm_lateral ** 2 * self.fwhm_axial


@dataclass(frozen=True)
class TileConfig:
    fov: float = 317.0
    pixels: int = 512
    focus_z: float = 0.0
    stage_position: tuple = (0.0, 0.0)
    overlap: float = 0.0

    def __post_init__(self):
        if not self.fov > 0:
            raise ValueError("fov must be positive")
        if self.pixels < 1:
            raise ValueError("pixels must be >= 1")
        if not 0 <= self.overlap < 0.5:
            raise ValueError("overlap must lie in [0, 0.5)")

    @property
    def pitch(self) -> float:
        return self.fov / self.pixels

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        j = (np.arange(self.pixels) + 0.5) * self.pitch
        return self.stage_position[0] + j, self.stage_position[1] + j


@dataclass
class TileImage:
    pixels: np.ndarray  # (rows=y, cols=x)
    channel: str
    tile: TileConfig

    def __post_init__(self):
        n = self.tile.pixels
        if self.pixels.shape != (n, n):
            raise ValueError("image shape does not match the tile configuration")


@dataclass
class OdmrRegion:
    mask: np.ndarray
    dips: list


@dataclass
class Phantom:
    dims: tuple
    voxel_size: tuple = (0.2, 0.2, 0.2)
    channels: dict = field(default_factory=dict)
    odmr_regions: list = field(default_factory=list)

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        self.voxel_size = tuple(float(v) for v in self.voxel_size)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError("dims must be three positive integers")
        if len(self.voxel_size) != 3 or min(self.voxel_size) <= 0:
            raise ValueError("voxel_size must be three positive lengths")
        for name, grid in list(self.channels.items()):
            channel(name)
            grid = np.asarray(grid, dtype=float)
            if grid.shape != self.dims:
                raise ValueError(f"channel {name} grid has shape {grid.shape}, expected {self.dims}")
            if np.any(grid < 0):
                raise ValueError(f"channel {name} has negative densities")
            self.channels[name] = grid
        regions = list(self.odmr_regions)
        self.odmr_regions = []
        for reg in regions:
            self.add_odmr_region(reg.mask, reg.dips)

    def density(self, name) -> np.ndarray:
        ch = channel(name)
        if ch.name not in self.channels:
            self.channels[ch.name] = np.zeros(self.dims)
        return self.channels[ch.name]

    def centers(self, axis: int) -> np.ndarray:
        return (np.arange(self.dims[axis]) + 0.5) * self.voxel_size[axis]

    @property
    def extent(self) -> tuple:
        return tuple(n * v for n, v in zip(self.dims, self.voxel_size))

    def _grid(self):
        return np.meshgrid(self.centers(0), self.centers(1), self.centers(2), indexing="ij")

    def box_mask(self, lo, hi) -> np.ndarray:
        x, y, z = self._grid()
        return ((x >= lo[0]) & (x < hi[0]) & (y >= lo[1]) & (y < hi[1])
                & (z >= lo[2]) & (z < hi[2]))

    def sphere_mask(self, center, radius) -> np.ndarray:
        x, y, z = self._grid()
        return (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= radius ** 2

    def add_density(self, name, mask, value: float):
        if value < 0:
            raise ValueError("density must be non-negative")
        self.density(name)[mask] += value

    def add_point(self, name, position, value: float):
        idx = tuple(int(np.floor(p / v)) for p, v in zip(position, self.voxel_size))
        if not all(0 <= i < n for i, n in zip(idx, self.dims)):
            raise ValueError(f"point {position} lies outside the phantom")
        self.density(name)[idx] += value

    def add_odmr_region(self, mask, dips: Sequence[DipSpec]):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.dims:
            raise ValueError("ODMR region mask does not match phantom dims")
        for reg in self.odmr_regions:
            if np.any(reg.mask & mask):
                raise ValueError("ODMR regions must not overlap")
        self.odmr_regions.append(OdmrRegion(mask, list(dips)))


def excitation_weight(psf: PSFConfig, offset) -> float:
    """Gaussian two-photon excitation weight, 1 at the focus."""
    dx, dy, dz = offset
    return math.exp(-FOUR_LN2 * (dx * dx + dy * dy) / psf.fwhm_lateral ** 2
                    - FOUR_LN2 * dz * dz / psf.fwhm_axial ** 2)


def _weights_1d(centers: np.ndarray, targets: np.ndarray, fwhm: float):
    cut = TRUNCATE_SIGMA * fwhm / FWHM_PER_SIGMA
    d = centers[None, :] - targets[:, None]
    w = np.exp(-FOUR_LN2 * d * d / fwhm ** 2)
    w[np.abs(d) > cut] = 0.0
    lo = np.searchsorted(centers, targets - cut, side="left")
    hi = np.searchsorted(centers, targets + cut, side="right")
    return w, lo.astype(np.int64), hi.astype(np.int64)


def render(phantom: Phantom, density: np.ndarray, psf: PSFConfig,
           xs: np.ndarray, ys: np.ndarray, z: float) -> np.ndarray:
    """PSF-weighted voxel sums at foci ``(xs[j], ys[i], z)``; shape (len(ys), len(xs))."""
    wx, xlo, xhi = _weights_1d(phantom.centers(0), np.asarray(xs, float), psf.fwhm_lateral)
    wy, ylo, yhi = _weights_1d(phantom.centers(1), np.asarray(ys, float), psf.fwhm_lateral)
    wz, zlo, zhi = _weights_1d(phantom.centers(2), np.array([float(z)]), psf.fwhm_axial)
    return _core.render_separable(density, wx, wy, wz[0], xlo, xhi, ylo, yhi,
                                  int(zlo[0]), int(zhi[0]))


def scan_tile(phantom: Phantom, channel_cfg, psf: PSFConfig, tile: TileConfig,
              power: float, noise_sigma: float = 0.0, seed: int | None = None) -> TileImage:
    """Raster-scan one tile: ``power**n`` times the PSF-weighted density sum."""
    ch = channel(channel_cfg)
    if power < 0:
        raise ValueError("power must be non-negative")
    xs, ys = tile.pixel_centers()
    img = power ** ch.power_exponent * render(phantom, phantom.density(ch.name), psf,
                                              xs, ys, tile.focus_z)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img = np.clip(img * (1.0 + rng.normal(0.0, noise_sigma, img.shape)), 0.0, None)
    return TileImage(img, ch.name, tile)


def tile_grid(nx: int, ny: int, fov: float = 317.0, pixels: int = 512,
              overlap: float = 0.1, focus_z: float = 0.0, origin=(0.0, 0.0)) -> list[TileConfig]:
    """Row-major tile layout; steps are whole pixels so tiles share one grid."""
    probe = TileConfig(fov, pixels, focus_z, tuple(origin), overlap)
    step = round(pixels * (1.0 - overlap)) * probe.pitch
    return [TileConfig(fov, pixels, focus_z,
                       (origin[0] + i * step, origin[1] + j * step), overlap)
            for j in range(ny) for i in range(nx)]


def scan_mosaic(phantom: Phantom, channel_cfg, psf: PSFConfig, tiles: Sequence[TileConfig],
                power: float) -> list[TileImage]:
    return map_ordered(lambda t: scan_tile(phantom, channel_cfg, psf, t, power), tiles)


@dataclass
class Mosaic:
    image: np.ndarray
    origin: tuple
    pitch: float


def stitch(tiles: Sequence[TileImage]) -> Mosaic:
    """Place tiles by stage position and average overlapping pixels."""
    if not tiles:
        raise ValueError("no tiles to stitch")
    pitch = tiles[0].tile.pitch
    for t in tiles[1:]:
        if not math.isclose(t.tile.pitch, pitch, rel_tol=1e-9):
            raise ValueError(f"inconsistent pixel pitch: {t.tile.pitch} vs {pitch}")
    ox = min(t.tile.stage_position[0] for t in tiles)
    oy = min(t.tile.stage_position[1] for t in tiles)
    placed = []
    for t in tiles:
        cx = (t.tile.stage_position[0] - ox) / pitch
        cy = (t.tile.stage_position[1] - oy) / pitch
        ix, iy = round(cx), round(cy)
        if abs(cx - ix) > 1e-6 or abs(cy - iy) > 1e-6:
            raise ValueError("stage offsets are not whole multiples of the pixel pitch")
        placed.append((iy, ix, t.pixels))
    h = max(iy + p.shape[0] for iy, _, p in placed)
    w = max(ix + p.shape[1] for _, ix, p in placed)
    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    for iy, ix, p in placed:
        acc[iy:iy + p.shape[0], ix:ix + p.shape[1]] += p
        cnt[iy:iy + p.shape[0], ix:ix + p.shape[1]] += 1.0
    img = np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)
    return Mosaic(img, (ox, oy), pitch)


def composite(images: Mapping[str, np.ndarray], configs: Mapping[str, ChannelConfig] | None = None):
    """Additive false-colour blend of min-max normalized channels, clamped to [0, 1]."""
    if not images:
        raise ValueError("no channel images given")
    shapes = {np.shape(im) for im in images.values()}
    if len(shapes) != 1:
        raise ValueError(f"channel images differ in shape: {sorted(shapes)}")
    shape = shapes.pop()
    rgb = np.zeros(shape + (3,))
    for name, im in images.items():
        cfg = (configs or {}).get(name) or channel(name)
        im = np.asarray(im, dtype=float)
        lo, hi = float(im.min()), float(im.max())
        norm = (im - lo) / (hi - lo) if hi > lo else np.zeros_like(im)
        rgb += norm[..., None] * np.asarray(cfg.color, dtype=float)
    return np.clip(rgb, 0.0, 1.0)


def point_signal(phantom: Phantom, point, channel_cfg, psf: PSFConfig, power: float,
                 density: np.ndarray | None = None) -> float:
    ch = channel(channel_cfg)
    grid = phantom.density(ch.name) if density is None else density
    val = render(phantom, grid, psf, np.array([point[0]]), np.array([point[1]]), point[2])
    return float(power ** ch.power_exponent * val[0, 0])


def power_series(phantom: Phantom, point, channel_cfg, powers: Sequence[float],
                 psf: PSFConfig = PSFConfig(), noise_sigma: float = 0.0,
                 seed: int | None = None) -> np.ndarray:
    """Parked-focus signal at each excitation power (mW)."""
    powers = np.asarray(powers, dtype=float)
    if powers.size < 3 or np.any(powers <= 0):
        raise ValueError("need at least 3 positive powers")
    base = point_signal(phantom, point, channel_cfg, psf, 1.0)
    out = base * powers ** channel(channel_cfg).power_exponent
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out * (1.0 + rng.normal(0.0, noise_sigma, out.shape))
    return out


def loglog_slope(powers, signals) -> float:
    slope, _ = np.polyfit(np.log(powers), np.log(signals), 1)
    return float(slope)


def odmr_at_point(phantom: Phantom, point, sweep: SweepConfig, lockin: LockinConfig,
                  power: float = 1.0, psf: PSFConfig = PSFConfig(), mode: str = "baseband",
                  noise_sigma: float = 0.0, seed: int | None = None) -> SpectrumTrace:
    """Lock-in ODMR trace with the focus parked at ``point``.

    Each ODMR region contributes its dips weighted by its share of the 2PEF
    signal at the focus; everything else is unmodulated background.
    """
    total = point_signal(phantom, point, "2PEF", psf, power)
    if total <= 0:
        raise ValueError(f"no 2PEF signal at {tuple(point)}")
    grid = phantom.density("2PEF")
    dips = []
    for reg in phantom.odmr_regions:
        share = point_signal(phantom, point, "2PEF", psf, power, grid * reg.mask) / total
        if share > 0:
            dips += [DipSpec(d.f0, d.fwhm, d.contrast * share) for d in reg.dips]
    trace = simulate_sweep(sweep, dips, lockin, mode, seed, 1.0, noise_sigma)
    trace.meta.update({"point_um": [float(p) for p in point], "signal": total,
                       "effective_dips": [(d.f0, d.fwhm, d.contrast) for d in dips]})
    return trace
