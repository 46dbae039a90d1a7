"""Ideal confocal transient simulation.

A confocal scanner illuminates one relay-wall point at a time and histograms
the returning photons at picosecond resolution.  A hidden point with albedo
``a`` at distance ``r`` from the illuminated wall point contributes
``a / r**4`` counts in the time bin holding the round trip ``t = 2 r / c``.
Converting an ideal histogram into what the detector actually records adds
the wall-to-detector propagation: a ``1 / d**2`` attenuation and a ``2 d / c``
delay, where ``d`` is the distance from the scan point to the co-located
laser/detector head.

All geometry is double precision and the speed of light is exact.
Rendering is pure per scan point; cubes are immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.ndimage import convolve1d

from .errors import DegenerateGeometryError

C_LIGHT = 299_792_458.0  # m/s, exact by definition

_R_MIN = 1e-12  # below this a scene/wall point pair counts as coincident


@dataclass(frozen=True)
class TimeAxis:
    """Uniform time binning of a transient histogram.

    ``origin`` is the left edge of bin 0; a time ``t`` lands in bin
    ``floor((t - origin) / bin_width)`` and values outside the covered
    window are dropped.
    """

    num_bins: int
    bin_width: float = 20e-12
    origin: float = 0.0

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError(f"num_bins must be >= 1, got {self.num_bins}")
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be > 0, got {self.bin_width}")

    @property
    def duration(self) -> float:
        return self.num_bins * self.bin_width

    def bin_index(self, t):
        """Bin index for time(s) ``t``; may fall outside [0, num_bins)."""
        t = np.asarray(t, dtype=np.float64)
        return np.floor((t - self.origin) / self.bin_width).astype(np.int64)


@dataclass(frozen=True)
class WallGeometry:
    """Scan grid on the z = 0 relay wall plus the detector position.

    Grid points are cell centers of a ``resolution`` grid spanning
    ``extent`` meters, centered on the wall.  ``grid_offset`` shifts the
    whole grid laterally; it is nonzero only for grids obtained by
    subsampling a finer grid, whose points do not sit at the coarse cell
    centers.
    """

    extent: tuple[float, float] = (2.0, 2.0)
    resolution: tuple[int, int] = (64, 64)
    detector_origin: tuple[float, float, float] = (0.0, 0.0, -2.0)
    grid_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError(f"wall extent must be positive, got {self.extent}")
        if self.resolution[0] < 1 or self.resolution[1] < 1:
            raise ValueError(f"wall resolution must be >= 1x1, got {self.resolution}")
        if not self.detector_origin[2] < 0:
            raise ValueError(
                "detector_origin must have negative z (observer side of the wall), "
                f"got {self.detector_origin}"
            )

    @property
    def pitch(self) -> tuple[float, float]:
        return (self.extent[0] / self.resolution[0], self.extent[1] / self.resolution[1])

    def axis_coords(self, axis: int) -> np.ndarray:
        """Cell-center coordinates along wall axis 0 (x) or 1 (y)."""
        n = self.resolution[axis]
        p = self.extent[axis] / n
        return (np.arange(n) + 0.5) * p - self.extent[axis] / 2.0 + self.grid_offset[axis]

    def grid_points(self) -> np.ndarray:
        """All scan points as an (n_x, n_y, 3) array on the z = 0 plane."""
        xs = self.axis_coords(0)
        ys = self.axis_coords(1)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy, np.zeros_like(gx)], axis=-1)

    def point_at(self, i: int, j: int) -> np.ndarray:
        return np.array([self.axis_coords(0)[i], self.axis_coords(1)[j], 0.0])

    def detector_distances(self) -> np.ndarray:
        """(n_x, n_y) distances from every scan point to the detector."""
        o = np.asarray(self.detector_origin, dtype=np.float64)
        return np.linalg.norm(self.grid_points() - o, axis=-1)


@dataclass(frozen=True)
class HiddenScene:
    """Albedo-weighted point cloud on the hidden side of the wall (z > 0)."""

    positions: np.ndarray  # (N, 3) float64
    albedos: np.ndarray  # (N,) float64, all >= 0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        alb = np.atleast_1d(np.asarray(self.albedos, dtype=np.float64))
        if pos.size == 0:
            pos = pos.reshape(0, 3)
            alb = alb.reshape(0)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if alb.shape != (pos.shape[0],):
            raise ValueError("albedos must be one value per point")
        if pos.shape[0] and not np.all(pos[:, 2] > 0):
            raise ValueError("all scene points must lie at z > 0 (hidden side)")
        if alb.shape[0] and not np.all(alb >= 0):
            raise ValueError("albedos must be non-negative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "albedos", alb)

    @classmethod
    def empty(cls) -> "HiddenScene":
        return cls(np.zeros((0, 3)), np.zeros(0))

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    def merge(self, other: "HiddenScene") -> "HiddenScene":
        return HiddenScene(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.albedos, other.albedos]),
        )


class CubeKind(IntEnum):
    """What stage of the measurement chain a transient cube represents."""

    IDEAL = 0
    IDEAL_DISTORTED = 1
    MEASURED = 2
    MEASURED_DISTORTED = 3


@dataclass(frozen=True)
class TransientCube:
    """Photon-count histograms over a scan grid: (n_x, n_y, num_bins)."""

    data: np.ndarray
    time_axis: TimeAxis
    wall: WallGeometry
    kind: CubeKind = CubeKind.IDEAL

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        expected = (*self.wall.resolution, self.time_axis.num_bins)
        if data.shape != expected:
            raise ValueError(f"cube shape {data.shape} != wall/time shape {expected}")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube entries must be finite")
        if data.size and data.min() < 0:
            raise ValueError("cube entries must be non-negative")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def histogram(self, i: int, j: int) -> np.ndarray:
        return self.data[i, j]


def _accumulate_histogram(out, scene, wall_point, axis):
    """Add every scene point's a/r^4 contribution into ``out`` in place."""
    if scene.num_points == 0:
        return
    diff = scene.positions - np.asarray(wall_point, dtype=np.float64)
    r = np.linalg.norm(diff, axis=1)
    if np.any(r < _R_MIN):
        k = int(np.argmin(r))
        raise DegenerateGeometryError(
            f"scene point {scene.positions[k]} coincides with scan point {wall_point}"
        )
    idx = axis.bin_index(2.0 * r / C_LIGHT)
    keep = (idx >= 0) & (idx < axis.num_bins)
    np.add.at(out, idx[keep], scene.albedos[keep] / r[keep] ** 4)


def render_histogram(scene: HiddenScene, wall_point, axis: TimeAxis) -> np.ndarray:
    """Ideal transient at one wall point.

    Each scene point deposits ``albedo / r**4`` into the bin containing its
    round-trip time ``2 r / c``; an empty scene yields all zeros.
    """
    out = np.zeros(axis.num_bins, dtype=np.float64)
    _accumulate_histogram(out, scene, wall_point, axis)
    return out


def render_cube(scene: HiddenScene, wall: WallGeometry, axis: TimeAxis) -> TransientCube:
    """Ideal transient cube: one rendered histogram per scan-grid point."""
    nx, ny = wall.resolution
    data = np.zeros((nx, ny, axis.num_bins), dtype=np.float64)
    pts = wall.grid_points()
    for i in range(nx):
        for j in range(ny):
            try:
                _accumulate_histogram(data[i, j], scene, pts[i, j], axis)
            except DegenerateGeometryError as exc:
                raise DegenerateGeometryError(f"at grid point ({i}, {j}): {exc}") from exc
    return TransientCube(data, axis, wall, CubeKind.IDEAL)


def to_measured(cube: TransientCube) -> TransientCube:
    """Fold in the wall-to-detector path: 1/d^2 attenuation, 2d/c delay.

    The delay is rounded to whole bins; counts shifted past the last bin
    are dropped.
    """
    if cube.kind != CubeKind.IDEAL:
        raise ValueError(f"to_measured expects an ideal cube, got {cube.kind.name}")
    d = cube.wall.detector_distances()
    shifts = np.rint(2.0 * d / C_LIGHT / cube.time_axis.bin_width).astype(int)
    nt = cube.time_axis.num_bins
    out = np.zeros_like(cube.data)
    for i in range(cube.data.shape[0]):
        for j in range(cube.data.shape[1]):
            k = shifts[i, j]
            if k < nt:
                out[i, j, k:] = cube.data[i, j, : nt - k] / d[i, j] ** 2
    return TransientCube(out, cube.time_axis, cube.wall, CubeKind.MEASURED)


def jitter_kernel(jitter_sigma: float, bin_width: float) -> np.ndarray:
    """Discrete Gaussian timing-jitter kernel, unit sum; [1] when sigma = 0."""
    if jitter_sigma == 0:
        return np.ones(1)
    sigma_bins = jitter_sigma / bin_width
    radius = max(1, int(math.ceil(4.0 * sigma_bins)))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (k / sigma_bins) ** 2)
    return kernel / kernel.sum()


def apply_noise(
    cube: TransientCube,
    background_rate: float = 0.0,
    jitter_sigma: float = 0.0,
    seed: int = 0,
) -> TransientCube:
    """Detector noise model: timing jitter, flat background, Poisson counts.

    Each histogram is blurred along time by a Gaussian of ``jitter_sigma``
    seconds, offset by ``background_rate`` counts per bin, and then every
    bin is drawn from a Poisson distribution with that mean.  The draw for
    scan point (i, j) comes from its own stream keyed by (seed, i, j), so
    results are bit-identical across runs and independent of evaluation
    order.
    """
    if background_rate < 0:
        raise ValueError("background_rate must be >= 0")
    if jitter_sigma < 0:
        raise ValueError("jitter_sigma must be >= 0")
    key = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    kernel = jitter_kernel(jitter_sigma, cube.time_axis.bin_width)
    mean = convolve1d(cube.data, kernel, axis=2, mode="constant", cval=0.0)
    mean = np.clip(mean, 0.0, None) + background_rate
    out = np.empty_like(mean)
    for i in range(mean.shape[0]):
        for j in range(mean.shape[1]):
            rng = np.random.default_rng([*key, i, j])
            out[i, j] = rng.poisson(mean[i, j]).astype(np.float64)
    return TransientCube(out, cube.time_axis, cube.wall, cube.kind)
