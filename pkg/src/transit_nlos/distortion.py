"""Fast-scan distortion of confocal transients.

A galvanometer cannot jump between scan points instantaneously: during each
exposure the beam sweeps the straight wall segment from the previous scan
point to the current one, so the recorded histogram is an average of the
transients along that segment.  Re-expressing a swept measurement on the
nominal grid leaves a residual per-sample correction: a ``(d_n / d_s)**2``
intensity weight and a ``2 (d_n - d_s) / c`` time shift, where ``d_n`` and
``d_s`` are detector distances of the nominal point and of the sample.

The discretization averages M samples placed at distances ``i * ds``
(i = 1..M, ``ds = |segment| / M``) from the current point toward the
previous one.  The first point of a scan pattern has no predecessor and is
returned unchanged.  Only the forward model is provided; the continuous
sweep cannot be inverted bin-for-bin.

Everything here is pure over immutable cubes and may be parallelized over
scan points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, OutOfExtentError
from .transients import C_LIGHT, CubeKind, TransientCube, WallGeometry


@dataclass(frozen=True)
class ScanPattern:
    """Ordered scan positions (grid coordinates) with per-point exposure.

    The order must be a unit-step, axis-aligned walk visiting every grid
    cell exactly once (a serpentine raster qualifies).
    """

    points: tuple
    geometry: WallGeometry
    exposure_per_point: float = 0.4e-3

    def __post_init__(self):
        pts = tuple((int(i), int(j)) for i, j in self.points)
        object.__setattr__(self, "points", pts)
        nx, ny = self.geometry.resolution
        if len(pts) != nx * ny or len(set(pts)) != nx * ny:
            raise ValueError("pattern must visit every grid cell exactly once")
        for (i0, j0), (i1, j1) in zip(pts, pts[1:]):
            if abs(i1 - i0) + abs(j1 - j0) != 1:
                raise ValueError(
                    f"consecutive points {(i0, j0)} -> {(i1, j1)} must differ by "
                    "one grid step along one axis"
                )
        if not self.exposure_per_point > 0:
            raise ValueError("exposure_per_point must be > 0")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PathSampling:
    """Discretization of one scan segment: M samples, ds = |segment| / M.

    ``interpolate`` switches the dense-cube lookup at each path sample from
    nearest grid point to bilinear across the four neighbors.
    """

    samples_per_segment: int = 16
    interpolate: bool = False

    def __post_init__(self):
        if self.samples_per_segment < 1:
            raise ValueError("samples_per_segment must be >= 1")

    def sample_offsets(self, segment_length: float) -> np.ndarray:
        """Distances i * ds from the current point, i = 1..M."""
        ds = segment_length / self.samples_per_segment
        return ds * np.arange(1, self.samples_per_segment + 1, dtype=np.float64)


def shifted_point(current, previous, s: float) -> np.ndarray:
    """Point at distance ``s`` from ``current`` toward ``previous``."""
    current = np.asarray(current, dtype=np.float64)
    previous = np.asarray(previous, dtype=np.float64)
    length = float(np.linalg.norm(previous - current))
    if length == 0.0:
        raise ValueError("segment endpoints coincide")
    if not 0.0 <= s <= length * (1 + 1e-12):
        raise ValueError(f"shift {s} outside segment of length {length}")
    return current + s * (previous - current) / length


def distortion_terms(d_n, d_s):
    """Weight and time shift for one path sample.

    Returns ``((d_n / d_s)**2, 2 (d_n - d_s) / c)``; both arguments must be
    positive (they are detector distances).
    """
    d_n = np.asarray(d_n, dtype=np.float64)
    d_s = np.asarray(d_s, dtype=np.float64)
    if np.any(d_n <= 0) or np.any(d_s <= 0):
        raise ValueError("distances must be positive")
    return (d_n / d_s) ** 2, 2.0 * (d_n - d_s) / C_LIGHT


def _nearest_dense_index(wall: WallGeometry, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map lateral positions (N, 2) to nearest grid indices, checking extent."""
    idx = []
    for axis in range(2):
        n = wall.resolution[axis]
        p = wall.extent[axis] / n
        first = wall.axis_coords(axis)[0]
        frac = (xy[:, axis] - first) / p
        k = np.rint(frac).astype(int)
        if np.any(frac < -0.5 - 1e-9) or np.any(frac > n - 0.5 + 1e-9):
            raise OutOfExtentError(
                f"path sample at {xy[np.argmax(np.abs(frac - (n - 1) / 2))]} "
                "falls outside the dense cube's wall extent"
            )
        idx.append(np.clip(k, 0, n - 1))
    return idx[0], idx[1]


def _bilinear_weights(wall: WallGeometry, xy: np.ndarray):
    """Four (index, weight) neighbor pairs per sample for bilinear lookup."""
    corners = []
    axes = []
    for axis in range(2):
        n = wall.resolution[axis]
        p = wall.extent[axis] / n
        first = wall.axis_coords(axis)[0]
        frac = np.clip((xy[:, axis] - first) / p, 0.0, n - 1.0)
        lo = np.clip(np.floor(frac).astype(int), 0, max(n - 2, 0))
        w = frac - lo
        axes.append((lo, w))
    (ilo, wi), (jlo, wj) = axes
    for di in (0, 1):
        for dj in (0, 1):
            wf = (wi if di else 1 - wi) * (wj if dj else 1 - wj)
            corners.append((np.minimum(ilo + di, wall.resolution[0] - 1),
                            np.minimum(jlo + dj, wall.resolution[1] - 1), wf))
    return corners


def _gather_sample_histograms(dense: TransientCube, xy: np.ndarray, interpolate: bool):
    """(M, T) histograms of the dense cube at lateral positions xy."""
    if not interpolate:
        gi, gj = _nearest_dense_index(dense.wall, xy)
        return dense.data[gi, gj]
    # extent check matches the nearest-neighbor path before interpolating
    _nearest_dense_index(dense.wall, xy)
    out = np.zeros((xy.shape[0], dense.time_axis.num_bins))
    for gi, gj, w in _bilinear_weights(dense.wall, xy):
        out += w[:, None] * dense.data[gi, gj]
    return out


def _shift_bins(hists: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Row r of the result reads hists[r, t + shifts[r]], zero past the edges."""
    m, nt = hists.shape
    cols = np.arange(nt)[None, :] + shifts[:, None]
    valid = (cols >= 0) & (cols < nt)
    return np.take_along_axis(hists, np.clip(cols, 0, nt - 1), axis=1) * valid


def distort_histogram(
    dense: TransientCube,
    n: int,
    pattern: ScanPattern,
    sampling: PathSampling,
) -> np.ndarray:
    """Fast-scan histogram of pattern point ``n``, sampled from a dense cube.

    Point 0 has no sweep segment and returns its dense histogram unchanged.
    Path samples are read from the dense cube (nearest grid point, or
    bilinear when the sampling requests it).
    """
    if n < 0 or n >= len(pattern):
        raise IndexError(f"pattern index {n} out of range")
    geom = pattern.geometry
    cur = geom.point_at(*pattern.points[n])
    if n == 0:
        gi, gj = _nearest_dense_index(dense.wall, cur[None, :2])
        return dense.data[gi[0], gj[0]].copy()
    prev = geom.point_at(*pattern.points[n - 1])
    length = float(np.linalg.norm(prev - cur))
    offsets = sampling.sample_offsets(length)
    samples = cur[None, :] + offsets[:, None] * (prev - cur)[None, :] / length
    o = np.asarray(geom.detector_origin, dtype=np.float64)
    d_n = float(np.linalg.norm(cur - o))
    d_s = np.linalg.norm(samples - o, axis=1)
    weights, tshift = distortion_terms(d_n, d_s)
    shifts = np.rint(tshift / dense.time_axis.bin_width).astype(int)
    hists = _gather_sample_histograms(dense, samples[:, :2], sampling.interpolate)
    shifted = _shift_bins(hists, shifts)
    return (weights[:, None] * shifted).mean(axis=0)


def subsample_geometry(dense_wall: WallGeometry, target_resolution) -> WallGeometry:
    """Wall geometry of a corner-aligned stride subsample of a dense grid.

    The subsample keeps dense indices 0, s, 2s, ...; those points sit
    (s - 1) / 2 dense pitches before the coarse cell centers, captured here
    in ``grid_offset`` so detector distances stay exact.
    """
    mx, my = target_resolution
    nx, ny = dense_wall.resolution
    if nx % mx or ny % my:
        raise ConfigurationError(
            f"dense resolution {dense_wall.resolution} not divisible by target {target_resolution}"
        )
    sx, sy = nx // mx, ny // my
    px, py = dense_wall.pitch
    return WallGeometry(
        extent=dense_wall.extent,
        resolution=(mx, my),
        detector_origin=dense_wall.detector_origin,
        grid_offset=(
            dense_wall.grid_offset[0] - (sx - 1) * px / 2.0,
            dense_wall.grid_offset[1] - (sy - 1) * py / 2.0,
        ),
    )


def subsample_cube(dense: TransientCube, target_resolution) -> TransientCube:
    """Ideal cube at the subsampled scan points (no sweep distortion)."""
    geom = subsample_geometry(dense.wall, target_resolution)
    sx = dense.wall.resolution[0] // target_resolution[0]
    sy = dense.wall.resolution[1] // target_resolution[1]
    data = dense.data[::sx, ::sy].copy()
    return TransientCube(data, dense.time_axis, geom, dense.kind)


def distort_cube(
    dense: TransientCube,
    target_resolution,
    pattern: ScanPattern | None = None,
    sampling: PathSampling = PathSampling(),
) -> TransientCube:
    """Fast-scan cube on a subsampled grid, swept along a scan pattern.

    The target grid must be a regular subsample of the dense grid.  When no
    pattern is given a serpentine raster over the target grid is used.
    """
    geom = subsample_geometry(dense.wall, target_resolution)
    if pattern is None:
        from .dataset import serpentine_pattern

        pattern = serpentine_pattern(*target_resolution, geometry=geom)
    if pattern.geometry.resolution != tuple(target_resolution):
        raise ConfigurationError(
            f"pattern resolution {pattern.geometry.resolution} != target {tuple(target_resolution)}"
        )
    data = np.zeros((*geom.resolution, dense.time_axis.num_bins))
    for n in range(len(pattern)):
        i, j = pattern.points[n]
        data[i, j] = distort_histogram(dense, n, pattern, sampling)
    return TransientCube(
        np.clip(data, 0.0, None), dense.time_axis, pattern.geometry, CubeKind.IDEAL_DISTORTED
    )
