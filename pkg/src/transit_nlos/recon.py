"""Classical confocal reconstruction: backprojection and LCT deconvolution.

Backprojection is the brute-force oracle: every histogram count is smeared
back over the sphere of consistent round-trip range around its scan point,
with the ``r**4`` radiometric falloff compensated.  It is O(scan points x
voxels) and linear in the input.

The light-cone transform (LCT) route exploits that, after substituting
squared range for time and squared depth for depth, the confocal imaging
equation becomes a 3D convolution against a fixed cone-shaped kernel; a
Wiener filter in the frequency domain then inverts it in O(N^3 log N).

Both produce a volume over a caller-chosen voxel grid; ``max_project``
collapses a volume to the usual 2D frontal view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.fft import fftn, ifftn
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigurationError
from .transients import C_LIGHT, CubeKind, TransientCube


@dataclass(frozen=True)
class VolumeGrid:
    """Voxel grid over the hidden space, laterally centered on the wall.

    ``extent`` is the physical size (x, y, z) in meters and ``z_start``
    the depth of the near face; voxel values live in ``values`` once a
    reconstruction has filled them.
    """

    extent: tuple[float, float, float] = (2.0, 2.0, 2.0)
    z_start: float = 0.5
    resolution: tuple[int, int, int] = (64, 64, 64)
    values: np.ndarray | None = None

    def __post_init__(self):
        if any(e <= 0 for e in self.extent):
            raise ValueError(f"volume extent must be positive, got {self.extent}")
        if any(r < 1 for r in self.resolution):
            raise ValueError(f"volume resolution must be >= 1, got {self.resolution}")
        if self.values is not None:
            v = np.asarray(self.values, dtype=np.float64)
            if v.shape != tuple(self.resolution):
                raise ValueError(f"values shape {v.shape} != resolution {self.resolution}")
            if not np.all(np.isfinite(v)):
                raise ValueError("volume values must be finite")
            object.__setattr__(self, "values", v)

    def axis_coords(self, axis: int) -> np.ndarray:
        n = self.resolution[axis]
        p = self.extent[axis] / n
        centers = (np.arange(n) + 0.5) * p
        if axis < 2:
            return centers - self.extent[axis] / 2.0
        return centers + self.z_start

    def voxel_centers(self) -> np.ndarray:
        gx, gy, gz = np.meshgrid(
            self.axis_coords(0), self.axis_coords(1), self.axis_coords(2), indexing="ij"
        )
        return np.stack([gx, gy, gz], axis=-1)

    def voxel_index(self, point) -> tuple[int, int, int]:
        """Index of the voxel containing a physical point (clipped to grid)."""
        point = np.asarray(point, dtype=np.float64)
        idx = []
        for axis in range(3):
            lo = -self.extent[axis] / 2.0 if axis < 2 else self.z_start
            p = self.extent[axis] / self.resolution[axis]
            k = int(np.floor((point[axis] - lo) / p))
            idx.append(min(max(k, 0), self.resolution[axis] - 1))
        return tuple(idx)

    def with_values(self, values: np.ndarray) -> "VolumeGrid":
        return VolumeGrid(self.extent, self.z_start, self.resolution, values)


def backproject(cube: TransientCube, grid: VolumeGrid) -> VolumeGrid:
    """Spherical backprojection with r^4 falloff compensation.

    Voxel v accumulates sum_n cube[n, bin(2 |x_n - v| / c)] * |x_n - v|^4;
    voxels coincident with a scan point skip that term.
    """
    if cube.kind not in (CubeKind.IDEAL, CubeKind.IDEAL_DISTORTED):
        raise ValueError(f"backproject expects ideal transients, got {cube.kind.name}")
    axis = cube.time_axis
    pts = cube.wall.grid_points().reshape(-1, 3)
    hists = cube.data.reshape(pts.shape[0], axis.num_bins)
    vox = grid.voxel_centers()
    acc = np.zeros(grid.resolution, dtype=np.float64)
    for n in range(pts.shape[0]):
        if not np.any(hists[n]):
            continue
        r = np.linalg.norm(vox - pts[n], axis=-1)
        idx = axis.bin_index(2.0 * r / C_LIGHT)
        ok = (idx >= 0) & (idx < axis.num_bins) & (r > 1e-12)
        vals = hists[n][np.clip(idx, 0, axis.num_bins - 1)] * r**4
        acc += np.where(ok, vals, 0.0)
    return grid.with_values(acc)


def _next_pow2(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


def _range_resample_matrix(num_bins: int) -> np.ndarray:
    """Mass-preserving rebinning from uniform range to uniform squared range.

    Range bin j covers [j, j+1) * dr, i.e. [j^2, (j+1)^2) / T in squared
    units; its mass is spread over the overlapped squared-range bins
    proportionally to overlap length, so column sums are 1.
    """
    t = num_bins
    mat = np.zeros((t, t))
    for j in range(t):
        lo = j * j / t
        hi = (j + 1) * (j + 1) / t
        k0, k1 = int(np.floor(lo)), min(int(np.ceil(hi)), t)
        for k in range(k0, k1):
            overlap = min(hi, k + 1) - max(lo, k)
            if overlap > 0:
                mat[k, j] = overlap / (hi - lo)
    return mat


def _depth_resample_matrix(num_bins: int) -> np.ndarray:
    """Value-averaging rebinning from uniform squared depth to uniform depth.

    Depth bin k covers [k^2, (k+1)^2) / T in squared units and averages the
    squared-depth bins it overlaps, so row sums are 1.
    """
    t = num_bins
    mat = np.zeros((t, t))
    for k in range(t):
        lo = k * k / t
        hi = (k + 1) * (k + 1) / t
        u0, u1 = int(np.floor(lo)), min(int(np.ceil(hi)), t)
        total = hi - lo
        for u in range(u0, u1):
            overlap = min(hi, u + 1) - max(lo, u)
            if overlap > 0:
                mat[k, u] = overlap / total
    return mat


def _light_cone_kernel(n_pad: int, t_pad: int, pitch: float, dv: float) -> np.ndarray:
    """Cone kernel on the padded (x, y, squared-range) grid.

    A point at squared depth u responds on the paraboloid
    v = u + dx^2 + dy^2, so the kernel marks, for every lateral offset,
    the squared-range bin of that offset.  Lateral offsets are stored
    FFT-style (offset 0 at index 0).
    """
    offs = np.fft.fftfreq(n_pad, d=1.0 / n_pad) * pitch
    lat2 = offs[:, None] ** 2 + offs[None, :] ** 2
    kbin = np.floor(lat2 / dv).astype(int)
    kern = np.zeros((n_pad, n_pad, t_pad))
    ok = kbin < t_pad
    ii, jj = np.nonzero(ok)
    kern[ii, jj, kbin[ii, jj]] = 1.0
    return kern / np.linalg.norm(kern.ravel())


def lct_reconstruct(cube: TransientCube, grid: VolumeGrid, snr: float = 1e2) -> VolumeGrid:
    """Confocal deconvolution via the light-cone change of variables.

    Pipeline: r^4 attenuation compensation, rebinning of the time axis to
    squared range, Wiener deconvolution against the cone kernel on the
    zero-padded domain, rebinning of squared depth back to depth, trilinear
    resampling onto ``grid``, and a final clamp at zero.
    """
    if snr <= 0:
        raise ConfigurationError(f"snr must be positive, got {snr}")
    nx, ny = cube.wall.resolution
    if nx != ny:
        raise ConfigurationError(f"LCT needs a square scan grid, got {nx}x{ny}")
    if cube.time_axis.origin != 0.0:
        raise ConfigurationError("LCT expects a time axis starting at 0")
    t = _next_pow2(cube.time_axis.num_bins)
    data = np.zeros((nx, ny, t))
    data[:, :, : cube.time_axis.num_bins] = cube.data

    dr = C_LIGHT * cube.time_axis.bin_width / 2.0  # one-way range per bin
    r = (np.arange(t) + 0.5) * dr
    data = data * r**4  # undo radiometric falloff before deconvolution

    data = data @ _range_resample_matrix(t).T

    n_pad, t_pad = 2 * nx, 2 * t
    r_max = t * dr
    dv = r_max**2 / t
    padded = np.zeros((n_pad, n_pad, t_pad))
    padded[:nx, :ny, :t] = data
    kern = _light_cone_kernel(n_pad, t_pad, cube.wall.pitch[0], dv)
    fk = fftn(kern)
    wiener = np.conj(fk) / (np.abs(fk) ** 2 + 1.0 / snr)
    vol_sq = np.real(ifftn(fftn(padded) * wiener))[:nx, :ny, :t]

    vol = vol_sq @ _depth_resample_matrix(t).T
    vol = np.clip(vol, 0.0, None)

    # natural grid: scan-point lateral coords, depth slices of thickness dr
    interp = RegularGridInterpolator(
        (cube.wall.axis_coords(0), cube.wall.axis_coords(1), (np.arange(t) + 0.5) * dr),
        vol,
        bounds_error=False,
        fill_value=0.0,
    )
    out = interp(grid.voxel_centers().reshape(-1, 3)).reshape(grid.resolution)
    return grid.with_values(np.clip(out, 0.0, None))


def max_project(volume: VolumeGrid) -> np.ndarray:
    """Frontal view: per-(x, y) maximum over depth, normalized to [0, 1]."""
    if volume.values is None:
        raise ValueError("volume has no values")
    img = volume.values.max(axis=2)
    peak = img.max()
    return img / peak if peak > 0 else img


def upsample_cube(cube: TransientCube, target_resolution) -> TransientCube:
    """Bilinear scan-grid upsampling by an integer factor per axis.

    Output index o samples source coordinate o / factor, so source values
    reappear exactly at aligned positions and the top edges continue the
    boundary gradient (linear fields upsample to linear fields).
    """
    nx, ny = cube.wall.resolution
    mx, my = target_resolution
    if mx % nx or my % ny:
        raise ConfigurationError(
            f"target resolution {target_resolution} must be an integer multiple of {cube.wall.resolution}"
        )

    def weight_matrix(n_src: int, n_dst: int) -> np.ndarray:
        w = np.zeros((n_dst, n_src))
        if n_src == 1:
            w[:, 0] = 1.0
            return w
        coords = np.arange(n_dst) * (n_src / n_dst)
        lo = np.clip(np.floor(coords).astype(int), 0, n_src - 2)
        frac = coords - lo
        w[np.arange(n_dst), lo] = 1.0 - frac
        w[np.arange(n_dst), lo + 1] = frac
        return w

    wx = weight_matrix(nx, mx)
    wy = weight_matrix(ny, my)
    data = np.einsum("ai,bj,ijt->abt", wx, wy, cube.data)
    # output index o sits at source coordinate o/factor, so the fine grid
    # starts at the first source point and keeps pitch extent/target
    src = cube.wall
    px, py = src.pitch
    wall = type(src)(
        extent=src.extent,
        resolution=(mx, my),
        detector_origin=src.detector_origin,
        grid_offset=(
            src.grid_offset[0] + (px - px * nx / mx) / 2.0,
            src.grid_offset[1] + (py - py * ny / my) / 2.0,
        ),
    )
    return TransientCube(np.clip(data, 0.0, None), cube.time_axis, wall, cube.kind)
