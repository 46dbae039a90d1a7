import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transit_nlos.dataset import serpentine_pattern
from transit_nlos.distortion import (
    PathSampling,
    ScanPattern,
    distort_cube,
    distort_histogram,
    distortion_terms,
    shifted_point,
    subsample_cube,
    subsample_geometry,
)
from transit_nlos.errors import ConfigurationError, OutOfExtentError
from transit_nlos.transients import (
    C_LIGHT,
    CubeKind,
    HiddenScene,
    TimeAxis,
    TransientCube,
    WallGeometry,
    render_cube,
)
from conftest import single_point_scene


class TestShiftedPoint:
    def test_zero_shift_is_current(self):
        np.testing.assert_array_equal(
            shifted_point((0.1, 0.2, 0.0), (0.5, 0.2, 0.0), 0.0), [0.1, 0.2, 0.0]
        )

    def test_full_shift_is_previous(self):
        out = shifted_point((0.1, 0.2, 0.0), (0.5, 0.2, 0.0), 0.4)
        np.testing.assert_allclose(out, [0.5, 0.2, 0.0], rtol=1e-12)

    def test_axis_aligned_midpoint(self):
        out = shifted_point((0.1, 0.0, 0.0), (0.0, 0.0, 0.0), 0.05)
        np.testing.assert_allclose(out, [0.05, 0.0, 0.0], atol=1e-15)

    def test_rejects_out_of_range_and_coincident(self):
        with pytest.raises(ValueError):
            shifted_point((0.1, 0, 0), (0.2, 0, 0), 0.5)
        with pytest.raises(ValueError):
            shifted_point((0.1, 0, 0), (0.2, 0, 0), -0.01)
        with pytest.raises(ValueError):
            shifted_point((0.1, 0, 0), (0.1, 0, 0), 0.0)


class TestDistortionTerms:
    def test_equal_distances(self):
        assert distortion_terms(2.0, 2.0) == (1.0, 0.0)

    def test_known_values(self):
        w, dt = distortion_terms(2.0, 2.1)
        assert w == pytest.approx((2.0 / 2.1) ** 2, rel=1e-12)
        assert dt == pytest.approx(2.0 * (2.0 - 2.1) / C_LIGHT, rel=1e-12)
        assert dt == pytest.approx(-0.667e-9, rel=1e-2)

    @given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_weight_inverse_identity(self, d_n, d_s):
        w, _ = distortion_terms(d_n, d_s)
        assert w * (d_s / d_n) ** 2 == pytest.approx(1.0, rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            distortion_terms(0.0, 1.0)
        with pytest.raises(ValueError):
            distortion_terms(1.0, -2.0)


class TestScanPattern:
    def test_serpentine_is_valid(self):
        pat = serpentine_pattern(4, 3)
        assert len(pat) == 12

    def test_rejects_jumps(self):
        geom = WallGeometry(resolution=(2, 2))
        with pytest.raises(ValueError):
            ScanPattern(((0, 0), (1, 1), (1, 0), (0, 1)), geom)

    def test_rejects_missing_cells(self):
        geom = WallGeometry(resolution=(2, 2))
        with pytest.raises(ValueError):
            ScanPattern(((0, 0), (1, 0), (0, 0), (1, 0)), geom)


def _random_ideal_cube(rng, wall, num_bins=128):
    data = rng.uniform(0.0, 2.0, (*wall.resolution, num_bins))
    return TransientCube(data, TimeAxis(num_bins, bin_width=20e-12), wall, CubeKind.IDEAL)


class TestDistortHistogram:
    def test_first_point_identity(self):
        # no predecessor: the swept path has zero length, output is untouched
        rng = np.random.default_rng(0)
        wall = WallGeometry(extent=(1.0, 1.0), resolution=(4, 4))
        cube = _random_ideal_cube(rng, wall)
        pat = serpentine_pattern(4, 4, geometry=wall)
        out = distort_histogram(cube, 0, pat, PathSampling(16))
        i0, j0 = pat.points[0]
        np.testing.assert_array_equal(out, cube.data[i0, j0])

    def test_single_sample_equidistant_endpoints(self):
        # detector over the segment's perpendicular bisector: M = 1 sees
        # exactly the previous point at the same detector distance
        wall = WallGeometry(extent=(1.0, 0.5), resolution=(2, 1), detector_origin=(0.0, 0.1, -1.3))
        rng = np.random.default_rng(1)
        cube = _random_ideal_cube(rng, wall)
        pat = serpentine_pattern(2, 1, geometry=wall)
        out = distort_histogram(cube, 1, pat, PathSampling(1))
        prev = cube.data[pat.points[0]]
        np.testing.assert_array_equal(out, prev)

    def test_far_detector_reduces_to_plain_average(self):
        # negligible distance variation: weights ~1, shifts round to 0
        wall = WallGeometry(extent=(1.0, 1.0), resolution=(4, 4), detector_origin=(0.0, 0.0, -1e6))
        rng = np.random.default_rng(2)
        cube = _random_ideal_cube(rng, wall)
        pat = serpentine_pattern(4, 4, geometry=wall)
        sampling = PathSampling(8)
        n = 5
        out = distort_histogram(cube, n, pat, sampling)
        # oracle: average the histograms at the sampled grid points
        cur = wall.point_at(*pat.points[n])
        prev = wall.point_at(*pat.points[n - 1])
        length = np.linalg.norm(prev - cur)
        acc = np.zeros(cube.time_axis.num_bins)
        for s in sampling.sample_offsets(length):
            p = shifted_point(cur, prev, s)
            gi = int(np.argmin(np.abs(wall.axis_coords(0) - p[0])))
            gj = int(np.argmin(np.abs(wall.axis_coords(1) - p[1])))
            acc += cube.data[gi, gj]
        np.testing.assert_allclose(out, acc / sampling.samples_per_segment, rtol=1e-9)

    def test_single_sample_hand_evaluation(self):
        # M = 1: one term, weight (d_n/d_prev)^2 and the rounded bin shift
        wall = WallGeometry(extent=(2.0, 2.0), resolution=(2, 2), detector_origin=(0.9, -0.4, -1.1))
        rng = np.random.default_rng(3)
        cube = _random_ideal_cube(rng, wall, num_bins=256)
        pat = serpentine_pattern(2, 2, geometry=wall)
        n = 1
        out = distort_histogram(cube, n, pat, PathSampling(1))
        cur = wall.point_at(*pat.points[n])
        prev = wall.point_at(*pat.points[n - 1])
        o = np.array(wall.detector_origin)
        d_n = np.linalg.norm(cur - o)
        d_s = np.linalg.norm(prev - o)
        weight = (d_n / d_s) ** 2
        shift = int(np.rint(2.0 * (d_n - d_s) / C_LIGHT / cube.time_axis.bin_width))
        assert shift != 0  # geometry chosen so the shift actually bites
        expected = np.zeros(256)
        src = cube.data[pat.points[0]]
        if shift >= 0:
            expected[: 256 - shift] = src[shift:]
        else:
            expected[-shift:] = src[: 256 + shift]
        np.testing.assert_allclose(out, weight * expected, rtol=1e-12)

    def test_locality(self):
        # the result depends only on dense columns within one segment
        wall = WallGeometry(extent=(1.0, 1.0), resolution=(8, 8))
        rng = np.random.default_rng(4)
        cube = _random_ideal_cube(rng, wall)
        pat = serpentine_pattern(8, 8, geometry=wall)
        n = 10
        before = distort_histogram(cube, n, pat, PathSampling(16))
        tampered = cube.data.copy()
        tampered[:, 4:, :] += 100.0  # far rows only (point 10 is in rows j<=1)
        cube2 = TransientCube(tampered, cube.time_axis, wall, CubeKind.IDEAL)
        after = distort_histogram(cube2, n, pat, PathSampling(16))
        np.testing.assert_array_equal(before, after)

    def test_out_of_extent_sample_rejected(self):
        wall = WallGeometry(extent=(1.0, 1.0), resolution=(4, 4))
        rng = np.random.default_rng(5)
        cube = _random_ideal_cube(rng, wall)
        big = WallGeometry(extent=(3.0, 3.0), resolution=(4, 4))
        pat = serpentine_pattern(4, 4, geometry=big)
        with pytest.raises(OutOfExtentError):
            distort_histogram(cube, 1, pat, PathSampling(4))


class TestDistortCube:
    def test_same_resolution_matches_per_point_oracle(self):
        wall = WallGeometry(extent=(1.0, 1.0), resolution=(4, 4), detector_origin=(0.3, 0.2, -1.0))
        rng = np.random.default_rng(6)
        cube = _random_ideal_cube(rng, wall, num_bins=64)
        pat = serpentine_pattern(4, 4, geometry=subsample_geometry(wall, (4, 4)))
        sampling = PathSampling(1)
        out = distort_cube(cube, (4, 4), pat, sampling)
        assert out.kind == CubeKind.IDEAL_DISTORTED
        for n, (i, j) in enumerate(pat.points):
            np.testing.assert_allclose(
                out.data[i, j], np.clip(distort_histogram(cube, n, pat, sampling), 0, None),
                rtol=1e-12,
            )

    def test_uniform_cube_nearly_unchanged(self):
        # constant cube, far detector: residual distortion bounded by the
        # weight spread across one segment
        wall = WallGeometry(extent=(2.0, 2.0), resolution=(16, 16), detector_origin=(0.0, 0.0, -50.0))
        nt = 64
        cube = TransientCube(np.full((16, 16, nt), 3.0), TimeAxis(nt), wall, CubeKind.IDEAL)
        out = distort_cube(cube, (4, 4), sampling=PathSampling(8))
        d = wall.detector_distances()
        max_weight_dev = (d.max() / d.min()) ** 2 - 1.0
        # time shifts can spill at histogram edges: compare the interior
        interior = slice(2, nt - 2)
        sub = subsample_cube(cube, (4, 4))
        np.testing.assert_allclose(
            out.data[:, :, interior],
            sub.data[:, :, interior],
            rtol=max_weight_dev + 1e-9,
        )

    def test_rejects_non_divisible_resolution(self):
        wall = WallGeometry(extent=(1.0, 1.0), resolution=(6, 6))
        cube = TransientCube(np.zeros((6, 6, 16)), TimeAxis(16), wall)
        with pytest.raises(ConfigurationError):
            distort_cube(cube, (4, 4))

    def test_discretization_converges(self):
        # doubling M changes the result less and less
        wall = WallGeometry(extent=(2.0, 2.0), resolution=(16, 16), detector_origin=(0, 0, -2))
        scene = single_point_scene(x=0.1, y=-0.2, z=0.9)
        cube = render_cube(scene, wall, TimeAxis(512, bin_width=20e-12))
        outs = {
            m: distort_cube(cube, (4, 4), sampling=PathSampling(m)).data for m in (8, 16, 32, 64)
        }
        d1 = np.abs(outs[16] - outs[8]).max()
        d2 = np.abs(outs[32] - outs[16]).max()
        d3 = np.abs(outs[64] - outs[32]).max()
        assert d2 <= d1 + 1e-15
        assert d3 <= d2 + 1e-15

    def test_subsample_keeps_corner_aligned_points(self):
        wall = WallGeometry(extent=(2.0, 2.0), resolution=(8, 8))
        rng = np.random.default_rng(8)
        cube = _random_ideal_cube(rng, wall, num_bins=32)
        sub = subsample_cube(cube, (4, 4))
        np.testing.assert_array_equal(sub.data, cube.data[::2, ::2])
        # physical positions of the subsample match the dense originals
        np.testing.assert_allclose(sub.wall.axis_coords(0), wall.axis_coords(0)[::2], atol=1e-15)
