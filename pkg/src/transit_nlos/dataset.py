"""Synthetic dynamic hidden-scene sequences.

Each sequence animates a flat parametric shape (letter, propeller,
windmill, bar chart) on the hidden side of the wall and renders, per
frame: the dense ideal cube, the fast-scan distorted cube on the coarse
serpentine grid, and the ground-truth frontal image (an orthographic
albedo splat over the wall extent, normalized to [0, 1] on black).

Generation is deterministic per (spec, seed) and embarrassingly parallel
over frames: noise streams are keyed by (seed, frame, scan point).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .distortion import PathSampling, ScanPattern, distort_cube
from .transients import HiddenScene, TimeAxis, TransientCube, WallGeometry, apply_noise, render_cube

# 5x7 bitmap font ('#' lit).  'I' is a plain vertical bar on purpose: tests
# and demos use it as the canonical axis-aligned rectangle.
FONT_5X7 = {
    "A": [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "B": ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
    "C": [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
    "D": ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "F": ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
    "G": [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."],
    "H": ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "I": ["..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "J": ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
    "K": ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
    "L": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    "M": ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    "N": ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "P": ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    "Q": [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
    "R": ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
    "S": [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "U": ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "V": ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    "W": ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"],
    "X": ["#...#", ".#.#.", "..#..", "..#..", "..#..", ".#.#.", "#...#"],
    "Y": ["#...#", ".#.#.", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "Z": ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
}


@dataclass(frozen=True)
class ShapeSpec:
    """Flat shape recipe: what to draw and how densely to sample it."""

    kind: str = "letter"  # letter | propeller | windmill_like | bar_set
    size: float = 1.0  # bounding square side, meters
    depth: float = 0.8  # z0 of the shape plane, meters
    sample_density: float = 1500.0  # points per square meter
    letter: str = "K"
    blades: int = 3
    bars: int = 3

    def __post_init__(self):
        if self.kind not in ("letter", "propeller", "windmill_like", "bar_set"):
            raise ValueError(f"unknown shape kind '{self.kind}'")
        if self.size <= 0 or self.depth <= 0 or self.sample_density <= 0:
            raise ValueError("size, depth and sample_density must be positive")
        if self.kind == "letter" and self.letter.upper() not in FONT_5X7:
            raise ValueError(f"no glyph for letter '{self.letter}'")
        if self.blades < 1 or self.bars < 1:
            raise ValueError("blades and bars must be >= 1")


@dataclass(frozen=True)
class MotionSpec:
    """Rigid in-plane motion: translation, rotation about the centroid, or both."""

    kind: str = "translate"  # translate | rotate | compose
    velocity: float = 0.4  # m/s
    angular_rate: float = 45.0  # deg/s
    direction: tuple[float, float] = (1.0, 0.0)
    fps: float = 10.0
    num_frames: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("translate", "rotate", "compose"):
            raise ValueError(f"unknown motion kind '{self.kind}'")
        if self.fps <= 0 or self.num_frames < 1:
            raise ValueError("fps must be > 0 and num_frames >= 1")
        if self.velocity < 0:
            raise ValueError("velocity must be >= 0")
        n = float(np.hypot(*self.direction))
        if self.kind in ("translate", "compose") and self.velocity > 0 and n == 0:
            raise ValueError("direction must be nonzero for translation")


def _sample_cells(cells, density, cell_area, rng):
    """Uniform points over a union of equal-area rectangles, exact count."""
    total = int(round(density * cell_area * len(cells)))
    if total == 0:
        return np.zeros((0, 2))
    pick = rng.integers(0, len(cells), size=total)
    offsets = rng.random((total, 2))
    cells = np.asarray(cells, dtype=np.float64)  # (k, 4): x0, y0, w, h
    chosen = cells[pick]
    return chosen[:, :2] + offsets * chosen[:, 2:]


def _letter_points(spec: ShapeSpec, rng) -> np.ndarray:
    glyph = FONT_5X7[spec.letter.upper()]
    cw, ch = spec.size / 5.0, spec.size / 7.0
    cells = []
    for row, line in enumerate(glyph):
        for col, ch_ in enumerate(line):
            if ch_ == "#":
                x0 = col * cw - spec.size / 2.0
                y0 = spec.size / 2.0 - (row + 1) * ch  # row 0 at the top
                cells.append((x0, y0, cw, ch))
    return _sample_cells(cells, spec.sample_density, cw * ch, rng)


def _rotate_xy(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    x, y = points[:, 0], points[:, 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=1)


def _radial_blade(spec: ShapeSpec, rng, half_angle, width=None):
    """One blade/vane pointing +x, replicated with exact k-fold symmetry."""
    r_out = spec.size / 2.0
    r_in = 0.08 * spec.size
    k = spec.blades
    if width is None:  # angular sector
        area = half_angle * (r_out**2 - r_in**2)
        n = int(round(spec.sample_density * area))
        radius = np.sqrt(rng.random(n) * (r_out**2 - r_in**2) + r_in**2)
        theta = (rng.random(n) * 2.0 - 1.0) * half_angle
        blade = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    else:  # rectangular vane
        area = (r_out - r_in) * width
        n = int(round(spec.sample_density * area))
        xs = rng.random(n) * (r_out - r_in) + r_in
        ys = (rng.random(n) - 0.5) * width
        blade = np.stack([xs, ys], axis=1)
    parts = [_rotate_xy(blade, 2.0 * np.pi * j / k) for j in range(k)]
    return np.vstack(parts) if parts else np.zeros((0, 2))


def _bar_points(spec: ShapeSpec, rng) -> np.ndarray:
    nb = spec.bars
    # bars and gaps alternate with equal width across the bounding square
    bw = spec.size / (2 * nb - 1)
    cells = []
    for b in range(nb):
        x0 = -spec.size / 2.0 + 2 * b * bw
        cells.append((x0, -spec.size / 2.0, bw, spec.size))
    return _sample_cells(cells, spec.sample_density, bw * spec.size, rng)


def make_shape(spec: ShapeSpec, seed: int = 0) -> HiddenScene:
    """Point-cloud shape on the plane z = depth, unit albedo, seeded sampling."""
    rng = np.random.default_rng([seed])
    if spec.kind == "letter":
        xy = _letter_points(spec, rng)
    elif spec.kind == "propeller":
        xy = _radial_blade(spec, rng, half_angle=np.pi / (2 * spec.blades))
    elif spec.kind == "windmill_like":
        xy = _radial_blade(spec, rng, half_angle=None, width=0.2 * spec.size)
    else:
        xy = _bar_points(spec, rng)
    pos = np.column_stack([xy, np.full(xy.shape[0], spec.depth)])
    return HiddenScene(pos, np.ones(xy.shape[0]))


def animate(scene: HiddenScene, motion: MotionSpec, frame: int) -> HiddenScene:
    """Rigid pose of the scene at a frame: frame 0 is the identity."""
    if frame >= motion.num_frames:
        raise ValueError(f"frame {frame} >= num_frames {motion.num_frames}")
    t = frame / motion.fps
    pos = scene.positions.copy()
    if motion.kind in ("rotate", "compose") and motion.angular_rate != 0.0:
        centroid = pos.mean(axis=0) if pos.size else np.zeros(3)
        angle = np.deg2rad(motion.angular_rate) * t
        pos[:, :2] = _rotate_xy(pos[:, :2] - centroid[None, :2], angle) + centroid[None, :2]
    if motion.kind in ("translate", "compose") and motion.velocity != 0.0:
        d = np.asarray(motion.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        pos[:, :2] += motion.velocity * t * d[None, :]
    return HiddenScene(pos, scene.albedos)


def clamp_lateral(scene: HiddenScene, wall: WallGeometry) -> HiddenScene:
    """Shift the cloud back inside the wall's lateral extent if it drifted out."""
    if scene.num_points == 0:
        return scene
    pos = scene.positions.copy()
    moved = False
    for axis in range(2):
        half = wall.extent[axis] / 2.0
        lo, hi = pos[:, axis].min(), pos[:, axis].max()
        shift = 0.0
        if hi > half:
            shift = half - hi
        if lo + shift < -half:
            shift = -half - lo  # oversize shapes end up flush with the low edge
        if shift:
            pos[:, axis] += shift
            moved = True
    return HiddenScene(pos, scene.albedos) if moved else scene


def albedo_splat(scene: HiddenScene, wall: WallGeometry, resolution=(64, 64)) -> np.ndarray:
    """Unnormalized orthographic albedo histogram over the wall extent."""
    ex, ey = wall.extent
    img, _, _ = np.histogram2d(
        scene.positions[:, 0],
        scene.positions[:, 1],
        bins=resolution,
        range=[[-ex / 2.0, ex / 2.0], [-ey / 2.0, ey / 2.0]],
        weights=scene.albedos,
    )
    return img


def render_gt_image(scene: HiddenScene, wall: WallGeometry, resolution=(64, 64)) -> np.ndarray:
    """Ground-truth frontal view: albedo splat normalized to [0, 1]."""
    img = albedo_splat(scene, wall, resolution)
    peak = img.max() if img.size else 0.0
    if scene.num_points and peak == 0:
        warnings.warn("scene lies entirely outside the wall extent", stacklevel=2)
        return np.zeros(resolution)
    return img / peak if peak > 0 else img


def serpentine_pattern(
    n_x: int,
    n_y: int,
    geometry: WallGeometry | None = None,
    exposure_per_point: float = 0.4e-3,
) -> ScanPattern:
    """Boustrophedon raster: row j scans +x when j is even, -x when odd."""
    if n_x < 1 or n_y < 1:
        raise ValueError("pattern dimensions must be >= 1")
    points = []
    for j in range(n_y):
        cols = range(n_x) if j % 2 == 0 else range(n_x - 1, -1, -1)
        points.extend((i, j) for i in cols)
    if geometry is None:
        geometry = WallGeometry(resolution=(n_x, n_y))
    return ScanPattern(tuple(points), geometry, exposure_per_point)


@dataclass(frozen=True)
class NoiseConfig:
    background_rate: float = 0.0
    jitter_sigma: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class FrameSample:
    dense_cube: TransientCube
    distorted_cube: TransientCube
    gt_image: np.ndarray


@dataclass(frozen=True)
class SequenceSample:
    frames: tuple
    shape_spec: ShapeSpec
    motion_spec: MotionSpec
    seq_id: str


def generate_sequence(
    shape_spec: ShapeSpec,
    motion_spec: MotionSpec,
    wall: WallGeometry,
    time_axis: TimeAxis,
    target_resolution=(16, 16),
    sampling: PathSampling = PathSampling(),
    noise: NoiseConfig | None = None,
    gt_resolution=(64, 64),
    seq_id: str | None = None,
) -> SequenceSample:
    """Animate, render densely, distort to the coarse serpentine grid, splat GT.

    All randomness is keyed off the specs' seeds; noise streams additionally
    mix in the frame index, so generation order never matters.
    """
    base = make_shape(shape_spec, motion_spec.seed)
    frames = []
    for f in range(motion_spec.num_frames):
        scene = clamp_lateral(animate(base, motion_spec, f), wall)
        dense = render_cube(scene, wall, time_axis)
        distorted = distort_cube(dense, target_resolution, sampling=sampling)
        if noise is not None and (noise.background_rate > 0 or noise.jitter_sigma > 0):
            distorted = apply_noise(
                distorted,
                background_rate=noise.background_rate,
                jitter_sigma=noise.jitter_sigma,
                seed=(noise.seed, f),
            )
        gt = render_gt_image(scene, wall, gt_resolution)
        frames.append(FrameSample(dense, distorted, gt))
    if seq_id is None:
        seq_id = f"{shape_spec.kind}_{motion_spec.kind}_{motion_spec.seed}"
    return SequenceSample(tuple(frames), shape_spec, motion_spec, seq_id)


def training_pairs(sample: SequenceSample):
    """(input cubes, target images) view of a sequence for the training loop."""
    cubes = [f.distorted_cube for f in sample.frames]
    gts = [f.gt_image for f in sample.frames]
    return cubes, gts


# -- on-disk datasets --------------------------------------------------------

MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "transit-dataset-v1"


def write_dataset(samples, out_dir, save_dense: bool = True, extra: dict | None = None) -> None:
    """Persist sequences as manifest + per-frame cubes (TCUBE) + GT images (PGM).

    Writing is deterministic: identical samples produce byte-identical
    files, so re-running a generation config overwrites in place.
    """
    import json
    from dataclasses import asdict
    from pathlib import Path

    from . import fileio

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx, sample in enumerate(samples):
        sub = f"seq{idx:03d}"
        seq_dir = out / sub
        seq_dir.mkdir(exist_ok=True)
        for f, frame in enumerate(sample.frames):
            fileio.write_tcube(frame.distorted_cube, seq_dir / f"frame{f:04d}.distorted.tcube")
            if save_dense:
                fileio.write_tcube(frame.dense_cube, seq_dir / f"frame{f:04d}.dense.tcube")
            fileio.write_pgm(frame.gt_image, seq_dir / f"frame{f:04d}.gt.pgm")
        entries.append(
            {
                "id": sample.seq_id,
                "dir": sub,
                "num_frames": len(sample.frames),
                "shape": asdict(sample.shape_spec),
                "motion": asdict(sample.motion_spec),
            }
        )
    manifest = {"format": DATASET_FORMAT, "save_dense": save_dense, "sequences": entries}
    manifest.update(extra or {})
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


@dataclass(frozen=True)
class LoadedSequence:
    seq_id: str
    distorted: tuple
    gts: tuple
    dense: tuple | None = None


def load_dataset(in_dir, load_dense: bool = False) -> list[LoadedSequence]:
    import json
    from pathlib import Path

    from . import fileio
    from .errors import FormatError

    root = Path(in_dir)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"no {MANIFEST_NAME} in {root}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise FormatError(f"unsupported dataset format {manifest.get('format')!r}")
    sequences = []
    for entry in manifest["sequences"]:
        seq_dir = root / entry["dir"]
        distorted, gts, dense = [], [], []
        for f in range(entry["num_frames"]):
            distorted.append(fileio.read_tcube(seq_dir / f"frame{f:04d}.distorted.tcube"))
            gts.append(fileio.read_pgm(seq_dir / f"frame{f:04d}.gt.pgm"))
            dense_path = seq_dir / f"frame{f:04d}.dense.tcube"
            if load_dense and dense_path.exists():
                dense.append(fileio.read_tcube(dense_path))
        sequences.append(
            LoadedSequence(
                entry["id"],
                tuple(distorted),
                tuple(gts),
                tuple(dense) if dense else None,
            )
        )
    return sequences
