"""Run configuration: a JSON document with one section per subsystem.

Sections (all optional, all defaulted): ``render``, ``distortion``,
``model``, ``training``, ``dataset``, ``metrics``.  Validation is strict:
unknown keys are rejected with a spelling suggestion before any work
starts, and values land directly in the typed objects the subsystems
consume.
"""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import MotionSpec, NoiseConfig, ShapeSpec
from .distortion import PathSampling
from .errors import ConfigurationError
from .network import ModelConfig
from .training import TrainConfig
from .transients import TimeAxis, WallGeometry

SECTIONS = ("render", "distortion", "model", "training", "dataset", "metrics")


def _reject_unknown(doc: dict, allowed, path: str) -> None:
    for key in doc:
        if key not in allowed:
            msg = f"unknown key '{key}' in {path}"
            hint = difflib.get_close_matches(key, list(allowed), n=1)
            if hint:
                msg += f"; did you mean '{hint[0]}'?"
            raise ConfigurationError(msg)


def _build(cls, doc: dict, path: str, coerce=None):
    """Instantiate a dataclass from a dict, strictly and with nice errors."""
    fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    _reject_unknown(doc, fields, path)
    kwargs = dict(doc)
    if coerce:
        for key, fn in coerce.items():
            if key in kwargs:
                kwargs[key] = fn(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"in {path}: {exc}") from exc


def _pair(x):
    return tuple(x) if isinstance(x, (list, tuple)) else (x, x)


def _triple(x):
    return tuple(x)


@dataclass(frozen=True)
class RenderConfig:
    num_bins: int = 512
    bin_width: float = 20e-12
    wall_extent: tuple = (2.0, 2.0)
    wall_resolution: tuple = (64, 64)
    detector_origin: tuple = (0.0, 0.0, -2.0)

    def time_axis(self) -> TimeAxis:
        return TimeAxis(num_bins=self.num_bins, bin_width=self.bin_width)

    def wall(self) -> WallGeometry:
        return WallGeometry(
            extent=self.wall_extent,
            resolution=self.wall_resolution,
            detector_origin=self.detector_origin,
        )


@dataclass(frozen=True)
class DistortionConfig:
    target_resolution: tuple = (16, 16)
    samples_per_segment: int = 16
    interpolate: bool = False
    exposure_per_point: float = 0.4e-3

    def sampling(self) -> PathSampling:
        return PathSampling(self.samples_per_segment, self.interpolate)


@dataclass(frozen=True)
class SequenceConfig:
    shape: ShapeSpec = field(default_factory=ShapeSpec)
    motion: MotionSpec = field(default_factory=MotionSpec)
    seq_id: str | None = None


@dataclass(frozen=True)
class DatasetConfig:
    sequences: tuple = ()
    noise: NoiseConfig | None = None
    save_dense: bool = True
    gt_resolution: tuple = (64, 64)


@dataclass(frozen=True)
class MetricsConfig:
    per_frame: bool = True


@dataclass(frozen=True)
class RunConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    distortion: DistortionConfig = field(default_factory=DistortionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


def _build_sequence(doc: dict, path: str) -> SequenceConfig:
    _reject_unknown(doc, ("shape", "motion", "seq_id"), path)
    shape = _build(ShapeSpec, doc.get("shape", {}), f"{path}.shape")
    motion = _build(
        MotionSpec, doc.get("motion", {}), f"{path}.motion", coerce={"direction": tuple}
    )
    return SequenceConfig(shape, motion, doc.get("seq_id"))


def _build_dataset(doc: dict, path: str) -> DatasetConfig:
    _reject_unknown(doc, ("sequences", "noise", "save_dense", "gt_resolution"), path)
    seqs = tuple(
        _build_sequence(entry, f"{path}.sequences[{i}]")
        for i, entry in enumerate(doc.get("sequences", []))
    )
    noise = None
    if doc.get("noise") is not None:
        noise = _build(NoiseConfig, doc["noise"], f"{path}.noise")
    return DatasetConfig(
        sequences=seqs,
        noise=noise,
        save_dense=bool(doc.get("save_dense", True)),
        gt_resolution=_pair(doc.get("gt_resolution", (64, 64))),
    )


def load_config(doc: dict | None) -> RunConfig:
    """Validate a raw JSON document into a RunConfig."""
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a JSON object")
    _reject_unknown(doc, SECTIONS, "config")
    render = _build(
        RenderConfig,
        doc.get("render", {}),
        "render",
        coerce={"wall_extent": _pair, "wall_resolution": _pair, "detector_origin": _triple},
    )
    distortion = _build(
        DistortionConfig,
        doc.get("distortion", {}),
        "distortion",
        coerce={"target_resolution": _pair},
    )
    model = _build(ModelConfig, doc.get("model", {}), "model")
    training = _build(TrainConfig, doc.get("training", {}), "training")
    dataset = _build_dataset(doc.get("dataset", {}), "dataset")
    metrics = _build(MetricsConfig, doc.get("metrics", {}), "metrics")
    return RunConfig(render, distortion, model, training, dataset, metrics)


def load_config_file(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return load_config(doc)
