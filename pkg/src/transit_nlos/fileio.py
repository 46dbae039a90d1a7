"""Binary and text file formats.

TCUBE (version 1) is the transient-cube container: a fixed little-endian
header followed by the float32 payload in scan-row-major-then-time order::

    magic   4 bytes  b"TCUB"
    version u32      1
    kind    u8       0 ideal, 1 ideal_distorted, 2 measured, 3 measured_distorted
    n_x     u32
    n_y     u32
    n_t     u32
    bin_width_ps      f64
    wall_extent_m     2 x f64
    detector_origin_m 3 x f64
    payload n_x * n_y * n_t x f32

The header intentionally stays minimal: a nonzero time-axis origin or a
subsampled grid's lateral offset is not persisted, so datasets written to
disk use origin 0 and centered grids.

Checkpoints ("TPRM" version 1) are flat name-indexed tensors: after the
magic, version and tensor count come records of (u16 name length, name
bytes, u8 ndim, u32 shape..., f64 data...), with a JSON sidecar at
``<path>.json`` holding the model configuration and training counters.

Images travel as binary 8-bit PGM (P5), metric reports and loss traces as
CSV.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .metrics import METRIC_NAMES, MetricReport
from .network import ModelConfig, TransitParams, PositionalEncoding
from .autodiff import Tensor
from .training import AdamState, TraceRow
from .transients import CubeKind, TimeAxis, TransientCube, WallGeometry

TCUBE_MAGIC = b"TCUB"
TCUBE_VERSION = 1
_TCUBE_HEADER = struct.Struct("<4sIBIIId2d3d")

CHECKPOINT_MAGIC = b"TPRM"
CHECKPOINT_VERSION = 1


def write_tcube(cube: TransientCube, path) -> None:
    nx, ny, nt = cube.shape
    header = _TCUBE_HEADER.pack(
        TCUBE_MAGIC,
        TCUBE_VERSION,
        int(cube.kind),
        nx,
        ny,
        nt,
        cube.time_axis.bin_width * 1e12,
        cube.wall.extent[0],
        cube.wall.extent[1],
        *cube.wall.detector_origin,
    )
    payload = np.ascontiguousarray(cube.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_tcube(path) -> TransientCube:
    raw = Path(path).read_bytes()
    if len(raw) < _TCUBE_HEADER.size:
        raise FormatError(f"file too short for a TCUBE header ({len(raw)} bytes)")
    (magic, version, kind, nx, ny, nt, bw_ps, ex, ey, ox, oy, oz) = _TCUBE_HEADER.unpack_from(raw)
    if magic != TCUBE_MAGIC:
        raise FormatError(f"bad magic {magic!r} (expected {TCUBE_MAGIC!r})")
    if version != TCUBE_VERSION:
        raise FormatError(f"unsupported version {version} (supported: {TCUBE_VERSION})")
    try:
        kind = CubeKind(kind)
    except ValueError as exc:
        raise FormatError(f"unknown cube kind {kind}") from exc
    expected = nx * ny * nt * 4
    actual = len(raw) - _TCUBE_HEADER.size
    if actual != expected:
        raise FormatError(f"payload is {actual} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_TCUBE_HEADER.size).reshape(nx, ny, nt)
    wall = WallGeometry(extent=(ex, ey), resolution=(nx, ny), detector_origin=(ox, oy, oz))
    axis = TimeAxis(num_bins=nt, bin_width=bw_ps * 1e-12)
    return TransientCube(data.astype(np.float64), axis, wall, kind)


def write_pgm(image: np.ndarray, path) -> None:
    """8-bit binary PGM; input pixels are clipped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM wants a 2D image, got shape {image.shape}")
    quant = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        fh.write(quant.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM back to floats in [0, 1]."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(parts[4][: width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise FormatError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def save_checkpoint(
    path,
    params: TransitParams,
    state: AdamState | None = None,
    extra: dict | None = None,
) -> None:
    """Flat binary tensor dump plus a JSON sidecar with config and counters."""
    tensors: dict[str, np.ndarray] = {
        f"param:{name}": t.data for name, t in params.tensors.items()
    }
    if state is not None:
        tensors.update({f"adam.m:{k}": v for k, v in state.m.items()})
        tensors.update({f"adam.v:{k}": v for k, v in state.v.items()})
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    sidecar = {"model": asdict(params.config), "adam_step": state.step if state else 0}
    sidecar.update(extra or {})
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path):
    """Returns (params, adam_state, sidecar_dict)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        tensors[name] = arr.astype(np.float64)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"missing checkpoint sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    config = ModelConfig(**sidecar["model"])
    param_tensors = {
        name[len("param:") :]: Tensor(arr.copy(), requires_grad=True)
        for name, arr in tensors.items()
        if name.startswith("param:")
    }
    params = TransitParams(
        config, param_tensors, PositionalEncoding(config.scan_res, config.token_dim)
    )
    state = AdamState(
        m={k[len("adam.m:") :]: v.copy() for k, v in tensors.items() if k.startswith("adam.m:")},
        v={k[len("adam.v:") :]: v.copy() for k, v in tensors.items() if k.startswith("adam.v:")},
        step=int(sidecar.get("adam_step", 0)),
    )
    return params, state, sidecar


def write_trace(rows, path) -> None:
    """Loss trace CSV: one row per epoch, five fixed columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "imaging", "mmd", "total"])
        for row in rows:
            writer.writerow(
                [row.epoch, f"{row.lr:.10g}", f"{row.imaging:.10g}", f"{row.mmd:.10g}", f"{row.total:.10g}"]
            )


def read_trace(path) -> list[TraceRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                TraceRow(
                    int(rec["epoch"]),
                    float(rec["lr"]),
                    float(rec["imaging"]),
                    float(rec["mmd"]),
                    float(rec["total"]),
                )
            )
    return rows


def _fmt_metric(x: float) -> str:
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf"
    return f"{x:.6f}"


def write_metric_reports(reports, path, per_frame: bool = True) -> None:
    """Metric CSV: per-frame rows plus one mean row per (object, method)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object", "method", "frame", *METRIC_NAMES])
        for rep in reports:
            if per_frame:
                for f in range(rep.num_frames):
                    writer.writerow(
                        [rep.object_id, rep.method, f]
                        + [_fmt_metric(rep.per_frame[m][f]) for m in METRIC_NAMES]
                    )
            writer.writerow(
                [rep.object_id, rep.method, "mean"]
                + [_fmt_metric(rep.mean(m)) for m in METRIC_NAMES]
            )
