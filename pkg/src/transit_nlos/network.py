"""Transient-video reconstruction transformer ("Transit").

Per frame, the raw scan cube (S x S x T photon histograms) is compressed
along time by one shared linear map, fused with the previous frame's
features by concatenating the feature difference, projected to the token
width, tagged with fixed 2D spatial + 1D temporal sinusoidal encodings,
refined by pre-norm attention blocks, and decoded by a shared linear head
that emits one P x P image patch per scan point (sigmoid to [0, 1]).

Temporal context enters through the fusion step and the temporal encoding;
attention itself runs over the S^2 tokens of the current frame, so frame k
never depends on later frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .transients import TransientCube


@dataclass(frozen=True)
class ModelConfig:
    scan_res: int = 16
    time_bins: int = 512
    compress_dim: int = 32
    token_dim: int = 128
    blocks: int = 8
    heads: int = 8
    patch_out: int = 4
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.token_dim % self.heads:
            raise ValueError("token_dim must be divisible by heads")
        if self.token_dim % 4:
            raise ValueError("token_dim must be divisible by 4 (2D sin/cos encoding)")
        if self.compress_dim > self.time_bins:
            raise ValueError("compress_dim must not exceed time_bins")
        if min(self.scan_res, self.blocks, self.heads, self.patch_out, self.mlp_ratio) < 1:
            raise ValueError("all model dimensions must be >= 1")

    @property
    def output_side(self) -> int:
        return self.scan_res * self.patch_out

    @property
    def fused_dim(self) -> int:
        return 2 * self.compress_dim


def _sincos(positions: np.ndarray, dim: int) -> np.ndarray:
    """Interleaved sin/cos table, shape (len(positions), dim), dim even."""
    half = dim // 2
    denom = 10000.0 ** (np.arange(half) / half)
    args = positions[:, None] / denom[None, :]
    out = np.empty((positions.shape[0], dim))
    out[:, 0::2] = np.sin(args)
    out[:, 1::2] = np.cos(args)
    return out


@dataclass(frozen=True)
class PositionalEncoding:
    """Fixed sinusoidal encodings: 2D over the scan grid, 1D over frames."""

    scan_res: int
    token_dim: int
    spatial: np.ndarray = field(init=False)

    def __post_init__(self):
        s, d = self.scan_res, self.token_dim
        rows = np.repeat(np.arange(s), s).astype(np.float64)
        cols = np.tile(np.arange(s), s).astype(np.float64)
        # first half of the channels encode the x index, second half y
        spatial = np.concatenate([_sincos(rows, d // 2), _sincos(cols, d // 2)], axis=1)
        object.__setattr__(self, "spatial", spatial)

    def temporal(self, frame: int) -> np.ndarray:
        """Encoding vector for any frame index (computed by formula)."""
        if frame < 0:
            raise ValueError("frame index must be >= 0")
        return _sincos(np.array([float(frame)]), self.token_dim)[0]


@dataclass
class FeatureMap:
    """Per-scan-point feature rows (S^2 x dim) for one frame."""

    tokens: Tensor
    frame_index: int


def _truncated_normal(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while np.any(bad):
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return sigma * out


@dataclass
class TransitParams:
    """All learnable tensors plus the fixed positional encodings."""

    config: ModelConfig
    tensors: dict
    encoding: PositionalEncoding

    @classmethod
    def init(cls, config: ModelConfig, seed: int | None = None) -> "TransitParams":
        rng = np.random.default_rng(config.seed if seed is None else seed)
        d, c = config.token_dim, config.compress_dim

        def weight(*shape):
            return Tensor(_truncated_normal(rng, shape, 0.02), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(*shape):
            return Tensor(np.ones(shape), requires_grad=True)

        t: dict[str, Tensor] = {
            "compress.w": weight(config.time_bins, c),
            "compress.b": zeros(c),
            "proj.w": weight(2 * c, d),
            "proj.b": zeros(d),
        }
        for k in range(config.blocks):
            p = f"block{k}"
            t[f"{p}.ln1.g"] = ones(d)
            t[f"{p}.ln1.b"] = zeros(d)
            t[f"{p}.qkv.w"] = weight(d, 3 * d)
            t[f"{p}.qkv.b"] = zeros(3 * d)
            t[f"{p}.out.w"] = weight(d, d)
            t[f"{p}.out.b"] = zeros(d)
            t[f"{p}.ln2.g"] = ones(d)
            t[f"{p}.ln2.b"] = zeros(d)
            t[f"{p}.mlp1.w"] = weight(d, config.mlp_ratio * d)
            t[f"{p}.mlp1.b"] = zeros(config.mlp_ratio * d)
            t[f"{p}.mlp2.w"] = weight(config.mlp_ratio * d, d)
            t[f"{p}.mlp2.b"] = zeros(d)
        t["head.w"] = weight(d, config.patch_out**2)
        t["head.b"] = zeros(config.patch_out**2)
        return cls(config, t, PositionalEncoding(config.scan_res, d))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype) -> "TransitParams":
        cast = {
            name: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        }
        return TransitParams(self.config, cast, self.encoding)

    def copy(self) -> "TransitParams":
        return self.astype(np.float64)


def normalize_cube(cube) -> np.ndarray:
    """Scale a cube's counts by its global max (all-zero cubes pass through)."""
    data = cube.data if isinstance(cube, TransientCube) else np.asarray(cube, dtype=np.float64)
    peak = data.max() if data.size else 0.0
    return data / peak if peak > 0 else np.asarray(data, dtype=np.float64)


def compress(transients: np.ndarray, params: TransitParams, frame_index: int = 0) -> FeatureMap:
    """One shared affine map squeezes every T-bin histogram to compress_dim."""
    cfg = params.config
    s = cfg.scan_res
    arr = np.asarray(transients)
    if arr.shape != (s, s, cfg.time_bins):
        raise ValueError(f"expected cube of shape {(s, s, cfg.time_bins)}, got {arr.shape}")
    flat = Tensor(arr.reshape(s * s, cfg.time_bins).astype(params.tensors["compress.w"].data.dtype))
    tokens = ad.add(ad.matmul(flat, params.tensors["compress.w"]), params.tensors["compress.b"])
    return FeatureMap(tokens, frame_index)


def fuse(current: FeatureMap, previous: FeatureMap | None) -> FeatureMap:
    """Concatenate current features with their change since the previous frame.

    The first frame of a sequence fuses with itself (zero difference).
    """
    if previous is None:
        previous = current
    if current.tokens.shape != previous.tokens.shape:
        raise ValueError("feature maps must have matching shapes")
    diff = ad.sub(current.tokens, previous.tokens)
    return FeatureMap(ad.concat([current.tokens, diff], axis=1), current.frame_index)


def encode_positions(fused: FeatureMap, params: TransitParams, frame: int) -> Tensor:
    """Project fused features to token width and add both encodings."""
    dtype = params.tensors["proj.w"].data.dtype
    proj = ad.add(ad.matmul(fused.tokens, params.tensors["proj.w"]), params.tensors["proj.b"])
    pe = params.encoding.spatial + params.encoding.temporal(frame)[None, :]
    return ad.add(proj, pe.astype(dtype))


def attention(tokens: Tensor, params: TransitParams, prefix: str) -> Tensor:
    """Multi-head self-attention over the frame's tokens."""
    cfg = params.config
    n = tokens.shape[0]
    d, h = cfg.token_dim, cfg.heads
    dh = d // h
    qkv = ad.add(ad.matmul(tokens, params.tensors[f"{prefix}.qkv.w"]), params.tensors[f"{prefix}.qkv.b"])

    def heads_of(part: Tensor) -> Tensor:
        return part.reshape(n, h, dh).transpose(1, 0, 2)

    q = heads_of(qkv[:, 0:d])
    k = heads_of(qkv[:, d : 2 * d])
    v = heads_of(qkv[:, 2 * d : 3 * d])
    scores = ad.mul(ad.matmul(q, k.transpose(0, 2, 1)), 1.0 / math.sqrt(dh))
    weights = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(weights, v).transpose(1, 0, 2).reshape(n, d)
    return ad.add(ad.matmul(ctx, params.tensors[f"{prefix}.out.w"]), params.tensors[f"{prefix}.out.b"])


def vit_block(tokens: Tensor, params: TransitParams, index: int) -> Tensor:
    """Pre-norm residual block: attention sublayer, then GELU MLP sublayer."""
    p = f"block{index}"
    t = params.tensors
    normed = ad.layer_norm(tokens, t[f"{p}.ln1.g"], t[f"{p}.ln1.b"])
    tokens = ad.add(tokens, attention(normed, params, p))
    normed = ad.layer_norm(tokens, t[f"{p}.ln2.g"], t[f"{p}.ln2.b"])
    hidden = ad.gelu(ad.add(ad.matmul(normed, t[f"{p}.mlp1.w"]), t[f"{p}.mlp1.b"]))
    mlp = ad.add(ad.matmul(hidden, t[f"{p}.mlp2.w"]), t[f"{p}.mlp2.b"])
    return ad.add(tokens, mlp)


def output_head(tokens: Tensor, params: TransitParams) -> Tensor:
    """Decode each token to its P x P patch; patches tile the output image."""
    cfg = params.config
    s, p = cfg.scan_res, cfg.patch_out
    patches = ad.add(ad.matmul(tokens, params.tensors["head.w"]), params.tensors["head.b"])
    image = patches.reshape(s, s, p, p).transpose(0, 2, 1, 3).reshape(s * p, s * p)
    return ad.sigmoid(image)


def forward(cubes, params: TransitParams) -> list[Tensor]:
    """Reconstruct one image per frame, in frame order.

    ``cubes`` is a sequence of (S, S, T) arrays or TransientCubes; each is
    normalized by its own global max before compression.
    """
    images = []
    prev: FeatureMap | None = None
    for frame, cube in enumerate(cubes):
        feat = compress(normalize_cube(cube), params, frame)
        fused = fuse(feat, prev)
        tokens = encode_positions(fused, params, frame)
        for k in range(params.config.blocks):
            tokens = vit_block(tokens, params, k)
        images.append(output_head(tokens, params))
        prev = feat
    return images


def fused_features(cubes, params: TransitParams) -> list[FeatureMap]:
    """Compress-and-fuse only (the feature extractor half of the network)."""
    out = []
    prev: FeatureMap | None = None
    for frame, cube in enumerate(cubes):
        feat = compress(normalize_cube(cube), params, frame)
        out.append(fuse(feat, prev))
        prev = feat
    return out


def infer(cubes, params: TransitParams) -> list[np.ndarray]:
    """Forward pass without graph recording; returns plain image arrays."""
    with ad.no_grad():
        return [img.data for img in forward(cubes, params)]
