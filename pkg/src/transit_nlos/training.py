"""Two-stage optimization of the reconstruction network.

Stage one fits the network to synthetic sequences by pixel mean squared
error.  Stage two fine-tunes against unlabeled target-domain cubes by
adding a Gaussian-kernel maximum-mean-discrepancy (MMD) penalty between
fused feature samples of the two domains; the image term keeps anchoring
the synthetic branch, so the loss is MSE + lambda * MMD.

Optimization is AdamW (decoupled weight decay, bias-corrected moments)
under a linear-warmup-then-cosine learning-rate schedule.  Both stages are
deterministic given their seed: epoch shuffles and MMD subsampling draw
from streams keyed by (seed, epoch), so a run resumed from a checkpoint
replays exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import network
from .autodiff import Tensor
from .errors import DivergenceError
from .network import TransitParams


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 5e-3
    lr_min: float = 1e-4
    warmup_epochs: int = 10
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.01
    eps: float = 1e-8
    batch_size: int = 1
    lambda_mmd: float = 0.01
    mmd_n: int = 32
    mmd_m: int = 64
    kernel_sigma: float | None = None  # None: median pairwise distance per batch
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if self.lambda_mmd < 0:
            raise ValueError("lambda_mmd must be >= 0")
        if self.mmd_n < 1 or self.mmd_m < 1 or self.batch_size < 1:
            raise ValueError("mmd_n, mmd_m and batch_size must be >= 1")
        if self.kernel_sigma is not None and self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")


def imaging_loss(image, target) -> Tensor:
    """Pixel-mean squared error (mean, so the scale is resolution-free)."""
    image = ad.as_tensor(image)
    target = np.asarray(target, dtype=np.float64)
    if image.shape != target.shape:
        raise ValueError(f"image shape {image.shape} != target shape {target.shape}")
    diff = ad.sub(image, target)
    return ad.tensor_mean(ad.mul(diff, diff))


def _pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    a2 = ad.tensor_sum(ad.mul(a, a), axis=1, keepdims=True)
    b2 = ad.tensor_sum(ad.mul(b, b), axis=1, keepdims=True)
    cross = ad.matmul(a, b.transpose(1, 0))
    return ad.add(ad.sub(a2, ad.mul(cross, 2.0)), b2.transpose(1, 0))


def median_sigma(real, syn) -> float:
    """Median heuristic: median off-diagonal pairwise distance of the merged batch."""
    merged = np.vstack([np.asarray(real, dtype=np.float64), np.asarray(syn, dtype=np.float64)])
    d2 = (
        (merged**2).sum(1)[:, None]
        - 2.0 * merged @ merged.T
        + (merged**2).sum(1)[None, :]
    )
    n = merged.shape[0]
    off = d2[~np.eye(n, dtype=bool)]
    med = float(np.sqrt(np.clip(np.median(off), 0.0, None))) if off.size else 0.0
    return med if med > 0 else 1.0


def mmd_loss(real, syn, sigma: float) -> Tensor:
    """Squared MMD between two feature sets under a Gaussian kernel.

    Expanded over kernel blocks:
    mean k(r, r') - 2 mean k(r, s) + mean k(s, s'),
    k(a, b) = exp(-|a - b|^2 / (2 sigma^2)).  Non-negative up to float
    round-off, zero for identical sets.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    real, syn = ad.as_tensor(real), ad.as_tensor(syn)
    if real.data.ndim != 2 or syn.data.ndim != 2 or not real.shape[0] or not syn.shape[0]:
        raise ValueError("feature sets must be non-empty 2D arrays")
    scale = -1.0 / (2.0 * sigma**2)

    def block(a, b):
        return ad.tensor_mean(ad.exp(ad.mul(_pairwise_sq_dists(a, b), scale)))

    return ad.add(
        ad.sub(block(real, real), ad.mul(block(real, syn), 2.0)), block(syn, syn)
    )


def total_loss(imaging, mmd, lam: float) -> Tensor:
    """Stage-two objective: imaging + lam * mmd."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    return ad.add(ad.as_tensor(imaging), ad.mul(ad.as_tensor(mmd), lam))


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr_max, then cosine decay to lr_min at the last epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.lr_max * epoch / cfg.warmup_epochs
    span = cfg.epochs - 1 - cfg.warmup_epochs
    progress = (epoch - cfg.warmup_epochs) / span if span > 0 else 0.0
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    """First/second moment estimates and the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adamw_step(
    params: TransitParams,
    grads: dict,
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Parameters with no gradient entry only experience weight decay.  A
    non-finite gradient aborts, naming the offending parameter.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(tensor.data)
        elif not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter '{name}'")
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        tensor.data = tensor.data * (1.0 - lr * cfg.weight_decay)
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


@dataclass
class TraceRow:
    epoch: int
    lr: float
    imaging: float
    mmd: float
    total: float


def _grads_of(params: TransitParams) -> dict:
    return {name: t.grad for name, t in params.tensors.items() if t.grad is not None}


def _sequence_loss(cubes, targets, params: TransitParams) -> Tensor:
    images = network.forward(cubes, params)
    losses = [imaging_loss(img, tgt) for img, tgt in zip(images, targets)]
    acc = losses[0]
    for term in losses[1:]:
        acc = ad.add(acc, term)
    return ad.mul(acc, 1.0 / len(losses))


def train_stage1(
    dataset,
    params: TransitParams,
    cfg: TrainConfig,
    state: AdamState | None = None,
    start_epoch: int = 0,
    stop_epoch: int | None = None,
    on_epoch=None,
):
    """Fit to image MSE.  ``dataset`` is a list of (cubes, target_images) pairs.

    Returns (params, state, trace).  The schedule always spans cfg.epochs;
    ``start_epoch``/``stop_epoch`` bound the executed slice so interrupted
    runs resume exactly.  Raises DivergenceError with the last finite
    parameter snapshot attached as ``exc.params`` if the loss blows up.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    state = state or AdamState()
    trace: list[TraceRow] = []
    for epoch in range(start_epoch, cfg.epochs if stop_epoch is None else stop_epoch):
        snapshot = params.copy()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(dataset))
        lr = lr_at(epoch, cfg)
        losses = []
        pending = 0
        params.zero_grad()
        for seq_idx in order:
            cubes, targets = dataset[seq_idx]
            loss = _sequence_loss(cubes, targets, params)
            if not np.isfinite(loss.data):
                exc = DivergenceError(f"non-finite loss at epoch {epoch}")
                exc.params = snapshot
                raise exc
            loss.backward()
            losses.append(float(loss.data))
            pending += 1
            if pending >= cfg.batch_size:
                adamw_step(params, _grads_of(params), state, lr, cfg)
                params.zero_grad()
                pending = 0
        if pending:
            adamw_step(params, _grads_of(params), state, lr, cfg)
            params.zero_grad()
        mean_loss = float(np.mean(losses))
        trace.append(TraceRow(epoch, lr, mean_loss, 0.0, mean_loss))
        if on_epoch is not None:
            on_epoch(epoch, trace[-1], params, state)
    return params, state, trace


def _sample_rows(feature_maps, count: int, rng: np.random.Generator) -> Tensor:
    """Uniform token-level row sample (with replacement) from fused features."""
    pool = ad.concat([fm.tokens for fm in feature_maps], axis=0)
    idx = rng.integers(0, pool.shape[0], size=count)
    return ad.gather_rows(pool, idx)


def train_stage2(
    syn_dataset,
    target_sequences,
    params: TransitParams,
    cfg: TrainConfig,
    state: AdamState | None = None,
    start_epoch: int = 0,
    stop_epoch: int | None = None,
    on_epoch=None,
):
    """Self-supervised fine-tuning against unlabeled target-domain cubes.

    ``target_sequences`` is a list of cube sequences with no ground truth;
    per step the MMD between n target and m synthetic fused-feature rows is
    added to the synthetic imaging loss with weight lambda_mmd.
    """
    if not syn_dataset:
        raise ValueError("synthetic dataset is empty")
    if not target_sequences:
        raise ValueError("no target-domain cubes")
    state = state or AdamState()
    trace: list[TraceRow] = []
    for epoch in range(start_epoch, cfg.epochs if stop_epoch is None else stop_epoch):
        snapshot = params.copy()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(syn_dataset))
        lr = lr_at(epoch, cfg)
        img_losses, mmd_losses, tot_losses = [], [], []
        for seq_idx in order:
            cubes, targets = syn_dataset[seq_idx]
            params.zero_grad()
            img_term = _sequence_loss(cubes, targets, params)
            syn_feats = network.fused_features(cubes, params)
            tgt_seq = target_sequences[int(rng.integers(0, len(target_sequences)))]
            tgt_feats = network.fused_features(tgt_seq, params)
            real_rows = _sample_rows(tgt_feats, cfg.mmd_n, rng)
            syn_rows = _sample_rows(syn_feats, cfg.mmd_m, rng)
            sigma = cfg.kernel_sigma or median_sigma(real_rows.data, syn_rows.data)
            mmd_term = mmd_loss(real_rows, syn_rows, sigma)
            loss = total_loss(img_term, mmd_term, cfg.lambda_mmd)
            if not np.isfinite(loss.data):
                exc = DivergenceError(f"non-finite loss at epoch {epoch}")
                exc.params = snapshot
                raise exc
            loss.backward()
            adamw_step(params, _grads_of(params), state, lr, cfg)
            img_losses.append(float(img_term.data))
            mmd_losses.append(float(mmd_term.data))
            tot_losses.append(float(loss.data))
        trace.append(
            TraceRow(
                epoch,
                lr,
                float(np.mean(img_losses)),
                float(np.mean(mmd_losses)),
                float(np.mean(tot_losses)),
            )
        )
        if on_epoch is not None:
            on_epoch(epoch, trace[-1], params, state)
    return params, state, trace
