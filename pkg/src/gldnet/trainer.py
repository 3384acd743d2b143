"""Optimization loop: time-domain MSE, Adam updates, validation, checkpoints.

Runs are bitwise reproducible for a fixed seed and precision: batch
sampling is seeded per step, parameter init is seeded, and resuming from a
checkpoint continues the step counter so the batch sequence matches an
unbroken run.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .checkpoint import load_checkpoint, restore_adam, restore_model, save_checkpoint
from .data import Manifest, sample_batch
from .network import ModelConfig, gldnet_forward
from .optim import AdamState, adam_step, clip_grad_norm
from .signal import read_wav
from .tensor import ContractError, DimensionError, Tensor, tmean


@dataclass
class TrainConfig:
    lr: float = 2e-4
    batch: int = 16
    max_steps: int = 1000
    eval_every: int = 100
    seed: int = 0
    precision: int = 32
    grad_clip: float | None = None
    crop_len: int = 16000

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.batch < 1:
            raise ContractError(f"batch must be >= 1, got {self.batch}")
        if self.precision not in (32, 64):
            raise ContractError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self):
        return asdict(self)


class TrainingAbort(RuntimeError):
    """Raised when the loss goes non-finite; names the first bad tensor."""


def mse_loss(pred: Tensor, target):
    """Mean over all samples of the squared difference; differentiable."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {t.shape}")
    diff = pred - Tensor(t.astype(pred.dtype))
    return tmean(diff * diff)


def find_first_nonfinite(loss: Tensor):
    """First tensor (in forward order) holding non-finite values, if any."""
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    for node in topo:  # post-order = forward order
        if not np.isfinite(node.data).all():
            label = node.name or node._op or "leaf"
            return f"{label} (shape {node.shape})"
    return None


def _pairs_to_arrays(batch, dtype):
    noisy = np.stack([p[0].samples for p in batch]).astype(dtype)
    clean = np.stack([p[1].samples for p in batch]).astype(dtype)
    return noisy, clean


def train_step(model, model_cfg: ModelConfig, batch, opt: AdamState, cfg: TrainConfig):
    """One forward/backward/update on a list of (noisy, clean) pairs."""
    noisy, clean = _pairs_to_arrays(batch, cfg.dtype)
    params = list(model.named_parameters())
    for _, p in params:
        p.zero_grad()
    pred = gldnet_forward(noisy, model, model_cfg, training=True)
    loss = mse_loss(pred, clean)
    if not np.isfinite(loss.data):
        culprit = find_first_nonfinite(loss)
        raise TrainingAbort(f"non-finite loss at step {opt.step + 1}; first bad tensor: {culprit}")
    loss.backward()
    if cfg.grad_clip is not None:
        clip_grad_norm(params, cfg.grad_clip)
    adam_step(params, opt)
    return float(loss.data)


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)  # (step, train_loss, val_loss)
    best_step: int = 0
    best_val: float = float("inf")
    best_path: str = ""

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step\ttrain_loss\tval_loss\n")
            for step, tr, vl in self.entries:
                fh.write(f"{step}\t{tr:.8e}\t{vl:.8e}\n")


def evaluate_loss(model, model_cfg, batches, cfg: TrainConfig):
    """Mean eval-mode MSE over a list of batches."""
    losses = []
    for batch in batches:
        noisy, clean = _pairs_to_arrays(batch, cfg.dtype)
        pred = gldnet_forward(noisy, model, model_cfg, training=False)
        losses.append(float(mse_loss(pred, clean).data))
    return float(np.mean(losses))


def fit(model, model_cfg: ModelConfig, cfg: TrainConfig, train_manifest: Manifest,
        val_manifest: Manifest, out_dir, reader=read_wav, resume_from=None):
    """Seeded training with periodic validation; keeps the best checkpoint.

    Returns a TrainLog whose entries hold one (step, train, val) record per
    validation event. ``resume_from`` restores parameters and the Adam
    state and continues the step counter without reset.
    """
    os.makedirs(out_dir, exist_ok=True)
    opt = AdamState(lr=cfg.lr)
    start = 0
    if resume_from is not None:
        header, arrays = load_checkpoint(resume_from)
        restore_model(model, arrays)
        restore_adam(opt, header, arrays)
        start = int(header["step"])
    val_batches = [
        sample_batch(val_manifest, cfg.batch, seed=cfg.seed ^ 0x5EED, crop_len=cfg.crop_len,
                     reader=reader)
    ]
    log = TrainLog()
    best_path = os.path.join(out_dir, "best.ckpt")
    for step in range(start + 1, cfg.max_steps + 1):
        batch = sample_batch(train_manifest, cfg.batch, seed=cfg.seed + step,
                             crop_len=cfg.crop_len, reader=reader)
        train_loss = train_step(model, model_cfg, batch, opt, cfg)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            val_loss = evaluate_loss(model, model_cfg, val_batches, cfg)
            log.entries.append((step, train_loss, val_loss))
            if val_loss < log.best_val:
                log.best_val = val_loss
                log.best_step = step
                save_checkpoint(best_path, model, model_cfg, step=step, adam=opt,
                                train_cfg=cfg.to_dict())
                log.best_path = best_path
    save_checkpoint(os.path.join(out_dir, "last.ckpt"), model, model_cfg,
                    step=cfg.max_steps, adam=opt, train_cfg=cfg.to_dict())
    log.write(os.path.join(out_dir, "train_log.tsv"))
    return log
