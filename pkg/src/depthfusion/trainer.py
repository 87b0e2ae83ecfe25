"""Adam training loop with stepped learning-rate decay, per-epoch validation
in metric depth, checkpointing and JSON-lines logging.

Everything is reproducible under fixed seeds: the batch order derives from
(seed, epoch), augmentation from (seed, epoch, batch), so resuming from a
checkpoint continues the exact trajectory of an uninterrupted run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from . import metrics as M
from . import tensor as T
from .losses import LossWeights, PixelLossKind, loss_total
from .model import (FusionMode, Model, ModelConfig, build_model,
                    encode_sparse, load_checkpoint, save_checkpoint)
from .tensor import Tensor


class TrainingAborted(RuntimeError):
    """NaN gradients or loss; the last good checkpoint is retained."""


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr: float = 1e-4
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    lr0: float = 1e-4
    lr_decay_factor: float = 0.2
    lr_decay_every: int = 7
    loss_kind: PixelLossKind = PixelLossKind.L1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    augment: bool = True
    shuffle_seed: int = 0
    augment_seed: int = 1

    def __post_init__(self):
        if isinstance(self.loss_kind, str):
            self.loss_kind = PixelLossKind(self.loss_kind)
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant decay: lr0 * factor^floor((epoch-1)/every), epoch 1-based."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    return cfg.lr0 * cfg.lr_decay_factor ** ((epoch - 1) // cfg.lr_decay_every)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: OptimState):
    """Bias-corrected Adam update, in place on the weight tensors."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingAborted(f"non-finite gradient for weight {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = g.astype(np.float32, copy=False)
        m = state.m.setdefault(name, np.zeros_like(p.data, dtype=np.float32))
        v = state.v.setdefault(name, np.zeros_like(p.data, dtype=np.float32))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.epsilon)).astype(p.dtype)


def batch_to_tensors(samples, model: Model):
    """Stack samples into network inputs and the reciprocal-depth target."""
    codec = model.config.codec()
    rgb = np.stack([s.rgb.transpose(2, 0, 1) for s in samples]).astype(model.dtype)
    target = np.stack([codec.encode(s.gt)[None] for s in samples]).astype(model.dtype)
    sparse = None
    if model.config.fusion_mode is not FusionMode.RGB_ONLY:
        sparse = np.stack([encode_sparse(s.sparse, codec)[None]
                           for s in samples]).astype(model.dtype)
    return (Tensor(rgb), None if sparse is None else Tensor(sparse),
            Tensor(target))


def train_step(model: Model, samples, cfg: TrainConfig, state: OptimState) -> float:
    rgb, sparse, target = batch_to_tensors(samples, model)
    model.zero_grad()
    pred = model.predict(rgb, sparse)
    loss = loss_total(pred, target, cfg.loss_weights, cfg.loss_kind)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingAborted("non-finite training loss")
    T.backward(loss)
    grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
    adam_step(model.params, grads, state)
    return value


def validate(model: Model, val_dir) -> M.MetricsReport:
    reports = []
    for sample_id in D.list_sample_ids(val_dir):
        s = D.load_sample(val_dir, sample_id)
        sparse = None if model.config.fusion_mode is FusionMode.RGB_ONLY else s.sparse
        depth = model.predict_depth(s.rgb, sparse)
        reports.append(M.compute_metrics(depth, np.clip(
            s.gt, model.config.d_min, model.config.d_max)))
    return M.mean_report(reports)


def _moments_as_tensors(state: OptimState):
    named = {}
    for name, arr in state.m.items():
        named[f"adam.m.{name}"] = arr
    for name, arr in state.v.items():
        named[f"adam.v.{name}"] = arr
    return named


def _restore_moments(model: Model, moments: dict, state: OptimState):
    for name, arr in moments.items():
        if name.startswith("adam.m."):
            state.m[name[len("adam.m."):]] = arr.astype(np.float32)
        elif name.startswith("adam.v."):
            state.v[name[len("adam.v."):]] = arr.astype(np.float32)


def train(train_cfg: TrainConfig, model_cfg: ModelConfig, train_dir,
          val_dir=None, out_dir="runs/run", resume=None, log_fn=None):
    """Full training run; returns (model, per-epoch log records).

    Writes ``log.jsonl`` and one checkpoint per epoch under ``out_dir``.
    ``resume`` names a checkpoint written by this function.
    """
    if not D.list_sample_ids(train_dir):
        raise ValueError(f"training directory {train_dir} is empty")
    os.makedirs(out_dir, exist_ok=True)
    start_epoch = 1
    state = OptimState()
    if resume is not None:
        model, extra, moments = load_checkpoint(resume)
        state.t = int(extra["adam_t"])
        start_epoch = int(extra["epoch"]) + 1
        _restore_moments(model, moments, state)
        log = []
    else:
        model = build_model(model_cfg)
        log = []

    log_path = os.path.join(out_dir, "log.jsonl")
    mode = "a" if resume is not None else "w"
    with open(log_path, mode, encoding="utf-8") as log_file:
        for epoch in range(start_epoch, train_cfg.epochs + 1):
            state.lr = lr_schedule(epoch, train_cfg)
            losses = []
            batches = D.batch_iterator(train_dir, train_cfg.batch_size,
                                       seed=train_cfg.shuffle_seed, epoch=epoch)
            for b_idx, samples in enumerate(batches):
                if train_cfg.augment:
                    rng = np.random.default_rng(
                        [train_cfg.augment_seed, epoch, b_idx])
                    samples = [D.augment(s, D.AugmentConfig(), rng)
                               for s in samples]
                # on TrainingAborted the previous epoch checkpoint remains
                # on disk as the last good state
                losses.append(train_step(model, samples, train_cfg, state))
            record = {"epoch": epoch, "lr": state.lr,
                      "train_loss": float(np.mean(losses))}
            if val_dir is not None:
                record["val"] = validate(model, val_dir).as_dict()
            log.append(record)
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()
            save_checkpoint(
                os.path.join(out_dir, f"epoch_{epoch:03d}.ckpt"), model,
                extra={"epoch": epoch, "lr": state.lr, "adam_t": state.t},
                moments=_moments_as_tensors(state))
            if log_fn:
                log_fn(record)
    save_checkpoint(os.path.join(out_dir, "last.ckpt"), model,
                    extra={"epoch": train_cfg.epochs, "lr": state.lr,
                           "adam_t": state.t},
                    moments=_moments_as_tensors(state))
    return model, log
