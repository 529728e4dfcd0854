#!/usr/bin/env python3
"""
Training objective and the three-phase progressive unfreezing schedule.

Per step the loss is

    0.5 * (base_1 + base_2) + alpha_rd * (seq_1 - seq_2) ** 2

where each base = seq + l_coord*coord + l_pair*pair + l_dock*dock +
l_shadow*shadow and the two passes differ only in their dropout masks.

Phases run in order (backend frozen, top-k backend layers trainable, all
trainable). Within a phase the learning rate decays per epoch and training
stops early when validation loss fails to improve for `patience` epochs.
The best validation snapshot across all phases is restored at the end.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from adapter_head import loss_seq
from errors import EmptyDataset
from model import Encoded, EvoStructModel, ForwardResult, Sample
from numeric_core import Adam, RngStream, Tensor, abs_, concat, log_softmax, min_, norm, relu, smooth_l1

logger = logging.getLogger(__name__)

UNFREEZE_ACTIONS = ("none", "top", "all")


@dataclass(frozen=True)
class LossWeights:
    coord: float = 1.376
    pair: float = 0.525
    dock: float = 0.5
    shadow: float = 0.3
    rdrop: float = 1.0
    tau_pair: float = 0.1
    d_dock: float = 6.6

    def __post_init__(self):
        if min(self.coord, self.pair, self.dock, self.shadow, self.rdrop, self.d_dock) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.tau_pair <= 0:
            raise ValueError("tau_pair must be positive")


@dataclass(frozen=True)
class PhaseConfig:
    max_epochs: int
    lr: float
    unfreeze: str = "none"

    def __post_init__(self):
        if self.max_epochs < 0 or self.lr <= 0:
            raise ValueError("phase needs max_epochs >= 0 and lr > 0")
        if self.unfreeze not in UNFREEZE_ACTIONS:
            raise ValueError(f"unfreeze must be one of {UNFREEZE_ACTIONS}, got {self.unfreeze!r}")


DEFAULT_PHASES = (
    PhaseConfig(50, 1e-4, "none"),
    PhaseConfig(40, 5e-5, "top"),
    PhaseConfig(30, 1e-5, "all"),
)


@dataclass(frozen=True)
class ScheduleConfig:
    phases: tuple[PhaseConfig, ...] = DEFAULT_PHASES
    decay: float = 0.9
    patience: int = 10
    batch_size: int = 4
    clip: float = 0.5

    def __post_init__(self):
        phases = tuple(p if isinstance(p, PhaseConfig) else PhaseConfig(**p) for p in self.phases)
        object.__setattr__(self, "phases", phases)
        lrs = [p.lr for p in phases]
        if any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ValueError(f"phase learning rates must be non-increasing, got {lrs}")
        if not 0 < self.decay <= 1 or self.patience < 1 or self.batch_size < 1 or self.clip <= 0:
            raise ValueError("decay in (0, 1], patience >= 1, batch_size >= 1, clip > 0 required")

    def lr_at(self, phase: int, epoch: int) -> float:
        """Learning rate of 1-based epoch `epoch` within `phase`."""
        return self.phases[phase].lr * self.decay ** (epoch - 1)


# --- Loss terms --------------------------------------------------------------

def loss_coord(pred_ca: Tensor, true_ca: np.ndarray, beta: float = 1.0) -> Tensor:
    """Smooth-l1 over xyz, summed per residue and averaged over CDR positions."""
    residual = pred_ca - Tensor(np.asarray(true_ca, dtype=pred_ca.dtype))
    return smooth_l1(residual, beta).sum() * (1.0 / max(len(true_ca), 1))


def loss_pair(cdr_means: Sequence[Tensor], antigen_means: Sequence[Tensor], tau: float) -> Tensor:
    """InfoNCE over a batch: each CDR embedding should pick its own antigen among the batch."""
    d = cdr_means[0].shape[-1]
    cdr = concat([m.reshape(1, d) for m in cdr_means], axis=0)
    ag = concat([m.reshape(1, d) for m in antigen_means], axis=0)
    scores = cdr @ ag.T * (1.0 / tau)
    n = len(cdr_means)
    return -log_softmax(scores, axis=-1)[np.arange(n), np.arange(n)].mean()


def _distances(pred_ca: Tensor, points: np.ndarray) -> Tensor:
    n, m = pred_ca.shape[0], len(points)
    diff = pred_ca.reshape(n, 1, 3) - Tensor(np.asarray(points, dtype=pred_ca.dtype).reshape(1, m, 3))
    return norm(diff, axis=-1)


def loss_dock(pred_ca: Tensor, epitope_ca: np.ndarray, d_dock: float) -> Tensor:
    """Mean hinge on each CDR residue's distance to its nearest epitope residue; 0 for an empty epitope."""
    if len(epitope_ca) == 0:
        return Tensor(np.zeros((), dtype=pred_ca.dtype))
    return relu(min_(_distances(pred_ca, epitope_ca), axis=-1) - d_dock).mean()


def loss_shadow(pred_ca: Tensor, true_ca: np.ndarray, epitope_ca: np.ndarray) -> Tensor:
    """Mean absolute deviation of the CDR-epitope distance matrix; 0 for an empty epitope."""
    if len(epitope_ca) == 0:
        return Tensor(np.zeros((), dtype=pred_ca.dtype))
    true_dist = np.linalg.norm(np.asarray(true_ca)[:, None, :] - np.asarray(epitope_ca)[None, :, :], axis=-1)
    return abs_(_distances(pred_ca, epitope_ca) - Tensor(true_dist.astype(pred_ca.dtype))).mean()


def rdrop_total(base_1, base_2, seq_1, seq_2, alpha: float):
    """Average of the two base losses plus alpha * squared seq-loss difference. Works on floats and Tensors."""
    gap = seq_1 - seq_2
    return (base_1 + base_2) * 0.5 + gap * gap * alpha


@dataclass
class StepStats:
    total: float = 0.0
    seq: float = 0.0
    coord: float = 0.0
    pair: float = 0.0
    dock: float = 0.0
    shadow: float = 0.0
    rdrop_penalty: float = 0.0
    skipped_epitope: int = 0
    grad_norm: float = 0.0


def _sum(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def _mean(terms: list[Tensor]) -> Tensor:
    return _sum(terms) * (1.0 / len(terms))


def structure_terms(encoded: Sequence[Encoded], batch: Sequence[Sample], weights: LossWeights) -> tuple[Optional[Tensor], StepStats]:
    """Dropout-independent part of the base loss: weighted coord, pair, dock and shadow terms."""
    stats = StepStats()
    parts: list[Tensor] = []
    per_sample = {"coord": [], "dock": [], "shadow": []}
    for enc, sample in zip(encoded, batch):
        if weights.coord:
            per_sample["coord"].append(loss_coord(enc.cdr_ca_hat, sample.true_cdr_ca))
        if len(sample.epitope_ca) == 0:
            stats.skipped_epitope += 1
        if weights.dock:
            per_sample["dock"].append(loss_dock(enc.cdr_ca_hat, sample.epitope_ca, weights.d_dock))
        if weights.shadow:
            per_sample["shadow"].append(loss_shadow(enc.cdr_ca_hat, sample.true_cdr_ca, sample.epitope_ca))
    for name, terms in per_sample.items():
        if terms:
            value = _mean(terms)
            setattr(stats, name, value.item())
            parts.append(value * getattr(weights, name))
    if weights.pair:
        paired = [(e.h_cdr_mean, e.h_ag_mean) for e, s in zip(encoded, batch)
                  if e.h_ag_mean is not None and len(s.epitope_ca)]
        if len(paired) > 1:
            value = loss_pair([c for c, _ in paired], [a for _, a in paired], weights.tau_pair)
            stats.pair = value.item()
            parts.append(value * weights.pair)
    return (_sum(parts) if parts else None), stats


def total_loss(
    model: EvoStructModel,
    batch: Sequence[Sample],
    weights: LossWeights,
    rng: Optional[RngStream] = None,
    training: bool = True,
) -> tuple[Tensor, StepStats]:
    """R-Drop objective over a batch. In eval mode both passes coincide and the penalty is 0."""
    encoded = [model.encode(s) for s in batch]
    structural, stats = structure_terms(encoded, batch, weights)

    seq_losses = []
    for tag in ("pass1", "pass2"):
        pass_rng = rng.child(tag) if rng is not None else None
        outs: list[ForwardResult] = [model.decode(e, rng=pass_rng, training=training) for e in encoded]
        seq_losses.append(_mean([loss_seq(o.logits, s.labels) for o, s in zip(outs, batch)]))
    seq_1, seq_2 = seq_losses
    base_1 = seq_1 + structural if structural is not None else seq_1
    base_2 = seq_2 + structural if structural is not None else seq_2
    loss = rdrop_total(base_1, base_2, seq_1, seq_2, weights.rdrop)

    stats.seq = 0.5 * (seq_1.item() + seq_2.item())
    stats.rdrop_penalty = weights.rdrop * (seq_1.item() - seq_2.item()) ** 2
    stats.total = loss.item()
    return loss, stats


def validation_loss(model: EvoStructModel, samples: Sequence[Sample], weights: LossWeights, batch_size: int) -> float:
    values = []
    for start in range(0, len(samples), batch_size):
        loss, _ = total_loss(model, samples[start:start + batch_size], weights, training=False)
        values.append(loss.item())
    return float(np.mean(values))


# --- Schedule ----------------------------------------------------------------

@dataclass
class TrainResult:
    best_val: float
    best_phase: int
    best_epoch: int
    records: list[dict] = field(default_factory=list)
    best_state: dict = field(default_factory=dict)


def apply_unfreeze(model: EvoStructModel, action: str, top_k: int) -> None:
    backend = model.backend
    if action == "none":
        backend.freeze_all()
    elif action == "top":
        backend.unfreeze_top(min(top_k, getattr(backend, "n_layers", 0)))
    else:
        backend.unfreeze_all()


def _batches(samples: Sequence[Sample], order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield [samples[i] for i in order[start:start + size]]


def run_phase_schedule(
    model: EvoStructModel,
    train: Sequence[Sample],
    val: Optional[Sequence[Sample]],
    weights: LossWeights,
    schedule: ScheduleConfig,
    seed: int = 0,
    unfreeze_top: int = 4,
    log_path: Optional[Path | str] = None,
    evaluate: Optional[Callable[[EvoStructModel, int, int], float]] = None,
) -> TrainResult:
    """
    Train through every phase and restore the best validation snapshot.

    evaluate(model, phase, epoch) overrides the validation loss; phase is
    1-based like the log records. One JSON object per epoch is appended to
    log_path.
    """
    if not train:
        raise EmptyDataset("no training samples")
    if not val:
        logger.warning("No validation split; early stopping uses the training set")
        val = train

    root = RngStream(seed).child("train")
    result = TrainResult(best_val=float("inf"), best_phase=0, best_epoch=0)
    log_file = open(log_path, "w") if log_path is not None else None
    try:
        for phase_idx, phase in enumerate(schedule.phases):
            phase_no = phase_idx + 1
            apply_unfreeze(model, phase.unfreeze, unfreeze_top)
            optimizer = Adam(model.parameters(), clip=schedule.clip)
            logger.info(f"Phase {phase_no}: up to {phase.max_epochs} epochs at lr {phase.lr:g}, "
                        f"{model.frozen_count()} frozen weights")
            phase_best = float("inf")
            bad_epochs = 0
            for epoch in range(1, phase.max_epochs + 1):
                lr = schedule.lr_at(phase_idx, epoch)
                order = root.child(f"shuffle.{phase_no}.{epoch}").generator().permutation(len(train))
                steps: list[StepStats] = []
                for step, batch in enumerate(_batches(train, order, schedule.batch_size)):
                    step_rng = root.child(f"dropout.{phase_no}.{epoch}.{step}")
                    loss, stats = total_loss(model, batch, weights, rng=step_rng, training=True)
                    loss.backward()
                    stats.grad_norm = optimizer.step(lr)
                    steps.append(stats)

                val_loss = evaluate(model, phase_no, epoch) if evaluate else validation_loss(
                    model, val, weights, schedule.batch_size)
                record = _epoch_record(phase_no, epoch, lr, steps, val_loss, model.frozen_count())
                result.records.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record, sort_keys=True) + "\n")
                    log_file.flush()
                logger.info(f"phase {phase_no} epoch {epoch}: train {record['train_loss']:.4f} "
                            f"val {val_loss:.4f} lr {lr:.3g}")

                if val_loss < result.best_val:
                    result.best_val = val_loss
                    result.best_phase, result.best_epoch = phase_no, epoch
                    result.best_state = model.state_arrays()
                if val_loss < phase_best:
                    phase_best = val_loss
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= schedule.patience:
                        logger.info(f"Early stop in phase {phase_no} at epoch {epoch}")
                        break
    finally:
        if log_file is not None:
            log_file.close()

    if result.best_state:
        model.load_state(result.best_state)
        logger.info(f"Restored best model from phase {result.best_phase} epoch {result.best_epoch} "
                    f"(val {result.best_val:.4f})")
    return result


def _epoch_record(phase: int, epoch: int, lr: float, steps: list[StepStats], val_loss: float,
                  frozen: int) -> dict:
    def avg(name: str) -> float:
        return float(np.mean([getattr(s, name) for s in steps])) if steps else 0.0

    penalties = [s.rdrop_penalty for s in steps]
    return {
        "phase": phase,
        "epoch": epoch,
        "lr": lr,
        "train_loss": avg("total"),
        "seq": avg("seq"),
        "coord": avg("coord"),
        "pair": avg("pair"),
        "dock": avg("dock"),
        "shadow": avg("shadow"),
        "rdrop_penalty": avg("rdrop_penalty"),
        "rdrop_penalty_positive": sum(p > 0 for p in penalties),
        "rdrop_penalty_zero": sum(p == 0 for p in penalties),
        "skipped_epitope": sum(s.skipped_epitope for s in steps),
        "grad_norm": avg("grad_norm"),
        "steps": len(steps),
        "val_loss": val_loss,
        "frozen_param_count": frozen,
    }
