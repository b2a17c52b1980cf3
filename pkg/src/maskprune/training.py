"""SGD-with-momentum training loop with step-decay schedule and metrics.

One epoch = deterministic shuffled full batches under the run seed.  All
regularization flows through the objective; the optimizer applies the same
update to weights and scaling factors (optionally freezing the latter).
A non-finite loss aborts immediately, naming the first bad node.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, augment
from .objective import ObjectiveConfig, cross_entropy, total_objective
from .pruning import PruneManager
from .tensor import Tape, first_nonfinite

METRICS_SCHEMA_VERSION = 1


class TrainDivergence(RuntimeError):
    """Raised when the loss goes non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 0.1
    momentum: float = 0.9
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 0.1
    seed: int = 0
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    snapshot_every: int = 100
    freeze_gates: bool = False
    augment: bool = False
    eval_batch: int = 256

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not (0.0 < self.decay_factor < 1.0):
            raise ValueError(f"decay_factor must lie in (0,1), got {self.decay_factor}")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError(f"decay_epochs must be strictly increasing: "
                             f"{self.decay_epochs}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Base rate decayed once per passed decay epoch."""
    hits = sum(1 for d in cfg.decay_epochs if epoch >= d)
    return cfg.base_lr * cfg.decay_factor ** hits


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                      velocity: dict[str, np.ndarray], lr: float,
                      momentum: float) -> tuple[dict, dict]:
    """Classical momentum: v <- m*v + g; p <- p - lr*v.  Updates in place."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        v = momentum * v + g
        velocity[name] = v
        p -= lr * v
    return params, velocity


def train_step(model, xb, yb, cfg: TrainConfig, velocity: dict, lr: float,
               step: int) -> dict[str, float]:
    """One forward/backward/update on a single batch; returns the loss parts."""
    tape = Tape()
    logits = model.forward(tape, xb, mode="train")
    task = cross_entropy(logits, model.flatten_labels(yb))
    K = sum(g.dim for g in model.gates())
    if K > 0:
        total, parts = total_objective(
            task, model.alpha_nodes(tape), model.l2_groups(tape),
            model.hinge_gates(tape), cfg.objective, K)
    else:
        total, parts = task, {"task_loss": task.item(), "l1_term": 0.0,
                              "l2_term": 0.0, "hinge_term": 0.0}
    if not np.all(np.isfinite(total.data)):
        bad = first_nonfinite(total)
        raise TrainDivergence(
            f"non-finite loss at step {step}: first non-finite tensor is "
            f"op={bad.op!r} (node #{bad.seq}, shape {bad.shape})")
    grads = tape.backward(total)
    trainable = {n: p for n, p in model.params().items()
                 if not (cfg.freeze_gates and n.endswith(".alpha"))}
    sgd_momentum_step(trainable, {n: grads[n].data for n in trainable},
                      velocity, lr, cfg.momentum)
    return parts


def evaluate(model, ds: Dataset, batch_size: int = 256) -> dict[str, float]:
    """Classification error rate, or perplexity for next-token models."""
    if len(ds) == 0:
        raise ValueError("evaluate: empty dataset")
    if model.task == "lm":
        total_nll, total_tokens = 0.0, 0
        for lo in range(0, len(ds), batch_size):
            xb = ds.inputs[lo:lo + batch_size]
            yb = model.flatten_labels(ds.labels[lo:lo + batch_size])
            tape = Tape()
            logits = model.forward(tape, xb, mode="eval")
            nll = cross_entropy(logits, yb).item()
            total_nll += nll * len(yb)
            total_tokens += len(yb)
        return {"test_perplexity": float(np.exp(total_nll / total_tokens))}
    wrong = 0
    for lo in range(0, len(ds), batch_size):
        xb = ds.inputs[lo:lo + batch_size]
        yb = ds.labels[lo:lo + batch_size]
        tape = Tape()
        logits = model.forward(tape, xb, mode="eval")
        wrong += int((logits.data.argmax(axis=1) != yb).sum())
    return {"test_error": wrong / len(ds)}


def train(model, train_ds: Dataset, test_ds: Dataset, cfg: TrainConfig,
          out_dir: str | None = None, manager: PruneManager | None = None,
          checkpoint_meta: dict | None = None) -> list[dict]:
    """Run the full loop; returns (and optionally writes) per-epoch metrics."""
    rng = np.random.default_rng(cfg.seed)
    velocity: dict[str, np.ndarray] = {}
    if manager is None and model.gates():
        manager = PruneManager(model)
    metrics: list[dict] = []
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.jsonl"), "w")

    n = len(train_ds)
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            order = rng.permutation(n)
            sums = {"task_loss": 0.0, "l1_term": 0.0, "l2_term": 0.0,
                    "hinge_term": 0.0}
            batches = 0
            for lo in range(0, n - cfg.batch_size + 1, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                xb = train_ds.inputs[idx]
                yb = train_ds.labels[idx]
                if cfg.augment:
                    xb = augment(xb, seed=int(rng.integers(2 ** 63)))
                parts = train_step(model, xb, yb, cfg, velocity, lr, step)
                for k in sums:
                    sums[k] += parts[k]
                batches += 1
                step += 1
                if manager is not None and step % cfg.snapshot_every == 0:
                    manager.snapshot(step)
            report = manager.snapshot(step) if manager is not None else None
            record = {
                "schema_version": METRICS_SCHEMA_VERSION,
                "epoch": epoch,
                "lr": lr,
                "task_loss": sums["task_loss"] / max(batches, 1),
                "l1_term": sums["l1_term"] / max(batches, 1),
                "l2_term": sums["l2_term"] / max(batches, 1),
                "hinge_term": sums["hinge_term"] / max(batches, 1),
                "active_counts": {g: list(v) for g, v in report.per_group.items()}
                if report else {},
                "pruned_ratio": report.pruned_ratio if report else 0.0,
            }
            record.update(evaluate(model, test_ds, cfg.eval_batch))
            metrics.append(record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
                metrics_fh.flush()
            if out_dir is not None:
                meta = dict(checkpoint_meta or {})
                meta.update({"epoch": epoch, "step": step})
                if manager is not None:
                    meta["events"] = [list(e) for e in manager.events]
                save_checkpoint(os.path.join(out_dir, "checkpoint"),
                                model.persistent_arrays(), model.gates(), meta)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return metrics
