"""Mini-batch Adam training with plateau LR decay, early stopping and checkpoints.

One model is trained per (target, side) combination. A run is a pure function
of the manifest contents, both configs and the seeds: batch order and dropout
masks come from generators keyed on (seed, epoch, batch).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dpg_model
from .dpg_model import DpgConfig, DpgModel, init_model, load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError, UsageError
from .pattern_encoder import encode_pair, stack_pairs
from .skeleton_io import (DatasetManifest, KeypointClip, ManifestEntry, Target, check_side,
                          iter_labelled)

log = logging.getLogger(__name__)

IMPROVEMENT_THRESHOLD = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.001
    epochs: int = 30
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    min_lr: float = 1e-6
    early_stop_patience: int = 7
    seed: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if min(self.adam_epsilon, self.plateau_factor, self.min_lr) <= 0:
            raise ConfigError("factor, min_lr and epsilon must be positive")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ConfigError("patience values must be >= 1")


# ---------------------------------------------------------------------------
# optimizer and schedules

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """Bias-corrected Adam update, applied in place to ``params``."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0:
            continue
        step = (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
        if not np.all(np.isfinite(step)):
            raise DivergenceError(f"non-finite Adam update for {name}")
        p -= step
    return params, state


class ReduceOnPlateau:
    """Multiply the LR by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 3, min_lr: float = 1e-6,
                 threshold: float = IMPROVEMENT_THRESHOLD):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                # the floor never lifts a rate that already sits below it
                self.lr = max(self.lr * self.factor, min(self.min_lr, self.lr))
                self.bad_epochs = 0
        return self.lr


class EarlyStopping:
    def __init__(self, patience: int = 7, threshold: float = IMPROVEMENT_THRESHOLD):
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch; True once patience is exhausted."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


# ---------------------------------------------------------------------------
# run log

@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    lr: float
    seconds: float
    batch_losses: list[float] = field(default_factory=list, repr=False)
    batch_sizes: list[int] = field(default_factory=list, repr=False)


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    status: str = "completed"  # completed | early-stopped | diverged
    message: str = ""

    @property
    def best_val_mse(self) -> float:
        if self.best_epoch is None:
            return math.inf
        return next(r.val_mse for r in self.records if r.epoch == self.best_epoch)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_mse", "val_mse", "lr", "seconds"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.train_mse), repr(r.val_mse), repr(r.lr),
                                 f"{r.seconds:.3f}"])


@dataclass
class TrainResult:
    best: DpgModel | None
    last: DpgModel
    log: RunLog


# ---------------------------------------------------------------------------
# data

@dataclass
class EncodedSet:
    coord: np.ndarray  # (N, 128, 128, 3) uint8
    traj: np.ndarray
    targets: np.ndarray  # (N,) float64
    entries: list[ManifestEntry]

    def __len__(self):
        return len(self.targets)


def encode_entries(manifest: DatasetManifest, entries, target, side) -> EncodedSet:
    pairs, targets, kept = [], [], []
    for entry, value in iter_labelled(entries, target, side):
        pairs.append(encode_pair(manifest.load_clip(entry), side))
        targets.append(value)
        kept.append(entry)
    if not pairs:
        return EncodedSet(np.zeros((0, 128, 128, 3), np.uint8), np.zeros((0, 128, 128, 3), np.uint8),
                          np.zeros(0), [])
    coord, traj = stack_pairs(pairs)
    return EncodedSet(coord, traj, np.asarray(targets, dtype=np.float64), kept)


def evaluate_mse(model: DpgModel, data: EncodedSet, batch_size: int = 32) -> float:
    pred = dpg_model.predict(model, data.coord, data.traj, batch_size).astype(np.float64)
    return float(np.mean((pred - data.targets) ** 2))


# ---------------------------------------------------------------------------
# training loop

def _write_run_config(run_dir: Path, model_config: DpgConfig, train_config: TrainConfig):
    doc = {"model": model_config.to_dict(), "train": asdict(train_config)}
    (run_dir / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def train(manifest: DatasetManifest, target, side: str, train_config: TrainConfig | None = None,
          model_config: DpgConfig | None = None, run_dir=None,
          train_set: EncodedSet | None = None, val_set: EncodedSet | None = None) -> TrainResult:
    """Fit one (target, side) model and keep the checkpoint with the lowest validation MSE.

    Pre-encoded ``train_set``/``val_set`` may be passed to skip clip loading.
    """
    target = Target.parse(target)
    side = check_side(side)
    tcfg = train_config or TrainConfig()
    mcfg = model_config or DpgConfig()
    mcfg.target, mcfg.side = target.value, side

    if train_set is None:
        train_set = encode_entries(manifest, manifest.partition("train"), target, side)
    if val_set is None:
        val_set = encode_entries(manifest, manifest.partition("val"), target, side)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError(f"train and val partitions need labelled clips for {target.value}_{side} "
                          f"(got {len(train_set)} train, {len(val_set)} val)")

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_run_config(run_dir, mcfg, tcfg)

    model = init_model(mcfg)
    params = {k: t.data for k, t in model.params.items()}
    adam = AdamState()
    scheduler = ReduceOnPlateau(tcfg.learning_rate, tcfg.plateau_factor, tcfg.plateau_patience,
                                tcfg.min_lr)
    stopper = EarlyStopping(tcfg.early_stop_patience)
    run_log = RunLog()
    best: DpgModel | None = None
    lr = tcfg.learning_rate
    n = len(train_set)

    def metadata(epoch, val):
        return {"epoch": epoch, "val_mse": val, "train": asdict(tcfg), "status": run_log.status,
                "n_train": n, "n_val": len(val_set)}

    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([tcfg.seed, epoch]).permutation(n)
        losses, sizes = [], []
        try:
            for b, start in enumerate(range(0, n, tcfg.batch_size)):
                idx = order[start:start + tcfg.batch_size]
                loss, grads, _ = dpg_model.loss_and_grads(
                    model, train_set.coord[idx], train_set.traj[idx], train_set.targets[idx],
                    "train", np.random.default_rng([tcfg.seed, epoch, b]))
                adam_step(params, grads, adam, lr, tcfg.adam_betas, tcfg.adam_epsilon)
                losses.append(loss)
                sizes.append(len(idx))
            val = evaluate_mse(model, val_set, tcfg.batch_size)
            if not math.isfinite(val):
                raise DivergenceError("non-finite validation loss")
        except DivergenceError as exc:
            run_log.status, run_log.message = "diverged", str(exc)
            log.error("epoch %d diverged: %s", epoch, exc)
            break
        train_mse = float(np.dot(losses, sizes) / n)
        run_log.records.append(EpochRecord(epoch, train_mse, val, lr, time.perf_counter() - t0,
                                           losses, sizes))
        log.info("epoch %d  train %.6g  val %.6g  lr %.3g", epoch, train_mse, val, lr)

        if val < stopper.best - IMPROVEMENT_THRESHOLD:
            run_log.best_epoch = epoch
            best = model.copy()
            if run_dir is not None:
                save_checkpoint(best, run_dir / "best.dpgc", metadata(epoch, val))
        lr = scheduler.step(val)
        if stopper.step(val) and epoch < tcfg.epochs:
            run_log.status = "early-stopped"
            log.info("early stop after epoch %d", epoch)
            break

    if run_dir is not None:
        run_log.write_csv(run_dir / "log.csv")
        last_epoch = run_log.records[-1].epoch if run_log.records else 0
        last_val = run_log.records[-1].val_mse if run_log.records else None
        save_checkpoint(model, run_dir / "last.dpgc", metadata(last_epoch, last_val))
    if best is not None:
        best.metadata = metadata(run_log.best_epoch, run_log.best_val_mse)
    return TrainResult(best, model, run_log)


# ---------------------------------------------------------------------------
# inference

def _as_model(checkpoint) -> DpgModel:
    return checkpoint if isinstance(checkpoint, DpgModel) else load_checkpoint(checkpoint)


def _check_request(model: DpgModel, side: str, target=None):
    if side != model.config.side:
        raise UsageError(f"checkpoint was trained for side {model.config.side}, not {side}")
    if target is not None and Target.parse(target).value != model.config.target:
        raise UsageError(f"checkpoint was trained for {model.config.target}, not {target}")


def predict_batch(checkpoint, clips: list[KeypointClip], side: str, target=None,
                  batch_size: int = 32) -> np.ndarray:
    model = _as_model(checkpoint)
    _check_request(model, side, target)
    if not clips:
        return np.zeros(0)
    coord, traj = stack_pairs(encode_pair(c, side) for c in clips)
    return dpg_model.predict(model, coord, traj, batch_size).astype(np.float64)


def predict(checkpoint, clip: KeypointClip, side: str, target=None) -> float:
    return float(predict_batch(checkpoint, [clip], side, target)[0])
