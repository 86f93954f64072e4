"""Mini-batch training loop with a plateau learning-rate schedule."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .checkpoint import save_checkpoint
from .model import DTYPES, Graph, ModelSpec, ParamStore, forward, forward_graph, init_params
from .optim import AdamState, PlateauScheduler, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSpec:
    batch_size: int = 32
    lr_initial: float = 2e-4
    max_iterations: int = 200_000
    plateau_epochs: int = 5
    lr_decay: float = 0.5
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    mode: str = "f32"
    epoch_iterations: int | None = None  # None: one pass over the training set
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    keep_best: bool = False  # with a validation set, return the lowest-val-loss parameters

    def __post_init__(self):
        if not self.lr_initial >= 0:
            raise ValueError("lr_initial must be >= 0")
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in (0, 1)")
        if self.batch_size < 1 or self.max_iterations < 0:
            raise ValueError("batch_size must be >= 1 and max_iterations >= 0")
        if self.mode not in DTYPES:
            raise ValueError(f"mode must be one of {sorted(DTYPES)}")


@dataclass
class TrainResult:
    store: ParamStore
    curve: list[dict] = field(default_factory=list)
    best_val_loss: float | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([row["train_loss"] for row in self.curve])


def _eval_loss(store, spec, x, y, batch):
    total = 0.0
    for s in range(0, len(x), batch):
        pred = forward(store, spec, x[s:s + batch])
        total += float(((pred - y[s:s + batch]) ** 2).sum())
    return total / y.size


def train(spec: ModelSpec, inputs: np.ndarray, targets: np.ndarray, tspec: TrainSpec,
          val: tuple[np.ndarray, np.ndarray] | None = None, store: ParamStore | None = None,
          on_epoch=None) -> TrainResult:
    """Fit ``spec`` to (inputs, targets), both (N, C, H, W) in encoded pixel space.

    Without a validation set the scheduler watches the mean training loss of
    each epoch.  With one and ``tspec.keep_best`` the returned store holds the
    parameters of the epoch with the lowest validation loss.  Everything random derives from ``tspec.seed``.
    ``on_epoch(iteration, store)`` is called after every scheduler step.
    """
    n = len(inputs)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(targets) != n:
        raise ValueError("inputs and targets differ in length")
    dtype = DTYPES[tspec.mode]
    x_all = np.asarray(inputs, dtype=dtype)
    y_all = np.asarray(targets, dtype=dtype)
    if store is None:
        store = init_params(spec, tspec.seed, tspec.mode)
    rng = np.random.Generator(np.random.PCG64([tspec.seed, 1]))
    batch = min(tspec.batch_size, n)
    per_epoch = tspec.epoch_iterations or -(-n // batch)
    sched = PlateauScheduler(tspec.lr_initial, tspec.plateau_epochs, tspec.lr_decay)
    state = AdamState()
    result = TrainResult(store)
    order = rng.permutation(n)
    cursor = 0
    epoch_losses = []
    best = (np.inf, None)
    for it in range(1, tspec.max_iterations + 1):
        if cursor + batch > n:
            order = rng.permutation(n)
            cursor = 0
        idx = np.sort(order[cursor:cursor + batch])
        cursor += batch
        g = Graph(store, True)
        pred = forward_graph(g, spec, x_all[idx], training=True)
        loss = ag.mse_loss(pred, y_all[idx])
        loss.backward()
        lr = sched.lr
        adam_step(store.params, g.grads(), state, lr, tspec.adam_betas, tspec.adam_eps)
        row = {"iteration": it, "lr": lr, "train_loss": float(loss.data), "val_loss": None}
        epoch_losses.append(row["train_loss"])
        if it % per_epoch == 0:
            if val is not None:
                row["val_loss"] = _eval_loss(store, spec, np.asarray(val[0], dtype), np.asarray(val[1], dtype), batch)
                watched = row["val_loss"]
                if tspec.keep_best and watched < best[0]:
                    best = (watched, store.copy())
            else:
                watched = float(np.mean(epoch_losses))
            sched.step(watched)
            epoch_losses = []
            if on_epoch is not None:
                on_epoch(it, store)
        result.curve.append(row)
        if tspec.checkpoint_every and tspec.checkpoint_path and it % tspec.checkpoint_every == 0:
            save_checkpoint(tspec.checkpoint_path, spec, store)
        if it % 100 == 0:
            log.info("iter %d lr %.3g loss %.6g", it, lr, row["train_loss"])
    if best[1] is not None:
        result.store = best[1]
        result.best_val_loss = best[0]
    return result


def write_loss_csv(path, curve: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "lr", "train_loss", "val_loss"])
        for row in curve:
            w.writerow([row["iteration"], repr(row["lr"]), repr(row["train_loss"]),
                        "" if row["val_loss"] is None else repr(row["val_loss"])])
