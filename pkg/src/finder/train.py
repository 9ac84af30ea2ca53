"""Splitting, target normalization, the training loop and evaluation metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .graph import FormulaGraph, GraphBatch
from .model import FinderModel, robust_loss
from .optim import Adam, clip_gradients

log = logging.getLogger(__name__)

SPLIT_PRESETS = {
    "default": (0.70, 0.15, 0.15),
    "matbench": (0.60, 0.20, 0.20),
    "matbench-small-val": (0.72, 0.08, 0.20),
}
HISTORY_COLUMNS = ("epoch", "train_loss", "val_MAE", "lr")


@dataclass
class Dataset:
    """Graphs with their targets; targets are (n,) for scalars or (n, P) for spectra."""

    graphs: list[FormulaGraph]
    targets: np.ndarray
    names: list[str] = field(default_factory=list)
    e_hull: list[float | None] = field(default_factory=list)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if len(self.targets) != len(self.graphs):
            raise ValueError(f"{len(self.graphs)} graphs but {len(self.targets)} targets")
        if not self.names:
            self.names = [f"sample{i}" for i in range(len(self.graphs))]

    def __len__(self):
        return len(self.graphs)

    def subset(self, idx) -> Dataset:
        idx = [int(i) for i in idx]
        return Dataset([self.graphs[i] for i in idx], self.targets[idx], [self.names[i] for i in idx],
                       [self.e_hull[i] for i in idx] if self.e_hull else [])


@dataclass
class Normalizer:
    """z-score with training-set statistics. Spectra share one global mean and std."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0 and math.isfinite(self.std)):
            raise ValueError(f"normalizer std must be positive and finite, got {self.std}")

    @classmethod
    def fit(cls, targets) -> Normalizer:
        y = np.asarray(targets, dtype=np.float64)
        if y.size == 0:
            raise ValueError("cannot fit a normalizer on an empty target set")
        std = float(y.std())
        if std == 0:
            raise ValueError("training targets have zero spread; cannot normalize")
        return cls(float(y.mean()), std)

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_epochs: int | None = None  # None: 500 for formula, 1000 for crystal models
    patience: int = 50
    lr: float = 3e-4
    lr_decay: float = 0.999
    clip: float = 1.0
    seed: int = 0
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    eval_batch_size: int = 256

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        check_ratios(self.ratios)
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be positive")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise ValueError("max_epochs must be positive")
        if self.patience < 1:
            raise ValueError("patience must be positive")

    def epochs_for(self, domain: str) -> int:
        if self.max_epochs is not None:
            return self.max_epochs
        return 1000 if domain == "crystal" else 500

    def to_dict(self) -> dict:
        return asdict(self)


def check_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be three positive numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    check_ratios(ratios)
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    sizes = (n_train, n_val, n - n_train - n_val)
    if min(sizes) < 1:
        raise ValueError(f"split of {n} samples with ratios {tuple(ratios)} leaves an empty part {sizes}")
    return sizes


def split(n: int, ratios: Sequence[float] = (0.70, 0.15, 0.15), seed: int = 0):
    """Shuffled disjoint (train, val, test) index arrays covering range(n)."""
    if n < 1:
        raise ValueError("cannot split an empty dataset")
    a, b, _ = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:a], perm[a:a + b], perm[a + b:]


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    mae: float
    rmse: float
    r2: float
    mad_mae: float
    errors: np.ndarray
    uncertainties: np.ndarray | None = None

    def summary(self) -> dict:
        return {"MAE": self.mae, "RMSE": self.rmse, "R2": self.r2, "MAD:MAE": self.mad_mae,
                "n": int(len(self.errors))}


def compute_metrics(y, pred, uncertainty=None) -> Metrics:
    """Metrics in original units; spectra are flattened for the aggregate scores."""
    y = np.asarray(y, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    if y.shape != pred.shape:
        raise ValueError(f"target shape {y.shape} does not match prediction shape {pred.shape}")
    absd = np.abs(pred - y)
    mae = float(absd.mean())
    rmse = float(np.sqrt(np.mean((pred - y) ** 2)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((pred - y) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else -math.inf
    mad = float(np.mean(np.abs(y - y.mean())))
    mad_mae = mad / mae if mae > 0 else math.inf
    per = absd if absd.ndim == 1 else absd.reshape(len(absd), -1).mean(axis=1)
    unc = None
    if uncertainty is not None:
        u = np.asarray(uncertainty, dtype=np.float64)
        unc = u if u.ndim == 1 else u.reshape(len(u), -1).mean(axis=1)
    return Metrics(mae, rmse, r2, mad_mae, per, unc)


def predict(model: FinderModel, graphs: Sequence[FormulaGraph], normalizer: Normalizer,
            batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Denormalized means and uncertainties exp(s) * std for each graph."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("no graphs to predict")
    means, scales = [], []
    with T.no_grad():
        for k in range(0, len(graphs), batch_size):
            out = model.forward(GraphBatch.from_graphs(graphs[k:k + batch_size]))
            means.append(out.mean.data.astype(np.float64))
            scales.append(out.log_scale.data.astype(np.float64))
    mu = normalizer.denormalize(np.concatenate(means))
    unc = np.exp(np.concatenate(scales)) * normalizer.std
    return mu, unc


def evaluate(model: FinderModel, data: Dataset, normalizer: Normalizer, batch_size: int = 256) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty set")
    mu, unc = predict(model, data.graphs, normalizer, batch_size)
    return compute_metrics(data.targets, mu, unc)


# ---------------------------------------------------------------------------
# training


class TrainingAborted(T.NonFiniteError):
    """Raised when the loss or gradients go non-finite. The model holds the best weights."""

    def __init__(self, message, history, best_state):
        super().__init__(message)
        self.history = history
        self.best_state = best_state


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    history: list[dict]
    normalizer: Normalizer
    best_epoch: int
    best_val_mae: float


def train(model: FinderModel, train_set: Dataset, val_set: Dataset, cfg: TrainConfig | None = None,
          normalizer: Normalizer | None = None, progress=None) -> TrainResult:
    """Minibatch Adam on the robust loss, keeping the weights with the lowest validation MAE.

    On return the model holds the best weights. ``progress`` is called with each
    history row if given.
    """
    cfg = cfg or TrainConfig()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be nonempty")
    normalizer = normalizer or Normalizer.fit(train_set.targets)
    z_train = normalizer.normalize(train_set.targets)
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, decay=cfg.lr_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(train_set)
    history: list[dict] = []
    best_state = model.state_dict()
    best_mae, best_epoch, since_best = math.inf, 0, 0

    def abort(msg):
        model.load_state_dict(best_state)
        raise TrainingAborted(msg, history, best_state)

    for epoch in range(1, cfg.epochs_for(model.config.domain) + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for k in range(0, n, cfg.batch_size):
            idx = order[k:k + cfg.batch_size]
            batch = GraphBatch.from_graphs([train_set.graphs[i] for i in idx])
            model.zero_grad()
            try:
                loss = robust_loss(model.forward(batch), z_train[idx], model)
            except T.NonFiniteError as exc:
                abort(f"epoch {epoch}: {exc}")
            T.backward(loss)
            norm = clip_gradients(params, cfg.clip)
            if not math.isfinite(norm):
                abort(f"epoch {epoch}: non-finite gradient norm")
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        mu, _ = predict(model, val_set.graphs, normalizer, cfg.eval_batch_size)
        val_mae = float(np.mean(np.abs(mu - val_set.targets)))
        if not math.isfinite(val_mae):
            abort(f"epoch {epoch}: non-finite validation MAE")
        row = {"epoch": epoch, "train_loss": total / count, "val_MAE": val_mae, "lr": opt.current_lr}
        history.append(row)
        if progress is not None:
            progress(row)
        if val_mae < best_mae:
            best_mae, best_epoch, since_best = val_mae, epoch, 0
            best_state = model.state_dict()
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    model.load_state_dict(best_state)
    return TrainResult(best_state, history, normalizer, best_epoch, best_mae)


def write_history(history: list[dict], path) -> None:
    """Delimited history file; floats use repr so identical runs give identical bytes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in HISTORY_COLUMNS[1:]])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), **{c: float(r[c]) for c in HISTORY_COLUMNS[1:]}}
                for r in csv.DictReader(fh)]
