"""Learned reachability model: manipulability score from a 6-DoF pose.

A small fully-connected network (five hidden layers of 64 units, ReLU)
regresses the grasp manipulability score directly from (x, y, z, roll,
pitch, yaw), replacing per-grasp IK at query time.  Trained with mean
squared error on normalized inputs and targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .grasps import GraspSet
from .manipulability import labels_to_array
from .nn import Adam, Dense, ReLU, Sequential, load_arrays, mse_loss, save_arrays

HIDDEN_WIDTH = 64
HIDDEN_LAYERS = 5
INPUT_DIM = 6


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; retry with a smaller learning rate."""


@dataclass
class ReachHyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1


@dataclass
class TrainReport:
    epochs: int
    train_mse: float
    val_mse: float
    spearman: float


class ReachNet:
    """Trained reachability regressor; immutable after training."""

    def __init__(self, net: Sequential, in_mean, in_std, out_mean, out_std):
        self.net = net
        self.in_mean = np.asarray(in_mean, dtype=float).reshape(INPUT_DIM)
        self.in_std = np.asarray(in_std, dtype=float).reshape(INPUT_DIM)
        self.out_mean = float(out_mean)
        self.out_std = float(out_std)

    @staticmethod
    def initialize(rng: np.random.Generator) -> "ReachNet":
        layers = []
        dim = INPUT_DIM
        for _ in range(HIDDEN_LAYERS):
            layers += [Dense(dim, HIDDEN_WIDTH, rng), ReLU()]
            dim = HIDDEN_WIDTH
        layers.append(Dense(dim, 1, rng))
        return ReachNet(Sequential(layers), np.zeros(INPUT_DIM), np.ones(INPUT_DIM), 0.0, 1.0)

    # -- inference ---------------------------------------------------------

    def predict(self, pose6) -> float:
        p = np.asarray(pose6, dtype=float).reshape(1, INPUT_DIM)
        if not np.isfinite(p).all():
            raise ValueError("pose contains non-finite entries")
        return float(self.predict_batch(p)[0])

    def predict_batch(self, poses) -> np.ndarray:
        poses = np.asarray(poses, dtype=float).reshape(-1, INPUT_DIM)
        if poses.shape[0] == 0:
            return np.zeros(0)
        x = (poses - self.in_mean) / self.in_std
        y = self.net.forward(x, training=False)[:, 0]
        return y * self.out_std + self.out_mean

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        arrays = {"in_mean": self.in_mean, "in_std": self.in_std,
                  "out_stats": np.array([self.out_mean, self.out_std])}
        dims = []
        for i, layer in enumerate(l for l in self.net.layers if isinstance(l, Dense)):
            arrays[f"W{i}"] = layer.W
            arrays[f"b{i}"] = layer.b
            dims.append(list(layer.W.shape))
        save_arrays(path, arrays, {"kind": "reachability", "dims": dims})

    @staticmethod
    def load(path) -> "ReachNet":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "reachability":
            raise ValueError(f"{path}: not a reachability weight file")
        rng = np.random.default_rng(0)
        model = ReachNet.initialize(rng)
        dense = [l for l in model.net.layers if isinstance(l, Dense)]
        for i, layer in enumerate(dense):
            layer.W[...] = arrays[f"W{i}"]
            layer.b[...] = arrays[f"b{i}"]
        model.in_mean = arrays["in_mean"]
        model.in_std = arrays["in_std"]
        model.out_mean, model.out_std = arrays["out_stats"]
        return model


def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_reachability(dataset, hyper: ReachHyperparams | None = None,
                       seed: int = 0) -> tuple[ReachNet, TrainReport]:
    """Train the reachability regressor; deterministic given ``seed``.

    ``dataset`` is either an (n, 7) array (x, y, z, roll, pitch, yaw, score)
    or a list of GraspLabel.  Early-stops when validation MSE fails to improve
    for ``patience`` epochs and restores the best weights.
    """
    hyper = hyper or ReachHyperparams()
    arr = labels_to_array(dataset)
    if arr.shape[0] < 1000:
        raise ValueError(f"dataset too small: {arr.shape[0]} rows (need >= 1000)")

    rng = np.random.default_rng(seed)
    model = ReachNet.initialize(rng)

    n = arr.shape[0]
    perm = rng.permutation(n)
    n_val = max(1, int(round(n * hyper.val_fraction)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    X, y = arr[:, :6], arr[:, 6]

    model.in_mean = X[train_idx].mean(axis=0)
    model.in_std = np.maximum(X[train_idx].std(axis=0), 1e-9)
    model.out_mean = float(y[train_idx].mean())
    model.out_std = float(max(y[train_idx].std(), 1e-9))

    Xn = (X - model.in_mean) / model.in_std
    yn = (y - model.out_mean) / model.out_std

    opt = Adam(model.net.params(), lr=hyper.learning_rate)
    best_val = np.inf
    best_weights = None
    since_best = 0
    epochs_run = 0
    train_mse = np.inf

    for epoch in range(hyper.max_epochs):
        epochs_run = epoch + 1
        total, count = 0.0, 0
        for batch in _epoch_batches(len(train_idx), hyper.batch_size, rng):
            idx = train_idx[batch]
            pred = model.net.forward(Xn[idx], training=True)
            loss, grad = mse_loss(pred, yn[idx][:, None])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
            model.net.backward(grad)
            opt.step(model.net.grads())
            total += loss * len(idx)
            count += len(idx)
        train_mse = total / count

        val_pred = model.net.forward(Xn[val_idx], training=False)[:, 0]
        val_mse = float(((val_pred - yn[val_idx]) ** 2).mean())
        if val_mse < best_val - 1e-12:
            best_val = val_mse
            best_weights = [p.copy() for p in model.net.params()]
            since_best = 0
        else:
            since_best += 1
            if since_best >= hyper.patience:
                break

    if best_weights is not None:
        for p, w in zip(model.net.params(), best_weights):
            p[...] = w

    val_pred = model.predict_batch(X[val_idx])
    val_mse = float(((val_pred - y[val_idx]) ** 2).mean())
    # ptp, not std: summation noise makes std of a constant array nonzero
    if len(val_idx) > 1 and np.ptp(y[val_idx]) > 0 and np.ptp(val_pred) > 0:
        rho = float(spearmanr(val_pred, y[val_idx]).statistic)
    else:
        rho = 1.0 if np.allclose(val_pred, y[val_idx], atol=1e-6) else 0.0
    report = TrainReport(epochs=epochs_run,
                         train_mse=float(train_mse) * model.out_std ** 2,
                         val_mse=val_mse, spearman=rho)
    return model, report


def sign_agreement(net: ReachNet, dataset) -> float:
    """Fraction of rows where the predicted and labelled scores share a sign."""
    arr = labels_to_array(dataset)
    pred = net.predict_batch(arr[:, :6])
    return float(((pred > 0) == (arr[:, 6] > 0)).mean())


def filter_grasps(net: ReachNet, grasps: GraspSet, threshold: float = 0.0) -> GraspSet:
    """Grasps with predicted score >= threshold, order preserved.

    Never empties a non-empty set: when everything falls below the threshold
    the single best-scoring grasp is kept.
    """
    if len(grasps) == 0:
        return GraspSet([])
    scores = net.predict_batch(grasps.pose6_array())
    keep = np.flatnonzero(scores >= threshold)
    if keep.size == 0:
        keep = np.array([int(scores.argmax())])
    return grasps.subset(keep)
