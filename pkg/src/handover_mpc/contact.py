"""Contact-event detection from joint and force/torque streams.

A temporal-convolution classifier over 5-step windows of 20 sensor channels
(7 joint velocities, 7 efforts, 3 force, 3 torque): per-timestep encoder
(kernel-1 convolutions, 20-256-512), two temporal convolutions over history
(kernel 3, 512 channels, ReLU + batch norm), and a kernel-1 head (512-256-1)
with dropout, max-pooled over time into a single contact logit.  Trained
with binary cross entropy.

A synthetic generator stands in for robot-collected data: negatives are
band-limited sensor noise with slow drift and motion-correlated efforts;
positives add a force/torque step-plus-decay pulse at a random onset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import (Adam, BatchNorm, Conv1d, Dropout, MaxOverTime, ReLU,
                 Sequential, bce_with_logits, load_arrays, save_arrays, sigmoid)

WINDOW_STEPS = 5
CHANNELS = 20  # qd0..qd6, eff0..eff6, fx fy fz, tx ty tz

CSV_HEADER = ("t," + ",".join(f"qd{i}" for i in range(7)) + ","
              + ",".join(f"eff{i}" for i in range(7)) + ",fx,fy,fz,tx,ty,tz,label")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ContactWindow:
    """One 5x20 sensor window; ``label`` is the contact-within-window flag."""

    samples: np.ndarray
    label: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (WINDOW_STEPS, CHANNELS):
            raise ValueError(f"window must be {WINDOW_STEPS}x{CHANNELS}, got {s.shape}")
        if not np.isfinite(s).all():
            raise ValueError("window contains non-finite entries")
        self.samples = s


@dataclass
class SyntheticContactConfig:
    """Generator knobs; defaults mirror a 20k dataset with 8% positives."""

    n_samples: int = 20000
    positive_fraction: float = 0.08
    vel_noise: float = 0.04
    effort_noise: float = 0.12
    force_noise: float = 0.35
    torque_noise: float = 0.05
    drift_scale: float = 0.5
    pulse_amplitude: tuple = (1.5, 12.0)
    pulse_duration: tuple = (2, 4)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must be in (0, 1)")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class ContactHyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 12
    patience: int = 3
    dropout: float = 0.2
    pos_weight: float = 1.0
    holdout: int = 5000


@dataclass
class ContactReport:
    epochs: int
    train_loss: float
    accuracy: float
    false_positive_rate: float
    false_negative_rate: float


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------

def _synth_window(rng: np.random.Generator, cfg: SyntheticContactConfig,
                  positive: bool) -> tuple[np.ndarray, np.ndarray]:
    """One window plus its per-timestep contact flags."""
    T = WINDOW_STEPS
    w = np.zeros((T, CHANNELS))
    t = np.arange(T)

    # slow per-channel drift plus band-limited noise on every channel
    qd_base = rng.normal(0.0, cfg.drift_scale, 7)
    qd_slope = rng.normal(0.0, 0.2 * cfg.drift_scale, 7)
    w[:, 0:7] = qd_base + np.outer(t, qd_slope) + rng.normal(0.0, cfg.vel_noise, (T, 7))
    # efforts track joint motion (viscous-ish baseline) plus noise
    gains = rng.uniform(0.5, 1.5, 7)
    w[:, 7:14] = w[:, 0:7] * gains + rng.normal(0.0, cfg.effort_noise, (T, 7))
    w[:, 14:17] = (rng.normal(0.0, cfg.force_noise, (T, 3))
                   + rng.normal(0.0, 0.5 * cfg.force_noise, 3))
    w[:, 17:20] = (rng.normal(0.0, cfg.torque_noise, (T, 3))
                   + rng.normal(0.0, 0.5 * cfg.torque_noise, 3))

    flags = np.zeros(T, dtype=int)
    if positive and cfg.pulse_amplitude[1] > 0.0:
        amp = rng.uniform(*cfg.pulse_amplitude)
        dur = int(rng.integers(cfg.pulse_duration[0], cfg.pulse_duration[1] + 1))
        onset = int(rng.integers(0, T - dur + 1))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        lever = rng.normal(0.0, 0.1, 3)
        decay = np.exp(-0.8 * np.arange(dur))
        for k in range(dur):
            f = amp * decay[k] * direction
            w[onset + k, 14:17] += f
            w[onset + k, 17:20] += np.cross(lever, f)
            # contact also reacts through the arm as an effort transient
            w[onset + k, 7:14] += amp * decay[k] * rng.normal(0.08, 0.02, 7)
        flags[onset:onset + dur] = 1
    return w, flags


def generate_contact_dataset(cfg: SyntheticContactConfig) -> list[ContactWindow]:
    """Deterministic synthetic windows with an exact positive count
    (round(n * positive_fraction)); per-sample RNG streams keep the output
    identical however the work is chunked."""
    n = cfg.n_samples
    n_pos = int(round(n * cfg.positive_fraction))
    order = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xC0)))\
        .permutation(n)
    positive = np.zeros(n, dtype=bool)
    positive[order[:n_pos]] = True

    windows = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, i)))
        w, flags = _synth_window(rng, cfg, bool(positive[i]))
        windows.append(ContactWindow(w, int(flags.any())))
    return windows


def windows_to_arrays(windows) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(windows, tuple):
        return windows
    X = np.stack([w.samples for w in windows])
    y = np.array([w.label for w in windows], dtype=float)
    return X, y


def save_contact_csv(path, windows) -> int:
    """One row per timestep; per-row label marks pulse-active steps, so
    reassembling with stride=WINDOW_STEPS reproduces the window labels."""
    X, y = windows_to_arrays(windows)
    t = 0
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for w, label in zip(X, y):
            # without per-step flags, mark the whole window when positive
            for row in range(WINDOW_STEPS):
                vals = ",".join(f"{v:.17g}" for v in w[row])
                f.write(f"{t},{vals},{int(label)}\n")
                t += 1
    return t


def load_contact_csv(path, stride: int = WINDOW_STEPS) -> list[ContactWindow]:
    """Assemble windows by sliding over rows (stride 1 for real recordings,
    stride 5 to recover generator output exactly)."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != CHANNELS + 2:
        raise ValueError(f"expected {CHANNELS + 2} columns, got {raw.shape[1]}")
    data = raw[:, 1:1 + CHANNELS]
    labels = raw[:, -1]
    windows = []
    for start in range(0, len(raw) - WINDOW_STEPS + 1, stride):
        block = data[start:start + WINDOW_STEPS]
        windows.append(ContactWindow(block, int(labels[start:start + WINDOW_STEPS].any())))
    return windows


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class ContactNet:
    """Temporal-convolution contact classifier; output in [0, 1]."""

    def __init__(self, net: Sequential, mean: np.ndarray, std: np.ndarray):
        self.net = net
        self.mean = mean
        self.std = std

    DTYPE = np.float32  # training throughput; ample precision for classification

    @staticmethod
    def initialize(rng: np.random.Generator, dropout: float = 0.2) -> "ContactNet":
        dt = ContactNet.DTYPE
        layers = [
            Conv1d(CHANNELS, 256, 1, rng, dtype=dt), ReLU(),
            Conv1d(256, 512, 1, rng, dtype=dt), ReLU(),
            Conv1d(512, 512, 3, rng, dtype=dt), ReLU(), BatchNorm(512, dtype=dt),
            Conv1d(512, 512, 3, rng, dtype=dt), ReLU(), BatchNorm(512, dtype=dt),
            Conv1d(512, 256, 1, rng, dtype=dt), ReLU(), Dropout(dropout),
            Conv1d(256, 1, 1, rng, dtype=dt),
            MaxOverTime(),
        ]
        return ContactNet(Sequential(layers), np.zeros(CHANNELS, dtype=dt),
                          np.ones(CHANNELS, dtype=dt))

    def logits(self, X: np.ndarray, training: bool = False) -> np.ndarray:
        Xn = ((X - self.mean) / self.std).astype(ContactNet.DTYPE)
        return self.net.forward(Xn, training=training)

    def detect(self, window) -> float:
        """Contact probability for one 5x20 window."""
        if isinstance(window, ContactWindow):
            window = window.samples
        w = np.asarray(window, dtype=float)
        if w.shape != (WINDOW_STEPS, CHANNELS):
            raise ValueError(f"window must be {WINDOW_STEPS}x{CHANNELS}, got {w.shape}")
        return float(self.detect_batch(w[None])[0])

    def detect_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[1:] != (WINDOW_STEPS, CHANNELS):
            raise ValueError("batch must have shape (n, 5, 20)")
        if X.shape[0] == 0:
            return np.zeros(0)
        return sigmoid(self.logits(X, training=False)[:, 0])

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        arrays = {"mean": self.mean, "std": self.std}
        meta_layers = []
        for i, layer in enumerate(self.net.layers):
            tag = type(layer).__name__
            if isinstance(layer, Conv1d):
                arrays[f"W{i}"] = layer.W
                arrays[f"b{i}"] = layer.b
                meta_layers.append({"kind": tag, "kernel": layer.kernel,
                                    "in": layer.W.shape[1], "out": layer.W.shape[2]})
            elif isinstance(layer, BatchNorm):
                arrays[f"gamma{i}"] = layer.gamma
                arrays[f"beta{i}"] = layer.beta
                arrays[f"rmean{i}"] = layer.running_mean
                arrays[f"rvar{i}"] = layer.running_var
                meta_layers.append({"kind": tag, "channels": len(layer.gamma)})
            elif isinstance(layer, Dropout):
                meta_layers.append({"kind": tag, "p": layer.p})
            else:
                meta_layers.append({"kind": tag})
        save_arrays(path, arrays, {"kind": "contact", "layers": meta_layers})

    @staticmethod
    def load(path) -> "ContactNet":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "contact":
            raise ValueError(f"{path}: not a contact weight file")
        model = ContactNet.initialize(np.random.default_rng(0))
        for i, layer in enumerate(model.net.layers):
            if isinstance(layer, Conv1d):
                layer.W[...] = arrays[f"W{i}"]
                layer.b[...] = arrays[f"b{i}"]
            elif isinstance(layer, BatchNorm):
                layer.gamma[...] = arrays[f"gamma{i}"]
                layer.beta[...] = arrays[f"beta{i}"]
                layer.running_mean[...] = arrays[f"rmean{i}"]
                layer.running_var[...] = arrays[f"rvar{i}"]
        model.mean = arrays["mean"]
        model.std = arrays["std"]
        return model


def train_contact(dataset, hyper: ContactHyperparams | None = None,
                  seed: int = 0) -> tuple[ContactNet, ContactReport]:
    """Train on all but the held-out tail; deterministic given ``seed``.

    The report's accuracy and error rates come from the held-out windows at
    threshold 0.5.  Raises on single-class datasets and non-finite loss.
    """
    hyper = hyper or ContactHyperparams()
    X, y = windows_to_arrays(dataset)
    if len(np.unique(y)) < 2:
        raise ValueError("dataset must contain both classes")

    rng = np.random.default_rng(seed)
    model = ContactNet.initialize(rng, dropout=hyper.dropout)
    model.net.set_dropout_rng(np.random.default_rng(rng.integers(2 ** 63)))

    n = X.shape[0]
    holdout = min(hyper.holdout, n // 4)
    perm = rng.permutation(n)
    test_idx, train_idx = perm[:holdout], perm[holdout:]

    flat = X[train_idx].reshape(-1, CHANNELS)
    model.mean = flat.mean(axis=0).astype(ContactNet.DTYPE)
    model.std = np.maximum(flat.std(axis=0), 1e-9).astype(ContactNet.DTYPE)

    opt = Adam(model.net.params(), lr=hyper.learning_rate)
    best_loss = np.inf
    best_weights = None
    since_best = 0
    epochs_run = 0
    train_loss = np.inf
    pos_w = hyper.pos_weight

    for epoch in range(hyper.max_epochs):
        epochs_run = epoch + 1
        order = rng.permutation(len(train_idx))
        total, count = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            idx = train_idx[order[start:start + hyper.batch_size]]
            logits = model.logits(X[idx], training=True)
            target = y[idx][:, None]
            loss, grad = bce_with_logits(logits, target)
            if pos_w != 1.0:
                scale = np.where(target > 0.5, pos_w, 1.0)
                loss_w = loss  # reported loss stays unweighted
                grad = grad * scale
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch}")
            model.net.backward(grad)
            opt.step(model.net.grads())
            total += loss * len(idx)
            count += len(idx)
        train_loss = total / count

        val_logits = model.logits(X[test_idx], training=False)
        val_loss, _ = bce_with_logits(val_logits, y[test_idx][:, None])
        if val_loss < best_loss - 1e-9:
            best_loss = val_loss
            best_weights = [p.copy() for p in model.net.params()]
            # running BN stats belong with the weights
            best_stats = [(l.running_mean.copy(), l.running_var.copy())
                          for l in model.net.layers if isinstance(l, BatchNorm)]
            since_best = 0
        else:
            since_best += 1
            if since_best >= hyper.patience:
                break

    if best_weights is not None:
        for p, w in zip(model.net.params(), best_weights):
            p[...] = w
        bn_layers = [l for l in model.net.layers if isinstance(l, BatchNorm)]
        for l, (rm, rv) in zip(bn_layers, best_stats):
            l.running_mean[...] = rm
            l.running_var[...] = rv

    prob = model.detect_batch(X[test_idx])
    pred = prob > 0.5
    actual = y[test_idx] > 0.5
    acc = float((pred == actual).mean())
    neg = ~actual
    fpr = float(pred[neg].mean()) if neg.any() else 0.0
    fnr = float((~pred[actual]).mean()) if actual.any() else 0.0
    return model, ContactReport(epochs=epochs_run, train_loss=float(train_loss),
                                accuracy=acc, false_positive_rate=fpr,
                                false_negative_rate=fnr)
