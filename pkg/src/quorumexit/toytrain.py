"""Synthetic tasks and small early-exit MLP learners trained from scratch.

Tasks are Gaussian mixtures with one component per class; the ``overlap``
knob widens the shared isotropic covariance so class separability degrades
smoothly from trivially separable down to chance level.

Learners are plain numpy MLPs: a chain of tanh blocks with one softmax head
per block. Training minimizes the weighted sum of all per-exit cross-entropy
losses with explicit backpropagation (head gradients accumulate into the
shared blocks). Arithmetic is float64; bundles are exported as float32.

MAC counting convention: one multiply-accumulate per multiplicative weight
per sample in affine layers; bias adds, nonlinearities, and softmax count
zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bundle import Bundle, CostModel, LabelVector, PredictionTensor, write_bundle

SIGMA_BASE = 0.3
SIGMA_PER_OVERLAP = 1.2
MEAN_RADIUS = 3.0


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def class_means(num_classes: int, dim: int, radius: float = MEAN_RADIUS) -> np.ndarray:
    """Deterministic, pairwise-distinct cluster means.

    Classes sit on a circle in the first two dimensions (evenly spaced along
    a line when dim == 1).
    """
    means = np.zeros((num_classes, dim), dtype=np.float64)
    if dim == 1:
        means[:, 0] = np.linspace(-radius, radius, num_classes)
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    return means


@dataclass
class SyntheticTask:
    """Gaussian-mixture classification task, reproducible from its seed."""

    classes: int
    dim: int = 2
    overlap: float = 0.0
    n_train: int = 512
    n_test: int = 256
    seed: int = 7
    sigma: float | None = None
    means: np.ndarray | None = None

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.dim < 1:
            raise ConfigError(f"input dimension must be >= 1, got {self.dim}")
        if self.overlap < 0:
            raise ConfigError(f"overlap must be >= 0, got {self.overlap}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("sample counts must be positive")
        if self.sigma is None:
            self.sigma = SIGMA_BASE + SIGMA_PER_OVERLAP * self.overlap
        if self.sigma <= 0:
            raise ConfigError(f"degenerate covariance: sigma {self.sigma} <= 0")
        if self.means is None:
            self.means = class_means(self.classes, self.dim)
        else:
            self.means = np.asarray(self.means, dtype=np.float64)
            if self.means.shape != (self.classes, self.dim):
                raise ConfigError(
                    f"means shape {self.means.shape} != {(self.classes, self.dim)}"
                )
        for i in range(self.classes):
            for j in range(i + 1, self.classes):
                if np.allclose(self.means[i], self.means[j]):
                    raise ConfigError(f"cluster means {i} and {j} coincide")


@dataclass
class TaskData:
    task: SyntheticTask
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def gen_task(task: SyntheticTask) -> TaskData:
    """Draw the train and test splits, bit-deterministic given the seed."""
    rng = np.random.default_rng(task.seed)

    def draw(n):
        y = rng.integers(0, task.classes, size=n)
        x = task.means[y] + task.sigma * rng.standard_normal((n, task.dim))
        return x, y.astype(np.int64)

    x_train, y_train = draw(task.n_train)
    x_test, y_test = draw(task.n_test)
    return TaskData(task, x_train, y_train, x_test, y_test)


def bayes_accuracy_estimate(task: SyntheticTask, n_draws: int = 20000, seed: int = 0) -> float:
    """Monte Carlo accuracy of the Bayes rule (nearest mean for this mixture)."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, task.classes, size=n_draws)
    x = task.means[y] + task.sigma * rng.standard_normal((n_draws, task.dim))
    d2 = ((x[:, None, :] - task.means[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d2, axis=1) == y))


@dataclass
class JointLossConfig:
    """Minibatch gradient-descent settings for joint multi-exit training.

    ``beta`` weights every exit loss; None means all ones (the final exit
    included, with its weight exposed via ``final_weight``).
    """

    epochs: int = 150
    learning_rate: float = 0.05
    batch_size: int = 32
    beta: tuple[float, ...] | None = None
    final_weight: float = 1.0
    seed: int = 0

    def resolve_beta(self, num_exits: int) -> np.ndarray:
        if self.beta is not None:
            beta = np.asarray(self.beta, dtype=np.float64)
            if beta.shape != (num_exits,):
                raise ConfigError(
                    f"beta length {beta.shape[0]} != exit count {num_exits}"
                )
        else:
            beta = np.ones(num_exits, dtype=np.float64)
            beta[-1] = self.final_weight
        if (beta < 0).any():
            raise ConfigError("exit loss weights must be non-negative")
        return beta


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ToyLearner:
    """Early-exit MLP: tanh blocks with one affine softmax head per block."""

    def __init__(self, input_dim: int, num_classes: int, widths: tuple[int, ...], seed: int = 0):
        if not widths:
            raise ConfigError("learner needs at least one block")
        if min(widths) < 1:
            raise ConfigError(f"block widths must be positive, got {widths}")
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.widths = tuple(int(w) for w in widths)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.block_w: list[np.ndarray] = []
        self.block_b: list[np.ndarray] = []
        self.head_w: list[np.ndarray] = []
        self.head_b: list[np.ndarray] = []
        fan_in = input_dim
        for width in self.widths:
            self.block_w.append(rng.standard_normal((fan_in, width)) / math.sqrt(fan_in))
            self.block_b.append(np.zeros(width))
            self.head_w.append(rng.standard_normal((width, num_classes)) / math.sqrt(width))
            self.head_b.append(np.zeros(num_classes))
            fan_in = width
        macs = self.exit_macs()
        if any(macs[i + 1] <= macs[i] for i in range(len(macs) - 1)):
            raise ConfigError(f"per-exit MACs must increase strictly, got {macs}")

    @property
    def num_exits(self) -> int:
        return len(self.widths)

    def block_macs(self, i: int) -> int:
        fan_in = self.input_dim if i == 0 else self.widths[i - 1]
        return fan_in * self.widths[i]

    def head_macs(self, i: int) -> int:
        return self.widths[i] * self.num_classes

    def exit_macs(self) -> list[int]:
        """Cumulative MACs through block e plus its head, per exit e."""
        out = []
        running = 0
        for i in range(self.num_exits):
            running += self.block_macs(i)
            out.append(running + self.head_macs(i))
        return out

    def forward_hidden(self, x: np.ndarray) -> list[np.ndarray]:
        hs = []
        h = x
        for w, b in zip(self.block_w, self.block_b):
            h = np.tanh(h @ w + b)
            hs.append(h)
        return hs

    def predict_proba(self, x: np.ndarray) -> list[np.ndarray]:
        """Per-exit class probabilities, one (N, C) array per exit."""
        return [
            _softmax(h @ v + c)
            for h, v, c in zip(self.forward_hidden(x), self.head_w, self.head_b)
        ]

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, beta: np.ndarray):
        """Joint loss and gradients for one batch via explicit backprop."""
        batch = x.shape[0]
        hs = self.forward_hidden(x)
        onehot = np.zeros((batch, self.num_classes))
        onehot[np.arange(batch), y] = 1.0

        loss = 0.0
        dz = []
        for i, h in enumerate(hs):
            p = _softmax(h @ self.head_w[i] + self.head_b[i])
            loss += beta[i] * float(
                -np.mean(np.log(np.maximum(p[np.arange(batch), y], 1e-300)))
            )
            dz.append(beta[i] * (p - onehot) / batch)

        grads = {
            "block_w": [np.zeros_like(w) for w in self.block_w],
            "block_b": [np.zeros_like(b) for b in self.block_b],
            "head_w": [np.zeros_like(w) for w in self.head_w],
            "head_b": [np.zeros_like(b) for b in self.head_b],
        }
        d_from_next = None
        for i in reversed(range(self.num_exits)):
            h = hs[i]
            grads["head_w"][i] = h.T @ dz[i]
            grads["head_b"][i] = dz[i].sum(axis=0)
            dh = dz[i] @ self.head_w[i].T
            if d_from_next is not None:
                dh = dh + d_from_next
            da = dh * (1.0 - h * h)
            h_prev = x if i == 0 else hs[i - 1]
            grads["block_w"][i] = h_prev.T @ da
            grads["block_b"][i] = da.sum(axis=0)
            d_from_next = da @ self.block_w[i].T
        return loss, grads

    def apply_grads(self, grads, lr: float) -> None:
        for name in ("block_w", "block_b", "head_w", "head_b"):
            params = getattr(self, name)
            for p, g in zip(params, grads[name]):
                p -= lr * g

    # flat-vector views used by the finite-difference checks
    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [
                p.ravel()
                for name in ("block_w", "block_b", "head_w", "head_b")
                for p in getattr(self, name)
            ]
        )

    def set_params(self, flat: np.ndarray) -> None:
        offset = 0
        for name in ("block_w", "block_b", "head_w", "head_b"):
            for p in getattr(self, name):
                size = p.size
                p[...] = flat[offset : offset + size].reshape(p.shape)
                offset += size


def train_joint(learner: ToyLearner, data: TaskData, cfg: JointLossConfig) -> list[float]:
    """Minibatch gradient descent on the joint loss; returns per-epoch losses."""
    beta = cfg.resolve_beta(learner.num_exits)
    rng = np.random.default_rng(cfg.seed)
    n = data.x_train.shape[0]
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = learner.loss_and_grads(data.x_train[idx], data.y_train[idx], beta)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {batches}"
                )
            learner.apply_grads(grads, cfg.learning_rate)
            epoch_loss += loss
            batches += 1
        curve.append(epoch_loss / batches)
    return curve


def accuracy(learner: ToyLearner, x: np.ndarray, y: np.ndarray, exit_index: int = -1) -> float:
    probs = learner.predict_proba(x)[exit_index]
    return float(np.mean(np.argmax(probs, axis=1) == y))


def ensemble_bundle(learners: list[ToyLearner], x: np.ndarray, y: np.ndarray) -> Bundle:
    """In-memory bundle from an ensemble: f32 probabilities, analytic MACs."""
    if len(learners) < 2:
        raise ConfigError(f"ensemble needs K >= 2 learners, got {len(learners)}")
    num_exits = learners[0].num_exits
    if any(l.num_exits != num_exits for l in learners):
        raise ConfigError("all learners must share the exit count")
    probs = np.stack(
        [np.stack(l.predict_proba(x), axis=0) for l in learners], axis=0
    ).astype(np.float32)
    costs = np.array([l.exit_macs() for l in learners], dtype=np.float64)
    return Bundle(PredictionTensor(probs), LabelVector(y), CostModel(costs))


def export_ensemble(
    learners: list[ToyLearner], x: np.ndarray, y: np.ndarray, path: str
) -> Bundle:
    """Write the ensemble's predictions on (x, y) as a bundle directory."""
    bundle = ensemble_bundle(learners, x, y)
    write_bundle(bundle.tensor, bundle.labels, bundle.costs, path)
    return bundle


def ensemble_widths(num_learners: int, num_exits: int, base: int = 8, step: int = 4):
    """Default width plan: learner k gets (base + step*k) units in every block."""
    return [tuple([base + step * k] * num_exits) for k in range(num_learners)]


def load_kv_config(path: str) -> dict[str, str]:
    """Parse a plain-text ``key = value`` config file."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
