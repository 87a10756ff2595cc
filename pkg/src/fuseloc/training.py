"""End-to-end supervised training: Adam with weight decay, temporal
dataset splitting, mini-batching and validation-based model selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .curation import MultiModalWindow, stack_windows
from .fusion import FusionModel, mse_loss


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    decoupled_decay: bool = False   # True applies decay directly to weights
    batch_size: int = 128
    max_iterations: int = 10_000
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    window: int = 10
    stride: int = 1
    history: int = 1
    bidirectional: bool = False
    sensors: tuple[str, ...] = ("rssi", "csi", "uwb", "imu")
    n_hidden: int = 256
    n_layers: int = 2
    dropout: float = 0.2
    validation_interval: int = 200
    patience: int = 0               # 0 disables early stopping

    def __post_init__(self):
        self.sensors = tuple(self.sensors)
        self.split_fractions = tuple(self.split_fractions)
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split_fractions}")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)

    def slot(self, param: Tensor) -> tuple[np.ndarray, np.ndarray]:
        key = id(param)
        if key not in self.m:
            self.m[key] = np.zeros_like(param.data)
            self.v[key] = np.zeros_like(param.data)
        return self.m[key], self.v[key]


def adam_step(params: list[Tensor], state: AdamState, lr: float,
              weight_decay: float = 0.0, decoupled: bool = False) -> None:
    """One Adam update from the gradients currently held by the parameters.

    Weight decay defaults to the coupled convention (decay added to the
    gradient); ``decoupled=True`` subtracts lr*wd*param directly instead.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p in params:
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(state.step)
        if weight_decay and not decoupled:
            g = g + weight_decay * p.data
        m, v = state.slot(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if weight_decay and decoupled:
            p.data = p.data - lr * weight_decay * p.data


def split_dataset(windows: list[MultiModalWindow],
                  fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> tuple[list, list, list]:
    """Contiguous temporal split of the window list into train/val/test.

    Windows are kept in time order and cut at two block boundaries, so
    no window index appears twice and test windows come strictly after
    train windows. ``seed`` is accepted for interface symmetry but the
    temporal split is deterministic regardless.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative, got {fractions}")
    n = len(windows)
    if n < 1:
        raise ValueError("cannot split an empty window list")
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    if fractions[0] > 0 and n_train == 0 or (fractions[1] > 0 and n_val == 0 and n >= 3):
        raise ValueError(f"too few windows ({n}) for fractions {fractions}")
    return (windows[:n_train],
            windows[n_train:n_train + n_val],
            windows[n_train + n_val:])


@dataclass
class TrainResult:
    history: list[tuple[int, float, float | None]]  # iteration, train_mse, val_mse
    best_val_mse: float
    best_iteration: int
    final_params: dict[str, np.ndarray]


def evaluate_mse(model: FusionModel, windows: list[MultiModalWindow],
                 batch_size: int = 256) -> float:
    """Mean squared coordinate error (eval mode, no dropout)."""
    if not windows:
        return float("nan")
    total = 0.0
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo:lo + batch_size]
        batch, targets = stack_windows(chunk, model.config.sensors)
        pred, _ = model.forward(batch, mode="eval")
        total += float(((pred.data - targets) ** 2).mean()) * len(chunk)
    return total / len(windows)


def train(model: FusionModel, train_windows: list[MultiModalWindow],
          val_windows: list[MultiModalWindow], config: TrainConfig,
          log_every: int = 0) -> TrainResult:
    """Mini-batch training loop with best-checkpoint selection.

    Deterministic for a fixed config seed: batch order, dropout masks
    and the parameter updates all derive from it. Keeps the parameter
    snapshot with the lowest validation MSE and restores it at the end.
    """
    if not train_windows:
        raise ValueError("no training windows")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    drop_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    params = model.named_parameters()
    plist = list(params.values())
    adam = AdamState()
    history: list[tuple[int, float, float | None]] = []
    best_val = float("inf")
    best_iter = 0
    best_snapshot = {k: p.data.copy() for k, p in params.items()}
    stale_validations = 0

    order = rng.permutation(len(train_windows))
    cursor = 0
    for iteration in range(1, config.max_iterations + 1):
        take = []
        while len(take) < config.batch_size:
            if cursor >= len(order):
                order = rng.permutation(len(train_windows))
                cursor = 0
            take.append(int(order[cursor]))
            cursor += 1
        batch, targets = stack_windows([train_windows[i] for i in take],
                                       model.config.sensors)
        ad.zero_grads(plist)
        pred, _ = model.forward(batch, mode="train", rng=drop_rng)
        loss = mse_loss(pred, targets)
        train_mse = loss.item()
        if not np.isfinite(train_mse):
            raise TrainingDiverged(iteration)
        ad.backward(loss)
        adam_step(plist, adam, config.learning_rate, config.weight_decay,
                  config.decoupled_decay)

        val_mse = None
        if val_windows and (iteration % config.validation_interval == 0
                            or iteration == config.max_iterations):
            val_mse = evaluate_mse(model, val_windows)
            if val_mse < best_val:
                best_val = val_mse
                best_iter = iteration
                best_snapshot = {k: p.data.copy() for k, p in params.items()}
                stale_validations = 0
            else:
                stale_validations += 1
        history.append((iteration, train_mse, val_mse))
        if log_every and iteration % log_every == 0:
            shown = f", val {val_mse:.5f}" if val_mse is not None else ""
            print(f"iter {iteration}: train mse {train_mse:.5f}{shown}")
        if config.patience and stale_validations >= config.patience:
            break

    if val_windows:
        for k, p in params.items():
            p.data = best_snapshot[k]
    else:
        best_val = history[-1][1]
        best_iter = history[-1][0]
    return TrainResult(
        history=history,
        best_val_mse=best_val,
        best_iteration=best_iter,
        final_params={k: p.data.copy() for k, p in params.items()},
    )
