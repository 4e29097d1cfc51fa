"""Adam training loop with staged schedules and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import (
    STAGED_ARCHITECTURES,
    LossSettings,
    NetworkModel,
    encode_dataset,
    loss_and_gradient,
    trainable_blocks,
)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss leaves the finite range."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser schedule; loss weights live in ``settings``."""

    epochs: int = 5000
    batch_size: int = 600
    learning_rate: float = 1e-3
    early_stop_tol: float = 1e-3
    early_stop_patience: int = 1000
    seed: int = 0
    settings: LossSettings = field(default_factory=LossSettings)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.early_stop_tol < 0.0 or self.early_stop_patience < 1:
            raise ValueError("early stopping needs tol >= 0 and patience >= 1")


@dataclass(frozen=True)
class EpochRecord:
    stage: int
    epoch: int
    train_loss: float
    val_loss: float


class Adam:
    """First/second-moment adaptive steps, one slot per parameter array."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[int, list[np.ndarray]] = {}
        self._v: dict[int, list[np.ndarray]] = {}

    def update(self, layers, grads) -> None:
        """One step over ``layers`` using grads keyed by id(layer)."""
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for layer in layers:
            key = id(layer)
            if key not in self._m:
                self._m[key] = [np.zeros_like(layer.weights), np.zeros_like(layer.biases)]
                self._v[key] = [np.zeros_like(layer.weights), np.zeros_like(layer.biases)]
            params = (layer.weights, layer.biases)
            for slot, (param, grad) in enumerate(zip(params, grads[key])):
                m = self._m[key][slot]
                v = self._v[key][slot]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad**2
                param -= (
                    self.learning_rate
                    * (m / bias1)
                    / (np.sqrt(v / bias2) + self.eps)
                )


def _stage_layers(model, stage):
    return [
        layer for name in trainable_blocks(model, stage) for layer in model.blocks()[name]
    ]


def _snapshot(layers):
    return [(layer.weights.copy(), layer.biases.copy()) for layer in layers]


def _restore(layers, snapshot):
    for layer, (weights, biases) in zip(layers, snapshot):
        layer.weights[...] = weights
        layer.biases[...] = biases


def _evaluate(model, eta, theta, settings, stage, alpha_targets):
    total, _, _ = loss_and_gradient(
        model,
        eta,
        theta,
        settings,
        stage,
        alpha_targets=alpha_targets,
        compute_grads=False,
    )
    return total


def _run_stage(model, stage, data, config, records) -> None:
    eta_train, theta_train, eta_val, theta_val, targets_train, targets_val = data
    layers = _stage_layers(model, stage)
    adam = Adam(config.learning_rate)
    stage_tag = stage if stage is not None else 0
    rng = np.random.default_rng((config.seed, stage_tag))
    n_train = (theta_train if theta_train is not None else eta_train).shape[0]

    best_val = np.inf
    best_params = _snapshot(layers)
    since_best = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            sel = order[start : start + config.batch_size]
            total, _, grads = loss_and_gradient(
                model,
                None if eta_train is None else eta_train[sel],
                None if theta_train is None else theta_train[sel],
                config.settings,
                stage,
                alpha_targets=None if targets_train is None else targets_train[sel],
            )
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"stage {stage_tag} epoch {epoch}: loss {total}"
                )
            adam.update(layers, grads)

        train_loss = _evaluate(
            model, eta_train, theta_train, config.settings, stage, targets_train
        )
        val_loss = _evaluate(
            model, eta_val, theta_val, config.settings, stage, targets_val
        )
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(f"stage {stage_tag} epoch {epoch}: loss overflow")
        records.append(EpochRecord(stage_tag, epoch, train_loss, val_loss))

        if val_loss < best_val * (1.0 - config.early_stop_tol):
            best_val = val_loss
            best_params = _snapshot(layers)
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break
    _restore(layers, best_params)


def train_model(
    model: NetworkModel,
    eta,
    theta,
    val_indices,
    config: TrainConfig = TrainConfig(),
) -> list[EpochRecord]:
    """Fit the model in place; returns the per-epoch loss history.

    ``val_indices`` selects the validation rows out of ``eta``/``theta``;
    every other row trains.  Staged architectures first fit the
    reconstruction pair, then the parametric block with the first
    stage's parameters frozen; the best-validation parameters of each
    stage are restored before moving on.
    """
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if eta.shape[0] != theta.shape[0]:
        raise ValueError("parameter and density row counts differ")
    val_indices = np.asarray(val_indices, dtype=int)
    mask = np.zeros(eta.shape[0], dtype=bool)
    mask[val_indices] = True
    if not 0 < mask.sum() < eta.shape[0]:
        raise ValueError("validation split must be non-empty and proper")
    eta_train, eta_val = eta[~mask], eta[mask]
    theta_train, theta_val = theta[~mask], theta[mask]

    records: list[EpochRecord] = []
    arch = model.architecture
    if arch in STAGED_ARCHITECTURES:
        _run_stage(
            model,
            1,
            (None, theta_train, None, theta_val, None, None),
            config,
            records,
        )
        if arch == "saeff":
            # codes of the frozen stage-I encoder are the stage-II targets
            targets_train = encode_dataset(model, theta_train)
            targets_val = encode_dataset(model, theta_val)
            data = (eta_train, None, eta_val, None, targets_train, targets_val)
        else:
            data = (eta_train, theta_train, eta_val, theta_val, None, None)
        _run_stage(model, 2, data, config, records)
    elif arch == "ae":
        _run_stage(
            model,
            None,
            (None, theta_train, None, theta_val, None, None),
            config,
            records,
        )
    else:
        _run_stage(
            model,
            None,
            (eta_train, theta_train, eta_val, theta_val, None, None),
            config,
            records,
        )
    return records
