"""Losses, optimizer, schedules, and the epoch loop.

Training follows the same protocol for all heads: seeded mini-batch shuffles,
decoupled-weight-decay Adam, validation-loss-driven plateau scheduling and
early stopping, and a best-validation parameter snapshot as the result. The
GP head gets one extra stage after the loop: its Laplace precision matrix is
reset and re-accumulated over a full pass of the training split with the
final probabilities, then inverted into the predictive covariance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import heads
from .data import EmbeddingDataset, SplitIndices
from .heads import DNN, SNGP, HeadConfig, Params
from .numerics import RngStream, binary_cross_entropy, stable_sigmoid

# Substream ids hung off the run seed; every source of randomness in a
# training run is derived from these so runs with equal seeds are identical.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_FLIPOUT = 3
STREAM_EVAL = 4
STREAM_PREDICT = 5


class TrainingError(RuntimeError):
    """Training diverged or was asked to run on unusable inputs."""


@dataclass
class TrainConfig:
    learning_rate: float = 2e-5
    scheduler_factor: float = 0.1
    scheduler_patience: int = 1
    weight_decay: float = 0.01
    max_epochs: int = 500
    batch_size: int = 16
    early_stop_patience: int = 5
    seed: int = 0
    min_improvement: float = 1e-6

    def __post_init__(self):
        positive = {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "max_epochs": self.max_epochs,
            "batch_size": self.batch_size,
            "scheduler_patience": self.scheduler_patience,
            "early_stop_patience": self.early_stop_patience,
            "min_improvement": self.min_improvement,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ValueError(
                f"scheduler_factor must be in (0, 1), got {self.scheduler_factor}"
            )


@dataclass
class OptimizerState:
    """Adam moment accumulators with decoupled weight decay."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optimizer(params: dict[str, np.ndarray]) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
        v={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
    )


# Decay never touches the posterior spread parameters: shrinking rho toward 0
# would bias sigma toward softplus(0), not toward the prior.
NO_DECAY_SUFFIX = "_rho"


def adamw_step(state: OptimizerState, params: dict[str, np.ndarray],
               grads: dict[str, np.ndarray], lr: float,
               weight_decay: float) -> dict[str, np.ndarray]:
    """One decoupled-weight-decay Adam step, updating params in place."""
    if set(params) != set(grads):
        raise ValueError(f"params/grads key mismatch: {set(params) ^ set(grads)}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient {name!r} shape {g.shape} != param {p.shape}")
        if not name.endswith(NO_DECAY_SUFFIX):
            p *= 1.0 - lr * weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


@dataclass
class PlateauState:
    """Reduce-on-plateau bookkeeping over the validation loss."""

    lr: float
    factor: float
    patience: int
    min_improvement: float
    best: float = math.inf
    bad_epochs: int = 0


def plateau_step(state: PlateauState, val_loss: float) -> float:
    """Feed one epoch's validation loss; returns the learning rate to use next.

    The rate drops by ``factor`` once the loss has failed to improve on the
    best seen (by more than ``min_improvement``) for ``patience + 1``
    consecutive epochs; any improvement resets the counter.
    """
    if val_loss < state.best - state.min_improvement:
        state.best = val_loss
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= state.patience + 1:
            state.lr *= state.factor
            state.bad_epochs = 0
    return state.lr


@dataclass
class EarlyStopState:
    patience: int
    min_improvement: float
    best: float = math.inf
    bad_epochs: int = 0


def early_stop_step(state: EarlyStopState, val_loss: float) -> bool:
    """Feed one epoch's validation loss; True means stop training."""
    if val_loss < state.best - state.min_improvement:
        state.best = val_loss
        state.bad_epochs = 0
        return False
    state.bad_epochs += 1
    return state.bad_epochs >= state.patience


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "learning_rate": self.learning_rate,
            "wall_seconds": self.wall_seconds,
            "stop_reason": self.stop_reason,
        }


def elbo_objective(bce: float, kl: float, n_train: int) -> float:
    """Variational objective: data loss plus the KL penalty scaled by 1/n."""
    if n_train < 1:
        raise ValueError(f"n_train must be >= 1, got {n_train}")
    return bce + kl / n_train


def bce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy (stable logit form) and its logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("bce_loss needs at least one element")
    return binary_cross_entropy(logits, labels)


def _validation_loss(head_kind: str, params: Params, x_val, y_val,
                     head_cfg: HeadConfig, eval_rng: RngStream,
                     n_train: int) -> float:
    if head_kind == DNN:
        return bce_loss(heads.dnn_forward(params, x_val), y_val)[0]
    if head_kind == SNGP:
        logits, _ = heads.sngp_forward(params, x_val, head_cfg)
        return bce_loss(logits, y_val)[0]
    # Bayesian head: one stochastic forward with a per-epoch seed keeps early
    # stopping deterministic; the monitored value is the full objective.
    logits = heads.flipout_forward(params, x_val, eval_rng)
    bce = bce_loss(logits, y_val)[0]
    return elbo_objective(bce, heads.kl_total(params, head_cfg.prior_std), n_train)


def train(head_kind: str, dataset: EmbeddingDataset, splits: SplitIndices,
          head_cfg: HeadConfig, train_cfg: TrainConfig,
          log_fn=None) -> tuple[Params, TrainHistory]:
    """Train one head on the given split; returns best-validation parameters.

    Raises TrainingError on empty splits or if any loss turns non-finite
    (reporting the epoch and batch where training diverged).
    """
    if head_kind not in heads.HEAD_KINDS:
        raise ValueError(f"unknown head kind {head_kind!r}")
    if len(splits.train) == 0 or len(splits.val) == 0:
        raise TrainingError(
            f"cannot train on empty splits (train={len(splits.train)}, "
            f"val={len(splits.val)})"
        )
    dataset.require_labels()
    dataset.require_finite()
    x = dataset.embeddings
    y = dataset.labels.astype(np.float64)
    if head_cfg.input_dim != dataset.dim:
        raise ValueError(
            f"head input_dim {head_cfg.input_dim} != dataset dim {dataset.dim}"
        )
    train_idx = np.asarray(splits.train)
    x_val, y_val = x[np.asarray(splits.val)], y[np.asarray(splits.val)]
    n_train = len(train_idx)

    root = RngStream(train_cfg.seed)
    params = heads.init_params(head_kind, head_cfg, root.substream(STREAM_INIT))
    flip_rng = root.substream(STREAM_FLIPOUT)
    opt = init_optimizer(params.trainable())
    plateau = PlateauState(
        lr=train_cfg.learning_rate,
        factor=train_cfg.scheduler_factor,
        patience=train_cfg.scheduler_patience,
        min_improvement=train_cfg.min_improvement,
    )
    stopper = EarlyStopState(
        patience=train_cfg.early_stop_patience,
        min_improvement=train_cfg.min_improvement,
    )
    history = TrainHistory()
    best_val = math.inf
    best_params = params.copy()
    stop_reason = "max-epochs"

    for epoch in range(1, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        lr_in_effect = plateau.lr
        order = train_idx[root.substream(STREAM_SHUFFLE, epoch).permutation(n_train)]
        loss_sum = 0.0
        for batch_no, start in enumerate(range(0, n_train, train_cfg.batch_size)):
            idx = order[start:start + train_cfg.batch_size]
            loss, grads = heads.gradient(
                head_kind, params, x[idx], y[idx],
                rng=flip_rng, n_train=n_train, prior_std=head_cfg.prior_std,
            )
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_no}"
                )
            adamw_step(opt, params.trainable(), grads, lr_in_effect,
                       train_cfg.weight_decay)
            if head_kind == SNGP:
                heads.spectral_normalize(params, head_cfg)
            loss_sum += loss * len(idx)
        train_loss = loss_sum / n_train
        val_loss = _validation_loss(
            head_kind, params, x_val, y_val, head_cfg,
            root.substream(STREAM_EVAL, epoch), n_train,
        )
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")

        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.learning_rate.append(lr_in_effect)
        history.wall_seconds.append(time.perf_counter() - t0)
        if log_fn is not None:
            log_fn(
                f"epoch {epoch:4d}  train {train_loss:.6f}  val {val_loss:.6f}"
                f"  lr {lr_in_effect:.3g}"
            )

        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
        plateau_step(plateau, val_loss)
        if early_stop_step(stopper, val_loss):
            stop_reason = "early-stop"
            break

    history.stop_reason = stop_reason
    if head_kind == SNGP:
        _finalize_sngp(best_params, head_cfg, x[train_idx], train_cfg.batch_size)
    return best_params, history


def _finalize_sngp(params, head_cfg: HeadConfig, x_train, batch_size: int):
    """Exact Laplace accumulation over one full training pass, then invert."""
    params.precision = np.eye(head_cfg.rff_dim) * head_cfg.ridge
    params.covariance = None
    params.finalized = False
    for start in range(0, x_train.shape[0], batch_size):
        xb = x_train[start:start + batch_size]
        logits, _ = heads.sngp_forward(params, xb, head_cfg)
        probs = stable_sigmoid(logits)
        h = np.maximum(xb @ params.w_hid.T + params.b_hid, 0.0)
        phi = heads.rff_transform(h, params, head_cfg)
        heads.sngp_precision_update(params, phi, probs)
    heads.sngp_covariance_finalize(params)


# ---------------------------------------------------------------------------
# Flat key = value config files
# ---------------------------------------------------------------------------

_TRAIN_FIELDS = {
    "learning_rate": float,
    "scheduler_factor": float,
    "scheduler_patience": int,
    "weight_decay": float,
    "max_epochs": int,
    "batch_size": int,
    "early_stop_patience": int,
    "seed": int,
    "min_improvement": float,
}
_HEAD_FIELDS = {
    "hidden": int,
    "rff_dim": int,
    "spectral_bound": float,
    "ridge": float,
    "mean_field_lambda": float,
    "k_samples": int,
    "prior_std": float,
}


def parse_config_file(path) -> dict[str, str]:
    """Read a UTF-8 ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def configs_from_mapping(mapping: dict[str, str], input_dim: int,
                         seed: int | None = None) -> tuple[HeadConfig, TrainConfig]:
    """Build both configs from parsed key-value pairs; every key is optional."""
    head_kwargs, train_kwargs = {}, {}
    for key, raw in mapping.items():
        if key in _HEAD_FIELDS:
            head_kwargs[key] = _HEAD_FIELDS[key](raw)
        elif key in _TRAIN_FIELDS:
            train_kwargs[key] = _TRAIN_FIELDS[key](raw)
        else:
            raise ValueError(f"unknown config key {key!r}")
    if seed is not None:
        train_kwargs["seed"] = seed
    return (
        HeadConfig(input_dim=input_dim, **head_kwargs),
        TrainConfig(**train_kwargs),
    )


def load_configs(path, input_dim: int,
                 seed: int | None = None) -> tuple[HeadConfig, TrainConfig]:
    mapping = parse_config_file(path) if path is not None else {}
    return configs_from_mapping(mapping, input_dim, seed)
