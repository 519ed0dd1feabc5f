"""The three binary classification heads and their uncertainty machinery.

All heads share the same two-layer shape (input -> hidden relu -> one logit)
but differ in how much they know about their own confidence:

* dense head ("dnn"): plain deterministic layers, point predictions only.
* Bayesian head ("bnn"): every weight carries a factorized Gaussian posterior
  N(mu, softplus(rho)^2); forward passes sample weights with the flipout
  estimator and predictions aggregate K stochastic passes.
* GP head ("sngp"): a spectral-normalized hidden layer feeding a random
  Fourier feature approximation of an RBF Gaussian process, with a Laplace
  precision matrix accumulated from p(1-p)-weighted feature outer products.

Gradients are analytic and checked against central finite differences in the
test suite; the flipout gradient reuses the exact noise draws of its forward
pass so the two stay consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    DimensionError,
    NumericalError,
    RngStream,
    TWO_PI,
    binary_cross_entropy,
    inv_softplus,
    kl_gaussian,
    power_iteration,
    rademacher,
    relu,
    relu_mask,
    softplus,
    stable_sigmoid,
)

DNN = "dnn"
BNN = "bnn"
SNGP = "sngp"
HEAD_KINDS = (DNN, BNN, SNGP)


class StateError(RuntimeError):
    """An operation was called before the state it needs exists."""


@dataclass
class HeadConfig:
    """Architecture hyperparameters shared by all heads.

    ``rff_dim`` is the random-feature (inducing point) count of the GP head,
    ``k_samples`` the number of stochastic passes a Bayesian prediction
    aggregates.
    """

    input_dim: int
    hidden: int = 1024
    rff_dim: int = 1024
    spectral_bound: float = 0.95
    ridge: float = 1.0
    mean_field_lambda: float = math.pi / 8.0
    k_samples: int = 10
    prior_std: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden < 1 or self.rff_dim < 1 or self.k_samples < 1:
            raise ValueError("hidden, rff_dim and k_samples must all be >= 1")
        if self.spectral_bound <= 0.0 or self.ridge <= 0.0 or self.prior_std <= 0.0:
            raise ValueError("spectral_bound, ridge and prior_std must be positive")


@dataclass
class UncertainPrediction:
    """One row's predicted probability, predictive variance, and hard label."""

    prob_mean: float
    variance: float
    label: int


def _hard_label(prob: float) -> int:
    # Ties at exactly 0.5 go to the positive class.
    return 1 if prob >= 0.5 else 0


@dataclass
class DnnParams:
    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # ()

    def trainable(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "DnnParams":
        return DnnParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass
class BnnParams:
    """Posterior (mu, rho) pairs mirroring the dense head's tensors.

    The per-weight standard deviation is sigma = softplus(rho), kept strictly
    positive by construction.
    """

    w1_mu: np.ndarray
    w1_rho: np.ndarray
    b1_mu: np.ndarray
    b1_rho: np.ndarray
    w2_mu: np.ndarray
    w2_rho: np.ndarray
    b2_mu: np.ndarray
    b2_rho: np.ndarray

    def trainable(self) -> dict[str, np.ndarray]:
        return {
            "w1_mu": self.w1_mu, "w1_rho": self.w1_rho,
            "b1_mu": self.b1_mu, "b1_rho": self.b1_rho,
            "w2_mu": self.w2_mu, "w2_rho": self.w2_rho,
            "b2_mu": self.b2_mu, "b2_rho": self.b2_rho,
        }

    def copy(self) -> "BnnParams":
        return BnnParams(**{k: v.copy() for k, v in self.trainable().items()})

    def mean_params(self) -> DnnParams:
        """The posterior-mean dense head (the sigma -> 0 limit)."""
        return DnnParams(
            self.w1_mu.copy(), self.b1_mu.copy(), self.w2_mu.copy(), self.b2_mu.copy()
        )


@dataclass
class SngpParams:
    w_hid: np.ndarray       # (hidden, d), spectral-normalized
    b_hid: np.ndarray       # (hidden,)
    w_rff: np.ndarray       # (rff_dim, hidden), frozen at init
    b_rff: np.ndarray       # (rff_dim,), frozen at init
    beta: np.ndarray        # (rff_dim,)
    precision: np.ndarray   # (rff_dim, rff_dim), SPD
    covariance: np.ndarray | None = None
    u: np.ndarray | None = None   # persisted power-iteration warm start
    v: np.ndarray | None = None
    finalized: bool = False

    def trainable(self) -> dict[str, np.ndarray]:
        return {"w_hid": self.w_hid, "b_hid": self.b_hid, "beta": self.beta}

    def copy(self) -> "SngpParams":
        return SngpParams(
            w_hid=self.w_hid.copy(),
            b_hid=self.b_hid.copy(),
            w_rff=self.w_rff.copy(),
            b_rff=self.b_rff.copy(),
            beta=self.beta.copy(),
            precision=self.precision.copy(),
            covariance=None if self.covariance is None else self.covariance.copy(),
            u=None if self.u is None else self.u.copy(),
            v=None if self.v is None else self.v.copy(),
            finalized=self.finalized,
        )


Params = DnnParams | BnnParams | SngpParams


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_dnn(cfg: HeadConfig, rng: RngStream) -> DnnParams:
    d, h = cfg.input_dim, cfg.hidden
    return DnnParams(
        w1=rng.normal((h, d)) * math.sqrt(2.0 / d),
        b1=np.zeros(h),
        w2=rng.normal(h) * math.sqrt(1.0 / h),
        b2=np.zeros(()),
    )


def init_bnn(cfg: HeadConfig, rng: RngStream) -> BnnParams:
    """Posterior initialized at mu = 0, sigma = 1; sampling breaks symmetry."""
    del rng  # deterministic initialization; draws happen per forward pass
    d, h = cfg.input_dim, cfg.hidden
    rho0 = inv_softplus(1.0)
    return BnnParams(
        w1_mu=np.zeros((h, d)), w1_rho=np.full((h, d), rho0),
        b1_mu=np.zeros(h), b1_rho=np.full(h, rho0),
        w2_mu=np.zeros(h), w2_rho=np.full(h, rho0),
        b2_mu=np.zeros(()), b2_rho=np.full((), rho0),
    )


def init_sngp(cfg: HeadConfig, rng: RngStream) -> SngpParams:
    d, h, m = cfg.input_dim, cfg.hidden, cfg.rff_dim
    params = SngpParams(
        w_hid=rng.normal((h, d)) * math.sqrt(2.0 / d),
        b_hid=np.zeros(h),
        w_rff=rng.normal((m, h)),
        b_rff=rng.uniform(0.0, TWO_PI, m),
        beta=np.zeros(m),
        precision=np.eye(m) * cfg.ridge,
    )
    spectral_normalize(params, cfg, rng)  # cold start enforces the bound
    return params


def init_params(head_kind: str, cfg: HeadConfig, rng: RngStream) -> Params:
    if head_kind == DNN:
        return init_dnn(cfg, rng)
    if head_kind == BNN:
        return init_bnn(cfg, rng)
    if head_kind == SNGP:
        return init_sngp(cfg, rng)
    raise ValueError(f"unknown head kind {head_kind!r}")


# ---------------------------------------------------------------------------
# Dense head
# ---------------------------------------------------------------------------

def _check_batch(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionError(f"expected batch of shape (n, {d}), got {x.shape}")
    return x


def dnn_forward(params: DnnParams, x) -> np.ndarray:
    """Logits of the dense head: w2 . relu(W1 x + b1) + b2, per row."""
    x = _check_batch(x, params.w1.shape[1])
    hidden = relu(x @ params.w1.T + params.b1)
    return hidden @ params.w2 + params.b2


def _dnn_grads(params: DnnParams, x, labels) -> tuple[float, dict[str, np.ndarray]]:
    x = _check_batch(x, params.w1.shape[1])
    z1 = x @ params.w1.T + params.b1
    h1 = relu(z1)
    logits = h1 @ params.w2 + params.b2
    loss, g = binary_cross_entropy(logits, labels)
    dw2 = h1.T @ g
    db2 = np.sum(g)
    dh1 = np.outer(g, params.w2)
    dz1 = dh1 * relu_mask(z1)
    grads = {
        "w1": dz1.T @ x,
        "b1": dz1.sum(axis=0),
        "w2": dw2,
        "b2": np.asarray(db2),
    }
    return loss, grads


# ---------------------------------------------------------------------------
# Bayesian head (flipout)
# ---------------------------------------------------------------------------

@dataclass
class FlipoutDraws:
    """All randomness of one flipout forward pass.

    The weight perturbations (eps_*) are drawn once per call and shared by the
    whole batch; the Rademacher sign pairs (s*, r*) decorrelate examples.
    """

    eps_w1: np.ndarray  # (hidden, d)
    eps_b1: np.ndarray  # (hidden,)
    eps_w2: np.ndarray  # (hidden,)
    eps_b2: np.ndarray  # ()
    s1: np.ndarray      # (n, d)
    r1: np.ndarray      # (n, hidden)
    s2: np.ndarray      # (n, hidden)
    r2: np.ndarray      # (n,)


def sample_flipout_draws(params: BnnParams, n: int, rng: RngStream) -> FlipoutDraws:
    h, d = params.w1_mu.shape
    return FlipoutDraws(
        eps_w1=rng.normal((h, d)),
        eps_b1=rng.normal(h),
        eps_w2=rng.normal(h),
        eps_b2=rng.normal(()),
        s1=rademacher(rng, n * d).reshape(n, d),
        r1=rademacher(rng, n * h).reshape(n, h),
        s2=rademacher(rng, n * h).reshape(n, h),
        r2=rademacher(rng, n),
    )


def _flipout_forward_cached(params: BnnParams, x: np.ndarray, draws: FlipoutDraws):
    sig_w1 = softplus(params.w1_rho)
    sig_b1 = softplus(params.b1_rho)
    sig_w2 = softplus(params.w2_rho)
    sig_b2 = softplus(params.b2_rho)

    dw1 = sig_w1 * draws.eps_w1
    dw2 = sig_w2 * draws.eps_w2
    b1 = params.b1_mu + sig_b1 * draws.eps_b1
    b2 = params.b2_mu + sig_b2 * draws.eps_b2

    z1 = x @ params.w1_mu.T + ((x * draws.s1) @ dw1.T) * draws.r1 + b1
    h1 = relu(z1)
    logits = h1 @ params.w2_mu + ((h1 * draws.s2) @ dw2) * draws.r2 + b2
    cache = (x, z1, h1, dw1, dw2, sig_w1, sig_b1, sig_w2, sig_b2)
    return logits, cache


def flipout_forward(params: BnnParams, x, rng: RngStream) -> np.ndarray:
    """One stochastic forward pass with flipout-decorrelated weight noise."""
    x = _check_batch(x, params.w1_mu.shape[1])
    draws = sample_flipout_draws(params, x.shape[0], rng)
    logits, _ = _flipout_forward_cached(params, x, draws)
    return logits


def flipout_forward_given(params: BnnParams, x, draws: FlipoutDraws) -> np.ndarray:
    """Forward pass with caller-supplied draws (fixed-noise evaluations)."""
    x = _check_batch(x, params.w1_mu.shape[1])
    logits, _ = _flipout_forward_cached(params, x, draws)
    return logits


def kl_total(params: BnnParams, prior_std: float) -> float:
    """KL divergence of the full factorized posterior from N(0, prior_std^2)."""
    if prior_std <= 0.0:
        raise ValueError("prior_std must be positive")
    total = 0.0
    for name, mu in (("w1", params.w1_mu), ("b1", params.b1_mu),
                     ("w2", params.w2_mu), ("b2", params.b2_mu)):
        rho = getattr(params, f"{name}_rho")
        total += float(np.sum(kl_gaussian(mu, softplus(rho), prior_std)))
    return total


def bnn_objective_given(params: BnnParams, x, labels, draws: FlipoutDraws,
                        n_train: int, prior_std: float = 1.0) -> float:
    """Mean BCE of one flipout sample plus kl_total / n_train, fixed draws."""
    logits = flipout_forward_given(params, x, draws)
    loss, _ = binary_cross_entropy(logits, labels)
    return loss + kl_total(params, prior_std) / n_train


def _bnn_grads(params: BnnParams, x, labels, draws: FlipoutDraws,
               n_train: int, prior_std: float) -> tuple[float, dict[str, np.ndarray]]:
    x = _check_batch(x, params.w1_mu.shape[1])
    logits, cache = _flipout_forward_cached(params, x, draws)
    x, z1, h1, dw1, dw2, sig_w1, sig_b1, sig_w2, sig_b2 = cache
    bce, g = binary_cross_entropy(logits, labels)

    # Output layer.
    g_r2 = g * draws.r2
    d_w2_mu = h1.T @ g
    d_dw2 = (h1 * draws.s2).T @ g_r2
    d_w2_rho = d_dw2 * draws.eps_w2 * sigmoid_grad_of_rho(params.w2_rho)
    d_b2_mu = np.asarray(np.sum(g))
    d_b2_rho = np.asarray(np.sum(g) * float(draws.eps_b2)) * sigmoid_grad_of_rho(params.b2_rho)

    # Backprop into the hidden activations.
    dh1 = np.outer(g, params.w2_mu) + g_r2[:, None] * (draws.s2 * dw2[None, :])
    dz1 = dh1 * relu_mask(z1)

    # Hidden layer.
    dz1_r1 = dz1 * draws.r1
    d_w1_mu = dz1.T @ x
    d_dw1 = dz1_r1.T @ (x * draws.s1)
    d_w1_rho = d_dw1 * draws.eps_w1 * sigmoid_grad_of_rho(params.w1_rho)
    d_b1_mu = dz1.sum(axis=0)
    d_b1_rho = dz1.sum(axis=0) * draws.eps_b1 * sigmoid_grad_of_rho(params.b1_rho)

    # KL term, scaled by 1/n_train.
    p2 = prior_std * prior_std
    scale = 1.0 / n_train
    kl = kl_total(params, prior_std)
    grads = {
        "w1_mu": d_w1_mu, "w1_rho": d_w1_rho,
        "b1_mu": d_b1_mu, "b1_rho": d_b1_rho,
        "w2_mu": d_w2_mu, "w2_rho": d_w2_rho,
        "b2_mu": d_b2_mu, "b2_rho": d_b2_rho,
    }
    for name in ("w1", "b1", "w2", "b2"):
        mu = getattr(params, f"{name}_mu")
        rho = getattr(params, f"{name}_rho")
        sigma = softplus(rho)
        grads[f"{name}_mu"] = grads[f"{name}_mu"] + scale * mu / p2
        dkl_dsigma = sigma / p2 - 1.0 / sigma
        grads[f"{name}_rho"] = grads[f"{name}_rho"] + scale * dkl_dsigma * sigmoid_grad_of_rho(rho)
    return bce + scale * kl, grads


def sigmoid_grad_of_rho(rho):
    """d softplus(rho) / d rho = sigmoid(rho)."""
    return stable_sigmoid(np.asarray(rho, dtype=np.float64))


# ---------------------------------------------------------------------------
# SNGP head
# ---------------------------------------------------------------------------

def spectral_normalize(params: SngpParams, cfg: HeadConfig,
                       rng: RngStream | None = None,
                       iters: int | None = None) -> SngpParams:
    """Rescale w_hid so its estimated largest singular value stays <= bound.

    The singular-vector estimates are persisted on the params and warm-start
    the next call; a fresh matrix (no persisted vectors) gets a 20-iteration
    cold start, subsequent calls default to a single refinement step. Because
    the power-iteration estimate is a lower bound on the true norm, a single
    rescale can leave the true norm slightly above the target; rescaling is
    therefore repeated with refreshed estimates until the estimate settles at
    or below the bound.
    """
    cold = params.v is None
    if iters is None:
        iters = 20 if cold else 1
    sigma, u, v = power_iteration(params.w_hid, iters, rng=rng, u0=params.u, v0=params.v)
    for _ in range(100):
        if sigma <= cfg.spectral_bound:
            break
        params.w_hid *= cfg.spectral_bound / sigma
        sigma, u, v = power_iteration(params.w_hid, max(iters, 2), u0=u, v0=v)
    params.u, params.v = u, v
    return params


def rff_transform(h, params: SngpParams, cfg: HeadConfig | None = None) -> np.ndarray:
    """Random Fourier features phi_j = sqrt(2/D) * cos(W_rff_j . h + b_rff_j).

    Accepts a single hidden vector or an (n, hidden) batch.
    """
    h = np.asarray(h, dtype=np.float64)
    m = params.w_rff.shape[0]
    scale = math.sqrt(2.0 / m)
    if h.ndim == 1:
        return scale * np.cos(params.w_rff @ h + params.b_rff)
    return scale * np.cos(h @ params.w_rff.T + params.b_rff)


def sngp_forward(params: SngpParams, x, cfg: HeadConfig,
                 with_variance: bool = False):
    """GP-head logits and, after finalization, per-row predictive variance.

    variance_i = phi_i^T covariance phi_i; requesting it before the
    covariance exists raises StateError.
    """
    x = _check_batch(x, params.w_hid.shape[1])
    if with_variance and not params.finalized:
        raise StateError("sngp_forward(with_variance=True) requires finalized covariance")
    h = relu(x @ params.w_hid.T + params.b_hid)
    phi = rff_transform(h, params, cfg)
    logits = phi @ params.beta
    if not with_variance:
        return logits, None
    variance = np.einsum("ij,ij->i", phi @ params.covariance, phi)
    return logits, variance


def sngp_precision_update(params: SngpParams, phi_batch, probs) -> SngpParams:
    """Accumulate sum_i p_i (1 - p_i) phi_i phi_i^T into the precision matrix."""
    phi = np.asarray(phi_batch, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probs must lie in [0, 1]")
    if phi.ndim != 2 or phi.shape[0] != p.shape[0]:
        raise DimensionError(f"phi batch {phi.shape} does not match probs {p.shape}")
    weighted = phi * np.sqrt(p * (1.0 - p))[:, None]
    params.precision += weighted.T @ weighted
    params.precision = 0.5 * (params.precision + params.precision.T)
    return params


def sngp_covariance_finalize(params: SngpParams) -> SngpParams:
    """Invert the accumulated precision into the predictive covariance."""
    from scipy.linalg import LinAlgError, cho_factor, cho_solve

    m = params.precision.shape[0]
    try:
        factor = cho_factor(params.precision, lower=True)
    except LinAlgError as exc:
        cond = float(np.linalg.cond(params.precision))
        raise NumericalError(
            f"precision matrix is not positive definite (condition ~ {cond:.3e})"
        ) from exc
    cov = cho_solve(factor, np.eye(m))
    cov = 0.5 * (cov + cov.T)
    residual = float(np.max(np.abs(params.precision @ cov - np.eye(m))))
    if residual > 1e-8:
        cond = float(np.linalg.cond(params.precision))
        raise NumericalError(
            f"precision inversion residual {residual:.3e} exceeds 1e-8 "
            f"(condition ~ {cond:.3e})"
        )
    params.covariance = cov
    params.finalized = True
    return params


def _sngp_grads(params: SngpParams, x, labels) -> tuple[float, dict[str, np.ndarray]]:
    x = _check_batch(x, params.w_hid.shape[1])
    m = params.w_rff.shape[0]
    scale = math.sqrt(2.0 / m)
    z1 = x @ params.w_hid.T + params.b_hid
    h = relu(z1)
    a = h @ params.w_rff.T + params.b_rff
    phi = scale * np.cos(a)
    logits = phi @ params.beta
    loss, g = binary_cross_entropy(logits, labels)

    dbeta = phi.T @ g
    dphi = np.outer(g, params.beta)
    da = dphi * (-scale * np.sin(a))
    dh = da @ params.w_rff
    dz1 = dh * relu_mask(z1)
    grads = {
        "w_hid": dz1.T @ x,
        "b_hid": dz1.sum(axis=0),
        "beta": dbeta,
    }
    return loss, grads


def mean_field_adjust(logit, variance, lam: float):
    """Squash a logit by sqrt(1 + lam * variance) before the sigmoid.

    Growing variance pulls the probability toward 0.5 without ever flipping
    the hard label.
    """
    logit = np.asarray(logit, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance < 0.0):
        raise ValueError("variance must be >= 0")
    return stable_sigmoid(logit / np.sqrt(1.0 + lam * variance))


# ---------------------------------------------------------------------------
# Unified gradient / prediction entry points
# ---------------------------------------------------------------------------

def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    return y


def gradient(head_kind: str, params: Params, x, labels,
             rng: RngStream | None = None, n_train: int = 1,
             prior_std: float = 1.0) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic gradients of the head's training objective.

    Dense and GP heads minimize mean BCE over the batch; the Bayesian head
    minimizes mean BCE of a single flipout sample plus kl_total / n_train,
    with the gradient evaluated at the same noise draws as that sample.
    """
    y = _check_labels(labels)
    if n_train < 1:
        raise ValueError("n_train must be >= 1")
    if head_kind == DNN:
        return _dnn_grads(params, x, y)
    if head_kind == SNGP:
        return _sngp_grads(params, x, y)
    if head_kind == BNN:
        if rng is None:
            raise ValueError("bnn gradient requires an rng for the flipout draws")
        x = _check_batch(x, params.w1_mu.shape[1])
        draws = sample_flipout_draws(params, x.shape[0], rng)
        return _bnn_grads(params, x, y, draws, n_train, prior_std)
    raise ValueError(f"unknown head kind {head_kind!r}")


def predict_with_uncertainty(head_kind: str, params: Params, x,
                             cfg: HeadConfig,
                             rng: RngStream | None = None) -> list[UncertainPrediction]:
    """Per-row probability mean, predictive variance, and hard label.

    Dense: single pass, variance exactly 0. Bayesian: K = cfg.k_samples
    stochastic passes; mean and population variance of the K sigmoid outputs.
    GP: mean-field-adjusted probability with the Laplace logit variance.
    """
    if head_kind == DNN:
        probs = stable_sigmoid(dnn_forward(params, x))
        return [UncertainPrediction(float(p), 0.0, _hard_label(float(p))) for p in probs]
    if head_kind == BNN:
        if rng is None:
            raise ValueError("bnn prediction requires an rng")
        x = _check_batch(x, params.w1_mu.shape[1])
        samples = np.empty((cfg.k_samples, x.shape[0]))
        for k in range(cfg.k_samples):
            samples[k] = stable_sigmoid(flipout_forward(params, x, rng))
        means = samples.mean(axis=0)
        variances = samples.var(axis=0)  # population variance over the K draws
        return [
            UncertainPrediction(float(p), float(v), _hard_label(float(p)))
            for p, v in zip(means, variances)
        ]
    if head_kind == SNGP:
        if not params.finalized:
            raise StateError("sngp prediction requires finalized covariance")
        logits, variance = sngp_forward(params, x, cfg, with_variance=True)
        variance = np.maximum(variance, 0.0)  # clamp round-off negatives
        probs = mean_field_adjust(logits, variance, cfg.mean_field_lambda)
        return [
            UncertainPrediction(float(p), float(v), _hard_label(float(p)))
            for p, v in zip(probs, variance)
        ]
    raise ValueError(f"unknown head kind {head_kind!r}")
