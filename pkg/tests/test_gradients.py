"""Analytic gradients vs central finite differences for all three heads."""

import numpy as np
import pytest

from gradcheck import REL_TOL, max_relative_error
from uqheads.heads import (
    BNN,
    DNN,
    SNGP,
    HeadConfig,
    bnn_objective_given,
    dnn_forward,
    gradient,
    init_bnn,
    init_dnn,
    init_sngp,
    sample_flipout_draws,
    sngp_forward,
    _bnn_grads,
)
from uqheads.numerics import RngStream, binary_cross_entropy, inv_softplus


CFG = HeadConfig(input_dim=3, hidden=4, rff_dim=4)
N = 5


def random_instance(head_kind, seed):
    """A small random head whose preactivations sit safely off the relu kink.

    Finite differences are only a valid oracle on a smooth neighborhood, so
    instances that put a preactivation or a saturated logit within the step
    size of a kink are redrawn.
    """
    for attempt in range(50):
        rng = RngStream(seed, (head_kind == BNN, attempt))
        x = rng.normal((N, 3))
        y = (rng.uniform(0.0, 1.0, N) < 0.5).astype(float)
        if head_kind == DNN:
            p = init_dnn(CFG, rng)
            p.b1[:] = rng.normal(4) * 0.1
            p.b2[...] = rng.normal(()) * 0.1
            pre = x @ p.w1.T + p.b1
            logits = dnn_forward(p, x)
        elif head_kind == SNGP:
            p = init_sngp(CFG, rng)
            p.beta[:] = rng.normal(4) * 0.5
            p.b_hid[:] = rng.normal(4) * 0.1
            pre = x @ p.w_hid.T + p.b_hid
            logits, _ = sngp_forward(p, x, CFG)
        else:
            p = init_bnn(CFG, rng)
            p.w1_mu[:] = rng.normal((4, 3)) * 0.7
            p.b1_mu[:] = rng.normal(4) * 0.3
            p.w2_mu[:] = rng.normal(4) * 0.7
            p.b2_mu[...] = rng.normal(()) * 0.3
            for name in ("w1_rho", "b1_rho", "w2_rho", "b2_rho"):
                getattr(p, name)[...] = inv_softplus(0.3)
            draws = sample_flipout_draws(p, N, rng.substream(999))
            from uqheads.heads import flipout_forward_given

            logits = flipout_forward_given(p, x, draws)
            sig_w1 = 0.3
            dw1 = sig_w1 * draws.eps_w1
            b1 = p.b1_mu + sig_w1 * draws.eps_b1
            pre = x @ p.w1_mu.T + ((x * draws.s1) @ dw1.T) * draws.r1 + b1
            if np.min(np.abs(pre)) > 1e-3 and np.max(np.abs(logits)) < 30.0:
                return p, x, y, draws
            continue
        if np.min(np.abs(pre)) > 1e-3 and np.max(np.abs(logits)) < 30.0:
            return p, x, y, None
    raise RuntimeError("could not draw a finite-difference-safe instance")


def check_head(head_kind, seed) -> float:
    params, x, y, draws = random_instance(head_kind, seed)
    if head_kind == DNN:
        _, grads = gradient(DNN, params, x, y)
        loss_fn = lambda: binary_cross_entropy(dnn_forward(params, x), y)[0]
    elif head_kind == SNGP:
        _, grads = gradient(SNGP, params, x, y)
        loss_fn = lambda: binary_cross_entropy(sngp_forward(params, x, CFG)[0], y)[0]
    else:
        n_train = 37
        _, grads = _bnn_grads(params, x, y, draws, n_train, 1.0)
        loss_fn = lambda: bnn_objective_given(params, x, y, draws, n_train)
    return max_relative_error(loss_fn, params.trainable(), grads)


@pytest.mark.parametrize("head_kind", [DNN, SNGP, BNN])
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(head_kind, seed):
    assert check_head(head_kind, seed) < REL_TOL


def test_dnn_saturated_fixed_point():
    p = init_dnn(CFG, RngStream(7))
    p.b2[...] = 40.0  # every logit saturates correct for label 1
    x = RngStream(8).normal((N, 3)) * 0.01
    y = np.ones(N)
    loss, grads = gradient(DNN, p, x, y)
    assert loss < 1e-10
    norm = np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    assert norm < 1e-10


def test_bnn_small_sigma_mu_grads_match_dnn():
    # With sigma ~ 0 the flipout path vanishes, so the mu gradients must
    # collapse onto the dense gradients of the same weights.
    rng = RngStream(31)
    dense = init_dnn(CFG, rng)
    dense.b1[:] = rng.normal(4) * 0.2
    bayes = init_bnn(CFG, RngStream(0))
    bayes.w1_mu[:] = dense.w1
    bayes.b1_mu[:] = dense.b1
    bayes.w2_mu[:] = dense.w2
    bayes.b2_mu[...] = dense.b2
    for name in ("w1_rho", "b1_rho", "w2_rho", "b2_rho"):
        getattr(bayes, name)[...] = -40.0
    x = RngStream(32).normal((N, 3))
    y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    # Enormous n_train makes the KL term negligible for the comparison.
    _, bnn_grads = gradient(BNN, bayes, x, y, RngStream(33), n_train=10**12)
    _, dnn_grads = gradient(DNN, dense, x, y)
    for dense_name, mu_name in (("w1", "w1_mu"), ("b1", "b1_mu"),
                                ("w2", "w2_mu"), ("b2", "b2_mu")):
        np.testing.assert_allclose(
            np.asarray(bnn_grads[mu_name]), np.asarray(dnn_grads[dense_name]),
            atol=1e-6,
        )


def test_gradient_validates_inputs():
    p = init_dnn(CFG, RngStream(0))
    with pytest.raises(ValueError):
        gradient(DNN, p, np.zeros((2, 3)), np.array([0.0, 2.0]))
    with pytest.raises(ValueError):
        gradient(BNN, init_bnn(CFG, RngStream(0)), np.zeros((1, 3)),
                 np.array([1.0]), rng=None)
    with pytest.raises(ValueError):
        gradient("mlp", p, np.zeros((1, 3)), np.array([1.0]))
