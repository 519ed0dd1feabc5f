"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with ``pytest -v -s tests/test_acceptance.py``).

Full-scale encoder results are not reproducible on a desk machine, so
acceptance is property-based plus scaled-down experiments with pinned
tolerances. Experiment configurations here are deliberately small; every
hyperparameter deviating from the defaults is an explicit config value.
"""

import math
import time

import numpy as np
from scipy.integrate import quad

from gradcheck import REL_TOL
from test_gradients import check_head
from uqheads import heads
from uqheads.cli import dispatch
from uqheads.data import split_dataset, write_embedding_file
from uqheads.evaluation import accuracy, f1_binary, timing_benchmark, variance_decile_report
from uqheads.heads import (
    BNN,
    DNN,
    SNGP,
    HeadConfig,
    init_bnn,
    init_dnn,
    init_params,
    kl_total,
    predict_with_uncertainty,
    rff_transform,
    sngp_covariance_finalize,
    sngp_forward,
    sngp_precision_update,
)
from uqheads.numerics import RngStream, inv_softplus, power_iteration, stable_sigmoid
from uqheads.synthetic import noisy_region_dataset, two_gaussian_dataset
from uqheads.training import (
    STREAM_PREDICT,
    TrainConfig,
    adamw_step,
    init_optimizer,
    train,
)


def report(name: str, ok: bool, detail: str):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_gradient_oracle():
    """Analytic gradients match central finite differences for every head."""
    t0 = time.perf_counter()
    worst = 0.0
    for head_kind in (DNN, SNGP, BNN):
        for seed in range(20):
            worst = max(worst, check_head(head_kind, seed))
    elapsed = time.perf_counter() - t0
    report(
        "gradient oracle",
        worst < REL_TOL and elapsed < 30.0,
        f"max relative error {worst:.3e} (< {REL_TOL}) over 60 instances "
        f"in {elapsed:.1f}s (< 30s)",
    )


def test_spectral_bound_after_training():
    """200 GP-head training steps keep the hidden weight norm at the bound."""
    ds = two_gaussian_dataset(n=640, dim=16, seed=3)
    cfg = HeadConfig(input_dim=16, hidden=64, rff_dim=64)
    rng = RngStream(3)
    params = init_params(SNGP, cfg, rng.substream(1))
    opt = init_optimizer(params.trainable())
    x, y = ds.embeddings, ds.labels.astype(float)
    steps, epoch = 0, 0
    while steps < 200:
        epoch += 1
        order = rng.substream(2, epoch).permutation(ds.n)
        for start in range(0, ds.n, 16):
            idx = order[start:start + 16]
            _, grads = heads.gradient(SNGP, params, x[idx], y[idx])
            adamw_step(opt, params.trainable(), grads, 5e-3, 0.01)
            heads.spectral_normalize(params, cfg)
            steps += 1
            if steps == 200:
                break
    sigma_pi, _, _ = power_iteration(params.w_hid, 20, u0=params.u, v0=params.v)
    sigma_svd = float(np.linalg.svd(params.w_hid, compute_uv=False)[0])
    ok = sigma_pi <= 0.95 + 1e-3 and abs(sigma_pi - sigma_svd) <= 1e-3
    report(
        "spectral bound",
        ok,
        f"after 200 steps: power-iteration sigma {sigma_pi:.6f} <= 0.951, "
        f"|pi - svd| = {abs(sigma_pi - sigma_svd):.2e} <= 1e-3",
    )


def test_laplace_oracle():
    """Precision equals the brute-force sum; inversion residual stays tiny."""
    cfg = HeadConfig(input_dim=5, hidden=6, rff_dim=24)
    rng = RngStream(17)
    params = init_params(SNGP, cfg, rng.substream(1))
    brute = cfg.ridge * np.eye(24)
    for batch_size in (1, 3, 16, 7, 32):
        phi = rng.normal((batch_size, 24))
        probs = stable_sigmoid(rng.normal(batch_size) * 2.0)
        for i in range(batch_size):
            brute += probs[i] * (1.0 - probs[i]) * np.outer(phi[i], phi[i])
        sngp_precision_update(params, phi, probs)
    precision_err = float(np.max(np.abs(params.precision - brute)))
    sngp_covariance_finalize(params)
    residual = float(np.max(np.abs(params.precision @ params.covariance - np.eye(24))))
    ok = precision_err <= 1e-10 and residual <= 1e-8
    report(
        "laplace oracle",
        ok,
        f"batch-vs-brute-force precision gap {precision_err:.2e} <= 1e-10, "
        f"inversion residual {residual:.2e} <= 1e-8",
    )


def test_flipout_expectation():
    """With sigma = 1e-3 the stochastic forward is unbiased for the mean path."""
    cfg = HeadConfig(input_dim=3, hidden=4)
    params = init_bnn(cfg, RngStream(0))
    dense = init_dnn(cfg, RngStream(61))
    dense.b1[:] = RngStream(62).normal(4) * 0.5 + 0.5
    params.w1_mu[:] = dense.w1
    params.b1_mu[:] = dense.b1
    params.w2_mu[:] = dense.w2
    params.b2_mu[...] = dense.b2
    rho = inv_softplus(1e-3)
    for name in ("w1_rho", "b1_rho", "w2_rho", "b2_rho"):
        getattr(params, name)[...] = rho
    x = RngStream(63).normal((10, 3))
    # The estimator is only mean-unbiased through relu while the noise stays
    # on one side of the kink; keep preactivations >= 10 sigma away from it.
    pre = x @ params.w1_mu.T + params.b1_mu
    assert np.min(np.abs(pre)) > 0.01
    target = heads.dnn_forward(dense, x)
    k = 10_000
    draws_rng = RngStream(900)
    samples = np.empty((k, 10))
    for i in range(k):
        samples[i] = heads.flipout_forward(params, x, draws_rng)
    se = samples.std(axis=0, ddof=1) / math.sqrt(k)
    gap = np.abs(samples.mean(axis=0) - target)
    ok = bool(np.all(gap <= 3.0 * se))
    report(
        "flipout expectation",
        ok,
        f"max |mc mean - dense| / se = {float(np.max(gap / se)):.2f} <= 3 "
        f"over 10 inputs x {k} draws",
    )


def test_kl_oracle():
    """Closed-form KL total matches numerical quadrature on 50 random pairs."""

    def kl_quadrature(mu, sigma, prior):
        def integrand(w):
            q = math.exp(-0.5 * ((w - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
            p = math.exp(-0.5 * (w / prior) ** 2) / (prior * math.sqrt(2 * math.pi))
            return q * math.log(q / p)
        val, _ = quad(integrand, mu - 12 * sigma, mu + 12 * sigma, limit=200)
        return val

    cfg = HeadConfig(input_dim=1, hidden=1)
    rng = RngStream(29)
    worst = 0.0
    for _ in range(50):
        mu = float(rng.uniform(-3.0, 3.0))
        sigma = float(rng.uniform(0.05, 3.0))
        params = init_bnn(cfg, RngStream(0))
        params.w1_mu[0, 0] = mu
        params.w1_rho[0, 0] = inv_softplus(sigma)
        worst = max(worst, abs(kl_total(params, 1.0) - kl_quadrature(mu, sigma, 1.0)))
    report("kl oracle", worst <= 1e-6,
           f"max |closed form - quadrature| = {worst:.2e} <= 1e-6 over 50 pairs")


SYNTH_CFG = dict(input_dim=16, hidden=64, rff_dim=64, k_samples=10)


def test_synthetic_performance():
    """All three heads master separable two-Gaussian data within 50 epochs."""
    t0 = time.perf_counter()
    ds = two_gaussian_dataset(n=2000, dim=16, seed=7)
    splits = split_dataset(ds.n, 7)
    cfg = HeadConfig(**SYNTH_CFG)
    tc = TrainConfig(learning_rate=1e-2, max_epochs=50, batch_size=16, seed=7)
    y_test = ds.labels[splits.test].astype(int)
    results = {}
    for head_kind in (DNN, SNGP, BNN):
        params, history = train(head_kind, ds, splits, cfg, tc)
        rng = RngStream(7).substream(STREAM_PREDICT)
        preds = predict_with_uncertainty(head_kind, params,
                                         ds.embeddings[splits.test], cfg, rng)
        hard = np.array([p.label for p in preds])
        results[head_kind] = (
            accuracy(hard, y_test), f1_binary(hard, y_test), len(history.train_loss)
        )
    elapsed = time.perf_counter() - t0
    ok = elapsed < 120.0 and all(
        acc >= 0.97 and f1 >= 0.97 and epochs <= 50
        for acc, f1, epochs in results.values()
    )
    detail = ", ".join(
        f"{k}: acc {a:.3f} f1 {f:.3f} in {e} epochs" for k, (a, f, e) in results.items()
    )
    report("synthetic performance", ok, f"{detail}; total {elapsed:.1f}s (< 120s)")


def test_variance_decile_pattern():
    """Low-variance deciles beat high-variance deciles once labels are noisy
    in an under-represented region, for both uncertainty-aware heads."""
    cfg = HeadConfig(**SYNTH_CFG)
    train_cfgs = {
        # The GP head's density signal is sharpest before the probabilities
        # saturate; the Bayesian head needs the longer schedule to settle.
        SNGP: lambda seed: TrainConfig(learning_rate=4e-3, max_epochs=50,
                                       batch_size=32, early_stop_patience=10,
                                       seed=seed),
        BNN: lambda seed: TrainConfig(learning_rate=1e-2, max_epochs=80,
                                      batch_size=32, early_stop_patience=50,
                                      seed=seed),
    }
    worst = {}
    for head_kind, make_tc in train_cfgs.items():
        gaps = []
        for seed in range(5):
            ds = noisy_region_dataset(n=2000, dim=16, seed=seed)
            splits = split_dataset(ds.n, seed)
            params, _ = train(head_kind, ds, splits, cfg, make_tc(seed))
            rng = RngStream(seed).substream(STREAM_PREDICT)
            preds = predict_with_uncertainty(head_kind, params,
                                             ds.embeddings[splits.test], cfg, rng)
            y = ds.labels[splits.test].astype(int)
            top, bottom, _ = variance_decile_report(preds, y)
            gaps.append(bottom - top)
        worst[head_kind] = min(gaps)
    ok = all(gap >= 0.05 for gap in worst.values())
    report(
        "variance decile pattern",
        ok,
        f"min(bottom - top) over 5 seeds: "
        + ", ".join(f"{k} {v:+.3f}" for k, v in worst.items())
        + " (each >= +0.05)",
    )


def test_latency_pattern():
    """K-sample Bayesian prediction costs >= 5x dense; GP stays within 3x."""
    from threadpoolctl import threadpool_limits

    d, h, m = 4096, 1024, 1024
    cfg = HeadConfig(input_dim=d, hidden=h, rff_dim=m, k_samples=10)
    rng = RngStream(0)
    x = rng.normal((64, d))
    dnn = init_params(DNN, cfg, rng.substream(1))
    bnn = init_params(BNN, cfg, rng.substream(2))
    bnn.w1_mu[:] = rng.normal((h, d)) * 0.02
    sngp = init_params(SNGP, cfg, rng.substream(3))
    logits, _ = sngp_forward(sngp, x[:32], cfg)
    hidden = np.maximum(x[:32] @ sngp.w_hid.T + sngp.b_hid, 0.0)
    sngp_precision_update(sngp, rff_transform(hidden, sngp, cfg),
                          stable_sigmoid(logits))
    sngp_covariance_finalize(sngp)

    # Pin to one BLAS thread and take the best of several short benchmarks:
    # ratios, not absolute times, are under test, and shared-machine load
    # otherwise swamps them.
    def robust_ms(kind, params, trials):
        return min(
            timing_benchmark(kind, params, x, cfg, repeats=2, rng=RngStream(9))[0]
            for _ in range(trials)
        )

    times = {}
    with threadpool_limits(1):
        times[DNN] = robust_ms(DNN, dnn, trials=4)
        times[SNGP] = robust_ms(SNGP, sngp, trials=4)
        times[BNN] = robust_ms(BNN, bnn, trials=1)
    bnn_ratio = times[BNN] / times[DNN]
    sngp_ratio = times[SNGP] / times[DNN]
    ok = bnn_ratio >= 5.0 and sngp_ratio <= 3.0
    report(
        "latency pattern",
        ok,
        f"per-batch ms dnn {times[DNN]:.1f}, bnn {times[BNN]:.1f}, "
        f"sngp {times[SNGP]:.1f}; bnn/dnn {bnn_ratio:.1f}x (>= 5), "
        f"sngp/dnn {sngp_ratio:.2f}x (<= 3)",
    )


def test_distance_awareness():
    """GP variance grows far from the data; dense variance is identically 0."""
    ds = two_gaussian_dataset(n=2000, dim=16, seed=5)
    splits = split_dataset(ds.n, 5)
    cfg = HeadConfig(**SYNTH_CFG)
    tc = TrainConfig(learning_rate=1e-3, max_epochs=15, batch_size=16, seed=5)
    x_train = ds.embeddings[splits.train]
    probe = x_train.mean(axis=0)
    probe[2] += 100.0 * float(x_train.std())

    sngp_params, _ = train(SNGP, ds, splits, cfg, tc)
    rng = RngStream(5).substream(STREAM_PREDICT)
    train_preds = predict_with_uncertainty(SNGP, sngp_params, x_train, cfg, rng)
    far_var = predict_with_uncertainty(SNGP, sngp_params, probe[None, :], cfg, rng)[0].variance
    mean_train_var = float(np.mean([p.variance for p in train_preds]))
    ratio = far_var / mean_train_var

    dnn_params, _ = train(DNN, ds, splits, cfg, tc)
    dnn_preds = predict_with_uncertainty(
        DNN, dnn_params, np.vstack([x_train[:50], probe[None, :]]), cfg)
    dnn_all_zero = all(p.variance == 0.0 for p in dnn_preds)
    ok = ratio >= 5.0 and dnn_all_zero
    report(
        "distance awareness",
        ok,
        f"far-point variance {far_var:.4f} = {ratio:.1f}x mean train variance "
        f"{mean_train_var:.4f} (>= 5x); dense variance identically 0: {dnn_all_zero}",
    )


def test_determinism(tmp_path):
    """Equal seeds give byte-identical model files and reports end to end."""
    ds = two_gaussian_dataset(n=400, dim=8, seed=13)
    emb = tmp_path / "d.uqeb"
    write_embedding_file(emb, ds)
    cfg_file = tmp_path / "fast.cfg"
    cfg_file.write_text(
        "learning_rate = 0.005\nmax_epochs = 6\nhidden = 16\nrff_dim = 16\n"
        "k_samples = 4\n"
    )
    identical = {}
    for head_kind in (DNN, SNGP):
        blobs = []
        for run in ("a", "b"):
            model = tmp_path / f"{head_kind}-{run}.uqh"
            rep = tmp_path / f"{head_kind}-{run}.json"
            assert dispatch([
                "train", "--head", head_kind, "--embeddings", str(emb),
                "--config", str(cfg_file), "--seed", "13",
                "--out", str(model), "--quiet",
            ]) == 0
            assert dispatch([
                "eval", "--model", str(model), "--embeddings", str(emb),
                "--seed", "13", "--report", str(rep), "--no-timing",
            ]) == 0
            blobs.append((model.read_bytes(), rep.read_bytes()))
        identical[head_kind] = blobs[0] == blobs[1]

    from uqheads.training import load_configs

    head_cfg, train_cfg = load_configs(cfg_file, ds.dim, seed=13)
    splits = split_dataset(ds.n, 13)
    _, h1 = train(BNN, ds, splits, head_cfg, train_cfg)
    _, h2 = train(BNN, ds, splits, head_cfg, train_cfg)
    bnn_identical = (h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss
                     and h1.learning_rate == h2.learning_rate)
    ok = all(identical.values()) and bnn_identical
    report(
        "determinism",
        ok,
        f"byte-identical model+report pairs: dnn {identical[DNN]}, "
        f"sngp {identical[SNGP]}; bnn histories identical: {bnn_identical}",
    )
