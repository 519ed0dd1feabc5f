#!/usr/bin/env python3
"""Desk-scale benchmark: train all three heads on synthetic embeddings and
print the combined performance/latency/compute table plus the decile table.

    python3 scripts/run_synthetic_benchmark.py --seed 7
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from uqheads.data import split_dataset
from uqheads.evaluation import (
    EvalReport,
    accuracy,
    f1_binary,
    flop_proxy,
    render_decile_table,
    timing_benchmark,
    variance_decile_report,
)
from uqheads.heads import BNN, DNN, SNGP, HeadConfig, predict_with_uncertainty
from uqheads.numerics import RngStream
from uqheads.synthetic import noisy_region_dataset, two_gaussian_dataset
from uqheads.training import STREAM_PREDICT, TrainConfig, train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--rff-dim", type=int, default=64)
    parser.add_argument("--noisy-region", action="store_true",
                        help="use the label-noise-in-one-region dataset")
    parser.add_argument("--learning-rate", type=float, default=1e-2)
    parser.add_argument("--max-epochs", type=int, default=50)
    args = parser.parse_args()

    make = noisy_region_dataset if args.noisy_region else two_gaussian_dataset
    ds = make(n=args.n, dim=args.dim, seed=args.seed)
    splits = split_dataset(ds.n, args.seed)
    cfg = HeadConfig(input_dim=args.dim, hidden=args.hidden,
                     rff_dim=args.rff_dim, k_samples=10)
    tc = TrainConfig(learning_rate=args.learning_rate, max_epochs=args.max_epochs,
                     batch_size=16, seed=args.seed)
    x_test = ds.embeddings[splits.test]
    y_test = ds.labels[splits.test].astype(int)

    rows = []
    print(f"{'head':<6} {'acc':>7} {'f1':>7} {'latency (ms)':>16} "
          f"{'MACs/pred':>12} {'train s':>8} {'epochs':>7}")
    for head_kind in (DNN, SNGP, BNN):
        t0 = time.perf_counter()
        params, history = train(head_kind, ds, splits, cfg, tc)
        train_s = time.perf_counter() - t0
        rng = RngStream(args.seed).substream(STREAM_PREDICT)
        preds = predict_with_uncertainty(head_kind, params, x_test, cfg, rng)
        hard = np.array([p.label for p in preds])
        top, bottom, mean_var = variance_decile_report(preds, y_test)
        lat_mean, lat_std = timing_benchmark(
            head_kind, params, x_test[:16], cfg, repeats=5,
            rng=RngStream(args.seed).substream(STREAM_PREDICT, 1),
        )
        report = EvalReport(
            accuracy=accuracy(hard, y_test),
            f1=f1_binary(hard, y_test),
            latency_ms_mean=lat_mean,
            latency_ms_std=lat_std,
            k_samples_used=cfg.k_samples if head_kind == BNN else 1,
            top_decile_accuracy=top,
            bottom_decile_accuracy=bottom,
            mean_variance=mean_var,
            flop_proxy=flop_proxy(head_kind, cfg),
            wall_seconds=train_s,
        )
        rows.append((head_kind, report))
        print(f"{head_kind:<6} {report.accuracy:>7.4f} {report.f1:>7.4f} "
              f"{lat_mean:>8.2f} ± {lat_std:<5.2f} {report.flop_proxy:>12,d} "
              f"{train_s:>8.1f} {len(history.train_loss):>7d}")

    print()
    print(render_decile_table(rows))


if __name__ == "__main__":
    main()
