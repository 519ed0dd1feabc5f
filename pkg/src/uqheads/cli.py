"""Command-line pipeline: train, eval, predict, and rank by uncertainty.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical or
training error. Every source of randomness in a run is derived from the
single --seed flag, so repeating a command reproduces its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import evaluation, heads, training
from .data import FormatError, load_dataset, split_dataset
from .heads import BNN, DNN, SNGP
from .model_io import ModelFormatError, load_model, save_model
from .numerics import NumericalError, RngStream
from .training import STREAM_PREDICT, TrainingError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through our exit-code scheme."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> _Parser:
    parser = _Parser(prog="uqheads", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_train = sub.add_parser("train", help="train one head on an embedding file")
    p_train.add_argument("--head", required=True, choices=[DNN, BNN, SNGP])
    p_train.add_argument("--embeddings", required=True)
    p_train.add_argument("--config", default=None,
                         help="key = value file; every key optional")
    p_train.add_argument("--seed", type=int, default=None,
                         help="run seed (overrides the config file)")
    p_train.add_argument("--out", required=True, help="model file to write")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a model on its test split")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--embeddings", required=True)
    p_eval.add_argument("--seed", type=int, default=None,
                        help="split seed; defaults to the model's training seed")
    p_eval.add_argument("--report", required=True, help="report JSON to write")
    p_eval.add_argument("--allow-seed-mismatch", action="store_true",
                        help="evaluate even when --seed differs from the model's")
    p_eval.add_argument("--timing-repeats", type=int, default=5)
    p_eval.add_argument("--no-timing", action="store_true",
                        help="skip the latency benchmark; timing fields become 0 "
                             "and the report is byte-reproducible")

    p_pred = sub.add_parser("predict", help="write per-row predictions as JSON lines")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--embeddings", required=True)
    p_pred.add_argument("--out", required=True)

    p_rank = sub.add_parser("rank", help="show the most and least uncertain rows")
    p_rank.add_argument("--model", required=True)
    p_rank.add_argument("--embeddings", required=True)
    p_rank.add_argument("--top", type=int, default=10,
                        help="how many highest-variance rows to print")
    p_rank.add_argument("--bottom", type=int, default=10,
                        help="how many lowest-variance rows to print")
    return parser


def cmd_train(args) -> int:
    dataset = load_dataset(args.embeddings)
    dataset.require_labels()
    dataset.require_finite()
    head_cfg, train_cfg = training.load_configs(args.config, dataset.dim, args.seed)
    splits = split_dataset(dataset.n, train_cfg.seed)
    log_fn = None if args.quiet else print
    params, history = training.train(args.head, dataset, splits, head_cfg,
                                     train_cfg, log_fn=log_fn)
    save_model(args.out, args.head, head_cfg, params, train_cfg.seed)
    history_path = f"{args.out}.history.json"
    with open(history_path, "w", encoding="utf-8") as fh:
        json.dump(history.to_dict(), fh, indent=2)
        fh.write("\n")
    if not args.quiet:
        print(f"wrote {args.out} and {history_path} "
              f"({len(history.train_loss)} epochs, {history.stop_reason})")
    return 0


def _predictions(head_kind, params, x, cfg, train_seed):
    rng = RngStream(train_seed).substream(STREAM_PREDICT)
    return heads.predict_with_uncertainty(head_kind, params, x, cfg, rng)


def cmd_eval(args) -> int:
    head_kind, cfg, params, train_seed = load_model(args.model)
    seed = train_seed if args.seed is None else args.seed
    if seed != train_seed and not args.allow_seed_mismatch:
        raise UsageError(
            f"--seed {seed} differs from the model's training seed {train_seed}; "
            f"the test split would overlap training data "
            f"(pass --allow-seed-mismatch to proceed)"
        )
    dataset = load_dataset(args.embeddings)
    dataset.require_labels()
    dataset.require_finite()
    if dataset.dim != cfg.input_dim:
        raise FormatError(
            f"{args.embeddings}: dimension {dataset.dim} does not match the "
            f"model's input dimension {cfg.input_dim}"
        )
    t0 = time.perf_counter()
    splits = split_dataset(dataset.n, seed)
    x_test = dataset.embeddings[splits.test]
    y_test = dataset.labels[splits.test].astype(int)
    preds = _predictions(head_kind, params, x_test, cfg, train_seed)
    hard = np.array([p.label for p in preds])
    top_acc, bottom_acc, mean_var = evaluation.variance_decile_report(preds, y_test)
    if args.no_timing:
        latency_mean = latency_std = wall = 0.0
    else:
        batch = x_test[: min(len(x_test), 16)]
        rng = RngStream(train_seed).substream(STREAM_PREDICT, 1)
        latency_mean, latency_std = evaluation.timing_benchmark(
            head_kind, params, batch, cfg, repeats=args.timing_repeats, rng=rng
        )
        wall = time.perf_counter() - t0
    report = evaluation.EvalReport(
        accuracy=evaluation.accuracy(hard, y_test),
        f1=evaluation.f1_binary(hard, y_test),
        latency_ms_mean=latency_mean,
        latency_ms_std=latency_std,
        k_samples_used=cfg.k_samples if head_kind == BNN else 1,
        top_decile_accuracy=top_acc,
        bottom_decile_accuracy=bottom_acc,
        mean_variance=mean_var,
        flop_proxy=evaluation.flop_proxy(head_kind, cfg),
        wall_seconds=wall,
    )
    evaluation.write_report(report, args.report)
    print(evaluation.render_decile_table([(head_kind, report)]))
    print(f"accuracy {report.accuracy:.4f}  f1 {report.f1:.4f}  "
          f"wrote {args.report}")
    return 0


def cmd_predict(args) -> int:
    head_kind, cfg, params, train_seed = load_model(args.model)
    dataset = load_dataset(args.embeddings)
    dataset.require_finite()
    preds = _predictions(head_kind, params, dataset.embeddings, cfg, train_seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps({
                "prob_mean": p.prob_mean,
                "variance": p.variance,
                "label": p.label,
            }))
            fh.write("\n")
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def cmd_rank(args) -> int:
    if args.top < 1 or args.bottom < 1:
        raise UsageError("--top and --bottom must be >= 1")
    head_kind, cfg, params, train_seed = load_model(args.model)
    dataset = load_dataset(args.embeddings)
    dataset.require_finite()
    preds = _predictions(head_kind, params, dataset.embeddings, cfg, train_seed)
    order = evaluation.variance_order(preds)

    def show(title, indices):
        print(title)
        print(f"{'index':>8} {'prob_mean':>12} {'variance':>14}")
        for i in indices:
            p = preds[i]
            print(f"{i:>8d} {p.prob_mean:>12.6f} {p.variance:>14.8f}")

    k_top = min(args.top, len(preds))
    k_bottom = min(args.bottom, len(preds))
    show(f"most uncertain ({k_top} rows, highest variance):",
         [int(i) for i in order[::-1][:k_top]])
    print()
    show(f"least uncertain ({k_bottom} rows, lowest variance):",
         [int(i) for i in order[:k_bottom]])
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "rank": cmd_rank,
}


def dispatch(argv) -> int:
    """Parse argv and run one subcommand, mapping failures to exit codes."""
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.subcommand](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ModelFormatError, FileNotFoundError, IsADirectoryError,
            PermissionError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError,) as exc:
        # Bad values in otherwise well-formed inputs (labels, shapes, config).
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
