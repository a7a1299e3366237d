"""Command-line entry point.

Subcommands: synth, pretrain, train, eval, export-affinity, gradcheck.
Commands compose through files only; all randomness flows from the seed in
the config (or the --seed flag, which overrides it; absent everywhere the
seed is 0). Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from .affinity import affinity_to_csv, affinity_to_pgm, class_affinity, subspace_affinity
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config_file
from .data import (Dataset, SyntheticSpec, generate_synthetic, load_dataset_csv, load_idx,
                   save_dataset_csv)
from .gradcheck import run_gradient_checks
from .metrics import accuracy, ari, cluster_sizes, nmi
from .network import ConfigError
from .trainer import (CollaborativeTrainer, TrainingDivergedError, evaluate, fit,
                      format_metrics_row, metrics_header, metrics_csv, pretrain_log_csv,
                      train_log_csv)


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map usage errors to exit code 1
        raise CliValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="collabsc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic union-of-subspaces dataset")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--n-per", type=int, required=True)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--nonlinearity", default="none",
                   choices=("none", "tanh-warp", "square-warp"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="prefix for _features.csv and _labels.csv")

    for name, help_text in (("pretrain", "autoencoder pretraining only"),
                            ("train", "full collaborative training")):
        p = sub.add_parser(name, help=help_text)
        _add_data_flags(p)
        p.add_argument("--config", required=True)
        p.add_argument("--checkpoint", required=True, help="output checkpoint path")
        _add_override_flags(p)
        if name == "pretrain":
            p.add_argument("--log", help="per-epoch reconstruction loss CSV")
        else:
            p.add_argument("--init-checkpoint", help="start from a pretrained checkpoint")
            p.add_argument("--train-log", help="per-step loss breakdown CSV")
            p.add_argument("--metrics-log", help="per-epoch metrics CSV")

    p = sub.add_parser("eval", help="clustering metrics for predictions or a checkpoint")
    p.add_argument("--pred", help="predicted labels CSV (one integer per line)")
    p.add_argument("--true", help="ground-truth labels CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    _add_data_flags(p, required=False)
    _add_override_flags(p)

    p = sub.add_parser("export-affinity",
                       help="write the two affinity matrices of one batch as CSV and PGM")
    _add_data_flags(p)
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch", type=int, default=0)
    p.add_argument("--out", required=True, help="prefix for _subspace/_class .csv/.pgm")
    _add_override_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every operator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    return parser


def _add_data_flags(p, required=True):
    p.add_argument("--data", required=False, help="features CSV (one point per row)")
    p.add_argument("--labels", required=False, help="labels CSV (one integer per line)")
    p.add_argument("--idx-images", required=False, help="IDX images file")
    p.add_argument("--idx-labels", required=False, help="IDX labels file")
    p.add_argument("--feature-shape", required=False,
                   help="comma-separated per-sample shape for CSV data, e.g. 1,28,28")


_OVERRIDES = (
    ("--lambda1", "lambda1", float), ("--lambda-cl", "lambda_cl", float),
    ("--u", "u", float), ("--l", "l", float),
    ("--alpha-fixed", "alpha_fixed", float), ("--batch-size", "batch_size", int),
    ("--epochs", "epochs", int), ("--pretrain-epochs", "pretrain_epochs", int),
    ("--lr-pretrain", "lr_pretrain", float), ("--lr-ae", "lr_ae", float),
    ("--lr-other", "lr_other", float), ("--inner-se-steps", "inner_se_steps", int),
    ("--classifier-steps", "classifier_steps", int), ("--seed", "seed", int),
)


def _add_override_flags(p):
    for flag, _, cast in _OVERRIDES:
        p.add_argument(flag, type=cast, default=None)
    p.add_argument("--u-initial", type=float, default=None)
    p.add_argument("--u-after", type=float, default=None)
    p.add_argument("--alpha-mode", choices=("auto-ratio", "fixed"), default=None)
    p.add_argument("--soft-mask", choices=("true", "false"), default=None)


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    for flag, key, _ in _OVERRIDES:
        value = getattr(args, flag.lstrip("-").replace("-", "_"), None)
        if value is not None:
            changes[key] = value
    if args.alpha_mode is not None:
        changes["alpha_mode"] = args.alpha_mode
    if args.soft_mask is not None:
        changes["soft_mask"] = args.soft_mask == "true"
    initial = args.u_initial if args.u_initial is not None else \
        (changes.get("u", config.u_schedule[0]))
    after = args.u_after if args.u_after is not None else config.u_schedule[1]
    if args.u_initial is not None or args.u_after is not None or "u" in changes:
        changes["u_schedule"] = (initial, max(initial, after) if args.u_after is None else after)
        changes["u"] = initial
    return dataclasses.replace(config, **changes)


def _load_data(args) -> Dataset:
    if args.idx_images or args.idx_labels:
        if not (args.idx_images and args.idx_labels):
            raise CliValidationError("--idx-images and --idx-labels must be given together")
        return load_idx(args.idx_images, args.idx_labels)
    if not args.data:
        raise CliValidationError("no input data: give --data or --idx-images/--idx-labels")
    shape = None
    if args.feature_shape:
        try:
            shape = tuple(int(s) for s in args.feature_shape.split(","))
        except ValueError:
            raise CliValidationError(
                f"--feature-shape: expected comma-separated integers, got {args.feature_shape!r}")
    return load_dataset_csv(args.data, args.labels, feature_shape=shape)


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)


def _metrics_line(y_true, y_pred, k) -> str:
    sizes = cluster_sizes(y_pred, k)
    values = [str(len(y_true)), str(k), repr(float(accuracy(y_true, y_pred))),
              repr(float(nmi(y_true, y_pred))), repr(float(ari(y_true, y_pred)))]
    return ",".join(values + [str(int(s)) for s in sizes])


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    spec = SyntheticSpec(k=args.k, d=args.d, D=args.D, n_per=args.n_per,
                         noise_sigma=args.noise_sigma, nonlinearity=args.nonlinearity,
                         seed=args.seed)
    dataset = generate_synthetic(spec)
    save_dataset_csv(dataset, f"{args.out}_features.csv", f"{args.out}_labels.csv")
    print(f"wrote {len(dataset)} points to {args.out}_features.csv / {args.out}_labels.csv")
    return 0


def _cmd_pretrain(args) -> int:
    config = _apply_overrides(parse_config_file(args.config), args)
    dataset = _load_data(args)
    trainer = CollaborativeTrainer(config, dataset)
    try:
        history = trainer.pretrain()
    except TrainingDivergedError as exc:
        save_checkpoint(args.checkpoint, trainer.network.snapshot())
        print(f"error: {exc}", file=sys.stderr)
        return 2
    save_checkpoint(args.checkpoint, trainer.network.snapshot())
    if args.log:
        lines = ["epoch,reconstruction_loss"]
        lines += [f"{i},{float(v)!r}" for i, v in enumerate(history, start=1)]
        _write(args.log, "\n".join(lines) + "\n")
    final = history[-1] if history else float("nan")
    print(f"pretrained {config.pretrain_epochs} epochs, final reconstruction loss {final}")
    return 0


def _cmd_train(args) -> int:
    config = _apply_overrides(parse_config_file(args.config), args)
    dataset = _load_data(args)
    init = load_checkpoint(args.init_checkpoint) if args.init_checkpoint else None
    result = fit(config, dataset, init_params=init)
    save_checkpoint(args.checkpoint, result.checkpoint_params())
    if args.train_log:
        _write(args.train_log, train_log_csv(result))
    if args.metrics_log:
        _write(args.metrics_log, metrics_csv(result))
    if result.pretrain_log and args.train_log:
        _write(args.train_log + ".pretrain", pretrain_log_csv(result))
    print(metrics_header(config.network.num_clusters))
    print(format_metrics_row(result.metrics_history[-1]))
    return 0


def _cmd_eval(args) -> int:
    if args.pred:
        if not args.true:
            raise CliValidationError("eval --pred also needs --true")
        y_pred = np.loadtxt(args.pred, dtype=np.int64, ndmin=1)
        y_true = np.loadtxt(args.true, dtype=np.int64, ndmin=1)
        k = int(max(y_pred.max(), y_true.max())) + 1
        print("n,k,acc,nmi,ari" + "".join(f",size_{i}" for i in range(k)))
        print(_metrics_line(y_true, y_pred, k))
        return 0
    if not (args.checkpoint and args.config):
        raise CliValidationError("eval needs either --pred/--true or --checkpoint/--config")
    config = _apply_overrides(parse_config_file(args.config), args)
    dataset = _load_data(args)
    trainer = CollaborativeTrainer(config, dataset)
    params = load_checkpoint(args.checkpoint)
    trainer.network.load_values(
        {k_: v for k_, v in params.items() if not k_.startswith("selfexpr.")})
    row = evaluate(trainer.network, dataset, 0, config.batch_size)
    print(metrics_header(config.network.num_clusters))
    print(format_metrics_row(row))
    return 0


def _cmd_export_affinity(args) -> int:
    config = _apply_overrides(parse_config_file(args.config), args)
    dataset = _load_data(args)
    trainer = CollaborativeTrainer(config, dataset)
    params = load_checkpoint(args.checkpoint)
    trainer.network.load_values(
        {k: v for k, v in params.items() if not k.startswith("selfexpr.")})
    if not 0 <= args.batch < len(trainer.batches):
        raise CliValidationError(
            f"--batch {args.batch} out of range; the partition has {len(trainer.batches)} batches")
    coeff_key = f"selfexpr.batch_{args.batch}.C"
    if coeff_key not in params:
        raise CliValidationError(
            f"checkpoint has no coefficients for batch {args.batch} ({coeff_key}); "
            f"export needs a checkpoint written by `train`")
    subspace = subspace_affinity(params[coeff_key])
    x = dataset.features[trainer.batches[args.batch]]
    predictions = trainer.network.predictions(x).values
    class_aff = class_affinity(predictions)
    for name, matrix in (("subspace", subspace), ("class", class_aff)):
        affinity_to_csv(matrix, f"{args.out}_{name}.csv")
        affinity_to_pgm(matrix, f"{args.out}_{name}.pgm")
    print(f"wrote {args.out}_subspace/.csv/.pgm and {args.out}_class.csv/.pgm "
          f"for batch {args.batch} ({x.shape[0]} points)")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_checks(seed=args.seed, trials=args.trials)
    worst = 0.0
    for kind, err in results.items():
        print(f"{kind}: max relative error {err:.3e}")
        worst = max(worst, err)
    print(f"overall max relative error {worst:.3e}")
    if worst >= 1e-4:
        print("error: gradient check FAILED (threshold 1e-4)", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "pretrain":
            return _cmd_pretrain(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "export-affinity":
            return _cmd_export_affinity(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        raise CliValidationError(f"unknown command {args.command!r}")
    except (CliValidationError, ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
