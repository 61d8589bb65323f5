"""Command-line pipeline: synth -> split -> corrupt -> train -> eval, plus sweep.

Every command accepts ``--config FILE`` holding ``key = value`` lines (``#``
starts a comment; keys are flag names without the leading dashes, with
``-`` or ``_``). Flags given on the command line override the file.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import baseline as bl
from . import evaluation as ev
from . import gem
from .dataset import ENV_MODES, ERR_MODES, WeakLabelConfig, corrupt_labels, load_csv, save_csv, split
from .signal_model import GeneratorConfig, generate_dataset

log = logging.getLogger("uwbgem")


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected 'min,max', got {text!r}")
    return vals[0], vals[1]


def _modes(allowed):
    def parse(text: str) -> tuple[str, ...]:
        modes = tuple(m for m in str(text).replace(" ", "").split(",") if m)
        bad = set(modes) - set(allowed)
        if bad or not modes:
            raise argparse.ArgumentTypeError(f"modes must be a nonempty subset of {','.join(allowed)}")
        return modes
    return parse


def read_config(path) -> dict[str, str]:
    """Parse a ``key = value`` file into a dict of raw strings."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _check_paths(inputs, outputs) -> None:
    ins = {Path(p).resolve() for p in inputs if p}
    for p in outputs:
        if p and Path(p).resolve() in ins:
            raise ValueError(f"output path {p} would overwrite an input")
    for p in inputs:
        if p and not Path(p).exists():
            raise FileNotFoundError(f"input file not found: {p}")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> None:
    _check_paths([], [args.out])
    config = GeneratorConfig(
        n_samples=args.n_samples,
        los_fraction=args.los_fraction,
        distance_range_m=args.distance_range,
        nlos_bias_range_m=args.nlos_bias_range,
        noise_std_range=args.noise_std_range,
        leading_edge_threshold=args.threshold,
        seed=args.seed,
    )
    ds = generate_dataset(config)
    save_csv(ds, args.out)
    n_los = sum(1 for s in ds if s.env_label == 0)
    print(f"wrote {len(ds)} samples to {args.out} (LOS {n_los}, NLOS {len(ds) - n_los})")


def cmd_split(args) -> None:
    _check_paths([args.input], [args.out, args.test_out])
    train, test = split(load_csv(args.input), args.train_fraction, args.seed)
    save_csv(train, args.out)
    save_csv(test, args.test_out)
    print(f"train {len(train)} -> {args.out}, test {len(test)} -> {args.test_out}")


def cmd_corrupt(args) -> None:
    _check_paths([args.input], [args.out])
    cfg = WeakLabelConfig(args.eta_k, args.eta_e, args.env_modes, args.err_modes, args.err_noise_std, args.seed)
    ds = corrupt_labels(load_csv(args.input), cfg)
    save_csv(ds, args.out)
    env_clean = sum(1 for s in ds if s.env_quality.value == "clean")
    err_clean = sum(1 for s in ds if s.err_quality.value == "clean")
    print(f"wrote {len(ds)} samples to {args.out} (clean env labels {env_clean}, clean error labels {err_clean})")


def _train_config(args) -> gem.TrainConfig:
    return gem.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        kl_weight=args.kl_weight,
        update_mode=args.mode,
        seed=args.seed,
    )


def cmd_train(args) -> None:
    _check_paths([args.train_csv], [args.out, args.history, args.baseline_out])
    cfg = _train_config(args)
    train_set = load_csv(args.train_csv)
    model = gem.init_model(train_set.k_classes, tuple(args.hidden), seed=args.seed)
    model, history = gem.train(model, train_set, cfg)
    gem.save_model(model, args.out)
    if args.history:
        history.save_csv(args.history)
    last = history[-1]
    print(f"trained {cfg.epochs} epochs: loss {last.total_loss:.6g} (exp {last.l_exp:.6g}, kl {last.l_kl:.6g})")
    if args.baseline_out:
        bm = bl.fit_baseline_dataset(train_set)
        bl.save_baseline(bm, args.baseline_out)
        print(f"baseline fitted on {len(bm.dual_coef)} clean samples -> {args.baseline_out}")


def _print_rows(report: ev.EvalReport) -> None:
    print(f"{'method':<12} {'eta_k':>6} {'eta_e':>6} {'rmse_m':>9} {'mae_m':>9} {'time_ms':>9}")
    for r in report.rows:
        k = "" if r.eta_k is None else f"{r.eta_k:g}"
        e = "" if r.eta_e is None else f"{r.eta_e:g}"
        t = "" if r.time_ms is None else f"{r.time_ms:.3f}"
        print(f"{r.method:<12} {k:>6} {e:>6} {r.rmse_m:9.4f} {r.mae_m:9.4f} {t:>9}")


def cmd_eval(args) -> None:
    _check_paths([args.model, args.baseline_model, args.test_csv], [])
    test = load_csv(args.test_csv)
    methods = {"gem": gem.load_model(args.model)}
    if args.baseline_model:
        methods["baseline"] = bl.load_baseline(args.baseline_model)
    report = ev.evaluate(methods, test, timing_samples=args.timing_samples)
    report.save(args.out)
    _print_rows(report)


def cmd_sweep(args) -> None:
    if args.train_csv:
        _check_paths([args.train_csv, args.test_csv], [])
        train, test = load_csv(args.train_csv), load_csv(args.test_csv)
    else:
        from .benchmark import benchmark_split

        train, test = benchmark_split(args.n_train, args.n_test, seed=args.data_seed)
    report = ev.sweep_supervision(
        train, test, args.eta_k, args.eta_e, _train_config(args), seeds=args.seeds,
        hidden=tuple(args.hidden),
        weak_kwargs=dict(env_modes=args.env_modes, err_modes=args.err_modes, err_noise_std_m=args.err_noise_std),
        timing_samples=args.timing_samples,
    )
    report.save(args.out)
    _print_rows(report)
    for failure in report.failures:
        print(f"failed cell: eta_k={failure[0]:g} eta_e={failure[1]:g} seed={failure[2]}: {failure[3]}")


# ---------------------------------------------------------------------------
# parser

def _add_train_flags(p) -> None:
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.add_argument("--mode", choices=("joint", "alternating"), default="joint")
    p.add_argument("--hidden", type=_ints, default=[64, 32], help="hidden widths, e.g. 64,32")


def _add_weak_flags(p) -> None:
    p.add_argument("--env-modes", type=_modes(ENV_MODES), default=ENV_MODES)
    p.add_argument("--err-modes", type=_modes(ERR_MODES), default=ERR_MODES)
    p.add_argument("--err-noise-std", type=float, default=0.3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwbgem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value file; command-line flags take precedence")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    required = {
        "synth": ("out",),
        "split": ("input", "out", "test_out"),
        "corrupt": ("input", "out"),
        "train": ("train_csv", "out"),
        "eval": ("model", "test_csv", "out"),
        "sweep": ("out",),
    }
    parser.set_defaults(_required=required)

    p = command("synth", cmd_synth, "generate a synthetic labeled dataset")
    p.add_argument("--out")
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--los-fraction", type=float, default=0.5)
    p.add_argument("--distance-range", type=_pair, default=(1.0, 20.0))
    p.add_argument("--nlos-bias-range", type=_pair, default=(0.2, 1.5))
    p.add_argument("--noise-std-range", type=_pair, default=(0.002, 0.01))
    p.add_argument("--threshold", type=float, default=0.2, help="leading-edge threshold (fraction of peak)")

    p = command("split", cmd_split, "seeded train/test split")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", help="training split")
    p.add_argument("--test-out")
    p.add_argument("--train-fraction", type=float, default=0.8)

    p = command("corrupt", cmd_corrupt, "pollute labels at given supervision rates")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--eta-k", type=float, default=1.0)
    p.add_argument("--eta-e", type=float, default=1.0)
    _add_weak_flags(p)

    p = command("train", cmd_train, "train a GEM model (optionally the baseline too)")
    p.add_argument("--train-csv")
    p.add_argument("--out", help="model checkpoint path")
    p.add_argument("--history", help="per-epoch history CSV")
    p.add_argument("--baseline-out", help="also fit the baseline on clean labels and save it here")
    _add_train_flags(p)

    p = command("eval", cmd_eval, "score a trained model on a test set")
    p.add_argument("--model")
    p.add_argument("--baseline-model")
    p.add_argument("--test-csv")
    p.add_argument("--out", help="report directory")
    p.add_argument("--timing-samples", type=int, default=100)

    p = command("sweep", cmd_sweep, "supervision-rate sweep")
    p.add_argument("--out", help="report directory")
    p.add_argument("--train-csv")
    p.add_argument("--test-csv")
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--data-seed", type=int, default=2024)
    p.add_argument("--eta-k", type=_floats, default=[0.8])
    p.add_argument("--eta-e", type=_floats, default=[0.4, 0.6, 0.8, 1.0])
    p.add_argument("--seeds", type=_ints, default=[0])
    p.add_argument("--timing-samples", type=int, default=50)
    _add_weak_flags(p)
    _add_train_flags(p)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(values) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        # string defaults go through each option's type converter
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    missing = [d for d in args._required[args.command] if getattr(args, d) is None]
    if missing:
        parser.error(f"{args.command}: missing required option(s): {', '.join(missing)}")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
