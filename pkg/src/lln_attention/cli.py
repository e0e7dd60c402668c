"""Command-line interface: ``lln-attention <command> [options]``.

Exit codes: 0 ok, 1 verification failure, 2 usage error or infeasible
input, 3 I/O error.
"""
from __future__ import annotations

import argparse
import contextlib
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .attention import METHODS, AttnConfig, LLNParams, attention_weights
from .bench import BENCH_METHODS, run_benchmark, write_bench_csv
from .errors import AttentionError, CalibrationInfeasibleError
from .matching import DEFAULT_GRID, MatchConfig, fit_broad_constants
from .stats import stats_report
from .sweep import DEFAULT_TEMPS, SWEEP_KERNELS, kernel_sweep, write_sweep_csv
from .verify import SUITES, check_matrix, run_suites

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class InputError(Exception):
    """Bad user input discovered after argument parsing (exit code 2)."""


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _names(choices):
    def parse(text):
        names = [x.strip() for x in text.split(",") if x.strip()]
        bad = [x for x in names if x not in choices]
        if bad or not names:
            raise argparse.ArgumentTypeError(f"choose from {','.join(choices)}; got {text!r}")
        return names
    return parse


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def save_matrix(path, x):
    # + 0.0 turns -0.0 into 0.0 so zero matrices serialize as plain "0"
    np.savetxt(path, np.asarray(x, dtype=np.float64) + 0.0, fmt="%.17g", delimiter=",")


def load_matrix(path):
    with open(path) as fh:
        text = fh.read()
    try:
        data = np.loadtxt(io.StringIO(text), delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None
    if data.size == 0:
        raise InputError(f"{path} is empty")
    return data


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    if args.n < 1 or args.d < 1:
        raise InputError("need --n >= 1 and --d >= 1")
    if args.sigma_q < 0 or args.sigma_k < 0 or args.sigma_v < 0:
        raise InputError("standard deviations must be non-negative")
    rng = np.random.default_rng(args.seed)
    shape = (args.n, args.d)
    q = args.sigma_q * rng.standard_normal(shape)
    k = args.sigma_k * rng.standard_normal(shape)
    v = args.sigma_v * rng.standard_normal(shape)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    for name, x in (("q", q), ("k", k), ("v", v)):
        save_matrix(os.path.join(out, f"{name}.csv"), x)
    return EXIT_OK


def _load_params(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"cannot parse {path}: {exc}") from None
    # accept a bare LLNParams dict or a full match result
    if "params" in data and isinstance(data["params"], dict):
        data = data["params"]
    if "alpha" not in data or "beta" not in data:
        raise InputError(f"{path} must define alpha and beta")
    return LLNParams.from_dict(data)


def cmd_analyze(args):
    q = load_matrix(args.q)
    k = load_matrix(args.k)
    if q.shape != k.shape:
        raise InputError(f"q has shape {q.shape} but k has shape {k.shape}")
    params = None
    if args.method in ("lln", "lln_diag"):
        if args.params is None:
            raise InputError(f"--params is required for method {args.method}")
        params = _load_params(args.params)
    config = AttnConfig(method=args.method, block_size=args.block_size)
    weights = attention_weights(q, k, config, params)
    report = stats_report(q, k, weights)
    with _output(args.out) as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def cmd_match(args):
    cfg = MatchConfig(
        sigma_tilde_sq_grid=tuple(args.grid),
        n_tokens=args.n,
        dim=args.d,
        n_seeds=args.seeds,
        seed=args.seed,
    )
    result = fit_broad_constants(cfg, sigma_q=args.sigma_q, sigma_k=args.sigma_k)
    with _output(args.out) as fh:
        fh.write(result.to_json(indent=2))
        fh.write("\n")
    return EXIT_OK


def cmd_sweep(args):
    rows = kernel_sweep(args.kernels, args.temps, seed=args.seed, n_tokens=args.n,
                        dim=args.d, n_draws=args.draws)
    with _output(args.out) as fh:
        write_sweep_csv(rows, fh)
    return EXIT_OK


def cmd_bench(args):
    budget = None if args.memory_budget_gb is None else int(args.memory_budget_gb * 2 ** 30)
    records = run_benchmark(args.methods, args.seq_lens, dim=args.dim, repeats=args.repeats,
                            block_size=args.block_size, seed=args.seed, grad=args.grad,
                            memory_budget=budget)
    with _output(args.out) as fh:
        write_bench_csv(records, fh)
    return EXIT_OK


def cmd_verify(args):
    if args.matrix is not None:
        results = check_matrix(load_matrix(args.matrix))
    else:
        results = run_suites(args.suite, args.seed)
    with _output(args.out) as fh:
        for r in results:
            fh.write(r.line() + "\n")
        failed = [r.name for r in results if not r.passed]
        fh.write(f"{len(results) - len(failed)}/{len(results)} properties passed\n")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="lln-attention",
                                     description="LLN and softmax attention diagnostics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, seed_required=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        if seed_required:
            p.add_argument("--seed", type=_seed, required=True)
        else:
            p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--out", default=None, help="output path (default stdout)")
        return p

    p = add("gen", cmd_gen, "write Gaussian q.csv, k.csv, v.csv")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--sigma-q", type=float, default=1.0)
    p.add_argument("--sigma-k", type=float, default=1.0)
    p.add_argument("--sigma-v", type=float, default=1.0)
    p.epilog = "--out is a directory here (default: current directory)"

    p = add("analyze", cmd_analyze, "diagnostics of one attention matrix as JSON",
            seed_required=False)
    p.add_argument("--q", required=True)
    p.add_argument("--k", required=True)
    p.add_argument("--method", choices=METHODS, default="softmax")
    p.add_argument("--params", default=None, help="JSON file with alpha and beta")
    p.add_argument("--block-size", type=int, default=64)

    p = add("match", cmd_match, "fit LLN gains to softmax by moment matching")
    p.add_argument("--grid", type=_floats, default=list(DEFAULT_GRID))
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--seeds", type=int, default=16)
    p.add_argument("--sigma-q", type=float, default=1.0)
    p.add_argument("--sigma-k", type=float, default=1.0)

    p = add("sweep", cmd_sweep, "entropy and spectral gap per kernel and temperature")
    p.add_argument("--kernels", type=_names(SWEEP_KERNELS), default=list(SWEEP_KERNELS))
    p.add_argument("--temps", type=_floats, default=list(DEFAULT_TEMPS))
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--draws", type=int, default=1, help="input draws averaged per cell")

    p = add("bench", cmd_bench, "wall time and peak memory against sequence length",
            seed_required=False)
    p.add_argument("--methods", type=_names(BENCH_METHODS), default=list(BENCH_METHODS))
    p.add_argument("--seq-lens", type=_ints, default=[512, 1024, 2048, 4096, 8192])
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--block-size", type=int, default=64)
    p.add_argument("--grad", action="store_true", help="time forward plus backward")
    p.add_argument("--memory-budget-gb", type=float, default=None,
                   help="report OOM above this estimate (default 80%% of available RAM)")

    p = add("verify", cmd_verify, "run property suites; exit 1 on any failure")
    p.add_argument("--suite", choices=("all",) + SUITES, default="all")
    p.add_argument("--matrix", default=None, help="check a CSV attention matrix instead")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CalibrationInfeasibleError as exc:
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, AttentionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
