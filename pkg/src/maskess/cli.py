"""Command line entry point: ``maskess {fit,testbed,sample,eval,sweep}``.

Exit codes: 0 success, 1 usage error, 2 data or parse error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from collections import Counter
from pathlib import Path

import numpy as np

from . import testbeds
from .chains import METHODS, run_chains
from .config import Config
from .data import LabeledSeries, ParseError, load_ucr_tsv, truncate_to_min_length, write_ucr_tsv, znormalize
from .evaluate import EvalReport, evaluate_exact, evaluate_features
from .prior import CorruptedPrior, CountPrior, TabularExactPrior, ZeroSupportError, fit_count_prior
from .quantizer import decode_batch, encode_batch, fit_codebook, reconstruction_mse
from .sampler import ConditionalCritic
from .schedule import cosine_mask_counts
from .tokens import Codebook, UsageError

log = logging.getLogger("maskess")

CODEBOOK_FILE = "codebook.txt"
COUNT_PRIOR_FILE = "prior.txt"
JOINT_FILE = "joint.txt"


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# artifacts


def load_artifacts(directory):
    directory = Path(directory)
    cb_path = directory / CODEBOOK_FILE
    if not cb_path.exists():
        raise UsageError(f"no {CODEBOOK_FILE} in {directory}; run 'fit' or 'testbed' first")
    cb = Codebook.load(cb_path)
    if (directory / JOINT_FILE).exists():
        return cb, TabularExactPrior.load(directory / JOINT_FILE), "exact"
    if (directory / COUNT_PRIOR_FILE).exists():
        return cb, CountPrior.load(directory / COUNT_PRIOR_FILE), "count"
    raise UsageError(f"no {COUNT_PRIOR_FILE} or {JOINT_FILE} in {directory}")


def load_tokens(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([int(x) for x in line.split()])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: token ids must be integers") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: token rows differ in length")
    return np.asarray(rows, dtype=np.int64)


def write_tokens(path, tokens) -> None:
    Path(path).write_text("".join(" ".join(map(str, row)) + "\n" for row in tokens.tolist()))


def load_normalized(path) -> list[LabeledSeries]:
    """Load a UCR-format file, equalise lengths and z-normalise every series."""
    data = truncate_to_min_length(load_ucr_tsv(path))
    return [LabeledSeries(s.label, znormalize(s.values)) for s in data]


# commands


def cmd_fit(cfg: Config, data_path, out_dir) -> dict:
    """Fit the codebook and the count prior on a UCR-format file."""
    spec = cfg.vq_spec()
    series = load_normalized(data_path)
    length = len(series[0].values)
    usable = length - length % spec.window
    if usable < spec.window:
        raise UsageError(f"series of length {length} are shorter than one window ({spec.window})")
    if usable != length:
        warnings.warn(
            f"series length {length} not divisible by window {spec.window}; "
            f"truncating to {usable}",
            stacklevel=2,
        )
    values = [s.values[:usable] for s in series]
    cb = fit_codebook(values, spec)
    tokens = encode_batch(cb, np.asarray(values))
    prior = fit_count_prior(tokens, cb.K)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cb.save(out / CODEBOOK_FILE)
    prior.save(out / COUNT_PRIOR_FILE)
    summary = {
        "K": cb.K,
        "N": prior.N,
        "window": spec.window,
        "n_series": len(values),
        "series_length": usable,
        "recon_mse": reconstruction_mse(cb, values),
        "truncated_from": length if usable != length else None,
        "seed": cfg["seed"],
    }
    (out / "fit.json").write_text(_dump(summary))
    return summary


def cmd_testbed(kind, out_dir, N=8, K=2, coupling=4.0, flip=0.05, seed=0) -> dict:
    """Write an enumerable ground-truth joint plus a one-hot codebook."""
    if kind == "chain":
        joint = testbeds.chain_joint(N, K, coupling)
    elif kind == "independent":
        marg = np.random.default_rng(seed).dirichlet(np.ones(K), size=N)
        joint = testbeds.independent_joint(marg)
    elif kind == "multimodal":
        modes = np.random.default_rng(seed).integers(0, K, size=(4, N))
        joint = testbeds.multimodal_joint(modes, K, flip)
    else:
        raise UsageError(f"unknown testbed kind {kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    joint.save(out / JOINT_FILE)
    testbeds.one_hot_codebook(K).save(out / CODEBOOK_FILE)
    return {"kind": kind, "K": K, "N": N}


def _sampling_setup(cfg, artifacts):
    cb, prior, kind = load_artifacts(artifacts)
    if cb.K != prior.K:
        raise DataError(f"codebook has K={cb.K} but the prior has K={prior.K}")
    model = CorruptedPrior(prior, cfg["prior.epsilon"]) if cfg["prior.epsilon"] > 0 else prior
    critic = ConditionalCritic(prior)
    return cb, prior, model, kind, critic


def draw(cfg: Config, artifacts, method, n, trace=False):
    sampler_cfg = cfg.sampler_config()
    cb, prior, model, kind, critic = _sampling_setup(cfg, artifacts)
    sched = cosine_mask_counts(prior.N, sampler_cfg.T)
    result = run_chains(method, model, cb, sched, sampler_cfg, n, critic=critic, trace=trace)
    return result, cb, prior, kind


def cmd_sample(cfg: Config, artifacts, method, n, out_dir) -> dict:
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    result, cb, prior, kind = draw(cfg, artifacts, method, n, trace=(method == "ess"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tokens(out / "tokens.txt", result.tokens)
    series = decode_batch(cb, result.tokens) if n else np.empty((0, 0))
    write_ucr_tsv(out / "samples.tsv", [(-1, x) for x in series])

    manifest = {
        "method": method,
        "n": n,
        "seed": cfg["seed"],
        "prior": kind,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "stage3_confidence": {
            "ess": cfg["sampler.stage3_confidence"],
            "ablation-b": "prior-prob",
        }.get(method),
    }
    if method in ("ess", "ablation-b"):
        hist = Counter(int(t) for t in result.t_star) if result.t_star is not None else {}
        manifest["t_star_histogram"] = {str(t): hist[t] for t in sorted(hist)}
    if method == "ess":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["chain", "phase", "step", "realism_sum"])
        for i, tr in enumerate(result.traces):
            writer.writerows([i, phase, step, repr(value)] for phase, step, value in tr.steps)
        (out / "trace.csv").write_text(buf.getvalue())
    (out / "manifest.json").write_text(_dump(manifest))
    return manifest


def cmd_eval(gen_path, real_path, mode) -> EvalReport:
    if mode == "exact":
        if real_path is None:
            raise UsageError("exact mode needs a ground-truth joint file (--real)")
        truth = TabularExactPrior.load(real_path)
        tokens = load_tokens(gen_path)
        if tokens.size and tokens.shape[1] != truth.N:
            raise DataError(f"generated sequences have {tokens.shape[1]} slots, joint has {truth.N}")
        dist = testbeds.empirical_distribution(tokens.reshape(-1, truth.N), truth.K)
        return evaluate_exact(dist, truth.joint, len(tokens))
    if mode == "feature":
        if real_path is None:
            raise UsageError("feature mode needs a real data file (--real)")
        gen = load_normalized(gen_path) if Path(gen_path).stat().st_size else []
        real = load_normalized(real_path)
        return evaluate_features(gen, real)
    raise UsageError(f"unknown eval mode {mode!r}")


def cmd_sweep(cfg: Config, artifacts, methods, seeds, n, real_path=None) -> str:
    """Evaluate every method x seed combination; returns the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "seed"] + EvalReport.csv_header())
    real = None
    for method in methods:
        if method not in METHODS:
            raise UsageError(f"unknown method {method!r}")
        for seed in seeds:
            run_cfg = Config(cfg)
            run_cfg["seed"] = seed
            result, cb, prior, kind = draw(run_cfg, artifacts, method, n)
            if kind == "exact":
                dist = testbeds.empirical_distribution(result.tokens, prior.K)
                report = evaluate_exact(dist, prior.joint, n)
            else:
                if real_path is None:
                    raise UsageError("sweeping a fitted count prior needs --real data")
                if real is None:
                    real = load_normalized(real_path)
                gen = [(-1, znormalize(x)) for x in decode_batch(cb, result.tokens)]
                report = evaluate_features(gen, real)
            writer.writerow([method, seed] + report.csv_row())
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maskess", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="root seed (overrides config)")

    p = sub.add_parser("fit", help="fit codebook and prior on a UCR-format file")
    with_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("testbed", help="write an enumerable ground-truth joint")
    p.add_argument("--kind", choices=["chain", "independent", "multimodal"], default="chain")
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--coupling", type=float, default=4.0)
    p.add_argument("--flip", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="draw samples from fitted artifacts")
    with_config(p)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score generated samples")
    p.add_argument("--gen", required=True)
    p.add_argument("--real")
    p.add_argument("--mode", choices=["exact", "feature"], default="feature")
    p.add_argument("--out", help="also write the report JSON here")

    p = sub.add_parser("sweep", help="methods x seeds, one CSV of reports")
    with_config(p)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--seeds", default="0")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--real")
    p.add_argument("--out", required=True)
    return parser


def _config_from(args) -> Config:
    cfg = Config.load(args.config, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fit":
        print(_dump(cmd_fit(_config_from(args), args.data, args.out)), end="")
    elif args.command == "testbed":
        print(_dump(cmd_testbed(args.kind, args.out, args.N, args.K, args.coupling, args.flip, args.seed)), end="")
    elif args.command == "sample":
        if args.n < 0:
            raise UsageError("--n must be non-negative")
        print(_dump(cmd_sample(_config_from(args), args.artifacts, args.method, args.n, args.out)), end="")
    elif args.command == "eval":
        report = cmd_eval(args.gen, args.real, args.mode)
        if args.out:
            Path(args.out).write_text(report.to_json() + "\n")
        print(report.to_json())
    elif args.command == "sweep":
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        text = cmd_sweep(_config_from(args), args.artifacts, methods, seeds, args.n, args.real)
        Path(args.out).write_text(text)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except UsageError as exc:
        print(f"maskess: error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, DataError, ZeroSupportError, ValueError, OSError) as exc:
        print(f"maskess: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
