"""Command-line interface: ``gcmf <command> [flags]``.

Commands: fit, predict, eval, synth, cv-map, protocol. Every flag can also be
given in a JSON file passed with ``--config``; flags on the command line win.
Exit status is 0 on success, 2 for usage errors and 1 for anything else, with
a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .map import MapConfig, cv_map, log_grid, write_cv_table
from .model import Hyperparams, ModelVariant, load_checkpoint, predict_mean, save_checkpoint
from .schema import Likelihood, SchemaError, load_schema, save_schema
from .store import DataError, as_data, load_triplets, split_all, write_split, write_triplets
from .util import fmt_float
from .vb import FitError, fit, write_trace

PROG = "gcmf"


class UsageError(Exception):
    pass


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schema", help="schema JSON file")
    p.add_argument("--data", nargs="+", help="triplet files: relation row col value")
    p.add_argument("--variant", choices=["gcmf", "cmf"], default="gcmf")
    p.add_argument("--map", action="store_true", help="MAP point estimates instead of VB")
    p.add_argument("--no-bias", action="store_true", help="drop the row and column bias terms")
    p.add_argument("--k", type=int, help="number of factors (default: the schema's rank)")
    p.add_argument("--tol", type=float, default=1e-6, help="relative objective change to stop at")
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--lambda", dest="relaxation", type=float, default=0.5, help="Newton relaxation in (0, 1)")
    p.add_argument("--a0", type=float, default=1e-10, help="ARD prior shape (rate b0 defaults to the same)")
    p.add_argument("--b0", type=float)
    p.add_argument("--p0", type=float, default=1e-10, help="noise prior shape (rate q0 defaults to the same)")
    p.add_argument("--q0", type=float)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="thread cap; the engines run single-threaded")
    p.add_argument("--out", help="output directory (or file for predict)")
    p.add_argument("--config", help="JSON file with default flag values")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    cmds = {}

    p = sub.add_parser("fit", help="fit a model and write checkpoint + trace")
    _add_model_flags(p)
    _add_common(p)
    cmds["fit"] = p

    p = sub.add_parser("predict", help="predict queried (relation, row, col) triplets")
    p.add_argument("--checkpoint", help="checkpoint written by fit")
    p.add_argument("--queries", help="file with lines 'relation row col' (a 4th column is ignored)")
    p.add_argument("--linear", action="store_true", help="write the linear predictor instead of the mean")
    _add_common(p)
    cmds["predict"] = p

    p = sub.add_parser("eval", help="RMSE of a checkpoint on held-out triplets")
    p.add_argument("--checkpoint")
    p.add_argument("--test", help="held-out triplet file")
    p.add_argument("--reference", help="second checkpoint used as the relative-error reference")
    _add_common(p)
    cmds["eval"] = p

    p = sub.add_parser("synth", help="write a synthetic dataset with ground truth")
    p.add_argument("--protocol", choices=["circular", "multiview", "bias"], default="circular")
    p.add_argument("--m", type=int, default=5, help="number of matrices in the cycle")
    p.add_argument("--likelihood", default="gaussian", choices=[x.value for x in Likelihood])
    p.add_argument("--sizes", type=int, nargs=2, metavar=("LO", "HI"), default=(100, 150))
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--width", type=float, default=1.0, help="proximity kernel width (multiview)")
    p.add_argument("--holdout", type=float, default=0.0, help="also write a train/test split")
    p.add_argument("--k", type=int, help="rank recorded in the schema")
    _add_common(p)
    cmds["synth"] = p

    p = sub.add_parser("cv-map", help="cross-validate MAP priors, then refit")
    _add_model_flags(p)
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--grid", type=int, default=11, help="points per axis of the log grid")
    p.add_argument("--grid-range", type=float, nargs=2, default=(1e-6, 1e4), metavar=("LO", "HI"))
    p.add_argument("--cv-iters", type=int, default=100, help="sweep cap of each MAP fit")
    _add_common(p)
    cmds["cv-map"] = p

    p = sub.add_parser("protocol", help="run a named synthetic experiment")
    p.add_argument("name", choices=["circular-likelihood", "circular-map-vs-vb", "augmented-multiview"])
    p.add_argument("--seeds", type=int, nargs="+", help="seeds to run (default: --seed)")
    p.add_argument("--small", action="store_true", help="CI-sized entity sets")
    _add_common(p)
    cmds["protocol"] = p
    return parser, cmds


def _parse(argv: list[str]) -> argparse.Namespace:
    parser, cmds = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if getattr(pre, "config", None):
        try:
            cfg = json.loads(Path(pre.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {pre.config}: {exc}") from None
        sub = cmds[pre.command]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        if "lambda" in cfg:
            cfg["relaxation"] = cfg.pop("lambda")
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def _need(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, []):
            raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _hyper(args) -> Hyperparams:
    return Hyperparams(
        a0=args.a0, b0=args.b0 if args.b0 is not None else args.a0,
        p0=args.p0, q0=args.q0 if args.q0 is not None else args.p0,
        newton_relaxation=args.relaxation, max_iters=args.max_iters, tol=args.tol,
    )


def _variant(args) -> ModelVariant:
    return ModelVariant(args.variant, bool(args.map), not args.no_bias)


def _load_inputs(args):
    _need(args, "schema", "data")
    schema = load_schema(args.schema)
    if args.k is not None:
        if args.k < 1:
            raise UsageError("--k must be >= 1")
        schema = replace(schema, rank=args.k)
    data = as_data(load_triplets(args.data, schema), schema)
    return schema, data


def cmd_fit(args) -> None:
    schema, data = _load_inputs(args)
    state, trace = fit(schema, data, _hyper(args), _variant(args), args.seed)
    out = _out_dir(args)
    save_checkpoint(state, out / "checkpoint.json")
    write_trace(trace, out / "trace.csv")


def _read_queries(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 3:
                raise DataError(f"{path}:{lineno}: expected 'relation row col'")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
    return rows


def cmd_predict(args) -> None:
    _need(args, "checkpoint", "queries")
    state = load_checkpoint(args.checkpoint)
    from .model import linear_predictor

    lines = []
    for m, i, j in _read_queries(args.queries):
        value = linear_predictor(state, m, i, j) if args.linear else predict_mean(state, m, i, j)
        lines.append(f"{m} {i} {j} {fmt_float(value)}\n")
    text = "".join(lines)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_eval(args) -> None:
    from .experiments.metrics import pooled_rmse, relation_rmse, relative_error

    _need(args, "checkpoint", "test")
    state = load_checkpoint(args.checkpoint)
    test = as_data(load_triplets(args.test, state.schema), state.schema)
    test = {m: t for m, t in test.items() if t.n_obs}
    per = relation_rmse(state, test)
    per["all"] = pooled_rmse(state, test)
    ref = None
    if args.reference:
        ref_state = load_checkpoint(args.reference)
        ref = relation_rmse(ref_state, test)
        ref["all"] = pooled_rmse(ref_state, test)
    out = _out_dir(args)
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relation", "n_test", "rmse", "relative_error"])
        for key in [*sorted(k for k in per if k != "all"), "all"]:
            n = test[key].n_obs if key != "all" else sum(t.n_obs for t in test.values())
            rel = relative_error(per[key], ref[key]) if ref else float("nan")
            w.writerow([key, n, fmt_float(per[key]), fmt_float(rel)])


def cmd_synth(args) -> None:
    from .experiments.synth import CircularSynthSpec, ProximitySpec, gen_augmented_multiview, gen_bias_only, gen_circular

    out = _out_dir(args)
    if args.protocol == "circular":
        spec = CircularSynthSpec(M=args.m, size_range=tuple(args.sizes), likelihood=args.likelihood,
                                 noise=args.noise, seed=args.seed, rank=args.k)
        schema, data, truth = gen_circular(spec)
    elif args.protocol == "multiview":
        lo = args.sizes[0]
        schema, data, truth = gen_augmented_multiview(lo, lo, lo, ProximitySpec(width=args.width), args.seed,
                                                      noise=args.noise, rank=args.k or 12)
    else:
        lo, hi = args.sizes
        schema, data, truth = gen_bias_only((lo, hi), noise=args.noise, seed=args.seed, rank=args.k or 3)
    save_schema(schema, out / "schema.json")
    for m in sorted(data):
        write_triplets([data[m]], out / f"relation_{m}.txt")
    arrays = {f"factors_{e}": U for e, U in truth.factors.items()}
    arrays.update({f"linear_{m}": X for m, X in truth.linear.items()})
    arrays["pattern"] = truth.pattern
    np.savez(out / "truth.npz", **arrays)
    if args.holdout > 0:
        train, test = split_all(data, args.holdout, args.seed)
        write_split(train, test, out, args.seed, args.holdout)


def cmd_cv_map(args) -> None:
    schema, data = _load_inputs(args)
    grid = tuple(log_grid(args.grid_range[0], args.grid_range[1], args.grid))
    config = MapConfig(grid, grid, args.folds, args.seed, args.cv_iters)
    variant = replace(_variant(args), map=True)
    result = cv_map(schema, data, config, variant, _hyper(args))
    out = _out_dir(args)
    write_cv_table(result, out / "cv.csv")
    best = result.best
    (out / "best.json").write_text(json.dumps(
        {"a0": best.a0, "b0": best.b0, "p0": best.p0, "q0": best.q0, "n_fits": result.n_fits}, indent=2) + "\n")
    state, trace = fit(schema, data, best, variant, args.seed)
    save_checkpoint(state, out / "checkpoint.json")
    write_trace(trace, out / "trace.csv")


def cmd_protocol(args) -> None:
    from .experiments.protocols import merge_reports, run_protocol, write_report

    seeds = args.seeds or [args.seed]
    report = merge_reports([run_protocol(args.name, s, small=args.small) for s in seeds])
    write_report(report, _out_dir(args))
    print(report.summary())


COMMANDS = {
    "fit": cmd_fit, "predict": cmd_predict, "eval": cmd_eval,
    "synth": cmd_synth, "cv-map": cmd_cv_map, "protocol": cmd_protocol,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        # argparse already printed usage
        return int(exc.code or 0)
    if args.threads < 1:
        print(f"{PROG}: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, SchemaError, FitError, ValueError, IndexError, KeyError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
