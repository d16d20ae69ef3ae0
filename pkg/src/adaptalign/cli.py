"""Command-line entry point.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.  Every command
writes its artifacts plus a ``report.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .adapters import TrainConfig, evaluate, load_model, save_model, train_reference
from .alignment import alignment_report
from .errors import AdaptAlignError
from .pipeline import (
    DEFAULT_DIMS,
    DEFAULT_EIG_K,
    DEFAULT_KNN_K,
    DEFAULT_W,
    REFERENCE_ID,
    common_space_embeddings,
    random_common_subset,
    reference_common_space,
    run_finetune,
    select_common_items,
    selection_universe,
    subject_targets,
)
from .selection import SelectionResult, coverage_permutation_test, extreme_items, project_onto_principal
from .synth import PRESETS, generate_benchmark, read_benchmark, write_benchmark

log = logging.getLogger("adaptalign")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF
WALL_CLOCK_FIELDS = ("duration_s",)
CLI_MODES = {"baseline": "baseline", "aamax": "aamax", "step1": "step1_only", "frozen-mapper": "frozen_mapper"}


class UsageError(Exception):
    pass


def fnv1a64(data):
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def file_digest(path):
    return f"{fnv1a64(Path(path).read_bytes()):016x}"


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def strip_wall_clock(report):
    return {k: v for k, v in report.items() if k not in WALL_CLOCK_FIELDS}


# -- argument parsing -----------------------------------------------------


def _common_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (command-specific default)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress stdout summaries")
    p.add_argument("--config", default=None, help="JSON file of flag defaults (flags override)")
    return p


def _train_flags(p, epochs=None):
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=epochs if epochs is not None else d.epochs)
    p.add_argument("--lr", type=float, default=d.learning_rate, dest="learning_rate")
    p.add_argument("--lambda3", type=float, default=d.lambda3)
    p.add_argument("--stage1-epochs", type=int, default=d.stage1_epochs)
    p.add_argument("--stage1-lr", type=float, default=d.stage1_learning_rate, dest="stage1_learning_rate")
    p.add_argument("--stage1-tolerance", type=float, default=d.stage1_tolerance)
    p.add_argument("--adapter-kind", default=d.adapter_kind,
                   choices=["linear", "linear_gelu", "linear_relu", "two_layer_linear"])
    p.add_argument("--common-dim", type=int, default=d.common_dim)
    p.add_argument("--hidden-dim", type=int, default=d.hidden_dim)


def _reference_flags(p):
    p.add_argument("--data", default=None, help="benchmark directory")
    p.add_argument("--reference", default=None, help="directory written by train-reference")


def build_parser():
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="adaptalign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"adaptalign {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic benchmark")
    p.add_argument("--preset", choices=sorted(PRESETS), default="standard")
    for name in ("n_subjects", "n_common", "n_unique", "n_test", "latent_dim", "subject_dim",
                 "target_dim", "n_categories"):
        p.add_argument("--" + name.replace("_", "-"), type=int, default=None)
    p.add_argument("--transform", choices=["orthogonal", "invertible_linear", "tall_linear"], default=None)
    p.add_argument("--noise-sigma", type=float, default=None)

    p = sub.add_parser("train-reference", parents=[common], help="train the reference subject")
    p.add_argument("--data", default=None)
    p.add_argument("--subject", default=REFERENCE_ID)
    _train_flags(p)

    p = sub.add_parser("align", parents=[common], help="fine-tune a new subject")
    _reference_flags(p)
    p.add_argument("--subject", default="2")
    p.add_argument("--reference-subject", default=REFERENCE_ID)
    p.add_argument("--mode", choices=sorted(CLI_MODES), default="aamax")
    p.add_argument("--common-limit", type=int, default=None)
    p.add_argument("--select", default=None, help="selection JSON restricting the training commons")
    p.add_argument("--include-unique", action=argparse.BooleanOptionalAction, default=None,
                   help="train on unique items too (default: only without --common-limit/--select)")
    _train_flags(p)

    p = sub.add_parser("select", parents=[common], help="greedy bin-coverage item selection")
    _reference_flags(p)
    p.add_argument("--reference-subject", default=REFERENCE_ID)
    p.add_argument("--dims", type=int, default=DEFAULT_DIMS)
    p.add_argument("--w", type=int, default=DEFAULT_W)
    p.add_argument("--budget", type=int, default=None)

    p = sub.add_parser("metrics", parents=[common], help="cross-subject alignment diagnostics")
    p.add_argument("--data", default=None)
    p.add_argument("--subjects", default=None, help="comma-separated subject ids (default: all)")
    p.add_argument("--model", action="append", default=[], metavar="ID=DIR",
                   help="use this subject's adapter outputs instead of raw embeddings")
    p.add_argument("--knn-k", type=int, default=DEFAULT_KNN_K)
    p.add_argument("--eig-k", type=int, default=DEFAULT_EIG_K)
    p.add_argument("--center", action="store_true")

    p = sub.add_parser("coverage-test", parents=[common], help="permutation test of selection coverage")
    _reference_flags(p)
    p.add_argument("--reference-subject", default=REFERENCE_ID)
    p.add_argument("--selection", default=None)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--subset-size", type=int, default=None)

    p = sub.add_parser("extremes", parents=[common], help="items at both ends of a singular direction")
    _reference_flags(p)
    p.add_argument("--reference-subject", default=REFERENCE_ID)
    p.add_argument("--dims", type=int, default=DEFAULT_DIMS)
    p.add_argument("--dim", type=int, default=0)
    p.add_argument("--count", type=int, default=10)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read --config {args.config}: {exc}") from None
        if "config" in loaded and "command" in loaded:
            loaded = loaded["config"]  # a previous report.json
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(loaded) - known - {"command"})
        if unknown:
            raise UsageError(f"unknown keys in --config: {', '.join(unknown)}")
        sub.set_defaults(**{k: v for k, v in loaded.items() if k not in ("command", "config")})
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"{args.command}: --{n.replace('_', '-')} is required")


def _train_config(args, mode="aamax", seed=0):
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        lambda3=args.lambda3,
        stage1_epochs=args.stage1_epochs,
        stage1_learning_rate=args.stage1_learning_rate,
        stage1_tolerance=args.stage1_tolerance,
        seed=seed,
        mode=mode,
        adapter_kind=args.adapter_kind,
        common_dim=args.common_dim,
        hidden_dim=args.hidden_dim,
    ).validate()


def _load_bench(path):
    if not Path(path).is_dir():
        raise FileNotFoundError(f"data directory not found: {path}")
    return read_benchmark(path)


def _load_reference(path):
    ref = Path(path)
    if not (ref / "adapter.json").is_file() or not (ref / "mapper.json").is_file():
        raise FileNotFoundError(f"reference model not found in {ref} (need adapter.json, mapper.json)")
    return load_model(ref / "adapter.json"), load_model(ref / "mapper.json")


def _bench_inputs(data, subjects):
    root = Path(data)
    files = [root / "config.json", root / "targets.ramx"]
    files += [root / f"subj_{s}" / "embeddings.ramx" for s in subjects]
    return files


# -- commands -------------------------------------------------------------


def cmd_simulate(args):
    _require(args, "out")
    overrides = {k: getattr(args, k) for k in ("n_subjects", "n_common", "n_unique", "n_test", "latent_dim",
                                                "subject_dim", "target_dim", "n_categories", "transform",
                                                "noise_sigma") if getattr(args, k) is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = PRESETS[args.preset](**overrides)
    bench = generate_benchmark(cfg)
    out = write_benchmark(bench, args.out)
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "report.json")
    metrics = {"n_subjects": cfg.n_subjects, "n_items": cfg.n_items}
    return {"seeds": {"benchmark": cfg.seed}, "resolved": asdict(cfg), "metrics": metrics,
            "inputs": [], "outputs": outputs}


def cmd_train_reference(args):
    _require(args, "out", "data")
    bench = _load_bench(args.data)
    seed = 0 if args.seed is None else args.seed
    cfg = _train_config(args, mode="baseline", seed=seed)
    subject = bench.subject(args.subject)
    targets = subject_targets(bench, subject)
    adapter, mapper, trace = train_reference(subject, targets, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(adapter, out / "adapter.json")
    save_model(mapper, out / "mapper.json")
    trace.to_csv(out / "trace.csv")
    test = subject.rows("test")
    train = np.flatnonzero(subject.split != "test")
    metrics = {
        "final_output_mse": evaluate(adapter, mapper, subject.embeddings[train], targets[train]),
        "test_output_mse": evaluate(adapter, mapper, subject.embeddings[test], targets[test]) if test.size else None,
        "epochs_run": len(trace),
    }
    if not args.quiet:
        print(f"final output MSE: {metrics['final_output_mse']:.6g}")
    return {"seeds": {"init": seed}, "resolved": cfg.to_dict(), "metrics": metrics,
            "inputs": _bench_inputs(args.data, [args.subject]),
            "outputs": [out / "adapter.json", out / "mapper.json", out / "trace.csv"]}


def cmd_align(args):
    _require(args, "out", "data", "reference")
    bench = _load_bench(args.data)
    ref_adapter, ref_mapper = _load_reference(args.reference)
    seed = 0 if args.seed is None else args.seed
    cfg = _train_config(args, mode=CLI_MODES[args.mode], seed=seed)
    ref_ids, _ = reference_common_space(bench, ref_adapter, args.reference_subject)
    inputs = _bench_inputs(args.data, [args.subject, args.reference_subject])
    inputs += [Path(args.reference) / "adapter.json", Path(args.reference) / "mapper.json"]
    selection_digest = None
    common_ids = ref_ids
    if args.select:
        sel = json.loads(Path(args.select).read_text())
        if "item_ids" not in sel:
            raise AdaptAlignError(f"{args.select}: selection has no item_ids")
        common_ids = np.array(sel["item_ids"], dtype=np.int64)
        if not np.isin(common_ids, ref_ids).all():
            raise AdaptAlignError(f"{args.select}: selection lists items outside the common set")
        selection_digest = file_digest(args.select)
        inputs.append(Path(args.select))
    if args.common_limit is not None:
        if args.common_limit < 1:
            raise UsageError("--common-limit must be >= 1")
        if args.common_limit > len(common_ids):
            raise UsageError(f"--common-limit {args.common_limit} exceeds {len(common_ids)} available commons")
        if args.select:
            common_ids = np.sort(common_ids[: args.common_limit])
        else:
            common_ids = random_common_subset(common_ids, args.common_limit, seed)
    include_unique = args.include_unique
    if include_unique is None:
        include_unique = args.common_limit is None and not args.select
    outcome = run_finetune(bench, ref_adapter, ref_mapper, args.subject, cfg, common_ids,
                           include_unique, args.reference_subject)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(outcome.adapter, out / "adapter.json")
    save_model(outcome.mapper, out / "mapper.json")
    outcome.trace.to_csv(out / "trace.csv")
    metrics = dict(outcome.metrics)
    metrics["selection_digest"] = selection_digest
    metrics["train_common_ids_digest"] = f"{fnv1a64(np.sort(common_ids).astype('<i8').tobytes()):016x}"
    if not args.quiet:
        print(f"{args.mode}: test output MSE {metrics['test_output_mse']:.6g}, "
              f"common adapter MSE {metrics['train_common_adapter_mse']:.6g}")
    resolved = cfg.to_dict()
    resolved.update(include_unique=include_unique, subject=args.subject, reference_subject=args.reference_subject)
    return {"seeds": {"init": seed, "common_subset": seed}, "resolved": resolved, "metrics": metrics,
            "inputs": inputs, "outputs": [out / "adapter.json", out / "mapper.json", out / "trace.csv"]}


def _universe(args, bench, ref_adapter, d, w):
    ids, space = reference_common_space(bench, ref_adapter, args.reference_subject)
    return ids, space, selection_universe(ref_adapter, space, d, w)


def cmd_select(args):
    _require(args, "out", "data", "reference")
    if args.budget is not None and args.budget < 1:
        raise UsageError("--budget must be >= 1")
    if args.w < 1 or args.dims < 1:
        raise UsageError("--w and --dims must be >= 1")
    bench = _load_bench(args.data)
    ref_adapter, _ = _load_reference(args.reference)
    ids, space = reference_common_space(bench, ref_adapter, args.reference_subject)
    if args.dims > min(ref_adapter.out_dim, ref_adapter.in_dim):
        raise UsageError(f"--dims {args.dims} exceeds the adapter's rank bound")
    result, _ = select_common_items(ref_adapter, ids, space, args.dims, args.w, args.budget)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "selection.json").write_text(result.to_json())
    if not args.quiet:
        print(f"selected {len(result.chosen)} items, empty bins {result.empty_total} "
              f"({result.empty_uncoverable} uncoverable), {result.termination}")
    metrics = {"n_chosen": len(result.chosen), "empty_total": result.empty_total,
               "empty_uncoverable": result.empty_uncoverable, "termination": result.termination}
    return {"seeds": {}, "resolved": {"d": args.dims, "w": args.w, "budget": args.budget},
            "metrics": metrics,
            "inputs": _bench_inputs(args.data, [args.reference_subject]) + [Path(args.reference) / "adapter.json"],
            "outputs": [out / "selection.json"]}


def cmd_metrics(args):
    _require(args, "out", "data")
    bench = _load_bench(args.data)
    ids = [s.strip() for s in args.subjects.split(",")] if args.subjects else [s.subject_id for s in bench.subjects]
    models = {}
    for spec in args.model:
        if "=" not in spec:
            raise UsageError(f"--model expects ID=DIR, got {spec!r}")
        sid, path = spec.split("=", 1)
        models[sid] = load_model(Path(path) / "adapter.json")
    if models and set(ids) - set(models):
        raise UsageError("--model must be given for every compared subject or for none "
                         f"(missing: {', '.join(sorted(set(ids) - set(models)))})")
    common = bench.subject(ids[0]).ids("common")
    embeddings = []
    for sid in ids:
        if sid in models:
            embeddings += common_space_embeddings(bench, {sid: models[sid]}, common)
        else:
            s = bench.subject(sid)
            embeddings.append(s.embeddings[s.rows_for_ids(common)])
    n = len(common)
    if not 1 <= args.knn_k <= n - 1:
        raise UsageError(f"--knn-k must lie in [1, {n - 1}]")
    report = alignment_report(ids, embeddings, args.knn_k, args.eig_k, center=args.center)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "metrics.json", report.to_dict())
    off = ~np.eye(len(ids), dtype=bool)
    metrics = {
        "mean_offdiag_cosine": float(report.cosine_matrix[off].mean()) if len(ids) > 1 else 1.0,
        "mean_offdiag_mse": float(report.mse_matrix[off].mean()) if len(ids) > 1 else 0.0,
        "mean_offdiag_knn": float(report.knn_consistency[off].mean()) if len(ids) > 1 else 1.0,
    }
    if not args.quiet:
        print(json.dumps(metrics))
    inputs = _bench_inputs(args.data, sorted(set(ids))) + [Path(p.split("=", 1)[1]) / "adapter.json" for p in args.model]
    return {"seeds": {}, "resolved": {"subjects": ids, "knn_k": args.knn_k, "eig_k": args.eig_k,
                                      "center": args.center, "models": sorted(models)},
            "metrics": metrics, "inputs": inputs, "outputs": [out / "metrics.json"]}


def cmd_coverage_test(args):
    _require(args, "out", "data", "reference", "selection")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    bench = _load_bench(args.data)
    ref_adapter, _ = _load_reference(args.reference)
    sel = SelectionResult.from_dict(json.loads(Path(args.selection).read_text()))
    d, w = sel.config.get("d", DEFAULT_DIMS), sel.config.get("w", DEFAULT_W)
    ids, space = reference_common_space(bench, ref_adapter, args.reference_subject)
    u, config = selection_universe(ref_adapter, space, d, w)
    if sel.config.get("universe_size", u.n_items) != u.n_items:
        raise AdaptAlignError(
            f"selection {args.selection} was made on a {sel.config.get('universe_size')}-item universe, "
            f"{args.data} has {u.n_items} common items"
        )
    if sel.config.get("bin_counts", config["bin_counts"]) != config["bin_counts"]:
        raise AdaptAlignError(f"selection {args.selection} bin counts do not match this reference model's bins")
    if any(not 0 <= i < u.n_items for i in sel.chosen):
        raise AdaptAlignError(f"selection {args.selection} indexes items outside the universe")
    size = args.subset_size if args.subset_size is not None else len(sel.chosen)
    if not 1 <= size <= u.n_items:
        raise UsageError(f"--subset-size must lie in [1, {u.n_items}]")
    seed = 0 if args.seed is None else args.seed
    res = coverage_permutation_test(u, sel.chosen, size, args.trials, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "p_value": res.p_value,
        "random_mean": res.random_mean,
        "random_std": res.random_std,
        "selected_empty": res.selected_empty,
        "empty_uncoverable": u.empty_uncoverable,
        "trials": args.trials,
        "subset_size": size,
        "selected_size": len(sel.chosen),
        "random_counts": res.random_counts.tolist(),
    }
    write_json(out / "coverage.json", payload)
    if not args.quiet:
        print(f"selected empty {res.selected_empty}, random {res.random_mean:.2f} +/- {res.random_std:.2f}, "
              f"p = {res.p_value:.4g}")
    metrics = {k: payload[k] for k in ("p_value", "random_mean", "random_std", "selected_empty")}
    return {"seeds": {"trials": seed}, "resolved": {"trials": args.trials, "subset_size": size, "d": d, "w": w},
            "metrics": metrics,
            "inputs": _bench_inputs(args.data, [args.reference_subject]) + [Path(args.selection)],
            "outputs": [out / "coverage.json"]}


def cmd_extremes(args):
    _require(args, "out", "data", "reference")
    if not 0 <= args.dim < args.dims:
        raise UsageError(f"--dim {args.dim} must lie in [0, {args.dims - 1}]")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    bench = _load_bench(args.data)
    ref_adapter, _ = _load_reference(args.reference)
    ids, space = reference_common_space(bench, ref_adapter, args.reference_subject)
    if args.count > len(ids):
        raise UsageError(f"--count exceeds the {len(ids)} common items")
    P = project_onto_principal(space, ref_adapter.effective_weight(), args.dims)
    top, bottom = extreme_items(P, args.dim, args.count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "dim": args.dim,
        "dims": args.dims,
        "count": args.count,
        "top": [int(ids[i]) for i in top],
        "bottom": [int(ids[i]) for i in bottom],
        "top_values": [float(P[i, args.dim]) for i in top],
        "bottom_values": [float(P[i, args.dim]) for i in bottom],
    }
    write_json(out / "extremes.json", payload)
    if not args.quiet:
        print(json.dumps({"top": payload["top"], "bottom": payload["bottom"]}))
    return {"seeds": {}, "resolved": {"dims": args.dims, "dim": args.dim, "count": args.count},
            "metrics": {"top": payload["top"], "bottom": payload["bottom"]},
            "inputs": _bench_inputs(args.data, [args.reference_subject]) + [Path(args.reference) / "adapter.json"],
            "outputs": [out / "extremes.json"]}


COMMANDS = {
    "simulate": cmd_simulate,
    "train-reference": cmd_train_reference,
    "align": cmd_align,
    "select": cmd_select,
    "metrics": cmd_metrics,
    "coverage-test": cmd_coverage_test,
    "extremes": cmd_extremes,
}


def _report(args, argv, result, duration):
    out = Path(args.out)
    config = {k: v for k, v in vars(args).items() if k not in ("config",)}
    return {
        "command": args.command,
        "argv": list(argv),
        "version": __version__,
        "config": config,
        "resolved": result["resolved"],
        "seeds": result["seeds"],
        "metrics": result["metrics"],
        "inputs": {str(p): file_digest(p) for p in result["inputs"]},
        "outputs": {str(Path(p).relative_to(out)): file_digest(p) for p in result["outputs"]},
        "duration_s": duration,
    }


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"adaptalign: usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    t0 = time.perf_counter()
    try:
        result = COMMANDS[args.command](args)
        report = _report(args, argv, result, time.perf_counter() - t0)
        write_json(Path(args.out) / "report.json", report)
    except UsageError as exc:
        print(f"adaptalign {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (AdaptAlignError, OSError, KeyError, ValueError) as exc:
        print(f"adaptalign {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
