"""Command-line harness.

Subcommands: generate, fit, global, diagnose, experiment. Exit codes are 0
for success, 1 for configuration or runtime errors, 2 when a solver exhausts
its rounds without meeting tol, and 3 for a partial recovery. The
TRIMFIT_THREADS environment variable caps experiment parallelism; 0 or 1
runs repeats sequentially.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diagnostics as diag
from . import model as model_mod
from . import pipeline as pipe
from .gd import DivergenceError, GdConfig, gd_ilts_run
from .ilts import (IltsConfig, RankDeficientError, ilts_run, trace_summary,
                   write_trace_csv)
from .schemas import (DIAGNOSE_REPORT_SCHEMA, EXPERIMENT_CONFIG_SCHEMA,
                      GENERATE_CONFIG_SCHEMA, RECOVERY_REPORT_SCHEMA,
                      SUBSPACE_FILE_SCHEMA, SUMMARY_SCHEMA, TRUTH_SCHEMA,
                      validate_document)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_CONVERGENCE = 2
EXIT_PARTIAL = 3


def _thread_cap() -> int:
    raw = os.environ.get("TRIMFIT_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"TRIMFIT_THREADS must be an integer, got {raw!r}") from None
    if value < 0:
        raise ValueError("TRIMFIT_THREADS must be nonnegative")
    return value


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _model_from_config(doc: dict) -> model_mod.MixtureSpec:
    cov = doc.get("covariance")
    if cov is not None:
        cov = [None if c is None else np.asarray(c, dtype=float) for c in cov]
    return model_mod.MixtureSpec(
        d=doc["d"], m=doc["m"],
        components=[np.asarray(c, dtype=float) for c in doc["components"]],
        weights=doc["weights"], covariance=cov)


def _corruption_from_config(doc: dict | None) -> model_mod.CorruptionSpec:
    if not doc:
        return model_mod.CorruptionSpec()
    return model_mod.CorruptionSpec(
        gamma_star=doc.get("gamma_star", 0.0),
        adversary=doc.get("adversary", "none"),
        magnitude=doc.get("magnitude", 1.0))


def _parse_floats(text: str) -> list[float]:
    return [float(p) for p in text.replace(",", " ").split()]


def _theta0_from_args(args, d: int) -> np.ndarray:
    if args.theta0 is not None and args.theta0_file is not None:
        raise ValueError("give only one of --theta0 and --theta0-file")
    if args.theta0 is not None:
        values = _parse_floats(args.theta0)
    elif args.theta0_file is not None:
        with open(args.theta0_file, "r", encoding="ascii") as fh:
            values = _parse_floats(fh.read())
    else:
        values = [0.0] * d
    if len(values) != d:
        raise ValueError(f"theta0 has {len(values)} entries, expected d = {d}")
    return np.asarray(values, dtype=float)


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args) -> int:
    doc = _load_json(args.config)
    validate_document(doc, GENERATE_CONFIG_SCHEMA, args.config)
    spec = _model_from_config(doc["model"])
    corruption = _corruption_from_config(doc.get("corruption"))
    out_dir = args.output_dir or doc.get("output_dir", ".")
    os.makedirs(out_dir, exist_ok=True)

    dataset, truth = model_mod.generate_mlrc(
        spec, corruption, n=doc["model"]["n"], seed=doc["model"]["seed"])

    base = os.path.join(out_dir, doc["name"])
    data_path = base + ".csv"
    truth_path = base + ".truth.json"
    truth_doc = model_mod.truth_to_dict(truth)
    validate_document(truth_doc, TRUTH_SCHEMA, truth_path)
    model_mod.save_dataset(dataset, data_path)
    model_mod.save_truth(truth, truth_path)

    tau_text = ", ".join(f"{t:.6g}" for t in truth.tau_star)
    print(f"dataset: {data_path}")
    print(f"truth:   {truth_path}")
    print(f"realized tau_star: [{tau_text}]")
    print(f"realized gamma_star: {model_mod.realized_gamma_star(truth):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit

def _run_fit(dataset, theta0, args, truth):
    if args.gd:
        config = GdConfig(tau=args.tau, eta=args.eta, schedule=args.schedule,
                          m_steps=args.m_steps, w=args.w, c_u=args.c_u,
                          max_rounds=args.max_rounds, tol=args.tol)
        trace = gd_ilts_run(dataset, theta0, config, truth=truth)
    else:
        config = IltsConfig(tau=args.tau, max_rounds=args.max_rounds, tol=args.tol,
                            rank_policy=args.rank_policy)
        trace = ilts_run(dataset, theta0, config, truth=truth)
    return trace, config


def cmd_fit(args) -> int:
    dataset = model_mod.load_dataset(args.dataset)
    truth = model_mod.load_truth(args.truth) if args.truth else None
    theta0 = _theta0_from_args(args, dataset.d)
    trace, config = _run_fit(dataset, theta0, args, truth)

    prefix = args.out_prefix or os.path.splitext(args.dataset)[0]
    summary = trace_summary(trace, config)
    validate_document(summary, SUMMARY_SCHEMA, prefix + ".summary.json")
    write_trace_csv(trace, prefix + ".trace.csv")
    with open(prefix + ".summary.json", "w", encoding="ascii") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")

    print(f"trace:   {prefix}.trace.csv")
    print(f"summary: {prefix}.summary.json")
    print(f"converged: {trace.converged} after {trace.rounds_used} rounds")
    return EXIT_OK if trace.converged else EXIT_NO_CONVERGENCE


# ---------------------------------------------------------------------------
# global

def _load_subspace(path: str) -> pipe.SubspaceEstimate:
    doc = _load_json(path)
    validate_document(doc, SUBSPACE_FILE_SCHEMA, path)
    basis = np.column_stack([np.asarray(c, dtype=float) for c in doc["basis"]])
    return pipe.SubspaceEstimate(basis=basis, provenance="external")


def cmd_global(args) -> int:
    dataset = model_mod.load_dataset(args.dataset)
    truth = model_mod.load_truth(args.truth) if args.truth else None
    taus = _parse_floats(args.tau)
    if len(taus) == 1:
        taus = taus * args.m
    subspace = _load_subspace(args.subspace) if args.subspace else None

    radius = args.radius
    if radius is None:
        radius = pipe.default_radius(dataset)
    epsilon = args.epsilon if args.epsilon is not None else 0.2 * radius
    delta = args.delta
    if delta is None:
        delta = 10.0 * args.target_accuracy * math.sqrt(math.log(dataset.n))

    config = pipe.GlobalConfig(
        m=args.m, tau_list=tuple(taus), delta=delta,
        candidate_budget=args.budget, epsilon_net=epsilon, seed=args.seed,
        radius=args.radius, ilts_max_rounds=args.max_rounds, ilts_tol=args.tol)
    report = pipe.global_ilts(dataset, config, subspace=subspace, truth=truth)

    prefix = args.out_prefix or os.path.splitext(args.dataset)[0]
    doc = pipe.report_to_dict(report)
    validate_document(doc, RECOVERY_REPORT_SCHEMA, prefix + ".report.json")
    pipe.save_report(report, prefix + ".report.json")
    pipe.write_candidate_csv(report, prefix + ".candidates.csv")

    print(f"report:     {prefix}.report.json")
    print(f"candidates: {prefix}.candidates.csv")
    print(f"recovered {sum(report.recovered)} of {config.m} components")
    if report.epsilon_recovery is not None and math.isfinite(report.epsilon_recovery):
        print(f"epsilon_recovery: {report.epsilon_recovery:.6g}")
    return EXIT_PARTIAL if report.partial else EXIT_OK


# ---------------------------------------------------------------------------
# diagnose

def cmd_diagnose(args) -> int:
    dataset = model_mod.load_dataset(args.dataset)
    truth = model_mod.load_truth(args.truth) if args.truth else None
    doc: dict = {"format": "trimfit-diagnostics", "format_version": 1,
                 "seed": args.seed}

    if args.q_separation:
        if truth is None:
            raise ValueError("--q-separation needs --truth")
        q, per = diag.q_separation(truth.theta_star)
        doc["q_separation"] = {"q": q, "per_component": list(per)}

    if args.regularity is not None:
        k = args.regularity
        if args.mode == "exact":
            est = diag.feature_regularity_exact(dataset.X, k)
        else:
            est = diag.feature_regularity_sampled(dataset.X, k, args.trials, args.seed)
        doc["feature_regularity"] = est.to_dict()

    if args.affine_error:
        if truth is None:
            raise ValueError("--affine-error needs --truth")
        counts = [int(np.count_nonzero(truth.partition == j)) for j in range(truth.m)]
        tau = [args.tau_fraction * c / dataset.n for c in counts]
        entries = []
        for delta in _parse_floats(args.delta_grid):
            est = diag.affine_error_estimate(
                dataset.X, truth.partition, tau, args.component, delta,
                args.directions, args.seed)
            entries.append(est.to_dict())
        doc["affine_error"] = entries

    validate_document(doc, DIAGNOSE_REPORT_SCHEMA, args.out or "<stdout>")
    text = json.dumps(doc, indent=1)
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(text + "\n")
        print(f"report: {args.out}")
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment

def _experiment_instance(doc: dict, repeat: int):
    """Dataset, truth and repeat seed for one repeat of an experiment."""
    if "model" in doc:
        base_seed = doc["model"]["seed"]
        seed = base_seed + repeat
        spec = _model_from_config(doc["model"])
        corruption = _corruption_from_config(doc.get("corruption"))
        dataset, truth = model_mod.generate_mlrc(spec, corruption,
                                                 n=doc["model"]["n"], seed=seed)
    else:
        dataset = model_mod.load_dataset(doc["dataset"])
        truth = model_mod.load_truth(doc["truth"]) if doc.get("truth") else None
        seed = doc["solver"].get("seed", 0) + repeat
    return dataset, truth, seed


def _solver_theta0(solver: dict, d: int, seed: int) -> np.ndarray:
    theta0 = solver.get("theta0", "random")
    if isinstance(theta0, str):
        return np.random.default_rng(seed).standard_normal(d)
    values = np.asarray(theta0, dtype=float)
    if values.shape != (d,):
        raise ValueError(f"theta0 has shape {values.shape}, expected ({d},)")
    return values


def _run_repeat(doc: dict, repeat: int) -> dict:
    dataset, truth, seed = _experiment_instance(doc, repeat)
    solver = doc["solver"]
    kind = solver["kind"]
    row: dict = {"repeat": repeat, "seed": seed}

    if kind in ("ilts", "gd-ilts"):
        theta0 = _solver_theta0(solver, dataset.d, seed)
        if kind == "ilts":
            config = IltsConfig(tau=solver["tau"],
                                max_rounds=solver.get("max_rounds", 50),
                                tol=solver.get("tol", 1e-10),
                                rank_policy=solver.get("rank_policy", "fail"))
            trace = ilts_run(dataset, theta0, config, truth=truth)
        else:
            config = GdConfig(tau=solver["tau"], eta=solver.get("eta"),
                              schedule=solver.get("schedule", "fixed"),
                              m_steps=solver.get("m_steps", 100),
                              w=solver.get("w", 10.0), c_u=solver.get("c_u", 1.0),
                              max_rounds=solver.get("max_rounds", 50),
                              tol=solver.get("tol", 1e-10))
            trace = gd_ilts_run(dataset, theta0, config, truth=truth)
        row["converged"] = int(trace.converged)
        row["rounds_used"] = trace.rounds_used
        row["final_step_norm"] = float(trace.step_norms[-1]) if trace.rounds_used else ""
        row["final_trimmed_loss"] = float(trace.trimmed_losses[-1])
        row["final_dist"] = (float(trace.dist_to_nearest[-1])
                             if trace.dist_to_nearest is not None else "")
    elif kind == "global":
        config = pipe.GlobalConfig(
            m=solver["m"], tau_list=tuple(solver["tau_list"]),
            delta=solver["delta"], candidate_budget=solver["candidate_budget"],
            epsilon_net=solver["epsilon_net"], seed=seed,
            radius=solver.get("radius"),
            ilts_max_rounds=solver.get("max_rounds", 30),
            ilts_tol=solver.get("tol", 1e-11))
        report = pipe.global_ilts(dataset, config, truth=truth)
        row["partial"] = int(report.partial)
        row["recovered"] = sum(report.recovered)
        row["candidates_total"] = sum(report.candidates_tried)
        eps = report.epsilon_recovery
        row["epsilon_recovery"] = (float(eps) if eps is not None
                                   and math.isfinite(eps) else "")
    else:
        raise ValueError(f"unknown solver kind {kind!r}")

    for quantity in doc.get("diagnostics", []):
        if quantity == "q_separation":
            if truth is None:
                raise ValueError("q_separation diagnostic needs ground truth")
            row["q_separation"] = diag.q_separation(truth.theta_star)[0]
        elif quantity == "gamma_star":
            if truth is None:
                raise ValueError("gamma_star diagnostic needs ground truth")
            row["gamma_star"] = model_mod.realized_gamma_star(truth)
    return row


def _aggregate_rows(rows: list[dict]) -> list[dict]:
    numeric: dict[str, list[float]] = {}
    for row in rows:
        if row.get("error"):
            continue
        for key, value in row.items():
            if key in ("repeat", "seed", "error"):
                continue
            if isinstance(value, (int, float)) and value != "":
                numeric.setdefault(key, []).append(float(value))
    out = []
    for key in sorted(numeric):
        values = sorted(numeric[key])
        q1, q3 = np.percentile(values, [25, 75])
        out.append({"metric": key, "median": statistics.median(values),
                    "iqr": float(q3 - q1), "count": len(values)})
    return out


def cmd_experiment(args) -> int:
    doc = _load_json(args.config)
    validate_document(doc, EXPERIMENT_CONFIG_SCHEMA, args.config)
    if ("model" in doc) == ("dataset" in doc):
        raise ValueError("config must carry exactly one of 'model' and 'dataset'")
    os.makedirs(doc["output_dir"], exist_ok=True)
    repeats = doc["repeats"]

    threads = _thread_cap()
    rows: list[dict] = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_run_repeat, doc, r): r for r in range(repeats)}
            results: dict[int, dict] = {}
            for future, r in futures.items():
                try:
                    results[r] = future.result()
                except Exception as exc:  # recorded per repeat, not fatal here
                    results[r] = {"repeat": r, "seed": "", "error": str(exc)}
            rows = [results[r] for r in range(repeats)]
    else:
        for r in range(repeats):
            try:
                rows.append(_run_repeat(doc, r))
            except Exception as exc:
                rows.append({"repeat": r, "seed": "", "error": str(exc)})

    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    if "error" not in columns:
        columns.append("error")

    base = os.path.join(doc["output_dir"], doc["name"])
    rows_path = base + ".rows.csv"
    with open(rows_path, "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, restval="")
        writer.writeheader()
        writer.writerows(rows)

    agg_path = base + ".aggregate.csv"
    with open(agg_path, "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["metric", "median", "iqr", "count"])
        writer.writeheader()
        writer.writerows(_aggregate_rows(rows))

    failures = sum(1 for row in rows if row.get("error"))
    print(f"rows:      {rows_path}")
    print(f"aggregate: {agg_path}")
    print(f"repeats: {repeats}, failures: {failures}")
    return EXIT_ERROR if failures else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trimfit",
        description="Robust mixed linear regression via iterative trimming")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic instance")
    p.add_argument("--config", required=True, help="generation config JSON")
    p.add_argument("--output-dir", help="override the config output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one component from a starting point")
    p.add_argument("dataset", help="dataset CSV")
    p.add_argument("--tau", type=float, required=True, help="trimming fraction")
    p.add_argument("--theta0", help="comma-separated starting point")
    p.add_argument("--theta0-file", help="file with the starting point")
    p.add_argument("--max-rounds", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--rank-policy", choices=["fail", "min-norm"], default="fail")
    p.add_argument("--truth", help="truth sidecar JSON for distance tracking")
    p.add_argument("--out-prefix", help="output path prefix")
    p.add_argument("--gd", action="store_true", help="gradient-descent inner solves")
    p.add_argument("--eta", type=float, help="inner step size (default 1/L per round)")
    p.add_argument("--schedule", choices=["fixed", "adaptive"], default="fixed")
    p.add_argument("--m-steps", type=int, default=100, help="fixed inner step count")
    p.add_argument("--w", type=float, default=10.0, help="adaptive schedule weight")
    p.add_argument("--c-u", type=float, default=1.0, help="adaptive schedule scale")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("global", help="recover all components")
    p.add_argument("dataset", help="dataset CSV")
    p.add_argument("--m", type=int, required=True, help="number of components")
    p.add_argument("--tau", required=True,
                   help="per-component fractions (single value broadcasts)")
    p.add_argument("--budget", type=int, required=True, help="candidates per component")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--delta", type=float, help="acceptance residual threshold")
    p.add_argument("--target-accuracy", type=float, default=1e-6,
                   help="sets delta = 10 * accuracy * sqrt(log n) when --delta absent")
    p.add_argument("--radius", type=float, help="candidate sphere radius")
    p.add_argument("--epsilon", type=float, help="net granularity (default 0.2 * radius)")
    p.add_argument("--truth", help="truth sidecar JSON for recovery metrics")
    p.add_argument("--subspace", help="external subspace basis JSON")
    p.add_argument("--max-rounds", type=int, default=30, help="inner solver rounds")
    p.add_argument("--tol", type=float, default=1e-11, help="inner solver tolerance")
    p.add_argument("--out-prefix", help="output path prefix")
    p.set_defaults(func=cmd_global)

    p = sub.add_parser("diagnose", help="structural diagnostics")
    p.add_argument("dataset", help="dataset CSV")
    p.add_argument("--truth", help="truth sidecar JSON")
    p.add_argument("--q-separation", action="store_true")
    p.add_argument("--regularity", type=int, metavar="K",
                   help="subset size for psi_plus / psi_minus")
    p.add_argument("--mode", choices=["exact", "sampled"], default="sampled")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--affine-error", action="store_true")
    p.add_argument("--component", type=int, default=0)
    p.add_argument("--delta-grid", default="0.05,0.1,0.2,0.4")
    p.add_argument("--tau-fraction", type=float, default=0.8,
                   help="tau_j as a fraction of the realized tau_star_j")
    p.add_argument("--directions", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("experiment", help="run a repeated experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError,
            RankDeficientError, DivergenceError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
