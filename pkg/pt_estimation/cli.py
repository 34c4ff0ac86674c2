"""
Command-line entry point: python -m pt_estimation.cli <command> [flags].

Every command resolves the YAML config (flags override it), writes its outputs
plus a frozen config.yaml and run_manifest.json into --out or the next
results/<n>, and exits 0 on success, 2 on invalid input and 3 when the theory
ledger fails.
"""

import argparse
import itertools
import json
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Sequence, Tuple

import pandas as pd
import yaml

from pt_estimation.analytics import (
    ASYMPTOTIC,
    analytic_mse,
    budget_crossover,
    direct_label_spec,
    error_floor,
    single_direct_vs_llm,
    superiority,
)
from pt_estimation.annotator import AnnotatorSpec
from pt_estimation.bootstrap import (
    budget_curve,
    fit_spec,
    mix_estimators,
    prediction_pools,
)
from pt_estimation.data import (
    GroundTruthTable,
    Pools,
    derive_ground_truth,
    load_annotations,
    load_prediction_files,
    write_ground_truth,
    write_predictions,
)
from pt_estimation.dpt import (
    DptReport,
    differentials,
    estimator_means,
    fisher_z_test,
    run_dpt,
)
from pt_estimation.errors import (
    EmptyJoinError,
    PtEstimationError,
    UndefinedCorrelationError,
)
from pt_estimation.scenarios import load_scenario, run_scenario, verify_theory
from pt_estimation.utils import (
    banner,
    load_config,
    resolve_out_dir,
    write_json,
    write_run_manifest,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_LEDGER_FAILED = 3
MAX_BUDGET = 1_000_000


def _set(section: Dict[str, Any], key: str, value: Any) -> None:
    if value is not None:
        section[key] = value


def _record_filters(section: Dict[str, Any], args: argparse.Namespace) -> None:
    """Write the effective id filters and format into the config the manifest hashes."""
    section["groups"] = sorted(set(args.group)) if args.group else None
    section["estimators"] = sorted(set(args.estimator)) if args.estimator else None
    _set(section, "format", args.format)


def _k_range(section: Dict[str, Any]) -> List[int]:
    k_min, k_max = int(section["k_min"]), int(section["k_max"])
    if not 1 <= k_min <= k_max <= MAX_BUDGET:
        raise ValueError(
            f"budget range must satisfy 1 <= k_min <= k_max <= {MAX_BUDGET}, "
            f"got [{k_min}, {k_max}]"
        )
    return list(range(k_min, k_max + 1))


def _check_files(paths: Sequence[str]) -> None:
    for path in paths:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"input file not found: {path}")


def _input_paths(args: argparse.Namespace) -> List[str]:
    paths = [args.annotations] if getattr(args, "annotations", None) else []
    paths += list(getattr(args, "predictions", None) or [])
    if getattr(args, "specs", None):
        paths.append(args.specs)
    return paths


def _load_pools(args: argparse.Namespace) -> Tuple[GroundTruthTable, Pools]:
    """Ground truth from direct annotations; pools from perspective rows and predictions."""
    if not args.annotations:
        raise ValueError("--annotations is required: ground truth comes from direct labels")
    annotations = load_annotations(args.annotations)
    print(f"Loaded {len(annotations)} annotation rows from: {args.annotations}")
    pools = dict(prediction_pools(annotations, args.group, args.estimator))
    if args.predictions:
        preds = load_prediction_files(args.predictions)
        print(f"Loaded {len(preds)} prediction rows from {len(args.predictions)} file(s)")
        extra = prediction_pools(preds, args.group, args.estimator)
        clash = sorted({k[2] for k in extra} & {k[2] for k in pools})
        if clash:
            raise PtEstimationError(
                f"estimator id(s) {clash} appear in both annotations and predictions"
            )
        pools.update(extra)
    truth = derive_ground_truth(annotations)
    print(f"Derived ground truth for {len(truth)} (item, group) keys")
    return truth, pools


def _join(pools: Pools, truth: GroundTruthTable) -> Pools:
    joined = {key: pool for key, pool in pools.items() if (key[0], key[1]) in truth}
    if not joined:
        raise EmptyJoinError(
            "no prediction pool overlaps the ground truth",
            {
                "pools": len(pools),
                "ground_truth_keys": len(truth),
                "joined": 0,
            },
        )
    dropped = len(pools) - len(joined)
    if dropped:
        print(f"Warning: skipping {dropped} pool(s) without ground truth")
    return joined


def cmd_analyze(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    section = config["analysis"]
    _set(section, "bootstrap", args.bootstrap)
    _set(section, "k_min", args.k_min)
    _set(section, "k_max", args.k_max)
    _record_filters(section, args)
    k_range = _k_range(section)

    truth, pools = _load_pools(args)
    pools = _join(pools, truth)
    estimators = sorted({key[2] for key in pools})
    print(f"Evaluating {len(estimators)} estimator(s): {', '.join(estimators)}")
    print(f"Budgets k={k_range[0]}..{k_range[-1]}, B={section['bootstrap']}")

    report = budget_curve(
        pools,
        truth,
        k_range,
        B=int(section["bootstrap"]),
        seed=args.seed,
        exhaustive_limit=int(section["exhaustive_limit"]),
        progress=True,
    )
    for flag in report.flags:
        print(
            f"Warning: MSE rises from k={flag['k_from']} to k={flag['k_to']} "
            f"for {flag['group_id']}/{flag['estimator_id']}"
        )

    out_dir = resolve_out_dir(args.out)
    write_ground_truth(truth, os.path.join(out_dir, "ground_truth.csv"))
    if section["format"] == "csv":
        report.write_csv(
            os.path.join(out_dir, "metrics_items.csv"),
            os.path.join(out_dir, "metrics_aggregates.csv"),
        )
    else:
        report.write_json(os.path.join(out_dir, "metrics.json"))
    write_run_manifest(out_dir, "analyze", config, args.seed, _input_paths(args))
    print(f"Saved metrics to: {out_dir}")
    return EXIT_OK


def _decision_block(
    llm: AnnotatorSpec,
    human: AnnotatorSpec,
    m: int,
    k_range: Sequence[int],
    spread: float | None,
) -> Dict[str, Any]:
    block: Dict[str, Any] = {
        "llm_spec": llm.to_dict(),
        "human_spec": human.to_dict(),
        "llm_mse": analytic_mse(llm, m).to_dict(),
        "human_curve": [{"k": k, **analytic_mse(human, k).to_dict()} for k in k_range],
        "decisions": [superiority(llm, human, m, k).to_dict() for k in k_range],
        "asymptotic": superiority(llm, human, ASYMPTOTIC, ASYMPTOTIC).to_dict(),
        "crossover": budget_crossover(llm, human, m),
        "floors": {"llm": error_floor(llm), "human": error_floor(human)},
    }
    if spread is not None:
        block["single_direct"] = {
            "population_spread": spread,
            "decision": single_direct_vs_llm(spread, llm).to_dict(),
            "direct_crossover": budget_crossover(llm, direct_label_spec(spread), m),
        }
    return block


def _explicit_decision(path: str, m: int, k_range: Sequence[int]) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        specs = json.load(f)
    try:
        llm = AnnotatorSpec.from_dict(specs["llm"])
        human = AnnotatorSpec.from_dict(specs["human"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: expected 'llm' and 'human' spec objects ({e!r})") from e
    spread = specs.get("population_spread")
    block = _decision_block(
        llm, human, m, k_range, None if spread is None else float(spread)
    )
    return {"group_id": None, **block}


def _fitted_decisions(
    args: argparse.Namespace, section: Dict[str, Any], m: int, k_range: Sequence[int]
) -> List[Dict[str, Any]]:
    truth, pools = _load_pools(args)
    pools = _join(pools, truth)
    human_id = section["human_estimator"]
    llm_id = section["llm_estimator"]
    if llm_id is None:
        others = sorted({key[2] for key in pools} - {human_id})
        if len(others) != 1:
            raise ValueError(
                f"cannot pick the LLM estimator from {others}: pass --llm-estimator"
            )
        llm_id = others[0]
    section["llm_estimator"] = llm_id
    print(f"Comparing {llm_id} (m={m}) against {human_id}")

    wanted = {key: pool for key, pool in pools.items() if key[2] in (llm_id, human_id)}
    fitted = fit_spec(wanted, truth)
    results = []
    for group in sorted({g for g, _ in fitted}):
        if (group, llm_id) not in fitted or (group, human_id) not in fitted:
            print(f"Warning: group {group} lacks one of the two estimators, skipped")
            continue
        llm_fit, human_fit = fitted[(group, llm_id)], fitted[(group, human_id)]
        for fit in (llm_fit, human_fit):
            if fit.gamma_flagged:
                print(
                    f"Warning: {group}/{fit.estimator_id} gamma_hat={fit.gamma_hat:.4f} "
                    "outside [0, 1), clamped for the decision"
                )
        items = truth.items(group)
        spread = sum(
            truth.f_star(x, group) * (1.0 - truth.f_star(x, group)) for x in items
        ) / len(items)
        block = _decision_block(
            llm_fit.to_annotator_spec(),
            human_fit.to_annotator_spec(),
            m,
            k_range,
            spread,
        )
        results.append(
            {
                "group_id": group,
                "fitted": {"llm": llm_fit.to_dict(), "human": human_fit.to_dict()},
                **block,
            }
        )
    if not results:
        raise EmptyJoinError(
            "no group has fitted specs for both estimators",
            {"fitted_cells": len(fitted), "groups": 0},
        )
    return results


def cmd_decide(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    section = config["decide"]
    _set(section, "llm_budget", args.llm_budget)
    _set(section, "k_min", args.k_min)
    _set(section, "k_max", args.k_max)
    _set(section, "llm_estimator", args.llm_estimator)
    _set(section, "human_estimator", args.human_estimator)
    _record_filters(section, args)
    k_range = _k_range(section)
    m = int(section["llm_budget"])
    if not 1 <= m <= MAX_BUDGET:
        raise ValueError(f"--llm-budget must be in [1, {MAX_BUDGET}], got {m}")

    if args.specs:
        print(f"Using explicit specs from: {args.specs}")
        results = [_explicit_decision(args.specs, m, k_range)]
        mode = "explicit"
    else:
        results = _fitted_decisions(args, section, m, k_range)
        mode = "fitted"

    for r in results:
        verdict = r["decisions"][0]["winner"]
        print(
            f"[{r['group_id'] or 'specs'}] k={k_range[0]}: {verdict}; "
            f"asymptotic: {r['asymptotic']['winner']}; crossover n={r['crossover']}"
        )

    out_dir = resolve_out_dir(args.out)
    report = {"mode": mode, "llm_budget": m, "k_range": k_range, "results": results}
    if (args.format or "json") == "csv":
        rows = [
            {"group_id": r["group_id"], "k": k, **d}
            for r in results
            for k, d in zip(k_range, r["decisions"])
        ]
        pd.DataFrame(rows).to_csv(
            os.path.join(out_dir, "decision.csv"), index=False, float_format="%.10g"
        )
    else:
        write_json(report, os.path.join(out_dir, "decision.json"))
    write_run_manifest(out_dir, "decide", config, args.seed, _input_paths(args))
    print(f"Saved decision report to: {out_dir}")
    return EXIT_OK


def _fisher_comparisons(
    reports: List[DptReport], reference: str, sided: str
) -> List[Dict[str, Any]]:
    by_pair: Dict[Tuple[str, str], Dict[str, DptReport]] = {}
    for r in reports:
        by_pair.setdefault((r.g1, r.g2), {})[r.estimator_id] = r

    out = []
    for (g1, g2), per_est in sorted(by_pair.items()):
        ref = per_est.get(reference)
        if ref is None:
            continue
        for estimator, r in sorted(per_est.items()):
            if estimator == reference:
                continue
            row: Dict[str, Any] = {
                "g1": g1,
                "g2": g2,
                "estimator_id": estimator,
                "reference": reference,
            }
            if r.rho is None or ref.rho is None:
                row["error"] = "correlation undefined for one side"
            else:
                try:
                    test = fisher_z_test(
                        r.rho, r.n_items, ref.rho, ref.n_items, sided  # type: ignore[arg-type]
                    )
                    row.update(test.to_dict())
                except (UndefinedCorrelationError, ValueError) as e:
                    row["error"] = str(e)
            out.append(row)
    return out


def cmd_dpt(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    section = config["dpt"]
    _set(section, "bootstrap", args.bootstrap)
    _set(section, "reference", args.reference)
    _set(section, "sided", args.sided)
    _set(section, "zero_tol", args.zero_tol)
    _record_filters(section, args)

    truth, pools = _load_pools(args)
    groups = [g for g in truth.groups() if args.group is None or g in args.group]
    pairs = list(itertools.combinations(groups, 2))
    estimators = sorted({key[2] for key in pools})
    if not pairs or not estimators:
        raise EmptyJoinError(
            "DPT needs at least two groups and one estimator",
            {"groups": len(groups), "estimators": len(estimators)},
        )
    print(f"{len(estimators)} estimator(s) x {len(pairs)} group pair(s)")

    reports: List[DptReport] = []
    scatter: List[Dict[str, Any]] = []
    for estimator in estimators:
        means = estimator_means(pools, estimator)
        for g1, g2 in pairs:
            series = differentials(truth, means, g1, g2)
            report = run_dpt(
                series,
                estimator,
                B=int(section["bootstrap"]),
                seed=args.seed,
                zero_tol=float(section["zero_tol"]),
            )
            if report.error is not None:
                print(f"Warning: {estimator} {g1}<->{g2}: {report.error}")
            reports.append(report)
            scatter.extend(
                {"estimator_id": estimator, "g1": g1, "g2": g2, **row}
                for row in series.scatter_rows()
            )
    if all(r.n_items == 0 for r in reports):
        raise EmptyJoinError(
            "no item has ground truth and predictions for both groups of any pair",
            {"pairs": len(pairs), "estimators": len(estimators), "items": 0},
        )

    comparisons = _fisher_comparisons(reports, section["reference"], section["sided"])
    if section["reference"] not in estimators:
        print(f"Warning: reference estimator {section['reference']} not found")

    out_dir = resolve_out_dir(args.out)
    pd.DataFrame(
        scatter,
        columns=["estimator_id", "g1", "g2", "item_id", "delta_star", "delta_hat"],
    ).to_csv(os.path.join(out_dir, "dpt_scatter.csv"), index=False, float_format="%.10g")
    if (args.format or "json") == "csv":
        pd.DataFrame([r.to_dict() for r in reports]).to_csv(
            os.path.join(out_dir, "dpt_reports.csv"), index=False, float_format="%.10g"
        )
        pd.DataFrame(comparisons).to_csv(
            os.path.join(out_dir, "dpt_comparisons.csv"), index=False, float_format="%.10g"
        )
    else:
        write_json(
            {
                "reports": [r.to_dict() for r in reports],
                "comparisons": comparisons,
                "sided": section["sided"],
            },
            os.path.join(out_dir, "dpt.json"),
        )
    write_run_manifest(out_dir, "dpt", config, args.seed, _input_paths(args))
    print(f"Saved DPT reports to: {out_dir}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    section = config["simulate"]
    _set(section, "scenarios", args.scenario)
    scenarios = [
        replace(load_scenario(name), seed=args.seed) for name in section["scenarios"]
    ]

    out_dir = resolve_out_dir(args.out)
    for s in scenarios:
        print(f"Running scenario {s.name} ({len(s.items)} items, seed={s.seed})")
        result = run_scenario(s, progress=True)
        scenario_dir = os.path.join(out_dir, s.name)
        os.makedirs(scenario_dir, exist_ok=True)
        write_json(
            {"scenario": s.to_dict(), **result.to_dict()},
            os.path.join(scenario_dir, "scenario.json"),
        )
        if (args.format or "json") == "csv":
            result.metrics.write_csv(
                os.path.join(scenario_dir, "metrics_items.csv"),
                os.path.join(scenario_dir, "metrics_aggregates.csv"),
            )
            rows = [
                {"estimator_id": e, "k": k, **cell}
                for e, per_k in result.agreement.items()
                for k, cell in per_k.items()
            ]
            pd.DataFrame(rows).to_csv(
                os.path.join(scenario_dir, "curves.csv"), index=False, float_format="%.10g"
            )
        print(f"  max relative gap {result.max_relative_gap():.4f}")
        for d in result.decisions:
            print(
                f"  {d['llm']} vs {d['human']}: k=1 {d['at_k1']['winner']}, "
                f"crossover analytic={d['analytic_crossover']} "
                f"empirical={d['empirical_crossover']}"
            )
    write_run_manifest(out_dir, "simulate", config, args.seed)
    print(f"Saved scenario outputs to: {out_dir}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    section = config["verify"]
    _set(section, "trials", args.trials)
    _set(section, "perturb_floor", args.perturb_floor)

    ledger = verify_theory(
        args.seed,
        int(section["trials"]),
        mc_trials=int(section["mc_trials"]),
        mc_panels=int(section["mc_panels"]),
        perturb_floor=float(section.get("perturb_floor", 0.0)),
        progress=True,
    )
    out_dir = resolve_out_dir(args.out)
    ledger.write_json(os.path.join(out_dir, "ledger.json"))
    ledger.write_text(os.path.join(out_dir, "ledger.txt"))
    write_run_manifest(out_dir, "verify", config, args.seed)
    print(ledger.to_text(), end="")
    print(f"Saved ledger to: {out_dir}")
    return EXIT_OK if ledger.passed else EXIT_LEDGER_FAILED


def cmd_mix(args: argparse.Namespace, config: Dict[str, Any]) -> int:
    section = config["mix"]
    _set(section, "name", args.name)
    if not args.predictions:
        raise ValueError("--predictions is required for mix")
    weights = None
    if args.weights is not None:
        if len(args.weights) != len(args.members):
            raise ValueError("--weights needs one value per --members entry")
        weights = dict(zip(args.members, args.weights))
    section["members"] = list(args.members)
    section["weights"] = None if weights is None else list(args.weights)
    section["append"] = bool(args.append)

    preds = load_prediction_files(args.predictions)
    result = mix_estimators(preds, args.members, weights, section["name"])
    for t in result.truncations:
        print(f"Note: {t['item_id']}/{t['group_id']} truncated to {t['used']} samples {t['sizes']}")
    if result.skipped:
        print(f"Note: {len(result.skipped)} (item, group) key(s) lack a member, skipped")

    out_dir = resolve_out_dir(args.out)
    table = preds.merged(result.table) if args.append else result.table
    write_predictions(table, os.path.join(out_dir, "predictions_mixed.csv"))
    write_json(
        {
            "estimator_id": result.estimator_id,
            "members": sorted(set(args.members)),
            "weights": weights,
            "truncations": result.truncations,
            "skipped": [list(k) for k in result.skipped],
        },
        os.path.join(out_dir, "mix.json"),
    )
    write_run_manifest(out_dir, "mix", config, args.seed, _input_paths(args))
    print(f"Mixed estimator {result.estimator_id} saved to: {out_dir}")
    return EXIT_OK


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML config; built-in defaults when omitted")
    p.add_argument("--annotations", help="annotations CSV")
    p.add_argument("--predictions", nargs="+", action="extend", help="prediction CSV(s)")
    p.add_argument("--out", help="output directory (default: next results/<n>)")
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples B")
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--group", nargs="+", action="extend", help="group id filter")
    p.add_argument("--estimator", nargs="+", action="extend", help="estimator id filter")
    p.add_argument("--format", choices=["json", "csv"])
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="pt_estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", parents=[common], help="bootstrap MSE/bias/variance curves")
    analyze.add_argument("--seed", type=int, required=True)

    decide = sub.add_parser("decide", parents=[common], help="LLM vs human decision rule")
    decide.add_argument("--seed", type=int)
    decide.add_argument("--specs", help="JSON with explicit 'llm' and 'human' specs")
    decide.add_argument("--llm-budget", type=int)
    decide.add_argument("--llm-estimator")
    decide.add_argument("--human-estimator")

    dpt = sub.add_parser("dpt", parents=[common], help="differential perspective-taking")
    dpt.add_argument("--seed", type=int, required=True)
    dpt.add_argument("--reference", help="estimator the Fisher z-tests compare against")
    dpt.add_argument("--sided", choices=["two-sided", "greater", "less"])
    dpt.add_argument("--zero-tol", type=float)

    simulate = sub.add_parser("simulate", parents=[common], help="run scenario presets")
    simulate.add_argument("--seed", type=int, required=True)
    simulate.add_argument(
        "--scenario", nargs="+", action="extend", help="scenario JSON path or preset name"
    )

    verify = sub.add_parser("verify", parents=[common], help="theory property ledger")
    verify.add_argument("--seed", type=int, required=True)
    verify.add_argument("--trials", type=int)
    verify.add_argument("--perturb-floor", type=float)

    mix = sub.add_parser("mix", parents=[common], help="mix estimators into one")
    mix.add_argument("--seed", type=int)
    mix.add_argument("--members", nargs="+", required=True)
    mix.add_argument("--weights", nargs="+", type=float)
    mix.add_argument("--name")
    mix.add_argument("--append", action="store_true", help="keep the input estimators")
    return parser


COMMANDS = {
    "analyze": cmd_analyze,
    "decide": cmd_decide,
    "dpt": cmd_dpt,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "mix": cmd_mix,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    banner(args.command.upper())
    try:
        _check_files(_input_paths(args) + ([args.config] if args.config else []))
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except (PtEstimationError, ValueError, OSError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
