"""Command-line interface.

Commands: validate, distances, select, estimate, placebo, timehomog,
simulate, montecarlo.  Exit codes: 0 success, 1 data violation, 2
configuration error, 3 estimation failure.  Every report carries the
resolved config hash and seed so runs can be replayed; existing outputs are
never overwritten unless --force (reruns go to timestamped paths).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .config import PipelineConfig
from .dgp import DgpSpec, counterexample_presets, generate, preset
from .errors import (
    ClosecompError,
    ConfigError,
    DataError,
    EstimationError,
    NoCloseComparisonGroups,
)
from .estimator import (
    att_conditional,
    att_estimate,
    att_group_time,
    multiply_robust_att,
    placebo_test,
    run_selection,
)
from .montecarlo import robustness_table, run_preset_mc
from .panel import load_panel
from .timehomog import detect_time_homogeneity, lou_parametric_transfer_check, tau_th

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_ESTIMATION = 0, 1, 2, 3


class _JsonEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        return super().default(o)


def _write_report(payload: dict, output: str | None, force: bool) -> None:
    text = json.dumps(payload, indent=2, cls=_JsonEncoder)
    if output is None or output == "-":
        print(text)
        return
    path = Path(output)
    if path.exists() and not force:
        stamp = time.strftime("%Y%m%d%H%M%S")
        path = path.with_name(f"{path.stem}.{stamp}{path.suffix}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n")
    print(f"wrote {path}")


def _load_config(args) -> PipelineConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            doc = tomllib.load(fh)
        values.update(doc.get("pipeline", doc))
    overrides = {
        "metric": getattr(args, "metric", None),
        "kernel": getattr(args, "kernel", None),
        "bandwidth": getattr(args, "bandwidth", None),
        "bandwidth_scale": getattr(args, "bandwidth_scale", None),
        "S": getattr(args, "S", None),
        "J": getattr(args, "J", None),
        "alpha": getattr(args, "alpha", None),
        "th_mode": getattr(args, "th_mode", None),
        "th_alpha": getattr(args, "th_alpha", None),
        "th_tol": getattr(args, "th_tol", None),
        "min_cell": getattr(args, "min_cell", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if values.get("bandwidth") == "auto":
        values["bandwidth"] = None
    return PipelineConfig.from_dict(values)


def _load_data(args):
    metadata = args.meta if getattr(args, "meta", None) else None
    schema = json.loads(args.schema) if getattr(args, "schema", None) else None
    return load_panel(args.input, schema=schema, metadata=metadata)


def _report_base(args, config: PipelineConfig | None) -> dict:
    return {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": config.to_dict() if config else None,
        "config_hash": config.config_hash() if config else None,
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        data = _load_data(args)
    except DataError as err:
        print(json.dumps({"valid": False,
                          "violation": type(err).__name__,
                          "detail": str(err)}))
        return EXIT_DATA
    print(json.dumps({
        "valid": True,
        "n_units": data.n_units,
        "T": data.T,
        "groups": [str(g) for g in data.group_labels],
        "treated_groups": [str(g) for g in data.treated_groups],
        "staggered": data.is_staggered,
    }))
    return EXIT_OK


def cmd_distances(args) -> int:
    data = _load_data(args)
    config = _load_config(args)
    from .distance import compute_distances, jackknife_distance_se
    from .panel import profile_groups

    g1 = data.treated_group
    profiles = profile_groups(data, S=config.S, J=config.J)
    reports = compute_distances(profiles, g1, metric=config.metric, ridge=config.ridge)
    rows = []
    for rep in reports:
        row = rep.to_dict()
        if args.jackknife:
            try:
                row["se_proxy"] = jackknife_distance_se(
                    data, rep.group, metric=config.metric, S=config.S, J=config.J)
            except ClosecompError as err:
                row["se_proxy_error"] = str(err)
        rows.append(row)
    payload = _report_base(args, config)
    payload["distances"] = rows
    _write_report(payload, args.output, args.force)
    return EXIT_OK


def cmd_select(args) -> int:
    data = _load_data(args)
    config = _load_config(args)
    selection = run_selection(data, config)
    payload = _report_base(args, config)
    payload["selection"] = selection.to_dict()
    _write_report(payload, args.output, args.force)
    return EXIT_OK


def cmd_estimate(args) -> int:
    data = _load_data(args)
    config = _load_config(args)
    estimands = [e.strip() for e in args.estimands.split(",") if e.strip()]
    unknown = set(estimands) - {"att", "tau_mr", "tau_th", "placebo",
                                "conditional", "group_time"}
    if unknown:
        raise ConfigError(f"unknown estimands: {sorted(unknown)}")

    payload = _report_base(args, config)
    needs_selection = {"att", "tau_mr", "placebo"} & set(estimands)
    selection = run_selection(data, config) if needs_selection else None
    if selection is not None:
        payload["selection"] = selection.to_dict()

    if "att" in estimands:
        payload["att"] = att_estimate(data, selection, t=args.period,
                                      alpha=config.alpha).to_dict()
    if "tau_mr" in estimands:
        payload["tau_mr"] = multiply_robust_att(data, selection,
                                                alpha=config.alpha).to_dict()
    if "placebo" in estimands:
        if selection is not None and len(selection.selected) < 2:
            payload["placebo"] = {
                "warning": "only one selected comparison group; "
                           "post-treatment placebo test unavailable"
            }
        else:
            payload["placebo"] = placebo_test(
                data, selection, t=args.period).to_dict()
    if "tau_th" in estimands:
        if args.period is not None:
            t = args.period
        else:
            report = detect_time_homogeneity(data, mode=config.th_mode,
                                             alpha=config.th_alpha, tol=config.th_tol)
            payload["timehomog"] = report.to_dict()
            if report.t_th_mean == 0:
                raise EstimationError(
                    "no time-homogeneous post period detected; pass --period to override")
            t = report.t_th_mean
        payload["tau_th"] = tau_th(data, t=t, alpha=config.alpha).to_dict()
    if "conditional" in estimands:
        payload["conditional"] = att_conditional(data, config,
                                                 t=args.period).to_dict()
    if "group_time" in estimands:
        payload["group_time"] = att_group_time(data, config).to_dict()

    _write_report(payload, args.output, args.force)
    return EXIT_OK


def cmd_placebo(args) -> int:
    data = _load_data(args)
    config = _load_config(args)
    selection = run_selection(data, config)
    payload = _report_base(args, config)
    payload["selection"] = selection.to_dict()
    payload["placebo"] = placebo_test(data, selection, t=args.period).to_dict()
    _write_report(payload, args.output, args.force)
    return EXIT_OK


def cmd_timehomog(args) -> int:
    data = _load_data(args)
    config = _load_config(args)
    report = detect_time_homogeneity(data, mode=config.th_mode,
                                     alpha=config.th_alpha, tol=config.th_tol)
    payload = _report_base(args, config)
    payload["timehomog"] = report.to_dict()
    if args.transfer_check:
        try:
            payload["transfer_check"] = lou_parametric_transfer_check(data).to_dict()
        except ClosecompError as err:
            payload["transfer_check"] = {"error": type(err).__name__, "detail": str(err)}
    _write_report(payload, args.output, args.force)
    return EXIT_OK


def _spec_from_args(args) -> DgpSpec:
    if args.preset:
        return preset(args.preset, seed=args.seed,
                      n_per_group=args.n_per_group).spec
    if not args.spec:
        raise ConfigError("either --preset or --spec is required")
    with open(args.spec, "rb") as fh:
        doc = tomllib.load(fh)
    doc = doc.get("dgp", doc)
    doc.setdefault("seed", args.seed)
    if args.n_per_group:
        doc["n_per_group"] = args.n_per_group
    return DgpSpec.from_dict(doc)


def cmd_simulate(args) -> int:
    spec = _spec_from_args(args)
    data, truth = generate(spec)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "dataset.csv"
    truth_path = outdir / "truth.json"
    if (csv_path.exists() or truth_path.exists()) and not args.force:
        raise ConfigError(f"{outdir} already contains outputs; use --force")
    data.save_csv(csv_path)
    truth_payload = {
        "spec": spec.to_dict(),
        "att_true": truth.att_true,
        "gstar_true": [str(g) for g in truth.gstar_true],
        "gstar_mean": {str(s): [str(g) for g in v] for s, v in truth.gstar_mean.items()},
        "gstar_dist": {str(s): [str(g) for g in v] for s, v in truth.gstar_dist.items()},
        "known_bias": truth.known_bias,
        "estimands": truth.estimands,
        "population_means": truth.population_means.tolist(),
        "notes": truth.notes,
    }
    truth_path.write_text(json.dumps(truth_payload, indent=2, cls=_JsonEncoder) + "\n")
    print(f"wrote {csv_path} and {truth_path}")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    if args.table:
        table = robustness_table(args.table, reps=args.reps, master_seed=args.seed,
                                 n_per_group=args.n_per_group, n_jobs=args.jobs)
        print(table.render_markdown())
        if args.output:
            _write_report(table.to_dict(), args.output, args.force)
        return EXIT_OK if table.pattern_matches else EXIT_ESTIMATION
    if not args.preset:
        raise ConfigError("either --table or --preset is required")
    pre = preset(args.preset, n_per_group=args.n_per_group)
    summary = run_preset_mc(pre, reps=args.reps, master_seed=args.seed,
                            estimand=args.estimand or None, n_jobs=args.jobs,
                            max_failures=args.max_failures)
    payload = summary.to_dict()
    payload["config_hash"] = summary.config.config_hash()
    payload["seed"] = args.seed
    _write_report(payload, args.output, args.force)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_io_args(p, needs_input=True):
    if needs_input:
        p.add_argument("--input", required=True, help="long-format CSV")
        p.add_argument("--meta", help="JSON sidecar with treated_group/t_star "
                                      "(required when the treated column is absent)")
        p.add_argument("--schema", help="JSON column mapping, e.g. "
                                        '\'{"unit": "id"}\'')
    p.add_argument("--output", "-o", default=None, help="report path (default: stdout)")
    p.add_argument("--force", action="store_true",
                   help="overwrite existing outputs instead of timestamping")


def _add_pipeline_args(p):
    p.add_argument("--config", help="TOML config file ([pipeline] table)")
    p.add_argument("--metric", choices=["wasserstein", "mean"])
    p.add_argument("--kernel", choices=["uniform", "epanechnikov", "triangular"])
    p.add_argument("--bandwidth", type=lambda s: s if s == "auto" else float(s),
                   help="positive number or 'auto'")
    p.add_argument("--bandwidth-scale", dest="bandwidth_scale", type=float)
    p.add_argument("--S", type=int, help="pre-treatment periods for the mean metric")
    p.add_argument("--J", type=int, help="quantile grid size")
    p.add_argument("--alpha", type=float)
    p.add_argument("--th-mode", dest="th_mode", choices=["test", "tolerance"])
    p.add_argument("--th-alpha", dest="th_alpha", type=float)
    p.add_argument("--th-tol", dest="th_tol", type=float)
    p.add_argument("--min-cell", dest="min_cell", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="closecomp",
        description="Close-comparison-group selection and ATT estimation "
                    "for panel data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a panel CSV")
    _add_io_args(p)

    p = sub.add_parser("distances", help="distances from the treated group "
                                         "to every comparison group")
    _add_io_args(p)
    _add_pipeline_args(p)
    p.add_argument("--jackknife", action="store_true",
                   help="attach delete-one-unit SE diagnostics")

    p = sub.add_parser("select", help="estimate the close-comparison set")
    _add_io_args(p)
    _add_pipeline_args(p)

    p = sub.add_parser("estimate", help="full pipeline with chosen estimands")
    _add_io_args(p)
    _add_pipeline_args(p)
    p.add_argument("--estimands", default="att",
                   help="comma list from att,tau_mr,tau_th,placebo,conditional,group_time")
    p.add_argument("--period", type=int, help="outcome period (default t*)")

    p = sub.add_parser("placebo", help="equal-post-means test across the selected set")
    _add_io_args(p)
    _add_pipeline_args(p)
    p.add_argument("--period", type=int, help="post period to test (default t*)")

    p = sub.add_parser("timehomog", help="detect the mean time-homogeneity window")
    _add_io_args(p)
    _add_pipeline_args(p)
    p.add_argument("--transfer-check", action="store_true",
                   help="also run the parametric transfer check")

    p = sub.add_parser("simulate", help="draw a dataset from a DGP spec or preset")
    p.add_argument("--preset", help="named preset")
    p.add_argument("--spec", help="TOML DGP spec file ([dgp] table)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-group", dest="n_per_group", type=int, default=1000)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--list-presets", action="store_true")

    p = sub.add_parser("montecarlo", help="Monte Carlo runs and robustness tables")
    p.add_argument("--preset")
    p.add_argument("--table", choices=["prop1", "prop2", "prop3"])
    p.add_argument("--estimand", help="override the preset's target estimand")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-group", dest="n_per_group", type=int, default=1000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--max-failures", dest="max_failures", type=int, default=0)
    p.add_argument("--output", "-o", default=None)
    p.add_argument("--force", action="store_true")

    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "distances": cmd_distances,
    "select": cmd_select,
    "estimate": cmd_estimate,
    "placebo": cmd_placebo,
    "timehomog": cmd_timehomog,
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and getattr(args, "list_presets", False):
        for name, pre in sorted(counterexample_presets().items()):
            print(f"{name}: {pre.description}")
        return EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except NoCloseComparisonGroups as err:
        print(json.dumps({
            "error": "NoCloseComparisonGroups",
            "detail": str(err),
            "nearest": [[str(g), d] for g, d in err.nearest],
            "min_bandwidth": err.min_bandwidth,
        }), file=sys.stderr)
        return EXIT_ESTIMATION
    except DataError as err:
        print(json.dumps({"error": type(err).__name__, "detail": str(err)}),
              file=sys.stderr)
        return EXIT_DATA
    except ConfigError as err:
        print(json.dumps({"error": type(err).__name__, "detail": str(err)}),
              file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as err:
        print(json.dumps({"error": type(err).__name__, "detail": str(err)}),
              file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
