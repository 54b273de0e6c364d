"""Command line interface: simulate benchmark data, fit networks, evaluate fits.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import detection, evaluation, simulate
from .data import load_manifest, load_two_group_manifest
from .errors import AnalysisError, ValidationError
from .pipeline import FitConfig, run_fit
from .version import __version__

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = tuple(float(a) for a in np.geomspace(1e-4, 0.5, 20))


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not a fraction in [0, 1]")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated float list")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointggm",
        description="Joint network estimation across related conditions.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate seeded benchmark replicates")
    sim.add_argument("--kind", choices=simulate.KINDS, default="ar2")
    sim.add_argument("--p", type=_positive_int, required=True,
                     help="number of variables")
    sim.add_argument("--n", type=_positive_int, required=True,
                     help="samples per condition")
    sim.add_argument("--k", type=_positive_int, default=1,
                     help="number of conditions")
    sim.add_argument("--lineage", choices=simulate.LINEAGES, default="temporal")
    sim.add_argument("--frac", type=_fraction, default=0.05,
                     help="fraction of edges perturbed between conditions")
    sim.add_argument("--reps", type=_positive_int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory")

    fit = sub.add_parser("fit", help="fit a network family from a manifest")
    fit.add_argument("--manifest", required=True)
    fit.add_argument("--config", help="JSON config file; flags override its entries")
    fit.add_argument("--out", required=True)
    fit.add_argument("--dump-screened", action="store_true")
    fit.add_argument("--prior", choices=["temporal", "spatial"])
    fit.add_argument("--arity", type=int, choices=[2, 3])
    fit.add_argument("--alpha1", type=float)
    fit.add_argument("--alpha2", type=float)
    fit.add_argument("--a1", type=float)
    fit.add_argument("--b1", type=float)
    fit.add_argument("--a2", type=float)
    fit.add_argument("--b2", type=float)
    fit.add_argument("--dirichlet", type=_float_list,
                     help="three comma-separated pseudo-counts for arity 3")
    fit.add_argument("--xi", type=float, help="neighborhood size factor")
    fit.add_argument("--engine", choices=["auto", "exact", "gibbs"])
    fit.add_argument("--sweeps", type=_positive_int)
    fit.add_argument("--burn-in", dest="burn_in", type=int)
    fit.add_argument("--cap", dest="enumeration_cap", type=_positive_int,
                     help="max enumerable configurations for the exact engine")
    fit.add_argument("--screen-method", dest="screen_method",
                     choices=[detection.METHOD_EB, detection.METHOD_BY])
    fit.add_argument("--detect-method", dest="detect_method",
                     choices=[detection.METHOD_EB, detection.METHOD_BY])
    fit.add_argument("--adjust-covariates", dest="adjust_covariates",
                     action=argparse.BooleanOptionalAction)
    fit.add_argument("--signed-adjusted", dest="signed_adjusted",
                     action=argparse.BooleanOptionalAction)
    fit.add_argument("--pin-null-mean", dest="pin_null_mean",
                     action=argparse.BooleanOptionalAction)
    fit.add_argument("--weights", type=_float_list,
                     help="comma-separated positive per-condition weights")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--threads", type=_positive_int)
    fit.add_argument("--two-step", dest="two_step",
                     action=argparse.BooleanOptionalAction)

    ev = sub.add_parser("evaluate", help="score fits against simulation truth")
    ev.add_argument("--fit", required=True, help="fit output directory")
    ev.add_argument("--truth", required=True, help="simulation output directory")
    ev.add_argument("--out", help="report directory (default: <fit>/evaluation)")
    ev.add_argument("--grid", default="auto",
                    help="'auto', a point count, or comma-separated thresholds")
    ev.add_argument("--sweep-alpha", action="store_true",
                    help="sweep detection levels instead of score thresholds")
    ev.add_argument("--method", choices=[detection.METHOD_EB, detection.METHOD_BY],
                    default=detection.METHOD_EB,
                    help="multiple-test method for --sweep-alpha")
    ev.add_argument("--format", choices=["csv", "json"], default="csv",
                    help="summary table format")
    ev.add_argument("--svg", action=argparse.BooleanOptionalAction, default=True,
                    help="also write SVG plots")
    return parser


def cmd_simulate(args) -> int:
    out = Path(args.out)
    meta_base = {
        "kind": args.kind, "p": args.p, "n": args.n, "k": args.k,
        "lineage": args.lineage, "frac": args.frac, "seed": args.seed,
    }
    for r in range(args.reps):
        rep = simulate.simulate_replicate(
            args.kind, args.p, args.n, args.k, args.lineage, args.frac,
            seed=args.seed + r,
        )
        meta = dict(meta_base, rep=r, rep_seed=args.seed + r)
        path = simulate.write_replicate(out / f"rep_{r:03d}", rep, meta)
        logger.info("wrote %s", path)
    print(f"wrote {args.reps} replicate(s) under {out}")
    return 0


_CONFIG_FIELDS = {f.name for f in fields(FitConfig)}


def _merge_config(args) -> FitConfig:
    """Flags beat config-file entries beat defaults."""
    spec: dict = {}
    if args.config:
        try:
            spec = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(spec, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
    overrides = {
        name: value
        for name, value in vars(args).items()
        if name in _CONFIG_FIELDS and value is not None
    }
    return FitConfig.from_dict({**spec, **overrides})


def cmd_fit(args) -> int:
    config = _merge_config(args)
    if config.two_step:
        source = load_two_group_manifest(args.manifest)
    else:
        source = load_manifest(args.manifest)
    result = run_fit(source, config, args.out, dump_screened=args.dump_screened)
    edges = int(result.graph.reject.any(axis=1).sum())
    print(f"fit complete: {edges} distinct edges detected across "
          f"{len(result.graph.labels)} condition(s); outputs in {args.out}")
    return 0


def _parse_grid(text: str):
    if text == "auto":
        return "auto"
    if "," in text or "." in text:
        values = _float_list(text)
        if not values:
            raise ValidationError(f"empty threshold grid {text!r}")
        return values
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"--grid expects 'auto', an integer or floats, got {text!r}")


def _discover_pairs(fit_dir: Path, truth_dir: Path) -> list[tuple[str, Path, Path]]:
    reps = sorted(d for d in truth_dir.glob("rep_*") if (d / "manifest.json").exists())
    if reps:
        pairs = []
        for rep in reps:
            fit_rep = fit_dir / rep.name
            if not (fit_rep / "integrated.csv").exists():
                raise ValidationError(
                    f"no fit outputs for {rep.name} under {fit_dir}"
                )
            pairs.append((rep.name, fit_rep, rep))
        return pairs
    if (truth_dir / "manifest.json").exists():
        return [("run", fit_dir, truth_dir)]
    raise ValidationError(f"no simulation manifest found under {truth_dir}")


def _curve_for(scores: np.ndarray, truth: np.ndarray, args):
    if args.sweep_alpha:
        grid = _parse_grid(args.grid)
        alphas = DEFAULT_ALPHA_GRID if grid == "auto" else (
            np.geomspace(1e-4, 0.5, grid) if isinstance(grid, int) else grid
        )
        return evaluation.pr_curve_alpha(scores, truth, alphas, method=args.method)
    return evaluation.pr_curve(scores, truth, grid=_parse_grid(args.grid))


def _pooled_degrees(fit_dir: Path) -> list[int]:
    hubs = json.loads((fit_dir / "hubs.json").read_text())
    degrees: list[int] = []
    for cond in hubs["conditions"]:
        degrees.extend(cond["degrees"].values())
    return degrees


def _write_summary(path_base: Path, rows: list[dict], fmt: str,
                   columns: list[str]) -> Path:
    if fmt == "json":
        path = path_base.with_suffix(".json")
        path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
        return path
    path = path_base.with_suffix(".csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def cmd_evaluate(args) -> int:
    fit_dir, truth_dir = Path(args.fit), Path(args.truth)
    out = Path(args.out) if args.out else fit_dir / "evaluation"
    out.mkdir(parents=True, exist_ok=True)
    pairs = _discover_pairs(fit_dir, truth_dir)

    auprcs: dict[str, list[float]] = {"integrated": [], "separated": []}
    power_rows = []
    for name, fit_rep, truth_rep in pairs:
        _, truth = evaluation.load_truth_masks(truth_rep / "manifest.json")
        for which, filename in (("integrated", "integrated.csv"),
                                ("separated", "edge_scores.csv")):
            _, scores = evaluation.load_score_csv(fit_rep / filename)
            if scores.shape != truth.shape:
                raise ValidationError(
                    f"{name}: {which} scores {scores.shape} do not match "
                    f"truth {truth.shape}"
                )
            curve = _curve_for(scores, truth, args)
            evaluation.write_pr_csv(curve, out / f"pr_{name}_{which}.csv")
            if args.svg:
                evaluation.write_pr_svg(curve, out / f"pr_{name}_{which}.svg",
                                        title=f"{name} {which}")
            auprcs[which].append(evaluation.auprc(curve))

        try:
            fitres = evaluation.powerlaw_fit(_pooled_degrees(fit_rep))
            power_rows.append({
                "rep": name, "exponent": f"{fitres.exponent:.6g}",
                "r_squared": f"{fitres.r_squared:.6g}",
                "n_degrees": fitres.n_degrees,
            })
        except (AnalysisError, FileNotFoundError) as exc:
            logger.warning("power-law fit skipped for %s: %s", name, exc)
            power_rows.append({"rep": name, "exponent": "", "r_squared": "",
                               "n_degrees": 0})

    summary_rows = []
    for which in ("integrated", "separated"):
        stats = evaluation.auprc_summary(auprcs[which])
        summary_rows.append({
            "method": which, "n": stats["n"],
            "mean_auprc": f"{stats['mean']:.6g}",
            "sd": f"{stats['sd']:.6g}", "se": f"{stats['se']:.6g}",
        })
    summary_path = _write_summary(out / "auprc_summary", summary_rows,
                                  args.format,
                                  ["method", "n", "mean_auprc", "sd", "se"])
    _write_summary(out / "powerlaw", power_rows, args.format,
                   ["rep", "exponent", "r_squared", "n_degrees"])

    for row in summary_rows:
        print(f"{row['method']}: mean AUPRC {row['mean_auprc']} "
              f"(n={row['n']}, sd={row['sd']}, se={row['se']})")
    print(f"summary written to {summary_path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate}
    try:
        return handlers[args.command](args)
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
