"""Command-line front end: fit, select, predict, simulate.

Configuration comes from a TOML file plus flag overrides; every run with a
fixed seed emits bit-identical output files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dataio import (ColumnSchema, Dataset, ingest_csv, lag_column, load_json,
                     model_payload, predict, save_json, write_basis_csv,
                     write_coefficients_csv, write_experiment_csv,
                     write_group_effects_csv, write_predictions_csv,
                     write_timing_csv)
from .errors import ParameterError, SvcselError
from .geometry import MoranBasis, build_proximity, max_nearest_neighbor_distance, moran_eigen
from .model import build_problem, fit_types
from .selection import CostKind, McConfig, mc_select, simple_select
from .simulate import DgpConfig, bench_timing, run_experiment
from .terms import EffectType

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    schema: ColumnSchema
    proximity_range: float | None = None       # None: max nearest-neighbor distance
    l_max: int = 200
    nvc_kind: str = "natural_spline"
    nvc_size: int = 10
    candidate_types: dict = field(default_factory=dict)
    fixed_types: dict = field(default_factory=dict)      # mode "none" only
    intercept_types: list = field(default_factory=lambda: ["constant", "svc"])
    groups_included: list | None = None                  # mode "none" only; None = all
    cost: str = "bic"
    mode: str = "none"
    replicates: int = 30
    workers: int = 1
    seed: int = 0
    tol_outer: float = 1e-5
    max_sweeps: int = 30
    lag: list = field(default_factory=list)              # covariate names to lag

    def __post_init__(self):
        if self.tol_outer <= 0:
            raise ParameterError("tol_outer must be > 0")
        if self.mode not in ("none", "simple", "mc"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.mode == "mc" and self.replicates < 1:
            raise ParameterError("mc mode requires replicates >= 1")


def _types_from_names(names) -> frozenset:
    return frozenset(EffectType(n) for n in names)


def load_config(path) -> FitConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    data = raw.get("data", {})
    try:
        schema = ColumnSchema(
            site_id=data["site_id"], east=data["east"], north=data["north"],
            response=data["response"], covariates=list(data["covariates"]),
            groups=list(data.get("groups", [])), period=data.get("period"))
    except KeyError as exc:
        raise ParameterError(f"config [data] section missing key {exc.args[0]!r}")
    model = raw.get("model", {})
    sel = raw.get("selection", {})
    return FitConfig(
        schema=schema,
        proximity_range=model.get("range"),
        l_max=int(model.get("l_max", 200)),
        nvc_kind=model.get("nvc_kind", "natural_spline"),
        nvc_size=int(model.get("nvc_size", 10)),
        candidate_types=dict(model.get("types", {})),
        fixed_types=dict(model.get("fixed_types", {})),
        intercept_types=list(model.get("intercept_types", ["constant", "svc"])),
        groups_included=model.get("groups_included"),
        cost=sel.get("cost", "bic"),
        mode=sel.get("mode", "none"),
        replicates=int(sel.get("replicates", 30)),
        workers=int(sel.get("workers", 1)),
        seed=int(sel.get("seed", 0)),
        tol_outer=float(sel.get("tol_outer", 1e-5)),
        max_sweeps=int(sel.get("max_sweeps", 30)),
        lag=list(model.get("lag", [])),
    )


def prepare_problem(dataset: Dataset, cfg: FitConfig):
    """Bases, group specs, and inner products from a validated dataset.

    For panel data (repeated site ids) the spatial basis is built over the
    unique sites and replicated per row.
    """
    from .terms import GroupTermSpec

    sids, ucoords, ridx = dataset.unique_sites()
    rng_param = cfg.proximity_range
    if rng_param is None:
        rng_param = max_nearest_neighbor_distance(ucoords)
    c = build_proximity(ucoords, rng_param)
    moran_u = moran_eigen(c, l_max=cfg.l_max)
    moran = MoranBasis(moran_u.vectors[ridx], moran_u.eigenvalues, moran_u.l_max)

    cand = {lab: _types_from_names(v) for lab, v in cfg.candidate_types.items()}
    groups = [GroupTermSpec(lab, dataset.groups[lab]) for lab in dataset.groups]
    problem = build_problem(
        dataset.y, dataset.covariates, dataset.labels, moran,
        candidate_types=cand,
        intercept_candidates=_types_from_names(cfg.intercept_types),
        group_specs=groups, nvc_kind=cfg.nvc_kind, nvc_size=cfg.nvc_size)
    return problem, {"range": rng_param, "l": moran_u.size, "sites": len(sids)}


def run_fit(dataset: Dataset, cfg: FitConfig):
    """Fit or select per configured mode; returns (problem, result, selection, meta)."""
    t0 = time.perf_counter()
    problem, meta = prepare_problem(dataset, cfg)
    meta["precompute_s"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    cost_kind = CostKind(cfg.cost)
    selection = None
    if cfg.mode == "none":
        types = {lab: EffectType(t) for lab, t in cfg.fixed_types.items()}
        wanted = cfg.groups_included
        groups_in = {g.label: (wanted is None or g.label in wanted)
                     for g in problem.group_terms}
        result = fit_types(problem, types, groups_in,
                           tol=cfg.tol_outer, max_sweeps=cfg.max_sweeps)
    elif cfg.mode == "simple":
        selection = simple_select(problem, cost_kind,
                                  tol_outer=cfg.tol_outer,
                                  max_sweeps=cfg.max_sweeps)
        result = selection.fit
    else:
        mc = McConfig(cfg.replicates, cfg.seed, cfg.workers)
        selection = mc_select(problem, cost_kind, mc,
                              tol_outer=cfg.tol_outer,
                              max_sweeps=cfg.max_sweeps)
        result = selection.fit
    meta["fit_s"] = time.perf_counter() - t1
    return problem, result, selection, meta


def _selection_report(selection, cfg) -> dict:
    # wall times are printed, not stored: output files stay bit-identical
    # across repeated seeded runs
    rep = {
        "mode": cfg.mode,
        "cost_kind": selection.cost_kind.value,
        "cost": selection.cost,
        "q": selection.q,
        "types": {k: v.value for k, v in selection.fit.types.items()},
        "groups_included": selection.fit.groups_included,
        "trace": [float(c) for c in selection.trace],
        "sweeps": selection.sweeps,
        "converged": selection.converged,
        "seed": cfg.seed,
    }
    if selection.run_costs:
        rep["run_costs"] = [float(c) for c in selection.run_costs]
        rep["chosen_run"] = selection.chosen_run
    return rep


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    for flag in ("mode", "cost", "seed", "replicates", "workers"):
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, flag, val)
    workers_env = os.environ.get("SVCSEL_WORKERS")
    if workers_env:
        cfg.workers = int(workers_env)

    dataset = ingest_csv(args.data, cfg.schema)
    for col in cfg.lag:
        lag_column(dataset, col)
    problem, result, selection, meta = run_fit(dataset, cfg)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = model_payload(problem, result, dataset, seed=cfg.seed,
                            extra={"proximity_range": meta["range"],
                                   "l": meta["l"],
                                   "nvc_kind": cfg.nvc_kind,
                                   "nvc_size": cfg.nvc_size,
                                   "cost_kind": cfg.cost,
                                   "mode": cfg.mode})
    save_json(out / "model.json", payload)
    write_coefficients_csv(out / "coefficients.csv", problem, result,
                           [str(s) for s in dataset.site_id])
    write_group_effects_csv(out / "group_effects.csv", problem, result)
    if args.export_basis:
        write_basis_csv(out / "basis.csv", problem.moran.vectors)
    if selection is not None:
        save_json(out / "selection_report.json",
                  _selection_report(selection, cfg))
    print(f"model written to {out / 'model.json'}"
          f" (loglik {result.loglik:.4f}, sigma2 {result.sigma2:.4f},"
          f" precompute {meta['precompute_s']:.2f}s, fit {meta['fit_s']:.2f}s)")
    if not result.converged and not args.allow_nonconverged:
        print("fit did not converge (use --allow-nonconverged to accept)",
              file=sys.stderr)
        return 2
    return 0


def cmd_predict(args) -> int:
    payload = load_json(args.model)
    if payload.get("format") != "svcsel-model":
        raise ParameterError(f"{args.model} is not a model file")
    import csv as _csv

    with open(args.request, newline="", encoding="utf-8") as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        raise ParameterError("empty prediction request")
    site_ids = [r["site_id"] for r in rows]
    cov_labels = [t["label"] for t in payload["terms"] if not t["is_intercept"]]
    covariates = {}
    for lab in cov_labels:
        if lab not in rows[0]:
            raise ParameterError(f"request is missing covariate column {lab!r}")
        covariates[lab] = np.array([float(r[lab]) for r in rows])
    group_levels = {}
    for grp in payload["groups"]:
        if grp["included"]:
            lab = grp["label"]
            if lab not in rows[0]:
                raise ParameterError(f"request is missing group column {lab!r}")
            group_levels[lab] = [r[lab] for r in rows]

    yhat, unseen = predict(payload, site_ids, covariates, group_levels)
    write_predictions_csv(args.out, site_ids, yhat)
    for lab, lev in unseen:
        print(f"note: group {lab!r} level {lev!r} unseen in training,"
              f" contributes 0", file=sys.stderr)
    print(f"predictions written to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.timing:
        n_values = [int(v) for v in args.n_values.split(",")]
        rows = bench_timing(n_values, p=args.p, l_cap=args.l_cap,
                            repeats=args.repeats, seed=args.seed,
                            cost_kind=CostKind(args.cost))
        write_timing_csv(out / "timing.csv", rows)
        for r in rows:
            print(f"N={r.n}: total {r.total:.2f}s, precompute {r.precompute:.2f}s,"
                  f" sweep {r.sweep:.3f}s")
        return 0

    models = tuple(args.models.split(","))
    cfg = DgpConfig(n=args.n, p=args.p, tau1=args.tau1, tau2=args.tau2,
                    seed=args.seed)
    report = run_experiment(models, cfg, iterations=args.iterations,
                            l_max=args.l_max, cost_kind=CostKind(args.cost),
                            mc=McConfig(args.replicates, args.seed, args.workers))
    write_experiment_csv(out / "experiment.csv", report)
    # wall times are printed, not stored, so seeded runs stay byte-identical
    save_json(out / "experiment_summary.json", {
        "config": {"n": cfg.n, "p": cfg.p, "tau1": cfg.tau1, "tau2": cfg.tau2,
                   "seed": cfg.seed},
        "iterations": report.iterations,
        "models": list(report.models),
        "type_counts": report.type_counts,
        "failures": report.failures,
    })
    for name, secs in report.wall_time.items():
        print(f"{name}: {secs:.2f}s over {report.iterations} iterations")
    for name, cls, metric, value in report.rows():
        print(f"{name:8s} {cls:9s} {metric:8s} {value:.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svcsel",
        description="Spatial additive mixed models with selectable coefficient types")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def fit_like(name, default_mode):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True)
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir", default="svcsel_out")
        p.add_argument("--mode", choices=["none", "simple", "mc"],
                       default=default_mode)
        p.add_argument("--cost", choices=["bic", "aic"], default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--allow-nonconverged", action="store_true")
        p.add_argument("--export-basis", action="store_true")
        p.set_defaults(func=cmd_fit)
        return p

    fit_like("fit", None)          # mode from config (default "none")
    fit_like("select", "simple")

    p = sub.add_parser("predict")
    p.add_argument("--model", required=True)
    p.add_argument("--request", required=True)
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--tau1", type=float, default=0.5)
    p.add_argument("--tau2", type=float, default=0.5)
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--models", default="lm,svc,snvc,true,select")
    p.add_argument("--l-max", type=int, default=100)
    p.add_argument("--cost", choices=["bic", "aic"], default="bic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicates", type=int, default=30)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="svcsel_out")
    p.add_argument("--timing", action="store_true")
    p.add_argument("--n-values", default="1000,10000")
    p.add_argument("--l-cap", type=int, default=100)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SvcselError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
