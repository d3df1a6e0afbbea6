"""CSV ingestion, model persistence, and result export.

The model file is self-contained JSON: it embeds per-site spatial
coefficient components and the covariate-basis definitions (knots, centering
offsets, weights), so prediction at observed sites needs no access to the
training data.  All numeric CSV output uses 17 significant digits so values
round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .geometry import NvcBasis
from .model import FitResult, ModelProblem, coefficient_table
from .terms import EffectType

FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


@dataclass
class ColumnSchema:
    """Mapping from dataset roles to CSV column names."""

    site_id: str
    east: str
    north: str
    response: str
    covariates: list[str]
    groups: list[str] = field(default_factory=list)
    period: str | None = None


@dataclass
class Dataset:
    site_id: np.ndarray          # (N,) strings
    coords: np.ndarray           # (N, 2)
    y: np.ndarray
    covariates: np.ndarray       # (N, P)
    labels: list[str]
    groups: dict[str, np.ndarray] = field(default_factory=dict)   # label -> (N,) strings
    period: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def unique_sites(self):
        """Unique site ids in first-appearance order, their coords, and the
        per-row index into them.  Rows sharing a site id must agree on
        coordinates."""
        order: dict[str, int] = {}
        idx = np.empty(self.n, dtype=int)
        coords = []
        for i, sid in enumerate(self.site_id):
            if sid not in order:
                order[sid] = len(coords)
                coords.append(self.coords[i])
            else:
                if not np.array_equal(self.coords[i], coords[order[sid]]):
                    raise InputError(
                        f"site id {sid!r}: conflicting coordinates across rows")
            idx[i] = order[sid]
        return np.asarray(list(order), dtype=object), np.asarray(coords), idx


def _parse_float(value: str, row: int, col: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise InputError(f"row {row}, column {col!r}: non-numeric value {value!r}")
    if not np.isfinite(out):
        raise InputError(f"row {row}, column {col!r}: non-finite value")
    return out


def ingest_csv(path, schema: ColumnSchema) -> Dataset:
    """Read and validate a dataset; errors name the offending row and column.

    Rows are kept in file order.  Duplicate site ids are allowed only across
    distinct periods (panel data).
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = ([schema.site_id, schema.east, schema.north, schema.response]
                  + schema.covariates + schema.groups
                  + ([schema.period] if schema.period else []))
        for col in needed:
            if col not in header:
                raise InputError(f"missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise InputError("empty dataset")

    n = len(rows)
    site_id = np.empty(n, dtype=object)
    coords = np.empty((n, 2))
    y = np.empty(n)
    covs = np.empty((n, len(schema.covariates)))
    groups = {g: np.empty(n, dtype=object) for g in schema.groups}
    period = np.empty(n, dtype=object) if schema.period else None

    seen: set[tuple] = set()
    for i, row in enumerate(rows):
        rowno = i + 2  # header is line 1
        site_id[i] = row[schema.site_id]
        coords[i, 0] = _parse_float(row[schema.east], rowno, schema.east)
        coords[i, 1] = _parse_float(row[schema.north], rowno, schema.north)
        y[i] = _parse_float(row[schema.response], rowno, schema.response)
        for j, c in enumerate(schema.covariates):
            covs[i, j] = _parse_float(row[c], rowno, c)
        for g in schema.groups:
            groups[g][i] = row[g]
        per = row[schema.period] if schema.period else ""
        if period is not None:
            period[i] = per
        key = (site_id[i], per)
        if key in seen:
            raise InputError(
                f"row {rowno}: duplicate site id {site_id[i]!r} within one period")
        seen.add(key)
    return Dataset(site_id, coords, y, covs, list(schema.covariates),
                   groups, period)


def lag_column(data: Dataset, column: str, new_label: str | None = None) -> None:
    """Append a one-period lag of a covariate, computed within each site.

    Periods are ordered by their sorted distinct values.  First-period rows
    get 0 (no predecessor).
    """
    if data.period is None:
        raise InputError("lagging requires a period column")
    if column not in data.labels:
        raise InputError(f"unknown covariate {column!r}")
    j = data.labels.index(column)
    periods = sorted(set(data.period))
    prank = {p: r for r, p in enumerate(periods)}
    value = {}
    for i in range(data.n):
        value[(data.site_id[i], prank[data.period[i]])] = data.covariates[i, j]
    lagged = np.zeros(data.n)
    for i in range(data.n):
        lagged[i] = value.get((data.site_id[i], prank[data.period[i]] - 1), 0.0)
    data.covariates = np.column_stack([data.covariates, lagged])
    data.labels.append(new_label or f"{column}_lag1")


# ---------------------------------------------------------------------------
# model persistence


def _nvc_payload(nvc: NvcBasis, weights: np.ndarray) -> dict:
    return {
        "kind": nvc.kind,
        "knots": nvc.knots.tolist(),
        "col_means": nvc.col_means.tolist(),
        "weights": weights.tolist(),
    }


def model_payload(
    problem: ModelProblem,
    result: FitResult,
    dataset: Dataset | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> dict:
    """Self-contained JSON-ready description of a fitted model."""
    tables, group_tables = coefficient_table(problem, result)
    v_of = dict(result.active)
    u_of = {bi: u for (bi, _), u in zip(result.active, result.u)}
    if dataset is not None:
        sids, _, row_site = dataset.unique_sites()
        first_row = np.full(len(sids), -1, dtype=int)
        for i in range(dataset.n - 1, -1, -1):
            first_row[row_site[i]] = i
    else:
        sids = np.array([str(i) for i in range(problem.n)], dtype=object)
        first_row = np.arange(problem.n)

    terms = []
    for term, table in zip(problem.terms, tables):
        entry: dict = {
            "label": term.label,
            "type": table.effect_type.value,
            "b": float(result.b[term.fixed_col]),
            "is_intercept": term.is_intercept,
        }
        if table.effect_type.has_spatial:
            bi = term.spatial_block
            spatial_full = problem.moran.vectors @ (v_of[bi] * u_of[bi])
            entry["spatial_by_site"] = spatial_full[first_row].tolist()
            entry["params_spatial"] = result.params[bi].tolist()
        if table.effect_type.has_nonspatial:
            bi = term.nonspatial_block
            entry["nvc"] = _nvc_payload(term.nvc, v_of[bi] * u_of[bi])
            entry["params_nonspatial"] = result.params[bi].tolist()
        terms.append(entry)

    groups = []
    for gt, table in zip(problem.group_terms, group_tables):
        groups.append({
            "label": gt.label,
            "included": bool(table.included),
            "levels": [str(v) for v in table.levels],
            "effects": table.estimate.tolist(),
        })

    payload = {
        "format": "svcsel-model",
        "version": 1,
        "site_ids": [str(s) for s in sids],
        "terms": terms,
        "groups": groups,
        "sigma2": float(result.sigma2),
        "loglik": float(result.loglik),
        "converged": bool(result.converged),
        "seed": seed,
    }
    if extra:
        payload.update(extra)
    return payload


def save_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def predict(payload: dict, site_ids, covariates: dict[str, np.ndarray],
            group_levels: dict[str, list] | None = None):
    """Predictions at observed sites from a saved model.

    y_hat = sum over terms of coefficient(site, x_new) * x_new, plus the
    stored group effects for the requested levels.  Group levels unseen in
    training contribute zero and are reported back.
    """
    group_levels = group_levels or {}
    site_index = {s: i for i, s in enumerate(payload["site_ids"])}
    rows = len(site_ids)
    try:
        ridx = np.array([site_index[str(s)] for s in site_ids])
    except KeyError as exc:
        raise InputError(f"unknown site id {exc.args[0]!r}") from None

    yhat = np.zeros(rows)
    for term in payload["terms"]:
        label = term["label"]
        if term["is_intercept"]:
            xv = np.ones(rows)
        else:
            if label not in covariates:
                raise InputError(f"missing covariate {label!r} in request")
            xv = np.asarray(covariates[label], dtype=float)
        f = np.full(rows, term["b"])
        if "spatial_by_site" in term:
            f = f + np.asarray(term["spatial_by_site"])[ridx]
        if "nvc" in term:
            nv = term["nvc"]
            basis = NvcBasis(np.empty((0, len(nv["col_means"]))), nv["kind"],
                             np.asarray(nv["col_means"]),
                             np.asarray(nv["knots"]))
            f = f + basis.evaluate(xv) @ np.asarray(nv["weights"])
        yhat += f * xv

    unseen = []
    for grp in payload["groups"]:
        if not grp["included"]:
            continue
        label = grp["label"]
        if label not in group_levels:
            raise InputError(f"missing group levels for {label!r} in request")
        effect = dict(zip(grp["levels"], grp["effects"]))
        req = [str(v) for v in group_levels[label]]
        for i, lev in enumerate(req):
            if lev in effect:
                yhat[i] += effect[lev]
            else:
                unseen.append((label, lev))
    return yhat, sorted(set(unseen))


# ---------------------------------------------------------------------------
# tabular exports


def write_coefficients_csv(path, problem: ModelProblem, result: FitResult,
                           site_ids=None) -> None:
    tables, _ = coefficient_table(problem, result)
    if site_ids is None:
        site_ids = [str(i) for i in range(problem.n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["term", "type", "site_id", "estimate", "se", "t", "p_value"])
        for t in tables:
            for i in range(problem.n):
                w.writerow([t.label, t.effect_type.value, site_ids[i],
                            _fmt(t.estimate[i]), _fmt(t.se[i]),
                            _fmt(t.t[i]), _fmt(t.p_value[i])])


def write_group_effects_csv(path, problem: ModelProblem, result: FitResult) -> None:
    _, groups = coefficient_table(problem, result)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "included", "level", "estimate", "se"])
        for g in groups:
            for lev, est, se in zip(g.levels, g.estimate, g.se):
                w.writerow([g.label, int(g.included), lev, _fmt(est), _fmt(se)])


def write_basis_csv(path, vectors: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"e{j+1}" for j in range(vectors.shape[1])])
        for row in vectors:
            w.writerow([_fmt(v) for v in row])


def write_predictions_csv(path, site_ids, yhat: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "prediction"])
        for s, v in zip(site_ids, yhat):
            w.writerow([s, _fmt(v)])


def write_experiment_csv(path, report) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "class", "metric", "value"])
        for row in report.rows():
            w.writerow([row[0], row[1], row[2], _fmt(row[3])])


def write_timing_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "total_s", "precompute_s", "sweep_mean_s"])
        for r in rows:
            w.writerow([r.n, _fmt(r.total), _fmt(r.precompute), _fmt(r.sweep)])
