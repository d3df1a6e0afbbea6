"""Synthetic data generation, scoring metrics, and comparison experiments.

The generator draws sites from two independent standard normals, builds the
row-standardized exponential proximity matrix, and composes the response
from a spatially varying intercept, constant-coefficient covariates,
covariates with moving-average spatial coefficients, and covariates whose
coefficients vary with their own value through a degree-10 polynomial
basis.  Estimators are scored by the RMSE and mean bias of their per-site
coefficient estimates against the generating surfaces, and of their
standard errors against the known-types model's standard errors.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError
from .geometry import build_proximity, moran_eigen, nvc_basis, row_standardize
from .model import ModelProblem, build_problem, coefficient_table, fit_types
from .selection import CostKind, McConfig, SelectionResult, mc_select, simple_select
from .terms import EffectType

log = logging.getLogger(__name__)

# largest sample for which the full proximity matrix is materialized; above
# this the moving-average products are computed in row chunks
_DENSE_DGP_LIMIT = 4000
_CHUNK = 512

MODEL_NAMES = ("lm", "svc", "snvc", "true", "select", "mc")
COEF_CLASSES = ("intercept", "constant", "svc", "nvc")


@dataclass(frozen=True)
class DgpConfig:
    n: int
    p: int = 1
    tau1: float = 0.5
    tau2: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 50:
            raise ParameterError("n must be >= 50")
        if self.p < 1:
            raise ParameterError("p must be >= 1")
        if self.tau1 < 0 or self.tau2 < 0:
            raise ParameterError("tau scales must be >= 0")


@dataclass
class SyntheticData:
    config: DgpConfig
    coords: np.ndarray
    y: np.ndarray
    x_const: np.ndarray      # (N, P) covariates with constant coefficient 1
    x_svc: np.ndarray        # (N, P) covariates with spatially varying coefficients
    x_nvc: np.ndarray        # (N, P) covariates with value-varying coefficients
    beta0: np.ndarray        # (N,) true intercept surface
    beta_svc: np.ndarray     # (N, P) true coefficients on x_svc
    beta_nvc: np.ndarray     # (N, P) true coefficients on x_nvc
    b_const: np.ndarray      # (P,) true constant coefficients (ones)

    @property
    def covariates(self) -> np.ndarray:
        return np.hstack([self.x_const, self.x_svc, self.x_nvc])

    @property
    def labels(self) -> list[str]:
        p = self.config.p
        return ([f"xc{j+1}" for j in range(p)]
                + [f"xs{j+1}" for j in range(p)]
                + [f"xn{j+1}" for j in range(p)])


def _moving_average(coords: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-standardized proximity matrix times the columns of u, chunked."""
    n = coords.shape[0]
    if n <= _DENSE_DGP_LIMIT:
        return row_standardize(build_proximity(coords)) @ u
    sq = np.sum(coords**2, axis=1)
    out = np.empty((n,) + u.shape[1:])
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        d = coords[lo:hi] @ coords.T
        d *= -2.0
        d += sq[lo:hi, None]
        d += sq[None, :]
        np.maximum(d, 0.0, out=d)
        np.sqrt(d, out=d)
        np.negative(d, out=d)
        np.exp(d, out=d)
        for i in range(lo, hi):
            d[i - lo, i] = 0.0
        out[lo:hi] = (d @ u) / d.sum(axis=1, keepdims=(u.ndim == 2))
    return out


def generate(config: DgpConfig) -> SyntheticData:
    """One draw of the synthetic data-generating process."""
    rng = np.random.default_rng(config.seed)
    n, p = config.n, config.p
    coords = rng.standard_normal((n, 2))
    x_const = rng.standard_normal((n, p))
    x_svc = rng.standard_normal((n, p))
    x_nvc = rng.standard_normal((n, p))

    # moving-average surfaces, standardized to unit variance: the raw
    # row-standardized average of iid draws has O(N^-1/2) amplitude, which
    # would make the spatial signal vanish as N grows; standardizing lets
    # tau1 set the coefficient amplitude directly at every sample size
    u = rng.standard_normal((n, 1 + p))
    ma = _moving_average(coords, u)
    ma = (ma - ma.mean(axis=0)) / ma.std(axis=0)
    beta0 = ma[:, 0]
    beta_svc = 1.0 + config.tau1 * ma[:, 1:]

    beta_nvc = np.empty((n, p))
    for j in range(p):
        basis = nvc_basis(x_nvc[:, j], l_n=10, kind="polynomial", standardize=True)
        u2 = config.tau2 * rng.standard_normal(basis.size)
        beta_nvc[:, j] = 1.0 + basis.vectors @ u2

    eps = rng.standard_normal(n)
    b_const = np.ones(p)
    y = (beta0 + x_const @ b_const + np.sum(x_svc * beta_svc, axis=1)
         + np.sum(x_nvc * beta_nvc, axis=1) + eps)
    return SyntheticData(config, coords, y, x_const, x_svc, x_nvc,
                         beta0, beta_svc, beta_nvc, b_const)


def rmse(estimates: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared error over all iterations and sites."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise InputError("estimate and truth shapes differ")
    return float(np.sqrt(np.mean((estimates - truth) ** 2)))


def bias(estimates: np.ndarray, truth: np.ndarray) -> float:
    """Mean signed error over all iterations and sites."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise InputError("estimate and truth shapes differ")
    return float(np.mean(estimates - truth))


def true_types(data: SyntheticData) -> dict[str, EffectType]:
    p = data.config.p
    types = {"intercept": EffectType.SVC}
    types.update({f"xc{j+1}": EffectType.CONSTANT for j in range(p)})
    types.update({f"xs{j+1}": EffectType.SVC for j in range(p)})
    types.update({f"xn{j+1}": EffectType.NVC for j in range(p)})
    return types


def build_synthetic_problem(
    data: SyntheticData,
    l_max: int = 200,
    nvc_kind: str = "natural_spline",
    nvc_size: int = 10,
) -> ModelProblem:
    c = build_proximity(data.coords)
    moran = moran_eigen(c, l_max=l_max)
    return build_problem(data.y, data.covariates, data.labels, moran,
                         nvc_kind=nvc_kind, nvc_size=nvc_size)


def fit_named_model(
    problem: ModelProblem,
    data: SyntheticData,
    name: str,
    cost_kind: CostKind = CostKind.BIC,
    mc: McConfig | None = None,
    maxfev: int = 200,
):
    """Fit one of the comparison models; returns (FitResult, SelectionResult|None)."""
    p = data.config.p
    labels = data.labels
    if name == "lm":
        types = {lab: EffectType.CONSTANT for lab in labels}
        types["intercept"] = EffectType.CONSTANT
        return fit_types(problem, types), None
    if name == "svc":
        types = {lab: EffectType.SVC for lab in labels}
        types["intercept"] = EffectType.SVC
        return fit_types(problem, types), None
    if name == "snvc":
        types = {lab: EffectType.SNVC for lab in labels}
        types["intercept"] = EffectType.SVC
        return fit_types(problem, types), None
    if name == "true":
        return fit_types(problem, true_types(data)), None
    if name == "select":
        sel = simple_select(problem, cost_kind, maxfev=maxfev)
        return sel.fit, sel
    if name == "mc":
        sel = mc_select(problem, cost_kind, mc or McConfig(), maxfev=maxfev)
        return sel.fit, sel
    raise ParameterError(f"unknown model {name!r}; choose from {MODEL_NAMES}")


def _class_of(label: str) -> str:
    if label == "intercept":
        return "intercept"
    return {"xc": "constant", "xs": "svc", "xn": "nvc"}[label[:2]]


def _truth_for(data: SyntheticData, label: str) -> np.ndarray:
    n = data.config.n
    if label == "intercept":
        return data.beta0
    j = int(label[2:]) - 1
    if label.startswith("xc"):
        return np.full(n, data.b_const[j])
    if label.startswith("xs"):
        return data.beta_svc[:, j]
    return data.beta_nvc[:, j]


@dataclass
class ExperimentReport:
    """Aggregated scores of one comparison experiment."""

    config: DgpConfig
    iterations: int
    models: tuple
    # model -> class -> metric value
    coef_rmse: dict = field(default_factory=dict)
    coef_bias: dict = field(default_factory=dict)
    se_rmse: dict = field(default_factory=dict)
    se_bias: dict = field(default_factory=dict)
    # model -> class -> effect-type -> selection count (selection models only)
    type_counts: dict = field(default_factory=dict)
    wall_time: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def rows(self):
        """Flat (model, class, metric, value) rows for CSV export."""
        out = []
        for name in self.models:
            for cls in COEF_CLASSES:
                for metric, store in (("rmse", self.coef_rmse),
                                      ("bias", self.coef_bias),
                                      ("se_rmse", self.se_rmse),
                                      ("se_bias", self.se_bias)):
                    if cls in store.get(name, {}):
                        out.append((name, cls, metric, store[name][cls]))
        return out


def run_experiment(
    models,
    config: DgpConfig,
    iterations: int = 50,
    l_max: int = 100,
    cost_kind: CostKind = CostKind.BIC,
    mc: McConfig | None = None,
    maxfev: int = 200,
) -> ExperimentReport:
    """Generate-fit-score loop over independent draws of the generating process.

    Standard errors are scored against those of the known-types model, which
    is fitted alongside whenever any standard-error comparison is possible.
    Individual fit failures are logged, counted, and excluded.
    """
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    models = tuple(models)
    for m in models:
        if m not in MODEL_NAMES:
            raise ParameterError(f"unknown model {m!r}")
    need_true = "true" in models or len(models) > 0
    seeds = np.random.SeedSequence(config.seed).generate_state(iterations)

    est = {m: {c: [] for c in COEF_CLASSES} for m in models}
    ses = {m: {c: [] for c in COEF_CLASSES} for m in models}
    tru = {c: [] for c in COEF_CLASSES}
    se_ref = {c: [] for c in COEF_CLASSES}
    counts = {m: {c: {t.value: 0 for t in EffectType} for c in COEF_CLASSES}
              for m in models}
    wall = {m: 0.0 for m in models}
    fails = {m: 0 for m in models}

    for it in range(iterations):
        cfg = DgpConfig(config.n, config.p, config.tau1, config.tau2,
                        int(seeds[it]))
        data = generate(cfg)
        problem = build_synthetic_problem(data, l_max=l_max)

        ref_tables = None
        if need_true:
            ref_fit, _ = fit_named_model(problem, data, "true", cost_kind,
                                         maxfev=maxfev)
            ref_tables = {t.label: t for t in
                          coefficient_table(problem, ref_fit)[0]}

        truth_this = {c: [] for c in COEF_CLASSES}
        for term in problem.terms:
            truth_this[_class_of(term.label)].append(_truth_for(data, term.label))

        for m in models:
            t0 = time.perf_counter()
            try:
                if m == "true" and ref_tables is not None:
                    tables = ref_tables
                else:
                    fit, sel = fit_named_model(problem, data, m, cost_kind,
                                               mc, maxfev)
                    tables = {t.label: t for t in
                              coefficient_table(problem, fit)[0]}
                    if sel is not None:
                        for lab, et in sel.fit.types.items():
                            counts[m][_class_of(lab)][et.value] += 1
            except Exception as exc:  # individual failures are non-fatal
                log.warning("iteration %d: model %r failed: %s", it, m, exc)
                fails[m] += 1
                continue
            finally:
                wall[m] += time.perf_counter() - t0
            for term in problem.terms:
                cls = _class_of(term.label)
                est[m][cls].append(tables[term.label].estimate)
                ses[m][cls].append(tables[term.label].se)
        for cls in COEF_CLASSES:
            tru[cls].extend(truth_this[cls])
            if ref_tables is not None:
                for term in problem.terms:
                    if _class_of(term.label) == cls:
                        se_ref[cls].append(ref_tables[term.label].se)

    report = ExperimentReport(config, iterations, models)
    for m in models:
        report.coef_rmse[m], report.coef_bias[m] = {}, {}
        report.se_rmse[m], report.se_bias[m] = {}, {}
        for cls in COEF_CLASSES:
            if not est[m][cls]:
                continue
            e = np.asarray(est[m][cls])
            # truth arrays repeat per model only when no failures occurred;
            # match lengths defensively
            t = np.asarray(tru[cls][: len(est[m][cls])])
            report.coef_rmse[m][cls] = rmse(e, t)
            report.coef_bias[m][cls] = bias(e, t)
            if se_ref[cls]:
                s = np.asarray(ses[m][cls])
                r = np.asarray(se_ref[cls][: len(ses[m][cls])])
                report.se_rmse[m][cls] = rmse(s, r)
                report.se_bias[m][cls] = bias(s, r)
        report.type_counts[m] = counts[m]
        report.wall_time[m] = wall[m]
        report.failures[m] = fails[m]
    return report


@dataclass
class TimingRow:
    n: int
    total: float
    precompute: float
    sweep: float            # post-precompute, averaged over repeats
    sweep_times: list = field(default_factory=list)


def bench_timing(
    n_values,
    p: int = 10,
    l_cap: int = 100,
    repeats: int = 5,
    seed: int = 0,
    cost_kind: CostKind = CostKind.BIC,
    maxfev: int = 200,
) -> list[TimingRow]:
    """Wall-time of basis construction plus inner products vs one selection sweep.

    The sweep never touches N-sized objects, so its time should be flat in N
    while the precompute stage grows.
    """
    if repeats < 3:
        raise ParameterError("repeats must be >= 3")
    rows = []
    for n in n_values:
        t0 = time.perf_counter()
        data = generate(DgpConfig(n=n, p=p, seed=seed))
        problem = build_synthetic_problem(data, l_max=l_cap)
        t_pre = time.perf_counter() - t0
        sweep_times = []
        for _ in range(repeats):
            t1 = time.perf_counter()
            simple_select(problem, cost_kind, max_sweeps=1, maxfev=maxfev)
            sweep_times.append(time.perf_counter() - t1)
        total = time.perf_counter() - t0
        rows.append(TimingRow(n, total, t_pre, float(np.mean(sweep_times)),
                              sweep_times))
    return rows
