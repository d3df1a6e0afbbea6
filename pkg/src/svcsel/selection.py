"""Cost-based selection of coefficient types and group effects.

The simple method sweeps the terms in a given order; for each term it tries
the spatial random part, keeps it only if the cost (BIC or AIC) improves,
then does the same for the non-spatial part, and likewise toggles each group
effect.  Sweeps repeat until the cost converges.  The Monte Carlo method
repeats the whole sweep over randomly permuted term orders and keeps the
cheapest model found.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import reml
from .errors import ParameterError, SvcselError
from .model import FitResult, ModelProblem, _finalize, term_type
from .terms import EffectType

log = logging.getLogger(__name__)

TOL_ACCEPT = 1e-6
TOL_OUTER = 1e-5
MAX_SWEEPS = 30


class CostKind(enum.Enum):
    BIC = "bic"
    AIC = "aic"


def count_params(problem: ModelProblem, active: reml.ActiveSet) -> int:
    """Fixed coefficients plus variance parameters of the active blocks."""
    return problem.k + sum(problem.blocks[bi].n_params for bi, _ in active)


def cost(loglik: float, q: int, n: int, kind: CostKind) -> float:
    """Information-criterion cost: lower is better."""
    if kind is CostKind.BIC:
        return -2.0 * loglik + q * math.log(n)
    if kind is CostKind.AIC:
        return -2.0 * loglik + 2.0 * q
    raise ParameterError(f"unknown cost kind {kind!r}")


@dataclass
class SelectionResult:
    fit: FitResult
    cost: float
    cost_kind: CostKind
    q: int
    trace: list = field(default_factory=list)   # cost after each accepted step
    sweeps: int = 0
    order: np.ndarray | None = None
    converged: bool = True
    run_costs: list = field(default_factory=list)    # MC mode only
    chosen_run: int | None = None


def _units(problem: ModelProblem) -> list:
    """Sweep units: one per term, then one per group effect."""
    return [("term", t) for t in problem.terms] + \
           [("group", g) for g in problem.group_terms]


def _try_block(problem, active, params, bi, kind, current_cost, trace, maxfev):
    """Optimize block ``bi`` and keep it only if the cost improves.

    Returns the updated (active, params, cost).  Ties within the acceptance
    tolerance keep the simpler model (block dropped).
    """
    start = params.get(bi)
    opt = reml.optimize_effect(problem.ip, problem.blocks, active, bi,
                               start=start, maxfev=maxfev)
    others = [(i, v) for i, v in active if i != bi]
    q_without = count_params(problem, others)
    q_with = q_without + problem.blocks[bi].n_params
    c_with = cost(opt.loglik, q_with, problem.n, kind)
    c_without = cost(opt.loglik_dropped, q_without, problem.n, kind)
    if c_with < c_without - TOL_ACCEPT:
        active = others + [(bi, opt.v)]
        params = {**params, bi: opt.params}
        new_cost = c_with
    else:
        active = others
        params = {i: p for i, p in params.items() if i != bi}
        new_cost = c_without
    log.debug("block %s: loglik %.6f kept=%s cost %.6f",
              problem.blocks[bi].label, opt.loglik,
              new_cost == c_with, new_cost)
    trace.append(new_cost)
    return active, params, new_cost


def _sweep_once(problem, active, params, order, kind, trace, maxfev):
    units = _units(problem)
    current = None
    for ui in order:
        what, obj = units[ui]
        if what == "term":
            for bi in (obj.spatial_block, obj.nonspatial_block):
                if bi is None:
                    continue
                active, params, current = _try_block(
                    problem, active, params, bi, kind, current, trace, maxfev)
        else:
            active, params, current = _try_block(
                problem, active, params, obj.block, kind, current, trace, maxfev)
    return active, params, current


def simple_select(
    problem: ModelProblem,
    cost_kind: CostKind = CostKind.BIC,
    order: np.ndarray | None = None,
    tol_outer: float = TOL_OUTER,
    max_sweeps: int = MAX_SWEEPS,
    maxfev: int = reml.OPT_MAXFEV,
) -> SelectionResult:
    """Sequential selection over terms in a fixed order.

    Every accepted transition strictly improves the cost; the sweep repeats
    until the cost change falls below ``tol_outer`` (relative) or
    ``max_sweeps`` is hit, in which case the best state found is returned
    flagged as not converged.
    """
    units = _units(problem)
    if order is None:
        order = np.arange(len(units))
    else:
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(len(units))):
            raise ParameterError("order must be a permutation of the sweep units")

    active: reml.ActiveSet = []
    params: dict[int, np.ndarray] = {}
    trace: list[float] = []
    prev_cost = None
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        active, params, cur = _sweep_once(problem, active, params, order,
                                          cost_kind, trace, maxfev)
        if prev_cost is not None and abs(cur - prev_cost) <= tol_outer * (1 + abs(cur)):
            converged = True
            break
        prev_cost = cur

    active.sort(key=lambda t: t[0])
    active_ids = {bi for bi, _ in active}
    types = {t.label: term_type(t, active_ids) for t in problem.terms}
    groups = {g.label: g.block in active_ids for g in problem.group_terms}
    fit = _finalize(problem, active, params, types, groups, converged)
    q = count_params(problem, active)
    final_cost = cost(fit.loglik, q, problem.n, cost_kind)
    return SelectionResult(fit, final_cost, cost_kind, q, trace, sweeps,
                           order, converged)


@dataclass
class McConfig:
    """Monte Carlo selection settings."""

    replicates: int = 30
    seed: int = 0
    workers: int = 1
    include_identity: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise ParameterError("replicates must be >= 1")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")


def mc_select(
    problem: ModelProblem,
    cost_kind: CostKind = CostKind.BIC,
    mc: McConfig | None = None,
    tol_outer: float = TOL_OUTER,
    max_sweeps: int = MAX_SWEEPS,
    maxfev: int = reml.OPT_MAXFEV,
) -> SelectionResult:
    """Best-of-G selection over randomly permuted sweep orders.

    All runs share the one precomputed set of inner products.  The result is
    fully determined by the seed; a failed run is logged and skipped.
    """
    mc = mc or McConfig()
    n_units = len(_units(problem))
    rng = np.random.default_rng(mc.seed)
    orders = [rng.permutation(n_units) for _ in range(mc.replicates)]
    if mc.include_identity:
        orders[0] = np.arange(n_units)

    def run(order):
        try:
            return simple_select(problem, cost_kind, order, tol_outer,
                                 max_sweeps, maxfev)
        except SvcselError as exc:
            log.warning("selection run failed and was skipped: %s", exc)
            return None

    if mc.workers > 1:
        with ThreadPoolExecutor(max_workers=mc.workers) as pool:
            results = list(pool.map(run, orders))
    else:
        results = [run(o) for o in orders]

    run_costs = [r.cost if r is not None else float("nan") for r in results]
    ok = [(i, r) for i, r in enumerate(results) if r is not None]
    if not ok:
        raise SvcselError("every Monte Carlo selection run failed")
    best_i, best = min(ok, key=lambda ir: ir[1].cost)
    return SelectionResult(best.fit, best.cost, cost_kind, best.q, best.trace,
                           best.sweeps, best.order, best.converged,
                           run_costs, best_i)
