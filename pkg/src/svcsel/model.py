"""Assembly of a fitting problem and fixed-specification model fits.

A ``ModelProblem`` bundles the response, the fixed-effect design (one column
per covariate plus the intercept), the candidate random blocks built from
the spatial and covariate bases, and the precomputed inner products.  Both
the selection sweeps and the no-selection model fits operate on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import norm

from . import reml
from .errors import InputError, ParameterError
from .geometry import MoranBasis, NvcBasis, nvc_basis
from .reml import ActiveSet, InnerProducts, RandomBlock
from .terms import ALL_TYPES, INTERCEPT_TYPES, EffectType, GroupTermSpec

FIT_TOL = 1e-5
FIT_MAX_SWEEPS = 30


@dataclass
class ModelTerm:
    """One covariate (or the intercept) and its candidate coefficient types."""

    label: str
    x: np.ndarray
    fixed_col: int
    candidates: frozenset
    is_intercept: bool = False
    spatial_block: int | None = None
    nonspatial_block: int | None = None
    nvc: NvcBasis | None = None


@dataclass
class GroupTerm:
    label: str
    spec: GroupTermSpec
    block: int


@dataclass
class ModelProblem:
    y: np.ndarray
    x: np.ndarray                 # (N, K) fixed-effect design
    terms: list[ModelTerm]
    group_terms: list[GroupTerm]
    blocks: list[RandomBlock]
    moran: MoranBasis
    ip: InnerProducts

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    def block_n_params(self, bi: int) -> int:
        return self.blocks[bi].n_params


def build_problem(
    y: np.ndarray,
    covariates: np.ndarray,
    labels: list[str],
    moran: MoranBasis,
    candidate_types: dict[str, frozenset] | None = None,
    intercept_candidates: frozenset = INTERCEPT_TYPES,
    group_specs: list[GroupTermSpec] | None = None,
    nvc_kind: str = "natural_spline",
    nvc_size: int = 10,
) -> ModelProblem:
    """Assemble terms, random blocks, and inner products for one dataset.

    The fixed-effect design is [1, covariates].  Every term whose candidate
    set admits a spatial part gets an x-weighted copy of the Moran basis as
    a block; NVC-capable terms additionally get an x-weighted covariate
    basis.  Group specs become indicator blocks.
    """
    y = np.asarray(y, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    n = y.shape[0]
    if covariates.ndim != 2 or covariates.shape[0] != n:
        raise InputError("covariate matrix rows must match the response")
    p = covariates.shape[1]
    if len(labels) != p:
        raise InputError("one label per covariate column required")
    candidate_types = candidate_types or {}

    x = np.hstack([np.ones((n, 1)), covariates])
    terms: list[ModelTerm] = []
    blocks: list[RandomBlock] = []
    designs: list[np.ndarray] = []

    def add_block(block: RandomBlock) -> int:
        blocks.append(block)
        designs.append(block.design)
        return len(blocks) - 1

    has_spatial = moran.size > 0

    intercept = ModelTerm("intercept", np.ones(n), 0,
                          frozenset(intercept_candidates), is_intercept=True)
    if has_spatial and EffectType.SVC in intercept.candidates:
        intercept.spatial_block = add_block(RandomBlock(
            "intercept:s", "spatial", moran.vectors.copy(),
            scaled_eigenvalues=moran.scaled_eigenvalues))
    terms.append(intercept)

    for j in range(p):
        label = labels[j]
        cands = frozenset(candidate_types.get(label, ALL_TYPES))
        if EffectType.CONSTANT not in cands:
            raise ParameterError(f"term {label!r}: constant must remain a candidate")
        xj = covariates[:, j]
        term = ModelTerm(label, xj, j + 1, cands)
        if has_spatial and (cands & {EffectType.SVC, EffectType.SNVC}):
            term.spatial_block = add_block(RandomBlock(
                f"{label}:s", "spatial", xj[:, None] * moran.vectors,
                scaled_eigenvalues=moran.scaled_eigenvalues))
        if cands & {EffectType.NVC, EffectType.SNVC}:
            term.nvc = nvc_basis(xj, l_n=nvc_size, kind=nvc_kind, covariate_index=j)
            term.nonspatial_block = add_block(RandomBlock(
                f"{label}:n", "nonspatial", xj[:, None] * term.nvc.vectors))
        terms.append(term)

    group_terms: list[GroupTerm] = []
    for spec in group_specs or []:
        bi = add_block(RandomBlock(f"group:{spec.name}", "group", spec.indicator()))
        group_terms.append(GroupTerm(spec.name, spec, bi))

    ip = reml.precompute(y, x, designs)
    return ModelProblem(y, x, terms, group_terms, blocks, moran, ip)


@dataclass
class FitResult:
    """A fitted model: chosen types, variance parameters, and coefficients."""

    types: dict[str, EffectType]
    groups_included: dict[str, bool]
    active: ActiveSet = field(default_factory=list)
    params: dict[int, np.ndarray] = field(default_factory=dict)
    b: np.ndarray | None = None
    u: list[np.ndarray] = field(default_factory=list)
    sigma2: float = float("nan")
    resid_norm2: float = float("nan")
    loglik: float = float("nan")
    converged: bool = True


def _finalize(problem: ModelProblem, active: ActiveSet, params: dict[int, np.ndarray],
              types: dict[str, EffectType], groups: dict[str, bool],
              converged: bool = True) -> FitResult:
    state = reml.solve_effects(problem.ip, active)
    return FitResult(types, groups, active, params, state.b, state.u,
                     state.sigma2, state.resid_norm2, state.loglik, converged)


def term_type(term: ModelTerm, active_ids: set[int]) -> EffectType:
    spatial = term.spatial_block is not None and term.spatial_block in active_ids
    nonspatial = term.nonspatial_block is not None and term.nonspatial_block in active_ids
    if spatial and nonspatial:
        return EffectType.SNVC
    if spatial:
        return EffectType.SVC
    if nonspatial:
        return EffectType.NVC
    return EffectType.CONSTANT


def fit_types(
    problem: ModelProblem,
    types: dict[str, EffectType],
    groups_included: dict[str, bool] | None = None,
    tol: float = FIT_TOL,
    max_sweeps: int = FIT_MAX_SWEEPS,
) -> FitResult:
    """Fit a model with fixed coefficient types by cyclic per-block updates.

    Each block's variance parameters are re-optimized in turn with the others
    held fixed until the restricted likelihood converges.  No blocks are
    added or dropped.
    """
    groups_included = groups_included or {}
    wanted: list[int] = []
    for term in problem.terms:
        t = types.get(term.label, EffectType.CONSTANT)
        if t.has_spatial:
            if term.spatial_block is None:
                raise ParameterError(f"term {term.label!r} has no spatial basis")
            wanted.append(term.spatial_block)
        if t.has_nonspatial:
            if term.nonspatial_block is None:
                raise ParameterError(f"term {term.label!r} has no covariate basis")
            wanted.append(term.nonspatial_block)
    for gt in problem.group_terms:
        if groups_included.get(gt.label, False):
            wanted.append(gt.block)

    params: dict[int, np.ndarray] = {}
    active: ActiveSet = []
    if not wanted:
        return _finalize(problem, [], {}, dict(types), dict(groups_included))

    loglik = None
    converged = False
    for _ in range(max_sweeps):
        for bi in wanted:
            opt = reml.optimize_effect(problem.ip, problem.blocks, active, bi,
                                       start=params.get(bi))
            params[bi] = opt.params
            active = [(i, v) for i, v in active if i != bi] + [(bi, opt.v)]
            loglik_new = opt.loglik
        if loglik is not None and abs(loglik_new - loglik) <= tol * (1 + abs(loglik)):
            converged = True
            loglik = loglik_new
            break
        loglik = loglik_new
    active.sort(key=lambda t: t[0])
    return _finalize(problem, active, params, dict(types), dict(groups_included),
                     converged)


def fitted_values(problem: ModelProblem, result: FitResult) -> np.ndarray:
    """In-sample predictions X b + sum_j D_j (v_j * u_j), noise excluded."""
    yhat = problem.x @ result.b
    for (bi, v), u in zip(result.active, result.u):
        yhat = yhat + problem.blocks[bi].design @ (v * u)
    return yhat


@dataclass
class TermCoefficients:
    """Per-site coefficient estimates for one term."""

    label: str
    effect_type: EffectType
    estimate: np.ndarray   # (N,)
    se: np.ndarray         # (N,)
    t: np.ndarray
    p_value: np.ndarray


@dataclass
class GroupEffects:
    label: str
    included: bool
    levels: np.ndarray
    estimate: np.ndarray
    se: np.ndarray


def coefficient_table(
    problem: ModelProblem,
    result: FitResult,
) -> tuple[list[TermCoefficients], list[GroupEffects]]:
    """Per-site coefficient estimates, standard errors, and t-values.

    The coefficient of term p at site i is b_p plus the basis row at i
    weighted by the variance profile and the block's random coefficients.
    Standard errors propagate the conditional posterior covariance
    sigma^2 P^{-1} of the stacked coefficients through that linear map.
    """
    if result.b is None or not np.isfinite(result.loglik):
        raise ParameterError("coefficient table requires a converged fit")
    p, rhs, _, _, bounds = reml._assemble(problem.ip, result.active)
    cf = reml._chol(p)
    pinv = scipy.linalg.cho_solve(cf, np.eye(p.shape[0]))
    theta = scipy.linalg.cho_solve(cf, rhs)
    sigma2 = result.sigma2
    k = problem.ip.k
    pos_of_block = {bi: bounds[j] for j, (bi, _) in enumerate(result.active)}
    v_of_block = dict(result.active)
    active_ids = set(v_of_block)
    n = problem.n

    tables: list[TermCoefficients] = []
    for term in problem.terms:
        etype = term_type(term, active_ids)
        zcols = [np.ones((n, 1))]
        idx = [term.fixed_col]
        if etype.has_spatial:
            bi = term.spatial_block
            zcols.append(problem.moran.vectors * v_of_block[bi][None, :])
            idx.extend(range(pos_of_block[bi].start, pos_of_block[bi].stop))
        if etype.has_nonspatial:
            bi = term.nonspatial_block
            zcols.append(term.nvc.vectors * v_of_block[bi][None, :])
            idx.extend(range(pos_of_block[bi].start, pos_of_block[bi].stop))
        z = np.hstack(zcols)
        idx = np.asarray(idx)
        estimate = z @ theta[idx]
        s = pinv[np.ix_(idx, idx)]
        var = sigma2 * np.einsum("ij,jk,ik->i", z, s, z)
        se = np.sqrt(np.maximum(var, 0.0))
        t = np.divide(estimate, se, out=np.zeros_like(estimate), where=se > 0)
        pv = 2.0 * norm.sf(np.abs(t))
        tables.append(TermCoefficients(term.label, etype, estimate, se, t, pv))

    groups: list[GroupEffects] = []
    for gt in problem.group_terms:
        included = gt.block in active_ids
        if included:
            sl = pos_of_block[gt.block]
            v = v_of_block[gt.block]
            est = v * theta[sl]
            se = np.sqrt(np.maximum(sigma2 * v**2 * np.diag(pinv)[sl.start:sl.stop], 0.0))
        else:
            est = np.zeros(gt.spec.n_levels)
            se = np.zeros(gt.spec.n_levels)
        groups.append(GroupEffects(gt.label, included, gt.spec.levels, est, se))
    return tables, groups
