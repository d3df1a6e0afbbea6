"""Restricted-likelihood machinery for the low-rank additive mixed model.

The model is y = X b + sum_j D_j V_j u_j + eps with u_j, eps ~ N(0, sigma^2 I),
where each random block j has a fixed design D_j (N x L_j) and a diagonal
variance profile V_j that depends on a handful of parameters.  Profiling out
sigma^2 leaves a restricted log-likelihood that depends on the data only
through the Gram matrix of [X, D_1, ..., D_B] and its products with y.
``precompute`` builds those inner products once; every later likelihood
evaluation, solve, and per-block optimization is free of N-sized objects.

Two evaluation paths are provided: ``loglik_direct`` works on the raw
N-dimensional data and serves as the testing oracle; ``loglik_fast`` is the
inner-product path used everywhere else.  ``BlockContext`` factors out the
parts of the bordered system that do not depend on one chosen block, so
re-evaluating the likelihood while tuning that block's parameters costs
O(L_j^3) regardless of how many other blocks are active.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import InputError, NumericalError, ParameterError
from .terms import ALPHA_MAX, ALPHA_MIN

log = logging.getLogger(__name__)

LOG_TAU_MIN = math.log(1e-8)
LOG_TAU_MAX = math.log(1e4)

OPT_START_TAU = 0.1
OPT_FATOL = 1e-6
OPT_MAXFEV = 500


@dataclass(frozen=True)
class RandomBlock:
    """One random-effect column block and its variance-profile family."""

    label: str
    kind: str                 # "spatial" | "nonspatial" | "group"
    design: np.ndarray        # (N, L)
    scaled_eigenvalues: np.ndarray | None = None   # spatial kind only

    def __post_init__(self):
        if self.kind not in ("spatial", "nonspatial", "group"):
            raise ParameterError(f"unknown block kind {self.kind!r}")
        if self.kind == "spatial":
            if self.scaled_eigenvalues is None:
                raise ParameterError("spatial block requires eigenvalues")
            if self.scaled_eigenvalues.shape[0] != self.design.shape[1]:
                raise InputError("eigenvalue count does not match design width")

    @property
    def size(self) -> int:
        return self.design.shape[1]

    @property
    def n_params(self) -> int:
        return 2 if self.kind == "spatial" else 1

    def v_from_params(self, params: np.ndarray) -> np.ndarray:
        """Diagonal variance profile for this block at the given parameters."""
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ParameterError(
                f"block {self.label!r} expects {self.n_params} parameters")
        if self.kind == "spatial":
            tau, alpha = params
            return tau * self.scaled_eigenvalues ** alpha
        return np.full(self.size, params[0])


class InnerProducts:
    """One-time Gram-matrix replacement of all N-dimensional data objects."""

    def __init__(self, gram, zy, myy, n, k, slices):
        self.gram = gram          # (K+T, K+T) with T = total block columns
        self.zy = zy              # (K+T,)
        self.myy = float(myy)
        self.n = int(n)
        self.k = int(k)
        self.slices = slices      # per-block column slice into gram/zy

    @property
    def n_blocks(self) -> int:
        return len(self.slices)


def precompute(y: np.ndarray, x: np.ndarray, designs: list[np.ndarray]) -> InnerProducts:
    """Inner products of [X, D_1, ..., D_B] with itself and with y."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = y.shape[0]
    if y.ndim != 1:
        raise InputError("response must be a vector")
    if x.ndim != 2 or x.shape[0] != n:
        raise InputError("fixed-effect design rows must match the response")
    k = x.shape[1]
    if k < 1:
        raise InputError("need at least one fixed-effect column")
    for d in designs:
        if d.shape[0] != n:
            raise InputError("random design rows must match the response")

    z = np.hstack([x] + [np.asarray(d, dtype=float) for d in designs]) if designs else x
    gram = z.T @ z
    gram = 0.5 * (gram + gram.T)
    zy = z.T @ y
    slices = []
    start = k
    for d in designs:
        slices.append(slice(start, start + d.shape[1]))
        start += d.shape[1]
    return InnerProducts(gram, zy, float(y @ y), n, k, slices)


def _chol(p: np.ndarray, what: str = "bordered system"):
    """Cholesky with a single jitter retry; raises NumericalError if it still fails."""
    try:
        return scipy.linalg.cho_factor(p, lower=True)
    except scipy.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(p)
        log.warning("%s not positive definite; retrying with jitter %.3e", what, jitter)
        try:
            return scipy.linalg.cho_factor(p + jitter * np.eye(p.shape[0]), lower=True)
        except scipy.linalg.LinAlgError as exc:
            cond = np.linalg.cond(p)
            raise NumericalError(
                f"{what} is singular (condition number {cond:.3e})") from exc


def _logdet_from_chol(cf) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


def _restricted_loglik(logdet: float, d: float, n: int, k: int) -> float:
    if n <= k:
        raise ParameterError(f"need N > K, got N={n}, K={k}")
    if d <= 0:
        raise NumericalError("non-positive residual quadratic form")
    return -0.5 * logdet - 0.5 * (n - k) * (1.0 + math.log(2.0 * math.pi * d / (n - k)))


ActiveSet = list[tuple[int, np.ndarray]]  # (block index, V diagonal)


def _assemble(ip: InnerProducts, active: ActiveSet):
    """Bordered matrix P, its right-hand side, and bookkeeping for an active set."""
    idx = list(range(ip.k))
    w = [np.ones(ip.k)]
    bounds = []
    pos = ip.k
    for bi, v in active:
        sl = ip.slices[bi]
        idx.extend(range(sl.start, sl.stop))
        w.append(np.asarray(v, dtype=float))
        bounds.append(slice(pos, pos + (sl.stop - sl.start)))
        pos += sl.stop - sl.start
    idx = np.asarray(idx)
    w = np.concatenate(w)
    gsub = ip.gram[np.ix_(idx, idx)]
    p = w[:, None] * gsub * w[None, :]
    p[ip.k :, ip.k :] += np.eye(pos - ip.k)
    rhs = w * ip.zy[idx]
    return p, rhs, w, gsub, bounds


@dataclass
class RemlState:
    """Solved bordered system at fixed variance parameters."""

    b: np.ndarray                     # (K,) fixed coefficients
    u: list[np.ndarray]               # per active block, same order as the active set
    resid_norm2: float                # ||y - Xb - sum D V u||^2
    sigma2: float                     # profiled noise variance
    loglik: float                     # restricted log-likelihood
    d: float                          # resid_norm2 + sum ||u||^2
    logdet: float


def solve_effects(ip: InnerProducts, active: ActiveSet) -> RemlState:
    """Coefficients, residual norm, and restricted likelihood at fixed parameters."""
    p, rhs, w, gsub, bounds = _assemble(ip, active)
    cf = _chol(p)
    theta = scipy.linalg.cho_solve(cf, rhs)
    d = ip.myy - float(theta @ rhs)
    # the explicit inner-product residual form; theta' P0 theta with P0 the
    # identity-free bordered matrix
    wt = w * theta
    resid2 = ip.myy - 2.0 * float(theta @ rhs) + float(wt @ gsub @ wt)
    logdet = _logdet_from_chol(cf)
    # a perfect (noise-free) fit drives the profiled likelihood to infinity;
    # the coefficients are still well defined, so report it rather than raise
    if d <= 0:
        d = 0.0
        ll = math.inf
    else:
        ll = _restricted_loglik(logdet, d, ip.n, ip.k)
    sigma2 = d / (ip.n - ip.k)
    u = [theta[sl] for sl in bounds]
    return RemlState(theta[: ip.k], u, max(resid2, 0.0), sigma2, ll, d, logdet)


def loglik_fast(ip: InnerProducts, active: ActiveSet) -> float:
    """Restricted log-likelihood from inner products; never touches N-sized data."""
    p, rhs, _, _, _ = _assemble(ip, active)
    cf = _chol(p)
    theta = scipy.linalg.cho_solve(cf, rhs)
    d = ip.myy - float(theta @ rhs)
    return _restricted_loglik(_logdet_from_chol(cf), d, ip.n, ip.k)


def loglik_direct(
    y: np.ndarray,
    x: np.ndarray,
    designs: list[np.ndarray],
    vs: list[np.ndarray],
) -> float:
    """Oracle path: the restricted log-likelihood evaluated on raw data.

    Builds the scaled random design columns densely, solves the bordered
    normal equations, and computes the residual vector explicitly.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n, k = x.shape
    if n <= k:
        raise ParameterError(f"need N > K, got N={n}, K={k}")
    scaled = [np.asarray(d, float) * np.asarray(v, float)[None, :]
              for d, v in zip(designs, vs)]
    e = np.hstack(scaled) if scaled else np.empty((n, 0))
    t = e.shape[1]
    a = np.block([[x.T @ x, x.T @ e], [e.T @ x, e.T @ e + np.eye(t)]])
    rhs = np.concatenate([x.T @ y, e.T @ y])
    cf = _chol(a)
    theta = scipy.linalg.cho_solve(cf, rhs)
    b, u = theta[:k], theta[k:]
    resid = y - x @ b - e @ u
    d = float(resid @ resid) + float(u @ u)
    return _restricted_loglik(_logdet_from_chol(cf), d, n, k)


class BlockContext:
    """Everything about the bordered system that ignores one chosen block.

    Factors the system restricted to the fixed effects plus the other active
    blocks once; evaluating the likelihood at a new variance profile for the
    chosen block then costs one L x L Cholesky.  The likelihood of the model
    with the chosen block removed falls out of the same factorization for
    free.
    """

    def __init__(self, ip: InnerProducts, others: ActiveSet, target: int):
        self.ip = ip
        self.target = target
        self.others = others
        tsl = ip.slices[target]

        p_a, rhs_a, w_a, _, self._bounds_a = _assemble(ip, others)
        self._cf_a = _chol(p_a, "reduced bordered system")
        self._logdet_a = _logdet_from_chol(self._cf_a)
        self._a0 = scipy.linalg.cho_solve(self._cf_a, rhs_a)
        self._c0 = float(rhs_a @ self._a0)
        self._rhs_a = rhs_a

        idx_a = np.concatenate(
            [np.arange(ip.k)]
            + [np.arange(ip.slices[bi].start, ip.slices[bi].stop) for bi, _ in others]
        ).astype(int)
        u_cross = w_a[:, None] * ip.gram[np.ix_(idx_a, range(tsl.start, tsl.stop))]
        self._w_mat = scipy.linalg.cho_solve(self._cf_a, u_cross)
        self._f = ip.gram[tsl, tsl] - u_cross.T @ self._w_mat
        self._g = u_cross.T @ self._a0
        self._m_t = ip.zy[tsl]

    @property
    def loglik_dropped(self) -> float:
        """Restricted likelihood of the model without the target block."""
        d = self.ip.myy - self._c0
        return _restricted_loglik(self._logdet_a, d, self.ip.n, self.ip.k)

    def _schur(self, v: np.ndarray):
        s = v[:, None] * self._f * v[None, :]
        s[np.diag_indices_from(s)] += 1.0
        cf_s = _chol(s, "block Schur complement")
        rhs_t = v * (self._m_t - self._g)
        u = scipy.linalg.cho_solve(cf_s, rhs_t)
        return cf_s, rhs_t, u

    def loglik(self, v: np.ndarray) -> float:
        """Restricted likelihood with the target block at variance profile v."""
        cf_s, rhs_t, u = self._schur(np.asarray(v, dtype=float))
        d = self.ip.myy - self._c0 - float(u @ rhs_t)
        logdet = self._logdet_a + _logdet_from_chol(cf_s)
        return _restricted_loglik(logdet, d, self.ip.n, self.ip.k)

    def solve(self, v: np.ndarray):
        """Partitioned solve: coefficients over (fixed + others) and target u."""
        v = np.asarray(v, dtype=float)
        _, _, u = self._schur(v)
        top = self._a0 - self._w_mat @ (v * u)
        return top, u


@dataclass
class EffectOptimum:
    """Result of tuning one block's variance parameters."""

    params: np.ndarray       # (tau, alpha) for spatial blocks, (tau,) otherwise
    v: np.ndarray
    loglik: float
    loglik_dropped: float
    converged: bool
    n_evals: int


def optimize_effect(
    ip: InnerProducts,
    blocks: list[RandomBlock],
    active: ActiveSet,
    target: int,
    start: np.ndarray | None = None,
    maxfev: int = OPT_MAXFEV,
) -> EffectOptimum:
    """Maximize the restricted likelihood over one block's parameters.

    All other blocks' variance profiles stay fixed at their entries in
    ``active``.  The search is a bounded Nelder-Mead simplex on log scale
    (log tau, and log alpha for spatial blocks); non-convergence returns the
    best point found with ``converged=False`` rather than raising.
    """
    block = blocks[target]
    others = [(bi, v) for bi, v in active if bi != target]
    ctx = BlockContext(ip, others, target)

    if block.kind == "spatial":
        bounds = [(LOG_TAU_MIN, LOG_TAU_MAX),
                  (math.log(ALPHA_MIN), math.log(ALPHA_MAX))]
        if start is None:
            z0 = np.array([math.log(OPT_START_TAU), 0.0])
        else:
            z0 = np.log(np.asarray(start, dtype=float))

        def unpack(z):
            return np.array([math.exp(z[0]), math.exp(z[1])])
    else:
        bounds = [(LOG_TAU_MIN, LOG_TAU_MAX)]
        if start is None:
            z0 = np.array([math.log(OPT_START_TAU)])
        else:
            z0 = np.log(np.asarray(start, dtype=float))

        def unpack(z):
            return np.array([math.exp(z[0])])

    z0 = np.clip(z0, [lo for lo, _ in bounds], [hi for _, hi in bounds])

    def objective(z):
        params = unpack(z)
        try:
            return -ctx.loglik(block.v_from_params(params))
        except NumericalError:
            return np.inf

    res = scipy.optimize.minimize(
        objective,
        z0,
        method="Nelder-Mead",
        bounds=bounds,
        options={"fatol": OPT_FATOL, "xatol": 1e-4, "maxfev": maxfev},
    )
    params = unpack(res.x)
    v = block.v_from_params(params)
    if not res.success:
        log.warning("variance search for block %r stopped after %d evaluations",
                    block.label, res.nfev)
    return EffectOptimum(params, v, -res.fun, ctx.loglik_dropped,
                         bool(res.success), int(res.nfev))
