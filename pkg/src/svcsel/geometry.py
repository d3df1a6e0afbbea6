"""Spatial proximity matrices, Moran eigenvector bases, and covariate bases.

The spatial basis is the set of eigenvectors of the doubly-centered
exponential proximity matrix that have positive eigenvalues.  Each
eigenvector is a map pattern with positive spatial autocorrelation; the
leading ones are the smoothest.  Covariate ("non-spatial") bases expand a
covariate into centered spline or polynomial columns so that a coefficient
can vary with the covariate's own value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import BasisError, DiagnosticError, InputError, ParameterError

DEFAULT_L_MAX = 200
DEFAULT_EPS_EIG = 1e-8

# Above this size a full eigendecomposition is wasteful; switch to Lanczos
# for the leading eigenpairs only.
_DENSE_EIG_LIMIT = 2500


def _check_coords(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise InputError(f"coordinates must be (N, 2), got shape {coords.shape}")
    if coords.shape[0] < 3:
        raise InputError(f"need at least 3 sites, got {coords.shape[0]}")
    if not np.all(np.isfinite(coords)):
        raise InputError("non-finite coordinate")
    return coords


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between rows of ``coords``."""
    coords = np.asarray(coords, dtype=float)
    sq = np.sum(coords**2, axis=1)
    # in-place throughout: the N x N buffer dominates memory at large N
    d = coords @ coords.T
    d *= -2.0
    d += sq[:, None]
    d += sq[None, :]
    np.maximum(d, 0.0, out=d)
    np.sqrt(d, out=d)
    d += d.T
    d *= 0.5
    np.fill_diagonal(d, 0.0)
    return d


def build_proximity(coords: np.ndarray, range_: float = 1.0) -> np.ndarray:
    """Exponential-decay proximity matrix exp(-d_ij / range) with zero diagonal.

    Coincident sites yield off-diagonal entries of 1; this is allowed (coarse
    data may put several records at one centroid).
    """
    coords = _check_coords(coords)
    if not np.isfinite(range_) or range_ <= 0:
        raise ParameterError(f"proximity range must be positive, got {range_}")
    c = pairwise_distances(coords)
    c /= -range_
    np.exp(c, out=c)
    np.fill_diagonal(c, 0.0)
    return c


def max_nearest_neighbor_distance(coords: np.ndarray) -> float:
    """Largest nearest-neighbor distance; default proximity range for real data."""
    d = pairwise_distances(_check_coords(coords))
    np.fill_diagonal(d, np.inf)
    return float(np.max(np.min(d, axis=1)))


def double_center(c: np.ndarray) -> np.ndarray:
    """M C M with M = I - 11'/N: removes row and column means."""
    c = np.asarray(c, dtype=float)
    row = c.mean(axis=1, keepdims=True)
    col = c.mean(axis=0, keepdims=True)
    return c - row - col + c.mean()


@dataclass(frozen=True)
class MoranBasis:
    """Positive-eigenvalue eigenpairs of the doubly-centered proximity matrix.

    ``eigenvalues`` are raw and strictly decreasing; ``scaled_eigenvalues``
    are divided by the leading eigenvalue so the variance-profile power
    stays bounded during optimization.
    """

    vectors: np.ndarray          # (N, L), orthonormal, column sums ~ 0
    eigenvalues: np.ndarray      # (L,), descending, > 0
    l_max: int

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    @property
    def scaled_eigenvalues(self) -> np.ndarray:
        if self.eigenvalues.size == 0:
            return self.eigenvalues
        return self.eigenvalues / self.eigenvalues[0]


def moran_eigen(
    c: np.ndarray,
    l_max: int = DEFAULT_L_MAX,
    eps_eig: float = DEFAULT_EPS_EIG,
) -> MoranBasis:
    """Moran eigenvector basis of a proximity matrix.

    Keeps eigenpairs of M C M with eigenvalue > eps_eig * lambda_1, sorted
    descending, truncated to at most ``l_max`` columns.  An empty basis (no
    positive eigenvalues) is returned as L = 0, not raised.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if c.ndim != 2 or c.shape[1] != n:
        raise InputError("proximity matrix must be square")
    if not np.allclose(c, c.T, atol=1e-10):
        raise InputError("proximity matrix must be symmetric")
    if l_max < 1:
        raise ParameterError("l_max must be >= 1")

    mcm = double_center(c)
    mcm += mcm.T
    mcm *= 0.5
    if n <= _DENSE_EIG_LIMIT or l_max >= n - 1:
        w, v = np.linalg.eigh(mcm)
        w, v = w[::-1], v[:, ::-1]
    else:
        k = min(l_max + 1, n - 1)
        w, v = scipy.sparse.linalg.eigsh(mcm, k=k, which="LA")
        order = np.argsort(w)[::-1]
        w, v = w[order], v[:, order]

    if w.size == 0 or w[0] <= 0:
        return MoranBasis(np.empty((n, 0)), np.empty(0), l_max)
    keep = w > eps_eig * w[0]
    w, v = w[keep], v[:, keep]
    if w.size > l_max:
        w, v = w[:l_max], v[:, :l_max]
    return MoranBasis(np.ascontiguousarray(v), w, l_max)


def row_standardize(c: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; rows then sum to one."""
    c = np.asarray(c, dtype=float)
    sums = c.sum(axis=1)
    if np.any(sums <= 0):
        bad = int(np.argmax(sums <= 0))
        raise InputError(f"row {bad} has non-positive sum (isolated site)")
    return c / sums[:, None]


@dataclass(frozen=True)
class NvcBasis:
    """Centered basis expansion of one covariate.

    Stores enough (knots or degrees plus the centering offsets) to
    re-evaluate the basis at new covariate values for prediction.
    """

    vectors: np.ndarray               # (N, L), column means ~ 0
    kind: str                         # "natural_spline" | "polynomial"
    col_means: np.ndarray             # (L,), subtracted during centering
    knots: np.ndarray = field(default_factory=lambda: np.empty(0))
    covariate_index: int = -1

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    def evaluate(self, x_new: np.ndarray) -> np.ndarray:
        """Raw basis at new covariate values, centered with the stored means."""
        raw = _raw_nvc_columns(np.asarray(x_new, dtype=float), self.kind,
                               self.size, self.knots)
        return raw - self.col_means


def _natural_spline_columns(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Natural cubic spline basis (constant dropped): x plus K-2 curvature terms."""
    k = knots
    km = k[-1]
    kl = k[-2]

    def dfun(xi, kj):
        return (np.maximum(x - kj, 0.0) ** 3 - np.maximum(x - km, 0.0) ** 3) / (km - kj)

    cols = [x]
    dl = dfun(x, kl)
    for kj in k[:-2]:
        cols.append(dfun(x, kj) - dl)
    return np.column_stack(cols)


def _raw_nvc_columns(x: np.ndarray, kind: str, l_n: int, knots: np.ndarray) -> np.ndarray:
    if kind == "polynomial":
        cols = np.column_stack([x ** (j + 1) for j in range(l_n)])
        return cols
    if kind == "natural_spline":
        return _natural_spline_columns(x, knots)
    raise ParameterError(f"unknown basis kind {kind!r}")


def nvc_basis(
    x: np.ndarray,
    l_n: int = 10,
    kind: str = "natural_spline",
    covariate_index: int = -1,
    standardize: bool = False,
) -> NvcBasis:
    """Centered covariate basis of ``l_n`` columns.

    Spline knots sit at equally spaced quantiles of ``x`` (l_n + 1 of them,
    so the basis has l_n columns after the constant is dropped).
    ``standardize`` additionally scales columns to unit standard deviation,
    which keeps high-degree polynomial columns on a sane scale.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError("covariate must be a vector")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite covariate value")
    if l_n < 1:
        raise ParameterError("l_n must be >= 1")
    if np.ptp(x) == 0:
        raise BasisError("covariate is constant; a varying-coefficient basis is undefined")

    knots = np.empty(0)
    if kind == "natural_spline":
        distinct = np.unique(x)
        if distinct.size < l_n + 2:
            raise BasisError(
                f"spline basis of size {l_n} needs at least {l_n + 2} distinct values, "
                f"got {distinct.size}"
            )
        qs = np.linspace(0.0, 1.0, l_n + 1)
        knots = np.quantile(x, qs)
        knots = np.unique(knots)
        if knots.size < 3:
            raise BasisError("too few distinct quantile knots for a spline basis")

    raw = _raw_nvc_columns(x, kind, l_n, knots)
    if standardize:
        sd = raw.std(axis=0)
        sd[sd == 0] = 1.0
        raw = raw / sd
    col_means = raw.mean(axis=0)
    vectors = raw - col_means
    if np.any(np.ptp(vectors, axis=0) == 0):
        raise BasisError("degenerate basis: a column is constant")
    return NvcBasis(vectors, kind, col_means, knots, covariate_index)


def moran_coefficient(f: np.ndarray, c: np.ndarray) -> float:
    """Spatial autocorrelation statistic (N / sum C) * (f'MCMf) / (f'Mf)."""
    f = np.asarray(f, dtype=float)
    c = np.asarray(c, dtype=float)
    n = f.shape[0]
    fc = f - f.mean()
    denom = float(fc @ fc)
    if denom == 0.0:
        raise DiagnosticError("Moran coefficient undefined for a constant vector")
    total = float(c.sum())
    if total == 0.0:
        raise DiagnosticError("proximity matrix sums to zero")
    num = float(fc @ c @ fc)
    return (n / total) * num / denom
