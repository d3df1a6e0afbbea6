"""Per-covariate coefficient specifications and their variance structures.

Each covariate's coefficient is one of four types: constant, spatially
varying (random weights on the Moran eigenvector basis), non-spatially
varying (random weights on a covariate basis), or both.  The random part of
a type is characterized by a diagonal variance profile V applied to its
basis columns; the entries are ratios to the noise standard deviation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError

ALPHA_MIN = 0.25
ALPHA_MAX = 8.0


class EffectType(enum.Enum):
    CONSTANT = "constant"
    SVC = "svc"
    NVC = "nvc"
    SNVC = "snvc"

    @property
    def has_spatial(self) -> bool:
        return self in (EffectType.SVC, EffectType.SNVC)

    @property
    def has_nonspatial(self) -> bool:
        return self in (EffectType.NVC, EffectType.SNVC)

    @property
    def n_variance_params(self) -> int:
        # constant 0; svc 2 (scale + smoothness); nvc 1; both 3
        return {"constant": 0, "svc": 2, "nvc": 1, "snvc": 3}[self.value]


ALL_TYPES = frozenset(EffectType)
INTERCEPT_TYPES = frozenset({EffectType.CONSTANT, EffectType.SVC})


@dataclass
class TermSpec:
    """Candidate and current coefficient type for one covariate."""

    covariate_index: int
    candidate_types: frozenset = ALL_TYPES
    current_type: EffectType = EffectType.CONSTANT
    is_intercept: bool = False

    def __post_init__(self):
        self.candidate_types = frozenset(self.candidate_types)
        if EffectType.CONSTANT not in self.candidate_types:
            raise ParameterError("constant must always be a candidate type")
        if self.is_intercept and self.candidate_types & {EffectType.NVC, EffectType.SNVC}:
            raise ParameterError("the intercept term cannot carry a non-spatial part")
        if self.current_type not in self.candidate_types:
            raise ParameterError(
                f"current type {self.current_type} not among candidates")


@dataclass
class GroupTermSpec:
    """Random intercept indexed by a categorical grouping."""

    name: str
    membership: np.ndarray  # (N,) integer level index
    included: bool = False

    def __post_init__(self):
        self.membership = np.asarray(self.membership)
        levels, counts = np.unique(self.membership, return_counts=True)
        if np.any(counts < 1):
            raise InputError(f"group {self.name}: empty level")
        self.levels = levels

    @property
    def n_levels(self) -> int:
        return self.levels.size

    def indicator(self) -> np.ndarray:
        """(N, G) 0/1 design; column sums equal level counts."""
        out = np.zeros((self.membership.size, self.n_levels))
        for j, lev in enumerate(self.levels):
            out[self.membership == lev, j] = 1.0
        return out


@dataclass
class VarianceParams:
    """Variance profile parameters of one term, as ratios to sigma.

    Only the fields active for the term's type are meaningful; the rest stay
    at their zero/None defaults.
    """

    tau_s_over_sigma: float = 0.0
    alpha: float | None = None
    tau_n_over_sigma: float = 0.0

    def __post_init__(self):
        if self.tau_s_over_sigma < 0 or self.tau_n_over_sigma < 0:
            raise ParameterError("variance scale ratios must be >= 0")
        if self.alpha is not None and not (ALPHA_MIN <= self.alpha <= ALPHA_MAX):
            raise ParameterError(
                f"alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}], got {self.alpha}")


def v_diag(
    effect_type: EffectType,
    params: VarianceParams | None,
    scaled_eigenvalues: np.ndarray | None = None,
    l_n: int | None = None,
) -> np.ndarray:
    """Diagonal of the variance profile V for one term.

    Spatial columns get (tau_s/sigma) * lambda^alpha with eigenvalues scaled
    so the leading one is 1; non-spatial columns get a flat tau_n/sigma.  A
    constant term has no random columns at all.
    """
    if effect_type is EffectType.CONSTANT:
        return np.empty(0)
    if params is None:
        raise ParameterError(f"{effect_type.value} requires variance parameters")

    blocks = []
    if effect_type.has_spatial:
        if scaled_eigenvalues is None:
            raise ParameterError("spatial variance profile requires eigenvalues")
        if params.alpha is None:
            raise ParameterError("spatial variance profile requires alpha")
        blocks.append(params.tau_s_over_sigma * scaled_eigenvalues ** params.alpha)
    if effect_type.has_nonspatial:
        if l_n is None:
            raise ParameterError("non-spatial variance profile requires l_n")
        blocks.append(np.full(l_n, params.tau_n_over_sigma))
    return np.concatenate(blocks)


def term_design(
    x: np.ndarray,
    effect_type: EffectType,
    moran_vectors: np.ndarray | None = None,
    nvc_vectors: np.ndarray | None = None,
) -> np.ndarray:
    """Random-effect design columns of one term: x elementwise times each basis column.

    For the both-parts type the spatial block precedes the non-spatial block.
    A constant term has a zero-width design.
    """
    x = np.asarray(x, dtype=float)
    if effect_type is EffectType.CONSTANT:
        return np.empty((x.size, 0))
    blocks = []
    if effect_type.has_spatial:
        if moran_vectors is None:
            raise ParameterError("spatial design requested without a Moran basis")
        blocks.append(x[:, None] * moran_vectors)
    if effect_type.has_nonspatial:
        if nvc_vectors is None:
            raise ParameterError("non-spatial design requested without a covariate basis")
        blocks.append(x[:, None] * nvc_vectors)
    return np.hstack(blocks)
