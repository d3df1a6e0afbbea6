"""Spatial additive mixed models with selectable coefficient types.

Fits regressions whose coefficients may be constant, spatially varying
(Moran eigenvector basis), varying with the covariate's own value, or both,
chooses the type per covariate by BIC/AIC using a restricted-likelihood
scheme whose iterative cost is independent of the sample size, and ships a
synthetic experiment harness plus a CSV-in/CSV-out command line.
"""

from .dataio import (ColumnSchema, Dataset, ingest_csv, lag_column,
                     load_json, model_payload, predict, save_json)
from .errors import (BasisError, DiagnosticError, InputError, NumericalError,
                     ParameterError, SvcselError)
from .geometry import (MoranBasis, NvcBasis, build_proximity, double_center,
                       moran_coefficient, moran_eigen, nvc_basis,
                       row_standardize)
from .model import (FitResult, ModelProblem, build_problem, coefficient_table,
                    fit_types, fitted_values)
from .reml import (InnerProducts, RandomBlock, loglik_direct, loglik_fast,
                   optimize_effect, precompute, solve_effects)
from .selection import (CostKind, McConfig, SelectionResult, cost,
                        count_params, mc_select, simple_select)
from .simulate import (DgpConfig, ExperimentReport, SyntheticData,
                       bench_timing, bias, build_synthetic_problem,
                       fit_named_model, generate, rmse, run_experiment)
from .terms import (EffectType, GroupTermSpec, TermSpec, VarianceParams,
                    term_design, v_diag)

__version__ = "0.1.0"
