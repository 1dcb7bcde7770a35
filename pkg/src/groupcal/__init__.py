"""Group calibration errors, agglomeration functions and calibration scores for binary predictors."""

from .agglomerate import (Agglomerator, AxiomReport, apply, check_axioms,
                          check_refinement_monotonicity, cvar, cvar_mixture, maximum, mean,
                          quadrangle_dev, quadrangle_risk, quantile, range_dev, std_dev,
                          superquantile_dev)
from .core import (Dataset, DegenerateGroupError, ErrorProfile, Group, GroupDistribution,
                   Grouping, ValidationError, empirical_bayes, error_profile,
                   generalized_error, group_error)
from .grouping import (BinningScheme, KernelSpec, MetricSpec, feature_bins, feature_grid,
                       is_refinement, kernel_distributions, knn_groups, level_sets,
                       membership_counts, mlce_groups, prediction_bins)
from .scores import (ScoreReport, ace, brier, brier_decomposition, ece, global_score,
                     local_errors, mce, mlce)

__version__ = "0.1.0"
