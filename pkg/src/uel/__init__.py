"""Empirical-likelihood inference for subsampled honest random forests."""
from .baselines import VarianceEstimate, ij_covariances, ij_variance, jackknife_variance, wald_ci
from .dgp import Dataset, gen_mars, gen_mlr, gen_uniform_features, read_csv, true_mean, write_csv
from .el import (EL, IJ, JK, MEL, METHODS, ConfidenceInterval, ELEvaluation, chi2_quantile_1df,
                 el_stat, el_weights, invert_ci, mel_stat, solve_lambda, sparsity_diagnostic)
from .ensemble import EnsembleFit, draw_subsamples, fit_forest, kernel_variance
from .errors import ConfigurationError, SubsampleTooSmallError
from .harness import (CoverageReport, SimulationConfig, load_config, run_experiment,
                      run_replication, write_report)
from .pseudo import (PseudoValueSet, exclusion_sums, modified_values, pseudo_anchors,
                     pseudo_values, values_at, variance_components)
from .tree import Tree, TreeParams, fit_tree, leaf_weights, predict

__version__ = "0.1.0"
