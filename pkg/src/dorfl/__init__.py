"""Outlier-robust federated learning with an unbalanced-Wasserstein ambiguity set."""

from .dro import (CertificateReport, HyperParams, InnerMaxResult, dual_objective_H, grad_lambda_estimate,
                  grad_theta_estimate, inner_maximize, primal_sup_on_grid, robustness_certificate)
from .errors import ConfigurationError, DataFormatError, InvalidInputError
from .federation import (ClientState, ClientUpdate, MixtureWeights, TrainingTrace, client_round,
                         duality_gap_surrogate, project_ball, project_simplex, run_training, server_aggregate)
from .model import ModelParams, OutlierScore, Sample
from .transport import DiscreteDistribution, lemma1_check, uw_distance_discrete, wasserstein_1d_exact

__version__ = "0.1.0"
