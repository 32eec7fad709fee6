"""l1-penalized nonconvex M-estimation with a numerical verification suite.

The package covers three estimation problems behind one interface (robust
regression with the Tukey bisquare, binary classification through a link,
and bounded nonlinear least squares), solves them by proximal gradient
descent with restarts, and ships Monte Carlo probes for the identification,
curvature, and concentration facts the estimation rate rests on.
"""

from .data import (Dataset, DesignSpec, NoiseSpec, derive_seed, gen_design,
                   gen_response, gen_theta0, load_dataset, make_dataset,
                   rho_x_of, save_dataset, substream)
from .harness import (Cell, LambdaPolicy, RateFit, SweepConfig, SweepRecord,
                      emit_report, rate_slope, read_records, run_sweep,
                      sweep_config_from_dict, sweep_config_from_json,
                      write_records)
from .losses import (LossConstants, ModelSpec, empirical_risk,
                     empirical_risk_grad, link_eval, loss_constants,
                     loss_deriv, loss_value, true_risk_oracle, tukey_rho,
                     tukey_rho_deriv, tukey_deriv_sup)
from .probes import (CurvatureSpec, ProbeReport, curvature_constant,
                     estimate_big_l, estimate_g, estimate_g_mc,
                     gradient_identification_check, identification_samples,
                     increment_ratio_probe, lemma_max_average_check,
                     lemma_subgaussian_truncation_check, load_reports,
                     make_report, risk_curvature_scan, write_reports)
from .solver import (FitConfig, FitResult, NumericalError, PenaltySchedule,
                     ball_b_check, grid_oracle, k_schedule, lambda_for,
                     lambda_path, manual_schedule, prox_gradient_fit,
                     soft_threshold)

__version__ = "0.1.0"
