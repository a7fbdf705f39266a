"""Numerical laboratory for fractional Allen-Cahn interfaces.

Solves (-Delta)^s u + eps^(-2s) W'(u) = 0 on a box with exterior Dirichlet
data for s in (0, 1/2), builds the associated extension-energy densities, and
runs the geometric measure machinery (moment flatness, packing bounds,
flatness-sum checks, tree/cover decompositions, tube volumes, nonlocal
perimeters) used to probe interface-volume and potential-energy scaling.
"""

from .core import (AffinePlane, CalibrationError, DomainError, Field,
                   FractionalParams, Grid, ParameterError, Potential,
                   kernel_normalization, make_params, plane_distance,
                   potential_eval)
from .solver import (DiscretizationError, ExtensionField, ExteriorGeometry,
                     FractionalOperator, NonConvergenceError, SolverConfig,
                     SplitExterior, build_exterior_geometry,
                     build_split_exterior, calibrate_ds, default_init,
                     extend, frac_laplacian_apply, load_field_csv,
                     make_z_levels, residual_norm, save_field_csv,
                     solve_allen_cahn)
from .energy import (EnergyDensity, EnergyEvaluator, density_curve,
                     energy_density, energy_eps, monotonicity_residual,
                     potential_integral, save_density_csv, theta)
from .geometry import (BetaResult, DiscreteMeasure, PackingCheck,
                       ReifenbergCheck, ball_window, beta2, load_mask_pgm,
                       load_measure_csv, mask_axis, nested_scale_sums,
                       packing_bound_check, packing_measure, perimeter_2s,
                       reifenberg_hypothesis, restriction_dichotomy_gap,
                       save_mask_pgm, save_measure_csv, second_moment)
from .stratify import (Ball, BallCover, ClassificationConsistencyError,
                       FieldSample, StratConfig, build_bad_tree,
                       build_good_tree, calibrate_eta_prime, classify_ball,
                       corona_decomposition, density_ceiling, fit_bad_plane,
                       load_cover_csv, maximal_net, refine_cover,
                       save_certificates_json, save_cover_csv,
                       synthetic_sample, transition_sample, tubular_volume)
from .experiments import (EXPERIMENT_KINDS, ExperimentConfig, ScalingReport,
                          mono_tolerance, run_beta_reifenberg_suite,
                          run_corona, run_experiment, run_monotonicity_audit,
                          run_perimeter_checks, run_scaling_potential,
                          run_suite, run_tubular_volume, wave_datum,
                          wave_interface)

__version__ = "0.1.0"
