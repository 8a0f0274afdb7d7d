"""Rectified-flow transport maps: closed forms, estimators, ODE maps and diagnostics."""

from .core import (GaussianParams, MixtureParams, RngSpec, SampleSet, Trajectory, VelocityField,
                   empirical_moments, sample_gaussian, sample_mixture, sample_uniform_box)
from .geometry import Ball, Box, Polytope
from .closedform import (AffineMap, gaussian_affine_coupling_velocity, gaussian_clt_variance_1d,
                         gaussian_fundamental_matrix_1d, gaussian_ot_map, gaussian_rectified_map,
                         gaussian_velocity, gaussian_velocity_field, matrix_sqrt_psd, mixture_velocity,
                         mixture_velocity_field, uniform_lipschitz_bound, uniform_velocity,
                         uniform_velocity_field)
from .kde import KDE, BoundaryKDE, KernelSpec, boundary_kde_eval, boundary_kernel_construct, kde_eval
from .estimators import (EstimatorConfig, PairedData, fit_linear_velocity, v_den, v_hybrid, v_onestep,
                         v_reg0, v_reg2, v_reg3, v_smoothed, v_sub3, v_sub4)
from .flow import (IntegratorSpec, alekseev_residual, fundamental_matrix, integrate_flow,
                   marginal_preservation_stat, rectified_map, rectify_iterate,
                   stability_bound_nagumo, stability_bound_osgood)
from .asymptotics import CltRunResult, clt_experiment, sigma_quadrature_1d, variance_blowup_scan

__version__ = "0.1.0"
