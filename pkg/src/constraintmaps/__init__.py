"""Constraint maps: energy minimising maps into the complement of an obstacle."""

__version__ = "0.1.0"

from .exceptions import *  # noqa: F401,F403
from .geometry import (Ball, Ellipsoid, PlanarCurve, c_obstacle, obstacle_from_config,
                       project_to_boundary, ray_condition_check, second_fundamental_form,
                       signed_distance)
from .grid import (GradientField, GridDomain, MapField, dirichlet_energy, energy_gradient,
                   project_field, read_field_csv, scaled_energy, write_field_csv)
from .solver import (ConstraintMapSolver, SolveResult, SolverConfig, el_residual,
                     harmonic_extension, minimize)
from .radial import (RadialObstacleSolver, RadialProfile, closed_form_parameters,
                     closed_form_radial, ellipsoid_lambda_min, equivariant_lift,
                     gradient_identity_check, hardy_check, radial_minimize)
from .geodesics import (GeodesicSolver, Polyline, minimize_geodesic, projected_image_profile)
from .analysis import (BallScanConfig, DiagnosticsReport, WeightSample, ainfty_report,
                       annulus_decay, caccioppoli_constant, coincidence_and_free_boundary,
                       critical_scale, dist_subharmonicity, dpi_field, frequency,
                       monotonicity_scan, rank_field)
from .scenario import compare_runs, run_scenario
