"""Stochastic Lagrange-Poincare reduction on trivialized principal bundles."""
from .drivers import DrivingPath, coarsen, make_time_brownian, make_trial_paths, zero_noise
from .integrators import IntegrationError, StepperConfig, integrate, strat_step
from .lie import SO3, Circle, ProductGroup, TrivialGroup, hat, vee
from .mechanics import (
    ReducedSpec,
    ReducedState,
    UnreducedSpec,
    UnreducedState,
    action_reduced,
    action_unreduced,
    integrate_reduced,
    integrate_unreduced,
    project_state,
    step_reduced,
    step_unreduced,
)
from .systems import get_system, make_charged_particle, make_free_rigid_body, make_rotor
from .verify import check_casimir, check_gradients, compare_reduced_unreduced, monte_carlo

__version__ = "0.1.0"
