"""Spot precious-metals market making with co-integrated futures hedging.

Quote a pricing ladder in spot, hedge in spot and futures, and manage the
mean-reverting EFP basis: the value function of the CARA control problem
is approximated by a quadratic polynomial whose coefficients solve a
small backward matrix Riccati system, giving near-optimal quotes and
hedge rates in closed form plus a Bayesian filter for the latent EFP
mean level.  A Monte Carlo engine (compiled kernel with pure-Python
fallback) and a CLI reproduce the standard experiments.
"""

from .execution import CostSpec, cost, hamiltonian, hamiltonian_prime
from .filtering import (
    FilterState,
    asymptotic_variance,
    calibrate_efp,
    effective_covariance,
    effective_sigma_d,
    filter_step,
    stationary_autocovariance,
)
from .flow import (
    QuadHamiltonian,
    fill_probability,
    fit_quadratic,
    optimal_offset,
    quote_hamiltonian,
)
from .params import (
    Inventory,
    MarketState,
    ModelParams,
    covariance_matrix,
    gold_params,
    load_params,
    validate,
)
from .policy import ControlDecision, decide, no_execution_zone, skew
from .riccati import RiccatiSystem, ValueApprox, build_system, solve, theta_check
from .sim import SimConfig, SimResult, backtest, run_paths, simulate_efp_exact

__version__ = "0.1.0"
