"""Risk-limiting dispatch under generator ramp constraints.

The package fits and evaluates dispatch policies for a single
aggregated generator facing uncertain net demand: closed-form
threshold (base-stock-style) lookahead policies, a chance-constrained
affine recourse policy compiled to one second-order cone program, a
small exact dynamic-programming oracle for structural verification,
and a Monte Carlo harness that scores everything against a
clairvoyant lower bound.
"""

from .affine import (AffineDispatchPolicy, AffinePolicy, AffineProgram,
                     ChanceRows, StackedModel, assemble_rhs, assemble_socp,
                     build_chance_rows, build_stacked_model, chance_margins,
                     execute_affine, project_feasible, solve_affine_policy,
                     unpack_policy, violation_frequencies)
from .data import (DayInstance, RawSeries, RunConfig, SynthSpec,
                   aggregate_hourly, calibrate_ramp, dump_config,
                   load_config, load_series, make_day_instance, pick_days,
                   scale_wind, synth_benchmark, write_json,
                   write_results_csv)
from .distributions import (alpha_from_beta, error_cdf, error_pdf,
                            error_quantile, normal_quantile, sample_errors)
from .dporacle import (DPSolution, GridSpec, Lolp, Voll, backward_induction,
                       default_grid, extract_target, structure_check_suite,
                       verify_threshold_structure)
from .errors import (BudgetExceededError, ConfigError, DataError,
                     NoRootError, RldError, SolverFailure)
from .forecast import (ErrorModel, ForecastState, sqrt_sigma_curve,
                       update_forecast, update_matrix)
from .params import DispatchParams, clamp_to_interval, feasible_interval
from .policies import (DispatchPolicy, LolpOneStepPolicy, MultiStepPolicy,
                       VollOneStepApproxPolicy, VollOneStepExactPolicy,
                       clamp_to_threshold, lolp_one_step_target,
                       multi_step_target, voll_exact_root,
                       voll_one_step_target_approx,
                       voll_one_step_target_exact, voll_target_gap_bound)
from .simulate import (EvalResult, Scenario, evaluate, make_scenarios,
                       oracle_cost, oracle_costs, penetration_sweep,
                       simulate_policy, summarize_rows)
from .solver import (ConicProblem, NonNeg, SecondOrder, Solution,
                     SolverSettings, kkt_residuals, solve, solve_many)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
