"""Capacity bounds and simulations for a power-constrained channel with a causal jammer.

Modules
-------
model      domain types (parameters, allocations, solver options)
waterfill  inner minimization over the jammer's noise allocation
bounds     outer searches: lower and upper bounds, slack variants, curves
attack     the two-stage babble-and-push attack on a finite code
codec      chunked stochastic code and list-and-check decoder
sim        Monte-Carlo harness
cli        command-line front end
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    BlockConfig,
    ChannelParams,
    ChunkedAllocation,
    InvalidAllocation,
    NoiseAllocation,
    PowerAllocation,
    Slack,
    SolverConfig,
    TwoLevelAllocation,
    check_energy_bounding,
    evaluate_objective,
    expand_two_level,
)
from .waterfill import WaterfillSolution, brute_force_inner, inner_min, water_fill  # noqa: E402
from .bounds import (  # noqa: E402
    BoundResult,
    compute_lower_bound,
    compute_slack_bound,
    compute_upper_bar,
    compute_upper_tilde,
    reference_oblivious,
    solve_chunked_signal,
)
