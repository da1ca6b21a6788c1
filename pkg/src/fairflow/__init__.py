"""Revenue-maximising ride-hailing dispatch with envy-free driver payments."""

__version__ = "0.1.0"

from .circulation import (CirculationNetwork, InfeasibleCirculation, solve_min_cost_circulation,
                          verify_flow)
from .dispatch import (DispatchPlan, DriverRoute, RegularityError, brute_force_optimal, build_nlwc,
                       check_regularity, concave_envelope, decompose_routes, edge_decompose_solve,
                       extract_plan, marginal_rewards, solve_deterministic)
from .fairalloc import (FairnessInfeasible, PaymentScheme, check_fairness, constructive_allocation,
                        driver_utilities, payments_from_potential, qp_allocation)
from .model import (Arc, CostModel, GaussianPoissonParams, Geometry, Instance, LatentOrder, State,
                    admissible)
from .stochastic import (RewardTable, expected_revenue, optimal_price, qualified_rate,
                         solve_stochastic_dispatch, stochastic_reward_table, theta)

__all__ = [
    "__version__", "CirculationNetwork", "InfeasibleCirculation", "solve_min_cost_circulation",
    "verify_flow", "DispatchPlan", "DriverRoute", "RegularityError", "brute_force_optimal",
    "build_nlwc", "check_regularity", "concave_envelope", "decompose_routes", "edge_decompose_solve",
    "extract_plan", "marginal_rewards", "solve_deterministic", "FairnessInfeasible", "PaymentScheme",
    "check_fairness", "constructive_allocation", "driver_utilities", "payments_from_potential",
    "qp_allocation", "Arc", "CostModel", "GaussianPoissonParams", "Geometry", "Instance",
    "LatentOrder", "State", "admissible", "RewardTable", "expected_revenue", "optimal_price",
    "qualified_rate", "solve_stochastic_dispatch", "stochastic_reward_table", "theta",
]
