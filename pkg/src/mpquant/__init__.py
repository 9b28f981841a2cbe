"""Recursive marginal product quantization of diffusions and BSDEs."""

from .errors import *  # noqa: F401,F403
from .gaussian import (CubatureRule, gauss_hermite_rule, load_grid_file, normal_cdf,
                       normal_pdf, normal_quantile, point_mass_rule)
from .models import (BUILTIN_MODELS, DiffusionModel, TimeGrid, basket2d, black_scholes,
                     builtin_model, euler_row, euler_step, heston, unit_brownian)
from .quantizer import MarginalQuantizer, MixtureSource, OptimizerOptions, optimize
from .chain import (ProductGrid, QuantizedChain, TransitionMatrix, build_chain,
                    cross_component_transition, transition_component, transition_diagonal,
                    transition_general)

from .bsde import (BsdeProblem, BsdeSolution, LambdaTensor, bs_hedge_driver, chain_lambda,
                   chassagneux_driver, chassagneux_terminal, lambda_general,
                   lambda_independent, solve_bsde)
from .pricing import Payoff, basket_call, component_call, price, strike_ladder
from .config import RunConfig, parse_config
from .piecewise import PiecewiseRule

__version__ = "0.1.0"
