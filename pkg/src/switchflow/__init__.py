"""Simulation, flows, Malliavin weights and bracket diagnostics for regime-switching diffusions."""

__version__ = "0.1.0"

from .model import (BUILTIN_MODELS, CoefficientField, GeneratorMatrix, InvalidGeneratorError,
                    MissingDerivativeError, ModelError, SwitchingModel, builtin_model,
                    check_derivative_oracles, validate_model)
from .chain import (ChainPath, build_partition, eval_g, longest_constant_interval, simulate_chain,
                    transition_matrix)
from .paths import (DirectionField, PathBatch, SimulationError, StatePath, TimeGrid, make_grid,
                    simulate_batch, simulate_path, simulate_perturbed_path)
from .malliavin import (FlowBundle, MalliavinMatrix, directional_derivative, flow_bundle,
                        inverse_jacobian_flow, jacobian_flow, malliavin_derivative, malliavin_matrix,
                        second_derivative_flow)
from .functionals import Functional, make_functional
from .bismut import (BismutWeight, GradientEstimate, IllConditionedError, bismut_weight, discrete_skorohod,
                     finite_difference_gradient, gradient_estimate, pathwise_gradient, strong_feller_probe,
                     weight_malliavin_derivative)
from .hormander import (UhcReport, VectorFieldExpr, build_bracket_sets, lie_bracket, sigma0_field,
                        uhc_check)
from .density import (NondegeneracySample, kernel_density, negative_moment_estimate, nondegeneracy_sample,
                      small_ball_probe)
from .runner import ConfigError, ExperimentConfig, load_config, parse_config, run_experiment
