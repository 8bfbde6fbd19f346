"""Within-transformed fixed-effects stochastic frontier estimation on
unbalanced firm-year panels, with a Divisia TFP decomposition."""

from .errors import (ConfigError, DataError, EstimationError, LikelihoodEvaluationError,
                     QuadratureError, SchemaError, SfaPanelError)
from .estimator import EstimationConfig, EstimationResult, estimate, fit, prepare
from .likelihood import ParameterLayout, panel_loglik, total_loglik
from .panel import (Category, PanelDataset, TransformedPanel, VariableSchema, load_csv,
                    validate_panel, within_transform, write_csv)
from .postestimation import efficiency_trend, inefficiency_index, recover_fixed_effects
from .simulate import DgpSpec, generate_panel, run_monte_carlo
from .tfp import aggregate, decompose_dataset, decompose_tfp
from .translog import TranslogLayout, elasticities, returns_to_scale, technical_change

__version__ = "0.1.0"

__all__ = [
    "Category", "ConfigError", "DataError", "DgpSpec", "EstimationConfig", "EstimationError",
    "EstimationResult", "LikelihoodEvaluationError", "PanelDataset", "ParameterLayout",
    "QuadratureError", "SchemaError", "SfaPanelError", "TransformedPanel", "TranslogLayout",
    "VariableSchema", "aggregate", "decompose_dataset", "decompose_tfp", "efficiency_trend",
    "elasticities", "estimate", "fit", "generate_panel", "inefficiency_index", "load_csv",
    "panel_loglik", "prepare", "recover_fixed_effects", "returns_to_scale", "run_monte_carlo",
    "technical_change", "total_loglik", "validate_panel", "within_transform", "write_csv",
]
