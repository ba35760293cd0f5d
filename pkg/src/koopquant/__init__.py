"""Lifted linear predictors from dither-quantized data, and MPC on them."""

from .dictionary import Dictionary, lift, make_custom_dictionary, make_kdv_dictionary, make_tps_dictionary
from .dynamics import PlantModel, TrajectorySet, generate_training_set, linear_plant, make_plant
from .errors import ConfigError, DimensionError, DivergenceError, KoopquantError, NumericalError
from .harness import ExperimentConfig, SweepResult, emit_outputs, fit_log_slope, load_config, run_sweep
from .ident import LinearPredictor, assemble_snapshots, edmd_fit, estimate_gap, mismatch_bound, ridge_fit
from .mpc import LinearMpc, MpcConfig, run_closed_loop
from .predictor import evaluate_predictor, prediction_error, rollout
from .qp import QpProblem, solve_qp
from .quantization import DitherStream, QuantizerSpec, build_quantizer, dither_quantize, error_moment_report

__version__ = "0.1.0"

__all__ = [
    "Dictionary", "lift", "make_custom_dictionary", "make_kdv_dictionary", "make_tps_dictionary",
    "PlantModel", "TrajectorySet", "generate_training_set", "linear_plant", "make_plant",
    "ConfigError", "DimensionError", "DivergenceError", "KoopquantError", "NumericalError",
    "ExperimentConfig", "SweepResult", "emit_outputs", "fit_log_slope", "load_config", "run_sweep",
    "LinearPredictor", "assemble_snapshots", "edmd_fit", "estimate_gap", "mismatch_bound", "ridge_fit",
    "LinearMpc", "MpcConfig", "run_closed_loop",
    "evaluate_predictor", "prediction_error", "rollout",
    "QpProblem", "solve_qp",
    "DitherStream", "QuantizerSpec", "build_quantizer", "dither_quantize", "error_moment_report",
]
