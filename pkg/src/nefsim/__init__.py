"""Spiking neural network compiler and simulator.

Describe a network as a ModelGraph, compile it (encoder sampling, gain/bias
solving, regularized least-squares decoders, weight folding) to a reference
or fixed-point backend, and step it in fixed dt increments with online PES
learning.  Two closed-loop benchmark tasks (a target-seeking rover and an
adaptive arm controller) plus a dense-net spiking conversion exercise the
pipeline end to end.
"""

from .build import (
    FIXED_POINT,
    REFERENCE,
    CompiledModel,
    activity_matrix,
    compile_graph,
    fold_weights,
    sample_encoders,
    sample_eval_points,
    solve_decoders,
)
from .engine import Simulator, adapt_signal, pes_update
from .graph import (
    ConnectionSpec,
    Ensemble,
    ExplicitTuning,
    ModelGraph,
    NodeSpec,
    PESConfig,
    ProbeSpec,
)
from .neurons import (
    NeuronParams,
    QuantizationSpec,
    lif_rate,
    quantize_weights,
    relu_rate,
    solve_gain_bias,
    step_spiking,
    step_spiking_quantized,
)

__version__ = "0.1.0"

__all__ = [
    "CompiledModel", "ConnectionSpec", "Ensemble", "ExplicitTuning",
    "FIXED_POINT", "ModelGraph", "NeuronParams", "NodeSpec", "PESConfig",
    "ProbeSpec", "QuantizationSpec", "REFERENCE", "Simulator",
    "activity_matrix", "adapt_signal", "compile_graph", "fold_weights",
    "lif_rate", "pes_update", "quantize_weights", "relu_rate",
    "sample_encoders", "sample_eval_points", "solve_decoders",
    "solve_gain_bias", "step_spiking", "step_spiking_quantized",
]
