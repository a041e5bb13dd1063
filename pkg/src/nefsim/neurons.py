"""Neuron models, tuning-curve math, and fixed-point quantization.

Conventions
-----------
Input current J is unitless (1.0 is the spiking threshold for LIF).  Rate
functions return Hz.  Spiking steppers return per-neuron spike *counts* for
the step; counts above 1 can only occur for rectified-linear neurons driven
past 1/dt.  Simulated spike trains communicate as counts/dt so their units
match the rate curves.

The fixed-point variants emulate an on-chip integer pipeline: membrane state
lives on a 2**-(state_bits-8) grid (state_bits-wide integer with 8 integer
bits of headroom) and input currents pass through the same shared-exponent
mantissa grid used for weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTuningError

LIF = "lif"
SPIKING_RELU = "spiking_rectified_linear"
RATE_LIF = "rate_lif"
RATE_RELU = "rate_rectified_linear"

SPIKING_MODELS = (LIF, SPIKING_RELU)
RATE_MODELS = (RATE_LIF, RATE_RELU)
ALL_MODELS = SPIKING_MODELS + RATE_MODELS

LIF_FAMILY = (LIF, RATE_LIF)
RELU_FAMILY = (SPIKING_RELU, RATE_RELU)

# Spike-threshold slack: keeps integer-period drives (e.g. J=100 at dt=1e-3)
# exactly periodic despite accumulated binary rounding of the increments.
_SPIKE_EPS = 1e-9


@dataclass(frozen=True)
class NeuronParams:
    tau_rc: float = 0.02    # LIF membrane time constant [s]
    tau_ref: float = 0.002  # LIF refractory period [s]
    amplitude: float = 1.0  # rectified-linear output scale

    def validate(self):
        if not self.tau_rc > 0:
            raise ValueError("tau_rc must be > 0")
        if self.tau_ref < 0:
            raise ValueError("tau_ref must be >= 0")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be > 0")


@dataclass(frozen=True)
class QuantizationSpec:
    weight_mantissa_bits: int = 8
    state_bits: int = 23
    dt: float = 0.001

    def __post_init__(self):
        if not 2 <= self.weight_mantissa_bits <= 16:
            raise ValueError("weight_mantissa_bits must be in [2, 16]")
        if self.state_bits < 8:
            raise ValueError("state_bits must be >= 8")

    @property
    def mantissa_max(self):
        return 2 ** (self.weight_mantissa_bits - 1) - 1

    @property
    def state_grid(self):
        # 8 integer bits of headroom; the rest are fractional.
        return 2.0 ** -(self.state_bits - 8)

    @property
    def state_max(self):
        return (2.0 ** self.state_bits - 1) * self.state_grid


def lif_rate(J, params: NeuronParams):
    """Steady firing rate of an LIF neuron: 0 for J<=1, else the closed form."""
    J = np.asarray(J, dtype=float)
    out = np.zeros_like(J)
    above = J > 1.0
    Ja = J[above]
    out[above] = 1.0 / (params.tau_ref - params.tau_rc * np.log1p(-1.0 / Ja))
    return out


def relu_rate(J, params: NeuronParams):
    """Rectified-linear rate: amplitude * max(J, 0)."""
    return params.amplitude * np.maximum(np.asarray(J, dtype=float), 0.0)


def rate(model, J, params: NeuronParams):
    """Rate curve of `model` (spiking variants map to their rate curves)."""
    if model in LIF_FAMILY:
        return lif_rate(J, params)
    if model in RELU_FAMILY:
        return relu_rate(J, params)
    raise ValueError(f"unknown neuron model {model!r}")


def rate_ceiling(model, params: NeuronParams):
    """Supremum of the rate curve (1/tau_ref for LIF, unbounded for relu)."""
    if model in LIF_FAMILY:
        return np.inf if params.tau_ref == 0 else 1.0 / params.tau_ref
    return np.inf


def lif_current_for_rate(rates, params: NeuronParams):
    """Invert lif_rate: the current producing each requested rate (> 0)."""
    rates = np.asarray(rates, dtype=float)
    return 1.0 / -np.expm1((params.tau_ref - 1.0 / rates) / params.tau_rc)


def solve_gain_bias(max_rates, intercepts, params: NeuronParams, model):
    """Per-neuron gain and bias hitting rate(intercept)=0 and rate(1)=max_rate.

    Inputs are normalized projections x = <encoder, v>/radius; the current is
    J = gain*x + bias.
    """
    max_rates = np.asarray(max_rates, dtype=float)
    intercepts = np.asarray(intercepts, dtype=float)
    if np.any(max_rates <= 0):
        raise InfeasibleTuningError("max_rate must be > 0")
    if np.any(intercepts >= 1.0) or np.any(intercepts < -1.0):
        raise InfeasibleTuningError("intercepts must lie in [-1, 1)")
    if model in LIF_FAMILY:
        ceiling = rate_ceiling(model, params)
        if np.any(max_rates >= ceiling):
            raise InfeasibleTuningError(
                f"max_rate >= 1/tau_ref ceiling ({ceiling:g} Hz)"
            )
        j_max = lif_current_for_rate(max_rates, params)
        gain = (j_max - 1.0) / (1.0 - intercepts)
        bias = 1.0 - gain * intercepts
    elif model in RELU_FAMILY:
        gain = max_rates / (params.amplitude * (1.0 - intercepts))
        bias = -gain * intercepts
    else:
        raise ValueError(f"unknown neuron model {model!r}")
    return gain, bias


def quantize_weights(W, qspec: QuantizationSpec):
    """Quantize a matrix onto a signed-mantissa grid with one shared
    power-of-two exponent.

    e = ceil(log2(max|W| / (2**(mantissa_bits-1) - 1))); entries round to
    multiples of 2**e, so the elementwise error is at most 2**(e-1).  An
    all-zero matrix is returned unchanged with exponent 0.
    """
    W = np.asarray(W, dtype=float)
    peak = np.max(np.abs(W)) if W.size else 0.0
    if peak == 0.0:
        return W.copy(), 0
    e = int(np.ceil(np.log2(peak / qspec.mantissa_max)))
    scale = 2.0 ** e
    return np.round(W / scale) * scale, e


def quantize_current(J, qspec: QuantizationSpec):
    """Pass input currents through the mantissa grid, one power-of-two
    exponent per value.

    Weight matrices share one exponent (quantize_weights); currents cannot,
    because per-neuron gains span orders of magnitude within an ensemble and
    a shared grid would zero the low-gain neurons' entire operating range.
    """
    J = np.asarray(J, dtype=float)
    out = np.zeros_like(J)
    nz = J != 0.0
    # exact ceil(log2(|J|/mantissa_max)) via frexp: t = m * 2**E, m in [0.5, 1)
    mant, expo = np.frexp(np.abs(J[nz]) / qspec.mantissa_max)
    e = np.where(mant == 0.5, expo - 1, expo)
    scale = np.exp2(e.astype(float))
    out[nz] = np.round(J[nz] / scale) * scale
    return out


class SpikingState:
    """Mutable per-neuron membrane state (voltage + remaining refractory)."""

    __slots__ = ("v", "refractory", "_scratch")

    def __init__(self, n):
        self.v = np.zeros(n)
        self.refractory = np.zeros(n)
        self._scratch = np.empty(n)

    def reset(self):
        self.v[:] = 0.0
        self.refractory[:] = 0.0


def _step_lif(state, J, dt, params, grid=None, state_max=None):
    """One dt of LIF dynamics with fractional spike/refractory timing.

    The voltage follows the zero-order-hold solution of tau_rc*v' = J - v over
    the part of the step outside refractory; threshold crossings are placed at
    their sub-step time so the long-run spike rate matches lif_rate(J).
    When `grid` is given the voltage is rounded onto it after each update
    (integer-state emulation).
    """
    v, refractory, factor = state.v, state.refractory, state._scratch
    refractory -= dt
    # integration window within the step, shortened by remaining refractory
    np.subtract(dt, refractory, out=factor)
    np.clip(factor, 0.0, dt, out=factor)
    factor *= -1.0 / params.tau_rc
    np.expm1(factor, out=factor)
    factor *= v - J  # = (J - v) * (1 - exp(-delta_t/tau_rc))
    v += factor
    np.maximum(v, 0.0, out=v)  # clamp below at 0
    if grid is not None:
        np.round(v / grid, out=v)
        v *= grid
        np.minimum(v, state_max, out=v)
    spiked = v >= 1.0 - _SPIKE_EPS
    if np.any(spiked):
        v_s = v[spiked]
        J_s = J[spiked] if np.ndim(J) else np.full(v_s.shape, float(J))
        # Sub-step spike time; J <= 1 can only be reached exactly at threshold.
        overshoot = np.where(J_s > 1.0, (v_s - 1.0) / np.maximum(J_s - 1.0, 1e-300), 0.0)
        t_spike = dt + params.tau_rc * np.log1p(-np.clip(overshoot, 0.0, 1.0 - 1e-15))
        refractory[spiked] = params.tau_ref + t_spike
        v[spiked] = 0.0
    return spiked.astype(float)


def _step_relu(state, J, dt, params, grid=None, state_max=None):
    """One dt of spiking rectified-linear dynamics (soft reset)."""
    v = state.v
    inc = dt * params.amplitude * np.maximum(J, 0.0)
    v += inc
    if grid is not None:
        np.round(v / grid, out=v)
        v *= grid
        np.minimum(v, state_max, out=v)
    spikes = np.where(v >= 1.0 - _SPIKE_EPS, np.floor(v + _SPIKE_EPS), 0.0)
    v -= spikes
    np.maximum(v, 0.0, out=v)
    return spikes


def step_spiking(state: SpikingState, J, dt, params: NeuronParams, model):
    """Advance spiking neurons one step; returns per-neuron spike counts."""
    J = np.asarray(J, dtype=float)
    if model == LIF:
        return _step_lif(state, J, dt, params)
    if model == SPIKING_RELU:
        return _step_relu(state, J, dt, params)
    raise ValueError(f"{model!r} is not a spiking model")


def step_spiking_quantized(state: SpikingState, J, dt, params: NeuronParams,
                           qspec: QuantizationSpec, model):
    """Fixed-point variant: currents on the mantissa grid, voltage on the
    state grid.  Otherwise identical dynamics to step_spiking."""
    Jq = quantize_current(J, qspec)
    grid, vmax = qspec.state_grid, qspec.state_max
    if model == LIF:
        return _step_lif(state, Jq, dt, params, grid=grid, state_max=vmax)
    if model == SPIKING_RELU:
        return _step_relu(state, Jq, dt, params, grid=grid, state_max=vmax)
    raise ValueError(f"{model!r} is not a spiking model")


def measured_rate_curve(J_points, dt, params: NeuronParams, model,
                        qspec: QuantizationSpec | None = None,
                        settle=0.5, window=2.0):
    """Steady-state firing rate at each current, measured by simulation.

    Each point is an independent constant-current run (they are stepped
    together for speed but share no state).  With `qspec` the quantized
    stepper is used and each run quantizes its own constant current, so the
    returned curve is the fixed-point staircase.
    """
    J = np.asarray(J_points, dtype=float)
    state = SpikingState(J.size)
    n_settle = int(round(settle / dt))
    n_window = int(round(window / dt))
    step = (
        (lambda: step_spiking(state, J, dt, params, model))
        if qspec is None
        else (lambda: step_spiking_quantized(state, J, dt, params, qspec, model))
    )
    for _ in range(n_settle):
        step()
    counts = np.zeros(J.size)
    for _ in range(n_window):
        counts += step()
    return counts / (n_window * dt)
