"""Compile a validated ModelGraph into a runnable CompiledModel.

Build steps: sample encoders and evaluation points, solve gains/biases from
max-rate/intercept draws, solve decoders by regularized least squares on the
rate-model activity matrix, fold decoder/transform/encoder chains into one
weight matrix per connection, and lower to the requested backend.  The
``fixed`` backend additionally stores a quantized copy of every weight matrix
and selects quantized neuron stepping at run time.

All randomness comes from per-ensemble streams derived from (seed, ensemble
id, ensemble seed), so build results are independent of iteration order and
of the other ensembles present.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import graph as gr
from .errors import BuildError, ShapeMismatchError, SingularSystemError
from .neurons import (
    NeuronParams,
    QuantizationSpec,
    SPIKING_MODELS,
    quantize_weights,
    rate,
    solve_gain_bias,
)
from .seeding import stream

REFERENCE = "reference"
FIXED_POINT = "fixed"
BACKENDS = (REFERENCE, FIXED_POINT)

DEFAULT_REG = 0.1
EVAL_POINTS_MIN = 500
EVAL_POINTS_PER_NEURON = 2


def sample_encoders(n, dims, rng):
    """n preferred-direction vectors, i.i.d. uniform on the unit sphere."""
    E = rng.standard_normal((n, dims))
    norms = np.linalg.norm(E, axis=1)
    degenerate = norms < 1e-12
    if np.any(degenerate):
        E[degenerate] = 0.0
        E[degenerate, 0] = 1.0
        norms[degenerate] = 1.0
    return E / norms[:, None]


def sample_eval_points(n_points, dims, radius, rng):
    """n_points uniform in the dims-ball of the given radius."""
    directions = sample_encoders(n_points, dims, rng)
    radii = radius * rng.random(n_points) ** (1.0 / dims)
    return directions * radii[:, None]


def default_eval_count(n_neurons):
    """Over-determined system: at least 500 points, at least 2 per neuron."""
    return max(EVAL_POINTS_MIN, EVAL_POINTS_PER_NEURON * n_neurons)


def activity_matrix(ens: "CompiledEnsemble", eval_points):
    """Rates (points x neurons, Hz) of the ensemble's rate model over points."""
    x = np.atleast_2d(np.asarray(eval_points, dtype=float))
    J = ens.gain * (x @ ens.encoders.T) / ens.radius + ens.bias
    return rate(ens.neuron_model, J, ens.params)

def solve_decoders(A, targets, reg=DEFAULT_REG):
    """Least-squares decoders d minimizing
    (1/N)*||A d - Y||^2 + (reg*max(A))^2 * ||d||^2
    via the normal equations (A^T A + (reg*max(A))^2 * N * I) d = A^T Y,
    solved as a symmetric positive-definite system.

    With reg = 0 a rank-deficient A raises SingularSystemError; nothing is
    regularized silently.
    """
    A = np.asarray(A, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if A.shape[0] != Y.shape[0]:
        raise ShapeMismatchError(
            f"A has {A.shape[0]} rows but targets have {Y.shape[0]}"
        )
    n_points = A.shape[0]
    sigma = reg * A.max() if A.size else 0.0
    G = A.T @ A + (sigma ** 2 * n_points) * np.eye(A.shape[1])
    b = A.T @ Y
    try:
        factor = scipy.linalg.cho_factor(G)
        d = scipy.linalg.cho_solve(factor, b)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "normal equations are singular (rank-deficient activity with reg=0)"
        ) from exc
    if not np.all(np.isfinite(d)):
        raise SingularSystemError("decoder solve produced non-finite values")
    return d


def fold_weights(decoders, transform, target_encoders=None):
    """Fold decoders, transform, and (for ensemble targets) encoders into one
    weight matrix: W = E_t @ T @ d^T, or T @ d^T for node targets.

    The fold is exact in real arithmetic; per-neuron gain and 1/radius are
    applied by the target ensemble at run time.
    """
    d = np.asarray(decoders, dtype=float)
    T = np.atleast_2d(np.asarray(transform, dtype=float))
    if T.shape[1] != d.shape[1]:
        raise ShapeMismatchError(
            f"transform columns {T.shape[1]} != decoder columns {d.shape[1]}"
        )
    W = T @ d.T
    if target_encoders is not None:
        E = np.asarray(target_encoders, dtype=float)
        if E.shape[1] != T.shape[0]:
            raise ShapeMismatchError(
                f"target encoder dims {E.shape[1]} != transform rows {T.shape[0]}"
            )
        W = E @ W
    return W


@dataclass
class CompiledEnsemble:
    id: str
    n: int
    dims: int
    radius: float
    neuron_model: str
    params: NeuronParams
    encoders: np.ndarray   # (n, dims), unit rows
    gain: np.ndarray       # (n,)
    bias: np.ndarray       # (n,)
    eval_points: np.ndarray | None = None
    identity_decoders: np.ndarray | None = None  # solved only if probed

    @property
    def spiking(self):
        return self.neuron_model in SPIKING_MODELS


@dataclass
class CompiledConnection:
    id: str
    source: str
    target: str
    source_is_ensemble: bool
    target_is_ensemble: bool
    weights: np.ndarray            # folded matrix, target units x source units
    alpha: float | None            # filter coefficient exp(-dt/tau), None = unfiltered
    quantized_weights: np.ndarray | None = None
    weight_exponent: int = 0
    # learning-specific (None on static connections)
    decoders: np.ndarray | None = None    # (n_source, k), live-updated copy at run time
    fold_left: np.ndarray | None = None   # E_t @ T or T; weights = fold_left @ d^T
    learning_rate: float | None = None
    error_source: str | None = None

    @property
    def learned(self):
        return self.learning_rate is not None


@dataclass
class CompiledProbe:
    id: str
    target: str
    target_is_ensemble: bool
    quantity: str
    alpha: float | None
    every_steps: int


@dataclass
class CompiledModel:
    dt: float
    backend: str
    qspec: QuantizationSpec
    ensembles: list
    nodes: list            # NodeSpec, id-sorted
    node_order: list       # evaluation order (within-step dependencies first)
    connections: list
    probes: list
    ens_index: dict = field(default_factory=dict)
    node_index: dict = field(default_factory=dict)

    def ensemble(self, id):
        return self.ensembles[self.ens_index[id]]


def _ensemble_stream(seed, ens: gr.Ensemble):
    if ens.seed is not None:
        own = int(ens.seed)
    else:
        own = int.from_bytes(hashlib.sha256(ens.id.encode()).digest()[:8], "little")
    return stream(seed, "ensemble", ens.id, own)


def _build_ensemble(ens: gr.Ensemble, params, seed):
    rng = _ensemble_stream(seed, ens)
    if ens.fixed_tuning is not None:
        t = ens.fixed_tuning
        enc = np.asarray(t.encoders, dtype=float)
        gain = np.asarray(t.gain, dtype=float)
        bias = np.asarray(t.bias, dtype=float)
    else:
        enc = sample_encoders(ens.n_neurons, ens.dimensions, rng)
        lo, hi = ens.max_rate_range
        max_rates = rng.uniform(lo, hi, ens.n_neurons)
        ilo, ihi = ens.intercept_range
        intercepts = rng.uniform(ilo, ihi, ens.n_neurons)
        gain, bias = solve_gain_bias(max_rates, intercepts, params, ens.neuron_model)
    return CompiledEnsemble(
        id=ens.id, n=ens.n_neurons, dims=ens.dimensions, radius=ens.radius,
        neuron_model=ens.neuron_model, params=params,
        encoders=enc, gain=gain, bias=bias,
    ), rng


def _apply_function(fn, points):
    rows = [np.atleast_1d(np.asarray(fn(p), dtype=float)) for p in points]
    return np.vstack(rows)


def compile_graph(graph: gr.ModelGraph, backend=REFERENCE, seed=0,
                  qspec: QuantizationSpec | None = None, reg=DEFAULT_REG,
                  eval_points: dict | None = None,
                  n_eval: int | None = None) -> CompiledModel:
    """Lower a validated graph to a CompiledModel.

    `eval_points` optionally overrides the decoder-solving points per source
    ensemble id (used when the operating region is not the full ball).
    Encoders, gains, biases, and decoders are identical across backends for
    the same seed; only the lowering differs.
    """
    if backend not in BACKENDS:
        raise BuildError(f"unknown backend {backend!r}")
    diags = graph.validate()
    if diags:
        raise BuildError(
            "graph does not validate: " + "; ".join(str(d) for d in diags)
        )
    qspec = qspec or QuantizationSpec(dt=graph.dt)
    params = graph.neuron_params
    eval_points = eval_points or {}

    compiled_ens, streams = [], {}
    for ens in graph.ensembles:
        ce, rng = _build_ensemble(ens, params, seed)
        compiled_ens.append(ce)
        streams[ens.id] = rng
    ens_index = {ce.id: i for i, ce in enumerate(compiled_ens)}

    nodes = graph.nodes
    node_index = {n.id: i for i, n in enumerate(nodes)}

    # Probed ensembles additionally need identity decoders.
    probe_targets = {p.target for p in graph.probes if p.quantity == gr.DECODED_OUTPUT}

    def ens_eval_points(ce):
        if ce.eval_points is None:
            if ce.id in eval_points:
                ce.eval_points = np.atleast_2d(np.asarray(eval_points[ce.id], dtype=float))
            else:
                count = n_eval if n_eval is not None else default_eval_count(ce.n)
                ce.eval_points = sample_eval_points(
                    count, ce.dims, ce.radius, streams[ce.id]
                )
        return ce.eval_points

    activities = {}

    def ens_activity(ce):
        if ce.id not in activities:
            activities[ce.id] = activity_matrix(ce, ens_eval_points(ce))
        return activities[ce.id]

    compiled_conns = []
    for conn in graph.connections:
        src_is_ens = conn.source in graph._ensembles
        tgt_is_ens = conn.target in graph._ensembles
        T = conn.transform
        alpha = None if conn.synapse is None else float(np.exp(-graph.dt / conn.synapse))
        tgt_enc = compiled_ens[ens_index[conn.target]].encoders if tgt_is_ens else None

        if src_is_ens:
            src = compiled_ens[ens_index[conn.source]]
            if conn.learning is not None:
                d = np.zeros((src.n, T.shape[1]))
            elif conn.decoders is not None:
                d = conn.decoders
            else:
                A = ens_activity(src)
                pts = ens_eval_points(src)
                if conn.function_tag is None:
                    Y = pts
                else:
                    Y = _apply_function(graph.function(conn.function_tag), pts)
                try:
                    d = solve_decoders(A, Y, reg)
                except SingularSystemError as exc:
                    raise BuildError(f"connection {conn.id!r}: {exc}") from exc
            W = fold_weights(d, T, tgt_enc)
        else:
            d = None
            W = T if tgt_enc is None else tgt_enc @ T

        cc = CompiledConnection(
            id=conn.id, source=conn.source, target=conn.target,
            source_is_ensemble=src_is_ens, target_is_ensemble=tgt_is_ens,
            weights=W, alpha=alpha,
        )
        if conn.learning is not None:
            cc.decoders = d
            cc.fold_left = T if tgt_enc is None else tgt_enc @ T
            cc.learning_rate = conn.learning.learning_rate
            cc.error_source = conn.learning.error_source
        if backend == FIXED_POINT:
            cc.quantized_weights, cc.weight_exponent = quantize_weights(W, qspec)
        compiled_conns.append(cc)

    for ce in compiled_ens:
        if ce.id in probe_targets:
            pts = ens_eval_points(ce)
            try:
                ce.identity_decoders = solve_decoders(ens_activity(ce), pts, reg)
            except SingularSystemError as exc:
                raise BuildError(f"ensemble {ce.id!r} probe decoders: {exc}") from exc

    compiled_probes = []
    for p in graph.probes:
        if p.synapse is not None:
            tau = p.synapse
        elif p.quantity == gr.FILTERED_ACTIVITY:
            tau = 0.02  # readable firing-rate traces
        else:
            tau = None
        every = 1 if p.sample_every is None else int(round(p.sample_every / graph.dt))
        compiled_probes.append(CompiledProbe(
            id=p.id, target=p.target, target_is_ensemble=p.target in graph._ensembles,
            quantity=p.quantity,
            alpha=None if tau is None else float(np.exp(-graph.dt / tau)),
            every_steps=every,
        ))

    return CompiledModel(
        dt=graph.dt, backend=backend, qspec=qspec,
        ensembles=compiled_ens, nodes=nodes, node_order=graph.node_order(),
        connections=compiled_conns, probes=compiled_probes,
        ens_index=ens_index, node_index=node_index,
    )
