"""Fixed-step simulation of a CompiledModel.

Order within a step:

1. node values are computed from this step's external inputs and the
   *previous* step's filtered/raw presynaptic signals (within-step
   node-to-node chains resolve in dependency order);
2. ensemble input currents are assembled from the same connection outputs
   and the neurons advance, emitting spikes scaled to counts/dt (Hz);
3. every synapse filter updates with the new signal, y <- a*y + (1-a)*x;
4. PES updates run on the freshly filtered activities, using the error value
   from step 1 (one-step-delayed error);
5. outputs and probes are populated from the post-update states.

Everything is deterministic given (model, state, inputs); no randomness and
no parallelism-dependent reductions live here.
"""

from __future__ import annotations

import math

import numpy as np

from . import graph as gr
from .build import FIXED_POINT, CompiledModel
from .errors import (
    DivergedLearningError,
    NonFiniteSignalError,
)
from .neurons import (
    RATE_MODELS,
    SpikingState,
    quantize_current,
    quantize_weights,
    rate,
    step_spiking,
    step_spiking_quantized,
)

DIVERGENCE_LIMIT = 1e6  # abort learning when any |decoder| exceeds this


def pes_delta(a, u, learning_rate, dt, n_neurons):
    """Per-step PES decoder change: -(kappa*dt/n) * outer(a, u).

    Scaling by dt makes the master rate timestep-invariant; dividing by the
    neuron count makes it transferable across ensemble sizes.
    """
    a = np.asarray(a, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return -(learning_rate * dt / n_neurons) * np.outer(a, u)


def pes_update(d, a, u, learning_rate, dt, n_neurons):
    """Apply one PES step to decoders d (returns the updated copy)."""
    return d + pes_delta(a, u, learning_rate, dt, n_neurons)


def adapt_signal(a, d):
    """Decode filtered activities (Hz) through decoders: u = a^T d."""
    return np.asarray(a, dtype=float) @ np.asarray(d, dtype=float)


class ProbeTable:
    """Sampled probe data: times (s,) and values (s, k)."""

    def __init__(self, times, values):
        self.times = times
        self.values = values

    def __len__(self):
        return len(self.times)


class Simulator:
    """Owns the mutable state of one simulation run of a CompiledModel.

    One simulator is driven by one caller at a time; closed-loop tasks
    alternate plant stepping and `step()` strictly.
    """

    def __init__(self, model: CompiledModel):
        self.model = model
        self.dt = model.dt
        self.fixed = model.backend == FIXED_POINT
        self._node_specs = {n.id: n for n in model.nodes}
        self._inputs_ids = [n.id for n in model.nodes if n.kind == gr.EXTERNAL_INPUT]
        self._output_ids = [n.id for n in model.nodes if n.kind == gr.EXTERNAL_OUTPUT]
        self._inbound_conns = {n.id: [] for n in model.nodes}
        self._ens_inbound = {e.id: [] for e in model.ensembles}
        for c in model.connections:
            if c.target_is_ensemble:
                self._ens_inbound[c.target].append(c)
            else:
                self._inbound_conns[c.target].append(c)
        by_id = {c.id: c for c in model.connections}
        self._error_refs = {}
        self._fold_is_identity = {}
        for c in model.connections:
            if c.learned:
                src = c.error_source
                if src in self._node_specs:
                    self._error_refs[c.id] = ("node", src)
                else:
                    self._error_refs[c.id] = ("conn", by_id[src])
                fl = c.fold_left
                self._fold_is_identity[c.id] = (
                    fl.shape[0] == fl.shape[1] and np.array_equal(fl, np.eye(fl.shape[0]))
                )
        # nodes whose start-of-step value anything consumes: sources of
        # node->ensemble connections, PES error nodes, and their node-chain
        # ancestors; the rest are only evaluated in the output pass
        needed = {c.source for c in model.connections
                  if c.target_is_ensemble and not c.source_is_ensemble}
        for kind, src in self._error_refs.values():
            if kind == "node":
                needed.add(src)
            elif not src.source_is_ensemble:
                needed.add(src.source)
        grew = True
        while grew:
            grew = False
            for c in model.connections:
                if (not c.source_is_ensemble and not c.target_is_ensemble
                        and c.target in needed and c.source not in needed):
                    needed.add(c.source)
                    grew = True
        self._pre_nodes = [nid for nid in model.node_order
                           if nid in needed
                           and self._node_specs[nid].kind != gr.EXTERNAL_INPUT]
        self._post_nodes = [nid for nid in model.node_order
                            if self._node_specs[nid].kind != gr.EXTERNAL_INPUT]
        self._gain_over_radius = {e.id: e.gain / e.radius for e in model.ensembles}
        self.reset()

    # -- state ------------------------------------------------------------
    def reset(self):
        m = self.model
        self.t = 0.0
        self.step_index = 0
        self._neuron_state = {}
        self._activity = {}
        for e in m.ensembles:
            if e.spiking:
                self._neuron_state[e.id] = SpikingState(e.n)
            self._activity[e.id] = np.zeros(e.n)
        self._filters = {}
        self._live_d = {}
        self._live_w = {}
        self._live_wq = {}
        for c in m.connections:
            if c.alpha is not None:
                dim = c.decoders.shape[0] if c.learned else c.weights.shape[0]
                self._filters[c.id] = np.zeros(dim)
            if c.learned:
                self._live_d[c.id] = c.decoders.copy()
                self._live_w[c.id] = c.weights.copy()
                if self.fixed:
                    self._live_wq[c.id] = (
                        c.quantized_weights.copy() if c.quantized_weights is not None
                        else c.weights.copy()
                    )
        self._probe_filters = {}
        self._probe_rows = {p.id: ([], []) for p in m.probes}
        self._spikes = {e.id: np.zeros(e.n) for e in m.ensembles}

    def _weights(self, conn):
        if conn.learned:
            return self._live_wq[conn.id] if self.fixed else self._live_w[conn.id]
        if self.fixed and conn.quantized_weights is not None:
            return conn.quantized_weights
        return conn.weights

    def last_activity(self, ens_id):
        """Most recent per-neuron activity (Hz) of an ensemble."""
        return self._activity[ens_id]

    def learned_decoders(self, conn_id):
        """Live decoder matrix of a learned connection."""
        return self._live_d[conn_id]

    # -- stepping -----------------------------------------------------------
    def _conn_output_pre(self, conn, node_values):
        """Connection signal as seen at the start of the step."""
        if conn.alpha is not None:
            fs = self._filters[conn.id]
            return self._weights(conn) @ fs if conn.learned else fs
        if conn.source_is_ensemble:
            return self._weights(conn) @ self._activity[conn.source]
        return self._weights(conn) @ node_values[conn.source]

    def _external_values(self, inputs):
        values = {}
        for nid in self._inputs_ids:
            spec = self._node_specs[nid]
            if nid not in inputs:
                raise NonFiniteSignalError(f"missing input for node {nid!r}")
            v = np.atleast_1d(np.asarray(inputs[nid], dtype=float))
            if v.shape != (spec.dimensions,):
                raise NonFiniteSignalError(
                    f"input for node {nid!r} has shape {v.shape}, "
                    f"expected ({spec.dimensions},)"
                )
            if not np.all(np.isfinite(v)):
                raise NonFiniteSignalError(f"non-finite input for node {nid!r}")
            values[nid] = v
        return values

    def _node_values(self, ext_values, pre, node_values_pre=None):
        values = dict(ext_values)
        for nid in (self._pre_nodes if pre else self._post_nodes):
            total = np.zeros(self._node_specs[nid].dimensions)
            for conn in self._inbound_conns[nid]:
                if pre:
                    out = self._conn_output_pre(conn, values)
                else:
                    out = self._conn_output_post(conn, values, node_values_pre)
                total += out
            if not math.isfinite(total.sum()):
                raise NonFiniteSignalError(
                    f"non-finite signal into node {nid!r} "
                    f"(connections {[c.id for c in self._inbound_conns[nid]]})"
                )
            values[nid] = total
        return values

    def _conn_output_post(self, conn, node_values_post, node_values_pre):
        if conn.alpha is not None:
            fs = self._filters[conn.id]
            return self._weights(conn) @ fs if conn.learned else fs
        if conn.source_is_ensemble:
            return self._weights(conn) @ self._activity[conn.source]
        src = node_values_post if conn.source in node_values_post else node_values_pre
        return self._weights(conn) @ src[conn.source]

    def step(self, inputs):
        """Advance one dt; returns {external-output id: vector}."""
        m = self.model
        dt = self.dt

        # (1) node values from external inputs and start-of-step signals
        ext = self._external_values(inputs)
        node_pre = self._node_values(ext, pre=True)

        # (2) ensemble currents, then neuron updates
        for e in m.ensembles:
            drive = np.zeros(e.n)
            for conn in self._ens_inbound[e.id]:
                drive += self._conn_output_pre(conn, node_pre)
            if not math.isfinite(drive.sum()):
                bad = [c.id for c in self._ens_inbound[e.id]]
                raise NonFiniteSignalError(
                    f"non-finite signal into ensemble {e.id!r} (connections {bad})")
            J = e.bias + self._gain_over_radius[e.id] * drive
            if e.neuron_model in RATE_MODELS:
                Jr = quantize_current(J, m.qspec) if self.fixed else J
                act = rate(e.neuron_model, Jr, e.params)
                self._spikes[e.id] = act * dt  # pseudo-counts for raster probes
            else:
                state = self._neuron_state[e.id]
                if self.fixed:
                    spikes = step_spiking_quantized(state, J, dt, e.params,
                                                    m.qspec, e.neuron_model)
                else:
                    spikes = step_spiking(state, J, dt, e.params, e.neuron_model)
                self._spikes[e.id] = spikes
                act = spikes / dt
            self._activity[e.id] = act

        # (3) synapse filters see the new signals
        for c in m.connections:
            if c.alpha is None:
                continue
            fs = self._filters[c.id]
            if c.learned:
                x = self._activity[c.source]
            elif c.source_is_ensemble:
                x = self._weights(c) @ self._activity[c.source]
            else:
                x = self._weights(c) @ node_pre[c.source]
            fs *= c.alpha
            fs += (1.0 - c.alpha) * x

        # (4) PES decoder updates
        for c in m.connections:
            if not c.learned:
                continue
            kind, src = self._error_refs[c.id]
            u = node_pre[src] if kind == "node" else self._conn_output_pre(src, node_pre)
            a = self._filters[c.id] if c.alpha is not None else self._activity[c.source]
            scale = -(c.learning_rate * dt / a.shape[0])
            delta = (scale * a)[:, None] * u
            d = self._live_d[c.id]
            d += delta
            if abs(d.flat[np.argmax(np.abs(d))]) > DIVERGENCE_LIMIT:
                raise DivergedLearningError(
                    f"connection {c.id!r}: decoder magnitude exceeded "
                    f"{DIVERGENCE_LIMIT:g}"
                )
            w = self._live_w[c.id]
            if self._fold_is_identity[c.id]:
                w += delta.T
            else:
                w += c.fold_left @ delta.T
            if self.fixed:
                self._live_wq[c.id] = quantize_weights(w, m.qspec)[0]

        # (5) outputs and probes from post-update state
        node_post = self._node_values(ext, pre=False, node_values_pre=node_pre)
        self.step_index += 1
        self.t = self.step_index * dt
        self._record_probes(node_post)
        return {nid: node_post[nid] for nid in self._output_ids}

    def _record_probes(self, node_post):
        for p in self.model.probes:
            if p.quantity == gr.DECODED_OUTPUT:
                if p.target_is_ensemble:
                    e = self.model.ensemble(p.target)
                    signal = self._activity[p.target] @ e.identity_decoders
                else:
                    signal = node_post[p.target]
            elif p.quantity == gr.SPIKE_RASTER:
                signal = self._spikes[p.target]
            else:  # filtered activity
                signal = self._activity[p.target]
            if p.alpha is not None:
                fs = self._probe_filters.get(p.id)
                if fs is None:
                    fs = np.zeros_like(signal)
                fs = p.alpha * fs + (1.0 - p.alpha) * signal
                self._probe_filters[p.id] = fs
                signal = fs
            if self.step_index % p.every_steps == 0:
                times, rows = self._probe_rows[p.id]
                times.append(self.t)
                rows.append(np.array(signal, dtype=float))

    def run(self, input_provider, duration):
        """Step ceil(duration/dt) times; the provider is called before each
        step as provider(t, previous_outputs) and must return the inputs map.

        Returns {probe id: ProbeTable}.
        """
        n_steps = int(round(duration / self.dt))
        if abs(duration - n_steps * self.dt) > 1e-9:
            raise ValueError("duration must be a multiple of dt")
        outputs = {}
        for i in range(n_steps):
            t = i * self.dt
            inputs = input_provider(t, outputs)
            try:
                outputs = self.step(inputs)
            except (NonFiniteSignalError, DivergedLearningError) as exc:
                raise type(exc)(f"t={t:.6f}s: {exc}") from exc
        return self.probe_tables()

    def probe_tables(self):
        tables = {}
        for pid, (times, rows) in self._probe_rows.items():
            tables[pid] = ProbeTable(
                np.asarray(times, dtype=float),
                np.asarray(rows, dtype=float) if rows else np.zeros((0, 0)),
            )
        return tables
