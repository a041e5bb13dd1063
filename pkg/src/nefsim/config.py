"""Line-oriented run configuration.

Format: `[section]` headers, `key = value` pairs, `#` comments.  Every key
has a typed schema entry with a default; unknown keys are errors (no silent
typos), as are duplicates and type mismatches.  The effective configuration
(defaults merged with overrides) is echoed to `effective_config.txt` next to
the experiment outputs, so any run is reproducible from (subcommand, config,
seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigTypeError, DuplicateKeyError, UnknownKeyError

GLOBAL = "global"


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    unit: str = ""
    help: str = ""


SCHEMA = {
    GLOBAL: {
        "dt": Key(float, 0.001, "s", "simulation timestep"),
        "seed": Key(int, 0, "", "master seed; per-component streams derive from it"),
        "backend": Key(str, "reference", "", "reference | fixed"),
        "out_dir": Key(str, "out", "", "output directory (CLI --out overrides)"),
    },
    "neurons": {
        "tau_rc": Key(float, 0.02, "s", "LIF membrane time constant"),
        "tau_ref": Key(float, 0.002, "s", "LIF refractory period"),
        "amplitude": Key(float, 1.0, "", "rectified-linear output scale"),
        "weight_mantissa_bits": Key(int, 8, "bits", "fixed-point weight mantissa"),
        "state_bits": Key(int, 23, "bits", "fixed-point neuron state width"),
        "reg": Key(float, 0.1, "", "decoder regularization, fraction of max rate"),
        "eval_points_min": Key(int, 500, "", "decoder eval-point floor"),
        "eval_points_per_neuron": Key(int, 2, "", "decoder eval points per neuron"),
        "tune_model": Key(str, "lif", "", "tune sweep model: lif | relu"),
        "tune_j_min": Key(float, 0.0, "", "tune sweep lowest input current"),
        "tune_j_max": Key(float, 10.0, "", "tune sweep highest input current"),
        "tune_points": Key(int, 201, "", "tune sweep point count"),
        "tune_settle": Key(float, 0.5, "s", "tune sweep settling time per point"),
        "tune_window": Key(float, 2.0, "s", "tune sweep measurement window"),
        "solve_function": Key(str, "identity", "", "solve target: identity | square"),
        "solve_n_neurons": Key(int, 100, "", "solve ensemble size"),
        "solve_points": Key(int, 101, "", "solve output grid size on [-1, 1]"),
    },
    "arm": {
        "payload_mass": Key(float, 1.0, "kg", "unmodeled end-effector payload"),
        "l1": Key(float, 0.3, "m", "link 1 length"),
        "l2": Key(float, 0.3, "m", "link 2 length"),
        "l3": Key(float, 0.2, "m", "link 3 length"),
        "m1": Key(float, 1.0, "kg", "link 1 mass"),
        "m2": Key(float, 0.8, "kg", "link 2 mass"),
        "m3": Key(float, 0.6, "kg", "link 3 mass"),
        "gravity": Key(float, 9.81, "m/s^2", "gravity along -y"),
        "kp": Key(float, 30.0, "1/s^2", "task-space proportional gain"),
        "kv": Key(float, 2.0 * math.sqrt(30.0), "1/s", "task-space derivative gain"),
        "ki": Key(float, 5.0, "1/s^3", "task-space integral gain (PID)"),
        "windup": Key(float, 10.0, "m/s^2", "integral command clamp"),
        "null_kp": Key(float, 25.0, "1/s^2", "null-space posture stiffness"),
        "null_kv": Key(float, 10.0, "1/s", "null-space damping"),
        "sigma_min": Key(float, 1e-3, "", "task-inertia singular-value cutoff"),
        "path_tau": Key(float, 0.3, "s", "reach reference filter time constant"),
        "vel_bound": Key(float, 2.0, "rad/s", "velocity normalization bound"),
        "kappa": Key(float, 1e-4, "", "PES master learning rate"),
        "n_neurons": Key(int, 1000, "", "adaptive ensemble size"),
        "tau_input": Key(float, 0.01, "s", "context connection filter"),
        "tau_learn": Key(float, 0.01, "s", "learned-connection activity filter"),
        "max_rate_lo": Key(float, 175.0, "Hz", "adaptive ensemble max-rate low"),
        "max_rate_hi": Key(float, 220.0, "Hz", "adaptive ensemble max-rate high"),
        "u_adapt_limit": Key(float, 30.0, "N*m", "adaptive torque boundedness ceiling"),
        "limit_q1": Key(float, math.pi, "rad", "joint 1 clamp, symmetric"),
        "limit_q2": Key(float, 2.6, "rad", "joint 2 clamp, symmetric"),
        "limit_q3": Key(float, 2.6, "rad", "joint 3 clamp, symmetric"),
        "start_q1": Key(float, 1.2, "rad", "reach start joint 1"),
        "start_q2": Key(float, -0.7, "rad", "reach start joint 2"),
        "start_q3": Key(float, -0.5, "rad", "reach start joint 3"),
        "target_x": Key(float, 0.55, "m", "reach target x"),
        "target_y": Key(float, 0.15, "m", "reach target y"),
        "reach_duration": Key(float, 4.0, "s", "time per reach"),
        "n_reaches": Key(int, 50, "", "reaches per session"),
        "n_sessions": Key(int, 5, "", "sessions per controller"),
        "emit_trajectory": Key(bool, False, "", "also write arm_traj.csv"),
        "traj_sample_every": Key(float, 0.01, "s", "trajectory sampling period"),
    },
    "rover": {
        "n_neurons": Key(int, 512, "", "neurons per control ensemble (4096 = full scale)"),
        "n_targets": Key(int, 6, "", "targets per run"),
        "duration_cap": Key(float, 30.0, "s", "time allowed per target"),
        "radius": Key(float, 3.5, "m", "representational radius of target coords"),
        "k_a": Key(float, 1.0, "", "drive gain"),
        "k_p": Key(float, 1.5, "", "steering proportional gain"),
        "input_tau": Key(float, 0.05, "s", "target-position input filter"),
        "steer_input_tau": Key(float, 0.005, "s", "steering-angle input filter"),
        "output_tau": Key(float, 0.02, "s", "decoded command filter"),
        "max_rate_lo": Key(float, 175.0, "Hz", "ensemble max-rate low"),
        "max_rate_hi": Key(float, 220.0, "Hz", "ensemble max-rate high"),
        "noise_sigma": Key(float, 0.05, "m", "target estimate noise, per axis"),
        "capture_radius": Key(float, 0.5, "m", "capture distance"),
        "spawn_radius": Key(float, 3.0, "m", "targets spawn within this disk"),
        "exclusion": Key(float, 0.1, "m", "eval points avoid the origin"),
        "wheelbase": Key(float, 0.3, "m", "bicycle wheelbase"),
        "accel_gain": Key(float, 2.0, "", "plant drive response"),
        "drag": Key(float, 0.5, "1/s", "plant speed drag"),
        "steer_gain": Key(float, 4.0, "", "plant steering-rate response"),
        "max_steer": Key(float, 0.6, "rad", "steering clamp"),
        "controller": Key(str, "neural", "", "neural | analytic"),
        "traj_sample_every": Key(float, 0.01, "s", "trajectory sampling period"),
        "bench_preset_small": Key(int, 512, "", "bench neuron-count preset"),
        "bench_preset_large": Key(int, 4096, "", "bench neuron-count preset"),
        "bench_duration": Key(float, 0.5, "s", "simulated time per bench run"),
    },
    "convert": {
        "scale_firing_rates": Key(float, 400.0, "", "conversion firing-rate scale"),
        "output_tau": Key(float, 0.01, "s", "output low-pass"),
        "inter_layer_tau": Key(float, 0.0, "s", "between spiking layers; 0 = none"),
        "presentation_time": Key(float, 0.5, "s", "time per input"),
        "n_inputs": Key(int, 50, "", "fidelity batch size"),
        "net_file": Key(str, "", "", "net description file; empty = random net"),
        "layers": Key(str, "8 16 2", "", "random net layer sizes"),
        "input_scale": Key(float, 1.0, "", "random input amplitude"),
    },
}


class RunConfig:
    """Typed key/value store backed by the schema above."""

    def __init__(self, values=None):
        self._values = {s: dict() for s in SCHEMA}
        if values:
            for (section, key), v in values.items():
                self._values[section][key] = v

    def get(self, section, key):
        if key in self._values[section]:
            return self._values[section][key]
        return SCHEMA[section][key].default

    def set(self, section, key, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise UnknownKeyError(f"unknown key [{section}] {key}")
        self._values[section][key] = value

    def render_effective(self):
        """Full configuration (defaults plus overrides) as config-file text."""
        lines = []
        sections = [GLOBAL] + sorted(s for s in SCHEMA if s != GLOBAL)
        for section in sections:
            if section != GLOBAL:
                lines.append(f"[{section}]")
            for key in sorted(SCHEMA[section]):
                spec = SCHEMA[section][key]
                value = self.get(section, key)
                if spec.type is bool:
                    text = "true" if value else "false"
                else:
                    text = repr(value) if isinstance(value, float) else str(value)
                unit = f"  # {spec.unit}" if spec.unit else ""
                lines.append(f"{key} = {text}{unit}")
            lines.append("")
        return "\n".join(lines)


def _coerce(section, key, raw, lineno):
    spec = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if spec.type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if spec.type is int:
            if "." in raw or "e" in raw.lower():
                raise ValueError(raw)
            return int(raw)
        if spec.type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigTypeError(
            f"[{section}] {key}: expected {spec.type.__name__}, got {raw!r}",
            line=lineno,
        ) from exc


def parse_config(text) -> RunConfig:
    """Parse config-file text; missing keys take their documented defaults."""
    cfg = RunConfig()
    seen = set()
    section = GLOBAL
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA or section == GLOBAL:
                raise UnknownKeyError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in line:
            raise ConfigTypeError("expected 'key = value'", line=lineno)
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA[section]:
            raise UnknownKeyError(f"unknown key {key!r} in [{section}]", line=lineno)
        if (section, key) in seen:
            raise DuplicateKeyError(f"duplicate key {key!r} in [{section}]", line=lineno)
        seen.add((section, key))
        cfg.set(section, key, _coerce(section, key, raw_value, lineno))
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_reference():
    """Human-readable key listing with defaults and units (for --help)."""
    lines = []
    for section in sorted(SCHEMA):
        lines.append(f"[{section}]")
        for key in sorted(SCHEMA[section]):
            spec = SCHEMA[section][key]
            default = spec.default
            unit = f" [{spec.unit}]" if spec.unit else ""
            lines.append(f"  {key} = {default}{unit}  {spec.help}")
        lines.append("")
    return "\n".join(lines)
