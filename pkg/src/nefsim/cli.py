"""Command-line entry point: experiment runners and all file emission.

Subcommands: tune, solve, convert, arm, rover, bench.  Every run writes its
CSV outputs plus `effective_config.txt` into the --out directory and nothing
anywhere else.  CSV floats use repr (shortest round-trip), so identical
(subcommand, config, seed) triples produce byte-identical files.

Exit codes: 0 success, 1 validation/config error, 2 runtime divergence,
64 usage error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import arm as arm_mod
from . import convert as conv_mod
from . import rover as rover_mod
from .build import FIXED_POINT, REFERENCE, activity_matrix, compile_graph, \
    sample_eval_points, solve_decoders
from .config import GLOBAL, config_reference, load_config
from .engine import Simulator
from .errors import (
    BuildError,
    ConfigError,
    DivergedLearningError,
    NefError,
    NonFiniteSignalError,
    NonFiniteStateError,
)
from .graph import Ensemble, ModelGraph
from .neurons import (
    LIF,
    NeuronParams,
    QuantizationSpec,
    RATE_LIF,
    SPIKING_RELU,
    measured_rate_curve,
    rate,
)
from .seeding import stream

USAGE_EXIT = 64


def fmt(x):
    """Shortest round-trip decimal for a float (nan prints as 'nan')."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def write_probe_csv(path, tables):
    """Probe dump: t,probe_id,dim,value with t at full precision."""
    rows = []
    for pid in sorted(tables):
        table = tables[pid]
        for t, values in zip(table.times, table.values):
            for dim, value in enumerate(values):
                rows.append((t, pid, str(dim), value))
    write_csv(path, ["t", "probe_id", "dim", "value"],
              [(fmt(t), pid, dim, fmt(v)) for (t, pid, dim, v) in rows])


def _echo_config(cfg, out_dir):
    with open(os.path.join(out_dir, "effective_config.txt"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.render_effective())


def _neuron_params(cfg):
    return NeuronParams(
        tau_rc=cfg.get("neurons", "tau_rc"),
        tau_ref=cfg.get("neurons", "tau_ref"),
        amplitude=cfg.get("neurons", "amplitude"),
    )


def _qspec(cfg):
    return QuantizationSpec(
        weight_mantissa_bits=cfg.get("neurons", "weight_mantissa_bits"),
        state_bits=cfg.get("neurons", "state_bits"),
        dt=cfg.get(GLOBAL, "dt"),
    )


def run_tune(cfg, seed, out_dir):
    params = _neuron_params(cfg)
    model = LIF if cfg.get("neurons", "tune_model") == "lif" else SPIKING_RELU
    J = np.linspace(cfg.get("neurons", "tune_j_min"),
                    cfg.get("neurons", "tune_j_max"),
                    cfg.get("neurons", "tune_points"))
    dt = cfg.get(GLOBAL, "dt")
    rate_float = rate(model, J, params)
    rate_q = measured_rate_curve(
        J, dt, params, model, qspec=_qspec(cfg),
        settle=cfg.get("neurons", "tune_settle"),
        window=cfg.get("neurons", "tune_window"))
    write_csv(os.path.join(out_dir, "tune.csv"),
              ["J", "rate_float", "rate_quantized"],
              zip(J, rate_float, rate_q))


_SOLVE_FUNCTIONS = {
    "identity": lambda x: x,
    "square": lambda x: np.asarray(x) ** 2,
}


def run_solve(cfg, seed, out_dir):
    fn_name = cfg.get("neurons", "solve_function")
    if fn_name not in _SOLVE_FUNCTIONS:
        raise BuildError(f"unknown solve_function {fn_name!r}")
    fn = _SOLVE_FUNCTIONS[fn_name]
    n = cfg.get("neurons", "solve_n_neurons")
    graph = ModelGraph(dt=cfg.get(GLOBAL, "dt"), neuron_params=_neuron_params(cfg))
    graph.add_ensemble(Ensemble("ens", n_neurons=n, dimensions=1,
                                neuron_model=RATE_LIF, seed=seed))
    model = compile_graph(graph, seed=seed)
    ens = model.ensemble("ens")
    rng = stream(seed, "solve", "eval")
    n_eval = max(cfg.get("neurons", "eval_points_min"),
                 cfg.get("neurons", "eval_points_per_neuron") * n)
    pts = sample_eval_points(n_eval, 1, 1.0, rng)
    A = activity_matrix(ens, pts)
    d = solve_decoders(A, fn(pts), reg=cfg.get("neurons", "reg"))
    x = np.linspace(-1.0, 1.0, cfg.get("neurons", "solve_points"))[:, None]
    decoded = activity_matrix(ens, x) @ d
    write_csv(os.path.join(out_dir, "solve.csv"), ["x", "target", "decoded"],
              zip(x[:, 0], fn(x)[:, 0], decoded[:, 0]))


def run_convert(cfg, seed, out_dir):
    net_file = cfg.get("convert", "net_file")
    if net_file:
        net = conv_mod.read_net_file(net_file)
    else:
        sizes = tuple(int(tok) for tok in cfg.get("convert", "layers").split())
        net = conv_mod.random_dense_net(sizes, stream(seed, "convert", "net"))
    tau_inter = cfg.get("convert", "inter_layer_tau")
    flavor = (conv_mod.SPIKING_QUANTIZED
              if cfg.get(GLOBAL, "backend") == FIXED_POINT else conv_mod.SPIKING)
    ccfg = conv_mod.ConversionConfig(
        scale_firing_rates=cfg.get("convert", "scale_firing_rates"),
        output_tau=cfg.get("convert", "output_tau"),
        inter_layer_tau=tau_inter if tau_inter > 0 else None,
        flavor=flavor,
        presentation_time=cfg.get("convert", "presentation_time"),
        dt=cfg.get(GLOBAL, "dt"),
    )
    rng = stream(seed, "convert", "inputs")
    scale = cfg.get("convert", "input_scale")
    inputs = scale * rng.uniform(-1.0, 1.0, (cfg.get("convert", "n_inputs"),
                                             net.sizes[0]))
    report = conv_mod.fidelity_report(net, ccfg, inputs, seed=seed)
    rows = []
    for r in report.rows:
        for dim in range(len(r.rate_out)):
            rows.append((str(r.input_index), str(dim), fmt(r.rate_out[dim]),
                         fmt(r.spike_out[dim]), fmt(r.abs_err[dim])))
    write_csv(os.path.join(out_dir, "fidelity.csv"),
              ["input_idx", "dim", "rate_out", "spike_out", "abs_err"], rows)


def _arm_config(cfg):
    limits = tuple((-cfg.get("arm", k), cfg.get("arm", k))
                   for k in ("limit_q1", "limit_q2", "limit_q3"))
    return arm_mod.ArmConfig(
        payload_mass=cfg.get("arm", "payload_mass"),
        kp=cfg.get("arm", "kp"), kv=cfg.get("arm", "kv"),
        ki=cfg.get("arm", "ki"), windup=cfg.get("arm", "windup"),
        null_kp=cfg.get("arm", "null_kp"), null_kv=cfg.get("arm", "null_kv"),
        joint_limits=limits,
        sigma_min=cfg.get("arm", "sigma_min"),
        path_tau=cfg.get("arm", "path_tau"),
        vel_bound=cfg.get("arm", "vel_bound"),
        dt=cfg.get(GLOBAL, "dt"),
        n_neurons=cfg.get("arm", "n_neurons"),
        kappa=cfg.get("arm", "kappa"),
        tau_input=cfg.get("arm", "tau_input"),
        tau_learn=cfg.get("arm", "tau_learn"),
        max_rate_range=(cfg.get("arm", "max_rate_lo"), cfg.get("arm", "max_rate_hi")),
        u_adapt_limit=cfg.get("arm", "u_adapt_limit"),
        lengths=(cfg.get("arm", "l1"), cfg.get("arm", "l2"), cfg.get("arm", "l3")),
        masses=(cfg.get("arm", "m1"), cfg.get("arm", "m2"), cfg.get("arm", "m3")),
        gravity=cfg.get("arm", "gravity"),
    )


def _arm_task(cfg):
    return arm_mod.ReachTask(
        start_q=(cfg.get("arm", "start_q1"), cfg.get("arm", "start_q2"),
                 cfg.get("arm", "start_q3")),
        target=(cfg.get("arm", "target_x"), cfg.get("arm", "target_y")),
        duration=cfg.get("arm", "reach_duration"),
        n_reaches=cfg.get("arm", "n_reaches"),
        n_sessions=cfg.get("arm", "n_sessions"),
    )


def run_arm(cfg, seed, out_dir):
    acfg = _arm_config(cfg)
    task = _arm_task(cfg)
    trajectory = [] if cfg.get("arm", "emit_trajectory") else None
    records, _ = arm_mod.run_arm_protocol(acfg, task, seed, trajectory=trajectory)
    write_csv(os.path.join(out_dir, "arm_trials.csv"),
              ["session", "trial", "controller", "error_raw", "error_pct"],
              [(str(r.session), str(r.trial), r.controller,
                fmt(r.error_raw), fmt(r.error_pct)) for r in records])
    if trajectory is not None:
        write_csv(os.path.join(out_dir, "arm_traj.csv"),
                  ["t", "q1", "q2", "q3", "x", "y",
                   "u1", "u2", "u3", "ua1", "ua2", "ua3"],
                  trajectory)


def _rover_net_config(cfg, n_neurons=None):
    return rover_mod.RoverNetConfig(
        n_neurons=n_neurons if n_neurons is not None else cfg.get("rover", "n_neurons"),
        radius=cfg.get("rover", "radius"),
        k_a=cfg.get("rover", "k_a"), k_p=cfg.get("rover", "k_p"),
        input_tau=cfg.get("rover", "input_tau"),
        steer_input_tau=cfg.get("rover", "steer_input_tau"),
        output_tau=cfg.get("rover", "output_tau"),
        max_rate_range=(cfg.get("rover", "max_rate_lo"), cfg.get("rover", "max_rate_hi")),
        exclusion=cfg.get("rover", "exclusion"),
        dt=cfg.get(GLOBAL, "dt"),
        max_steer=cfg.get("rover", "max_steer"),
    )


def _rover_params(cfg):
    return rover_mod.RoverParams(
        wheelbase=cfg.get("rover", "wheelbase"),
        accel_gain=cfg.get("rover", "accel_gain"),
        drag=cfg.get("rover", "drag"),
        steer_gain=cfg.get("rover", "steer_gain"),
        max_steer=cfg.get("rover", "max_steer"),
    )


def run_rover(cfg, seed, out_dir):
    task = rover_mod.RoverTaskConfig(
        n_targets=cfg.get("rover", "n_targets"),
        duration_cap=cfg.get("rover", "duration_cap"),
        capture_radius=cfg.get("rover", "capture_radius"),
        spawn_radius=cfg.get("rover", "spawn_radius"),
        noise_sigma=cfg.get("rover", "noise_sigma"),
        traj_sample_every=cfg.get("rover", "traj_sample_every"),
    )
    run = rover_mod.run_rover_task(
        task, _rover_net_config(cfg), seed,
        backend=cfg.get(GLOBAL, "backend"),
        controller=cfg.get("rover", "controller"),
        params=_rover_params(cfg),
    )
    write_csv(os.path.join(out_dir, "rover_traj.csv"),
              ["t", "x", "y", "theta", "q", "v",
               "target_x", "target_y", "u_steer", "u_accel"],
              run.trajectory)
    write_csv(os.path.join(out_dir, "rover_captures.csv"),
              ["target_idx", "spawn_x", "spawn_y", "t_capture"],
              [(str(c.target_index), fmt(c.spawn_x), fmt(c.spawn_y),
                fmt(c.t_capture)) for c in run.captures])


def run_bench(cfg, seed, out_dir):
    """Wall-clock per simulated second for each backend at the rover's two
    neuron-count presets.  The CSV describes what ran (deterministic); the
    measured timings go to bench_timings.txt, which is wall-clock data and
    not byte-reproducible by nature."""
    duration = cfg.get("rover", "bench_duration")
    dt = cfg.get(GLOBAL, "dt")
    n_steps = int(round(duration / dt))
    presets = (cfg.get("rover", "bench_preset_small"),
               cfg.get("rover", "bench_preset_large"))
    rows, timing_lines = [], []
    for n_neurons in presets:
        for backend in (REFERENCE, FIXED_POINT):
            net_cfg = _rover_net_config(cfg, n_neurons=n_neurons)
            t0 = time.perf_counter()
            sim = Simulator(rover_mod.compile_rover_net(net_cfg, backend, seed=seed))
            build_s = time.perf_counter() - t0
            inputs = {"target_in": (1.0, 1.0), "steer_in": (0.0,)}
            t0 = time.perf_counter()
            for _ in range(n_steps):
                sim.step(inputs)
            run_s = time.perf_counter() - t0
            rows.append((backend, str(n_neurons), str(n_steps), fmt(dt)))
            timing_lines.append(
                f"{backend} n={n_neurons}: build {build_s:.3f}s, "
                f"run {run_s:.3f}s for {duration}s simulated "
                f"({run_s / duration:.3f}s per simulated second)"
            )
    write_csv(os.path.join(out_dir, "bench.csv"),
              ["backend", "n_neurons", "n_steps", "dt"], rows)
    with open(os.path.join(out_dir, "bench_timings.txt"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(timing_lines) + "\n")


_RUNNERS = {
    "tune": run_tune,
    "solve": run_solve,
    "convert": run_convert,
    "arm": run_arm,
    "rover": run_rover,
    "bench": run_bench,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    parser = _Parser(
        prog="nefsim",
        description="Spiking network compiler/simulator benchmarks.",
        epilog="Configuration keys (defaults shown):\n\n" + config_reference(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command")
    for name, help_text in [
        ("tune", "dump float and quantized rate-curve sweeps"),
        ("solve", "decode a named function and dump x,target,decoded"),
        ("convert", "dense-net conversion fidelity report"),
        ("arm", "adaptive-arm reach protocol"),
        ("rover", "closed-loop rover target seeking"),
        ("bench", "wall-clock per simulated second per backend/preset"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="configuration file")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get(GLOBAL, "seed")
        out_dir = args.out if args.out is not None else cfg.get(GLOBAL, "out_dir")
        os.makedirs(out_dir, exist_ok=True)
        _echo_config(cfg, out_dir)
        _RUNNERS[args.command](cfg, seed, out_dir)
    except (DivergedLearningError, NonFiniteSignalError, NonFiniteStateError) as exc:
        print(f"runtime divergence: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, BuildError, NefError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def console_entry():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    console_entry()
