import math

import numpy as np
import pytest

from nefsim.rover import (
    RoverNetConfig,
    RoverParams,
    RoverState,
    RoverTaskConfig,
    accel_law,
    build_rover_net,
    compile_rover_net,
    law_fidelity,
    rover_dynamics_step,
    run_rover_task,
    steer_law,
    world_to_body,
)

CI_CFG = RoverNetConfig(n_neurons=256)


class TestLaws:
    def test_accel_at_target(self):
        assert accel_law(0.0, 0.0, 2.0) == 0.0

    def test_accel_clip(self):
        assert accel_law(3.0, 4.0, 2.0) == 2.0

    def test_accel_inside_clip(self):
        assert accel_law(0.3, 0.4, 2.0) == pytest.approx(1.0)

    def test_steer_aligned(self):
        assert steer_law(0.0, 1.0, 0.0, 1.5) == 0.0

    def test_steer_quarter_left(self):
        assert steer_law(-1.0, 0.0, 0.0, 1.0) == pytest.approx(math.pi / 2)

    def test_steer_angle_offset(self):
        assert steer_law(0.0, 1.0, 0.3, 2.0) == pytest.approx(-0.6)


class TestPlant:
    def test_rest_stays_at_rest(self):
        s = rover_dynamics_step(RoverState(), 0.0, 0.0, 0.001)
        assert (s.x, s.y, s.heading, s.steer, s.speed) == (0, 0, 0, 0, 0)
        assert s.t == pytest.approx(0.001)

    def test_straight_line(self):
        s = RoverState(speed=1.0)
        params = RoverParams(drag=0.0)
        for _ in range(1000):
            s = rover_dynamics_step(s, 0.0, 0.0, 0.001, params)
        assert s.heading == 0.0
        assert s.y == 0.0
        assert s.x == pytest.approx(1.0, rel=1e-9)

    def test_circle_radius(self):
        # constant steering at constant speed: circle of radius L/tan(q)
        params = RoverParams(drag=0.0, max_steer=0.6)
        q = 0.4
        s = RoverState(speed=1.0, steer=q)
        L = params.wheelbase
        radius = L / math.tan(q)
        n_steps = int(round(2 * math.pi * radius / 1.0 / 0.001))
        pts = []
        for _ in range(n_steps):
            s = rover_dynamics_step(s, 0.0, 0.0, 0.001, params)
            pts.append((s.x, s.y))
        assert s.heading == pytest.approx(2 * math.pi, rel=0.01)
        pts = np.array(pts)
        center = pts.mean(axis=0)
        radii = np.linalg.norm(pts - center, axis=1)
        assert radii.mean() == pytest.approx(radius, rel=0.01)

    def test_steering_clamp(self):
        s = RoverState()
        for _ in range(3000):
            s = rover_dynamics_step(s, 0.0, 10.0, 0.001)
        assert s.steer == pytest.approx(0.6)

    def test_speed_drag_equilibrium(self):
        params = RoverParams()
        s = RoverState()
        for _ in range(20000):
            s = rover_dynamics_step(s, 1.0, 0.0, 0.001, params)
        assert s.speed <= params.accel_gain * 1.0 / params.drag * 1.01


class TestWorldToBody:
    def test_forward_is_plus_y(self):
        # heading = +y in world: target straight ahead maps to (0, 2)
        tx, ty = world_to_body((0.0, 2.0), 0.0, 0.0, math.pi / 2)
        assert (tx, ty) == pytest.approx((0.0, 2.0))

    def test_at_rover(self):
        assert world_to_body((1.0, 1.0), 1.0, 1.0, 0.3) == pytest.approx((0.0, 0.0))

    def test_rotation_consistency(self):
        # rover rotated 90 deg, target 1 m straight ahead in world terms
        tx, ty = world_to_body((0.0, 1.0), 0.0, 0.0, math.pi / 2)
        assert math.atan2(-tx, ty) == pytest.approx(0.0, abs=1e-12)

    def test_right_is_plus_x(self):
        tx, ty = world_to_body((1.0, 0.0), 0.0, 0.0, math.pi / 2)
        assert tx == pytest.approx(1.0)
        assert ty == pytest.approx(0.0, abs=1e-12)


class TestNetwork:
    def test_compiles_on_both_backends(self):
        for backend in ("reference", "fixed"):
            model = compile_rover_net(CI_CFG, backend, seed=0)
            assert {e.id for e in model.ensembles} == {"accel_ens", "steer_ens"}
            assert len(model.connections) == 5

    def test_two_separate_ensembles(self):
        g = build_rover_net(CI_CFG, seed=0)
        accel = g.ensemble("accel_ens")
        steer = g.ensemble("steer_ens")
        assert accel.dimensions == 2
        assert steer.dimensions == 3

    def test_law_fidelity_ci_preset(self):
        cfg = RoverNetConfig(n_neurons=512)
        accel_rmse, steer_rmse = law_fidelity(cfg, seed=0)
        assert accel_rmse < 0.10 * cfg.k_a
        assert steer_rmse < 0.15 * cfg.k_p * math.pi


class TestClosedLoop:
    def test_immediate_capture_at_spawn(self):
        # seeded spawn stream puts some target close to the origin eventually;
        # force the degenerate case directly instead
        task = RoverTaskConfig(n_targets=1, duration_cap=1.0, spawn_radius=1e-6)
        run = run_rover_task(task, CI_CFG, seed=0, controller="analytic")
        assert run.captures[0].t_capture == 0.0

    def test_analytic_oracle_captures(self):
        task = RoverTaskConfig(n_targets=4, duration_cap=30.0)
        run = run_rover_task(task, CI_CFG, seed=1, controller="analytic")
        assert run.all_captured
        assert all(c.t_capture <= 30.0 for c in run.captures)

    def test_neural_matches_oracle_captures(self):
        task = RoverTaskConfig(n_targets=4, duration_cap=30.0)
        oracle = run_rover_task(task, CI_CFG, seed=2, controller="analytic")
        neural = run_rover_task(task, CI_CFG, seed=2, controller="neural")
        assert oracle.all_captured
        assert neural.all_captured

    def test_speed_bound(self):
        task = RoverTaskConfig(n_targets=3, duration_cap=30.0)
        run = run_rover_task(task, CI_CFG, seed=3, controller="neural")
        vmax = max(row[5] for row in run.trajectory)
        cfg = CI_CFG
        params = RoverParams(max_steer=cfg.max_steer)
        assert vmax <= params.accel_gain * cfg.k_a / params.drag * 1.01

    def test_heading_convergence_analytic(self):
        # with the analytic law and a fixed target, the bearing error decays
        # during the approach (after the steering settles, until the capture
        # distance, where the task would warp the target)
        params = RoverParams()
        cfg = CI_CFG
        s = RoverState(x=0.0, y=0.0, heading=1.1)
        target = (3.0, 0.5)
        bearings = []
        for i in range(6000):
            tx, ty = world_to_body(target, s.x, s.y, s.heading)
            if math.hypot(tx, ty) < 0.5:
                break
            ua = accel_law(tx, ty, cfg.k_a)
            us = steer_law(tx, ty, s.steer, cfg.k_p)
            s = rover_dynamics_step(s, ua, us, 0.001, params)
            if i % 100 == 0 and i >= 1000:
                bearings.append(abs(math.atan2(-tx, ty)))
        assert len(bearings) >= 5
        # decays in envelope: the alignment dynamics may ring once through
        # zero, but the late bearing error sits far below the early one
        half = len(bearings) // 2
        assert max(bearings[half:]) < 0.5 * max(bearings[:half])
        assert bearings[-1] < 0.05

    def test_network_tracks_analytic_commands(self):
        # time-averaged gap between decoded and analytic torques during a run
        task = RoverTaskConfig(n_targets=3, duration_cap=30.0,
                               traj_sample_every=0.001)
        cfg = RoverNetConfig(n_neurons=512)
        run = run_rover_task(task, cfg, seed=4, controller="neural")
        rows = np.array(run.trajectory)
        t, x, y, heading, q, v, tx_w, ty_w, u_steer, u_accel = rows.T
        gaps_a, gaps_s = [], []
        for i in range(200, len(rows)):
            tx, ty = world_to_body((tx_w[i], ty_w[i]), x[i], y[i], heading[i])
            gaps_a.append(abs(u_accel[i] - accel_law(tx, ty, cfg.k_a)))
            gaps_s.append(abs(u_steer[i] - steer_law(tx, ty, q[i], cfg.k_p)))
        assert np.mean(gaps_a) < 0.10 * cfg.k_a
        assert np.mean(gaps_s) < 0.10 * (2 * cfg.k_p * math.pi)

    def test_timeout_recorded_not_fatal(self):
        task = RoverTaskConfig(n_targets=2, duration_cap=0.01, spawn_radius=3.0)
        run = run_rover_task(task, CI_CFG, seed=5, controller="analytic")
        assert len(run.captures) == 2
        assert all(math.isnan(c.t_capture) for c in run.captures)

    def test_deterministic_trajectories(self):
        task = RoverTaskConfig(n_targets=2, duration_cap=10.0)
        a = run_rover_task(task, CI_CFG, seed=6, controller="neural")
        b = run_rover_task(task, CI_CFG, seed=6, controller="neural")
        assert a.trajectory == b.trajectory
        assert [(c.spawn_x, c.spawn_y, c.t_capture) for c in a.captures] == \
               [(c.spawn_x, c.spawn_y, c.t_capture) for c in b.captures]
