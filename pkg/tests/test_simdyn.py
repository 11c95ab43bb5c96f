import dataclasses

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

import cotap
from conftest import L_POSE, random_config
from cotap import (
    BasePose,
    LengthMismatch,
    NumericalDivergence,
    SimState,
    avg_upper_torque,
    ee_tracking_error,
    gravity_torques,
    keypoint_to_torso_relative,
    keypoint_to_world,
    mass_matrix,
    run_scenario,
    step,
    torso_velocity_error,
    upper_tracking_error,
    write_trace_csv,
)
from cotap.kinematics import KinematicChain, LinkSpec
from cotap.simdyn import HeldFeedback, mass_matrix_entries


def pendulum_chain(mass=1.5, length=0.4):
    return KinematicChain(
        links=(
            LinkSpec(
                name="rod",
                parent="base",
                joint_axis=np.array([0.0, 1.0, 0.0]),
                origin_offset=np.zeros(3),
                mass=mass,
                com_offset=np.array([length, 0.0, 0.0]),
                joint_limits=(-6.0, 6.0),
            ),
        ),
        base_link="base",
        end_effectors=(("tip", "rod", np.array([length, 0.0, 0.0])),),
    )


class TestMassMatrix:
    def test_point_mass_pendulum(self, base):
        m, L = 1.5, 0.4
        M = mass_matrix(pendulum_chain(m, L), [0.3])
        assert M.entries[0, 0] == pytest.approx(m * L * L, rel=1e-12)

    def test_one_dof_configuration_independent(self, base):
        chain = pendulum_chain()
        vals = [mass_matrix(chain, [q]).entries[0, 0] for q in (-1.0, 0.0, 0.7, 2.0)]
        assert np.allclose(vals, vals[0], rtol=1e-12)

    def test_matches_kinetic_energy_oracle(self, chain, base):
        # M_ij recovered from T = m/2 |v_com|^2 with velocities by central FD
        rng = np.random.default_rng(23)
        eps = 1e-6

        def kinetic(q, qd):
            from cotap.kinematics import forward_kinematics

            total = 0.0
            for link in chain.links:
                if link.mass <= 0.0:
                    continue

                def com(qv):
                    f = forward_kinematics(chain, base, qv)[link.name]
                    return f.position + f.rotation @ link.com_offset

                v = (com(q + eps * qd) - com(q - eps * qd)) / (2 * eps)
                total += 0.5 * link.mass * float(v @ v)
            return total

        for _ in range(5):
            q = random_config(rng, chain)
            M = mass_matrix_entries(chain, q)
            n = chain.dof
            oracle = np.zeros((n, n))
            e = np.eye(n)
            for i in range(n):
                oracle[i, i] = 2.0 * kinetic(q, e[i])
            for i in range(n):
                for j in range(i + 1, n):
                    tij = kinetic(q, e[i] + e[j])
                    oracle[i, j] = oracle[j, i] = tij - 0.5 * oracle[i, i] - 0.5 * oracle[j, j]
            assert np.max(np.abs(M - oracle)) < 1e-6

    def test_spd_at_generic_posture(self, chain):
        M = mass_matrix(chain, L_POSE)
        assert np.linalg.eigvalsh(M.entries)[0] > 0.0


class TestStep:
    def test_equilibrium_under_exact_gravity_compensation(self, chain, base):
        state = SimState.initial(L_POSE)
        tau = -gravity_torques(chain, base, L_POSE)
        for _ in range(100):
            state = step(chain, state, tau, (), 0.001, base=base)
        assert np.linalg.norm(state.qd) < 1e-8

    def test_dt_range_enforced(self, chain, base):
        state = SimState.initial(L_POSE)
        with pytest.raises(ValueError):
            step(chain, state, np.zeros(8), (), 0.01, base=base)

    def test_divergence_guard(self, chain, base):
        state = SimState.initial(L_POSE)
        with pytest.raises(NumericalDivergence):
            step(chain, state, np.full(8, 1e9), (), 0.005, base=base, clamp_limits=False)

    def test_joint_limits_clamp_and_zero_velocity(self, base):
        chain = pendulum_chain()
        state = SimState.initial([0.0])
        # push hard toward the upper stop
        for _ in range(2000):
            state = step(chain, state, np.array([50.0]), (), 0.002, base=base, armature=0.1)
        lo, hi = chain.limits_array()
        assert state.q[0] == pytest.approx(hi[0])
        assert state.qd[0] == 0.0

    def test_held_feedback_matches_manual_law(self, chain, base):
        rng = np.random.default_rng(3)
        K = np.diag(rng.uniform(10, 100, 8))
        D = np.diag(rng.uniform(1, 10, 8))
        q_t = L_POSE + 0.05 * rng.standard_normal(8)
        held = HeldFeedback(K, D, q_t, np.zeros(8), np.zeros(8))
        q = L_POSE.copy()
        qd = 0.01 * rng.standard_normal(8)
        assert np.allclose(held.torque(q, qd), K @ (q_t - q) + D @ (0.0 - qd), atol=1e-15)


class TestImpulseResponse:
    def test_returns_without_sustained_oscillation(self):
        # impact then release at critical damping: peak decays, no ringing
        cfg = cotap.load_scenario(cotap.data_path("scenarios/impact_stance.toml"))
        res = run_scenario(cfg)
        err = np.linalg.norm(res.ee_err, axis=1)
        t = res.t
        peak = err.max()
        # windowed maxima strictly shrink after the impact window
        w1 = err[(t >= 1.0) & (t < 2.0)].max()
        w2 = err[(t >= 2.0) & (t < 3.0)].max()
        w3 = err[(t >= 3.0) & (t < 4.0)].max()
        assert peak == pytest.approx(w1)
        assert w2 < 0.5 * w1
        assert w3 < 0.5 * w2
        assert err[-1] < 5e-3


class TestMetrics:
    def test_identical_series_zero(self):
        a = np.random.default_rng(0).standard_normal((10, 3))
        assert torso_velocity_error(a, a) == 0.0
        assert ee_tracking_error(a, a) == 0.0
        assert upper_tracking_error(a, a) == 0.0

    def test_single_sample_two_norm(self):
        assert ee_tracking_error(np.array([[3.0, 4.0, 0.0]]), np.zeros((1, 3))) == pytest.approx(5.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((50, 4))
        b = rng.standard_normal((50, 4))
        oracle = sum(np.linalg.norm(a[i] - b[i]) for i in range(50)) / 50
        assert upper_tracking_error(a, b) == pytest.approx(oracle, abs=1e-12)
        tau = rng.standard_normal((50, 8))
        oracle = sum(np.linalg.norm(tau[i]) for i in range(50)) / 50
        assert avg_upper_torque(tau) == pytest.approx(oracle, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            torso_velocity_error(np.zeros((3, 3)), np.zeros((4, 3)))

    def test_empty_series(self):
        with pytest.raises(LengthMismatch):
            avg_upper_torque(np.zeros((0, 8)))


class TestKeypointTransforms:
    def test_identity_torso_is_identity(self):
        torso = BasePose.identity()
        p, v = np.array([0.3, 0.1, 0.9]), np.array([0.2, -0.1, 0.05])
        p_rel, v_rel = keypoint_to_torso_relative(p, v, torso)
        assert np.allclose(p_rel, p) and np.allclose(v_rel, v)

    def test_pure_translation_reduction(self):
        # static world keypoint, translating torso: v_rel = -R^-1 v_torso
        torso = BasePose(
            position=np.array([1.0, 0.0, 0.0]),
            orientation=np.array([1.0, 0.0, 0.0, 0.0]),
            linear_velocity=np.array([0.5, 0.0, 0.0]),
        )
        _, v_rel = keypoint_to_torso_relative(np.array([2.0, 0.0, 0.0]), np.zeros(3), torso)
        assert np.allclose(v_rel, [-0.5, 0.0, 0.0])

    def test_rotating_torso_reduction(self):
        # static relative point: v_world = R (omega x p_rel) + v_torso
        quat = Rotation.from_euler("zyx", [0.4, -0.2, 0.1]).as_quat()[[3, 0, 1, 2]]
        torso = BasePose(
            position=np.array([0.1, 0.2, 0.3]),
            orientation=quat,
            linear_velocity=np.array([0.3, 0.0, -0.1]),
            angular_velocity=np.array([0.0, 0.0, 1.2]),
        )
        p_rel = np.array([0.5, 0.0, 0.2])
        _, v = keypoint_to_world(p_rel, np.zeros(3), torso)
        R = torso.rotation
        assert np.allclose(v, R @ np.cross(torso.angular_velocity, p_rel) + torso.linear_velocity)

    def test_round_trip_is_exact(self):
        rng = np.random.default_rng(44)
        for _ in range(200):
            quat = rng.standard_normal(4)
            quat /= np.linalg.norm(quat)
            torso = BasePose(
                position=rng.standard_normal(3),
                orientation=quat,
                linear_velocity=rng.standard_normal(3),
                angular_velocity=rng.standard_normal(3),
            )
            p, v = rng.standard_normal(3), rng.standard_normal(3)
            p_rel, v_rel = keypoint_to_torso_relative(p, v, torso)
            p2, v2 = keypoint_to_world(p_rel, v_rel, torso)
            assert np.max(np.abs(p2 - p)) < 1e-12
            assert np.max(np.abs(v2 - v)) < 1e-12


class TestRunScenario:
    def test_deterministic_traces(self, tmp_path):
        cfg = cotap.load_scenario(cotap.data_path("scenarios/regulation.toml"))
        a = run_scenario(cfg)
        b = run_scenario(cfg)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trace_csv(a, pa)
        write_trace_csv(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_regulation_settles(self):
        cfg = cotap.load_scenario(cotap.data_path("scenarios/regulation.toml"))
        res = run_scenario(cfg)
        assert res.steady["ee_error_norm"] < 1e-3
        assert np.linalg.norm(res.ee_err[-1]) < 1e-3

    def test_torso_metric_from_script(self):
        cfg = cotap.load_scenario(cotap.data_path("scenarios/regulation.toml"))
        res = run_scenario(cfg)
        assert res.metrics.e_torso == pytest.approx(0.2, abs=1e-12)

    def test_torso_metric_not_applicable_without_script(self):
        cfg = cotap.load_scenario(cotap.data_path("scenarios/constant_load_cotap.toml"))
        cfg = dataclasses.replace(cfg, duration=1.0)
        res = run_scenario(cfg)
        assert res.metrics.e_torso is None

    def test_integrator_convergence_on_halved_dt(self):
        cfg = cotap.load_scenario(cotap.data_path("scenarios/constant_load_cotap.toml"))
        cfg = dataclasses.replace(cfg, duration=4.0)
        z1 = run_scenario(cfg).steady["ee_error_z"]
        z2 = run_scenario(dataclasses.replace(cfg, dt=0.0005)).steady["ee_error_z"]
        assert abs(z2 - z1) / abs(z1) < 0.005

    def test_cotap_facet_composition(self):
        # reference generator feeding IK targets into the modulated torque law:
        # the reference still converges to the ideal deflection, while the
        # compliant tracking underneath adds its own give, so the plant sags
        # past the reference.
        cfg = cotap.load_scenario(cotap.data_path("scenarios/constant_load_facet.toml"))
        ctl = dataclasses.replace(cfg.controller, kind="cotap_facet", alpha=1.0)
        res = run_scenario(dataclasses.replace(cfg, controller=ctl))
        assert abs(res.steady["ref_error_z"] - 0.10) / 0.10 < 0.02
        assert res.steady["ee_error_z"] > res.steady["ref_error_z"]

    def test_divergence_reports_step_index(self):
        cfg = cotap.load_scenario(cotap.data_path("scenarios/impact_stance.toml"))
        # pathological: no damping to speak of and a huge impact
        forces = (dataclasses.replace(cfg.forces[0], vector=np.array([3e5, 0.0, 0.0])),)
        bad = dataclasses.replace(cfg, forces=forces, duration=2.0)
        with pytest.raises(NumericalDivergence) as exc_info:
            run_scenario(bad)
        assert exc_info.value.step_index is not None
