import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import L_POSE, random_config
from cotap import (
    BasePose,
    DimensionMismatch,
    KinematicChain,
    LinkSpec,
    ParseError,
    UnknownEndEffector,
    ValidationError,
    base_jacobian,
    end_effector_position,
    forward_kinematics,
    gravity_torques,
    load_chain,
    position_jacobian,
    split_jacobian,
)
from cotap.kinematics import JointLimitWarning


def single_link_chain(axis, length, mass=0.0, com=None, limits=(-3.0, 3.0)):
    return KinematicChain(
        links=(
            LinkSpec(
                name="link",
                parent="base",
                joint_axis=np.asarray(axis, dtype=float),
                origin_offset=np.zeros(3),
                mass=mass,
                com_offset=np.zeros(3) if com is None else np.asarray(com, dtype=float),
                joint_limits=limits,
            ),
        ),
        base_link="base",
        end_effectors=(("tip", "link", np.array([length, 0.0, 0.0])),),
    )


def fk_oracle(chain, base, q):
    """Independent per-link homogeneous-transform composition."""
    T = {chain.base_link: np.eye(4)}
    T[chain.base_link][:3, :3] = Rotation.from_quat(
        np.roll(base.orientation, -1)  # wxyz -> xyzw
    ).as_matrix()
    T[chain.base_link][:3, 3] = base.position
    for i, link in enumerate(chain.links):
        A = np.eye(4)
        A[:3, 3] = link.origin_offset
        B = np.eye(4)
        B[:3, :3] = Rotation.from_rotvec(np.asarray(link.joint_axis) * q[i]).as_matrix()
        T[link.name] = T[link.parent] @ A @ B
    return T


class TestForwardKinematics:
    def test_zero_pose_matches_documented_offsets(self, chain, base):
        frames = forward_kinematics(chain, base, np.zeros(8))
        assert np.allclose(end_effector_position(chain, frames, "left_hand"), [0.0, 0.22, -0.25])
        assert np.allclose(end_effector_position(chain, frames, "right_hand"), [0.0, -0.22, -0.25])

    def test_base_frame_equals_base_pose(self, chain):
        pose = BasePose(
            position=np.array([0.5, -0.2, 1.0]),
            orientation=Rotation.from_euler("z", 0.4).as_quat()[[3, 0, 1, 2]],
        )
        frames = forward_kinematics(chain, pose, np.zeros(8))
        assert np.allclose(frames[chain.base_link].position, pose.position)
        assert np.allclose(frames[chain.base_link].rotation, pose.rotation)

    def test_planar_rotation_single_link(self, base):
        chain = single_link_chain([0.0, 0.0, 1.0], length=0.5)
        frames = forward_kinematics(chain, base, [np.pi / 2])
        assert np.allclose(end_effector_position(chain, frames, "tip"), [0.0, 0.5, 0.0], atol=1e-15)

    def test_matches_transform_product_oracle(self, chain):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            q = random_config(rng, chain)
            quat = Rotation.random(random_state=np.random.RandomState(int(rng.integers(1 << 30)))).as_quat()
            pose = BasePose(position=rng.standard_normal(3), orientation=quat[[3, 0, 1, 2]])
            frames = forward_kinematics(chain, pose, q)
            oracle = fk_oracle(chain, pose, q)
            for name, frame in frames.items():
                assert np.allclose(frame.position, oracle[name][:3, 3], atol=1e-12)
                assert np.allclose(frame.rotation, oracle[name][:3, :3], atol=1e-12)

    def test_warns_outside_limits(self, chain, base):
        q = np.zeros(8)
        q[0] = chain.links[0].joint_limits[1] + 0.2
        with pytest.warns(JointLimitWarning):
            forward_kinematics(chain, base, q)

    def test_errors_beyond_pi_excess(self, chain, base):
        q = np.zeros(8)
        q[0] = chain.links[0].joint_limits[1] + np.pi + 0.1
        with pytest.raises(ValueError):
            forward_kinematics(chain, base, q)

    def test_wrong_dof_count(self, chain, base):
        with pytest.raises(DimensionMismatch):
            forward_kinematics(chain, base, np.zeros(7))

    def test_invariant_under_dummy_link(self, chain, base):
        dummy = LinkSpec(
            name="dummy",
            parent="left_elbow",
            joint_axis=np.array([0.0, 0.0, 1.0]),
            origin_offset=np.zeros(3),
            mass=0.0,
            com_offset=np.zeros(3),
            joint_limits=(-1.0, 1.0),
        )
        extended = KinematicChain(
            links=chain.links + (dummy,),
            base_link=chain.base_link,
            end_effectors=chain.end_effectors,
        )
        q = L_POSE
        f0 = forward_kinematics(chain, base, q)
        f1 = forward_kinematics(extended, base, np.concatenate([q, [0.0]]))
        for name in f0:
            assert np.allclose(f0[name].position, f1[name].position)
            assert np.allclose(f0[name].rotation, f1[name].rotation)


class TestPositionJacobian:
    def test_single_joint_column(self, base):
        chain = single_link_chain([0.0, 0.0, 1.0], length=0.5)
        J = position_jacobian(chain, base, [0.0], "tip")
        assert np.allclose(J[:, 0], [0.0, 0.5, 0.0], atol=1e-15)

    def test_non_ancestor_columns_are_zero(self, chain, base):
        J = position_jacobian(chain, base, L_POSE, "left_hand")
        assert np.all(J[:, 4:] == 0.0)
        J = position_jacobian(chain, base, L_POSE, "right_hand")
        assert np.all(J[:, :4] == 0.0)

    def test_unknown_end_effector(self, chain, base):
        with pytest.raises(UnknownEndEffector):
            position_jacobian(chain, base, L_POSE, "tail")

    def test_matches_central_finite_differences(self, chain, base):
        rng = np.random.default_rng(7)
        h = 1e-6
        for _ in range(20):
            q = random_config(rng, chain)
            J = position_jacobian(chain, base, q, "left_hand")
            for i in range(chain.dof):
                qp, qm = q.copy(), q.copy()
                qp[i] += h
                qm[i] -= h
                fp = end_effector_position(chain, forward_kinematics(chain, base, qp), "left_hand")
                fm = end_effector_position(chain, forward_kinematics(chain, base, qm), "left_hand")
                fd = (fp - fm) / (2.0 * h)
                assert np.max(np.abs(J[:, i] - fd)) < 1e-5


class TestSplitJacobian:
    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(5)
        J = rng.standard_normal((3, 14))
        Jb, Ju = split_jacobian(J)
        assert np.array_equal(np.hstack([Jb, Ju]), J)
        assert Jb.shape == (3, 6) and Ju.shape == (3, 8)

    def test_fixed_base_zero_block(self):
        J = np.hstack([np.zeros((3, 6)), np.ones((3, 8))])
        Jb, _ = split_jacobian(J)
        assert np.all(Jb == 0.0)

    def test_too_few_columns(self):
        with pytest.raises(DimensionMismatch):
            split_jacobian(np.ones((3, 6)))

    def test_base_jacobian_structure(self, chain, base):
        Jb = base_jacobian(chain, base, L_POSE, "left_hand")
        assert np.allclose(Jb[:, :3], np.eye(3))
        # the angular block is -skew(p_ee - p_base): antisymmetric
        S = Jb[:, 3:]
        assert np.allclose(S, -S.T, atol=1e-15)


class TestGravityTorques:
    def test_zero_gravity(self, chain, base):
        assert np.allclose(gravity_torques(chain, base, L_POSE, np.zeros(3)), np.zeros(8))

    def test_horizontal_link_moment_arm(self, base):
        # mass m at L/2 on a horizontal link: |torque| = m g L / 2
        m, L = 2.0, 1.0
        chain = single_link_chain([0.0, 1.0, 0.0], length=L, mass=m, com=[L / 2, 0.0, 0.0])
        tau = gravity_torques(chain, base, [0.0])
        assert abs(tau[0]) == pytest.approx(m * 9.81 * L / 2, rel=1e-12)

    def test_matches_potential_energy_gradient(self, chain, base):
        # tau_grav = -dU/dq with U the gravitational potential sum(m g z)
        rng = np.random.default_rng(13)
        h = 1e-6

        def potential(q):
            frames = forward_kinematics(chain, base, q)
            U = 0.0
            for link in chain.links:
                f = frames[link.name]
                com = f.position + f.rotation @ link.com_offset
                U += link.mass * 9.81 * com[2]
            return U

        for _ in range(10):
            q = random_config(rng, chain)
            tau = gravity_torques(chain, base, q)
            for i in range(chain.dof):
                qp, qm = q.copy(), q.copy()
                qp[i] += h
                qm[i] -= h
                fd = -(potential(qp) - potential(qm)) / (2.0 * h)
                assert abs(tau[i] - fd) < 1e-6


class TestLoadChain:
    def test_bundled_model_has_eight_dof(self, chain):
        assert chain.dof == 8
        assert chain.end_effector_names == ("left_hand", "right_hand")

    def _model_text(self, **overrides):
        axis = overrides.get("axis", "[0.0, 0.0, 1.0]")
        parent = overrides.get("parent", '"torso"')
        mass = overrides.get("mass", "1.0")
        limits = overrides.get("limits", "[-1.0, 1.0]")
        return f"""
format = "cotap-model/1"
[base]
link = "torso"
[[link]]
name = "a"
parent = {parent}
axis = {axis}
origin = [0.0, 0.0, 0.0]
mass = {mass}
com = [0.0, 0.0, 0.0]
limits = {limits}
[[end_effector]]
name = "tip"
parent = "a"
offset = [0.1, 0.0, 0.0]
"""

    def test_non_unit_axis_rejected(self):
        with pytest.raises(ValidationError):
            load_chain(self._model_text(axis="[0.0, 0.0, 2.0]"))

    def test_orphan_parent_rejected(self):
        with pytest.raises(ValidationError):
            load_chain(self._model_text(parent='"nowhere"'))

    def test_negative_mass_rejected(self):
        with pytest.raises(ValidationError):
            load_chain(self._model_text(mass="-1.0"))

    def test_inverted_limits_rejected(self):
        with pytest.raises(ValidationError):
            load_chain(self._model_text(limits="[1.0, -1.0]"))

    def test_unknown_field_rejected(self):
        text = self._model_text() + '\n[[link]]\nname = "b"\nparent = "a"\naxis = [0,0,1]\norigin = [0,0,0]\nmass = 1.0\ncom = [0,0,0]\nlimits = [-1,1]\ncolor = "red"\n'
        with pytest.raises(ParseError):
            load_chain(text)

    def test_wrong_format_header(self):
        with pytest.raises(ParseError):
            load_chain('format = "cotap-model/2"\n[base]\nlink = "torso"\n')

    def test_invalid_toml(self):
        with pytest.raises(ParseError):
            load_chain("format = [unclosed")
