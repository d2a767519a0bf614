//! Serial-chain kinematics for a six-joint revolute arm.
//!
//! Each joint is described URDF-style: a fixed origin transform from the
//! previous joint frame, followed by a rotation about the joint axis. The TCP
//! sits at a fixed offset from the last joint frame.

use nalgebra::{
    Isometry3, Matrix3x6, Matrix6, Translation3, Unit, UnitQuaternion, Vector3, Vector6,
};

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 6;

/// Joint-space vector (positions or rates), one entry per joint.
pub type JointVector = Vector6<f64>;

/// Rigid transform given as a translation plus roll-pitch-yaw angles
/// (fixed-axis X, then Y, then Z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedTransform {
    pub translation: Vector3<f64>,
    pub rpy: Vector3<f64>,
}

impl FixedTransform {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rpy: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            translation,
            rpy: Vector3::zeros(),
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_euler_angles(self.rpy.x, self.rpy.y, self.rpy.z),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSpec {
    /// Rotation axis in the joint frame.
    pub axis: Unit<Vector3<f64>>,
    /// Transform from the previous joint frame (or the base) to this joint.
    pub origin: FixedTransform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.min && q <= self.max
    }
}

/// Kinematic description of the arm.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub joints: [JointSpec; JOINT_COUNT],
    pub joint_limits: [JointLimit; JOINT_COUNT],
    /// Maximum |q̇| per joint, rad/s.
    pub rate_limits: [f64; JOINT_COUNT],
    pub tcp_offset: FixedTransform,
}

impl RobotModel {
    pub fn new(
        joints: [JointSpec; JOINT_COUNT],
        joint_limits: [JointLimit; JOINT_COUNT],
        rate_limits: [f64; JOINT_COUNT],
        tcp_offset: FixedTransform,
    ) -> Result<Self> {
        let model = Self {
            joints,
            joint_limits,
            rate_limits,
            tcp_offset,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, lim) in self.joint_limits.iter().enumerate() {
            if !(lim.min.is_finite() && lim.max.is_finite() && lim.min < lim.max) {
                return Err(Error::validation(
                    format!("joint_limits_rad[{i}]"),
                    "min < max, both finite",
                ));
            }
        }
        for (i, rate) in self.rate_limits.iter().enumerate() {
            if !(rate.is_finite() && *rate > 0.0) {
                return Err(Error::validation(
                    format!("rate_limits_rad_s[{i}]"),
                    "must be finite and > 0",
                ));
            }
        }
        for (i, joint) in self.joints.iter().enumerate() {
            let finite = joint.axis.iter().all(|c| c.is_finite())
                && joint.origin.translation.iter().all(|c| c.is_finite())
                && joint.origin.rpy.iter().all(|c| c.is_finite());
            if !finite {
                return Err(Error::validation(
                    format!("joints[{i}]"),
                    "axis and origin must be finite",
                ));
            }
        }
        Ok(())
    }

    /// First joint (index, value) outside its limits, if any.
    pub fn limit_violation(&self, q: &JointVector) -> Option<(usize, f64)> {
        q.iter()
            .zip(self.joint_limits.iter())
            .position(|(qi, lim)| !lim.contains(*qi))
            .map(|i| (i, q[i]))
    }

    /// World frames of every joint (after its origin transform, before its
    /// rotation) together with the TCP frame.
    fn chain(&self, q: &JointVector) -> ([Isometry3<f64>; JOINT_COUNT], Isometry3<f64>) {
        let mut frames = [Isometry3::identity(); JOINT_COUNT];
        let mut acc = Isometry3::identity();
        for (i, joint) in self.joints.iter().enumerate() {
            acc *= joint.origin.isometry();
            frames[i] = acc;
            acc *= UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
        }
        (frames, acc * self.tcp_offset.isometry())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub q: JointVector,
    pub q_dot: JointVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

/// Geometric Jacobian at the TCP. Rows 0..3 map to linear velocity, rows
/// 3..6 to angular velocity; columns are joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian(pub Matrix6<f64>);

impl Jacobian {
    pub fn linear(&self) -> Matrix3x6<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn angular(&self) -> Matrix3x6<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

pub fn forward_kinematics(model: &RobotModel, q: &JointVector) -> Pose {
    let (_, tcp) = model.chain(q);
    Pose {
        position: tcp.translation.vector,
        orientation: tcp.rotation,
    }
}

pub fn jacobian(model: &RobotModel, q: &JointVector) -> Jacobian {
    let (frames, tcp) = model.chain(q);
    let p_tcp = tcp.translation.vector;
    let mut j = Matrix6::zeros();
    for (i, (frame, joint)) in frames.iter().zip(model.joints.iter()).enumerate() {
        let z = frame.rotation * joint.axis.into_inner();
        let lin = z.cross(&(p_tcp - frame.translation.vector));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    Jacobian(j)
}

/// Damped least-squares joint rates: `Jᵀ (J Jᵀ + λ² I)⁻¹ v`.
///
/// With `damping = 0` this is the exact inverse for a non-singular Jacobian.
/// Singular values are mapped to `σ / (σ² + λ²)`, so the amplification is
/// capped at `1 / (2λ)`.
pub fn solve_joint_rates(j: &Jacobian, v: &Vector6<f64>, damping: f64) -> Result<JointVector> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "damping must be finite and >= 0, got {damping}"
        )));
    }
    if !j.0.iter().chain(v.iter()).all(|x| x.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite Jacobian or task velocity".into(),
        ));
    }
    let jt = j.0.transpose();
    let gram = j.0 * jt + Matrix6::identity() * (damping * damping);
    let y = gram
        .lu()
        .solve(v)
        .ok_or_else(|| Error::NumericalFailure("singular system in joint-rate solve".into()))?;
    let q_dot = jt * y;
    if q_dot.iter().all(|x| x.is_finite()) {
        Ok(q_dot)
    } else {
        Err(Error::NumericalFailure(
            "joint-rate solve produced non-finite values".into(),
        ))
    }
}

/// Yoshikawa measure of the linear Jacobian, `sqrt(det(J_lin J_linᵀ))`.
pub fn manipulability(j: &Jacobian) -> f64 {
    let lin = j.linear();
    (lin * lin.transpose()).determinant().max(0.0).sqrt()
}


#[cfg(test)]
mod tests {
    use super::test_models::*;
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, Matrix4};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Homogeneous-matrix chain built by hand (Rodrigues + explicit RPY
    /// products), independent of the isometry code under test.
    fn oracle_fk(model: &RobotModel, q: &JointVector) -> Matrix4<f64> {
        fn rot_x(a: f64) -> Matrix4<f64> {
            let (s, c) = a.sin_cos();
            Matrix4::new(1., 0., 0., 0., 0., c, -s, 0., 0., s, c, 0., 0., 0., 0., 1.)
        }
        fn rot_y(a: f64) -> Matrix4<f64> {
            let (s, c) = a.sin_cos();
            Matrix4::new(c, 0., s, 0., 0., 1., 0., 0., -s, 0., c, 0., 0., 0., 0., 1.)
        }
        fn rot_z(a: f64) -> Matrix4<f64> {
            let (s, c) = a.sin_cos();
            Matrix4::new(c, -s, 0., 0., s, c, 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.)
        }
        fn fixed(t: &FixedTransform) -> Matrix4<f64> {
            let mut m = rot_z(t.rpy.z) * rot_y(t.rpy.y) * rot_x(t.rpy.x);
            m[(0, 3)] = t.translation.x;
            m[(1, 3)] = t.translation.y;
            m[(2, 3)] = t.translation.z;
            m
        }
        fn rodrigues(k: &Vector3<f64>, a: f64) -> Matrix4<f64> {
            let (s, c) = a.sin_cos();
            let (x, y, z) = (k.x, k.y, k.z);
            let v = 1.0 - c;
            Matrix4::new(
                c + x * x * v,
                x * y * v - z * s,
                x * z * v + y * s,
                0.,
                y * x * v + z * s,
                c + y * y * v,
                y * z * v - x * s,
                0.,
                z * x * v - y * s,
                z * y * v + x * s,
                c + z * z * v,
                0.,
                0.,
                0.,
                0.,
                1.,
            )
        }
        let mut m = Matrix4::<f64>::identity();
        for (i, joint) in model.joints.iter().enumerate() {
            m = m * fixed(&joint.origin) * rodrigues(&joint.axis, q[i]);
        }
        m * fixed(&model.tcp_offset)
    }

    fn fd_linear_jacobian(model: &RobotModel, q: &JointVector, h: f64) -> Matrix3x6<f64> {
        let mut out = Matrix3x6::zeros();
        for i in 0..JOINT_COUNT {
            let mut qp = *q;
            let mut qm = *q;
            qp[i] += h;
            qm[i] -= h;
            let d = (forward_kinematics(model, &qp).position
                - forward_kinematics(model, &qm).position)
                / (2.0 * h);
            out.set_column(i, &d);
        }
        out
    }

    #[test]
    fn single_axis_at_zero_puts_tcp_on_z() {
        let pose = forward_kinematics(&single_axis(), &JointVector::zeros());
        assert_relative_eq!(pose.position, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn rotating_about_own_axis_keeps_on_axis_point() {
        let mut q = JointVector::zeros();
        q[0] = PI;
        let pose = forward_kinematics(&single_axis(), &q);
        assert_relative_eq!(pose.position, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI);
        assert!(pose.orientation.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn fk_is_bit_deterministic() {
        let model = generic(&[0.3; 36]);
        let q = JointVector::from_column_slice(&[0.1, -0.2, 0.3, -0.4, 0.5, -0.6]);
        let a = forward_kinematics(&model, &q);
        let b = forward_kinematics(&model, &q);
        assert_eq!(a.position, b.position);
        assert_eq!(a.orientation, b.orientation);
    }

    #[test]
    fn zero_joint_rate_gives_zero_tcp_velocity() {
        let model = generic(&[0.1; 36]);
        let j = jacobian(&model, &JointVector::repeat(0.2));
        assert_eq!(j.0 * JointVector::zeros(), Vector6::zeros());
    }

    #[test]
    fn stretched_arm_is_singular() {
        let j = jacobian(&stretched_planar(), &JointVector::zeros());
        let lin = DMatrix::from_iterator(3, 6, j.linear().iter().copied());
        let sv = lin.svd(false, false).singular_values;
        let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(smallest < 1e-6, "smallest singular value {smallest}");
        assert!(manipulability(&j) < 1e-12);
    }

    #[test]
    fn identity_jacobian_inverts_exactly() {
        let j = Jacobian(Matrix6::identity());
        let v = Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(solve_joint_rates(&j, &v, 0.0).unwrap(), v);
    }

    #[test]
    fn zero_task_velocity_gives_zero_rates() {
        let j = jacobian(&stretched_planar(), &JointVector::zeros());
        for lambda in [0.0, 0.01, 1.0] {
            if let Ok(q_dot) = solve_joint_rates(&j, &Vector6::zeros(), lambda) {
                assert_eq!(q_dot, JointVector::zeros());
            }
        }
        let q_dot = solve_joint_rates(&j, &Vector6::zeros(), 0.01).unwrap();
        assert_eq!(q_dot, JointVector::zeros());
    }

    #[test]
    fn non_finite_input_is_a_numerical_failure() {
        let j = Jacobian(Matrix6::identity());
        let mut v = Vector6::zeros();
        v[2] = f64::NAN;
        assert!(matches!(
            solve_joint_rates(&j, &v, 0.01),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn exactly_singular_without_damping_fails() {
        let j = Jacobian(Matrix6::zeros());
        let v = Vector6::repeat(0.1);
        assert!(solve_joint_rates(&j, &v, 0.0).is_err());
    }

    #[test]
    fn manipulability_of_identity_is_one() {
        assert_relative_eq!(manipulability(&Jacobian(Matrix6::identity())), 1.0);
    }

    #[test]
    fn rank_deficient_manipulability_is_zero() {
        let mut m = Matrix6::identity();
        m.set_row(2, &m.row(0).clone_owned());
        assert!(manipulability(&Jacobian(m)) < 1e-12);
    }

    #[test]
    fn model_rejects_inverted_limits() {
        let mut model = single_axis();
        model.joint_limits[3] = JointLimit { min: 1.0, max: -1.0 };
        assert!(matches!(model.validate(), Err(Error::Validation { .. })));
        let mut model = single_axis();
        model.rate_limits[0] = 0.0;
        assert!(model.validate().is_err());
    }

    fn arb_params() -> impl Strategy<Value = [f64; 36]> {
        proptest::collection::vec(-1.0f64..1.0, 36).prop_map(|v| {
            let mut a = [0.0; 36];
            a.copy_from_slice(&v);
            a
        })
    }

    fn arb_q() -> impl Strategy<Value = JointVector> {
        proptest::collection::vec(-PI..PI, 6).prop_map(|v| JointVector::from_column_slice(&v))
    }

    fn random_matrix(seed: &[f64]) -> Matrix6<f64> {
        Matrix6::from_iterator(seed.iter().copied())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fk_matches_matrix_chain_oracle(params in arb_params(), q in arb_q()) {
            let model = generic(&params);
            let pose = forward_kinematics(&model, &q);
            let m = oracle_fk(&model, &q);
            for r in 0..3 {
                prop_assert!((pose.position[r] - m[(r, 3)]).abs() < 1e-10);
            }
            let rot = pose.orientation.to_rotation_matrix();
            for r in 0..3 {
                for c in 0..3 {
                    prop_assert!((rot[(r, c)] - m[(r, c)]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn linear_jacobian_matches_finite_differences(params in arb_params(), q in arb_q()) {
            let model = generic(&params);
            let j = jacobian(&model, &q).linear();
            let fd = fd_linear_jacobian(&model, &q, 1e-6);
            for (a, b) in j.iter().zip(fd.iter()) {
                prop_assert!((a - b).abs() < 1e-5, "analytic {a} vs fd {b}");
            }
        }

        #[test]
        fn angular_columns_are_unit_axes(params in arb_params(), q in arb_q()) {
            let j = jacobian(&generic(&params), &q);
            for c in 0..6 {
                prop_assert!((j.angular().column(c).norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn damping_caps_amplification(seed in proptest::collection::vec(-1.0f64..1.0, 36),
                                      v in proptest::collection::vec(-1.0f64..1.0, 6)) {
            // Force the smallest singular value to 1e-8 via SVD reconstruction.
            let m = DMatrix::from_iterator(6, 6, random_matrix(&seed).iter().copied());
            let mut svd = m.svd(true, true);
            let n = svd.singular_values.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]));
            svd.singular_values[order[0]] = 1e-8;
            let near_singular = svd.recompose().unwrap();
            let j = Jacobian(Matrix6::from_iterator(near_singular.iter().copied()));
            let v = Vector6::from_column_slice(&v);
            let lambda = 0.01;
            let q_dot = solve_joint_rates(&j, &v, lambda).unwrap();
            prop_assert!(q_dot.iter().all(|x| x.is_finite()));
            prop_assert!(q_dot.norm() <= v.norm() / (2.0 * lambda) * (1.0 + 1e-9));
        }

        #[test]
        fn small_damping_converges_to_exact_inverse(params in arb_params(), q in arb_q(),
                                                    v in proptest::collection::vec(-0.2f64..0.2, 6)) {
            let j = jacobian(&generic(&params), &q);
            let dm = DMatrix::from_iterator(6, 6, j.0.iter().copied());
            let sv = dm.svd(false, false).singular_values;
            let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(smallest > 0.05);
            let v = Vector6::from_column_slice(&v);
            let exact = j.0.try_inverse().unwrap() * v;
            let undamped = solve_joint_rates(&j, &v, 0.0).unwrap();
            prop_assert!((undamped - exact).norm() < 1e-9 * (1.0 + exact.norm()));
            let damped = solve_joint_rates(&j, &v, 1e-6).unwrap();
            prop_assert!((damped - exact).norm() < 1e-6);
        }

        #[test]
        fn dls_output_finite_at_singularity(v in proptest::collection::vec(-1.0f64..1.0, 6),
                                            lambda in 1e-4f64..1.0) {
            let j = jacobian(&stretched_planar(), &JointVector::zeros());
            let q_dot = solve_joint_rates(&j, &Vector6::from_column_slice(&v), lambda).unwrap();
            prop_assert!(q_dot.iter().all(|x| x.is_finite()));
        }

        #[test]
        fn manipulability_is_product_of_singular_values(seed in proptest::collection::vec(-1.0f64..1.0, 36)) {
            let j = Jacobian(random_matrix(&seed));
            let lin = DMatrix::from_iterator(3, 6, j.linear().iter().copied());
            let product: f64 = lin.svd(false, false).singular_values.iter().product();
            prop_assert!((manipulability(&j) - product).abs() < 1e-9);
        }
    }
}
