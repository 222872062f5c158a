//! Discrete rigid body dynamics on SO(3) x R^3 from a Lie group variational
//! integrator.
//!
//! The configuration of a body at step k is `(R_k, p_k)` together with the
//! discrete velocities `(F_k, v_k)`: `F_k` is the pose change over one step,
//! `R_{k+1} = R_k F_k`, and `v_k` the mid-point linear velocity,
//! `p_{k+1} = p_k + v_k dt`. The rotational update is the implicit matrix
//! equation
//!
//! ```text
//! F_{k+1} I^b - I^b F_{k+1}^T = I^b F_k - F_k^T I^b + hat(tau) dt^2
//! ```
//!
//! where `I^b` is the nonstandard inertia related to the standard inertia by
//! `I_std = tr(I^b) I - I^b`. The scheme stays on the group exactly and
//! conserves the discrete spatial angular momentum in the torque-free case.

use crate::lie::{exp_so3, hat, log_so3, vee_unchecked, Mat3, Rotation, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("implicit rotational update did not converge at step {step}: residual {residual:.3e} after {iters} iterations")]
    NewtonStalled { step: usize, residual: f64, iters: usize },
    #[error("inertia matrix is not symmetric positive definite")]
    BadInertia,
}

/// Mass, inertia, and gravity of a single rigid body.
#[derive(Debug, Clone)]
pub struct BodyParams {
    pub mass: f64,
    pub inertia_std: Mat3,
    pub inertia_ns: Mat3,
    pub gravity: Vec3,
}

impl BodyParams {
    /// Builds parameters from the standard inertia; the nonstandard inertia is
    /// derived from it. Fails unless the inertia is symmetric positive definite.
    pub fn new(mass: f64, inertia_std: Mat3, gravity: Vec3) -> Result<Self, DynamicsError> {
        if (inertia_std - inertia_std.transpose()).norm() > 1e-12 {
            return Err(DynamicsError::BadInertia);
        }
        let eig = inertia_std.symmetric_eigenvalues();
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(DynamicsError::BadInertia);
        }
        Ok(BodyParams {
            mass,
            inertia_std,
            inertia_ns: nonstandard_inertia(&inertia_std),
            gravity,
        })
    }
}

/// Nonstandard inertia `I^b = tr(I_std)/2 I - I_std`, the unique solution of
/// `I_std = tr(I^b) I - I^b`.
pub fn nonstandard_inertia(i_std: &Mat3) -> Mat3 {
    Mat3::identity() * (i_std.trace() * 0.5) - i_std
}

/// Configuration and discrete velocity of one body at one timestep.
#[derive(Debug, Clone)]
pub struct BodyState {
    pub rot: Rotation,
    pub pos: Vec3,
    pub pose_change: Rotation,
    pub vel: Vec3,
}

impl BodyState {
    pub fn at_rest(rot: Rotation, pos: Vec3) -> Self {
        BodyState { rot, pos, pose_change: Rotation::identity(), vel: Vec3::zeros() }
    }

    /// Mid-point body angular velocity `vee(F - I) / dt`.
    pub fn angular_velocity(&self, dt: f64) -> Vec3 {
        vee_unchecked(&(self.pose_change.matrix() - Mat3::identity())) / dt
    }
}

/// Torque plus scalar body-z thrust (thrust used by the drone scenario only).
#[derive(Debug, Clone, Copy, Default)]
pub struct ControlInput {
    pub tau: Vec3,
    pub u_z: f64,
}

/// Per-timestep states and inputs of one or more bodies.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    /// `states[k][b]` for timestep k = 0..=N and body b.
    pub states: Vec<Vec<BodyState>>,
    /// One generic input vector per step k = 0..N; the owning scenario defines
    /// the interpretation.
    pub inputs: Vec<nalgebra::DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn n_bodies(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }
}

/// Residual of the discrete rotational dynamics:
/// `vee((F_next I^b - I^b F_next^T) - (I^b F_k - F_k^T I^b) - hat(tau) dt^2)`.
/// Zero iff the implicit update holds.
pub fn rot_dyn_residual(f_k: &Rotation, f_next: &Rotation, tau: &Vec3, dt: f64, i_ns: &Mat3) -> Vec3 {
    let lhs = f_next.matrix() * i_ns - i_ns * f_next.matrix().transpose();
    let rhs = i_ns * f_k.matrix() - f_k.matrix().transpose() * i_ns;
    vee_unchecked(&(lhs - rhs - hat(tau) * (dt * dt)))
}

/// Linear map `xi -> vee(F hat(xi) I^b + I^b hat(xi) F^T)`, the derivative of
/// the left side of the rotational dynamics along `F exp(t xi)`.
pub(crate) fn rot_dyn_lhs_jacobian(f: &Rotation, i_ns: &Mat3) -> Mat3 {
    let mut out = Mat3::zeros();
    for c in 0..3 {
        let e = Vec3::ith(c, 1.0);
        let m = f.matrix() * hat(&e) * i_ns + i_ns * hat(&e) * f.matrix().transpose();
        out.set_column(c, &vee_unchecked(&m));
    }
    out
}

/// Solves the implicit rotational update for `F_{k+1}` by Newton iteration on
/// the group, parameterizing `F = F_guess exp(delta)`.
pub fn solve_next_f(
    f_k: &Rotation,
    tau: &Vec3,
    dt: f64,
    i_ns: &Mat3,
    tol: f64,
) -> Result<Rotation, DynamicsError> {
    solve_next_f_at(f_k, tau, dt, i_ns, tol, 0)
}

fn solve_next_f_at(
    f_k: &Rotation,
    tau: &Vec3,
    dt: f64,
    i_ns: &Mat3,
    tol: f64,
    step: usize,
) -> Result<Rotation, DynamicsError> {
    let mut f = *f_k;
    let mut residual = rot_dyn_residual(f_k, &f, tau, dt, i_ns);
    for _ in 0..50 {
        if residual.norm() <= tol {
            return Ok(f.renormalized());
        }
        let jac = rot_dyn_lhs_jacobian(&f, i_ns);
        let delta = jac
            .lu()
            .solve(&(-residual))
            .ok_or(DynamicsError::NewtonStalled { step, residual: residual.norm(), iters: 0 })?;
        f = f * exp_so3(&delta);
        residual = rot_dyn_residual(f_k, &f, tau, dt, i_ns);
    }
    if residual.norm() <= tol {
        return Ok(f.renormalized());
    }
    Err(DynamicsError::NewtonStalled { step, residual: residual.norm(), iters: 50 })
}

/// Explicit translational update `v_next = v + g dt + thrust_world dt / m`.
pub fn trans_dyn_step(v_k: &Vec3, params: &BodyParams, dt: f64, thrust_world: &Vec3) -> Vec3 {
    v_k + params.gravity * dt + thrust_world * (dt / params.mass)
}

/// Kinematic residuals `(log(R_next^T R_k F_k), p_next - p_k - v_k dt)`.
pub fn kin_residuals(state_k: &BodyState, state_next: &BodyState, dt: f64) -> (Vec3, Vec3) {
    let y = state_next.rot.transpose() * state_k.rot * state_k.pose_change;
    (log_so3(&y), state_next.pos - state_k.pos - state_k.vel * dt)
}

/// Discrete spatial angular momentum `R_k vee(F_k I^b - I^b F_k^T)`, the exact
/// invariant of the torque-free scheme.
pub fn spatial_momentum(state: &BodyState, i_ns: &Mat3) -> Vec3 {
    let f = state.pose_change.matrix();
    state.rot.matrix() * vee_unchecked(&(f * i_ns - i_ns * f.transpose()))
}

/// Forward-simulates a single body under the given inputs.
///
/// The thrust of `ControlInput::u_z` acts along the body z-axis at the new
/// orientation, matching the discrete update
/// `m v_{k+1} = m v_k + m g dt + R_{k+1} e_z u_z dt`.
pub fn simulate(
    initial: &BodyState,
    inputs: &[ControlInput],
    params: &BodyParams,
    dt: f64,
    implicit_tol: f64,
) -> Result<Trajectory, DynamicsError> {
    let n = inputs.len();
    let mut states = Vec::with_capacity(n + 1);
    states.push(vec![initial.clone()]);
    for (k, u) in inputs.iter().enumerate() {
        let prev = &states[k][0];
        let rot = (prev.rot * prev.pose_change).renormalized();
        let pos = prev.pos + prev.vel * dt;
        let pose_change = solve_next_f_at(&prev.pose_change, &u.tau, dt, &params.inertia_ns, implicit_tol, k)?;
        let thrust_world = rot.matrix() * Vec3::new(0.0, 0.0, u.u_z);
        let vel = trans_dyn_step(&prev.vel, params, dt, &thrust_world);
        states.push(vec![BodyState { rot, pos, pose_change, vel }]);
    }
    let inputs = inputs
        .iter()
        .map(|u| nalgebra::DVector::from_column_slice(&[u.tau.x, u.tau.y, u.tau.z, u.u_z]))
        .collect();
    Ok(Trajectory { dt, states, inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_vec3(rng: &mut StdRng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn test_params() -> BodyParams {
        BodyParams::new(
            1.0,
            Mat3::from_diagonal(&Vec3::new(0.02, 0.03, 0.04)),
            Vec3::new(0.0, 0.0, -9.81),
        )
        .unwrap()
    }

    #[test]
    fn nonstandard_inertia_solves_trace_identity() {
        // tr identity gives tr(I_ns) = tr(I_std)/2, hence the closed form.
        let i = Mat3::identity();
        assert!((nonstandard_inertia(&i) - i * 0.5).norm() < 1e-15);
        let d = Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0));
        let expected = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 0.0));
        assert!((nonstandard_inertia(&d) - expected).norm() < 1e-15);
        // Round trip for random SPD matrices.
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..100 {
            let a = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let spd = a * a.transpose() + Mat3::identity() * 0.5;
            let ns = nonstandard_inertia(&spd);
            assert!((Mat3::identity() * ns.trace() - ns - spd).norm() < 1e-14);
        }
    }

    #[test]
    fn rot_dyn_residual_zero_cases() {
        let p = test_params();
        let zero = rot_dyn_residual(
            &Rotation::identity(),
            &Rotation::identity(),
            &Vec3::zeros(),
            0.05,
            &p.inertia_ns,
        );
        assert_eq!(zero, Vec3::zeros());
        // Steady spin about a principal axis.
        let f = exp_so3(&Vec3::new(0.0, 0.0, 0.3));
        let r = rot_dyn_residual(&f, &f, &Vec3::zeros(), 0.05, &p.inertia_ns);
        assert!(r.norm() < 1e-15, "steady spin residual {r:?}");
    }

    #[test]
    fn rot_dyn_residual_matches_momentum_difference() {
        let p = test_params();
        let mut rng = StdRng::seed_from_u64(32);
        for _ in 0..100 {
            let f_k = exp_so3(&rand_vec3(&mut rng, 0.5));
            let f_n = exp_so3(&rand_vec3(&mut rng, 0.5));
            let r = rot_dyn_residual(&f_k, &f_n, &Vec3::zeros(), 0.05, &p.inertia_ns);
            let lhs = f_n.matrix() * p.inertia_ns - p.inertia_ns * f_n.matrix().transpose();
            let rhs = p.inertia_ns * f_k.matrix() - f_k.matrix().transpose() * p.inertia_ns;
            let oracle = vee_unchecked(&lhs) - vee_unchecked(&rhs);
            assert!((r - oracle).norm() < 1e-15);
        }
    }

    #[test]
    fn rot_dyn_residual_equivariant_under_commuting_conjugation() {
        // Conjugating both F's by a rotation that commutes with I_ns maps the
        // residual through the same rotation; components along the symmetry
        // axis are unchanged.
        let i_ns = Mat3::from_diagonal(&Vec3::new(0.02, 0.02, 0.01));
        let q = exp_so3(&Vec3::new(0.0, 0.0, 0.7));
        let mut rng = StdRng::seed_from_u64(33);
        for _ in 0..50 {
            let f_k = exp_so3(&rand_vec3(&mut rng, 0.4));
            let f_n = exp_so3(&rand_vec3(&mut rng, 0.4));
            let base = rot_dyn_residual(&f_k, &f_n, &Vec3::zeros(), 0.05, &i_ns);
            let conj = |f: &Rotation| q * *f * q.transpose();
            let mapped = rot_dyn_residual(&conj(&f_k), &conj(&f_n), &Vec3::zeros(), 0.05, &i_ns);
            assert!((mapped - q.matrix() * base).norm() < 1e-14);
            assert!((mapped.z - base.z).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_next_f_fixed_points_and_residual() {
        let p = test_params();
        let id = solve_next_f(&Rotation::identity(), &Vec3::zeros(), 0.05, &p.inertia_ns, 1e-12).unwrap();
        assert!((id.matrix() - Mat3::identity()).norm() < 1e-12);
        // Principal-axis steady spin is a fixed point.
        let f = exp_so3(&Vec3::new(0.1, 0.0, 0.0));
        let next = solve_next_f(&f, &Vec3::zeros(), 0.05, &p.inertia_ns, 1e-12).unwrap();
        assert!((next.matrix() - f.matrix()).norm() < 1e-10);
        // Random steps pass the residual oracle at tolerance.
        let mut rng = StdRng::seed_from_u64(34);
        for _ in 0..100 {
            let f_k = exp_so3(&rand_vec3(&mut rng, 0.3));
            let tau = rand_vec3(&mut rng, 0.5);
            let f_n = solve_next_f(&f_k, &tau, 0.05, &p.inertia_ns, 1e-12).unwrap();
            assert!(rot_dyn_residual(&f_k, &f_n, &tau, 0.05, &p.inertia_ns).norm() <= 1e-12);
            assert!(f_n.ortho_defect() < 1e-12);
        }
    }

    #[test]
    fn trans_dyn_step_examples() {
        let p = test_params();
        let v = trans_dyn_step(&Vec3::zeros(), &p, 0.1, &Vec3::zeros());
        assert!((v - Vec3::new(0.0, 0.0, -0.981)).norm() < 1e-15);
        // Hover thrust cancels gravity.
        let v0 = Vec3::new(0.3, -0.2, 0.1);
        let hover = -p.gravity * p.mass;
        assert!((trans_dyn_step(&v0, &p, 0.1, &hover) - v0).norm() < 1e-15);
    }

    #[test]
    fn kin_residuals_zero_on_consistent_step() {
        let mut rng = StdRng::seed_from_u64(35);
        let dt = 0.05;
        for _ in 0..50 {
            let rot = exp_so3(&rand_vec3(&mut rng, 1.0));
            let f = exp_so3(&rand_vec3(&mut rng, 0.3));
            let vel = rand_vec3(&mut rng, 1.0);
            let pos = rand_vec3(&mut rng, 2.0);
            let k = BodyState { rot, pos, pose_change: f, vel };
            let next = BodyState {
                rot: rot * f,
                pos: pos + vel * dt,
                pose_change: Rotation::identity(),
                vel,
            };
            let (rr, rp) = kin_residuals(&k, &next, dt);
            assert!(rr.norm() < 1e-12 && rp.norm() < 1e-15);
            // R_next = R_k leaves the full pose change as rotational defect.
            let stuck = BodyState { rot, pos, pose_change: Rotation::identity(), vel: Vec3::zeros() };
            let (rr2, _) = kin_residuals(&k, &stuck, dt);
            assert!((rr2.norm() - log_so3(&f).norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_constant_without_forcing() {
        let p = BodyParams::new(
            1.0,
            Mat3::from_diagonal(&Vec3::new(0.02, 0.03, 0.04)),
            Vec3::zeros(),
        )
        .unwrap();
        let init = BodyState::at_rest(Rotation::identity(), Vec3::new(1.0, 2.0, 3.0));
        let traj = simulate(&init, &vec![ControlInput::default(); 100], &p, 0.05, 1e-12).unwrap();
        for step in &traj.states {
            assert!((step[0].pos - init.pos).norm() < 1e-14);
            assert!((step[0].rot.matrix() - Mat3::identity()).norm() < 1e-14);
        }
    }

    #[test]
    fn simulate_torque_free_conserves_spatial_momentum() {
        let p = BodyParams::new(
            1.0,
            Mat3::from_diagonal(&Vec3::new(0.02, 0.03, 0.04)),
            Vec3::zeros(),
        )
        .unwrap();
        // Tumbling start: large angular velocity off the principal axes.
        let omega = Vec3::new(3.0, -2.0, 1.5);
        let init = BodyState {
            rot: exp_so3(&Vec3::new(0.3, 0.2, -0.4)),
            pos: Vec3::zeros(),
            pose_change: exp_so3(&(omega * 0.01)),
            vel: Vec3::zeros(),
        };
        let traj = simulate(&init, &vec![ControlInput::default(); 1000], &p, 0.01, 1e-12).unwrap();
        let m0 = spatial_momentum(&traj.states[0][0], &p.inertia_ns);
        for step in &traj.states {
            let m = spatial_momentum(&step[0], &p.inertia_ns);
            assert!((m - m0).norm() / m0.norm() <= 1e-8, "momentum drift {:?}", (m - m0).norm());
            assert!(step[0].rot.ortho_defect() <= 1e-9);
        }
    }

    #[test]
    fn simulate_free_fall_matches_closed_form() {
        let p = test_params();
        let v0 = Vec3::new(0.5, 0.0, 1.0);
        let init = BodyState {
            rot: Rotation::identity(),
            pos: Vec3::zeros(),
            pose_change: Rotation::identity(),
            vel: v0,
        };
        let dt = 0.01;
        let n = 200;
        let traj = simulate(&init, &vec![ControlInput::default(); n], &p, dt, 1e-12).unwrap();
        for (k, step) in traj.states.iter().enumerate() {
            let t = k as f64 * dt;
            let exact = v0 * t + 0.5 * p.gravity * t * t;
            // Mid-point rule: O(dt) global error against continuous kinematics.
            assert!((step[0].pos - exact).norm() <= 0.5 * p.gravity.norm() * dt * t + 1e-12);
        }
    }

    #[test]
    fn simulate_output_passes_all_residuals() {
        let p = test_params();
        let mut rng = StdRng::seed_from_u64(36);
        let inputs: Vec<ControlInput> = (0..100)
            .map(|_| ControlInput { tau: rand_vec3(&mut rng, 0.2), u_z: rng.random_range(0.0..20.0) })
            .collect();
        let init = BodyState::at_rest(exp_so3(&rand_vec3(&mut rng, 1.0)), rand_vec3(&mut rng, 1.0));
        let traj = simulate(&init, &inputs, &p, 0.05, 1e-12).unwrap();
        for k in 0..inputs.len() {
            let (rk, pk) = kin_residuals(&traj.states[k][0], &traj.states[k + 1][0], traj.dt);
            assert!(rk.norm() <= 1e-10 && pk.norm() <= 1e-10);
            let rd = rot_dyn_residual(
                &traj.states[k][0].pose_change,
                &traj.states[k + 1][0].pose_change,
                &inputs[k].tau,
                traj.dt,
                &p.inertia_ns,
            );
            assert!(rd.norm() <= 1e-10);
            let thrust = traj.states[k + 1][0].rot.matrix() * Vec3::new(0.0, 0.0, inputs[k].u_z);
            let vd = p.mass * traj.states[k + 1][0].vel
                - p.mass * traj.states[k][0].vel
                - p.mass * p.gravity * traj.dt
                - thrust * traj.dt;
            assert!(vd.norm() <= 1e-10);
        }
    }
}
