//! Problem generators: drone docking (free, input-limited, cluttered),
//! single-branch kinematic chains, a multi-link manipulator with revolute
//! joints, plus benchmark and sweep drivers.
//!
//! All scenarios share the maximal-coordinate transcription: every body
//! carries its full pose `(R, p)` and discrete velocities `(F, v)` per
//! timestep, kinematics and dynamics appear as equality rows, joints as
//! pivot/axis rows, and the initial state is pinned by boundary rows so the
//! tangent layout is exactly `(N+1) * bodies * 12` state coordinates plus the
//! per-step inputs.

use crate::constraints::{
    AxisBlock, BoxBoundBlock, EucPinBlock, ForceSpec, ObstacleBlock, PivotBlock, RotDynBlock,
    RotKinBlock, RotPinBlock, ScaledBlock, TransDynBlock, TransKinBlock,
};
use crate::costs::{ChordalCost, QuadCost};
use crate::lie::{exp_so3, hat, log_so3, Mat3, Rotation, Vec3};
use crate::nlp::{NlpProblem, Point, SlotId, SlotScope, VariableLayout};
use crate::rigid_body::nonstandard_inertia;
use crate::ripm::{solve, SolveStatus, SolverOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("robot model: {0}")]
    RobotModel(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Slot bookkeeping of a trajectory layout: `r/p/f/v[step][body]` plus the
/// per-step input slots.
#[derive(Debug, Clone)]
pub struct TrajMap {
    pub n_steps: usize,
    pub n_bodies: usize,
    pub r: Vec<Vec<SlotId>>,
    pub p: Vec<Vec<SlotId>>,
    pub f: Vec<Vec<SlotId>>,
    pub v: Vec<Vec<SlotId>>,
    /// `inputs[k]` lists the input slots of step k (k = 0..N-1).
    pub inputs: Vec<Vec<SlotId>>,
}

/// Builds the trajectory layout: per step, per body the tangent blocks
/// `(xi_R, xi_p, xi_F, xi_v)`, bodies in declaration order, inputs of step k
/// appended after the states of step k, timesteps outermost.
pub fn trajectory_layout(
    n_steps: usize,
    n_bodies: usize,
    input_dims: &[usize],
) -> (VariableLayout, TrajMap) {
    let mut layout = VariableLayout::new();
    let mut map = TrajMap {
        n_steps,
        n_bodies,
        r: Vec::new(),
        p: Vec::new(),
        f: Vec::new(),
        v: Vec::new(),
        inputs: Vec::new(),
    };
    // Band ordering interleaves bodies within a timestep so the bandwidth
    // scales with one body's footprint; inputs of step k sit with step k+1,
    // spread over the bodies in declaration order.
    let ord = |k: usize, b: usize| k * n_bodies.max(1) + b;
    for k in 0..=n_steps {
        let mut rk = Vec::new();
        let mut pk = Vec::new();
        let mut fk = Vec::new();
        let mut vk = Vec::new();
        for b in 0..n_bodies {
            let slots = [
                layout.push_rotation(Some(k), SlotScope::Body(b)),
                layout.push_euclidean(3, Some(k), SlotScope::Body(b)),
                layout.push_rotation(Some(k), SlotScope::Body(b)),
                layout.push_euclidean(3, Some(k), SlotScope::Body(b)),
            ];
            for s in slots {
                layout.set_band_ord(s, ord(k, b));
            }
            rk.push(slots[0]);
            pk.push(slots[1]);
            fk.push(slots[2]);
            vk.push(slots[3]);
        }
        map.r.push(rk);
        map.p.push(pk);
        map.f.push(fk);
        map.v.push(vk);
        if k < n_steps {
            let per_body = (input_dims.len() / n_bodies.max(1)).max(1);
            let slots: Vec<SlotId> = input_dims
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    let s = layout.push_euclidean(d, Some(k + 1), SlotScope::Inputs);
                    let body_hint = (i / per_body).min(n_bodies.saturating_sub(1));
                    layout.set_band_ord(s, ord(k + 1, body_hint));
                    s
                })
                .collect();
            map.inputs.push(slots);
        }
    }
    (layout, map)
}

/// A generated problem instance with its initialization.
pub struct ScenarioProblem {
    pub problem: NlpProblem,
    pub initial: Point,
    pub map: TrajMap,
}

// ---------------------------------------------------------------------------
// Drone docking.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DockingVariant {
    /// Equality-constrained only.
    Unconstrained,
    /// Symmetric torque box and one-sided thrust interval.
    InputBoxes,
    /// Input boxes plus cylindrical keep-out regions.
    Cluttered,
}

#[derive(Debug, Clone)]
pub struct DockingConfig {
    pub seed: u64,
    pub n_steps: usize,
    pub dt: f64,
    pub mass: f64,
    pub inertia: Mat3,
    pub gravity: Vec3,
    pub tau_lim: f64,
    /// Absolute thrust upper bound; hover sits strictly inside `[0, uz_lim]`.
    pub uz_lim: f64,
    /// Half-width of the uniform initial-position box.
    pub pos_box: f64,
    /// Initial rotation angle is uniform on `[0, angle_max]`.
    pub angle_max: f64,
    pub variant: DockingVariant,
    pub obstacles: Vec<Obstacle>,
    pub weights: DockingWeights,
}

#[derive(Debug, Clone, Copy)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DockingWeights {
    pub w_rot: f64,
    pub w_pos: f64,
    pub w_pose_change: f64,
    pub w_vel: f64,
    pub w_input: f64,
}

impl Default for DockingWeights {
    fn default() -> Self {
        // Light pose tracking with strong twist damping keeps the reduced
        // Hessian positive along the input directions, which is what lets the
        // plain Newton iteration run at full steps.
        DockingWeights { w_rot: 0.1, w_pos: 0.1, w_pose_change: 2.0, w_vel: 2.0, w_input: 1e-4 }
    }
}

impl Default for DockingConfig {
    fn default() -> Self {
        let mass = 1.0;
        let gravity = Vec3::new(0.0, 0.0, -9.81);
        DockingConfig {
            seed: 0,
            n_steps: 40,
            dt: 0.05,
            mass,
            inertia: Mat3::from_diagonal(&Vec3::new(0.02, 0.03, 0.04)),
            gravity,
            tau_lim: 1.0,
            uz_lim: 4.0 * mass * gravity.norm(),
            pos_box: 2.0,
            angle_max: std::f64::consts::PI,
            variant: DockingVariant::Unconstrained,
            obstacles: Vec::new(),
            weights: DockingWeights::default(),
        }
    }
}

impl DockingConfig {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity.norm()
    }

    /// Samples the initial pose of the given seed: position uniform in the
    /// box, rotation axis uniform on the sphere, angle uniform on
    /// `[0, angle_max]`.
    pub fn sample_initial_pose(&self) -> (Rotation, Vec3) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let pos = Vec3::new(
            rng.random_range(-self.pos_box..self.pos_box),
            rng.random_range(-self.pos_box..self.pos_box),
            rng.random_range(-self.pos_box..self.pos_box),
        );
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let angle = rng.random_range(0.0..self.angle_max);
        (exp_so3(&(Vec3::new(axis[0], axis[1], axis[2]) * angle)), pos)
    }
}

/// Builds the docking problem: fly from the sampled initial pose at rest to
/// the origin with identity attitude and zero twist.
pub fn drone_docking(config: &DockingConfig) -> ScenarioProblem {
    let (r_init, p_init) = config.sample_initial_pose();
    drone_docking_from(config, r_init, p_init)
}

/// Same as [`drone_docking`] with an explicit initial pose.
pub fn drone_docking_from(config: &DockingConfig, r_init: Rotation, p_init: Vec3) -> ScenarioProblem {
    let n = config.n_steps;
    let dt = config.dt;
    let i_ns = nonstandard_inertia(&config.inertia);
    let (layout, map) = trajectory_layout(n, 1, &[3, 1]);
    let mut problem = NlpProblem::new(layout);

    // Boundary rows: the initial state (pose at rest) is pinned.
    problem.add_block(Box::new(RotPinBlock::new(map.r[0][0], r_init)));
    problem.add_block(Box::new(EucPinBlock::new(
        map.p[0][0],
        DVector::from_column_slice(p_init.as_slice()),
    )));
    problem.add_block(Box::new(RotPinBlock::new(map.f[0][0], Rotation::identity())));
    problem.add_block(Box::new(EucPinBlock::new(map.v[0][0], DVector::zeros(3))));

    for k in 0..n {
        let tau = map.inputs[k][0];
        let uz = map.inputs[k][1];
        problem.add_block(Box::new(RotKinBlock::new(map.r[k + 1][0], map.r[k][0], map.f[k][0])));
        problem.add_block(Box::new(TransKinBlock::new(map.p[k + 1][0], map.p[k][0], map.v[k][0], dt)));
        problem.add_block(Box::new(ScaledBlock::new(
            RotDynBlock::with_torque(map.f[k][0], map.f[k + 1][0], i_ns, tau, dt),
            1.0 / (dt * dt),
        )));
        problem.add_block(Box::new(ScaledBlock::new(
            TransDynBlock::with_thrust(
                map.v[k][0],
                map.v[k + 1][0],
                config.mass,
                config.gravity,
                dt,
                map.r[k + 1][0],
                uz,
            ),
            1.0 / dt,
        )));
        if config.variant != DockingVariant::Unconstrained {
            problem.add_block(Box::new(BoxBoundBlock::new(
                tau,
                Some(DVector::from_element(3, -config.tau_lim)),
                Some(DVector::from_element(3, config.tau_lim)),
            )));
            problem.add_block(Box::new(BoxBoundBlock::new(
                uz,
                Some(DVector::zeros(1)),
                Some(DVector::from_element(1, config.uz_lim)),
            )));
        }
    }
    if config.variant == DockingVariant::Cluttered {
        for k in 1..=n {
            for obs in &config.obstacles {
                problem.add_block(Box::new(ObstacleBlock::new(
                    map.p[k][0],
                    nalgebra::Vector2::new(obs.x, obs.y),
                    obs.radius,
                )));
            }
        }
    }

    // Stage costs over k = 0..N-1 plus the terminal cost at N: chordal
    // attitude and pose-change errors, quadratic position/velocity errors,
    // and input regularization centered at hover.
    let w = &config.weights;
    let hover = config.hover_thrust();
    for k in 0..=n {
        problem.add_cost(Box::new(ChordalCost::new(
            map.r[k][0],
            Rotation::identity(),
            Mat3::identity() * w.w_rot,
        )));
        problem.add_cost(Box::new(QuadCost::isotropic(map.p[k][0], DVector::zeros(3), w.w_pos)));
        problem.add_cost(Box::new(ChordalCost::new(
            map.f[k][0],
            Rotation::identity(),
            Mat3::identity() * w.w_pose_change,
        )));
        problem.add_cost(Box::new(QuadCost::isotropic(map.v[k][0], DVector::zeros(3), w.w_vel)));
        if k < n {
            problem.add_cost(Box::new(QuadCost::isotropic(
                map.inputs[k][0],
                DVector::zeros(3),
                w.w_input,
            )));
            problem.add_cost(Box::new(QuadCost::isotropic(
                map.inputs[k][1],
                DVector::from_element(1, hover),
                w.w_input,
            )));
        }
    }

    let initial = geodesic_init(
        &problem.layout,
        &map,
        dt,
        &[(r_init, p_init)],
        &[(Rotation::identity(), Vec3::zeros())],
        |_k| vec![DVector::zeros(3), DVector::from_element(1, hover)],
    );
    ScenarioProblem { problem, initial, map }
}

/// Uniform geodesic interpolation between initial and goal poses per body:
/// `R_k = R_init exp((k/N) log(R_init^T R_goal))`, positions linear, `F_k`
/// consistent with consecutive rotations, `v_k` from consecutive positions.
/// The kinematic equality rows hold exactly on the result; the terminal
/// velocities are the goal twist (identity pose change, zero velocity).
pub fn geodesic_init(
    layout: &VariableLayout,
    map: &TrajMap,
    dt: f64,
    init: &[(Rotation, Vec3)],
    goal: &[(Rotation, Vec3)],
    inputs: impl Fn(usize) -> Vec<DVector<f64>>,
) -> Point {
    let n = map.n_steps;
    let mut x = Point::origin(layout);
    for b in 0..map.n_bodies {
        let (r0, p0) = init[b];
        let (rg, pg) = goal[b];
        let full = log_so3(&(r0.transpose() * rg));
        let step_rot = exp_so3(&(full / n as f64));
        for k in 0..=n {
            let frac = k as f64 / n as f64;
            let rk = r0 * exp_so3(&(full * frac));
            x.set_rot(map.r[k][b], rk);
            x.set_euc3(map.p[k][b], p0 + (pg - p0) * frac);
            if k < n {
                x.set_rot(map.f[k][b], step_rot);
                x.set_euc3(map.v[k][b], (pg - p0) / (n as f64 * dt));
            } else {
                x.set_rot(map.f[k][b], Rotation::identity());
                x.set_euc3(map.v[k][b], Vec3::zeros());
            }
        }
    }
    for k in 0..n {
        for (slot, val) in map.inputs[k].iter().zip(inputs(k)) {
            x.set_euc(*slot, val);
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Robot models: kinematic chains and the manipulator.
// ---------------------------------------------------------------------------

/// One link of a serial chain, connected to its parent by a revolute joint.
#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub mass: f64,
    pub inertia: Mat3,
    /// Joint offset in the parent frame (world offset from the base anchor
    /// for the first link).
    pub r_parent: Vec3,
    /// Joint offset in the link's own frame.
    pub r_child: Vec3,
    /// Joint axis, shared by the parent and child frames at the reference
    /// configuration.
    pub axis: Vec3,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub base_anchor: Vec3,
    pub links: Vec<LinkSpec>,
}

impl RobotModel {
    /// Serial arm of unit-mass rods with alternating joint axes; used when no
    /// parameter file is supplied.
    pub fn default_arm(n_links: usize) -> Self {
        let length = 0.3;
        let inertia = Mat3::from_diagonal(&Vec3::new(0.0077, 0.0077, 0.00045));
        let axes = [Vec3::z(), Vec3::y()];
        let links = (0..n_links)
            .map(|j| LinkSpec {
                mass: 1.0,
                inertia,
                r_parent: if j == 0 {
                    Vec3::zeros()
                } else {
                    Vec3::new(0.0, 0.0, length / 2.0)
                },
                r_child: Vec3::new(0.0, 0.0, -length / 2.0),
                axis: axes[j % 2],
            })
            .collect();
        RobotModel { base_anchor: Vec3::zeros(), links }
    }

    /// Hanging chain with horizontal hinge axes; used by the complexity
    /// benchmark.
    pub fn hanging_chain(depth: usize) -> Self {
        let length = 0.4;
        let inertia = Mat3::from_diagonal(&Vec3::new(0.014, 0.014, 0.0008));
        let axes = [Vec3::x(), Vec3::y()];
        let links = (0..depth)
            .map(|j| LinkSpec {
                mass: 1.0,
                inertia,
                r_parent: if j == 0 {
                    Vec3::zeros()
                } else {
                    Vec3::new(0.0, 0.0, -length / 2.0)
                },
                r_child: Vec3::new(0.0, 0.0, length / 2.0),
                axis: axes[j % 2],
            })
            .collect();
        RobotModel { base_anchor: Vec3::zeros(), links }
    }

    /// Parses the plain-text robot parameter format: one `link` line per link
    /// with `mass`, `inertia` (6 entries of the symmetric matrix, row-major
    /// upper triangle), `ra`, `rb`, and `axis` fields, plus an optional
    /// `base x y z` line.
    pub fn from_file(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut base_anchor = Vec3::zeros();
        let mut links = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| {
                Err(ScenarioError::RobotModel(format!("line {}: {}", lineno + 1, msg)))
            };
            match toks[0] {
                "base" => {
                    if toks.len() != 4 {
                        return bad("base expects 3 numbers");
                    }
                    base_anchor = parse_vec3(&toks[1..4])
                        .ok_or_else(|| ScenarioError::RobotModel("bad base".into()))?;
                }
                "link" => {
                    let mut mass = None;
                    let mut inertia = None;
                    let mut r_parent = None;
                    let mut r_child = None;
                    let mut axis = None;
                    let mut i = 1;
                    while i < toks.len() {
                        match toks[i] {
                            "mass" => {
                                mass = toks.get(i + 1).and_then(|t| t.parse::<f64>().ok());
                                i += 2;
                            }
                            "inertia" => {
                                if i + 6 >= toks.len() {
                                    return bad("inertia expects 6 numbers");
                                }
                                let v: Option<Vec<f64>> =
                                    toks[i + 1..i + 7].iter().map(|t| t.parse().ok()).collect();
                                let v = match v {
                                    Some(v) => v,
                                    None => return bad("bad inertia number"),
                                };
                                inertia = Some(Mat3::new(
                                    v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5],
                                ));
                                i += 7;
                            }
                            "ra" => {
                                if i + 3 >= toks.len() {
                                    return bad("ra expects 3 numbers");
                                }
                                r_parent = parse_vec3(&toks[i + 1..i + 4]);
                                i += 4;
                            }
                            "rb" => {
                                if i + 3 >= toks.len() {
                                    return bad("rb expects 3 numbers");
                                }
                                r_child = parse_vec3(&toks[i + 1..i + 4]);
                                i += 4;
                            }
                            "axis" => {
                                if i + 3 >= toks.len() {
                                    return bad("axis expects 3 numbers");
                                }
                                axis = parse_vec3(&toks[i + 1..i + 4]);
                                i += 4;
                            }
                            other => {
                                return bad(&format!("unknown field `{other}`"));
                            }
                        }
                    }
                    let (Some(mass), Some(inertia), Some(r_parent), Some(r_child), Some(axis)) =
                        (mass, inertia, r_parent, r_child, axis)
                    else {
                        return bad("link needs mass, inertia, ra, rb, axis");
                    };
                    let norm = axis.norm();
                    if norm < 1e-12 {
                        return bad("axis must be nonzero");
                    }
                    links.push(LinkSpec { mass, inertia, r_parent, r_child, axis: axis / norm });
                }
                other => {
                    return Err(ScenarioError::RobotModel(format!(
                        "line {}: unknown directive `{other}`",
                        lineno + 1
                    )));
                }
            }
        }
        if links.is_empty() {
            return Err(ScenarioError::RobotModel("no links defined".into()));
        }
        Ok(RobotModel { base_anchor, links })
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Forward kinematics of the serial chain at joint angles `q`: each link's
    /// pose is `R_j = R_{j-1} exp(q_j axis_j)` about the shared joint axis,
    /// with the pivot point matched exactly.
    pub fn forward_kinematics(&self, q: &[f64]) -> Vec<(Rotation, Vec3)> {
        assert_eq!(q.len(), self.links.len());
        let mut out: Vec<(Rotation, Vec3)> = Vec::with_capacity(self.links.len());
        for (j, link) in self.links.iter().enumerate() {
            let (r_parent, joint_world) = if j == 0 {
                (Rotation::identity(), self.base_anchor + link.r_parent)
            } else {
                let (rp, pp) = out[j - 1];
                (rp, rp.matrix() * link.r_parent + pp)
            };
            let r = r_parent * exp_so3(&(link.axis * q[j]));
            let p = joint_world - r.matrix() * link.r_child;
            out.push((r, p));
        }
        out
    }
}

fn parse_vec3(toks: &[&str]) -> Option<Vec3> {
    let x = toks[0].parse().ok()?;
    let y = toks[1].parse().ok()?;
    let z = toks[2].parse().ok()?;
    Some(Vec3::new(x, y, z))
}

/// Orthonormal complements of a unit axis.
pub fn axis_complements(axis: &Vec3) -> [Vec3; 2] {
    let pick = if axis.x.abs() <= axis.y.abs() && axis.x.abs() <= axis.z.abs() {
        Vec3::x()
    } else if axis.y.abs() <= axis.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let c1 = axis.cross(&pick).normalize();
    let c2 = axis.cross(&c1);
    [c1, c2]
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub robot: RobotModel,
    pub n_steps: usize,
    pub dt: f64,
    pub gravity: Vec3,
    /// Quadratic weight of the hold-in-place stage costs.
    pub w_state: f64,
    pub w_input: f64,
    /// Joint-space goal configuration; defaults to the reference pose.
    pub q_goal: Vec<f64>,
    pub q_init: Vec<f64>,
    pub obstacle: Option<Obstacle>,
    pub warm_start: bool,
}

impl ChainConfig {
    pub fn new(robot: RobotModel, n_steps: usize, dt: f64) -> Self {
        let n = robot.n_links();
        ChainConfig {
            robot,
            n_steps,
            dt,
            gravity: Vec3::zeros(),
            w_state: 1.0,
            w_input: 1e-4,
            q_goal: vec![0.0; n],
            q_init: vec![0.0; n],
            obstacle: None,
            warm_start: true,
        }
    }
}

/// Builds the maximal-coordinate NLP of a serial chain: per body kinematics
/// and joint-wrench-forced dynamics rows, per joint pivot and axis rows at
/// steps 1..=N, inputs per step: one joint torque, a 3-vector pivot wrench,
/// and a 2-vector axis wrench per joint.
pub fn chain_problem(config: &ChainConfig) -> ScenarioProblem {
    let robot = &config.robot;
    let nb = robot.n_links();
    let n = config.n_steps;
    let dt = config.dt;
    // Per joint: torque (1), pivot wrench (3), axis wrench (2).
    let input_dims: Vec<usize> = (0..nb).flat_map(|_| [1usize, 3, 2]).collect();
    let (layout, map) = trajectory_layout(n, nb, &input_dims);
    let mut problem = NlpProblem::new(layout);

    let fk_init = robot.forward_kinematics(&config.q_init);
    let fk_goal = robot.forward_kinematics(&config.q_goal);

    // Initial-state pins.
    for b in 0..nb {
        let (r0, p0) = fk_init[b];
        problem.add_block(Box::new(RotPinBlock::new(map.r[0][b], r0)));
        problem.add_block(Box::new(EucPinBlock::new(
            map.p[0][b],
            DVector::from_column_slice(p0.as_slice()),
        )));
        problem.add_block(Box::new(RotPinBlock::new(map.f[0][b], Rotation::identity())));
        problem.add_block(Box::new(EucPinBlock::new(map.v[0][b], DVector::zeros(3))));
    }

    // Per-step kinematics and forced dynamics.
    for k in 0..n {
        let u = |j: usize| map.inputs[k][3 * j];
        let lam = |j: usize| map.inputs[k][3 * j + 1];
        let nu = |j: usize| map.inputs[k][3 * j + 2];
        for b in 0..nb {
            problem.add_block(Box::new(RotKinBlock::new(map.r[k + 1][b], map.r[k][b], map.f[k][b])));
            problem.add_block(Box::new(TransKinBlock::new(
                map.p[k + 1][b],
                map.p[k][b],
                map.v[k][b],
                dt,
            )));

            // Joint wrenches acting on body b, evaluated at step k+1.
            let mut rot_forces: Vec<ForceSpec> = Vec::new();
            let mut trans_forces: Vec<ForceSpec> = Vec::new();
            // Joint b connects parent (b-1 or world) to child b.
            {
                let link = &robot.links[b];
                let comps = axis_complements(&link.axis);
                let parent_rot = if b == 0 { None } else { Some(map.r[k + 1][b - 1]) };
                // Pivot wrench on the child: world force -R_a lambda.
                trans_forces.push(ForceSpec {
                    premul: Mat3::identity() * dt,
                    rot_left: None,
                    rot_right: parent_rot,
                    w_map: DMatrix::identity(3, 3),
                    input_slot: lam(b),
                });
                // Pivot torque on the child: r_b x (R_b^T (-R_a lambda)).
                rot_forces.push(ForceSpec {
                    premul: hat(&link.r_child) * (dt * dt),
                    rot_left: Some(map.r[k + 1][b]),
                    rot_right: parent_rot,
                    w_map: DMatrix::identity(3, 3),
                    input_slot: lam(b),
                });
                // Input torque on the child about its own axis.
                rot_forces.push(ForceSpec {
                    premul: -Mat3::identity() * (dt * dt),
                    rot_left: None,
                    rot_right: None,
                    w_map: DMatrix::from_column_slice(3, 1, link.axis.as_slice()),
                    input_slot: u(b),
                });
                // Axis wrench torques on the child: nu_i hat(d) R_b^T A_a c_i.
                for (i, c) in comps.iter().enumerate() {
                    let mut w_map = DMatrix::zeros(3, 2);
                    for r in 0..3 {
                        w_map[(r, i)] = c[r];
                    }
                    rot_forces.push(ForceSpec {
                        premul: -hat(&link.axis) * (dt * dt),
                        rot_left: Some(map.r[k + 1][b]),
                        rot_right: parent_rot,
                        w_map,
                        input_slot: nu(b),
                    });
                }
            }
            // Joint b+1 (if any) connects child b to grandchild b+1: reactions
            // on body b as the parent side.
            if b + 1 < nb {
                let link = &robot.links[b + 1];
                let comps = axis_complements(&link.axis);
                // Pivot wrench on the parent: world force +R_a lambda.
                trans_forces.push(ForceSpec {
                    premul: -Mat3::identity() * dt,
                    rot_left: None,
                    rot_right: Some(map.r[k + 1][b]),
                    w_map: DMatrix::identity(3, 3),
                    input_slot: lam(b + 1),
                });
                // Pivot torque on the parent: r_a x lambda (parent frame).
                rot_forces.push(ForceSpec {
                    premul: -hat(&link.r_parent) * (dt * dt),
                    rot_left: None,
                    rot_right: None,
                    w_map: DMatrix::identity(3, 3),
                    input_slot: lam(b + 1),
                });
                // Input torque reaction: +dt^2 (R_a^T R_b axis) u.
                rot_forces.push(ForceSpec {
                    premul: Mat3::identity() * (dt * dt),
                    rot_left: Some(map.r[k + 1][b]),
                    rot_right: Some(map.r[k + 1][b + 1]),
                    w_map: DMatrix::from_column_slice(3, 1, link.axis.as_slice()),
                    input_slot: u(b + 1),
                });
                // Axis wrench torques on the parent: nu_i hat(c_i) R_a^T R_b d.
                for (i, c) in comps.iter().enumerate() {
                    let mut w_map = DMatrix::zeros(3, 2);
                    for r in 0..3 {
                        w_map[(r, i)] = link.axis[r];
                    }
                    rot_forces.push(ForceSpec {
                        premul: -hat(c) * (dt * dt),
                        rot_left: Some(map.r[k + 1][b]),
                        rot_right: Some(map.r[k + 1][b + 1]),
                        w_map,
                        input_slot: nu(b + 1),
                    });
                }
            }

            let i_ns = nonstandard_inertia(&robot.links[b].inertia);
            problem.add_block(Box::new(ScaledBlock::new(
                RotDynBlock::new(map.f[k][b], map.f[k + 1][b], i_ns, rot_forces),
                1.0 / (dt * dt),
            )));
            problem.add_block(Box::new(ScaledBlock::new(
                TransDynBlock::new(
                    map.v[k][b],
                    map.v[k + 1][b],
                    robot.links[b].mass,
                    config.gravity,
                    dt,
                    trans_forces,
                ),
                1.0 / dt,
            )));
        }
    }

    // Joint constraint rows. Step 1's pose is already forced to the pinned
    // initial pose through the kinematic rows (the initial twist is pinned),
    // so its joint rows would be linearly dependent; they start at step 2.
    for k in 2..=n {
        for (j, link) in robot.links.iter().enumerate() {
            let comps = axis_complements(&link.axis);
            if j == 0 {
                problem.add_block(Box::new(PivotBlock::grounded(
                    robot.base_anchor + link.r_parent,
                    map.r[k][0],
                    map.p[k][0],
                    link.r_child,
                )));
                problem.add_block(Box::new(AxisBlock::with_axes(
                    None,
                    map.r[k][0],
                    comps,
                    link.axis,
                )));
            } else {
                problem.add_block(Box::new(PivotBlock::new(
                    map.r[k][j - 1],
                    map.p[k][j - 1],
                    link.r_parent,
                    map.r[k][j],
                    map.p[k][j],
                    link.r_child,
                )));
                problem.add_block(Box::new(AxisBlock::with_axes(
                    Some(map.r[k][j - 1]),
                    map.r[k][j],
                    comps,
                    link.axis,
                )));
            }
        }
    }
    // One obstacle row per link per constrained step.
    if let Some(obs) = &config.obstacle {
        for k in 1..=n {
            for b in 0..nb {
                problem.add_block(Box::new(ObstacleBlock::new(
                    map.p[k][b],
                    nalgebra::Vector2::new(obs.x, obs.y),
                    obs.radius,
                )));
            }
        }
    }

    // Track the goal pose of every link; regularize all inputs.
    for k in 0..=n {
        for b in 0..nb {
            let (rg, pg) = fk_goal[b];
            problem.add_cost(Box::new(ChordalCost::new(
                map.r[k][b],
                rg,
                Mat3::identity() * config.w_state,
            )));
            problem.add_cost(Box::new(QuadCost::isotropic(
                map.p[k][b],
                DVector::from_column_slice(pg.as_slice()),
                config.w_state,
            )));
            problem.add_cost(Box::new(ChordalCost::new(
                map.f[k][b],
                Rotation::identity(),
                Mat3::identity() * config.w_state,
            )));
            problem.add_cost(Box::new(QuadCost::isotropic(
                map.v[k][b],
                DVector::zeros(3),
                config.w_state,
            )));
        }
        if k < n {
            for slot in &map.inputs[k] {
                let d = problem.layout.slot(*slot).dim;
                problem.add_cost(Box::new(QuadCost::isotropic(
                    *slot,
                    DVector::zeros(d),
                    config.w_input,
                )));
            }
        }
    }

    // Joint-space linear interpolation mapped through forward kinematics.
    let mut initial = Point::origin(&problem.layout);
    for k in 0..=n {
        let frac = k as f64 / n as f64;
        let q: Vec<f64> = config
            .q_init
            .iter()
            .zip(&config.q_goal)
            .map(|(a, b)| a + (b - a) * frac)
            .collect();
        let fk = robot.forward_kinematics(&q);
        for b in 0..nb {
            initial.set_rot(map.r[k][b], fk[b].0);
            initial.set_euc3(map.p[k][b], fk[b].1);
        }
    }
    for k in 0..n {
        for b in 0..nb {
            let r_k = *initial.rot(map.r[k][b]);
            let r_n = *initial.rot(map.r[k + 1][b]);
            initial.set_rot(map.f[k][b], r_k.transpose() * r_n);
            let p_k = initial.euc3(map.p[k][b]);
            let p_n = initial.euc3(map.p[k + 1][b]);
            initial.set_euc3(map.v[k][b], (p_n - p_k) / dt);
        }
    }
    for b in 0..nb {
        initial.set_rot(map.f[n][b], Rotation::identity());
        initial.set_euc3(map.v[n][b], Vec3::zeros());
    }
    if config.warm_start {
        warm_start_inputs(&problem, &map, &mut initial);
    }
    ScenarioProblem { problem, initial, map }
}

/// Per-step linear least squares in the inputs (joint torques and constraint
/// wrenches) minimizing the dynamics residual of the given trajectory. Falls
/// back to zero inputs for singular steps and returns how many were solved.
pub fn warm_start_inputs(problem: &NlpProblem, map: &TrajMap, x: &mut Point) -> usize {
    let mut solved = 0;
    for k in 0..map.n_steps {
        let input_slots = &map.inputs[k];
        let total_dim: usize = input_slots.iter().map(|s| problem.layout.slot(*s).dim).sum();
        // Dynamics blocks of step k are exactly those touching these inputs.
        let mut rows = 0usize;
        let mut cols_of = std::collections::BTreeMap::new();
        let mut off = 0usize;
        for s in input_slots {
            cols_of.insert(*s, off);
            off += problem.layout.slot(*s).dim;
        }
        // Zero the inputs to measure the constant part of the residual.
        for s in input_slots {
            let d = problem.layout.slot(*s).dim;
            x.set_euc(*s, DVector::zeros(d));
        }
        let mut blocks = Vec::new();
        for b in problem.eq_blocks.iter() {
            if b.var_slots().iter().any(|s| cols_of.contains_key(s)) {
                rows += b.dim();
                blocks.push(b);
            }
        }
        if rows == 0 {
            continue;
        }
        let mut r0 = DVector::zeros(rows);
        let mut bmat = DMatrix::zeros(rows, total_dim);
        let mut row = 0;
        for b in &blocks {
            r0.rows_mut(row, b.dim()).copy_from(&b.value(x));
            for (slot, jac) in b.var_slots().iter().zip(b.jacobian(x)) {
                if let Some(c0) = cols_of.get(slot) {
                    for r in 0..jac.nrows() {
                        for c in 0..jac.ncols() {
                            bmat[(row + r, c0 + c)] += jac[(r, c)];
                        }
                    }
                }
            }
            row += b.dim();
        }
        let svd = bmat.svd(true, true);
        match svd.solve(&(-&r0), 1e-10) {
            Ok(w) => {
                for s in input_slots {
                    let c0 = cols_of[s];
                    let d = problem.layout.slot(*s).dim;
                    x.set_euc(*s, DVector::from_fn(d, |i, _| w[c0 + i]));
                }
                solved += 1;
            }
            Err(_) => {
                // Keep the zero inputs for this step.
            }
        }
    }
    solved
}

#[derive(Debug, Clone)]
pub struct ManipulatorConfig {
    pub seed: u64,
    pub n_steps: usize,
    pub dt: f64,
    pub robot: RobotModel,
    pub gravity: Vec3,
    pub obstacle: Obstacle,
    pub q_goal: Vec<f64>,
    pub w_state: f64,
    pub w_input: f64,
    pub warm_start: bool,
}

impl Default for ManipulatorConfig {
    fn default() -> Self {
        let robot = RobotModel::default_arm(7);
        ManipulatorConfig {
            seed: 0,
            n_steps: 40,
            dt: 0.05,
            robot,
            gravity: Vec3::zeros(),
            obstacle: Obstacle { x: 0.8, y: 0.8, radius: 0.3 },
            q_goal: vec![0.6, -0.4, 0.5, -0.6, 0.4, 0.5, -0.3],
            w_state: 1.0,
            w_input: 1e-4,
            warm_start: true,
        }
    }
}

/// Manipulator motion planning: random seeded initial joint configuration,
/// fixed goal, one cylindrical obstacle penalizing every link's center of
/// mass, joint-space interpolation plus inverse-dynamics warm start.
pub fn manipulator(config: &ManipulatorConfig) -> ScenarioProblem {
    let n_links = config.robot.n_links();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let q_init: Vec<f64> =
        (0..n_links).map(|_| rng.random_range(-0.9..0.9)).collect();
    let mut chain = ChainConfig::new(config.robot.clone(), config.n_steps, config.dt);
    chain.gravity = config.gravity;
    chain.q_init = q_init;
    chain.q_goal = config.q_goal.clone();
    chain.obstacle = Some(config.obstacle);
    chain.w_state = config.w_state;
    chain.w_input = config.w_input;
    chain.warm_start = config.warm_start;
    chain_problem(&chain)
}

// ---------------------------------------------------------------------------
// Benchmarks and sweeps.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct BenchRecord {
    pub depth: usize,
    pub dof: usize,
    pub t_residual: Duration,
    pub t_gradient: Duration,
    pub t_hessian: Duration,
    pub jacobian_nnz: usize,
}

/// Mean evaluation times of residuals, Jacobians, and weighted Hessians of
/// all constraint blocks of a single-branch chain, per depth.
pub fn chain_benchmark(depths: &[usize], evals: usize) -> Vec<BenchRecord> {
    let mut out = Vec::new();
    for &depth in depths {
        let config = ChainConfig::new(RobotModel::hanging_chain(depth), 5, 0.05);
        let scenario = chain_problem(&config);
        let x = &scenario.initial;
        let problem = &scenario.problem;
        let blocks: Vec<&Box<dyn crate::constraints::Block>> =
            problem.eq_blocks.iter().chain(problem.ineq_blocks.iter()).collect();

        // Warmup.
        for b in &blocks {
            std::hint::black_box(b.value(x));
        }
        let reps = evals.max(1);
        let t0 = Instant::now();
        for _ in 0..reps {
            for b in &blocks {
                std::hint::black_box(b.value(x));
            }
        }
        let t_residual = t0.elapsed() / reps as u32;
        let t1 = Instant::now();
        for _ in 0..reps {
            for b in &blocks {
                std::hint::black_box(b.jacobian(x));
            }
        }
        let t_gradient = t1.elapsed() / reps as u32;
        let weights: Vec<DVector<f64>> =
            blocks.iter().map(|b| DVector::from_element(b.dim(), 1.0)).collect();
        let t2 = Instant::now();
        for _ in 0..reps {
            for (b, w) in blocks.iter().zip(&weights) {
                std::hint::black_box(b.weighted_hessian(x, w));
            }
        }
        let t_hessian = t2.elapsed() / reps as u32;

        let y = DVector::zeros(problem.n_eq());
        let g0 = problem.ineq_residuals(x);
        let s = DVector::from_fn(g0.len(), |i, _| (1e-2f64).max(-g0[i]));
        let z = DVector::from_element(g0.len(), 1.0);
        let sys = problem.assemble(x, &y, &z, &s, 0.1).expect("assemble");
        out.push(BenchRecord {
            depth,
            dof: depth * 6,
            t_residual,
            t_gradient,
            t_hessian,
            jacobian_nnz: sys.jacobian_nnz(),
        });
    }
    out
}

/// Least-squares slope of `log(time)` against `log(depth)`.
pub fn loglog_slope(records: &[(f64, f64)]) -> f64 {
    let n = records.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in records {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub seed: u64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_e0: f64,
    pub final_cost: f64,
    /// Per-iteration linear-algebra time (factorization and solves).
    pub t_per_iter_solver: Duration,
    /// Per-iteration total time including function evaluation.
    pub t_per_iter_total: Duration,
    /// Last three E_0 values of the trace.
    pub tail_e0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub records: Vec<SweepRecord>,
    pub fraction_converged: f64,
    pub median_iterations: f64,
    pub mean_iterations: f64,
}

/// Runs the solver over the seeds in parallel (one instance per seed) and
/// aggregates convergence statistics. `build` generates the per-seed problem.
pub fn convergence_sweep(
    seeds: &[u64],
    opts: &SolverOptions,
    build: impl Fn(u64) -> ScenarioProblem + Sync,
) -> SweepSummary {
    let mut records: Vec<SweepRecord> = seeds
        .par_iter()
        .map(|&seed| {
            let scenario = build(seed);
            let out = solve(&scenario.problem, scenario.initial, opts)
                .expect("solver preconditions hold");
            let iters = out.iterations().max(1);
            let tail: Vec<f64> = out
                .trace
                .iter()
                .rev()
                .take(3)
                .map(|r| r.e_0)
                .collect::<Vec<_>>()
                .into_iter()
                .rev()
                .collect();
            SweepRecord {
                seed,
                status: out.status,
                iterations: out.iterations(),
                final_e0: out.final_e0(),
                final_cost: out.trace.last().map_or(f64::NAN, |r| r.cost),
                t_per_iter_solver: out.timing.linalg / iters as u32,
                t_per_iter_total: out.timing.total / iters as u32,
                tail_e0: tail,
            }
        })
        .collect();
    records.sort_by_key(|r| r.seed);
    summarize(records)
}

fn summarize(records: Vec<SweepRecord>) -> SweepSummary {
    let converged: Vec<&SweepRecord> =
        records.iter().filter(|r| r.status == SolveStatus::Converged).collect();
    let fraction = converged.len() as f64 / records.len().max(1) as f64;
    let mut iters: Vec<usize> = converged.iter().map(|r| r.iterations).collect();
    iters.sort_unstable();
    let median = if iters.is_empty() {
        f64::NAN
    } else if iters.len() % 2 == 1 {
        iters[iters.len() / 2] as f64
    } else {
        (iters[iters.len() / 2 - 1] + iters[iters.len() / 2]) as f64 / 2.0
    };
    let mean = if iters.is_empty() {
        f64::NAN
    } else {
        iters.iter().sum::<usize>() as f64 / iters.len() as f64
    };
    SweepSummary {
        records,
        fraction_converged: fraction,
        median_iterations: median,
        mean_iterations: mean,
    }
}

/// Median wall time of factorizing the KKT system assembled at the scenario's
/// initial point.
pub fn factorization_time(scenario: &ScenarioProblem, reps: usize) -> Duration {
    let problem = &scenario.problem;
    let x = &scenario.initial;
    let y = DVector::zeros(problem.n_eq());
    let g0 = problem.ineq_residuals(x);
    let s = DVector::from_fn(g0.len(), |i, _| (1e-2f64).max(-g0[i]));
    let z = DVector::from_fn(g0.len(), |i, _| 0.1 / s[i]);
    let sys = problem.assemble(x, &y, &z, &s, 0.1).expect("assemble");
    let (band, _) = sys.build_condensed(0.0);
    let mut times: Vec<Duration> = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let copy = band.clone();
        let t = Instant::now();
        std::hint::black_box(copy.factor().expect("factor"));
        times.push(t.elapsed());
    }
    times.sort();
    times[times.len() / 2]
}

/// Assembles the KKT system at the scenario's initial point with nonzero
/// multipliers, activating every Hessian block; used by sparsity inspections.
pub fn assemble_at_init(scenario: &ScenarioProblem, mu: f64) -> crate::kkt::KktSystem {
    let problem = &scenario.problem;
    let x = &scenario.initial;
    let y = DVector::from_element(problem.n_eq(), 0.1);
    let g0 = problem.ineq_residuals(x);
    let s = DVector::from_fn(g0.len(), |i, _| (1e-2f64).max(-g0[i]));
    let z = DVector::from_fn(g0.len(), |i, _| mu / s[i]);
    problem.assemble(x, &y, &z, &s, mu).expect("assemble")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::fd_check;
    use crate::nlp::retract;
    use rand::rngs::StdRng;

    #[test]
    fn docking_layout_counts() {
        let config = DockingConfig { n_steps: 40, ..Default::default() };
        let scenario = drone_docking(&config);
        let n = scenario.problem.layout.dim();
        assert_eq!(n, 41 * 12 + 40 * 4);
        assert_eq!(scenario.problem.n_eq(), 12 + 40 * 12);
        assert_eq!(scenario.problem.n_ineq(), 0);
        let boxed = drone_docking(&DockingConfig {
            variant: DockingVariant::InputBoxes,
            ..Default::default()
        });
        assert_eq!(boxed.problem.n_ineq(), 40 * 8);
    }

    #[test]
    fn docking_trivial_instance_is_feasible_and_stationary() {
        let config = DockingConfig::default();
        let scenario = drone_docking_from(&config, Rotation::identity(), Vec3::zeros());
        let x = &scenario.initial;
        let h = scenario.problem.eq_residuals(x);
        assert!(h.amax() < 1e-12, "residual {:.3e}", h.amax());
        let metrics = scenario.problem.error_metrics(
            x,
            &DVector::zeros(scenario.problem.n_eq()),
            &DVector::zeros(0),
            &DVector::zeros(0),
            0.1,
        );
        assert!(metrics.e_0 <= 1e-9, "E_0 at trivial init {:.3e}", metrics.e_0);
    }

    #[test]
    fn docking_geodesic_init_satisfies_kinematics_only() {
        let config = DockingConfig { seed: 3, ..Default::default() };
        let scenario = drone_docking(&config);
        let x = &scenario.initial;
        // Kinematic rows hold exactly; dynamics rows are finite and nonzero.
        let mut saw_dynamics_violation = false;
        for b in scenario.problem.eq_blocks.iter() {
            let v = b.value(x);
            assert!(v.iter().all(|a| a.is_finite()));
            match b.name() {
                "rot-kinematics" | "trans-kinematics" => {
                    assert!(v.amax() < 1e-9, "{} violated: {:.3e}", b.name(), v.amax());
                }
                _ => {
                    if v.amax() > 1e-6 {
                        saw_dynamics_violation = true;
                    }
                }
            }
        }
        assert!(saw_dynamics_violation, "geodesic init should violate dynamics");
    }

    #[test]
    fn geodesic_midpoint_matches_formula() {
        let config = DockingConfig { seed: 9, n_steps: 10, ..Default::default() };
        let scenario = drone_docking(&config);
        let (r_init, _) = config.sample_initial_pose();
        let full = log_so3(&(r_init.transpose() * Rotation::identity()));
        let expected = r_init * exp_so3(&(full * 0.5));
        let mid = scenario.initial.rot(scenario.map.r[5][0]);
        assert!((mid.matrix() - expected.matrix()).norm() < 1e-12);
    }

    #[test]
    fn chain_blocks_pass_fd_checks_at_random_states() {
        use rand::SeedableRng as _;
        let mut rng = StdRng::seed_from_u64(111);
        let config = ChainConfig::new(RobotModel::hanging_chain(3), 2, 0.05);
        let scenario = chain_problem(&config);
        let layout = &scenario.problem.layout;
        // Random perturbations of the initial point.
        for b in scenario.problem.eq_blocks.iter().take(40) {
            let mut report = crate::constraints::FdReport::default();
            for _ in 0..4 {
                let d = DVector::from_fn(layout.dim(), |_, _| {
                    rand::Rng::random_range(&mut rng, -0.3..0.3)
                });
                let x = retract(layout, &scenario.initial, &d);
                report.merge(fd_check(b.as_ref(), layout, &x, 3, &mut rng));
            }
            assert!(
                report.passes(1e-6, 1e-4),
                "{}: grad {:.3e} hess {:.3e}",
                b.name(),
                report.max_grad_err,
                report.max_hess_err
            );
        }
    }

    #[test]
    fn chain_init_is_feasible_for_joints_and_kinematics() {
        let config = ChainConfig::new(RobotModel::hanging_chain(3), 4, 0.05);
        let scenario = chain_problem(&config);
        for b in scenario.problem.eq_blocks.iter() {
            match b.name() {
                "pivot-joint" | "axis-joint" | "rot-kinematics" | "trans-kinematics"
                | "rot-pin" | "euc-pin" => {
                    let v = b.value(&scenario.initial);
                    assert!(v.amax() < 1e-10, "{} violated {:.3e}", b.name(), v.amax());
                }
                _ => {}
            }
        }
    }

    #[test]
    fn straight_chain_at_rest_without_gravity_has_zero_warm_start_residual() {
        // Static chain, zero gravity: zero torques/wrenches already satisfy
        // the dynamics, and the warm start must reproduce that.
        let mut config = ChainConfig::new(RobotModel::hanging_chain(3), 3, 0.05);
        config.gravity = Vec3::zeros();
        let scenario = chain_problem(&config);
        for b in scenario.problem.eq_blocks.iter() {
            let v = b.value(&scenario.initial);
            assert!(v.amax() < 1e-8, "{} residual {:.3e}", b.name(), v.amax());
        }
        for k in 0..scenario.map.n_steps {
            for slot in &scenario.map.inputs[k] {
                assert!(scenario.initial.euc(*slot).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn warm_start_zeroes_dynamics_residual_under_gravity() {
        // Hanging chain under gravity at rest: the wrenches found by the
        // least-squares warm start must support the weight exactly.
        let mut config = ChainConfig::new(RobotModel::hanging_chain(3), 3, 0.05);
        config.gravity = Vec3::new(0.0, 0.0, -9.81);
        let scenario = chain_problem(&config);
        for b in scenario.problem.eq_blocks.iter() {
            let v = b.value(&scenario.initial);
            assert!(v.amax() < 1e-8, "{} residual {:.3e}", b.name(), v.amax());
        }
    }

    #[test]
    fn manipulator_layout_matches_formula() {
        let config = ManipulatorConfig { n_steps: 40, ..Default::default() };
        let scenario = manipulator(&config);
        let n = scenario.problem.layout.dim();
        // (N+1) * 7 * 12 state coordinates + N * (7 * 6) input coordinates.
        assert_eq!(n, 41 * 7 * 12 + 40 * 42);
        // Per joint: 3 pivot + 2 axis rows at each constrained step (step 1 is
        // forced to the pinned pose through the kinematics, so its rows are
        // omitted as implied).
        let joint_rows: usize = scenario
            .problem
            .eq_blocks
            .iter()
            .filter(|b| matches!(b.name(), "pivot-joint" | "axis-joint"))
            .map(|b| b.dim())
            .sum();
        assert_eq!(joint_rows, 39 * 7 * 5);
        // One obstacle row per link per constrained step.
        assert_eq!(scenario.problem.n_ineq(), 40 * 7);
    }

    #[test]
    fn joint_blocks_touch_exactly_two_bodies() {
        let config = ChainConfig::new(RobotModel::hanging_chain(3), 2, 0.05);
        let scenario = chain_problem(&config);
        for b in scenario.problem.eq_blocks.iter() {
            if matches!(b.name(), "pivot-joint" | "axis-joint") {
                let mut bodies = std::collections::BTreeSet::new();
                for s in b.var_slots() {
                    if let SlotScope::Body(i) = scenario.problem.layout.slot(*s).scope {
                        bodies.insert(i);
                    }
                }
                assert!(bodies.len() <= 2, "joint touches {:?}", bodies);
            }
        }
    }

    #[test]
    fn robot_file_round_trip() {
        let text = "\
# test arm
base 0 0 0.1
link mass 2.5 inertia 0.02 0 0 0.02 0 0.004 ra 0 0 0 rb 0 0 -0.15 axis 0 0 1
link mass 1.5 inertia 0.01 0 0 0.01 0 0.002 ra 0 0 0.15 rb 0 0 -0.15 axis 0 1 0
";
        let robot = RobotModel::parse(text).expect("parse");
        assert_eq!(robot.n_links(), 2);
        assert_eq!(robot.base_anchor, Vec3::new(0.0, 0.0, 0.1));
        assert!((robot.links[1].axis - Vec3::y()).norm() < 1e-15);
        // FK joint consistency: pivot points match on both sides.
        let fk = robot.forward_kinematics(&[0.3, -0.4]);
        let j1_parent = fk[0].0.matrix() * robot.links[1].r_parent + fk[0].1;
        let j1_child = fk[1].0.matrix() * robot.links[1].r_child + fk[1].1;
        assert!((j1_parent - j1_child).norm() < 1e-12);
        // Malformed input errors out.
        assert!(RobotModel::parse("link mass oops").is_err());
        assert!(RobotModel::parse("").is_err());
    }

    #[test]
    fn bench_records_have_positive_times_and_growing_nnz() {
        let records = chain_benchmark(&[1, 2], 5);
        assert_eq!(records.len(), 2);
        for r in &records {
            assert!(r.t_residual.as_nanos() > 0);
            assert!(r.t_gradient.as_nanos() > 0);
            assert!(r.t_hessian.as_nanos() > 0);
        }
        // Doubling the depth roughly doubles the Jacobian nonzeros.
        let ratio = records[1].jacobian_nnz as f64 / records[0].jacobian_nnz as f64;
        assert!((1.5..=2.6).contains(&ratio), "nnz ratio {ratio}");
    }

    #[test]
    fn sweep_trivial_instance_converges_fast() {
        let opts = SolverOptions { eps_tol: 1e-9, ..Default::default() };
        let summary = convergence_sweep(&[0], &opts, |_seed| {
            let config = DockingConfig::default();
            drone_docking_from(&config, Rotation::identity(), Vec3::zeros())
        });
        assert_eq!(summary.records.len(), 1);
        assert_eq!(summary.records[0].status, SolveStatus::Converged);
        assert!(summary.records[0].iterations <= 2);
        assert!((summary.median_iterations - summary.records[0].iterations as f64).abs() < 1e-12);
    }

    #[test]
    fn scenario_generation_is_deterministic() {
        let config = DockingConfig { seed: 17, ..Default::default() };
        let a = drone_docking(&config);
        let b = drone_docking(&config);
        let ha = a.problem.eq_residuals(&a.initial);
        let hb = b.problem.eq_residuals(&b.initial);
        assert_eq!(ha, hb);
        let costa = a.problem.cost_value(&a.initial);
        let costb = b.problem.cost_value(&b.initial);
        assert_eq!(costa.to_bits(), costb.to_bits());
    }
}
