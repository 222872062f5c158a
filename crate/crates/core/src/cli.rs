//! Command-line front end: flat dotted-key configuration, the
//! check/simulate/optimize/sweep/bench commands, and line-oriented outputs.
//!
//! Configuration precedence: defaults < config file < environment overrides
//! (`LIETRAJ_<KEY>` with dots replaced by underscores, uppercased) < explicit
//! CLI flags. Every float in the outputs is serialized with 17 significant
//! digits so records round-trip losslessly.

use crate::constraints::{fd_check, fd_check_cost, Block, FaultyBlock, FdReport, PivotBlock};
use crate::costs::{ChordalCost, QuadCost};
use crate::lie::{exp_so3, Mat3, Rotation, Vec3};
use crate::nlp::{Point, SlotScope, VariableLayout};
use crate::rigid_body::{simulate, spatial_momentum, BodyParams, BodyState, ControlInput};
use crate::ripm::{solve, SolveStatus, SolverOptions};
use crate::scenarios::{
    chain_benchmark, convergence_sweep, drone_docking, loglog_slope, manipulator, ChainConfig,
    DockingConfig, DockingVariant, ManipulatorConfig, Obstacle, RobotModel, ScenarioProblem,
};
use nalgebra::DVector;
use rand::SeedableRng;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment-variable prefix for config overrides.
pub const ENV_PREFIX: &str = "LIETRAJ_";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] crate::scenarios::ScenarioError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] crate::rigid_body::DynamicsError),
}

/// Exit codes: 0 converged/pass, 1 solver non-convergence or check failure,
/// 2 usage/config error.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Flat dotted-key configuration map.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Applies `LIETRAJ_<KEY>` environment overrides for every known key.
    pub fn apply_env_overrides(&mut self) {
        for key in KNOWN_KEYS {
            let env_name = format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"));
            if let Ok(v) = std::env::var(&env_name) {
                self.values.insert(key.to_string(), v);
            }
        }
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("{key}: expected a number, got `{v}`")))
            })
            .transpose()
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| CliError::Config(format!("{key}: expected an integer, got `{v}`")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| CliError::Config(format!("{key}: expected an integer, got `{v}`")))
            })
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        self.values
            .get(key)
            .map(|v| match v.as_str() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                other => Err(CliError::Config(format!("{key}: expected a bool, got `{other}`"))),
            })
            .transpose()
    }

    /// Whitespace-separated list of floats.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.values
            .get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| {
                            CliError::Config(format!("{key}: expected numbers, got `{t}`"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }
}

/// Keys honored by the environment override mechanism.
pub const KNOWN_KEYS: &[&str] = &[
    "scenario.id",
    "scenario.seed",
    "scenario.n",
    "scenario.dt",
    "scenario.mass",
    "scenario.inertia",
    "scenario.gravity",
    "scenario.tau_lim",
    "scenario.uz_lim",
    "scenario.pos_box",
    "scenario.angle_max",
    "scenario.obstacles",
    "scenario.chain_depth",
    "scenario.robot_file",
    "scenario.warm_start",
    "scenario.q_goal",
    "cost.w_rot",
    "cost.w_pos",
    "cost.w_pose_change",
    "cost.w_vel",
    "cost.w_input",
    "solver.eps_tol",
    "solver.n_max",
    "solver.j_max",
    "solver.mu0",
    "solver.kappa_mu",
    "solver.theta_mu",
    "solver.tau_min",
    "solver.gamma_theta_barrier",
    "solver.gamma_theta_progress",
    "solver.theta_min",
    "solver.eta_phi",
    "solver.beta",
    "solver.s_phi",
    "solver.s_theta",
    "solver.delta",
    "solver.step_cap",
    "solver.regularization",
    "sweep.seeds",
    "sweep.first_seed",
    "bench.depths",
    "bench.evals",
    "check.states",
    "check.trials",
    "check.inject_fault",
    "sim.steps",
    "sim.omega0",
    "sim.tau",
    "sim.uz",
];

/// Tolerance presets of the `--tol` flag.
pub fn tolerance_preset(name: &str) -> Result<f64, CliError> {
    match name {
        "table" => Ok(1e-11),
        "figure" => Ok(1e-14),
        "ipopt-default" => Ok(1e-6),
        other => Err(CliError::Config(format!(
            "unknown tolerance preset `{other}` (expected table | figure | ipopt-default)"
        ))),
    }
}

/// 17-significant-digit float formatting used by all output files.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn solver_options(config: &ConfigMap) -> Result<SolverOptions, CliError> {
    let mut o = SolverOptions::default();
    if let Some(v) = config.get_f64("solver.eps_tol")? {
        o.eps_tol = v;
    }
    if let Some(v) = config.get_usize("solver.n_max")? {
        o.n_max = v;
    }
    if let Some(v) = config.get_usize("solver.j_max")? {
        o.j_max = v;
    }
    if let Some(v) = config.get_f64("solver.mu0")? {
        o.mu0 = v;
    }
    if let Some(v) = config.get_f64("solver.kappa_mu")? {
        o.kappa_mu = v;
    }
    if let Some(v) = config.get_f64("solver.theta_mu")? {
        o.theta_mu = v;
    }
    if let Some(v) = config.get_f64("solver.tau_min")? {
        o.tau_min = v;
    }
    if let Some(v) = config.get_f64("solver.gamma_theta_barrier")? {
        o.gamma_theta_barrier = v;
    }
    if let Some(v) = config.get_f64("solver.gamma_theta_progress")? {
        o.gamma_theta_progress = v;
    }
    if let Some(v) = config.get_f64("solver.theta_min")? {
        o.theta_min = v;
    }
    if let Some(v) = config.get_f64("solver.eta_phi")? {
        o.eta_phi = v;
    }
    if let Some(v) = config.get_f64("solver.beta")? {
        o.beta = v;
    }
    if let Some(v) = config.get_f64("solver.s_phi")? {
        o.s_phi = v;
    }
    if let Some(v) = config.get_f64("solver.s_theta")? {
        o.s_theta = v;
    }
    if let Some(v) = config.get_f64("solver.delta")? {
        o.delta = v;
    }
    if let Some(v) = config.get_f64("solver.step_cap")? {
        o.step_cap = v;
    }
    if let Some(v) = config.get_bool("solver.regularization")? {
        o.regularization = v;
    }
    Ok(o)
}

fn inertia_from(config: &ConfigMap, key: &str, default: Mat3) -> Result<Mat3, CliError> {
    match config.get_f64_list(key)? {
        None => Ok(default),
        Some(v) if v.len() == 6 => Ok(Mat3::new(
            v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5],
        )),
        Some(v) => Err(CliError::Config(format!(
            "{key}: expected 6 entries of the symmetric inertia, got {}",
            v.len()
        ))),
    }
}

fn vec3_from(config: &ConfigMap, key: &str, default: Vec3) -> Result<Vec3, CliError> {
    match config.get_f64_list(key)? {
        None => Ok(default),
        Some(v) if v.len() == 3 => Ok(Vec3::new(v[0], v[1], v[2])),
        Some(v) => Err(CliError::Config(format!("{key}: expected 3 numbers, got {}", v.len()))),
    }
}

fn obstacles_from(config: &ConfigMap) -> Result<Vec<Obstacle>, CliError> {
    let Some(raw) = config.get_str("scenario.obstacles") else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for part in raw.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let nums: Result<Vec<f64>, _> = part.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match nums {
            Ok(v) if v.len() == 3 => out.push(Obstacle { x: v[0], y: v[1], radius: v[2] }),
            _ => {
                return Err(CliError::Config(format!(
                    "scenario.obstacles: expected `x,y,r` groups, got `{part}`"
                )))
            }
        }
    }
    Ok(out)
}

pub fn docking_config(config: &ConfigMap, variant: DockingVariant) -> Result<DockingConfig, CliError> {
    let mut c = DockingConfig { variant, ..Default::default() };
    if let Some(v) = config.get_u64("scenario.seed")? {
        c.seed = v;
    }
    if let Some(v) = config.get_usize("scenario.n")? {
        c.n_steps = v;
    }
    if let Some(v) = config.get_f64("scenario.dt")? {
        c.dt = v;
    }
    if let Some(v) = config.get_f64("scenario.mass")? {
        c.mass = v;
    }
    c.inertia = inertia_from(config, "scenario.inertia", c.inertia)?;
    c.gravity = vec3_from(config, "scenario.gravity", c.gravity)?;
    if let Some(v) = config.get_f64("scenario.tau_lim")? {
        c.tau_lim = v;
    }
    c.uz_lim = match config.get_f64("scenario.uz_lim")? {
        Some(v) => v,
        None => 4.0 * c.mass * c.gravity.norm(),
    };
    if let Some(v) = config.get_f64("scenario.pos_box")? {
        c.pos_box = v;
    }
    if let Some(v) = config.get_f64("scenario.angle_max")? {
        c.angle_max = v;
    }
    c.obstacles = obstacles_from(config)?;
    if let Some(v) = config.get_f64("cost.w_rot")? {
        c.weights.w_rot = v;
    }
    if let Some(v) = config.get_f64("cost.w_pos")? {
        c.weights.w_pos = v;
    }
    if let Some(v) = config.get_f64("cost.w_pose_change")? {
        c.weights.w_pose_change = v;
    }
    if let Some(v) = config.get_f64("cost.w_vel")? {
        c.weights.w_vel = v;
    }
    if let Some(v) = config.get_f64("cost.w_input")? {
        c.weights.w_input = v;
    }
    Ok(c)
}

/// Builds the scenario named by `scenario.id`.
pub fn build_scenario(config: &ConfigMap) -> Result<ScenarioProblem, CliError> {
    let id = config.get_str("scenario.id").unwrap_or("docking");
    match id {
        "docking" => Ok(drone_docking(&docking_config(config, DockingVariant::Unconstrained)?)),
        "docking-boxes" => Ok(drone_docking(&docking_config(config, DockingVariant::InputBoxes)?)),
        "docking-cluttered" => {
            let mut c = docking_config(config, DockingVariant::Cluttered)?;
            if c.obstacles.is_empty() {
                c.obstacles = vec![
                    Obstacle { x: 0.9, y: 0.9, radius: 0.5 },
                    Obstacle { x: -1.0, y: -0.6, radius: 0.4 },
                ];
            }
            Ok(drone_docking(&c))
        }
        "chain" => {
            let depth = config.get_usize("scenario.chain_depth")?.unwrap_or(3);
            let n = config.get_usize("scenario.n")?.unwrap_or(10);
            let dt = config.get_f64("scenario.dt")?.unwrap_or(0.05);
            let mut c = ChainConfig::new(RobotModel::hanging_chain(depth), n, dt);
            c.gravity = vec3_from(config, "scenario.gravity", Vec3::new(0.0, 0.0, -9.81))?;
            if let Some(w) = config.get_bool("scenario.warm_start")? {
                c.warm_start = w;
            }
            Ok(crate::scenarios::chain_problem(&c))
        }
        "manipulator" => {
            let mut c = ManipulatorConfig::default();
            if let Some(path) = config.get_str("scenario.robot_file") {
                c.robot = RobotModel::from_file(Path::new(path))?;
                let n = c.robot.n_links();
                c.q_goal = vec![0.3; n];
            }
            if let Some(v) = config.get_u64("scenario.seed")? {
                c.seed = v;
            }
            if let Some(v) = config.get_usize("scenario.n")? {
                c.n_steps = v;
            }
            if let Some(v) = config.get_f64("scenario.dt")? {
                c.dt = v;
            }
            c.gravity = vec3_from(config, "scenario.gravity", c.gravity)?;
            if let Some(q) = config.get_f64_list("scenario.q_goal")? {
                if q.len() != c.robot.n_links() {
                    return Err(CliError::Config(format!(
                        "scenario.q_goal: expected {} angles, got {}",
                        c.robot.n_links(),
                        q.len()
                    )));
                }
                c.q_goal = q;
            }
            if let Some(w) = config.get_bool("scenario.warm_start")? {
                c.warm_start = w;
            }
            if let Some(obs) = obstacles_from(config)?.first() {
                c.obstacle = *obs;
            }
            Ok(manipulator(&c))
        }
        other => Err(CliError::Config(format!(
            "unknown scenario.id `{other}` (expected docking | docking-boxes | docking-cluttered | chain | manipulator)"
        ))),
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(content.as_bytes()).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

/// Derivative checking across all block families plus both cost expansions.
/// Exit code is nonzero when any family exceeds the 1e-6 / 1e-4 thresholds.
pub fn cmd_check(config: &ConfigMap, out: &Path) -> Result<i32, CliError> {
    let states = config.get_usize("check.states")?.unwrap_or(25);
    let trials = config.get_usize("check.trials")?.unwrap_or(4);
    let inject = config.get_bool("check.inject_fault")?.unwrap_or(false);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        config.get_u64("scenario.seed")?.unwrap_or(0),
    );

    // A docking instance and a 3-link chain cover every block family.
    let docking = drone_docking(&DockingConfig {
        variant: DockingVariant::Cluttered,
        obstacles: vec![Obstacle { x: 0.5, y: 0.5, radius: 0.4 }],
        n_steps: 3,
        ..Default::default()
    });
    let mut chain_cfg = ChainConfig::new(RobotModel::default_arm(3), 3, 0.05);
    chain_cfg.gravity = Vec3::new(0.0, 0.0, -9.81);
    let chain = crate::scenarios::chain_problem(&chain_cfg);

    let mut families: BTreeMap<String, FdReport> = BTreeMap::new();
    for scenario in [&docking, &chain] {
        let layout = &scenario.problem.layout;
        for block in scenario
            .problem
            .eq_blocks
            .iter()
            .chain(scenario.problem.ineq_blocks.iter())
        {
            let entry = families.entry(block.name().to_string()).or_default();
            for _ in 0..states.max(1) {
                let d = DVector::from_fn(layout.dim(), |_, _| {
                    rand::Rng::random_range(&mut rng, -0.4..0.4)
                });
                let x = crate::nlp::retract(layout, &scenario.initial, &d);
                entry.merge(fd_check(block.as_ref(), layout, &x, trials, &mut rng));
            }
        }
    }

    // Cost expansions on a standalone layout.
    let mut layout = VariableLayout::new();
    let rslot = layout.push_rotation(Some(0), SlotScope::Free);
    let pslot = layout.push_euclidean(3, Some(0), SlotScope::Free);
    let chordal = ChordalCost::new(rslot, exp_so3(&Vec3::new(0.3, -0.5, 0.2)), Mat3::identity());
    let quad = QuadCost::isotropic(pslot, DVector::from_column_slice(&[0.4, -0.2, 0.9]), 1.5);
    for _ in 0..states.max(1) {
        let d = DVector::from_fn(layout.dim(), |_, _| rand::Rng::random_range(&mut rng, -1.5..1.5));
        let x = crate::nlp::retract(&layout, &Point::origin(&layout), &d);
        families
            .entry("chordal-cost".into())
            .or_default()
            .merge(fd_check_cost(&chordal, &layout, &x, trials, &mut rng));
        families
            .entry("quad-cost".into())
            .or_default()
            .merge(fd_check_cost(&quad, &layout, &x, trials, &mut rng));
    }

    if inject {
        // Deliberately corrupted gradient must be detected and named.
        let mut fl = VariableLayout::new();
        let r1 = fl.push_rotation(Some(0), SlotScope::Body(0));
        let p1 = fl.push_euclidean(3, Some(0), SlotScope::Body(0));
        let r2 = fl.push_rotation(Some(0), SlotScope::Body(1));
        let p2 = fl.push_euclidean(3, Some(0), SlotScope::Body(1));
        let faulty = FaultyBlock {
            inner: PivotBlock::new(r1, p1, Vec3::x(), r2, p2, Vec3::y()),
            perturbation: 1e-3,
        };
        let entry = families.entry(faulty.name().to_string()).or_default();
        for _ in 0..states.max(1) {
            let d = DVector::from_fn(fl.dim(), |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
            let x = crate::nlp::retract(&fl, &Point::origin(&fl), &d);
            entry.merge(fd_check(&faulty, &fl, &x, trials, &mut rng));
        }
    }

    let mut pass = true;
    let mut report = String::from("family,max_grad_err,max_hess_err,status\n");
    println!("{:<20} {:>14} {:>14}  status", "family", "grad err", "hess err");
    for (name, rep) in &families {
        let ok = rep.passes(1e-6, 1e-4);
        pass &= ok;
        println!(
            "{:<20} {:>14.3e} {:>14.3e}  {}",
            name,
            rep.max_grad_err,
            rep.max_hess_err,
            if ok { "pass" } else { "FAIL" }
        );
        report.push_str(&format!(
            "{},{},{},{}\n",
            name,
            format_float(rep.max_grad_err),
            format_float(rep.max_hess_err),
            if ok { "pass" } else { "fail" }
        ));
    }
    ensure_out_dir(out)?;
    write_file(&out.join("check.csv"), &report)?;
    Ok(if pass { EXIT_OK } else { EXIT_FAILED })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Forward simulation of a single rigid body; writes the trajectory and
/// prints the momentum drift and orthonormality defect.
pub fn cmd_simulate(config: &ConfigMap, out: &Path) -> Result<i32, CliError> {
    let steps = config.get_usize("sim.steps")?.unwrap_or(1000);
    let dt = config.get_f64("scenario.dt")?.unwrap_or(0.01);
    let mass = config.get_f64("scenario.mass")?.unwrap_or(1.0);
    let inertia = inertia_from(
        config,
        "scenario.inertia",
        Mat3::from_diagonal(&Vec3::new(0.02, 0.03, 0.04)),
    )?;
    let gravity = vec3_from(config, "scenario.gravity", Vec3::zeros())?;
    let omega0 = vec3_from(config, "sim.omega0", Vec3::new(3.0, -2.0, 1.5))?;
    let tau = vec3_from(config, "sim.tau", Vec3::zeros())?;
    let uz = config.get_f64("sim.uz")?.unwrap_or(0.0);

    let params = BodyParams::new(mass, inertia, gravity)?;
    let init = BodyState {
        rot: Rotation::identity(),
        pos: Vec3::zeros(),
        pose_change: exp_so3(&(omega0 * dt)),
        vel: Vec3::zeros(),
    };
    let inputs = vec![ControlInput { tau, u_z: uz }; steps];
    let traj = simulate(&init, &inputs, &params, dt, 1e-12)?;

    let m0 = spatial_momentum(&traj.states[0][0], &params.inertia_ns);
    let mut drift: f64 = 0.0;
    let mut defect: f64 = 0.0;
    let mut body = String::from("k,px,py,pz,vx,vy,vz,mom_x,mom_y,mom_z,ortho_defect\n");
    for (k, step) in traj.states.iter().enumerate() {
        let s = &step[0];
        let m = spatial_momentum(s, &params.inertia_ns);
        if tau == Vec3::zeros() {
            drift = drift.max((m - m0).norm() / m0.norm().max(1e-300));
        }
        defect = defect.max(s.rot.ortho_defect());
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            k,
            format_float(s.pos.x),
            format_float(s.pos.y),
            format_float(s.pos.z),
            format_float(s.vel.x),
            format_float(s.vel.y),
            format_float(s.vel.z),
            format_float(m.x),
            format_float(m.y),
            format_float(m.z),
            format_float(s.rot.ortho_defect()),
        ));
    }
    ensure_out_dir(out)?;
    write_file(&out.join("trajectory.csv"), &body)?;
    println!("simulated {steps} steps at dt = {dt}");
    if tau == Vec3::zeros() {
        println!("spatial angular momentum drift (relative): {drift:.3e}");
    }
    println!("max orthonormality defect: {defect:.3e}");
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

/// One trace line per outer iteration.
pub fn trace_csv(trace: &[crate::ripm::IterationRecord]) -> String {
    let mut out = String::from("iter,e_0,e_mu,mu,cost,theta,alpha,j\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iter,
            format_float(r.e_0),
            format_float(r.e_mu),
            format_float(r.mu),
            format_float(r.cost),
            format_float(r.theta),
            format_float(r.alpha),
            r.j_used,
        ));
    }
    out
}

pub fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::MaxIters => "max-iters",
        SolveStatus::LineSearchFailure => "line-search-failure",
        SolveStatus::FactorizationFailure => "factorization-failure",
    }
}

/// Runs the configured scenario once; writes `trace_<seed>.csv` and
/// `summary_<seed>.txt`. Exit code encodes the solver status.
pub fn cmd_optimize(config: &ConfigMap, out: &Path) -> Result<i32, CliError> {
    let seed = config.get_u64("scenario.seed")?.unwrap_or(0);
    let opts = solver_options(config)?;
    let scenario = build_scenario(config)?;
    let outcome = solve(&scenario.problem, scenario.initial, &opts)
        .map_err(|e| CliError::Config(e.to_string()))?;

    ensure_out_dir(out)?;
    write_file(&out.join(format!("trace_{seed}.csv")), &trace_csv(&outcome.trace))?;

    let iters = outcome.iterations().max(1);
    let summary = format!(
        "status = {}\niterations = {}\nfinal_e0 = {}\nfinal_cost = {}\nwall_time_s = {}\nt_per_iter_solver_s = {}\nt_per_iter_total_s = {}\n",
        status_name(outcome.status),
        outcome.iterations(),
        format_float(outcome.final_e0()),
        format_float(outcome.trace.last().map_or(f64::NAN, |r| r.cost)),
        format_float(outcome.timing.total.as_secs_f64()),
        format_float(outcome.timing.linalg.as_secs_f64() / iters as f64),
        format_float(outcome.timing.total.as_secs_f64() / iters as f64),
    );
    write_file(&out.join(format!("summary_{seed}.txt")), &summary)?;
    print!("{summary}");
    Ok(if outcome.status == SolveStatus::Converged { EXIT_OK } else { EXIT_FAILED })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Multi-seed convergence sweep; writes `sweep.csv` and prints the aggregate.
pub fn cmd_sweep(config: &ConfigMap, out: &Path) -> Result<i32, CliError> {
    let n_seeds = config.get_u64("sweep.seeds")?.unwrap_or(50);
    let first = config.get_u64("sweep.first_seed")?.unwrap_or(0);
    let seeds: Vec<u64> = (first..first + n_seeds).collect();
    let opts = solver_options(config)?;

    // Validate the configuration once up front so a bad config errors out
    // before the parallel region panics.
    build_scenario(config)?;

    let summary = convergence_sweep(&seeds, &opts, |seed| {
        let mut per_seed = config.clone();
        per_seed.set("scenario.seed", seed);
        build_scenario(&per_seed).expect("scenario config was validated")
    });

    let mut csv = String::from("seed,status,iters,e0_final,t_per_iter_solver,t_per_iter_total\n");
    for r in &summary.records {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.seed,
            status_name(r.status),
            r.iterations,
            format_float(r.final_e0),
            format_float(r.t_per_iter_solver.as_secs_f64()),
            format_float(r.t_per_iter_total.as_secs_f64()),
        ));
    }
    ensure_out_dir(out)?;
    write_file(&out.join("sweep.csv"), &csv)?;
    println!(
        "{} seeds: {:.1}% converged, median iterations {}, mean iterations {:.2}",
        summary.records.len(),
        100.0 * summary.fraction_converged,
        summary.median_iterations,
        summary.mean_iterations,
    );
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

/// Kinematic-chain derivative-evaluation benchmark; writes `bench.csv`.
pub fn cmd_bench(config: &ConfigMap, out: &Path) -> Result<i32, CliError> {
    let depths: Vec<usize> = match config.get_f64_list("bench.depths")? {
        Some(v) => v.iter().map(|d| *d as usize).collect(),
        None => vec![2, 4, 8, 16, 32],
    };
    let evals = config.get_usize("bench.evals")?.unwrap_or(100);
    let records = chain_benchmark(&depths, evals);
    let mut csv = String::from("depth,t_residual,t_gradient,t_hessian\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.depth,
            format_float(r.t_residual.as_secs_f64()),
            format_float(r.t_gradient.as_secs_f64()),
            format_float(r.t_hessian.as_secs_f64()),
        ));
        println!(
            "depth {:>3}: residual {:>12.3e} s, gradient {:>12.3e} s, hessian {:>12.3e} s",
            r.depth,
            r.t_residual.as_secs_f64(),
            r.t_gradient.as_secs_f64(),
            r.t_hessian.as_secs_f64()
        );
    }
    if records.len() >= 2 {
        let pts: Vec<(f64, f64)> =
            records.iter().map(|r| (r.depth as f64, r.t_hessian.as_secs_f64())).collect();
        println!("log-log slope of second-order evaluation time: {:.3}", loglog_slope(&pts));
    }
    ensure_out_dir(out)?;
    write_file(&out.join("bench.csv"), &csv)?;
    Ok(EXIT_OK)
}

/// Entry point shared by the binary: dispatches a parsed command.
#[allow(clippy::too_many_arguments)]
pub fn run_command(
    command: &str,
    config_path: Option<&Path>,
    seed: Option<u64>,
    tol: Option<&str>,
    out: Option<&Path>,
    workers: Option<usize>,
) -> Result<i32, CliError> {
    let mut config = match config_path {
        Some(p) => ConfigMap::from_file(p)?,
        None => ConfigMap::new(),
    };
    config.apply_env_overrides();
    if let Some(s) = seed {
        config.set("scenario.seed", s);
    }
    if let Some(name) = tol {
        config.set("solver.eps_tol", format_float(tolerance_preset(name)?));
    }
    if let Some(k) = workers {
        // Ignore the error when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let out_dir = out.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"));
    match command {
        "check" => cmd_check(&config, &out_dir),
        "simulate" => cmd_simulate(&config, &out_dir),
        "optimize" => cmd_optimize(&config, &out_dir),
        "sweep" => cmd_sweep(&config, &out_dir),
        "bench" => cmd_bench(&config, &out_dir),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    }
}
