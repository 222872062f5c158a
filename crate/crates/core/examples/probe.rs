use lietraj::ripm::{solve, SolverOptions};
use lietraj::scenarios::*;

fn main() {
    for (links, n, tol, budget) in [(3usize, 10usize, 1e-6f64, 100), (7, 40, 1e-6, 100)] {
        let mut config = ManipulatorConfig {
            robot: RobotModel::default_arm(links),
            n_steps: n,
            q_goal: (0..links).map(|i| 0.4 - 0.15 * i as f64).collect(),
            ..Default::default()
        };
        config.seed = 1;
        let t = std::time::Instant::now();
        let scenario = manipulator(&config);
        let opts = SolverOptions { eps_tol: tol, n_max: budget, ..Default::default() };
        let out = solve(&scenario.problem, scenario.initial, &opts).unwrap();
        println!("manip {links} links N={n}: {:?} iters={} E0={:.3e} ({:?})",
            out.status, out.iterations(), out.final_e0(), t.elapsed());
    }
}
