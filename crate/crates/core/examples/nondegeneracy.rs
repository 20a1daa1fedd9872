//! Non-degeneracy triage of the builtin kernels.

use volterra_games::kernel::{
    check_nondegeneracy, make_counterexample_kernel, make_fractional_kernel, make_ode_kernel,
};
use volterra_games::position::MasterGrid;

fn main() -> volterra_games::Result<()> {
    let grid = MasterGrid::uniform(1.0, 32)?;
    let kernels = [
        ("ode n=2", make_ode_kernel(2, 0.5, 1.0)?),
        ("fractional [0.3, 0.8]", make_fractional_kernel(&[0.3, 0.8], 1.0)?),
        ("fractional [1, 1]", make_fractional_kernel(&[1.0, 1.0], 1.0)?),
        ("counterexample t_s=0.5", make_counterexample_kernel(0.5, 1.0)?),
    ];
    for (name, k) in &kernels {
        let r = check_nondegeneracy(k, grid.nodes())?;
        println!(
            "{name:<24} A {:?} (min |diag| {:.3?})  B {:?} (min |det| {:.3e})  -> {:?}, Hoelder {}",
            r.condition_a.status,
            r.condition_a.min_abs_diagonal,
            r.condition_b.status,
            r.condition_b.min_abs_det,
            r.verdict,
            r.hoelder
        );
    }
    Ok(())
}
