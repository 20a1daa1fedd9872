//! Lower and upper values of the pursuit game `x' = u + v`, `|x(T)|` on finer partitions.

use volterra_games::game::{linear_pursuit, scalar_grid, BuiltinCosts};
use volterra_games::kernel::make_ode_kernel;
use volterra_games::position::{MasterGrid, Position, Vector, VolterraSystem};
use volterra_games::value::{value_gap_study, PartitionSpec, DEFAULT_NODE_BUDGET};

fn main() -> volterra_games::Result<()> {
    let grid = MasterGrid::uniform(1.0, 16)?;
    let system = VolterraSystem::with_free_term(grid, make_ode_kernel(1, 0.5, 1.0)?, |_| Vector::from_element(1, 1.0))?;
    let game = linear_pursuit(
        system,
        scalar_grid(&[-1.0, 0.0, 1.0]),
        scalar_grid(&[-0.5, 0.0, 0.5]),
        &BuiltinCosts::default(),
    )?;
    let root = Position::initial(game.system.clone());
    let parts = [1, 2, 4]
        .iter()
        .map(|&s| PartitionSpec::uniform(game.system.grid(), 0, s))
        .collect::<Result<Vec<_>, _>>()?;
    let study = value_gap_study(&game, &root, &parts, DEFAULT_NODE_BUDGET)?;
    println!("{:>8} {:>10} {:>10} {:>10} {:>8}", "diam", "lower", "upper", "gap", "nodes");
    for r in &study.rows {
        println!(
            "{:>8} {:>10.6} {:>10.6} {:>10.2e} {:>8}",
            r.diameter,
            r.lower,
            r.upper,
            r.upper - r.lower,
            r.node_count
        );
    }
    // the pursuer closes at rate 1/2, so the value is max(|x0| - T/2, 0)
    println!("closed form 0.5");
    Ok(())
}
