//! Guarantees of the positional laws U0 and V0 on the pursuit game against every open-loop opponent.

use std::time::Instant;

use volterra_games::game::{linear_pursuit, scalar_grid, BuiltinCosts};
use volterra_games::kernel::make_ode_kernel;
use volterra_games::position::{MasterGrid, Position, Vector, VolterraSystem};
use volterra_games::strategy::{zeta_optimality_experiment, TieBreak, ZetaOptions};
use volterra_games::value::PartitionSpec;

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
    let part = PartitionSpec::uniform(game.system.grid(), 0, 4)?;
    for tie_break in [TieBreak::ValueLookahead, TieBreak::LowestIndex] {
        let start = Instant::now();
        let opts = ZetaOptions {
            tie_break,
            ..ZetaOptions::default()
        };
        let r = zeta_optimality_experiment(&game, &root, 0.1, &[1.0, 0.5, 0.25, 0.1], &[part.clone()], opts)?;
        println!("tie-break {tie_break:?} ({:.2} s)", start.elapsed().as_secs_f64());
        println!("  {:>5} {:>7} {:>10} {:>8} {:>5} {:>5}", "eps", "side", "guarantee", "rho_hat", "pass", "ties");
        for row in &r.rows {
            println!(
                "  {:>5} {:>7} {:>10.4} {:>8.4} {:>5} {:>5}",
                row.epsilon,
                format!("{:?}", row.side).to_lowercase(),
                row.guarantee,
                row.rho_hat,
                row.pass,
                row.ties
            );
        }
        println!("  smallest passing eps: {:?}", r.partitions[0].smallest_passing_eps);
    }
    Ok(())
}
