//! Caputo relaxation `D^0.5 x = -x`, `x(0) = 1` against the Mittag-Leffler series.

use std::time::Instant;

use volterra_games::dynamics::solve_motion;
use volterra_games::game::{fractional_linear, scalar_grid, BuiltinCosts};
use volterra_games::kernel::make_fractional_kernel;
use volterra_games::numerics::mittag_leffler;
use volterra_games::position::{MasterGrid, Position, Vector, VolterraSystem};

fn main() -> volterra_games::Result<()> {
    let exact = mittag_leffler(0.5, -1.0)?;
    println!("E_0.5(-1) = {exact:.12}");
    println!("{:>6} {:>16} {:>12} {:>10}", "cells", "x(T)", "rel error", "ms");
    for cells in [32, 64, 128, 256, 512, 1024] {
        let start = Instant::now();
        let grid = MasterGrid::uniform(1.0, cells)?;
        let kernel = make_fractional_kernel(&[0.5], 1.0)?;
        let system = VolterraSystem::with_free_term(grid, kernel, |_| Vector::from_element(1, 1.0))?;
        let game = fractional_linear(system, -1.0, scalar_grid(&[0.0]), scalar_grid(&[0.0]), &BuiltinCosts::default())?;
        let root = Position::initial(game.system.clone());
        let m = solve_motion(&game, &root, &vec![0; cells], &vec![0; cells])?;
        let x = m.x[cells][0];
        println!(
            "{cells:>6} {x:>16.12} {:>12.3e} {:>10.1}",
            (x - exact).abs() / exact,
            start.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(())
}
