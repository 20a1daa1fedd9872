//! Difference quotients of `μ_ε` along random generators against `<∇μ_ε, ℓ>`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volterra_games::game::{fractional_linear, scalar_grid, BuiltinCosts};
use volterra_games::kernel::{make_fractional_kernel, make_ode_kernel};
use volterra_games::lyapunov::{gradient_study, sample_gradient_cases, NuFunctional};
use volterra_games::position::{MasterGrid, Vector, VolterraSystem};

fn main() -> volterra_games::Result<()> {
    let cells = 4096;
    let dt = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];
    for (name, kernel) in [
        ("ode", make_ode_kernel(1, 0.5, 1.0)?),
        ("fractional 0.5", make_fractional_kernel(&[0.5], 1.0)?),
    ] {
        let grid = MasterGrid::uniform(1.0, cells)?;
        let system = VolterraSystem::with_free_term(grid, kernel, |t| Vector::from_element(1, 1.0 - 0.5 * t))?;
        let game = fractional_linear(
            system,
            -0.5,
            scalar_grid(&[-1.0, 0.0, 1.0]),
            scalar_grid(&[-0.5, 0.5]),
            &BuiltinCosts::default(),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let cases = sample_gradient_cases(&game, 20, cells / 64, &mut rng)?;
        let nu = NuFunctional::for_system(game.system.clone(), 0.1, None)?;
        let s = gradient_study(&nu, &cases, &dt)?;
        println!("{name}");
        for k in 0..s.dt.len() {
            println!("  dt {:<10} error {:.3e}  rel {:.3e}", s.dt[k], s.errors[k], s.rel_errors[k]);
        }
        println!("  ratios {:?}", s.ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>());
        println!("  worst single pair: rel {:.2e}, ratio {:.3}", s.worst_pair_rel, s.worst_pair_ratio);
    }
    Ok(())
}
