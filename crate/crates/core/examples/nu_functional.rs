//! Identities and growth constants of the Lyapunov-Krasovskii functional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volterra_games::dynamics::sample_position;
use volterra_games::game::{fractional_linear, scalar_grid, BuiltinCosts};
use volterra_games::kernel::make_fractional_kernel;
use volterra_games::lyapunov::{check_nu_bounds, check_nu_identities, NuFunctional};
use volterra_games::position::{MasterGrid, Position, Vector, VolterraSystem};

fn main() -> volterra_games::Result<()> {
    let grid = MasterGrid::uniform(1.0, 64)?;
    let system = VolterraSystem::with_free_term(grid, make_fractional_kernel(&[0.5], 1.0)?, |t| {
        Vector::from_element(1, 1.0 - 0.5 * t)
    })?;
    let game = fractional_linear(
        system,
        -0.5,
        scalar_grid(&[-1.0, 0.0, 1.0]),
        scalar_grid(&[-0.5, 0.5]),
        &BuiltinCosts::default(),
    )?;
    let root = Position::initial(game.system.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pairs = Vec::new();
    for _ in 0..50 {
        let (t1, t2) = (rng.gen_range(0..48), rng.gen_range(0..48));
        pairs.push((sample_position(&game, &root, t1, &mut rng)?, sample_position(&game, &root, t2, &mut rng)?));
    }
    let nu = NuFunctional::for_system(game.system.clone(), 1.0, None)?;
    let p = nu.params();
    println!("q = {:.4}, alpha' = {:.4}, C1 = {:.4}", p.q, p.alpha_prime, p.c1);
    for eps in [1.0, 0.1, 0.01] {
        let r = check_nu_identities(&nu.with_epsilon(eps)?, &pairs)?;
        println!(
            "eps {eps:<5} diag {:.1e}  symmetric {}  extension {:.1e}  min {:.3e}  pass {}",
            r.max_diagonal, r.symmetric, r.max_extension_defect, r.min_nu, r.pass
        );
    }
    let b = check_nu_bounds(&nu, &pairs, &[1.0, 0.1, 0.01], 0.75)?;
    for row in &b.per_epsilon {
        println!("eps {:<5} C2 {:.4}  C3 {:.4}", row.epsilon, row.c2, row.c3_gradient.max(row.c3_antisymmetry));
    }
    println!("C2 spread across eps {:.1}%", 100.0 * b.c2_spread);
    Ok(())
}
