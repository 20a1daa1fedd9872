//! Lower and upper Hamiltonians: separable pursuit against the bilinear game.

use volterra_games::game::{bilinear, check_isaacs, hamiltonians, linear_pursuit, scalar_grid, BuiltinCosts};
use volterra_games::kernel::make_ode_kernel;
use volterra_games::position::{MasterGrid, Vector, VolterraSystem};

fn main() -> volterra_games::Result<()> {
    let grid = MasterGrid::uniform(1.0, 8)?;
    let system = VolterraSystem::with_free_term(grid, make_ode_kernel(1, 0.5, 1.0)?, |_| Vector::zeros(1))?;
    let costs = BuiltinCosts::default();
    let sep = linear_pursuit(system.clone(), scalar_grid(&[-1.0, 1.0]), scalar_grid(&[-0.5, 0.5]), &costs)?;
    let bil = bilinear(system, vec![-1.0, 1.0], vec![-1.0, 1.0], &costs)?;
    let x = Vector::zeros(1);
    println!("{:>6} {:>22} {:>22}", "s", "pursuit lower/upper", "bilinear lower/upper");
    for s in [-2.0, -0.5, 0.0, 0.5, 2.0] {
        let sv = Vector::from_element(1, s);
        let a = hamiltonians(&sep, 0.0, &x, &sv);
        let b = hamiltonians(&bil, 0.0, &x, &sv);
        println!("{s:>6} {:>10.3} {:>10.3}  {:>10.3} {:>10.3}", a.lower, a.upper, b.lower, b.upper);
    }
    let samples: Vec<_> = (0..20)
        .map(|k| (0.05 * k as f64, Vector::zeros(1), Vector::from_element(1, -1.0 + 0.1 * k as f64)))
        .collect();
    for (name, g) in [("pursuit", &sep), ("bilinear", &bil)] {
        let r = check_isaacs(g, &samples, 1e-9)?;
        println!("{name}: max gap {:.3e}, Isaacs {}", r.max_gap, if r.pass { "holds" } else { "fails" });
    }
    Ok(())
}
