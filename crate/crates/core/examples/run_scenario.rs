//! Runs a scenario file through the library, as the `volterra-games run` command does.
//!
//! `cargo run --example run_scenario -- crates/core/examples/scenarios/ode_pursuit.toml`

use std::path::PathBuf;

use volterra_games::cli::{load_scenario, run};

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/scenarios/ode_pursuit.toml")));
    let scenario = match load_scenario(&path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let out = std::env::temp_dir().join("volterra-games").join(&scenario.name);
    let report = run(&scenario, Some(&out)).expect("output directory is writable");
    print!("{}", report.table());
    for o in &report.outcomes {
        for f in &o.files {
            println!("  {}", f.display());
        }
    }
    std::process::exit(report.exit_code());
}
