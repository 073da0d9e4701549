//! Macro property optimization on the arch or tip-shear case, with the
//! database region as the feasible set.
//!
//! `cargo run --release --example design_macro -- <db.metadb> [arch|tip] [sdf_resolution] [field.csv]`

use metadesign::macroopt::{arch_case, build_sdf, optimize_properties, tip_shear_case, write_field_csv, DesignMode, OptimConfig};
use metadesign::pipeline::load_database;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let db = load_database(args.get(1).ok_or("usage: design_macro <db> [arch|tip] [sdf_resolution] [field.csv]")?.as_ref())?;
    let problem = match args.get(2).map(String::as_str).unwrap_or("arch") {
        "tip" => tip_shear_case(10, 4, 0.05),
        _ => arch_case(10, 4, 0.05, 0.03),
    };
    let resolution = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(24);

    let t = Instant::now();
    let sdf = build_sdf(&db.properties(), resolution)?;
    println!("distance field at {resolution}^4 nodes in {:.1} s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let result = optimize_properties(&problem, DesignMode::Database(&sdf), &OptimConfig::default())?;
    for h in result.history.iter().filter(|h| h.iter % 25 == 0) {
        println!("iter {:>4}: objective {:.4e}  rrmse {:.4}  constraint {:.2e}", h.iter, h.objective, h.rrmse, h.constraint);
    }
    let (first, last) = (&result.history[0], &result.history[result.history.len() - 1]);
    println!(
        "{} iterations in {:.1} s: objective {:.4e} -> {:.4e} (ratio {:.3}), min phi {:.4}, converged {}",
        last.iter,
        t.elapsed().as_secs_f64(),
        first.objective,
        last.objective,
        last.objective / first.objective,
        result.min_phi.unwrap_or(f64::NAN),
        result.converged
    );
    if let Some(out) = args.get(4) {
        write_field_csv(out.as_ref(), &result.field)?;
        println!("field written to {out}");
    }
    Ok(())
}
