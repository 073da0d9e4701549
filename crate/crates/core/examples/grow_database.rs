//! Grows a labelled database from the parametric seed catalogue and saves it.
//!
//! `cargo run --release --example grow_database -- [iterations] [batch] [out.metadb]`

use metadesign::microstructure::seeds::default_seeds;
use metadesign::pipeline::{grow_database, save_database, GrowthConfig};
use metadesign::MaterialSpec;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let batch = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let out = args.get(3).cloned().unwrap_or_else(|| "grown.metadb".into());

    let seeds = default_seeds(50, 50)?;
    println!("{} seeds", seeds.len());
    let cfg = GrowthConfig { iterations, batch, rng_seed: 1, ..GrowthConfig::default() };
    let start = Instant::now();
    let db = grow_database(&seeds, MaterialSpec::default(), &cfg, |s| {
        if s.iteration % 10 == 0 {
            println!("iteration {:>4}: {:>6} records, C11 in [{:.4}, {:.4}]", s.iteration, s.records, s.lower[0], s.upper[0]);
        }
    })?;
    println!("{} records in {:.1} s", db.len(), start.elapsed().as_secs_f64());
    save_database(&db, out.as_ref())?;
    println!("saved to {out}");
    Ok(())
}
