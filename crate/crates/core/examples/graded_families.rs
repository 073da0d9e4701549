//! Graded families along the built-in curve: graph search over the records
//! near the curve, then latent densification of each family.
//!
//! `cargo run --release --example graded_families -- <db.metadb> <weights> [n_terminal] [count]`

use metadesign::family::{densify_family, extract_families, DensifyParams, FamilyParams, GradationCurve};
use metadesign::latentmodel::read_weights;
use metadesign::pipeline::{annotate_latents, load_database};
use metadesign::Homogenizer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let usage = "usage: graded_families <db> <weights> [n_terminal] [count]";
    let mut db = load_database(args.get(1).ok_or(usage)?.as_ref())?;
    let model = read_weights(args.get(2).ok_or(usage)?.as_ref())?;
    let n_terminal = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let count = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    annotate_latents(&mut db, &model, threads)?;

    let curve = GradationCurve::graded(&db.material, 0.05)?;
    let families = extract_families(&db, &curve, &FamilyParams { k: 5, n_terminal, count })?;
    let hom = Homogenizer::new(db.height, db.width, db.material)?;
    let dp = DensifyParams { threads, ..DensifyParams::default() };
    let scaler = db.scaler();
    for (k, f) in families.iter().enumerate() {
        let c11: Vec<String> = f.members.iter().map(|m| format!("{:.3}", m.properties.c11)).collect();
        let d = densify_family(f, &model, &hom, &dp)?;
        let near = d.fraction_within(&curve, &scaler, 2.0 * curve.delta).unwrap_or(0.0);
        println!(
            "family {k}: {} members, path length {:.3}, C11 [{}]; {} inserted, {:.0}% within 2 delta",
            f.members.len(),
            f.path_length,
            c11.join(" "),
            d.inserted().count(),
            100.0 * near
        );
    }
    Ok(())
}
