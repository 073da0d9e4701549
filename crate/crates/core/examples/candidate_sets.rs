//! Diverse candidate sets: cells matching a target stiffness, one per latent
//! cluster, against the same number of nearest matches.
//!
//! `cargo run --release --example candidate_sets -- <db.metadb> <weights> [C11 C12 C22 C33]`

use metadesign::latentmodel::read_weights;
use metadesign::latentops::{diverse_candidates, greedy_candidates, mean_pairwise_distance, CandidateParams};
use metadesign::pipeline::{annotate_latents, load_database};
use metadesign::StiffnessComponents;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let usage = "usage: candidate_sets <db> <weights> [C11 C12 C22 C33]";
    let mut db = load_database(args.get(1).ok_or(usage)?.as_ref())?;
    let model = read_weights(args.get(2).ok_or(usage)?.as_ref())?;
    let target = if args.len() >= 7 {
        let v: Vec<f64> = args[3..7].iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        StiffnessComponents::new(v[0], v[1], v[2], v[3])
    } else {
        // the median record makes a target with many near matches
        let mut props = db.properties();
        props.sort_by(|a, b| a.c11.total_cmp(&b.c11));
        props[props.len() / 2]
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    annotate_latents(&mut db, &model, threads)?;

    println!("target C11 {:.4} C12 {:.4} C22 {:.4} C33 {:.4}", target.c11, target.c12, target.c22, target.c33);
    let diverse = diverse_candidates(&db, &target, &CandidateParams { seed: 1, ..CandidateParams::default() })?;
    let greedy = greedy_candidates(&db, &target, diverse.entries.len())?;
    for (name, set) in [("diverse", &diverse), ("greedy", &greedy)] {
        println!("{name}:");
        for c in &set.entries {
            println!("  record {:>6}  mse {:.5}  vf {:.3}", c.id, c.mse, db.get(c.id).map_or(0.0, |r| r.structure.volume_fraction()));
        }
        println!("  mean latent distance {:.4}", mean_pairwise_distance(&set.latents()));
    }
    Ok(())
}
