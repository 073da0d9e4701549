//! Semantic arrows: latent directions that raise C11 or swap the stiff axis.
//! Walks each arrow from random database cells, homogenizes the decoded cells
//! and reports how the properties follow the walk.
//!
//! `cargo run --release --example semantic_arrows -- <db.metadb> <weights> [starts] [steps] [step_size]`

use metadesign::latentmodel::read_weights;
use metadesign::latentops::{anisotropy_score, c11_score, semantic_arrow, spearman, traverse, ArrowCriterion};
use metadesign::pipeline::{annotate_latents, load_database, par_map};
use metadesign::Homogenizer;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let usage = "usage: semantic_arrows <db> <weights> [starts] [steps] [step_size]";
    let mut db = load_database(args.get(1).ok_or(usage)?.as_ref())?;
    let model = read_weights(args.get(2).ok_or(usage)?.as_ref())?;
    let starts: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let steps: usize = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let step_size: f64 = args.get(5).map(|s| s.parse()).transpose()?.unwrap_or(0.5);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());

    annotate_latents(&mut db, &model, threads)?;
    let hom = Homogenizer::new(db.height, db.width, db.material)?;
    let stiff = semantic_arrow(&db, c11_score, ArrowCriterion::Quantile(0.3))?;
    let aniso = semantic_arrow(&db, anisotropy_score, ArrowCriterion::Ratio(2.0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let picks = sample(&mut rng, db.len(), starts).into_vec();

    let (mut monotone, mut flipped) = (0, 0);
    for &i in &picks {
        let r = &db.records()[i];
        let z0 = r.latent.as_ref().ok_or("record without latent")?;
        let walk = |arrow| -> Result<Vec<metadesign::StiffnessComponents>, Box<dyn std::error::Error>> {
            let cells = traverse(z0, arrow, steps, step_size, &model)?;
            Ok(par_map(&cells, threads, |m| hom.homogenize(m)).into_iter().collect::<Result<_, _>>()?)
        };
        let c = walk(&stiff)?;
        let c11: Vec<f64> = c.iter().map(|p| p.c11).collect();
        let index: Vec<f64> = (0..c11.len()).map(|k| k as f64).collect();
        let rho = spearman(&index, &c11);
        let a = walk(&aniso)?;
        let (first, last) = (a[0].c22 - a[0].c11, a[a.len() - 1].c22 - a[a.len() - 1].c11);
        let flip = first < 0.0 && last > 0.0;
        monotone += usize::from(rho >= 0.8);
        flipped += usize::from(flip);
        println!(
            "record {:>5}: C11 {:.3} -> {:.3} (spearman {rho:.3}); C22-C11 {first:+.3} -> {last:+.3}{}",
            r.id,
            c11[0],
            c11[c11.len() - 1],
            if flip { " flipped" } else { "" }
        );
    }
    println!("C11 arrow monotone for {monotone}/{starts} starts; anisotropy flipped for {flipped}/{starts}");
    Ok(())
}
