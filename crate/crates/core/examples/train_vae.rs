//! Trains the autoencoder and regressor on a saved database and reports
//! held-out reconstruction and property accuracy.
//!
//! `cargo run --release --example train_vae -- <db.metadb> [epochs] [weights.out]`

use metadesign::latentmodel::{train, validation_report, write_loss_csv, write_weights, TrainingConfig, TrainingSample};
use metadesign::pipeline::load_database;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let db = load_database(args.get(1).ok_or("usage: train_vae <db> [epochs] [weights]")?.as_ref())?;
    let epochs = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let weights = args.get(3).cloned().unwrap_or_else(|| "vae.weights".into());

    let samples: Vec<TrainingSample> =
        db.records().iter().map(|r| TrainingSample { structure: &r.structure, label: r.properties }).collect();
    let cfg = TrainingConfig { epochs, rng_seed: 7, ..TrainingConfig::default() };
    let start = Instant::now();
    let model = train(&samples, &cfg)?;
    println!("trained {epochs} epochs on {} cells in {:.1} s", model.train_indices.len(), start.elapsed().as_secs_f64());

    let held: Vec<TrainingSample> = model.validation_indices.iter().map(|&i| samples[i]).collect();
    let report = validation_report(&held, &model.params)?;
    println!(
        "validation: {} cells, median pixel agreement {:.4}, median relative property error {:.4}, mean KL {:.3}",
        report.samples, report.median_pixel_agreement, report.median_relative_error, report.mean_kl
    );
    write_weights(weights.as_ref(), &model.params)?;
    write_loss_csv(format!("{weights}.loss.csv").as_ref(), &model.history)?;
    Ok(())
}
