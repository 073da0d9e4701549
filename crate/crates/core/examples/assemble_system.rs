//! Two-stage system design: optimize the property field, then pick one
//! compatible database cell per element through the grid MRF and stitch.
//!
//! `cargo run --release --example assemble_system -- <db.metadb> <weights> [out.pgm]`

use metadesign::assembly::{
    build_assembly_graph, dd_mrf_solve, stitch_and_evaluate, write_pgm, AssemblyParams, DdParams, IncompatWeights,
};
use metadesign::latentmodel::read_weights;
use metadesign::latentops::CandidateParams;
use metadesign::macroopt::{arch_case, assemble_and_solve, build_sdf, objective_and_rrmse, optimize_properties, DesignMode, OptimConfig};
use metadesign::pipeline::{annotate_latents, load_database};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let usage = "usage: assemble_system <db> <weights> [out.pgm]";
    let mut db = load_database(args.get(1).ok_or(usage)?.as_ref())?;
    let model = read_weights(args.get(2).ok_or(usage)?.as_ref())?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    annotate_latents(&mut db, &model, threads)?;

    let problem = arch_case(10, 4, 0.05, 0.03);
    let sdf = build_sdf(&db.properties(), 24)?;
    let design = optimize_properties(&problem, DesignMode::Database(&sdf), &OptimConfig::default())?;
    let (_, field_rrmse) = objective_and_rrmse(&assemble_and_solve(&problem, &design.field)?, &problem)?;
    println!("continuous field: RRMSE {field_rrmse:.4}");

    let params = AssemblyParams {
        candidates: CandidateParams { seed: 1, ..CandidateParams::default() },
        weights: IncompatWeights { geometric: 1.0, mechanical: 1.0 },
        admission_relaxations: 2,
        threads,
    };
    let graph = build_assembly_graph(&design.field, &problem, &db, &params)?;
    let labeling = dd_mrf_solve(&graph.mrf, &DdParams::default());
    println!(
        "MRF: energy {:.4}, dual {:.4}, {} iterations, certified {}",
        labeling.energy, labeling.dual, labeling.iterations, labeling.converged
    );
    let report = stitch_and_evaluate(&labeling, &graph, &db, &problem)?;
    println!(
        "assembled: RRMSE {:.4}, mean thetaG {:.3}, mean thetaM {:.3}, {}/{} load-path boundaries disconnected",
        report.rrmse, report.mean_geometric, report.mean_mechanical, report.disconnected_load_paths, report.load_path_edges
    );
    if let Some(out) = args.get(3) {
        write_pgm(out.as_ref(), &report.structure)?;
        println!("structure written to {out}");
    }
    Ok(())
}
