//! Stage runners shared by the command line and the acceptance harness.
//! Every stage writes its artifacts into a [`RunDir`], whose manifest lists
//! the inputs, the seed and a SHA-256 of every output.

use super::{annotate_latents, grow_database, par_map, Database, GrowthConfig, PipelineError, RunConfig};
use super::{DesignCase, DesignModeName};
use crate::assembly::{
    boundary_scores, build_assembly_graph, dd_mrf_solve, evaluate_assembly, labeling_csv, realise_from_family,
    stitch_and_evaluate, stitched_pgm, stitched_svg, AssemblyError, AssemblyParams, AssemblyReport, DdParams,
    IncompatWeights, Labeling,
};
use crate::family::{
    densify_family, extract_families, families_csv, family_filmstrip_svg, DensifiedFamily, DensifyParams, FamilyError,
    FamilyParams, GradationCurve, MetamaterialFamily,
};
use crate::homogenization::{HomogenizationError, Homogenizer, MaterialSpec, StiffnessComponents};
use crate::latentmodel::{
    train, validation_report, write_loss_csv, write_weights, LatentError, ModelParameters, TrainedModel,
    TrainingSample, ValidationReport,
};
use crate::latentops::svg::{pca_scatter_svg, strip_svg};
use crate::latentops::{
    anisotropy_score, c11_score, diverse_candidates, fit_pca, greedy_candidates, mean_pairwise_distance,
    poisson_score, semantic_arrow, spearman, traverse, ArrowCriterion, CandidateParams, CandidateSet,
    LatentOpsError,
};
use crate::macroopt::{
    arch_case, build_sdf, optimize_properties, read_problem, tip_shear_case, write_field_csv, write_field_svg,
    write_history_csv, DesignMode, MacroError, MacroProblem, OptimConfig, OptimResult, PropertyField,
};
use crate::microstructure::{seeds::default_seeds, Microstructure, MicrostructureError};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Failure of a stage. `Usage` and `Config` map to exit code 2, the rest to 1.
#[derive(Debug, Error)]
pub enum StageError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{kind}: {message}")]
    Runtime { kind: &'static str, message: String },
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Usage(_) | StageError::Config(_) => 2,
            StageError::Runtime { .. } => 1,
        }
    }

    fn runtime(kind: &'static str, message: impl std::fmt::Display) -> Self {
        // one line on stderr
        StageError::Runtime { kind, message: message.to_string().replace('\n', " ") }
    }
}

macro_rules! runtime_from {
    ($($t:ty => $kind:literal),* $(,)?) => {
        $(impl From<$t> for StageError {
            fn from(e: $t) -> Self {
                StageError::runtime($kind, e)
            }
        })*
    };
}

runtime_from!(
    std::io::Error => "io",
    HomogenizationError => "homogenization",
    LatentError => "latentmodel",
    LatentOpsError => "latentops",
    FamilyError => "family",
    MacroError => "macroopt",
    AssemblyError => "assembly",
    MicrostructureError => "microstructure",
);

impl From<PipelineError> for StageError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => StageError::Config(m),
            other => StageError::runtime("pipeline", other),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// `run-<UTC timestamp>-<command>/` under an output root.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    command: String,
    seed: u64,
    inputs: Vec<(String, String, String)>,
}

impl RunDir {
    pub fn create(out: &Path, command: &str, seed: u64) -> Result<Self, StageError> {
        std::fs::create_dir_all(out)?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
        let base = format!("run-{stamp}-{command}");
        let mut root = out.join(&base);
        let mut n = 1;
        while root.exists() {
            root = out.join(format!("{base}-{n}"));
            n += 1;
        }
        std::fs::create_dir(&root)?;
        Ok(Self { root, command: command.to_string(), seed, inputs: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, StageError> {
        let p = self.file(name);
        std::fs::write(&p, bytes)?;
        Ok(p)
    }

    /// Records an input file and its hash in the manifest.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<(), StageError> {
        let bytes = std::fs::read(path).map_err(|e| StageError::runtime("io", format!("{}: {e}", path.display())))?;
        self.inputs.push((label.to_string(), path.display().to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    /// Writes `manifest.txt` covering every file in the directory and returns the path of the directory.
    pub fn finish(self) -> Result<PathBuf, StageError> {
        let mut names: Vec<String> = std::fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != "manifest.txt")
            .collect();
        names.sort();
        let mut m = String::new();
        let _ = writeln!(m, "command {}", self.command);
        let _ = writeln!(m, "seed {}", self.seed);
        let _ = writeln!(m, "version {}", env!("CARGO_PKG_VERSION"));
        for (label, path, hash) in &self.inputs {
            let _ = writeln!(m, "input {label} {hash} {path}");
        }
        for n in names {
            let bytes = std::fs::read(self.root.join(&n))?;
            let _ = writeln!(m, "output {} {} {n}", sha256_hex(&bytes), bytes.len());
        }
        std::fs::write(self.root.join("manifest.txt"), m)?;
        Ok(self.root)
    }
}

/// Annotates the database with the model's posterior means when any record
/// lacks a latent vector or the stored size differs from the model's.
pub fn ensure_latents(db: &mut Database, model: &ModelParameters, threads: usize) -> Result<(), StageError> {
    let j = model.latent_dim();
    if db.records().iter().any(|r| r.latent.as_ref().is_none_or(|z| z.len() != j)) {
        annotate_latents(db, model, threads)?;
    }
    Ok(())
}

fn material(cfg: &RunConfig) -> MaterialSpec {
    MaterialSpec {
        youngs_modulus: cfg.seeds.youngs_modulus,
        poisson_ratio: cfg.seeds.poisson_ratio,
        ..MaterialSpec::default()
    }
}

fn props_row(c: &StiffnessComponents) -> String {
    format!("{},{},{},{}", c.c11, c.c12, c.c22, c.c33)
}

// ---------------------------------------------------------------- gen-db

/// Grows the database from the parametric seed catalogue.
/// Writes `database.metadb`, `growth.csv` and `property_space.svg`.
pub fn gen_db(cfg: &RunConfig, run: &RunDir) -> Result<Database, StageError> {
    let s = &cfg.seeds;
    let seeds = default_seeds(s.height, s.width)?;
    let gc = GrowthConfig {
        iterations: s.iterations,
        batch: s.batch,
        rng_seed: cfg.rng_seed,
        threads: cfg.threads,
        sparsity_radius: s.sparsity_radius,
        sdf_resolution: s.sdf_resolution,
        latent_dim: s.latent_dim,
        ..GrowthConfig::default()
    };
    let mut growth = String::from("iteration,records,added,C11_min,C12_min,C22_min,C33_min,C11_max,C12_max,C22_max,C33_max\n");
    let db = grow_database(&seeds, material(cfg), &gc, |st| {
        let (l, u) = (st.lower, st.upper);
        let _ = writeln!(
            growth,
            "{},{},{},{},{},{},{},{},{},{},{}",
            st.iteration, st.records, st.added, l[0], l[1], l[2], l[3], u[0], u[1], u[2], u[3]
        );
    })?;
    super::save_database(&db, &run.file("database.metadb"))?;
    run.write("growth.csv", growth)?;
    let points: Vec<[f64; 2]> = db.records().iter().map(|r| [r.properties.c11, r.properties.c22]).collect();
    let colour: Vec<f64> = db.records().iter().map(|r| r.properties.c33).collect();
    run.write("property_space.svg", pca_scatter_svg(&points, &colour, &[]))?;
    Ok(db)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub report: ValidationReport,
}

/// Trains the autoencoder and regressor. Writes `model.weights`, `loss.csv`
/// and `validation.csv`.
pub fn train_stage(cfg: &RunConfig, db: &Database, run: &RunDir) -> Result<TrainOutcome, StageError> {
    if db.is_empty() {
        return Err(StageError::runtime("train", "empty database"));
    }
    let samples: Vec<TrainingSample> =
        db.records().iter().map(|r| TrainingSample { structure: &r.structure, label: r.properties }).collect();
    let tc = cfg.training.to_config(cfg.rng_seed, db.height, db.width, db.latent_dim);
    let model = train(&samples, &tc)?;
    let held: Vec<TrainingSample> = model.validation_indices.iter().map(|&i| samples[i]).collect();
    let report = validation_report(&held, &model.params)?;
    write_weights(&run.file("model.weights"), &model.params)?;
    write_loss_csv(&run.file("loss.csv"), &model.history)?;
    run.write(
        "validation.csv",
        format!(
            "metric,value\nsamples,{}\nmedian_pixel_agreement,{}\nmedian_relative_error,{}\nmean_kl,{}\n",
            report.samples, report.median_pixel_agreement, report.median_relative_error, report.mean_kl
        ),
    )?;
    Ok(TrainOutcome { model, report })
}

// ---------------------------------------------------------------- analyze

/// One traversal of an arrow from a database cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrowWalk {
    pub arrow: &'static str,
    pub start: u64,
    pub properties: Vec<StiffnessComponents>,
}

impl ArrowWalk {
    /// Rank correlation of homogenized C11 with the step index.
    pub fn c11_spearman(&self) -> f64 {
        let x: Vec<f64> = (0..self.properties.len()).map(|k| k as f64).collect();
        let y: Vec<f64> = self.properties.iter().map(|p| p.c11).collect();
        spearman(&x, &y)
    }

    /// Whether the walk starts stiffer along x and ends stiffer along y.
    pub fn flips_to_vertical(&self) -> bool {
        match (self.properties.first(), self.properties.last()) {
            (Some(a), Some(b)) => a.c22 < a.c11 && b.c22 > b.c11,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub walks: Vec<ArrowWalk>,
    pub explained: Vec<f64>,
    pub candidates: Option<(CandidateSet, CandidateSet)>,
}

/// PCA of the latent codes, semantic arrows walked from random cells and an
/// optional candidate set. Writes `pca.csv`, `pca_c11.svg`, `arrows.csv`,
/// `arrow_summary.csv`, one strip per arrow and, with a target,
/// `candidates.csv` and `candidates.svg`.
pub fn analyze(cfg: &RunConfig, db: &mut Database, model: &ModelParameters, run: &RunDir) -> Result<AnalyzeOutcome, StageError> {
    let a = &cfg.analyze;
    ensure_latents(db, model, cfg.threads)?;
    let db = &*db;
    let latents: Vec<Vec<f64>> = db.records().iter().filter_map(|r| r.latent.clone()).collect();
    let pca = fit_pca(&latents, 2)?;
    let mut pcs = String::from("id,pc1,pc2,C11,C12,C22,C33\n");
    let mut points = Vec::with_capacity(db.len());
    for (r, z) in db.records().iter().zip(&latents) {
        let p = pca.project(z);
        let (x, y) = (p[0], p.get(1).copied().unwrap_or(0.0));
        points.push([x, y]);
        let _ = writeln!(pcs, "{},{x},{y},{}", r.id, props_row(&r.properties));
    }
    run.write("pca.csv", pcs)?;
    let c11: Vec<f64> = db.records().iter().map(|r| r.properties.c11).collect();
    run.write("pca_c11.svg", pca_scatter_svg(&points, &c11, &[]))?;

    let hom = Homogenizer::new(db.height, db.width, db.material)?;
    let arrows = [
        ("c11", semantic_arrow(db, c11_score, ArrowCriterion::Quantile(a.arrow_quantile))?),
        ("anisotropy", semantic_arrow(db, anisotropy_score, ArrowCriterion::Ratio(a.anisotropy_ratio))?),
        ("poisson", semantic_arrow(db, poisson_score, ArrowCriterion::Quantile(a.arrow_quantile))?),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let picks = sample(&mut rng, db.len(), a.starts.min(db.len())).into_vec();
    let mut walks = Vec::new();
    let mut table = String::from("arrow,start,step,C11,C12,C22,C33\n");
    let mut summary = String::from("arrow,start,c11_spearman,first_C22_minus_C11,last_C22_minus_C11\n");
    for (name, arrow) in &arrows {
        let mut first_strip = None;
        for &i in &picks {
            let r = &db.records()[i];
            let z0 = r.latent.as_ref().ok_or(LatentOpsError::MissingLatent(r.id))?;
            let cells = traverse(z0, arrow, a.steps, a.step_size, model)?;
            let props = par_map(&cells, cfg.threads, |m| hom.homogenize(m)).into_iter().collect::<Result<Vec<_>, _>>()?;
            for (k, p) in props.iter().enumerate() {
                let _ = writeln!(table, "{name},{},{},{}", r.id, k as i64 - a.steps as i64, props_row(p));
            }
            let w = ArrowWalk { arrow: name, start: r.id, properties: props };
            let (f, l) = (&w.properties[0], &w.properties[w.properties.len() - 1]);
            let _ = writeln!(summary, "{name},{},{},{},{}", r.id, w.c11_spearman(), f.c22 - f.c11, l.c22 - l.c11);
            walks.push(w);
            first_strip.get_or_insert(cells);
        }
        if let Some(cells) = first_strip {
            run.write(&format!("arrow_{name}.svg"), strip_svg(&cells, 2.0))?;
        }
    }
    run.write("arrows.csv", table)?;
    run.write("arrow_summary.csv", summary)?;

    let candidates = match a.target {
        None => None,
        Some(t) => {
            let target = StiffnessComponents::from_array(t);
            let cp = CandidateParams { n_clusters: a.n_clusters, admission_mse: a.admission_mse, seed: cfg.rng_seed, ..CandidateParams::default() };
            let diverse = diverse_candidates(db, &target, &cp)?;
            let greedy = greedy_candidates(db, &target, diverse.entries.len())?;
            let mut s = String::from("set,rank,id,mse,C11,C12,C22,C33\n");
            for (name, set) in [("diverse", &diverse), ("greedy", &greedy)] {
                for (k, c) in set.entries.iter().enumerate() {
                    let _ = writeln!(s, "{name},{k},{},{},{}", c.id, c.mse, props_row(&c.properties));
                }
            }
            let _ = writeln!(
                s,
                "# mean latent distance: diverse {} greedy {}",
                mean_pairwise_distance(&diverse.latents()),
                mean_pairwise_distance(&greedy.latents())
            );
            run.write("candidates.csv", s)?;
            let cells: Vec<Microstructure> =
                diverse.ids().iter().filter_map(|id| db.get(*id).map(|r| r.structure.clone())).collect();
            run.write("candidates.svg", strip_svg(&cells, 2.0))?;
            Some((diverse, greedy))
        }
    };
    Ok(AnalyzeOutcome { walks, explained: pca.explained.clone(), candidates })
}

// ---------------------------------------------------------------- family

#[derive(Debug, Clone)]
pub struct FamilyOutcome {
    pub curve: GradationCurve,
    pub families: Vec<MetamaterialFamily>,
    pub densified: Vec<DensifiedFamily>,
}

fn family_params(cfg: &RunConfig) -> FamilyParams {
    FamilyParams { k: cfg.family.k, n_terminal: cfg.family.n_terminal, count: cfg.family.count }
}

/// Graded families along the built-in curve, densified in latent space.
/// Writes `families.csv` and one `family_<k>.svg` filmstrip per family.
pub fn family_stage(cfg: &RunConfig, db: &mut Database, model: &ModelParameters, run: &RunDir) -> Result<FamilyOutcome, StageError> {
    ensure_latents(db, model, cfg.threads)?;
    let curve = GradationCurve::graded(&db.material, cfg.family.delta)?;
    let families = extract_families(db, &curve, &family_params(cfg))?;
    let hom = Homogenizer::new(db.height, db.width, db.material)?;
    let dp = DensifyParams { samples_per_edge: cfg.family.samples_per_edge, extrapolate: cfg.family.extrapolate, threads: cfg.threads };
    let densified = families.iter().map(|f| densify_family(f, model, &hom, &dp)).collect::<Result<Vec<_>, _>>()?;
    run.write("families.csv", families_csv(&densified, &curve, &db.scaler()))?;
    for (k, d) in densified.iter().enumerate() {
        run.write(&format!("family_{k}.svg"), family_filmstrip_svg(d, 2.0))?;
    }
    Ok(FamilyOutcome { curve, families, densified })
}

// ---------------------------------------------------------------- design-macro

/// The configured problem: a problem file when given, else the built-in case.
pub fn design_problem(cfg: &RunConfig) -> Result<MacroProblem, StageError> {
    let d = &cfg.design;
    match &d.problem {
        Some(path) => Ok(read_problem(&std::fs::read_to_string(path)?)?.problem),
        None => Ok(match d.case {
            DesignCase::Arch => arch_case(d.nx, d.ny, d.displacement, d.rise),
            DesignCase::TipShear => tip_shear_case(d.nx, d.ny, d.displacement),
        }),
    }
}

/// The family used by family-mode design and assembly.
fn design_family(cfg: &RunConfig, db: &mut Database, model: &ModelParameters) -> Result<(GradationCurve, MetamaterialFamily), StageError> {
    ensure_latents(db, model, cfg.threads)?;
    let curve = GradationCurve::graded(&db.material, cfg.family.delta)?;
    let mut families = extract_families(db, &curve, &family_params(cfg))?;
    let k = cfg.design.family_index;
    if k >= families.len() {
        return Err(StageError::runtime("family", format!("family index {k} but only {} families", families.len())));
    }
    Ok((curve, families.swap_remove(k)))
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub problem: MacroProblem,
    pub result: OptimResult,
}

impl DesignOutcome {
    pub fn initial_objective(&self) -> f64 {
        self.result.history.first().map_or(f64::NAN, |h| h.objective)
    }

    pub fn final_objective(&self) -> f64 {
        self.result.history.last().map_or(f64::NAN, |h| h.objective)
    }

    pub fn final_rrmse(&self) -> f64 {
        self.result.history.last().map_or(f64::NAN, |h| h.rrmse)
    }
}

/// Macro property optimization. Writes `problem.txt`, `history.csv`,
/// `field.csv`, `field.svg` and, in family mode, `controlled.csv`.
pub fn design_macro(cfg: &RunConfig, db: &mut Database, model: Option<&ModelParameters>, run: &RunDir) -> Result<DesignOutcome, StageError> {
    let d = &cfg.design;
    let problem = design_problem(cfg)?;
    let oc = OptimConfig { beta: d.beta, beta_final: d.beta_final, max_iters: d.max_iters, move_tol: d.move_tol, ..OptimConfig::default() };
    let result = match d.mode {
        DesignModeName::Database => {
            let sdf = build_sdf(&db.properties(), d.sdf_resolution)?;
            optimize_properties(&problem, DesignMode::Database(&sdf), &oc)?
        }
        DesignModeName::Family => {
            let model = model.ok_or_else(|| StageError::Usage("family mode needs --weights".into()))?;
            let (curve, family) = design_family(cfg, db, model)?;
            let values: Vec<f64> = family.members.iter().map(|m| curve.controlled_value(&m.properties)).collect();
            let range = (values[0], values[values.len() - 1]);
            optimize_properties(&problem, DesignMode::Family { curve: &curve, range }, &oc)?
        }
    };
    let mode = match d.mode {
        DesignModeName::Database => "database",
        DesignModeName::Family => "family",
    };
    run.write(
        "problem.txt",
        crate::macroopt::write_problem(&crate::macroopt::ProblemFile {
            problem: problem.clone(),
            mode: mode.into(),
            curve: (d.mode == DesignModeName::Family).then(|| "graded".into()),
        }),
    )?;
    write_history_csv(&run.file("history.csv"), &result.history)?;
    write_field_csv(&run.file("field.csv"), &result.field)?;
    write_field_svg(&run.file("field.svg"), &result.field, problem.nx, problem.ny)?;
    if let Some(t) = &result.controlled {
        let mut s = String::from("e,controlled\n");
        for (e, v) in t.iter().enumerate() {
            let _ = writeln!(s, "{e},{v}");
        }
        run.write("controlled.csv", s)?;
    }
    Ok(DesignOutcome { problem, result })
}

// ---------------------------------------------------------------- assemble

#[derive(Debug, Clone)]
pub struct AssembleOutcome {
    pub report: AssemblyReport,
    /// Chosen record per element in database mode.
    pub ids: Option<Vec<u64>>,
    pub labeling: Option<Labeling>,
    /// RRMSE of the continuous field on the same problem.
    pub field_rrmse: f64,
}

impl AssembleOutcome {
    /// `|assembled − continuous| / continuous`.
    pub fn relative_gap(&self) -> f64 {
        (self.report.rrmse - self.field_rrmse).abs() / self.field_rrmse
    }
}

fn boundaries_csv(nx: usize, ny: usize, edges: &[(f64, f64)]) -> String {
    let mut s = String::from("edge,orientation,i,j,thetaG,thetaM\n");
    let mut k = 0;
    for j in 0..ny {
        for i in 0..nx.saturating_sub(1) {
            let _ = writeln!(s, "{k},horizontal,{i},{j},{},{}", edges[k].0, edges[k].1);
            k += 1;
        }
    }
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx {
            let _ = writeln!(s, "{k},vertical,{i},{j},{},{}", edges[k].0, edges[k].1);
            k += 1;
        }
    }
    s
}

fn write_report(run: &RunDir, problem: &MacroProblem, report: &AssemblyReport, field_rrmse: f64, extra: &str) -> Result<(), StageError> {
    let gap = (report.rrmse - field_rrmse).abs() / field_rrmse;
    run.write(
        "assembly.csv",
        format!(
            "metric,value\nobjective,{}\nrrmse,{}\nfield_rrmse,{field_rrmse}\nrelative_gap,{gap}\nmean_thetaG,{}\nmean_thetaM,{}\nload_path_edges,{}\ndisconnected_load_paths,{}\n{extra}",
            report.objective, report.rrmse, report.mean_geometric, report.mean_mechanical, report.load_path_edges, report.disconnected_load_paths
        ),
    )?;
    run.write("boundaries.csv", boundaries_csv(problem.nx, problem.ny, &report.edges))?;
    run.write("assembly.pgm", stitched_pgm(&report.structure))?;
    run.write("assembly.svg", stitched_svg(&report.structure, 1.0))?;
    Ok(())
}

/// Microstructure assembly for an optimized field. Database mode selects
/// compatible records through the grid MRF; family mode decodes cells along
/// the family. Writes `assembly.csv`, `boundaries.csv`, `assembly.pgm`,
/// `assembly.svg` and, in database mode, `labeling.csv` and `dd_history.csv`.
pub fn assemble(
    cfg: &RunConfig,
    db: &mut Database,
    model: &ModelParameters,
    field: &PropertyField,
    run: &RunDir,
) -> Result<AssembleOutcome, StageError> {
    let problem = design_problem(cfg)?;
    let u = crate::macroopt::assemble_and_solve(&problem, field)?;
    let (_, field_rrmse) = crate::macroopt::objective_and_rrmse(&u, &problem)?;
    let a = &cfg.assembly;
    match cfg.design.mode {
        DesignModeName::Database => {
            ensure_latents(db, model, cfg.threads)?;
            let params = AssemblyParams {
                candidates: CandidateParams {
                    n_clusters: a.n_clusters,
                    admission_mse: a.admission_mse,
                    pool_cap: a.pool_cap,
                    seed: cfg.rng_seed,
                    ..CandidateParams::default()
                },
                weights: IncompatWeights { geometric: a.geometric_weight, mechanical: a.mechanical_weight },
                admission_relaxations: a.admission_relaxations,
                threads: cfg.threads,
            };
            let graph = build_assembly_graph(field, &problem, db, &params)?;
            let labeling = dd_mrf_solve(&graph.mrf, &DdParams { max_iters: a.max_iters, ..DdParams::default() });
            let report = stitch_and_evaluate(&labeling, &graph, db, &problem)?;
            run.write("labeling.csv", labeling_csv(&graph, &labeling))?;
            let mut h = String::from("iteration,dual,best_dual,primal,best_primal\n");
            for (k, it) in labeling.history.iter().enumerate() {
                let _ = writeln!(h, "{k},{},{},{},{}", it.dual, it.best_dual, it.primal, it.best_primal);
            }
            run.write("dd_history.csv", h)?;
            let extra = format!(
                "dd_iterations,{}\ndd_converged,{}\nenergy,{}\ndual,{}\n",
                labeling.iterations, labeling.converged, labeling.energy, labeling.dual
            );
            write_report(run, &problem, &report, field_rrmse, &extra)?;
            let ids = graph.selected_ids(&labeling);
            Ok(AssembleOutcome { report, ids: Some(ids), labeling: Some(labeling), field_rrmse })
        }
        DesignModeName::Family => {
            let (curve, family) = design_family(cfg, db, model)?;
            let controlled: Vec<f64> = field.values.iter().map(|c| curve.controlled_value(c)).collect();
            let hom = Homogenizer::new(db.height, db.width, db.material)?;
            let real = realise_from_family(&controlled, &family, &curve, model, &hom, cfg.threads)?;
            let edges = boundary_scores(&real.cells, problem.nx, problem.ny, &hom, cfg.threads)?;
            let report = evaluate_assembly(&real.cells, &real.properties, &problem, edges)?;
            write_report(run, &problem, &report, field_rrmse, "")?;
            Ok(AssembleOutcome { report, ids: None, labeling: None, field_rrmse })
        }
    }
}

// ---------------------------------------------------------------- evaluate

/// Re-evaluates a stored labeling: stitches the records, recomputes every
/// boundary score from scratch and reruns the macro analysis with the
/// records' stiffness. Writes the same report files as `assemble`.
pub fn evaluate(
    cfg: &RunConfig,
    db: &Database,
    ids: &[u64],
    field: Option<&PropertyField>,
    run: &RunDir,
) -> Result<AssemblyReport, StageError> {
    let problem = design_problem(cfg)?;
    let records = ids
        .iter()
        .map(|id| db.get(*id).ok_or(AssemblyError::MissingRecord(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<Microstructure> = records.iter().map(|r| r.structure.clone()).collect();
    let props: Vec<StiffnessComponents> = records.iter().map(|r| r.properties).collect();
    let hom = Homogenizer::new(db.height, db.width, db.material)?;
    let edges = boundary_scores(&cells, problem.nx, problem.ny, &hom, cfg.threads)?;
    let report = evaluate_assembly(&cells, &props, &problem, edges)?;
    let field_rrmse = match field {
        Some(f) => {
            let u = crate::macroopt::assemble_and_solve(&problem, f)?;
            crate::macroopt::objective_and_rrmse(&u, &problem)?.1
        }
        None => f64::NAN,
    };
    write_report(run, &problem, &report, field_rrmse, "")?;
    Ok(report)
}

// ---------------------------------------------------------------- render

/// Renders database records as a strip plus one greymap each, or a stored
/// labeling as the stitched structure.
pub fn render(cfg: &RunConfig, db: &Database, ids: &[u64], labeling: Option<&[u64]>, run: &RunDir) -> Result<(), StageError> {
    let get = |id: &u64| db.get(*id).map(|r| r.structure.clone()).ok_or(AssemblyError::MissingRecord(*id));
    if !ids.is_empty() {
        let cells = ids.iter().map(get).collect::<Result<Vec<_>, _>>()?;
        run.write("cells.svg", strip_svg(&cells, 2.0))?;
        for (id, m) in ids.iter().zip(&cells) {
            run.write(&format!("cell_{id}.pgm"), stitched_pgm(m))?;
        }
    }
    if let Some(l) = labeling {
        let cells = l.iter().map(get).collect::<Result<Vec<_>, _>>()?;
        let m = crate::assembly::stitch(&cells, cfg.design.nx, cfg.design.ny);
        run.write("assembly.pgm", stitched_pgm(&m))?;
        run.write("assembly.svg", stitched_svg(&m, 1.0))?;
    }
    if ids.is_empty() && labeling.is_none() {
        return Err(StageError::Usage("render needs --ids or --labeling".into()));
    }
    Ok(())
}
