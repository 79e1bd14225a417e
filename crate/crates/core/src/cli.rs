//! Command-line front end.

use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::calibration::{self, CalibrationPlan};
use crate::config::RunConfig;
use crate::ensemble::{
    bench_csv, detect_hyperactive, match_query, match_train, partition_reference, query_time_benchmark,
    train_ensemble, BenchRow, BenchSpec, EnsembleModel, HyperactivityFilter,
};
use crate::error::{Error, Result};
use crate::eval;
use crate::store::{self, DatasetManifest, ImageLoader, TraverseRole};

#[derive(Debug, Parser)]
#[command(name = "snn-vpr", version, about = "Ensemble spiking networks for visual place recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one expert per region and write an unregularized archive.
    Train(TrainArgs),
    /// Measure reference totals and flag hyperactive neurons.
    Regularize(RegularizeArgs),
    /// Grid search over tau_gi and theta on a calibration range.
    Calibrate(CalibrateArgs),
    /// Score a query traverse and write the report files.
    Evaluate(EvaluateArgs),
    /// Rank places for a single image; one JSON object per line.
    Match(MatchArgs),
    /// Time queries against synthetic ensembles of several sizes.
    Bench(BenchArgs),
    /// Write a seeded synthetic reference/query dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Reference traverse directories, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ref_dirs: Vec<PathBuf>,
    /// Use only the first N places of each traverse.
    #[arg(long)]
    pub places: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct RegularizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub ref_dirs: Vec<PathBuf>,
    /// Hyperactivity threshold; 0 disables filtering. Defaults to the
    /// archived configuration's value.
    #[arg(long)]
    pub theta: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub ref_dirs: Vec<PathBuf>,
    #[arg(long)]
    pub query_dir: PathBuf,
    /// Calibration place range `START..END`; defaults to the leading
    /// `calibration.cal_places` places.
    #[arg(long, value_parser = parse_range)]
    pub cal_range: Option<Range<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub tau_gi_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub theta_grid: Option<Vec<u64>>,
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Report directory (`calibration.csv`, `chosen.json`).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub query_dir: PathBuf,
    #[arg(long)]
    pub report_dir: PathBuf,
    /// Evaluate only query places `START..END`.
    #[arg(long, value_parser = parse_range)]
    pub range: Option<Range<usize>>,
    /// `chosen.json` from `calibrate`; its theta replaces the archived filter.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<u64>,
    /// Reference traverses for the SAD baseline.
    #[arg(long, value_delimiter = ',')]
    pub ref_dirs: Vec<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Seed index of the query spike train.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Print only the best K places.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16])]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub queries: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 400)]
    pub exc_count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub places: usize,
    #[arg(long, default_value_t = 2023)]
    pub seed: u64,
    #[arg(long, default_value_t = 28)]
    pub size: usize,
}

fn parse_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected START..END, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a >= b {
        return Err(format!("empty range {s:?}"));
    }
    Ok(a..b)
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn set_global_workers(workers: usize) {
    // Only the first call in a process takes effect.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global();
}

fn default_workers(w: Option<usize>) -> Result<usize> {
    match w {
        Some(0) => Err(Error::config("workers must be >= 1")),
        Some(n) => Ok(n),
        None => Ok(RunConfig::default().worker_count()),
    }
}

fn write_out(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Regularize(a) => cmd_regularize(&a, out),
        Command::Calibrate(a) => cmd_calibrate(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Match(a) => cmd_match(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

fn scan_all(dirs: &[PathBuf], role: TraverseRole, places: Option<usize>) -> Result<Vec<DatasetManifest>> {
    let manifests = dirs
        .iter()
        .map(|d| DatasetManifest::scan(d, role, places))
        .collect::<Result<Vec<_>>>()?;
    let n = manifests[0].len();
    if let Some(m) = manifests.iter().find(|m| m.len() != n) {
        return Err(Error::ingest(
            &m.dir,
            format!("traverse has {} images, first traverse has {n}", m.len()),
        ));
    }
    Ok(manifests)
}

fn load_reference(loader: &ImageLoader, manifests: &[DatasetManifest]) -> Result<Vec<Vec<crate::imaging::ImageGray>>> {
    manifests.iter().map(|m| loader.load_all(m)).collect()
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.run_config()?;
    if let Some(k) = a.kappa {
        cfg.expert.kappa = k;
    }
    cfg.validate()?;
    let workers = cfg.worker_count();
    set_global_workers(workers);
    let manifests = scan_all(&a.ref_dirs, TraverseRole::Reference, a.places)?;
    let loader = ImageLoader::new(cfg.imaging);
    let reference = load_reference(&loader, &manifests)?;
    let partition = partition_reference(manifests[0].len(), cfg.expert.kappa)?;
    write_out(
        out,
        &format!(
            "training {} experts on {} places x {} traverses with {workers} workers",
            partition.len(),
            partition.place_count(),
            reference.len()
        ),
    )?;
    let start = Instant::now();
    let (mut model, timings) = train_ensemble(&reference, &partition, &cfg, workers)?;
    for t in &timings {
        write_out(out, &format!("expert {:04} trained in {:.3}s", t.expert, t.seconds))?;
    }
    model.fingerprints = manifests.iter().map(DatasetManifest::fingerprint).collect::<Result<_>>()?;
    store::save_ensemble(&model, &a.out)?;
    write_out(
        out,
        &format!("saved {} in {:.3}s", a.out.display(), start.elapsed().as_secs_f64()),
    )
}

fn check_fingerprints(model: &EnsembleModel, manifests: &[DatasetManifest]) -> Result<()> {
    if model.fingerprints.is_empty() {
        return Ok(());
    }
    let found = manifests.iter().map(DatasetManifest::fingerprint).collect::<Result<Vec<_>>>()?;
    if found.len() != model.fingerprints.len()
        || found.iter().zip(&model.fingerprints).any(|(a, b)| a.sha256 != b.sha256 || a.images != b.images)
    {
        return Err(Error::config(
            "reference images do not match the fingerprints recorded at training time",
        ));
    }
    Ok(())
}

fn cmd_regularize(a: &RegularizeArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = store::load_ensemble(&a.model)?;
    let workers = default_workers(a.workers.or(model.config.workers))?;
    set_global_workers(workers);
    let manifests = scan_all(&a.ref_dirs, TraverseRole::Reference, Some(model.global_place_count))?;
    check_fingerprints(&model, &manifests)?;
    let loader = ImageLoader::new(model.config.imaging);
    let reference = load_reference(&loader, &manifests)?;
    let theta = a.theta.unwrap_or(model.config.theta);
    let filter = HyperactivityFilter::from_cli(theta);
    let pool = crate::ensemble::worker_pool(workers)?;
    let start = Instant::now();
    pool.install(|| detect_hyperactive(&mut model, &reference, filter))?;
    model.config.theta = theta;
    store::save_ensemble(&model, &a.model)?;
    write_out(
        out,
        &format!(
            "flagged {} hyperactive neurons (theta {theta}) in {:.3}s",
            model.hyperactive_count(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.run_config()?;
    if let Some(k) = a.kappa {
        cfg.expert.kappa = k;
    }
    if let Some(g) = &a.tau_gi_grid {
        cfg.calibration.tau_gi_grid = g.clone();
    }
    if let Some(g) = &a.theta_grid {
        cfg.calibration.theta_grid = g.clone();
    }
    let workers = cfg.worker_count();
    set_global_workers(workers);
    let refs = scan_all(&a.ref_dirs, TraverseRole::Reference, None)?;
    let query = DatasetManifest::scan(&a.query_dir, TraverseRole::Calibration, None)?;
    let total = refs[0].len().min(query.len());
    let mut plan = CalibrationPlan::leading(&cfg, total)?;
    if let Some(r) = &a.cal_range {
        plan.cal_places = r.clone();
        plan.test_places = if r.start == 0 { r.end..total } else { 0..r.start };
    }
    if plan.cal_places.end > total {
        return Err(Error::config(format!(
            "calibration range {:?} exceeds {total} places",
            plan.cal_places
        )));
    }
    plan.validate()?;
    let loader = ImageLoader::new(cfg.imaging);
    let data = calibration::load_calibration_data(&loader, &refs, &query, &plan)?;
    let report = calibration::run_grid_search(&plan, &data, &cfg, workers)?;
    calibration::write_report(&a.out, &report)?;
    write_out(
        out,
        &format!(
            "chosen tau_gi {} theta {} (P@100R {:.4}); report in {}",
            report.chosen.tau_gi,
            report.chosen.theta,
            report.chosen.p_at_100r,
            a.out.display()
        ),
    )
}

fn sub_ensemble(model: &EnsembleModel, n: usize) -> EnsembleModel {
    let experts = model.experts[..n].to_vec();
    EnsembleModel {
        config: model.config.clone(),
        global_place_count: experts.iter().map(|e| e.place_count).sum(),
        experts,
        filter: model.filter,
        fingerprints: Vec::new(),
    }
}

/// Query latency of the model's leading 1, 2, 4, ... experts.
fn model_scaling(model: &EnsembleModel, queries: &[(usize, crate::imaging::ImageGray)]) -> Result<Vec<BenchRow>> {
    let n = model.experts.len();
    let mut sizes: Vec<usize> = std::iter::successors(Some(1usize), |s| Some(s * 2)).take_while(|&s| s < n).collect();
    sizes.push(n);
    let trains: Vec<_> = queries.iter().take(10).map(|(p, img)| model.encode_query(img, *p)).collect();
    let mut rows = Vec::with_capacity(sizes.len());
    for s in sizes {
        let sub = sub_ensemble(model, s);
        let start = Instant::now();
        for t in &trains {
            match_train(&sub, t)?;
        }
        let total = start.elapsed().as_secs_f64();
        rows.push(BenchRow {
            experts: s,
            mean_query_seconds: total / trains.len().max(1) as f64,
            total_seconds: total,
        });
    }
    Ok(rows)
}

fn cmd_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = store::load_ensemble(&a.model)?;
    let workers = default_workers(a.workers.or(model.config.workers))?;
    set_global_workers(workers);
    if !model.is_regularized() {
        return Err(Error::State(format!(
            "{} has not been regularized; run `regularize` first",
            a.model.display()
        )));
    }
    if let Some(p) = &a.calibration {
        let chosen = calibration::read_chosen(p)?;
        if chosen.tau_gi != model.config.network.excitatory.tau_gi {
            eprintln!(
                "warning: calibrated tau_gi {} differs from the model's {}",
                chosen.tau_gi, model.config.network.excitatory.tau_gi
            );
        }
        model.apply_filter(HyperactivityFilter::from_cli(chosen.theta))?;
    }
    if let Some(t) = a.theta {
        model.apply_filter(HyperactivityFilter::from_cli(t))?;
    }
    let query = DatasetManifest::scan(&a.query_dir, TraverseRole::Query, None)?;
    let range = a.range.clone().unwrap_or(0..query.len().min(model.global_place_count));
    if range.end > query.len() || range.end > model.global_place_count {
        return Err(Error::config(format!(
            "query range {range:?} exceeds {} query images or {} model places",
            query.len(),
            model.global_place_count
        )));
    }
    let loader = ImageLoader::new(model.config.imaging);
    let images = loader.load_range(&query, range.clone())?;
    let queries: Vec<_> = range.clone().zip(images).collect();
    let pool = crate::ensemble::worker_pool(workers)?;
    let evaluation = pool.install(|| eval::evaluate_queries(&model, &queries))?;
    let neurons = eval::neuron_precision_analysis(&model, &evaluation.logs)?;
    let sad = if a.ref_dirs.is_empty() {
        None
    } else {
        let refs = scan_all(&a.ref_dirs, TraverseRole::Reference, Some(model.global_place_count))?;
        check_fingerprints(&model, &refs)?;
        let reference = load_reference(&loader, &refs)?;
        Some(eval::sad_records(&queries, &reference)?)
    };
    let scaling = pool.install(|| model_scaling(&model, &queries))?;
    let mut summary = eval::summarize(&model, &evaluation.records, &neurons, sad.as_deref())?;
    summary.query_fingerprint = Some(query.fingerprint()?);
    eval::write_report(&a.report_dir, &evaluation.records, &neurons, &bench_csv(&scaling), &summary)?;
    write_out(
        out,
        &format!(
            "P@100R {:.4} over {} queries ({} hyperactive neurons); report in {}",
            summary.p_at_100r,
            summary.queries,
            summary.hyperactive_neurons,
            a.report_dir.display()
        ),
    )
}

#[derive(serde::Serialize)]
struct MatchLine {
    rank: usize,
    place: usize,
    score: u64,
}

fn cmd_match(a: &MatchArgs, out: &mut dyn Write) -> Result<()> {
    let model = store::load_ensemble(&a.model)?;
    let workers = default_workers(a.workers.or(model.config.workers))?;
    set_global_workers(workers);
    let img = model.config.imaging.load(&a.image)?;
    let pool = crate::ensemble::worker_pool(workers)?;
    let result = pool.install(|| match_query(&model, &img, a.index))?;
    if result.no_evidence {
        eprintln!("warning: no filtered neuron fired; ranking carries no evidence");
    }
    let top = a.top.unwrap_or(result.ranking.len());
    for (i, &(place, score)) in result.ranking.iter().take(top).enumerate() {
        let line = serde_json::to_string(&MatchLine {
            rank: i + 1,
            place,
            score,
        })
        .map_err(|e| Error::Internal(e.to_string()))?;
        write_out(out, &line)?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.workers == 0 {
        return Err(Error::config("workers must be >= 1"));
    }
    set_global_workers(a.workers);
    let spec = BenchSpec {
        exc_count: a.exc_count,
        queries: a.queries,
        workers: a.workers,
        seed: a.seed,
        ..BenchSpec::default()
    };
    let rows = query_time_benchmark(&a.sizes, &spec)?;
    let csv = bench_csv(&rows);
    write_file(&a.out, &csv)?;
    for r in &rows {
        write_out(out, &format!("{} experts: {:.6}s per query", r.experts, r.mean_query_seconds))?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    if a.places == 0 || a.size == 0 {
        return Err(Error::config("places and size must be >= 1"));
    }
    let cfg = crate::synth::SynthConfig {
        places: a.places,
        width: a.size,
        height: a.size,
        seed: a.seed,
        ..Default::default()
    };
    let (r, q) = crate::synth::write_dataset(&a.out, &cfg)?;
    write_out(out, &format!("reference {}\nquery {}", r.display(), q.display()))
}
