//! Region partitioning, parallel expert training, hyperactive-neuron
//! detection and fused place matching across all experts.

use std::ops::Range;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::expert::{train_expert, ExpertModel, Region};
use crate::imaging::{derive_seed, poisson_encode, poisson_from_rates, ImageGray, SeedDomain, SpikeTrain};
use crate::store::DatasetFingerprint;

/// Contiguous, disjoint blocks of `kappa` global place ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub kappa: usize,
    pub regions: Vec<Range<usize>>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn place_count(&self) -> usize {
        self.regions.last().map_or(0, |r| r.end)
    }
}

/// `[0, k), [k, 2k), ...`; the last region holds the remainder.
pub fn partition_reference(place_count: usize, kappa: usize) -> Result<Partition> {
    if place_count == 0 {
        return Err(Error::config("reference set has no places"));
    }
    if kappa == 0 {
        return Err(Error::config("kappa must be >= 1"));
    }
    let regions = (0..place_count)
        .step_by(kappa)
        .map(|s| s..(s + kappa).min(place_count))
        .collect();
    Ok(Partition { kappa, regions })
}

/// How hyperactivity flags are derived from reference totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperactivityFilter {
    /// Every neuron votes.
    Disabled,
    /// Neurons whose reference total is `>= theta` are ignored.
    Threshold(u64),
}

impl HyperactivityFilter {
    /// CLI convention: theta 0 turns the filter off.
    pub fn from_cli(theta: u64) -> Self {
        if theta == 0 {
            Self::Disabled
        } else {
            Self::Threshold(theta)
        }
    }

    pub fn is_hyperactive(&self, total: u64) -> bool {
        match *self {
            Self::Disabled => false,
            Self::Threshold(theta) => total >= theta,
        }
    }
}

/// Reference images, `traverses[t][place]`, preprocessed.
pub type ReferenceSet = Vec<Vec<ImageGray>>;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub config: RunConfig,
    pub global_place_count: usize,
    pub experts: Vec<ExpertModel>,
    pub filter: HyperactivityFilter,
    pub fingerprints: Vec<DatasetFingerprint>,
}

impl EnsembleModel {
    /// Reference totals have been computed for every expert.
    pub fn is_regularized(&self) -> bool {
        !self.experts.is_empty() && self.experts.iter().all(|e| e.reference_totals.is_some())
    }

    pub fn input_count(&self) -> usize {
        self.experts.first().map_or(0, |e| e.input_count)
    }

    /// Structural invariants: experts tile `[0, global_place_count)` in order.
    pub fn check(&self) -> Result<()> {
        let mut next = 0;
        for (i, ex) in self.experts.iter().enumerate() {
            ex.check()?;
            if ex.id != i || ex.global_start != next || ex.place_count == 0 {
                return Err(Error::Internal(format!("expert {i} does not continue the place tiling")));
            }
            if ex.input_count != self.input_count() {
                return Err(Error::Internal(format!("expert {i} has a different input size")));
            }
            next += ex.place_count;
        }
        if next != self.global_place_count {
            return Err(Error::Internal(format!(
                "experts cover {next} places, model declares {}",
                self.global_place_count
            )));
        }
        Ok(())
    }

    /// Re-derive every hyperactive flag from stored totals.
    pub fn apply_filter(&mut self, filter: HyperactivityFilter) -> Result<()> {
        if !self.is_regularized() {
            return Err(Error::State("reference totals have not been computed".into()));
        }
        for ex in &mut self.experts {
            let totals = ex.reference_totals.as_ref().expect("regularized");
            ex.hyperactive = totals.iter().map(|&t| filter.is_hyperactive(t)).collect();
        }
        self.filter = filter;
        Ok(())
    }

    pub fn hyperactive_count(&self) -> usize {
        self.experts
            .iter()
            .map(|e| e.hyperactive.iter().filter(|&&h| h).count())
            .sum()
    }

    /// Spike train for query `index`; identical for every expert.
    pub fn encode_query(&self, img: &ImageGray, index: usize) -> SpikeTrain {
        let seed = derive_seed(self.config.seed, SeedDomain::Query, 0, 0, index as u64, 0);
        poisson_encode(img, &self.config.encoding, seed)
    }

    /// Spike train used when measuring reference totals.
    pub fn encode_reference(&self, img: &ImageGray, traverse: usize, place: usize) -> SpikeTrain {
        let seed = derive_seed(
            self.config.seed,
            SeedDomain::Reference,
            0,
            traverse as u64,
            place as u64,
            0,
        );
        poisson_encode(img, &self.config.encoding, seed)
    }
}

/// Thread pool of the requested size.
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("cannot build worker pool: {e}")))
}

/// Per-expert wall time of one training job.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainTiming {
    pub expert: usize,
    pub seconds: f64,
}

/// Train one expert per region on `workers` threads. Experts share nothing
/// and seed from their module id, so the result does not depend on
/// scheduling or pool size.
pub fn train_ensemble(
    reference: &ReferenceSet,
    partition: &Partition,
    config: &RunConfig,
    workers: usize,
) -> Result<(EnsembleModel, Vec<TrainTiming>)> {
    config.validate()?;
    if reference.is_empty() {
        return Err(Error::config("no reference traverses"));
    }
    let places = partition.place_count();
    for (t, trav) in reference.iter().enumerate() {
        if trav.len() < places {
            return Err(Error::config(format!(
                "reference traverse {t} has {} images, partition needs {places}",
                trav.len()
            )));
        }
    }
    let mut expert_cfg = config.expert;
    expert_cfg.kappa = partition.kappa;
    let pool = worker_pool(workers)?;
    let results: Vec<Result<(ExpertModel, f64)>> = pool.install(|| {
        partition
            .regions
            .par_iter()
            .enumerate()
            .map(|(id, range)| {
                let start = Instant::now();
                let region = Region {
                    global_start: range.start,
                    places: range
                        .clone()
                        .map(|p| reference.iter().map(|trav| trav[p].clone()).collect())
                        .collect(),
                };
                let (model, _) = train_expert(
                    &region,
                    &expert_cfg,
                    &config.network,
                    &config.encoding,
                    id,
                    config.seed,
                )
                .map_err(|e| e.in_module(id))?;
                Ok((model, start.elapsed().as_secs_f64()))
            })
            .collect()
    });
    let mut experts = Vec::with_capacity(results.len());
    let mut timings = Vec::with_capacity(results.len());
    for (id, r) in results.into_iter().enumerate() {
        let (model, seconds) = r?;
        experts.push(model);
        timings.push(TrainTiming { expert: id, seconds });
    }
    let mut cfg = config.clone();
    cfg.expert.kappa = partition.kappa;
    let model = EnsembleModel {
        config: cfg,
        global_place_count: places,
        experts,
        filter: HyperactivityFilter::Disabled,
        fingerprints: Vec::new(),
    };
    model.check()?;
    Ok((model, timings))
}

/// Present the entire reference set to every expert in inference mode, store
/// per-neuron totals, then flag neurons according to `filter`.
pub fn detect_hyperactive(
    model: &mut EnsembleModel,
    reference: &ReferenceSet,
    filter: HyperactivityFilter,
) -> Result<()> {
    for (t, trav) in reference.iter().enumerate() {
        if trav.len() != model.global_place_count {
            return Err(Error::config(format!(
                "reference traverse {t} has {} images, model has {} places",
                trav.len(),
                model.global_place_count
            )));
        }
    }
    let items: Vec<(usize, usize, &ImageGray)> = reference
        .iter()
        .enumerate()
        .flat_map(|(t, trav)| trav.iter().enumerate().map(move |(p, img)| (t, p, img)))
        .collect();
    let params = model.config.network;
    let mut totals: Vec<Vec<u64>> = model.experts.iter().map(|ex| vec![0u64; ex.exc_count]).collect();
    // Encoded trains are held a chunk at a time to bound memory on large sets.
    for chunk in items.chunks(256) {
        let trains: Vec<SpikeTrain> = chunk
            .iter()
            .map(|&(t, p, img)| model.encode_reference(img, t, p))
            .collect();
        model
            .experts
            .par_iter()
            .zip(totals.par_iter_mut())
            .try_for_each(|(ex, acc)| -> Result<()> {
                for train in &trains {
                    let counts = ex.respond(&params, train).map_err(|e| e.in_module(ex.id))?;
                    for (t, c) in acc.iter_mut().zip(counts) {
                        *t += u64::from(c);
                    }
                }
                Ok(())
            })?;
    }
    for (ex, t) in model.experts.iter_mut().zip(totals) {
        ex.reference_totals = Some(t);
    }
    model.apply_filter(filter)
}

/// Ranked places for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Every place with its filtered spike score, best first; ties go to the
    /// lower place id.
    pub ranking: Vec<(usize, u64)>,
    /// No non-hyperactive assigned neuron fired.
    pub no_evidence: bool,
}

impl MatchResult {
    pub fn best(&self) -> (usize, u64) {
        self.ranking.first().copied().unwrap_or((0, 0))
    }

    pub fn places(&self) -> Vec<usize> {
        self.ranking.iter().map(|&(p, _)| p).collect()
    }
}

/// Run one query train through every expert (in parallel on the current
/// pool); result order follows expert order.
pub fn expert_responses(model: &EnsembleModel, train: &SpikeTrain) -> Result<Vec<Vec<u32>>> {
    let params = model.config.network;
    model
        .experts
        .par_iter()
        .map(|ex| ex.respond(&params, train).map_err(|e| e.in_module(ex.id)))
        .collect()
}

/// Sum the spike counts of assigned, non-hyperactive neurons per global place
/// and rank.
pub fn fuse_responses(model: &EnsembleModel, responses: &[Vec<u32>]) -> Result<MatchResult> {
    if responses.len() != model.experts.len() {
        return Err(Error::Internal("one response per expert required".into()));
    }
    let mut scores = vec![0u64; model.global_place_count];
    for (ex, counts) in model.experts.iter().zip(responses) {
        if counts.len() != ex.exc_count {
            return Err(Error::Internal(format!("expert {} response has wrong length", ex.id)));
        }
        for (e, &c) in counts.iter().enumerate() {
            if ex.hyperactive[e] {
                continue;
            }
            if let Some(place) = ex.global_assignment(e) {
                scores[place] += u64::from(c);
            }
        }
    }
    let no_evidence = scores.iter().all(|&s| s == 0);
    let mut ranking: Vec<(usize, u64)> = scores.into_iter().enumerate().collect();
    ranking.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(MatchResult {
        ranking,
        no_evidence,
    })
}

/// Match an encoded query against a regularized ensemble.
pub fn match_train(model: &EnsembleModel, train: &SpikeTrain) -> Result<MatchResult> {
    if !model.is_regularized() {
        return Err(Error::State(
            "model has not been regularized; run hyperactivity detection first".into(),
        ));
    }
    let responses = expert_responses(model, train)?;
    fuse_responses(model, &responses)
}

/// Encode a preprocessed query image and match it.
pub fn match_query(model: &EnsembleModel, query: &ImageGray, index: usize) -> Result<MatchResult> {
    if query.len() != model.input_count() {
        return Err(Error::config(format!(
            "query has {} pixels, model expects {}",
            query.len(),
            model.input_count()
        )));
    }
    match_train(model, &model.encode_query(query, index))
}

/// Ensemble of `n` untrained experts with random weights and assignments,
/// regularized with the filter disabled. Used for timing.
pub fn synthetic_ensemble(n: usize, kappa: usize, exc_count: usize, input_count: usize, seed: u64) -> EnsembleModel {
    let mut config = RunConfig::default();
    config.seed = seed;
    config.expert.exc_count = exc_count;
    config.expert.kappa = kappa;
    let experts = (0..n)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedDomain::WeightInit, id as u64, 0, 0, 0));
            let weights: Vec<f32> = (0..input_count * exc_count).map(|_| rng.random::<f32>() * 0.2).collect();
            ExpertModel {
                id,
                global_start: id * kappa,
                place_count: kappa,
                input_count,
                exc_count,
                weights,
                theta: (0..exc_count).map(|_| rng.random::<f64>() * 20.0).collect(),
                assignments: (0..exc_count).map(|_| Some(rng.random_range(0..kappa as u32))).collect(),
                reference_totals: Some(vec![0; exc_count]),
                hyperactive: vec![false; exc_count],
            }
        })
        .collect();
    EnsembleModel {
        config,
        global_place_count: n * kappa,
        experts,
        filter: HyperactivityFilter::Disabled,
        fingerprints: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSpec {
    pub exc_count: usize,
    pub input_count: usize,
    pub queries: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            exc_count: 400,
            input_count: 784,
            queries: 20,
            workers: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub experts: usize,
    pub mean_query_seconds: f64,
    pub total_seconds: f64,
}

/// Mean query latency for ensembles of each size.
pub fn query_time_benchmark(sizes: &[usize], spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.queries == 0 {
        return Err(Error::config("benchmark needs at least one query"));
    }
    let pool = worker_pool(spec.workers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, SeedDomain::Synthetic, 9, 0, 0, 0));
    let trains: Vec<SpikeTrain> = (0..spec.queries)
        .map(|q| {
            let rates: Vec<f64> = (0..spec.input_count).map(|_| rng.random::<f64>() * 63.75).collect();
            poisson_from_rates(&rates, 350.0, derive_seed(spec.seed, SeedDomain::Query, 0, 0, q as u64, 0))
        })
        .collect();
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 {
            return Err(Error::config("ensemble size must be >= 1"));
        }
        let model = synthetic_ensemble(n, 25, spec.exc_count, spec.input_count, spec.seed);
        let total = pool.install(|| -> Result<f64> {
            match_train(&model, &trains[0])?;
            let start = Instant::now();
            for t in &trains {
                match_train(&model, t)?;
            }
            Ok(start.elapsed().as_secs_f64())
        })?;
        rows.push(BenchRow {
            experts: n,
            mean_query_seconds: total / spec.queries as f64,
            total_seconds: total,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("experts,mean_query_seconds,total_seconds\n");
    for r in rows {
        out.push_str(&format!("{},{:.9},{:.9}\n", r.experts, r.mean_query_seconds, r.total_seconds));
    }
    out
}
