//! Training of a single region expert and neuron-to-place assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{derive_seed, poisson_encode_at, EncodingConfig, ImageGray, SeedDomain, SpikeTrain};
use crate::neurosim::{present_frozen, ExpertNetwork, Mode, NetworkParams, SynapseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Excitatory neurons per expert.
    pub exc_count: usize,
    /// Places per expert.
    pub kappa: usize,
    pub epochs: usize,
    /// Trailing epochs whose spike counts are summed into the count table.
    pub record_last_epochs: usize,
    /// Turn STDP and threshold adaptation off (counts are still recorded).
    pub plasticity: bool,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            exc_count: 400,
            kappa: 25,
            epochs: 60,
            record_last_epochs: 10,
            plasticity: true,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa == 0 {
            return Err(Error::config("kappa must be >= 1"));
        }
        if self.exc_count < self.kappa {
            return Err(Error::config(format!(
                "exc_count ({}) must be at least kappa ({})",
                self.exc_count, self.kappa
            )));
        }
        if self.record_last_epochs == 0 || self.epochs < self.record_last_epochs {
            return Err(Error::config("need epochs >= record_last_epochs >= 1"));
        }
        Ok(())
    }
}

/// Spike counts `S[e, l]` of excitatory neuron `e` for local place `l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeCountTable {
    neurons: usize,
    places: usize,
    counts: Vec<u64>,
}

impl SpikeCountTable {
    pub fn zeros(neurons: usize, places: usize) -> Self {
        Self {
            neurons,
            places,
            counts: vec![0; neurons * places],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let places = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != places) {
            return Err(Error::config("spike count table must be rectangular"));
        }
        Ok(Self {
            neurons: rows.len(),
            places,
            counts: rows.concat(),
        })
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn places(&self) -> usize {
        self.places
    }

    #[inline]
    pub fn get(&self, neuron: usize, place: usize) -> u64 {
        self.counts[neuron * self.places + place]
    }

    pub fn row(&self, neuron: usize) -> &[u64] {
        &self.counts[neuron * self.places..(neuron + 1) * self.places]
    }

    /// Add one presentation's per-neuron counts to column `place`.
    pub fn accumulate(&mut self, place: usize, counts: &[u32]) {
        for (e, &c) in counts.iter().enumerate() {
            self.counts[e * self.places + place] += u64::from(c);
        }
    }
}

/// Label every neuron with the local place it fired most for. Ties go to the
/// lowest place index; silent neurons stay unassigned.
pub fn assign_neurons(table: &SpikeCountTable) -> Vec<Option<u32>> {
    (0..table.neurons())
        .map(|e| {
            let row = table.row(e);
            let (best, &max) = row
                .iter()
                .enumerate()
                .fold((0, &0u64), |acc, (l, c)| if *c > *acc.1 { (l, c) } else { acc });
            (max > 0).then_some(best as u32)
        })
        .collect()
}

/// Reference images of one region: `places[l][t]` is traverse `t` of local
/// place `l`, already preprocessed.
#[derive(Debug, Clone)]
pub struct Region {
    pub global_start: usize,
    pub places: Vec<Vec<ImageGray>>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.places.len()
    }

    pub fn is_empty(&self) -> bool {
        self.places.is_empty()
    }
}

/// One trained, frozen region expert.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertModel {
    pub id: usize,
    pub global_start: usize,
    pub place_count: usize,
    pub input_count: usize,
    pub exc_count: usize,
    /// Row-major `[input][excitatory]`.
    pub weights: Vec<f32>,
    /// Adaptive threshold snapshot (mV) at the end of training.
    pub theta: Vec<f64>,
    /// Local place id per neuron.
    pub assignments: Vec<Option<u32>>,
    /// Spike totals over the whole reference set, once regularized.
    pub reference_totals: Option<Vec<u64>>,
    pub hyperactive: Vec<bool>,
}

impl ExpertModel {
    pub fn global_range(&self) -> std::ops::Range<usize> {
        self.global_start..self.global_start + self.place_count
    }

    pub fn global_assignment(&self, neuron: usize) -> Option<usize> {
        self.assignments[neuron].map(|l| self.global_start + l as usize)
    }

    /// Per-neuron spike counts for one query presentation (inference mode,
    /// fresh dynamics, frozen weights and thresholds).
    pub fn respond(&self, params: &NetworkParams, query: &SpikeTrain) -> Result<Vec<u32>> {
        if query.input_count() != self.input_count {
            return Err(Error::config(format!(
                "query has {} inputs, expert {} expects {}",
                query.input_count(),
                self.id,
                self.input_count
            )));
        }
        present_frozen(params, &self.weights, &self.theta, query)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.exc_count;
        if self.weights.len() != self.input_count * n
            || self.theta.len() != n
            || self.assignments.len() != n
            || self.hyperactive.len() != n
            || self.reference_totals.as_ref().is_some_and(|t| t.len() != n)
        {
            return Err(Error::Internal(format!("expert {} arrays disagree with its dimensions", self.id)));
        }
        if self
            .assignments
            .iter()
            .flatten()
            .any(|&l| l as usize >= self.place_count)
        {
            return Err(Error::Internal(format!("expert {} has an out-of-range assignment", self.id)));
        }
        Ok(())
    }
}

/// Train one expert on its region. Traverses of a place are presented back
/// to back inside each epoch; the trailing `record_last_epochs` epochs are
/// summed into the count table (plasticity stays on while recording).
pub fn train_expert(
    region: &Region,
    cfg: &ExpertConfig,
    params: &NetworkParams,
    encoding: &EncodingConfig,
    expert_id: usize,
    seed: u64,
) -> Result<(ExpertModel, SpikeCountTable)> {
    if region.is_empty() {
        return Err(Error::config("cannot train an expert on an empty region"));
    }
    let input_count = region.places[0]
        .first()
        .ok_or_else(|| Error::config("every place needs at least one reference image"))?
        .len();
    for (l, imgs) in region.places.iter().enumerate() {
        if imgs.is_empty() {
            return Err(Error::config(format!("place {} has no reference image", region.global_start + l)));
        }
        if imgs.iter().any(|i| i.len() != input_count) {
            return Err(Error::config("reference images differ in size"));
        }
    }
    let traverses = region.places.iter().map(Vec::len).max().unwrap_or(1);

    let init_seed = derive_seed(seed, SeedDomain::WeightInit, expert_id as u64, 0, 0, 0);
    let mut syn = SynapseMatrix::random(input_count, cfg.exc_count, params.weight_init_max, init_seed);
    if let Some(total) = params.weight_norm_total {
        syn.normalize_columns(total);
    }
    let mut net = ExpertNetwork::new(*params, syn);
    let mode = if cfg.plasticity { Mode::Learn } else { Mode::Infer };
    let mut table = SpikeCountTable::zeros(cfg.exc_count, region.len());
    let record_from = cfg.epochs - cfg.record_last_epochs;

    for epoch in 0..cfg.epochs {
        for (l, imgs) in region.places.iter().enumerate() {
            for (t, img) in imgs.iter().enumerate() {
                let image_id = ((region.global_start + l) * traverses + t) as u64;
                let mut rate = encoding.max_rate;
                let mut attempt = 0u32;
                let counts = loop {
                    let s = derive_seed(seed, SeedDomain::Train, expert_id as u64, epoch as u64, image_id, u64::from(attempt));
                    let train = poisson_encode_at(img, rate, encoding.presentation_ms, s);
                    let counts = net.present(&train, mode, encoding.rest_ms)?;
                    if cfg.plasticity {
                        if let Some(total) = params.weight_norm_total {
                            net.synapses_mut().normalize_columns(total);
                        }
                    }
                    let fired: u32 = counts.iter().sum();
                    if fired >= encoding.min_output_spikes || attempt >= encoding.max_retries {
                        break counts;
                    }
                    attempt += 1;
                    rate += encoding.retry_boost_rate;
                };
                if epoch >= record_from {
                    table.accumulate(l, &counts);
                }
            }
        }
    }

    let (syn, theta) = net.into_parts();
    let model = ExpertModel {
        id: expert_id,
        global_start: region.global_start,
        place_count: region.len(),
        input_count,
        exc_count: cfg.exc_count,
        weights: syn.into_weights(),
        theta,
        assignments: assign_neurons(&table),
        reference_totals: None,
        hyperactive: vec![false; cfg.exc_count],
    };
    Ok((model, table))
}
