//! Brute-force fusion oracle: vote counts enumerated over every
//! (expert, neuron, place) triple.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use snn_vpr::ensemble::{synthetic_ensemble, EnsembleModel, HyperactivityFilter};

/// Random instance: experts, kappa, neurons, per-neuron totals and labels,
/// plus one response per expert.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (EnsembleModel, Vec<Vec<u32>>) {
    let n = rng.random_range(1..=4);
    let kappa = rng.random_range(1..=(12 / n).min(8));
    let ke = rng.random_range(1..=8);
    let mut m = synthetic_ensemble(n, kappa, ke, 2, rng.random());
    for ex in &mut m.experts {
        ex.assignments = (0..ke)
            .map(|_| if rng.random_bool(0.2) { None } else { Some(rng.random_range(0..kappa as u32)) })
            .collect();
        ex.reference_totals = Some((0..ke).map(|_| rng.random_range(0..60)).collect());
    }
    let theta = rng.random_range(0..70);
    m.apply_filter(HyperactivityFilter::from_cli(theta)).unwrap();
    let responses = m
        .experts
        .iter()
        .map(|ex| (0..ex.exc_count).map(|_| if rng.random_bool(0.4) { 0 } else { rng.random_range(0..6) }).collect())
        .collect();
    (m, responses)
}

pub fn brute_force(m: &EnsembleModel, responses: &[Vec<u32>]) -> Vec<(usize, u64)> {
    let places = m.global_place_count;
    let mut scores = vec![0u64; places];
    for (x, ex) in m.experts.iter().enumerate() {
        for e in 0..ex.exc_count {
            for p in 0..places {
                let label = ex.assignments[e].map(|l| ex.global_start + l as usize);
                let flagged = match m.filter {
                    HyperactivityFilter::Disabled => false,
                    HyperactivityFilter::Threshold(t) => ex.reference_totals.as_ref().unwrap()[e] >= t,
                };
                if label == Some(p) && !flagged {
                    scores[p] += u64::from(responses[x][e]);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..places).collect();
    // Selection by repeated maximum; ties resolved to the smaller id.
    let mut ranking = Vec::with_capacity(places);
    while !order.is_empty() {
        let mut best = 0;
        for i in 1..order.len() {
            let (a, b) = (order[i], order[best]);
            if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                best = i;
            }
        }
        let p = order.remove(best);
        ranking.push((p, scores[p]));
    }
    ranking
}
