//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 4, 5, 6 and 8 share one desk-scale model: 100 synthetic places,
//! four experts of 100 excitatory neurons, 30 epochs.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snn_vpr::calibration::{choose_cell, theta_sweep, CalibrationCell};
use snn_vpr::ensemble::{
    detect_hyperactive, fuse_responses, match_query, partition_reference, query_time_benchmark, train_ensemble,
    BenchSpec, EnsembleModel, HyperactivityFilter,
};
use snn_vpr::eval::{
    evaluate_queries, mann_whitney_u, neuron_precision_analysis, pr_curve, precision_at_100_recall, recall_at_n,
    refuse_logs, sad_distance, EvalRecord, FiringLog,
};
use snn_vpr::imaging::ImageGray;
use snn_vpr::neurosim::{lif_step, LayerState, LifParams, StdpParams};
use snn_vpr::store::{load_ensemble, manifest_json, save_ensemble, weights_to_le_bytes};
use snn_vpr::synth::{inject_cross_region_responders, traverses, SynthConfig};
use snn_vpr::RunConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(start: Instant, limit_s: f64) -> (bool, f64) {
    let t = start.elapsed().as_secs_f64();
    (t < limit_s, t)
}

fn criterion_numerics() -> Outcome {
    let start = Instant::now();
    let dt = 0.5;
    let mut worst = 0.0f64;
    for tau_g in [0.5, 1.0, 2.0] {
        let mut p = LifParams::excitatory();
        p.tau_ge = tau_g;
        p.tau_gi = tau_g;
        p.v_thresh_base = 1e9;
        let mut s = LayerState::resting(1, &p);
        s.g_e[0] = 1.0;
        s.g_i[0] = 1.0;
        let mut spk = Vec::new();
        for step in 1..=100 {
            lif_step(&mut s, &p, None, dt, &mut spk).unwrap();
            let exact = (-(step as f64) * dt / tau_g).exp();
            worst = worst.max((s.g_e[0] / exact - 1.0).abs()).max((s.g_i[0] / exact - 1.0).abs());
        }
    }
    let decay_ok = worst < 0.01;

    let p = LifParams::excitatory();
    let mut monotone = true;
    for v0 in [-90.0, -70.0, -60.0, -53.0] {
        let mut s = LayerState::resting(1, &p);
        s.v[0] = v0;
        let mut spk = Vec::new();
        let mut gap = (v0 - p.e_rest).abs();
        for _ in 0..400 {
            lif_step(&mut s, &p, None, dt, &mut spk).unwrap();
            let g = (s.v[0] - p.e_rest).abs();
            monotone &= g < gap || g == 0.0;
            monotone &= (s.v[0] - p.e_rest).signum() == (v0 - p.e_rest).signum() || g == 0.0;
            gap = g;
        }
    }

    let hand = StdpParams { eta: 0.01, x_tar: 0.0, w_max: 1.0, mu: 1.0, tau_trace_ms: 20.0 };
    let d = StdpParams::default();
    let stdp_ok = hand.delta(1.0, 0.5) == 0.005 && d.delta(1.0, d.w_max) == 0.0 && d.delta(0.0, 0.5) < 0.0;

    let (fast, t) = within(start, 1.0);
    outcome(
        decay_ok && monotone && stdp_ok && fast,
        format!("max decay error {worst:.2e}, relaxation monotone {monotone}, STDP hand values {stdp_ok}, {t:.3}s"),
    )
}

fn criterion_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut filtered = 0;
    for _ in 0..1000 {
        let (m, responses) = common::oracle::random_instance(&mut rng);
        filtered += usize::from(m.hyperactive_count() > 0);
        let fused = fuse_responses(&m, &responses).unwrap();
        if fused.ranking != common::oracle::brute_force(&m, &responses) {
            mismatches += 1;
        }
    }
    let (fast, t) = within(start, 10.0);
    outcome(
        mismatches == 0 && fast,
        format!("{mismatches} mismatches over 1000 instances ({filtered} with flagged neurons), {t:.3}s"),
    )
}

fn criterion_partition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tiling_ok = true;
    for _ in 0..500 {
        let places = rng.random_range(1..5000);
        let kappa = rng.random_range(1..200);
        let p = partition_reference(places, kappa).unwrap();
        let mut next = 0;
        for (i, r) in p.regions.iter().enumerate() {
            let last = i + 1 == p.regions.len();
            tiling_ok &= r.start == next && !r.is_empty();
            tiling_ok &= if last { r.len() <= kappa } else { r.len() == kappa };
            next = r.end;
        }
        tiling_ok &= next == places && p.len() == places.div_ceil(kappa);
    }

    let mut monotone = true;
    let mut reduces = true;
    for _ in 0..200 {
        let (mut m, responses) = common::oracle::random_instance(&mut rng);
        let mut prev: Option<Vec<Vec<bool>>> = None;
        for theta in 1..=70 {
            m.apply_filter(HyperactivityFilter::Threshold(theta)).unwrap();
            let flags: Vec<Vec<bool>> = m.experts.iter().map(|e| e.hyperactive.clone()).collect();
            if let Some(p) = &prev {
                monotone &= flags.iter().flatten().zip(p.iter().flatten()).all(|(now, before)| !now || *before);
            }
            prev = Some(flags);
        }
        let max_total = m.experts.iter().flat_map(|e| e.reference_totals.clone().unwrap()).max().unwrap_or(0);
        m.apply_filter(HyperactivityFilter::Threshold(max_total + 1)).unwrap();
        let filtered = fuse_responses(&m, &responses).unwrap();
        m.apply_filter(HyperactivityFilter::Disabled).unwrap();
        reduces &= filtered == fuse_responses(&m, &responses).unwrap();
    }
    let (fast, t) = within(start, 5.0);
    outcome(
        tiling_ok && monotone && reduces && fast,
        format!("tiling {tiling_ok}, flags monotone {monotone}, high theta equals unfiltered {reduces}, {t:.3}s"),
    )
}

fn line_fit(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (icpt + slope * a)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn criterion_scaling() -> Outcome {
    let start = Instant::now();
    let sizes = [1usize, 2, 4, 8, 16];
    let rows = query_time_benchmark(&sizes, &BenchSpec { workers: 1, ..BenchSpec::default() }).unwrap();
    let x: Vec<f64> = rows.iter().map(|r| r.experts as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_query_seconds).collect();
    let r2 = line_fit(&x, &y);
    let worst_ratio = y.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let (fast, t) = within(start, 300.0);
    let times: Vec<String> = y.iter().map(|v| format!("{:.2}ms", v * 1e3)).collect();
    outcome(
        r2 >= 0.95 && worst_ratio <= 2.3 && fast,
        format!("R^2 {r2:.4}, max time(2N)/time(N) {worst_ratio:.3}, per-query [{}], {t:.1}s", times.join(", ")),
    )
}

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ok = true;
    for _ in 0..200 {
        let places = rng.random_range(2..15);
        let n = rng.random_range(1..40);
        let records: Vec<EvalRecord> = (0..n)
            .map(|_| {
                let mut ranking: Vec<(usize, u64)> = (0..places).map(|p| (p, rng.random_range(0..10))).collect();
                ranking.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                EvalRecord { truth: rng.random_range(0..places), ranking, no_evidence: false }
            })
            .collect();
        let p100 = precision_at_100_recall(&records).unwrap();
        ok &= p100 == recall_at_n(&records, 1).unwrap();
        let recalls: Vec<f64> = (1..=places).map(|k| recall_at_n(&records, k).unwrap()).collect();
        ok &= recalls.windows(2).all(|w| w[0] <= w[1]);
        ok &= pr_curve(&records).last().map(|p| p.precision) == Some(p100);
    }
    let mut sad_ok = true;
    let img = |rng: &mut ChaCha8Rng| {
        ImageGray::new(28, 28, (0..784).map(|_| rng.random_range(-3.0f32..3.0)).collect()).unwrap()
    };
    for _ in 0..100 {
        let (a, b, c) = (img(&mut rng), img(&mut rng), img(&mut rng));
        let ab = sad_distance(&a, &b).unwrap();
        sad_ok &= ab >= 0.0 && sad_distance(&a, &a).unwrap() == 0.0 && ab == sad_distance(&b, &a).unwrap();
        sad_ok &= sad_distance(&a, &c).unwrap() <= ab + sad_distance(&b, &c).unwrap() + 1e-9;
        sad_ok &= ab > 0.0;
    }
    let (fast, t) = within(start, 5.0);
    outcome(ok && sad_ok && fast, format!("record identities {ok}, SAD metric axioms {sad_ok}, {t:.3}s"))
}

struct DeskScale {
    config: RunConfig,
    reference: Vec<Vec<ImageGray>>,
    queries: Vec<(usize, ImageGray)>,
    model: EnsembleModel,
}

fn desk_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.expert.exc_count = 100;
    c.expert.kappa = 25;
    c.expert.epochs = 30;
    c
}

fn criterion_desk_scale() -> (Outcome, DeskScale) {
    let start = Instant::now();
    let config = desk_config();
    let (r, q) = traverses(&SynthConfig::default());
    let reference = vec![r.iter().map(|i| config.imaging.preprocess(i).unwrap()).collect::<Vec<_>>()];
    let queries: Vec<(usize, ImageGray)> =
        q.iter().map(|i| config.imaging.preprocess(i).unwrap()).enumerate().collect();
    let partition = partition_reference(100, 25).unwrap();
    let (mut model, _) = train_ensemble(&reference, &partition, &config, 1).unwrap();
    let train_s = start.elapsed().as_secs_f64();
    detect_hyperactive(&mut model, &reference, HyperactivityFilter::from_cli(config.theta)).unwrap();
    let eval = evaluate_queries(&model, &queries).unwrap();
    let p = precision_at_100_recall(&eval.records).unwrap();
    model.apply_filter(HyperactivityFilter::Disabled).unwrap();
    let p0 = precision_at_100_recall(&refuse_logs(&model, &eval.logs).unwrap()).unwrap();
    model.apply_filter(HyperactivityFilter::from_cli(config.theta)).unwrap();
    let (fast, t) = within(start, 1800.0);
    let o = outcome(
        p >= 0.85 && model.experts.len() == 4 && fast,
        format!(
            "P@100R {p:.3} at theta {} (unfiltered {p0:.3}), {} experts, training {train_s:.1}s, total {t:.1}s",
            config.theta,
            model.experts.len()
        ),
    );
    (o, DeskScale { config, reference, queries, model })
}

struct Injected {
    model: EnsembleModel,
    logs: Vec<FiringLog>,
    theta: u64,
}

const INJECT_FRACTION: f64 = 0.05;
const INJECT_THETA_SCALE: f64 = 0.7;

fn criterion_regularization(desk: &DeskScale) -> (Outcome, Injected) {
    let start = Instant::now();
    let mut model = desk.model.clone();
    let injected = inject_cross_region_responders(&mut model, INJECT_FRACTION, INJECT_THETA_SCALE).unwrap();
    detect_hyperactive(&mut model, &desk.reference, HyperactivityFilter::Disabled).unwrap();
    let logs = evaluate_queries(&model, &desk.queries).unwrap().logs;
    let cal = desk.config.calibration.cal_places;
    let (cal_logs, test_logs) = logs.split_at(cal);

    let grid = desk.config.calibration.theta_grid.clone();
    let curve = theta_sweep(&mut model, cal_logs, &grid).unwrap();
    let cells: Vec<CalibrationCell> = curve
        .iter()
        .filter(|&&(t, _)| t != 0)
        .map(|&(theta, p)| CalibrationCell { tau_gi: desk.config.network.excitatory.tau_gi, theta, p_at_100r: p, seconds: 0.0 })
        .collect();
    let theta = choose_cell(&cells).unwrap().theta;
    let test_curve = theta_sweep(&mut model, test_logs, &grid).unwrap();
    let at = |t: u64| test_curve.iter().find(|c| c.0 == t).unwrap().1;
    let (base, tuned) = (at(0), at(theta));
    let band = test_curve.iter().filter(|c| c.0 != 0 && c.1 > base).count();
    model.apply_filter(HyperactivityFilter::Threshold(theta)).unwrap();
    let o = outcome(
        tuned - base >= 0.02,
        format!(
            "{} injected; calibrated theta {theta}: test P@100R {tuned:.3} vs {base:.3} unfiltered ({:+.1} points); {band}/{} grid values beat theta 0, {:.1}s",
            injected.len(),
            (tuned - base) * 100.0,
            grid.len(),
            start.elapsed().as_secs_f64()
        ),
    );
    (o, Injected { model, logs, theta })
}

fn criterion_neuron_precision(inj: &Injected) -> Outcome {
    let report = neuron_precision_analysis(&inj.model, &inj.logs).unwrap();
    let hyp = report.precisions(true);
    let clean = report.precisions(false);
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (mh, mc) = (mean(&hyp), mean(&clean));
    let p = if hyp.is_empty() || clean.is_empty() { f64::NAN } else { mann_whitney_u(&clean, &hyp).unwrap().p_greater };
    let sizes_ok = hyp.len() >= 30 && clean.len() >= 30;
    outcome(
        mc > mh && p < 0.05 && sizes_ok,
        format!(
            "theta {}: non-hyperactive mean {mc:.3} (n={}) vs hyperactive {mh:.3} (n={}), Mann-Whitney p {p:.2e}; {} never fired, {} unassigned",
            inj.theta,
            clean.len(),
            hyp.len(),
            report.never_fired,
            report.unassigned
        ),
    )
}

fn archive_bytes(m: &EnsembleModel) -> Vec<u8> {
    let mut out = manifest_json(m).unwrap().into_bytes();
    for e in &m.experts {
        out.extend(weights_to_le_bytes(&e.weights));
    }
    out
}

fn criterion_determinism(desk: &DeskScale) -> Outcome {
    let start = Instant::now();
    let partition = partition_reference(100, 25).unwrap();
    let (mut eight, _) = train_ensemble(&desk.reference, &partition, &desk.config, 8).unwrap();
    detect_hyperactive(&mut eight, &desk.reference, HyperactivityFilter::from_cli(desk.config.theta)).unwrap();
    let identical = archive_bytes(&eight) == archive_bytes(&desk.model);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk");
    save_ensemble(&desk.model, &path).unwrap();
    let back = load_ensemble(&path).unwrap();
    let on_disk_equal = back == desk.model;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut same = 0;
    for _ in 0..50 {
        let (place, img) = &desk.queries[rng.random_range(0..desk.queries.len())];
        let idx = place + rng.random_range(0..1000) * 100;
        same += usize::from(match_query(&desk.model, img, idx).unwrap() == match_query(&back, img, idx).unwrap());
    }
    let (fast, t) = within(start, 600.0);
    outcome(
        identical && on_disk_equal && same == 50 && fast,
        format!("workers 1 vs 8 bit-identical {identical}, reload equal {on_disk_equal}, {same}/50 queries identical, {t:.1}s"),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("1 numerics", criterion_numerics());
    report("2 fusion oracle", criterion_oracle());
    report("3 partition and filter", criterion_partition());
    report("9 metrics", criterion_metrics());
    report("7 scaling", criterion_scaling());
    let (o, desk) = criterion_desk_scale();
    report("4 desk-scale end-to-end", o);
    let (o, inj) = criterion_regularization(&desk);
    report("5 regularization benefit", o);
    report("6 neuron precision separation", criterion_neuron_precision(&inj));
    report("8 determinism and persistence", criterion_determinism(&desk));

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
