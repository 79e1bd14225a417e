//! Grid search over the excitatory inhibitory-conductance time constant and
//! the hyperactivity threshold, scored on a calibration split of places.
//!
//! One ensemble is trained per `tau_gi`. Query responses do not depend on
//! the threshold, so every `theta` cell re-fuses the same captured firing
//! logs under a different filter.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::ensemble::{
    detect_hyperactive, partition_reference, train_ensemble, EnsembleModel, HyperactivityFilter, ReferenceSet,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_queries, precision_at_100_recall, refuse_logs, FiringLog};
use crate::imaging::ImageGray;
use crate::store::{DatasetManifest, ImageLoader};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub tau_gi_grid: Vec<f64>,
    /// Threshold values; 0 stands for the unfiltered baseline.
    pub theta_grid: Vec<u64>,
    pub cal_places: Range<usize>,
    pub test_places: Range<usize>,
}

impl CalibrationPlan {
    /// Calibrate on the leading `cal_places` places and keep the rest of
    /// `total_places` for testing.
    pub fn leading(config: &RunConfig, total_places: usize) -> Result<Self> {
        let cal = config.calibration.cal_places;
        let plan = Self {
            tau_gi_grid: config.calibration.tau_gi_grid.clone(),
            theta_grid: config.calibration.theta_grid.clone(),
            cal_places: 0..cal,
            test_places: cal..total_places,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_gi_grid.is_empty() || self.theta_grid.is_empty() {
            return Err(Error::config("calibration grids must be non-empty"));
        }
        if self.tau_gi_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::config("tau_gi values must be positive"));
        }
        if self.cal_places.is_empty() {
            return Err(Error::config("calibration range is empty"));
        }
        let (c, t) = (&self.cal_places, &self.test_places);
        if c.start < t.end && t.start < c.end {
            return Err(Error::config(format!(
                "calibration range {c:?} overlaps test range {t:?}"
            )));
        }
        Ok(())
    }
}

/// Calibration-range images only. Place ids in `queries` are relative to
/// the calibration range.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationData {
    pub reference: ReferenceSet,
    pub queries: Vec<(usize, ImageGray)>,
}

/// Load the calibration range of every traverse through `loader`. No file
/// outside `plan.cal_places` is opened.
pub fn load_calibration_data(
    loader: &ImageLoader,
    reference: &[DatasetManifest],
    query: &DatasetManifest,
    plan: &CalibrationPlan,
) -> Result<CalibrationData> {
    plan.validate()?;
    let reference = reference
        .iter()
        .map(|m| loader.load_range(m, plan.cal_places.clone()))
        .collect::<Result<Vec<_>>>()?;
    let queries = loader
        .load_range(query, plan.cal_places.clone())?
        .into_iter()
        .enumerate()
        .collect();
    Ok(CalibrationData { reference, queries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub tau_gi: f64,
    pub theta: u64,
    pub p_at_100r: f64,
    /// Scoring time of this cell; training and reference totals are
    /// reported per `tau_gi` in `training_seconds`.
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChosenParameters {
    pub tau_gi: f64,
    pub theta: u64,
    pub p_at_100r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub cells: Vec<CalibrationCell>,
    pub chosen: ChosenParameters,
    pub training_seconds: Vec<(f64, f64)>,
}

/// Highest score wins; ties go to the smaller theta, then the smaller
/// `tau_gi`.
pub fn choose_cell(cells: &[CalibrationCell]) -> Result<ChosenParameters> {
    let best = cells
        .iter()
        .min_by(|a, b| {
            b.p_at_100r
                .total_cmp(&a.p_at_100r)
                .then(a.theta.cmp(&b.theta))
                .then(a.tau_gi.total_cmp(&b.tau_gi))
        })
        .ok_or_else(|| Error::config("calibration produced no cells"))?;
    Ok(ChosenParameters {
        tau_gi: best.tau_gi,
        theta: best.theta,
        p_at_100r: best.p_at_100r,
    })
}

/// P@100R of captured firing logs for each theta, reusing the model's
/// reference totals. Leaves the model filtered with the last theta.
pub fn score_thetas(model: &mut EnsembleModel, logs: &[FiringLog], thetas: &[u64]) -> Result<Vec<(u64, f64, f64)>> {
    thetas
        .iter()
        .map(|&theta| {
            let start = Instant::now();
            model.apply_filter(HyperactivityFilter::from_cli(theta))?;
            let p = precision_at_100_recall(&refuse_logs(model, logs)?)?;
            Ok((theta, p, start.elapsed().as_secs_f64()))
        })
        .collect()
}

/// `(theta, P@100R)` over the grid, preceded by the unfiltered baseline at
/// theta 0. The model's filter is restored afterwards.
pub fn theta_sweep(model: &mut EnsembleModel, logs: &[FiringLog], theta_grid: &[u64]) -> Result<Vec<(u64, f64)>> {
    let original = model.filter;
    let mut thetas = vec![0];
    thetas.extend(theta_grid.iter().copied().filter(|&t| t != 0));
    let scored = score_thetas(model, logs, &thetas);
    model.apply_filter(original)?;
    Ok(scored?.into_iter().map(|(t, p, _)| (t, p)).collect())
}

pub fn theta_sweep_csv(curve: &[(u64, f64)]) -> String {
    let mut out = String::from("theta,p_at_100r\n");
    for (t, p) in curve {
        let _ = writeln!(out, "{t},{p:.6}");
    }
    out
}

/// Train one calibration ensemble per `tau_gi` and score every theta on the
/// calibration queries.
pub fn run_grid_search(
    plan: &CalibrationPlan,
    data: &CalibrationData,
    base: &RunConfig,
    workers: usize,
) -> Result<CalibrationReport> {
    plan.validate()?;
    let places = plan.cal_places.len();
    for (t, trav) in data.reference.iter().enumerate() {
        if trav.len() != places {
            return Err(Error::config(format!(
                "calibration traverse {t} has {} images, expected {places}",
                trav.len()
            )));
        }
    }
    if data.queries.is_empty() {
        return Err(Error::config("no calibration queries"));
    }
    let partition = partition_reference(places, base.expert.kappa)?;
    let mut cells = Vec::new();
    let mut training_seconds = Vec::new();
    for &tau_gi in &plan.tau_gi_grid {
        let start = Instant::now();
        let mut cfg = base.clone();
        cfg.network = cfg.network.with_tau_gi(tau_gi);
        let (mut model, _) = train_ensemble(&data.reference, &partition, &cfg, workers)?;
        let pool = crate::ensemble::worker_pool(workers)?;
        let eval = pool.install(|| -> Result<_> {
            detect_hyperactive(&mut model, &data.reference, HyperactivityFilter::Disabled)?;
            evaluate_queries(&model, &data.queries)
        })?;
        training_seconds.push((tau_gi, start.elapsed().as_secs_f64()));
        for (theta, p, seconds) in score_thetas(&mut model, &eval.logs, &plan.theta_grid)? {
            cells.push(CalibrationCell {
                tau_gi,
                theta,
                p_at_100r: p,
                seconds,
            });
        }
    }
    let chosen = choose_cell(&cells)?;
    Ok(CalibrationReport {
        cells,
        chosen,
        training_seconds,
    })
}

pub fn report_csv(report: &CalibrationReport) -> String {
    let mut out = String::from("tau_gi,theta,p_at_100r,seconds\n");
    for c in &report.cells {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", c.tau_gi, c.theta, c.p_at_100r, c.seconds);
    }
    out
}

/// Write `calibration.csv` and `chosen.json` into `dir`.
pub fn write_report(dir: &Path, report: &CalibrationReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("calibration.csv");
    std::fs::write(&csv, report_csv(report)).map_err(|e| Error::io(&csv, e))?;
    let json = dir.join("chosen.json");
    let text = serde_json::to_string_pretty(&report.chosen).map_err(|e| Error::Internal(e.to_string()))? + "\n";
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn read_chosen(path: &Path) -> Result<ChosenParameters> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}
