use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use super::{average_utility, Ensemble, RunRecord, RunStatus};
use crate::error::{validation, Result};
use crate::pulse::Pulse;
use crate::quantum::average_gate_fidelity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub value: f64,
    /// Weighted `Φ` over the ensemble built for `value`.
    pub fidelity: f64,
    pub average_fidelity: f64,
}

/// Fidelity of a fixed pulse across a parameter grid. `family` builds the
/// ensemble (problem and distortion) for each grid value.
pub fn robustness_scan<F>(pulse: &Pulse, grid: &[f64], family: F) -> Result<Vec<ScanRow>>
where
    F: Fn(f64) -> Result<Ensemble> + Sync,
{
    if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
        return Err(validation(format!("scan grid contains {v}")));
    }
    grid.par_iter()
        .map(|&value| {
            let ens = family(value)?;
            let (fidelity, _) = average_utility(pulse, &ens)?;
            Ok(ScanRow {
                value,
                fidelity,
                average_fidelity: average_gate_fidelity(fidelity, ens.dim()),
            })
        })
        .collect()
}

/// Widest run of consecutive rows with average fidelity above `threshold`
/// that contains the row closest to `center`. Returns its end values.
pub fn contiguous_window(rows: &[ScanRow], center: f64, threshold: f64) -> Option<(f64, f64)> {
    let c = rows
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.value - center)
                .abs()
                .total_cmp(&(b.1.value - center).abs())
        })?
        .0;
    let ok = |i: usize| rows[i].average_fidelity > threshold;
    if !ok(c) {
        return None;
    }
    let lo = (0..=c).rev().take_while(|&i| ok(i)).last().unwrap_or(c);
    let hi = (c..rows.len()).take_while(|&i| ok(i)).last().unwrap_or(c);
    Some((rows[lo].value, rows[hi].value))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub status: RunStatus,
    pub calls: u64,
    pub iterations: usize,
    pub final_average_fidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub bound: f64,
    pub trials: usize,
    pub failure_fraction: f64,
    /// Call-count quantiles (16%, 50%, 84%) among successful trials.
    pub calls_q16: Option<f64>,
    pub calls_median: Option<f64>,
    pub calls_q84: Option<f64>,
    pub outcomes: Vec<TrialOutcome>,
}

/// Seed of trial `t` at bound index `b`.
pub fn trial_seed(base_seed: u64, trials: usize, b: usize, t: usize) -> u64 {
    base_seed.wrapping_add((b * trials + t) as u64)
}

/// Runs `run(bound, seed)` for every bound and trial, in parallel, and
/// summarizes failure fractions and distortion-call quantiles per bound.
pub fn landscape_study<F>(
    bounds: &[f64],
    trials: usize,
    base_seed: u64,
    run: F,
) -> Result<Vec<LandscapeRow>>
where
    F: Fn(f64, u64) -> Result<RunRecord> + Sync,
{
    if trials == 0 {
        return Err(validation(
            "landscape study needs at least one trial per bound",
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..bounds.len())
        .flat_map(|b| (0..trials).map(move |t| (b, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(b, t)| {
            let seed = trial_seed(base_seed, trials, b, t);
            let rec = run(bounds[b], seed)?;
            log::info!(
                "bound {} trial {t} seed {seed}: {:?} after {} calls",
                bounds[b],
                rec.status,
                rec.distortion_calls
            );
            Ok(TrialOutcome {
                seed,
                status: rec.status,
                calls: rec.distortion_calls,
                iterations: rec.iterations.len().saturating_sub(1),
                final_average_fidelity: rec.final_average_fidelity,
            })
        })
        .collect::<Result<_>>()?;
    Ok(bounds
        .iter()
        .zip(outcomes.chunks(trials))
        .map(|(&bound, chunk)| {
            let calls: Vec<f64> = chunk
                .iter()
                .filter(|o| o.status == RunStatus::ReachedTarget)
                .map(|o| o.calls as f64)
                .collect();
            let failures = chunk.len() - calls.len();
            let mut data = Data::new(calls);
            let q = |data: &mut Data<Vec<f64>>, tau: f64| {
                (!data.is_empty()).then(|| data.quantile(tau))
            };
            LandscapeRow {
                bound,
                trials,
                failure_fraction: failures as f64 / trials as f64,
                calls_q16: q(&mut data, 0.16),
                calls_median: q(&mut data, 0.5),
                calls_q84: q(&mut data, 0.84),
                outcomes: chunk.to_vec(),
            }
        })
        .collect())
}
