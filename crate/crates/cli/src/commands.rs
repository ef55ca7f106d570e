use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::Serialize;

use hwgrape::io::{self, Metadata};
use hwgrape::optimizer::{
    contiguous_window, gradient_check, grape_optimize, landscape_study, random_pulse,
    robustness_scan, Ensemble, JacobianMode, OptimizerConfig, RunRecord, RunStatus,
};
use hwgrape::presets::{quarter_turn_time, qubit_problem, x_rotation};
use hwgrape::quantum::phi_from_average_fidelity;
use hwgrape::resonator::{steady_state_response, ResonatorDistortion, ResonatorOptions};
use hwgrape::{DistortedPulse, Distortion, Pulse, Shape, Unit};

use crate::config::{DistortionSpec, ExperimentConfig};

pub const VERSION: &str = env!("HWGRAPE_VERSION");

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jacobian: Option<JacobianMode>,
    pub pulse: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Stall, iteration limit or unsettled steady state.
    NotConverged,
    /// Non-finite utility; the diagnostic record is still written.
    Aborted,
}

/// Files produced by a command, written together once everything succeeded.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes each file through a temporary in `dir` and renames it into place.
    pub fn commit(self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (name, bytes) in self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(&bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(dir.join(&name))
                .with_context(|| format!("cannot write {name}"))?;
        }
        Ok(())
    }
}

/// Applies command-line overrides to the config.
pub fn resolve(mut cfg: ExperimentConfig, ov: &Overrides) -> ExperimentConfig {
    if let Some(o) = cfg.optimizer.as_mut() {
        if let Some(s) = ov.seed {
            o.seed = s;
        }
        if let Some(j) = ov.jacobian {
            o.jacobian = j;
        }
    }
    if let Some(l) = cfg.landscape.as_mut() {
        if let Some(s) = ov.seed {
            l.base_seed = s;
        }
        if let Some(j) = ov.jacobian {
            l.jacobian = j;
        }
    }
    cfg
}

fn header(command: &str, cfg: &ExperimentConfig) -> Result<Metadata> {
    Ok(vec![
        ("version".into(), VERSION.into()),
        ("command".into(), command.into()),
        ("config".into(), serde_json::to_string(cfg)?),
    ])
}

fn channel_names(spec: &DistortionSpec, k: usize) -> Vec<String> {
    match spec {
        DistortionSpec::Resonator { .. } => vec!["in_phase_v".into(), "quadrature_v".into()],
        DistortionSpec::Crosstalk { channels, .. } => (0..k)
            .map(|c| format!("q{}_{}", c / channels + 1, c % channels))
            .collect(),
        _ => (0..k).map(|c| format!("p{c}")).collect(),
    }
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn pulse_csv(p: &Array2<f64>, names: &[String], meta: &[(String, String)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    io::write_pulse_csv(&mut buf, p, &refs(names), meta)?;
    Ok(buf)
}

fn waveform_csv(q: &DistortedPulse, meta: &[(String, String)]) -> Result<Vec<u8>> {
    let times: Vec<f64> = (0..q.steps()).map(|m| (m as f64 + 0.5) * q.dt()).collect();
    let names: Vec<String> = (0..q.channels()).map(|l| format!("q{l}_rad_s")).collect();
    let mut buf = Vec::new();
    io::write_waveform_csv(&mut buf, &times, q.values(), &refs(&names), meta)?;
    Ok(buf)
}

fn table_csv(header: &[&str], rows: &[Vec<f64>], meta: &[(String, String)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    io::write_table_csv(&mut buf, header, rows, meta)?;
    Ok(buf)
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn load_pulse(path: &Path, domain: Shape, unit: Unit) -> Result<Pulse> {
    let f = std::fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let t = io::read_pulse_csv(f).with_context(|| format!("in {}", path.display()))?;
    domain.check(&t.values, domain.dt, &format!("pulse {}", path.display()))?;
    Ok(Pulse::new(t.values, domain.dt, unit)?)
}

#[derive(Serialize)]
struct RecordFile<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    record: &'a RunRecord,
}

pub fn optimize(cfg: &ExperimentConfig, ov: &Overrides) -> Result<(Outputs, Outcome, RunRecord)> {
    let opt = cfg
        .optimizer
        .as_ref()
        .context("optimize needs an `optimizer` section")?;
    let ens = cfg.ensemble()?;
    let unit = cfg.distortion.unit();
    let initial = match &ov.pulse {
        Some(path) => Some(load_pulse(path, ens.domain(), unit)?),
        None => None,
    };
    let record = grape_optimize(&ens, opt, initial)?;
    let meta = header("optimize", cfg)?;
    let p = record.final_pulse.to_pulse()?;
    let nominal = &ens.members()[0].distortion;
    let q = nominal.apply(&p)?;

    let mut out = Outputs::default();
    let names = channel_names(&cfg.distortion, p.channels());
    out.add("pulse.csv", pulse_csv(p.values(), &names, &meta)?);
    out.add("distorted.csv", waveform_csv(&q, &meta)?);
    let mut trace = Vec::new();
    record.write_trace_csv(&mut trace)?;
    out.add("trace.csv", trace);
    if let DistortionSpec::Resonator { .. } = cfg.distortion {
        let g = cfg.distortion.build_resonator(&ens.members()[0].sample)?;
        let run = g.run(&p)?;
        let rows: Vec<Vec<f64>> = g
            .input_steps(&p, &run)
            .iter()
            .map(|(s, w, a)| vec![*s, *w, a.re, a.im])
            .collect();
        let mut m = meta.clone();
        m.push((
            "terminal_current_a".into(),
            format!("{:e}", run.terminal_current()),
        ));
        m.push((
            "pulse_peak_current_a".into(),
            format!("{:e}", run.pulse_peak_current),
        ));
        out.add(
            "input_steps.csv",
            table_csv(
                &["start_s", "width_s", "in_phase_v", "quadrature_v"],
                &rows,
                &m,
            )?,
        );
    }
    out.add(
        "record.json",
        json(&RecordFile {
            version: VERSION,
            config: cfg,
            record: &record,
        })?,
    );
    let outcome = match record.status {
        RunStatus::ReachedTarget => Outcome::Success,
        RunStatus::Aborted => Outcome::Aborted,
        _ => Outcome::NotConverged,
    };
    Ok((out, outcome, record))
}

pub fn distort(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outputs> {
    let g = cfg.distortion.build(&Default::default())?;
    let domain = g.domain();
    let unit = cfg.distortion.unit();
    let meta = header("distort", cfg)?;
    let mut out = Outputs::default();
    match (&ov.pulse, &cfg.square) {
        (Some(path), _) => {
            let p = load_pulse(path, domain, unit)?;
            let mut m = meta.clone();
            m.push(("input".into(), path.display().to_string()));
            out.add("distorted.csv", waveform_csv(&g.apply(&p)?, &m)?);
        }
        (None, Some(sq)) => {
            for (i, &a) in sq.amplitudes.iter().enumerate() {
                let mut v = Array2::zeros((domain.steps, domain.channels));
                v.column_mut(sq.channel).fill(a);
                let p = Pulse::new(v, domain.dt, unit)?;
                let mut m = meta.clone();
                m.push(("amplitude".into(), format!("{a:e}")));
                out.add(
                    &format!("distorted_{i}.csv"),
                    waveform_csv(&g.apply(&p)?, &m)?,
                );
            }
        }
        (None, None) => bail!("distort needs --pulse or a `square` section"),
    }
    Ok(out)
}

pub fn scan(cfg: &ExperimentConfig, ov: &Overrides) -> Result<Outputs> {
    let spec = cfg.scan.as_ref().context("scan needs a `scan` section")?;
    let path = ov.pulse.as_ref().context("scan needs --pulse")?;
    let problem = cfg.problem()?;
    let dspec = &cfg.distortion;
    let p = load_pulse(path, dspec.domain(), dspec.unit())?;
    let rows = robustness_scan(&p, &spec.values, |v| {
        Ensemble::from_samples(&problem, vec![spec.sample(v)], dspec.unit(), |s| {
            dspec
                .build(s)
                .map_err(|e| hwgrape::Error::Validation(format!("{e:#}")))
        })
    })?;
    let mut meta = header("scan", cfg)?;
    meta.push(("parameter".into(), spec.parameter.clone()));
    meta.push((
        "grid".into(),
        spec.values
            .iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(" "),
    ));
    if let (Some(c), Some(t)) = (spec.nominal, spec.threshold) {
        let w = contiguous_window(&rows, c, t);
        meta.push((
            "window".into(),
            w.map_or("none".into(), |(lo, hi)| format!("{lo:e} {hi:e}")),
        ));
    }
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.value, r.fidelity, r.average_fidelity])
        .collect();
    let mut out = Outputs::default();
    out.add(
        "scan.csv",
        table_csv(&[&spec.parameter, "phi", "average_fidelity"], &table, &meta)?,
    );
    Ok(out)
}

/// Per-bound problem of the landscape study.
pub struct LandscapeBound {
    pub bound: f64,
    pub pulse_time: f64,
    pub distortion: Arc<ResonatorDistortion>,
    pub ensemble: Ensemble,
    pub config: OptimizerConfig,
}

pub fn landscape_problems(cfg: &ExperimentConfig) -> Result<Vec<LandscapeBound>> {
    let spec = cfg
        .landscape
        .as_ref()
        .context("landscape needs a `landscape` section")?;
    let model = cfg.distortion.resonator_model()?;
    let base_opts = match &cfg.distortion {
        DistortionSpec::Resonator { options, .. } => options.clone(),
        _ => ResonatorOptions::default(),
    };
    let opts = ResonatorOptions {
        ringdown: spec.ringdown.clone(),
        tail: spec.tail,
        ..base_opts
    };
    let problem = qubit_problem(x_rotation(spec.angle))?;
    spec.bounds
        .iter()
        .map(|&bound| {
            let t = quarter_turn_time(&model, bound, &model.default_solver())?;
            let domain = Shape::new(spec.steps, 2, t / spec.steps as f64);
            let g = Arc::new(ResonatorDistortion::new(
                model.clone(),
                domain,
                opts.clone(),
            )?);
            let dyn_g: Arc<dyn Distortion> = g.clone();
            let ensemble = Ensemble::single(problem.clone(), dyn_g, Unit::Volts)?;
            let mut config = OptimizerConfig::new(
                phi_from_average_fidelity(spec.target_average_fidelity, 2),
                spec.max_iterations,
                bound,
            );
            config.initial_scale = spec.initial_scale;
            config.jacobian = spec.jacobian;
            Ok(LandscapeBound {
                bound,
                pulse_time: t,
                distortion: g,
                ensemble,
                config,
            })
        })
        .collect()
}

pub fn landscape(cfg: &ExperimentConfig) -> Result<Outputs> {
    let spec = cfg
        .landscape
        .as_ref()
        .context("landscape needs a `landscape` section")?;
    let problems = landscape_problems(cfg)?;
    for (b, lb) in problems.iter().enumerate() {
        if spec.jacobian == JacobianMode::ZeroOrder {
            lb.distortion.jacobian_zero_order()?;
        }
        if let Some(tol) = spec.gradient_check {
            let seed = hwgrape::optimizer::trial_seed(spec.base_seed, spec.trials, b, 0);
            let c = lb.config.clone().with_seed(seed);
            let p = random_pulse(&lb.ensemble, &c)?;
            let e = gradient_check(&p, &lb.ensemble, &c, c.fd_step * lb.bound)?;
            log::info!("bound {}: gradient check relative error {e:e}", lb.bound);
            if e > tol {
                return Err(hwgrape::Error::GradientCheck {
                    relative_error: e,
                    tolerance: tol,
                }
                .into());
            }
        }
    }
    let rows = landscape_study(&spec.bounds, spec.trials, spec.base_seed, |bound, seed| {
        let lb = problems
            .iter()
            .find(|p| p.bound == bound)
            .expect("bound from the list");
        grape_optimize(&lb.ensemble, &lb.config.clone().with_seed(seed), None)
    })?;
    let meta = header("landscape", cfg)?;
    let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let summary: Vec<Vec<f64>> = rows
        .iter()
        .zip(&problems)
        .map(|(r, p)| {
            vec![
                r.bound,
                p.pulse_time,
                r.failure_fraction,
                nan(r.calls_q16),
                nan(r.calls_median),
                nan(r.calls_q84),
            ]
        })
        .collect();
    let trials: Vec<Vec<f64>> = rows
        .iter()
        .flat_map(|r| {
            r.outcomes.iter().enumerate().map(move |(t, o)| {
                vec![
                    r.bound,
                    t as f64,
                    o.seed as f64,
                    (o.status == RunStatus::ReachedTarget) as u8 as f64,
                    o.calls as f64,
                    o.iterations as f64,
                    o.final_average_fidelity,
                ]
            })
        })
        .collect();
    let mut out = Outputs::default();
    out.add(
        "landscape.csv",
        table_csv(
            &[
                "bound_v",
                "pulse_time_s",
                "failure_fraction",
                "calls_q16",
                "calls_median",
                "calls_q84",
            ],
            &summary,
            &meta,
        )?,
    );
    out.add(
        "trials.csv",
        table_csv(
            &[
                "bound_v",
                "trial",
                "seed",
                "reached",
                "calls",
                "iterations",
                "average_fidelity",
            ],
            &trials,
            &meta,
        )?,
    );
    Ok(out)
}

pub fn steady_state(cfg: &ExperimentConfig) -> Result<Outputs> {
    let spec = cfg
        .steady_state
        .as_ref()
        .context("steady-state needs a `steady_state` section")?;
    let model = cfg.distortion.resonator_model()?;
    let solver = model.default_solver();
    let rows = spec
        .volts
        .iter()
        .map(|&v| {
            let s = steady_state_response(v, &model, &solver)?;
            Ok(vec![v, s.state[0].norm(), s.frequency_hz, s.settle_time])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Outputs::default();
    out.add(
        "steady_state.csv",
        table_csv(
            &["volts", "current_a", "frequency_hz", "settle_time_s"],
            &rows,
            &header("steady-state", cfg)?,
        )?,
    );
    Ok(out)
}
