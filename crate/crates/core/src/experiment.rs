//! Monte-Carlo experiment driver: seeded trials, parameter sweeps, NMSE
//! aggregation and CSV output.
//!
//! Trials are embarrassingly parallel; every trial derives its own RNG from
//! (seed, sweep index, trial index), so results are bitwise independent of
//! the thread count and schedule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ls_oracle, somp_estimate};
use crate::channel::{
    amplitude_model_valid, sample_paths_with_eta_max, synthesize_channel, PathParams,
};
use crate::config::ScenarioConfig;
use crate::dictionary::{build_dictionary_with_limit, Dictionary, DEFAULT_MEMORY_LIMIT};
use crate::error::{Error, Result};
use crate::grid::{build_grid, flat_index, SamplingGrid};
use crate::hmp::{estimate_with_model, HmpModel, HmpOptions};
use crate::measurement::{add_noise, apply_measurement, build_precoder, calibrate_noise, measure_matrix};
use crate::mdgpp::{two_stage_with_model, TwoStageOptions};
use crate::CVec;

/// Swept experiment variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    SnrDb,
    NPilotSymbols,
    EtaMax,
    Bandwidth,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::SnrDb => "snr_db",
            SweepVar::NPilotSymbols => "n_pilot_symbols",
            SweepVar::EtaMax => "eta_max",
            SweepVar::Bandwidth => "bandwidth",
        }
    }
}

impl std::str::FromStr for SweepVar {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr_db" => Ok(SweepVar::SnrDb),
            "n_pilot_symbols" => Ok(SweepVar::NPilotSymbols),
            "eta_max" => Ok(SweepVar::EtaMax),
            "bandwidth" => Ok(SweepVar::Bandwidth),
            other => Err(Error::InvalidConfig(format!("unknown sweep variable '{other}'"))),
        }
    }
}

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Hmp,
    Mdgpp,
    Somp,
    Oracle,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Hmp => "hmp",
            EstimatorKind::Mdgpp => "mdgpp",
            EstimatorKind::Somp => "somp",
            EstimatorKind::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hmp" => Ok(EstimatorKind::Hmp),
            "mdgpp" => Ok(EstimatorKind::Mdgpp),
            "somp" => Ok(EstimatorKind::Somp),
            "oracle" => Ok(EstimatorKind::Oracle),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

/// One experiment: a scenario, a swept variable with its values, a trial
/// budget, a seed and the estimators to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Output CSV path (consumed by the CLI; the library returns records).
    #[serde(default)]
    pub out: Option<std::path::PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trial count must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep needs at least one value".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("select at least one estimator".into()));
        }
        for &v in &self.values {
            match self.sweep {
                SweepVar::NPilotSymbols => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::InvalidConfig(format!("pilot symbol count {v} must be a positive integer")));
                    }
                }
                SweepVar::EtaMax => {
                    if !(0.0..=self.scenario.eta_max()).contains(&v) {
                        return Err(Error::InvalidConfig(format!(
                            "slope ceiling {v} outside [0, {}] covered by the grid",
                            self.scenario.eta_max()
                        )));
                    }
                }
                SweepVar::Bandwidth => {
                    if !(v > 0.0) {
                        return Err(Error::InvalidConfig(format!("bandwidth {v} must be positive")));
                    }
                }
                SweepVar::SnrDb => {}
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Aggregated result for one (sweep value, estimator) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NmseRecord {
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub estimator: EstimatorKind,
    pub nmse_db: f64,
    /// Trials included in the average (failures excluded).
    pub trials: usize,
    pub wall_ms: u64,
    /// Trials flagged and excluded for this estimator.
    pub failed_trials: usize,
}

/// Runtime knobs that are not part of the experiment definition.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub hmp: HmpOptions,
    pub two_stage: TwoStageOptions,
    /// SOMP atom budget as a multiple of the path count.
    pub somp_atom_factor: usize,
    pub somp_residual_tol: f64,
    /// Thread count (None = rayon default).
    pub threads: Option<usize>,
    /// Write wall_ms as 0 so identical runs produce identical CSV bytes.
    pub redact_wall_time: bool,
    /// Draw path parameters on grid tuples instead of the continuum.
    pub on_grid: bool,
    pub coherence_threshold: f64,
    pub dictionary_limit: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            hmp: HmpOptions::default(),
            two_stage: TwoStageOptions::default(),
            somp_atom_factor: 2,
            somp_residual_tol: 1e-6,
            threads: None,
            redact_wall_time: false,
            on_grid: false,
            coherence_threshold: 0.5,
            dictionary_limit: DEFAULT_MEMORY_LIMIT,
        }
    }
}

/// NMSE in dB over paired trials: 10 log10 of the mean per-trial
/// ||h_hat - h||^2 / ||h||^2, floored at -300 dB.
pub fn nmse_db(h_hat: &[CVec], h_true: &[CVec]) -> Result<f64> {
    if h_hat.len() != h_true.len() || h_hat.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            h_hat.len(),
            h_true.len()
        )));
    }
    let mut acc = 0.0;
    for (est, truth) in h_hat.iter().zip(h_true) {
        if est.len() != truth.len() {
            return Err(Error::DimensionMismatch("trial length mismatch".into()));
        }
        let denom = truth.norm_squared();
        if denom == 0.0 {
            return Err(Error::ZeroSignal("zero-norm ground truth".into()));
        }
        acc += (est - truth).norm_squared() / denom;
    }
    let mean = acc / h_hat.len() as f64;
    Ok((10.0 * mean.log10()).max(-300.0))
}

/// Scenario with the sweep value applied. Returns the adjusted config plus
/// the slope ceiling used for path sampling (the grid keeps the scenario's
/// full slope range).
fn apply_sweep(base: &ScenarioConfig, sweep: SweepVar, value: f64) -> (ScenarioConfig, f64) {
    let mut cfg = base.clone();
    let mut sample_eta_max = cfg.eta_max();
    match sweep {
        SweepVar::SnrDb => cfg.snr_db = value,
        SweepVar::NPilotSymbols => cfg.n_pilot_symbols = value as usize,
        SweepVar::EtaMax => sample_eta_max = value,
        SweepVar::Bandwidth => {
            let df_old = cfg.df_pilot;
            cfg.df_pilot = value / cfg.n_pilot_subcarriers as f64;
            // Keep tau_max * df constant so the delay grid size is stable.
            if let Some(t) = cfg.tau_max {
                cfg.tau_max = Some(t * df_old / cfg.df_pilot);
            }
        }
    }
    (cfg, sample_eta_max)
}

/// Deterministic per-trial seed.
fn trial_seed(seed: u64, value_index: usize, trial: usize) -> u64 {
    splitmix64(seed ^ splitmix64(value_index as u64 ^ splitmix64(trial as u64 ^ 0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// L distinct on-grid paths with unit total power; returns the paths and
/// their flat grid indices (the exact support).
pub fn sample_on_grid_paths<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ScenarioConfig,
    grid: &SamplingGrid,
) -> (Vec<PathParams>, Vec<usize>) {
    use rand_distr::StandardNormal;
    let l = cfg.n_paths;
    let mut support = Vec::with_capacity(l);
    let mut paths = Vec::with_capacity(l);
    while paths.len() < l {
        let k_an = rng.gen_range(0..grid.k_an());
        let k_sl = rng.gen_range(0..grid.k_sl());
        let k_de = rng.gen_range(0..grid.k_de());
        let flat = flat_index(k_an, k_sl, k_de, grid).expect("indices in range");
        if support.contains(&flat) {
            continue;
        }
        let (psi, eta, tau) = (grid.psi_grid[k_an], grid.eta_grid[k_sl], grid.tau_grid[k_de]);
        if !amplitude_model_valid(eta, psi, cfg) {
            continue;
        }
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        support.push(flat);
        paths.push(PathParams {
            alpha: num_complex::Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2,
            psi,
            eta,
            tau,
        });
    }
    let total: f64 = paths.iter().map(|p| p.alpha.norm_sqr()).sum();
    let scale = 1.0 / total.sqrt();
    for p in &mut paths {
        p.alpha *= scale;
    }
    let mut ordered: Vec<(usize, PathParams)> = support.into_iter().zip(paths).collect();
    ordered.sort_by_key(|(k, _)| *k);
    let support = ordered.iter().map(|(k, _)| *k).collect();
    let paths = ordered.into_iter().map(|(_, p)| p).collect();
    (paths, support)
}

/// Nearest grid tuple of each path, as sorted unique flat indices: the
/// genie support handed to the least-squares oracle.
pub fn nearest_grid_support(paths: &[PathParams], grid: &SamplingGrid) -> Vec<usize> {
    let nearest = |axis: &[f64], x: f64| -> usize {
        axis.iter()
            .enumerate()
            .min_by(|a, b| (a.1 - x).abs().partial_cmp(&(b.1 - x).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let mut support: Vec<usize> = paths
        .iter()
        .map(|p| {
            let k_an = nearest(&grid.psi_grid, p.psi);
            let k_sl = nearest(&grid.eta_grid, p.eta);
            let k_de = nearest(&grid.tau_grid, p.tau);
            flat_index(k_an, k_sl, k_de, grid).expect("indices in range")
        })
        .collect();
    support.sort_unstable();
    support.dedup();
    support
}

struct TrialOutput {
    estimator: EstimatorKind,
    h_hat: Option<CVec>,
    wall_ms: u64,
}

/// Run the experiment; one record per (sweep value, estimator).
pub fn run_experiment(spec: &ExperimentSpec, opts: &ExperimentOptions) -> Result<Vec<NmseRecord>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    let mut records = Vec::new();
    for (value_index, &value) in spec.values.iter().enumerate() {
        let (cfg, sample_eta_max) = apply_sweep(&spec.scenario, spec.sweep, value);
        cfg.validate()?;
        let grid = build_grid(&cfg, opts.coherence_threshold)?;
        let dict = build_dictionary_with_limit(&grid, &cfg, opts.dictionary_limit)?;

        let trial_results: Vec<Result<(CVec, Vec<TrialOutput>)>> = pool.install(|| {
            (0..spec.trials)
                .into_par_iter()
                .map(|trial| run_trial(spec, opts, &cfg, &grid, &dict, sample_eta_max, value_index, trial))
                .collect()
        });

        for &estimator in &spec.estimators {
            let mut h_hats = Vec::with_capacity(spec.trials);
            let mut h_trues = Vec::with_capacity(spec.trials);
            let mut wall = 0u64;
            let mut failed = 0usize;
            for tr in &trial_results {
                match tr {
                    Ok((h_true, outputs)) => {
                        let out = outputs
                            .iter()
                            .find(|o| o.estimator == estimator)
                            .expect("every estimator runs in every trial");
                        wall += out.wall_ms;
                        match &out.h_hat {
                            Some(h) => {
                                h_hats.push(h.clone());
                                h_trues.push(h_true.clone());
                            }
                            None => failed += 1,
                        }
                    }
                    Err(_) => failed += 1,
                }
            }
            let nmse = if h_hats.is_empty() { f64::NAN } else { nmse_db(&h_hats, &h_trues)? };
            records.push(NmseRecord {
                sweep_var: spec.sweep,
                sweep_value: value,
                estimator,
                nmse_db: nmse,
                trials: h_hats.len(),
                wall_ms: if opts.redact_wall_time { 0 } else { wall },
                failed_trials: failed,
            });
        }
    }
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    spec: &ExperimentSpec,
    opts: &ExperimentOptions,
    cfg: &ScenarioConfig,
    grid: &SamplingGrid,
    dict: &Dictionary,
    sample_eta_max: f64,
    value_index: usize,
    trial: usize,
) -> Result<(CVec, Vec<TrialOutput>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, value_index, trial));

    let (paths, exact_support) = if opts.on_grid {
        let (p, s) = sample_on_grid_paths(&mut rng, cfg, grid);
        (p, Some(s))
    } else {
        (sample_paths_with_eta_max(&mut rng, cfg, sample_eta_max), None)
    };
    let h = synthesize_channel(&paths, cfg)?;
    let precoder = build_precoder(&mut rng, cfg);
    let s = apply_measurement(&h, &precoder)?;
    let sigma_z2 = calibrate_noise(&s, cfg.snr_db)?;
    let received = add_noise(&s, sigma_z2, &mut rng);
    let y = received.y;

    let g = measure_matrix(&dict.u, &precoder)?;
    let model = HmpModel::new(g);

    let mut outputs = Vec::with_capacity(spec.estimators.len());
    for &estimator in &spec.estimators {
        let start = std::time::Instant::now();
        let h_hat = match estimator {
            EstimatorKind::Hmp => estimate_with_model(&y, &model, &dict.u, sigma_z2, &opts.hmp)
                .ok()
                .map(|r| r.h_hat),
            EstimatorKind::Mdgpp => {
                two_stage_with_model(&y, dict, &precoder, &model, sigma_z2, &opts.two_stage)
                    .ok()
                    .map(|r| r.report.h_hat)
            }
            EstimatorKind::Somp => somp_estimate(
                &y,
                &model.g,
                &dict.u,
                opts.somp_atom_factor * cfg.n_paths,
                opts.somp_residual_tol,
            )
            .ok()
            .map(|r| r.h_hat),
            EstimatorKind::Oracle => {
                let support = match &exact_support {
                    Some(s) => s.clone(),
                    None => nearest_grid_support(&paths, grid),
                };
                ls_oracle(&y, &model.g, &dict.u, &support).ok()
            }
        };
        outputs.push(TrialOutput {
            estimator,
            h_hat,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((h.h, outputs))
}

/// Write records using the stable schema
/// `sweep_var,sweep_value,estimator,nmse_db,trials,wall_ms`.
pub fn write_csv<W: std::io::Write>(records: &[NmseRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "sweep_var,sweep_value,estimator,nmse_db,trials,wall_ms")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:.6},{},{}",
            r.sweep_var.name(),
            r.sweep_value,
            r.estimator.name(),
            r.nmse_db,
            r.trials,
            r.wall_ms
        )?;
    }
    Ok(())
}

/// Render records to a CSV string.
pub fn csv_string(records: &[NmseRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("csv is ascii")
}
