//! End-to-end experiment runners: configuration, a Monte Carlo harness,
//! and aggregate results for the built-in detection scenarios.
//!
//! Three scenarios are provided. `force-detect` pits a position-monitored
//! oscillator driven by a hidden stochastic force against the force-free
//! oscillator, runs a Kalman-Bucy filter per hypothesis, and reports
//! Chernoff bounds next to the empirical error rates. `quadrature-equiv`
//! drives a quadrature-monitored thermal oscillator against its classical
//! diffusion twin; the two produce identical observation estimates, so the
//! likelihood ratio must sit at one up to discretization error, which is
//! what the run measures. `energy-quant` swaps the sensor for the
//! oscillator energy, where the two estimates genuinely part ways and the
//! log-likelihood ratio grows in favor of the true model.
//!
//! All trials are reproducible: trial `i` of a run draws from dedicated
//! counter-based streams keyed by `(seed, i)`, so results are independent
//! of worker count and completion order.

mod energy;
mod force;
pub(crate) mod quadrature;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::filters::{FilterOptions, HypothesisModel};
use crate::gaussian_models::ChernoffProblem;
use crate::likelihood::{bayes_log_threshold, decide, Hypothesis, Priors};
use crate::linalg::CMat;
use crate::rng::{lane_rng, Lane};
use crate::trajectories::{
    simulate_gaussian_record, simulate_ou_path, MeasurementRecord, RecordKind,
};
use crate::Result;

/// Scenario selector, matching the command-line subcommand names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    ForceDetect,
    QuadratureEquiv,
    EnergyQuant,
}

impl ScenarioKind {
    pub fn id(&self) -> &'static str {
        match self {
            ScenarioKind::ForceDetect => "force-detect",
            ScenarioKind::QuadratureEquiv => "quadrature-equiv",
            ScenarioKind::EnergyQuant => "energy-quant",
        }
    }
}

/// Trial-level settings: ensemble size, seeding, truth, decision rule.
///
/// The decision threshold is given either directly as `log_threshold` or
/// through `prior_null` / `cost_miss` / `cost_false_alarm`, from which the
/// risk-minimizing threshold is derived; mixing the two forms is rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub n_trials: u64,
    pub seed: u64,
    /// Hypothesis the records are actually simulated from.
    pub truth: Hypothesis,
    pub log_threshold: Option<f64>,
    pub prior_null: Option<f64>,
    pub cost_miss: Option<f64>,
    pub cost_false_alarm: Option<f64>,
    /// Keep a thinned trajectory of trial 0 in the result.
    pub store_trajectory: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            n_trials: 1000,
            seed: 1,
            truth: Hypothesis::Alternative,
            log_threshold: None,
            prior_null: None,
            cost_miss: None,
            cost_false_alarm: None,
            store_trajectory: false,
        }
    }
}

/// Physical parameters shared by the scenarios; fields a scenario does not
/// use are ignored by it (the oscillator pair never sees `coupling`, the
/// force pair never sees `gamma_decay`).
///
/// The measurement noise variance decomposes as `r_noise = q_noise +
/// s_noise`: the backaction-carrying share plus excess classical noise.
/// Any subset may be given; omitted members are filled in from the
/// constraint, and giving all three inconsistently is an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConfig {
    /// Oscillator energy decay rate.
    pub gamma_decay: f64,
    /// Thermal occupation of the bath and of the initial state.
    pub n_occ: f64,
    /// Measured quadrature angle; absent means drawn per trial from
    /// {0, pi/4, pi/2}.
    pub theta: Option<f64>,
    pub mass: f64,
    pub omega: f64,
    /// Force-to-momentum coupling.
    pub coupling: f64,
    /// Force process drift; must be negative so the force is stationary.
    pub a_drift: f64,
    /// Force process diffusion.
    pub b_diff: f64,
    pub q_noise: Option<f64>,
    pub s_noise: Option<f64>,
    pub r_noise: Option<f64>,
    /// Detector efficiency for counting records.
    pub eta: f64,
    pub hbar: f64,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        PhysicalConfig {
            gamma_decay: 1.0,
            n_occ: 0.5,
            theta: None,
            mass: 1.0,
            omega: 1.0,
            coupling: 1.0,
            a_drift: -1.0,
            b_diff: 1.0,
            q_noise: None,
            s_noise: None,
            r_noise: None,
            eta: 1.0,
            hbar: 1.0,
        }
    }
}

/// Discretization and diagnostic knobs.
///
/// `dt` and `t_final` default per scenario: the force pair steps at
/// 1e-3 of the oscillator period and runs ten force correlation times;
/// the oscillator pair steps at 1e-3 of the decay time and runs ten decay
/// times. The horizon is snapped to a whole number of steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    /// Fock-space truncation of the quantum filters.
    pub dim: usize,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    /// Cells per axis of the classical grids.
    pub grid: usize,
    /// Grid half-width in units of the stationary standard deviation.
    pub halfwidth_sigmas: f64,
    /// Stride of the stored trajectory sample.
    pub thin_stride: usize,
    /// Horizon times at which the running log-likelihood ratio is
    /// captured per trial, in addition to `t_final`.
    pub t_checkpoints: Vec<f64>,
    /// Force scenario only: run the hybrid density-matrix filter on
    /// trial 0 and report its worst disagreement with the Kalman-Bucy
    /// estimate after the burn-in.
    pub cross_check_hybrid: bool,
    /// Abort threshold on top-Fock-level population.
    pub leakage_ceiling: f64,
    /// Abort threshold on classical-grid edge mass.
    pub boundary_ceiling: f64,
    /// Steps between expensive state-validity checks.
    pub check_interval: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            dim: 40,
            dt: None,
            t_final: None,
            grid: 64,
            halfwidth_sigmas: 5.0,
            thin_stride: 10,
            t_checkpoints: Vec::new(),
            cross_check_hybrid: false,
            leakage_ceiling: 1e-4,
            boundary_ceiling: 1e-3,
            check_interval: 25,
        }
    }
}

/// Complete description of one run; the unit the front-end deserializes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub trials: TrialConfig,
    #[serde(default)]
    pub physical: PhysicalConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
}

impl ScenarioConfig {
    /// Minimal config for a scenario: every other field at its default.
    pub fn new(scenario: ScenarioKind) -> Self {
        ScenarioConfig {
            scenario,
            trials: TrialConfig::default(),
            physical: PhysicalConfig::default(),
            numerics: NumericsConfig::default(),
        }
    }

    /// Validate all fields and fill in derived quantities.
    pub fn resolve(&self) -> Result<Resolved> {
        let t = &self.trials;
        let p = &self.physical;
        let n = &self.numerics;

        if t.n_trials == 0 {
            return Err(Error::validation("n_trials must be at least 1".to_string()));
        }
        if n.dim < 2 {
            return Err(Error::validation(format!(
                "dim must be at least 2, got {}",
                n.dim
            )));
        }
        if n.grid < 4 {
            return Err(Error::validation(format!(
                "grid must be at least 4, got {}",
                n.grid
            )));
        }
        if n.thin_stride == 0 {
            return Err(Error::validation(
                "thin_stride must be at least 1".to_string(),
            ));
        }
        if n.halfwidth_sigmas <= 0.0 {
            return Err(Error::validation(format!(
                "halfwidth_sigmas must be positive, got {}",
                n.halfwidth_sigmas
            )));
        }
        if n.leakage_ceiling <= 0.0 || n.boundary_ceiling <= 0.0 {
            return Err(Error::validation(
                "leakage_ceiling and boundary_ceiling must be positive".to_string(),
            ));
        }
        if !(p.eta > 0.0 && p.eta <= 1.0) {
            return Err(Error::validation(format!(
                "eta must lie in (0,1], got {}",
                p.eta
            )));
        }
        if p.mass <= 0.0 || p.omega <= 0.0 || p.hbar <= 0.0 {
            return Err(Error::validation(
                "mass, omega, and hbar must be positive".to_string(),
            ));
        }
        if p.n_occ < 0.0 {
            return Err(Error::validation(format!(
                "n_occ must be nonnegative, got {}",
                p.n_occ
            )));
        }
        if let Some(theta) = p.theta {
            if !theta.is_finite() {
                return Err(Error::validation(format!(
                    "theta must be finite, got {theta}"
                )));
            }
        }

        let oscillator_pair = matches!(
            self.scenario,
            ScenarioKind::QuadratureEquiv | ScenarioKind::EnergyQuant
        );
        if oscillator_pair && p.gamma_decay <= 0.0 {
            return Err(Error::validation(format!(
                "gamma_decay must be positive, got {}",
                p.gamma_decay
            )));
        }
        if self.scenario == ScenarioKind::ForceDetect {
            if p.a_drift >= 0.0 {
                return Err(Error::validation(format!(
                    "a_drift must be negative so the force process is stationary, got {}",
                    p.a_drift
                )));
            }
            if p.b_diff <= 0.0 {
                return Err(Error::validation(format!(
                    "b_diff must be positive, got {}",
                    p.b_diff
                )));
            }
        }

        let (q_noise, s_noise, r_noise) = resolve_noise(p.q_noise, p.s_noise, p.r_noise)?;
        if self.scenario == ScenarioKind::ForceDetect && s_noise != 0.0 {
            // The position-readout pair models quantum-limited homodyne
            // detection, where the backaction diffusion is tied to the
            // full observation noise.
            return Err(Error::validation(format!(
                "the force scenario assumes quantum-limited readout; s_noise must be 0, got {s_noise}"
            )));
        }

        let base_time = match self.scenario {
            ScenarioKind::ForceDetect => 2.0 * std::f64::consts::PI / p.omega,
            _ => 1.0 / p.gamma_decay,
        };
        let dt = n.dt.unwrap_or(1e-3 * base_time);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::validation(format!("dt must be positive, got {dt}")));
        }
        let horizon_default = match self.scenario {
            ScenarioKind::ForceDetect => 10.0 / p.a_drift.abs(),
            _ => 10.0 / p.gamma_decay,
        };
        let t_requested = n.t_final.unwrap_or(horizon_default);
        if !(t_requested > 0.0 && t_requested.is_finite()) {
            return Err(Error::validation(format!(
                "t_final must be positive, got {t_requested}"
            )));
        }
        let steps = (t_requested / dt).round().max(1.0) as usize;
        let t_final = steps as f64 * dt;

        let mut checkpoints = n.t_checkpoints.clone();
        checkpoints.sort_by(|a, b| a.total_cmp(b));
        for &tc in &checkpoints {
            if !(tc > 0.0 && tc <= t_final + 0.5 * dt) {
                return Err(Error::validation(format!(
                    "t_checkpoints entries must lie in (0, t_final], got {tc} with t_final {t_final}"
                )));
            }
        }
        let cp_steps = checkpoint_steps(&checkpoints, dt, steps)?;

        if oscillator_pair {
            // Pre-check the explicit-scheme stability bound the grid filter
            // enforces, so a bad config fails at validation time.
            let sigma = (p.n_occ + 0.5).sqrt();
            let h = 2.0 * n.halfwidth_sigmas * sigma / n.grid as f64;
            let diffusion = p.gamma_decay * (p.n_occ + 0.5) / 2.0;
            let cfl = dt * diffusion * 2.0 / (h * h);
            if cfl > 0.5 {
                return Err(Error::validation(format!(
                    "dt {dt} gives grid stability number {cfl:.3} > 0.5; reduce dt or coarsen the grid"
                )));
            }
        }

        let log_gamma = resolve_threshold(t)?;
        let priors = Priors::new(
            t.prior_null.unwrap_or(0.5),
            1.0 - t.prior_null.unwrap_or(0.5),
        )?;

        Ok(Resolved {
            kind: self.scenario,
            truth: t.truth,
            n_trials: t.n_trials,
            seed: t.seed,
            log_gamma,
            priors,
            store_trajectory: t.store_trajectory,
            gamma_decay: p.gamma_decay,
            n_occ: p.n_occ,
            theta: p.theta,
            mass: p.mass,
            omega: p.omega,
            coupling: p.coupling,
            a_drift: p.a_drift,
            b_diff: p.b_diff,
            q_noise,
            s_noise,
            r_noise,
            eta: p.eta,
            hbar: p.hbar,
            dim: n.dim,
            dt,
            t_final,
            steps,
            grid: n.grid,
            halfwidth_sigmas: n.halfwidth_sigmas,
            thin_stride: n.thin_stride,
            checkpoints,
            checkpoint_steps: cp_steps,
            cross_check_hybrid: n.cross_check_hybrid,
            leakage_ceiling: n.leakage_ceiling,
            boundary_ceiling: n.boundary_ceiling,
            check_interval: n.check_interval.max(1),
        })
    }
}

fn resolve_noise(
    q: Option<f64>,
    s: Option<f64>,
    r: Option<f64>,
) -> Result<(f64, f64, f64)> {
    let (q, s, r) = match (q, s, r) {
        (q, s, None) => {
            let q = q.unwrap_or(1.0);
            let s = s.unwrap_or(0.0);
            (q, s, q + s)
        }
        (None, None, Some(r)) => (r, 0.0, r),
        (Some(q), None, Some(r)) => (q, r - q, r),
        (None, Some(s), Some(r)) => (r - s, s, r),
        (Some(q), Some(s), Some(r)) => {
            if (r - (q + s)).abs() > 1e-9 * r.abs().max(1.0) {
                return Err(Error::validation(format!(
                    "r_noise must equal q_noise + s_noise, got r_noise {r} but q_noise + s_noise = {}",
                    q + s
                )));
            }
            (q, s, r)
        }
    };
    if q <= 0.0 {
        return Err(Error::validation(format!(
            "q_noise must be positive, got {q}"
        )));
    }
    if s < 0.0 {
        return Err(Error::validation(format!(
            "s_noise must be nonnegative, got {s}"
        )));
    }
    Ok((q, s, r))
}

fn resolve_threshold(t: &TrialConfig) -> Result<f64> {
    let has_bayes = t.prior_null.is_some() || t.cost_miss.is_some() || t.cost_false_alarm.is_some();
    if let Some(lg) = t.log_threshold {
        if has_bayes {
            return Err(Error::validation(
                "give either log_threshold or the prior/cost fields, not both".to_string(),
            ));
        }
        if !lg.is_finite() {
            return Err(Error::validation(format!(
                "log_threshold must be finite, got {lg}"
            )));
        }
        return Ok(lg);
    }
    let p0 = t.prior_null.unwrap_or(0.5);
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::validation(format!(
            "prior_null must lie in (0, 1), got {p0}"
        )));
    }
    let cost_miss = t.cost_miss.unwrap_or(1.0);
    let cost_fa = t.cost_false_alarm.unwrap_or(1.0);
    if cost_miss <= 0.0 || cost_fa <= 0.0 {
        return Err(Error::validation(format!(
            "costs must be positive, got cost_miss {cost_miss}, cost_false_alarm {cost_fa}"
        )));
    }
    bayes_log_threshold(cost_miss, cost_fa, &Priors::new(p0, 1.0 - p0)?)
}

/// Map checkpoint times to filter step counts, rejecting collisions.
fn checkpoint_steps(checkpoints: &[f64], dt: f64, steps: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    for &tc in checkpoints {
        let k = (tc / dt).round().max(1.0) as usize;
        if k > steps {
            return Err(Error::validation(format!(
                "checkpoint {tc} rounds past the final step"
            )));
        }
        if out.last() == Some(&k) {
            return Err(Error::validation(format!(
                "t_checkpoints must map to distinct filter steps at dt = {dt}"
            )));
        }
        out.push(k);
    }
    Ok(out)
}

/// Fully validated run description with all defaults applied.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub kind: ScenarioKind,
    pub truth: Hypothesis,
    pub n_trials: u64,
    pub seed: u64,
    pub log_gamma: f64,
    pub priors: Priors,
    pub store_trajectory: bool,
    pub gamma_decay: f64,
    pub n_occ: f64,
    pub theta: Option<f64>,
    pub mass: f64,
    pub omega: f64,
    pub coupling: f64,
    pub a_drift: f64,
    pub b_diff: f64,
    pub q_noise: f64,
    pub s_noise: f64,
    pub r_noise: f64,
    pub eta: f64,
    pub hbar: f64,
    pub dim: usize,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub grid: usize,
    pub halfwidth_sigmas: f64,
    pub thin_stride: usize,
    pub checkpoints: Vec<f64>,
    pub checkpoint_steps: Vec<usize>,
    pub cross_check_hybrid: bool,
    pub leakage_ceiling: f64,
    pub boundary_ceiling: f64,
    pub check_interval: usize,
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: u64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(MeanEstimate {
            mean,
            std_err: (var / n).sqrt(),
            n: xs.len() as u64,
        })
    }
}

/// Empirical rate with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateEstimate {
    pub count: u64,
    pub n: u64,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl RateEstimate {
    pub fn wilson(count: u64, n: u64) -> Self {
        // 97.5th normal percentile; two-sided 95% coverage.
        let z = 1.959963984540054_f64;
        let nf = n as f64;
        let p = count as f64 / nf;
        let z2 = z * z;
        let denom = 1.0 + z2 / nf;
        let center = (p + z2 / (2.0 * nf)) / denom;
        let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
        RateEstimate {
            count,
            n,
            rate: p,
            wilson_low: (center - half).max(0.0),
            wilson_high: (center + half).min(1.0),
        }
    }
}

/// One trial's record-level outcome. A quarantined fault leaves the
/// statistic fields empty and carries the error text instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub log_lambda: Option<f64>,
    pub decision: Option<Hypothesis>,
    /// Running log-likelihood ratio at each configured checkpoint.
    pub checkpoints: Vec<f64>,
    pub fault: Option<String>,
}

/// Numerical health counters accumulated across an ensemble.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Worst top-Fock-level population seen by any trial.
    pub max_leakage: f64,
    /// Eigenvalue clamps applied across all trials.
    pub total_clamp_count: u64,
    /// Worst classical-grid edge mass seen by any trial.
    pub max_boundary_mass: f64,
    pub faults: Vec<FaultEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultEntry {
    pub trial: u64,
    pub message: String,
}

/// How close the two filters of an equivalence run stayed to each other.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceSummary {
    /// Worst per-step estimate gap |mu1 - mu0| across the ensemble.
    pub max_mu_gap: f64,
    pub mean_abs_log_lambda: MeanEstimate,
    pub max_abs_log_lambda: f64,
}

/// Error-probability bounds at one horizon.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChernoffPoint {
    pub t: f64,
    pub s_star: f64,
    pub mu_s: f64,
    pub bound_p10: f64,
    pub bound_p01: f64,
}

/// Thinned single-trial trajectory: per-row time after the step, record
/// increment over the step, pre-step estimates under both hypotheses, and
/// the accumulated log-likelihood ratio.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub stride: usize,
    pub t: Vec<f64>,
    pub dy: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub log_lambda: Vec<f64>,
}

/// Aggregated outcome of one scenario run.
///
/// Per-trial rows and the trajectory sample are skipped by the JSON
/// serialization; the front-end writes them to their own tabular files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub truth: Hypothesis,
    pub log_gamma: f64,
    pub n_trials: u64,
    pub n_faulted: u64,
    #[serde(skip)]
    pub outcomes: Vec<TrialOutcome>,
    /// False-alarm rate; present when the truth is the null.
    pub p10: Option<RateEstimate>,
    /// Miss rate; present when the truth is the alternative.
    pub p01: Option<RateEstimate>,
    /// Martingale diagnostic, mean of Lambda itself; null-truth runs only.
    pub mean_lambda: Option<MeanEstimate>,
    pub mean_log_lambda: Option<MeanEstimate>,
    pub checkpoint_times: Vec<f64>,
    pub checkpoint_mean_log_lambda: Vec<MeanEstimate>,
    pub equivalence: Option<EquivalenceSummary>,
    pub chernoff: Vec<ChernoffPoint>,
    /// Worst relative disagreement between the hybrid filter and the
    /// Kalman-Bucy estimate on trial 0, when the cross-check ran.
    pub hybrid_mu_mismatch: Option<f64>,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub trajectory: Option<TrajectorySample>,
}

/// What one trial hands back to the harness.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub log_lambda: f64,
    pub checkpoints: Vec<f64>,
    pub max_leakage: f64,
    pub clamp_count: u64,
    pub boundary_mass: f64,
    /// Worst per-step |mu1 - mu0|, for equivalence runs.
    pub mu_gap_max: Option<f64>,
    /// Hybrid-vs-Kalman relative estimate mismatch, when cross-checked.
    pub hybrid_mu_mismatch: Option<f64>,
    pub trajectory: Option<TrajectorySample>,
}

impl TrialData {
    pub fn new(log_lambda: f64, checkpoints: Vec<f64>) -> Self {
        TrialData {
            log_lambda,
            checkpoints,
            max_leakage: 0.0,
            clamp_count: 0,
            boundary_mass: 0.0,
            mu_gap_max: None,
            hybrid_mu_mismatch: None,
            trajectory: None,
        }
    }
}

/// Run `runner` over every trial index in parallel and aggregate.
///
/// Trials that return an error are quarantined: their index and message
/// land in the diagnostics and every other trial is unaffected. The
/// aggregation is a fixed-order reduction over the trial index, so the
/// result is identical for any worker count.
pub fn monte_carlo<F>(resolved: &Resolved, runner: F) -> Result<RunResult>
where
    F: Fn(u64) -> Result<TrialData> + Sync,
{
    let raw: Vec<(u64, Result<TrialData>)> = (0..resolved.n_trials)
        .into_par_iter()
        .map(|trial| (trial, runner(trial)))
        .collect();

    let mut outcomes = Vec::with_capacity(raw.len());
    let mut diagnostics = Diagnostics::default();
    let mut ok_log_lambdas = Vec::new();
    let mut ok_checkpoints: Vec<Vec<f64>> = Vec::new();
    let mut mu_gaps = Vec::new();
    let mut hybrid_mismatch = None;
    let mut trajectory = None;
    let mut error_count = 0u64;

    for (trial, res) in raw {
        match res {
            Ok(data) if data.log_lambda.is_finite() => {
                let decision = decide(data.log_lambda, resolved.log_gamma);
                if decision != resolved.truth {
                    error_count += 1;
                }
                diagnostics.max_leakage = diagnostics.max_leakage.max(data.max_leakage);
                diagnostics.total_clamp_count += data.clamp_count;
                diagnostics.max_boundary_mass =
                    diagnostics.max_boundary_mass.max(data.boundary_mass);
                if let Some(gap) = data.mu_gap_max {
                    mu_gaps.push(gap);
                }
                if hybrid_mismatch.is_none() {
                    hybrid_mismatch = data.hybrid_mu_mismatch;
                }
                if trajectory.is_none() {
                    trajectory = data.trajectory;
                }
                ok_log_lambdas.push(data.log_lambda);
                ok_checkpoints.push(data.checkpoints.clone());
                outcomes.push(TrialOutcome {
                    trial,
                    log_lambda: Some(data.log_lambda),
                    decision: Some(decision),
                    checkpoints: data.checkpoints,
                    fault: None,
                });
            }
            Ok(data) => {
                let message = format!(
                    "non-finite log-likelihood ratio {}",
                    data.log_lambda
                );
                diagnostics.faults.push(FaultEntry {
                    trial,
                    message: message.clone(),
                });
                outcomes.push(TrialOutcome {
                    trial,
                    log_lambda: None,
                    decision: None,
                    checkpoints: Vec::new(),
                    fault: Some(message),
                });
            }
            Err(err) => {
                let message = err.to_string();
                diagnostics.faults.push(FaultEntry {
                    trial,
                    message: message.clone(),
                });
                outcomes.push(TrialOutcome {
                    trial,
                    log_lambda: None,
                    decision: None,
                    checkpoints: Vec::new(),
                    fault: Some(message),
                });
            }
        }
    }

    let n_ok = ok_log_lambdas.len() as u64;
    let n_faulted = resolved.n_trials - n_ok;
    let (p10, p01) = match resolved.truth {
        Hypothesis::Null if n_ok > 0 => (Some(RateEstimate::wilson(error_count, n_ok)), None),
        Hypothesis::Alternative if n_ok > 0 => {
            (None, Some(RateEstimate::wilson(error_count, n_ok)))
        }
        _ => (None, None),
    };
    let mean_lambda = if resolved.truth == Hypothesis::Null {
        let lambdas: Vec<f64> = ok_log_lambdas.iter().map(|l| l.exp()).collect();
        MeanEstimate::from_samples(&lambdas)
    } else {
        None
    };
    let mean_log_lambda = MeanEstimate::from_samples(&ok_log_lambdas);

    let checkpoint_mean_log_lambda = (0..resolved.checkpoints.len())
        .filter_map(|j| {
            let col: Vec<f64> = ok_checkpoints.iter().map(|cps| cps[j]).collect();
            MeanEstimate::from_samples(&col)
        })
        .collect();

    let equivalence = if mu_gaps.is_empty() {
        None
    } else {
        let abs: Vec<f64> = ok_log_lambdas.iter().map(|l| l.abs()).collect();
        Some(EquivalenceSummary {
            max_mu_gap: mu_gaps.iter().cloned().fold(0.0, f64::max),
            mean_abs_log_lambda: MeanEstimate::from_samples(&abs)
                .unwrap_or(MeanEstimate {
                    mean: f64::NAN,
                    std_err: f64::NAN,
                    n: 0,
                }),
            max_abs_log_lambda: abs.iter().cloned().fold(0.0, f64::max),
        })
    };

    Ok(RunResult {
        scenario: resolved.kind.id().to_string(),
        truth: resolved.truth,
        log_gamma: resolved.log_gamma,
        n_trials: resolved.n_trials,
        n_faulted,
        outcomes,
        p10,
        p01,
        mean_lambda,
        mean_log_lambda,
        checkpoint_times: resolved.checkpoints.clone(),
        checkpoint_mean_log_lambda,
        equivalence,
        chernoff: Vec::new(),
        hybrid_mu_mismatch: hybrid_mismatch,
        diagnostics,
        trajectory,
    })
}

/// Run the scenario named by the config.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunResult> {
    let resolved = config.resolve()?;
    match resolved.kind {
        ScenarioKind::ForceDetect => force::run(&resolved),
        ScenarioKind::QuadratureEquiv => quadrature::run(&resolved),
        ScenarioKind::EnergyQuant => energy::run(&resolved),
    }
}

/// Stochastic-force detection with a Kalman-Bucy filter pair.
pub fn run_force_detection(config: &ScenarioConfig) -> Result<RunResult> {
    expect_kind(config, ScenarioKind::ForceDetect)?;
    force::run(&config.resolve()?)
}

/// Quadrature measurement against the equivalent classical diffusion.
pub fn run_quadrature_equivalence(config: &ScenarioConfig) -> Result<RunResult> {
    expect_kind(config, ScenarioKind::QuadratureEquiv)?;
    quadrature::run(&config.resolve()?)
}

/// Energy measurement against the continuous-energy classical model.
pub fn run_energy_quantization(config: &ScenarioConfig) -> Result<RunResult> {
    expect_kind(config, ScenarioKind::EnergyQuant)?;
    energy::run(&config.resolve()?)
}

fn expect_kind(config: &ScenarioConfig, expected: ScenarioKind) -> Result<()> {
    if config.scenario != expected {
        return Err(Error::validation(format!(
            "config names scenario {}, but the {} runner was invoked",
            config.scenario.id(),
            expected.id()
        )));
    }
    Ok(())
}

/// Simulate the measurement record trial `trial` of a full run would see
/// under the configured truth, without running any filters.
pub fn simulate_scenario_record(config: &ScenarioConfig, trial: u64) -> Result<MeasurementRecord> {
    let resolved = config.resolve()?;
    match resolved.kind {
        ScenarioKind::ForceDetect => force::truth_record(&resolved, trial),
        ScenarioKind::QuadratureEquiv => quadrature::truth_record(&resolved, trial),
        ScenarioKind::EnergyQuant => energy::truth_record(&resolved, trial),
    }
}

/// Error-exponent problem for the force hypothesis pair over the
/// configured horizon, for threshold studies and s-grid scans.
pub fn force_chernoff_problem(resolved: &Resolved) -> Result<ChernoffProblem> {
    if resolved.kind != ScenarioKind::ForceDetect {
        return Err(Error::validation(format!(
            "the error-exponent scan applies to the force-detect scenario, got {}",
            resolved.kind.id()
        )));
    }
    force::hypothesis_problem(resolved)
}

/// Cap the trial worker pool for this process. Effective once, before
/// the first parallel region; later calls fail. Results never depend on
/// the worker count, only throughput does.
pub fn set_worker_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::validation(
            "worker count must be at least 1".to_string(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::validation(format!("worker pool already initialized: {e}")))
}

/// Angles the per-trial quadrature draw cycles through.
pub const THETA_CHOICES: [f64; 3] = [
    0.0,
    std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_2,
];

/// Fixed angle from the config, or a per-trial draw.
pub(crate) fn pick_theta(resolved: &Resolved, rng: &mut ChaCha12Rng) -> f64 {
    match resolved.theta {
        Some(theta) => theta,
        None => THETA_CHOICES[rng.random_range(0..THETA_CHOICES.len())],
    }
}

/// Simulate a record from the classical pair of damped diffusions:
/// both coordinates relax at gamma/2 and diffuse at gamma (n_occ + 1/2),
/// started from their stationary spread, observed through `h_fn` in
/// noise of variance `r` per unit time.
pub(crate) fn simulate_classical_record(
    gamma: f64,
    n_occ: f64,
    h_fn: impl Fn(f64, f64) -> f64,
    r: f64,
    t_final: f64,
    dt: f64,
    rng: &mut ChaCha12Rng,
) -> Result<MeasurementRecord> {
    let var = n_occ + 0.5;
    let std0 = var.sqrt();
    let x0 = ndarray::arr1(&[
        std0 * normal(rng),
        std0 * normal(rng),
    ]);
    let a = Array2::from_diag(&ndarray::arr1(&[-gamma / 2.0, -gamma / 2.0]));
    let b = Array2::from_diag(&ndarray::arr1(&[gamma * var, gamma * var]));
    let path = simulate_ou_path(&a, &b, &x0, t_final, dt, rng)?;
    let steps = path.nrows() - 1;
    let sd = (r * dt).sqrt();
    let mut increments = Vec::with_capacity(steps);
    for k in 0..steps {
        let h = h_fn(path[[k, 0]], path[[k, 1]]);
        increments.push(h * dt + sd * normal(rng));
    }
    MeasurementRecord::new(0.0, dt, RecordKind::Gaussian, increments)
}

pub(crate) fn normal(rng: &mut ChaCha12Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Record under the configured truth for the oscillator scenarios: the
/// quantum model simulated when the alternative is true, the classical
/// diffusion pair observed through `h_fn` otherwise. Returns the record
/// and the worst truncation leakage of the simulation (zero for the
/// classical side, which has no truncation).
fn oscillator_truth_record(
    r: &Resolved,
    model: &HypothesisModel,
    rho0: &CMat,
    h_fn: impl Fn(f64, f64) -> f64,
    trial: u64,
) -> Result<(MeasurementRecord, f64)> {
    let mut rng = lane_rng(r.seed, trial, Lane::Record);
    match r.truth {
        Hypothesis::Alternative => {
            let opts = FilterOptions {
                check_interval: r.check_interval,
                ..FilterOptions::default()
            };
            let sim = simulate_gaussian_record(
                model,
                rho0,
                r.t_final,
                r.dt,
                &opts,
                r.leakage_ceiling,
                &mut rng,
            )?;
            Ok((sim.record, sim.max_leakage))
        }
        Hypothesis::Null => Ok((
            simulate_classical_record(
                r.gamma_decay,
                r.n_occ,
                h_fn,
                r.r_noise,
                r.t_final,
                r.dt,
                &mut rng,
            )?,
            0.0,
        )),
    }
}

/// Keep every `stride`-th step plus the last one.
pub(crate) fn thin_trajectory(
    record: &MeasurementRecord,
    mu1: &[f64],
    mu0: &[f64],
    log_lambda_path: &[f64],
    stride: usize,
) -> TrajectorySample {
    let n = record.len();
    let stride = stride.max(1);
    let mut out = TrajectorySample {
        stride,
        ..TrajectorySample::default()
    };
    for k in 0..n {
        if (k + 1) % stride == 0 || k + 1 == n {
            out.t.push(record.time_after(k));
            out.dy.push(record.increments[k]);
            out.mu1.push(mu1[k]);
            out.mu0.push(mu0[k]);
            out.log_lambda.push(log_lambda_path[k]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(kind: ScenarioKind) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(kind);
        cfg.trials.n_trials = 4;
        cfg.trials.seed = 9;
        cfg.numerics.dim = 8;
        cfg.numerics.grid = 16;
        cfg.numerics.dt = Some(5e-3);
        cfg.numerics.t_final = Some(0.5);
        cfg
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let cfg = ScenarioConfig::new(ScenarioKind::ForceDetect);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.n_trials, 1000);
        assert_eq!(r.dim, 40);
        assert_eq!(r.grid, 64);
        assert_eq!(r.log_gamma, 0.0);
        assert_eq!(r.q_noise, 1.0);
        assert_eq!(r.s_noise, 0.0);
        assert_eq!(r.r_noise, 1.0);
        // Horizon snaps to a whole number of steps.
        assert_eq!(r.steps as f64 * r.dt, r.t_final);
    }

    #[test]
    fn eta_out_of_range_is_rejected_with_the_documented_message() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::QuadratureEquiv);
        cfg.physical.eta = 1.5;
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("eta must lie in (0,1]"), "got: {err}");
    }

    #[test]
    fn inconsistent_noise_split_is_rejected() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::QuadratureEquiv);
        cfg.physical.q_noise = Some(1.0);
        cfg.physical.s_noise = Some(0.5);
        cfg.physical.r_noise = Some(2.0);
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(
            err.contains("r_noise must equal q_noise + s_noise"),
            "got: {err}"
        );
    }

    #[test]
    fn noise_split_fills_in_missing_members() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::QuadratureEquiv);
        cfg.physical.r_noise = Some(2.0);
        cfg.physical.s_noise = Some(0.5);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.q_noise, 1.5);
        assert_eq!(r.r_noise, 2.0);
    }

    #[test]
    fn threshold_and_bayes_fields_are_mutually_exclusive() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::ForceDetect);
        cfg.trials.log_threshold = Some(0.3);
        cfg.trials.prior_null = Some(0.6);
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn bayes_fields_set_the_threshold() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::ForceDetect);
        cfg.trials.prior_null = Some(0.75);
        // Threshold log(b p0 / (a p1)) = log(3) for unit costs.
        let r = cfg.resolve().unwrap();
        assert!((r.log_gamma - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "scenario = \"force-detect\"\n[trials]\nn_trails = 10\n";
        let err = toml::from_str::<ScenarioConfig>(text).unwrap_err();
        assert!(err.to_string().contains("n_trails"), "got: {err}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = base(ScenarioKind::EnergyQuant);
        cfg.physical.theta = Some(0.3);
        cfg.numerics.t_checkpoints = vec![0.25, 0.5];
        let text = toml::to_string(&cfg).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.scenario, cfg.scenario);
        assert_eq!(back.numerics.t_checkpoints, cfg.numerics.t_checkpoints);
        assert_eq!(back.physical.theta, cfg.physical.theta);
    }

    #[test]
    fn grid_stability_violations_fail_at_validation() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::QuadratureEquiv);
        cfg.numerics.grid = 256;
        cfg.numerics.dt = Some(5e-2);
        let err = cfg.resolve().unwrap_err().to_string();
        assert!(err.contains("stability"), "got: {err}");
    }

    #[test]
    fn single_trial_aggregates_degenerate() {
        let mut cfg = base(ScenarioKind::ForceDetect);
        cfg.trials.n_trials = 1;
        let resolved = cfg.resolve().unwrap();
        let result = monte_carlo(&resolved, |_| Ok(TrialData::new(0.4, vec![]))).unwrap();
        assert_eq!(result.n_trials, 1);
        assert_eq!(result.outcomes.len(), 1);
        let p01 = result.p01.unwrap();
        assert_eq!(p01.n, 1);
        assert!(p01.wilson_low >= 0.0 && p01.wilson_high <= 1.0);
        let m = result.mean_log_lambda.unwrap();
        assert_eq!(m.mean, 0.4);
        assert_eq!(m.std_err, 0.0);
    }

    #[test]
    fn faulted_trials_are_quarantined() {
        let mut cfg = base(ScenarioKind::ForceDetect);
        cfg.trials.n_trials = 6;
        let resolved = cfg.resolve().unwrap();
        let runner = |trial: u64| {
            if trial == 2 {
                Err(Error::NumericalFault("synthetic fault".to_string()))
            } else {
                Ok(TrialData::new(trial as f64, vec![]))
            }
        };
        let result = monte_carlo(&resolved, runner).unwrap();
        assert_eq!(result.n_faulted, 1);
        assert_eq!(result.diagnostics.faults.len(), 1);
        assert_eq!(result.diagnostics.faults[0].trial, 2);
        // Healthy trials keep their values and indices.
        let vals: Vec<f64> = result
            .outcomes
            .iter()
            .filter_map(|o| o.log_lambda)
            .collect();
        assert_eq!(vals, vec![0.0, 1.0, 3.0, 4.0, 5.0]);
        assert_eq!(result.mean_log_lambda.unwrap().n, 5);
    }

    #[test]
    fn non_finite_ratios_are_quarantined_too() {
        let mut cfg = base(ScenarioKind::ForceDetect);
        cfg.trials.n_trials = 2;
        let resolved = cfg.resolve().unwrap();
        let runner = |trial: u64| {
            Ok(TrialData::new(
                if trial == 0 { f64::INFINITY } else { 0.1 },
                vec![],
            ))
        };
        let result = monte_carlo(&resolved, runner).unwrap();
        assert_eq!(result.n_faulted, 1);
        assert!(result.outcomes[0].fault.is_some());
    }

    #[test]
    fn wilson_interval_contains_the_point_rate() {
        for (count, n) in [(0u64, 10u64), (1, 10), (5, 10), (10, 10), (3, 1000)] {
            let r = RateEstimate::wilson(count, n);
            assert!(r.wilson_low <= r.rate + 1e-12);
            assert!(r.wilson_high >= r.rate - 1e-12);
            assert!(r.wilson_low >= 0.0 && r.wilson_high <= 1.0);
        }
        // Spot value: 0 of 10 gives an upper limit near 0.278.
        let r = RateEstimate::wilson(0, 10);
        assert!((r.wilson_high - 0.27753).abs() < 5e-4);
        assert_eq!(r.wilson_low, 0.0);
    }

    #[test]
    fn checkpoints_map_to_distinct_steps() {
        let mut cfg = base(ScenarioKind::ForceDetect);
        cfg.numerics.t_checkpoints = vec![0.25, 0.5];
        let r = cfg.resolve().unwrap();
        assert_eq!(r.checkpoint_steps, vec![50, 100]);
        cfg.numerics.t_checkpoints = vec![0.251, 0.2502];
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn run_result_json_omits_per_trial_rows() {
        let mut cfg = base(ScenarioKind::ForceDetect);
        cfg.trials.n_trials = 2;
        let resolved = cfg.resolve().unwrap();
        let result = monte_carlo(&resolved, |_| Ok(TrialData::new(0.2, vec![]))).unwrap();
        let text = serde_json::to_string(&result).unwrap();
        assert!(!text.contains("outcomes"));
        let back: RunResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back.n_trials, 2);
        assert!(back.outcomes.is_empty());
    }
}
