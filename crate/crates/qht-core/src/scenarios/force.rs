//! Stochastic-force detection: a position-monitored oscillator whose
//! momentum may be driven by a hidden stationary signal.
//!
//! Both hypotheses are linear-Gaussian in phase space, so each trial runs
//! a Kalman-Bucy filter per hypothesis over a record simulated from the
//! configured truth and accumulates the diffusive log-likelihood ratio
//! from the two position estimates. The conditional covariances are
//! record-independent, so their Riccati paths are tabulated once per run.
//! Exponential error bounds at the decision threshold are evaluated at
//! every checkpoint horizon, and trial 0 can optionally cross-check the
//! Kalman estimate against the full hybrid density-matrix filter.

use ndarray::{arr1, arr2, Array1, Array2};

use crate::filters::{run_hybrid_filter, HybridModel, HybridState};
use crate::gaussian_models::{
    build_force_models, chernoff_bounds, run_kalman_filter, tabulate_riccati, ChernoffProblem,
    ForceModelParams, LinearGaussianModel, RiccatiTable,
};
use crate::likelihood::{gaussian_llr_increment, Hypothesis};
use crate::operators::thermal_state;
use crate::rng::{lane_rng, Lane};
use crate::trajectories::{simulate_linear_record, MeasurementRecord};
use crate::Result;

use super::{monte_carlo, thin_trajectory, ChernoffPoint, Resolved, RunResult, TrialData};

struct ForcePair {
    model0: LinearGaussianModel,
    model1: LinearGaussianModel,
    sigma0_init: Array2<f64>,
    sigma1_init: Array2<f64>,
    /// Stationary variance of the force signal.
    x_var: f64,
}

impl ForcePair {
    fn new(r: &Resolved) -> Result<Self> {
        let params = ForceModelParams {
            mass: r.mass,
            omega: r.omega,
            hbar: r.hbar,
            r_noise: r.r_noise,
            coupling: arr1(&[r.coupling]),
            a_drift: arr2(&[[r.a_drift]]),
            b_diff: arr2(&[[r.b_diff]]),
        };
        let (model0, model1) = build_force_models(&params)?;
        let x_var = r.b_diff / (2.0 * r.a_drift.abs());
        // Thermal-state phase-space spread; the filter prior and the
        // truth simulation share it.
        let vq = r.hbar / (r.mass * r.omega) * (r.n_occ + 0.5);
        let vp = r.hbar * r.mass * r.omega * (r.n_occ + 0.5);
        let sigma0_init = Array2::from_diag(&arr1(&[vq, vp]));
        let sigma1_init = Array2::from_diag(&arr1(&[vq, vp, x_var]));
        Ok(ForcePair {
            model0,
            model1,
            sigma0_init,
            sigma1_init,
            x_var,
        })
    }

    /// Truth model and prior covariance for record simulation.
    fn truth(&self, truth: Hypothesis) -> (&LinearGaussianModel, &Array2<f64>) {
        match truth {
            Hypothesis::Null => (&self.model0, &self.sigma0_init),
            Hypothesis::Alternative => (&self.model1, &self.sigma1_init),
        }
    }
}

struct ForceSetup {
    pair: ForcePair,
    table0: RiccatiTable,
    table1: RiccatiTable,
}

impl ForceSetup {
    fn new(r: &Resolved) -> Result<Self> {
        let pair = ForcePair::new(r)?;
        let table0 = tabulate_riccati(&pair.model0, &pair.sigma0_init, r.steps, r.dt, 50)?;
        let table1 = tabulate_riccati(&pair.model1, &pair.sigma1_init, r.steps, r.dt, 50)?;
        Ok(ForceSetup {
            pair,
            table0,
            table1,
        })
    }
}

/// One record from the configured truth model, drawn on the trial's
/// record stream.
pub(super) fn truth_record(r: &Resolved, trial: u64) -> Result<MeasurementRecord> {
    let pair = ForcePair::new(r)?;
    Ok(simulate_truth(r, &pair, trial)?.record)
}

/// Hypothesis pair packaged for error-exponent evaluation over the full
/// configured horizon.
pub(super) fn hypothesis_problem(r: &Resolved) -> Result<ChernoffProblem> {
    let pair = ForcePair::new(r)?;
    Ok(ChernoffProblem {
        model0: pair.model0,
        model1: pair.model1,
        sigma0_init: pair.sigma0_init,
        sigma1_init: pair.sigma1_init,
        t_final: r.t_final,
        dt: r.dt,
    })
}

fn simulate_truth(
    r: &Resolved,
    pair: &ForcePair,
    trial: u64,
) -> Result<crate::trajectories::LinearRecord> {
    let mut rng = lane_rng(r.seed, trial, Lane::Record);
    let (model_t, sigma_t) = pair.truth(r.truth);
    let mean0 = Array1::zeros(model_t.dim());
    simulate_linear_record(
        &model_t.j,
        &model_t.s,
        &model_t.k_row,
        r.r_noise,
        &mean0,
        sigma_t,
        r.t_final,
        r.dt,
        &mut rng,
    )
}

pub(super) fn run(resolved: &Resolved) -> Result<RunResult> {
    let setup = ForceSetup::new(resolved)?;

    let mut result = monte_carlo(resolved, |trial| run_trial(resolved, &setup, trial))?;

    // Bound horizons: every checkpoint plus the full run, deduplicated.
    let mut times = resolved.checkpoints.clone();
    if times
        .last()
        .is_none_or(|&t| (t - resolved.t_final).abs() > 0.5 * resolved.dt)
    {
        times.push(resolved.t_final);
    }
    for t in times {
        let problem = ChernoffProblem {
            model0: setup.pair.model0.clone(),
            model1: setup.pair.model1.clone(),
            sigma0_init: setup.pair.sigma0_init.clone(),
            sigma1_init: setup.pair.sigma1_init.clone(),
            t_final: t,
            dt: resolved.dt,
        };
        let bound = chernoff_bounds(&problem, resolved.log_gamma)?;
        result.chernoff.push(ChernoffPoint {
            t,
            s_star: bound.s_star,
            mu_s: bound.mu_s,
            bound_p10: bound.bound_p10,
            bound_p01: bound.bound_p01,
        });
    }
    Ok(result)
}

fn run_trial(r: &Resolved, setup: &ForceSetup, trial: u64) -> Result<TrialData> {
    let lin = simulate_truth(r, &setup.pair, trial)?;

    let k1 = run_kalman_filter(
        &setup.pair.model1,
        &setup.table1,
        &Array1::zeros(setup.pair.model1.dim()),
        &lin.record,
    )?;
    let k0 = run_kalman_filter(
        &setup.pair.model0,
        &setup.table0,
        &Array1::zeros(setup.pair.model0.dim()),
        &lin.record,
    )?;

    let want_trajectory = r.store_trajectory && trial == 0;
    let steps = lin.record.len();
    let mut acc = 0.0;
    let mut cp_vals = Vec::with_capacity(r.checkpoint_steps.len());
    let mut cp_iter = r.checkpoint_steps.iter().peekable();
    let mut g_path = Vec::with_capacity(if want_trajectory { steps } else { 0 });
    for k in 0..steps {
        acc += gaussian_llr_increment(
            lin.record.increments[k],
            k1.mus[k],
            k0.mus[k],
            r.dt,
            r.r_noise,
        )?;
        if want_trajectory {
            g_path.push(acc);
        }
        if cp_iter.peek() == Some(&&(k + 1)) {
            cp_vals.push(acc);
            cp_iter.next();
        }
    }

    let mut data = TrialData::new(acc, cp_vals);
    if want_trajectory {
        data.trajectory = Some(thin_trajectory(
            &lin.record,
            &k1.mus,
            &k0.mus,
            &g_path,
            r.thin_stride,
        ));
    }
    if r.cross_check_hybrid && trial == 0 {
        let (mismatch, clamps) = hybrid_mismatch(r, setup, &lin.record, &k1.mus)?;
        data.hybrid_mu_mismatch = Some(mismatch);
        data.clamp_count = clamps;
    }
    Ok(data)
}

/// Run the hybrid density-matrix filter under the alternative hypothesis
/// on the same record and report its worst disagreement with the
/// Kalman-Bucy position estimate, relative to the estimate's scale, after
/// three force correlation times.
fn hybrid_mismatch(
    r: &Resolved,
    setup: &ForceSetup,
    record: &MeasurementRecord,
    kalman_mus: &[f64],
) -> Result<(f64, u64)> {
    let model = HybridModel::new(
        r.dim, r.mass, r.omega, r.hbar, r.coupling, r.r_noise, r.a_drift, r.b_diff,
    )?;
    let rho0 = thermal_state(r.dim, r.n_occ)?;
    let half = r.halfwidth_sigmas * setup.pair.x_var.sqrt();
    let initial = HybridState::product_prior(r.grid, half, setup.pair.x_var, &rho0)?;
    let traj = run_hybrid_filter(&model, initial, record, r.boundary_ceiling, r.check_interval)?;

    let burn = ((3.0 / (r.a_drift.abs() * r.dt)).ceil() as usize).min(kalman_mus.len() - 1);
    let scale = kalman_mus[burn..]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let gap = traj.mus[burn..]
        .iter()
        .zip(&kalman_mus[burn..])
        .fold(0.0f64, |m, (h, k)| m.max((h - k).abs()));
    Ok((gap / scale, traj.clamp_count as u64))
}

#[cfg(test)]
mod tests {
    use super::super::{ScenarioConfig, ScenarioKind};
    use super::*;

    fn config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(ScenarioKind::ForceDetect);
        cfg.trials.seed = 31;
        cfg.numerics.dt = Some(1e-2);
        cfg.numerics.t_final = Some(6.0);
        cfg
    }

    #[test]
    fn zero_coupling_keeps_the_ratio_at_zero() {
        // With no force-to-oscillator coupling the hypothesis pair is the
        // same process, so the ratio is pure roundoff.
        let mut cfg = config();
        cfg.physical.coupling = 0.0;
        cfg.trials.n_trials = 10;
        let result = run(&cfg.resolve().unwrap()).unwrap();
        assert_eq!(result.n_faulted, 0);
        for o in &result.outcomes {
            assert!(o.log_lambda.unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn strong_coupling_grows_the_ratio_under_the_alternative() {
        let mut cfg = config();
        cfg.physical.coupling = 2.5;
        cfg.trials.n_trials = 24;
        cfg.numerics.t_checkpoints = vec![2.0, 4.0, 6.0];
        let result = run(&cfg.resolve().unwrap()).unwrap();
        assert_eq!(result.n_faulted, 0);
        let m = result.mean_log_lambda.unwrap();
        assert!(m.mean > 0.0, "mean log ratio {} not positive", m.mean);
        let cps = &result.checkpoint_mean_log_lambda;
        assert_eq!(cps.len(), 3);
        for w in cps.windows(2) {
            let slack = 2.0 * (w[0].std_err + w[1].std_err);
            assert!(
                w[1].mean > w[0].mean - slack,
                "mean ratio fell from {} to {}",
                w[0].mean,
                w[1].mean
            );
        }
        // Evidence accumulates, so the miss rate cannot be large here.
        assert!(result.p01.unwrap().rate < 0.5);
    }

    #[test]
    fn false_alarm_rate_respects_the_exponential_bound() {
        let mut cfg = config();
        cfg.physical.coupling = 2.5;
        cfg.trials.n_trials = 100;
        cfg.trials.truth = Hypothesis::Null;
        let result = run(&cfg.resolve().unwrap()).unwrap();
        let p10 = result.p10.unwrap();
        let bound = result.chernoff.last().unwrap();
        assert!(bound.bound_p10 <= 1.0 && bound.bound_p10 > 0.0);
        assert!(
            p10.wilson_low <= bound.bound_p10,
            "empirical false-alarm rate {} (low {}) exceeds bound {}",
            p10.rate,
            p10.wilson_low,
            bound.bound_p10
        );
        // Null truth also carries the martingale diagnostic.
        let martingale = result.mean_lambda.unwrap();
        assert!(
            (martingale.mean - 1.0).abs() < 4.0 * martingale.std_err.max(0.05),
            "mean Lambda {} +- {}",
            martingale.mean,
            martingale.std_err
        );
    }

    #[test]
    fn hybrid_filter_agrees_with_the_kalman_estimate() {
        let mut cfg = config();
        cfg.trials.n_trials = 1;
        cfg.physical.coupling = 0.8;
        cfg.numerics.dim = 10;
        cfg.numerics.grid = 32;
        cfg.numerics.dt = Some(2e-3);
        cfg.numerics.t_final = Some(4.0);
        cfg.numerics.cross_check_hybrid = true;
        let result = run(&cfg.resolve().unwrap()).unwrap();
        assert_eq!(result.n_faulted, 0, "faults: {:?}", result.diagnostics.faults);
        let mismatch = result.hybrid_mu_mismatch.unwrap();
        assert!(
            mismatch < 0.05,
            "hybrid-vs-Kalman relative mismatch {mismatch}"
        );
    }

    #[test]
    fn trajectory_sample_is_thinned_and_aligned() {
        let mut cfg = config();
        cfg.trials.n_trials = 2;
        cfg.trials.store_trajectory = true;
        cfg.numerics.thin_stride = 25;
        let result = run(&cfg.resolve().unwrap()).unwrap();
        let traj = result.trajectory.unwrap();
        // 600 steps at stride 25 keep each multiple of 25.
        assert_eq!(traj.t.len(), 24);
        assert!((traj.t[0] - 0.25).abs() < 1e-12);
        let last = result.outcomes[0].log_lambda.unwrap();
        assert_eq!(*traj.log_lambda.last().unwrap(), last);
    }

    #[test]
    fn reruns_reproduce_bitwise() {
        let mut cfg = config();
        cfg.physical.coupling = 1.5;
        cfg.trials.n_trials = 6;
        let a = run(&cfg.resolve().unwrap()).unwrap();
        let b = run(&cfg.resolve().unwrap()).unwrap();
        for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
            assert_eq!(
                x.log_lambda.unwrap().to_bits(),
                y.log_lambda.unwrap().to_bits()
            );
        }
    }
}
