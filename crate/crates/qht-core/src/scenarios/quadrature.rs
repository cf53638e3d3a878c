//! Quadrature-measurement equivalence: a damped thermal oscillator read
//! out along one quadrature versus the classical pair of damped
//! diffusions observed through the same linear combination.
//!
//! The two models predict identical observation statistics, so the
//! per-trial log-likelihood ratio and the gap between the two assumptive
//! estimates measure nothing but discretization error; both shrink as dt
//! and the grid are refined. The measured angle is either fixed by the
//! config or drawn per trial, and each trial propagates both filters over
//! one shared record.

use crate::filters::{
    classical_dmz_step, run_gaussian_filter, AssumptiveState, ClassicalGridState, FilterOptions,
    HypothesisModel, OuParams,
};
use crate::linalg::CMat;
use crate::operators::{quadrature, thermal_state, Lindblad};
use crate::rng::{lane_rng, Lane};
use crate::trajectories::MeasurementRecord;
use crate::Result;

use super::{
    monte_carlo, oscillator_truth_record, pick_theta, thin_trajectory, Resolved, RunResult,
    TrialData,
};

pub(super) fn run(resolved: &Resolved) -> Result<RunResult> {
    let ou = OuParams {
        gamma: resolved.gamma_decay,
        n_occ: resolved.n_occ,
    };
    monte_carlo(resolved, |trial| run_trial(resolved, &ou, trial))
}

/// Sensor and prior for one trial; the measured angle is either fixed by
/// the config or drawn from the trial's parameter stream.
fn pieces(r: &Resolved, trial: u64) -> Result<(f64, HypothesisModel, CMat)> {
    let mut params_rng = lane_rng(r.seed, trial, Lane::Params);
    let theta = pick_theta(r, &mut params_rng);
    let lind = Lindblad::thermal(r.dim, r.gamma_decay, r.n_occ)?;
    let c = quadrature(r.dim, theta)?;
    let model = HypothesisModel::gaussian("quadrature", lind, c, r.q_noise, r.s_noise)?;
    let rho0 = thermal_state(r.dim, r.n_occ)?;
    Ok((theta, model, rho0))
}

pub(super) fn truth_record(r: &Resolved, trial: u64) -> Result<MeasurementRecord> {
    let (theta, model, rho0) = pieces(r, trial)?;
    let h_fn = move |x1: f64, x2: f64| x1 * theta.cos() + x2 * theta.sin();
    Ok(oscillator_truth_record(r, &model, &rho0, h_fn, trial)?.0)
}

fn run_trial(r: &Resolved, ou: &OuParams, trial: u64) -> Result<TrialData> {
    let (theta, model, rho0) = pieces(r, trial)?;
    let h_fn = move |x1: f64, x2: f64| x1 * theta.cos() + x2 * theta.sin();
    let (record, sim_leakage) = oscillator_truth_record(r, &model, &rho0, h_fn, trial)?;
    both_filters(r, ou, &model, rho0, &record, h_fn, sim_leakage, trial)
}

/// Propagate the quantum filter and the classical grid filter over one
/// record and package the comparison. Shared with the energy scenario,
/// which differs only in the sensor and the observation function, and
/// with the self-check suite, which replays records across resolutions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn both_filters(
    r: &Resolved,
    ou: &OuParams,
    model: &HypothesisModel,
    rho0: ndarray::Array2<num_complex::Complex64>,
    record: &MeasurementRecord,
    h_fn: impl Fn(f64, f64) -> f64,
    sim_leakage: f64,
    trial: u64,
) -> Result<TrialData> {
    let opts = FilterOptions {
        check_interval: r.check_interval,
        ..FilterOptions::default()
    };
    let quantum = run_gaussian_filter(model, AssumptiveState::new(rho0)?, record, &opts)?;

    let prior = ClassicalGridState::stationary_prior(r.grid, r.grid, ou, r.halfwidth_sigmas)?;
    let h_grid = prior.sample_observable(&h_fn);
    let mut state = prior;
    let steps = record.len();
    let mut mus0 = Vec::with_capacity(steps);
    let mut log_trace0 = Vec::with_capacity(steps);
    let mut boundary = 0.0f64;
    for &dy in &record.increments {
        let (next, info) =
            classical_dmz_step(&h_grid, ou, &state, dy, record.dt, r.r_noise, r.boundary_ceiling)?;
        mus0.push(info.mu);
        boundary = boundary.max(info.boundary_mass_fraction);
        state = next;
        log_trace0.push(state.log_trace);
    }

    let log_lambda = quantum.log_trace_path[steps - 1] - log_trace0[steps - 1];
    let cp_vals: Vec<f64> = r
        .checkpoint_steps
        .iter()
        .map(|&k| quantum.log_trace_path[k - 1] - log_trace0[k - 1])
        .collect();
    let mu_gap = quantum
        .mus
        .iter()
        .zip(&mus0)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let mut data = TrialData::new(log_lambda, cp_vals);
    data.max_leakage = quantum.max_leakage.max(sim_leakage);
    data.clamp_count = quantum.clamp_count as u64;
    data.boundary_mass = boundary;
    data.mu_gap_max = Some(mu_gap);
    if r.store_trajectory && trial == 0 {
        let g: Vec<f64> = (0..steps)
            .map(|k| quantum.log_trace_path[k] - log_trace0[k])
            .collect();
        data.trajectory = Some(thin_trajectory(
            record,
            &quantum.mus,
            &mus0,
            &g,
            r.thin_stride,
        ));
    }
    Ok(data)
}
