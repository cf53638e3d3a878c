//! Energy-measurement discrimination: the damped thermal oscillator read
//! out through its symmetrized energy versus the classical diffusion pair
//! observed through the matching quadratic form.
//!
//! Unlike the linear-quadrature case, the discrete level structure shows
//! up in the conditional energy estimate, so the two filters genuinely
//! disagree and the expected log-likelihood ratio grows with the horizon
//! in favor of whichever model produced the record.

use crate::filters::{HypothesisModel, OuParams};
use crate::linalg::CMat;
use crate::operators::{energy, thermal_state, Lindblad};
use crate::trajectories::MeasurementRecord;
use crate::Result;

use super::quadrature::both_filters;
use super::{monte_carlo, oscillator_truth_record, Resolved, RunResult, TrialData};

/// Observation through the classical energy of the diffusion pair.
fn h_fn(x1: f64, x2: f64) -> f64 {
    0.5 * (x1 * x1 + x2 * x2)
}

pub(super) fn run(resolved: &Resolved) -> Result<RunResult> {
    let ou = OuParams {
        gamma: resolved.gamma_decay,
        n_occ: resolved.n_occ,
    };
    monte_carlo(resolved, |trial| run_trial(resolved, &ou, trial))
}

fn pieces(r: &Resolved) -> Result<(HypothesisModel, CMat)> {
    let lind = Lindblad::thermal(r.dim, r.gamma_decay, r.n_occ)?;
    let c = energy(r.dim)?;
    let model = HypothesisModel::gaussian("energy", lind, c, r.q_noise, r.s_noise)?;
    let rho0 = thermal_state(r.dim, r.n_occ)?;
    Ok((model, rho0))
}

pub(super) fn truth_record(r: &Resolved, trial: u64) -> Result<MeasurementRecord> {
    let (model, rho0) = pieces(r)?;
    Ok(oscillator_truth_record(r, &model, &rho0, h_fn, trial)?.0)
}

fn run_trial(r: &Resolved, ou: &OuParams, trial: u64) -> Result<TrialData> {
    let (model, rho0) = pieces(r)?;
    let (record, sim_leakage) = oscillator_truth_record(r, &model, &rho0, h_fn, trial)?;
    both_filters(r, ou, &model, rho0, &record, h_fn, sim_leakage, trial)
}
