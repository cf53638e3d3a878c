//! Filter for diffusive (homodyne-type) measurement records.
//!
//! One step applies the generator drift, the record-driven innovation
//! term (dy/2R)(c rho + rho c^dag), and the measurement-backaction
//! dissipator scaled by dt/8Q, then renormalizes. The log-trace advances
//! by the Ito increment dy mu/R - dt mu^2/(2R), where mu is the
//! assumptive estimate of (c + c^dag)/2 before the step; summing these
//! increments reproduces the log of the unnormalized trace.

use crate::error::Error;
use crate::linalg::{
    cr, dagger, hermitian_eigen, hermiticity_defect, hermitize, matmul, trace, trace_of_product,
    CMat,
};
use crate::operators::leakage;
use crate::trajectories::MeasurementRecord;
use crate::Result;

use super::{
    AssumptiveState, FilterOptions, FilterTrajectory, HypothesisModel, MeasurementKind, Scheme,
    StepInfo,
};

/// Assumptive estimate mu = tr[(c + c^dag)/2 rho].
pub fn assumptive_estimate(model: &HypothesisModel, state: &AssumptiveState) -> f64 {
    trace_of_product(&model.c_herm, &state.rho).re
}

/// Measurement-backaction dissipator 2 c f c^dag - c^dag c f - f c^dag c.
pub(crate) fn meas_dissipator(model: &HypothesisModel, f: &CMat) -> CMat {
    let cf = matmul(&model.c, f);
    let cfc = matmul(&cf, &dagger(&model.c));
    cfc * cr(2.0) - matmul(&model.cdc, f) - matmul(f, &model.cdc)
}

/// Innovation bracket c f + f c^dag.
pub(crate) fn innovation_bracket(model: &HypothesisModel, f: &CMat) -> CMat {
    matmul(&model.c, f) + matmul(f, &dagger(&model.c))
}

/// Shared post-update bookkeeping: normalize, enforce Hermiticity, and
/// optionally clamp small negative eigenvalues.
pub(crate) fn finalize_step(
    rho_tilde: CMat,
    opts: &FilterOptions,
    spectral_check: bool,
) -> Result<(CMat, bool)> {
    let tau = trace(&rho_tilde).re;
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::StepSize(format!(
            "state trace became {tau:.3e}; reduce dt"
        )));
    }
    let mut rho = rho_tilde / cr(tau);
    let defect = hermiticity_defect(&rho);
    if defect > opts.herm_tol {
        return Err(Error::NumericalFault(format!(
            "Hermiticity drift {defect:.3e} exceeds tolerance {:.1e}",
            opts.herm_tol
        )));
    }
    hermitize(&mut rho);
    let mut clamped = false;
    if spectral_check {
        let (w, v) = hermitian_eigen(&rho)?;
        let negative_mass: f64 = w.iter().filter(|&&wi| wi < 0.0).map(|wi| -wi).sum();
        // The state is trace-normalized, so this is a mass fraction.
        if negative_mass > opts.clamp_budget {
            return Err(Error::StepSize(format!(
                "clamped eigenvalue mass fraction {negative_mass:.3e} signals filter divergence; reduce dt"
            )));
        }
        if negative_mass > 0.0 {
            let n = rho.nrows();
            let mut rebuilt = CMat::zeros((n, n));
            for (idx, &wi) in w.iter().enumerate() {
                if wi <= 0.0 {
                    continue;
                }
                for i in 0..n {
                    for j in 0..n {
                        rebuilt[[i, j]] += cr(wi) * v[[i, idx]] * v[[j, idx]].conj();
                    }
                }
            }
            let tr = trace(&rebuilt).re;
            rho = rebuilt / cr(tr);
            clamped = true;
        }
    }
    Ok((rho, clamped))
}

/// One diffusive filter step with explicit options. `spectral_check`
/// selects whether the full eigenvalue positivity policy runs this step.
pub fn gaussian_filter_step_with(
    model: &HypothesisModel,
    state: &AssumptiveState,
    dy: f64,
    dt: f64,
    opts: &FilterOptions,
    spectral_check: bool,
) -> Result<(AssumptiveState, StepInfo)> {
    debug_assert_eq!(model.kind, MeasurementKind::Gaussian);
    if dt <= 0.0 {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    let r = model.r_noise;
    let rho = &state.rho;

    let (mu, rho_tilde) = match opts.scheme {
        Scheme::Euler => {
            let mu = trace_of_product(&model.c_herm, rho).re;
            let mut out = rho + &(model.lindblad.apply(rho) * cr(dt));
            out = out + innovation_bracket(model, rho) * cr(dy / (2.0 * r));
            out = out + meas_dissipator(model, rho) * cr(dt / (8.0 * model.q_noise));
            (mu, out)
        }
        Scheme::Strang => {
            let half = rho + &(model.lindblad.apply(rho) * cr(0.5 * dt));
            let mu = trace_of_product(&model.c_herm, &half).re;
            let mut mid = half.clone();
            mid = mid + innovation_bracket(model, &half) * cr(dy / (2.0 * r));
            mid = mid + meas_dissipator(model, &half) * cr(dt / (8.0 * model.q_noise));
            let out = &mid + &(model.lindblad.apply(&mid) * cr(0.5 * dt));
            (mu, out)
        }
    };

    let (rho_new, clamped) = finalize_step(rho_tilde, opts, spectral_check)?;
    let increment = dy * mu / r - dt * mu * mu / (2.0 * r);
    let leak = leakage(&rho_new);
    Ok((
        AssumptiveState {
            rho: rho_new,
            log_trace: state.log_trace + increment,
        },
        StepInfo {
            mu,
            log_trace_increment: increment,
            clamped,
            leakage: leak,
        },
    ))
}

/// One diffusive filter step with default options and the positivity
/// check run every call.
pub fn gaussian_filter_step(
    model: &HypothesisModel,
    state: &AssumptiveState,
    dy: f64,
    dt: f64,
) -> Result<(AssumptiveState, StepInfo)> {
    gaussian_filter_step_with(model, state, dy, dt, &FilterOptions::default(), true)
}

/// Drive the filter across a full record, applying the spectral
/// positivity policy every `opts.check_interval` steps and on the final
/// step.
pub fn run_gaussian_filter(
    model: &HypothesisModel,
    initial: AssumptiveState,
    record: &MeasurementRecord,
    opts: &FilterOptions,
) -> Result<FilterTrajectory> {
    let n = record.increments.len();
    let mut state = initial;
    let mut mus = Vec::with_capacity(n);
    let mut log_trace_path = Vec::with_capacity(n);
    let mut clamp_count = 0usize;
    let mut max_leakage = 0.0f64;
    let interval = opts.check_interval.max(1);
    for (k, &dy) in record.increments.iter().enumerate() {
        let check = (k + 1) % interval == 0 || k + 1 == n;
        let (next, info) = gaussian_filter_step_with(model, &state, dy, record.dt, opts, check)?;
        state = next;
        mus.push(info.mu);
        log_trace_path.push(state.log_trace);
        if info.clamped {
            clamp_count += 1;
        }
        if info.leakage > max_leakage {
            max_leakage = info.leakage;
        }
    }
    Ok(FilterTrajectory {
        mus,
        log_trace_path,
        final_state: state,
        clamp_count,
        max_leakage,
    })
}
