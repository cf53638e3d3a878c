//! Filter for counting (photodetection-type) measurement records.
//!
//! The normalized state advances by a jump/no-jump rule: a registered
//! event applies c rho c^dag and renormalizes; otherwise the generator
//! drift, the unobserved-emission feed (1 - eta) c rho c^dag, and the
//! no-jump damping -{c^dag c, rho}/2 apply. The log-trace advances by
//! dy ln(mu/alpha) - dt (mu - alpha) with mu = eta tr(c^dag c rho).
//! The reference rate alpha shifts both hypotheses' log-traces by the
//! same record-dependent amount, so likelihood ratios are independent of
//! it; the normalized state update is written in a form with no alpha at
//! all, which keeps that cancellation exact in floating point.

use crate::error::Error;
use crate::linalg::{cr, dagger, matmul, trace_of_product, CMat};
use crate::operators::leakage;
use crate::trajectories::MeasurementRecord;
use crate::Result;

use super::{
    AssumptiveState, FilterOptions, FilterTrajectory, HypothesisModel, MeasurementKind, Scheme,
    StepInfo,
};

/// Event-rate estimate mu = eta tr(c^dag c rho).
pub fn poisson_estimate(model: &HypothesisModel, state: &AssumptiveState) -> f64 {
    model.eta * trace_of_product(&model.cdc, &state.rho).re
}

/// No-jump deterministic increment: generator drift, unobserved-emission
/// feed, and no-jump damping.
fn no_jump_rhs(model: &HypothesisModel, rho: &CMat) -> CMat {
    let c_rho = matmul(&model.c, rho);
    let c_rho_cd = matmul(&c_rho, &dagger(&model.c));
    let damping = matmul(&model.cdc, rho) + matmul(rho, &model.cdc);
    model.lindblad.apply(rho) + c_rho_cd * cr(1.0 - model.eta) - damping * cr(0.5)
}

/// One counting filter step with explicit options.
pub fn poisson_filter_step_with(
    model: &HypothesisModel,
    state: &AssumptiveState,
    dy: f64,
    dt: f64,
    opts: &FilterOptions,
    spectral_check: bool,
) -> Result<(AssumptiveState, StepInfo)> {
    debug_assert_eq!(model.kind, MeasurementKind::Poisson);
    if dt <= 0.0 {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    if dy != 0.0 && dy != 1.0 {
        return Err(Error::validation(format!(
            "counting increments must be 0 or 1, got {dy}"
        )));
    }
    // A dead filter (impossible event seen earlier) stays frozen so the
    // rest of the ensemble can proceed.
    if state.is_dead() {
        return Ok((
            state.clone(),
            StepInfo {
                mu: 0.0,
                log_trace_increment: 0.0,
                clamped: false,
                leakage: leakage(&state.rho),
            },
        ));
    }

    let nu = trace_of_product(&model.cdc, &state.rho).re;
    let mu = model.eta * nu;

    if dy > 0.5 {
        // Jump: the event likelihood is proportional to mu.
        if mu <= 0.0 {
            return Ok((
                AssumptiveState {
                    rho: state.rho.clone(),
                    log_trace: f64::NEG_INFINITY,
                },
                StepInfo {
                    mu,
                    log_trace_increment: f64::NEG_INFINITY,
                    clamped: false,
                    leakage: leakage(&state.rho),
                },
            ));
        }
        let jumped = matmul(&matmul(&model.c, &state.rho), &dagger(&model.c)) / cr(nu);
        let (rho_new, clamped) = super::gaussian::finalize_step(jumped, opts, spectral_check)?;
        let increment = (mu / model.alpha).ln() - dt * (mu - model.alpha);
        let leak = leakage(&rho_new);
        return Ok((
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
        ));
    }

    // No jump.
    let rho_tilde = match opts.scheme {
        Scheme::Euler => &state.rho + &(no_jump_rhs(model, &state.rho) * cr(dt)),
        Scheme::Strang => {
            let half = &state.rho + &(model.lindblad.apply(&state.rho) * cr(0.5 * dt));
            let meas_only = no_jump_rhs(model, &half) - model.lindblad.apply(&half);
            let mid = &half + &(meas_only * cr(dt));
            &mid + &(model.lindblad.apply(&mid) * cr(0.5 * dt))
        }
    };
    let (rho_new, clamped) = super::gaussian::finalize_step(rho_tilde, opts, spectral_check)?;
    let increment = -dt * (mu - model.alpha);
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

/// One counting filter step with default options and the positivity
/// check run every call.
pub fn poisson_filter_step(
    model: &HypothesisModel,
    state: &AssumptiveState,
    dy: f64,
    dt: f64,
) -> Result<(AssumptiveState, StepInfo)> {
    poisson_filter_step_with(model, state, dy, dt, &FilterOptions::default(), true)
}

/// Drive the counting filter across a full record.
pub fn run_poisson_filter(
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
        let (next, info) = poisson_filter_step_with(model, &state, dy, record.dt, opts, check)?;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eye, frob_norm};
    use crate::operators::{annihilation, fock_state, thermal_state, Lindblad};
    use approx::assert_abs_diff_eq;

    fn counting_model(eta: f64, alpha: f64) -> HypothesisModel {
        let lind = Lindblad::trivial(3).unwrap();
        HypothesisModel::poisson("count", lind, annihilation(3).unwrap(), eta, alpha).unwrap()
    }

    #[test]
    fn single_photon_jump() {
        let model = counting_model(1.0, 1.0);
        let state = AssumptiveState::new(fock_state(3, 1).unwrap()).unwrap();
        assert_abs_diff_eq!(poisson_estimate(&model, &state), 1.0, epsilon = 1e-14);
        let (next, info) = poisson_filter_step(&model, &state, 1.0, 1e-3).unwrap();
        let ground = fock_state(3, 0).unwrap();
        assert_abs_diff_eq!(
            frob_norm(&(next.rho.clone() - ground)),
            0.0,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(info.mu, 1.0, epsilon = 1e-14);
        // ln(1/1) - dt (1 - 1) = 0 at matched alpha.
        assert_abs_diff_eq!(next.log_trace, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_rate_no_jump() {
        // c^dag c proportional to the identity: state invariant, log-trace
        // drains at the rate difference.
        let lam = 0.7f64;
        let lind = Lindblad::trivial(2).unwrap();
        let c = eye(2) * cr(lam.sqrt());
        let alpha = 0.3;
        let model = HypothesisModel::poisson("flat", lind, c, 1.0, alpha).unwrap();
        let state = AssumptiveState::new(thermal_state(2, 0.4).unwrap()).unwrap();
        let dt = 1e-3;
        let (next, info) = poisson_filter_step(&model, &state, 0.0, dt).unwrap();
        assert_abs_diff_eq!(
            frob_norm(&(next.rho.clone() - state.rho.clone())),
            0.0,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(info.mu, lam, epsilon = 1e-13);
        assert_abs_diff_eq!(next.log_trace, -dt * (lam - alpha), epsilon = 1e-15);
    }

    #[test]
    fn impossible_event_goes_dead_and_stays_dead() {
        let model = counting_model(1.0, 1.0);
        let state = AssumptiveState::new(fock_state(3, 0).unwrap()).unwrap();
        let (next, info) = poisson_filter_step(&model, &state, 1.0, 1e-3).unwrap();
        assert!(next.is_dead());
        assert_eq!(info.log_trace_increment, f64::NEG_INFINITY);
        let (after, info2) = poisson_filter_step(&model, &next, 0.0, 1e-3).unwrap();
        assert!(after.is_dead());
        assert_eq!(info2.log_trace_increment, 0.0);
    }

    #[test]
    fn reference_rate_cancels_in_log_likelihood_ratio() {
        // Two hypotheses over the same record: the log-trace difference
        // is unchanged when alpha doubles.
        let lind = Lindblad::thermal(3, 0.4, 0.2).unwrap();
        let a = annihilation(3).unwrap();
        let m1 = HypothesisModel::poisson("h1", lind.clone(), a.clone(), 0.9, 1.0).unwrap();
        let m0 = HypothesisModel::poisson("h0", lind, a * cr(0.8), 0.9, 1.0).unwrap();
        let record: Vec<f64> = vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let dt = 5e-3;
        let run = |model: &HypothesisModel| -> f64 {
            let mut s = AssumptiveState::new(thermal_state(3, 0.2).unwrap()).unwrap();
            for &dy in &record {
                let (next, _) = poisson_filter_step(model, &s, dy, dt).unwrap();
                s = next;
            }
            s.log_trace
        };
        let llr_a = run(&m1) - run(&m0);
        let llr_b = run(&m1.with_alpha(2.0).unwrap()) - run(&m0.with_alpha(2.0).unwrap());
        assert_abs_diff_eq!(llr_a, llr_b, epsilon = 1e-12);
        // The state path itself is alpha-free: identical to the bit.
        let path = |model: &HypothesisModel| {
            let mut s = AssumptiveState::new(thermal_state(3, 0.2).unwrap()).unwrap();
            for &dy in &record {
                s = poisson_filter_step(model, &s, dy, dt).unwrap().0;
            }
            s.rho
        };
        let pa = path(&m1);
        let pb = path(&m1.with_alpha(2.0).unwrap());
        assert_eq!(
            pa.iter().map(|z| z.re.to_bits()).collect::<Vec<_>>(),
            pb.iter().map(|z| z.re.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_fractional_increments() {
        let model = counting_model(0.5, 1.0);
        let state = AssumptiveState::new(fock_state(3, 1).unwrap()).unwrap();
        assert!(poisson_filter_step(&model, &state, 0.5, 1e-3).is_err());
    }
}
