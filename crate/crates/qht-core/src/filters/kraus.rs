//! Raw discrete single-step measurement maps.
//!
//! These keep the state unnormalized and apply the finite-dt completely
//! positive update exactly as written, with the record-independent
//! reference density factored out. They serve as step-size-study
//! references for the continuous filters: over a shared record, the log
//! of the accumulated product of step traces converges to the continuous
//! log-trace at first order in dt.

use crate::linalg::{cr, CMat};
use crate::Result;

use super::gaussian::{innovation_bracket, meas_dissipator};
use super::HypothesisModel;

/// Discrete diffusive-measurement step: dynamics to first order in dt,
/// then the measurement bracket
/// `f + (dy/2R)(c f + f c^dag) + (dt/8Q)(2 c f c^dag - {c^dag c, f})`.
/// No renormalization; the caller tracks traces.
pub fn kraus_gaussian_step(model: &HypothesisModel, f: &CMat, dy: f64, dt: f64) -> CMat {
    let f1 = f + &(model.lindblad.apply(f) * cr(dt));
    let mut out = f1.clone();
    out = out + innovation_bracket(model, &f1) * cr(dy / (2.0 * model.r_noise));
    out + meas_dissipator(model, &f1) * cr(dt / (8.0 * model.q_noise))
}

/// Discrete counting-measurement step: dynamics to first order in dt,
/// then
/// `f + (dt/2)(2 c f c^dag - {c^dag c, f}) + (dy - alpha dt)((eta/alpha) c f c^dag - f)`.
/// No renormalization.
pub fn kraus_poisson_step(model: &HypothesisModel, f: &CMat, dy: f64, dt: f64) -> Result<CMat> {
    if dy != 0.0 && dy != 1.0 {
        return Err(crate::error::Error::validation(format!(
            "counting increments must be 0 or 1, got {dy}"
        )));
    }
    let f1 = f + &(model.lindblad.apply(f) * cr(dt));
    let c_f_cd = crate::linalg::matmul(
        &crate::linalg::matmul(&model.c, &f1),
        &crate::linalg::dagger(&model.c),
    );
    let damping =
        crate::linalg::matmul(&model.cdc, &f1) + crate::linalg::matmul(&f1, &model.cdc);
    let mut out = &f1 + &((c_f_cd.clone() * cr(2.0) - damping) * cr(0.5 * dt));
    let jump_part = c_f_cd * cr(model.eta / model.alpha) - f1;
    out = out + jump_part * cr(dy - model.alpha * dt);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{AssumptiveState, HypothesisModel};
    use crate::linalg::{frob_norm, trace, trace_of_product};
    use crate::operators::{annihilation, fock_state, thermal_state, Lindblad};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_coupling_reduces_to_dynamics_map() {
        let lind = Lindblad::thermal(3, 0.8, 0.1).unwrap();
        let c = CMat::zeros((3, 3));
        let model = HypothesisModel::gaussian("h", lind.clone(), c, 1.0, 0.0).unwrap();
        let f = thermal_state(3, 0.5).unwrap();
        let dt = 0.01;
        let out = kraus_gaussian_step(&model, &f, 0.0, dt);
        let expect = &f + &(lind.apply(&f) * cr(dt));
        assert_abs_diff_eq!(frob_norm(&(out - expect)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_step_trace_expansion() {
        // tr out = tr f1 (1 + dy mu(f1) / R) exactly, f1 the post-dynamics
        // state: the backaction bracket is trace-free.
        let lind = Lindblad::thermal(4, 0.3, 0.4).unwrap();
        let a = annihilation(4).unwrap();
        let model = HypothesisModel::gaussian("h", lind.clone(), a, 1.5, 0.5).unwrap();
        let f = thermal_state(4, 0.7).unwrap() * cr(2.3);
        let dy = -0.17;
        let dt = 0.003;
        let f1 = &f + &(lind.apply(&f) * cr(dt));
        let mu_f1 = trace_of_product(&model.c_herm, &f1).re / trace(&f1).re;
        let out = kraus_gaussian_step(&model, &f, dy, dt);
        assert_abs_diff_eq!(
            trace(&out).re,
            trace(&f1).re * (1.0 + dy * mu_f1 / model.r_noise),
            epsilon = 1e-13
        );
    }

    #[test]
    fn poisson_no_jump_with_zero_rate_scales_by_reference() {
        // c = 0: the map multiplies the state by (1 + alpha dt).
        let lind = Lindblad::trivial(2).unwrap();
        let c = CMat::zeros((2, 2));
        let alpha = 0.9;
        let model = HypothesisModel::poisson("h", lind, c, 1.0, alpha).unwrap();
        let f = thermal_state(2, 0.2).unwrap();
        let dt = 0.02;
        let out = kraus_poisson_step(&model, &f, 0.0, dt).unwrap();
        let expect = &f * cr(1.0 + alpha * dt);
        assert_abs_diff_eq!(frob_norm(&(out - expect)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn poisson_jump_projects_to_ground() {
        let lind = Lindblad::trivial(2).unwrap();
        let model =
            HypothesisModel::poisson("h", lind, annihilation(2).unwrap(), 1.0, 1.0).unwrap();
        let f = fock_state(2, 1).unwrap();
        let dt = 1e-6;
        let out = kraus_poisson_step(&model, &f, 1.0, dt).unwrap();
        let ground = fock_state(2, 0).unwrap();
        // Up to O(dt) remnants the output is the ground projector scaled
        // by eta/alpha.
        let err = frob_norm(&(out - ground));
        assert!(err < 10.0 * dt, "jump remnant {err:.3e}");
    }

    #[test]
    fn product_trace_tracks_continuous_log_trace() {
        // Short record, both step families: ln prod(trace ratios) from the
        // raw map approaches the continuous filter's log_trace as dt
        // shrinks; here a smoke check at one dt, the scaling study lives
        // in the acceptance suite.
        let lind = Lindblad::thermal(2, 0.5, 0.0).unwrap();
        let a = annihilation(2).unwrap();
        let model = HypothesisModel::gaussian("h", lind, a, 1.0, 1.0).unwrap();
        let record = [0.01, -0.03, 0.02, 0.0, 0.015, -0.01];
        let dt = 1e-3;

        let mut f = thermal_state(2, 0.3).unwrap();
        let mut log_prod = 0.0;
        for &dy in &record {
            let out = kraus_gaussian_step(&model, &f, dy, dt);
            let ratio = trace(&out).re / trace(&f).re;
            log_prod += ratio.ln();
            f = out;
        }

        let mut state = AssumptiveState::new(thermal_state(2, 0.3).unwrap()).unwrap();
        for &dy in &record {
            state = super::super::gaussian_filter_step(&model, &state, dy, dt)
                .unwrap()
                .0;
        }
        assert_abs_diff_eq!(log_prod, state.log_trace, epsilon = 1e-5);
    }
}
