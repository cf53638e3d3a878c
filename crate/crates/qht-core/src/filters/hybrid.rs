//! Hybrid filter for a quantum oscillator whose Hamiltonian depends on a
//! classical Ornstein-Uhlenbeck signal x, under continuous position
//! measurement.
//!
//! The joint posterior is a matrix-valued density on a one-dimensional
//! x grid: one unnormalized oscillator matrix per grid cell. Each step
//! composes, to first order in dt,
//!   - the x-conditioned unitary generator -(i/hbar)[H(x), f],
//!   - the measurement update (dy/2R)(qf + fq) + (dt/8R)(2qfq - q^2 f - f q^2),
//!   - a conservative finite-difference Kolmogorov step across the grid,
//! then renormalizes globally, advancing the log-trace by the same Ito
//! increment dy mu/R - dt mu^2/(2R) as the other filters.

use num_complex::Complex64;

use crate::error::Error;
use crate::linalg::{self, cr, matmul, trace_of_product, CMat};
use crate::operators;
use crate::trajectories::MeasurementRecord;
use crate::Result;

/// Oscillator-plus-classical-signal model with a position sensor.
///
/// The oscillator Hamiltonian is H(x) = p^2/2m + m omega^2 q^2 / 2 - q C x
/// with physical quadratures q, p. The signal obeys
/// dx = a_drift x dt + sqrt(b_diff) dW. The sensor couples to q with
/// measurement noise variance r_noise and no excess noise.
#[derive(Debug, Clone)]
pub struct HybridModel {
    pub dim: usize,
    pub mass: f64,
    pub omega: f64,
    pub hbar: f64,
    pub coupling: f64,
    pub r_noise: f64,
    pub a_drift: f64,
    pub b_diff: f64,
    q_op: CMat,
    q_sq: CMat,
    h_free: CMat,
}

impl HybridModel {
    pub fn new(
        dim: usize,
        mass: f64,
        omega: f64,
        hbar: f64,
        coupling: f64,
        r_noise: f64,
        a_drift: f64,
        b_diff: f64,
    ) -> Result<Self> {
        operators::check_dim(dim)?;
        if mass <= 0.0 || omega <= 0.0 || hbar <= 0.0 {
            return Err(Error::validation(
                "mass, omega, and hbar must be positive".to_string(),
            ));
        }
        if r_noise <= 0.0 {
            return Err(Error::validation(format!(
                "measurement noise variance must be positive, got {r_noise}"
            )));
        }
        if b_diff < 0.0 {
            return Err(Error::validation(format!(
                "signal diffusion must be nonnegative, got {b_diff}"
            )));
        }
        let q_op = operators::position(dim)?.mapv(|v| v * cr((hbar / (mass * omega)).sqrt()));
        let p_op = operators::momentum(dim)?.mapv(|v| v * cr((hbar * mass * omega).sqrt()));
        let q_sq = matmul(&q_op, &q_op);
        let p_sq = matmul(&p_op, &p_op);
        let h_free =
            &p_sq.mapv(|v| v * cr(0.5 / mass)) + &q_sq.mapv(|v| v * cr(0.5 * mass * omega * omega));
        Ok(HybridModel {
            dim,
            mass,
            omega,
            hbar,
            coupling,
            r_noise,
            a_drift,
            b_diff,
            q_op,
            q_sq,
            h_free,
        })
    }

    /// Measured observable (physical position).
    pub fn sensor_op(&self) -> &CMat {
        &self.q_op
    }

    /// Oscillator Hamiltonian at signal value x.
    pub fn hamiltonian_at(&self, x: f64) -> CMat {
        &self.h_free - &self.q_op.mapv(|v| v * cr(self.coupling * x))
    }

    /// Ground-state position variance hbar / (2 m omega).
    pub fn ground_q_variance(&self) -> f64 {
        self.hbar / (2.0 * self.mass * self.omega)
    }

    /// Ground-state momentum variance hbar m omega / 2.
    pub fn ground_p_variance(&self) -> f64 {
        self.hbar * self.mass * self.omega / 2.0
    }

    /// Stationary variance of the classical signal, b / (2|a|).
    pub fn signal_stationary_variance(&self) -> Result<f64> {
        if self.a_drift >= 0.0 {
            return Err(Error::validation(
                "signal drift must be stable (negative) for a stationary prior".to_string(),
            ));
        }
        Ok(self.b_diff / (2.0 * -self.a_drift))
    }
}

/// Matrix-valued density over the signal grid, normalized so that
/// sum_i tr(f_i) h = 1, plus the accumulated log-trace.
#[derive(Debug, Clone)]
pub struct HybridState {
    /// Cell-center signal values.
    pub xs: Vec<f64>,
    /// Grid spacing.
    pub h: f64,
    /// One oscillator matrix per cell.
    pub mats: Vec<CMat>,
    pub log_trace: f64,
}

impl HybridState {
    /// Product prior: Gaussian signal density of the given variance on a
    /// cell-centered grid of n points over [-half, half], times a fixed
    /// oscillator state.
    pub fn product_prior(
        n: usize,
        half: f64,
        signal_variance: f64,
        rho0: &CMat,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("grid must have at least one cell".to_string()));
        }
        if half <= 0.0 || signal_variance <= 0.0 {
            return Err(Error::validation(
                "grid half-width and signal variance must be positive".to_string(),
            ));
        }
        let tr = linalg::trace(rho0).re;
        if !(tr - 1.0).abs().lt(&1e-9) {
            return Err(Error::NonUnitTrace(tr));
        }
        let h = 2.0 * half / n as f64;
        let xs: Vec<f64> = (0..n).map(|i| -half + (i as f64 + 0.5) * h).collect();
        let weights: Vec<f64> = xs
            .iter()
            .map(|&x| (-x * x / (2.0 * signal_variance)).exp())
            .collect();
        let mass: f64 = weights.iter().sum::<f64>() * h;
        let mats: Vec<CMat> = weights
            .iter()
            .map(|&w| rho0.mapv(|v| v * cr(w / mass)))
            .collect();
        Ok(HybridState {
            xs,
            h,
            mats,
            log_trace: 0.0,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.xs.len()
    }

    /// Per-cell traces (signal marginal times the spacing).
    pub fn weights(&self) -> Vec<f64> {
        self.mats.iter().map(|f| linalg::trace(f).re).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights().iter().sum::<f64>() * self.h
    }

    /// Marginal signal density: tr(f_i) normalized to unit grid mass.
    pub fn signal_marginal(&self) -> Vec<f64> {
        let w = self.weights();
        let mass: f64 = w.iter().sum::<f64>() * self.h;
        w.iter().map(|v| v / mass).collect()
    }

    /// Posterior mean of the signal.
    pub fn signal_mean(&self) -> f64 {
        let w = self.weights();
        let den: f64 = w.iter().sum();
        let num: f64 = w.iter().zip(&self.xs).map(|(v, x)| v * x).sum();
        num / den
    }

    /// Fraction of mass in the outermost cells (0 for degenerate grids).
    pub fn boundary_mass_fraction(&self) -> f64 {
        let w = self.weights();
        if w.len() < 3 {
            return 0.0;
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        (w[0] + w[w.len() - 1]) / total
    }
}

/// Posterior mean of an oscillator observable under the joint state.
pub fn hybrid_estimate(state: &HybridState, op: &CMat) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for f in &state.mats {
        num += trace_of_product(op, f).re;
        den += linalg::trace(f).re;
    }
    if den <= 0.0 {
        return Err(Error::NumericalFault(
            "hybrid state has nonpositive mass".to_string(),
        ));
    }
    Ok(num / den)
}

/// Per-step outcome of the hybrid filter.
#[derive(Debug, Clone, Copy)]
pub struct HybridStepInfo {
    /// Estimate of the measured position before the step.
    pub mu: f64,
    /// Mass ratio of the raw update before renormalization.
    pub mass_ratio: f64,
    /// Eigenvalue clamps applied during the spectral check.
    pub clamped: usize,
    pub boundary_mass_fraction: f64,
}

/// One hybrid filter step. `spectral_check` enables the per-cell
/// eigenvalue inspection (quadratic-cost; run at an interval).
pub fn hybrid_gaussian_step(
    model: &HybridModel,
    state: &HybridState,
    dy: f64,
    dt: f64,
    boundary_ceiling: f64,
    spectral_check: bool,
) -> Result<(HybridState, HybridStepInfo)> {
    if dt <= 0.0 {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    let n = state.n_cells();
    let r = model.r_noise;

    if n > 1 {
        // Explicit-scheme stability for the signal diffusion and drift.
        let cfl_diff = dt * 0.5 * model.b_diff / (state.h * state.h);
        let x_max = state.xs.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let cfl_adv = model.a_drift.abs() * x_max * dt / state.h;
        if cfl_diff > 0.25 || cfl_adv > 0.5 {
            return Err(Error::StepSize(format!(
                "signal-grid stability numbers (diffusion {cfl_diff:.3}, drift {cfl_adv:.3}) \
                 exceed limits; reduce dt or coarsen the grid"
            )));
        }
    }

    let mu = hybrid_estimate(state, &model.q_op)?;

    // Quantum update per cell.
    let mut next: Vec<CMat> = Vec::with_capacity(n);
    for (i, f) in state.mats.iter().enumerate() {
        let ham = model.hamiltonian_at(state.xs[i]);
        let unitary = linalg::commutator(&ham, f).mapv(|v| v * Complex64::new(0.0, -dt / model.hbar));
        let qf = matmul(&model.q_op, f);
        let fq = matmul(f, &model.q_op);
        let innovation = (&qf + &fq).mapv(|v| v * cr(dy / (2.0 * r)));
        let backaction = (&matmul(&qf, &model.q_op).mapv(|v| v * cr(2.0))
            - &matmul(&model.q_sq, f)
            - &matmul(f, &model.q_sq))
            .mapv(|v| v * cr(dt / (8.0 * r)));
        next.push(f + &unitary + &innovation + &backaction);
    }

    // Kolmogorov step across the grid in conservative flux form with
    // zero-flux boundaries, applied to the pre-update matrices.
    if n > 1 {
        let d = 0.5 * model.b_diff;
        let mut flux_prev: Option<CMat> = None;
        for i in 0..n {
            let flux_next = if i + 1 < n {
                let x_face = 0.5 * (state.xs[i] + state.xs[i + 1]);
                let adv = (&state.mats[i] + &state.mats[i + 1])
                    .mapv(|v| v * cr(0.5 * model.a_drift * x_face));
                let dif = (&state.mats[i + 1] - &state.mats[i]).mapv(|v| v * cr(d / state.h));
                Some(&adv - &dif)
            } else {
                None
            };
            let mut delta = CMat::zeros((model.dim, model.dim));
            if let Some(fp) = &flux_prev {
                delta = &delta + fp;
            }
            if let Some(fnx) = &flux_next {
                delta = &delta - fnx;
            }
            next[i] = &next[i] + &delta.mapv(|v| v * cr(dt / state.h));
            flux_prev = flux_next;
        }
    }

    // Hermitize (the generator preserves Hermiticity; this removes roundoff).
    for f in next.iter_mut() {
        linalg::hermitize(f);
    }

    // Positivity policy. Position measurement keeps the conditional state
    // nearly pure, and a single Euler step from a pure state is positive
    // only for |dy| below about sqrt(2 R dt), so small transient negatives
    // of relative order dy^2/R^2 are intrinsic to the scheme rather than a
    // sign of divergence. All negative eigenvalues are clamped to zero;
    // the step aborts only when the total clamped mass is a material
    // fraction of the joint state, which is where real divergence shows.
    let mut clamped = 0;
    if spectral_check {
        let total_mass: f64 = next.iter().map(|f| linalg::trace(f).re).sum();
        let mut clamped_mass = 0.0;
        for f in next.iter_mut() {
            let tau = linalg::trace(f).re;
            if tau <= 0.0 {
                continue; // negligible cell; global mass check below governs
            }
            let (vals, vecs) = linalg::hermitian_eigen(f)?;
            if vals[0] >= 0.0 {
                continue;
            }
            clamped += 1;
            let dim = model.dim;
            let mut rebuilt = CMat::zeros((dim, dim));
            for (k, &w) in vals.iter().enumerate() {
                if w <= 0.0 {
                    clamped_mass += -w;
                    continue;
                }
                let col = vecs.column(k);
                for a in 0..dim {
                    for b in 0..dim {
                        rebuilt[[a, b]] += col[a] * col[b].conj() * cr(w);
                    }
                }
            }
            *f = rebuilt;
        }
        if total_mass > 0.0 && clamped_mass > 1e-2 * total_mass {
            return Err(Error::StepSize(format!(
                "clamped eigenvalue mass fraction {:.3e} signals filter divergence; reduce dt",
                clamped_mass / total_mass
            )));
        }
    }

    let mass: f64 = next.iter().map(|f| linalg::trace(f).re).sum::<f64>() * state.h;
    if !mass.is_finite() || mass <= 0.0 {
        return Err(Error::NumericalFault(format!(
            "hybrid joint mass became {mass:.3e}"
        )));
    }
    for f in next.iter_mut() {
        *f = f.mapv(|v| v * cr(1.0 / mass));
    }

    let out = HybridState {
        xs: state.xs.clone(),
        h: state.h,
        mats: next,
        log_trace: state.log_trace + dy * mu / r - dt * mu * mu / (2.0 * r),
    };
    let boundary = out.boundary_mass_fraction();
    if boundary > boundary_ceiling {
        return Err(Error::GridTooSmall(boundary, boundary_ceiling));
    }
    Ok((
        out,
        HybridStepInfo {
            mu,
            mass_ratio: mass,
            clamped,
            boundary_mass_fraction: boundary,
        },
    ))
}

/// Outcome of driving the hybrid filter through a full record.
#[derive(Debug)]
pub struct HybridTrajectory {
    /// Pre-step position estimates, one per record increment.
    pub mus: Vec<f64>,
    pub final_state: HybridState,
    pub clamp_count: usize,
}

/// Drive the hybrid filter through a Gaussian record, running the
/// spectral check every `check_interval` steps and on the last step.
pub fn run_hybrid_filter(
    model: &HybridModel,
    initial: HybridState,
    record: &MeasurementRecord,
    boundary_ceiling: f64,
    check_interval: usize,
) -> Result<HybridTrajectory> {
    let interval = check_interval.max(1);
    let steps = record.len();
    let mut state = initial;
    let mut mus = Vec::with_capacity(steps);
    let mut clamp_count = 0;
    for (k, &dy) in record.increments.iter().enumerate() {
        let check = (k + 1) % interval == 0 || k + 1 == steps;
        let (next, info) =
            hybrid_gaussian_step(model, &state, dy, record.dt, boundary_ceiling, check)?;
        mus.push(info.mu);
        clamp_count += info.clamped;
        state = next;
    }
    Ok(HybridTrajectory {
        mus,
        final_state: state,
        clamp_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{gaussian_filter_step, AssumptiveState, HypothesisModel};
    use crate::operators::Lindblad;
    use approx::assert_abs_diff_eq;

    fn model(dim: usize, coupling: f64) -> HybridModel {
        HybridModel::new(dim, 1.0, 1.0, 1.0, coupling, 1.0, -1.0, 1.0).unwrap()
    }

    #[test]
    fn degenerate_grid_matches_plain_gaussian_filter() {
        // A single-cell grid pins the signal at x0, so the hybrid step must
        // reduce to the density-matrix filter with the fixed Hamiltonian
        // H(x0) and sensor q at Q = R.
        let m = model(8, 0.4);
        let x0 = 0.7;
        let rho0 = operators::coherent_state(8, Complex64::new(0.3, -0.2)).unwrap();

        let mut hyb = HybridState {
            xs: vec![x0],
            h: 1.0,
            mats: vec![rho0.clone()],
            log_trace: 0.0,
        };
        let lind = Lindblad::new(8, Some(m.hamiltonian_at(x0)), &[]).unwrap();
        let hm = HypothesisModel::gaussian("pinned", lind, m.sensor_op().clone(), 1.0, 0.0).unwrap();
        let mut plain = AssumptiveState::new(rho0).unwrap();

        let record = [0.013, -0.008, 0.021, 0.0, -0.017];
        let dt = 1e-3;
        for &dy in &record {
            let (h_next, _) = hybrid_gaussian_step(&m, &hyb, dy, dt, 1.0, true).unwrap();
            hyb = h_next;
            let (p_next, _) = gaussian_filter_step(&hm, &plain, dy, dt).unwrap();
            plain = p_next;
        }
        assert_abs_diff_eq!(hyb.log_trace, plain.log_trace, epsilon = 1e-12);
        let diff = linalg::max_abs(&(&hyb.mats[0] - &plain.rho));
        assert!(diff < 1e-12, "state mismatch {diff:.3e}");
    }

    #[test]
    fn zero_coupling_keeps_signal_marginal_stationary() {
        // With C = 0 the measurement cannot update the signal, so the
        // stationary prior marginal must be preserved up to grid error.
        let m = model(6, 0.0);
        let rho0 = operators::fock_state(6, 0).unwrap();
        let var = m.signal_stationary_variance().unwrap();
        let mut state = HybridState::product_prior(48, 6.0 * var.sqrt(), var, &rho0).unwrap();
        let initial = state.signal_marginal();
        let dt: f64 = 1e-3;
        for k in 0..200 {
            let dy = 0.02 * ((k % 5) as f64 - 2.0) * dt.sqrt();
            state = hybrid_gaussian_step(&m, &state, dy, dt, 1e-4, k % 25 == 0)
                .unwrap()
                .0;
        }
        let after = state.signal_marginal();
        let peak = initial.iter().cloned().fold(0.0f64, f64::max);
        for (a, b) in initial.iter().zip(&after) {
            assert!(
                (a - b).abs() < 2e-3 * peak,
                "marginal drifted: {a:.6} -> {b:.6}"
            );
        }
    }

    #[test]
    fn estimate_reads_coherent_displacement() {
        let m = model(12, 0.5);
        let alpha = Complex64::new(0.4, 0.0);
        let rho0 = operators::coherent_state(12, alpha).unwrap();
        let state = HybridState::product_prior(32, 4.0, 0.5, &rho0).unwrap();
        // Physical position of a coherent state: sqrt(2 hbar / (m omega)) Re(alpha).
        let expect = (2.0 * m.hbar / (m.mass * m.omega)).sqrt() * alpha.re;
        let mu = hybrid_estimate(&state, m.sensor_op()).unwrap();
        assert_abs_diff_eq!(mu, expect, epsilon = 1e-10);
    }

    #[test]
    fn log_trace_follows_ito_increment() {
        let m = model(8, 0.3);
        let rho0 = operators::fock_state(8, 0).unwrap();
        let var = m.signal_stationary_variance().unwrap();
        let state = HybridState::product_prior(32, 6.0 * var.sqrt(), var, &rho0).unwrap();
        let dy = 0.04;
        let dt = 1e-3;
        let (next, info) = hybrid_gaussian_step(&m, &state, dy, dt, 1e-4, true).unwrap();
        let expect = dy * info.mu / m.r_noise - dt * info.mu * info.mu / (2.0 * m.r_noise);
        assert_abs_diff_eq!(next.log_trace, expect, epsilon = 1e-15);
    }

    #[test]
    fn narrow_grid_reports_boundary_leakage() {
        // Half-width of one standard deviation leaks immediately.
        let m = model(4, 0.0);
        let rho0 = operators::fock_state(4, 0).unwrap();
        let var = m.signal_stationary_variance().unwrap();
        let mut state = HybridState::product_prior(16, var.sqrt(), var, &rho0).unwrap();
        let mut leaked = false;
        for _ in 0..50 {
            match hybrid_gaussian_step(&m, &state, 0.0, 1e-3, 1e-3, false) {
                Ok((next, _)) => state = next,
                Err(Error::GridTooSmall(_, _)) => {
                    leaked = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(leaked, "boundary leakage was not detected");
    }

    #[test]
    fn unstable_step_is_rejected() {
        let m = model(4, 0.0);
        let rho0 = operators::fock_state(4, 0).unwrap();
        let state = HybridState::product_prior(64, 3.0, 0.5, &rho0).unwrap();
        assert!(matches!(
            hybrid_gaussian_step(&m, &state, 0.0, 1.0, 1.0, false),
            Err(Error::StepSize(_))
        ));
    }
}
