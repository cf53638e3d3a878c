//! Linear-Gaussian machinery: Kalman-Bucy filtering, matrix Riccati
//! integration, force-detection model builders, and Chernoff-style
//! exponential error bounds.
//!
//! Conventions. The state z obeys dz = Jz dt + process noise with
//! covariance rate S; the scalar record is dy = Kz dt + dW with noise
//! variance R. The filter covariance solves
//! dSigma/dt = J Sigma + Sigma J^T - Sigma K^T R^-1 K Sigma + S, and the
//! mean follows dz' = J z' dt + Gamma (dy - K z' dt) with gain
//! Gamma = Sigma K^T R^-1. The covariance path does not depend on the
//! record, so it is tabulated once and shared across Monte Carlo trials.
//!
//! Thresholds in the bound formulas are on the LOG likelihood ratio
//! throughout: bound_p10 = min_s exp(mu(s) - s log_gamma) and
//! bound_p01 = min_s exp(mu(s) + (1 - s) log_gamma).

use ndarray::{concatenate, s, Array1, Axis};

use crate::error::Error;
use crate::linalg::{self, CMat};
use crate::linalg::real::{symmetrize, RMat};
use crate::trajectories::MeasurementRecord;
use crate::Result;

/// Time-invariant linear-Gaussian model with a scalar observation.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    /// Drift matrix.
    pub j: RMat,
    /// Process-noise covariance rate, symmetric PSD.
    pub s: RMat,
    /// Observation row vector.
    pub k_row: Array1<f64>,
    /// Observation noise variance.
    pub r: f64,
}

impl LinearGaussianModel {
    pub fn new(j: RMat, s: RMat, k_row: Array1<f64>, r: f64) -> Result<Self> {
        let n = j.nrows();
        if j.dim() != (n, n) || s.dim() != (n, n) || k_row.len() != n {
            return Err(Error::mismatch(format!(
                "drift {:?}, noise {:?}, and observation row (len {}) disagree",
                j.dim(),
                s.dim(),
                k_row.len()
            )));
        }
        if r <= 0.0 {
            return Err(Error::validation(format!(
                "observation noise variance must be positive, got {r}"
            )));
        }
        let asym = (&s - &s.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if asym > 1e-12 {
            return Err(Error::validation(format!(
                "process noise must be symmetric (asymmetry {asym:.3e})"
            )));
        }
        if sym_min_eigenvalue(&s)? < -1e-10 * (1.0 + s.diag().sum().abs()) {
            return Err(Error::validation(
                "process noise must be positive semidefinite".to_string(),
            ));
        }
        Ok(LinearGaussianModel { j, s, k_row, r })
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }
}

/// Kalman-Bucy filter state.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub mean: Array1<f64>,
    pub cov: RMat,
}

impl KalmanState {
    pub fn new(mean: Array1<f64>, cov: RMat) -> Result<Self> {
        let n = mean.len();
        if cov.dim() != (n, n) {
            return Err(Error::mismatch(format!(
                "mean has {} entries but covariance is {:?}",
                n,
                cov.dim()
            )));
        }
        let asym = (&cov - &cov.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if asym > 1e-10 {
            return Err(Error::validation(format!(
                "covariance must be symmetric (asymmetry {asym:.3e})"
            )));
        }
        if sym_min_eigenvalue(&cov)? < -1e-10 * (1.0 + cov.diag().sum().abs()) {
            return Err(Error::validation(
                "covariance must be positive semidefinite".to_string(),
            ));
        }
        Ok(KalmanState { mean, cov })
    }
}

/// Value-returning (M + M^T)/2.
fn sym(m: &RMat) -> RMat {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

/// Minimum eigenvalue of a symmetric real matrix (complex-embedding).
fn sym_min_eigenvalue(m: &RMat) -> Result<f64> {
    let n = m.nrows();
    let mut c = CMat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            c[[i, j]] = linalg::cr(0.5 * (m[[i, j]] + m[[j, i]]));
        }
    }
    let (vals, _) = linalg::hermitian_eigen(&c)?;
    Ok(vals[0])
}

/// Riccati right-hand side J Sigma + Sigma J^T - Sigma K^T R^-1 K Sigma + S.
///
/// Built so the output of a symmetric input is symmetric to the last bit:
/// each term is assembled entrywise from products whose transposes are
/// the same floating-point sums.
pub fn riccati_rhs(model: &LinearGaussianModel, sigma: &RMat) -> RMat {
    let j_sig = model.j.dot(sigma);
    let sig_jt = sigma.dot(&model.j.t());
    let g = sigma.dot(&model.k_row); // Sigma K^T as a vector
    let n = model.dim();
    let mut out = RMat::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            out[[a, b]] =
                j_sig[[a, b]] + sig_jt[[a, b]] - g[a] * g[b] / model.r + model.s[[a, b]];
        }
    }
    out
}

/// One classical 4th-order step of the Riccati equation, re-symmetrized.
pub fn riccati_rk4_step(model: &LinearGaussianModel, sigma: &RMat, dt: f64) -> RMat {
    let k1 = riccati_rhs(model, sigma);
    let k2 = riccati_rhs(model, &(sigma + &(&k1 * (dt / 2.0))));
    let k3 = riccati_rhs(model, &(sigma + &(&k2 * (dt / 2.0))));
    let k4 = riccati_rhs(model, &(sigma + &(&k3 * dt)));
    let next = sigma + &((&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (dt / 6.0));
    sym(&next)
}

/// One Kalman-Bucy step: mean via the innovation form, covariance via
/// one 4th-order Riccati step. `psd_check` enables the spectral check.
pub fn kalman_bucy_step(
    model: &LinearGaussianModel,
    state: &KalmanState,
    dy: f64,
    dt: f64,
    psd_check: bool,
) -> Result<KalmanState> {
    if dt <= 0.0 {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    let jnorm = model
        .j
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if dt * jnorm > 0.5 {
        return Err(Error::StepSize(format!(
            "dt {dt} too large for drift norm {jnorm:.3e}"
        )));
    }
    let gain = state.cov.dot(&model.k_row) / model.r;
    let pred = model.k_row.dot(&state.mean);
    let mean = &state.mean + &(&model.j.dot(&state.mean) * dt) + &(&gain * (dy - pred * dt));
    let cov = riccati_rk4_step(model, &state.cov, dt);
    if psd_check {
        let floor = -1e-10 * (1.0 + cov.diag().sum().abs());
        let min = sym_min_eigenvalue(&cov)?;
        if min < floor {
            return Err(Error::StepSize(format!(
                "covariance eigenvalue {min:.3e} lost positivity; reduce dt"
            )));
        }
    }
    Ok(KalmanState { mean, cov })
}

/// Pre-tabulated covariance path: the Riccati solution and per-step
/// gains at the pre-step times, shared by every trial of an ensemble.
#[derive(Debug, Clone)]
pub struct RiccatiTable {
    /// Covariance at each step boundary, length steps + 1.
    pub sigmas: Vec<RMat>,
    /// Gain Sigma K^T / R at each pre-step time, length steps.
    pub gains: Vec<Array1<f64>>,
    /// Observed-component variance K Sigma K^T at each boundary.
    pub sigma_q: Vec<f64>,
    pub dt: f64,
}

/// Integrate the Riccati equation for a fixed horizon, checking
/// positivity every `check_interval` steps.
pub fn tabulate_riccati(
    model: &LinearGaussianModel,
    sigma0: &RMat,
    steps: usize,
    dt: f64,
    check_interval: usize,
) -> Result<RiccatiTable> {
    let interval = check_interval.max(1);
    let mut sigmas = Vec::with_capacity(steps + 1);
    let mut gains = Vec::with_capacity(steps);
    let mut sigma_q = Vec::with_capacity(steps + 1);
    let mut sigma = sym(sigma0);
    for k in 0..=steps {
        sigma_q.push(quad_form(&model.k_row, &sigma));
        if k == steps {
            sigmas.push(sigma);
            break;
        }
        gains.push(sigma.dot(&model.k_row) / model.r);
        let next = riccati_rk4_step(model, &sigma, dt);
        if (k + 1) % interval == 0 || k + 1 == steps {
            let floor = -1e-10 * (1.0 + next.diag().sum().abs());
            let min = sym_min_eigenvalue(&next)?;
            if min < floor {
                return Err(Error::StepSize(format!(
                    "covariance eigenvalue {min:.3e} lost positivity at step {}; reduce dt",
                    k + 1
                )));
            }
        }
        sigmas.push(sigma);
        sigma = next;
    }
    Ok(RiccatiTable {
        sigmas,
        gains,
        sigma_q,
        dt,
    })
}

fn quad_form(row: &Array1<f64>, m: &RMat) -> f64 {
    row.dot(&m.dot(row))
}

/// Outcome of a Kalman-Bucy pass over one record.
#[derive(Debug, Clone)]
pub struct KalmanTrajectory {
    /// Pre-step observation estimates K z', aligned with the record.
    pub mus: Vec<f64>,
    pub final_mean: Array1<f64>,
}

/// Drive the mean equation through a record using tabulated gains.
pub fn run_kalman_filter(
    model: &LinearGaussianModel,
    table: &RiccatiTable,
    mean0: &Array1<f64>,
    record: &MeasurementRecord,
) -> Result<KalmanTrajectory> {
    let steps = record.len();
    if table.gains.len() < steps {
        return Err(Error::mismatch(format!(
            "table covers {} steps, record has {}",
            table.gains.len(),
            steps
        )));
    }
    if (table.dt - record.dt).abs() > 1e-12 * record.dt {
        return Err(Error::mismatch(format!(
            "table dt {} does not match record dt {}",
            table.dt, record.dt
        )));
    }
    if mean0.len() != model.dim() {
        return Err(Error::mismatch(format!(
            "initial mean has {} entries for a {}-dimensional model",
            mean0.len(),
            model.dim()
        )));
    }
    let dt = record.dt;
    let mut mean = mean0.clone();
    let mut mus = Vec::with_capacity(steps);
    for (k, &dy) in record.increments.iter().enumerate() {
        let pred = model.k_row.dot(&mean);
        mus.push(pred);
        mean = &mean + &(&model.j.dot(&mean) * dt) + &(&table.gains[k] * (dy - pred * dt));
    }
    Ok(KalmanTrajectory {
        mus,
        final_mean: mean,
    })
}

/// Parameters of the force-detection pair: an oscillator read out in
/// position, with (alternative) or without (null) a classical force
/// signal x driving the momentum through a coupling row C.
#[derive(Debug, Clone)]
pub struct ForceModelParams {
    pub mass: f64,
    pub omega: f64,
    pub hbar: f64,
    pub r_noise: f64,
    /// Coupling row: force on p is C x.
    pub coupling: Array1<f64>,
    /// Signal drift matrix A.
    pub a_drift: RMat,
    /// Signal diffusion matrix B, symmetric PSD.
    pub b_diff: RMat,
}

/// Build the hypothesis pair: model0 over (q, p), model1 over (q, p, x).
///
/// J1 = [[0, 1/m, 0], [-m w^2, 0, C], [0, 0, A]],
/// S1 = diag(0, hbar^2/4R, B), K = (1, 0, ..., 0); model0 keeps the
/// (q, p) blocks. The hbar^2/4R entry is the measurement-backaction
/// diffusion of p, which is what makes the quantum problem Gaussian.
pub fn build_force_models(
    params: &ForceModelParams,
) -> Result<(LinearGaussianModel, LinearGaussianModel)> {
    let ForceModelParams {
        mass,
        omega,
        hbar,
        r_noise,
        coupling,
        a_drift,
        b_diff,
    } = params;
    if *mass <= 0.0 || *omega <= 0.0 || *hbar <= 0.0 || *r_noise <= 0.0 {
        return Err(Error::validation(
            "mass, omega, hbar, and noise variance must be positive".to_string(),
        ));
    }
    let k = coupling.len();
    if a_drift.dim() != (k, k) || b_diff.dim() != (k, k) {
        return Err(Error::mismatch(format!(
            "coupling row has {} entries; signal matrices are {:?} and {:?}",
            k,
            a_drift.dim(),
            b_diff.dim()
        )));
    }
    let backaction = hbar * hbar / (4.0 * r_noise);

    let j0 = ndarray::array![[0.0, 1.0 / mass], [-mass * omega * omega, 0.0]];
    let mut s0 = RMat::zeros((2, 2));
    s0[[1, 1]] = backaction;
    let k0 = ndarray::array![1.0, 0.0];
    let model0 = LinearGaussianModel::new(j0, s0, k0, *r_noise)?;

    let n = 2 + k;
    let mut j1 = RMat::zeros((n, n));
    j1[[0, 1]] = 1.0 / mass;
    j1[[1, 0]] = -mass * omega * omega;
    for i in 0..k {
        j1[[1, 2 + i]] = coupling[i];
        for jcol in 0..k {
            j1[[2 + i, 2 + jcol]] = a_drift[[i, jcol]];
        }
    }
    let mut s1 = RMat::zeros((n, n));
    s1[[1, 1]] = backaction;
    for i in 0..k {
        for jcol in 0..k {
            s1[[2 + i, 2 + jcol]] = b_diff[[i, jcol]];
        }
    }
    let mut k1 = Array1::zeros(n);
    k1[0] = 1.0;
    let model1 = LinearGaussianModel::new(j1, s1, k1, *r_noise)?;
    Ok((model0, model1))
}

/// Inputs of the exponential-bound computation: the hypothesis pair,
/// their initial filter covariances, and the integration horizon.
#[derive(Debug, Clone)]
pub struct ChernoffProblem {
    pub model0: LinearGaussianModel,
    pub model1: LinearGaussianModel,
    pub sigma0_init: RMat,
    pub sigma1_init: RMat,
    pub t_final: f64,
    pub dt: f64,
}

impl ChernoffProblem {
    fn validate(&self) -> Result<()> {
        if self.model0.r != self.model1.r {
            return Err(Error::validation(
                "hypothesis pair must share the observation noise variance".to_string(),
            ));
        }
        if self.sigma0_init.dim() != (self.model0.dim(), self.model0.dim())
            || self.sigma1_init.dim() != (self.model1.dim(), self.model1.dim())
        {
            return Err(Error::mismatch(
                "initial covariances do not match model dimensions".to_string(),
            ));
        }
        if self.t_final <= 0.0 || self.dt <= 0.0 || self.dt > self.t_final {
            return Err(Error::validation(format!(
                "need 0 < dt <= t_final, got dt {} and t_final {}",
                self.dt, self.t_final
            )));
        }
        Ok(())
    }

    /// Augmented model observing sqrt(s) q0 + sqrt(1-s) q1: block drift
    /// and noise, mixed observation row.
    fn augmented(&self, s_par: f64) -> Result<LinearGaussianModel> {
        let n0 = self.model0.dim();
        let n1 = self.model1.dim();
        let n = n0 + n1;
        let mut j = RMat::zeros((n, n));
        j.slice_mut(s![..n0, ..n0]).assign(&self.model0.j);
        j.slice_mut(s![n0.., n0..]).assign(&self.model1.j);
        let mut sn = RMat::zeros((n, n));
        sn.slice_mut(s![..n0, ..n0]).assign(&self.model0.s);
        sn.slice_mut(s![n0.., n0..]).assign(&self.model1.s);
        let k = concatenate![
            Axis(0),
            &self.model0.k_row * s_par.sqrt(),
            &self.model1.k_row * (1.0 - s_par).sqrt()
        ];
        LinearGaussianModel::new(j, sn, k, self.model0.r)
    }
}

/// The exponent mu(s) = (1/2R) Int [(1-s) Sigma1_q + s Sigma0_q -
/// SigmaAug_q] dt, integrating all three Riccati equations with the same
/// scheme so the endpoint identities mu(0) = mu(1) = 0 hold to roundoff.
pub fn chernoff_exponent(problem: &ChernoffProblem, s_par: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s_par) {
        return Err(Error::validation(format!(
            "s must lie in [0, 1], got {s_par}"
        )));
    }
    problem.validate()?;
    let aug = problem.augmented(s_par)?;
    let n0 = problem.model0.dim();
    let steps = (problem.t_final / problem.dt).round().max(1.0) as usize;
    let dt = problem.t_final / steps as f64;

    let mut sig0 = sym(&problem.sigma0_init);
    let mut sig1 = sym(&problem.sigma1_init);
    let mut siga = RMat::zeros((n0 + problem.model1.dim(), n0 + problem.model1.dim()));
    siga.slice_mut(s![..n0, ..n0]).assign(&sig0);
    siga.slice_mut(s![n0.., n0..]).assign(&sig1);

    let integrand = |s0q: f64, s1q: f64, saq: f64| -> f64 {
        ((1.0 - s_par) * s1q + s_par * s0q - saq) / (2.0 * problem.model0.r)
    };

    let mut acc = 0.0;
    let mut prev = integrand(
        quad_form(&problem.model0.k_row, &sig0),
        quad_form(&problem.model1.k_row, &sig1),
        quad_form(&aug.k_row, &siga),
    );
    for _ in 0..steps {
        sig0 = riccati_rk4_step(&problem.model0, &sig0, dt);
        sig1 = riccati_rk4_step(&problem.model1, &sig1, dt);
        siga = riccati_rk4_step(&aug, &siga, dt);
        let cur = integrand(
            quad_form(&problem.model0.k_row, &sig0),
            quad_form(&problem.model1.k_row, &sig1),
            quad_form(&aug.k_row, &siga),
        );
        acc += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    Ok(acc)
}

/// Minimized exponential bounds at a given log-likelihood threshold.
#[derive(Debug, Clone, Copy)]
pub struct ChernoffResult {
    /// Argmin of mu(s) over the scanned interval.
    pub s_star: f64,
    /// mu at s_star (nonpositive up to integration tolerance).
    pub mu_s: f64,
    /// min_s exp(mu(s) - s log_gamma), capped at 1.
    pub bound_p10: f64,
    /// min_s exp(mu(s) + (1 - s) log_gamma), capped at 1.
    pub bound_p01: f64,
    /// Log-likelihood threshold the bounds refer to.
    pub log_gamma: f64,
}

/// Golden-section minimization on [a, b] for a unimodal-ish objective;
/// returns (argmin, min).
fn golden_min(
    f: &mut impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    iters: usize,
) -> Result<(f64, f64)> {
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..iters {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

/// Scan a grid, then refine around the best cell with golden sections.
fn minimize_on_unit_interval(
    f: &mut impl FnMut(f64) -> Result<f64>,
    grid_points: usize,
) -> Result<(f64, f64)> {
    let n = grid_points.max(3);
    let mut best = (0.0, f(0.0)?);
    let mut best_idx = 0;
    for i in 1..n {
        let s = i as f64 / (n - 1) as f64;
        let v = f(s)?;
        if v < best.1 {
            best = (s, v);
            best_idx = i;
        }
    }
    let lo = if best_idx == 0 { 0.0 } else { (best_idx - 1) as f64 / (n - 1) as f64 };
    let hi = if best_idx == n - 1 { 1.0 } else { (best_idx + 1) as f64 / (n - 1) as f64 };
    let (s_ref, v_ref) = golden_min(f, lo, hi, 24)?;
    Ok(if v_ref < best.1 { (s_ref, v_ref) } else { best })
}

/// Minimize both error bounds over s on a 21-point grid with local
/// refinement. `log_gamma` is the log-likelihood threshold.
/// Pointwise error-probability bounds induced by the exponent at one
/// `s` and a log threshold: false-alarm and miss respectively, capped
/// at 1 since they bound probabilities.
pub fn error_bounds_at(mu_s: f64, s: f64, log_gamma: f64) -> (f64, f64) {
    (
        (mu_s - s * log_gamma).exp().min(1.0),
        (mu_s + (1.0 - s) * log_gamma).exp().min(1.0),
    )
}

pub fn chernoff_bounds(problem: &ChernoffProblem, log_gamma: f64) -> Result<ChernoffResult> {
    problem.validate()?;
    let mut mu = |s: f64| chernoff_exponent(problem, s);

    let (s_star, mu_s) = minimize_on_unit_interval(&mut mu, 21)?;
    let mut g10 = |s: f64| Ok(chernoff_exponent(problem, s)? - s * log_gamma);
    let (_, e10) = minimize_on_unit_interval(&mut g10, 21)?;
    let mut g01 = |s: f64| Ok(chernoff_exponent(problem, s)? + (1.0 - s) * log_gamma);
    let (_, e01) = minimize_on_unit_interval(&mut g01, 21)?;

    Ok(ChernoffResult {
        s_star,
        mu_s,
        bound_p10: e10.exp().min(1.0),
        bound_p01: e01.exp().min(1.0),
        log_gamma,
    })
}
