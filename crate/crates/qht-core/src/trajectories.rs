//! Measurement-record containers and record simulation under a designated
//! true model.
//!
//! Records are simulated in innovations form: the normalized filter of
//! the true model is propagated alongside the record, each diffusive
//! increment is the filter's estimate times dt plus Gaussian noise of
//! variance R dt, and each counting increment is a Bernoulli draw at the
//! filter's current rate. This is exact for the continuous model and
//! costs one filter pass per trajectory.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::filters::{
    gaussian_filter_step_with, poisson_filter_step_with, AssumptiveState, FilterOptions,
    HypothesisModel, MeasurementKind,
};
use crate::linalg::real::RMat;
use crate::linalg::{cr, hermitian_eigen, CMat};
use crate::Result;

/// Noise family of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Gaussian,
    Poisson,
}

/// One measurement record: a uniform time grid of increments dy.
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub t0: f64,
    pub dt: f64,
    pub kind: RecordKind,
    /// Observation channels; single-channel throughout this crate.
    pub channels: usize,
    /// Diffusive: real increments. Counting: values in {0, 1}.
    pub increments: Vec<f64>,
}

impl MeasurementRecord {
    pub fn new(t0: f64, dt: f64, kind: RecordKind, increments: Vec<f64>) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::validation(format!("dt must be positive, got {dt}")));
        }
        if kind == RecordKind::Poisson && increments.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::validation(
                "counting increments must be 0 or 1".to_string(),
            ));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "record increments must be finite".to_string(),
            ));
        }
        Ok(MeasurementRecord {
            t0,
            dt,
            kind,
            channels: 1,
            increments,
        })
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.increments.len() as f64
    }

    /// Time at the end of step k (1-based end of the k-th increment).
    pub fn time_after(&self, k: usize) -> f64 {
        self.t0 + self.dt * (k + 1) as f64
    }

    /// Merge consecutive increments in groups of `factor`, producing the
    /// same continuous record on a grid `factor` times coarser. Counting
    /// records refuse to merge when two events fall in one coarse bin,
    /// since a {0,1} increment cannot represent them.
    pub fn coarsen(&self, factor: usize) -> Result<MeasurementRecord> {
        if factor == 0 || self.increments.len() % factor != 0 {
            return Err(Error::validation(format!(
                "coarsening factor {factor} must divide the record length {}",
                self.increments.len()
            )));
        }
        let mut merged = Vec::with_capacity(self.increments.len() / factor);
        for chunk in self.increments.chunks(factor) {
            let s: f64 = chunk.iter().sum();
            if self.kind == RecordKind::Poisson && s > 1.0 {
                return Err(Error::validation(
                    "coarsening collision: two events in one bin".to_string(),
                ));
            }
            merged.push(s);
        }
        MeasurementRecord::new(self.t0, self.dt * factor as f64, self.kind, merged)
    }
}

/// Record plus the true-model path statistics produced while simulating.
#[derive(Debug, Clone)]
pub struct SimulatedRecord {
    pub record: MeasurementRecord,
    /// True-model estimate at each step (observable mean or event rate).
    pub mu_path: Vec<f64>,
    pub final_state: AssumptiveState,
    pub max_leakage: f64,
    pub clamp_count: usize,
}

fn validate_horizon(t_final: f64, dt: f64) -> Result<usize> {
    if dt <= 0.0 {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    if t_final < dt {
        return Err(Error::validation(format!(
            "time horizon {t_final} is shorter than one step {dt}"
        )));
    }
    Ok((t_final / dt).round() as usize)
}

/// Simulate a diffusive record of length T/dt under `model` as the truth,
/// starting from `initial`. Each step draws dW ~ Normal(0, R dt) and sets
/// dy = mu dt + dW with mu the running true-filter estimate.
pub fn simulate_gaussian_record(
    model: &HypothesisModel,
    initial: &CMat,
    t_final: f64,
    dt: f64,
    opts: &FilterOptions,
    leakage_ceiling: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SimulatedRecord> {
    if model.kind != MeasurementKind::Gaussian {
        return Err(Error::validation(
            "diffusive record requires a diffusive-kind model".to_string(),
        ));
    }
    let steps = validate_horizon(t_final, dt)?;
    let sd = (model.r_noise * dt).sqrt();
    let mut state = AssumptiveState::new(initial.clone())?;
    let mut increments = Vec::with_capacity(steps);
    let mut mu_path = Vec::with_capacity(steps);
    let mut max_leakage = 0.0f64;
    let mut clamp_count = 0usize;
    let interval = opts.check_interval.max(1);
    for k in 0..steps {
        let mu = crate::filters::assumptive_estimate(model, &state);
        let dw: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * sd;
        let dy = mu * dt + dw;
        let check = (k + 1) % interval == 0 || k + 1 == steps;
        let (next, info) = gaussian_filter_step_with(model, &state, dy, dt, opts, check)?;
        if info.leakage > leakage_ceiling {
            return Err(Error::TruncationLeakage {
                leakage: info.leakage,
                ceiling: leakage_ceiling,
            });
        }
        if info.leakage > max_leakage {
            max_leakage = info.leakage;
        }
        if info.clamped {
            clamp_count += 1;
        }
        state = next;
        increments.push(dy);
        mu_path.push(mu);
    }
    Ok(SimulatedRecord {
        record: MeasurementRecord::new(0.0, dt, RecordKind::Gaussian, increments)?,
        mu_path,
        final_state: state,
        max_leakage,
        clamp_count,
    })
}

/// Simulate a counting record under `model` as the truth. Each step emits
/// an event with probability mu dt at the running true-filter rate.
pub fn simulate_poisson_record(
    model: &HypothesisModel,
    initial: &CMat,
    t_final: f64,
    dt: f64,
    opts: &FilterOptions,
    leakage_ceiling: f64,
    rng: &mut ChaCha12Rng,
) -> Result<SimulatedRecord> {
    if model.kind != MeasurementKind::Poisson {
        return Err(Error::validation(
            "counting record requires a counting-kind model".to_string(),
        ));
    }
    let steps = validate_horizon(t_final, dt)?;
    let mut state = AssumptiveState::new(initial.clone())?;
    let mut increments = Vec::with_capacity(steps);
    let mut mu_path = Vec::with_capacity(steps);
    let mut max_leakage = 0.0f64;
    let mut clamp_count = 0usize;
    let interval = opts.check_interval.max(1);
    for k in 0..steps {
        let mu = crate::filters::poisson_estimate(model, &state);
        let p = mu * dt;
        if p >= 1.0 {
            return Err(Error::StepSize(format!(
                "event probability per step {p:.3e} reached 1; reduce dt"
            )));
        }
        let dy = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let check = (k + 1) % interval == 0 || k + 1 == steps;
        let (next, info) = poisson_filter_step_with(model, &state, dy, dt, opts, check)?;
        if info.leakage > leakage_ceiling {
            return Err(Error::TruncationLeakage {
                leakage: info.leakage,
                ceiling: leakage_ceiling,
            });
        }
        if info.leakage > max_leakage {
            max_leakage = info.leakage;
        }
        if info.clamped {
            clamp_count += 1;
        }
        state = next;
        increments.push(dy);
        mu_path.push(mu);
    }
    Ok(SimulatedRecord {
        record: MeasurementRecord::new(0.0, dt, RecordKind::Poisson, increments)?,
        mu_path,
        final_state: state,
        max_leakage,
        clamp_count,
    })
}

/// Matrix square root of a symmetric PSD matrix, for diffusion sampling.
fn psd_sqrt(b: &RMat) -> Result<RMat> {
    let n = b.nrows();
    let mut bc = CMat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if (b[[i, j]] - b[[j, i]]).abs() > 1e-10 * (1.0 + b[[i, j]].abs()) {
                return Err(Error::validation(
                    "process-noise matrix must be symmetric".to_string(),
                ));
            }
            bc[[i, j]] = cr(b[[i, j]]);
        }
    }
    let (w, v) = hermitian_eigen(&bc)?;
    if w.iter().any(|&x| x < -1e-10 * w.last().unwrap().abs().max(1.0)) {
        return Err(Error::validation(format!(
            "process-noise matrix must be positive semidefinite (min eigenvalue {:.3e})",
            w[0]
        )));
    }
    let mut out = RMat::zeros((n, n));
    for (idx, &wi) in w.iter().enumerate() {
        let s = wi.max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += s * (v[[i, idx]] * v[[j, idx]].conj()).re;
            }
        }
    }
    Ok(out)
}

/// Euler-Maruyama path of the linear SDE dx = A x dt + dW with
/// dW dW^T = B dt. Returns (steps + 1) rows starting at x0.
pub fn simulate_ou_path(
    a: &RMat,
    b: &RMat,
    x0: &Array1<f64>,
    t_final: f64,
    dt: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Array2<f64>> {
    let n = x0.len();
    if a.dim() != (n, n) || b.dim() != (n, n) {
        return Err(Error::mismatch(format!(
            "drift {:?} and noise {:?} must be {n}x{n}",
            a.dim(),
            b.dim()
        )));
    }
    let steps = validate_horizon(t_final, dt)?;
    let root = psd_sqrt(b)? * dt.sqrt();
    let mut path = Array2::zeros((steps + 1, n));
    let mut x = x0.clone();
    path.row_mut(0).assign(&x);
    for k in 0..steps {
        let drift = a.dot(&x) * dt;
        let z: Array1<f64> = (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        x = &x + &drift + &root.dot(&z);
        path.row_mut(k + 1).assign(&x);
    }
    Ok(path)
}

/// Simulated linear-model record: the latent path and the observations.
#[derive(Debug, Clone)]
pub struct LinearRecord {
    pub record: MeasurementRecord,
    /// Latent state path, (steps + 1) x n.
    pub path: Array2<f64>,
}

/// Simulate observations dy = K x dt + dV, dV^2 = R dt, over an
/// Euler-Maruyama path of dx = A x dt + dW. The initial state is drawn
/// from Normal(mean0, cov0).
#[allow(clippy::too_many_arguments)]
pub fn simulate_linear_record(
    a: &RMat,
    b: &RMat,
    k_row: &Array1<f64>,
    r: f64,
    mean0: &Array1<f64>,
    cov0: &RMat,
    t_final: f64,
    dt: f64,
    rng: &mut ChaCha12Rng,
) -> Result<LinearRecord> {
    if r <= 0.0 {
        return Err(Error::validation(format!(
            "observation noise variance must be positive, got {r}"
        )));
    }
    let n = mean0.len();
    if k_row.len() != n {
        return Err(Error::mismatch(format!(
            "observation row has length {}, state has {n}",
            k_row.len()
        )));
    }
    let init_root = psd_sqrt(cov0)?;
    let z: Array1<f64> = (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let x0 = mean0 + &init_root.dot(&z);
    let path = simulate_ou_path(a, b, &x0, t_final, dt, rng)?;
    let steps = path.nrows() - 1;
    let sd = (r * dt).sqrt();
    let mut increments = Vec::with_capacity(steps);
    for k in 0..steps {
        let mean: f64 = k_row.dot(&path.row(k));
        let dv: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * sd;
        increments.push(mean * dt + dv);
    }
    Ok(LinearRecord {
        record: MeasurementRecord::new(0.0, dt, RecordKind::Gaussian, increments)?,
        path,
    })
}
