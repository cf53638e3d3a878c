//! Unnormalized conditional-state filters for competing hypotheses.
//!
//! Each hypothesis carries a filter that consumes the shared measurement
//! record and tracks the trace of its unnormalized state. The state is
//! stored factored as a normalized density matrix plus an accumulated
//! log-trace: raw linear propagation under- or overflows exponentially,
//! while the factored form is exact. The log-trace difference between two
//! hypotheses is the log-likelihood ratio.
//!
//! Submodules:
//! - [`gaussian`]: diffusive-record filter with measurement backaction.
//! - [`poisson`]: counting-record filter with jump/no-jump propagation.
//! - [`kraus`]: raw discrete single-step maps, kept unnormalized; these
//!   are the finite-dt reference implementations the continuous filters
//!   are tested against in step-size studies.
//! - [`hybrid`]: quantum sensor coupled to a classical signal on a grid.
//! - [`classical`]: two-dimensional classical grid filter for the
//!   model-comparison scenarios.

pub mod classical;
pub mod gaussian;
pub mod hybrid;
pub mod kraus;
pub mod poisson;

use crate::error::Error;
use crate::linalg::{cr, dagger, hermiticity_defect, matmul, trace, CMat};
use crate::operators::Lindblad;
use crate::Result;

/// Measurement channel statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    Gaussian,
    Poisson,
}

/// One hypothesis: internal dynamics, measurement operator, and noise
/// parameters for the monitored channel.
///
/// `lindblad` holds only the dynamics not tied to the monitored channel;
/// the filter step itself applies the measurement-induced decoherence
/// (set by `c` together with `q_noise` for diffusive records, or by `c`
/// alone for counting records).
#[derive(Debug, Clone)]
pub struct HypothesisModel {
    pub label: String,
    pub lindblad: Lindblad,
    /// Measurement operator; the observed quantity is (c + c^dag)/2 for
    /// diffusive records and the jump rate eta tr(c^dag c rho) for
    /// counting records.
    pub c: CMat,
    pub kind: MeasurementKind,
    /// Quantum-limited observation noise variance (diffusive).
    pub q_noise: f64,
    /// Excess observation noise variance (diffusive).
    pub s_noise: f64,
    /// Total observation noise variance, q_noise + s_noise exactly.
    pub r_noise: f64,
    /// Detector efficiency in (0, 1] (counting).
    pub eta: f64,
    /// Reference rate, any positive number (counting). The accumulated
    /// log-likelihood ratio between two hypotheses is independent of it.
    pub alpha: f64,
    /// Cached (c + c^dag)/2.
    pub(crate) c_herm: CMat,
    /// Cached c^dag c.
    pub(crate) cdc: CMat,
}

impl HypothesisModel {
    /// Diffusive-record hypothesis. The total noise variance is forced to
    /// q_noise + s_noise; a hypothesis pair under test must share it.
    pub fn gaussian(
        label: impl Into<String>,
        lindblad: Lindblad,
        c: CMat,
        q_noise: f64,
        s_noise: f64,
    ) -> Result<Self> {
        if q_noise <= 0.0 {
            return Err(Error::validation(format!(
                "q_noise must be positive, got {}",
                q_noise
            )));
        }
        if s_noise < 0.0 {
            return Err(Error::validation(format!(
                "s_noise must be nonnegative, got {}",
                s_noise
            )));
        }
        Self::build(
            label.into(),
            lindblad,
            c,
            MeasurementKind::Gaussian,
            q_noise,
            s_noise,
            1.0,
            1.0,
        )
    }

    /// Counting-record hypothesis.
    pub fn poisson(
        label: impl Into<String>,
        lindblad: Lindblad,
        c: CMat,
        eta: f64,
        alpha: f64,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::validation(format!(
                "eta must lie in (0,1], got {}",
                eta
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::validation(format!(
                "alpha must be positive, got {}",
                alpha
            )));
        }
        Self::build(
            label.into(),
            lindblad,
            c,
            MeasurementKind::Poisson,
            1.0,
            0.0,
            eta,
            alpha,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        label: String,
        lindblad: Lindblad,
        c: CMat,
        kind: MeasurementKind,
        q_noise: f64,
        s_noise: f64,
        eta: f64,
        alpha: f64,
    ) -> Result<Self> {
        let dim = lindblad.dim();
        if c.dim() != (dim, dim) {
            return Err(Error::mismatch(format!(
                "measurement operator is {:?}, expected ({}, {})",
                c.dim(),
                dim,
                dim
            )));
        }
        let cd = dagger(&c);
        let c_herm = (&c + &cd) * cr(0.5);
        let cdc = matmul(&cd, &c);
        Ok(HypothesisModel {
            label,
            lindblad,
            c,
            kind,
            q_noise,
            s_noise,
            r_noise: q_noise + s_noise,
            eta,
            alpha,
            c_herm,
            cdc,
        })
    }

    pub fn dim(&self) -> usize {
        self.lindblad.dim()
    }

    /// Same hypothesis with a different counting reference rate.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::validation(format!(
                "alpha must be positive, got {}",
                alpha
            )));
        }
        let mut m = self.clone();
        m.alpha = alpha;
        Ok(m)
    }
}

/// Normalized density matrix plus accumulated log-trace. Represents the
/// unnormalized filtering state exp(log_trace) * rho without overflow.
#[derive(Debug, Clone)]
pub struct AssumptiveState {
    pub rho: CMat,
    pub log_trace: f64,
}

impl AssumptiveState {
    /// Wrap a normalized density matrix with zero log-trace.
    pub fn new(rho: CMat) -> Result<Self> {
        let tr = trace(&rho).re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitTrace(tr));
        }
        if hermiticity_defect(&rho) > 1e-10 {
            return Err(Error::NumericalFault(
                "initial state is not Hermitian".to_string(),
            ));
        }
        Ok(AssumptiveState {
            rho,
            log_trace: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    /// True once a counting filter has seen an event it assigns zero
    /// probability; the state is frozen and log_trace is -inf.
    pub fn is_dead(&self) -> bool {
        self.log_trace == f64::NEG_INFINITY
    }
}

/// Time-stepping scheme for the deterministic generator part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Single forward-Euler application of the full generator.
    #[default]
    Euler,
    /// Half-step of the deterministic generator on each side of the
    /// measurement update.
    Strang,
}

/// Numerical policy knobs shared by the filter steps.
#[derive(Debug, Clone, Copy)]
pub struct FilterOptions {
    /// Hermiticity drift beyond this is a numerical fault.
    pub herm_tol: f64,
    /// Fraction of state mass the positivity clamp may remove in one
    /// check before the step size is declared divergent. The explicit
    /// measurement update pushes weakly occupied levels transiently
    /// negative whenever the record excursion is large against the
    /// sensor scale, so clamping is routine; only macroscopic clamped
    /// mass marks a broken integration.
    pub clamp_budget: f64,
    /// Spectral positivity check cadence in steps (1 = every step).
    pub check_interval: usize,
    pub scheme: Scheme,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            herm_tol: 1e-8,
            clamp_budget: 1e-2,
            check_interval: 25,
            scheme: Scheme::Euler,
        }
    }
}

/// Per-step filter output.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// Assumptive estimate used for this step's log-trace increment
    /// (observable mean for diffusive records, event rate for counting).
    pub mu: f64,
    /// Increment added to log_trace this step.
    pub log_trace_increment: f64,
    /// Eigenvalue clamp applied during this step's positivity check.
    pub clamped: bool,
    /// Top-level population after the step.
    pub leakage: f64,
}

/// Outcome of driving one filter across a full record.
#[derive(Debug, Clone)]
pub struct FilterTrajectory {
    /// Assumptive estimate per step, aligned with the record increments.
    pub mus: Vec<f64>,
    /// Log-trace after each step (same length as mus).
    pub log_trace_path: Vec<f64>,
    pub final_state: AssumptiveState,
    pub clamp_count: usize,
    pub max_leakage: f64,
}

impl FilterTrajectory {
    pub fn final_log_trace(&self) -> f64 {
        *self.log_trace_path.last().unwrap_or(&0.0)
    }
}

pub use classical::{
    classical_dmz_step, classical_estimate, ClassicalGridState, ClassicalStepInfo, OuParams,
};
pub use gaussian::{
    assumptive_estimate, gaussian_filter_step, gaussian_filter_step_with, run_gaussian_filter,
};
pub use hybrid::{
    hybrid_estimate, hybrid_gaussian_step, run_hybrid_filter, HybridModel, HybridState,
    HybridStepInfo, HybridTrajectory,
};
pub use kraus::{kraus_gaussian_step, kraus_poisson_step};
pub use poisson::{
    poisson_estimate, poisson_filter_step, poisson_filter_step_with, run_poisson_filter,
};
