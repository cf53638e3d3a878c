//! Log-likelihood-ratio accumulation, posteriors, thresholds, decisions.
//!
//! The ratio between two hypotheses is accumulated from the same
//! assumptive estimates the filters produce, one increment per record
//! step. The log form is canonical: the linear-scale ratio spans
//! thousands of orders of magnitude over long records, so Lambda is
//! materialized only at decision time.
//!
//! Increments are written so that swapping the hypothesis labels negates
//! the result exactly in floating point: differences of per-hypothesis
//! terms, never ratios folded into a single transcendental call.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::real::{inverse, RMat};
use crate::Result;

/// Binary hypothesis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

/// Prior probabilities of the binary pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Priors {
    pub p0: f64,
    pub p1: f64,
}

impl Priors {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        if !(p0 >= 0.0 && p1 >= 0.0 && (p0 + p1 - 1.0).abs() <= 1e-12) {
            return Err(Error::validation(format!(
                "priors must be nonnegative and sum to 1, got ({p0}, {p1})"
            )));
        }
        Ok(Priors { p0, p1 })
    }

    pub fn flat() -> Self {
        Priors { p0: 0.5, p1: 0.5 }
    }
}

/// Outcome of thresholding one accumulated ratio.
#[derive(Debug, Clone, Copy)]
pub struct Decision {
    pub chosen: Hypothesis,
    /// Log of the threshold the ratio was compared against.
    pub log_gamma: f64,
    pub priors: Priors,
}

/// One increment of the diffusive-record log-likelihood ratio:
/// dy (mu1 - mu0) / R - (dt/2)(mu1^2 - mu0^2) / R.
pub fn gaussian_llr_increment(dy: f64, mu1: f64, mu0: f64, dt: f64, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::validation(format!(
            "observation noise variance must be positive, got {r}"
        )));
    }
    let lin = dy * (mu1 - mu0) / r;
    let quad1 = mu1 * mu1 / r;
    let quad0 = mu0 * mu0 / r;
    Ok(lin - 0.5 * dt * (quad1 - quad0))
}

/// Vector-record version: dy^T R^-1 (mu1 - mu0) minus half the
/// difference of the quadratic forms mu_j^T R^-1 mu_j.
pub fn gaussian_llr_increment_vec(
    dy: ArrayView1<f64>,
    mu1: ArrayView1<f64>,
    mu0: ArrayView1<f64>,
    dt: f64,
    r: &RMat,
) -> Result<f64> {
    let n = dy.len();
    if mu1.len() != n || mu0.len() != n || r.dim() != (n, n) {
        return Err(Error::mismatch(format!(
            "record has {n} channels; estimates are {} and {}, noise matrix {:?}",
            mu1.len(),
            mu0.len(),
            r.dim()
        )));
    }
    let r_inv = inverse(r)?;
    let quad = |a: ArrayView1<f64>, b: ArrayView1<f64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += a[i] * r_inv[[i, j]] * b[j];
            }
        }
        acc
    };
    let diff: Vec<f64> = (0..n).map(|i| mu1[i] - mu0[i]).collect();
    let lin = quad(dy, ArrayView1::from(&diff));
    Ok(lin - 0.5 * dt * (quad(mu1, mu1) - quad(mu0, mu0)))
}

/// One increment of the counting-record log-likelihood ratio:
/// dy (ln mu1 - ln mu0) - dt (mu1 - mu0).
///
/// An event with a zero rate under one hypothesis yields a signed
/// infinity (that hypothesis is ruled out); an event impossible under
/// both is an error.
pub fn poisson_llr_increment(dy: f64, mu1: f64, mu0: f64, dt: f64) -> Result<f64> {
    if dy != 0.0 && dy != 1.0 {
        return Err(Error::validation(format!(
            "counting increment must be 0 or 1, got {dy}"
        )));
    }
    if mu1 < 0.0 || mu0 < 0.0 {
        return Err(Error::validation(format!(
            "event rates must be nonnegative, got ({mu1}, {mu0})"
        )));
    }
    let drift = -dt * (mu1 - mu0);
    if dy == 0.0 {
        return Ok(drift);
    }
    match (mu1 > 0.0, mu0 > 0.0) {
        (true, true) => Ok(mu1.ln() - mu0.ln() + drift),
        (false, true) => Ok(f64::NEG_INFINITY),
        (true, false) => Ok(f64::INFINITY),
        (false, false) => Err(Error::NumericalFault(
            "observed event has zero rate under both hypotheses".to_string(),
        )),
    }
}

/// One retained sample of the running ratio.
#[derive(Debug, Clone, Copy)]
pub struct LlrSample {
    pub t: f64,
    pub mu1: f64,
    pub mu0: f64,
    pub log_lambda: f64,
}

/// Running log-likelihood ratio with optional per-step history.
///
/// Once an impossible counting event drives the ratio to a signed
/// infinity, the ratio is decided and stays there: later increments are
/// recorded in the history but no longer move the total, so a trial
/// always ends with a deterministic, NaN-free value.
#[derive(Debug, Clone)]
pub struct LLRAccumulator {
    log_lambda: f64,
    history: Option<Vec<LlrSample>>,
}

impl LLRAccumulator {
    pub fn new(track_history: bool) -> Self {
        LLRAccumulator {
            log_lambda: 0.0,
            history: if track_history { Some(Vec::new()) } else { None },
        }
    }

    /// Add one increment (time and estimates are kept for the history).
    pub fn add(&mut self, t: f64, mu1: f64, mu0: f64, increment: f64) {
        if self.log_lambda.is_finite() {
            self.log_lambda += increment;
        }
        if let Some(h) = &mut self.history {
            h.push(LlrSample {
                t,
                mu1,
                mu0,
                log_lambda: self.log_lambda,
            });
        }
    }

    pub fn log_lambda(&self) -> f64 {
        self.log_lambda
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    /// True if an impossible event fixed the ratio at a signed infinity.
    pub fn is_infinite(&self) -> bool {
        self.log_lambda.is_infinite()
    }

    pub fn history(&self) -> Option<&[LlrSample]> {
        self.history.as_deref()
    }
}

/// Posterior pair (P(H1|Y), P(H0|Y)) from the log ratio, computed in
/// logistic form so extreme ratios saturate cleanly at 0 and 1.
pub fn posterior(priors: &Priors, log_lambda: f64) -> Result<(f64, f64)> {
    if log_lambda.is_nan() {
        return Err(Error::NumericalFault(
            "log-likelihood ratio is NaN".to_string(),
        ));
    }
    if priors.p1 == 0.0 && log_lambda == f64::INFINITY {
        return Err(Error::NumericalFault(
            "posterior mass is zero under both hypotheses".to_string(),
        ));
    }
    // P(H1|Y) = 1 / (1 + exp(-(log_lambda + ln(p1/p0)))).
    let logit = log_lambda + priors.p1.ln() - priors.p0.ln();
    let p1 = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    Ok((p1, 1.0 - p1))
}

/// Posteriors over K hypotheses from K-1 log ratios against the first
/// hypothesis (the first entry has an implicit ratio of one).
pub fn multi_posterior(priors: &[f64], log_ratios_vs_first: &[f64]) -> Result<Vec<f64>> {
    let k = priors.len();
    if k < 2 || log_ratios_vs_first.len() != k - 1 {
        return Err(Error::mismatch(format!(
            "need K >= 2 priors and K-1 ratios, got {} and {}",
            k,
            log_ratios_vs_first.len()
        )));
    }
    let sum: f64 = priors.iter().sum();
    if priors.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::validation(
            "priors must be nonnegative and sum to 1".to_string(),
        ));
    }
    // Log posterior weights, stabilized by subtracting the maximum.
    let mut logw = Vec::with_capacity(k);
    for (i, &p) in priors.iter().enumerate() {
        let ratio = if i == 0 { 0.0 } else { log_ratios_vs_first[i - 1] };
        if ratio.is_nan() {
            return Err(Error::NumericalFault("log ratio is NaN".to_string()));
        }
        logw.push(if p == 0.0 { f64::NEG_INFINITY } else { p.ln() + ratio });
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::NumericalFault(
            "posterior mass is zero under every hypothesis".to_string(),
        ));
    }
    let weights: Vec<f64> = logw.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Threshold the ratio: choose the alternative iff
/// log_lambda >= log_gamma (the boundary goes to the alternative).
pub fn decide(log_lambda: f64, log_gamma: f64) -> Hypothesis {
    if log_lambda >= log_gamma {
        Hypothesis::Alternative
    } else {
        Hypothesis::Null
    }
}

/// Decision bundled with the threshold and priors that produced it.
pub fn decide_with(priors: &Priors, log_lambda: f64, log_gamma: f64) -> Decision {
    Decision {
        chosen: decide(log_lambda, log_gamma),
        log_gamma,
        priors: *priors,
    }
}

/// Log threshold minimizing the Bayes risk
/// a P(choose H0, H1 true) + b P(choose H1, H0 true):
/// gamma = b p0 / (a p1).
pub fn bayes_log_threshold(cost_miss: f64, cost_false_alarm: f64, priors: &Priors) -> Result<f64> {
    if cost_miss <= 0.0 || cost_false_alarm <= 0.0 {
        return Err(Error::validation(format!(
            "cost weights must be positive, got ({cost_miss}, {cost_false_alarm})"
        )));
    }
    if priors.p0 == 0.0 || priors.p1 == 0.0 {
        return Err(Error::validation(
            "Bayes threshold needs both priors positive".to_string(),
        ));
    }
    Ok((cost_false_alarm * priors.p0).ln() - (cost_miss * priors.p1).ln())
}

/// Empirical Neyman-Pearson log threshold: the smallest value t such
/// that the fraction of the given null-hypothesis ratio samples with
/// log_lambda >= t does not exceed the false-alarm budget.
pub fn neyman_pearson_log_threshold(h0_log_lambdas: &[f64], alpha: f64) -> Result<f64> {
    if h0_log_lambdas.is_empty() {
        return Err(Error::validation(
            "need at least one null-hypothesis sample".to_string(),
        ));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::validation(format!(
            "false-alarm budget must lie in (0, 1), got {alpha}"
        )));
    }
    if h0_log_lambdas.iter().any(|v| v.is_nan()) {
        return Err(Error::NumericalFault("ratio sample is NaN".to_string()));
    }
    let mut sorted = h0_log_lambdas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    // Allow at most floor(alpha n) samples at or above the threshold.
    let allowed = (alpha * n as f64).floor() as usize;
    if allowed == 0 {
        // Even the largest sample must fall below the threshold.
        let top = sorted[n - 1];
        return Ok(if top.is_finite() {
            top + 1e-9 * top.abs().max(1.0)
        } else {
            top
        });
    }
    // Threshold at the (allowed)-th largest sample: that sample and any
    // above it are flagged, totaling at most `allowed` under continuity.
    Ok(sorted[n - allowed])
}
