//! Classical grid filter for a two-dimensional Ornstein-Uhlenbeck model
//! observed through a function h(x1, x2) in Gaussian noise.
//!
//! The unnormalized posterior density evolves by a Kolmogorov step in
//! conservative (flux) form with zero-flux boundaries, followed by the
//! Ito-form multiplicative observation update g <- g (1 + dy h / R).
//! This is the linear Euler scheme for the unnormalized filtering
//! equation, the same discretization the density-matrix filters apply,
//! so a comparison between the two on one record is dominated by the
//! deterministic truncation error rather than by scheme noise. The
//! multiplier can turn tail cells negative when |dy h| exceeds R; those
//! cells are clamped to zero and their mass is far below the grid
//! truncation error for any usable step size. The log-trace advances by
//! the same Ito increment as the quantum filters, dy mu/R - dt mu^2/(2R),
//! with mu the grid estimate before the step.

use ndarray::Array2;

use crate::error::Error;
use crate::Result;

/// Ornstein-Uhlenbeck parameters shared by both grid axes:
/// dx = -(gamma/2) x dt + sqrt(gamma (n_occ + 1/2)) dW per axis.
#[derive(Debug, Clone, Copy)]
pub struct OuParams {
    pub gamma: f64,
    pub n_occ: f64,
}

impl OuParams {
    /// Diffusion constant of the Kolmogorov equation, gamma(n_occ+1/2)/2.
    pub fn diffusion(&self) -> f64 {
        0.5 * self.gamma * (self.n_occ + 0.5)
    }

    /// Stationary variance per axis.
    pub fn stationary_variance(&self) -> f64 {
        self.n_occ + 0.5
    }
}

/// Nonnegative density on a cell-centered rectangular grid, kept
/// normalized to unit mass, plus the accumulated log-trace.
#[derive(Debug, Clone)]
pub struct ClassicalGridState {
    pub n1: usize,
    pub n2: usize,
    pub h1: f64,
    pub h2: f64,
    /// Cell-center coordinates along each axis.
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Density values, shape (n1, n2), normalized so sum * h1 * h2 = 1.
    pub g: Array2<f64>,
    pub log_trace: f64,
}

impl ClassicalGridState {
    /// Cell-centered grid on [-half1, half1] x [-half2, half2] filled
    /// from a density function, then normalized.
    pub fn from_density(
        n1: usize,
        n2: usize,
        half1: f64,
        half2: f64,
        density: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if n1 < 4 || n2 < 4 {
            return Err(Error::validation(format!(
                "grid must be at least 4x4, got {n1}x{n2}"
            )));
        }
        if half1 <= 0.0 || half2 <= 0.0 {
            return Err(Error::validation(
                "grid half-widths must be positive".to_string(),
            ));
        }
        let h1 = 2.0 * half1 / n1 as f64;
        let h2 = 2.0 * half2 / n2 as f64;
        let x1: Vec<f64> = (0..n1).map(|i| -half1 + (i as f64 + 0.5) * h1).collect();
        let x2: Vec<f64> = (0..n2).map(|j| -half2 + (j as f64 + 0.5) * h2).collect();
        let mut g = Array2::zeros((n1, n2));
        for i in 0..n1 {
            for j in 0..n2 {
                let v = density(x1[i], x2[j]);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::validation(format!(
                        "density must be finite and nonnegative, got {v} at ({}, {})",
                        x1[i], x2[j]
                    )));
                }
                g[[i, j]] = v;
            }
        }
        let mass: f64 = g.sum() * h1 * h2;
        if mass <= 0.0 {
            return Err(Error::validation("density has zero mass".to_string()));
        }
        g /= mass;
        Ok(ClassicalGridState {
            n1,
            n2,
            h1,
            h2,
            x1,
            x2,
            g,
            log_trace: 0.0,
        })
    }

    /// Stationary Gaussian prior of the OU pair on a grid sized
    /// `halfwidth_sigmas` standard deviations per side.
    pub fn stationary_prior(
        n1: usize,
        n2: usize,
        ou: &OuParams,
        halfwidth_sigmas: f64,
    ) -> Result<Self> {
        let var = ou.stationary_variance();
        let half = halfwidth_sigmas * var.sqrt();
        Self::from_density(n1, n2, half, half, |a, b| {
            (-(a * a + b * b) / (2.0 * var)).exp()
        })
    }

    /// Sample the observation function on this grid.
    pub fn sample_observable(&self, h_fn: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        let mut h = Array2::zeros((self.n1, self.n2));
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                h[[i, j]] = h_fn(self.x1[i], self.x2[j]);
            }
        }
        h
    }

    /// Points per standard deviation of the OU stationary spread.
    pub fn resolution(&self, ou: &OuParams) -> f64 {
        let sigma = ou.stationary_variance().sqrt();
        sigma / self.h1.max(self.h2)
    }

    /// Fraction of mass sitting in the outermost cell ring.
    pub fn boundary_mass_fraction(&self) -> f64 {
        let total: f64 = self.g.sum();
        if total <= 0.0 {
            return 1.0;
        }
        let mut edge = 0.0;
        for i in 0..self.n1 {
            edge += self.g[[i, 0]] + self.g[[i, self.n2 - 1]];
        }
        for j in 1..self.n2 - 1 {
            edge += self.g[[0, j]] + self.g[[self.n1 - 1, j]];
        }
        edge / total
    }

    /// Grid mean of an observable array under the current density.
    pub fn grid_mean(&self, values: &Array2<f64>) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                num += values[[i, j]] * self.g[[i, j]];
                den += self.g[[i, j]];
            }
        }
        num / den
    }

    /// Grid variance of axis 1 (for stationarity checks).
    pub fn variance_axis1(&self) -> f64 {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let mut den = 0.0;
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let w = self.g[[i, j]];
                m1 += self.x1[i] * w;
                m2 += self.x1[i] * self.x1[i] * w;
                den += w;
            }
        }
        let mean = m1 / den;
        m2 / den - mean * mean
    }
}

/// Per-step outcome of the grid filter.
#[derive(Debug, Clone, Copy)]
pub struct ClassicalStepInfo {
    /// Grid estimate of h before the step.
    pub mu: f64,
    /// Mass ratio of the raw update before renormalization.
    pub mass_ratio: f64,
    /// A negative value beyond -1e-10 max(g) was clamped this step.
    pub warned: bool,
    pub boundary_mass_fraction: f64,
}

/// Estimate of the observable: sum(h g) / sum(g) over the grid.
pub fn classical_estimate(h_grid: &Array2<f64>, state: &ClassicalGridState) -> Result<f64> {
    if h_grid.dim() != state.g.dim() {
        return Err(Error::mismatch(format!(
            "observable grid {:?} does not match density grid {:?}",
            h_grid.dim(),
            state.g.dim()
        )));
    }
    let den: f64 = state.g.sum();
    if den <= 0.0 {
        return Err(Error::NumericalFault(
            "grid density has nonpositive mass".to_string(),
        ));
    }
    let mut num = 0.0;
    for (hv, gv) in h_grid.iter().zip(state.g.iter()) {
        num += hv * gv;
    }
    Ok(num / den)
}

/// Advance the Kolmogorov part in conservative flux form with zero-flux
/// boundaries. Exactly mass-conserving.
fn kolmogorov_apply(ou: &OuParams, state: &ClassicalGridState, dt: f64) -> Array2<f64> {
    let (n1, n2) = (state.n1, state.n2);
    let d = ou.diffusion();
    let drift = -0.5 * ou.gamma; // dx = drift * x dt
    let mut out = state.g.clone();

    // Axis 1 faces between rows i and i+1.
    for j in 0..n2 {
        let mut flux_prev = 0.0; // zero-flux outer boundary
        for i in 0..n1 {
            let flux_next = if i + 1 < n1 {
                let x_face = 0.5 * (state.x1[i] + state.x1[i + 1]);
                drift * x_face * 0.5 * (state.g[[i, j]] + state.g[[i + 1, j]])
                    - d * (state.g[[i + 1, j]] - state.g[[i, j]]) / state.h1
            } else {
                0.0
            };
            out[[i, j]] -= dt / state.h1 * (flux_next - flux_prev);
            flux_prev = flux_next;
        }
    }
    // Axis 2 faces between columns j and j+1 (using the pre-step density;
    // the two axis updates commute to first order in dt).
    for i in 0..n1 {
        let mut flux_prev = 0.0;
        for j in 0..n2 {
            let flux_next = if j + 1 < n2 {
                let x_face = 0.5 * (state.x2[j] + state.x2[j + 1]);
                drift * x_face * 0.5 * (state.g[[i, j]] + state.g[[i, j + 1]])
                    - d * (state.g[[i, j + 1]] - state.g[[i, j]]) / state.h2
            } else {
                0.0
            };
            out[[i, j]] -= dt / state.h2 * (flux_next - flux_prev);
            flux_prev = flux_next;
        }
    }
    out
}

/// One grid-filter step: Kolmogorov drift/diffusion, multiplicative
/// observation update, renormalization, and log-trace bookkeeping.
pub fn classical_dmz_step(
    h_grid: &Array2<f64>,
    ou: &OuParams,
    state: &ClassicalGridState,
    dy: f64,
    dt: f64,
    r_noise: f64,
    boundary_ceiling: f64,
) -> Result<(ClassicalGridState, ClassicalStepInfo)> {
    if dt <= 0.0 {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    if r_noise <= 0.0 {
        return Err(Error::validation(format!(
            "observation noise variance must be positive, got {r_noise}"
        )));
    }
    // Explicit-scheme stability bound for the diffusion part.
    let cfl = dt * ou.diffusion() * (1.0 / (state.h1 * state.h1) + 1.0 / (state.h2 * state.h2));
    if cfl > 0.5 {
        return Err(Error::StepSize(format!(
            "diffusion stability number {cfl:.3} exceeds 0.5; reduce dt or coarsen the grid"
        )));
    }

    let mu = classical_estimate(h_grid, state)?;
    let mut g = kolmogorov_apply(ou, state, dt);

    // Clamp stray negatives from the drift stencil.
    let gmax = g.iter().cloned().fold(0.0f64, f64::max);
    let mut warned = false;
    for v in g.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 * gmax {
                warned = true;
            }
            *v = 0.0;
        }
    }

    // Ito-form multiplicative observation update; clamp tail cells the
    // linear multiplier drives negative.
    for (v, hv) in g.iter_mut().zip(h_grid.iter()) {
        *v *= (1.0 + dy * hv / r_noise).max(0.0);
    }

    let mass: f64 = g.sum() * state.h1 * state.h2;
    if !mass.is_finite() || mass <= 0.0 {
        return Err(Error::NumericalFault(format!(
            "grid mass became {mass:.3e}"
        )));
    }
    g /= mass;

    let next = ClassicalGridState {
        n1: state.n1,
        n2: state.n2,
        h1: state.h1,
        h2: state.h2,
        x1: state.x1.clone(),
        x2: state.x2.clone(),
        g,
        log_trace: state.log_trace + dy * mu / r_noise - dt * mu * mu / (2.0 * r_noise),
    };
    let boundary = next.boundary_mass_fraction();
    if boundary > boundary_ceiling {
        return Err(Error::GridTooSmall(boundary, boundary_ceiling));
    }
    Ok((
        next,
        ClassicalStepInfo {
            mu,
            mass_ratio: mass,
            warned,
            boundary_mass_fraction: boundary,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ou() -> OuParams {
        OuParams {
            gamma: 1.0,
            n_occ: 0.5,
        }
    }

    #[test]
    fn zero_observable_conserves_mass() {
        let state = ClassicalGridState::stationary_prior(48, 48, &ou(), 6.0).unwrap();
        let h = Array2::zeros((48, 48));
        let (next, info) = classical_dmz_step(&h, &ou(), &state, 0.3, 1e-3, 1.0, 1e-5).unwrap();
        assert_abs_diff_eq!(info.mass_ratio, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(next.log_trace, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(info.mu, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn stationary_variance_is_preserved() {
        // h = 0: pure Kolmogorov evolution from the stationary prior
        // keeps the axis variance at n_occ + 1/2 within 2% over t = 5/gamma.
        let p = ou();
        let mut state = ClassicalGridState::stationary_prior(64, 64, &p, 6.0).unwrap();
        let h = Array2::zeros((64, 64));
        let dt = 2e-3;
        let steps = (5.0 / p.gamma / dt) as usize;
        for _ in 0..steps {
            state = classical_dmz_step(&h, &p, &state, 0.0, dt, 1.0, 1e-5)
                .unwrap()
                .0;
        }
        let var = state.variance_axis1();
        let expect = p.stationary_variance();
        assert!(
            (var / expect - 1.0).abs() < 0.02,
            "variance {var:.4} vs {expect:.4}"
        );
    }

    #[test]
    fn odd_observable_on_symmetric_density_reads_zero() {
        let state = ClassicalGridState::stationary_prior(32, 32, &ou(), 6.0).unwrap();
        let h = state.sample_observable(|a, _| a);
        assert_abs_diff_eq!(
            classical_estimate(&h, &state).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn quadratic_observable_reads_thermal_energy() {
        let p = ou();
        let state = ClassicalGridState::stationary_prior(96, 96, &p, 7.0).unwrap();
        let h = state.sample_observable(|a, b| 0.5 * (a * a + b * b));
        let mu = classical_estimate(&h, &state).unwrap();
        assert_abs_diff_eq!(mu, p.stationary_variance(), epsilon = 1e-4);
    }

    #[test]
    fn point_mass_reads_observable_value() {
        // Concentrate the density at the cell nearest (1, 0).
        let state = ClassicalGridState::from_density(64, 64, 3.0, 3.0, |a, b| {
            let d = (a - 1.0).powi(2) + b * b;
            (-d / 1e-4).exp()
        })
        .unwrap();
        let h = state.sample_observable(|a, _| a);
        let mu = classical_estimate(&h, &state).unwrap();
        assert_abs_diff_eq!(mu, 1.0, epsilon = 0.05);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let p = OuParams {
            gamma: 100.0,
            n_occ: 0.5,
        };
        let state = ClassicalGridState::stationary_prior(64, 64, &p, 6.0).unwrap();
        let h = Array2::zeros((64, 64));
        assert!(matches!(
            classical_dmz_step(&h, &p, &state, 0.0, 1.0, 1.0, 1e-5),
            Err(Error::StepSize(_))
        ));
    }

    #[test]
    fn resolution_meets_guideline() {
        let p = ou();
        let state = ClassicalGridState::stationary_prior(96, 96, &p, 6.0).unwrap();
        assert!(state.resolution(&p) >= 8.0);
    }
}
