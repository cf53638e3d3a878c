//! Operators on a truncated Fock space and Lindblad generators.
//!
//! All constructors take the truncation dimension `dim` (number of retained
//! Fock levels) and return dense matrices. Truncation artifacts are
//! deliberate and documented where they matter: products such as `a a^dag`
//! lose their top matrix element, so identities like `[a, a^dag] = I` hold
//! only on the lower block.

use num_complex::Complex64;

use crate::error::Error;
use crate::linalg::{anticommutator, commutator, cr, dagger, matmul, trace_of_product, CMat, C_I};
use crate::Result;

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

/// Annihilation operator: `a |n> = sqrt(n) |n-1>`.
pub fn annihilation(dim: usize) -> Result<CMat> {
    check_dim(dim)?;
    let mut a = CMat::zeros((dim, dim));
    for n in 1..dim {
        a[[n - 1, n]] = cr((n as f64).sqrt());
    }
    Ok(a)
}

/// Number operator `a^dag a = diag(0, 1, ..., dim-1)`.
pub fn number(dim: usize) -> Result<CMat> {
    check_dim(dim)?;
    let mut n_op = CMat::zeros((dim, dim));
    for n in 0..dim {
        n_op[[n, n]] = cr(n as f64);
    }
    Ok(n_op)
}

/// Position quadrature `q = (a + a^dag) / sqrt(2)`.
pub fn position(dim: usize) -> Result<CMat> {
    let a = annihilation(dim)?;
    let ad = dagger(&a);
    Ok((a + ad) * cr(1.0 / 2f64.sqrt()))
}

/// Momentum quadrature `p = (a - a^dag) / (i sqrt(2))`.
pub fn momentum(dim: usize) -> Result<CMat> {
    let a = annihilation(dim)?;
    let ad = dagger(&a);
    Ok((a - ad) * (C_I * cr(2f64.sqrt())).inv())
}

/// Rotated quadrature `q cos(theta) + p sin(theta)`.
pub fn quadrature(dim: usize, theta: f64) -> Result<CMat> {
    let q = position(dim)?;
    let p = momentum(dim)?;
    Ok(q * cr(theta.cos()) + p * cr(theta.sin()))
}

/// Symmetrized energy `(a^dag a + a a^dag) / 2`.
///
/// Diagonal with entries `n + 1/2`, except the top level which truncates to
/// `(dim - 1) / 2` because `a a^dag` loses its highest matrix element.
pub fn energy(dim: usize) -> Result<CMat> {
    let a = annihilation(dim)?;
    let ad = dagger(&a);
    Ok((matmul(&ad, &a) + matmul(&a, &ad)) * cr(0.5))
}

/// Fock basis state `|n><n|`.
pub fn fock_state(dim: usize, n: usize) -> Result<CMat> {
    check_dim(dim)?;
    if n >= dim {
        return Err(Error::validation(format!(
            "Fock level {} out of range for dim {}",
            n, dim
        )));
    }
    let mut rho = CMat::zeros((dim, dim));
    rho[[n, n]] = cr(1.0);
    Ok(rho)
}

/// Thermal state with mean occupation `n_bar`, renormalized on the
/// truncated space. Diagonal with Gibbs ratio `n_bar / (n_bar + 1)`
/// between adjacent levels.
pub fn thermal_state(dim: usize, n_bar: f64) -> Result<CMat> {
    check_dim(dim)?;
    if n_bar < 0.0 {
        return Err(Error::validation(format!(
            "thermal occupation must be nonnegative, got {}",
            n_bar
        )));
    }
    let mut rho = CMat::zeros((dim, dim));
    if n_bar == 0.0 {
        rho[[0, 0]] = cr(1.0);
        return Ok(rho);
    }
    let ratio = n_bar / (n_bar + 1.0);
    let mut weight = 1.0;
    let mut total = 0.0;
    for n in 0..dim {
        rho[[n, n]] = cr(weight);
        total += weight;
        weight *= ratio;
    }
    Ok(rho / cr(total))
}

/// Coherent state `|alpha><alpha|`, renormalized on the truncated space.
pub fn coherent_state(dim: usize, alpha: Complex64) -> Result<CMat> {
    check_dim(dim)?;
    let mut amp = vec![Complex64::new(0.0, 0.0); dim];
    amp[0] = cr(1.0);
    for n in 1..dim {
        amp[n] = amp[n - 1] * alpha / cr((n as f64).sqrt());
    }
    let norm_sq: f64 = amp.iter().map(|z| z.norm_sqr()).sum();
    let mut rho = CMat::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..dim {
            rho[[i, j]] = amp[i] * amp[j].conj() / cr(norm_sq);
        }
    }
    Ok(rho)
}

/// Expectation value `tr(rho op)`.
pub fn expectation(rho: &CMat, op: &CMat) -> Complex64 {
    trace_of_product(rho, op)
}

/// Population of the top retained Fock level. Used as a truncation-leakage
/// monitor: a state well inside the truncation keeps this near zero.
pub fn leakage(rho: &CMat) -> f64 {
    let d = rho.nrows();
    rho[[d - 1, d - 1]].re
}

/// First and symmetrized second quadrature moments of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMoments {
    pub mean_q: f64,
    pub mean_p: f64,
    /// Symmetric covariance of (q, p): row-major 2x2.
    pub cov: [[f64; 2]; 2],
}

/// Quadrature moments of a normalized state: means of q and p and the
/// symmetrized covariance `cov[0][1] = <(qp + pq)/2> - <q><p>`.
pub fn moments(rho: &CMat) -> Result<StateMoments> {
    let dim = rho.nrows();
    check_dim(dim)?;
    let tr = crate::linalg::trace(rho).re;
    if (tr - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitTrace(tr));
    }
    let q = position(dim)?;
    let p = momentum(dim)?;
    let mean_q = expectation(rho, &q).re;
    let mean_p = expectation(rho, &p).re;
    let qq = expectation(rho, &matmul(&q, &q)).re;
    let pp = expectation(rho, &matmul(&p, &p)).re;
    let qp_sym = expectation(rho, &(anticommutator(&q, &p) * cr(0.5))).re;
    let cqq = qq - mean_q * mean_q;
    let cpp = pp - mean_p * mean_p;
    let cqp = qp_sym - mean_q * mean_p;
    Ok(StateMoments {
        mean_q,
        mean_p,
        cov: [[cqq, cqp], [cqp, cpp]],
    })
}

/// Lindblad generator with Hamiltonian part and weighted jump channels.
///
/// `apply` evaluates `L(rho) = -i [H, rho] + sum_k gamma_k D[L_k] rho`
/// with `D[L] rho = L rho L^dag - (L^dag L rho + rho L^dag L) / 2`.
#[derive(Debug, Clone)]
pub struct Lindblad {
    dim: usize,
    hamiltonian: Option<CMat>,
    /// Jump operators pre-scaled by sqrt(rate).
    scaled_jumps: Vec<CMat>,
    /// Half the summed damping operator, `sum_k gamma_k L_k^dag L_k / 2`.
    half_damping: CMat,
}

impl Lindblad {
    /// Build a generator from a Hamiltonian and `(rate, operator)` jumps.
    pub fn new(dim: usize, hamiltonian: Option<CMat>, jumps: &[(f64, CMat)]) -> Result<Self> {
        check_dim(dim)?;
        if let Some(h) = &hamiltonian {
            if h.dim() != (dim, dim) {
                return Err(Error::mismatch(format!(
                    "Hamiltonian is {:?}, expected ({}, {})",
                    h.dim(),
                    dim,
                    dim
                )));
            }
        }
        let mut scaled = Vec::with_capacity(jumps.len());
        let mut half_damping = CMat::zeros((dim, dim));
        for (rate, op) in jumps {
            if *rate < 0.0 {
                return Err(Error::validation(format!(
                    "jump rate must be nonnegative, got {}",
                    rate
                )));
            }
            if op.dim() != (dim, dim) {
                return Err(Error::mismatch(format!(
                    "jump operator is {:?}, expected ({}, {})",
                    op.dim(),
                    dim,
                    dim
                )));
            }
            let l = op * cr(rate.sqrt());
            half_damping = half_damping + matmul(&dagger(&l), &l) * cr(0.5);
            scaled.push(l);
        }
        Ok(Lindblad {
            dim,
            hamiltonian,
            scaled_jumps: scaled,
            half_damping,
        })
    }

    /// Generator with no Hamiltonian and no jumps (zero map).
    pub fn trivial(dim: usize) -> Result<Self> {
        Self::new(dim, None, &[])
    }

    /// Thermal reservoir channels at coupling `gamma` and occupation
    /// `n_bar`: downward jumps via `a` at rate `gamma (n_bar + 1)` and
    /// upward jumps via `a^dag` at rate `gamma n_bar`.
    pub fn thermal(dim: usize, gamma: f64, n_bar: f64) -> Result<Self> {
        if gamma < 0.0 || n_bar < 0.0 {
            return Err(Error::validation(format!(
                "thermal parameters must be nonnegative, got gamma={}, n_bar={}",
                gamma, n_bar
            )));
        }
        let a = annihilation(dim)?;
        let ad = dagger(&a);
        Self::new(
            dim,
            None,
            &[(gamma * (n_bar + 1.0), a), (gamma * n_bar, ad)],
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Evaluate the generator on a state.
    pub fn apply(&self, rho: &CMat) -> CMat {
        let mut out = CMat::zeros((self.dim, self.dim));
        if let Some(h) = &self.hamiltonian {
            out = commutator(h, rho) * (-C_I);
        }
        for l in &self.scaled_jumps {
            let l_rho = matmul(l, rho);
            out = out + matmul(&l_rho, &dagger(l));
        }
        out - anticommutator(&self.half_damping, rho)
    }

    /// Jump operators pre-scaled by sqrt(rate).
    pub fn scaled_jumps(&self) -> &[CMat] {
        &self.scaled_jumps
    }
}
