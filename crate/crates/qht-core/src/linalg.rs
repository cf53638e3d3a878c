//! Dense complex linear algebra helpers.
//!
//! Matrices are `ndarray::Array2<Complex64>` in row-major layout. The
//! eigensolver is a cyclic Jacobi iteration specialized to Hermitian
//! matrices; it avoids an external LAPACK link while staying accurate to
//! near machine precision for the moderate dimensions (d <= 64) used here.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::Error;
use crate::Result;

/// Dense complex matrix.
pub type CMat = Array2<Complex64>;
/// Dense complex vector.
pub type CVec = Array1<Complex64>;

/// Complex zero.
pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Complex one.
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);
/// Imaginary unit.
pub const C_I: Complex64 = Complex64::new(0.0, 1.0);

/// Real scalar as a complex number.
#[inline]
pub fn cr(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Conjugate transpose.
pub fn dagger(m: &CMat) -> CMat {
    let (r, c) = m.dim();
    let mut out = CMat::zeros((c, r));
    for i in 0..r {
        for j in 0..c {
            out[[j, i]] = m[[i, j]].conj();
        }
    }
    out
}

/// Matrix product. Central chokepoint so the backing kernel can be swapped.
#[inline]
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    a.dot(b)
}

/// Commutator [a, b] = ab - ba.
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    matmul(a, b) - matmul(b, a)
}

/// Anticommutator {a, b} = ab + ba.
pub fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    matmul(a, b) + matmul(b, a)
}

/// Matrix trace.
pub fn trace(m: &CMat) -> Complex64 {
    m.diag().sum()
}

/// Trace of a matrix product, computed without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> Complex64 {
    let n = a.nrows();
    let mut acc = C_ZERO;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[[i, k]] * b[[k, i]];
        }
    }
    acc
}

/// Largest absolute entry of m - m^dag; zero for exactly Hermitian matrices.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[[i, j]] - m[[j, i]].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Replace m by its Hermitian part (m + m^dag) / 2 in place.
pub fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[[i, i]] = cr(m[[i, i]].re);
        for j in (i + 1)..n {
            let avg = (m[[i, j]] + m[[j, i]].conj()) * cr(0.5);
            m[[i, j]] = avg;
            m[[j, i]] = avg.conj();
        }
    }
}

/// Frobenius norm.
pub fn frob_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest absolute entry.
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Identity matrix of size n.
pub fn eye(n: usize) -> CMat {
    CMat::eye(n)
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching unitary whose
/// columns are eigenvectors, so `m = V diag(w) V^dag`. The input must be
/// Hermitian to within roundoff; the strictly lower triangle is ignored.
pub fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::mismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let mut a = m.clone();
    hermitize(&mut a);
    let mut v = eye(n);
    if n == 1 {
        return Ok((vec![a[[0, 0]].re], v));
    }

    let scale = frob_norm(&a).max(1.0);
    let tol = 1e-14 * scale;
    let max_sweeps = 60;

    for _sweep in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let zpq = a[[p, q]];
                let g = zpq.norm();
                if g <= 1e-300 {
                    continue;
                }
                // Phase pulls the pivot onto the real axis; the rest is a
                // standard real Jacobi rotation on [[app, g], [g, aqq]].
                let phase = zpq / cr(g);
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let theta = (aqq - app) / (2.0 * g);
                // Smaller root of t^2 - 2 theta t - 1 = 0 keeps rotations stable.
                let t = if theta >= 0.0 {
                    -1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let cs = cr(c);
                let sp = cr(s) * phase; // s * e^{i phi}
                let spc = sp.conj();

                // Columns p, q of a: right-multiplication by the rotation.
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = cs * akp + spc * akq;
                    a[[k, q]] = -sp * akp + cs * akq;
                }
                // Rows p, q of a: left-multiplication by the adjoint.
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = cs * apk + sp * aqk;
                    a[[q, k]] = -spc * apk + cs * aqk;
                }
                a[[p, q]] = C_ZERO;
                a[[q, p]] = C_ZERO;
                a[[p, p]] = cr(a[[p, p]].re);
                a[[q, q]] = cr(a[[q, q]].re);

                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = cs * vkp + spc * vkq;
                    v[[k, q]] = -sp * vkp + cs * vkq;
                }
            }
        }
    }

    let mut off = 0.0f64;
    for p in 0..n {
        for q in (p + 1)..n {
            off += a[[p, q]].norm_sqr();
        }
    }
    if off.sqrt() > 1e-10 * scale {
        return Err(Error::NumericalFault(format!(
            "Jacobi eigensolver failed to converge: off-diagonal norm {:.3e}",
            off.sqrt()
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let w: Vec<f64> = (0..n).map(|i| a[[i, i]].re).collect();
    order.sort_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| w[i]).collect();
    let mut vecs = CMat::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vecs[[k, new_col]] = v[[k, old_col]];
        }
    }
    Ok((eigvals, vecs))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> Result<f64> {
    let (w, _) = hermitian_eigen(m)?;
    Ok(w[0])
}

/// Clamp negative eigenvalues of a Hermitian matrix to zero and rebuild.
pub fn clamp_negative_eigenvalues(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    let (w, v) = hermitian_eigen(m)?;
    let mut out = CMat::zeros((n, n));
    for (idx, &wi) in w.iter().enumerate() {
        let wi = wi.max(0.0);
        if wi == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += cr(wi) * v[[i, idx]] * v[[j, idx]].conj();
            }
        }
    }
    Ok(out)
}

/// Dense real matrix helpers for the linear-Gaussian models.
pub mod real {
    use ndarray::Array2;

    use crate::error::Error;
    use crate::Result;

    /// Dense real matrix.
    pub type RMat = Array2<f64>;

    /// Matrix inverse by Gauss-Jordan elimination with partial pivoting.
    /// Intended for the small (d <= 8) covariance blocks used here.
    pub fn inverse(m: &RMat) -> Result<RMat> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::mismatch(format!(
                "inverse needs a square matrix, got {}x{}",
                n,
                m.ncols()
            )));
        }
        let mut a = m.clone();
        let mut inv = RMat::eye(n);
        for col in 0..n {
            let mut piv = col;
            for r in (col + 1)..n {
                if a[[r, col]].abs() > a[[piv, col]].abs() {
                    piv = r;
                }
            }
            if a[[piv, col]].abs() < 1e-300 {
                return Err(Error::NumericalFault(
                    "singular matrix in inverse".to_string(),
                ));
            }
            if piv != col {
                for k in 0..n {
                    a.swap([col, k], [piv, k]);
                    inv.swap([col, k], [piv, k]);
                }
            }
            let d = a[[col, col]];
            for k in 0..n {
                a[[col, k]] /= d;
                inv[[col, k]] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[[r, col]];
                if f == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[[r, k]] -= f * a[[col, k]];
                    inv[[r, k]] -= f * inv[[col, k]];
                }
            }
        }
        Ok(inv)
    }

    /// Symmetrize in place: m <- (m + m^T) / 2.
    pub fn symmetrize(m: &mut RMat) {
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
                m[[i, j]] = avg;
                m[[j, i]] = avg;
            }
        }
    }
}
