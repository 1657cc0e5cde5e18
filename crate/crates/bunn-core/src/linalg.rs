//! Dense linear algebra kernels: a Jacobi-rotation symmetric eigensolver and
//! a scaling-and-squaring matrix exponential.
//!
//! Both are deterministic and sized for desk-scale problems (n up to a few
//! thousand for the eigensolver, a few hundred for the exponential). Neither
//! participates in gradient tapes; they back the spectral diffusion path and
//! the test oracles.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Maximum allowed asymmetry for [`sym_eig`] input.
pub const SYM_TOL: f64 = 1e-10;

fn max_asymmetry(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns, so `M = V diag(w) Vᵀ`.
pub fn sym_eig(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "sym_eig needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let asym = max_asymmetry(m);
    // scale tolerance with the matrix magnitude
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if asym > SYM_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = m.clone();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // smaller-magnitude root keeps the rotation angle <= pi/4
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].partial_cmp(&a[[j, j]]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, dst]] = v[[k, src]];
        }
    }
    Ok((eigenvalues, vectors))
}

/// 1-norm (max column sum), used to pick the squaring count.
fn one_norm(m: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..m.ncols() {
        let mut s = 0.0;
        for i in 0..m.nrows() {
            s += m[[i, j]].abs();
        }
        worst = worst.max(s);
    }
    worst
}

/// Matrix exponential via scaling-and-squaring around a degree-18 Taylor core.
pub fn dense_matrix_exp(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix exponential needs a square matrix");
    let norm = one_norm(m);
    // scale so the Taylor argument has norm <= 0.5
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(s as i32);

    let mut result = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=18u32 {
        term = term.dot(&scaled) / k as f64;
        result += &term;
    }
    for _ in 0..s {
        result = result.dot(&result);
    }
    result
}
