//! Dense complex linear-algebra helpers: Kronecker products, matrix
//! exponentials, and small utilities shared across the crate.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, Solve, UPLO};

use crate::{C64, Error, Result};

/// Kronecker product a (x) b.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::<C64>::zeros((ra * rb, ca * cb));
    for ia in 0..ra {
        for ja in 0..ca {
            let f = a[(ia, ja)];
            if f == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(s![ia * rb..(ia + 1) * rb, ja * cb..(ja + 1) * cb]);
            block.zip_mut_with(b, |o, &x| *o = f * x);
        }
    }
    out
}

/// Conjugate transpose.
pub fn adjoint(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|x| x.conj())
}

/// (a + a^dagger)/2.
pub fn hermitize(a: &Array2<C64>) -> Array2<C64> {
    let ad = adjoint(a);
    (a + &ad).mapv(|x| x * 0.5)
}

/// Max entrywise |a - a^dagger|.
pub fn hermiticity_deviation(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn frobenius(a: &Array2<C64>) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Max entrywise |a - b|.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// 1-norm (max column sum), used by the expm scaling heuristic.
fn one_norm(a: &Array2<C64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|x| x.norm()).sum();
        best = best.max(s);
    }
    best
}

fn identity(n: usize) -> Array2<C64> {
    Array2::eye(n)
}

/// Matrix exponential by scaling-and-squaring with the [13/13] Pade
/// approximant (Higham 2005). Suitable for general complex matrices.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm: square matrix required");
    // Pade-13 coefficients.
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let theta13 = 5.371920351148152;
    let norm = one_norm(a);
    let s = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let a_scaled = a.mapv(|x| x / C64::new(2f64.powi(s), 0.0));

    let a2 = a_scaled.dot(&a_scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let eye = identity(n);

    let u_inner = &a6.mapv(|x| x * B[13])
        + &a4.mapv(|x| x * B[11])
        + &a2.mapv(|x| x * B[9]);
    let u_poly = a6.dot(&u_inner)
        + &a6.mapv(|x| x * B[7])
        + &a4.mapv(|x| x * B[5])
        + &a2.mapv(|x| x * B[3])
        + &eye.mapv(|x| x * B[1]);
    let u = a_scaled.dot(&u_poly);

    let v_inner = &a6.mapv(|x| x * B[12])
        + &a4.mapv(|x| x * B[10])
        + &a2.mapv(|x| x * B[8]);
    let v = a6.dot(&v_inner)
        + &a6.mapv(|x| x * B[6])
        + &a4.mapv(|x| x * B[4])
        + &a2.mapv(|x| x * B[2])
        + &eye.mapv(|x| x * B[0]);

    // Solve (V - U) X = (V + U) column by column.
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = Array2::<C64>::zeros((n, n));
    let f = ndarray_linalg::Factorize::factorize(&lhs)
        .map_err(|e| Error::Singular(format!("expm Pade solve: {e}")))?;
    for j in 0..n {
        let col = rhs.column(j).to_owned();
        let sol = f
            .solve(&col)
            .map_err(|e| Error::Singular(format!("expm Pade solve: {e}")))?;
        x.column_mut(j).assign(&sol);
    }
    for _ in 0..s {
        x = x.dot(&x);
    }
    Ok(x)
}

/// Hermitian eigendecomposition with eigenvectors as columns of the returned
/// matrix, h = V diag(w) V^dagger. The LAPACK binding hands back the
/// eigenvectors of the transposed (row-major vs column-major) matrix, i.e.
/// conjugated; this wrapper detects and corrects that so callers can rely on
/// the column convention.
pub fn eigh_checked(h: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (w, v) = h.eigh(UPLO::Lower)?;
    let col = v.column(0).to_owned();
    let hv = h.dot(&col);
    let res: f64 = hv.iter().zip(col.iter()).map(|(a, b)| (a - b * w[0]).norm()).sum();
    let vc = v.mapv(|x| x.conj());
    let colc = vc.column(0).to_owned();
    let hvc = h.dot(&colc);
    let resc: f64 = hvc.iter().zip(colc.iter()).map(|(a, b)| (a - b * w[0]).norm()).sum();
    if resc < res {
        Ok((w, vc))
    } else {
        Ok((w, v))
    }
}

/// exp(c * h) for Hermitian h, computed by eigendecomposition. Exact up to
/// the eigensolver accuracy; used for unitaries exp(-i theta G).
pub fn expm_hermitian(h: &Array2<C64>, c: C64) -> Result<Array2<C64>> {
    let (w, v) = eigh_checked(h)?;
    let phases: Array1<C64> = w.mapv(|x| (c * x).exp());
    // v * diag(phases) * v^dagger
    let mut scaled = v.clone();
    for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
        let p = phases[j];
        col.map_inplace(|x| *x *= p);
    }
    Ok(scaled.dot(&adjoint(&v)))
}

/// Smallest eigenvalue of a Hermitian matrix (positivity checks).
pub fn min_eigval_hermitian(h: &Array2<C64>) -> Result<f64> {
    let w = ndarray_linalg::EigValsh::eigvalsh(h, UPLO::Lower)?;
    Ok(w.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Solve a x = b for one right-hand side.
pub fn solve(a: &Array2<C64>, b: &Array1<C64>) -> Result<Array1<C64>> {
    Ok(a.solve(b)?)
}
