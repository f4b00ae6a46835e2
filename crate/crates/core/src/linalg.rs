//! Dense matrix helpers: the matrix exponential, symmetric spectral
//! decompositions and small utilities on `DMatrix<f64>`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

// Padé(13) coefficients and the corresponding 1-norm bound (Higham 2005).
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` by scaling and squaring with the diagonal Padé approximant of
/// degree 13.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Numerical("expm of a non-square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("expm of a matrix with non-finite entries".into()));
    }
    let nrm = norm1(a);
    let s = if nrm > THETA13 {
        (nrm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Numerical("singular denominator in the Padé approximant".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Eigen-decomposition `A = Q diag(λ) Qᵀ` of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricSpectral {
    pub q: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl SymmetricSpectral {
    /// Fails unless `a` is symmetric to a relative tolerance of `1e-12`.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let scale = a.amax().max(f64::MIN_POSITIVE);
        let asym = (a - a.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::Numerical(format!(
                "matrix is not symmetric (max asymmetry {asym:.3e}, scale {scale:.3e})"
            )));
        }
        let sym = (a + a.transpose()) * 0.5;
        let e = sym.symmetric_eigen();
        Ok(SymmetricSpectral {
            q: e.eigenvectors,
            lambda: e.eigenvalues,
        })
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut qf = self.q.clone();
        for (j, mut col) in qf.column_iter_mut().enumerate() {
            col *= f(self.lambda[j]);
        }
        qf * self.q.transpose()
    }

    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        self.apply(|l| (t * l).exp())
    }
}

pub fn row_sums(a: &DMatrix<f64>) -> Vec<f64> {
    a.row_iter().map(|r| r.sum()).collect()
}

/// `max |a - b|` entrywise.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Sets entries in `[-tol, 0)` to zero; fails if any entry is below `-tol`.
pub fn clip_negative(a: &mut DMatrix<f64>, tol: f64) -> Result<()> {
    let mut worst = 0.0f64;
    for v in a.iter_mut() {
        if *v < 0.0 {
            worst = worst.min(*v);
            *v = 0.0;
        }
    }
    if worst < -tol {
        return Err(Error::Numerical(format!(
            "matrix has a negative entry {worst:.3e} beyond the clip tolerance {tol:.1e}"
        )));
    }
    Ok(())
}

/// Row vector times matrix.
pub fn vec_mat(v: &[f64], a: &DMatrix<f64>) -> Vec<f64> {
    let r = DVector::from_column_slice(v).transpose() * a;
    r.iter().copied().collect()
}

pub fn mat_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let r = a * DVector::from_column_slice(v);
    r.iter().copied().collect()
}
