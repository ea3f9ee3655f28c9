//! Thin wrappers around the dense linear-algebra backend.

pub use faer::c64;
use faer::linalg::solvers::PartialPivLu;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Eigendecomposition of a real symmetric matrix. Eigenvalues come back in
/// nondecreasing order with eigenvectors as matching columns.
pub fn eigh_real(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let vals: Vec<f64> = (0..a.nrows()).map(|i| evd.S()[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Eigendecomposition of a complex Hermitian matrix.
pub fn eigh_complex(a: MatRef<'_, c64>) -> Result<(Vec<f64>, Mat<c64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let vals: Vec<f64> = (0..a.nrows()).map(|i| evd.S()[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// LU factorization of a square complex matrix with the determinant kept in
/// log-magnitude/phase form so that near-orthogonal overlap determinants
/// neither underflow nor overflow.
pub struct LuFactors {
    lu: PartialPivLu<c64>,
    pub log_abs_det: f64,
    /// Unit-modulus phase of the determinant (zero matrix gives 0).
    pub det_phase: c64,
}

impl LuFactors {
    pub fn new(a: MatRef<'_, c64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let lu = PartialPivLu::new(a);
        let mut log_abs = 0.0f64;
        let mut phase = c64::new(1.0, 0.0);
        for i in 0..n {
            let d = lu.U()[(i, i)];
            let m = d.norm();
            if m == 0.0 {
                return LuFactors {
                    lu,
                    log_abs_det: f64::NEG_INFINITY,
                    det_phase: c64::new(0.0, 0.0),
                };
            }
            log_abs += m.ln();
            phase *= d / m;
        }
        if permutation_parity_odd(lu.P().arrays().0) {
            phase = -phase;
        }
        LuFactors {
            lu,
            log_abs_det: log_abs,
            det_phase: phase,
        }
    }

    pub fn det(&self) -> c64 {
        self.det_phase * self.log_abs_det.exp()
    }

    pub fn solve(&self, rhs: MatRef<'_, c64>) -> Mat<c64> {
        use faer::linalg::solvers::Solve;
        self.lu.solve(rhs)
    }
}

fn permutation_parity_odd(fwd: &[usize]) -> bool {
    let n = fwd.len();
    let mut seen = vec![false; n];
    let mut odd = false;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut len = 0usize;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = fwd[i];
            len += 1;
        }
        if len % 2 == 0 {
            odd = !odd;
        }
    }
    odd
}

/// Solve the dense real linear system `a * x = b` by partial-pivot LU.
pub fn solve_real(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    use faer::linalg::solvers::Solve;
    PartialPivLu::new(a).solve(b)
}

/// Hermitian check used by tests and assembly assertions: max |A - A^H|.
pub fn hermiticity_defect(a: MatRef<'_, c64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Inverse square root of a Hermitian positive-definite matrix via its
/// eigendecomposition. Eigenvalues below `floor` are rejected: the caller
/// treats that as an ill-conditioned overlap.
pub fn inv_sqrt_hermitian(a: MatRef<'_, c64>, floor: f64) -> Result<Mat<c64>> {
    let (vals, vecs) = eigh_complex(a)?;
    if let Some(&bad) = vals.iter().find(|&&v| v <= floor) {
        return Err(Error::SolverFailure(format!(
            "overlap matrix eigenvalue {bad:.3e} at or below floor {floor:.1e}"
        )));
    }
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for (k, &v) in vals.iter().enumerate() {
        let s = 1.0 / v.sqrt();
        for i in 0..n {
            scaled[(i, k)] *= s;
        }
    }
    Ok(&scaled * vecs.adjoint())
}
