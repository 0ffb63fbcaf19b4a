//! Dense complex linear algebra kernels.
//!
//! Everything here is a thin, deterministic layer over `nalgebra`: results are
//! sorted in descending eigenvalue order (ties keep their original index), and
//! every eigenvector has its phase fixed so that its largest-magnitude entry is
//! real and nonnegative. That makes outputs reproducible across runs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative asymmetry `‖A − Aᴴ‖_F / ‖A‖_F` tolerated by the Hermitian routines.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Default relative singular-value cutoff for [`pseudo_inverse`].
pub const DEFAULT_PINV_RTOL: f64 = 1e-12;

/// Minimum `λ_min / λ_max` accepted for a positive-definite right-hand matrix.
pub const PD_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{role}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        role: String,
        rows: usize,
        cols: usize,
    },
    #[error("{role} is not Hermitian (relative asymmetry {asymmetry:.3e} > {tol:.1e})")]
    NotHermitian {
        role: String,
        asymmetry: f64,
        tol: f64,
    },
    #[error("{role} is not positive definite (eigenvalue range [{min_eig:.3e}, {max_eig:.3e}])")]
    NotPositiveDefinite {
        role: String,
        min_eig: f64,
        max_eig: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("requested {requested} eigenpairs from a problem of dimension {dim}")]
    EigenCount { requested: usize, dim: usize },
    #[error("entries of {0} are not finite")]
    NonFinite(String),
}

/// Eigendecomposition `A = V diag(λ) Vᴴ` of a Hermitian matrix, λ non-increasing.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// Dominant pairs of the pencil `A v = λ B v`, λ non-increasing, `vᴴ B v = 1`.
#[derive(Debug, Clone)]
pub struct GeneralizedEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// Options for [`generalized_eig_with`].
#[derive(Debug, Clone)]
pub struct GenEigOptions<'a> {
    /// Name used in diagnostics when `B` fails the definiteness check.
    pub b_role: &'a str,
    /// When set, an indefinite `B` is regularised with `ε·Tr(B)/n·I` instead of
    /// being rejected. The event is logged.
    pub jitter: Option<f64>,
}

impl Default for GenEigOptions<'_> {
    fn default() -> Self {
        Self {
            b_role: "B",
            jitter: None,
        }
    }
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// `‖A − Aᴴ‖_F / ‖A‖_F`, zero for the zero matrix.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.adjoint()).norm() / norm
}

/// `(A + Aᴴ)/2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c(0.5, 0.0)
}

fn ensure_square(a: &CMatrix, role: &str) -> Result<(), NumericsError> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(NumericsError::NotSquare {
            role: role.to_string(),
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(NumericsError::NonFinite(role.to_string()));
    }
    Ok(())
}

fn ensure_hermitian(a: &CMatrix, role: &str) -> Result<(), NumericsError> {
    ensure_square(a, role)?;
    let asymmetry = hermitian_defect(a);
    if asymmetry > HERMITIAN_TOL {
        return Err(NumericsError::NotHermitian {
            role: role.to_string(),
            asymmetry,
            tol: HERMITIAN_TOL,
        });
    }
    Ok(())
}

/// Rotate a vector so its largest-magnitude entry (first one on ties) is real ≥ 0.
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best_mag * (1.0 + 1e-12) {
            best = i;
            best_mag = m;
        }
    }
    if best_mag <= 0.0 {
        return;
    }
    let pivot = v[best];
    let rot = pivot.conj() / pivot.norm();
    v.iter_mut().for_each(|z| *z *= rot);
    v[best] = c(v[best].re.max(0.0), 0.0);
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // sort_by is stable, so equal eigenvalues keep their original order.
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    idx
}

/// Eigendecomposition of a Hermitian matrix.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianEig, NumericsError> {
    ensure_hermitian(a, "Hermitian input")?;
    let eig = hermitian_part(a).symmetric_eigen();
    let raw: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let order = descending_order(&raw);
    let n = a.nrows();
    let mut vectors = CMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v: CVector = eig.eigenvectors.column(src).into_owned();
        fix_phase(&mut v);
        vectors.set_column(dst, &v);
        values.push(raw[src]);
    }
    Ok(HermitianEig { values, vectors })
}

/// Eigenvalues of a Hermitian matrix in descending order (no vectors).
pub fn hermitian_eigenvalues(a: &CMatrix) -> Result<Vec<f64>, NumericsError> {
    ensure_hermitian(a, "Hermitian input")?;
    let mut values: Vec<f64> = hermitian_part(a).symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

/// Top-`d` eigenvectors as an `n × d` matrix with orthonormal columns.
pub fn dominant_eigenvectors(a: &CMatrix, d: usize) -> Result<CMatrix, NumericsError> {
    let n = a.nrows();
    if d == 0 || d > n {
        return Err(NumericsError::EigenCount { requested: d, dim: n });
    }
    let eig = hermitian_eig(a)?;
    Ok(eig.vectors.columns(0, d).into_owned())
}

/// Top-`d` pairs of the Hermitian-definite pencil `(A, B)`.
pub fn generalized_eig(a: &CMatrix, b: &CMatrix, d: usize) -> Result<GeneralizedEig, NumericsError> {
    generalized_eig_with(a, b, d, &GenEigOptions::default())
}

/// Generalized eigenproblem by Cholesky whitening: `B = LLᴴ`, standard
/// eigenproblem of `L⁻¹ A L⁻ᴴ`, vectors mapped back through `L⁻ᴴ`.
pub fn generalized_eig_with(
    a: &CMatrix,
    b: &CMatrix,
    d: usize,
    opts: &GenEigOptions<'_>,
) -> Result<GeneralizedEig, NumericsError> {
    ensure_hermitian(a, "A")?;
    ensure_hermitian(b, opts.b_role)?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(NumericsError::Dimension(format!(
            "pencil matrices are {n}x{n} and {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if d == 0 || d > n {
        return Err(NumericsError::EigenCount { requested: d, dim: n });
    }

    let mut b_used = hermitian_part(b);
    if let Err(err) = check_positive_definite(&b_used, opts.b_role) {
        match opts.jitter {
            Some(eps) => {
                let load = eps * b_used.trace().re / n as f64;
                log::warn!("{err}; adding diagonal jitter {load:.3e}");
                for i in 0..n {
                    b_used[(i, i)] += c(load, 0.0);
                }
                check_positive_definite(&b_used, opts.b_role)?;
            }
            None => return Err(err),
        }
    }

    let chol = Cholesky::new(b_used.clone()).ok_or_else(|| NumericsError::NotPositiveDefinite {
        role: opts.b_role.to_string(),
        min_eig: f64::NAN,
        max_eig: f64::NAN,
    })?;
    let l = chol.l();
    let la = l
        .solve_lower_triangular(a)
        .ok_or_else(|| NumericsError::NotPositiveDefinite {
            role: opts.b_role.to_string(),
            min_eig: 0.0,
            max_eig: f64::NAN,
        })?;
    let whitened = l
        .solve_lower_triangular(&la.adjoint())
        .expect("triangular factor already validated");
    let eig = hermitian_eig(&hermitian_part(&whitened))?;

    let lh = l.adjoint();
    let top = eig.vectors.columns(0, d).into_owned();
    let mapped = lh
        .solve_upper_triangular(&top)
        .expect("triangular factor already validated");
    let mut vectors = CMatrix::zeros(n, d);
    for j in 0..d {
        let mut v: CVector = mapped.column(j).into_owned();
        fix_phase(&mut v);
        vectors.set_column(j, &v);
    }
    Ok(GeneralizedEig {
        values: eig.values[..d].to_vec(),
        vectors,
    })
}

/// Rejects matrices with `λ_min ≤ PD_RATIO · λ_max`.
pub fn check_positive_definite(b: &CMatrix, role: &str) -> Result<(), NumericsError> {
    let values = hermitian_eigenvalues(b)?;
    let max_eig = values[0];
    let min_eig = *values.last().unwrap();
    if max_eig <= 0.0 || min_eig <= PD_RATIO * max_eig {
        return Err(NumericsError::NotPositiveDefinite {
            role: role.to_string(),
            min_eig,
            max_eig,
        });
    }
    Ok(())
}

/// Moore–Penrose pseudo-inverse together with the numerical rank used.
pub fn pseudo_inverse_with_rank(a: &CMatrix, rtol: f64) -> (CMatrix, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (CMatrix::zeros(n, m), 0);
    }
    // nalgebra's SVD loses accuracy on rank-deficient inputs; faer's does not.
    let fa = faer::Mat::<faer::c64>::from_fn(m, n, |i, j| {
        let z = a[(i, j)];
        faer::c64::new(z.re, z.im)
    });
    let Ok(svd) = fa.thin_svd() else {
        return (CMatrix::zeros(n, m), 0);
    };
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    let smax = (0..k).map(|i| s[i].re).fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return (CMatrix::zeros(n, m), 0);
    }
    let cutoff = rtol * smax;
    let kept: Vec<usize> = (0..k).filter(|&i| s[i].re > cutoff).collect();
    let rank = kept.len();
    let result = CMatrix::from_fn(n, m, |i, j| {
        kept.iter().fold(C64::new(0.0, 0.0), |acc, &r| {
            let vr = v[(i, r)];
            let ur = u[(j, r)];
            acc + C64::new(vr.re, vr.im) * C64::new(ur.re, -ur.im) / s[r].re
        })
    });
    (result, rank)
}

/// Moore–Penrose pseudo-inverse; singular values `≤ rtol·σ_max` are dropped.
pub fn pseudo_inverse(a: &CMatrix, rtol: f64) -> CMatrix {
    pseudo_inverse_with_rank(a, rtol).0
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_hpd(a: &CMatrix, role: &str) -> Result<CMatrix, NumericsError> {
    ensure_hermitian(a, role)?;
    let chol = Cholesky::new(hermitian_part(a)).ok_or_else(|| NumericsError::NotPositiveDefinite {
        role: role.to_string(),
        min_eig: f64::NAN,
        max_eig: f64::NAN,
    })?;
    Ok(hermitian_part(&chol.inverse()))
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: &CMatrix, b: &CMatrix, role: &str) -> Result<CMatrix, NumericsError> {
    ensure_hermitian(a, role)?;
    let chol: Cholesky<C64, Dyn> =
        Cholesky::new(hermitian_part(a)).ok_or_else(|| NumericsError::NotPositiveDefinite {
            role: role.to_string(),
            min_eig: f64::NAN,
            max_eig: f64::NAN,
        })?;
    Ok(chol.solve(b))
}

/// Solves a general square system with partial-pivot LU.
pub fn solve(a: &CMatrix, b: &CMatrix, role: &str) -> Result<CMatrix, NumericsError> {
    ensure_square(a, role)?;
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| NumericsError::NotPositiveDefinite {
            role: format!("{role} (singular)"),
            min_eig: 0.0,
            max_eig: f64::NAN,
        })
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Orthonormalises the columns of `a` (thin QR), keeping the span of every
/// leading column block.
pub fn orthonormalize_columns(a: &CMatrix) -> CMatrix {
    let (n, d) = a.shape();
    let qr = a.clone().qr();
    let q = qr.q();
    let r = qr.r();
    // Make diag(R) nonnegative so the result is unique.
    let mut out = q.columns(0, d.min(n)).into_owned();
    for j in 0..out.ncols() {
        let rjj = r[(j, j)];
        if rjj.norm() > 0.0 {
            let rot = rjj / rjj.norm();
            out.column_mut(j).iter_mut().for_each(|z| *z *= rot);
        }
    }
    out
}

/// `‖AᴴA − I‖_F`.
pub fn orthonormality_defect(a: &CMatrix) -> f64 {
    (a.adjoint() * a - identity(a.ncols())).norm()
}
