//! SVD-backed numerical kernels: pseudo-inverse, right least-squares solves,
//! best rank-1 approximation and least-squares Khatri-Rao factorization.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::tensor::{is_finite, khatri_rao, Complex, ComplexMatrix};

/// Relative singular-value cutoff per unit of the larger matrix dimension.
pub const RTOL_PER_DIM: f64 = 1e-10;

pub fn default_rtol(m: &ComplexMatrix) -> f64 {
    RTOL_PER_DIM * m.nrows().max(m.ncols()).max(1) as f64
}

/// Thin SVD `m = u * diag(s) * v_t` with singular values sorted descending.
pub(crate) struct Svd {
    pub u: ComplexMatrix,
    pub s: Vec<f64>,
    pub v_t: ComplexMatrix,
}

pub(crate) fn svd(m: &ComplexMatrix) -> Result<Svd> {
    if !is_finite(m) {
        return Err(Error::NonFinite);
    }
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Svd {
            u: ComplexMatrix::zeros(r, 0),
            s: Vec::new(),
            v_t: ComplexMatrix::zeros(0, c),
        });
    }
    let a = faer::Mat::<Complex>::from_fn(r, c, |i, j| m[(i, j)]);
    let dec = a.thin_svd().map_err(|_| Error::SvdNoConvergence)?;
    let (u, sv, v) = (dec.U(), dec.S().column_vector(), dec.V());
    let k = r.min(c);
    Ok(Svd {
        u: ComplexMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        s: (0..k).map(|i| sv[i].re).collect(),
        v_t: ComplexMatrix::from_fn(k, c, |i, j| v[(j, i)].conj()),
    })
}

/// Number of singular values kept for a relative cutoff `rtol`.
fn effective_rank(s: &[f64], rtol: f64) -> usize {
    let Some(&max) = s.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    s.iter().take_while(|&&x| x >= rtol * max).count()
}

#[derive(Clone, Debug)]
pub struct Pinv {
    pub matrix: ComplexMatrix,
    /// Number of singular values above the cutoff.
    pub rank: usize,
}

/// Moore-Penrose pseudo-inverse, truncating singular values below `rtol * σ_max`.
pub fn pinv(m: &ComplexMatrix, rtol: f64) -> Result<Pinv> {
    let Svd { u, s, v_t } = svd(m)?;
    let rank = effective_rank(&s, rtol);
    let mut vs = v_t.rows(0, rank).adjoint();
    for (k, mut col) in vs.column_iter_mut().enumerate() {
        col /= Complex::new(s[k], 0.0);
    }
    let matrix = vs * u.columns(0, rank).adjoint();
    Ok(Pinv { matrix, rank })
}

pub fn pinv_default(m: &ComplexMatrix) -> Result<Pinv> {
    pinv(m, default_rtol(m))
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    pub x: ComplexMatrix,
    /// Effective rank of the right factor.
    pub rank: usize,
}

/// Minimizes `‖Y − X·F‖_F` over `X`, returning `Y·F⁺`.
///
/// `F⁺` is never formed; the product is taken through the SVD factors so
/// wide right factors stay cheap.
pub fn ls_solve_right(y: &ComplexMatrix, f: &ComplexMatrix) -> Result<LsSolution> {
    if y.ncols() != f.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "least-squares data has {} columns, right factor has {}",
            y.ncols(),
            f.ncols()
        )));
    }
    let Svd { u, s, v_t } = svd(f)?;
    let rank = effective_rank(&s, default_rtol(f));
    let mut yv = y * v_t.rows(0, rank).adjoint();
    for (k, mut col) in yv.column_iter_mut().enumerate() {
        col /= Complex::new(s[k], 0.0);
    }
    let x = yv * u.columns(0, rank).adjoint();
    Ok(LsSolution { x, rank })
}

/// Best rank-1 approximation `sigma * u * vᴴ`.
#[derive(Clone, Debug)]
pub struct Rank1 {
    pub u: DVector<Complex>,
    pub v: DVector<Complex>,
    pub sigma: f64,
}

pub fn rank1_approx(m: &ComplexMatrix) -> Result<Rank1> {
    if m.iter().all(|z| *z == Complex::new(0.0, 0.0)) {
        return Err(Error::ZeroMatrix);
    }
    let Svd { u, s, v_t } = svd(m)?;
    Ok(Rank1 {
        u: u.column(0).into_owned(),
        v: v_t.row(0).adjoint(),
        sigma: s[0],
    })
}

/// Factors of a least-squares Khatri-Rao factorization `M ≈ A ⋄ B`.
#[derive(Clone, Debug)]
pub struct KrfResult {
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    /// `‖A ⋄ B − M‖_F`.
    pub residual: f64,
    /// Columns of `M` that were identically zero; both factors are zero there.
    pub zero_columns: Vec<usize>,
}

/// Splits every column of `m` (length `rows_a * rows_b`) into the Kronecker
/// product of an `a` column and a `b` column.
///
/// Column `r` is reshaped column-major into a `rows_b x rows_a` matrix whose
/// dominant singular triplet gives `b_r = √σ u` and `a_r = √σ conj(v)`, so the
/// scale is split evenly between the two factors.
pub fn krf(m: &ComplexMatrix, rows_a: usize, rows_b: usize) -> Result<KrfResult> {
    if m.nrows() != rows_a * rows_b {
        return Err(Error::ShapeMismatch(format!(
            "KRF input has {} rows, expected {rows_a}*{rows_b}",
            m.nrows()
        )));
    }
    let cols = m.ncols();
    let mut a = ComplexMatrix::zeros(rows_a, cols);
    let mut b = ComplexMatrix::zeros(rows_b, cols);
    let mut zero_columns = Vec::new();
    for r in 0..cols {
        let block = ComplexMatrix::from_column_slice(rows_b, rows_a, m.column(r).as_slice());
        match rank1_approx(&block) {
            Ok(Rank1 { u, v, sigma }) => {
                let scale = Complex::new(sigma.sqrt(), 0.0);
                b.set_column(r, &(u * scale));
                a.set_column(r, &(v.map(|z| z.conj()) * scale));
            }
            Err(Error::ZeroMatrix) => zero_columns.push(r),
            Err(e) => return Err(e),
        }
    }
    let residual = (khatri_rao(&a, &b)? - m).norm();
    Ok(KrfResult {
        a,
        b,
        residual,
        zero_columns,
    })
}
