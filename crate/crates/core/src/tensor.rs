//! Dense complex matrices and third-order tensors.
//!
//! Matrices are `nalgebra` column-major `DMatrix<Complex64>`, so `vec` is a
//! plain copy of the storage. Tensors store entry `(i, j, k)` at
//! `i + d1 * (j + d2 * k)`.
//!
//! Unfoldings follow the convention where a CP tensor with factors
//! `(A, B, C)` unfolds as
//!
//! * mode 1: `A (C ⋄ B)ᵀ`, column index `j + d2 * k`
//! * mode 2: `B (C ⋄ A)ᵀ`, column index `i + d1 * k`
//! * mode 3: `C (B ⋄ A)ᵀ`, column index `i + d1 * j`
//!
//! Every assembly routine and estimator in the crate relies on this.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Complex = Complex64;
pub type ComplexMatrix = DMatrix<Complex>;

pub const ZERO: Complex = Complex::new(0.0, 0.0);
pub const ONE: Complex = Complex::new(1.0, 0.0);

/// Kronecker product; block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = ComplexMatrix::zeros(ra * rb, ca * cb);
    for j in 0..ca {
        for i in 0..ra {
            let s = a[(i, j)];
            out.view_mut((i * rb, j * cb), (rb, cb)).zip_apply(b, |o, x| *o = s * x);
        }
    }
    out
}

/// Column-wise Kronecker product.
pub fn khatri_rao(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::ColumnMismatch {
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    let mut out = ComplexMatrix::zeros(ra * rb, a.ncols());
    for r in 0..a.ncols() {
        let mut col = out.column_mut(r);
        for i in 0..ra {
            let s = a[(i, r)];
            for l in 0..rb {
                col[i * rb + l] = s * b[(l, r)];
            }
        }
    }
    Ok(out)
}

/// Stacks the columns of `a` into a single column.
pub fn vec(a: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_column_slice(a.len(), 1, a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &ComplexMatrix, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(ComplexMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Concatenates blocks left to right.
pub fn hstack(blocks: &[&ComplexMatrix]) -> Result<ComplexMatrix> {
    let Some(first) = blocks.first() else {
        return Err(Error::ShapeMismatch("hstack of no blocks".into()));
    };
    let rows = first.nrows();
    if let Some(bad) = blocks.iter().find(|b| b.nrows() != rows) {
        return Err(Error::ShapeMismatch(format!(
            "hstack row counts differ: {rows} vs {}",
            bad.nrows()
        )));
    }
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for b in blocks {
        data.extend_from_slice(b.as_slice());
    }
    Ok(ComplexMatrix::from_vec(rows, cols, data))
}

/// Concatenates blocks top to bottom.
pub fn vstack(blocks: &[&ComplexMatrix]) -> Result<ComplexMatrix> {
    let Some(first) = blocks.first() else {
        return Err(Error::ShapeMismatch("vstack of no blocks".into()));
    };
    let cols = first.ncols();
    if let Some(bad) = blocks.iter().find(|b| b.ncols() != cols) {
        return Err(Error::ShapeMismatch(format!(
            "vstack column counts differ: {cols} vs {}",
            bad.ncols()
        )));
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = ComplexMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), b.shape()).copy_from(*b);
        at += b.nrows();
    }
    Ok(out)
}

/// Dense third-order complex tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<Complex>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![ZERO; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<Complex>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {}x{}x{} tensor",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> Complex) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    /// Builds a tensor whose `k`-th frontal slice is `slices[k]`.
    pub fn from_frontal_slices(slices: &[ComplexMatrix]) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::ShapeMismatch("no frontal slices".into()));
        };
        let (d1, d2) = first.shape();
        let mut data = Vec::with_capacity(d1 * d2 * slices.len());
        for s in slices {
            if s.shape() != (d1, d2) {
                return Err(Error::ShapeMismatch(format!(
                    "frontal slice {:?} differs from {:?}",
                    s.shape(),
                    (d1, d2)
                )));
            }
            data.extend_from_slice(s.as_slice());
        }
        Ok(Self {
            dims: [d1, d2, slices.len()],
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[Complex] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: Complex) {
        let at = self.offset(i, j, k);
        self.data[at] = value;
    }

    /// The `d1 x d2` matrix at third index `k`.
    pub fn frontal_slice(&self, k: usize) -> ComplexMatrix {
        let n = self.dims[0] * self.dims[1];
        ComplexMatrix::from_column_slice(self.dims[0], self.dims[1], &self.data[k * n..(k + 1) * n])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn unfold(&self, mode: usize) -> Result<ComplexMatrix> {
        mode_n_unfold(self, mode)
    }
}

/// Matricizes `t` along `mode` (1-based).
pub fn mode_n_unfold(t: &Tensor3, mode: usize) -> Result<ComplexMatrix> {
    let [d1, d2, d3] = t.dims;
    let out = match mode {
        // The storage order already is the mode-1 unfolding.
        1 => ComplexMatrix::from_column_slice(d1, d2 * d3, &t.data),
        2 => ComplexMatrix::from_fn(d2, d1 * d3, |j, c| t.get(c % d1, j, c / d1)),
        3 => ComplexMatrix::from_fn(d3, d1 * d2, |k, c| t.get(c % d1, c / d1, k)),
        other => return Err(Error::InvalidMode(other)),
    };
    Ok(out)
}

/// Inverse of [`mode_n_unfold`] for a tensor of size `dims`.
pub fn mode_n_fold(m: &ComplexMatrix, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
    let [d1, d2, d3] = dims;
    let expected = match mode {
        1 => (d1, d2 * d3),
        2 => (d2, d1 * d3),
        3 => (d3, d1 * d2),
        other => return Err(Error::InvalidMode(other)),
    };
    if m.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "mode-{mode} unfolding of {d1}x{d2}x{d3} is {expected:?}, got {:?}",
            m.shape()
        )));
    }
    let t = match mode {
        1 => Tensor3 {
            dims,
            data: m.as_slice().to_vec(),
        },
        2 => Tensor3::from_fn(dims, |i, j, k| m[(j, i + d1 * k)]),
        _ => Tensor3::from_fn(dims, |i, j, k| m[(k, i + d1 * j)]),
    };
    Ok(t)
}

/// Rank-R CP tensor with entries `Σ_r a[i,r] b[j,r] c[k,r]`.
pub fn cp3_build(a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> Result<Tensor3> {
    if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
        return Err(Error::RankMismatch([a.ncols(), b.ncols(), c.ncols()]));
    }
    let unfolded = a * khatri_rao(c, b)?.transpose();
    mode_n_fold(&unfolded, 1, [a.nrows(), b.nrows(), c.nrows()])
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Frobenius norm of `a - b`, relative to the norm of `b`.
pub fn rel_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let nb = b.norm();
    let d = (a - b).norm();
    if nb == 0.0 {
        d
    } else {
        d / nb
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{random_matrix, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex {
        Complex::new(re, 0.0)
    }

    fn real(rows: usize, cols: usize, v: &[f64]) -> ComplexMatrix {
        ComplexMatrix::from_row_slice(rows, cols, &v.iter().map(|&x| c(x)).collect::<Vec<_>>())
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i2 = ComplexMatrix::identity(2, 2);
        assert_eq!(kron(&i2, &i2), ComplexMatrix::identity(4, 4));
    }

    #[test]
    fn kron_row_by_column() {
        let a = real(1, 2, &[1.0, 2.0]);
        let b = real(2, 1, &[3.0, 4.0]);
        assert_eq!(kron(&a, &b), real(2, 2, &[3.0, 6.0, 4.0, 8.0]));
    }

    #[test]
    fn kron_of_vectors_matches_vec_of_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 3, 1);
        let b = random_matrix(&mut rng, 3, 1);
        let outer = &b * a.transpose();
        assert!(rel_diff(&kron(&a, &b), &vec(&outer)) < 1e-15);
    }

    #[test]
    fn khatri_rao_identity_columns() {
        let i2 = ComplexMatrix::identity(2, 2);
        let kr = khatri_rao(&i2, &i2).unwrap();
        assert_eq!(kr, real(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn khatri_rao_columns_are_kronecker_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 4, 2);
        let kr = khatri_rao(&a, &b).unwrap();
        assert_eq!(kr.shape(), (12, 2));
        for r in 0..2 {
            let col = kron(&a.columns(r, 1).into_owned(), &b.columns(r, 1).into_owned());
            assert_eq!(kr.column(r).into_owned(), col.column(0).into_owned());
        }
    }

    #[test]
    fn khatri_rao_rejects_column_mismatch() {
        let a = ComplexMatrix::zeros(2, 2);
        let b = ComplexMatrix::zeros(2, 3);
        assert!(matches!(khatri_rao(&a, &b), Err(Error::ColumnMismatch { left: 2, right: 3 })));
    }

    #[test]
    fn khatri_rao_training_by_channel_shape() {
        // I x M_S1 training against M_UE x M_S1 channel.
        let theta = ComplexMatrix::zeros(30, 30);
        let g1t = ComplexMatrix::zeros(2, 30);
        assert_eq!(khatri_rao(&theta, &g1t).unwrap().shape(), (60, 30));
    }

    #[test]
    fn vec_stacks_columns() {
        let a = real(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&a), real(4, 1, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn unvec_inverts_vec() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 5, 7);
        assert_eq!(unvec(&vec(&a), 5, 7).unwrap(), a);
        assert!(unvec(&vec(&a), 6, 7).is_err());
    }

    fn triple_loop(a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> Tensor3 {
        Tensor3::from_fn([a.nrows(), b.nrows(), c.nrows()], |i, j, k| {
            (0..a.ncols()).map(|r| a[(i, r)] * b[(j, r)] * c[(k, r)]).sum()
        })
    }

    fn tensor_rel_diff(x: &Tensor3, y: &Tensor3) -> f64 {
        let d: f64 = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(p, q)| (p - q).norm_sqr())
            .sum();
        d.sqrt() / y.norm()
    }

    #[test]
    fn cp3_build_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 3);
        let b = random_matrix(&mut rng, 5, 3);
        let cc = random_matrix(&mut rng, 6, 3);
        let t = cp3_build(&a, &b, &cc).unwrap();
        assert!(tensor_rel_diff(&t, &triple_loop(&a, &b, &cc)) < 1e-13);
    }

    #[test]
    fn cp3_build_rank_one_unit() {
        let e1 = |n| {
            let mut m = ComplexMatrix::zeros(n, 1);
            m[0] = ONE;
            m
        };
        let t = cp3_build(&e1(2), &e1(3), &e1(4)).unwrap();
        assert_eq!(t.get(0, 0, 0), ONE);
        assert_eq!(t.norm(), 1.0);
    }

    #[test]
    fn cp3_build_rejects_rank_mismatch() {
        let a = ComplexMatrix::zeros(2, 2);
        let b = ComplexMatrix::zeros(2, 3);
        assert!(matches!(cp3_build(&a, &a, &b), Err(Error::RankMismatch([2, 2, 3]))));
    }

    #[test]
    fn cp3_build_single_reflection_shape() {
        let h1 = ComplexMatrix::zeros(4, 30);
        let g1t = ComplexMatrix::zeros(2, 30);
        let theta = ComplexMatrix::zeros(30, 30);
        assert_eq!(cp3_build(&h1, &g1t, &theta).unwrap().dims(), [4, 2, 30]);
    }

    #[test]
    fn unfoldings_of_cp_tensor_have_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 4, 3);
        let b = random_matrix(&mut rng, 2, 3);
        let cc = random_matrix(&mut rng, 5, 3);
        let t = triple_loop(&a, &b, &cc);
        let m1 = &a * khatri_rao(&cc, &b).unwrap().transpose();
        let m2 = &b * khatri_rao(&cc, &a).unwrap().transpose();
        let m3 = &cc * khatri_rao(&b, &a).unwrap().transpose();
        assert!(rel_diff(&t.unfold(1).unwrap(), &m1) < 1e-12);
        assert!(rel_diff(&t.unfold(2).unwrap(), &m2) < 1e-12);
        assert!(rel_diff(&t.unfold(3).unwrap(), &m3) < 1e-12);
        assert_eq!(m2.shape(), (2, 4 * 5));
    }

    #[test]
    fn fold_of_closed_form_is_cp_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 4, 2);
        let cc = random_matrix(&mut rng, 2, 2);
        let m1 = &a * khatri_rao(&cc, &b).unwrap().transpose();
        let t = mode_n_fold(&m1, 1, [3, 4, 2]).unwrap();
        assert!(tensor_rel_diff(&t, &triple_loop(&a, &b, &cc)) < 1e-13);
    }

    #[test]
    fn fold_of_zeros_is_zero_tensor() {
        let z = ComplexMatrix::zeros(4, 6);
        assert_eq!(mode_n_fold(&z, 2, [2, 4, 3]).unwrap(), Tensor3::zeros([2, 4, 3]));
    }

    #[test]
    fn invalid_mode_and_shape_are_reported() {
        let t = Tensor3::zeros([2, 3, 4]);
        assert!(matches!(t.unfold(4), Err(Error::InvalidMode(4))));
        assert!(matches!(t.unfold(0), Err(Error::InvalidMode(0))));
        let wrong = ComplexMatrix::zeros(3, 9);
        assert!(matches!(mode_n_fold(&wrong, 2, [2, 3, 4]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn frontal_slices_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let t = random_tensor(&mut rng, [3, 2, 4]);
        let slices: Vec<_> = (0..4).map(|k| t.frontal_slice(k)).collect();
        assert_eq!(Tensor3::from_frontal_slices(&slices).unwrap(), t);
    }

    #[test]
    fn stacking() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h1 = random_matrix(&mut rng, 4, 3);
        let u = random_matrix(&mut rng, 8, 3);
        let s = vstack(&[&h1, &u]).unwrap();
        assert_eq!(s.shape(), (12, 3));
        assert_eq!(s.rows(0, 4).into_owned(), h1);
        assert_eq!(s.rows(4, 8).into_owned(), u);
        assert_eq!(hstack(&[&h1]).unwrap(), h1);
        let w = hstack(&[&h1, &h1]).unwrap();
        assert_eq!(w.columns(3, 3).into_owned(), h1);
        assert!(hstack(&[&h1, &u]).is_err());
        assert!(vstack(&[&h1, &ComplexMatrix::zeros(1, 2)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fold_inverts_unfold(d1 in 1usize..5, d2 in 1usize..5, d3 in 1usize..5, mode in 1usize..=3, seed: u64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t = random_tensor(&mut rng, [d1, d2, d3]);
                let m = t.unfold(mode).unwrap();
                prop_assert_eq!(mode_n_fold(&m, mode, [d1, d2, d3]).unwrap(), t);
            }

            #[test]
            fn khatri_rao_is_columnwise_kron(ra in 1usize..5, rb in 1usize..5, r in 1usize..4, seed: u64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(&mut rng, ra, r);
                let b = random_matrix(&mut rng, rb, r);
                let kr = khatri_rao(&a, &b).unwrap();
                for col in 0..r {
                    let k = kron(&a.columns(col, 1).into_owned(), &b.columns(col, 1).into_owned());
                    prop_assert_eq!(kr.column(col).into_owned(), k.column(0).into_owned());
                }
            }

            #[test]
            fn kron_of_vectors_is_vec_of_outer(n in 1usize..6, m in 1usize..6, seed: u64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(&mut rng, n, 1);
                let b = random_matrix(&mut rng, m, 1);
                // Each entry is a single product, so equality is exact.
                prop_assert_eq!(kron(&a, &b), vec(&(&b * a.transpose())));
            }
        }
    }
}
