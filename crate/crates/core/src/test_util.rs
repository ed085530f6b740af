use rand::Rng;

use crate::rng::complex_gaussian_matrix;
use crate::tensor::{ComplexMatrix, Tensor3};

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    complex_gaussian_matrix(rng, rows, cols, 1.0)
}

pub fn random_tensor<R: Rng>(rng: &mut R, dims: [usize; 3]) -> Tensor3 {
    let m = random_matrix(rng, dims[0], dims[1] * dims[2]);
    Tensor3::from_vec(dims, m.as_slice().to_vec()).unwrap()
}
