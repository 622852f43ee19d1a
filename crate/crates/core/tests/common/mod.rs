#![allow(dead_code)]

use rand::Rng;
use tlvar::estimator::TaskData;
use tlvar::var::{gaussian_matrix, random_orthonormal, LagDesign};
use tlvar::{Matrix, Mode, Tensor3};

pub fn random_tensor(rng: &mut impl Rng, dims: [usize; 3]) -> Tensor3 {
    let m = gaussian_matrix(rng, dims[0], dims[1] * dims[2]);
    Tensor3::new(dims, m.as_slice().to_vec()).unwrap()
}

/// A tensor with exact multilinear ranks `ranks` (almost surely).
pub fn low_rank_tensor(rng: &mut impl Rng, dims: [usize; 3], ranks: [usize; 3]) -> Tensor3 {
    let core = random_tensor(rng, ranks);
    let u = gaussian_matrix(rng, dims[0], ranks[0]);
    let v = gaussian_matrix(rng, dims[1], ranks[1]);
    let l = gaussian_matrix(rng, dims[2], ranks[2]);
    core.multilinear(&u, &v, &l).unwrap()
}

pub fn random_task(rng: &mut impl Rng, a: &Tensor3, t: usize, noise: f64) -> TaskData {
    let [n, _, p] = a.dims();
    let x = gaussian_matrix(rng, n * p, t);
    let y = a.matricize(Mode::One) * &x + gaussian_matrix(rng, n, t) * noise;
    TaskData::from_design("task", &LagDesign { y, x }).unwrap()
}

pub fn random_rotation(rng: &mut impl Rng, r: usize) -> Matrix {
    random_orthonormal(rng, r, r)
}

pub fn rel_err(a: &Tensor3, b: &Tensor3) -> f64 {
    (a - b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}
