//! Random instances shared by the unit tests.

use rand::Rng;

use crate::estimator::TaskData;
use crate::tensor::{tucker_reconstruct, Matrix, Mode, Tensor3};
use crate::var::{gaussian_matrix, random_orthonormal, rng_from, LagDesign};

pub fn random_tensor(rng: &mut impl Rng, dims: [usize; 3]) -> Tensor3 {
    let m = gaussian_matrix(rng, dims[0], dims[1] * dims[2]);
    Tensor3::new(dims, m.as_slice().to_vec()).unwrap()
}

pub fn task_from(a: &Tensor3, x: Matrix, noise: Matrix) -> TaskData {
    let y = a.matricize(Mode::One) * &x + noise;
    TaskData::from_design("task", &LagDesign { y, x }).unwrap()
}

/// Tasks whose coefficients share orthonormal factors with ranks `ranks`.
pub struct LowRankTasks {
    pub tasks: Vec<TaskData>,
    pub factors: [Matrix; 3],
    pub coefs: Vec<Tensor3>,
}

pub fn low_rank_tasks(
    seed: u64,
    n: usize,
    p: usize,
    ranks: [usize; 3],
    k: usize,
    t: usize,
    noise: f64,
) -> LowRankTasks {
    let mut rng = rng_from(seed);
    let factors = [
        random_orthonormal(&mut rng, n, ranks[0]),
        random_orthonormal(&mut rng, n, ranks[1]),
        random_orthonormal(&mut rng, p, ranks[2]),
    ];
    let mut tasks = Vec::new();
    let mut coefs = Vec::new();
    for _ in 0..k {
        let core = random_tensor(&mut rng, ranks);
        let a = tucker_reconstruct(&core, &factors[0], &factors[1], &factors[2]).unwrap();
        let x = gaussian_matrix(&mut rng, n * p, t);
        let e = gaussian_matrix(&mut rng, n, t) * noise;
        tasks.push(task_from(&a, x, e));
        coefs.push(a);
    }
    LowRankTasks {
        tasks,
        factors,
        coefs,
    }
}
