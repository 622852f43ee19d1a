//! VAR(p) processes: stationarity, simulation, lag designs and the
//! simulation-study coefficient generator.

use log::debug;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{invalid, Error, Result};
use crate::tensor::{complement_projector, orthonormalize, Matrix, Mode, Tensor3, TuckerFactors};

/// Default number of discarded warm-up steps in [`VarProcess::simulate`].
pub const DEFAULT_BURN_IN: usize = 200;

const MAX_STATIONARY_ATTEMPTS: usize = 1000;

/// Derives an independent RNG seed from a base seed and a path of indices
/// (replication, task, ...). Uses the SplitMix64 finalizer.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &i| mix(acc ^ mix(i)))
}

/// Deterministic generator used throughout the crate.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// A uniformly oriented `rows × cols` matrix with orthonormal columns.
pub fn random_orthonormal(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    loop {
        let g = gaussian_matrix(rng, rows, cols);
        if let Ok(q) = orthonormalize(&g) {
            return q;
        }
    }
}

/// The `Np × Np` block companion matrix of a transition tensor with dims `(N, N, p)`.
pub fn companion_matrix(coefs: &Tensor3) -> Result<Matrix> {
    let [n, n2, p] = coefs.dims();
    if n != n2 {
        return invalid(format!(
            "transition tensor must be N x N x p, got {:?}",
            coefs.dims()
        ));
    }
    let mut c = Matrix::zeros(n * p, n * p);
    c.rows_mut(0, n).copy_from(&coefs.matricize(Mode::One));
    for j in 1..p {
        for i in 0..n {
            c[(j * n + i, (j - 1) * n + i)] = 1.0;
        }
    }
    Ok(c)
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Matrix) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// True iff the companion spectral radius is below `1 - margin`.
pub fn is_stationary(coefs: &Tensor3, margin: f64) -> Result<bool> {
    Ok(spectral_radius(&companion_matrix(coefs)?) < 1.0 - margin)
}

/// One observed multivariate series. Columns are time points in ascending
/// order; when used with lag order `p` the first `p` columns are presample.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub task_id: String,
    pub series: Matrix,
    pub variables: Vec<String>,
}

impl Panel {
    pub fn new(task_id: impl Into<String>, series: Matrix) -> Self {
        let variables = (1..=series.nrows()).map(|i| format!("y{i}")).collect();
        Self {
            task_id: task_id.into(),
            series,
            variables,
        }
    }

    pub fn with_variables(mut self, variables: Vec<String>) -> Result<Self> {
        if variables.len() != self.series.nrows() {
            return invalid(format!(
                "{} variable names for a {}-dimensional series",
                variables.len(),
                self.series.nrows()
            ));
        }
        self.variables = variables;
        Ok(self)
    }

    /// Dimension `N`.
    pub fn dim(&self) -> usize {
        self.series.nrows()
    }

    /// Total number of observed time points, presample included.
    pub fn len(&self) -> usize {
        self.series.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.series.ncols() == 0
    }

    /// Effective sample size `T` for lag order `p`.
    pub fn sample_size(&self, p: usize) -> usize {
        self.len().saturating_sub(p)
    }

    /// The first `len` time points.
    pub fn prefix(&self, len: usize) -> Panel {
        let len = len.min(self.len());
        Panel {
            task_id: self.task_id.clone(),
            series: self.series.columns(0, len).into_owned(),
            variables: self.variables.clone(),
        }
    }

    /// Stacked lags `x_t = (y_{t-1}ᵀ, …, y_{t-p}ᵀ)ᵀ` for column index `t` (zero-based, `t ≥ p`).
    pub fn lag_vector(&self, t: usize, p: usize) -> crate::tensor::Vector {
        let n = self.dim();
        let mut x = crate::tensor::Vector::zeros(n * p);
        for j in 0..p {
            x.rows_mut(j * n, n)
                .copy_from(&self.series.column(t - 1 - j));
        }
        x
    }
}

/// Response and lagged-predictor matrices of a VAR regression.
#[derive(Debug, Clone)]
pub struct LagDesign {
    /// `N × T`, columns `y_1, …, y_T`.
    pub y: Matrix,
    /// `Np × T`, column `t` stacks `y_{t-1}, …, y_{t-p}`.
    pub x: Matrix,
}

impl LagDesign {
    pub fn sample_size(&self) -> usize {
        self.y.ncols()
    }
}

/// Builds `(Y, X)` so that `Y = A_(1) X + E`.
pub fn lag_design(panel: &Panel, p: usize) -> Result<LagDesign> {
    if p == 0 {
        return invalid("lag order must be at least 1");
    }
    if panel.len() <= p {
        return invalid(format!(
            "series '{}' has {} time points, needs more than p = {p}",
            panel.task_id,
            panel.len()
        ));
    }
    let n = panel.dim();
    let t = panel.len() - p;
    let y = panel.series.columns(p, t).into_owned();
    let mut x = Matrix::zeros(n * p, t);
    for j in 0..p {
        x.rows_mut(j * n, n)
            .copy_from(&panel.series.columns(p - 1 - j, t));
    }
    Ok(LagDesign { y, x })
}

/// A Gaussian VAR(p) process.
#[derive(Debug, Clone)]
pub struct VarProcess {
    coefs: Tensor3,
    noise_cov: Matrix,
    noise_chol: Matrix,
}

impl VarProcess {
    pub fn new(coefs: Tensor3, noise_cov: Matrix) -> Result<Self> {
        let [n, n2, _] = coefs.dims();
        if n != n2 {
            return invalid(format!(
                "transition tensor must be N x N x p, got {:?}",
                coefs.dims()
            ));
        }
        if noise_cov.shape() != (n, n) {
            return invalid(format!("noise covariance must be {n}x{n}"));
        }
        if (&noise_cov - noise_cov.transpose()).abs().max() > 1e-12 {
            return invalid("noise covariance is not symmetric");
        }
        let Some(chol) = noise_cov.clone().cholesky() else {
            return invalid("noise covariance is not positive definite");
        };
        Ok(Self {
            coefs,
            noise_cov,
            noise_chol: chol.l(),
        })
    }

    pub fn with_identity_noise(coefs: Tensor3) -> Result<Self> {
        let n = coefs.dims()[0];
        Self::new(coefs, Matrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.coefs.dims()[0]
    }

    pub fn order(&self) -> usize {
        self.coefs.dims()[2]
    }

    pub fn coefs(&self) -> &Tensor3 {
        &self.coefs
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    pub fn companion(&self) -> Matrix {
        companion_matrix(&self.coefs).expect("validated at construction")
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.companion())
    }

    pub fn is_stationary(&self, margin: f64) -> bool {
        self.spectral_radius() < 1.0 - margin
    }

    /// Simulates `burn_in + T + p` steps from a zero state and keeps the
    /// final `T + p` columns.
    pub fn simulate(&self, t: usize, burn_in: usize, seed: u64) -> Result<Panel> {
        self.simulate_named("sim", t, burn_in, seed)
    }

    pub fn simulate_named(
        &self,
        task_id: &str,
        t: usize,
        burn_in: usize,
        seed: u64,
    ) -> Result<Panel> {
        if t == 0 {
            return invalid("sample size must be at least 1");
        }
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return Err(Error::NonStationary {
                spectral_radius: rho,
            });
        }
        let n = self.dim();
        let p = self.order();
        let total = burn_in + t + p;
        let a1 = self.coefs.matricize(Mode::One);
        let mut rng = rng_from(seed);
        // Leading p zero columns hold the initial state.
        let mut path = Matrix::zeros(n, total + p);
        let mut x = crate::tensor::Vector::zeros(n * p);
        for step in p..total + p {
            for j in 0..p {
                x.rows_mut(j * n, n).copy_from(&path.column(step - 1 - j));
            }
            let z = crate::tensor::Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let y = &a1 * &x + &self.noise_chol * z;
            path.set_column(step, &y);
        }
        let keep = path.columns(total + p - (t + p), t + p).into_owned();
        Ok(Panel::new(task_id, keep))
    }
}

/// Settings of the simulation-study generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    /// Number of source tasks `K`.
    pub sources: usize,
    pub n: usize,
    pub p: usize,
    pub s1: usize,
    pub s2: usize,
    /// Temporal representation rank; ignored when `p = 1`.
    pub s3: usize,
    /// Frobenius norm of every deviation tensor.
    pub h: f64,
    pub t0: usize,
    pub t_src: usize,
    pub seed: u64,
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 {
            return invalid("at least one source task is required");
        }
        if self.p == 0 {
            return invalid("lag order must be at least 1");
        }
        if self.s1 < 2 || self.s1 > self.n || self.s2 < 2 || self.s2 > self.n {
            return invalid(format!(
                "need 2 <= s1, s2 <= N = {}, got ({}, {})",
                self.n, self.s1, self.s2
            ));
        }
        if self.p > 1 && (self.s3 < 2 || self.s3 > self.p) {
            return invalid(format!("need 2 <= s3 <= p = {}, got {}", self.p, self.s3));
        }
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return invalid(format!(
                "similarity deviation h must be finite and >= 0, got {}",
                self.h
            ));
        }
        if self.t0 == 0 || self.t_src == 0 {
            return invalid("sample sizes must be positive");
        }
        Ok(())
    }

    /// Shared representation ranks, with the temporal rank collapsed to 1 when `p = 1`.
    pub fn common_ranks(&self) -> [usize; 3] {
        [self.s1, self.s2, if self.p == 1 { 1 } else { self.s3 }]
    }

    /// Per-task multilinear ranks of the low-rank part.
    pub fn task_ranks(&self) -> [usize; 3] {
        [2, 2, if self.p == 1 { 1 } else { 2 }]
    }
}

/// Ground truth for one task of a generated design.
#[derive(Debug, Clone)]
pub struct TaskTruth {
    /// `⟦D_k; U_k, V_k, L_k⟧` with the task's own orthonormal factors.
    pub low_rank: TuckerFactors,
    /// Core of the low-rank part expressed in the shared representations.
    pub shared_core: Tensor3,
    pub deviation: Tensor3,
    pub process: VarProcess,
}

impl TaskTruth {
    pub fn coefs(&self) -> &Tensor3 {
        self.process.coefs()
    }
}

/// Output of [`generate_design`]. Task 0 is the target.
#[derive(Debug, Clone)]
pub struct SimInstance {
    pub design: SimDesign,
    /// Shared `U`, `V`, `L`.
    pub shared: [Matrix; 3],
    pub tasks: Vec<TaskTruth>,
    pub rejections: usize,
}

impl SimInstance {
    pub fn target(&self) -> &TaskTruth {
        &self.tasks[0]
    }

    pub fn sources(&self) -> &[TaskTruth] {
        &self.tasks[1..]
    }

    /// Simulates the target and source panels. Each task's stream is derived
    /// from the design seed and the task index.
    pub fn simulate_panels(&self, burn_in: usize) -> Result<(Panel, Vec<Panel>)> {
        let d = &self.design;
        let target = self.tasks[0].process.simulate_named(
            "target",
            d.t0,
            burn_in,
            derive_seed(d.seed, &[1, 0]),
        )?;
        let sources = self.tasks[1..]
            .iter()
            .enumerate()
            .map(|(i, task)| {
                let k = i + 1;
                task.process.simulate_named(
                    &format!("source{k}"),
                    d.t_src,
                    burn_in,
                    derive_seed(d.seed, &[1, k as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((target, sources))
    }
}

fn selection_matrix(total: usize, picked: &[usize]) -> Matrix {
    let mut e = Matrix::zeros(total, picked.len());
    for (c, &i) in picked.iter().enumerate() {
        e[(i, c)] = 1.0;
    }
    e
}

fn pick_two(rng: &mut impl Rng, total: usize) -> Vec<usize> {
    let mut v = sample(rng, total, 2).into_vec();
    v.sort_unstable();
    v
}

/// Draws transition tensors `A_k = ⟦D_k; U_k, V_k, L_k⟧ + R_k` for the target
/// (`k = 0`) and `K` sources. Non-stationary draws are rejected and redrawn.
pub fn generate_design(design: &SimDesign) -> Result<SimInstance> {
    design.validate()?;
    let n = design.n;
    let p = design.p;
    let temporal = p > 1;
    let mut rng = rng_from(derive_seed(design.seed, &[0]));

    let u = random_orthonormal(&mut rng, n, design.s1);
    let v = random_orthonormal(&mut rng, n, design.s2);
    let l = if temporal {
        random_orthonormal(&mut rng, p, design.s3)
    } else {
        Matrix::identity(1, 1)
    };
    let proj_u = complement_projector(&u);
    let proj_v = complement_projector(&v);
    let proj_l = complement_projector(&l);
    let core_dims = [2, 2, if temporal { 2 } else { 1 }];
    let entry = Uniform::new_inclusive(0.5, 0.8).expect("valid range");

    let mut tasks = Vec::with_capacity(design.sources + 1);
    let mut rejections = 0usize;
    for k in 0..=design.sources {
        let mut attempt = 0;
        let truth = loop {
            if attempt == MAX_STATIONARY_ATTEMPTS {
                return Err(Error::Generation(format!(
                    "no stationary draw for task {k} after {MAX_STATIONARY_ATTEMPTS} attempts"
                )));
            }
            attempt += 1;

            let cu = pick_two(&mut rng, design.s1);
            let cv = pick_two(&mut rng, design.s2);
            let cl = if temporal {
                pick_two(&mut rng, design.s3)
            } else {
                vec![0]
            };
            let (eu, ev, el) = (
                selection_matrix(design.s1, &cu),
                selection_matrix(design.s2, &cv),
                selection_matrix(l.ncols(), &cl),
            );
            let (uk, vk, lk) = (&u * &eu, &v * &ev, &l * &el);

            let mut s = Tensor3::zeros(core_dims);
            let diag: [f64; 2] = [entry.sample(&mut rng), entry.sample(&mut rng)];
            let norm = diag.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (i, d) in diag.iter().enumerate() {
                // With p = 1 the temporal mode is suppressed and the core is a 2 x 2 diagonal.
                s.set(i, i, if temporal { i } else { 0 }, d / norm);
            }
            let o1 = random_orthonormal(&mut rng, 2, 2);
            let o2 = random_orthonormal(&mut rng, 2, 2);
            let o3 = if temporal {
                random_orthonormal(&mut rng, 2, 2)
            } else {
                Matrix::identity(1, 1)
            };
            let core = s.multilinear(&o1, &o2, &o3)?;
            let low_rank = TuckerFactors::new(core.clone(), [uk, vk, lk], true)?;
            let shared_core = core.multilinear(&eu, &ev, &el)?;

            let deviation = if design.h > 0.0 {
                let raw = Tensor3::from_fn([n, n, p], |_, _, _| StandardNormal.sample(&mut rng));
                let mut r = raw
                    .mode_product(&proj_u, Mode::One)?
                    .mode_product(&proj_v, Mode::Two)?;
                if temporal {
                    r = r.mode_product(&proj_l, Mode::Three)?;
                }
                let norm = r.frobenius_norm();
                if norm == 0.0 {
                    continue;
                }
                r.scale(design.h / norm)
            } else {
                Tensor3::zeros([n, n, p])
            };

            let coefs = &low_rank.reconstruct()? + &deviation;
            let process = VarProcess::with_identity_noise(coefs)?;
            if !process.is_stationary(0.0) {
                rejections += 1;
                continue;
            }
            break TaskTruth {
                low_rank,
                shared_core,
                deviation,
                process,
            };
        };
        tasks.push(truth);
    }
    if rejections > 0 {
        debug!(
            "design seed {}: rejected {rejections} non-stationary draws",
            design.seed
        );
    }
    Ok(SimInstance {
        design: design.clone(),
        shared: [u, v, l],
        tasks,
        rejections,
    })
}
