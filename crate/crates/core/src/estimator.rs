//! The two-stage transfer estimator.
//!
//! Stage I learns shared representations `U`, `V`, `L` from the source tasks by
//! alternating a proximal step on the deviation tensors `R_k` with gradient
//! descent on the orthogonality-regularized loss over `(U, V, L, {D_k})`.
//! Stage II keeps the representations fixed and alternates a proximal step on
//! the target deviation `R_0` with the closed-form least-squares core `D_0`.

use log::{debug, warn};

use crate::error::{invalid, Error, Result};
use crate::tensor::{polar_decompose, tucker_reconstruct, Matrix, Mode, Tensor3, Vector};
use crate::var::{lag_design, LagDesign, Panel};

/// Sufficient statistics of one task's least-squares loss.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task_id: String,
    n: usize,
    p: usize,
    t: usize,
    /// `X Xᵀ`, `Np × Np`.
    xxt: Matrix,
    /// `Y Xᵀ`, `N × Np`.
    yxt: Matrix,
    /// `‖Y‖_F²`.
    yy: f64,
    /// `λ_max(X Xᵀ)`.
    xxt_max_eig: f64,
}

impl TaskData {
    pub fn from_panel(panel: &Panel, p: usize) -> Result<Self> {
        let design = lag_design(panel, p)?;
        Self::from_design(&panel.task_id, &design)
    }

    pub fn from_design(task_id: &str, design: &LagDesign) -> Result<Self> {
        let (n, t) = design.y.shape();
        let np = design.x.nrows();
        if design.x.ncols() != t || np % n != 0 || t == 0 {
            return invalid(format!(
                "inconsistent design: Y is {:?}, X is {:?}",
                design.y.shape(),
                design.x.shape()
            ));
        }
        let xxt = &design.x * design.x.transpose();
        let yxt = &design.y * design.x.transpose();
        let yy = design.y.norm_squared();
        let xxt_max_eig = max_eigenvalue(&xxt);
        Ok(Self {
            task_id: task_id.to_string(),
            n,
            p: np / n,
            t,
            xxt,
            yxt,
            yy,
            xxt_max_eig,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn sample_size(&self) -> usize {
        self.t
    }

    pub fn xxt(&self) -> &Matrix {
        &self.xxt
    }

    pub fn yxt(&self) -> &Matrix {
        &self.yxt
    }

    /// `T / λ_max(X Xᵀ)`, the inverse Lipschitz constant of the loss gradient.
    pub fn step_size(&self) -> Result<f64> {
        if self.xxt_max_eig <= 0.0 {
            return invalid(format!("task '{}' has an all-zero design", self.task_id));
        }
        Ok(self.t as f64 / self.xxt_max_eig)
    }

    /// `(1/2T)‖Y − A_(1) X‖_F²` from the sufficient statistics.
    pub fn loss_unfolded(&self, a1: &Matrix) -> f64 {
        let cross = a1.dot(&self.yxt);
        let quad = (a1 * &self.xxt).dot(a1);
        (self.yy - 2.0 * cross + quad) / (2.0 * self.t as f64)
    }

    pub fn loss(&self, a: &Tensor3) -> f64 {
        self.loss_unfolded(&a.matricize(Mode::One))
    }

    /// Mode-1 matricization of the loss gradient, `(A_(1) X Xᵀ − Y Xᵀ) / T`.
    pub fn gradient_unfolded(&self, a1: &Matrix) -> Matrix {
        (a1 * &self.xxt - &self.yxt) / self.t as f64
    }

    pub fn gradient(&self, a: &Tensor3) -> Tensor3 {
        let g = self.gradient_unfolded(&a.matricize(Mode::One));
        Tensor3::fold(&g, Mode::One, a.dims()).expect("gradient keeps the tensor shape")
    }

    fn check_tensor(&self, a: &Tensor3) -> Result<()> {
        if a.dims() != [self.n, self.n, self.p] {
            return invalid(format!(
                "tensor dims {:?} do not match task '{}' ({} x {} x {})",
                a.dims(),
                self.task_id,
                self.n,
                self.n,
                self.p
            ));
        }
        Ok(())
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration on the Rayleigh quotient, to `1e-8` relative accuracy.
pub(crate) fn max_eigenvalue(sym: &Matrix) -> f64 {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 20_000;
    let n = sym.nrows();
    if n == 0 {
        return 0.0;
    }
    // A fixed, non-symmetric start keeps the iteration deterministic and
    // avoids starting orthogonal to the leading eigenvector in structured cases.
    let mut v = Vector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) * 0.7 + 0.3).sin());
    v.normalize_mut();
    let mut rayleigh = 0.0;
    for _ in 0..MAX_ITER {
        let w = sym * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - rayleigh).abs() <= TOL * next.abs() {
            return next.max(norm);
        }
        rayleigh = next;
    }
    debug!("power iteration did not settle; falling back to a dense eigensolver");
    sym.clone().symmetric_eigen().eigenvalues.max()
}

fn check_regression(a: &Tensor3, y: &Matrix, x: &Matrix) -> Result<()> {
    let [n, n2, p] = a.dims();
    if n != n2 || y.nrows() != n || x.nrows() != n * p || x.ncols() != y.ncols() || y.ncols() == 0 {
        return invalid(format!(
            "shapes do not match: A {:?}, Y {:?}, X {:?}",
            a.dims(),
            y.shape(),
            x.shape()
        ));
    }
    Ok(())
}

/// `(1/2T)‖Y − A_(1) X‖_F²`, evaluated on the residual directly.
pub fn ols_loss(a: &Tensor3, y: &Matrix, x: &Matrix) -> Result<f64> {
    check_regression(a, y, x)?;
    let resid = y - a.matricize(Mode::One) * x;
    Ok(resid.norm_squared() / (2.0 * y.ncols() as f64))
}

/// Gradient of [`ols_loss`]; its mode-1 matricization is `−(1/T)(Y − A_(1)X)Xᵀ`.
pub fn ols_loss_gradient(a: &Tensor3, y: &Matrix, x: &Matrix) -> Result<Tensor3> {
    check_regression(a, y, x)?;
    let resid = y - a.matricize(Mode::One) * x;
    let g = -(resid * x.transpose()) / y.ncols() as f64;
    Tensor3::fold(&g, Mode::One, a.dims())
}

/// Group soft-thresholding `(1 − c/‖A‖_F)₊ A`.
pub fn prox_frobenius(a: &Tensor3, c: f64) -> Result<Tensor3> {
    if c.is_nan() || c < 0.0 {
        return invalid(format!("prox threshold must be non-negative, got {c}"));
    }
    if c == 0.0 {
        return Ok(a.clone());
    }
    let norm = a.frobenius_norm();
    if norm <= c {
        return Ok(Tensor3::zeros(a.dims()));
    }
    Ok(a.scale(1.0 - c / norm))
}

/// `T / λ_max(X Xᵀ)`.
pub fn step_size(x: &Matrix, t: usize) -> Result<f64> {
    let lmax = max_eigenvalue(&(x * x.transpose()));
    if !(lmax > 0.0) {
        return invalid("step size undefined for an all-zero design");
    }
    Ok(t as f64 / lmax)
}

/// One proximal-gradient update of a deviation tensor:
/// `prox_{ηλ}(R − η ∇𝓛(low_rank + R))`.
pub fn prox_update_r(
    r: &Tensor3,
    low_rank: &Tensor3,
    y: &Matrix,
    x: &Matrix,
    eta: f64,
    lambda: f64,
) -> Result<Tensor3> {
    if r.dims() != low_rank.dims() {
        return invalid("deviation and low-rank part differ in shape");
    }
    if !(eta >= 0.0) || !(lambda >= 0.0) {
        return invalid("step size and penalty must be non-negative");
    }
    let grad = ols_loss_gradient(&(low_rank + r), y, x)?;
    let mut moved = r.clone();
    moved.axpy(-eta, &grad);
    prox_frobenius(&moved, eta * lambda)
}

fn prox_update_task(
    task: &TaskData,
    r: &Tensor3,
    low_rank: &Tensor3,
    eta: f64,
    lambda: f64,
) -> Tensor3 {
    if lambda.is_infinite() {
        return Tensor3::zeros(r.dims());
    }
    let grad = task.gradient(&(low_rank + r));
    let mut moved = r.clone();
    moved.axpy(-eta, &grad);
    prox_frobenius(&moved, eta * lambda).expect("penalty validated")
}

/// Penalty and optimizer settings for Stage I.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    /// Per-source `λ_k`; `f64::INFINITY` freezes `R_k` at zero.
    pub lambdas: Vec<f64>,
    /// Per-source weights on the simplex.
    pub weights: Vec<f64>,
    /// Orthogonality regularization strength.
    pub a: f64,
    /// Target column norm of the factors.
    pub b: f64,
    /// Per-source proximal step sizes; `None` uses `T_k / λ_max(X_k X_kᵀ)`.
    pub step_sizes: Option<Vec<f64>>,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative objective change below which the outer loop stops.
    pub tol: f64,
}

impl PenaltyConfig {
    pub fn new(lambdas: Vec<f64>, weights: Vec<f64>) -> Self {
        Self {
            lambdas,
            weights,
            a: 1.0,
            b: 1.0,
            step_sizes: None,
            max_outer: 200,
            max_inner: 50,
            tol: 1e-6,
        }
    }

    pub fn validate(&self, tasks: usize) -> Result<()> {
        if self.lambdas.len() != tasks || self.weights.len() != tasks {
            return invalid(format!(
                "{tasks} tasks but {} penalties and {} weights",
                self.lambdas.len(),
                self.weights.len()
            ));
        }
        if self.lambdas.iter().any(|l| l.is_nan() || *l < 0.0) {
            return invalid("penalties must be non-negative");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return invalid("weights must be non-negative");
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return invalid(format!("weights must sum to one, got {total}"));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return invalid("regularization constants a and b must be positive");
        }
        if let Some(eta) = &self.step_sizes {
            if eta.len() != tasks || eta.iter().any(|e| !(*e > 0.0)) {
                return invalid("step sizes must be positive, one per task");
            }
        }
        if self.max_outer == 0 {
            return invalid("max_outer must be at least 1");
        }
        Ok(())
    }

    fn etas(&self, tasks: &[TaskData]) -> Result<Vec<f64>> {
        match &self.step_sizes {
            Some(eta) => Ok(eta.clone()),
            None => tasks.iter().map(TaskData::step_size).collect(),
        }
    }
}

/// Stage-I iterate. The factors need not be orthonormal mid-run.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneState {
    pub u: Matrix,
    pub v: Matrix,
    pub l: Matrix,
    pub cores: Vec<Tensor3>,
    pub deviations: Vec<Tensor3>,
    pub iterations: usize,
}

impl StageOneState {
    /// State with the given factors and cores and zero deviations.
    pub fn new(u: Matrix, v: Matrix, l: Matrix, cores: Vec<Tensor3>) -> Result<Self> {
        let n = u.nrows();
        let p = l.nrows();
        let deviations = cores.iter().map(|_| Tensor3::zeros([n, n, p])).collect();
        let state = Self {
            u,
            v,
            l,
            cores,
            deviations,
            iterations: 0,
        };
        state.check_shapes()?;
        Ok(state)
    }

    pub fn ranks(&self) -> [usize; 3] {
        [self.u.ncols(), self.v.ncols(), self.l.ncols()]
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.u.nrows();
        let p = self.l.nrows();
        if self.v.nrows() != n {
            return invalid("U and V must have the same number of rows");
        }
        let ranks = self.ranks();
        if ranks.iter().any(|&r| r == 0) {
            return invalid("representation ranks must be positive");
        }
        if self.cores.len() != self.deviations.len() {
            return invalid("one core and one deviation per task");
        }
        if self.cores.iter().any(|d| d.dims() != ranks) {
            return invalid(format!("cores must have dims {ranks:?}"));
        }
        if self.deviations.iter().any(|r| r.dims() != [n, n, p]) {
            return invalid(format!("deviations must have dims {:?}", [n, n, p]));
        }
        Ok(())
    }

    /// `⟦D_k; U, V, L⟧`.
    pub fn low_rank(&self, k: usize) -> Tensor3 {
        tucker_reconstruct(&self.cores[k], &self.u, &self.v, &self.l).expect("shapes checked")
    }

    /// `⟦D_k; U, V, L⟧ + R_k`.
    pub fn task_coefs(&self, k: usize) -> Tensor3 {
        &self.low_rank(k) + &self.deviations[k]
    }

    fn check_against(&self, tasks: &[TaskData]) -> Result<()> {
        self.check_shapes()?;
        if tasks.is_empty() {
            return invalid("at least one source task is required");
        }
        if self.cores.len() != tasks.len() {
            return invalid(format!(
                "state has {} tasks, data has {}",
                self.cores.len(),
                tasks.len()
            ));
        }
        let probe = Tensor3::zeros([self.u.nrows(), self.v.nrows(), self.l.nrows()]);
        tasks.iter().try_for_each(|t| t.check_tensor(&probe))
    }

    /// Rescales the factors to `UᵀU = b²I` (etc.) and counter-rotates the
    /// cores so that every `⟦D_k; U, V, L⟧` is unchanged.
    fn rebalance(&mut self, b: f64) -> Result<()> {
        let pu = polar_decompose(&self.u)?;
        let pv = polar_decompose(&self.v)?;
        let pl = polar_decompose(&self.l)?;
        let (fu, fv, fl) = (&pu.factor / b, &pv.factor / b, &pl.factor / b);
        for d in &mut self.cores {
            *d = d.multilinear(&fu, &fv, &fl)?;
        }
        self.u = pu.basis * b;
        self.v = pv.basis * b;
        self.l = pl.basis * b;
        Ok(())
    }
}

fn gram_penalty(m: &Matrix, b: f64) -> f64 {
    let r = m.ncols();
    (m.transpose() * m - Matrix::identity(r, r) * (b * b)).norm_squared()
}

/// The orthogonality-regularized Step-2 loss with the deviations held fixed:
/// `Σ_k w_k 𝓛_k(⟦D_k; U, V, L⟧ + R_k) + (a/4)(‖UᵀU − b²I‖² + ‖VᵀV − b²I‖² + ‖LᵀL − b²I‖²)`.
pub fn rl_objective(state: &StageOneState, tasks: &[TaskData], cfg: &PenaltyConfig) -> Result<f64> {
    state.check_against(tasks)?;
    cfg.validate(tasks.len())?;
    Ok(rl_value(state, tasks, cfg))
}

fn regularizer(state: &StageOneState, cfg: &PenaltyConfig) -> f64 {
    cfg.a / 4.0
        * (gram_penalty(&state.u, cfg.b)
            + gram_penalty(&state.v, cfg.b)
            + gram_penalty(&state.l, cfg.b))
}

fn rl_value(state: &StageOneState, tasks: &[TaskData], cfg: &PenaltyConfig) -> f64 {
    let data: f64 = tasks
        .iter()
        .enumerate()
        .filter(|(k, _)| cfg.weights[*k] > 0.0)
        .map(|(k, task)| cfg.weights[k] * task.loss(&state.task_coefs(k)))
        .sum();
    data + regularizer(state, cfg)
}

/// The Stage-I objective `Σ_k w_k [𝓛_k(⟦D_k; U, V, L⟧ + R_k) + λ_k ‖R_k‖_F]`.
pub fn stage1_objective(state: &StageOneState, tasks: &[TaskData], cfg: &PenaltyConfig) -> f64 {
    tasks
        .iter()
        .enumerate()
        .filter(|(k, _)| cfg.weights[*k] > 0.0)
        .map(|(k, task)| {
            let penalty = if cfg.lambdas[k].is_infinite() {
                0.0
            } else {
                cfg.lambdas[k] * state.deviations[k].frobenius_norm()
            };
            cfg.weights[k] * (task.loss(&state.task_coefs(k)) + penalty)
        })
        .sum()
}

/// Gradient blocks of [`rl_objective`].
#[derive(Debug, Clone)]
pub struct RlGradients {
    pub u: Matrix,
    pub v: Matrix,
    pub l: Matrix,
    pub cores: Vec<Tensor3>,
}

impl RlGradients {
    fn norm_squared(&self) -> f64 {
        self.u.norm_squared()
            + self.v.norm_squared()
            + self.l.norm_squared()
            + self.cores.iter().map(Tensor3::norm_squared).sum::<f64>()
    }

    fn dot(&self, other: &RlGradients) -> f64 {
        self.u.dot(&other.u)
            + self.v.dot(&other.v)
            + self.l.dot(&other.l)
            + self
                .cores
                .iter()
                .zip(&other.cores)
                .map(|(a, b)| a.inner(b))
                .sum::<f64>()
    }
}

pub fn rl_gradients(
    state: &StageOneState,
    tasks: &[TaskData],
    cfg: &PenaltyConfig,
) -> Result<RlGradients> {
    state.check_against(tasks)?;
    cfg.validate(tasks.len())?;
    Ok(rl_grad(state, tasks, cfg))
}

fn rl_grad(state: &StageOneState, tasks: &[TaskData], cfg: &PenaltyConfig) -> RlGradients {
    let (u, v, l) = (&state.u, &state.v, &state.l);
    let (ut, vt, lt) = (u.transpose(), v.transpose(), l.transpose());
    let mut gu = Matrix::zeros(u.nrows(), u.ncols());
    let mut gv = Matrix::zeros(v.nrows(), v.ncols());
    let mut gl = Matrix::zeros(l.nrows(), l.ncols());
    let mut cores = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let w = cfg.weights[k];
        let d = &state.cores[k];
        if w == 0.0 {
            cores.push(Tensor3::zeros(d.dims()));
            continue;
        }
        let g = task.gradient(&state.task_coefs(k)).scale(w);
        // G ×1 Uᵀ feeds the V, L and D blocks; G ×2 Vᵀ ×3 Lᵀ feeds U.
        let g_u = g.mode_product(&ut, Mode::One).expect("shapes checked");
        let g_ul = g_u.mode_product(&lt, Mode::Three).expect("shapes checked");
        let g_uv = g_u.mode_product(&vt, Mode::Two).expect("shapes checked");
        let g_vl = g
            .mode_product(&vt, Mode::Two)
            .and_then(|x| x.mode_product(&lt, Mode::Three))
            .expect("shapes checked");
        gu += g_vl.matricize(Mode::One) * d.matricize(Mode::One).transpose();
        gv += g_ul.matricize(Mode::Two) * d.matricize(Mode::Two).transpose();
        gl += g_uv.matricize(Mode::Three) * d.matricize(Mode::Three).transpose();
        cores.push(g_uv.mode_product(&lt, Mode::Three).expect("shapes checked"));
    }
    let reg = |m: &Matrix| {
        let r = m.ncols();
        m * (m.transpose() * m - Matrix::identity(r, r) * (cfg.b * cfg.b)) * cfg.a
    };
    gu += reg(u);
    gv += reg(v);
    gl += reg(l);
    RlGradients {
        u: gu,
        v: gv,
        l: gl,
        cores,
    }
}

fn step_state(state: &StageOneState, g: &RlGradients, alpha: f64) -> StageOneState {
    let mut next = state.clone();
    next.u -= &g.u * alpha;
    next.v -= &g.v * alpha;
    next.l -= &g.l * alpha;
    for (d, gd) in next.cores.iter_mut().zip(&g.cores) {
        d.axpy(-alpha, gd);
    }
    next
}

const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Representation step of Stage I: up to `max_inner` gradient steps with Armijo
/// backtracking on the regularized loss. Trial steps use the
/// Barzilai–Borwein length of the previous step.
fn descend_representations(
    state: &mut StageOneState,
    tasks: &[TaskData],
    cfg: &PenaltyConfig,
    alpha0: &mut f64,
) {
    let mut f = rl_value(state, tasks, cfg);
    let mut g = rl_grad(state, tasks, cfg);
    let mut alpha = *alpha0;
    for _ in 0..cfg.max_inner {
        let gnorm2 = g.norm_squared();
        if gnorm2 == 0.0 || !gnorm2.is_finite() {
            break;
        }
        let mut accepted = None;
        let mut trial = alpha;
        for _ in 0..MAX_BACKTRACKS {
            let cand = step_state(state, &g, trial);
            let fc = rl_value(&cand, tasks, cfg);
            if fc.is_finite() && fc <= f - ARMIJO_C * trial * gnorm2 {
                accepted = Some((cand, fc));
                break;
            }
            trial *= ARMIJO_SHRINK;
        }
        let Some((next, f_next)) = accepted else {
            break;
        };
        let g_next = rl_grad(&next, tasks, cfg);
        // Barzilai–Borwein: s = −trial·g, y = g_next − g.
        let sy = -trial * (g_next.dot(&g) - gnorm2);
        let ss = trial * trial * gnorm2;
        alpha = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            trial * 2.0
        };
        let decrease = f - f_next;
        *state = next;
        g = g_next;
        let scale = f.abs().max(f64::MIN_POSITIVE);
        f = f_next;
        if decrease / scale < cfg.tol * 1e-2 {
            break;
        }
    }
    *alpha0 = alpha;
}

/// Output of Stage I.
#[derive(Debug, Clone)]
pub struct StageOneFit {
    /// Orthonormal shared representations.
    pub u: Matrix,
    pub v: Matrix,
    pub l: Matrix,
    /// Final state, expressed in the orthonormal representations.
    pub state: StageOneState,
    /// Stage-I objective before the first and after every outer iteration.
    pub trace: Vec<f64>,
}

fn monotone_slack(prev: f64) -> f64 {
    1e-8 * prev.abs().max(1.0)
}

fn relative_change(prev: f64, next: f64) -> f64 {
    (prev - next).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Stage I: alternating representation learning across the source tasks.
pub fn stage1_fit(
    tasks: &[TaskData],
    cfg: &PenaltyConfig,
    init: StageOneState,
) -> Result<StageOneFit> {
    init.check_against(tasks)?;
    cfg.validate(tasks.len())?;
    let etas = cfg.etas(tasks)?;
    let mut state = init;
    for (k, lambda) in cfg.lambdas.iter().enumerate() {
        if lambda.is_infinite() {
            state.deviations[k] = Tensor3::zeros(state.deviations[k].dims());
        }
    }
    let mut trace = vec![stage1_objective(&state, tasks, cfg)];
    let mut alpha = 1.0;
    for _ in 0..cfg.max_outer {
        for (k, task) in tasks.iter().enumerate() {
            let low = state.low_rank(k);
            state.deviations[k] =
                prox_update_task(task, &state.deviations[k], &low, etas[k], cfg.lambdas[k]);
        }
        state.rebalance(cfg.b)?;
        descend_representations(&mut state, tasks, cfg, &mut alpha);
        state.iterations += 1;

        let prev = *trace.last().expect("trace starts non-empty");
        let next = stage1_objective(&state, tasks, cfg);
        trace.push(next);
        if !next.is_finite() || next > prev + monotone_slack(prev) {
            return Err(Error::Numerical {
                message: format!("stage I objective rose from {prev} to {next}"),
                trace,
            });
        }
        if relative_change(prev, next) < cfg.tol {
            break;
        }
    }
    debug!(
        "stage I finished after {} outer iterations",
        state.iterations
    );
    state.rebalance(1.0)?;
    Ok(StageOneFit {
        u: state.u.clone(),
        v: state.v.clone(),
        l: state.l.clone(),
        state,
        trace,
    })
}

/// Condition-number ceiling for the Gram matrix of the closed-form core.
pub const MAX_CONDITION: f64 = 1e12;

fn kron_predictor_basis(v: &Matrix, l: &Matrix) -> Matrix {
    // Column j2 + s2·j3 pairs V[:, j2] with L[:, j3], matching the mode-1 unfolding of the core.
    l.kronecker(v)
}

/// Solves `Z G = B` for symmetric positive-definite `G` with a conditioning guard.
pub(crate) fn solve_gram_right(b: &Matrix, gram: &Matrix, context: &str) -> Result<Matrix> {
    let eig = gram.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        });
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition,
            context: context.to_string(),
        });
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned {
            condition,
            context: context.to_string(),
        })?;
    Ok(chol.solve(&b.transpose()).transpose())
}

fn closed_form_core(
    task: &TaskData,
    r0: &Tensor3,
    u: &Matrix,
    v: &Matrix,
    l: &Matrix,
) -> Result<Tensor3> {
    let w = kron_predictor_basis(v, l);
    let resid_cross = task.yxt() - r0.matricize(Mode::One) * task.xxt();
    let rhs = u.transpose() * resid_cross * &w;
    let gram = w.transpose() * task.xxt() * &w;
    let d1 = solve_gram_right(&rhs, &gram, "target Gram matrix (L ⊗ V)ᵀ X Xᵀ (L ⊗ V)")?;
    Tensor3::fold(&d1, Mode::One, [u.ncols(), v.ncols(), l.ncols()])
}

/// Least-squares core for fixed orthonormal representations and deviation:
/// `D_(1) = Uᵀ(Y − R_(1)X)Xᵀ(L⊗V) [(L⊗V)ᵀXXᵀ(L⊗V)]⁻¹`.
pub fn closed_form_d0(
    y: &Matrix,
    x: &Matrix,
    r0: &Tensor3,
    u: &Matrix,
    v: &Matrix,
    l: &Matrix,
) -> Result<Tensor3> {
    check_regression(r0, y, x)?;
    if u.nrows() != y.nrows() || v.nrows() != y.nrows() || l.nrows() != r0.dims()[2] {
        return invalid("representations do not match the data dimensions");
    }
    let task = TaskData::from_design(
        "target",
        &LagDesign {
            y: y.clone(),
            x: x.clone(),
        },
    )?;
    closed_form_core(&task, r0, u, v, l)
}

/// Stage-II settings.
#[derive(Debug, Clone)]
pub struct StageTwoConfig {
    pub max_outer: usize,
    pub tol: f64,
    /// Proximal step size; `None` uses `T_0 / λ_max(X_0 X_0ᵀ)`.
    pub step_size: Option<f64>,
}

impl Default for StageTwoConfig {
    fn default() -> Self {
        Self {
            max_outer: 200,
            tol: 1e-6,
            step_size: None,
        }
    }
}

/// Output of Stage II.
#[derive(Debug, Clone)]
pub struct TransferFit {
    pub u: Matrix,
    pub v: Matrix,
    pub l: Matrix,
    pub d0: Tensor3,
    pub r0: Tensor3,
    /// `⟦D_0; U, V, L⟧ + R_0`.
    pub a0: Tensor3,
    /// Penalized target objective before the first and after every iteration.
    pub trace: Vec<f64>,
}

impl TransferFit {
    pub fn coefs(&self) -> &Tensor3 {
        &self.a0
    }
}

fn stage2_objective(task: &TaskData, a0: &Tensor3, r0: &Tensor3, lambda0: f64) -> f64 {
    let penalty = if lambda0.is_infinite() {
        0.0
    } else {
        lambda0 * r0.frobenius_norm()
    };
    task.loss(a0) + penalty
}

/// Stage II: transfers fixed orthonormal representations to the target.
/// `lambda0 = f64::INFINITY` keeps `R_0 = 0` (exact transfer).
pub fn stage2_fit(
    target: &TaskData,
    u: &Matrix,
    v: &Matrix,
    l: &Matrix,
    lambda0: f64,
    cfg: &StageTwoConfig,
) -> Result<TransferFit> {
    if lambda0.is_nan() || lambda0 < 0.0 {
        return invalid(format!("lambda0 must be non-negative, got {lambda0}"));
    }
    let n = target.dim();
    let p = target.order();
    if u.nrows() != n || v.nrows() != n || l.nrows() != p {
        return invalid("representations do not match the target dimensions");
    }
    for (name, m) in [("U", u), ("V", v), ("L", l)] {
        let defect = crate::tensor::orthonormality_defect(m);
        if defect > 1e-8 {
            warn!("stage II representation {name} is not orthonormal (defect {defect:.2e})");
        }
    }
    let eta = match cfg.step_size {
        Some(e) if e > 0.0 => e,
        Some(e) => return invalid(format!("step size must be positive, got {e}")),
        None => target.step_size()?,
    };

    let mut r0 = Tensor3::zeros([n, n, p]);
    let mut d0 = closed_form_core(target, &r0, u, v, l)?;
    let mut low = tucker_reconstruct(&d0, u, v, l)?;
    let mut trace = vec![stage2_objective(target, &low, &r0, lambda0)];
    if !lambda0.is_infinite() {
        for _ in 0..cfg.max_outer {
            r0 = prox_update_task(target, &r0, &low, eta, lambda0);
            d0 = closed_form_core(target, &r0, u, v, l)?;
            low = tucker_reconstruct(&d0, u, v, l)?;
            let prev = *trace.last().expect("non-empty");
            let next = stage2_objective(target, &(&low + &r0), &r0, lambda0);
            trace.push(next);
            if !next.is_finite() || next > prev + monotone_slack(prev) {
                return Err(Error::Numerical {
                    message: format!("stage II objective rose from {prev} to {next}"),
                    trace,
                });
            }
            if relative_change(prev, next) < cfg.tol {
                break;
            }
        }
    }
    let a0 = &low + &r0;
    Ok(TransferFit {
        u: u.clone(),
        v: v.clone(),
        l: l.clone(),
        d0,
        r0,
        a0,
        trace,
    })
}
