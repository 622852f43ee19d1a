//! Initialization of Stage I and the tuning rules around it: per-source
//! multilinear low-rank fits, rank selection, subspace aggregation, task
//! weights, penalty schedules and validation of the penalty constant.

use log::{debug, warn};

use crate::error::{invalid, Error, Result};
use crate::estimator::{solve_gram_right, stage1_fit, PenaltyConfig, StageOneState, TaskData};
use crate::tensor::{
    hosvd, sign_flip_needed, singular_values, truncated_svd, Matrix, Mode, Tensor3, TuckerFactors,
};
use crate::var::Panel;

/// Multilinear ranks `(r1, r2, r3)`.
pub type Ranks = [usize; 3];

/// Stopping rule for the alternating least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlrConfig {
    pub max_iter: usize,
    /// Relative loss change below which the iteration stops.
    pub tol: f64,
}

impl Default for MlrConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

/// A multilinear low-rank VAR fit.
#[derive(Debug, Clone)]
pub struct MlrFit {
    pub coefs: Tensor3,
    /// Orthonormal Tucker factors of `coefs`.
    pub factors: TuckerFactors,
    /// Loss of the initializer followed by the loss after each sweep.
    pub trace: Vec<f64>,
}

/// Least-squares coefficients through the Moore–Penrose inverse of `X Xᵀ`.
/// Unlike [`crate::baselines::ols_var`] this is defined when `T < Np`.
pub fn ols_pinv(task: &TaskData) -> Result<Tensor3> {
    let xxt = task.xxt();
    let eig = xxt.clone().symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return invalid(format!("task '{}' has an all-zero design", task.task_id));
    }
    let cutoff = top * 1e-12 * xxt.nrows() as f64;
    let inv_vals = eig
        .eigenvalues
        .map(|e| if e > cutoff { 1.0 / e } else { 0.0 });
    let pinv = &eig.eigenvectors * Matrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let a1 = task.yxt() * pinv;
    Tensor3::fold(&a1, Mode::One, [task.dim(), task.dim(), task.order()])
}

/// Minimizes the task loss over `vec(A) = M θ`. Columns of `design` are
/// `vec(∂A/∂θ_i)` in the tensor's storage order.
fn block_least_squares(task: &TaskData, design: &Matrix, context: &str) -> Result<Matrix> {
    let n = task.dim();
    let np = n * task.order();
    let q = design.ncols();
    let mut h_design = Matrix::zeros(design.nrows(), q);
    for c in 0..q {
        let col = Matrix::from_column_slice(n, np, design.column(c).as_slice());
        let moved = col * task.xxt();
        h_design.column_mut(c).copy_from_slice(moved.as_slice());
    }
    let gram = design.transpose() * h_design;
    let gram = (&gram + gram.transpose()) * 0.5;
    let g = Matrix::from_column_slice(1, n * np, task.yxt().as_slice());
    let rhs = g * design;
    Ok(solve_gram_right(&rhs, &gram, context)?.transpose())
}

/// Columns `vec(∂A/∂F)` for `A = partial ×_mode F`, with `vec(F)` column-major.
fn factor_design(partial: &Tensor3, mode: Mode, rows: usize) -> Matrix {
    let [d1, d2, d3] = partial.dims();
    let out_dims = match mode {
        Mode::One => [rows, d2, d3],
        Mode::Two => [d1, rows, d3],
        Mode::Three => [d1, d2, rows],
    };
    let r = partial.dims()[mode.index()];
    let total = out_dims.iter().product::<usize>();
    let mut m = Matrix::zeros(total, rows * r);
    for k in 0..out_dims[2] {
        for j in 0..out_dims[1] {
            for i in 0..out_dims[0] {
                let idx = i + out_dims[0] * (j + out_dims[1] * k);
                let (row, fixed): (usize, [usize; 3]) = match mode {
                    Mode::One => (i, [0, j, k]),
                    Mode::Two => (j, [i, 0, k]),
                    Mode::Three => (k, [i, j, 0]),
                };
                for c in 0..r {
                    let mut at = fixed;
                    at[mode.index()] = c;
                    m[(idx, row + rows * c)] = partial.get(at[0], at[1], at[2]);
                }
            }
        }
    }
    m
}

/// Fits `A = ⟦S; U, V, L⟧` with the given ranks by alternating least squares
/// over `U`, `V`, `L` and `S`, starting from the truncated HOSVD of the
/// (pseudo-inverse) OLS estimate.
pub fn fit_mlr_task(task: &TaskData, ranks: Ranks, cfg: &MlrConfig) -> Result<MlrFit> {
    let n = task.dim();
    let p = task.order();
    let dims = [n, n, p];
    if ranks.iter().zip(&dims).any(|(&r, &d)| r == 0 || r > d) || !ranks_feasible(ranks) {
        return invalid(format!("ranks {ranks:?} infeasible for dims {dims:?}"));
    }
    if task.sample_size() < n * p {
        warn!(
            "task '{}': T = {} is below Np = {}; the rank-constrained fit may be unstable",
            task.task_id,
            task.sample_size(),
            n * p
        );
    }
    let ols = ols_pinv(task)?;
    let init = hosvd(&ols, ranks)?;
    let mut core = init.core;
    let [mut u, mut v, mut l] = init.factors;
    let mut coefs = core.multilinear(&u, &v, &l)?;
    let mut trace = vec![task.loss(&coefs)];

    for _ in 0..cfg.max_iter {
        for mode in Mode::ALL {
            let partial = match mode {
                Mode::One => core.multilinear(&Matrix::identity(ranks[0], ranks[0]), &v, &l)?,
                Mode::Two => core.multilinear(&u, &Matrix::identity(ranks[1], ranks[1]), &l)?,
                Mode::Three => core.multilinear(&u, &v, &Matrix::identity(ranks[2], ranks[2]))?,
            };
            let rows = dims[mode.index()];
            let design = factor_design(&partial, mode, rows);
            let theta =
                block_least_squares(task, &design, "factor update of the low-rank VAR fit")?;
            let factor = Matrix::from_column_slice(rows, ranks[mode.index()], theta.as_slice());
            // F = Q (Σ Wᵀ): keep Q and move the rest into the core.
            let svd = truncated_svd(&factor, ranks[mode.index()])?;
            let rest = Matrix::from_diagonal(&crate::Vector::from_vec(svd.singular_values))
                * svd.v.transpose();
            core = core.mode_product(&rest, mode)?;
            match mode {
                Mode::One => u = svd.u,
                Mode::Two => v = svd.u,
                Mode::Three => l = svd.u,
            }
        }
        let kron = l.kronecker(&v.kronecker(&u));
        let theta = block_least_squares(task, &kron, "core update of the low-rank VAR fit")?;
        core = Tensor3::new(ranks, theta.as_slice().to_vec())?;
        coefs = core.multilinear(&u, &v, &l)?;

        let prev = *trace.last().expect("non-empty");
        let next = task.loss(&coefs);
        trace.push(next);
        if !next.is_finite() || next > prev + 1e-10 * prev.abs().max(1.0) {
            return Err(Error::Numerical {
                message: format!("low-rank VAR loss rose from {prev} to {next}"),
                trace,
            });
        }
        if (prev - next).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    debug!(
        "low-rank VAR fit for '{}' used {} sweeps",
        task.task_id,
        trace.len() - 1
    );
    let factors = TuckerFactors::new(core, [u, v, l], true)?;
    Ok(MlrFit {
        coefs,
        factors,
        trace,
    })
}

/// [`fit_mlr_task`] on a panel.
pub fn fit_mlr_var(panel: &Panel, p: usize, ranks: Ranks, cfg: &MlrConfig) -> Result<MlrFit> {
    fit_mlr_task(&TaskData::from_panel(panel, p)?, ranks, cfg)
}

/// `argmin_{1 ≤ i ≤ r_max} (σ_{i+1} + ridge)/(σ_i + ridge)`, smallest index on
/// ties. Only indices with a following singular value are candidates.
pub fn ridge_ratio_rank(sv: &[f64], r_max: usize, ridge: f64) -> Result<usize> {
    if sv.is_empty() || !(sv[0] > 0.0) {
        return Err(Error::Selection("all singular values are zero".into()));
    }
    if !(ridge >= 0.0) {
        return invalid("ridge must be non-negative");
    }
    let limit = r_max.min(sv.len() - 1);
    let mut best = (1, f64::INFINITY);
    for i in 1..=limit {
        let ratio = (sv[i] + ridge) / (sv[i - 1] + ridge);
        if ratio < best.1 {
            best = (i, ratio);
        }
    }
    Ok(best.0)
}

/// Whether `ranks` can be the multilinear ranks of some tensor: no rank may
/// exceed the product of the other two.
pub fn ranks_feasible(ranks: Ranks) -> bool {
    let [a, b, c] = ranks;
    a <= b * c && b <= a * c && c <= a * b
}

/// Largest feasible ranks that are elementwise no larger than `ranks`.
pub fn feasible_ranks(mut ranks: Ranks) -> Ranks {
    while !ranks_feasible(ranks) {
        let [a, b, c] = ranks;
        ranks = [a.min(b * c), b.min(a * c), c.min(a * b)];
    }
    ranks
}

/// Default ceiling on any selected rank.
pub const DEFAULT_R_MAX: usize = 10;

/// Ridge-type ratio rank selection on each mode of the OLS estimate.
/// `ridge = None` uses `0.01·σ₁·sqrt(Np/T)` per mode; `r_max = None` searches
/// up to `min(10, ⌈d/2⌉)` on a mode of dimension `d`.
pub fn select_ranks_task(
    task: &TaskData,
    r_max: Option<usize>,
    ridge: Option<f64>,
) -> Result<Ranks> {
    let n = task.dim();
    let p = task.order();
    let ols = ols_pinv(task)?;
    let scale = ((n * p) as f64 / task.sample_size() as f64).sqrt();
    let mut ranks = [1; 3];
    for mode in Mode::ALL {
        let sv = singular_values(&ols.matricize(mode));
        let rho = ridge.unwrap_or(0.01 * sv.first().copied().unwrap_or(0.0) * scale);
        let d = ols.dim(mode);
        // Tail ratios of a noisy square unfolding are unstable, so the
        // default search stops at half the mode dimension.
        let cap = r_max.unwrap_or(DEFAULT_R_MAX.min(d.div_ceil(2))).min(d);
        ranks[mode.index()] = ridge_ratio_rank(&sv, cap, rho)?;
    }
    Ok(feasible_ranks(ranks))
}

/// [`select_ranks_task`] on a panel.
pub fn select_ranks_ridge_ratio(
    panel: &Panel,
    p: usize,
    r_max: Option<usize>,
    ridge: Option<f64>,
) -> Result<Ranks> {
    select_ranks_task(&TaskData::from_panel(panel, p)?, r_max, ridge)
}

fn check_simplex(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count {
        return invalid(format!("{count} items but {} weights", weights.len()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return invalid("weights must be non-negative");
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return invalid(format!("weights must sum to one, got {total}"));
    }
    Ok(())
}

/// Eigen-decomposition of a weighted sum of projections, largest first.
#[derive(Debug, Clone)]
pub struct SubspaceAggregate {
    pub eigvals: Vec<f64>,
    pub eigvecs: Matrix,
}

impl SubspaceAggregate {
    /// Leading `r` eigenvectors.
    pub fn basis(&self, r: usize) -> Matrix {
        self.eigvecs.columns(0, r).into_owned()
    }
}

/// Decomposes `Σ_k w_k F_k F_kᵀ` for orthonormal `F_k`.
pub fn aggregate_subspaces(factors: &[Matrix], weights: &[f64]) -> Result<SubspaceAggregate> {
    if factors.is_empty() {
        return invalid("no subspaces to aggregate");
    }
    check_simplex(weights, factors.len())?;
    let d = factors[0].nrows();
    if factors.iter().any(|f| f.nrows() != d) {
        return invalid("subspaces live in different ambient dimensions");
    }
    let mut sigma = Matrix::zeros(d, d);
    for (f, w) in factors.iter().zip(weights) {
        sigma += f * f.transpose() * *w;
    }
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let eig = sigma.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigvals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigvecs = Matrix::zeros(d, d);
    for (c, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        if sign_flip_needed(col.as_slice()) {
            col.neg_mut();
        }
        eigvecs.set_column(c, &col);
    }
    Ok(SubspaceAggregate { eigvals, eigvecs })
}

/// How the number of common components is read off the aggregated spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    /// Count of eigenvalues strictly above `τ`.
    Threshold(f64),
    /// Position before the largest second difference of the spectrum.
    Elbow,
}

/// Default eigenvalue threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.75;

impl Default for RankRule {
    fn default() -> Self {
        RankRule::Threshold(DEFAULT_THRESHOLD)
    }
}

/// Number of common components under `rule`. The threshold rule may return 0.
///
/// The elbow rule returns the `k` maximizing
/// `(λ_k − λ_{k+1}) − (λ_{k+1} − λ_{k+2})`, i.e. the last index before the
/// gap stops shrinking; spectra with fewer than three values give 1.
pub fn select_common_ranks(eigvals: &[f64], rule: RankRule) -> Result<usize> {
    if eigvals.is_empty() {
        return Err(Error::Selection("empty eigenvalue list".into()));
    }
    match rule {
        RankRule::Threshold(tau) => Ok(eigvals.iter().filter(|&&e| e > tau).count()),
        RankRule::Elbow => {
            if eigvals.len() < 3 {
                return Ok(1);
            }
            let mut best = (1, f64::NEG_INFINITY);
            for k in 0..eigvals.len() - 2 {
                let second = eigvals[k] - 2.0 * eigvals[k + 1] + eigvals[k + 2];
                if second > best.1 {
                    best = (k + 1, second);
                }
            }
            Ok(best.0)
        }
    }
}

/// Settings of the three-step initialization.
#[derive(Debug, Clone, Default)]
pub struct InitConfig {
    /// Ceiling for per-task ranks; `None` uses `min(10, ⌈d/2⌉)` per mode.
    pub r_max: Option<usize>,
    /// Ridge of the ratio criterion; `None` uses the scale-aware default.
    pub ridge: Option<f64>,
    pub rule: RankRule,
    /// Per-task ranks to use instead of the ratio criterion.
    pub task_ranks: Option<Ranks>,
    /// Common ranks to use instead of `rule`.
    pub common_ranks: Option<Ranks>,
    pub mlr: MlrConfig,
}

/// Everything produced by [`initialize_all`].
#[derive(Debug, Clone)]
pub struct InitBundle {
    pub u0: Matrix,
    pub v0: Matrix,
    pub l0: Matrix,
    pub ranks: Ranks,
    /// `D_k⁽⁰⁾`, the per-task fits projected onto the initial representations.
    pub cores: Vec<Tensor3>,
    /// Aggregated spectra for the `U`, `V` and `L` families.
    pub eigvals: [Vec<f64>; 3],
    pub task_ranks: Vec<Ranks>,
    pub fits: Vec<Tensor3>,
}

impl InitBundle {
    /// Stage-I starting point with `R_k⁽⁰⁾ = 0`.
    pub fn state(&self) -> Result<StageOneState> {
        StageOneState::new(
            self.u0.clone(),
            self.v0.clone(),
            self.l0.clone(),
            self.cores.clone(),
        )
    }
}

/// Per-source low-rank fits, per-fit HOSVD, weighted aggregation of each
/// factor family and projection of the fits onto the aggregated bases.
pub fn initialize_all(
    sources: &[TaskData],
    weights: &[f64],
    cfg: &InitConfig,
) -> Result<InitBundle> {
    if sources.is_empty() {
        return invalid("initialization needs at least one source");
    }
    check_simplex(weights, sources.len())?;
    let n = sources[0].dim();
    let p = sources[0].order();
    if sources.iter().any(|s| s.dim() != n || s.order() != p) {
        return invalid("all sources must share N and p");
    }
    let dims = [n, n, p];

    let mut task_ranks = Vec::with_capacity(sources.len());
    let mut fits = Vec::with_capacity(sources.len());
    let mut families: [Vec<Matrix>; 3] = Default::default();
    for task in sources {
        let ranks = match cfg.task_ranks {
            Some(r) => r,
            None => select_ranks_task(task, cfg.r_max, cfg.ridge)?,
        };
        let fit = fit_mlr_task(task, ranks, &cfg.mlr)?;
        let tucker = hosvd(&fit.coefs, ranks)?;
        for (family, factor) in families.iter_mut().zip(tucker.factors) {
            family.push(factor);
        }
        task_ranks.push(ranks);
        fits.push(fit.coefs);
    }

    let aggregates = families
        .iter()
        .map(|f| aggregate_subspaces(f, weights))
        .collect::<Result<Vec<_>>>()?;
    // Common ranks need not be feasible for any single tensor: each task may
    // use only part of the shared space.
    let ranks = match cfg.common_ranks {
        Some(r) => r,
        None => {
            let mut r = [0; 3];
            for j in 0..3 {
                r[j] = select_common_ranks(&aggregates[j].eigvals, cfg.rule)?.clamp(1, dims[j]);
            }
            r
        }
    };
    for j in 0..3 {
        if ranks[j] == 0 || ranks[j] > dims[j] {
            return invalid(format!(
                "common rank {} for mode {} outside 1..={}",
                ranks[j],
                j + 1,
                dims[j]
            ));
        }
    }
    let bases: [Matrix; 3] = std::array::from_fn(|j| aggregates[j].basis(ranks[j]));
    let eigvals: [Vec<f64>; 3] = std::array::from_fn(|j| aggregates[j].eigvals.clone());
    let [u0, v0, l0] = bases;
    let cores = fits
        .iter()
        .map(|a| a.project(&u0, &v0, &l0))
        .collect::<Result<Vec<_>>>()?;
    debug!("initial common ranks {ranks:?}, per-task ranks {task_ranks:?}");
    Ok(InitBundle {
        u0,
        v0,
        l0,
        ranks,
        cores,
        eigvals,
        task_ranks,
        fits,
    })
}

/// `w_k ∝ T_k / σ_k`, where `σ_k` estimates `λ_max(Σ_ε,k)`.
pub fn weights_optimal(t: &[usize], sigma_max: &[f64]) -> Result<Vec<f64>> {
    if t.is_empty() || t.len() != sigma_max.len() {
        return invalid("need one noise level per task");
    }
    if t.contains(&0) || sigma_max.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return invalid("sample sizes and noise levels must be positive");
    }
    let raw: Vec<f64> = t
        .iter()
        .zip(sigma_max)
        .map(|(&t, &s)| t as f64 / s)
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// `w_k = T_k / Σ T_j`.
pub fn weights_simple(t: &[usize]) -> Result<Vec<f64>> {
    weights_optimal(t, &vec![1.0; t.len()])
}

/// Largest eigenvalue of the residual covariance `(1/T) E Eᵀ` of a fit.
pub fn residual_sigma_max(design: &crate::var::LagDesign, coefs: &Tensor3) -> Result<f64> {
    let resid = &design.y - coefs.matricize(Mode::One) * &design.x;
    let cov = &resid * resid.transpose() / design.sample_size() as f64;
    Ok(crate::estimator::max_eigenvalue(&cov))
}

/// Penalty levels `λ_k = c_S·sqrt((N²p + N·ln(NK))/T_k)` and
/// `λ₀ = c_T·sqrt((N²p + N·ln N)/T₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSchedule {
    pub c_s: f64,
    pub c_t: f64,
    pub lambdas: Vec<f64>,
    pub lambda0: f64,
}

/// The source half of [`lambda_schedule`].
pub fn source_lambdas(c_s: f64, n: usize, p: usize, t: &[usize]) -> Result<Vec<f64>> {
    if !(c_s >= 0.0) || n == 0 || p == 0 || t.is_empty() || t.contains(&0) {
        return invalid("penalty schedule needs c_S ≥ 0 and positive N, p, K, T_k");
    }
    let (n, p, k) = (n as f64, p as f64, t.len() as f64);
    let base = n * n * p + n * (n * k).ln();
    Ok(t.iter()
        .map(|&tk| c_s * (base / tk as f64).sqrt())
        .collect())
}

/// The target half of [`lambda_schedule`].
pub fn target_lambda(c_t: f64, n: usize, p: usize, t0: usize) -> Result<f64> {
    if !(c_t >= 0.0) || n == 0 || p == 0 || t0 == 0 {
        return invalid("penalty schedule needs c_T ≥ 0 and positive N, p, T₀");
    }
    let (nf, pf) = (n as f64, p as f64);
    Ok(c_t * ((nf * nf * pf + nf * nf.ln()) / t0 as f64).sqrt())
}

pub fn lambda_schedule(
    c_s: f64,
    c_t: f64,
    n: usize,
    p: usize,
    t: &[usize],
    t0: usize,
) -> Result<LambdaSchedule> {
    let lambdas = source_lambdas(c_s, n, p, t)?;
    let lambda0 = target_lambda(c_t, n, p, t0)?;
    Ok(LambdaSchedule {
        c_s,
        c_t,
        lambdas,
        lambda0,
    })
}

/// `0.25, 0.5, …, 2.0`.
pub fn default_c_grid() -> Vec<f64> {
    (1..=8).map(|i| 0.25 * i as f64).collect()
}

/// How each grid point is fitted during validation.
#[derive(Debug, Clone)]
pub struct ValidationProtocol {
    pub init: InitConfig,
    /// Source weights; `None` uses [`weights_simple`] on the training prefixes.
    pub weights: Option<Vec<f64>>,
    /// Optimizer settings; its penalties and weights are replaced per grid point.
    pub template: PenaltyConfig,
}

impl Default for ValidationProtocol {
    fn default() -> Self {
        Self {
            init: InitConfig::default(),
            weights: None,
            template: PenaltyConfig::new(Vec::new(), Vec::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub c_s: f64,
    /// `(c, aggregate holdout RMSFE)` for every grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Pooled one-step RMSFE of fixed coefficients over the last `holdout`
/// points of each panel.
pub fn holdout_rmsfe(panels: &[Panel], coefs: &[Tensor3], holdout: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (panel, a) in panels.iter().zip(coefs) {
        let p = a.dims()[2];
        let a1 = a.matricize(Mode::One);
        for t in panel.len() - holdout..panel.len() {
            let err = panel.series.column(t) - &a1 * panel.lag_vector(t, p);
            sum += err.norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        return invalid("empty holdout");
    }
    Ok((sum / count as f64).sqrt())
}

/// Picks `c_S` from `grid` by fitting Stage I on training prefixes and
/// scoring one-step forecasts over each source's last `holdout` points.
/// Ties go to the smallest `c`.
pub fn select_c_by_validation(
    sources: &[Panel],
    p: usize,
    grid: &[f64],
    holdout: usize,
    protocol: &ValidationProtocol,
) -> Result<ValidationOutcome> {
    if grid.is_empty() {
        return Err(Error::Selection("empty validation grid".into()));
    }
    if sources.is_empty() {
        return invalid("validation needs at least one source");
    }
    if holdout == 0 || sources.iter().any(|s| holdout >= s.sample_size(p)) {
        return invalid(format!(
            "holdout length {holdout} must be positive and below every T_k"
        ));
    }
    let train: Vec<TaskData> = sources
        .iter()
        .map(|s| TaskData::from_panel(&s.prefix(s.len() - holdout), p))
        .collect::<Result<_>>()?;
    let t: Vec<usize> = train.iter().map(TaskData::sample_size).collect();
    let weights = match &protocol.weights {
        Some(w) => w.clone(),
        None => weights_simple(&t)?,
    };
    let init = initialize_all(&train, &weights, &protocol.init)?;
    let n = sources[0].dim();

    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &c in &sorted {
        let mut cfg = protocol.template.clone();
        cfg.lambdas = source_lambdas(c, n, p, &t)?;
        cfg.weights = weights.clone();
        let fit = stage1_fit(&train, &cfg, init.state()?)?;
        let coefs: Vec<Tensor3> = (0..train.len()).map(|k| fit.state.task_coefs(k)).collect();
        let score = holdout_rmsfe(sources, &coefs, holdout)?;
        debug!("validation c = {c}: RMSFE {score:.6}");
        scores.push((c, score));
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((c, score));
        }
    }
    let (c_s, _) = best.expect("grid is non-empty");
    let scores = grid
        .iter()
        .map(|&g| {
            *scores
                .iter()
                .find(|(c, _)| *c == g)
                .expect("every grid point scored")
        })
        .collect();
    Ok(ValidationOutcome { c_s, scores })
}
