//! Comparator estimators: unrestricted OLS, multilinear low-rank VAR, exact
//! transfer (Pool), transfer from the initializer (Initial) and lasso VAR.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{
    solve_gram_right, stage1_fit, stage2_fit, PenaltyConfig, StageOneState, StageTwoConfig,
    TaskData, TransferFit,
};
use crate::selection::{fit_mlr_task, InitBundle, MlrConfig, Ranks};
use crate::tensor::{Matrix, Mode, Tensor3};
use crate::var::Panel;

/// Least-squares VAR coefficients `A_(1) = Y Xᵀ (X Xᵀ)⁻¹`, refusing
/// ill-conditioned designs such as `T < Np`.
pub fn ols_task(task: &TaskData) -> Result<Tensor3> {
    let a1 = solve_gram_right(task.yxt(), task.xxt(), "OLS Gram matrix X Xᵀ")?;
    Tensor3::fold(&a1, Mode::One, [task.dim(), task.dim(), task.order()])
}

pub fn ols_var(panel: &Panel, p: usize) -> Result<Tensor3> {
    ols_task(&TaskData::from_panel(panel, p)?)
}

/// Multilinear low-rank VAR coefficients.
pub fn mlr_var(panel: &Panel, p: usize, ranks: Ranks) -> Result<Tensor3> {
    Ok(fit_mlr_task(
        &TaskData::from_panel(panel, p)?,
        ranks,
        &MlrConfig::default(),
    )?
    .coefs)
}

/// Exact transfer: Stage I and Stage II with every deviation frozen at zero.
pub fn pool_var(
    sources: &[TaskData],
    target: &TaskData,
    init: StageOneState,
    cfg: &PenaltyConfig,
    stage2: &StageTwoConfig,
) -> Result<TransferFit> {
    let mut frozen = cfg.clone();
    frozen.lambdas = vec![f64::INFINITY; sources.len()];
    let fit = stage1_fit(sources, &frozen, init)?;
    stage2_fit(target, &fit.u, &fit.v, &fit.l, f64::INFINITY, stage2)
}

/// Stage II on the initial representations, skipping Stage I.
pub fn initial_var(
    init: &InitBundle,
    target: &TaskData,
    lambda0: f64,
    stage2: &StageTwoConfig,
) -> Result<TransferFit> {
    stage2_fit(target, &init.u0, &init.v0, &init.l0, lambda0, stage2)
}

/// Grid of lasso penalties searched by the Sparse-VAR comparator.
pub const SPARSE_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub max_iter: usize,
    /// Target KKT residual.
    pub kkt_tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coefs: Tensor3,
    pub iterations: usize,
    pub kkt_residual: f64,
}

fn soft_threshold(m: &Matrix, c: f64) -> Matrix {
    m.map(|x| x.signum() * (x.abs() - c).max(0.0))
}

fn lasso_kkt(task: &TaskData, a1: &Matrix, lambda: f64) -> f64 {
    let g = task.gradient_unfolded(a1);
    a1.iter()
        .zip(g.iter())
        .map(|(&a, &g)| {
            if a == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * a.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the lasso optimality conditions at `a`.
pub fn lasso_kkt_residual(task: &TaskData, a: &Tensor3, lambda: f64) -> f64 {
    lasso_kkt(task, &a.matricize(Mode::One), lambda)
}

/// `(1/2T)‖Y − A_(1)X‖² + λ‖A‖₁` by accelerated proximal gradient with
/// adaptive restart, stopped on the KKT residual.
pub fn sparse_var_task(task: &TaskData, lambda: f64, cfg: &LassoConfig) -> Result<LassoFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid(format!(
            "lasso penalty must be finite and non-negative, got {lambda}"
        ));
    }
    let eta = task.step_size()?;
    let (n, np) = (task.dim(), task.dim() * task.order());
    let mut x = Matrix::zeros(n, np);
    let mut z = x.clone();
    let mut theta = 1.0f64;
    let mut kkt = lasso_kkt(task, &x, lambda);
    let mut iterations = 0;
    while iterations < cfg.max_iter && kkt > cfg.kkt_tol {
        iterations += 1;
        let step = &z - task.gradient_unfolded(&z) * eta;
        let next = soft_threshold(&step, eta * lambda);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical {
                message: "lasso iterate became non-finite".into(),
                trace: Vec::new(),
            });
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        // Gradient-based restart: drop momentum when it opposes the last move.
        if (&z - &next).dot(&(&next - &x)) > 0.0 {
            theta = 1.0;
            z = next.clone();
        } else {
            z = &next + (&next - &x) * ((theta - 1.0) / theta_next);
            theta = theta_next;
        }
        x = next;
        if iterations % 10 == 0 {
            kkt = lasso_kkt(task, &x, lambda);
        }
    }
    kkt = lasso_kkt(task, &x, lambda);
    if kkt > cfg.kkt_tol {
        warn!(
            "lasso for '{}' stopped after {iterations} iterations with KKT residual {kkt:.2e}",
            task.task_id
        );
    }
    Ok(LassoFit {
        coefs: Tensor3::fold(&x, Mode::One, [n, n, task.order()])?,
        iterations,
        kkt_residual: kkt,
    })
}

pub fn sparse_var_lasso(panel: &Panel, p: usize, lambda: f64) -> Result<Tensor3> {
    Ok(sparse_var_task(
        &TaskData::from_panel(panel, p)?,
        lambda,
        &LassoConfig::default(),
    )?
    .coefs)
}

/// Chooses the lasso penalty from `grid` by one-step forecasts over the last
/// `holdout` points of `panel`, fitting once on the preceding prefix.
/// Returns the chosen value and the holdout RMSFE of every grid point.
pub fn select_lasso_lambda(
    panel: &Panel,
    p: usize,
    grid: &[f64],
    holdout: usize,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Selection("empty lasso grid".into()));
    }
    if holdout == 0 || holdout >= panel.sample_size(p) {
        return invalid(format!(
            "holdout length {holdout} must be positive and below T"
        ));
    }
    let train = TaskData::from_panel(&panel.prefix(panel.len() - holdout), p)?;
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let fit = sparse_var_task(&train, lambda, &LassoConfig::default())?;
        scores.push(crate::selection::holdout_rmsfe(
            std::slice::from_ref(panel),
            &[fit.coefs],
            holdout,
        )?);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] || (*s == scores[best] && grid[i] < grid[best]) {
            best = i;
        }
    }
    Ok((grid[best], scores))
}

fn default_sparse_grid() -> Vec<f64> {
    SPARSE_GRID.to_vec()
}

/// Comparator taxonomy with kind-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    /// Unrestricted least squares on the target.
    Ols,
    /// Multilinear low-rank VAR on the target; `None` selects ranks by the ratio rule.
    Mlr {
        #[serde(default)]
        ranks: Option<Ranks>,
    },
    /// Exact transfer with `λ = ∞` everywhere; `None` uses the initializer's ranks.
    Pool {
        #[serde(default)]
        ranks: Option<Ranks>,
    },
    /// Stage II on the initial representations.
    Initial,
    /// Lasso VAR; a fixed `lambda` skips the holdout search over `grid`.
    Sparse {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "default_sparse_grid")]
        grid: Vec<f64>,
    },
}

impl BaselineSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::Ols => "ols",
            BaselineSpec::Mlr { .. } => "mlr",
            BaselineSpec::Pool { .. } => "pool",
            BaselineSpec::Initial => "initial",
            BaselineSpec::Sparse { .. } => "sparse",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineSpec::Mlr { ranks: Some(r) } | BaselineSpec::Pool { ranks: Some(r) }
                if r.contains(&0) =>
            {
                invalid(format!(
                    "{}: ranks must be positive, got {r:?}",
                    self.name()
                ))
            }
            BaselineSpec::Sparse { lambda, grid } => {
                if lambda.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
                    return invalid("sparse: lambda must be finite and non-negative");
                }
                if lambda.is_none() && grid.is_empty() {
                    return invalid("sparse: needs a lambda or a non-empty grid");
                }
                if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return invalid("sparse: grid values must be finite and non-negative");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
