//! Turning a [`MethodSpec`] into fitted target coefficients.
//!
//! Work shared by the transfer methods (initialization, Stage I) is done once
//! per set of sources and reused by every method and forecast origin.

use std::cell::OnceCell;

use tlvar::baselines::{ols_task, select_lasso_lambda, sparse_var_task, LassoConfig};
use tlvar::estimator::{
    stage1_fit, stage2_fit, PenaltyConfig, StageOneFit, StageTwoConfig, TaskData,
};
use tlvar::selection::{
    fit_mlr_task, initialize_all, residual_sigma_max, select_ranks_task, source_lambdas,
    target_lambda, weights_optimal, weights_simple, InitBundle, InitConfig, MlrConfig, Ranks,
};
use tlvar::var::{lag_design, Panel};
use tlvar::{Matrix, Tensor3};

use crate::config::{MethodSpec, RankChoice, TlSettings, WeightRule};

/// Ranks of the generating process, known only in simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrueRanks {
    pub common: Ranks,
    pub task: Ranks,
}

/// Initialization settings implied by a rank choice; `common` overrides
/// the common ranks.
pub fn init_config(
    settings: &TlSettings,
    choice: RankChoice,
    truth: Option<TrueRanks>,
    common: Option<Ranks>,
) -> InitConfig {
    let mut cfg = InitConfig {
        r_max: settings.r_max,
        rule: settings.rule.into(),
        ..InitConfig::default()
    };
    match choice {
        RankChoice::Truth => {
            if let Some(t) = truth {
                cfg.task_ranks = Some(t.task);
                cfg.common_ranks = Some(t.common);
            }
        }
        RankChoice::Select => {}
        RankChoice::Fixed(r) => cfg.common_ranks = Some(r),
    }
    if common.is_some() {
        cfg.common_ranks = common;
    }
    cfg
}

/// Stage-I optimizer settings with penalties and weights left empty.
pub fn penalty_template(s: &TlSettings) -> PenaltyConfig {
    let mut cfg = PenaltyConfig::new(Vec::new(), Vec::new());
    cfg.a = s.a;
    cfg.b = s.b;
    cfg.max_outer = s.max_outer;
    cfg.max_inner = s.max_inner;
    cfg.tol = s.tol;
    cfg
}

/// The sources of one problem together with lazily computed shared fits.
pub struct SourceFits<'a> {
    panels: &'a [Panel],
    tasks: Vec<TaskData>,
    p: usize,
    settings: &'a TlSettings,
    ranks: RankChoice,
    truth: Option<TrueRanks>,
    weights: OnceCell<Vec<f64>>,
    init: OnceCell<InitBundle>,
    stage1: OnceCell<StageOneFit>,
}

impl<'a> SourceFits<'a> {
    pub fn new(
        panels: &'a [Panel],
        p: usize,
        settings: &'a TlSettings,
        ranks: RankChoice,
        truth: Option<TrueRanks>,
    ) -> tlvar::Result<Self> {
        let tasks = panels
            .iter()
            .map(|s| TaskData::from_panel(s, p))
            .collect::<tlvar::Result<Vec<_>>>()?;
        Ok(Self {
            panels,
            tasks,
            p,
            settings,
            ranks,
            truth,
            weights: OnceCell::new(),
            init: OnceCell::new(),
            stage1: OnceCell::new(),
        })
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskData::sample_size).collect()
    }

    pub fn weights(&self) -> tlvar::Result<&Vec<f64>> {
        if let Some(w) = self.weights.get() {
            return Ok(w);
        }
        let t = self.sample_sizes();
        let w = match self.settings.weights {
            WeightRule::Simple => weights_simple(&t)?,
            WeightRule::Optimal => {
                let sigma = self
                    .panels
                    .iter()
                    .zip(&self.tasks)
                    .map(|(panel, task)| {
                        let ranks = select_ranks_task(task, self.settings.r_max, None)?;
                        let fit = fit_mlr_task(task, ranks, &MlrConfig::default())?;
                        residual_sigma_max(&lag_design(panel, self.p)?, &fit.coefs)
                    })
                    .collect::<tlvar::Result<Vec<_>>>()?;
                weights_optimal(&t, &sigma)?
            }
        };
        Ok(self.weights.get_or_init(|| w))
    }

    fn init_config(&self, common: Option<Ranks>) -> InitConfig {
        init_config(self.settings, self.ranks, self.truth, common)
    }

    pub fn init(&self) -> tlvar::Result<&InitBundle> {
        if let Some(b) = self.init.get() {
            return Ok(b);
        }
        let bundle = initialize_all(&self.tasks, self.weights()?, &self.init_config(None))?;
        Ok(self.init.get_or_init(|| bundle))
    }

    /// Stage-I settings with the given penalties and this problem's weights.
    pub fn penalty(&self, lambdas: Vec<f64>) -> tlvar::Result<PenaltyConfig> {
        let mut cfg = penalty_template(self.settings);
        cfg.lambdas = lambdas;
        cfg.weights = self.weights()?.clone();
        Ok(cfg)
    }

    pub fn source_lambdas(&self) -> tlvar::Result<Vec<f64>> {
        let n = self.tasks[0].dim();
        source_lambdas(self.settings.c_s, n, self.p, &self.sample_sizes())
    }

    pub fn stage1(&self) -> tlvar::Result<&StageOneFit> {
        if let Some(f) = self.stage1.get() {
            return Ok(f);
        }
        let cfg = self.penalty(self.source_lambdas()?)?;
        let fit = stage1_fit(&self.tasks, &cfg, self.init()?.state()?)?;
        Ok(self.stage1.get_or_init(|| fit))
    }

    /// Stage I with every deviation frozen at zero.
    fn pooled(&self, common: Option<Ranks>) -> tlvar::Result<StageOneFit> {
        let cfg = self.penalty(vec![f64::INFINITY; self.tasks.len()])?;
        let state = match common {
            Some(r) if r != self.init()?.ranks => {
                initialize_all(&self.tasks, self.weights()?, &self.init_config(Some(r)))?.state()?
            }
            _ => self.init()?.state()?,
        };
        stage1_fit(&self.tasks, &cfg, state)
    }
}

/// A method reduced to what must be redone whenever the target changes.
#[derive(Debug, Clone)]
pub enum Prepared {
    /// Stage II on fixed representations; `c_t = None` freezes `R₀ = 0`.
    Transfer {
        reps: [Matrix; 3],
        c_t: Option<f64>,
    },
    Ols,
    Mlr(Ranks),
    Sparse(f64),
}

/// Knobs needed to prepare a method against a target training window.
pub struct PrepareContext<'s, 'a> {
    pub sources: &'s SourceFits<'a>,
    /// Holdout used to pick the lasso penalty.
    pub sparse_holdout: usize,
}

impl Prepared {
    pub fn new(
        method: &MethodSpec,
        ctx: &PrepareContext<'_, '_>,
        target: &Panel,
    ) -> tlvar::Result<Prepared> {
        let src = ctx.sources;
        let p = src.p;
        Ok(match method {
            MethodSpec::Tl => {
                let fit = src.stage1()?;
                Prepared::Transfer {
                    reps: [fit.u.clone(), fit.v.clone(), fit.l.clone()],
                    c_t: Some(src.settings.c_t()),
                }
            }
            MethodSpec::Pool { ranks } => {
                let fit = src.pooled(*ranks)?;
                Prepared::Transfer {
                    reps: [fit.u, fit.v, fit.l],
                    c_t: None,
                }
            }
            MethodSpec::Initial => {
                let init = src.init()?;
                Prepared::Transfer {
                    reps: [init.u0.clone(), init.v0.clone(), init.l0.clone()],
                    c_t: Some(src.settings.c_t()),
                }
            }
            MethodSpec::Ols => Prepared::Ols,
            MethodSpec::Mlr { ranks } => Prepared::Mlr(match (ranks, src.truth) {
                (Some(r), _) => *r,
                (None, Some(t)) if src.ranks == RankChoice::Truth => t.task,
                _ => {
                    select_ranks_task(&TaskData::from_panel(target, p)?, src.settings.r_max, None)?
                }
            }),
            MethodSpec::Sparse {
                lambda: Some(l), ..
            } => Prepared::Sparse(*l),
            MethodSpec::Sparse { lambda: None, grid } => {
                Prepared::Sparse(select_lasso_lambda(target, p, grid, ctx.sparse_holdout)?.0)
            }
        })
    }

    /// Target coefficients estimated from `target`.
    pub fn fit(&self, target: &TaskData, stage2: &StageTwoConfig) -> tlvar::Result<Tensor3> {
        match self {
            Prepared::Transfer {
                reps: [u, v, l],
                c_t,
            } => {
                let lambda0 = match c_t {
                    Some(c) => {
                        target_lambda(*c, target.dim(), target.order(), target.sample_size())?
                    }
                    None => f64::INFINITY,
                };
                Ok(stage2_fit(target, u, v, l, lambda0, stage2)?.a0)
            }
            Prepared::Ols => ols_task(target),
            Prepared::Mlr(r) => Ok(fit_mlr_task(target, *r, &MlrConfig::default())?.coefs),
            Prepared::Sparse(lambda) => {
                Ok(sparse_var_task(target, *lambda, &LassoConfig::default())?.coefs)
            }
        }
    }
}

pub fn stage2_config(s: &TlSettings) -> StageTwoConfig {
    StageTwoConfig {
        max_outer: s.stage2_max_outer,
        tol: s.stage2_tol,
        step_size: None,
    }
}
