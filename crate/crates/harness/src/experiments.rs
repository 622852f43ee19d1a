//! Simulation sweeps, rolling forecasts and single fits.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use tlvar::estimator::TaskData;
use tlvar::selection::{
    select_c_by_validation, select_common_ranks, target_lambda, Ranks, ValidationOutcome,
    ValidationProtocol,
};
use tlvar::var::{derive_seed, generate_design, Panel, SimDesign};
use tlvar::{Matrix, Mode, Tensor3, Vector};

use crate::config::{DataConfig, ExperimentConfig, MethodSpec, Setting, SimGrid, TlSettings};
use crate::data::{load_csv, preprocess, LabelledPanel, TransformMeta};
use crate::error::{HarnessError, Result};
use crate::methods::{
    init_config, penalty_template, stage2_config, PrepareContext, Prepared, SourceFits, TrueRanks,
};
use crate::metrics::{mafe, rmse_tensor, rmsfe};
use crate::output::{MetricsRow, FAILED};

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(format!("cannot start {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// One point of a simulation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub setting: Setting,
    pub p: usize,
    pub t0: usize,
    pub h: f64,
}

/// Grid points in canonical order: setting, lag order, `T₀`, then `h`.
pub fn cells(grid: &SimGrid) -> Vec<Cell> {
    let mut out = Vec::new();
    for &setting in &grid.settings {
        for &p in &grid.p {
            for &t0 in &grid.t0 {
                for &h in &grid.h {
                    out.push(Cell { setting, p, t0, h });
                }
            }
        }
    }
    out
}

/// Seed of one replication. It ignores `h` and `T₀`, so every point of a
/// sweep sees the same random draws.
pub fn replication_seed(base: u64, setting: &Setting, p: usize, replication: usize) -> u64 {
    let s = setting;
    derive_seed(
        base,
        &[
            s.k as u64,
            s.n as u64,
            s.s1 as u64,
            s.s2 as u64,
            p as u64,
            replication as u64,
        ],
    )
}

/// The generator settings of one replication.
pub fn sim_design(grid: &SimGrid, cell: &Cell, seed: u64) -> SimDesign {
    SimDesign {
        sources: cell.setting.k,
        n: cell.setting.n,
        p: cell.p,
        s1: cell.setting.s1,
        s2: cell.setting.s2,
        s3: if cell.p > 1 { grid.s3 } else { 1 },
        h: cell.h,
        t0: cell.t0,
        t_src: grid.t_src,
        seed,
    }
}

/// Every method on one replication of one cell; rows are in method order.
pub fn simulate_replication(
    cfg: &ExperimentConfig,
    grid: &SimGrid,
    methods: &[MethodSpec],
    cell: &Cell,
    replication: usize,
) -> Vec<MetricsRow> {
    let seed = replication_seed(cfg.seed, &cell.setting, cell.p, replication);
    let design = sim_design(grid, cell, seed);
    let row = |method: &MethodSpec, metric: &str, value: f64, seconds: f64| MetricsRow {
        experiment: cfg.experiment.name().to_string(),
        k: Some(cell.setting.k),
        n: cell.setting.n,
        s1: Some(cell.setting.s1),
        s2: Some(cell.setting.s2),
        p: cell.p,
        h: Some(cell.h),
        t0: Some(cell.t0),
        method: method.label().to_string(),
        replication,
        seed,
        metric: metric.to_string(),
        value,
        seconds,
    };
    let generated = generate_design(&design).and_then(|inst| {
        let (target, sources) = inst.simulate_panels(grid.burn_in)?;
        let task = TaskData::from_panel(&target, cell.p)?;
        Ok((inst, target, sources, task))
    });
    let (inst, target, sources, task) = match generated {
        Ok(g) => g,
        Err(e) => {
            warn!("replication {replication} of {cell:?} could not be generated: {e}");
            return methods.iter().map(|m| row(m, FAILED, 1.0, 0.0)).collect();
        }
    };
    let truth = TrueRanks {
        common: design.common_ranks(),
        task: design.task_ranks(),
    };
    let fits = match SourceFits::new(&sources, cell.p, &cfg.tl, cfg.rank_choice(), Some(truth)) {
        Ok(f) => f,
        Err(e) => {
            warn!("replication {replication} of {cell:?}: {e}");
            return methods.iter().map(|m| row(m, FAILED, 1.0, 0.0)).collect();
        }
    };
    let ctx = PrepareContext {
        sources: &fits,
        sparse_holdout: (task.sample_size() / 5).max(1),
    };
    let stage2 = stage2_config(&cfg.tl);
    methods
        .iter()
        .map(|m| {
            let start = Instant::now();
            let est = Prepared::new(m, &ctx, &target).and_then(|prep| prep.fit(&task, &stage2));
            let seconds = start.elapsed().as_secs_f64();
            match est
                .map_err(HarnessError::from)
                .and_then(|a| rmse_tensor(&a, inst.target().coefs()))
            {
                Ok(v) => row(m, "rmse", v, seconds),
                Err(e) => {
                    warn!(
                        "{} failed on replication {replication} of {cell:?}: {e}",
                        m.label()
                    );
                    row(m, FAILED, 1.0, seconds)
                }
            }
        })
        .collect()
}

/// All replications of a simulation experiment, sorted by cell, method
/// and replication. The order does not depend on the thread count.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let grid = cfg.grid().ok_or_else(|| {
        HarnessError::Config(format!("'{}' is not a simulation", cfg.experiment.name()))
    })?;
    let methods = cfg.methods();
    let cells = cells(&grid);
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replications).map(move |r| (c, r)))
        .collect();
    info!(
        "{}: {} cells x {} replications",
        cfg.experiment.name(),
        cells.len(),
        cfg.replications
    );
    let results: Vec<Vec<MetricsRow>> = with_threads(cfg.threads, || {
        jobs.par_iter()
            .map(|&(c, r)| simulate_replication(cfg, &grid, &methods, &cells[c], r))
            .collect()
    })?;
    let mut keyed: Vec<((usize, usize, usize), MetricsRow)> =
        Vec::with_capacity(results.len() * methods.len());
    for (&(c, r), rows) in jobs.iter().zip(results) {
        for (m, row) in rows.into_iter().enumerate() {
            keyed.push(((c, m, r), row));
        }
    }
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, row)| row).collect())
}

/// When the model used at a forecast origin is re-estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitPolicy {
    /// Refit on all observations before each origin.
    EveryOrigin,
    /// Fit once on the data before the first origin.
    Never,
}

/// One-step forecasts over the last `test_len` points of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastErrors {
    /// Column index of each origin.
    pub origins: Vec<usize>,
    /// `None` where the fit failed.
    pub forecasts: Vec<Option<Vector>>,
    pub errors: Vec<Option<Vector>>,
}

impl ForecastErrors {
    pub fn successful(&self) -> Vec<Vector> {
        self.errors.iter().flatten().cloned().collect()
    }

    pub fn failures(&self) -> usize {
        self.errors.iter().filter(|e| e.is_none()).count()
    }
}

/// For each origin `t` in the last `test_len` columns, fits on columns
/// `0..t` (fixed start) and records `y_t − Σ_j Â_j y_{t−j}`. Fit failures
/// are logged and recorded as `None`.
pub fn rolling_forecast<F>(
    data: &Panel,
    p: usize,
    test_len: usize,
    policy: RefitPolicy,
    mut fit: F,
) -> Result<ForecastErrors>
where
    F: FnMut(&Panel) -> tlvar::Result<Tensor3>,
{
    if test_len == 0 || test_len >= data.sample_size(p) {
        return Err(HarnessError::Config(format!(
            "test length {test_len} must be positive and below the sample size {}",
            data.sample_size(p)
        )));
    }
    let start = data.len() - test_len;
    let fixed = match policy {
        RefitPolicy::Never => Some(fit(&data.prefix(start))),
        RefitPolicy::EveryOrigin => None,
    };
    let mut out = ForecastErrors {
        origins: Vec::with_capacity(test_len),
        forecasts: Vec::with_capacity(test_len),
        errors: Vec::with_capacity(test_len),
    };
    for t in start..data.len() {
        let coefs = match &fixed {
            Some(r) => r.clone(),
            None => fit(&data.prefix(t)),
        };
        let forecast = match coefs {
            Ok(a) => Some(a.matricize(Mode::One) * data.lag_vector(t, p)),
            Err(e) => {
                warn!("fit for origin {t} failed: {e}");
                None
            }
        };
        out.errors
            .push(forecast.as_ref().map(|f| data.series.column(t) - f));
        out.forecasts.push(forecast);
        out.origins.push(t);
    }
    Ok(out)
}

/// Target and sources after loading and preprocessing.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub target_raw: LabelledPanel,
    pub target: Panel,
    pub meta: TransformMeta,
    pub sources: Vec<Panel>,
}

pub fn load_data(data: &DataConfig) -> Result<LoadedData> {
    let codes = data.codes.as_deref();
    let target_raw = load_csv(&data.target)?;
    let pre = preprocess(&target_raw.panel, codes, data.standardize)?;
    let mut sources = Vec::with_capacity(data.sources.len());
    for path in &data.sources {
        let raw = load_csv(path)?;
        if raw.panel.dim() != target_raw.panel.dim() {
            return Err(HarnessError::data(
                path,
                format!(
                    "{} variables but the target has {}",
                    raw.panel.dim(),
                    target_raw.panel.dim()
                ),
            ));
        }
        sources.push(preprocess(&raw.panel, codes, data.standardize)?.panel);
    }
    Ok(LoadedData {
        target_raw,
        target: pre.panel,
        meta: pre.meta,
        sources,
    })
}

fn data_config(cfg: &ExperimentConfig) -> Result<&DataConfig> {
    cfg.data.as_ref().ok_or_else(|| {
        HarnessError::Config(format!(
            "the {} experiment needs a 'data' section",
            cfg.experiment.name()
        ))
    })
}

/// `c_S` chosen by validation on the sources when configured.
fn choose_c(
    cfg: &ExperimentConfig,
    data: &DataConfig,
    sources: &[Panel],
) -> Result<(TlSettings, Option<ValidationOutcome>)> {
    let mut settings = cfg.tl.clone();
    let Some(v) = &data.validation else {
        return Ok((settings, None));
    };
    let protocol = ValidationProtocol {
        init: init_config(&cfg.tl, cfg.rank_choice(), None, None),
        weights: None,
        template: penalty_template(&cfg.tl),
    };
    let outcome = select_c_by_validation(sources, data.p, &v.grid, v.holdout, &protocol)?;
    info!("validation chose c_S = {}", outcome.c_s);
    settings.c_s = outcome.c_s;
    Ok((settings, Some(outcome)))
}

/// One forecast, with the level implied by it when a transform is known.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub method: String,
    pub time: String,
    pub variable: String,
    pub forecast: f64,
    pub actual: f64,
    pub error: f64,
    /// Forecast mapped back to the original units.
    pub level_forecast: f64,
}

#[derive(Debug, Clone)]
pub struct ForecastOutput {
    pub rows: Vec<MetricsRow>,
    pub forecasts: Vec<ForecastRow>,
    pub c_s: f64,
    pub validation: Option<ValidationOutcome>,
}

fn level_forecast(loaded: &LoadedData, origin: usize, var: usize, value: f64) -> f64 {
    let value = loaded.meta.destandardize(var, value);
    let Some(codes) = &loaded.meta.codes else {
        return value;
    };
    let raw_index = origin + loaded.meta.dropped;
    let history: Vec<f64> = loaded
        .target_raw
        .panel
        .series
        .row(var)
        .iter()
        .take(raw_index)
        .copied()
        .collect();
    codes[var].to_level(value, &history).unwrap_or(f64::NAN)
}

/// Rolling one-step forecasts of every configured method on the target.
/// Shared representations are fit once; target models are refit at each
/// origin.
pub fn run_forecast(cfg: &ExperimentConfig) -> Result<ForecastOutput> {
    let data = data_config(cfg)?;
    let loaded = load_data(data)?;
    let p = data.p;
    let target = &loaded.target;
    if data.test_len >= target.sample_size(p) {
        return Err(HarnessError::Config(format!(
            "test_len {} leaves no training data ({} usable observations)",
            data.test_len,
            target.sample_size(p)
        )));
    }
    let split = target.len() - data.test_len;
    let train = target.prefix(split);
    let (settings, validation) = choose_c(cfg, data, &loaded.sources)?;
    let fits = SourceFits::new(&loaded.sources, p, &settings, cfg.rank_choice(), None)?;
    let ctx = PrepareContext {
        sources: &fits,
        sparse_holdout: data.sparse_holdout,
    };
    let stage2 = stage2_config(&settings);
    let row = |method: &MethodSpec, metric: &str, value: f64, seconds: f64| MetricsRow {
        experiment: cfg.experiment.name().to_string(),
        k: Some(loaded.sources.len()),
        n: target.dim(),
        s1: None,
        s2: None,
        p,
        h: None,
        t0: Some(train.sample_size(p)),
        method: method.label().to_string(),
        replication: 0,
        seed: cfg.seed,
        metric: metric.to_string(),
        value,
        seconds,
    };
    let mut rows = Vec::new();
    let mut forecasts = Vec::new();
    for method in cfg.methods() {
        let start = Instant::now();
        let prepared = match Prepared::new(&method, &ctx, &train) {
            Ok(prep) => prep,
            Err(e) => {
                warn!("{} could not be prepared: {e}", method.label());
                rows.push(row(&method, FAILED, 1.0, start.elapsed().as_secs_f64()));
                continue;
            }
        };
        let errors = rolling_forecast(
            target,
            p,
            data.test_len,
            RefitPolicy::EveryOrigin,
            |history| prepared.fit(&TaskData::from_panel(history, p)?, &stage2),
        )?;
        let seconds = start.elapsed().as_secs_f64();
        let ok = errors.successful();
        match (rmsfe(&ok), mafe(&ok)) {
            (Some(r), Some(m)) => {
                rows.push(row(&method, "rmsfe", r, seconds));
                rows.push(row(&method, "mafe", m, 0.0));
            }
            _ => rows.push(row(&method, FAILED, 1.0, seconds)),
        }
        rows.push(row(
            &method,
            "failed_origins",
            errors.failures() as f64,
            0.0,
        ));
        for (i, &t) in errors.origins.iter().enumerate() {
            let Some(f) = &errors.forecasts[i] else {
                continue;
            };
            for v in 0..target.dim() {
                let actual = target.series[(v, t)];
                forecasts.push(ForecastRow {
                    method: method.label().to_string(),
                    time: loaded.target_raw.times[t + loaded.meta.dropped].clone(),
                    variable: target.variables[v].clone(),
                    forecast: f[v],
                    actual,
                    error: actual - f[v],
                    level_forecast: level_forecast(&loaded, t, v, f[v]),
                });
            }
        }
    }
    Ok(ForecastOutput {
        rows,
        forecasts,
        c_s: settings.c_s,
        validation,
    })
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A transfer fit on the full target, in serializable form.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub c_s: f64,
    pub c_t: f64,
    pub ranks: Ranks,
    pub source_task_ranks: Vec<Ranks>,
    pub weights: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub lambda0: f64,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    /// Lag matrices `A_1, …, A_p` of the target, row by row.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub deviation_norm: f64,
    pub stage1_trace: Vec<f64>,
    pub stage2_trace: Vec<f64>,
    pub validation: Option<Vec<(f64, f64)>>,
}

pub fn run_fit(cfg: &ExperimentConfig) -> Result<FitReport> {
    let data = data_config(cfg)?;
    let loaded = load_data(data)?;
    let p = data.p;
    let (settings, validation) = choose_c(cfg, data, &loaded.sources)?;
    let fits = SourceFits::new(&loaded.sources, p, &settings, cfg.rank_choice(), None)?;
    let target = TaskData::from_panel(&loaded.target, p)?;
    let stage1 = fits.stage1()?;
    let lambda0 = target_lambda(settings.c_t(), target.dim(), p, target.sample_size())?;
    let fit = tlvar::estimator::stage2_fit(
        &target,
        &stage1.u,
        &stage1.v,
        &stage1.l,
        lambda0,
        &stage2_config(&settings),
    )?;
    let init = fits.init()?;
    Ok(FitReport {
        c_s: settings.c_s,
        c_t: settings.c_t(),
        ranks: init.ranks,
        source_task_ranks: init.task_ranks.clone(),
        weights: fits.weights()?.clone(),
        lambdas: fits.source_lambdas()?,
        lambda0,
        u: rows_of(&fit.u),
        v: rows_of(&fit.v),
        l: rows_of(&fit.l),
        coefficients: (0..p).map(|j| rows_of(&fit.a0.frontal_slice(j))).collect(),
        deviation_norm: fit.r0.frobenius_norm(),
        stage1_trace: stage1.trace.clone(),
        stage2_trace: fit.trace,
        validation: validation.map(|v| v.scores),
    })
}

/// Rank and penalty selection on the sources.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub source_task_ranks: Vec<Ranks>,
    /// Aggregated spectra of the three factor families.
    pub eigvals: [Vec<f64>; 3],
    /// Common ranks under the configured rule.
    pub ranks: Ranks,
    pub elbow_ranks: Ranks,
    pub threshold_ranks: Ranks,
    pub c_s: f64,
    pub validation: Vec<(f64, f64)>,
}

pub fn run_select(cfg: &ExperimentConfig) -> Result<SelectionReport> {
    let data = data_config(cfg)?;
    let loaded = load_data(data)?;
    let mut settings = cfg.tl.clone();
    // Rank selection ignores any fixed ranks in the configuration.
    settings.ranks = Some(crate::config::RankChoice::Select);
    let fits = SourceFits::new(
        &loaded.sources,
        data.p,
        &settings,
        crate::config::RankChoice::Select,
        None,
    )?;
    let init = fits.init()?;
    let dims = [loaded.target.dim(), loaded.target.dim(), data.p];
    let by_rule = |rule| -> Result<Ranks> {
        let mut r = [0; 3];
        for j in 0..3 {
            r[j] = select_common_ranks(&init.eigvals[j], rule)?.clamp(1, dims[j]);
        }
        Ok(r)
    };
    let elbow_ranks = by_rule(tlvar::selection::RankRule::Elbow)?;
    let threshold = match cfg.tl.rule {
        crate::config::RuleConfig::Threshold(t) => t,
        crate::config::RuleConfig::Elbow => tlvar::selection::DEFAULT_THRESHOLD,
    };
    let threshold_ranks = by_rule(tlvar::selection::RankRule::Threshold(threshold))?;
    let mut with_validation = data.clone();
    with_validation
        .validation
        .get_or_insert(crate::config::ValidationConfig {
            grid: tlvar::selection::default_c_grid(),
            holdout: 20,
        });
    let (chosen, outcome) = choose_c(cfg, &with_validation, &loaded.sources)?;
    Ok(SelectionReport {
        source_task_ranks: init.task_ranks.clone(),
        eigvals: init.eigvals.clone(),
        ranks: init.ranks,
        elbow_ranks,
        threshold_ranks,
        c_s: chosen.c_s,
        validation: outcome.map(|o| o.scores).unwrap_or_default(),
    })
}
