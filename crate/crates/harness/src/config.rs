//! JSON experiment configuration and the built-in simulation grids.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tlvar::baselines::BaselineSpec;
use tlvar::selection::{RankRule, Ranks};

use crate::data::TransformCode;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// RMSE against the similarity level `h`.
    Sim1,
    /// RMSE against the target sample size `T₀`.
    Sim2,
    /// RMSE against the number of sources `K`.
    Sim3,
    /// Rolling one-step forecasts on CSV data.
    Forecast,
    /// A single transfer fit on CSV data.
    Fit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Sim1 => "sim1",
            ExperimentKind::Sim2 => "sim2",
            ExperimentKind::Sim3 => "sim3",
            ExperimentKind::Forecast => "forecast",
            ExperimentKind::Fit => "fit",
        }
    }

    pub fn is_simulation(self) -> bool {
        matches!(
            self,
            ExperimentKind::Sim1 | ExperimentKind::Sim2 | ExperimentKind::Sim3
        )
    }
}

/// An estimator to run: the transfer method itself or a comparator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Tl,
    Ols,
    Mlr {
        #[serde(default)]
        ranks: Option<Ranks>,
    },
    Pool {
        #[serde(default)]
        ranks: Option<Ranks>,
    },
    Initial,
    Sparse {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default = "sparse_grid")]
        grid: Vec<f64>,
    },
}

fn sparse_grid() -> Vec<f64> {
    tlvar::baselines::SPARSE_GRID.to_vec()
}

impl MethodSpec {
    /// Label written to the results table.
    pub fn label(&self) -> &'static str {
        match self {
            MethodSpec::Tl => "TL",
            MethodSpec::Ols => "VAR",
            MethodSpec::Mlr { .. } => "MLR",
            MethodSpec::Pool { .. } => "Pool",
            MethodSpec::Initial => "Initial",
            MethodSpec::Sparse { .. } => "Sparse",
        }
    }

    pub fn baseline(&self) -> Option<BaselineSpec> {
        Some(match self.clone() {
            MethodSpec::Tl => return None,
            MethodSpec::Ols => BaselineSpec::Ols,
            MethodSpec::Mlr { ranks } => BaselineSpec::Mlr { ranks },
            MethodSpec::Pool { ranks } => BaselineSpec::Pool { ranks },
            MethodSpec::Initial => BaselineSpec::Initial,
            MethodSpec::Sparse { lambda, grid } => BaselineSpec::Sparse { lambda, grid },
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.baseline() {
            b.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// One `(K, N, s1, s2)` combination of a simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub k: usize,
    pub n: usize,
    pub s1: usize,
    pub s2: usize,
}

impl Setting {
    pub const fn new(k: usize, n: usize, s1: usize, s2: usize) -> Self {
        Self { k, n, s1, s2 }
    }
}

/// Overrides for a simulation grid; unset fields take the experiment default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimGridConfig {
    pub settings: Option<Vec<Setting>>,
    pub p: Option<Vec<usize>>,
    pub h: Option<Vec<f64>>,
    pub t0: Option<Vec<usize>>,
    pub t_src: Option<usize>,
    /// Temporal rank used when `p > 1`.
    pub s3: Option<usize>,
    pub burn_in: Option<usize>,
}

/// A fully resolved simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimGrid {
    pub settings: Vec<Setting>,
    pub p: Vec<usize>,
    pub h: Vec<f64>,
    pub t0: Vec<usize>,
    pub t_src: usize,
    pub s3: usize,
    pub burn_in: usize,
}

const MAIN_SETTINGS: [Setting; 4] = [
    Setting::new(5, 10, 3, 3),
    Setting::new(10, 10, 3, 3),
    Setting::new(10, 20, 3, 3),
    Setting::new(10, 20, 5, 5),
];

fn steps(step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| step * i as f64).collect()
}

impl SimGrid {
    /// Default grid of a simulation experiment.
    pub fn default_for(kind: ExperimentKind) -> Option<SimGrid> {
        let base = |settings: Vec<Setting>, h: Vec<f64>, t0: Vec<usize>| SimGrid {
            settings,
            p: vec![1, 4],
            h,
            t0,
            t_src: 300,
            s3: 3,
            burn_in: tlvar::var::DEFAULT_BURN_IN,
        };
        match kind {
            ExperimentKind::Sim1 => Some(base(MAIN_SETTINGS.to_vec(), steps(0.25, 9), vec![100])),
            ExperimentKind::Sim2 => Some(base(
                MAIN_SETTINGS.to_vec(),
                vec![0.5],
                vec![50, 100, 150, 200, 250, 300],
            )),
            ExperimentKind::Sim3 => Some(base(
                [5, 10, 50]
                    .iter()
                    .map(|&k| Setting::new(k, 20, 5, 5))
                    .collect(),
                steps(0.25, 5),
                vec![100],
            )),
            ExperimentKind::Forecast | ExperimentKind::Fit => None,
        }
    }

    fn resolve(kind: ExperimentKind, over: &SimGridConfig) -> Option<SimGrid> {
        let mut g = SimGrid::default_for(kind)?;
        if let Some(v) = &over.settings {
            g.settings = v.clone();
        }
        if let Some(v) = &over.p {
            g.p = v.clone();
        }
        if let Some(v) = &over.h {
            g.h = v.clone();
        }
        if let Some(v) = &over.t0 {
            g.t0 = v.clone();
        }
        if let Some(v) = over.t_src {
            g.t_src = v;
        }
        if let Some(v) = over.s3 {
            g.s3 = v;
        }
        if let Some(v) = over.burn_in {
            g.burn_in = v;
        }
        Some(g)
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.settings.is_empty() || self.p.is_empty() || self.h.is_empty() || self.t0.is_empty()
        {
            return fail("simulation grid has an empty axis".into());
        }
        for s in &self.settings {
            if s.k == 0 || s.s1 < 2 || s.s2 < 2 || s.s1 > s.n || s.s2 > s.n {
                return fail(format!(
                    "invalid setting {s:?}: need K >= 1 and 2 <= s1, s2 <= N"
                ));
            }
        }
        if let Some(&p) = self
            .p
            .iter()
            .find(|&&p| p == 0 || (p > 1 && (self.s3 < 2 || self.s3 > p)))
        {
            return fail(format!(
                "lag order {p} is incompatible with temporal rank {}",
                self.s3
            ));
        }
        if let Some(h) = self.h.iter().find(|h| !(**h >= 0.0 && h.is_finite())) {
            return fail(format!(
                "similarity level {h} must be finite and non-negative"
            ));
        }
        if self.t0.contains(&0) || self.t_src == 0 {
            return fail("sample sizes must be positive".into());
        }
        Ok(())
    }
}

/// How the transfer method picks its ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankChoice {
    /// Ranks of the data-generating process (simulations only).
    Truth,
    /// Ratio rule for task ranks and an aggregation rule for common ranks.
    Select,
    /// Common ranks fixed; task ranks still selected.
    Fixed(Ranks),
}

/// Common-rank rule as written in the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleConfig {
    Threshold(f64),
    Elbow,
}

impl From<RuleConfig> for RankRule {
    fn from(r: RuleConfig) -> Self {
        match r {
            RuleConfig::Threshold(t) => RankRule::Threshold(t),
            RuleConfig::Elbow => RankRule::Elbow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Proportional to sample size.
    #[default]
    Simple,
    /// Proportional to sample size over the estimated noise level.
    Optimal,
}

/// Settings of the transfer estimator shared by TL, Pool and Initial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TlSettings {
    pub c_s: f64,
    /// Defaults to `c_s`.
    pub c_t: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
    pub stage2_max_outer: usize,
    pub stage2_tol: f64,
    pub weights: WeightRule,
    /// Defaults to `truth` in simulations and `select` on data.
    pub ranks: Option<RankChoice>,
    pub rule: RuleConfig,
    pub r_max: Option<usize>,
}

impl Default for TlSettings {
    fn default() -> Self {
        Self {
            c_s: 1.0,
            c_t: None,
            a: 1.0,
            b: 1.0,
            max_outer: 200,
            max_inner: 50,
            tol: 1e-6,
            stage2_max_outer: 200,
            stage2_tol: 1e-6,
            weights: WeightRule::Simple,
            ranks: None,
            rule: RuleConfig::Threshold(tlvar::selection::DEFAULT_THRESHOLD),
            r_max: None,
        }
    }
}

impl TlSettings {
    pub fn c_t(&self) -> f64 {
        self.c_t.unwrap_or(self.c_s)
    }

    fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HarnessError::Config(m.into()));
        if !(self.c_s >= 0.0 && self.c_s.is_finite())
            || self.c_t.is_some_and(|c| !(c >= 0.0 && c.is_finite()))
        {
            return fail("c_s and c_t must be finite and non-negative");
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return fail("a and b must be positive");
        }
        if self.max_outer == 0 || self.stage2_max_outer == 0 {
            return fail("iteration limits must be positive");
        }
        if let RuleConfig::Threshold(t) = self.rule {
            if !(t > 0.0 && t <= 1.0) {
                return fail("threshold must lie in (0, 1]");
            }
        }
        if let Some(RankChoice::Fixed(r)) = self.ranks {
            if r.contains(&0) {
                return fail("fixed ranks must be positive");
            }
        }
        Ok(())
    }
}

/// Choice of `c_S` by holdout validation on the sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "tlvar::selection::default_c_grid")]
    pub grid: Vec<f64>,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
}

fn default_holdout() -> usize {
    20
}

fn default_true() -> bool {
    true
}

fn default_p() -> usize {
    4
}

/// Input files and preprocessing for data experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub target: PathBuf,
    pub sources: Vec<PathBuf>,
    /// One code per variable, shared by every file; `None` leaves levels as is.
    #[serde(default)]
    pub codes: Option<Vec<TransformCode>>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_p")]
    pub p: usize,
    /// Number of rolling forecast origins at the end of the target.
    #[serde(default = "default_holdout")]
    pub test_len: usize,
    #[serde(default)]
    pub validation: Option<ValidationConfig>,
    /// Holdout used to pick the lasso penalty.
    #[serde(default = "default_holdout")]
    pub sparse_holdout: usize,
}

impl DataConfig {
    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.target);
        self.sources.iter_mut().for_each(fix);
    }
}

fn default_seed() -> u64 {
    20240917
}

fn default_replications() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Defaults depend on the experiment.
    #[serde(default)]
    pub methods: Option<Vec<MethodSpec>>,
    #[serde(default)]
    pub sim: SimGridConfig,
    #[serde(default)]
    pub tl: TlSettings,
    #[serde(default)]
    pub data: Option<DataConfig>,
}

impl ExperimentConfig {
    /// A configuration with every optional field at its default.
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: default_seed(),
            replications: default_replications(),
            threads: None,
            out: None,
            methods: None,
            sim: SimGridConfig::default(),
            tl: TlSettings::default(),
            data: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file; data paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(data), Some(dir)) = (cfg.data.as_mut(), path.parent()) {
            data.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Option<SimGrid> {
        SimGrid::resolve(self.experiment, &self.sim)
    }

    pub fn methods(&self) -> Vec<MethodSpec> {
        if let Some(m) = &self.methods {
            return m.clone();
        }
        match self.experiment {
            ExperimentKind::Sim1 | ExperimentKind::Sim2 => vec![
                MethodSpec::Tl,
                MethodSpec::Pool { ranks: None },
                MethodSpec::Mlr { ranks: None },
                MethodSpec::Ols,
            ],
            ExperimentKind::Sim3 | ExperimentKind::Fit => vec![MethodSpec::Tl],
            ExperimentKind::Forecast => vec![
                MethodSpec::Tl,
                MethodSpec::Pool { ranks: None },
                MethodSpec::Initial,
                MethodSpec::Mlr { ranks: None },
                MethodSpec::Ols,
                MethodSpec::Sparse {
                    lambda: None,
                    grid: sparse_grid(),
                },
            ],
        }
    }

    pub fn rank_choice(&self) -> RankChoice {
        self.tl.ranks.unwrap_or(if self.experiment.is_simulation() {
            RankChoice::Truth
        } else {
            RankChoice::Select
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        self.tl.validate()?;
        let methods = self.methods();
        if methods.is_empty() {
            return fail("no methods to run".into());
        }
        for m in &methods {
            m.validate()?;
        }
        let mut labels: Vec<&str> = methods.iter().map(MethodSpec::label).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return fail("each method may appear only once".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be positive".into());
        }
        if self.experiment.is_simulation() {
            if self.replications == 0 {
                return fail("replications must be positive".into());
            }
            self.grid()
                .expect("simulation kinds have a grid")
                .validate()?;
        } else {
            let Some(data) = &self.data else {
                return fail(format!(
                    "the {} experiment needs a 'data' section",
                    self.experiment.name()
                ));
            };
            if self.rank_choice() == RankChoice::Truth {
                return fail("rank choice 'truth' is only available in simulations".into());
            }
            if data.sources.is_empty() {
                return fail("at least one source file is required".into());
            }
            if data.p == 0 || data.test_len == 0 {
                return fail("p and test_len must be positive".into());
            }
            if let Some(v) = &data.validation {
                if v.grid.is_empty() || v.holdout == 0 {
                    return fail("validation needs a non-empty grid and a positive holdout".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_the_standard_grids() {
        let g1 = SimGrid::default_for(ExperimentKind::Sim1).unwrap();
        assert_eq!(g1.h.len(), 9);
        assert_eq!(g1.h[8], 2.0);
        assert_eq!(g1.settings.len(), 4);
        let g2 = SimGrid::default_for(ExperimentKind::Sim2).unwrap();
        assert_eq!(g2.t0, vec![50, 100, 150, 200, 250, 300]);
        let g3 = SimGrid::default_for(ExperimentKind::Sim3).unwrap();
        assert_eq!(
            g3.settings.iter().map(|s| s.k).collect::<Vec<_>>(),
            vec![5, 10, 50]
        );
        assert_eq!(g1.settings[3], Setting::new(10, 20, 5, 5));
        assert!(SimGrid::default_for(ExperimentKind::Forecast).is_none());
    }

    #[test]
    fn minimal_json_and_overrides() {
        let cfg =
            ExperimentConfig::from_json(r#"{"experiment": "sim1", "sim": {"h": [0, 1]}}"#).unwrap();
        assert_eq!(cfg.replications, 50);
        assert_eq!(cfg.grid().unwrap().h, vec![0.0, 1.0]);
        assert_eq!(cfg.rank_choice(), RankChoice::Truth);
        assert_eq!(cfg.methods().len(), 4);
    }

    #[test]
    fn methods_parse_by_kind() {
        let text = r#"{"experiment": "sim2", "methods": [{"kind": "tl"}, {"kind": "mlr", "ranks": [2, 2, 1]},
            {"kind": "sparse", "lambda": 0.3}]}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let m = cfg.methods();
        assert_eq!(
            m[1],
            MethodSpec::Mlr {
                ranks: Some([2, 2, 1])
            }
        );
        assert_eq!(m[2].label(), "Sparse");
        assert_eq!(m[2].baseline().unwrap().name(), "sparse");
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            r#"{"experiment": "sim9"}"#,
            r#"{"experiment": "sim1", "bogus": 1}"#,
            r#"{"experiment": "sim1", "replications": 0}"#,
            r#"{"experiment": "sim1", "tl": {"c_s": -1}}"#,
            r#"{"experiment": "sim1", "methods": [{"kind": "tl"}, {"kind": "tl"}]}"#,
            r#"{"experiment": "sim1", "sim": {"p": [4], "s3": 5}}"#,
            r#"{"experiment": "forecast"}"#,
            r#"{"experiment": "forecast", "tl": {"ranks": "truth"}, "data": {"target": "a.csv", "sources": ["b.csv"]}}"#,
        ] {
            let err = ExperimentConfig::from_json(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}");
        }
    }

    #[test]
    fn data_section_defaults() {
        let text = r#"{"experiment": "forecast", "tl": {"ranks": {"fixed": [3, 5, 2]}, "rule": "elbow"},
            "data": {"target": "t.csv", "sources": ["s.csv"], "codes": [1, 3]}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let data = cfg.data.unwrap();
        assert_eq!(data.p, 4);
        assert!(data.standardize);
        assert_eq!(data.codes.unwrap()[1], TransformCode::LogFirstDiff);
        assert_eq!(cfg.tl.ranks, Some(RankChoice::Fixed([3, 5, 2])));
    }
}
