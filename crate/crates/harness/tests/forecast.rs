use std::io::Write;

use tlvar::baselines::ols_var;
use tlvar::var::{gaussian_matrix, random_orthonormal, rng_from, Panel, VarProcess};
use tlvar::{Matrix, Mode, Tensor3};
use tlvar_harness::app::{run, Command};
use tlvar_harness::config::{DataConfig, ExperimentConfig, ExperimentKind, RankChoice};
use tlvar_harness::experiments::{rolling_forecast, RefitPolicy};
use tlvar_harness::metrics::{mafe, rmsfe};

fn stable_coefs(n: usize, p: usize, seed: u64) -> Tensor3 {
    let mut rng = rng_from(seed);
    let slices: Vec<Matrix> = (0..p)
        .map(|j| gaussian_matrix(&mut rng, n, n) * (0.3 / (n as f64).sqrt() / (j + 1) as f64))
        .collect();
    Tensor3::from_frontal_slices(&slices).unwrap()
}

#[test]
fn zero_model_errors_are_the_observations() {
    let mut rng = rng_from(3);
    let noise = Panel::new("noise", gaussian_matrix(&mut rng, 3, 40));
    let out = rolling_forecast(&noise, 2, 10, RefitPolicy::EveryOrigin, |_| {
        Ok(Tensor3::zeros([3, 3, 2]))
    })
    .unwrap();
    assert_eq!(out.origins, (30..40).collect::<Vec<_>>());
    for (t, e) in out.origins.iter().zip(&out.errors) {
        assert_eq!(e.as_ref().unwrap(), &noise.series.column(*t).into_owned());
    }
}

#[test]
fn noiseless_var_is_forecast_exactly_by_ols() {
    // A damped rotation keeps a noiseless trajectory full rank.
    let mut rng = rng_from(9);
    let a1 = random_orthonormal(&mut rng, 3, 3) * 0.97;
    let mut series = Matrix::zeros(3, 60);
    series.set_column(0, &gaussian_matrix(&mut rng, 3, 1).column(0));
    for t in 1..60 {
        let next = &a1 * series.column(t - 1);
        series.set_column(t, &next);
    }
    let panel = Panel::new("x", series);
    let out = rolling_forecast(&panel, 1, 15, RefitPolicy::EveryOrigin, |h| ols_var(h, 1)).unwrap();
    let errors = out.successful();
    assert_eq!(errors.len(), 15);
    for e in errors {
        assert!(e.norm() < 1e-8, "{}", e.norm());
    }
}

#[test]
fn no_refit_matches_direct_formula() {
    let a = stable_coefs(4, 2, 1);
    let panel = VarProcess::with_identity_noise(a)
        .unwrap()
        .simulate(80, 50, 4)
        .unwrap();
    let mut calls = 0;
    let start = panel.len() - 20;
    let fitted = ols_var(&panel.prefix(start), 2).unwrap();
    let out = rolling_forecast(&panel, 2, 20, RefitPolicy::Never, |h| {
        calls += 1;
        ols_var(h, 2)
    })
    .unwrap();
    assert_eq!(calls, 1);
    let a1 = fitted.matricize(Mode::One);
    let mut direct = Vec::new();
    for t in start..panel.len() {
        direct.push(panel.series.column(t) - &a1 * panel.lag_vector(t, 2));
    }
    for (e, d) in out.successful().iter().zip(&direct) {
        assert!((e - d).norm() < 1e-12);
    }
    assert_eq!(rmsfe(&out.successful()), rmsfe(&direct));
    assert_eq!(mafe(&out.successful()), mafe(&direct));
}

#[test]
fn fit_failures_are_recorded_per_origin() {
    let panel = Panel::new(
        "x",
        Matrix::from_fn(2, 30, |i, t| ((i + 1) * t) as f64).map(|v| v.sin()),
    );
    let mut origin = 0;
    let out = rolling_forecast(&panel, 1, 5, RefitPolicy::EveryOrigin, |_| {
        origin += 1;
        if origin % 2 == 0 {
            Err(tlvar::Error::Selection("forced".into()))
        } else {
            Ok(Tensor3::zeros([2, 2, 1]))
        }
    })
    .unwrap();
    assert_eq!(out.failures(), 2);
    assert_eq!(out.successful().len(), 3);
    assert!(
        rolling_forecast(&panel, 1, 29, RefitPolicy::Never, |_| Ok(Tensor3::zeros([
            2, 2, 1
        ])))
        .is_err()
    );
}

fn write_panel(
    dir: &std::path::Path,
    name: &str,
    panel: &Panel,
    late_start: usize,
) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.csv"));
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "date,{}", panel.variables.join(",")).unwrap();
    for t in 0..panel.len() {
        let cells: Vec<String> = (0..panel.dim())
            .map(|i| {
                if i == 0 && t < late_start {
                    "NA".to_string()
                } else {
                    // Levels kept positive so log codes apply.
                    format!("{}", 100.0 + panel.series[(i, t)])
                }
            })
            .collect();
        writeln!(f, "t{t},{}", cells.join(",")).unwrap();
    }
    path
}

#[test]
fn forecast_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let design = tlvar::var::SimDesign {
        sources: 3,
        n: 5,
        p: 1,
        s1: 2,
        s2: 2,
        s3: 1,
        h: 0.2,
        t0: 90,
        t_src: 160,
        seed: 21,
    };
    let inst = tlvar::var::generate_design(&design).unwrap();
    let (target, sources) = inst.simulate_panels(100).unwrap();
    let target_path = write_panel(dir.path(), "target", &target, 2);
    let source_paths: Vec<_> = sources
        .iter()
        .enumerate()
        .map(|(k, s)| write_panel(dir.path(), &format!("source{k}"), s, 0))
        .collect();

    let mut cfg = ExperimentConfig::new(ExperimentKind::Forecast);
    cfg.data = Some(DataConfig {
        target: target_path,
        sources: source_paths,
        codes: Some(vec![tlvar_harness::data::TransformCode::FirstDiff; 5]),
        standardize: true,
        p: 1,
        test_len: 10,
        validation: None,
        sparse_holdout: 10,
    });
    cfg.tl.ranks = Some(RankChoice::Fixed([2, 2, 1]));
    cfg.out = Some(dir.path().join("out"));
    cfg.validate().unwrap();
    let out = run(Command::Forecast, &cfg).unwrap();

    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    for method in ["TL", "Pool", "Initial", "MLR", "VAR", "Sparse"] {
        let rmsfe_line = results
            .lines()
            .find(|l| l.contains(&format!(",{method},")) && l.contains(",rmsfe,"))
            .unwrap_or_else(|| panic!("no rmsfe for {method}"));
        let value: f64 = rmsfe_line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(value.is_finite() && value > 0.0);
    }
    // Origins are the last ten time labels whatever was trimmed in front.
    let forecasts = std::fs::read_to_string(out.join("forecasts.csv")).unwrap();
    let first = format!(",t{},", target.len() - 10);
    assert!(forecasts.lines().nth(1).unwrap().contains(&first));
    assert_eq!(forecasts.lines().count(), 1 + 6 * 10 * 5);
    assert!(out.join("manifest.json").exists());

    for command in [Command::Fit, Command::Select] {
        let dir = run(command, &cfg).unwrap();
        let name = if command == Command::Fit {
            "fit.json"
        } else {
            "selection.json"
        };
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap();
        assert!(report["c_s"].as_f64().unwrap() > 0.0);
    }
}
