//! Acceptance criteria 1-9. Each test prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test -p tsr-core --test acceptance -- --nocapture` to see
//! the report.

mod common;

use std::sync::OnceLock;

use rand::Rng;
use tsr_core::curves::{
    fit_exponential, fit_poly5, normalized_axis, similarity, ExpFitParams, FitFailure, FitOutcome, FitParams,
    Similarity,
};
use tsr_core::dataset::{class_distribution, compute_quotas, generate_blobs, Dataset, Shape};
use tsr_core::harness::{run_experiment, write_outputs, CurveKind, ExperimentConfig, ExperimentResult, SimilarityTable};
use tsr_core::nnet::{backward, loss_cross_entropy, loss_mse, Activation, LossKind, Matrix, NetworkSpec, Targets};
use tsr_core::reduction::{
    initial_loss_profile, kmeans, reduce_distance, reduce_loss_based, reduce_random, KMeansConfig, LossDirection,
    ReductionPlan, Strategy,
};

const LOSS_TOL: f64 = 1e-12;
const GRADIENT_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const GRADIENT_CASES: usize = 50;
const EXP_PARAM_TOL: f64 = 1e-3;
const POLY_RELATIVE_SSE: f64 = 1e-12;
const STRATIFICATION_TRIPLES: usize = 200;
const KMEANS_TOL: f64 = 1e-9;
const KMEANS_CASES: usize = 50;
const SPEARMAN_MAX: f64 = -0.8;
const DEFINED_FROM_FRACTION: f64 = 0.10;

fn report(criterion: u32, name: &str, pass: bool, detail: impl std::fmt::Display) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("[{status}] criterion {criterion}: {name}: {detail}");
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

fn benchmark_config(repetitions: usize) -> ExperimentConfig {
    let text = format!(
        r#"{{"dataset": {{"source": {{"kind": "blobs", "n_per_class": 500, "num_classes": 10, "dim": 16}}}},
            "network": {{"hidden": [32], "activation": "relu"}},
            "training": {{"epochs": 40}},
            "experiment": {{"fractions": [0.05, 0.1, 0.3, 0.5, 0.7], "repetitions": {repetitions}}}}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

fn benchmark() -> &'static ExperimentResult {
    static RESULT: OnceLock<ExperimentResult> = OnceLock::new();
    RESULT.get_or_init(|| run_experiment(&benchmark_config(10)).unwrap())
}

#[test]
fn c1_loss_definitions() {
    let uniform = Matrix::from_vec(1, 10, vec![0.1; 10]);
    let ce = loss_cross_entropy(&uniform, &[3]).unwrap();
    let mse = loss_mse(&Matrix::from_vec(1, 2, vec![1.0, -1.0]), &Matrix::zeros(1, 2)).unwrap();
    let ce_err = (ce - 10f64.ln()).abs();
    report(
        1,
        "loss definitions",
        ce_err <= LOSS_TOL && mse == 1.0,
        format!("CE(uniform 10) = {ce:.12} (|err| {ce_err:.1e}), MSE(+1,-1) = {mse}"),
    );
}

#[test]
fn c2_gradient_oracle() {
    let mut rng = common::rng(7);
    let mut worst: f64 = 0.0;
    let mut max_params = 0;
    for _ in 0..GRADIENT_CASES {
        let c = common::random_smooth_net(&mut rng);
        max_params = max_params.max(c.spec.parameter_count());
        let analytic: Vec<f64> = backward(&c.params, &c.spec, &c.batch, Targets::Classes(&c.labels), c.loss)
            .unwrap()
            .values()
            .collect();
        let numeric = common::finite_difference_gradient(&c.params, &c.spec, &c.batch, &c.labels, c.loss, FD_STEP);
        worst = worst.max(common::max_relative_error(&analytic, &numeric, common::GRADIENT_FLOOR));
    }
    report(
        2,
        "gradient oracle",
        worst < GRADIENT_TOL && max_params <= 200,
        format!("{GRADIENT_CASES} nets (<= {max_params} params), worst relative error {worst:.2e}"),
    );
}

#[test]
fn c3_fit_recovery() {
    let y: Vec<f64> = (1..=50).map(|x| 2.0 * (-0.5 * x as f64).exp() + 1.0).collect();
    let (exp_ok, exp_detail) = match fit_exponential(&y) {
        FitOutcome::Success {
            params: FitParams::Exponential(ExpFitParams { a, b, c }),
            ..
        } => {
            let err = (a - 2.0).abs().max((b - 0.5).abs()).max((c - 1.0).abs());
            (err < EXP_PARAM_TOL, format!("(a, b, c) = ({a:.6}, {b:.6}, {c:.6})"))
        }
        other => (false, format!("{other:?}")),
    };
    let coeffs = [0.5, -1.0, 2.0, 0.25, -3.0, 1.5];
    let q: Vec<f64> = normalized_axis(50)
        .iter()
        .map(|&x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
        .collect();
    let energy: f64 = q.iter().map(|v| v * v).sum();
    let (poly_ok, poly_detail) = match fit_poly5(&q) {
        FitOutcome::Success { residual_sse, .. } => (
            residual_sse < POLY_RELATIVE_SSE * energy,
            format!("poly5 SSE {residual_sse:.2e} vs bound {:.2e}", POLY_RELATIVE_SSE * energy),
        ),
        other => (false, format!("{other:?}")),
    };
    report(3, "fit recovery", exp_ok && poly_ok, format!("{exp_detail}; {poly_detail}"));
}

#[test]
fn c4_fit_failure_path() {
    let rising: Vec<f64> = (1..=20).map(|x| (0.5 * x as f64).exp()).collect();
    let failed = fit_exponential(&rising);
    let reference = fit_exponential(&(1..=40).map(|x| 2.0 * (-0.3 * x as f64).exp() + 0.5).collect::<Vec<_>>());
    let cell = similarity(&reference, &failed).unwrap();
    let mut table = SimilarityTable::undefined(vec![0.1], vec![Strategy::Loss]);
    table.cells_mut(CurveKind::Train)[0][0] = cell;
    let csv = table.to_csv(CurveKind::Train);
    let md = table.to_markdown();
    let pass = matches!(failed, FitOutcome::Failure { reason: FitFailure::NonPositiveDecay, .. })
        && cell == Similarity::Undefined
        && csv.lines().nth(1) == Some("0.1,---")
        && md.lines().nth(2).is_some_and(|l| l.contains("---"));
    report(4, "fit failure path", pass, format!("{failed:?}, rendered as {:?}", cell.to_string()));
}

fn strict_quota_plan(plan: &ReductionPlan, data: &Dataset, quotas: &[usize]) -> bool {
    let sel = plan.selected();
    let mut counts = vec![0; data.num_classes()];
    for &i in sel {
        counts[data.samples()[i].label] += 1;
    }
    sel.windows(2).all(|w| w[0] < w[1]) && sel.len() < data.len() && counts == quotas
}

fn all_plans(data: &Dataset, fraction: f64, seed: u64) -> Option<[ReductionPlan; 3]> {
    let quotas = compute_quotas(&class_distribution(data), fraction).ok()?;
    let kcfg = KMeansConfig { restarts: 3, ..KMeansConfig::default() };
    let spec = NetworkSpec::dense_classifier(data.feature_shape(), &[8], Activation::Tanh, data.num_classes());
    let profile = initial_loss_profile(&spec, data, &[seed, seed + 1, seed + 2], LossKind::CrossEntropy).unwrap();
    Some([
        reduce_random(data, &quotas, seed).unwrap(),
        reduce_distance(data, &quotas, &kcfg, seed).unwrap(),
        reduce_loss_based(&profile, data, &quotas, LossDirection::Highest).unwrap(),
    ])
}

#[test]
fn c5_stratification_exactness() {
    let blobs = generate_blobs(100, 10, 16, 4.0, 5).unwrap();
    let plans = all_plans(&blobs, 0.10, 11).unwrap();
    let again = all_plans(&blobs, 0.10, 11).unwrap();
    let balanced = plans.iter().all(|p| strict_quota_plan(p, &blobs, &[10; 10])) && plans == again;

    let mut rng = common::rng(99);
    let mut checked = 0;
    let mut bad = 0;
    while checked < STRATIFICATION_TRIPLES {
        let classes = rng.random_range(2..=6);
        let dim = rng.random_range(1..=4);
        let rows: Vec<(Vec<f64>, usize)> = (0..classes)
            .flat_map(|c| (0..rng.random_range(3..40)).map(move |_| c))
            .collect::<Vec<_>>()
            .into_iter()
            .map(|c| ((0..dim).map(|_| rng.random_range(-2.0..2.0) + c as f64).collect(), c))
            .collect();
        let data = Dataset::new(Shape::Flat(dim), classes, rows).unwrap();
        let fraction = rng.random_range(0.02..0.95);
        let seed = rng.random::<u64>() >> 8;
        let Some(plans) = all_plans(&data, fraction, seed) else {
            continue;
        };
        let quotas = compute_quotas(&class_distribution(&data), fraction).unwrap();
        let ok = plans.iter().all(|p| strict_quota_plan(p, &data, quotas.per_class()))
            && all_plans(&data, fraction, seed).as_ref() == Some(&plans);
        bad += usize::from(!ok);
        checked += 1;
    }
    report(
        5,
        "stratification exactness",
        balanced && bad == 0,
        format!("10x100 blobs at 0.10: {}; {checked} random triples, {bad} violations", if balanced { "exact" } else { "WRONG" }),
    );
}

#[test]
fn c6_kmeans_oracle() {
    let mut rng = common::rng(3);
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    for _ in 0..KMEANS_CASES {
        let n = rng.random_range(3..=12);
        let k = rng.random_range(1..=3);
        let dim = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let found = kmeans(&points, k, &KMeansConfig::default(), rng.random()).unwrap().inertia;
        let exact = common::brute_force_inertia(&points, k);
        worst = worst.max((found - exact).abs());
        misses += usize::from((found - exact).abs() > KMEANS_TOL);
    }
    report(
        6,
        "k-means oracle",
        worst <= KMEANS_TOL,
        format!("{misses}/{KMEANS_CASES} instances off the optimum at default config, worst |inertia - brute force| {worst:.2e}"),
    );
}

fn scores(result: &ExperimentResult, kind: CurveKind, strategy: Strategy) -> Vec<Option<f64>> {
    result.table.column(kind, strategy).unwrap().iter().map(|s| s.value()).collect()
}

#[test]
fn c7_monotone_size_trend() {
    let result = benchmark();
    let fractions = &result.table.fractions;
    let mut pass = true;
    let rho = |kind, s| {
        let col = scores(result, kind, s);
        match col.iter().all(Option::is_some) {
            true => common::spearman(fractions, &col.iter().map(|x| x.unwrap()).collect::<Vec<_>>()),
            false => f64::NAN,
        }
    };
    let mut parts = Vec::new();
    for &s in &result.table.strategies {
        let (train, val) = (rho(CurveKind::Train, s), rho(CurveKind::Validation, s));
        pass &= train <= SPEARMAN_MAX;
        parts.push(format!("{s} rho = {train:.3} (val {val:.3})"));
    }
    println!("{}", result.table.to_markdown());
    report(7, "monotone size trend", pass, parts.join(", "));
}

#[test]
fn c8_strategy_comparison_report() {
    let result = benchmark();
    let t = &result.table;
    let complete = t.fractions.len() == 5 && t.strategies.len() == 3;
    let mut undefined = Vec::new();
    for kind in [CurveKind::Train, CurveKind::Validation] {
        for (row, &f) in t.fractions.iter().enumerate() {
            for (col, s) in t.strategies.iter().enumerate() {
                if f >= DEFINED_FROM_FRACTION && t.cells(kind)[row][col].is_undefined() {
                    undefined.push(format!("{} {s} {f}", kind.name()));
                }
            }
        }
    }
    let mut ranking = Vec::new();
    for kind in [CurveKind::Train, CurveKind::Validation] {
        let loss = scores(result, kind, Strategy::Loss);
        let random = scores(result, kind, Strategy::Random);
        let wins = loss
            .iter()
            .zip(&random)
            .filter(|(l, r)| matches!((l, r), (Some(l), Some(r)) if l < r))
            .count();
        ranking.push(format!("loss beats random on {wins}/{} {} rows", loss.len(), kind.name()));
    }
    report(
        8,
        "strategy comparison report",
        complete && undefined.is_empty(),
        format!("3x5x2 matrix, undefined at >= 0.10: {:?}; {}", undefined, ranking.join(", ")),
    );
}

#[test]
fn c9_end_to_end_determinism() {
    let config = benchmark_config(2);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run_experiment(&config).unwrap(), d.path()).unwrap();
    }
    let a = std::fs::read(dirs[0].path().join("table_train.csv")).unwrap();
    let b = std::fs::read(dirs[1].path().join("table_train.csv")).unwrap();
    report(
        9,
        "end-to-end determinism",
        !a.is_empty() && a == b,
        format!("table_train.csv {} bytes, identical: {}", a.len(), a == b),
    );
}
