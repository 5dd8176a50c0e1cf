//! The strategy × size experiment grid.
//!
//! A run trains `repetitions` networks on the full training split (the
//! reference) and on every reduced subset, averages and fits the curves, and
//! scores each cell against the reference. Every training job is independent
//! and results are gathered in (strategy, fraction, repetition) order, so the
//! worker count never changes the output.

mod config;
mod table;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use thiserror::Error;

use crate::curves::{self, CurveError, CurveModel, FitMode, FitOutcome};
use crate::dataset::{self, class_distribution, compute_quotas, Dataset, DatasetError, QuotaPlan};
use crate::nnet::{self, LossCurve, NetworkSpec, NnetError, TrainConfig};
use crate::reduction::{self, ReductionError, ReductionPlan, Strategy};

pub use config::{DatasetSection, DatasetSource, ExperimentConfig, ExperimentSection, NetworkSection, DEFAULT_FRACTIONS};
pub use table::{CurveKind, SimilarityTable, TableFormat};

/// Offset between a repetition's init seed and its shuffle seed.
pub const SHUFFLE_SEED_OFFSET: u64 = 10_000;
/// Loss-profile seeds start here (above any training seed).
pub const PROFILE_SEED_OFFSET: u64 = 1_000_000;
pub const KMEANS_SEED_OFFSET: u64 = 2_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NnetError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table: {0}")]
    Format(String),
    #[error("{context}: {source}")]
    Run {
        context: RunContext,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    /// 3 for numerical failures during training, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Run { source, .. } => source.exit_code(),
            HarnessError::Network(NnetError::NonFiniteLoss { .. }) => 3,
            HarnessError::Reduction(ReductionError::Network(NnetError::NonFiniteLoss { .. })) => 3,
            _ => 2,
        }
    }

    fn within(self, context: RunContext) -> Self {
        HarnessError::Run {
            context,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Where in the grid an error happened. `strategy == None` is the full-size
/// reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunContext {
    pub strategy: Option<Strategy>,
    pub fraction: Option<f64>,
    pub repetition: Option<usize>,
}

impl fmt::Display for RunContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.strategy {
            Some(s) => write!(f, "strategy {s}")?,
            None => f.write_str("full-size reference")?,
        }
        if let Some(fr) = self.fraction {
            write!(f, ", fraction {fr}")?;
        }
        if let Some(r) = self.repetition {
            write!(f, ", repetition {r}")?;
        }
        Ok(())
    }
}

/// One reduced-set training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub fraction: f64,
    pub repetition: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    /// Seed of the random plan; `None` for the deterministic strategies.
    pub plan_seed: Option<u64>,
    pub reduced_size: usize,
    /// [`TrainConfig::hyperparameter_digest`] of the config the run used.
    pub config_digest: u64,
    pub curve: LossCurve,
}

/// Fits for one group of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub mean: LossCurve,
    pub train_fit: FitOutcome,
    pub val_fit: FitOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub strategy: Strategy,
    pub fraction: f64,
    pub quotas: QuotaPlan,
    /// One plan for Distance and Loss, one per repetition for Random.
    pub plans: Vec<ReductionPlan>,
    pub summary: CurveSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub table: SimilarityTable,
    pub reference_runs: Vec<LossCurve>,
    pub reference: CurveSummary,
    pub reference_digest: u64,
    /// Row-major over (strategy, fraction) in config order.
    pub cells: Vec<CellResult>,
    /// Ordered by (strategy, fraction, repetition).
    pub records: Vec<RunRecord>,
    pub train_set: Dataset,
    pub val_set: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, None, &|_| {})
}

/// `base_dir` resolves relative dataset paths; `progress` is called after
/// every finished training job, from worker threads.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    base_dir: Option<&Path>,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<ExperimentResult> {
    config.validate()?;
    match config.experiment.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("cannot start {n} workers: {e}")))?
            .install(|| run(config, base_dir, progress)),
        None => run(config, base_dir, progress),
    }
}

pub fn init_seed(base: u64, repetition: usize) -> u64 {
    base.wrapping_add(repetition as u64)
}

pub fn shuffle_seed(base: u64, repetition: usize) -> u64 {
    base.wrapping_add(SHUFFLE_SEED_OFFSET).wrapping_add(repetition as u64)
}

pub fn profile_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64)
        .map(|j| base.wrapping_add(PROFILE_SEED_OFFSET).wrapping_add(j))
        .collect()
}

/// Curve fits for a group of runs under `mode`.
pub fn summarize(curves: &[LossCurve], mode: FitMode) -> Result<CurveSummary> {
    let mean = curves::mean_curve(curves)?;
    let (train_fit, val_fit) = match mode {
        FitMode::AverageThenFit => (
            CurveModel::Exponential.fit(&mean.train_loss),
            CurveModel::Poly5.fit(&mean.val_loss),
        ),
        FitMode::FitThenAverage => {
            let train: Vec<&[f64]> = curves.iter().map(|c| c.train_loss.as_slice()).collect();
            let val: Vec<&[f64]> = curves.iter().map(|c| c.val_loss.as_slice()).collect();
            (
                curves::fit_then_average(CurveModel::Exponential, &train)?,
                curves::fit_then_average(CurveModel::Poly5, &val)?,
            )
        }
    };
    Ok(CurveSummary {
        mean,
        train_fit,
        val_fit,
    })
}

struct Cell {
    strategy: Strategy,
    fraction: f64,
    quotas: QuotaPlan,
    plans: Vec<ReductionPlan>,
    subsets: Vec<Dataset>,
}

impl Cell {
    fn context(&self, repetition: Option<usize>) -> RunContext {
        RunContext {
            strategy: Some(self.strategy),
            fraction: Some(self.fraction),
            repetition,
        }
    }

    /// Random draws a plan per repetition; the others reuse one.
    fn subset(&self, repetition: usize) -> &Dataset {
        &self.subsets[repetition.min(self.subsets.len() - 1)]
    }
}

fn run(config: &ExperimentConfig, base_dir: Option<&Path>, progress: &(dyn Fn(Progress) + Sync)) -> Result<ExperimentResult> {
    let exp = &config.experiment;
    let full = config.dataset.source.load(base_dir)?;
    let (train_set, val_set) = dataset::split(&full, config.dataset.val_fraction, config.dataset.split_seed)?;
    let spec = config.network.build(&train_set);
    spec.check_classifier(train_set.num_classes(), config.training.loss)?;
    let base = exp.base_seed;
    let reps = exp.repetitions;

    let cells = build_cells(config, &spec, &train_set)?;

    // jobs: the reference first, then every cell, each over all repetitions
    let jobs: Vec<(Option<usize>, usize)> = std::iter::once(None)
        .chain((0..cells.len()).map(Some))
        .flat_map(|c| (0..reps).map(move |r| (c, r)))
        .collect();
    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let curves: Vec<LossCurve> = jobs
        .par_iter()
        .map(|&(cell, r)| {
            let run_config = config.training.with_seeds(init_seed(base, r), shuffle_seed(base, r));
            let (data, context) = match cell {
                None => (
                    &train_set,
                    RunContext {
                        strategy: None,
                        fraction: None,
                        repetition: Some(r),
                    },
                ),
                Some(c) => (cells[c].subset(r), cells[c].context(Some(r))),
            };
            let curve = nnet::train(&spec, data, &val_set, &run_config).map_err(|e| HarnessError::from(e).within(context));
            progress(Progress {
                done: done.fetch_add(1, Ordering::Relaxed) + 1,
                total,
            });
            curve
        })
        .collect::<Result<_>>()?;

    let mut chunks = curves.chunks(reps);
    let reference_runs = chunks.next().expect("reference runs").to_vec();
    let reference = summarize(&reference_runs, exp.fit_mode).map_err(|e| {
        e.within(RunContext {
            strategy: None,
            fraction: None,
            repetition: None,
        })
    })?;
    let digest = config.training.hyperparameter_digest();

    let mut table = SimilarityTable::undefined(exp.fractions.clone(), exp.strategies.clone());
    let mut results = Vec::with_capacity(cells.len());
    let mut records = Vec::with_capacity(cells.len() * reps);
    for (i, (cell, runs)) in cells.into_iter().zip(chunks).enumerate() {
        let summary = summarize(runs, exp.fit_mode).map_err(|e| e.within(cell.context(None)))?;
        let (col, row) = (i / exp.fractions.len(), i % exp.fractions.len());
        table.train[row][col] = curves::similarity(&reference.train_fit, &summary.train_fit)?;
        table.val[row][col] = curves::similarity(&reference.val_fit, &summary.val_fit)?;
        for (r, curve) in runs.iter().enumerate() {
            records.push(RunRecord {
                strategy: cell.strategy,
                fraction: cell.fraction,
                repetition: r,
                init_seed: init_seed(base, r),
                shuffle_seed: shuffle_seed(base, r),
                plan_seed: (cell.strategy == Strategy::Random).then(|| init_seed(base, r)),
                reduced_size: cell.subset(r).len(),
                config_digest: config.training.with_seeds(init_seed(base, r), shuffle_seed(base, r)).hyperparameter_digest(),
                curve: curve.clone(),
            });
        }
        results.push(CellResult {
            strategy: cell.strategy,
            fraction: cell.fraction,
            quotas: cell.quotas,
            plans: cell.plans,
            summary,
        });
    }

    Ok(ExperimentResult {
        config: config.clone(),
        table,
        reference_runs,
        reference,
        reference_digest: digest,
        cells: results,
        records,
        train_set,
        val_set,
    })
}

fn build_cells(config: &ExperimentConfig, spec: &NetworkSpec, train_set: &Dataset) -> Result<Vec<Cell>> {
    let exp = &config.experiment;
    let base = exp.base_seed;
    let distribution = class_distribution(train_set);
    let profile = if exp.strategies.contains(&Strategy::Loss) {
        let seeds = profile_seeds(base, exp.profile_seeds);
        Some(
            reduction::initial_loss_profile(spec, train_set, &seeds, config.training.loss).map_err(|e| {
                HarnessError::from(e).within(RunContext {
                    strategy: Some(Strategy::Loss),
                    fraction: None,
                    repetition: None,
                })
            })?,
        )
    } else {
        None
    };
    let grid: Vec<(Strategy, f64)> = exp
        .strategies
        .iter()
        .flat_map(|&s| exp.fractions.iter().map(move |&f| (s, f)))
        .collect();
    grid.par_iter()
        .map(|&(strategy, fraction)| {
            let context = RunContext {
                strategy: Some(strategy),
                fraction: Some(fraction),
                repetition: None,
            };
            let annotate = |e: HarnessError| e.within(context);
            let quotas = compute_quotas(&distribution, fraction).map_err(|e| annotate(e.into()))?;
            let plans = match strategy {
                Strategy::Random => (0..exp.repetitions)
                    .map(|r| reduction::reduce_random(train_set, &quotas, init_seed(base, r)))
                    .collect::<std::result::Result<Vec<_>, _>>(),
                Strategy::Distance => {
                    reduction::reduce_distance(train_set, &quotas, &exp.kmeans, base.wrapping_add(KMEANS_SEED_OFFSET))
                        .map(|p| vec![p])
                }
                Strategy::Loss => reduction::reduce_loss_based(
                    profile.as_ref().expect("profile computed for loss strategy"),
                    train_set,
                    &quotas,
                    exp.loss_direction,
                )
                .map(|p| vec![p]),
            }
            .map_err(|e| annotate(e.into()))?;
            let subsets = plans
                .iter()
                .map(|p| reduction::apply(p, train_set))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| annotate(e.into()))?;
            Ok(Cell {
                strategy,
                fraction,
                quotas,
                plans,
                subsets,
            })
        })
        .collect()
}

/// `curves_<strategy>_<fraction>.csv` per cell: the averaged curve, then every
/// run. Returns the written paths in cell order.
pub fn emit_curves(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(HarnessError::Config("no run records to write".into()));
    }
    let mut groups: Vec<(Strategy, f64, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(s, f, _)| *s == r.strategy && *f == r.fraction) {
            Some((_, _, g)) => g.push(r),
            None => groups.push((r.strategy, r.fraction, vec![r])),
        }
    }
    let mut paths = Vec::with_capacity(groups.len());
    for (strategy, fraction, mut group) in groups {
        group.sort_by_key(|r| r.repetition);
        let runs: Vec<LossCurve> = group.iter().map(|r| r.curve.clone()).collect();
        let labels: Vec<String> = group.iter().map(|r| format!("r{}", r.repetition)).collect();
        let path = dir.join(format!("curves_{}_{}.csv", strategy.name(), fraction));
        fs::write(&path, curve_group_csv(&runs, &labels)?).map_err(io_error(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

/// `epoch,mean_train,mean_val,train_<label>,val_<label>,...`
pub fn curve_group_csv(runs: &[LossCurve], labels: &[String]) -> Result<String> {
    let mean = curves::mean_curve(runs)?;
    let mut out = String::from("epoch,mean_train,mean_val");
    for l in labels {
        out.push_str(&format!(",train_{l},val_{l}"));
    }
    out.push('\n');
    for e in 0..mean.epochs() {
        out.push_str(&format!("{},{:?},{:?}", e + 1, mean.train_loss[e], mean.val_loss[e]));
        for r in runs {
            out.push_str(&format!(",{:?},{:?}", r.train_loss[e], r.val_loss[e]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes the full output directory:
/// `config.json`, `table_train.csv`, `table_val.csv`, `table.md`,
/// `reference_curves.csv`, `curves_*.csv` and `plans/*.csv`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    let plans_dir = dir.join("plans");
    fs::create_dir_all(&plans_dir).map_err(io_error(&plans_dir))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_error(&path))
    };
    write("config.json", result.config.to_json() + "\n")?;
    write("table_train.csv", result.table.to_csv(CurveKind::Train))?;
    write("table_val.csv", result.table.to_csv(CurveKind::Validation))?;
    write("table.md", result.table.to_markdown())?;
    let labels: Vec<String> = (0..result.reference_runs.len()).map(|r| format!("r{r}")).collect();
    write("reference_curves.csv", curve_group_csv(&result.reference_runs, &labels)?)?;
    emit_curves(&result.records, dir)?;
    for cell in &result.cells {
        for (r, plan) in cell.plans.iter().enumerate() {
            let name = if cell.plans.len() > 1 {
                format!("{}_{}_r{r}.csv", cell.strategy.name(), cell.fraction)
            } else {
                format!("{}_{}.csv", cell.strategy.name(), cell.fraction)
            };
            let path = plans_dir.join(name);
            let mut buf = Vec::new();
            reduction::write_plan_csv(plan, &result.train_set, &mut buf)?;
            fs::write(&path, buf).map_err(io_error(&path))?;
        }
    }
    Ok(())
}

/// Config digest shared by every run, if they all agree.
pub fn common_digest(result: &ExperimentResult) -> Option<u64> {
    result
        .records
        .iter()
        .all(|r| r.config_digest == result.reference_digest)
        .then_some(result.reference_digest)
}

/// Train config the harness hands to repetition `r`.
pub fn run_config(training: &TrainConfig, base_seed: u64, repetition: usize) -> TrainConfig {
    training.with_seeds(init_seed(base_seed, repetition), shuffle_seed(base_seed, repetition))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(strategies: &[&str], fractions: &[f64], reps: usize) -> ExperimentConfig {
        let text = format!(
            r#"{{"dataset": {{"source": {{"kind": "blobs", "n_per_class": 25, "num_classes": 4, "dim": 3, "spread": 1.0}}}},
                "network": {{"hidden": [6]}},
                "training": {{"epochs": 8, "batch_size": 8, "learning_rate": 0.1}},
                "experiment": {{"strategies": {}, "fractions": {:?}, "repetitions": {reps}, "profile_seeds": 3, "workers": 2}}}}"#,
            serde_json::to_string(strategies).unwrap(),
            fractions
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn single_cell_shape() {
        let result = run_experiment(&tiny(&["random"], &[0.5], 1)).unwrap();
        assert_eq!(result.table.cell_count(), 2);
        assert_eq!(result.records.len(), 1);
        assert_eq!(result.records[0].reduced_size, 40);
        assert_eq!(result.reference_runs.len(), 1);
    }

    #[test]
    fn records_follow_grid_order() {
        let result = run_experiment(&tiny(&["loss", "random"], &[0.3, 0.6], 2)).unwrap();
        let order: Vec<(Strategy, f64, usize)> = result.records.iter().map(|r| (r.strategy, r.fraction, r.repetition)).collect();
        let mut sorted = order.clone();
        sorted.sort_by(|a, b| {
            let rank = |s: Strategy| if s == Strategy::Loss { 0 } else { 1 };
            (rank(a.0), a.1, a.2).partial_cmp(&(rank(b.0), b.1, b.2)).unwrap()
        });
        assert_eq!(order, sorted);
        assert_eq!(common_digest(&result), Some(result.reference_digest));
        for r in &result.records {
            assert_eq!(r.reduced_size, result.cells.iter().find(|c| c.strategy == r.strategy && c.fraction == r.fraction).unwrap().quotas.total());
        }
        // deterministic strategies reuse one plan, random draws one per repetition
        assert_eq!(result.cells[0].plans.len(), 1);
        assert_eq!(result.cells[2].plans.len(), 2);
        assert_ne!(result.cells[2].plans[0], result.cells[2].plans[1]);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut a = tiny(&["distance", "random"], &[0.3], 2);
        a.experiment.workers = Some(1);
        let mut b = a.clone();
        b.experiment.workers = Some(3);
        let (ra, rb) = (run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
        assert_eq!(ra.table, rb.table);
        assert_eq!(ra.records, rb.records);
    }

    #[test]
    fn errors_name_the_cell() {
        let mut c = tiny(&["random"], &[0.5], 1);
        c.training.learning_rate = 1e300;
        let err = run_experiment(&c).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("full-size reference, repetition 0"), "{err}");
    }

    #[test]
    fn infeasible_fraction_is_a_config_error() {
        // 80 training samples in 4 classes; 0.01 leaves one sample for four classes
        let err = run_experiment(&tiny(&["random"], &[0.01], 1)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("strategy random, fraction 0.01"), "{err}");
    }

    #[test]
    fn seeding_scheme() {
        assert_eq!(init_seed(7, 3), 10);
        assert_eq!(shuffle_seed(7, 3), 10_010);
        assert_eq!(profile_seeds(7, 2), vec![1_000_007, 1_000_008]);
        let t = run_config(&TrainConfig::default(), 7, 3);
        assert_eq!((t.init_seed, t.shuffle_seed), (10, 10_010));
    }
}
