//! `tsr`: training-set reduction from the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tsr_core::curves::{self, CurveModel, FitOutcome};
use tsr_core::dataset::{self, ColumnRef, CsvSchema, Dataset};
use tsr_core::harness::{self, ExperimentConfig, HarnessError, Progress};
use tsr_core::nnet;
use tsr_core::reduction::{self, Strategy};

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Parser)]
#[command(name = "tsr", version, about = "Training-set reduction: select, train, fit, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Base seed (overrides the config file where one applies).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Experiment config (JSON). Its network and training sections also
    /// apply to `reduce` and `train`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-blob dataset as CSV.
    Generate {
        #[arg(long, default_value_t = 500)]
        n_per_class: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 4.0)]
        spread: f64,
        /// Output file (default `<out-dir>/dataset.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select a class-stratified subset; writes `plan.csv` and `reduced.csv`.
    Reduce {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        fraction: f64,
    },
    /// Train on a dataset and write the per-epoch loss curve.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Validation CSV; without it a stratified share of `--data` is held out.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Output file (default `<out-dir>/curve.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model to one column of a curve file.
    Fit {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long, value_enum, default_value_t = Column::Train)]
        column: Column,
        /// `exp` or `poly5`; defaults to exp for train and poly5 for val.
        #[arg(long)]
        model: Option<CurveModel>,
        /// Output file (default stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Similarity of two fit files, row by row.
    Compare { reference: PathBuf, candidate: PathBuf },
    /// Run the full strategy × size grid into `--out-dir`.
    Experiment,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV (`index,label,f0..` as written by `generate`).
    #[arg(long)]
    data: PathBuf,
    /// Label column name or 0-based position.
    #[arg(long, default_value = "label")]
    label: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Column {
    Train,
    Val,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.workers {
        if n == 0 {
            return Err(HarnessError::Config("--workers must be positive".into()));
        }
        // only fails if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Generate {
            n_per_class,
            classes,
            dim,
            spread,
            out,
        } => {
            let data = dataset::generate_blobs(*n_per_class, *classes, *dim, *spread, g.seed.unwrap_or(0))?;
            let path = output_path(out.as_deref(), g, "dataset.csv")?;
            dataset::export_csv(&data, &path)?;
            eprintln!("wrote {} samples to {}", data.len(), path.display());
        }
        Command::Reduce { data, strategy, fraction } => {
            let config = load_config(g)?;
            let set = load_data(data)?;
            let seed = g.seed.unwrap_or(config.experiment.base_seed);
            let quotas = dataset::compute_quotas(&dataset::class_distribution(&set), *fraction)?;
            let plan = match strategy {
                Strategy::Random => reduction::reduce_random(&set, &quotas, seed)?,
                Strategy::Distance => reduction::reduce_distance(
                    &set,
                    &quotas,
                    &config.experiment.kmeans,
                    seed.wrapping_add(harness::KMEANS_SEED_OFFSET),
                )?,
                Strategy::Loss => {
                    let spec = config.network.build(&set);
                    let seeds = harness::profile_seeds(seed, config.experiment.profile_seeds);
                    let profile = reduction::initial_loss_profile(&spec, &set, &seeds, config.training.loss)?;
                    reduction::reduce_loss_based(&profile, &set, &quotas, config.experiment.loss_direction)?
                }
            };
            let dir = out_dir(g)?;
            let mut buf = Vec::new();
            reduction::write_plan_csv(&plan, &set, &mut buf)?;
            write_file(&dir.join("plan.csv"), &buf)?;
            dataset::export_csv(&reduction::apply(&plan, &set)?, dir.join("reduced.csv"))?;
            eprintln!("selected {} of {} samples into {}", plan.len(), set.len(), dir.display());
        }
        Command::Train { data, val, out } => {
            let config = load_config(g)?;
            let full = load_data(data)?;
            let (train_set, val_set) = match val {
                Some(p) => (full, load_data(&DataArgs { data: p.clone(), label: data.label.clone() })?),
                None => dataset::split(&full, config.dataset.val_fraction, config.dataset.split_seed)?,
            };
            let spec = config.network.build(&train_set);
            let seed = g.seed.unwrap_or(config.experiment.base_seed);
            let train_config = harness::run_config(&config.training, seed, 0);
            let curve = nnet::train(&spec, &train_set, &val_set, &train_config)?;
            let path = output_path(out.as_deref(), g, "curve.csv")?;
            let mut buf = Vec::new();
            nnet::write_curve_csv(&curve, &mut buf).map_err(io_at(&path))?;
            write_file(&path, &buf)?;
            eprintln!("trained {} epochs, curve in {}", curve.epochs(), path.display());
        }
        Command::Fit {
            curve,
            column,
            model,
            out,
        } => {
            let file = fs::File::open(curve).map_err(io_at(curve))?;
            let c = nnet::read_curve_csv(file)?;
            let (values, default_model) = match column {
                Column::Train => (&c.train_loss, CurveModel::Exponential),
                Column::Val => (&c.val_loss, CurveModel::Poly5),
            };
            let outcome = model.unwrap_or(default_model).fit(values);
            let mut buf = Vec::new();
            curves::write_fit_csv(std::slice::from_ref(&outcome), &mut buf)?;
            match out {
                Some(p) => write_file(p, &buf)?,
                None => std::io::stdout().write_all(&buf).map_err(io_at(Path::new("<stdout>")))?,
            }
        }
        Command::Compare { reference, candidate } => {
            let r = read_fits(reference)?;
            let c = read_fits(candidate)?;
            if r.len() != c.len() {
                return Err(HarnessError::Config(format!(
                    "{} has {} fits, {} has {}",
                    reference.display(),
                    r.len(),
                    candidate.display(),
                    c.len()
                )));
            }
            for (a, b) in r.iter().zip(&c) {
                println!("{}", curves::similarity(a, b)?);
            }
        }
        Command::Experiment => {
            let mut config = load_config(g)?;
            if let Some(s) = g.seed {
                config.experiment.base_seed = s;
            }
            if g.workers.is_some() {
                config.experiment.workers = g.workers;
            }
            config.validate()?;
            let dir = out_dir(g)?;
            let base = g.config.as_deref().and_then(Path::parent);
            let step = |p: Progress| {
                if p.done == p.total || p.done % (p.total / 20).max(1) == 0 {
                    eprintln!("trained {}/{}", p.done, p.total);
                }
            };
            let result = harness::run_experiment_with(&config, base, &step)?;
            harness::write_outputs(&result, &dir)?;
            print!("{}", result.table.to_markdown());
            eprintln!("results in {}", dir.display());
        }
    }
    Ok(())
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    match &g.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let schema = CsvSchema {
        label: ColumnRef::from(args.label.as_str()),
        ..CsvSchema::exported()
    };
    Ok(dataset::load_csv(&args.data, &schema)?)
}

fn read_fits(path: &Path) -> Result<Vec<FitOutcome>> {
    let file = fs::File::open(path).map_err(io_at(path))?;
    Ok(curves::read_fit_csv(file)?)
}

fn out_dir(g: &Global) -> Result<PathBuf> {
    let dir = g.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    Ok(dir)
}

fn output_path(explicit: Option<&Path>, g: &Global, default_name: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(io_at(parent))?;
            }
            Ok(p.to_path_buf())
        }
        None => Ok(out_dir(g)?.join(default_name)),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_at(path))
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
