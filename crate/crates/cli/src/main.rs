//! `abht`: generate data, fit and apply models, run experiments and trace
//! the stages of an adaptive fit.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abht_core::data::{self, load_csv, load_features, save_csv, LabeledDataset, ScaleParams, SplitSpec};
use abht_core::eval::{
    grid_search, method_stream, raw_csv, region_mse, stage_trace, summary_csv, sweep_csv,
    text_table, training_size_sweep, DataSource, SyntheticCase,
};
use abht_core::persist::{load_model, save_model, SavedModel};
use abht_core::{run_experiment, BaseSpec, Error, ExperimentConfig, Method, RngStream};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{default_noise, ConfigFile};

#[derive(Parser)]
#[command(name = "abht", version, about = "Histogram-transform ensemble regression")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// TOML experiment manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    A,
    B,
    Tabular,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Peht,
    Bht,
    Abht,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    /// Scale when some feature leaves [0, 1].
    Auto,
    Always,
    Never,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    Gen {
        #[arg(long, value_enum)]
        case: CaseArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        noise_sd: Option<f64>,
        /// Output file (default: <out-dir>/case_<case>.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select hyperparameters on validation data and save the model.
    Fit {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        train: PathBuf,
        /// Validation file; without it the training file is split in half.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value = "y")]
        target: String,
        #[arg(long, value_enum, default_value = "auto")]
        scale: ScaleArg,
        /// Model file (default: <out-dir>/model.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a saved model to a CSV file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file (default: <out-dir>/predictions.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the repeated comparison described by the config.
    Experiment {
        /// Print the planned runs and exit.
        #[arg(long)]
        dry_run: bool,
        /// Also sweep these training sizes (n_train = n_val = n).
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
    },
    /// Fit ABHT once and write one JSON line per stage.
    Trace {
        /// Repetition whose data and streams are used.
        #[arg(long, default_value_t = 0)]
        rep: usize,
        /// Output file (default: <out-dir>/trace.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Invariant(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::InvalidParameter(_) | Error::InvalidDimension(_) | Error::InvalidRefinement { .. } => {
                CliError::Config(m)
            }
            Error::DegenerateMatrix { .. } | Error::RngDegeneracy { .. } => CliError::Invariant(m),
            _ => CliError::Data(m),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("abht: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invariant(e.to_string()))?;
    }
    let file = match &cli.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    let mut config = file.build()?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let out_dir = cli.out_dir.clone();
    let out = |given: Option<PathBuf>, name: &str| given.unwrap_or_else(|| out_dir.join(name));

    match cli.command {
        Command::Gen {
            case,
            n,
            noise_sd,
            out: path,
        } => {
            let (case, name) = match case {
                CaseArg::A => (SyntheticCase::A, "case_a.csv"),
                CaseArg::B => (SyntheticCase::B, "case_b.csv"),
                CaseArg::Tabular => (SyntheticCase::Tabular, "tabular.csv"),
            };
            let ds = generate(case, n, noise_sd, config.seed)?;
            let path = out(path, name);
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            save_csv(&ds, &path)?;
            println!("wrote {} rows to {}", ds.len(), path.display());
        }
        Command::Fit {
            method,
            train,
            val,
            target,
            scale,
            out: path,
        } => {
            let method = match method {
                MethodArg::Peht => Method::Peht,
                MethodArg::Bht => Method::Bht,
                MethodArg::Abht => Method::Abht,
            };
            let saved = fit(&config, method, &train, val.as_deref(), &target, scale)?;
            let path = out(path, "model.json");
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            save_model(&saved, &path)?;
            println!("{} {} -> {}", method.name(), saved.params, path.display());
        }
        Command::Predict {
            model,
            data,
            out: path,
        } => {
            let saved = load_model(&model)?;
            let (ds, has_target) = load_features(&data, &saved.target)?;
            if ds.feature_names != saved.feature_names {
                return Err(CliError::Data(format!(
                    "feature columns {:?} do not match the model's {:?}",
                    ds.feature_names, saved.feature_names
                )));
            }
            let preds = ds
                .rows()
                .iter()
                .map(|x| saved.predict(x))
                .collect::<Result<Vec<_>, _>>()?;
            let mut text = String::from("prediction\n");
            for p in &preds {
                text.push_str(&data::format_f64(*p));
                text.push('\n');
            }
            let path = out(path, "predictions.csv");
            write_file(&path, &text)?;
            if has_target {
                let r = region_mse(&preds, &ds.ys, ds.region_labels.as_deref(), &ds.region_names)?;
                println!("mse {}", data::format_f64(r.overall_mse));
                for s in &r.per_region {
                    println!("mse[{}] {}", s.name, data::format_f64(s.mse));
                }
            }
            println!("wrote {} predictions to {}", preds.len(), path.display());
        }
        Command::Experiment { dry_run, sweep } => {
            if dry_run {
                print!("{}", plan(&config, &sweep));
                return Ok(());
            }
            let report = run_experiment(&config)?;
            for m in &report.methods {
                write_file(&out_dir.join(format!("{}.csv", m.method.name())), &summary_csv(m))?;
                write_file(&out_dir.join(format!("{}_raw.csv", m.method.name())), &raw_csv(m))?;
            }
            let table = text_table(&report);
            write_file(&out_dir.join("report.txt"), &table)?;
            print!("{table}");
            if !sweep.is_empty() {
                let points = training_size_sweep(&config, &sweep)?;
                write_file(&out_dir.join("sweep.csv"), &sweep_csv(&points))?;
            }
            let failed: usize = report.methods.iter().map(|m| m.failures()).sum();
            if failed > 0 {
                for m in &report.methods {
                    for r in m.repetitions.iter().filter(|r| r.error.is_some()) {
                        eprintln!("{} rep {}: {}", m.method.name(), r.rep, r.error.as_deref().unwrap());
                    }
                }
                return Err(CliError::Invariant(format!("{failed} repetition fits failed")));
            }
        }
        Command::Trace { rep, out: path } => {
            let (_, stages) = stage_trace(&config, rep)?;
            let mut text = String::new();
            for st in &stages {
                let mut v = serde_json::to_value(st).map_err(|e| CliError::Invariant(e.to_string()))?;
                match st.base {
                    BaseSpec::Histogram { bin_width } => v["h"] = bin_width.into(),
                    BaseSpec::Binary { depth, .. } => v["depth"] = depth.into(),
                }
                text.push_str(&v.to_string());
                text.push('\n');
            }
            let path = out(path, "trace.jsonl");
            write_file(&path, &text)?;
            println!("wrote {} stages to {}", stages.len(), path.display());
        }
    }
    Ok(())
}

fn generate(case: SyntheticCase, n: usize, noise_sd: Option<f64>, seed: u64) -> Result<LabeledDataset, CliError> {
    if n == 0 {
        return Err(CliError::Config("--n must be at least 1".into()));
    }
    let noise = noise_sd.unwrap_or_else(|| default_noise(case));
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CliError::Config(format!("bad noise sd {noise}")));
    }
    let mut rng = RngStream::new(seed, 0);
    Ok(match case {
        SyntheticCase::A => data::gen_case_a(n, noise, &mut rng)?,
        SyntheticCase::B => data::gen_case_b(n, noise, &mut rng)?,
        SyntheticCase::Tabular => {
            if noise_sd.is_some() {
                return Err(CliError::Config("the tabular generator has fixed unit noise".into()));
            }
            data::gen_tabular(n, &mut rng)?
        }
    })
}

fn fit(
    config: &ExperimentConfig,
    method: Method,
    train: &Path,
    val: Option<&Path>,
    target: &str,
    scale: ScaleArg,
) -> Result<SavedModel, CliError> {
    let train_ds = load_csv(train, target)?;
    let (train_ds, val_ds) = match val {
        Some(v) => (train_ds, load_csv(v, target)?),
        None => {
            let spec = SplitSpec::new(0.5, 0.5, 0.0, config.seed)?;
            let (a, b, _) = data::split(&train_ds, &spec)?;
            (a, b)
        }
    };
    if val_ds.dim() != train_ds.dim() || val_ds.feature_names != train_ds.feature_names {
        return Err(CliError::Data("training and validation columns differ".into()));
    }
    let outside = |ds: &LabeledDataset| ds.xs.iter().any(|v| !(0.0..=1.0).contains(v));
    let scale = match scale {
        ScaleArg::Always => true,
        ScaleArg::Never => {
            if outside(&train_ds) || outside(&val_ds) {
                return Err(CliError::Data("features leave [0, 1]; use --scale auto".into()));
            }
            false
        }
        ScaleArg::Auto => outside(&train_ds) || outside(&val_ds),
    };
    let (params, train_s, val_s) = if scale {
        let p = ScaleParams::fit(&train_ds, true)?;
        let (a, b) = (p.apply(&train_ds)?, p.apply(&val_ds)?);
        (Some(p), a, b)
    } else {
        (None, train_ds.clone(), val_ds)
    };
    let sel = grid_search(method, &train_s, &val_s, config, &method_stream(config, 0, method))?;
    Ok(SavedModel {
        model: sel.model,
        scale: params,
        feature_names: train_ds.feature_names.clone(),
        target: target.to_string(),
        params: sel.params,
    })
}

fn plan(config: &ExperimentConfig, sweep: &[usize]) -> String {
    let g = &config.grids;
    let mut s = String::new();
    let data = match &config.data {
        DataSource::Synthetic {
            case,
            n_train,
            n_val,
            n_test,
            noise_sd,
        } => format!("synthetic {case:?}: n_train={n_train} n_val={n_val} n_test={n_test} noise_sd={noise_sd}"),
        DataSource::Csv { path, target, fractions } => format!(
            "{} (target {target}), split {}/{}/{}",
            path.display(),
            fractions.0,
            fractions.1,
            fractions.2
        ),
    };
    s.push_str(&format!("data: {data}\n"));
    s.push_str(&format!("seed: {}, repetitions: {}\n", config.seed, config.repetitions));
    let bases: Vec<String> = g.bases.iter().map(|b| b.to_string()).collect();
    s.push_str(&format!("bases: {}\n", bases.join(" ")));
    for m in &config.methods {
        let line = match m {
            Method::Peht => format!("peht: {} bases x ensemble sizes {:?}", g.bases.len(), g.ensemble_sizes),
            Method::Bht => format!(
                "bht: {} bases x rates {:?} x iterations {:?}",
                g.bases.len(),
                g.learning_rates,
                g.iterations
            ),
            Method::Abht => format!(
                "abht: staged search over the same grid, region {:?}, max_stages {}, min_val_points {}, stage_shrinkage {:?}, width_tolerance {}",
                config.abht.region,
                if config.abht.max_stages == usize::MAX {
                    "unbounded".to_string()
                } else {
                    config.abht.max_stages.to_string()
                },
                config.abht.min_val_points,
                config.abht.stage_shrinkage,
                config.abht.width_tolerance
            ),
        };
        s.push_str(&format!("run {} x {line}\n", config.repetitions));
    }
    if !sweep.is_empty() {
        s.push_str(&format!("sweep: n in {sweep:?}\n"));
    }
    s
}
