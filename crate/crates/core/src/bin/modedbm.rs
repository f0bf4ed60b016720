use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use serde_json::json;

use modedbm::data::{binarize, load_idx, shifting_bar, BinaryDataset};
use modedbm::eval::{ais_avg_ll, ais_log_z, best_log_z, AisSettings};
use modedbm::harness::{run_experiment, summarize_runs_csv, write_summary_rows, ExperimentConfig, Method};
use modedbm::mode::{AnnealSchedule, SolverChoice};
use modedbm::trainer::{train, ScheduleUnit, TrainConfig, TrainSettings};
use modedbm::{DbmError, DbmParams, DbmRng, LayerShape, Result};

#[derive(Parser)]
#[command(name = "modedbm", version, about = "Train and evaluate deep Boltzmann machines")]
struct Cli {
    /// Seed for every random draw (experiments: the base seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset as newline-delimited bit-strings.
    GenerateData {
        #[command(flatten)]
        data: DataArgs,
        /// Output file (default: <out-dir>/data.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model and write model.json and trace.csv.
    Train(TrainArgs),
    /// Average log-likelihood of a dataset under a model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        ais: AisArgs,
        /// Use AIS even when log Z can be enumerated.
        #[arg(long)]
        force_ais: bool,
        /// Evaluate on the first N vectors only.
        #[arg(long)]
        max_vectors: Option<usize>,
    },
    /// AIS estimate of log Z.
    Ais {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        ais: AisArgs,
    },
    /// Run an ensemble experiment from a JSON config.
    Experiment {
        #[arg(long)]
        ensemble_size: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long, value_delimiter = ',')]
        n_h_totals: Option<Vec<usize>>,
        #[arg(long)]
        alpha_topo: Option<f64>,
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Recompute summary statistics from a runs.csv file.
    Aggregate {
        /// runs.csv written by `experiment`.
        #[arg(long)]
        runs: PathBuf,
    },
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Bit-string dataset file.
    #[arg(long, group = "source")]
    data: Option<PathBuf>,
    /// Shifting-bar dataset with this many visible nodes.
    #[arg(long, group = "source")]
    shifting_bar: Option<usize>,
    /// Bar length (default: half the visible nodes).
    #[arg(long)]
    bar_len: Option<usize>,
    /// IDX image file, binarized.
    #[arg(long, group = "source")]
    idx: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    threshold: u8,
    /// Keep only the first N vectors.
    #[arg(long)]
    limit: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<BinaryDataset> {
        let d = if let Some(path) = &self.data {
            BinaryDataset::load(path)?
        } else if let Some(n_v) = self.shifting_bar {
            shifting_bar(n_v, self.bar_len.unwrap_or(n_v / 2))?
        } else if let Some(path) = &self.idx {
            binarize(&load_idx(path)?, self.threshold)
        } else {
            return Err(DbmError::Config("no dataset: pass --data, --shifting-bar or --idx".into()));
        };
        Ok(match self.limit {
            Some(n) => d.head(n),
            None => d,
        })
    }
}

#[derive(Args, Clone)]
struct AisArgs {
    #[arg(long, default_value_t = 100)]
    ais_runs: usize,
    #[arg(long, default_value_t = 1000)]
    ais_intermediate: usize,
}

impl AisArgs {
    fn settings(&self) -> AisSettings {
        AisSettings {
            n_runs: self.ais_runs,
            n_intermediate: self.ais_intermediate,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum SolverArg {
    Exact,
    Anneal,
    Auto,
}

#[derive(Copy, Clone, ValueEnum)]
enum UnitArg {
    Update,
    Epoch,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Layer sizes, e.g. 12x10x2.
    #[arg(long)]
    shape: Option<LayerShape>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    cd_k: Option<usize>,
    /// Ceiling of the mode-update probability; 0 trains with CD only.
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long, value_enum)]
    schedule_unit: Option<UnitArg>,
    #[arg(long)]
    eval_every: Option<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DbmError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DbmError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| DbmError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => {
            let shape = args
                .shape
                .clone()
                .ok_or_else(|| DbmError::Config("--shape is required without --config".into()))?;
            TrainConfig::new(shape, 0, TrainSettings::default())
        }
    };
    if let Some(shape) = &args.shape {
        config.shape = shape.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let s = &mut config.settings;
    if let Some(v) = args.updates {
        s.total_updates = v;
    }
    if let Some(v) = args.lr_start {
        s.lr_start = v;
    }
    if let Some(v) = args.lr_end {
        s.lr_end = v;
    }
    if let Some(v) = args.batch_size {
        s.batch_size = Some(v);
    }
    if let Some(v) = args.cd_k {
        s.cd_k = v;
    }
    if let Some(v) = args.p_max {
        s.p_max = v;
    }
    if let Some(v) = args.eval_every {
        s.eval_every = v;
    }
    if let Some(v) = args.solver {
        s.mode_solver = match v {
            SolverArg::Exact => SolverChoice::Exact,
            SolverArg::Anneal => SolverChoice::Anneal(AnnealSchedule::default()),
            SolverArg::Auto => SolverChoice::Auto(AnnealSchedule::default()),
        };
    }
    if let Some(v) = args.schedule_unit {
        s.schedule_unit = match v {
            UnitArg::Update => ScheduleUnit::Update,
            UnitArg::Epoch => ScheduleUnit::Epoch,
        };
    }
    let dataset = args.data.load()?;
    let mut rng = DbmRng::seed_from_u64(config.seed);
    let (params, trace) = train(&config, &dataset, &mut rng)?;
    let dir = out_dir(cli);
    create_dir(&dir)?;
    params.save(dir.join("model.json"))?;
    let trace_path = dir.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(|e| DbmError::Io {
        path: trace_path.clone(),
        source: e,
    })?;
    trace.write_csv(file)?;
    write_file(&dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    let summary = json!({
        "model": dir.join("model.json"),
        "trace": trace_path,
        "mode_updates": trace.mode_updates,
        "cd_updates": trace.cd_updates,
        "final_avg_ll": trace.last_ll(),
        "ll_kind": trace.records.last().map(|r| r.ll_kind),
    });
    println!("{summary}");
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenerateData { data, out } => {
            let d = data.load()?;
            let path = match out {
                Some(p) => p.clone(),
                None => {
                    let dir = out_dir(cli);
                    create_dir(&dir)?;
                    dir.join("data.txt")
                }
            };
            d.save(&path)?;
            eprintln!("wrote {} vectors of dimension {} to {}", d.len(), d.dim(), path.display());
        }
        Command::Train(args) => run_train(cli, args)?,
        Command::Eval {
            model,
            data,
            ais,
            force_ais,
            max_vectors,
        } => {
            let params = DbmParams::load(model)?;
            let mut d = data.load()?;
            if let Some(n) = max_vectors {
                d = d.head(*n);
            }
            let mut rng = DbmRng::seed_from_u64(cli.seed.unwrap_or(0));
            let est = if *force_ais {
                ais_log_z(&params, ais.ais_intermediate, ais.ais_runs, &mut rng)?
            } else {
                best_log_z(&params, ais.ais_intermediate, ais.ais_runs, &mut rng)?
            };
            let avg_ll = ais_avg_ll(&params, &d, &est)?;
            let out = json!({
                "log_z": est.log_z,
                "exact": est.exact,
                "avg_ll": avg_ll,
                "n_runs": est.n_runs(),
                "n_intermediate": est.n_intermediate,
            });
            println!("{out}");
        }
        Command::Ais { model, ais } => {
            let params = DbmParams::load(model)?;
            let mut rng = DbmRng::seed_from_u64(cli.seed.unwrap_or(0));
            let s = ais.settings();
            let est = ais_log_z(&params, s.n_intermediate, s.n_runs, &mut rng)?;
            let out = json!({
                "log_z": est.log_z,
                "exact": false,
                "std_error": est.std_error(),
                "n_runs": est.n_runs(),
                "n_intermediate": est.n_intermediate,
                "run_log_weights": est.run_log_weights,
            });
            println!("{out}");
        }
        Command::Experiment {
            ensemble_size,
            methods,
            n_h_totals,
            alpha_topo,
            updates,
        } => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| DbmError::Config("experiment needs --config".into()))?;
            let mut config = ExperimentConfig::load(path)?;
            if let Some(seed) = cli.seed {
                config.seed_base = seed;
            }
            if let Some(dir) = &cli.out_dir {
                config.out_dir = dir.clone();
            }
            if let Some(v) = ensemble_size {
                config.ensemble_size = *v;
            }
            if let Some(v) = methods {
                config.methods = v.clone();
            }
            if let Some(v) = n_h_totals {
                config.n_h_totals = v.clone();
            }
            if let Some(v) = alpha_topo {
                config.alpha_topo = *v;
            }
            if let Some(v) = updates {
                config.train.total_updates = *v;
            }
            let report = run_experiment(&config)?;
            report.write_to(&config.out_dir)?;
            for r in &report.runs {
                if let Err(e) = &r.outcome {
                    eprintln!("run {} n_h={} seed={} failed: {e}", r.method, r.n_h_total, r.seed);
                }
            }
            eprintln!(
                "wrote {} runs to {}",
                report.runs.len(),
                config.out_dir.join("runs.csv").display()
            );
            return Ok(report.all_ok());
        }
        Command::Aggregate { runs } => {
            let file = fs::File::open(runs).map_err(|e| DbmError::Io {
                path: runs.clone(),
                source: e,
            })?;
            let rows = summarize_runs_csv(file)?;
            match &cli.out_dir {
                Some(dir) => {
                    create_dir(dir)?;
                    let path = dir.join("summary.csv");
                    let file = fs::File::create(&path).map_err(|e| DbmError::Io { path, source: e })?;
                    write_summary_rows(&rows, file)?;
                }
                None => write_summary_rows(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
