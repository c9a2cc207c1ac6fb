use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glass::config::{RunConfig, WeightingName};
use glass::error::{AppError, Result};
use glass::io::{self, dataset, tables, Checkpoint};
use glass::pipeline;
use glass_core::ingest::{self, Decimation, Endpoint, FilterSpec};
use glass_core::model::{Dataset, TimingConfig};

#[derive(Parser)]
#[command(name = "glass", version, about = "Bayesian latent-channel decoding for P300 spellers")]
struct Cli {
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named base configuration, used when no config file is given.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => {
                return Err(AppError::Config(
                    "give either --config or --preset; set `preset` inside the file to layer both".into(),
                ))
            }
            (Some(path), None) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EndpointArg {
    Inclusive,
    Exclusive,
}

impl From<EndpointArg> for Endpoint {
    fn from(e: EndpointArg) -> Self {
        match e {
            EndpointArg::Inclusive => Endpoint::Inclusive,
            EndpointArg::Exclusive => Endpoint::Exclusive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DecimationArg {
    Exact,
    Nearest,
}

impl From<DecimationArg> for Decimation {
    fn from(d: DecimationArg) -> Self {
        match d {
            DecimationArg::Exact => Decimation::Exact,
            DecimationArg::Nearest => Decimation::Nearest,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a training and a test set with their ground truth.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert an epoch CSV into the binary dataset format.
    Import {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        sample_rate: f64,
        /// Flash duration in milliseconds.
        #[arg(long, default_value_t = TimingConfig::default().flash_ms)]
        flash_ms: f64,
        /// Inter-stimulus interval in milliseconds.
        #[arg(long, default_value_t = TimingConfig::default().isi_ms)]
        isi_ms: f64,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a binary dataset as epoch CSV.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Band-pass and downsample a dataset. Model fits use unfiltered
    /// full-rate data; this serves baseline pipelines and inspection.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Band-pass each epoch between these edges in Hz.
        #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"])]
        bandpass: Option<Vec<f64>>,
        #[arg(long, default_value_t = FilterSpec::default().order)]
        filter_order: usize,
        /// Single forward pass instead of zero-phase filtering.
        #[arg(long)]
        causal: bool,
        /// Target sampling rate in Hz.
        #[arg(long)]
        downsample: Option<f64>,
        #[arg(long, value_enum, default_value = "exact")]
        decimation: DecimationArg,
        #[arg(long, value_enum, default_value = "inclusive")]
        endpoint: EndpointArg,
    },
    /// Calibrate the threshold and fit the surrogate posterior.
    Fit {
        #[command(flatten)]
        config: ConfigArgs,
        /// Labeled training dataset.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Fixed threshold; skips calibration.
        #[arg(long, conflicts_with = "shrinkage_ratio")]
        tau: Option<f64>,
        /// Threshold ratios; several values fit one model each.
        #[arg(long, value_delimiter = ',')]
        shrinkage_ratio: Vec<f64>,
        /// Keep only the first K sequences of every character.
        #[arg(long, num_args = 0..=1, default_missing_value = "3", value_name = "K")]
        less_training: Option<usize>,
        /// Posterior draws stored for prediction.
        #[arg(long)]
        draws: Option<usize>,
        /// Compute the numerical rank of the design before fitting.
        #[arg(long)]
        check_identifiability: bool,
    },
    /// Posterior predictive distributions and decoded characters.
    Predict {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        weighting: Option<WeightingArg>,
        #[arg(long)]
        max_sequences: Option<usize>,
    },
    /// Effect curves, intervals and channel selection of a model.
    Summarize {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and utility by number of sequences.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Fitted model; required unless --scores is given.
        #[arg(long, required_unless_present = "scores")]
        model: Option<PathBuf>,
        /// Labeled test datasets, one accuracy group each.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// External classifier scores with header c,s,u,j,score.
        #[arg(long, conflicts_with = "model")]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        weighting: Option<WeightingArg>,
    },
    /// Accuracy and utility across threshold ratios.
    Sensitivity {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
        ratios: Vec<f64>,
        #[arg(long, num_args = 0..=1, default_missing_value = "3", value_name = "K")]
        less_training: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Compare a model against the simulation it was fitted to.
    Recovery {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Importance,
    Uniform,
}

impl From<WeightingArg> for WeightingName {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Importance => WeightingName::Importance,
            WeightingArg::Uniform => WeightingName::Uniform,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(glass::error::exit::CONFIG as u8);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn less(data: Dataset, k: Option<usize>) -> Result<Dataset> {
    match k {
        Some(0) => Err(AppError::Config("--less-training needs at least one sequence".into())),
        Some(k) => Ok(data.first_sequences(k)),
        None => Ok(data),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out } => {
            let cfg = config.load()?.resolve()?;
            let sim = pipeline::simulate(&cfg)?;
            io::create_dir(&out)?;
            dataset::write_dataset(&out.join("train.glds"), &sim.train)?;
            dataset::write_dataset(&out.join("test.glds"), &sim.test)?;
            io::write_json(&out.join("truth.json"), &sim.truth)?;
            io::write_resolved_config(&out, "simulate", &cfg)
        }
        Command::Import {
            csv,
            sample_rate,
            flash_ms,
            isi_ms,
            out,
        } => {
            let timing = TimingConfig {
                flash_ms,
                isi_ms,
                ..TimingConfig::default()
            };
            let data = dataset::import_csv(&csv, sample_rate, timing)?;
            write_beside(&out, "import", &RunConfig::default())?;
            dataset::write_dataset(&out, &data)
        }
        Command::Export { data, out } => {
            let ds = dataset::read_dataset(&data)?;
            let mut buf = Vec::new();
            dataset::export_csv(&ds, &mut buf).map_err(|m| AppError::format(&out, m))?;
            write_beside(&out, "export", &RunConfig::default())?;
            std::fs::write(&out, buf).map_err(|e| AppError::io(&out, e))
        }
        Command::Preprocess {
            data,
            out,
            bandpass,
            filter_order,
            causal,
            downsample,
            decimation,
            endpoint,
        } => {
            let mut ds = dataset::read_dataset(&data)?;
            if let Some(edges) = bandpass {
                let spec = FilterSpec {
                    low_hz: edges[0],
                    high_hz: edges[1],
                    order: filter_order,
                    zero_phase: !causal,
                };
                ds = ingest::bandpass_dataset(&ds, &spec)?;
            }
            if let Some(hz) = downsample {
                ds = ingest::downsample_dataset(&ds, hz, decimation.into(), endpoint.into())?;
            }
            write_beside(&out, "preprocess", &RunConfig::default())?;
            dataset::write_dataset(&out, &ds)
        }
        Command::Fit {
            config,
            data,
            out,
            iterations,
            tau,
            shrinkage_ratio,
            less_training,
            draws,
            check_identifiability,
        } => {
            let mut cfg = config.load()?;
            if let Some(n) = iterations {
                cfg.fit.iterations = n;
            }
            if let Some(t) = tau {
                cfg.calibration.tau = Some(t);
            }
            if let Some(g) = draws {
                cfg.predict.draws = g;
            }
            if let [r] = shrinkage_ratio.as_slice() {
                cfg.calibration.ratio = *r;
            }
            let cfg = cfg.resolve()?;
            let ds = less(dataset::read_dataset(&data)?, less_training)?;
            if let Some(w) = pipeline::identifiability_warning(&ds) {
                eprintln!("warning: {w}");
            }
            io::create_dir(&out)?;
            if check_identifiability {
                let report = pipeline::identifiability(&ds);
                if let Some(m) = &report.message {
                    eprintln!("warning: {m}");
                }
                io::write_json(
                    &out.join("identifiability.json"),
                    &serde_json::json!({
                        "rank": report.rank,
                        "rows": report.rows,
                        "columns": report.columns,
                        "full_column_rank": report.full_column_rank,
                    }),
                )?;
            }
            if shrinkage_ratio.len() > 1 {
                for (ratio, cp) in shrinkage_ratio.iter().zip(pipeline::train_grid(&ds, &cfg, &shrinkage_ratio)?) {
                    let dir = out.join(format!("ratio-{ratio}"));
                    io::create_dir(&dir)?;
                    write_model(&dir, &cp)?;
                    let mut c = cfg.clone();
                    c.calibration.ratio = *ratio;
                    io::write_resolved_config(&dir, "fit", &c)?;
                }
                io::write_resolved_config(&out, "fit", &cfg)
            } else {
                let cp = pipeline::train(&ds, &cfg)?;
                write_model(&out, &cp)?;
                io::write_resolved_config(&out, "fit", &cfg)
            }
        }
        Command::Predict {
            config,
            model,
            data,
            out,
            weighting,
            max_sequences,
        } => {
            let mut cfg = config.load()?;
            if let Some(w) = weighting {
                cfg.predict.weighting = w.into();
            }
            if max_sequences.is_some() {
                cfg.predict.max_sequences = max_sequences;
            }
            let cfg = cfg.resolve()?;
            let cp = Checkpoint::read(&model)?;
            let ds = dataset::read_dataset(&data)?;
            let pred = pipeline::predict(&cp, &ds, &cfg.predict)?;
            if pred.degenerate {
                eprintln!(
                    "warning: one posterior draw carries almost all importance weight (ess {:.2})",
                    pred.ess
                );
            }
            io::create_dir(&out)?;
            tables::write_predictions(
                &out.join("predictions.csv"),
                &tables::prediction_rows(&pred.decodings, pred.ess),
            )?;
            tables::write_decoded(&out.join("decoded.csv"), &pred.decodings)?;
            let half: Vec<_> = pred.half.iter().map(|h| (h.character, h.sequence, h.dist)).collect();
            tables::write_half_predictions(&out.join("half-predictions.csv"), &half)?;
            io::write_resolved_config(&out, "predict", &cfg)
        }
        Command::Summarize { config, model, out } => {
            let cfg = config.load()?.resolve()?;
            let cp = Checkpoint::read(&model)?;
            let s = pipeline::summarize(&cp)?;
            io::create_dir(&out)?;
            tables::write_effects(&out.join("effects.csv"), &s.effects, cp.sample_rate)?;
            tables::write_channels(&out.join("channels.csv"), &s.channels, &cp.channel_names)?;
            tables::PlotData::new(&s.effects, &s.channels, &cp.channel_names, cp.sample_rate)
                .write(&out.join("plot-data.json"))?;
            io::write_resolved_config(&out, "summarize", &cfg)
        }
        Command::Evaluate {
            config,
            model,
            data,
            scores,
            out,
            weighting,
        } => {
            let mut cfg = config.load()?;
            if let Some(w) = weighting {
                cfg.predict.weighting = w.into();
            }
            let cfg = cfg.resolve()?;
            let sets = data.iter().map(|p| dataset::read_dataset(p)).collect::<Result<Vec<_>>>()?;
            let ev = match (&model, &scores) {
                (_, Some(path)) => {
                    let [set] = sets.as_slice() else {
                        return Err(AppError::Config("--scores takes exactly one --data set".into()));
                    };
                    pipeline::evaluate_scores(&tables::read_scores(path)?, set)?
                }
                (Some(path), None) => pipeline::evaluate(&Checkpoint::read(path)?, &sets, &cfg.predict)?,
                (None, None) => unreachable!("clap requires --model or --scores"),
            };
            io::create_dir(&out)?;
            tables::write_metrics(&out.join("metrics.csv"), &ev.curve, &ev.utility)?;
            io::write_json(
                &out.join("metrics.json"),
                &serde_json::json!({
                    "accuracy": ev.curve.means(),
                    "utility_bits_per_s": ev.utility,
                    "best_utility": ev.best.map(|b| b.1),
                    "best_n_seq": ev.best.map(|b| b.0),
                    "n_seq_80": ev.n_seq_80,
                }),
            )?;
            io::write_resolved_config(&out, "evaluate", &cfg)
        }
        Command::Sensitivity {
            config,
            train,
            test,
            out,
            ratios,
            less_training,
            iterations,
        } => {
            let mut cfg = config.load()?;
            if let Some(n) = iterations {
                cfg.fit.iterations = n;
            }
            let cfg = cfg.resolve()?;
            let train = less(dataset::read_dataset(&train)?, less_training)?;
            let test = dataset::read_dataset(&test)?;
            let rows = pipeline::sensitivity(&train, &test, &cfg, &ratios)?;
            io::create_dir(&out)?;
            let table: Vec<_> = rows.iter().map(|(r, _)| r.clone()).collect();
            tables::write_sensitivity(&out.join("sensitivity.csv"), &table)?;
            io::write_resolved_config(&out, "sensitivity", &cfg)
        }
        Command::Recovery { truth, model, out } => {
            let text = std::fs::read_to_string(&truth).map_err(|e| AppError::io(&truth, e))?;
            let gt: pipeline::GroundTruth =
                serde_json::from_str(&text).map_err(|e| AppError::format(&truth, e.to_string()))?;
            let cp = Checkpoint::read(&model)?;
            let m = pipeline::recovery(&gt, &cp)?;
            io::create_dir(&out)?;
            io::write_json(&out.join("recovery.json"), &m)?;
            io::write_resolved_config(&out, "recovery", &RunConfig::default())
        }
    }
}

fn write_model(dir: &Path, cp: &Checkpoint) -> Result<()> {
    cp.write(&dir.join("model.json"))?;
    tables::write_trace(&dir.join("trace.csv"), &cp.trace)
}

/// Resolved config for commands whose output is a single file.
fn write_beside(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    io::create_dir(&dir)?;
    io::write_resolved_config(&dir, command, cfg)
}
