//! `imputeinr`: train, apply, and inspect INR-based time-series
//! imputation models from the command line.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 checkpoint or schema
//! error, 3 numerics error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use imputeinr::cluster;
use imputeinr::config::{Config, MetricsScale};
use imputeinr::data::{self, TimeSeriesWindow};
use imputeinr::matrix::Matrix;
use imputeinr::model::{effective_partition, Model};
use imputeinr::{checkpoint, eval, gradcheck, svg, synth, train, Error};

#[derive(Parser)]
#[command(
    name = "imputeinr",
    version,
    about = "Multivariate time-series imputation with hypernetwork-predicted INR functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    overrides: Overrides,
}

/// Config layering: defaults, then `--config FILE`, then these flags.
#[derive(Args, Clone)]
struct Overrides {
    /// Key=value config file applied over the defaults
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// RNG seed for initialization and masking
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fraction of observed cells hidden per training step
    #[arg(long, global = true, value_name = "RATE")]
    mask_rate: Option<f64>,

    /// Training epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,

    /// Disable the multi-scale convolutional encoder
    #[arg(long = "no-multiscale", global = true)]
    no_multiscale: bool,

    /// Disable variable clustering (contiguous fallback groups instead)
    #[arg(long = "no-clustering", global = true)]
    no_clustering: bool,

    /// Disable the grouped residual entirely (one group)
    #[arg(long = "no-grouping", global = true)]
    no_grouping: bool,

    /// Units for reported metrics
    #[arg(long = "metrics-scale", global = true, value_enum)]
    metrics_scale: Option<MetricsScaleArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricsScaleArg {
    Raw,
    Standardized,
}

#[derive(Subcommand)]
enum Command {
    /// Fill the missing cells of a CSV using a trained checkpoint
    Impute {
        /// Input CSV (header row of variable names, blank cells missing)
        input: PathBuf,
        /// Trained model checkpoint
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Output CSV with every cell filled
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
        /// Also write an overlay plot of one variable to this SVG file
        #[arg(long, value_name = "FILE")]
        plot: Option<PathBuf>,
        /// Variable name to plot (default: first with missing cells)
        #[arg(long, value_name = "NAME")]
        plot_var: Option<String>,
        /// Zero the wall-clock field in the JSON sidecar
        #[arg(long)]
        no_timing: bool,
    },
    /// Train a model on a CSV and write a checkpoint
    Train {
        /// Training data CSV
        input: PathBuf,
        /// Checkpoint to write
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
        /// Loss curve CSV (epoch, mean loss, mean gradient norm)
        #[arg(long, value_name = "FILE")]
        curve: Option<PathBuf>,
        /// Loss curve plot
        #[arg(long, value_name = "FILE")]
        plot: Option<PathBuf>,
    },
    /// Train and score against the baselines over a grid of mask rates
    Benchmark {
        /// Evaluation data CSV
        input: PathBuf,
        /// Comma-separated mask rates
        #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9")]
        rates: String,
        /// Comma-separated run seeds (one trained model per seed)
        #[arg(long, default_value = "0")]
        seeds: String,
        /// JSON report path
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        /// Summary table CSV path
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        /// Zero the wall-clock field in the JSON report
        #[arg(long)]
        no_timing: bool,
    },
    /// Print the clustering partition a dataset induces
    ClusterInspect {
        /// Data CSV
        input: PathBuf,
        /// Write the JSON here instead of stdout
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
    /// Generate a synthetic dataset CSV
    Synth {
        /// Which generator to run
        #[arg(long, value_enum)]
        kind: SynthKind,
        /// Series length (two-distribution only)
        #[arg(long, default_value_t = 512)]
        len: usize,
        /// Output CSV
        #[arg(short, long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Verify analytic gradients against finite differences
    GradCheck {
        /// Finite difference half-step
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    TwoDistribution,
    TrendSinusoid,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Checkpoint(_) => 2,
        Error::Numerics(_) => 3,
        _ => 1,
    }
}

fn build_config(overrides: &Overrides) -> Result<Config, Error> {
    let mut cfg = Config::default();
    if let Some(path) = &overrides.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(rate) = overrides.mask_rate {
        cfg.mask_rate = rate;
    }
    if let Some(epochs) = overrides.epochs {
        cfg.epochs = epochs;
    }
    if overrides.no_multiscale {
        cfg.multi_scale = false;
    }
    if overrides.no_clustering {
        cfg.clustering = false;
    }
    if overrides.no_grouping {
        cfg.grouping = false;
    }
    if let Some(scale) = overrides.metrics_scale {
        cfg.metrics_scale = match scale {
            MetricsScaleArg::Raw => MetricsScale::Raw,
            MetricsScaleArg::Standardized => MetricsScale::Standardized,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() {
    if let Ok(v) = std::env::var("IMPUTEINR_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, Error> {
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid {what} entry {:?}", p.trim())))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = build_config(&cli.overrides)?;
    match cli.command {
        Command::Impute {
            input,
            checkpoint,
            output,
            plot,
            plot_var,
            no_timing,
        } => cmd_impute(&input, &checkpoint, &output, plot.as_deref(), plot_var, no_timing),
        Command::Train {
            input,
            output,
            curve,
            plot,
        } => cmd_train(&cfg, &input, &output, curve.as_deref(), plot.as_deref()),
        Command::Benchmark {
            input,
            rates,
            seeds,
            json,
            csv,
            no_timing,
        } => cmd_benchmark(
            &cfg,
            &input,
            &rates,
            &seeds,
            json.as_deref(),
            csv.as_deref(),
            no_timing,
        ),
        Command::ClusterInspect { input, json } => cmd_cluster_inspect(&cfg, &input, json.as_deref()),
        Command::Synth { kind, len, output } => cmd_synth(&cfg, kind, len, &output),
        Command::GradCheck { step } => cmd_grad_check(step),
    }
}

/// Impute a series window by window. Windows tile the series at the
/// configured window length; a trailing remainder is covered by one extra
/// window ending at the last timestep, where earlier fills win.
fn impute_series(model: &Model, series: &TimeSeriesWindow) -> Result<(Matrix, Vec<usize>), Error> {
    let t = series.len();
    let wlen = model.cfg.window;
    if t < wlen {
        return Err(Error::WindowTooLarge {
            window: wlen,
            series_len: t,
        });
    }
    let mut starts: Vec<usize> = (0..=t - wlen).step_by(wlen).collect();
    if starts.last().copied().unwrap_or(0) + wlen < t {
        starts.push(t - wlen);
    }

    let mut filled = series.values.clone();
    let mut done = series.mask.clone();
    let mut counts = vec![0usize; series.n_vars()];
    for &s in &starts {
        let w = TimeSeriesWindow::new(
            Matrix::from_fn(series.n_vars(), wlen, |v, i| series.values.get(v, s + i)),
            Matrix::from_fn(series.n_vars(), wlen, |v, i| series.mask.get(v, s + i)),
            series.variable_names.clone(),
        );
        let out = model.impute_window(&w)?;
        for (v, count) in counts.iter_mut().enumerate() {
            for i in 0..wlen {
                if done.get(v, s + i) == 0.0 {
                    filled.set(v, s + i, out.filled.get(v, i));
                    done.set(v, s + i, 1.0);
                    *count += 1;
                }
            }
        }
    }
    Ok((filled, counts))
}

fn cmd_impute(
    input: &Path,
    ckpt: &Path,
    output: &Path,
    plot: Option<&Path>,
    plot_var: Option<String>,
    no_timing: bool,
) -> Result<(), Error> {
    let start = Instant::now();
    let (model, trained_names) = checkpoint::load(ckpt)?;
    let series = data::load_csv(input)?;
    if series.n_vars() != model.n_vars {
        return Err(Error::Checkpoint(format!(
            "input has {} variables, checkpoint was trained on {}",
            series.n_vars(),
            model.n_vars
        )));
    }
    if series.variable_names != trained_names {
        eprintln!(
            "warning: variable names differ from training ({:?} vs {:?})",
            series.variable_names, trained_names
        );
    }

    let (filled, counts) = impute_series(&model, &series)?;
    data::write_csv(output, &series.variable_names, &filled, None)?;

    let report = eval::ImputationReport {
        config: model.cfg.clone(),
        n_vars: series.n_vars(),
        n_timesteps: series.len(),
        n_windows: series.len() / model.cfg.window,
        variable_names: series.variable_names.clone(),
        partition: model.partition.clone(),
        filled_per_variable: counts,
        wall_seconds: if no_timing {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        },
    };
    let sidecar = output.with_extension("json");
    std::fs::write(
        &sidecar,
        serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?,
    )?;

    if let Some(plot_path) = plot {
        let var = match &plot_var {
            Some(name) => series
                .variable_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("no variable named {name:?}")))?,
            None => (0..series.n_vars())
                .find(|&v| (0..series.len()).any(|i| series.mask.get(v, i) == 0.0))
                .unwrap_or(0),
        };
        let observed: Vec<(f64, f64)> = (0..series.len())
            .filter(|&i| series.mask.get(var, i) == 1.0)
            .map(|i| (i as f64, series.values.get(var, i)))
            .collect();
        let imputed: Vec<(f64, f64)> = (0..series.len())
            .map(|i| (i as f64, filled.get(var, i)))
            .collect();
        let chart = svg::line_chart(
            &format!("imputation: {}", series.variable_names[var]),
            "t",
            "value",
            &[
                svg::Series {
                    label: "imputed".into(),
                    points: imputed,
                    markers: false,
                },
                svg::Series {
                    label: "observed".into(),
                    points: observed,
                    markers: true,
                },
            ],
        );
        std::fs::write(plot_path, chart)?;
    }

    println!(
        "imputed {} cells across {} variables -> {}",
        report.filled_per_variable.iter().sum::<usize>(),
        series.n_vars(),
        output.display()
    );
    Ok(())
}

fn cmd_train(
    cfg: &Config,
    input: &Path,
    output: &Path,
    curve: Option<&Path>,
    plot: Option<&Path>,
) -> Result<(), Error> {
    let series = data::load_csv(input)?;
    let (model, report) = train::train(cfg, &series)?;
    checkpoint::save(output, &model, &series.variable_names)?;

    if let Some(curve_path) = curve {
        let mut text = String::from("epoch,mean_loss,mean_grad_norm\n");
        for e in &report.curve {
            text.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.mean_grad_norm));
        }
        std::fs::write(curve_path, text)?;
    }
    if let Some(plot_path) = plot {
        let points: Vec<(f64, f64)> = report
            .curve
            .iter()
            .map(|e| (e.epoch as f64, e.mean_loss))
            .collect();
        let chart = svg::line_chart(
            "training loss",
            "epoch",
            "masked MSE",
            &[svg::Series {
                label: "train".into(),
                points,
                markers: false,
            }],
        );
        std::fs::write(plot_path, chart)?;
    }

    let last = report.curve.last().map(|e| e.mean_loss);
    match last {
        Some(loss) => println!(
            "trained {} epochs over {} windows, final loss {loss:.6} -> {}",
            cfg.epochs,
            report.n_windows,
            output.display()
        ),
        None => println!(
            "wrote initialized model (0 epochs) -> {}",
            output.display()
        ),
    }
    Ok(())
}

fn cmd_benchmark(
    cfg: &Config,
    input: &Path,
    rates: &str,
    seeds: &str,
    json: Option<&Path>,
    csv: Option<&Path>,
    no_timing: bool,
) -> Result<(), Error> {
    let series = data::load_csv(input)?;
    let rates: Vec<f64> = parse_list(rates, "rate")?;
    let seeds: Vec<u64> = parse_list(seeds, "seed")?;
    for &r in &rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Config(format!("mask rate {r} out of [0,1]")));
        }
    }
    let mut report = eval::run_benchmark(cfg, &series, &rates, &seeds)?;
    if no_timing {
        report.wall_seconds = 0.0;
    }

    let table = eval::benchmark_csv(&report);
    if let Some(path) = csv {
        std::fs::write(path, &table)?;
    }
    if let Some(path) = json {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?,
        )?;
    }
    print!("{table}");
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_cluster_inspect(cfg: &Config, input: &Path, json: Option<&Path>) -> Result<(), Error> {
    let series = data::load_csv(input)?;
    let partition = effective_partition(cfg, &series);
    let (std_series, _) = data::standardize(&series);
    let similarity = cluster::similarity_matrix(&std_series);
    let n = series.n_vars();
    let sim_rows: Vec<Vec<f64>> = (0..n).map(|i| similarity.row(i).to_vec()).collect();

    let doc = serde_json::json!({
        "config": cfg,
        "variable_names": series.variable_names,
        "k": partition.k,
        "assignment": partition.assignment,
        "pi": partition.pi,
        "group_sizes": partition.group_sizes(),
        "similarity": sim_rows,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
    match json {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_synth(cfg: &Config, kind: SynthKind, len: usize, output: &Path) -> Result<(), Error> {
    let series = match kind {
        SynthKind::TwoDistribution => synth::gen_two_distribution(cfg.seed, len),
        SynthKind::TrendSinusoid => synth::gen_trend_sinusoid(cfg.seed),
    };
    data::write_csv(output, &series.variable_names, &series.values, Some(&series.mask))?;
    println!(
        "wrote {} variables x {} steps -> {}",
        series.n_vars(),
        series.len(),
        output.display()
    );
    Ok(())
}

fn cmd_grad_check(step: f64) -> Result<(), Error> {
    let report = gradcheck::run_default(step)?;
    println!(
        "max relative error {:.3e} over {} parameters (worst tensor: {})",
        report.max_rel_err, report.n_checked, report.worst_tensor
    );
    if report.max_rel_err >= 1e-4 {
        return Err(Error::Numerics(format!(
            "gradient check failed: {:.3e} >= 1e-4",
            report.max_rel_err
        )));
    }
    Ok(())
}
