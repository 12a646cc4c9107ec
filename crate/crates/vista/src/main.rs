//! `vista` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use vista::chart::{self, NoiseSpec};
use vista::data;
use vista::report::{self, ReportFormat};
use vista::runner::{self, ExperimentConfig, RunSummary, NOISE_PRESET};
use vista::stockwell;

#[derive(Parser)]
#[command(name = "vista", version, about = "Multimodal stock-forecasting benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch a close-price series from a CSV-over-HTTP quote endpoint into
    /// the local cache.
    Fetch {
        #[arg(long)]
        ticker: String,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        #[arg(long)]
        endpoint: String,
        #[arg(long, default_value = "cache")]
        cache_dir: PathBuf,
    },
    /// Execute (or continue) an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Exit nonzero when any task failed.
        #[arg(long)]
        strict: bool,
        /// Replace the config's noise coefficients with the ablation preset.
        #[arg(long)]
        noise_preset: bool,
    },
    /// Re-run only the pending/failed tasks of an interrupted run.
    Resume {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Aggregate a records file into report artifacts.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time-frequency heatmap of a price series (first differenced) or of
    /// seeded uniform noise.
    Stockwell {
        /// Quote CSV whose Close column is analyzed.
        #[arg(long, conflicts_with = "noise_len")]
        input: Option<PathBuf>,
        /// Analyze synthetic uniform noise of this length instead.
        #[arg(long)]
        noise_len: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the chart for one input window (debugging aid).
    Render {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        ticker: String,
        #[arg(long)]
        start: usize,
        #[arg(long, default_value_t = 100)]
        t: usize,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "charts")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn print_summary(summary: &RunSummary) {
    println!(
        "tasks: {} ({} executed, {} skipped); done {}, failed {}; model calls: {}",
        summary.total,
        summary.executed,
        summary.skipped,
        summary.done,
        summary.failed,
        summary.model_calls
    );
    println!("manifest: {}", summary.manifest_path.display());
    println!("records:  {}", summary.records_path.display());
}

fn summary_exit(summary: &RunSummary, strict: bool) -> ExitCode {
    if strict && summary.failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match command {
        Command::Fetch {
            ticker,
            from,
            to,
            endpoint,
            cache_dir,
        } => {
            let source = data::RemoteSource::new(endpoint, cache_dir);
            let series = source.fetch(&ticker, from, to)?;
            println!(
                "{}: {} rows ({} dropped), {} .. {}",
                series.ticker,
                series.len(),
                series.dropped_rows,
                series.dates.first().unwrap(),
                series.dates.last().unwrap()
            );
            println!("cached: {}", source.cache_path(&series.ticker, from, to).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            strict,
            noise_preset,
        } => {
            let mut config = ExperimentConfig::load(config)?;
            if noise_preset {
                config.noise_coefficients = NOISE_PRESET.to_vec();
            }
            let summary = runner::run(&config)?;
            print_summary(&summary);
            Ok(summary_exit(&summary, strict))
        }
        Command::Resume { manifest, strict } => {
            let summary = runner::resume(manifest)?;
            print_summary(&summary);
            Ok(summary_exit(&summary, strict))
        }
        Command::Report {
            records,
            format,
            out,
        } => {
            let (records, bad) = report::read_records(&records)?;
            if bad > 0 {
                eprintln!("warning: skipped {bad} unparseable record line(s)");
            }
            let table = report::aggregate(
                &records,
                &[
                    report::GroupField::ModelId,
                    report::GroupField::Mode,
                    report::GroupField::Noise,
                    report::GroupField::Ticker,
                ],
            )?;
            print!("{}", report::render_table(&table, format));
            let written = report::write_reports(&out, &records)?;
            for path in written {
                eprintln!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stockwell {
            input,
            noise_len,
            seed,
            out,
        } => {
            let signal = match (input, noise_len) {
                (Some(csv), None) => {
                    let series = data::load_csv(
                        &csv,
                        "series",
                        NaiveDate::from_ymd_opt(1900, 1, 1).unwrap(),
                        NaiveDate::from_ymd_opt(2100, 1, 1).unwrap(),
                    )?;
                    data::backward_difference(&series.closes)?
                }
                (None, Some(n)) => stockwell::noise_reference(n, seed),
                _ => return Err("exactly one of --input and --noise-len is required".into()),
            };
            let spec = stockwell::s_transform(&signal)?;
            stockwell::export_heatmap(&spec, &out)?;
            println!(
                "wrote {} ({} freq rows x {} samples)",
                out.display(),
                spec.n_freq,
                spec.n_time
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Render {
            csv,
            ticker,
            start,
            t,
            noise,
            seed,
            out_dir,
        } => {
            let series = data::load_csv(
                &csv,
                &ticker,
                NaiveDate::from_ymd_opt(1900, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2100, 1, 1).unwrap(),
            )?;
            if start + t > series.len() {
                return Err(format!(
                    "window [{start}, {}) exceeds series length {}",
                    start + t,
                    series.len()
                )
                .into());
            }
            let ns = data::minmax_normalize(&series.closes[start..start + t])?;
            let mut img = chart::render_line_chart(&ns.values, chart::DEFAULT_WIDTH, chart::DEFAULT_HEIGHT)?;
            img.meta.segment = format!("{ticker}_{start}");
            let mut name = format!("{ticker}_{start}");
            if let Some(density) = noise {
                img = chart::inject_salt_pepper(
                    &img,
                    &NoiseSpec {
                        density,
                        seed,
                        ..NoiseSpec::default()
                    },
                )?;
                name.push_str(&format!("_noise{density:.3}"));
            }
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join(format!("{name}.png"));
            std::fs::write(&path, chart::encode_png(&img)?)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
