use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use covquant::experiment::{check_outcomes, run_experiment, ScenarioConfig};
use covquant::plot::{render_plot, PlotSpec};

#[derive(Parser)]
#[command(name = "covquant", version, about = "Spatial covariance codebook experiments")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV files.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and COVQUANT_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment and assert its expected trends.
    Check {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a result CSV as an SVG line plot.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        y: Option<String>,
        /// Column to split series by; repeatable.
        #[arg(long)]
        group: Vec<String>,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        title: Option<String>,
        /// Defaults to the CSV path with an .svg extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn run(config: &Path, out: Option<&Path>, check: bool) -> covquant::Result<bool> {
    let cfg = ScenarioConfig::load(config)?;
    let dir = cfg.resolve_output_dir(out);
    let output = run_experiment(&cfg)?;
    for p in output.write(&dir)? {
        println!("wrote {}", p.display());
    }
    if !check {
        return Ok(true);
    }
    let outcomes = check_outcomes(&output);
    for o in &outcomes {
        println!("{} {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run { config, out } => run(config, out.as_deref(), false),
        Command::Check { config, out } => run(config, out.as_deref(), true),
        Command::Plot {
            csv,
            x,
            y,
            group,
            log_y,
            title,
            output,
        } => {
            let spec = match (x, y) {
                (Some(x), Some(y)) => Some(PlotSpec {
                    x: x.clone(),
                    y: y.clone(),
                    group: group.clone(),
                    log_y: *log_y,
                    title: title.clone(),
                }),
                (None, None) => None,
                _ => {
                    eprintln!("error: --x and --y must be given together");
                    return ExitCode::from(2);
                }
            };
            let out = output.clone().unwrap_or_else(|| csv.with_extension("svg"));
            render_plot(csv, spec.as_ref(), &out).map(|()| {
                println!("wrote {}", out.display());
                true
            })
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
