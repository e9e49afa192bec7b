use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maxeig::cli::{self, RunOptions};
use maxeig::config::ScaleChoice;
use maxeig::selftest;

#[derive(Parser)]
#[command(
    name = "maxeig",
    version,
    about = "Max-value information gain experimental design"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Desk-scale run sizes (default).
    #[arg(long, conflicts_with = "paper")]
    desk: bool,
    /// Paper-scale run sizes.
    #[arg(long)]
    paper: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            config: self.config.clone(),
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            scale: if self.paper {
                ScaleChoice::Paper
            } else {
                ScaleChoice::Desk
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train designs and critic jointly.
    TrainDesigns(Common),
    /// Write a baseline design file (`random`, `random:<sigma>`, `ucb:<lambda>`).
    MakeBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Estimate the bound of a design file with a freshly trained critic.
    EstimateEig {
        #[command(flatten)]
        common: Common,
        designs: PathBuf,
    },
    /// Simulated deployment metrics for design files.
    DeployEval {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        designs: Vec<PathBuf>,
    },
    /// Merge metrics files into one table.
    Report {
        #[arg(long, default_value = "run")]
        out: PathBuf,
        metrics: Vec<PathBuf>,
    },
    /// SVG scatter of a design file.
    PlotDesigns {
        designs: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Train, baselines, bound estimates, deployment and report in one go.
    Pipeline(Common),
    /// Run the property suite.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::TrainDesigns(c) => cli::cmd_train_designs(&c.options()),
        Command::MakeBaseline { common, method } => {
            cli::cmd_make_baseline(&common.options(), method)
        }
        Command::EstimateEig { common, designs } => {
            cli::cmd_estimate_eig(&common.options(), designs)
        }
        Command::DeployEval { common, designs } => cli::cmd_deploy_eval(&common.options(), designs),
        Command::Report { out, metrics } => cli::cmd_report(out, metrics),
        Command::PlotDesigns { designs, svg } => cli::cmd_plot_designs(designs, svg.as_deref()),
        Command::Pipeline(c) => cli::cmd_pipeline(&c.options()),
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} ({:.1}s): {}", c.name, c.seconds, c.detail);
            }
            return if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
