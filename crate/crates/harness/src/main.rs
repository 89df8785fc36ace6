use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rpr_harness::commands;
use rpr_harness::config::Config;
use rpr_harness::Result;

#[derive(Parser)]
#[command(name = "rpr", version, about = "Relative pose regression localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self, extra: Vec<String>) -> Result<Config> {
        let mut overrides = self.overrides.clone();
        if let Some(o) = &self.out {
            overrides.push(format!("output.dir={}", toml_str(o)));
        }
        overrides.extend(extra);
        Config::load(self.config.as_deref(), &overrides)
    }
}

fn toml_str(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Train the regression layers on pairs from `data.train_root`.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Localize `data.query_root` against `data.map_root` and report errors.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        top_n: Option<usize>,
        /// `corr` or `gt`.
        #[arg(long)]
        selection: Option<String>,
        /// Use ground-truth relative poses instead of the network.
        #[arg(long)]
        oracle: bool,
    },
    /// Localize one query image against a retrieval index.
    Localize {
        #[command(flatten)]
        common: Common,
        /// Query RGB image.
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Build a retrieval index over `data.map_root`.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        /// Index file (default `eval.index` or `<out>/map.idx`).
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// List training pairs of `data.train_root` as CSV.
    Pairs {
        #[command(flatten)]
        common: Common,
        /// CSV file (default `<out>/pairs.csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Overlap ratio against rotation error for every pair.
    OverlapReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use ground-truth relative poses instead of the network.
        #[arg(long)]
        oracle: bool,
    },
    /// Render an overlap CSV as an SVG scatter plot.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Draw flagged low-overlap rows at their measured error.
        #[arg(long)]
        keep_flagged: bool,
    },
}

fn opt(key: &str, v: Option<String>) -> Vec<String> {
    v.map(|v| vec![format!("{key}={v}")]).unwrap_or_default()
}

fn path_opt(key: &str, v: &Option<PathBuf>) -> Vec<String> {
    opt(key, v.as_deref().map(toml_str))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            commands::cmd_train(&common.load(vec![])?)?;
        }
        Command::Evaluate {
            common,
            checkpoint,
            top_n,
            selection,
            oracle,
        } => {
            let mut extra = path_opt("eval.checkpoint", &checkpoint);
            extra.extend(opt("eval.top_n", top_n.map(|n| n.to_string())));
            extra.extend(opt("eval.selection", selection.map(|s| format!("{s:?}"))));
            commands::cmd_evaluate(&common.load(extra)?, oracle)?;
        }
        Command::Localize {
            common,
            query,
            checkpoint,
            index,
            top_n,
        } => {
            let mut extra = path_opt("eval.checkpoint", &checkpoint);
            extra.extend(path_opt("eval.index", &index));
            extra.extend(opt("eval.top_n", top_n.map(|n| n.to_string())));
            commands::cmd_localize(&common.load(extra)?, &query)?;
        }
        Command::BuildIndex { common, index } => {
            commands::cmd_build_index(&common.load(vec![])?, index.as_deref())?;
        }
        Command::Pairs { common, csv } => {
            commands::cmd_pairs(&common.load(vec![])?, csv.as_deref())?;
        }
        Command::OverlapReport {
            common,
            checkpoint,
            oracle,
        } => {
            let extra = path_opt("eval.checkpoint", &checkpoint);
            commands::cmd_overlap_report(&common.load(extra)?, oracle)?;
        }
        Command::Plot {
            input,
            output,
            keep_flagged,
        } => commands::cmd_plot(&input, &output, !keep_flagged)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
