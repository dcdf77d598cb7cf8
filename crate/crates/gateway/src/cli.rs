use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::{Overrides, PipelineConfig, ENV_CONFIG, ENV_OUT, ENV_PORT, ENV_SEED};
use crate::error::{GatewayError, Result};
use crate::service::{serve, ServiceState};
use crate::{api, stages};

#[derive(Debug, Parser)]
#[command(name = "intentkg", version, about = "Intent knowledge graph pipeline and service")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = ENV_CONFIG)]
    pub config: Option<PathBuf>,
    /// Seed for simulation and training; overrides the file.
    #[arg(long, global = true, env = ENV_SEED)]
    pub seed: Option<u64>,
    /// Output directory for artifacts; overrides the file.
    #[arg(long, global = true, env = ENV_OUT)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world, its event log, query corpus and lexicon.
    Simulate,
    /// Build intents, functions, products and sememes from the corpus.
    BuildKg,
    /// Mine isA and Consequent relations into the graph.
    MineRelations,
    /// Train the item-intent matcher.
    TrainMatcher,
    /// Train the plain and graph-fused next-intent predictors.
    TrainPredictor,
    /// Score every model and baseline on held-out events.
    Evaluate,
    /// Serve predictions over HTTP.
    Serve {
        #[arg(long, env = ENV_PORT)]
        port: Option<u16>,
    },
    /// Check a graph file; prints the report as JSON.
    Validate {
        /// Graph file; the configured graph when absent.
        path: Option<PathBuf>,
    },
    /// Render the HTTP API document.
    #[command(hide = true)]
    ApiDoc {
        /// Write here instead of printing.
        #[arg(long)]
        write: Option<PathBuf>,
    },
}

/// Parse `args` and run the command. Help and version go to stdout and
/// succeed; any other usage error is a config error.
pub fn main<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid usage");
            return Err(GatewayError::config(line.trim_start_matches("error: ")));
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let port = match &cli.command {
        Command::Serve { port } => *port,
        _ => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        port,
    };
    if let Command::ApiDoc { write } = &cli.command {
        let doc = api::render_markdown();
        return match write {
            Some(p) => std::fs::write(p, doc).map_err(|e| GatewayError::runtime(format!("{}: {e}", p.display()))),
            None => {
                print!("{doc}");
                Ok(())
            }
        };
    }
    let c = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    let summary = match cli.command {
        Command::Simulate => stages::simulate(&c)?,
        Command::BuildKg => stages::build_kg(&c)?,
        Command::MineRelations => stages::mine_relations(&c)?,
        Command::TrainMatcher => stages::train_matcher_stage(&c)?,
        Command::TrainPredictor => stages::train_predictor_stage(&c)?,
        Command::Evaluate => stages::evaluate_stage(&c)?.1,
        Command::Serve { .. } => {
            let state = ServiceState::load(&c)?;
            return serve(state, &c.service.host, c.service.port);
        }
        Command::Validate { path } => {
            let path = path.unwrap_or_else(|| c.graph_path());
            let report = stages::validate(&path)?;
            println!("{}", serde_json::to_string(&report).map_err(GatewayError::runtime)?);
            if !report.is_clean() {
                return Err(GatewayError::runtime(format!(
                    "{}: {} findings",
                    path.display(),
                    report.findings.len()
                )));
            }
            return Ok(());
        }
        Command::ApiDoc { .. } => unreachable!("handled above"),
    };
    println!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_are_config_errors() {
        let err = main(["intentkg", "frobnicate"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!err.to_line().contains('\n'));
        let err = main(["intentkg", "--seed", "x", "simulate"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn flags_parse_anywhere() {
        let cli = Cli::try_parse_from(["intentkg", "serve", "--port", "9", "--seed", "3"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        assert!(matches!(cli.command, Command::Serve { port: Some(9) }));
    }
}
