use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fewshot_core::config::{EncoderKind, RunConfig, ToySettings};
use fewshot_core::pipeline::{
    cmd_ingest, cmd_report, cmd_run, cmd_split, RESULTS_FILE, TABLE_FILE,
};
use fewshot_core::Error;

/// Episodic few-shot classification: ingest, split, run, report.
#[derive(Parser, Debug)]
#[command(name = "fewshot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a JSON Lines dataset into an embedding store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// `frozen` uses each record's `vector`; `toy` encodes the text.
        #[arg(long, default_value = "frozen")]
        encoder: EncoderKind,
        #[arg(long, default_value_t = 16)]
        toy_dim: usize,
        #[arg(long, default_value_t = 32)]
        toy_token_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Partition classes into train/valid/test and write a split file.
    Split {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train (when applicable) and evaluate one method over all C and seeds.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Merge result CSVs and print the comparison table.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Also write the merged rows as a CSV.
        #[arg(long)]
        merged: Option<PathBuf>,
    },
}

/// Flags mirror configuration-file keys and override them.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    relation_module: Option<String>,
    /// C values, e.g. `2..5` or `2,5`.
    #[arg(long)]
    c_ways: Option<String>,
    #[arg(long)]
    k_shots: Option<String>,
    #[arg(long)]
    q_queries: Option<String>,
    #[arg(long)]
    unlabeled: Option<String>,
    #[arg(long)]
    shot_mode: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    split_file: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        let flags = [
            ("dataset", &self.dataset),
            ("embeddings", &self.embeddings),
            ("encoder", &self.encoder),
            ("method", &self.method),
            ("metric", &self.metric),
            ("relation-module", &self.relation_module),
            ("c-ways", &self.c_ways),
            ("k-shots", &self.k_shots),
            ("q-queries", &self.q_queries),
            ("unlabeled", &self.unlabeled),
            ("shot-mode", &self.shot_mode),
            ("seeds", &self.seeds),
            ("seed", &self.seed),
            ("split", &self.split),
            ("split-file", &self.split_file),
            ("jobs", &self.jobs),
            ("out", &self.out),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Ingest {
            input,
            output,
            encoder,
            toy_dim,
            toy_token_dim,
            seed,
        } => {
            let toy = ToySettings {
                token_dim: toy_token_dim,
                dim: toy_dim,
            };
            let s = cmd_ingest(&input, &output, encoder, toy, seed)?;
            println!(
                "{} records, {} labels, d={} -> {}",
                s.records,
                s.labels,
                s.dim,
                output.display()
            );
        }
        Command::Split { run, output } => {
            let split = cmd_split(&run.resolve()?, &output)?;
            println!(
                "train {} / valid {} / test {} classes -> {}",
                split.train.len(),
                split.valid.len(),
                split.test.len(),
                output.display()
            );
        }
        Command::Run { run } => {
            let out = cmd_run(&run.resolve()?)?;
            print!("{}", out.table);
            println!(
                "wrote {} and {}",
                out.dir.join(RESULTS_FILE).display(),
                out.dir.join(TABLE_FILE).display()
            );
        }
        Command::Report { csv, merged } => {
            let (report, table) = cmd_report(&csv)?;
            if let Some(p) = merged {
                report.save(&p)?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEWSHOT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            log::debug!("{e:?}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
