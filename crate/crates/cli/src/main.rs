use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nyssl_cli::commands::{self, GenerateOptions, Generator, InterpretOptions};
use nyssl_cli::config::RunConfig;
use nyssl_cli::{init_threads, CliResult};

#[derive(Parser)]
#[command(name = "nyssl", version, about = "Nyström kernel self-supervised learning")]
struct Cli {
    /// Worker threads; falls back to NYSSL_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parent directory for run outputs, replacing `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the run and split seeds in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> CliResult<RunConfig> {
        Ok(RunConfig::load(&self.config)?.with_overrides(self.out.as_deref(), self.seed))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset as CSV.
    Generate {
        #[arg(value_enum)]
        kind: Generator,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Choose landmarks and write them with the run manifest.
    SelectLandmarks(RunArgs),
    /// Train a model and write it with its report and spectrum.
    Train(RunArgs),
    /// Embed a CSV dataset and write the embeddings as NYSB.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Fit a linear probe on the training embeddings and score the test rows.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label_fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Landmark ranking, class coverage, influence and concept scores.
    Interpret {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        kappa: bool,
        /// Data row whose landmark influence is reported.
        #[arg(long)]
        influence: Option<usize>,
        /// Label name that defines the concept.
        #[arg(long)]
        concept: Option<String>,
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Compute landmark embeddings for concept alignment without the bias.
        #[arg(long)]
        exclude_gamma: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random search over regulariser, temperature and learning rate.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        parallel: bool,
    },
    /// Summarise a finished run directory.
    Report { run_dir: PathBuf },
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Generate { kind, n, d, classes, separation, noise, seed, output } => {
            let opts = GenerateOptions { kind, n, d, classes, separation, noise, seed };
            let ds = commands::cmd_generate(&opts, &output)?;
            println!("wrote {} rows x {} features to {}", ds.n(), ds.d(), output.display());
        }
        Command::SelectLandmarks(args) => {
            let cfg = args.load()?;
            let lm = commands::cmd_select_landmarks(&cfg)?;
            println!("selected {} landmarks into {}", lm.indices.len(), cfg.run_dir().display());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = commands::cmd_train(&cfg)?;
            let r = &out.report;
            println!(
                "trained {} epochs: initial loss {:.6}, best loss {:.6} at epoch {}, stop {:?}",
                r.epochs.len(),
                r.initial_loss.unwrap_or(f64::NAN),
                r.best_loss.unwrap_or(f64::NAN),
                r.best_epoch.map_or(-1, |e| e as i64),
                r.stop_reason
            );
            println!("outputs in {}", out.run_dir.display());
        }
        Command::Embed { model, data, output } => {
            let (n, h) = commands::cmd_embed(&model, &data, &output)?;
            println!("wrote {n} x {h} embeddings to {}", output.display());
        }
        Command::Probe { model, data, label_fraction, seed, output } => {
            let r = commands::cmd_probe(&model, &data, label_fraction, seed, output.as_deref())?;
            println!(
                "accuracy {:.4}  balanced accuracy {:.4}  labels used {}",
                r.accuracy, r.balanced_accuracy, r.n_labeled_used
            );
        }
        Command::Interpret { model, data, kappa, influence, concept, top, seed, exclude_gamma, out } => {
            let opts = InterpretOptions { kappa, influence, concept, top, out, seed, exclude_gamma };
            let o = commands::cmd_interpret(&model, &data, &opts)?;
            if let Some(k) = o.kappa {
                println!("kappa {k}");
            }
            for r in &o.influence {
                println!("landmark {} iota {:.6e}", r.landmark_id, r.iota);
            }
            if let Some(c) = &o.concept {
                println!(
                    "concept {} train accuracy {:.4} holdout accuracy {:.4}",
                    c.name,
                    c.train_accuracy,
                    c.holdout_accuracy.unwrap_or(f64::NAN)
                );
            }
            if let Some(p) = &o.profile {
                println!("psi_{} = {:.6e}", p.n, p.psi);
            }
            println!("outputs in {}", o.out_dir.display());
        }
        Command::Sweep { run, trials, parallel } => {
            let cfg = run.load()?;
            let o = commands::cmd_sweep(&cfg, trials, parallel)?;
            let best = &o.trials[o.best_trial];
            println!(
                "best trial {} {} {:.4} (lambda {:e}, tau {:e}, lr {:e})",
                best.trial, o.metric, best.score, best.lambda, best.tau, best.lr
            );
            println!("best config in {}", cfg.run_dir().join(commands::BEST_CONFIG_FILE).display());
        }
        Command::Report { run_dir } => {
            let r = commands::cmd_report(Path::new(&run_dir))?;
            println!("{}", serde_json::to_string_pretty(&r).expect("reports always serialise"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
