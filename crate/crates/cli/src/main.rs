use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpgen_cli::commands;
use dpgen_cli::config::{ExperimentConfig, FedRunConfig};
use dpgen_cli::service::{serve, ServiceConfig};

#[derive(Parser)]
#[command(name = "dpgen", version, about = "Differentially private data generation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the experiment settings come from.
#[derive(Args, Clone)]
struct Base {
    /// Experiment configuration (JSON). Without it the MNIST preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// MNIST directory for the preset.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Generator for the preset: augm, vaegm, none or public.
    #[arg(long, default_value = "augm")]
    generator: String,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// DP-SGD epochs of the generator.
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Base {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = commands::base_config(self.config.as_deref(), &self.data_dir, &self.generator, self.epsilon, self.delta)?;
        if let Some(e) = self.epochs {
            cfg.dp_sgd.epochs = e;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Privacy spent by T steps of the subsampled Gaussian mechanism.
    Accountant {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        steps: u64,
        #[arg(long, conflicts_with = "epsilon")]
        delta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Full pipeline: generator, classifier, configured attacks.
    Run(Base),
    /// Private autoencoder; writes the encoder only.
    TrainAugm(Base),
    /// One private VAE per class.
    TrainVaegm(Base),
    /// Encode public rows or sample a saved VAE ensemble.
    Generate {
        #[command(flatten)]
        base: Base,
        #[arg(long)]
        model: PathBuf,
        /// augm or vaegm.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 600)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classifier on a saved dataset, scored on the held-out split.
    TrainClassifier {
        #[command(flatten)]
        base: Base,
        #[arg(long)]
        data: PathBuf,
        /// Encoder applied to raw rows before the classifier.
        #[arg(long)]
        transform: Option<PathBuf>,
    },
    /// Privacy attacks against the configured pipeline.
    Attack {
        #[command(subcommand)]
        kind: AttackKind,
    },
    /// Federated training simulation.
    Fedsim {
        #[arg(long)]
        config: PathBuf,
    },
    /// One run per privacy budget.
    Sweep {
        #[command(flatten)]
        base: Base,
        /// Only mnist is built in; other datasets need --config.
        #[arg(long, default_value = "mnist")]
        dataset: String,
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
    },
    /// Local train/predict service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Reject training on raw records.
        #[arg(long)]
        enforce: bool,
    },
}

#[derive(Subcommand)]
enum AttackKind {
    Membership(Base),
    Inversion {
        #[command(flatten)]
        base: Base,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        step_size: f64,
    },
}

fn execute(cli: Cli) -> anyhow::Result<Option<serde_json::Value>> {
    let value = match cli.command {
        Command::Accountant { q, sigma, steps, delta, epsilon } => serde_json::to_value(commands::accountant(q, sigma, steps, delta, epsilon)?)?,
        Command::Run(b) => commands::run(&b.resolve()?)?,
        Command::TrainAugm(b) => commands::train_augm_cmd(&b.resolve()?)?,
        Command::TrainVaegm(b) => {
            let b = if b.config.is_none() && b.generator == "augm" { Base { generator: "vaegm".into(), ..b } } else { b };
            commands::train_vaegm_cmd(&b.resolve()?)?
        }
        Command::Generate { base, model, kind, samples_per_class, seed } => commands::generate_cmd(&base.resolve()?, &model, &kind, samples_per_class, seed)?,
        Command::TrainClassifier { base, data, transform } => commands::train_classifier_cmd(&base.resolve()?, &data, transform.as_deref())?,
        Command::Attack { kind: AttackKind::Membership(b) } => commands::attack_membership_cmd(&b.resolve()?)?,
        Command::Attack { kind: AttackKind::Inversion { base, steps, step_size } } => commands::attack_inversion_cmd(&base.resolve()?, steps, step_size)?,
        Command::Fedsim { config } => commands::fedsim_cmd(&FedRunConfig::load(config)?)?,
        Command::Sweep { base, dataset, epsilons } => {
            if dataset != "mnist" && base.config.is_none() {
                anyhow::bail!("dataset {dataset:?} needs --config");
            }
            commands::sweep_cmd(&base.resolve()?, &epsilons)?
        }
        Command::Serve { addr, runs_dir, enforce } => {
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            rt.block_on(serve(&addr, ServiceConfig { runs_dir, enforce_privacy: enforce }))?;
            return Ok(None);
        }
    };
    Ok(Some(value))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(Some(v)) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("serializable"));
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
