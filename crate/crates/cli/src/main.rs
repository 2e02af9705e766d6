mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "granlab", version, about = "Train recurrent adversarial generators and compare them with GAM battles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// key=value config file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing
    #[arg(long, default_value = "granlab-out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a generator/discriminator pair
    Train {
        #[command(flatten)]
        common: Common,
        /// ring, shapes or mnist:PATH (an IDX image file)
        #[arg(long)]
        dataset: Option<String>,
        /// Number of canvas updates T
        #[arg(long)]
        steps: Option<usize>,
        /// shared or per-step
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr_d: Option<f64>,
        #[arg(long)]
        lr_g: Option<f64>,
        /// always or conditional
        #[arg(long)]
        policy: Option<String>,
    },
    /// Draw samples and per-step canvases from a checkpoint
    Sample {
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Battle two checkpoints by swapping their discriminators
    Battle {
        checkpoint1: PathBuf,
        checkpoint2: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Dataset to take train/test examples from (default: the first checkpoint's)
        #[arg(long)]
        dataset: Option<String>,
        /// Samples per generator (default: test-set size)
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Error rate of a checkpoint's discriminator on a sample file (PGM/PPM stack or points CSV)
    CrossEval {
        checkpoint: PathBuf,
        samples: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a self-check suite: gradcheck, convoracle or gam
    Verify {
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            common,
            dataset,
            steps,
            noise,
            iters,
            lr_d,
            lr_g,
            policy,
        } => {
            let mut flags = granlab::kv::KvMap::new();
            let mut put = |k: &str, v: Option<String>| {
                if let Some(v) = v {
                    flags.set(k, v);
                }
            };
            put("dataset", dataset);
            put("steps", steps.map(|v| v.to_string()));
            put("noise", noise);
            put("iterations", iters.map(|v| v.to_string()));
            put("lr_d", lr_d.map(|v| v.to_string()));
            put("lr_g", lr_g.map(|v| v.to_string()));
            put("policy", policy);
            commands::train(&common, flags)
        }
        Command::Sample {
            checkpoint,
            common,
            count,
        } => commands::sample(&checkpoint, &common, count),
        Command::Battle {
            checkpoint1,
            checkpoint2,
            common,
            dataset,
            n,
            delta,
        } => {
            let mut flags = granlab::kv::KvMap::new();
            if let Some(d) = dataset {
                flags.set("dataset", d);
            }
            if let Some(n) = n {
                flags.set("n", n);
            }
            if let Some(d) = delta {
                flags.set("delta", d);
            }
            commands::battle(&checkpoint1, &checkpoint2, &common, flags)
        }
        Command::CrossEval {
            checkpoint,
            samples,
            common,
        } => commands::cross_eval(&checkpoint, &samples, &common),
        Command::Verify { suite, seed } => commands::verify(&suite, seed.unwrap_or(0)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("granlab: {e}");
            // Configuration mistakes are usage errors, like a bad flag.
            if matches!(e, granlab::Error::Config(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
