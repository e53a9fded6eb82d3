use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trajstyle::pipeline::{Run, RunConfig};
use trajstyle::{Error, ErrorClass, Exec};

#[derive(Parser)]
#[command(name = "trajstyle", version, about = "Trajectory style transfer for sim-to-real policy adaptation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration JSON, or the name of a built-in profile (full, smoke).
    #[arg(long)]
    config: String,
    /// Override the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate source and content trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of source trajectories.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Generate surrogate target trajectories.
    GenTarget {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the VAE on source windows.
    TrainVae {
        #[command(flatten)]
        common: Common,
    },
    /// Train one VAE per latent size and KL weight and tabulate the final losses.
    SweepVae {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "32,64,130")]
        latent: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        beta: Vec<f64>,
    },
    /// Distill the scripted expert into the policy network.
    DistillExpert {
        #[command(flatten)]
        common: Common,
    },
    /// Match content windows to style windows in latent space.
    Pair {
        #[command(flatten)]
        common: Common,
    },
    /// Build the adapted datasets.
    Transfer {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune the expert on the adapted datasets.
    Adapt {
        #[command(flatten)]
        common: Common,
    },
    /// Roll out every strategy in the target domain.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Comparison tables, statistics and plot data.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Content/style trade-off over the ratio grid.
    SweepWeights {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every backward pass.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Every stage from simulation to the report.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Print a built-in profile as JSON.
    PrintConfig {
        #[arg(long, default_value = "full")]
        profile: String,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let path = PathBuf::from(&c.config);
    let mut cfg = if path.exists() {
        RunConfig::load(&path).map_err(|e| Failure::Usage(e.to_string()))?
    } else {
        RunConfig::profile(&c.config).map_err(|_| Failure::Usage(format!("no config file or built-in profile named '{}'", c.config)))?
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn exec_for(jobs: Option<usize>) -> Result<Exec, Failure> {
    match jobs {
        Some(0) => Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(1) => Ok(Exec::Sequential),
        Some(k) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| Failure::Usage(format!("cannot start {k} workers: {e}")))?;
            #[cfg(not(feature = "parallel"))]
            log::warn!("built without parallel support; ignoring --jobs {k}");
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::Parallel),
    }
}

fn open(c: &Common, edit: impl FnOnce(&mut RunConfig)) -> Result<Run, Failure> {
    let mut cfg = load_config(c)?;
    edit(&mut cfg);
    let exec = exec_for(c.jobs)?;
    Run::new(&c.out, cfg, exec).map_err(|e| match e.class() {
        ErrorClass::Usage => Failure::Usage(e.to_string()),
        _ => Failure::Lib(e),
    })
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::PrintConfig { profile } => {
            let cfg = RunConfig::profile(&profile).map_err(|e| Failure::Usage(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
        }
        Cmd::Simulate { common, count } => {
            let mut run = open(&common, |c| {
                if let Some(n) = count {
                    c.data.source_count = n;
                }
            })?;
            run.simulate()?;
            println!("source and content trajectories written to {}", run.path("simulate").display());
        }
        Cmd::GenTarget { common, count } => {
            let mut run = open(&common, |c| {
                if let Some(n) = count {
                    c.data.target_count = n;
                }
            })?;
            run.gen_target()?;
            println!("target trajectories written to {}", run.path("gen-target").display());
        }
        Cmd::TrainVae { common } => {
            let mut run = open(&common, |_| {})?;
            let hist = run.train_vae()?;
            if let Some(l) = hist.last() {
                println!("epoch {}: recon {:.4} kl {:.4} total {:.4}", l.epoch, l.recon, l.kl, l.total);
            }
        }
        Cmd::SweepVae { common, latent, beta } => {
            let mut run = open(&common, |_| {})?;
            for r in run.sweep_vae(&latent, &beta)? {
                println!("latent {:4} beta {:6} recon {:.4} kl {:.4} total {:.4}", r.latent_dim, r.beta, r.recon, r.kl, r.total);
            }
        }
        Cmd::DistillExpert { common } => {
            let mut run = open(&common, |_| {})?;
            let r = run.distill_expert()?;
            println!("expert distilled: validation rms {:.4} on {} windows", r.val_rms, r.val_windows);
        }
        Cmd::Pair { common } => {
            let mut run = open(&common, |_| {})?;
            let p = run.pair()?;
            println!("{} pairs, style coverage {:.1}%, gini {:.3}", p.pairs.len(), 100.0 * p.coverage, p.gini);
        }
        Cmd::Transfer { common } => {
            let mut run = open(&common, |_| {})?;
            for (s, n) in run.transfer()? {
                println!("{s}: {n} adapted windows");
            }
        }
        Cmd::Adapt { common } => {
            let mut run = open(&common, |_| {})?;
            for (s, h) in run.adapt()? {
                if let Some(e) = h.last() {
                    println!("{s}: train {:.5} val {:?}", e.train, e.val);
                }
            }
        }
        Cmd::Evaluate { common } => {
            let mut run = open(&common, |_| {})?;
            let rows = run.evaluate()?;
            println!("{} episodes evaluated", rows.len());
        }
        Cmd::Report { common } => {
            let mut run = open(&common, |_| {})?;
            print!("{}", run.report()?);
        }
        Cmd::SweepWeights { common } => {
            let mut run = open(&common, |_| {})?;
            println!("ratio,mean_content,mean_style");
            for r in run.sweep_weights()? {
                println!("{},{:.6e},{:.6e}", r.ratio, r.mean_content, r.mean_style);
            }
        }
        Cmd::GradCheck { common, trials, tol } => {
            let mut run = open(&common, |_| {})?;
            let res = run.grad_check(trials, tol)?;
            let mut failed = Vec::new();
            for r in &res {
                println!("{:18} {}/{} max rel error {:.2e}", r.op, r.passed, r.trials, r.max_rel_error);
                if !r.ok() {
                    failed.push(r.op.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Check(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Cmd::Run { common } => {
            let mut run = open(&common, |_| {})?;
            print!("{}", run.run_all()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
