use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gslift::cli::{self, ReconstructInputs, RunConfig, Stage};
use gslift::{Error, Result};

#[derive(Parser)]
#[command(name = "gslift", version, about = "Single-view Gaussian splatting reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the bundled 128x128 calibration profile as the base config.
    #[arg(long)]
    calibration: bool,
    /// Override one field, e.g. `--set coarse.iters=200`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let text = match (&self.config, self.calibration) {
            (Some(_), true) => {
                return Err(Error::Config("--config and --calibration are exclusive".into()))
            }
            (Some(p), false) => std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?,
            (None, true) => cli::CALIBRATION_TOML.to_string(),
            (None, false) => String::new(),
        };
        let mut sets = self.set.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        RunConfig::from_toml(&text, &sets)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and render its dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of views (overrides io.views).
        #[arg(long)]
        views: Option<usize>,
    },
    /// Reconstruct a Gaussian cloud from one image.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        landmarks_hair: PathBuf,
        #[arg(long)]
        landmarks_body: PathBuf,
        #[arg(long)]
        body: Option<PathBuf>,
        #[arg(long, requires = "body")]
        body_mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Last stage to run: coarse, viewwise or pixelwise.
        #[arg(long)]
        stop_after: Option<Stage>,
    },
    /// Masked metrics of a cloud against a dataset.
    Eval {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Hair-only cloud for the masks; defaults to hair.gs beside the manifest.
        #[arg(long)]
        hair: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// View-wise stage snapshots across the γ schedule.
    AblateGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a coarse result instead of running the coarse stage.
        #[arg(long)]
        theta0: Option<PathBuf>,
        /// Also run a control at this constant γ.
        #[arg(long)]
        fixed_gamma: Option<f64>,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("GSLIFT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("GSLIFT_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Gen { common, out, views } => {
            let mut cfg = common.load()?;
            if let Some(v) = views {
                cfg.io.views = v;
            }
            let manifest = cli::cmd_gen(&cfg, &out)?;
            println!("{}", manifest.display());
        }
        Command::Reconstruct {
            common,
            image,
            mask,
            landmarks_hair,
            landmarks_body,
            body,
            body_mask,
            out,
            stop_after,
        } => {
            let cfg = common.load()?;
            let inputs = ReconstructInputs {
                image,
                landmarks_hair,
                landmarks_body,
                mask,
                body,
                body_mask,
            };
            let result = cli::cmd_reconstruct(&cfg, &inputs, &out, stop_after)?;
            for (report, path) in result.reports.iter().zip(&result.checkpoints) {
                let last = report.checkpoints.last();
                let mut line = format!("stage={} cloud={}", report.stage, path.display());
                if let Some(c) = last {
                    line.push_str(&format!(" primitives={}", c.primitives));
                    if let Some(m) = c.heldout {
                        line.push(' ');
                        line.push_str(&m.to_kv());
                    }
                }
                println!("{line}");
            }
        }
        Command::Eval { cloud, manifest, hair, json } => {
            let report = cli::cmd_eval(&cloud, &manifest, hair.as_deref())?;
            if json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
                println!("{text}");
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::AblateGamma { common, out, theta0, fixed_gamma } => {
            let cfg = common.load()?;
            let table = cli::cmd_ablate_gamma(&cfg, &out, theta0.as_deref(), fixed_gamma)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error:{}:{}", e.category(), detail);
            ExitCode::FAILURE
        }
    }
}
