mod plot;
mod sweep;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use guided_langevin::config::{parse_assignment, RunConfig, DEFAULT_CONFIG_TOML};
use guided_langevin::rewards::Family;
use guided_langevin::sampler::{RunOutput, Trajectory};
use guided_langevin::verify::run_checks;
use guided_langevin::Error;
use serde_json::json;

use plot::{line_chart, Series};

pub const OUT_DIR_ENV: &str = "GUIDED_LANGEVIN_OUT_DIR";

#[derive(Parser)]
#[command(name = "guided-langevin", version, about = "Reward-guided Langevin sampling on a toy latent backbone")]
struct Cli {
    /// Worker threads for multi-run commands (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration; the built-in demo when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set sampler.lambda_kl=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides `sampler.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampling job and write its trajectory, summary and plots.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (else `output.dir`, then $GUIDED_LANGEVIN_OUT_DIR, then `out`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the self-check suite; prints one JSON record per check.
    Verify {
        /// Include long statistical checks.
        #[arg(long)]
        long: bool,
        /// Run only the named check. Repeatable.
        #[arg(long)]
        only: Vec<String>,
    },
    /// Run a parameter grid over several seeds and write one aggregate CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Grid axis `key=v1,v2,...`. Repeatable; axes combine as a product.
        #[arg(long = "grid", value_name = "KEY=V1,V2")]
        grid: Vec<String>,
        /// Seeds per grid point, starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the effective configuration with every default filled in.
    PrintConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// A loaded configuration and the directory its relative paths refer to.
pub struct Loaded {
    pub config: RunConfig,
    pub text: String,
    pub origin: String,
    pub base: PathBuf,
    pub overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Loaded, Error> {
        let (text, origin, base) = match &self.config {
            Some(p) => (
                fs::read_to_string(p).map_err(|e| Error::Config {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })?,
                p.display().to_string(),
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (DEFAULT_CONFIG_TOML.to_string(), "<default>".to_string(), PathBuf::from(".")),
        };
        let mut overrides = Vec::new();
        for o in &self.overrides {
            let (k, v) = parse_assignment(o)?;
            overrides.push((k.to_string(), v.to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("sampler.seed".into(), seed.to_string()));
        }
        let config = RunConfig::from_toml_with_overrides(&text, &origin, &overrides)?;
        Ok(Loaded {
            config,
            text,
            origin,
            base,
            overrides,
        })
    }
}

pub fn resolve_out_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn csv_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn plots(traj: &Trajectory) -> [(String, String); 3] {
    let per_family = |pick: fn(&guided_langevin::guidance::FamilyRecord) -> f64| -> Vec<Series> {
        Family::ALL
            .iter()
            .filter(|f| traj.records.iter().any(|r| r.families[**f].enabled))
            .map(|f| Series {
                name: f.to_string(),
                points: traj
                    .records
                    .iter()
                    .filter(|r| r.families[*f].enabled)
                    .map(|r| (r.k as f64, pick(&r.families[*f])))
                    .collect(),
            })
            .collect()
    };
    let mut rewards = per_family(|r| r.standardized);
    rewards.push(Series {
        name: "R_tot".into(),
        points: traj.records.iter().map(|r| (r.k as f64, r.r_tot)).collect(),
    });
    let eta = vec![Series {
        name: "eta".into(),
        points: traj.records.iter().map(|r| (r.k as f64, r.eta)).collect(),
    }];
    [
        ("rewards.svg".into(), line_chart("Standardized rewards", "step", &rewards)),
        ("weights.svg".into(), line_chart("Family weights", "step", &per_family(|r| r.weight))),
        ("eta.svg".into(), line_chart("Step size", "step", &eta)),
    ]
}

fn write_outputs(
    out_dir: &Path,
    loaded: &Loaded,
    traj: &Trajectory,
    output: Option<&RunOutput>,
    divergence: Option<(usize, &str)>,
) -> Result<()> {
    let o = &loaded.config.output;
    write_atomic(&out_dir.join(&o.trajectory), &csv_bytes(traj))?;
    if o.snapshot_stride > 0 {
        let mut buf = Vec::new();
        traj.write_snapshots(&mut buf)?;
        write_atomic(&out_dir.join(&o.snapshots), &buf)?;
    }
    if o.plots {
        for (name, svg) in plots(traj) {
            write_atomic(&out_dir.join(name), svg.as_bytes())?;
        }
    }
    let vec = |v: &guided_langevin::math::Vector| v.iter().copied().collect::<Vec<f64>>();
    let summary = json!({
        "diverged": divergence.is_some(),
        "divergence": divergence.map(|(step, reason)| json!({ "step": step, "reason": reason })),
        "steps_executed": traj.records.len(),
        "final_r_tot": traj.records.last().map(|r| r.r_tot),
        "final_image": output.map(|o| vec(&o.final_image)),
        "final_latent": output.map(|o| vec(&o.final_latent)),
        "source_image": output.and_then(|o| o.source_image.as_ref().map(vec)),
        "distance_to_source_rms": output.and_then(RunOutput::source_distance),
        "distance_to_source_l2": output.and_then(|o| o.source_image.as_ref().map(|s| (&o.final_image - s).norm())),
        "config_origin": loaded.origin,
        "overrides": loaded.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>(),
        "config": loaded.config.resolved(),
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&out_dir.join(&o.summary), text.as_bytes())
}

fn cmd_run(cfg: &ConfigArgs, out_dir: Option<&Path>) -> Result<ExitCode> {
    let loaded = match cfg.load() {
        Ok(l) => l,
        Err(e) => return config_failure(e),
    };
    let prepared = match loaded.config.build(&loaded.base) {
        Ok(p) => p,
        Err(e) => return config_failure(e),
    };
    let dir = resolve_out_dir(out_dir, &loaded.config);
    match prepared.run(loaded.config.sampler.seed) {
        Ok(out) => {
            write_outputs(&dir, &loaded, &out.trajectory, Some(&out), None)?;
            eprintln!(
                "{} steps, final R_tot {}, outputs in {}",
                out.trajectory.len(),
                out.final_r_tot().map_or("n/a".into(), |r| format!("{r:.4}")),
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::Diverged { step, reason, partial }) => {
            write_outputs(&dir, &loaded, &partial, None, Some((step, &reason)))?;
            eprintln!("error: sampler diverged at step {step}: {reason}; partial outputs in {}", dir.display());
            Ok(ExitCode::from(3))
        }
        Err(e) => Err(e.into()),
    }
}

fn config_failure(e: Error) -> Result<ExitCode> {
    eprintln!("error: {e}");
    Ok(ExitCode::from(2))
}

fn cmd_verify(long: bool, only: &[String]) -> Result<ExitCode> {
    if let Some(unknown) = only
        .iter()
        .find(|o| !guided_langevin::verify::CHECKS.iter().any(|(id, _, _)| id == o))
    {
        eprintln!("error: unknown check `{unknown}`");
        return Ok(ExitCode::from(2));
    }
    let records = run_checks(long, only);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for r in &records {
        writeln!(lock, "{}", serde_json::to_string(r)?)?;
    }
    let failed: Vec<&str> = records.iter().filter(|r| !r.pass).map(|r| r.id.as_str()).collect();
    if failed.is_empty() {
        eprintln!("{} checks passed", records.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let result = match &cli.command {
        Command::Run { cfg, out_dir } => cmd_run(cfg, out_dir.as_deref()),
        Command::Verify { long, only } => cmd_verify(*long, only),
        Command::Sweep {
            cfg,
            grid,
            seeds,
            out_dir,
        } => sweep::cmd_sweep(cfg, grid, *seeds, out_dir.as_deref()),
        Command::PrintConfig { cfg } => match cfg.load() {
            Ok(l) => {
                print!("{}", l.config.resolved().to_toml_string());
                Ok(ExitCode::SUCCESS)
            }
            Err(e) => config_failure(e),
        },
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
