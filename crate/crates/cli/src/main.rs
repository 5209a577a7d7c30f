use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use grasprefine::builtin;
use grasprefine::harness::{compare_methods, gradient_audit, run_experiment, ExperimentSpec, Method};
use grasprefine::oracle::{oracle_check, ToyCheckConfig, ToyProblem, TOY_NAMES};

/// Refine sampled grasps with classifier-driven gradient flows and compare
/// against Metropolis-Hastings.
#[derive(Parser, Debug)]
#[command(name = "grasprefine", version)]
struct Cli {
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for traces, reports and tables.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override the success threshold on the joint score.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment file.
    Run { spec: PathBuf },
    /// Run several experiment files on the same scene and tabulate them.
    Compare {
        #[arg(required = true)]
        specs: Vec<PathBuf>,
        /// Add rows for `mh` experiments rerun at the flow's evaluation budget.
        #[arg(long)]
        budget_match: bool,
    },
    /// Refine base samples of a low-dimensional toy and measure the distance
    /// to its quadrature target.
    OracleCheck {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(TOY_NAMES))]
        toy: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Step size for every coordinate.
        #[arg(long)]
        eta: Option<f64>,
        /// Pass when the final distance is below this and decreased at every checkpoint.
        #[arg(long, default_value_t = 0.15)]
        max_tv: f64,
    },
    /// Check classifier gradients against central differences.
    Gradcheck {
        /// Scene names (`builtin:<name>` or a file); all bundled scenes by default.
        #[arg(long = "scene")]
        scenes: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        poses: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether the command's check passed.
fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Run { spec } => {
            let spec = load_spec(cli, spec, cli.out_dir.clone())?;
            let report = run_experiment(&spec)?;
            print!("{}", report.to_toml_string()?);
            Ok(true)
        }
        Command::Compare { specs, budget_match } => {
            let specs = specs
                .iter()
                .map(|path| {
                    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    load_spec(cli, path, cli.out_dir.as_ref().map(|d| d.join(stem)))
                })
                .collect::<Result<Vec<_>>>()?;
            let table = compare_methods(&specs, *budget_match)?;
            if let Some(dir) = &cli.out_dir {
                let path = dir.join("comparison.csv");
                let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                table.write_csv(file)?;
            }
            table.write_csv(io::stdout().lock())?;
            Ok(true)
        }
        Command::OracleCheck { toy, samples, steps, gamma, eta, max_tv } => {
            let toy = ToyProblem::named(toy)?;
            let mut cfg = ToyCheckConfig::standard();
            if let Some(n) = samples {
                cfg.n_samples = *n;
            }
            if let Some(n) = steps {
                cfg.flow.n_steps = *n;
            }
            if let Some(g) = gamma {
                cfg.flow.gamma = *g;
            }
            if let Some(e) = eta {
                cfg.flow.eta_trans = *e;
                cfg.flow.eta_euler = *e;
            }
            if let Some(s) = cli.seed {
                cfg.flow.seed = s;
            }
            let check = oracle_check(&toy, &cfg)?;
            let text = toml_text(&check)?;
            if let Some(dir) = &cli.out_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                write(&dir.join("oracle_check.toml"), &text)?;
                toy.target(cfg.fine_resolution)?.save(dir, &format!("{}_target", toy.name))?;
            }
            print!("{text}");
            let passed = check.final_tv() < *max_tv && check.monotone();
            eprintln!("{}: final TV {:.4} ({})", toy.name, check.final_tv(), verdict(passed));
            Ok(passed)
        }
        Command::Gradcheck { scenes, poses, step, tolerance } => {
            let names: Vec<String> = if scenes.is_empty() {
                builtin::scene_names().map(|n| format!("{}{n}", builtin::PREFIX)).collect()
            } else {
                scenes.clone()
            };
            let mut passed = true;
            let mut out = String::new();
            for name in names {
                let mut spec = ExperimentSpec::builtin("sphere", Method::Flow);
                spec.scene = name.clone();
                spec.seed = cli.seed.unwrap_or(0);
                for check in gradient_audit(&spec, *poses, *step, *tolerance)? {
                    passed &= check.passed();
                    let line = format!(
                        "{name} {}: checked {} skipped {} failures {} max relative error {:.3e} ({})\n",
                        check.classifier,
                        check.checked,
                        check.skipped,
                        check.failures,
                        check.max_relative_error,
                        verdict(check.passed())
                    );
                    out.push_str(&line);
                }
            }
            if let Some(dir) = &cli.out_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                write(&dir.join("gradcheck.txt"), &out)?;
            }
            io::stdout().write_all(out.as_bytes())?;
            Ok(passed)
        }
    }
}

fn load_spec(cli: &Cli, path: &Path, out_dir: Option<PathBuf>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(t) = cli.threshold {
        spec.threshold = t;
    }
    if out_dir.is_some() {
        spec.output_dir = out_dir;
    }
    spec.validate().with_context(|| format!("after applying overrides to {}", path.display()))?;
    Ok(spec)
}

fn toml_text(value: &impl serde::Serialize) -> Result<String> {
    Ok(toml::to_string(value)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "FAIL"
    }
}
