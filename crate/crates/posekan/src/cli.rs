//! Command-line interface. `run` returns the process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use posekan_core::data::make_synthetic_task;
use posekan_core::train::{evaluate_predictions, predict};
use posekan_core::verify::{filter_suite, gradient_suite, spline_suite, CheckRow, GRADIENT_OPS};

use crate::checkpoint;
use crate::config::{RunConfig, SEED_ENV};
use crate::dataset::{load_dataset, save_dataset, LoadedDataset};
use crate::driver;
use crate::error::{Error, Result, EXIT_CONFIG, EXIT_NUMERIC};
use crate::skeleton::{load_skeleton, BUILTIN_H36M16};

/// Scaling values used by `verify filters`.
pub const VERIFY_SCALINGS: [f64; 10] = [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];
pub const VERIFY_GRAPHS: usize = 50;
pub const VERIFY_SPLINE_POINTS: usize = 1000;
pub const VERIFY_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "posekan", version, about = "Graph KAN lifting of 2D keypoints to 3D poses", after_help = RunConfig::keys_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let env_seed = std::env::var(SEED_ENV).ok();
        RunConfig::resolve(self.config.as_deref(), &self.overrides, env_seed.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Filters,
    Gradients,
    Splines,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics.csv and checkpoints to `out_dir`.
    #[command(after_help = RunConfig::keys_help())]
    Train(ConfigArgs),
    /// Evaluate a checkpoint, or a predictions CSV, against a dataset.
    Eval {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Predictions CSV (`sample,joint,x,y,z`) to score instead of a checkpoint.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Skeleton for the dataset when scoring a predictions CSV.
        #[arg(long, default_value = BUILTIN_H36M16)]
        skeleton: PathBuf,
        /// mpjpe, pa or pck.
        #[arg(long, default_value = "mpjpe")]
        protocol: String,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-sample 3D predictions (mm) as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical self-checks; exit 3 on any failure.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
        /// Scale the named op's analytic gradient by 1.01 (test hook).
        #[arg(long, hide = true)]
        perturb: Option<String>,
    },
    /// Train one model per value of a parameter and tabulate the results.
    #[command(after_help = RunConfig::keys_help())]
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// s, grid, order or embed.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Run the trainings on separate threads.
        #[arg(long)]
        parallel: bool,
        /// CSV output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset on the built-in 16-joint skeleton.
    MakeSynth {
        #[arg(long, default_value_t = 16)]
        joints: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write the binary format instead of text.
        #[arg(long)]
        binary: bool,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = driver::cmd_train(&cfg)?;
            if let Some(row) = out.rows.iter().rev().find(|r| r.split == "train") {
                println!("epoch {} loss {} lr {}", row.epoch, row.loss, row.lr);
            }
            for c in &out.checkpoints {
                println!("wrote {}", c.display());
            }
            Ok(0)
        }
        Command::Eval { checkpoint, predictions, data, skeleton, protocol, out } => {
            let protocol = driver::parse_protocol(&protocol)?;
            let (report, provenance) = match (checkpoint, predictions) {
                (Some(ck), _) => {
                    let ckpt = checkpoint::load(&ck)?;
                    let loaded = load_dataset(&data, ckpt.model.graph())?;
                    (driver::evaluate_checkpoint(&ckpt, &loaded, protocol)?, format!("checkpoint={} data={}", ck.display(), data.display()))
                }
                (None, Some(pred_path)) => {
                    let graph = load_skeleton(&skeleton)?;
                    let loaded = load_dataset(&data, &graph)?;
                    let ds = loaded.require_ground_truth()?;
                    let text = std::fs::read_to_string(&pred_path).map_err(|e| Error::io(&pred_path, e))?;
                    let preds = driver::parse_predictions(&text, &pred_path, &loaded.ids, graph.joint_count())?;
                    let report = evaluate_predictions(protocol, &preds, ds.samples())?;
                    (report, format!("predictions={} data={}", pred_path.display(), data.display()))
                }
                (None, None) => return Err(Error::config("checkpoint", "give --checkpoint or --predictions")),
            };
            print!("{}", driver::format_report(&report));
            if let Some(path) = out {
                write_output(Some(&path), &driver::report_csv(&report, &provenance))?;
            }
            Ok(0)
        }
        Command::Predict { checkpoint, data, out } => {
            let ckpt = checkpoint::load(&checkpoint)?;
            let loaded = load_dataset(&data, ckpt.model.graph())?;
            let preds = predict(&ckpt.model, loaded.dataset.samples(), ckpt.target_scale)?;
            write_output(out.as_deref(), &driver::predictions_csv(&loaded.ids, &preds))?;
            Ok(0)
        }
        Command::Verify { suite, perturb } => {
            if let Some(op) = perturb.as_deref() {
                if !GRADIENT_OPS.contains(&op) {
                    return Err(Error::config("perturb", format!("unknown op `{op}` ({})", GRADIENT_OPS.join(", "))));
                }
            }
            let rows = verify_rows(suite, perturb.as_deref())?;
            print!("{}", format_checks(&rows));
            let failed: Vec<&CheckRow> = rows.iter().filter(|r| !r.passed).collect();
            if failed.is_empty() {
                println!("all {} checks passed", rows.len());
                Ok(0)
            } else {
                for r in &failed {
                    eprintln!("FAILED {}: {} residual {:.3e} > {:.1e}", r.suite, r.name, r.residual, r.tolerance);
                }
                Ok(EXIT_NUMERIC)
            }
        }
        Command::Sweep { config, param, values, parallel, out } => {
            let cfg = config.resolve()?;
            cfg.validate()?;
            let key = driver::sweep_key(&param)?;
            let (values, dropped) = driver::dedup_values(&values);
            for d in &dropped {
                eprintln!("warning: duplicate sweep value `{d}` ignored");
            }
            let (_, train, val) = driver::load_run_inputs(&cfg)?;
            let root = Path::new(&cfg.out_dir).join(format!("sweep_{key}"));
            let rows = driver::run_sweep(&cfg, &param, &values, &train.dataset, val.as_ref().map(|v| &v.dataset), Some(&root), parallel)?;
            write_output(out.as_deref(), &driver::sweep_csv(&cfg, &rows))?;
            Ok(0)
        }
        Command::MakeSynth { joints, samples, seed, out, binary } => {
            let data = LoadedDataset::from_dataset(make_synthetic_task(joints, samples, seed)?);
            save_dataset(&out, &data, binary)?;
            println!("wrote {} samples to {}", samples, out.display());
            Ok(0)
        }
    }
}

pub fn verify_rows(suite: Suite, perturb: Option<&str>) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    if matches!(suite, Suite::Filters | Suite::All) {
        rows.extend(filter_suite(VERIFY_GRAPHS, &VERIFY_SCALINGS, VERIFY_SEED)?);
    }
    if matches!(suite, Suite::Splines | Suite::All) {
        rows.extend(spline_suite(VERIFY_SPLINE_POINTS, VERIFY_SEED)?);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        rows.extend(gradient_suite(VERIFY_SEED, perturb)?);
    }
    Ok(rows)
}

pub fn format_checks(rows: &[CheckRow]) -> String {
    let mut out = format!("{:<10} {:<34} {:>12} {:>10}  status\n", "suite", "check", "residual", "tolerance");
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<34} {:>12.3e} {:>10.1e}  {}\n",
            r.suite,
            r.name,
            r.residual,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        ));
    }
    out
}
