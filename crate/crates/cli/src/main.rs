//! Benchmark CLI over the solver library.
//!
//! One command is one run. Config comes from a JSON file; flags override
//! file values. Exit code 0 on success, 1 on config errors, 2 on
//! numerical failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bsde::config::RunConfig;
use bsde::deep_ga::GaPopRow;
use bsde::report::{format_sig10, trace_csv_string, RunReport};
use bsde::runner;
use bsde::SolverError;

#[derive(Parser)]
#[command(name = "bsde", about = "Deep-BSDE / deep-GA benchmark harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for traces and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dimension scale factor (desk-scale runs).
    #[arg(long)]
    scale_dim: Option<f64>,
    /// Iteration-count scale factor.
    #[arg(long)]
    scale_iters: Option<f64>,
    /// Sample-count scale factor.
    #[arg(long)]
    scale_samples: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver selected by the config's `method`.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Write the final weights to this file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Loss sweep over initial guesses without any training.
    Landscape {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Paired deep-GA / deep-BSDE run on one problem.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print the reference oracle value as JSON.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_config(common: &CommonArgs, require_seed: bool) -> Result<RunConfig, SolverError> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| SolverError::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if require_seed && cfg.seed.is_none() {
        return Err(SolverError::Config(
            "--seed is required for this command".into(),
        ));
    }
    if let Some(s) = common.scale_dim {
        cfg.scale.dim = s;
    }
    if let Some(s) = common.scale_iters {
        cfg.scale.iters = s;
    }
    if let Some(s) = common.scale_samples {
        cfg.scale.samples = s;
    }
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, SolverError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(path)
}

fn ga_populations_csv(rows: &[GaPopRow]) -> String {
    let n_pops = rows.first().map(|r| r.mean_u0.len()).unwrap_or(0);
    let mut out = String::from("generation,wall_seconds");
    for i in 1..=n_pops {
        out.push_str(&format!(",mean_u0_pop{i}"));
    }
    out.push_str(",combined_mean,mean_fitness\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.generation, format_sig10(r.wall_seconds)));
        for v in &r.mean_u0 {
            out.push_str(&format!(",{}", format_sig10(*v)));
        }
        out.push_str(&format!(
            ",{},{}\n",
            format_sig10(r.combined_mean),
            format_sig10(r.mean_fitness)
        ));
    }
    out
}

fn print_summary(report: &RunReport, label: &str) {
    print!(
        "{label}: u0 = {:.6}, total = {:.2}s",
        report.final_u0, report.total_wall_seconds
    );
    if let (Some(r), Some(e)) = (&report.reference, report.abs_pct_error) {
        print!(
            ", reference = {:.6} ({}), abs. percentage error = {:.3}%",
            r.value, r.source, e
        );
    }
    if report.negative_coords > 0 {
        print!(
            ", note: {} negative state coordinates encountered",
            report.negative_coords
        );
    }
    println!();
}

fn run(cli: Cli) -> Result<(), SolverError> {
    match cli.command {
        Command::Solve { common, checkpoint } => {
            let cfg = load_config(&common, true)?;
            let artifacts = runner::run_solve(&cfg)?;
            let trace = write_file(
                &common.out,
                "trace.csv",
                trace_csv_string(&artifacts.report.rows).as_bytes(),
            )?;
            write_file(
                &common.out,
                "report.json",
                &serde_json::to_vec_pretty(&artifacts.report)?,
            )?;
            if let Some(rows) = &artifacts.ga_rows {
                write_file(
                    &common.out,
                    "ga_populations.csv",
                    ga_populations_csv(rows).as_bytes(),
                )?;
            }
            if let Some(path) = checkpoint {
                let file = fs::File::create(&path)?;
                artifacts.params.save_checkpoint(file)?;
                println!("checkpoint written to {}", path.display());
            }
            print_summary(&artifacts.report, "solve");
            println!("trace written to {}", trace.display());
            Ok(())
        }
        Command::Landscape { common } => {
            let cfg = load_config(&common, false)?;
            let artifacts = runner::run_landscape(&cfg)?;
            let trace = write_file(
                &common.out,
                "trace.csv",
                trace_csv_string(&artifacts.report.rows).as_bytes(),
            )?;
            write_file(
                &common.out,
                "report.json",
                &serde_json::to_vec_pretty(&artifacts.report)?,
            )?;
            write_file(
                &common.out,
                "sweep.json",
                &serde_json::to_vec_pretty(&artifacts.table)?,
            )?;
            println!(
                "landscape: argmin guess = {} (mean loss {:.4})",
                artifacts.report.final_u0,
                artifacts.table.mean[artifacts.table.argmin_mean()]
            );
            for (i, g) in artifacts.table.guesses.iter().enumerate() {
                println!(
                    "  guess {:>8.3}: mean {:>12.4}, std {:>10.4}",
                    g, artifacts.table.mean[i], artifacts.table.std[i]
                );
            }
            println!("trace written to {}", trace.display());
            Ok(())
        }
        Command::Bench { common } => {
            let cfg = load_config(&common, true)?;
            let artifacts = runner::run_bench(&cfg)?;
            write_file(
                &common.out,
                "trace_deep_ga.csv",
                trace_csv_string(&artifacts.ga.rows).as_bytes(),
            )?;
            write_file(
                &common.out,
                "trace_deep_bsde.csv",
                trace_csv_string(&artifacts.bsde.rows).as_bytes(),
            )?;
            write_file(
                &common.out,
                "ga_populations.csv",
                ga_populations_csv(&artifacts.ga_rows).as_bytes(),
            )?;
            let report = serde_json::json!({
                "comparison": artifacts.comparison,
                "deep_ga": artifacts.ga,
                "deep_bsde": artifacts.bsde,
            });
            write_file(&common.out, "report.json", &serde_json::to_vec_pretty(&report)?)?;
            print_summary(&artifacts.ga, "deep-ga");
            print_summary(&artifacts.bsde, "deep-bsde");
            let c = &artifacts.comparison;
            println!(
                "at t = {:.2}s: deep-ga loss {:.4} vs deep-bsde loss {:.4}",
                c.shared_horizon_seconds, c.ga_loss_at_horizon, c.bsde_loss_at_horizon
            );
            Ok(())
        }
        Command::Oracle { common } => {
            let cfg = load_config(&common, false)?;
            let (result, _resolved) = runner::run_oracle(&cfg)?;
            let json = serde_json::to_string_pretty(&result)?;
            println!("{json}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
