//! Command-line driver for the two-scale laboratory.
//!
//! Subcommands: `verify | simulate | macro | pde | sweep | oracle`.
//! Exit codes: 0 success, 1 identity failure, 2 config error, 3 numerical
//! abort.

use clap::{Parser, Subcommand};

use twoscale::cli::{
    run_macro_only, run_oracle_suite, run_pde_only, run_sweep, verify_scheme, ExperimentConfig,
    Mode, OutputWriter,
};
use twoscale::Error;

#[derive(Parser)]
#[command(name = "twoscale", about = "Two-scale lattice dynamics laboratory", version)]
struct Args {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    /// RNG seed for ensembles and randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for results.csv / manifest.json / verdicts.json.
    #[arg(long, global = true)]
    out: Option<String>,

    /// Worker threads for ensemble integration (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Fixed-order statistic reduction for bit-identical outputs.
    #[arg(long, global = true)]
    deterministic: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the operator, coarse-graining, and thermodynamic identity checks.
    Verify,
    /// Run a single (N, M) experiment end to end.
    Simulate,
    /// Integrate the macroscopic block ODE only.
    Macro,
    /// Solve the limiting PDE only.
    Pde,
    /// Run the convergence sweep over the (N, M) schedule.
    Sweep,
    /// Run the N = 3 Fokker-Planck and OU oracle suites.
    Oracle,
}

fn resolve_config(args: &Args) -> Result<ExperimentConfig, Error> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_toml_file(path)?,
        None => ExperimentConfig::default(),
    };
    config.mode = match args.command {
        Command::Verify => Mode::Verify,
        Command::Simulate => Mode::Simulate,
        Command::Macro => Mode::Macro,
        Command::Pde => Mode::Pde,
        Command::Sweep => Mode::Sweep,
        Command::Oracle => Mode::Oracle,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(det) = args.deterministic {
        config.deterministic = det;
    }
    config.validate()?;
    Ok(config)
}

fn run(config: &ExperimentConfig) -> Result<i32, Error> {
    if config.threads > 0 {
        // Ignore failure if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }
    let writer = OutputWriter::new(&config.out_dir, &config.hash())?;

    match config.mode {
        Mode::Verify => {
            let mut reports = Vec::new();
            let mut all_pass = true;
            for &(n, m) in &config.schedule {
                let rep = verify_scheme(config, n, m)?;
                for c in &rep.checks {
                    println!(
                        "[{}] N={n} M={m} {}: residual {:.3e} (tol {:.3e})",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.name,
                        c.residual,
                        c.tolerance
                    );
                }
                println!(
                    "      N={n} M={m} margins: gap={:.4}, gamma={:.4}, lambda={:.6}, Lambda={:.6}, c_ratio={:.6}",
                    rep.spectral_gap, rep.gamma, rep.lambda, rep.lambda_big, rep.c_max_ratio
                );
                all_pass &= rep.all_pass;
                reports.push(rep);
            }
            writer.write_verdicts(&reports)?;
            writer.write_manifest(config, serde_json::json!({"mode": "verify"}))?;
            Ok(if all_pass { 0 } else { 1 })
        }
        Mode::Simulate => {
            let &(n, m) = config.schedule.first().expect("validated schedule");
            let result = twoscale::cli::execute_run(config, n, m)?;
            writer.write_checkpoint_csv("results.csv", &result.checkpoints)?;
            writer.write_verdicts(&result)?;
            writer.write_manifest(
                config,
                serde_json::json!({"mode": "simulate", "table_sha": result.table_sha}),
            )?;
            println!(
                "simulate N={n} M={m}: sup theta = {:.4e}, sup hydro gap = {:.4e}, bound {}",
                result.sup_theta,
                result.sup_hydro_gap,
                if result.bound.holds { "holds" } else { "VIOLATED" }
            );
            Ok(if result.bound.holds && result.dissipation_holds { 0 } else { 1 })
        }
        Mode::Macro => {
            let traj = run_macro_only(config)?;
            let profiles: Vec<Vec<f64>> =
                traj.profiles.iter().map(|p| p.as_slice().to_vec()).collect();
            writer.write_profile_csv("results.csv", &traj.times, &profiles)?;
            writer.write_manifest(config, serde_json::json!({"mode": "macro"}))?;
            println!("macro: {} checkpoints written", traj.times.len());
            Ok(0)
        }
        Mode::Pde => {
            let sol = run_pde_only(config)?;
            writer.write_profile_csv("results.csv", &sol.times, &sol.profiles)?;
            writer.write_manifest(
                config,
                serde_json::json!({"mode": "pde", "mesh": sol.m_pde, "dt": sol.dt}),
            )?;
            println!("pde: mesh {} dt {:.3e}, {} checkpoints", sol.m_pde, sol.dt, sol.times.len());
            Ok(0)
        }
        Mode::Sweep => {
            let summary = run_sweep(config)?;
            writer.write_sweep_csv(&summary.results)?;
            for r in &summary.results {
                writer.write_checkpoint_csv(
                    &format!("run_n{}_m{}.csv", r.n, r.m),
                    &r.checkpoints,
                )?;
                println!(
                    "sweep N={} M={} K={}: sup gap = {:.4e} (+/-{:.1e}), bound margin = {:.3e}, {:.1}s",
                    r.n, r.m, r.k, r.sup_hydro_gap, r.sup_hydro_gap_stderr, r.bound.margin, r.wall_secs
                );
            }
            println!(
                "sweep summary: gap monotone = {}, bounds hold = {}",
                summary.hydro_gap_monotone, summary.all_bounds_hold
            );
            writer.write_verdicts(&summary)?;
            writer.write_manifest(config, serde_json::json!({"mode": "sweep"}))?;
            Ok(if summary.all_bounds_hold { 0 } else { 1 })
        }
        Mode::Oracle => {
            let report = run_oracle_suite(config)?;
            for c in &report.checks {
                println!(
                    "[{}] {}: residual {:.3e} (tol {:.3e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.residual,
                    c.tolerance
                );
            }
            writer.write_entropy_csv(&report.entropy_series)?;
            writer.write_verdicts(&report)?;
            writer.write_manifest(config, serde_json::json!({"mode": "oracle"}))?;
            Ok(if report.all_pass { 0 } else { 1 })
        }
    }
}

fn main() {
    let args = Args::parse();
    let config = match resolve_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            std::process::exit(2);
        }
    };
    match run(&config) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
