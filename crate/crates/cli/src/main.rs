//! `bbm`: spectral, moment, PDE and Monte Carlo runs for branching Brownian
//! motion with a compactly supported branching rate, as reproducible batch
//! experiments with machine-readable outputs.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical-convergence
//! failure, 4 verification-suite failure.

mod manifest;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bbm_core::moments::{self, Regime};
use bbm_core::pde::{BoundaryMode, InitialData, PdeProblem};
use bbm_core::potential::{Potential, PotentialSpec};
use bbm_core::sim::{self, SimConfig, SimConfigSpec};
use bbm_core::spectral::{self, Normalization};
use bbm_core::verify::{self, Suite, SuiteOptions};
use bbm_core::{Error, QuadGrid};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "bbm", version, about = "branching Brownian motion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizationArg {
    L2,
    Critical,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Super,
    Sub,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Super,
    Sub,
    Critical,
}

#[derive(Subcommand)]
enum Command {
    /// Critical branching intensity of a potential.
    Betacr {
        /// JSON shape spec, e.g. {"dim":3,"shape":"bump","radius":1.0,"height":1.0}
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 128)]
        n_nodes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Growth exponent lambda0(beta).
    Lambda0 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 128)]
        n_nodes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ground-state profile psi and its integral.
    Groundstate {
        #[arg(long)]
        config: PathBuf,
        /// Ignored with --normalization critical (beta_cr is computed).
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_enum, default_value = "l2")]
        normalization: NormalizationArg,
        #[arg(long, default_value_t = 128)]
        n_nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Limit-variable moment tables f_1..f_N.
    Moments {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        regime: RegimeArg,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        order: usize,
        /// Comma-separated query points (radii in dim 3).
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
        #[arg(long, default_value_t = 128)]
        n_nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo ensemble of the branching diffusion.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed (default also honors $BBM_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; does not affect results.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Finite-difference solve of the integrated moment hierarchy.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Matched spectral / Monte Carlo / PDE verification suite.
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 128)]
        n_nodes: usize,
    },
}

/// PDE problem wire form.
#[derive(Debug, Deserialize, serde::Serialize)]
struct PdeSpec {
    potential: PotentialSpec,
    beta: f64,
    t_end: f64,
    mesh_h: f64,
    dt: f64,
    #[serde(default = "default_n_max")]
    n_max: usize,
    #[serde(default = "default_bc")]
    bc: BoundaryMode,
    #[serde(default = "default_initial")]
    initial: InitialData,
    #[serde(default)]
    domain_l: Option<f64>,
    #[serde(default)]
    probes: Vec<f64>,
}

fn default_n_max() -> usize {
    1
}
fn default_bc() -> BoundaryMode {
    BoundaryMode::Neumann
}
fn default_initial() -> InitialData {
    InitialData::Ones
}

fn env_seed() -> u64 {
    std::env::var("BBM_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_potential(path: &Path) -> anyhow::Result<(Potential, serde_json::Value)> {
    let spec: PotentialSpec = load_json(path)?;
    let value = serde_json::to_value(&spec)?;
    let p = Potential::from_spec(&spec)?;
    Ok((p, value))
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(core) = err.downcast_ref::<Error>() {
        match core {
            Error::Validation(_) | Error::Domain(_) | Error::Contract(_) => 2,
            Error::Numerical(_) => 3,
        }
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Betacr { config, n_nodes, out } => {
            let started = Instant::now();
            let (p, config_value) = load_potential(&config)?;
            let grid = QuadGrid::support(&p, n_nodes)?;
            let beta_cr = spectral::beta_critical(&p, &grid)?;
            let refine = spectral::refinement_diagnostic(0.0, 1.0, &p, n_nodes).unwrap_or(f64::NAN);
            println!("beta_cr = {beta_cr:.12}");
            println!("nodes = {}, doubling changes mu by {refine:.3e} (relative)", grid.n_nodes());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let mut man = RunManifest::new(
                    "betacr",
                    serde_json::json!({"potential": config_value, "n_nodes": n_nodes}),
                    vec![],
                );
                let path = dir.join("betacr.json");
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(&serde_json::json!({
                        "beta_cr": beta_cr,
                        "n_nodes": grid.n_nodes(),
                        "refinement_relative_change": refine,
                    }))?,
                )?;
                man.add_output(&path);
                man.wall_seconds = started.elapsed().as_secs_f64();
                man.write(&dir)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Lambda0 { config, beta, n_nodes, out } => {
            let started = Instant::now();
            let (p, config_value) = load_potential(&config)?;
            let grid = QuadGrid::support(&p, n_nodes)?;
            let l0 = spectral::lambda0(beta, &p, &grid)?;
            println!("lambda0 = {l0:.12}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let mut man = RunManifest::new(
                    "lambda0",
                    serde_json::json!({"potential": config_value, "beta": beta, "n_nodes": n_nodes}),
                    vec![],
                );
                let path = dir.join("lambda0.json");
                std::fs::write(
                    &path,
                    serde_json::to_string_pretty(
                        &serde_json::json!({"beta": beta, "lambda0": l0}),
                    )?,
                )?;
                man.add_output(&path);
                man.wall_seconds = started.elapsed().as_secs_f64();
                man.write(&dir)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Groundstate { config, beta, normalization, n_nodes, out } => {
            let started = Instant::now();
            let (p, config_value) = load_potential(&config)?;
            let grid = QuadGrid::support(&p, n_nodes)?;
            let (gs, beta_used) = match normalization {
                NormalizationArg::L2 => {
                    let b = beta.ok_or_else(|| Error::validation("--beta required for l2"))?;
                    (spectral::ground_state(b, &p, &grid, Normalization::L2)?, b)
                }
                NormalizationArg::Critical => {
                    let b = spectral::beta_critical(&p, &grid)?;
                    (spectral::ground_state(b, &p, &grid, Normalization::Critical)?, b)
                }
            };
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("x,psi\n");
            // grid profile plus a far-field stretch
            for (&x, &ps) in grid.nodes.iter().zip(&gs.psi) {
                writeln!(csv, "{x:.9},{ps:.12e}")?;
            }
            let r_far = grid.hi + 5.0;
            let mut x = grid.hi;
            while x <= r_far {
                writeln!(csv, "{x:.9},{:.12e}", gs.eval(x))?;
                x += 0.1;
            }
            let csv_path = out.join("psi.csv");
            std::fs::write(&csv_path, csv)?;
            let meta_path = out.join("groundstate.json");
            std::fs::write(
                &meta_path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "beta": beta_used,
                    "lambda0": gs.lambda0,
                    "mass": gs.mass,
                    "normalization": match gs.normalization {
                        Normalization::L2 => "l2",
                        Normalization::Critical => "critical",
                    },
                    "fixed_point_residual": gs.residual,
                }))?,
            )?;
            println!(
                "beta = {beta_used:.8}, lambda0 = {:.10}, mass = {:?}",
                gs.lambda0, gs.mass
            );
            let mut man = RunManifest::new(
                "groundstate",
                serde_json::json!({
                    "potential": config_value,
                    "beta": beta_used,
                    "normalization": match gs.normalization {
                        Normalization::L2 => "l2",
                        Normalization::Critical => "critical",
                    },
                    "n_nodes": n_nodes,
                }),
                vec![],
            );
            man.add_output(&csv_path);
            man.add_output(&meta_path);
            man.wall_seconds = started.elapsed().as_secs_f64();
            man.write(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Moments { config, regime, beta, order, x, n_nodes, out } => {
            let started = Instant::now();
            let (p, config_value) = load_potential(&config)?;
            let grid = QuadGrid::support(&p, n_nodes)?;
            let points = if x.is_empty() { vec![0.0] } else { x.clone() };
            let table = match regime {
                RegimeArg::Super => moments::supercritical_f(beta, order, &points, &p, &grid)?,
                RegimeArg::Sub => moments::subcritical_f(beta, order, &points, &p, &grid)?,
            };
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("n,x,f_n,moment\n");
            for (j, &xq) in table.points.iter().enumerate() {
                let assembled = match table.regime {
                    Regime::Supercritical => moments::xi_moments(&table, xq, table.order)?,
                    Regime::Subcritical => moments::limit_moments_sub(&table, xq, table.order)?,
                };
                for n in 1..=table.order {
                    writeln!(csv, "{n},{xq:.9},{:.12e},{:.12e}", table.f[n - 1][j], assembled[n - 1])?;
                }
            }
            let csv_path = out.join("moments.csv");
            std::fs::write(&csv_path, csv)?;
            println!(
                "{} table: order {}, {} points, envelope A = {:.4}",
                match table.regime {
                    Regime::Supercritical => "supercritical",
                    Regime::Subcritical => "subcritical",
                },
                table.order,
                table.points.len(),
                table.diagnostics.envelope_a
            );
            let mut man = RunManifest::new(
                "moments",
                serde_json::json!({
                    "potential": config_value,
                    "beta": beta,
                    "order": order,
                    "x": points,
                    "n_nodes": n_nodes,
                    "regime": match regime { RegimeArg::Super => "super", RegimeArg::Sub => "sub" },
                }),
                vec![],
            );
            man.add_output(&csv_path);
            man.wall_seconds = started.elapsed().as_secs_f64();
            man.write(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { config, out, seed, workers } => {
            let started = Instant::now();
            let mut spec: SimConfigSpec = load_json(&config)?;
            if spec.seed.is_none() {
                spec.seed = Some(env_seed());
            }
            if let Some(s) = seed {
                spec.seed = Some(s);
            }
            if workers.is_some() {
                spec.workers = workers;
            }
            let mut cfg = SimConfig::from_spec(&spec)?;
            if spec.psi_scores {
                let grid = QuadGrid::support(&cfg.potential, 128)?;
                let gs = spectral::ground_state(cfg.beta, &cfg.potential, &grid, Normalization::L2)?;
                cfg.psi = Some(gs.tabulate(1e-3, grid.hi + 14.0 / gs.kappa()));
            }
            let report = sim::run_ensemble(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("t,replica_id,n_t,n_t_U,psi_score\n");
            for (j, &t) in report.checkpoints.iter().enumerate() {
                for r in 0..report.replicas() {
                    let n = report.counts[r][j];
                    let nu = report
                        .counts_region
                        .as_ref()
                        .map(|c| c[r][j])
                        .unwrap_or(n);
                    let score = report
                        .psi_scores
                        .as_ref()
                        .map(|s| format!("{:.9e}", s[r][j]))
                        .unwrap_or_default();
                    writeln!(csv, "{t:.9},{r},{n},{nu},{score}")?;
                }
            }
            let csv_path = out.join("counts.csv");
            std::fs::write(&csv_path, csv)?;
            let summary_path = out.join("summary.json");
            let moment_rows: Vec<serde_json::Value> = report
                .checkpoints
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    serde_json::json!({
                        "t": t,
                        "mean": report.raw_moment(j, 1),
                        "raw2": report.raw_moment(j, 2),
                        "raw3": report.raw_moment(j, 3),
                        "raw4": report.raw_moment(j, 4),
                    })
                })
                .collect();
            std::fs::write(
                &summary_path,
                serde_json::to_string_pretty(&serde_json::json!({
                    "law_hash": report.law_hash,
                    "replicas": report.replicas(),
                    "base_seed": cfg.base_seed,
                    "truncated_replicas": report.truncated_replicas,
                    "moments": moment_rows,
                }))?,
            )?;
            println!(
                "{} replicas, mean count at t_end = {:.4}, truncated = {}",
                report.replicas(),
                report.mean_count(report.checkpoints.len() - 1),
                report.truncated_replicas.len()
            );
            let mut man = RunManifest::new(
                "simulate",
                serde_json::to_value(&spec)?,
                vec![cfg.base_seed],
            );
            man.add_output(&csv_path);
            man.add_output(&summary_path);
            man.wall_seconds = started.elapsed().as_secs_f64();
            man.write(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { config, out } => {
            let started = Instant::now();
            let spec: PdeSpec = load_json(&config)?;
            let potential = Potential::from_spec(&spec.potential)?;
            let problem = PdeProblem {
                potential,
                beta: spec.beta,
                t_end: spec.t_end,
                mesh_h: spec.mesh_h,
                dt: spec.dt,
                n_max: spec.n_max,
                bc: spec.bc,
                initial: spec.initial.clone(),
                domain_l: spec.domain_l,
                probes: if spec.probes.is_empty() { vec![0.0] } else { spec.probes.clone() },
            };
            let sol = bbm_core::pde::solve_rho_bar(&problem)?;
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("t,x,n,rho_bar\n");
            // probe series at every recorded time
            for n in 1..=problem.n_max {
                for (pi, &x) in sol.probes.iter().enumerate() {
                    for (ti, &t) in sol.times.iter().enumerate() {
                        writeln!(csv, "{t:.9},{x:.9},{n},{:.12e}", sol.probe_series[n - 1][pi][ti])?;
                    }
                }
            }
            // full profile at t_end
            let t_end = *sol.times.last().unwrap();
            for n in 1..=problem.n_max {
                for (j, &x) in sol.mesh.iter().enumerate() {
                    writeln!(csv, "{t_end:.9},{x:.9},{n},{:.12e}", sol.final_state[n - 1][j])?;
                }
            }
            let csv_path = out.join("rho.csv");
            std::fs::write(&csv_path, csv)?;
            println!(
                "solved orders 1..={} to t = {t_end}, mesh {} nodes",
                problem.n_max,
                sol.mesh.len()
            );
            let mut man =
                RunManifest::new("oracle", serde_json::to_value(&spec)?, vec![]);
            man.add_output(&csv_path);
            man.wall_seconds = started.elapsed().as_secs_f64();
            man.write(&out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, out, replicas, seed, n_nodes } => {
            let suite = match suite {
                SuiteArg::Super => Suite::Super,
                SuiteArg::Sub => Suite::Sub,
                SuiteArg::Critical => Suite::Critical,
            };
            let opts = SuiteOptions {
                replicas,
                seed: seed.unwrap_or_else(env_seed).max(1),
                n_nodes,
            };
            let report = verify::run_suite(suite, &opts)?;
            for c in &report.criteria {
                println!("{}", c.summary_line());
                for check in &c.checks {
                    println!(
                        "    {} {}: observed {:.6e}, target {:.6e}, tolerance {:.3e}",
                        if check.pass { "ok " } else { "FAIL" },
                        check.label,
                        check.observed,
                        check.target,
                        check.tolerance
                    );
                }
                for note in &c.notes {
                    println!("    note: {note}");
                }
            }
            println!(
                "suite '{}': {} in {:.1} s",
                report.suite,
                if report.pass { "PASS" } else { "FAIL" },
                report.wall_seconds
            );
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                println!("report written to {}", path.display());
            }
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(4) })
        }
    }
}
