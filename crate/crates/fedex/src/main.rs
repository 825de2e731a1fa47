//! Command-line front end: plan tours, simulate training, verify traces and
//! compare assignment objectives.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fedex::config::{Scenario, ScenarioConfig};
use fedex::orchestrate::{build_world, compare_routes, plan, run_scenario, schedule_metrics};

/// Environment variable naming the artifact root directory.
const ARTIFACT_ROOT_ENV: &str = "FEDEX_ARTIFACTS";

#[derive(Parser)]
#[command(name = "fedex", about = "Federated learning with transporter-carried model exchange", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to a scenario TOML file.
    #[arg(long, short)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory (default: $FEDEX_ARTIFACTS/<name> or ./artifacts/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Do not write artifacts.
    #[arg(long)]
    no_artifacts: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the client assignment and print tours, RTTs and energy use.
    Plan(Common),
    /// Plan, then simulate all replications and report losses.
    Simulate(Common),
    /// Full pipeline: plan, simulate, verify, evaluate rate bounds.
    Run(Common),
    /// Run the verification suite and exit non-zero if any check fails.
    Verify(Common),
    /// Compare the assignment objectives on the same scenario.
    CompareRoutes(Common),
}

fn load(common: &Common) -> anyhow::Result<Scenario> {
    let cfg = ScenarioConfig::from_path(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut sc = cfg.resolve()?;
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn artifact_dir(common: &Common, sc: &Scenario) -> Option<PathBuf> {
    if common.no_artifacts {
        return None;
    }
    if let Some(out) = &common.out {
        return Some(out.clone());
    }
    let root = std::env::var_os(ARTIFACT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    Some(root.join(&sc.name))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Plan(common) => cmd_plan(common),
        Command::Simulate(common) => cmd_simulate(common),
        Command::Run(common) => cmd_run(common),
        Command::Verify(common) => cmd_verify(common),
        Command::CompareRoutes(common) => cmd_compare(common),
    }
}

fn cmd_plan(common: &Common) -> anyhow::Result<()> {
    let sc = load(common)?;
    let world = build_world(&sc)?;
    let result = plan(&sc, &world.topology)?;
    println!("scenario {} | objective cost {}", sc.name, result.best_cost);
    for (k, tour) in result.tours.iter().enumerate() {
        match tour {
            None => println!("transporter {k}: idle"),
            Some(t) => {
                let e = &result.energy[k];
                println!(
                    "transporter {k}: {} clients, tour {:.0} m, rtt {} slots, energy {:.0}/{:.0} J ({})",
                    t.order.len(),
                    t.length,
                    t.rtt_slots,
                    e.e_total,
                    e.budget,
                    if e.feasible { "feasible" } else { "INFEASIBLE" },
                );
            }
        }
    }
    Ok(())
}

fn cmd_simulate(common: &Common) -> anyhow::Result<()> {
    let sc = load(common)?;
    let dir = artifact_dir(common, &sc);
    let out = run_scenario(&sc, dir.as_deref())?;
    println!("scenario {} | mode {:?} | eta {:.6}", sc.name, sc.mode, out.eta);
    for rep in &out.replications {
        println!(
            "seed {}: final loss {:.6}, mean |grad|^2 {:.6}",
            rep.seed, rep.final_loss, rep.mean_grad_norm_sq
        );
    }
    if let Some(dir) = dir {
        println!("artifacts: {}", dir.display());
    }
    Ok(())
}

fn cmd_run(common: &Common) -> anyhow::Result<()> {
    let sc = load(common)?;
    let dir = artifact_dir(common, &sc);
    let out = run_scenario(&sc, dir.as_deref())?;
    println!("scenario {} | mode {:?} | eta {:.6}", sc.name, sc.mode, out.eta);
    let (max_rtt, sum_rtt, weighted) = schedule_metrics(&out.plan.assignment, &out.plan.tours);
    println!("schedule: max rtt {max_rtt} slots, total {sum_rtt}, weighted-square {weighted:.0}");
    for rep in &out.replications {
        println!(
            "seed {}: final loss {:.6}, verify {}",
            rep.seed,
            rep.final_loss,
            if rep.verify_passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(b) = &out.bounds {
        println!(
            "rate bound: measured {:.6} <= predicted {:.6} ({})",
            b.lhs,
            b.rhs,
            if b.satisfied { "holds" } else { "VIOLATED" }
        );
    }
    if let Some(dir) = dir {
        println!("artifacts: {}", dir.display());
    }
    if out.verify.iter().any(|v| !v.all_passed()) {
        bail!("verification failed");
    }
    Ok(())
}

fn cmd_verify(common: &Common) -> anyhow::Result<()> {
    let sc = load(common)?;
    let out = run_scenario(&sc, None)?;
    let mut ok = true;
    for (rep, report) in out.verify.iter().enumerate() {
        for check in &report.checks {
            println!(
                "[{}] rep {rep} {}: {}",
                if check.passed { "pass" } else { "FAIL" },
                check.name,
                check.detail
            );
            ok &= check.passed;
        }
    }
    if let Some(b) = &out.bounds {
        println!(
            "[{}] rate bound: measured {:.6} vs predicted {:.6}",
            if b.satisfied { "pass" } else { "FAIL" },
            b.lhs,
            b.rhs
        );
        ok &= b.satisfied;
    }
    if !ok {
        bail!("verification failed");
    }
    Ok(())
}

fn cmd_compare(common: &Common) -> anyhow::Result<()> {
    let sc = load(common)?;
    let rows = compare_routes(&sc)?;
    println!(
        "{:<16} {:>10} {:>9} {:>9} {:>14} {:>12}",
        "objective", "best_cost", "max_rtt", "sum_rtt", "weighted_sq", "final_loss"
    );
    for r in rows {
        println!(
            "{:<16} {:>10.2} {:>9} {:>9} {:>14.0} {:>12.6}",
            format!("{:?}", r.cost),
            r.best_cost,
            r.max_rtt_slots,
            r.sum_rtt_slots,
            r.weighted_sq_rtt,
            r.final_loss_mean
        );
    }
    Ok(())
}
