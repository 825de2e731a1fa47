//! End-to-end pipeline: build the world from a scenario, optimize the
//! client assignment, simulate every replication, run the verification
//! suite, evaluate the rate bounds and write the artifact directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::{run_carp, Assignment, CarpResult, CostKind, GibbsConfig, RouteContext};
use crate::config::{Scenario, TaskKind};
use crate::energy::EnergyReport;
use crate::fedsim::{run, SimConfig, SimMode, SimSetup, SimTrace};
use crate::learning::{partition_data, quadratic_from_shards, Dataset, LogisticTask, Task};
use crate::routing::Tour;
use crate::topology::Topology;
use crate::verify::{
    check_aligned_equivalence, evaluate_async_bound, evaluate_sync_bound, verify_trace,
    BoundReport, VerifyReport,
};
use crate::{Error, Result};

const N_LABELS: usize = 10;

/// Concrete problem instance derived from a scenario.
pub struct World {
    pub topology: Topology,
    pub task: Task,
    /// Effective learning rate: configured, or sqrt(N) / (L sqrt(T)) capped
    /// at 1/L.
    pub eta: f64,
}

pub fn build_world(sc: &Scenario) -> Result<World> {
    let n = sc.n_clients();
    let topology = Topology::generate_block_layout(
        sc.area_width,
        sc.area_height,
        sc.n_blocks,
        sc.clients_per_block,
        sc.seed,
    )?;
    let dataset = Dataset::synthetic(n * sc.samples_per_client, N_LABELS, sc.dimension, sc.seed ^ 0x5eed);
    let shards = partition_data(&dataset, &sc.partition, n, topology.blocks(), sc.seed ^ 0x9a97)?;
    let task = match sc.task_kind {
        TaskKind::Quadratic => Task::Quadratic(quadratic_from_shards(
            &dataset,
            &shards,
            vec![1.0; sc.dimension],
            sc.sigma,
            sc.clip_g,
        )?),
        TaskKind::Logistic => {
            let shards = shards
                .iter()
                .map(|shard| {
                    shard
                        .iter()
                        .map(|&s| {
                            let y = if dataset.labels[s] % 2 == 0 { -1.0 } else { 1.0 };
                            (dataset.features[s].clone(), y)
                        })
                        .collect()
                })
                .collect();
            Task::Logistic(LogisticTask {
                shards,
                lambda: sc.lambda,
                batch_size: sc.batch_size,
                clip_g: sc.clip_g,
                sigma: sc.sigma,
            })
        }
    };
    let l = task.constants().l_smooth;
    let eta = sc.eta.unwrap_or_else(|| {
        ((n as f64).sqrt() / (l * (sc.total_slots as f64).sqrt())).min(1.0 / l)
    });
    Ok(World { topology, task, eta })
}

/// Solves the assignment/routing stage for a scenario.
pub fn plan(sc: &Scenario, topology: &Topology) -> Result<CarpResult> {
    let ctx = RouteContext::new(
        topology,
        sc.radio.clone(),
        sc.profiles.clone(),
        sc.slot_duration,
        sc.tsp_method,
        sc.restarts,
        sc.seed ^ 0x7095,
    );
    let cfg = GibbsConfig { iterations: sc.gibbs_iterations, chains: sc.gibbs_chains, q0: sc.q0, decay: sc.decay, seed: sc.seed };
    run_carp(&ctx, sc.cost, &cfg)
}

/// One replication's headline numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub seed: u64,
    pub final_loss: f64,
    pub mean_grad_norm_sq: f64,
    pub verify_passed: bool,
}

/// Everything a full scenario run produces.
pub struct RunOutcome {
    pub plan: CarpResult,
    pub traces: Vec<SimTrace>,
    pub verify: Vec<VerifyReport>,
    /// Rate-bound evaluation; absent when the task has no closed-form f*.
    pub bounds: Option<BoundReport>,
    pub replications: Vec<ReplicationSummary>,
    pub eta: f64,
}

/// Full pipeline. When `out_dir` is given, artifacts are written there with
/// deterministic bytes (re-running the same scenario reproduces them
/// exactly).
pub fn run_scenario(sc: &Scenario, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let world = build_world(sc)?;
    let plan = plan(sc, &world.topology)?;
    let mut traces = Vec::with_capacity(sc.replications);
    let mut verify = Vec::with_capacity(sc.replications);
    let mut replications = Vec::with_capacity(sc.replications);

    let setup = SimSetup {
        topology: &world.topology,
        radio: sc.radio.clone(),
        profiles: &sc.profiles,
        tours: &plan.tours,
        assignment: &plan.assignment,
        task: &world.task,
        slot_duration: sc.slot_duration,
    };
    for rep in 0..sc.replications {
        let cfg = SimConfig { eta: world.eta, total_slots: sc.total_slots, seed: sc.seed.wrapping_add(rep as u64) };
        let trace = run(&setup, sc.mode, &cfg, false)?;
        let mut report = verify_trace(&trace, sc.clip_g);
        report.push(check_aligned_equivalence(&setup, &cfg, &trace));
        let total = trace.global.len() - 1;
        replications.push(ReplicationSummary {
            seed: cfg.seed,
            final_loss: trace.loss[total],
            mean_grad_norm_sq: trace.grad_norm_sq[..total].iter().sum::<f64>() / total as f64,
            verify_passed: report.all_passed(),
        });
        verify.push(report);
        traces.push(trace);
    }
    let constants = world.task.constants();
    let bounds = constants.f_star.map(|_| match sc.mode {
        SimMode::Sync => evaluate_sync_bound(&traces, &world.task, &constants),
        SimMode::Async => evaluate_async_bound(&traces, &world.task, &constants),
    });
    let outcome = RunOutcome { plan, traces, verify, bounds, replications, eta: world.eta };
    if let Some(dir) = out_dir {
        write_artifacts(sc, &world, &outcome, dir)?;
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    seed: u64,
    replications: usize,
    n_clients: usize,
    transporters: usize,
    mode: SimMode,
    total_slots: usize,
    eta: f64,
    best_cost: f64,
    rtt_slots: Vec<usize>,
    bounds: &'a Option<BoundReport>,
    summaries: &'a [ReplicationSummary],
}

fn write_artifacts(sc: &Scenario, world: &World, out: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        scenario: &sc.name,
        seed: sc.seed,
        replications: sc.replications,
        n_clients: sc.n_clients(),
        transporters: sc.profiles.len(),
        mode: sc.mode,
        total_slots: sc.total_slots,
        eta: out.eta,
        best_cost: out.plan.best_cost,
        rtt_slots: out.traces[0].periods.clone(),
        bounds: &out.bounds,
        summaries: &out.replications,
    };
    fs::write(dir.join("manifest.json"), to_json(&manifest)?)?;
    fs::write(dir.join("devices.json"), world.topology.to_json())?;
    fs::write(dir.join("assignment.json"), to_json(&out.plan.assignment.as_slice().to_vec())?)?;
    fs::write(dir.join("tours.json"), to_json(&out.plan.tours)?)?;
    fs::write(dir.join("verify.json"), to_json(&out.verify)?)?;
    write_energy_csv(&out.plan.energy, &dir.join("energy.csv"))?;
    write_carp_csv(&out.plan, &dir.join("optimizer_trace.csv"))?;
    for (rep, trace) in out.traces.iter().enumerate() {
        write_trace_csv(trace, &dir.join(format!("trace_rep{rep}.csv")))?;
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Serde(e.to_string()))
}

fn write_energy_csv(reports: &[EnergyReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["transporter", "e_trans", "e_slf", "e_hover", "e_prop", "e_total", "budget", "feasible"])
        .map_err(csv_err)?;
    for (k, r) in reports.iter().enumerate() {
        w.write_record([
            k.to_string(),
            format!("{:.6}", r.e_trans),
            format!("{:.6}", r.e_slf),
            format!("{:.6}", r.e_hover),
            format!("{:.6}", r.e_prop),
            format!("{:.6}", r.e_total),
            format!("{:.6}", r.budget),
            r.feasible.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_carp_csv(plan: &CarpResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "cost", "best_cost"]).map_err(csv_err)?;
    for row in &plan.trace {
        w.write_record([row.iteration.to_string(), format!("{}", row.cost), format!("{}", row.best_cost)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_csv(trace: &SimTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["slot".to_string(), "loss".to_string(), "grad_norm_sq".to_string(), "gap_max_sq".to_string()];
    for k in 0..trace.periods.len() {
        header.push(format!("phase_k{k}"));
    }
    w.write_record(&header).map_err(csv_err)?;
    let total = trace.global.len() - 1;
    for t in 0..=total {
        let mut row = vec![
            t.to_string(),
            format!("{}", trace.loss[t]),
            format!("{}", trace.grad_norm_sq[t]),
            format!("{}", trace.gap_max_sq[t]),
        ];
        for k in 0..trace.periods.len() {
            let phase = if t < total { trace.transporter_phase[t][k] } else { 0 };
            row.push(
                match phase {
                    crate::fedsim::PHASE_HOVERING => "hovering",
                    crate::fedsim::PHASE_TRAVELLING => "travelling",
                    _ => "at_server",
                }
                .to_string(),
            );
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

/// One line of the objective comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub cost: CostKind,
    pub best_cost: f64,
    pub max_rtt_slots: usize,
    pub sum_rtt_slots: usize,
    pub weighted_sq_rtt: f64,
    pub final_loss_mean: f64,
}

/// Plans and simulates the same scenario under each assignment objective,
/// reporting the schedule metrics and mean final loss per objective.
pub fn compare_routes(sc: &Scenario) -> Result<Vec<CompareRow>> {
    let world = build_world(sc)?;
    let mut rows = Vec::new();
    for cost in [CostKind::MinMax, CostKind::Sws, CostKind::ShortestTotal] {
        let mut sc_k = sc.clone();
        sc_k.cost = cost;
        let plan = plan(&sc_k, &world.topology)?;
        let (max_rtt, sum_rtt, weighted) = schedule_metrics(&plan.assignment, &plan.tours);
        let setup = SimSetup {
            topology: &world.topology,
            radio: sc.radio.clone(),
            profiles: &sc.profiles,
            tours: &plan.tours,
            assignment: &plan.assignment,
            task: &world.task,
            slot_duration: sc.slot_duration,
        };
        let mut loss_acc = 0.0;
        for rep in 0..sc.replications {
            let cfg = SimConfig {
                eta: world.eta,
                total_slots: sc.total_slots,
                seed: sc.seed.wrapping_add(rep as u64),
            };
            let trace = run(&setup, sc.mode, &cfg, false)?;
            loss_acc += trace.loss[trace.loss.len() - 1];
        }
        rows.push(CompareRow {
            cost,
            best_cost: plan.best_cost,
            max_rtt_slots: max_rtt,
            sum_rtt_slots: sum_rtt,
            weighted_sq_rtt: weighted,
            final_loss_mean: loss_acc / sc.replications as f64,
        });
    }
    Ok(rows)
}

/// (max_k D_k, sum_k D_k, sum_k R_k D_k^2) over non-empty tours.
pub fn schedule_metrics(assignment: &Assignment, tours: &[Option<Tour>]) -> (usize, usize, f64) {
    let mut max_rtt = 0usize;
    let mut sum_rtt = 0usize;
    let mut weighted = 0.0f64;
    for (k, tour) in tours.iter().enumerate() {
        if let Some(tour) = tour {
            max_rtt = max_rtt.max(tour.rtt_slots);
            sum_rtt += tour.rtt_slots;
            let r_k = assignment.subset(k).len() as f64;
            weighted += r_k * (tour.rtt_slots as f64).powi(2);
        }
    }
    (max_rtt, sum_rtt, weighted)
}
