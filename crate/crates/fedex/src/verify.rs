//! Self-checks over simulation traces: exact reconstruction of the global
//! sequence from logged gradients, staleness bounds, sync alignment, the
//! aligned-view equivalence, consistency/virtual-gap inequalities and the
//! convergence-rate bound evaluation.

use serde::{Deserialize, Serialize};

use crate::fedsim::{run, SimConfig, SimMode, SimSetup, SimTrace};
use crate::learning::{Task, TaskConstants};

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }
}

/// Runs every trace-local check: gradient-ledger reconstruction, staleness
/// bound with attained extremes, sync version alignment, consistency gap and
/// virtual-sequence gap inequalities.
pub fn verify_trace(trace: &SimTrace, clip_g: f64) -> VerifyReport {
    let mut report = VerifyReport::default();
    report.push(check_reconstruction(trace));
    report.push(check_staleness(trace));
    if trace.mode == SimMode::Sync {
        report.push(check_sync_alignment(trace));
    }
    report.push(check_consistency_gap(trace, clip_g));
    report.push(check_virtual_gap(trace, clip_g));
    report
}

/// Check: every recorded global model equals the initial model minus the
/// averaged delivered gradient prefix sums, to accumulated rounding error.
///
/// Per-coordinate tolerance is 10 eps (1 + A_j) where A_j is the absolute
/// accumulated mass, a standard bound on summation rounding.
pub fn check_reconstruction(trace: &SimTrace) -> CheckResult {
    let n = trace.n_clients as f64;
    let d = trace.dimension;
    // Per-client prefix sums of eta g / N (and of the absolute mass), so the
    // per-slot reconstruction is a single lookup per client.
    let mut prefix: Vec<Vec<Vec<f64>>> = Vec::with_capacity(trace.n_clients);
    let mut prefix_abs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(trace.n_clients);
    for i in 0..trace.n_clients {
        let mut acc = vec![0.0f64; d];
        let mut mass = vec![0.0f64; d];
        let mut p = Vec::with_capacity(trace.grads[i].len());
        let mut pa = Vec::with_capacity(trace.grads[i].len());
        for g in &trace.grads[i] {
            for j in 0..d {
                let term = trace.eta * g[j] / n;
                acc[j] += term;
                mass[j] += term.abs();
            }
            p.push(acc.clone());
            pa.push(mass.clone());
        }
        prefix.push(p);
        prefix_abs.push(pa);
    }
    let mut worst = 0.0f64;
    let mut ok = true;
    for (t, x_t) in trace.global.iter().enumerate() {
        for j in 0..d {
            let mut acc = 0.0;
            let mut mass = 0.0;
            for i in 0..trace.n_clients {
                let upto = trace.phi[t][i];
                if upto >= 0 {
                    acc += prefix[i][upto as usize][j];
                    mass += prefix_abs[i][upto as usize][j];
                }
            }
            let expect = trace.global[0][j] - acc;
            let tol = 10.0 * f64::EPSILON * (1.0 + mass) * (1.0 + trace.phi[t].len() as f64);
            let err = (x_t[j] - expect).abs();
            worst = worst.max(err / tol);
            if err > tol {
                ok = false;
            }
        }
    }
    CheckResult::new(
        "reconstruction",
        ok,
        format!("worst error/tolerance ratio {worst:.3e}"),
    )
}

/// Check: per client, delivered-version staleness never exceeds 2 P_k - 1
/// slots after warm-up and attains it, and per-gradient delivery latency
/// never exceeds 2 P_k slots and attains it.
pub fn check_staleness(trace: &SimTrace) -> CheckResult {
    let total = trace.global.len() - 1;
    let mut ok = true;
    let mut detail = String::new();
    for i in 0..trace.n_clients {
        let p = trace.periods[trace.assignment[i]];
        if p == 0 {
            continue;
        }
        let mut max_stale = i64::MIN;
        let mut max_latency = 0i64;
        for t in 1..=total {
            if t >= 2 * p {
                max_stale = max_stale.max(t as i64 - 1 - trace.phi[t][i]);
            }
            if trace.phi[t][i] > trace.phi[t - 1][i] {
                // Steps (prev, cur] delivered effective slot t; the oldest
                // sets the latency high-water mark.
                max_latency = max_latency.max(t as i64 - (trace.phi[t - 1][i] + 1));
            }
        }
        let stale_bound = 2 * p as i64 - 1;
        let latency_bound = 2 * p as i64;
        if total >= 4 * p {
            if max_stale > stale_bound || max_stale < stale_bound {
                ok = false;
                detail = format!("client {}: staleness sup {} != {}", i + 1, max_stale, stale_bound);
            }
            if max_latency > latency_bound || max_latency < latency_bound {
                ok = false;
                detail = format!(
                    "client {}: delivery latency sup {} != {}",
                    i + 1,
                    max_latency,
                    latency_bound
                );
            }
        }
    }
    if ok {
        detail = "staleness sup = 2P-1, delivery latency sup = 2P for every client".into();
    }
    CheckResult::new("staleness_bounds", ok, detail)
}

/// Check (sync only): all clients share the same delivered version marker in
/// every slot.
pub fn check_sync_alignment(trace: &SimTrace) -> CheckResult {
    for (t, row) in trace.phi.iter().enumerate() {
        if row.iter().any(|&v| v != row[0]) {
            return CheckResult::new(
                "sync_version_alignment",
                false,
                format!("slot {t}: version markers diverge: {row:?}"),
            );
        }
    }
    CheckResult::new("sync_version_alignment", true, "version markers uniform per slot".into())
}

/// Check: max_i ||x^t - x_i^t||^2 <= 4 eta^2 G^2 Dmax^2 in every slot.
pub fn check_consistency_gap(trace: &SimTrace, clip_g: f64) -> CheckResult {
    let dmax = *trace.periods.iter().max().unwrap_or(&1) as f64;
    let bound = 4.0 * trace.eta.powi(2) * clip_g.powi(2) * dmax.powi(2);
    let worst = trace.gap_max_sq.iter().cloned().fold(0.0, f64::max);
    CheckResult::new(
        "consistency_gap",
        worst <= bound,
        format!("max gap^2 {worst:.3e} vs bound {bound:.3e}"),
    )
}

/// The virtual sequence v^t = x^0 - (eta/N) sum_i sum_{s<t} g_i^s for all
/// recorded slots (gradients that exist by aligned index, delivered or not).
pub fn virtual_sequence(trace: &SimTrace) -> Vec<Vec<f64>> {
    let total = trace.global.len() - 1;
    let n = trace.n_clients as f64;
    let mut out = Vec::with_capacity(total + 1);
    let mut v = trace.global[0].clone();
    out.push(v.clone());
    for t in 0..total {
        for i in 0..trace.n_clients {
            if let Some(g) = trace.grads[i].get(t) {
                for (vj, gj) in v.iter_mut().zip(g) {
                    *vj -= trace.eta * gj / n;
                }
            }
        }
        out.push(v.clone());
    }
    out
}

/// Check: ||v^t - x^t||^2 <= 4 eta^2 G^2 Dmax^2 (undelivered mass bound).
pub fn check_virtual_gap(trace: &SimTrace, clip_g: f64) -> CheckResult {
    let dmax = *trace.periods.iter().max().unwrap_or(&1) as f64;
    let bound = 4.0 * trace.eta.powi(2) * clip_g.powi(2) * dmax.powi(2);
    let v = virtual_sequence(trace);
    let mut worst = 0.0f64;
    for (vt, xt) in v.iter().zip(&trace.global) {
        let gap: f64 = vt.iter().zip(xt).map(|(&a, &b)| (a - b).powi(2)).sum();
        worst = worst.max(gap);
    }
    CheckResult::new(
        "virtual_gap",
        worst <= bound,
        format!("max ||v-x||^2 {worst:.3e} vs bound {bound:.3e}"),
    )
}

/// Check: re-simulating in the aligned equivalent view reproduces the global
/// sequence exactly (bitwise).
pub fn check_aligned_equivalence(setup: &SimSetup, cfg: &SimConfig, trace: &SimTrace) -> CheckResult {
    match run(setup, trace.mode, cfg, true) {
        Err(e) => CheckResult::new("aligned_equivalence", false, format!("aligned rerun failed: {e}")),
        Ok(aligned) => {
            let equal = aligned.global == trace.global;
            CheckResult::new(
                "aligned_equivalence",
                equal,
                if equal {
                    "aligned re-simulation reproduces the global sequence bitwise".into()
                } else {
                    "aligned re-simulation diverged from recorded sequence".into()
                },
            )
        }
    }
}

/// Deliberately perturbs one logged gradient coordinate; reconstruction must
/// then fail (negative control for the verifier itself).
pub fn corrupt_gradient(trace: &mut SimTrace, client: usize, step: usize, delta: f64) {
    trace.grads[client - 1][step][0] += delta;
}

/// Measured and predicted sides of a convergence-rate bound, averaged over
/// replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    /// (1/T) sum_t ||grad f(x^t)||^2, averaged over replications.
    pub lhs: f64,
    pub rhs: f64,
    pub term_init: f64,
    pub term_drift: f64,
    pub term_noise: f64,
    pub satisfied: bool,
}

/// Average squared gradient norm along the virtual sequence for one trace.
pub fn mean_virtual_grad_norm_sq(trace: &SimTrace, task: &Task) -> f64 {
    let v = virtual_sequence(trace);
    let total = v.len() - 1;
    let mut acc = 0.0;
    for vt in v.iter().take(total) {
        let (_, g) = task.global_loss_and_grad(vt);
        acc += g.iter().map(|x| x * x).sum::<f64>();
    }
    acc / total as f64
}

/// Sync-schedule rate bound:
/// 2 (f0 - f*) / (eta T) + 10 eta^2 G^2 L^2 D^2 + L eta sigma^2 / N.
pub fn evaluate_sync_bound(traces: &[SimTrace], task: &Task, constants: &TaskConstants) -> BoundReport {
    let t0 = &traces[0];
    let total = (t0.global.len() - 1) as f64;
    let n = t0.n_clients as f64;
    let eta = t0.eta;
    let dmax = *t0.periods.iter().max().unwrap() as f64;
    let f_star = constants.f_star.expect("bound evaluation needs the optimal value");
    let l = constants.l_smooth;
    let term_init = 2.0 * (t0.loss[0] - f_star) / (eta * total);
    let term_drift = 10.0 * eta.powi(2) * constants.clip_g.powi(2) * l.powi(2) * dmax.powi(2);
    let term_noise = l * eta * constants.sigma.powi(2) / n;
    finish_bound(traces, task, term_init, term_drift, term_noise)
}

/// Async-schedule rate bound:
/// 4 (f0 - f*) / (eta T) + (44 eta^2 G^2 L^2 / N) sum_k R_k D_k^2
/// + 2 L eta sigma^2 / N.
pub fn evaluate_async_bound(traces: &[SimTrace], task: &Task, constants: &TaskConstants) -> BoundReport {
    let t0 = &traces[0];
    let total = (t0.global.len() - 1) as f64;
    let n = t0.n_clients as f64;
    let eta = t0.eta;
    let f_star = constants.f_star.expect("bound evaluation needs the optimal value");
    let l = constants.l_smooth;
    let weighted: f64 = t0
        .periods
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let r_k = t0.assignment.iter().filter(|&&a| a == k).count() as f64;
            r_k * (p as f64).powi(2)
        })
        .sum();
    let term_init = 4.0 * (t0.loss[0] - f_star) / (eta * total);
    let term_drift = 44.0 * eta.powi(2) * constants.clip_g.powi(2) * l.powi(2) * weighted / n;
    let term_noise = 2.0 * l * eta * constants.sigma.powi(2) / n;
    finish_bound(traces, task, term_init, term_drift, term_noise)
}

fn finish_bound(
    traces: &[SimTrace],
    _task: &Task,
    term_init: f64,
    term_drift: f64,
    term_noise: f64,
) -> BoundReport {
    // Measured side: average squared gradient of the global objective along
    // the recorded global sequence (slots 0..T-1), over replications.
    let lhs = traces
        .iter()
        .map(|t| {
            let total = t.global.len() - 1;
            t.grad_norm_sq[..total].iter().sum::<f64>() / total as f64
        })
        .sum::<f64>()
        / traces.len() as f64;
    let rhs = term_init + term_drift + term_noise;
    BoundReport { lhs, rhs, term_init, term_drift, term_noise, satisfied: lhs <= rhs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{Assignment, TransporterProfile};
    use crate::energy::{reference_propulsion, reference_radio};
    use crate::learning::QuadraticTask;
    use crate::routing::{build_tour, TspMethod};
    use crate::topology::Topology;

    fn small_setup() -> (Topology, Vec<TransporterProfile>, Assignment, Task) {
        let topo = Topology::build(vec![
            [1000.0, 1000.0],
            [0.0, 0.0],
            [2000.0, 0.0],
            [2000.0, 2000.0],
            [0.0, 2000.0],
        ])
        .unwrap();
        let profiles =
            vec![TransporterProfile { propulsion: reference_propulsion(), budget: f64::INFINITY }; 2];
        let assignment = Assignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let task = Task::Quadratic(
            QuadraticTask::new(
                vec![1.0, 0.5],
                vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -0.3], vec![2.0, 1.0]],
                0.25,
                100.0,
            )
            .unwrap(),
        );
        (topo, profiles, assignment, task)
    }

    fn simulate(mode: SimMode, total_slots: usize, seed: u64) -> (SimTrace, f64) {
        let (topo, profiles, assignment, task) = small_setup();
        let radio = reference_radio();
        let tours: Vec<_> = (0..2)
            .map(|k| {
                Some(
                    build_tour(&topo, &radio, 10.0, &assignment.subset(k), 60.0, TspMethod::Exact, 1, 0)
                        .unwrap(),
                )
            })
            .collect();
        let setup = SimSetup {
            topology: &topo,
            radio,
            profiles: &profiles,
            tours: &tours,
            assignment: &assignment,
            task: &task,
            slot_duration: 60.0,
        };
        let cfg = SimConfig { eta: 0.01, total_slots, seed };
        (run(&setup, mode, &cfg, false).unwrap(), 100.0)
    }

    #[test]
    fn all_checks_pass_on_clean_traces() {
        for mode in [SimMode::Sync, SimMode::Async] {
            let (trace, g) = simulate(mode, 400, 7);
            let report = verify_trace(&trace, g);
            assert!(report.all_passed(), "{mode:?}: {:?}", report.checks);
        }
    }

    #[test]
    fn corrupted_trace_fails_reconstruction() {
        let (mut trace, _) = simulate(SimMode::Sync, 300, 3);
        corrupt_gradient(&mut trace, 1, 2, 1e-3);
        let check = check_reconstruction(&trace);
        assert!(!check.passed);
    }

    #[test]
    fn aligned_equivalence_check_detects_tampering() {
        let (topo, profiles, assignment, task) = small_setup();
        let radio = reference_radio();
        let tours: Vec<_> = (0..2)
            .map(|k| {
                Some(
                    build_tour(&topo, &radio, 10.0, &assignment.subset(k), 60.0, TspMethod::Exact, 1, 0)
                        .unwrap(),
                )
            })
            .collect();
        let setup = SimSetup {
            topology: &topo,
            radio,
            profiles: &profiles,
            tours: &tours,
            assignment: &assignment,
            task: &task,
            slot_duration: 60.0,
        };
        let cfg = SimConfig { eta: 0.01, total_slots: 250, seed: 4 };
        let mut trace = run(&setup, SimMode::Async, &cfg, false).unwrap();
        assert!(check_aligned_equivalence(&setup, &cfg, &trace).passed);
        trace.global[200][0] += 1e-9;
        assert!(!check_aligned_equivalence(&setup, &cfg, &trace).passed);
    }

    #[test]
    fn virtual_sequence_tracks_all_gradients() {
        let (trace, _) = simulate(SimMode::Sync, 200, 1);
        let v = virtual_sequence(&trace);
        // After the final slot the virtual point leads the global one by the
        // not-yet-delivered mass; both start identically.
        assert_eq!(v[0], trace.global[0]);
        assert_eq!(v.len(), trace.global.len());
    }

    #[test]
    fn sync_bound_holds_on_average() {
        let traces: Vec<SimTrace> =
            (0..4).map(|s| simulate(SimMode::Sync, 600, 100 + s).0).collect();
        let (_, _, _, task) = small_setup();
        let constants = task.constants();
        let report = evaluate_sync_bound(&traces, &task, &constants);
        assert!(report.satisfied, "lhs {} rhs {}", report.lhs, report.rhs);
        assert!(report.lhs.is_finite() && report.lhs > 0.0);
    }

    #[test]
    fn async_bound_holds_on_average() {
        let traces: Vec<SimTrace> =
            (0..4).map(|s| simulate(SimMode::Async, 600, 200 + s).0).collect();
        let (_, _, _, task) = small_setup();
        let constants = task.constants();
        let report = evaluate_async_bound(&traces, &task, &constants);
        assert!(report.satisfied, "lhs {} rhs {}", report.lhs, report.rhs);
    }
}
