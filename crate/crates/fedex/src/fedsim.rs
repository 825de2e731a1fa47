//! Deterministic slot-by-slot simulator of the sync and async transporter
//! schedules: tours, model/CLU ferrying, server updates and full trace
//! capture for verification.
//!
//! Slot processing order: (1) transporter departures, then arrivals at
//! clients (upload CLU, then download the carried global model); (2) every
//! seeded client performs one local step; (3) transporters returning at the
//! end of this slot deliver their aggregated CLU, so the update is visible
//! in the global model of the next slot. Clients are idle until first
//! seeded.
//!
//! Gradient step indices are *aligned*: client i's j-th step of its r-th
//! round is labeled r * P + j, where P is the round period in slots. Under
//! this labeling the per-round CLUs of the real (staggered-visit) schedule
//! and of the aligned equivalent view are bitwise identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, TransporterProfile};
use crate::energy::{tour_energy_report, transmission_time, EnergyReport, RadioParams};
use crate::learning::Task;
use crate::routing::Tour;
use crate::topology::Topology;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Sync,
    Async,
}

/// What a transporter is doing during a slot (trace bookkeeping only).
pub const PHASE_AT_SERVER: u8 = 0;
pub const PHASE_TRAVELLING: u8 = 1;
pub const PHASE_HOVERING: u8 = 2;

/// Everything a simulation run needs besides the run parameters.
pub struct SimSetup<'a> {
    pub topology: &'a Topology,
    pub radio: RadioParams,
    pub profiles: &'a [TransporterProfile],
    /// Tour per transporter; `None` for transporters with no clients.
    pub tours: &'a [Option<Tour>],
    pub assignment: &'a Assignment,
    pub task: &'a Task,
    pub slot_duration: f64,
}

/// Run parameters of a single replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub eta: f64,
    pub total_slots: usize,
    pub seed: u64,
}

/// Per-slot record of the whole system, dense enough to re-derive every
/// quantity the verification suite needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTrace {
    pub mode: SimMode,
    pub aligned: bool,
    pub eta: f64,
    pub n_clients: usize,
    pub dimension: usize,
    /// Round period in slots per transporter (sync: the common max).
    pub periods: Vec<usize>,
    pub assignment: Vec<usize>,
    /// Global model per slot, indices 0..=total_slots.
    pub global: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    /// phi[t][i]: latest aligned step of client i delivered by slot t (-1: none).
    pub phi: Vec<Vec<i64>>,
    /// grads[i][s]: client i's stochastic gradient at aligned step s.
    pub grads: Vec<Vec<Vec<f64>>>,
    /// max_i ||x^t - x_i^t||^2 over seeded clients, per slot.
    pub gap_max_sq: Vec<f64>,
    pub transporter_phase: Vec<Vec<u8>>,
    pub tour_energy: Vec<Option<EnergyReport>>,
    pub seed: u64,
    pub slot_duration: f64,
}

/// Client-side state: local model, CLU accumulator and step bookkeeping.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub x: Vec<f64>,
    pub clu: Vec<f64>,
    pub seeded: bool,
    pub steps_taken: usize,
    /// Aligned step index through which grads were last handed to a
    /// transporter (-1 before the first upload).
    pub pending_phi: i64,
    rng: Option<ChaCha8Rng>,
}

impl ClientState {
    fn new(dimension: usize) -> Self {
        ClientState {
            x: vec![0.0; dimension],
            clu: vec![0.0; dimension],
            seeded: false,
            steps_taken: 0,
            pending_phi: -1,
            rng: None,
        }
    }
}

/// Transporter-side state during a tour.
#[derive(Debug, Clone)]
pub struct TransporterState {
    pub carried: Vec<f64>,
    pub u: Vec<f64>,
    pub depart_slot: usize,
}

/// Arrival offsets (slots after departure) for each stop of a tour.
///
/// Stop j is served in slot ceil((travel time to stop j + j hover
/// transmissions) / slot), at least one slot after departure. Consecutive
/// stops may share a slot (several short hops can fit in one slot); they
/// stay ordered because visits are processed in tour order within a slot.
pub fn schedule_tour_stops(
    tour: &Tour,
    topology: &Topology,
    speed: f64,
    t_trans: f64,
    slot_duration: f64,
) -> Vec<(usize, usize)> {
    let mut stops = Vec::with_capacity(tour.order.len());
    let mut cum_travel = 0.0;
    let mut prev_node = 0usize;
    for (j, &client) in tour.order.iter().enumerate() {
        cum_travel += topology.distance(prev_node, client) / speed;
        let raw = ((cum_travel + j as f64 * t_trans) / slot_duration).ceil() as usize;
        stops.push((client, raw.max(1)));
        prev_node = client;
    }
    stops
}

/// Transporter meets a client: the CLU is absorbed first, then the client
/// is (re)seeded with the carried global model and its CLU resets.
pub fn client_visit(client: &mut ClientState, transporter: &mut TransporterState) {
    for (uj, mj) in transporter.u.iter_mut().zip(&client.clu) {
        *uj += mj;
    }
    client.pending_phi = client.steps_taken as i64 - 1;
    client.x.copy_from_slice(&transporter.carried);
    client.clu.iter_mut().for_each(|m| *m = 0.0);
    client.seeded = true;
}

/// One mini-batch SGD step: x_i <- x_i - eta g, CLU <- CLU + eta g.
/// Returns the raw gradient for trace logging.
pub fn local_step(
    client: &mut ClientState,
    task: &Task,
    client_id: usize,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let g = task.stochastic_gradient(client_id, &client.x, rng);
    for ((xj, mj), gj) in client.x.iter_mut().zip(client.clu.iter_mut()).zip(&g) {
        *xj -= eta * gj;
        *mj += eta * gj;
    }
    client.steps_taken += 1;
    g
}

pub fn run_fedex_sync(setup: &SimSetup, cfg: &SimConfig) -> Result<SimTrace> {
    run(setup, SimMode::Sync, cfg, false)
}

pub fn run_fedex_async(setup: &SimSetup, cfg: &SimConfig) -> Result<SimTrace> {
    run(setup, SimMode::Async, cfg, false)
}

/// Runs the simulator. With `aligned`, clients of each transporter all start
/// local training at the round boundary and their CLUs are delivered one
/// round later — the equivalent view that leaves the global sequence
/// unchanged.
pub fn run(setup: &SimSetup, mode: SimMode, cfg: &SimConfig, aligned: bool) -> Result<SimTrace> {
    validate(setup, cfg)?;
    let n = setup.topology.n_clients();
    let kk = setup.profiles.len();
    let d = setup.task.dimension();
    let t_trans = transmission_time(&setup.radio);

    // Round periods: async uses each tour's own RTT; sync stretches every
    // round to the slowest transporter.
    let max_delta = setup
        .tours
        .iter()
        .flatten()
        .map(|t| t.rtt_slots)
        .max()
        .ok_or_else(|| Error::invalid("no transporter has any clients"))?;
    let periods: Vec<usize> = setup
        .tours
        .iter()
        .map(|t| match (&mode, t) {
            (_, None) => 0,
            (SimMode::Sync, Some(_)) => max_delta,
            (SimMode::Async, Some(t)) => t.rtt_slots,
        })
        .collect();

    // Per-transporter stop schedules and physical return offsets.
    let mut stops: Vec<Vec<(usize, usize)>> = Vec::with_capacity(kk);
    let mut return_offset = vec![0usize; kk];
    for (k, tour) in setup.tours.iter().enumerate() {
        match tour {
            None => stops.push(Vec::new()),
            Some(tour) => {
                let speed = setup.profiles[k].propulsion.speed;
                let mut sched = schedule_tour_stops(tour, setup.topology, speed, t_trans, setup.slot_duration);
                // Stops must land before the next departure; a one-slot
                // round serves its stops in the departure slot itself.
                let p = periods[k];
                for stop in &mut sched {
                    stop.1 = if p == 1 { 0 } else { stop.1.min(p - 1) };
                }
                return_offset[k] = tour.rtt_slots.min(p);
                stops.push(sched);
            }
        }
    }

    let total = cfg.total_slots;
    let mut x = vec![0.0f64; d];
    let mut clients: Vec<ClientState> = (0..n).map(|_| ClientState::new(d)).collect();
    let mut transporters: Vec<TransporterState> = (0..kk)
        .map(|_| TransporterState { carried: vec![0.0; d], u: vec![0.0; d], depart_slot: 0 })
        .collect();
    // Aligned mode holds each round's collected CLUs for one extra round.
    let mut aligned_pending: Vec<Vec<f64>> = vec![vec![0.0; d]; kk];
    let mut phi_now = vec![-1i64; n];

    let mut trace = SimTrace {
        mode,
        aligned,
        eta: cfg.eta,
        n_clients: n,
        dimension: d,
        periods: periods.clone(),
        assignment: setup.assignment.as_slice().to_vec(),
        global: Vec::with_capacity(total + 1),
        loss: Vec::with_capacity(total + 1),
        grad_norm_sq: Vec::with_capacity(total + 1),
        phi: Vec::with_capacity(total + 1),
        grads: vec![Vec::new(); n],
        gap_max_sq: Vec::with_capacity(total + 1),
        transporter_phase: Vec::with_capacity(total),
        tour_energy: setup
            .tours
            .iter()
            .enumerate()
            .map(|(k, t)| {
                t.as_ref().map(|t| {
                    tour_energy_report(
                        &setup.radio,
                        &setup.profiles[k].propulsion,
                        t.length,
                        t.order.len(),
                        setup.profiles[k].budget,
                    )
                })
            })
            .collect(),
        seed: cfg.seed,
        slot_duration: setup.slot_duration,
    };

    for t in 0..=total {
        record_slot(&mut trace, setup.task, &x, &clients, &phi_now);
        if t == total {
            break;
        }

        // Phase 1: departures, then this slot's meetings.
        let mut phases = vec![PHASE_AT_SERVER; kk];
        for k in 0..kk {
            let p = periods[k];
            if p == 0 {
                continue;
            }
            if t % p == 0 {
                let ts = &mut transporters[k];
                ts.carried.copy_from_slice(&x);
                ts.u.iter_mut().for_each(|v| *v = 0.0);
                ts.depart_slot = t;
                if aligned {
                    // Collect every client's CLU now (it covers the previous
                    // round); deliver it at the end of this round.
                    for &(c, _) in &stops[k] {
                        client_visit(&mut clients[c - 1], ts);
                    }
                    std::mem::swap(&mut aligned_pending[k], &mut ts.u);
                }
            }
            let pos = t - transporters[k].depart_slot;
            phases[k] = if stops[k].iter().any(|&(_, off)| off == pos) {
                PHASE_HOVERING
            } else if pos >= return_offset[k] {
                PHASE_AT_SERVER
            } else {
                PHASE_TRAVELLING
            };
            if !aligned {
                let ts = &mut transporters[k];
                for &(c, off) in &stops[k] {
                    if ts.depart_slot + off == t {
                        client_visit(&mut clients[c - 1], ts);
                    }
                }
            }
        }
        trace.transporter_phase.push(phases);

        // Phase 2: one local step per seeded client.
        for i in 1..=n {
            let k = setup.assignment.transporter_of(i);
            let p = periods[k];
            let cs = &mut clients[i - 1];
            if !cs.seeded || p == 0 {
                continue;
            }
            if cs.steps_taken % p == 0 {
                let round = cs.steps_taken / p;
                cs.rng = Some(ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, i, round)));
            }
            let mut rng = cs.rng.take().expect("round rng initialized");
            let g = local_step(cs, setup.task, i, cfg.eta, &mut rng);
            cs.rng = Some(rng);
            trace.grads[i - 1].push(g);
        }

        // Phase 3: returns deliver aggregated CLUs into the next slot's model.
        for k in 0..kk {
            let p = periods[k];
            if p == 0 || (t + 1) % p != 0 {
                continue;
            }
            let u = if aligned { &aligned_pending[k] } else { &transporters[k].u };
            for (xj, uj) in x.iter_mut().zip(u) {
                *xj -= uj / n as f64;
            }
            for &(c, _) in &stops[k] {
                phi_now[c - 1] = clients[c - 1].pending_phi;
            }
        }
    }
    Ok(trace)
}

fn record_slot(trace: &mut SimTrace, task: &Task, x: &[f64], clients: &[ClientState], phi: &[i64]) {
    let (loss, grad) = task.global_loss_and_grad(x);
    trace.global.push(x.to_vec());
    trace.loss.push(loss);
    trace.grad_norm_sq.push(grad.iter().map(|v| v * v).sum());
    trace.phi.push(phi.to_vec());
    let gap = clients
        .iter()
        .filter(|c| c.seeded)
        .map(|c| x.iter().zip(&c.x).map(|(&a, &b)| (a - b).powi(2)).sum::<f64>())
        .fold(0.0, f64::max);
    trace.gap_max_sq.push(gap);
}

fn validate(setup: &SimSetup, cfg: &SimConfig) -> Result<()> {
    let n = setup.topology.n_clients();
    if setup.profiles.is_empty() {
        return Err(Error::invalid("scenario needs at least one transporter"));
    }
    if setup.tours.len() != setup.profiles.len() {
        return Err(Error::invalid("one tour slot per transporter required"));
    }
    if setup.assignment.n_clients() != n || setup.task.n_clients() != n {
        return Err(Error::invalid("assignment/task size does not match topology"));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if cfg.total_slots == 0 {
        return Err(Error::invalid("total_slots must be positive"));
    }
    // Every client appears in exactly one tour, on its assigned transporter.
    let mut seen = vec![false; n];
    for (k, tour) in setup.tours.iter().enumerate() {
        if let Some(tour) = tour {
            for &c in &tour.order {
                if seen[c - 1] {
                    return Err(Error::invalid(format!("client {c} appears in two tours")));
                }
                seen[c - 1] = true;
                if setup.assignment.transporter_of(c) != k {
                    return Err(Error::invalid(format!("client {c} toured by wrong transporter")));
                }
            }
        }
    }
    if let Some(c) = seen.iter().position(|&s| !s) {
        return Err(Error::invalid(format!("client {} not covered by any tour", c + 1)));
    }
    Ok(())
}

/// Derives the per-(client, round) noise stream seed (splitmix64 chain).
pub fn stream_seed(master: u64, client: usize, round: usize) -> u64 {
    let mut z = master;
    for v in [client as u64, round as u64] {
        z = z.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(v.wrapping_mul(0xff51afd7ed558ccd));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}
