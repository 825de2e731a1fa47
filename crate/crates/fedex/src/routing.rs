//! Tour construction over {server} ∪ R_k: 2-OPT heuristic, exact
//! dynamic-programming solver, and round-trip-time assembly.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{transmission_time, RadioParams};
use crate::topology::Topology;
use crate::{Error, Result};

/// Largest client set accepted by the exact solver.
pub const EXACT_TSP_LIMIT: usize = 12;

/// A closed tour: server -> order[0] -> ... -> order[last] -> server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    /// Visiting order of the assigned clients (device ids).
    pub order: Vec<usize>,
    /// Total tour length in meters, both server legs included.
    pub length: f64,
    /// Straight-and-level-flight time over the tour (s).
    pub t_slf: f64,
    /// Round-trip time: R_k * T_trans + T_SLF (s).
    pub rtt_seconds: f64,
    /// RTT discretized to slots, ceil(rtt_seconds / slot), at least 1.
    pub rtt_slots: usize,
}

/// Closed-tour length over the distance matrix; empty order is 0.
pub fn tour_length(topology: &Topology, order: &[usize]) -> f64 {
    if order.is_empty() {
        return 0.0;
    }
    let mut len = topology.distance(0, order[0]);
    for w in order.windows(2) {
        len += topology.distance(w[0], w[1]);
    }
    len + topology.distance(*order.last().unwrap(), 0)
}

/// 2-OPT local search with random restarts. Scans edge pairs in a
/// randomized sweep order, accepts the first strictly improving exchange,
/// and repeats until 2-OPT stable. Deterministic under `seed`.
pub fn solve_tsp_2opt(topology: &Topology, clients: &[usize], restarts: usize, seed: u64) -> Vec<usize> {
    assert!(!clients.is_empty(), "2-OPT needs a non-empty client set");
    assert!(restarts >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts {
        let mut order = clients.to_vec();
        order.shuffle(&mut rng);
        let len = two_opt_descend(topology, &mut order, &mut rng);
        if best.as_ref().map_or(true, |(_, bl)| len < *bl) {
            best = Some((order, len));
        }
    }
    best.unwrap().0
}

fn two_opt_descend(topology: &Topology, order: &mut Vec<usize>, rng: &mut ChaCha8Rng) -> f64 {
    let n = order.len();
    if n < 2 {
        return tour_length(topology, order);
    }
    // Positions in the closed tour: node 0 is the server at both ends.
    // A move reverses order[i..=j]; only the two boundary edges change.
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    loop {
        pairs.shuffle(rng);
        let mut improved = false;
        for &(i, j) in &pairs {
            let prev = if i == 0 { 0 } else { order[i - 1] };
            let next = if j == n - 1 { 0 } else { order[j + 1] };
            let before = topology.distance(prev, order[i]) + topology.distance(order[j], next);
            let after = topology.distance(prev, order[j]) + topology.distance(order[i], next);
            if after < before - 1e-9 {
                order[i..=j].reverse();
                improved = true;
                break;
            }
        }
        if !improved {
            return tour_length(topology, order);
        }
    }
}

/// Returns true when no single 2-OPT exchange shortens the tour.
pub fn is_two_opt_stable(topology: &Topology, order: &[usize]) -> bool {
    let n = order.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let prev = if i == 0 { 0 } else { order[i - 1] };
            let next = if j == n - 1 { 0 } else { order[j + 1] };
            let before = topology.distance(prev, order[i]) + topology.distance(order[j], next);
            let after = topology.distance(prev, order[j]) + topology.distance(order[i], next);
            if after < before - 1e-9 {
                return false;
            }
        }
    }
    true
}

/// Exact minimum-length tour by Held-Karp dynamic programming.
pub fn solve_tsp_exact(topology: &Topology, clients: &[usize]) -> Result<Vec<usize>> {
    let n = clients.len();
    if n == 0 {
        return Err(Error::invalid("exact TSP needs a non-empty client set"));
    }
    if n > EXACT_TSP_LIMIT {
        return Err(Error::TooLarge(format!("exact TSP limited to {EXACT_TSP_LIMIT} clients, got {n}")));
    }
    let full: usize = (1 << n) - 1;
    // dp[mask][last]: shortest path server -> visited mask ending at clients[last].
    let mut dp = vec![vec![f64::INFINITY; n]; 1 << n];
    let mut parent = vec![vec![usize::MAX; n]; 1 << n];
    for last in 0..n {
        dp[1 << last][last] = topology.distance(0, clients[last]);
    }
    for mask in 1..=full {
        for last in 0..n {
            if mask & (1 << last) == 0 || dp[mask][last].is_infinite() {
                continue;
            }
            let base = dp[mask][last];
            for nxt in 0..n {
                if mask & (1 << nxt) != 0 {
                    continue;
                }
                let cand = base + topology.distance(clients[last], clients[nxt]);
                let m2 = mask | (1 << nxt);
                if cand < dp[m2][nxt] {
                    dp[m2][nxt] = cand;
                    parent[m2][nxt] = last;
                }
            }
        }
    }
    let (mut last, _) = (0..n)
        .map(|l| (l, dp[full][l] + topology.distance(clients[l], 0)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let mut mask = full;
    let mut rev = Vec::with_capacity(n);
    while last != usize::MAX {
        rev.push(clients[last]);
        let p = parent[mask][last];
        mask &= !(1 << last);
        last = p;
    }
    rev.reverse();
    Ok(rev)
}

/// Which inner solver a tour build should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TspMethod {
    Exact,
    TwoOpt,
}

/// Assembles a [`Tour`] for the given client set: solves the route, then
/// attaches SLF time, RTT and its slot discretization.
pub fn build_tour(
    topology: &Topology,
    radio: &RadioParams,
    speed: f64,
    clients: &[usize],
    slot_duration: f64,
    method: TspMethod,
    restarts: usize,
    seed: u64,
) -> Result<Tour> {
    if clients.is_empty() {
        return Err(Error::invalid("cannot build a tour over an empty client set"));
    }
    let order = match method {
        TspMethod::Exact => solve_tsp_exact(topology, clients)?,
        TspMethod::TwoOpt => solve_tsp_2opt(topology, clients, restarts, seed),
    };
    Ok(assemble_tour(topology, radio, speed, order, slot_duration))
}

/// RTT bookkeeping for an already-ordered route.
pub fn assemble_tour(
    topology: &Topology,
    radio: &RadioParams,
    speed: f64,
    order: Vec<usize>,
    slot_duration: f64,
) -> Tour {
    let length = tour_length(topology, &order);
    let t_slf = length / speed;
    let rtt_seconds = order.len() as f64 * transmission_time(radio) + t_slf;
    let rtt_slots = ((rtt_seconds / slot_duration).ceil() as usize).max(1);
    Tour { order, length, t_slf, rtt_seconds, rtt_slots }
}

/// Cache of solved routes keyed by the canonical sorted client set.
///
/// Values for identical keys are identical because the per-set solver seed
/// is derived from the set contents, so concurrent last-writer-wins
/// insertion is harmless.
pub struct TspCache {
    map: Mutex<HashMap<Vec<usize>, Vec<usize>>>,
    base_seed: u64,
}

impl TspCache {
    pub fn new(base_seed: u64) -> Self {
        TspCache { map: Mutex::new(HashMap::new()), base_seed }
    }

    /// Solves (or recalls) the route for `clients` with the given method.
    /// Sets small enough for the exact solver are always solved exactly —
    /// cheaper than restarted local search and never worse.
    pub fn route_for(
        &self,
        topology: &Topology,
        clients: &[usize],
        method: TspMethod,
        restarts: usize,
    ) -> Result<Vec<usize>> {
        let mut key = clients.to_vec();
        key.sort_unstable();
        key.dedup();
        if let Some(order) = self.map.lock().unwrap().get(&key) {
            return Ok(order.clone());
        }
        let seed = set_seed(self.base_seed, &key);
        let order = if key.len() <= EXACT_TSP_LIMIT {
            solve_tsp_exact(topology, &key)?
        } else {
            match method {
                TspMethod::Exact => solve_tsp_exact(topology, &key)?,
                TspMethod::TwoOpt => solve_tsp_2opt(topology, &key, restarts, seed),
            }
        };
        self.map.lock().unwrap().insert(key, order.clone());
        Ok(order)
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn set_seed(base: u64, set: &[usize]) -> u64 {
    let mut h = base ^ 0x51_7c_c1_b7_27_22_0a_95;
    for &c in set {
        h ^= c as u64;
        h = h.wrapping_mul(0x100000001b3).rotate_left(17);
    }
    h
}
