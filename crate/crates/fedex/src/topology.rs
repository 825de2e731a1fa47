//! Device geometry: positions, the symmetric distance matrix and the
//! block-structured client placement used by the default scenarios.
//!
//! Device 0 is always the server; clients are 1..=N. Coordinates are 2-D
//! ground positions in meters; flight altitude is a radio/propulsion
//! parameter, not a coordinate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned rectangle holding a group of clients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    /// Client ids (1-based device ids) placed inside this block.
    pub members: Vec<usize>,
}

impl Block {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] > self.x0 && p[0] < self.x0 + self.width && p[1] > self.y0 && p[1] < self.y0 + self.height
    }
}

/// Immutable device geometry with a precomputed Euclidean distance matrix.
#[derive(Debug, Clone)]
pub struct Topology {
    positions: Vec<[f64; 2]>,
    dist: Vec<Vec<f64>>,
    blocks: Option<Vec<Block>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeviceRecord {
    id: usize,
    x: f64,
    y: f64,
    block: Option<usize>,
}

impl Topology {
    /// Builds a topology from device positions (index 0 = server).
    pub fn build(positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::invalid("need at least a server and one client"));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::invalid(format!("non-finite coordinate for device {i}")));
            }
        }
        let n = positions.len();
        let mut dist = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                let d = (dx * dx + dy * dy).sqrt();
                dist[i][j] = d;
                dist[j][i] = d;
            }
        }
        Ok(Topology { positions, dist, blocks: None })
    }

    /// Places the server at the area center and `clients_per_block` clients
    /// uniformly at random inside each of `n_blocks` rectangular blocks.
    ///
    /// The block grid is the factor pair of `n_blocks` that divides both area
    /// sides into whole meters and makes blocks closest to square (ties go to
    /// the wider grid), e.g. (2000, 2000, 10) gives 400 m x 1000 m blocks.
    pub fn generate_block_layout(
        area_w: f64,
        area_h: f64,
        n_blocks: usize,
        clients_per_block: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(area_w > 0.0) || !(area_h > 0.0) || n_blocks == 0 || clients_per_block == 0 {
            return Err(Error::invalid("area sides, n_blocks and clients_per_block must be positive"));
        }
        let (cols, rows) = block_grid(area_w, area_h, n_blocks)?;
        let bw = area_w / cols as f64;
        let bh = area_h / rows as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = vec![[area_w / 2.0, area_h / 2.0]];
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let cx = (b % cols) as f64 * bw;
            let cy = (b / cols) as f64 * bh;
            let mut members = Vec::with_capacity(clients_per_block);
            for _ in 0..clients_per_block {
                // Strictly interior points; rejection almost never loops.
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                while u == 0.0 || v == 0.0 {
                    u = rng.gen::<f64>();
                    v = rng.gen::<f64>();
                }
                members.push(positions.len());
                positions.push([cx + u * bw, cy + v * bh]);
            }
            blocks.push(Block { x0: cx, y0: cy, width: bw, height: bh, members });
        }
        let mut topo = Topology::build(positions)?;
        topo.blocks = Some(blocks);
        Ok(topo)
    }

    pub fn n_devices(&self) -> usize {
        self.positions.len()
    }

    /// Number of clients (devices excluding the server).
    pub fn n_clients(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i][j]
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn blocks(&self) -> Option<&[Block]> {
        self.blocks.as_deref()
    }

    /// Serializes as a JSON device list (id, x, y, block id); f64 values
    /// round-trip exactly.
    pub fn to_json(&self) -> String {
        let block_of = |id: usize| -> Option<usize> {
            self.blocks.as_ref().and_then(|bs| {
                bs.iter().position(|b| b.members.contains(&id))
            })
        };
        let records: Vec<DeviceRecord> = self
            .positions
            .iter()
            .enumerate()
            .map(|(id, p)| DeviceRecord { id, x: p[0], y: p[1], block: block_of(id) })
            .collect();
        serde_json::to_string_pretty(&records).expect("device records serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let records: Vec<DeviceRecord> =
            serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        let mut positions = vec![[0.0, 0.0]; records.len()];
        for r in &records {
            if r.id >= records.len() {
                return Err(Error::invalid(format!("device id {} out of range", r.id)));
            }
            positions[r.id] = [r.x, r.y];
        }
        Topology::build(positions)
    }
}

/// Picks the (cols, rows) factorization of `n_blocks` whose blocks are
/// closest to square; both sides must split into whole meters.
fn block_grid(area_w: f64, area_h: f64, n_blocks: usize) -> Result<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for cols in 1..=n_blocks {
        if n_blocks % cols != 0 {
            continue;
        }
        let rows = n_blocks / cols;
        let bw = area_w / cols as f64;
        let bh = area_h / rows as f64;
        if bw.fract() != 0.0 || bh.fract() != 0.0 {
            continue;
        }
        let gap = (bw - bh).abs();
        let better = match best {
            None => true,
            Some((bc, _, bg)) => gap < bg || (gap == bg && cols > bc),
        };
        if better {
            best = Some((cols, rows, gap));
        }
    }
    best.map(|(c, r, _)| (c, r))
        .ok_or_else(|| Error::NonTilingLayout(format!("{n_blocks} blocks do not tile {area_w} x {area_h}")))
}
