//! Scenario configuration: TOML files with human-friendly unit-suffixed
//! quantities ("2 km", "20 dBm", "100 MB", "50 Mbps"), resolved into SI
//! values for the rest of the library (meters, seconds, watts, joules,
//! bits, bits/s, Hz).

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

use crate::assignment::{CostKind, TransporterProfile};
use crate::energy::{dbm_to_watts, PropulsionParams, RadioParams};
use crate::fedsim::SimMode;
use crate::learning::PartitionScheme;
use crate::routing::TspMethod;
use crate::{Error, Result};

/// Parses a quantity with an optional unit suffix into its SI base value.
/// Data sizes resolve to bits, rates to bits/s.
pub fn parse_quantity(s: &str) -> Result<f64> {
    let s = s.trim();
    // Longest suffix first so "min" wins over "m", "MHz" over "Hz", etc.
    const UNITS: &[(&str, f64)] = &[
        ("W/Hz", 1.0),
        ("Gbps", 1e9),
        ("Mbps", 1e6),
        ("kbps", 1e3),
        ("km/h", 1.0 / 3.6),
        ("bps", 1.0),
        ("m/s", 1.0),
        ("dBm", f64::NAN), // handled specially below
        ("GHz", 1e9),
        ("MHz", 1e6),
        ("kHz", 1e3),
        ("bit", 1.0),
        ("min", 60.0),
        ("GB", 8e9),
        ("MB", 8e6),
        ("kB", 8e3),
        ("MJ", 1e6),
        ("kJ", 1e3),
        ("km", 1e3),
        ("ms", 1e-3),
        ("mW", 1e-3),
        ("kW", 1e3),
        ("Hz", 1.0),
        ("B", 8.0),
        ("J", 1.0),
        ("W", 1.0),
        ("h", 3600.0),
        ("m", 1.0),
        ("s", 1.0),
    ];
    for (suffix, factor) in UNITS {
        if let Some(head) = s.strip_suffix(suffix) {
            let head = head.trim();
            if head.is_empty() {
                continue;
            }
            if let Ok(v) = head.parse::<f64>() {
                if *suffix == "dBm" {
                    return Ok(dbm_to_watts(v));
                }
                return Ok(v * factor);
            }
        }
    }
    s.parse::<f64>()
        .map_err(|_| Error::Config(format!("cannot parse quantity {s:?}")))
}

/// An SI value deserializable from either a bare number or a suffixed string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Qty(pub f64);

impl<'de> Deserialize<'de> for Qty {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct QtyVisitor;
        impl<'de> Visitor<'de> for QtyVisitor {
            type Value = Qty;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a number or a string like \"2 km\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Qty, E> {
                Ok(Qty(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Qty, E> {
                Ok(Qty(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Qty, E> {
                Ok(Qty(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Qty, E> {
                parse_quantity(v).map(Qty).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(QtyVisitor)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub area: AreaSection,
    pub radio: RadioSection,
    pub fleet: FleetSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub routing: RoutingSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub task: TaskSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaSection {
    pub width: Qty,
    pub height: Qty,
    pub blocks: usize,
    pub clients_per_block: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub power: Qty,
    pub bandwidth: Qty,
    pub noise_density: Qty,
    pub beta0: f64,
    pub altitude: Qty,
    pub model_size: Qty,
    /// Optional fixed link rate replacing the capacity formula.
    pub rate: Option<Qty>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    pub transporters: usize,
    pub speed: Qty,
    pub slf_power: Qty,
    #[serde(default = "default_parasitic_share")]
    pub parasitic_share: f64,
    pub hover_power: Qty,
    /// Either one shared budget or one per transporter.
    pub budget: Option<Qty>,
    pub budgets: Option<Vec<Qty>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub mode: SimMode,
    pub slot: Qty,
    pub total_slots: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingSection {
    pub method: TspMethod,
    pub restarts: usize,
}

impl Default for RoutingSection {
    fn default() -> Self {
        RoutingSection { method: TspMethod::TwoOpt, restarts: 10 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub cost: CostKind,
    pub iterations: usize,
    pub chains: usize,
    pub q0: f64,
    pub decay: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection { cost: CostKind::MinMax, iterations: 400, chains: 3, q0: 1.0, decay: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub dimension: usize,
    pub sigma: f64,
    pub clip_g: f64,
    #[serde(default)]
    pub partition: PartitionKind,
    pub alpha: Option<f64>,
    pub p_main: Option<f64>,
    /// Learning rate; omitted means sqrt(N) / (L sqrt(T)) capped at 1/L.
    pub eta: Option<f64>,
    #[serde(default = "default_samples_per_client")]
    pub samples_per_client: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// l2 regularization strength (logistic task only).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Quadratic,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    #[default]
    Iid,
    Dirichlet,
    Location,
}

fn default_seed() -> u64 {
    42
}
fn default_replications() -> usize {
    4
}
fn default_parasitic_share() -> f64 {
    0.5
}
fn default_samples_per_client() -> usize {
    50
}
fn default_batch_size() -> usize {
    8
}
fn default_lambda() -> f64 {
    0.1
}

/// Fully resolved scenario in SI units, ready for world building.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub replications: usize,
    pub area_width: f64,
    pub area_height: f64,
    pub n_blocks: usize,
    pub clients_per_block: usize,
    pub radio: RadioParams,
    pub profiles: Vec<TransporterProfile>,
    pub mode: SimMode,
    pub slot_duration: f64,
    pub total_slots: usize,
    pub tsp_method: TspMethod,
    pub restarts: usize,
    pub cost: CostKind,
    pub gibbs_iterations: usize,
    pub gibbs_chains: usize,
    pub q0: f64,
    pub decay: Option<f64>,
    pub task_kind: TaskKind,
    pub dimension: usize,
    pub sigma: f64,
    pub clip_g: f64,
    pub partition: PartitionScheme,
    pub eta: Option<f64>,
    pub samples_per_client: usize,
    pub batch_size: usize,
    pub lambda: f64,
}

impl Scenario {
    pub fn n_clients(&self) -> usize {
        self.n_blocks * self.clients_per_block
    }
}

impl ScenarioConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let radio = RadioParams {
            power: self.radio.power.0,
            bandwidth: self.radio.bandwidth.0,
            noise_density: self.radio.noise_density.0,
            beta0: self.radio.beta0,
            altitude: self.radio.altitude.0,
            model_bits: self.radio.model_size.0,
            rate_override: self.radio.rate.map(|q| q.0),
        };
        radio.validate()?;
        let prop = PropulsionParams::calibrated(
            self.fleet.slf_power.0,
            self.fleet.parasitic_share,
            self.fleet.hover_power.0,
            self.fleet.speed.0,
        )?;
        let budgets: Vec<f64> = match (&self.fleet.budget, &self.fleet.budgets) {
            (Some(b), None) => vec![b.0; self.fleet.transporters],
            (None, Some(list)) => {
                if list.len() != self.fleet.transporters {
                    return Err(Error::Config("budgets list must match transporter count".into()));
                }
                list.iter().map(|q| q.0).collect()
            }
            _ => return Err(Error::Config("set exactly one of fleet.budget / fleet.budgets".into())),
        };
        let profiles = budgets
            .into_iter()
            .map(|budget| TransporterProfile { propulsion: prop.clone(), budget })
            .collect();
        let partition = match self.task.partition {
            PartitionKind::Iid => PartitionScheme::Iid,
            PartitionKind::Dirichlet => PartitionScheme::Dirichlet {
                alpha: self
                    .task
                    .alpha
                    .ok_or_else(|| Error::Config("dirichlet partition needs task.alpha".into()))?,
            },
            PartitionKind::Location => PartitionScheme::Location {
                p_main: self
                    .task
                    .p_main
                    .ok_or_else(|| Error::Config("location partition needs task.p_main".into()))?,
            },
        };
        if self.schedule.total_slots == 0 {
            return Err(Error::Config("schedule.total_slots must be positive".into()));
        }
        if self.area.blocks == 0 || self.area.clients_per_block == 0 {
            return Err(Error::Config("area needs at least one block and one client".into()));
        }
        Ok(Scenario {
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            replications: self.scenario.replications.max(1),
            area_width: self.area.width.0,
            area_height: self.area.height.0,
            n_blocks: self.area.blocks,
            clients_per_block: self.area.clients_per_block,
            radio,
            profiles,
            mode: self.schedule.mode,
            slot_duration: self.schedule.slot.0,
            total_slots: self.schedule.total_slots,
            tsp_method: self.routing.method,
            restarts: self.routing.restarts,
            cost: self.optimizer.cost,
            gibbs_iterations: self.optimizer.iterations,
            gibbs_chains: self.optimizer.chains,
            q0: self.optimizer.q0,
            decay: self.optimizer.decay,
            task_kind: self.task.kind,
            dimension: self.task.dimension,
            sigma: self.task.sigma,
            clip_g: self.task.clip_g,
            partition,
            eta: self.task.eta,
            samples_per_client: self.task.samples_per_client,
            batch_size: self.task.batch_size,
            lambda: self.task.lambda,
        })
    }
}
