//! Communication and propulsion energy model for the transporters.
//!
//! A round trip of transporter k costs transmission energy (broadcasting the
//! model to each of its R_k clients), straight-and-level-flight energy over
//! the tour, and hover energy while transmitting. All quantities are SI
//! (W, J, s, m, bits).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Link-budget parameters of the transporter-client radio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadioParams {
    /// Transmit power p (W), shared by all transporters.
    pub power: f64,
    /// Bandwidth B (Hz).
    pub bandwidth: f64,
    /// Noise power spectral density N0 (W/Hz).
    pub noise_density: f64,
    /// Reference channel power beta0 at 1 m (dimensionless).
    pub beta0: f64,
    /// Flight/hover altitude H (m); the transmission distance.
    pub altitude: f64,
    /// Model transmission size S (bits).
    pub model_bits: f64,
    /// When set, bypasses the channel-capacity formula with a fixed rate
    /// (bits/s). The default scenario instead picks link parameters that
    /// evaluate to the same figure.
    pub rate_override: Option<f64>,
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("power", self.power),
            ("bandwidth", self.bandwidth),
            ("noise_density", self.noise_density),
            ("beta0", self.beta0),
            ("altitude", self.altitude),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("radio {name} must be strictly positive")));
            }
        }
        if !(self.model_bits >= 0.0) {
            return Err(Error::invalid("model_bits must be non-negative"));
        }
        if let Some(r) = self.rate_override {
            if !(r > 0.0) {
                return Err(Error::invalid("rate_override must be strictly positive"));
            }
        }
        Ok(())
    }
}

/// Propulsion constants of a transporter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropulsionParams {
    /// Parasitic-power coefficient c1 (W s^3 / m^3).
    pub c1: f64,
    /// Induced-power coefficient c2 (W m / s).
    pub c2: f64,
    /// Hover power (W).
    pub hover_power: f64,
    /// Cruise speed V (m/s).
    pub speed: f64,
}

impl PropulsionParams {
    pub fn new(c1: f64, c2: f64, hover_power: f64, speed: f64) -> Result<Self> {
        for (name, v) in [("c1", c1), ("c2", c2), ("hover_power", hover_power), ("speed", speed)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("propulsion {name} must be strictly positive")));
            }
        }
        Ok(PropulsionParams { c1, c2, hover_power, speed })
    }

    /// Calibrates c1 and c2 so that level-flight power equals `slf_power`
    /// at `speed`, split `parasitic_share` : (1 - parasitic_share).
    pub fn calibrated(slf_power: f64, parasitic_share: f64, hover_power: f64, speed: f64) -> Result<Self> {
        if !(parasitic_share > 0.0 && parasitic_share < 1.0) {
            return Err(Error::invalid("parasitic_share must be in (0, 1)"));
        }
        let c1 = slf_power * parasitic_share / speed.powi(3);
        let c2 = slf_power * (1.0 - parasitic_share) * speed;
        PropulsionParams::new(c1, c2, hover_power, speed)
    }

    /// Level-flight power c1 V^3 + c2 / V at this transporter's speed.
    pub fn slf_power(&self) -> f64 {
        self.c1 * self.speed.powi(3) + self.c2 / self.speed
    }
}

/// Per-tour energy ledger checked against the battery budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_trans: f64,
    pub e_slf: f64,
    pub e_hover: f64,
    pub e_prop: f64,
    pub e_total: f64,
    pub budget: f64,
    pub feasible: bool,
}

/// Shannon-capacity transmission rate (bits/s), or the fixed override.
pub fn transmission_rate(radio: &RadioParams) -> f64 {
    if let Some(r) = radio.rate_override {
        return r;
    }
    let h = radio.beta0 / (radio.altitude * radio.altitude);
    radio.bandwidth * (1.0 + h * radio.power / (radio.bandwidth * radio.noise_density)).log2()
}

/// Time to push one model copy over the link (s).
pub fn transmission_time(radio: &RadioParams) -> f64 {
    if radio.model_bits == 0.0 {
        return 0.0;
    }
    radio.model_bits / transmission_rate(radio)
}

/// Energy to broadcast the model to each of `r_k` clients in one tour (J).
pub fn transmission_energy(radio: &RadioParams, r_k: usize) -> f64 {
    radio.power * transmission_time(radio) * r_k as f64
}

/// Straight-and-level-flight energy over a tour of `tour_length` meters (J).
pub fn slf_energy(prop: &PropulsionParams, tour_length: f64) -> f64 {
    slf_time(prop, tour_length) * prop.slf_power()
}

/// Time spent in level flight over a tour of `tour_length` meters (s).
pub fn slf_time(prop: &PropulsionParams, tour_length: f64) -> f64 {
    tour_length / prop.speed
}

/// Hover energy while transmitting to `r_k` clients (J).
pub fn hover_energy(prop: &PropulsionParams, t_trans: f64, r_k: usize) -> f64 {
    r_k as f64 * t_trans * prop.hover_power
}

/// Full per-tour ledger with the budget feasibility flag.
pub fn tour_energy_report(
    radio: &RadioParams,
    prop: &PropulsionParams,
    tour_length: f64,
    r_k: usize,
    budget: f64,
) -> EnergyReport {
    let t_trans = transmission_time(radio);
    let e_trans = transmission_energy(radio, r_k);
    let e_slf = slf_energy(prop, tour_length);
    let e_hover = hover_energy(prop, t_trans, r_k);
    let e_prop = e_slf + e_hover;
    let e_total = e_prop + e_trans;
    EnergyReport { e_trans, e_slf, e_hover, e_prop, e_total, budget, feasible: e_total <= budget }
}

/// Converts a dBm figure to watts (20 dBm = 0.1 W).
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Link parameters that evaluate to exactly 50 Mbit/s through the capacity
/// formula (SNR = 1 at 1 km altitude), with a 100 MB model.
pub fn reference_radio() -> RadioParams {
    RadioParams {
        power: dbm_to_watts(20.0),
        bandwidth: 50e6,
        noise_density: 1e-20,
        beta0: 5e-6,
        altitude: 1000.0,
        model_bits: 8e8,
        rate_override: None,
    }
}

/// Propulsion constants calibrated to 30 W level flight at 10 m/s (split
/// evenly between parasitic and induced power) and 20 W hover.
pub fn reference_propulsion() -> PropulsionParams {
    PropulsionParams::calibrated(30.0, 0.5, 20.0, 10.0).expect("reference constants are positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_radio() -> RadioParams {
        reference_radio()
    }

    fn default_prop() -> PropulsionParams {
        reference_propulsion()
    }

    #[test]
    fn rate_matches_default_scenario() {
        let radio = default_radio();
        radio.validate().unwrap();
        let r = transmission_rate(&radio);
        assert!((r - 50e6).abs() / 50e6 < 1e-12, "rate {r}");
        // 100 MB at 50 Mbit/s is 16 s.
        assert!((transmission_time(&radio) - 16.0).abs() < 1e-9);
    }

    #[test]
    fn rate_vanishes_with_power() {
        let mut radio = default_radio();
        radio.power = 1e-18;
        assert!(transmission_rate(&radio) < 1e-3);
    }

    #[test]
    fn rate_sublinear_in_bandwidth_at_high_snr() {
        let mut radio = default_radio();
        radio.power = 1e3; // push SNR far above 1
        let r1 = transmission_rate(&radio);
        radio.bandwidth *= 2.0;
        let r2 = transmission_rate(&radio);
        assert!(r2 > r1);
        assert!(r2 < 2.0 * r1);
    }

    #[test]
    fn rate_monotonicity() {
        let base = default_radio();
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let scale = 1.0 + 4.0 * next();
            let mut up = base.clone();
            up.power = base.power * scale;
            assert!(transmission_rate(&up) > transmission_rate(&base));
            let mut b0 = base.clone();
            b0.beta0 = base.beta0 * scale;
            assert!(transmission_rate(&b0) > transmission_rate(&base));
            let mut alt = base.clone();
            alt.altitude = base.altitude * scale;
            assert!(transmission_rate(&alt) < transmission_rate(&base));
        }
    }

    #[test]
    fn transmission_time_linear_in_size() {
        let radio = default_radio();
        let mut half = radio.clone();
        half.model_bits /= 2.0;
        assert!((transmission_time(&half) - transmission_time(&radio) / 2.0).abs() < 1e-12);
        let mut zero = radio;
        zero.model_bits = 0.0;
        assert_eq!(transmission_time(&zero), 0.0);
    }

    #[test]
    fn transmission_energy_examples() {
        let radio = default_radio();
        assert_eq!(transmission_energy(&radio, 0), 0.0);
        // p = 0.1 W, T_trans = 16 s, R_k = 10 -> 16 J.
        let e10 = transmission_energy(&radio, 10);
        assert!((e10 - 16.0).abs() < 1e-9);
        let e1 = transmission_energy(&radio, 1);
        assert!((e10 - 10.0 * e1).abs() < 1e-9);
    }

    #[test]
    fn slf_energy_examples() {
        let prop = default_prop();
        assert_eq!(slf_energy(&prop, 0.0), 0.0);
        assert!((prop.slf_power() - 30.0).abs() < 1e-12);
        // 6 km at 10 m/s: 600 s at 30 W = 18 kJ.
        assert!((slf_time(&prop, 6000.0) - 600.0).abs() < 1e-12);
        assert!((slf_energy(&prop, 6000.0) - 18_000.0).abs() < 1e-9);
    }

    #[test]
    fn slf_power_interior_minimum() {
        let prop = default_prop();
        let v_star = (prop.c2 / (3.0 * prop.c1)).powf(0.25);
        let power_at = |v: f64| prop.c1 * v.powi(3) + prop.c2 / v;
        let p_star = power_at(v_star);
        // Grid search confirms the calculus optimum.
        let mut best = f64::INFINITY;
        let mut best_v = 0.0;
        for i in 1..4000 {
            let v = i as f64 * 0.01;
            let p = power_at(v);
            if p < best {
                best = p;
                best_v = v;
            }
        }
        assert!((best_v - v_star).abs() < 0.02, "grid {best_v} vs analytic {v_star}");
        assert!(p_star <= best + 1e-9);
    }

    #[test]
    fn hover_energy_examples() {
        let prop = default_prop();
        assert!((hover_energy(&prop, 16.0, 10) - 3200.0).abs() < 1e-9);
        assert_eq!(hover_energy(&prop, 16.0, 0), 0.0);
        let mut double = prop.clone();
        double.hover_power *= 2.0;
        assert!((hover_energy(&double, 16.0, 10) - 6400.0).abs() < 1e-9);
    }

    #[test]
    fn report_composes_components() {
        let radio = default_radio();
        let prop = default_prop();
        let rep = tour_energy_report(&radio, &prop, 6000.0, 10, f64::INFINITY);
        assert!(rep.feasible);
        assert!((rep.e_trans - 16.0).abs() < 1e-9);
        assert!((rep.e_slf - 18_000.0).abs() < 1e-9);
        assert!((rep.e_hover - 3200.0).abs() < 1e-9);
        assert_eq!(rep.e_prop, rep.e_slf + rep.e_hover);
        assert_eq!(rep.e_total, rep.e_prop + rep.e_trans);
    }

    #[test]
    fn feasibility_flips_with_budget() {
        let radio = default_radio();
        let prop = default_prop();
        // ~13.1 kJ total: feasible at 15 kJ, not at 12 kJ.
        let tour_length = 3300.0;
        let hi = tour_energy_report(&radio, &prop, tour_length, 10, 15_000.0);
        let lo = tour_energy_report(&radio, &prop, tour_length, 10, 12_000.0);
        assert!(hi.feasible);
        assert!(!lo.feasible);
        assert_eq!(hi.e_total, lo.e_total);
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(20.0) - 0.1).abs() < 1e-15);
        assert!((dbm_to_watts(0.0) - 0.001).abs() < 1e-18);
    }

    #[test]
    fn linearity_properties() {
        let radio = default_radio();
        let prop = default_prop();
        for r_k in 1..8usize {
            let e = transmission_energy(&radio, r_k);
            assert!((e - r_k as f64 * transmission_energy(&radio, 1)).abs() < 1e-9);
            let h = hover_energy(&prop, 16.0, r_k);
            assert!((h - r_k as f64 * hover_energy(&prop, 16.0, 1)).abs() < 1e-9);
        }
        for len in [1.0, 10.0, 123.4, 5000.0] {
            let e = slf_energy(&prop, len);
            assert!((e - len * slf_energy(&prop, 1.0)).abs() < 1e-8);
        }
    }
}
