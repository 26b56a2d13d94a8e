//! Latency and energy of local computation and uplink transmission.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("CPU frequency {freq} Hz outside [{min}, {max}]")]
    FrequencyOutOfBounds { freq: f64, min: f64, max: f64 },
    #[error("bandwidth must be positive, got {0} Hz")]
    NonPositiveBandwidth(f64),
    #[error("invalid link parameter: {0}")]
    Link(String),
    #[error("link rate is zero; cannot transmit {0} bits")]
    InfeasibleLink(f64),
}

/// Radio and compute characteristics of one client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientRadioCompute {
    /// `p_n`, W
    pub tx_power: f64,
    /// `f_n`, GHz
    pub carrier_ghz: f64,
    /// `C`, cycles per sample per iteration
    pub cycles_per_sample: f64,
    /// `λ_n`
    pub local_iters: u32,
    /// `α`
    pub capacitance: f64,
    pub cpu_min: f64,
    pub cpu_max: f64,
    /// `z`
    pub model_bits: f64,
}

impl ClientRadioCompute {
    /// `X_n = λ_n C D_n`, cycles per edge iteration.
    pub fn workload(&self, data_size: f64) -> f64 {
        self.local_iters as f64 * self.cycles_per_sample * data_size
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub t_cmp: f64,
    pub t_com: f64,
    pub e_cmp: f64,
    pub e_com: f64,
}

impl CostBreakdown {
    pub fn latency(&self) -> f64 {
        self.t_cmp + self.t_com
    }

    pub fn energy(&self) -> f64 {
        self.e_cmp + self.e_com
    }
}

/// `(t_cmp, e_cmp)` for `λ_n` local iterations at CPU frequency `cpu_freq`.
pub fn compute_cost(
    data_size: f64,
    cpu_freq: f64,
    params: &ClientRadioCompute,
) -> Result<(f64, f64), CostError> {
    let slack = 1e-9 * params.cpu_max;
    if !(cpu_freq >= params.cpu_min - slack && cpu_freq <= params.cpu_max + slack) {
        return Err(CostError::FrequencyOutOfBounds {
            freq: cpu_freq,
            min: params.cpu_min,
            max: params.cpu_max,
        });
    }
    let cycles = params.workload(data_size);
    Ok((
        cycles / cpu_freq,
        0.5 * params.capacitance * cycles * cpu_freq * cpu_freq,
    ))
}

/// `B log2(1 + snr_scale / B)` where `snr_scale = h p / N0` (Hz).
pub(crate) fn shannon_rate(bandwidth: f64, snr_scale: f64) -> f64 {
    bandwidth * (snr_scale / bandwidth).ln_1p() / LN_2
}

/// Shannon rate in bit/s over an FDMA share of `bandwidth` Hz.
pub fn comm_rate(bandwidth: f64, gain: f64, power: f64, n0: f64) -> Result<f64, CostError> {
    if !(bandwidth > 0.0) {
        return Err(CostError::NonPositiveBandwidth(bandwidth));
    }
    if !(gain > 0.0 && power >= 0.0 && n0 > 0.0) {
        return Err(CostError::Link(format!(
            "need h > 0, p >= 0, N0 > 0 (h={gain}, p={power}, N0={n0})"
        )));
    }
    Ok(shannon_rate(bandwidth, gain * power / n0))
}

/// `(t_com, e_com)` for uploading `bits`.
pub fn comm_cost(
    bits: f64,
    bandwidth: f64,
    gain: f64,
    power: f64,
    n0: f64,
) -> Result<(f64, f64), CostError> {
    let rate = comm_rate(bandwidth, gain, power, n0)?;
    if bits == 0.0 {
        return Ok((0.0, 0.0));
    }
    if rate <= 0.0 {
        return Err(CostError::InfeasibleLink(bits));
    }
    let t = bits / rate;
    Ok((t, power * t))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTotals {
    /// `t_total`, s
    pub latency: f64,
    /// `E_total`, J
    pub energy: f64,
}

/// Slowest client's `τ(t_cmp + t_com)` and the `τ`-scaled energy sum.
pub fn round_totals(per_client: &[CostBreakdown], tau: u32) -> RoundTotals {
    let tau = tau as f64;
    RoundTotals {
        latency: per_client
            .iter()
            .map(|c| tau * c.latency())
            .fold(0.0, f64::max),
        energy: tau * per_client.iter().map(CostBreakdown::energy).sum::<f64>(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub data_size: f64,
    pub local_iters: u32,
    pub tx_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub tau: u32,
    pub t0: f64,
    pub cpu_max: f64,
    pub cycles_per_sample: f64,
    pub capacitance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBound {
    /// `B_S`, J
    pub bound: f64,
    /// Positions in the input whose compute time at `ν_max` already exceeds `t0`;
    /// the bound says nothing useful about them.
    pub infeasible: Vec<usize>,
}

/// Upper bound on the optimal round energy of a selection: every client at
/// `ν_max` and transmitting for the whole remaining latency budget.
pub fn energy_upper_bound(terms: &[BoundTerm], p: &BoundParams) -> EnergyBound {
    let mut infeasible = Vec::new();
    let mut sum = 0.0;
    for (i, t) in terms.iter().enumerate() {
        let cycles = t.local_iters as f64 * p.cycles_per_sample * t.data_size;
        let t_cmp = cycles / p.cpu_max;
        if t_cmp > p.t0 {
            infeasible.push(i);
        }
        sum += 0.5 * p.capacitance * cycles * p.cpu_max * p.cpu_max + t.tx_power * (p.t0 - t_cmp);
    }
    EnergyBound {
        bound: p.tau as f64 * sum,
        infeasible,
    }
}

/// `λ_n = max(1, round(λ0 · D_n / mean D))`.
pub fn local_iterations(data_size: f64, mean_data_size: f64, lambda0: f64) -> u32 {
    ((lambda0 * data_size / mean_data_size).round() as u32).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_client() -> ClientRadioCompute {
        ClientRadioCompute {
            tx_power: 0.5,
            carrier_ghz: 2.0,
            cycles_per_sample: 90822.0,
            local_iters: 5,
            capacitance: 2e-28,
            cpu_min: 1e9,
            cpu_max: 1e10,
            model_bits: 1e4,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn compute_cost_by_hand() {
        // 5 * 90822 * 500 = 227_055_000 cycles
        let (t, e) = compute_cost(500.0, 2e9, &table_client()).unwrap();
        assert!(rel(t, 0.1135275) < 1e-6, "{t}");
        // 1e-28 * 227_055_000 * 4e18
        assert!(rel(e, 0.090822) < 1e-6, "{e}");
        let idle = ClientRadioCompute {
            local_iters: 0,
            ..table_client()
        };
        assert_eq!(compute_cost(500.0, 2e9, &idle).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn compute_cost_rejects_out_of_range_frequency() {
        assert!(matches!(
            compute_cost(10.0, 5e8, &table_client()),
            Err(CostError::FrequencyOutOfBounds { .. })
        ));
        assert!(compute_cost(10.0, 2e10, &table_client()).is_err());
    }

    #[test]
    fn rate_by_hand() {
        // SNR = 1e-12 * 0.5 / (1e6 * 4e-21) = 125, log2(126) = 6.97728...
        let r = comm_rate(1e6, 1e-12, 0.5, 4e-21).unwrap();
        assert!(rel(r, 1e6 * 126f64.log2()) < 1e-12);
        assert!(rel(r, 6.977e6) < 1e-4);
        assert_eq!(comm_rate(1e6, 1e-12, 0.0, 4e-21).unwrap(), 0.0);
        assert!(matches!(comm_rate(0.0, 1e-12, 0.5, 4e-21), Err(CostError::NonPositiveBandwidth(_))));
    }

    #[test]
    fn rate_increases_with_bandwidth() {
        let mut prev = 0.0;
        for k in 1..200 {
            let r = comm_rate(k as f64 * 5e4, 1e-13, 0.3, 4e-21).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn comm_cost_cancels() {
        let rate = comm_rate(1e6, 1e-12, 0.5, 4e-21).unwrap();
        let (t, e) = comm_cost(rate, 1e6, 1e-12, 0.5, 4e-21).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!((e - 0.5).abs() < 1e-12);
        assert_eq!(comm_cost(0.0, 1e6, 1e-12, 0.5, 4e-21).unwrap(), (0.0, 0.0));
        let (t2, e2) = comm_cost(rate / 2.0, 1e6, 1e-12, 0.5, 4e-21).unwrap();
        assert!((t2 - 0.5).abs() < 1e-12 && (e2 - 0.25).abs() < 1e-12);
        assert_eq!(
            comm_cost(10.0, 1e6, 1e-12, 0.0, 4e-21),
            Err(CostError::InfeasibleLink(10.0))
        );
    }

    #[test]
    fn time_rate_identity() {
        for &(b, h, p) in &[(1e5, 1e-11, 0.1), (3e6, 2e-13, 0.9), (7e4, 5e-14, 0.4)] {
            let z = 123_456.0;
            let (t, _) = comm_cost(z, b, h, p, 4e-21).unwrap();
            assert!(rel(t * comm_rate(b, h, p, 4e-21).unwrap(), z) < 1e-12);
        }
    }

    #[test]
    fn totals() {
        let one = CostBreakdown {
            t_cmp: 0.1,
            t_com: 0.05,
            e_cmp: 0.15,
            e_com: 0.05,
        };
        let r = round_totals(&[one], 1);
        assert!((r.latency - 0.15).abs() < 1e-15 && (r.energy - 0.2).abs() < 1e-15);
        let r = round_totals(&[one, one], 2);
        assert!((r.latency - 0.3).abs() < 1e-15 && (r.energy - 0.8).abs() < 1e-15);
        let slow = CostBreakdown { t_cmp: 0.4, ..one };
        let a = round_totals(&[one, slow, one], 3);
        let b = round_totals(&[slow, one, one], 3);
        assert_eq!(a, b);
        assert!((a.latency - 3.0 * 0.45).abs() < 1e-12);
        assert_eq!(round_totals(&[], 4), RoundTotals::default());
    }

    #[test]
    fn bound_by_hand() {
        let p = BoundParams {
            tau: 2,
            t0: 0.2,
            cpu_max: 1e10,
            cycles_per_sample: 90822.0,
            capacitance: 2e-28,
        };
        assert_eq!(energy_upper_bound(&[], &p).bound, 0.0);
        let term = BoundTerm {
            data_size: 500.0,
            local_iters: 5,
            tx_power: 0.5,
        };
        // cycles = 227_055_000
        // compute: 1e-28 * 227_055_000 * 1e20 = 2.27055 J
        // t_cmp(ν_max) = 0.0227055 s, comm: 0.5 * (0.2 - 0.0227055) = 0.08864725 J
        let b = energy_upper_bound(&[term], &p);
        assert!(rel(b.bound, 2.0 * (2.27055 + 0.08864725)) < 1e-12, "{}", b.bound);
        assert!(b.infeasible.is_empty());
        let huge = BoundTerm {
            data_size: 1e5,
            ..term
        };
        assert_eq!(energy_upper_bound(&[term, huge], &p).infeasible, vec![1]);
    }

    #[test]
    fn iterations_follow_data_size() {
        assert_eq!(local_iterations(100.0, 100.0, 5.0), 5);
        assert_eq!(local_iterations(200.0, 100.0, 5.0), 10);
        assert_eq!(local_iterations(1.0, 100.0, 5.0), 1);
        assert_eq!(local_iterations(130.0, 100.0, 5.0), 7);
    }
}
