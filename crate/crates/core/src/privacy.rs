//! Gaussian-mechanism calibration for uplink (client → ES) and downlink
//! (ES → clients) model exchanges, plus clipping and noise application.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid DP configuration: {0}")]
    Config(String),
    #[error("data size must be at least one sample")]
    EmptyData,
}

/// How exposure counts grow over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureMode {
    /// Counts restart every global round.
    #[default]
    PerRound,
    /// Counts accumulate over all rounds so far.
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Clipping threshold `W` on the L2 norm of a model.
    pub clip: f64,
    /// `C^n`
    pub client_exposures: f64,
    /// `C^k`
    pub es_exposures: f64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), DpError> {
        let bad = |m: String| Err(DpError::Config(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if !(self.client_exposures > 0.0 && self.es_exposures > 0.0) {
            return bad("exposure counts must be positive".into());
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        scaling_coefficient(self.delta)
    }
}

/// `c = sqrt(2 ln(1.25/δ))`
pub fn scaling_coefficient(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

/// Exposure counts `(C^n, C^k)` for global round `round` (0-based) with `tau`
/// edge iterations per round: one upload and one broadcast per edge iteration.
pub fn exposure_counts(mode: ExposureMode, tau: u32, round: usize) -> (f64, f64) {
    let per_round = tau as f64;
    match mode {
        ExposureMode::PerRound => (per_round, per_round),
        ExposureMode::Cumulative => {
            let c = per_round * (round + 1) as f64;
            (c, c)
        }
    }
}

/// `σ_up = c C^n (2W/D_n) / ε`
pub fn uplink_sigma(cfg: &DpConfig, data_size: f64) -> Result<f64, DpError> {
    cfg.validate()?;
    if !(data_size >= 1.0) {
        return Err(DpError::EmptyData);
    }
    Ok(cfg.scaling() * cfg.client_exposures * 2.0 * cfg.clip / (data_size * cfg.epsilon))
}

/// `(Q, σ_down)` for an ES whose cluster has the given data sizes.
pub fn downlink_sigma(cfg: &DpConfig, data_sizes: &[f64]) -> Result<(f64, f64), DpError> {
    cfg.validate()?;
    if data_sizes.is_empty() || data_sizes.iter().any(|&d| !(d >= 1.0)) {
        return Err(DpError::EmptyData);
    }
    let m = data_sizes.len() as f64;
    let total: f64 = data_sizes.iter().sum();
    let own: f64 = data_sizes
        .iter()
        .map(|d| (cfg.client_exposures / d).powi(2))
        .sum();
    let q = (cfg.es_exposures / total).powi(2) - own / (m * m);
    let sigma = if q > 0.0 {
        2.0 * cfg.scaling() * cfg.clip * q.sqrt() / cfg.epsilon
    } else {
        0.0
    };
    Ok((q, sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub sigma_up: Vec<f64>,
    pub sigma_down: f64,
    pub q: f64,
}

/// Noise scales for one ES cluster.
pub fn noise_record(cfg: &DpConfig, data_sizes: &[f64]) -> Result<NoiseRecord, DpError> {
    let (q, sigma_down) = downlink_sigma(cfg, data_sizes)?;
    Ok(NoiseRecord {
        sigma_up: data_sizes
            .iter()
            .map(|&d| uplink_sigma(cfg, d))
            .collect::<Result<_, _>>()?,
        sigma_down,
        q,
    })
}

/// Scale `model` into the L2 ball of radius `clip`, then add i.i.d. `N(0, σ²)`.
pub fn clip_and_noise<R: Rng + ?Sized>(model: &mut [f64], sigma: f64, clip: f64, rng: &mut R) {
    let norm = model.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > clip {
        let s = clip / norm;
        model.iter_mut().for_each(|x| *x *= s);
    }
    if sigma > 0.0 {
        for x in model.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += sigma * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn cfg(eps: f64, delta: f64) -> DpConfig {
        DpConfig {
            epsilon: eps,
            delta,
            clip: 1.0,
            client_exposures: 1.0,
            es_exposures: 1.0,
        }
    }

    #[test]
    fn unit_values() {
        assert!((scaling_coefficient(0.01) - 3.1075).abs() < 1e-4);
        let s = uplink_sigma(&cfg(1.0, 0.01), 100.0).unwrap();
        assert!((s - 0.062149).abs() < 1e-5);
    }

    #[test]
    fn uplink_halves_when_budget_doubles() {
        let a = uplink_sigma(&cfg(1.0, 0.01), 80.0).unwrap();
        let b = uplink_sigma(&cfg(2.0, 0.01), 80.0).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-15);
    }

    #[test]
    fn single_client_has_no_downlink_noise() {
        let (q, s) = downlink_sigma(&cfg(1.0, 0.01), &[137.0]).unwrap();
        assert!(q.abs() < 1e-18);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn two_equal_clients() {
        let (q, s) = downlink_sigma(&cfg(1.0, 0.01), &[100.0, 100.0]).unwrap();
        assert!((q - (25e-6 - 50e-6)).abs() < 1e-18);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn composition_identity() {
        let mut c = cfg(3.0, 1e-5);
        c.es_exposures = 10.0;
        let sizes = [120.0, 45.0, 300.0];
        let rec = noise_record(&c, &sizes).unwrap();
        assert!(rec.q > 0.0);
        let m = sizes.len() as f64;
        let lhs = rec.sigma_down.powi(2) + rec.sigma_up.iter().map(|s| s * s).sum::<f64>() / (m * m);
        let total: f64 = sizes.iter().sum();
        let rhs = (c.scaling() * c.es_exposures * 2.0 * c.clip / total / c.epsilon).powi(2);
        assert!((lhs - rhs).abs() <= 1e-10 * rhs);
    }

    #[test]
    fn invalid_configs() {
        assert!(uplink_sigma(&cfg(0.0, 0.01), 10.0).is_err());
        assert!(uplink_sigma(&cfg(1.0, 1.0), 10.0).is_err());
        assert_eq!(uplink_sigma(&cfg(1.0, 0.01), 0.0), Err(DpError::EmptyData));
        assert_eq!(downlink_sigma(&cfg(1.0, 0.01), &[]), Err(DpError::EmptyData));
    }

    #[test]
    fn exposure_modes() {
        assert_eq!(exposure_counts(ExposureMode::PerRound, 3, 7), (3.0, 3.0));
        assert_eq!(exposure_counts(ExposureMode::Cumulative, 3, 7), (24.0, 24.0));
    }

    #[test]
    fn clipping_only() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut v = vec![0.3, -0.4];
        clip_and_noise(&mut v, 0.0, 1.0, &mut rng);
        assert_eq!(v, vec![0.3, -0.4]);
        let mut w = vec![1.2, -1.6];
        clip_and_noise(&mut w, 0.0, 1.0, &mut rng);
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noise_std_matches() {
        let mut rng = SimRng::seed_from_u64(11);
        let mut v = vec![0.0; 100_000];
        clip_and_noise(&mut v, 0.1, 1.0, &mut rng);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.002);
    }

    #[test]
    fn noise_is_reproducible() {
        let run = || {
            let mut rng = SimRng::seed_from_u64(99);
            let mut v = vec![0.5; 16];
            clip_and_noise(&mut v, 0.3, 1.0, &mut rng);
            v
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn downlink_continuous_and_nonnegative(
            sizes in proptest::collection::vec(1.0f64..500.0, 1..6),
            ck in 0.1f64..50.0,
        ) {
            let mut c = cfg(2.0, 1e-3);
            c.es_exposures = ck;
            let (q, s) = downlink_sigma(&c, &sizes).unwrap();
            prop_assert!(s >= 0.0);
            prop_assert_eq!(s == 0.0, q <= 0.0);
            if q > 0.0 {
                let m = sizes.len() as f64;
                let up: f64 = sizes.iter().map(|&d| uplink_sigma(&c, d).unwrap().powi(2)).sum();
                let total: f64 = sizes.iter().sum();
                let rhs = (c.scaling() * ck * 2.0 / total / c.epsilon).powi(2);
                prop_assert!((s * s + up / (m * m) - rhs).abs() <= 1e-10 * rhs);
            }
        }
    }
}
