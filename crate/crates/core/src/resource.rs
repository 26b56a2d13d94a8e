//! Per-ES resource allocation: CPU frequencies and FDMA bandwidth shares that
//! minimise the ES's round energy under the per-client latency budget.
//!
//! The program
//!
//! ```text
//! min  τ Σ (α/2 X_n ν_n² + p_n t_com,n(B_n))
//! s.t. X_n/ν_n + t_com,n(B_n) ≤ t0,  ν_min ≤ ν_n ≤ ν_max,  Σ B_n ≤ B_0
//! ```
//!
//! is convex. [`AoSolver`] solves its KKT system. The bandwidth price `μ` is
//! found by bisection on `Σ B_n(μ) = B_0`; at a given `μ` every client's
//! bandwidth comes from a 1-D monotone root find. Slack clients sit at `ν_min`.
//! Binding clients sit on their latency constraint with `θ_n = τ α ν_n³` (or
//! clamped at a frequency bound). The binding set is grown by the alternating
//! outer loop: start all-slack, move every slack client with `Γ_n ≥ 0` into the
//! binding set, re-solve, and stop when nobody moves. A client never leaves the
//! binding set, so the loop runs at most `m + 1` times.
//!
//! [`grid_oracle_p1`] is a brute-force check over a discretised feasible set.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::shannon_rate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum P1Error {
    #[error("invalid P1 instance: {0}")]
    InvalidInstance(String),
    #[error("client {client} cannot meet t0 even at ν_max with the whole ES bandwidth")]
    ClientInfeasible { client: usize },
    #[error("clients need {required:.6e} Hz at ν_max but the ES has {available:.6e} Hz")]
    BandwidthExhausted { required: f64, available: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("grid oracle supports at most {max} clients, got {got}")]
    TooLarge { max: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P1Client {
    /// `X_n = λ_n C D_n`, cycles
    pub workload: f64,
    /// `h_{n,k}`
    pub gain: f64,
    /// `p_n`, W
    pub tx_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Instance {
    pub clients: Vec<P1Client>,
    /// `B_0`, Hz
    pub bandwidth: f64,
    /// `N_0`, W/Hz
    pub n0: f64,
    /// latency budget per edge iteration, s
    pub t0: f64,
    pub tau: u32,
    pub cpu_min: f64,
    pub cpu_max: f64,
    /// `z`, bits
    pub model_bits: f64,
    /// `α`
    pub capacitance: f64,
}

/// `ln(1+s) - s/(1+s)`, accurate for small `s`.
fn log_gap(s: f64) -> f64 {
    if s < 1e-3 {
        // Σ_{k≥2} (-1)^k (k-1)/k s^k
        let s2 = s * s;
        s2 * (0.5 - s * (2.0 / 3.0 - s * (0.75 - s * 0.8)))
    } else {
        s.ln_1p() - s / (1.0 + s)
    }
}

/// Root of `g` on `[lo, hi]` (both positive), searched in `ln x` by the
/// Illinois false-position rule with a bisection fallback. `g(x) > 0` means
/// the root lies above `x`. Returns the final bracket.
fn log_root(lo: f64, hi: f64, rel_tol: f64, max_iter: usize, mut g: impl FnMut(f64) -> f64) -> (f64, f64) {
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let (mut ga, mut gb) = (g(lo), g(hi));
    if !(ga > 0.0) {
        return (lo, lo);
    }
    if gb > 0.0 {
        return (hi, hi);
    }
    let mut side = 0i8;
    for _ in 0..max_iter {
        if b - a <= rel_tol {
            break;
        }
        let mut u = if ga.is_finite() && gb.is_finite() && ga != gb {
            (a * gb - b * ga) / (gb - ga)
        } else {
            0.5 * (a + b)
        };
        if !(u > a && u < b) {
            u = 0.5 * (a + b);
        }
        let gu = g(u.exp());
        if gu > 0.0 {
            a = u;
            ga = gu;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else if gu < 0.0 || gu == 0.0 {
            b = u;
            gb = gu;
            if gu == 0.0 {
                a = u;
                break;
            }
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            // NaN: fall back to a plain bisection step on the left half
            b = u;
            gb = f64::NAN;
            side = 0;
        }
    }
    (a.exp(), b.exp())
}

const MAX_BISECT: usize = 200;
/// Relative search window for bandwidths around `B_0`.
const B_FLOOR: f64 = 1e-15;
const B_CEIL: f64 = 1e9;

impl P1Instance {
    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn validate(&self) -> Result<(), P1Error> {
        let bad = |msg: String| Err(P1Error::InvalidInstance(msg));
        if self.clients.is_empty() {
            return bad("no clients".into());
        }
        for (name, v) in [
            ("bandwidth", self.bandwidth),
            ("n0", self.n0),
            ("t0", self.t0),
            ("cpu_min", self.cpu_min),
            ("cpu_max", self.cpu_max),
            ("capacitance", self.capacitance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.model_bits.is_finite() && self.model_bits >= 0.0) {
            return bad(format!("model_bits must be nonnegative, got {}", self.model_bits));
        }
        if self.cpu_min > self.cpu_max {
            return bad("cpu_min > cpu_max".into());
        }
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        for (i, c) in self.clients.iter().enumerate() {
            if !(c.workload >= 0.0 && c.gain > 0.0 && c.tx_power > 0.0)
                || !(c.workload.is_finite() && c.gain.is_finite() && c.tx_power.is_finite())
            {
                return bad(format!("client {i} has non-positive workload, gain or power"));
            }
        }
        Ok(())
    }

    fn tau(&self) -> f64 {
        self.tau as f64
    }

    /// `h p / N_0`, Hz
    fn snr_scale(&self, i: usize) -> f64 {
        let c = &self.clients[i];
        c.gain * c.tx_power / self.n0
    }

    /// Upload time of client `i` over `b` Hz.
    pub fn comm_time(&self, i: usize, b: f64) -> f64 {
        if self.model_bits == 0.0 {
            return 0.0;
        }
        if b <= 0.0 {
            return f64::INFINITY;
        }
        self.model_bits / shannon_rate(b, self.snr_scale(i))
    }

    /// Infimum of the upload time as bandwidth grows without bound.
    fn comm_time_floor(&self, i: usize) -> f64 {
        self.model_bits * LN_2 / self.snr_scale(i)
    }

    /// `-d t_com / dB` (> 0, strictly decreasing in `b`).
    pub fn comm_time_slope(&self, i: usize, b: f64) -> f64 {
        let s = self.snr_scale(i) / b;
        let l = s.ln_1p();
        self.model_bits * LN_2 * log_gap(s) / (b * l * b * l)
    }

    /// `Γ_n = X_n/ν_n + t_com(B_n) - t0`.
    pub fn latency_slack(&self, i: usize, cpu_freq: f64, b: f64) -> f64 {
        self.clients[i].workload / cpu_freq + self.comm_time(i, b) - self.t0
    }

    /// `τ (α/2 X ν² + p t_com(B))` for one client.
    pub fn client_energy(&self, i: usize, cpu_freq: f64, b: f64) -> f64 {
        let c = &self.clients[i];
        self.tau()
            * (0.5 * self.capacitance * c.workload * cpu_freq * cpu_freq
                + c.tx_power * self.comm_time(i, b))
    }

    /// Objective `E_k` of an allocation.
    pub fn energy(&self, cpu_freqs: &[f64], bandwidths: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| self.client_energy(i, cpu_freqs[i], bandwidths[i]))
            .sum()
    }

    /// Smallest bandwidth with `t_com(B) ≤ target`; `None` if the target is at or
    /// below the infinite-bandwidth floor.
    pub fn bandwidth_for_comm_time(&self, i: usize, target: f64) -> Option<f64> {
        if self.model_bits == 0.0 {
            return Some(self.bandwidth * B_FLOOR);
        }
        if !(target > self.comm_time_floor(i)) {
            return None;
        }
        let mut hi = self.bandwidth;
        while self.comm_time(i, hi) > target {
            hi *= 1e3;
            if !hi.is_finite() {
                return None;
            }
        }
        let lo = self.bandwidth * B_FLOOR;
        if self.comm_time(i, lo) <= target {
            return Some(lo);
        }
        let (_, hi) = log_root(lo, hi, 1e-15, MAX_BISECT, |b| (self.comm_time(i, b) / target).ln());
        Some(hi)
    }

    /// Bandwidth solving the bandwidth stationarity condition
    /// `μ = (τ p + θ) φ(B)` for a given price and latency multiplier.
    /// Strictly decreasing in `mu`. Clamped to the search window.
    pub fn bandwidth_at_price(&self, i: usize, mu: f64, theta: f64) -> f64 {
        let target = mu / (self.tau() * self.clients[i].tx_power + theta);
        let (lo, hi) = (self.bandwidth * B_FLOOR, self.bandwidth * B_CEIL);
        if self.comm_time_slope(i, hi) >= target {
            return hi;
        }
        if self.comm_time_slope(i, lo) <= target {
            return lo;
        }
        let (lo, hi) = log_root(lo, hi, 1e-14, MAX_BISECT, |b| {
            (self.comm_time_slope(i, b) / target).ln()
        });
        (lo * hi).sqrt()
    }

    /// Per-client admissibility: bandwidth needed to meet `t0` at `ν_max`.
    fn min_bandwidths(&self) -> Result<Vec<f64>, P1Error> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let budget = self.t0 - self.clients[i].workload / self.cpu_max;
            if budget <= 0.0 || self.comm_time(i, self.bandwidth) > budget {
                return Err(P1Error::ClientInfeasible { client: i });
            }
            out.push(
                self.bandwidth_for_comm_time(i, budget)
                    .ok_or(P1Error::ClientInfeasible { client: i })?,
            );
        }
        let required: f64 = out.iter().sum();
        if required > self.bandwidth {
            return Err(P1Error::BandwidthExhausted {
                required,
                available: self.bandwidth,
            });
        }
        Ok(out)
    }

    /// Bandwidth split implied by the KKT system when every client is treated as
    /// latency-bound at the given frequencies (`θ_n = τ α ν_n³`). Returns the
    /// price and the split. Used to probe how `Γ` reacts to frequency changes.
    pub fn reallocate_bandwidth(&self, cpu_freqs: &[f64]) -> Result<(f64, Vec<f64>), P1Error> {
        let thetas: Vec<f64> = cpu_freqs
            .iter()
            .map(|&nu| self.tau() * self.capacitance * nu * nu * nu)
            .collect();
        let total = |mu: f64| -> f64 {
            (0..self.len())
                .map(|i| self.bandwidth_at_price(i, mu, thetas[i]))
                .sum()
        };
        let (lo, hi) = bracket_price(|mu| total(mu) > self.bandwidth)?;
        let (_, hi) = log_root(lo, hi, 1e-14, MAX_BISECT, |mu| (total(mu) / self.bandwidth).ln());
        let b = (0..self.len())
            .map(|i| self.bandwidth_at_price(i, hi, thetas[i]))
            .collect();
        Ok((hi, b))
    }
}

/// Expand `[1e-24, 1e6]` geometrically until `too_low(lo)` and `!too_low(hi)`.
fn bracket_price(mut too_low: impl FnMut(f64) -> bool) -> Result<(f64, f64), P1Error> {
    let (mut lo, mut hi) = (1e-24, 1e6);
    while !too_low(lo) {
        lo *= 1e-6;
        if lo < 1e-300 {
            return Err(P1Error::Numerical("bandwidth price has no lower bracket".into()));
        }
    }
    while too_low(hi) {
        hi *= 1e6;
        if hi > 1e300 {
            return Err(P1Error::Numerical("bandwidth price has no upper bracket".into()));
        }
    }
    Ok((lo, hi))
}

/// Which constraint pins a client's CPU frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyRegime {
    /// Latency constraint slack, `ν = ν_min`.
    Slack,
    /// Latency constraint binding, `ν_min < ν < ν_max`.
    Interior,
    /// Binding and held at `ν_min` (`γ ≥ 0`).
    AtMin,
    /// Binding and held at `ν_max` (`σ ≥ 0`).
    AtMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientAllocation {
    /// `ν*`, Hz
    pub cpu_freq: f64,
    /// `B*`, Hz
    pub bandwidth: f64,
    pub binding: bool,
    pub regime: FrequencyRegime,
    pub theta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub clients: Vec<ClientAllocation>,
    /// `μ_k`
    pub mu: f64,
    /// `E_k*`, J
    pub objective: f64,
    pub kkt_residual: f64,
    /// Outer alternating-optimization passes.
    pub ao_iterations: usize,
}

impl AllocationSolution {
    pub fn cpu_freqs(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.cpu_freq).collect()
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.bandwidth).collect()
    }
}

pub trait P1Solver: Sync {
    fn solve(&self, instance: &P1Instance) -> Result<AllocationSolution, P1Error>;
}

/// KKT-based alternating optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoSolver {
    pub tol: f64,
}

impl Default for AoSolver {
    fn default() -> Self {
        Self { tol: 1e-10 }
    }
}

impl P1Solver for AoSolver {
    fn solve(&self, instance: &P1Instance) -> Result<AllocationSolution, P1Error> {
        solve_p1(instance, self.tol)
    }
}

/// Exhaustive search on a `resolution`-step grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSolver {
    pub resolution: usize,
}

impl P1Solver for GridSolver {
    fn solve(&self, instance: &P1Instance) -> Result<AllocationSolution, P1Error> {
        grid_oracle_p1(instance, self.resolution)
    }
}

struct Fixed<'a> {
    inst: &'a P1Instance,
    binding: Vec<bool>,
    /// Bandwidth on the latency constraint at `ν_max` / `ν_min` (None: unbounded).
    b_at_max: &'a [f64],
    b_at_min: Vec<Option<f64>>,
    tol: f64,
}

impl Fixed<'_> {
    /// Optimal `(allocation)` of client `i` at price `mu` under its fixed class.
    fn client_at(&self, i: usize, mu: f64) -> ClientAllocation {
        let inst = self.inst;
        let tau = inst.tau();
        let x = inst.clients[i].workload;
        let tp = tau * inst.clients[i].tx_power;
        let talpha = tau * inst.capacitance;
        if !self.binding[i] {
            let nu = inst.cpu_min;
            return ClientAllocation {
                cpu_freq: nu,
                bandwidth: inst.bandwidth_at_price(i, mu, 0.0),
                binding: false,
                regime: FrequencyRegime::Slack,
                theta: 0.0,
                gamma: talpha * x * nu,
                sigma: 0.0,
            };
        }
        let nu_of = |b: f64| (x / (inst.t0 - inst.comm_time(i, b))).clamp(inst.cpu_min, inst.cpu_max);
        // h(B) = τα ν(B)³ + τp - μ/φ(B), strictly decreasing in B
        let h = |b: f64| {
            let nu = x / (inst.t0 - inst.comm_time(i, b));
            talpha * nu * nu * nu + tp - mu / inst.comm_time_slope(i, b)
        };
        let theta_at = |b: f64| mu / inst.comm_time_slope(i, b) - tp;

        let b_lo = self.b_at_max[i];
        if h(b_lo) <= 0.0 {
            let nu = inst.cpu_max;
            let theta = theta_at(b_lo);
            return ClientAllocation {
                cpu_freq: nu,
                bandwidth: b_lo,
                binding: true,
                regime: FrequencyRegime::AtMax,
                theta,
                gamma: 0.0,
                sigma: ((theta - talpha * nu * nu * nu) * x / (nu * nu)).max(0.0),
            };
        }
        let b_hi = match self.b_at_min[i] {
            Some(b) if h(b) >= 0.0 => {
                let nu = inst.cpu_min;
                let theta = theta_at(b);
                return ClientAllocation {
                    cpu_freq: nu,
                    bandwidth: b,
                    binding: true,
                    regime: FrequencyRegime::AtMin,
                    theta,
                    gamma: ((talpha * nu * nu * nu - theta) * x / (nu * nu)).max(0.0),
                    sigma: 0.0,
                };
            }
            Some(b) => b,
            None => {
                let mut hi = b_lo.max(inst.bandwidth);
                while h(hi) > 0.0 && hi < inst.bandwidth * B_CEIL {
                    hi *= 10.0;
                }
                hi
            }
        };
        let g = |b: f64| {
            let nu = x / (inst.t0 - inst.comm_time(i, b));
            ((talpha * nu * nu * nu + tp) * inst.comm_time_slope(i, b) / mu).ln()
        };
        let (lo, hi) = log_root(b_lo, b_hi, self.tol * 1e-3, MAX_BISECT, g);
        let b = (lo * hi).sqrt();
        ClientAllocation {
            cpu_freq: nu_of(b),
            bandwidth: b,
            binding: true,
            regime: FrequencyRegime::Interior,
            theta: theta_at(b).max(0.0),
            gamma: 0.0,
            sigma: 0.0,
        }
    }

    fn total(&self, mu: f64) -> f64 {
        (0..self.inst.len()).map(|i| self.client_at(i, mu).bandwidth).sum()
    }

    fn solve(&self) -> Result<(f64, Vec<ClientAllocation>), P1Error> {
        let b0 = self.inst.bandwidth;
        let (lo, hi) = bracket_price(|mu| self.total(mu) > b0)?;
        let (_, mu) = log_root(lo, hi, self.tol * 1e-3, MAX_BISECT, |mu| (self.total(mu) / b0).ln());
        let allocs: Vec<ClientAllocation> =
            (0..self.inst.len()).map(|i| self.client_at(i, mu)).collect();
        Ok((mu, allocs))
    }
}

/// Solve one ES's allocation problem to tolerance `tol`.
pub fn solve_p1(instance: &P1Instance, tol: f64) -> Result<AllocationSolution, P1Error> {
    instance.validate()?;
    if !(tol > 0.0) {
        return Err(P1Error::InvalidInstance(format!("tol must be positive, got {tol}")));
    }
    let b_at_max = instance.min_bandwidths()?;
    let b_at_min = (0..instance.len())
        .map(|i| {
            let budget = instance.t0 - instance.clients[i].workload / instance.cpu_min;
            if budget > 0.0 {
                instance.bandwidth_for_comm_time(i, budget)
            } else {
                None
            }
        })
        .collect();

    let m = instance.len();
    let mut fixed = Fixed {
        inst: instance,
        binding: vec![false; m],
        b_at_max: &b_at_max,
        b_at_min,
        tol,
    };
    let mut iterations = 0;
    let (mu, mut allocs) = loop {
        iterations += 1;
        let (mu, allocs) = fixed.solve()?;
        let violators: Vec<usize> = (0..m)
            .filter(|&i| !fixed.binding[i])
            .filter(|&i| instance.latency_slack(i, allocs[i].cpu_freq, allocs[i].bandwidth) >= 0.0)
            .collect();
        if violators.is_empty() {
            break (mu, allocs);
        }
        if iterations > m {
            return Err(P1Error::Numerical(
                "alternating optimization did not settle within m+1 passes".into(),
            ));
        }
        for i in violators {
            fixed.binding[i] = true;
        }
    };

    // Hand the sub-tolerance leftover to everyone proportionally; more bandwidth
    // only shortens uploads, so feasibility is kept.
    let used: f64 = allocs.iter().map(|a| a.bandwidth).sum();
    if used > instance.bandwidth * (1.0 + 1e-9) {
        return Err(P1Error::Numerical(format!(
            "bandwidth overshoot: {used} > {}",
            instance.bandwidth
        )));
    }
    let scale = instance.bandwidth / used;
    for (i, a) in allocs.iter_mut().enumerate() {
        a.bandwidth *= scale;
        if a.regime == FrequencyRegime::Interior {
            let nu = instance.clients[i].workload / (instance.t0 - instance.comm_time(i, a.bandwidth));
            a.cpu_freq = nu.clamp(instance.cpu_min, instance.cpu_max);
        }
    }

    let mut sol = AllocationSolution {
        objective: instance.energy(
            &allocs.iter().map(|a| a.cpu_freq).collect::<Vec<_>>(),
            &allocs.iter().map(|a| a.bandwidth).collect::<Vec<_>>(),
        ),
        clients: allocs,
        mu,
        kkt_residual: 0.0,
        ao_iterations: iterations,
    };
    sol.kkt_residual = kkt_residual(instance, &sol);
    Ok(sol)
}

/// Largest dimensionless violation of the KKT system: stationarity in `ν` and
/// `B`, primal and dual feasibility, and every complementary-slackness product.
pub fn kkt_residual(instance: &P1Instance, solution: &AllocationSolution) -> f64 {
    let tau = instance.tau();
    let mu = solution.mu;
    let mut worst: f64 = 0.0;
    let mut total_b = 0.0;
    for (i, a) in solution.clients.iter().enumerate() {
        let c = &instance.clients[i];
        let (nu, b) = (a.cpu_freq, a.bandwidth);
        if !(b > 0.0) {
            return f64::INFINITY;
        }
        total_b += b;
        let cmp_grad = tau * instance.capacitance * c.workload * nu;
        let lat_grad = a.theta * c.workload / (nu * nu);
        let stat_nu = (cmp_grad - a.gamma + a.sigma - lat_grad).abs()
            / (cmp_grad + a.gamma.abs() + a.sigma.abs() + lat_grad.abs());
        let implied_mu = (tau * c.tx_power + a.theta) * instance.comm_time_slope(i, b);
        let stat_b = (mu - implied_mu).abs() / mu.abs().max(implied_mu.abs());

        let gamma_lat = instance.latency_slack(i, nu, b);
        let primal = (gamma_lat.max(0.0) / instance.t0)
            .max((instance.cpu_min - nu).max(0.0) / instance.cpu_min)
            .max((nu - instance.cpu_max).max(0.0) / instance.cpu_max);
        let theta_scale = a.theta.abs() + tau * c.tx_power;
        let freq_scale = tau * instance.capacitance * c.workload * nu * nu;
        let dual = (-a.theta).max(0.0) / theta_scale
            + (-a.gamma).max(0.0) * nu / (freq_scale + a.gamma.abs() * nu)
            + (-a.sigma).max(0.0) * nu / (freq_scale + a.sigma.abs() * nu);
        let cs = (a.theta * gamma_lat.abs() / (theta_scale * instance.t0))
            .max(a.gamma.abs() * (nu - instance.cpu_min).abs() / (freq_scale + a.gamma.abs() * nu))
            .max(a.sigma.abs() * (instance.cpu_max - nu).abs() / (freq_scale + a.sigma.abs() * nu));
        worst = worst.max(stat_nu).max(stat_b).max(primal).max(dual).max(cs);
    }
    worst
        .max((total_b - instance.bandwidth).abs() / instance.bandwidth)
        .max((-mu).max(0.0))
}

/// Maximum number of clients the grid oracle accepts.
pub const GRID_MAX_CLIENTS: usize = 4;

/// Exhaustive search: bandwidth shares on the grid `B_0 k / r` (`Σ k = r`,
/// `k ≥ 1`) and frequencies on the grid `ν_min + j (ν_max - ν_min) / r`. For a
/// fixed share the energy is increasing in `ν`, so each client's best grid
/// frequency is the smallest one meeting `t0`.
pub fn grid_oracle_p1(instance: &P1Instance, resolution: usize) -> Result<AllocationSolution, P1Error> {
    instance.validate()?;
    let m = instance.len();
    if m > GRID_MAX_CLIENTS {
        return Err(P1Error::TooLarge {
            max: GRID_MAX_CLIENTS,
            got: m,
        });
    }
    let r = resolution.max(m);
    let step = (instance.cpu_max - instance.cpu_min) / r as f64;
    // table[i][k] = (energy, ν) at share k, or None when infeasible
    let table: Vec<Vec<Option<(f64, f64)>>> = (0..m)
        .map(|i| {
            (0..=r)
                .map(|k| {
                    if k == 0 {
                        return None;
                    }
                    let b = instance.bandwidth * k as f64 / r as f64;
                    let budget = instance.t0 - instance.comm_time(i, b);
                    if budget <= 0.0 {
                        return None;
                    }
                    let need = instance.clients[i].workload / budget;
                    let j = if need <= instance.cpu_min {
                        0
                    } else {
                        ((need - instance.cpu_min) / step).ceil() as usize
                    };
                    let nu = (0..2)
                        .map(|d| instance.cpu_min + (j + d) as f64 * step)
                        .find(|&nu| nu <= instance.cpu_max * (1.0 + 1e-12) && instance.latency_slack(i, nu, b) <= 0.0)?;
                    Some((instance.client_energy(i, nu, b), nu))
                })
                .collect()
        })
        .collect();

    struct Search<'t> {
        table: &'t [Vec<Option<(f64, f64)>>],
        r: usize,
        best: f64,
        best_k: Vec<usize>,
        cur: Vec<usize>,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize, left: usize, acc: f64) {
            let m = self.table.len();
            if acc >= self.best {
                return;
            }
            if i == m - 1 {
                if let Some((e, _)) = self.table[i][left] {
                    if acc + e < self.best {
                        self.best = acc + e;
                        self.cur[i] = left;
                        self.best_k.clone_from(&self.cur);
                    }
                }
                return;
            }
            let rest = m - 1 - i;
            for k in 1..=left.saturating_sub(rest) {
                if let Some((e, _)) = self.table[i][k] {
                    self.cur[i] = k;
                    self.go(i + 1, left - k, acc + e);
                }
            }
        }
    }
    let mut s = Search {
        table: &table,
        r,
        best: f64::INFINITY,
        best_k: vec![0; m],
        cur: vec![0; m],
    };
    s.go(0, r, 0.0);
    let _ = s.r;
    if !s.best.is_finite() {
        return Err(P1Error::ClientInfeasible {
            client: (0..m).find(|&i| table[i].iter().all(Option::is_none)).unwrap_or(0),
        });
    }
    let clients = s
        .best_k
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (_, nu) = table[i][k].expect("chosen grid point is feasible");
            let b = instance.bandwidth * k as f64 / r as f64;
            ClientAllocation {
                cpu_freq: nu,
                bandwidth: b,
                binding: instance.latency_slack(i, nu, b) > -1e-3 * instance.t0,
                regime: FrequencyRegime::Slack,
                theta: 0.0,
                gamma: 0.0,
                sigma: 0.0,
            }
        })
        .collect();
    let mut sol = AllocationSolution {
        clients,
        mu: 0.0,
        objective: s.best,
        kkt_residual: 0.0,
        ao_iterations: 0,
    };
    sol.kkt_residual = kkt_residual(instance, &sol);
    Ok(sol)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn base(clients: Vec<P1Client>, t0: f64) -> P1Instance {
        P1Instance {
            clients,
            bandwidth: 1e7,
            n0: 4e-21,
            t0,
            tau: 1,
            cpu_min: 1e9,
            cpu_max: 1e10,
            model_bits: 2e5,
            capacitance: 2e-28,
        }
    }

    fn client(workload: f64, gain: f64, p: f64) -> P1Client {
        P1Client {
            workload,
            gain,
            tx_power: p,
        }
    }

    /// Random feasible instance with 2–4 clients whose t0 is a random factor above
    /// the tightest feasible budget, so that a mix of binding/slack clients appears.
    pub(crate) fn random_instance(rng: &mut SimRng) -> P1Instance {
        let m = rng.random_range(2..=4);
        let clients = (0..m)
            .map(|_| {
                let d: f64 = rng.random_range(50.0..600.0);
                let dist: f64 = rng.random_range(50.0..1500.0);
                let f: f64 = rng.random_range(1.0..4.0);
                let pl = 32.4 + 20.0 * f.log10() + 30.0 * dist.log10();
                client(5.0 * 90822.0 * d, 10f64.powf(-pl / 10.0), rng.random_range(0.1..1.0))
            })
            .collect();
        let mut inst = base(clients, 1.0);
        inst.model_bits = rng.random_range(1e4..2e6);
        // smallest t0 for which an equal split at ν_max is feasible
        let share = inst.bandwidth / m as f64;
        let need = (0..m)
            .map(|i| inst.clients[i].workload / inst.cpu_max + inst.comm_time(i, share))
            .fold(0.0, f64::max);
        inst.t0 = need * rng.random_range(1.05..4.0);
        inst
    }

    #[test]
    fn log_gap_branches_agree() {
        for s in [1e-6f64, 1e-4, 9.9e-4, 1.01e-3] {
            let direct = s.ln_1p() - s / (1.0 + s);
            let series = log_gap(s);
            assert!(((direct - series) / series).abs() < 1e-6, "s={s}");
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let inst = base(vec![client(1e8, 1e-12, 0.5)], 0.2);
        for b in [1e4, 1e5, 1e6, 1e7, 1e9] {
            let h = b * 1e-6;
            let fd = -(inst.comm_time(0, b + h) - inst.comm_time(0, b - h)) / (2.0 * h);
            let an = inst.comm_time_slope(0, b);
            assert!(((fd - an) / an).abs() < 1e-5, "b={b}: {fd} vs {an}");
        }
    }

    #[test]
    fn single_client_with_slack() {
        let inst = base(vec![client(1e8, 1e-12, 0.5)], 1.0);
        let sol = solve_p1(&inst, 1e-10).unwrap();
        let a = sol.clients[0];
        assert_eq!(a.cpu_freq, inst.cpu_min);
        assert!((a.bandwidth - inst.bandwidth).abs() < 1e-6 * inst.bandwidth);
        assert!(!a.binding);
        assert!(sol.kkt_residual < 1e-6);
        assert_eq!(sol.ao_iterations, 1);
    }

    #[test]
    fn analytic_slack_solution_has_zero_residual() {
        let inst = base(vec![client(1e8, 1e-12, 0.5)], 1.0);
        let nu = inst.cpu_min;
        let sol = AllocationSolution {
            clients: vec![ClientAllocation {
                cpu_freq: nu,
                bandwidth: inst.bandwidth,
                binding: false,
                regime: FrequencyRegime::Slack,
                theta: 0.0,
                gamma: inst.capacitance * 1e8 * nu,
                sigma: 0.0,
            }],
            mu: 0.5 * inst.comm_time_slope(0, inst.bandwidth),
            objective: 0.0,
            kkt_residual: 0.0,
            ao_iterations: 1,
        };
        assert!(kkt_residual(&inst, &sol) < 1e-12);
    }

    #[test]
    fn binding_client_uses_higher_frequency() {
        // 1e9 cycles cannot finish at ν_min within 0.3 s
        let inst = base(vec![client(1e9, 1e-12, 0.5), client(1e7, 1e-12, 0.5)], 0.3);
        let sol = solve_p1(&inst, 1e-10).unwrap();
        assert!(sol.clients[0].binding);
        assert!(sol.clients[0].cpu_freq > inst.cpu_min);
        assert!(!sol.clients[1].binding);
        assert_eq!(sol.clients[1].cpu_freq, inst.cpu_min);
        assert!(sol.kkt_residual < 1e-6, "{}", sol.kkt_residual);
        assert!(inst.latency_slack(0, sol.clients[0].cpu_freq, sol.clients[0].bandwidth) <= 1e-9);
    }

    #[test]
    fn infeasible_instances_are_reported() {
        let inst = base(vec![client(1e12, 1e-12, 0.5)], 0.2);
        assert_eq!(solve_p1(&inst, 1e-10), Err(P1Error::ClientInfeasible { client: 0 }));
        assert!(grid_oracle_p1(&inst, 50).is_err());
        // each fine alone, together they need more than B_0
        let mut crowd = base(vec![client(1e8, 1e-12, 0.5); 4], 0.2);
        crowd.model_bits = 3.8e6;
        let alone = P1Instance {
            clients: vec![crowd.clients[0]],
            ..crowd.clone()
        };
        assert!(solve_p1(&alone, 1e-10).is_ok());
        assert!(matches!(
            solve_p1(&crowd, 1e-10),
            Err(P1Error::BandwidthExhausted { .. })
        ));
        assert!(grid_oracle_p1(&crowd, 40).is_err());
    }

    #[test]
    fn two_clients_match_grid() {
        // tight budget: both clients bind
        let mut inst = base(vec![client(1.2e9, 3e-13, 0.4), client(9e8, 8e-14, 0.8)], 0.2);
        inst.model_bits = 1e6;
        let sol = solve_p1(&inst, 1e-10).unwrap();
        assert!(sol.clients.iter().all(|c| c.binding));
        let grid = grid_oracle_p1(&inst, 400).unwrap();
        assert!(sol.objective <= grid.objective * 1.01);
        assert!(sol.objective <= grid.objective * (1.0 + 1e-9));
        assert!(sol.kkt_residual < 1e-6);
    }

    #[test]
    fn random_instances_against_grid() {
        let mut rng = SimRng::seed_from_u64(2024);
        for case in 0..20 {
            let inst = random_instance(&mut rng);
            let sol = solve_p1(&inst, 1e-10).unwrap();
            let grid = grid_oracle_p1(&inst, if inst.len() == 4 { 120 } else { 300 }).unwrap();
            assert!(sol.objective <= grid.objective * (1.0 + 1e-9), "case {case}");
            assert!(sol.kkt_residual < 1e-6, "case {case}: {}", sol.kkt_residual);
            assert!(sol.ao_iterations <= inst.len() + 1);
            check_invariants(&inst, &sol);
        }
    }

    pub(crate) fn check_invariants(inst: &P1Instance, sol: &AllocationSolution) {
        let total: f64 = sol.clients.iter().map(|c| c.bandwidth).sum();
        assert!((total - inst.bandwidth).abs() <= 1e-6 * inst.bandwidth);
        for (i, c) in sol.clients.iter().enumerate() {
            assert!(c.cpu_freq >= inst.cpu_min && c.cpu_freq <= inst.cpu_max);
            assert!(c.bandwidth > 0.0 && c.bandwidth <= inst.bandwidth * (1.0 + 1e-12));
            assert!(inst.latency_slack(i, c.cpu_freq, c.bandwidth) <= 1e-9);
            if !c.binding {
                assert_eq!(c.cpu_freq, inst.cpu_min);
            }
        }
    }

    #[test]
    fn perturbation_raises_residual() {
        let mut rng = SimRng::seed_from_u64(5);
        for _ in 0..10 {
            let inst = random_instance(&mut rng);
            let sol = solve_p1(&inst, 1e-10).unwrap();
            let mut bumped = sol.clone();
            let i = (0..inst.len())
                .max_by(|&a, &b| sol.clients[a].bandwidth.total_cmp(&sol.clients[b].bandwidth))
                .unwrap();
            bumped.clients[i].bandwidth *= 1.01;
            assert!(kkt_residual(&inst, &bumped) > 1e-4);
        }
    }

    #[test]
    fn grid_refinement_never_worsens() {
        let mut rng = SimRng::seed_from_u64(8);
        let inst = loop {
            let i = random_instance(&mut rng);
            if i.len() == 2 {
                break i;
            }
        };
        let coarse = grid_oracle_p1(&inst, 50).unwrap();
        let fine = grid_oracle_p1(&inst, 200).unwrap();
        assert!(fine.objective <= coarse.objective);
        assert!(matches!(
            grid_oracle_p1(&base(vec![client(1e8, 1e-12, 0.5); 5], 1.0), 10),
            Err(P1Error::TooLarge { .. })
        ));
    }

    #[test]
    fn price_lowers_bandwidth() {
        let inst = base(vec![client(1e8, 2e-13, 0.3)], 0.2);
        for theta in [0.0, 0.1, 5.0] {
            let mut prev = f64::INFINITY;
            for k in 0..60 {
                let mu = 1e-12 * 1.5f64.powi(k);
                let b = inst.bandwidth_at_price(0, mu, theta);
                assert!(b < prev || b == inst.bandwidth * B_FLOOR, "theta {theta}, k {k}");
                prev = b;
            }
        }
    }

    #[test]
    fn latency_slack_monotone_under_reallocation() {
        let mut rng = SimRng::seed_from_u64(31);
        for _ in 0..10 {
            let inst = random_instance(&mut rng);
            let m = inst.len();
            let nus: Vec<f64> = (0..m).map(|_| rng.random_range(2e9..8e9)).collect();
            let (_, b) = inst.reallocate_bandwidth(&nus).unwrap();
            let n = rng.random_range(0..m);
            let mut up = nus.clone();
            up[n] *= 1.05;
            let (_, b_up) = inst.reallocate_bandwidth(&up).unwrap();
            assert!(inst.latency_slack(n, up[n], b_up[n]) < inst.latency_slack(n, nus[n], b[n]));
            for i in (0..m).filter(|&i| i != n) {
                assert!(inst.latency_slack(i, nus[i], b_up[i]) > inst.latency_slack(i, nus[i], b[i]));
            }
        }
    }

    #[test]
    fn objective_is_convex_along_segments() {
        let mut rng = SimRng::seed_from_u64(77);
        for _ in 0..50 {
            let inst = random_instance(&mut rng);
            let m = inst.len();
            let point = |rng: &mut SimRng| {
                let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                let b: Vec<f64> = w.iter().map(|x| inst.bandwidth * x / s).collect();
                let nu: Vec<f64> = (0..m).map(|_| rng.random_range(inst.cpu_min..inst.cpu_max)).collect();
                (nu, b)
            };
            let (nu0, b0) = point(&mut rng);
            let (nu1, b1) = point(&mut rng);
            let e0 = inst.energy(&nu0, &b0);
            let e1 = inst.energy(&nu1, &b1);
            for k in 1..10 {
                let t = k as f64 / 10.0;
                let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect::<Vec<_>>();
                let e = inst.energy(&mix(&nu0, &nu1), &mix(&b0, &b1));
                assert!(e <= (1.0 - t) * e0 + t * e1 + 1e-9 * (e0 + e1));
            }
        }
    }
}
