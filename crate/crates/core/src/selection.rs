//! Client selection: schedulable-count bounds, the performance/energy metric
//! search (PEMO) and the greedy baselines.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::socialnet::{ClientId, CoverageTracker, SocialGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("compute alone needs {needed:.6e} s per edge iteration, above t0 = {t0} s")]
    ComputeExceedsBudget { needed: f64, t0: f64 },
    #[error("not even one client per ES fits the latency budget")]
    Capacity,
    #[error("r_ef0 = {r_ef0} exceeds r_ef_max = {r_ef_max}; set the EDCR constraint r_ef0 <= r_ef_max")]
    EdcrAboveMax { r_ef0: f64, r_ef_max: f64 },
    #[error("r_ef0 must lie in (0, 1], got {0}")]
    InvalidTarget(f64),
    #[error("no candidate selection met r_ef0 = {r_ef0}")]
    EmptyPool { r_ef0: f64 },
    #[error("cannot pick {wanted} clients from {available} admissible ones")]
    NotEnoughClients { wanted: usize, available: usize },
}

/// Population means used to estimate how many clients one ES can serve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapInputs {
    pub mean_data: f64,
    pub mean_cpu: f64,
    pub mean_power: f64,
    pub mean_gain: f64,
    pub bandwidth: f64,
    pub n0: f64,
    pub model_bits: f64,
    pub t0: f64,
    pub local_iters: f64,
    pub cycles_per_sample: f64,
    pub n_es: usize,
    pub n_clients: usize,
}

impl CapInputs {
    fn compute_time(&self) -> f64 {
        self.local_iters * self.cycles_per_sample * self.mean_data / self.mean_cpu
    }

    /// Per-iteration latency of the mean client when `h_bar` clients share an ES.
    pub fn latency(&self, h_bar: f64) -> f64 {
        let b = self.bandwidth / h_bar;
        let rate = b * (1.0 + self.mean_gain * self.mean_power / (b * self.n0)).log2();
        self.compute_time() + self.model_bits / rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionBounds {
    pub l: usize,
    pub h: usize,
    pub h_bar: f64,
    pub r_ef_max: f64,
}

/// `(H̄, H)`: the real per-ES count at which the mean client exactly meets `t0`,
/// and `min(⌊K H̄⌋, |U|)`.
pub fn client_cap(c: &CapInputs) -> Result<(f64, usize), SelectError> {
    let needed = c.compute_time();
    if !(c.t0 > needed) {
        return Err(SelectError::ComputeExceedsBudget { needed, t0: c.t0 });
    }
    let h_bar = if c.model_bits == 0.0 {
        c.n_clients as f64 / c.n_es as f64
    } else {
        if c.latency(1.0) > c.t0 {
            return Err(SelectError::Capacity);
        }
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        while c.latency(hi) <= c.t0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                break;
            }
        }
        if c.latency(hi) <= c.t0 {
            hi
        } else {
            for _ in 0..200 {
                if hi - lo <= 1e-12 * hi {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if c.latency(mid) <= c.t0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    let h = ((c.n_es as f64 * h_bar).floor() as usize).min(c.n_clients);
    Ok((h_bar, h))
}

/// Greedy max-coverage order over `universe` (largest marginal effective gain,
/// ties by lowest id), stopping after `limit` picks or when nothing is gained.
pub fn greedy_coverage_order(graph: &SocialGraph, universe: &[ClientId], limit: usize) -> Vec<ClientId> {
    let mut t = graph.tracker();
    while t.selection().len() < limit {
        let best = universe
            .iter()
            .filter(|&&c| !t.is_selected(c))
            .map(|&c| (t.marginal_effective(c), c))
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        match best {
            Some((gain, c)) if gain > 0 => t.add(c),
            _ => break,
        }
    }
    t.selection().to_vec()
}

/// EDCR reached by the greedy prefix of size `h`.
pub fn r_ef_max(graph: &SocialGraph, universe: &[ClientId], h: usize) -> f64 {
    let mut t = graph.tracker();
    for c in greedy_coverage_order(graph, universe, h) {
        t.add(c);
    }
    t.r_ef()
}

/// Length of the shortest greedy prefix with `r_ef ≥ r_ef0`.
pub fn lower_bound_l(graph: &SocialGraph, universe: &[ClientId], r_ef0: f64) -> Result<usize, SelectError> {
    if !(r_ef0 > 0.0 && r_ef0 <= 1.0) {
        return Err(SelectError::InvalidTarget(r_ef0));
    }
    let mut t = graph.tracker();
    for c in greedy_coverage_order(graph, universe, universe.len()) {
        t.add(c);
        if t.r_ef() >= r_ef0 {
            return Ok(t.selection().len());
        }
    }
    Err(SelectError::EdcrAboveMax {
        r_ef0,
        r_ef_max: t.r_ef(),
    })
}

pub fn selection_bounds(
    graph: &SocialGraph,
    universe: &[ClientId],
    cap: &CapInputs,
    r_ef0: f64,
) -> Result<SelectionBounds, SelectError> {
    if !(r_ef0 > 0.0 && r_ef0 <= 1.0) {
        return Err(SelectError::InvalidTarget(r_ef0));
    }
    let (h_bar, h) = client_cap(cap)?;
    let h = h.min(universe.len());
    let max = r_ef_max(graph, universe, h);
    if r_ef0 > max {
        return Err(SelectError::EdcrAboveMax {
            r_ef0,
            r_ef_max: max,
        });
    }
    let l = lower_bound_l(graph, universe, r_ef0)?;
    Ok(SelectionBounds {
        l,
        h,
        h_bar,
        r_ef_max: max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    /// Ascending client ids.
    pub selection: Vec<ClientId>,
    pub m: usize,
    pub effective: u64,
    pub redundant: u64,
    pub r_ef: f64,
    /// `D_ef / D_re`; infinite without redundancy.
    #[serde(with = "inf_as_null")]
    pub epsilon: f64,
    /// `B_S`, J
    pub bound: f64,
    #[serde(with = "inf_as_null")]
    pub g: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SelectionPlan {
    pub fn new(graph: &SocialGraph, mut selection: Vec<ClientId>, bound: f64) -> Self {
        selection.sort_unstable();
        let mut t = graph.tracker();
        for &c in &selection {
            t.add(c);
        }
        let (effective, redundant) = (t.effective(), t.redundant());
        Self {
            m: selection.len(),
            selection,
            effective,
            redundant,
            r_ef: t.r_ef(),
            epsilon: if redundant == 0 {
                f64::INFINITY
            } else {
                effective as f64 / redundant as f64
            },
            bound,
            g: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PemoParams {
    pub r_ef0: f64,
    /// Candidates per selection size.
    pub xi: usize,
    /// Attempts per candidate slot.
    pub retries: usize,
}

/// Fill in `G_S = ε_max B_S / (ε_S B_max)` over the pool. With an unbounded
/// `ε_max`, redundancy-free candidates score `B_S / B_max` and all others `∞`.
pub fn score_pool(pool: &mut [SelectionPlan]) {
    let e_max = pool.iter().map(|p| p.epsilon).fold(0.0, f64::max);
    let b_max = pool.iter().map(|p| p.bound).fold(0.0, f64::max);
    for p in pool.iter_mut() {
        p.g = if e_max.is_infinite() {
            if p.epsilon.is_infinite() {
                p.bound / b_max
            } else {
                f64::INFINITY
            }
        } else {
            e_max * p.bound / (p.epsilon * b_max)
        };
    }
}

/// Index of the best scored plan: least `G_S`, then least `B_S`, then least `M`.
pub fn best_plan(pool: &[SelectionPlan]) -> Option<usize> {
    (0..pool.len()).min_by(|&a, &b| {
        let (x, y) = (&pool[a], &pool[b]);
        x.g.total_cmp(&y.g)
            .then(x.bound.total_cmp(&y.bound))
            .then(x.m.cmp(&y.m))
            .then(a.cmp(&b))
    })
}

/// One threshold-rule candidate of size `m`.
fn threshold_candidate<R: Rng + ?Sized>(
    graph: &SocialGraph,
    universe: &[ClientId],
    m: usize,
    r_ef0: f64,
    rng: &mut R,
) -> Vec<ClientId> {
    let mut t: CoverageTracker = graph.tracker();
    let mut remaining: Vec<ClientId> = universe.to_vec();
    // owners of each block still in R
    let mut owners_left = vec![0u32; graph.blocks().len()];
    for &c in universe {
        for &b in graph.blocks_of(c) {
            owners_left[b] += 1;
        }
    }
    let mut budget = m;
    while budget > 0 && !remaining.is_empty() {
        let d_ef_r: u64 = graph
            .blocks()
            .iter()
            .zip(&owners_left)
            .filter(|(_, &k)| k > 0)
            .map(|(b, _)| b.size)
            .sum();
        let threshold = d_ef_r as f64 * r_ef0 / budget as f64;
        let gains: Vec<u64> = remaining.iter().map(|&c| t.marginal_effective(c)).collect();
        let fit: Vec<usize> = (0..remaining.len())
            .filter(|&i| gains[i] as f64 >= threshold)
            .collect();
        let pick = if fit.is_empty() {
            (0..remaining.len())
                .max_by(|&a, &b| gains[a].cmp(&gains[b]).then(remaining[b].cmp(&remaining[a])))
                .expect("remaining is non-empty")
        } else {
            fit[rng.random_range(0..fit.len())]
        };
        let c = remaining.remove(pick);
        for &b in graph.blocks_of(c) {
            owners_left[b] -= 1;
        }
        t.add(c);
        budget -= 1;
    }
    t.selection().to_vec()
}

/// Performance-energy metric optimisation over sizes `L..=H`.
pub fn pemo<R: Rng + ?Sized>(
    graph: &SocialGraph,
    universe: &[ClientId],
    bounds: &SelectionBounds,
    params: &PemoParams,
    bound_of: &dyn Fn(&[ClientId]) -> f64,
    rng: &mut R,
) -> Result<SelectionPlan, SelectError> {
    let mut pool = Vec::new();
    for m in bounds.l.max(1)..=bounds.h.min(universe.len()) {
        for _ in 0..params.xi {
            for _ in 0..params.retries.max(1) {
                let cand = threshold_candidate(graph, universe, m, params.r_ef0, rng);
                let plan = SelectionPlan::new(graph, cand, 0.0);
                if plan.r_ef >= params.r_ef0 {
                    let bound = bound_of(&plan.selection);
                    pool.push(SelectionPlan { bound, ..plan });
                    break;
                }
            }
        }
    }
    score_pool(&mut pool);
    let best = best_plan(&pool).ok_or(SelectError::EmptyPool { r_ef0: params.r_ef0 })?;
    Ok(pool.swap_remove(best))
}

/// `m` distinct clients drawn uniformly from `universe`.
pub fn random_selection<R: Rng + ?Sized>(
    universe: &[ClientId],
    m: usize,
    rng: &mut R,
) -> Result<Vec<ClientId>, SelectError> {
    if m > universe.len() {
        return Err(SelectError::NotEnoughClients {
            wanted: m,
            available: universe.len(),
        });
    }
    let mut out: Vec<ClientId> = index::sample(rng, universe.len(), m)
        .into_iter()
        .map(|i| universe[i])
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Add the client with the least marginal redundancy (ties by id) until
/// `r_ef ≥ r_ef0`.
pub fn redundancy_driven(graph: &SocialGraph, universe: &[ClientId], r_ef0: f64) -> Result<Vec<ClientId>, SelectError> {
    let mut t = graph.tracker();
    while t.r_ef() < r_ef0 {
        let next = universe
            .iter()
            .filter(|&&c| !t.is_selected(c))
            .map(|&c| (t.marginal_redundant(c), c))
            .min();
        match next {
            Some((_, c)) => t.add(c),
            None => {
                return Err(SelectError::EdcrAboveMax {
                    r_ef0,
                    r_ef_max: t.r_ef(),
                })
            }
        }
    }
    let mut out = t.selection().to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Greedy max effective coverage, at most `limit` clients.
pub fn effectiveness_driven(graph: &SocialGraph, universe: &[ClientId], limit: usize) -> Vec<ClientId> {
    let mut out = greedy_coverage_order(graph, universe, limit);
    out.sort_unstable();
    out
}
