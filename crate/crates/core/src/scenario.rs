//! The simulated world (community, ES sites, client radios and positions) and
//! the per-round view of it that selection, association and allocation consume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::association::{AssocClient, AssocProblem};
use crate::config::{DataMixConfig, ExperimentConfig};
use crate::costmodel::{energy_upper_bound, local_iterations, BoundParams, BoundTerm, ClientRadioCompute};
use crate::mobility::{
    channel_gain, pathloss_db, place_scenario, step_mobility, Arena, EdgeServerSite, MobilityState,
    PlacementParams,
};
use crate::resource::{P1Client, P1Instance};
use crate::rng::{self, tag};
use crate::selection::CapInputs;
use crate::socialnet::{generate_graph, ClientId, GraphParams, Owners, SampleBlock, SocialGraph};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientRadio {
    pub tx_power: f64,
    pub carrier_ghz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub arena: Arena,
    pub graph: SocialGraph,
    pub sites: Vec<EdgeServerSite>,
    pub radios: Vec<ClientRadio>,
    pub mobility: Vec<MobilityState>,
}

/// Community with exactly `effective` unique samples of which `redundant` sit in
/// shared blocks. Shared block `j` and private block `c` are drawn from their
/// own streams, so settings that differ only in the totals share a prefix.
pub fn mix_graph(mix: &DataMixConfig, seed: u64) -> Result<SocialGraph, Error> {
    let n = mix.n_clients;
    let private_total = mix.effective - mix.redundant;
    let weights: Vec<f64> = (0..n)
        .map(|c| rng::stream(seed, &[tag::GRAPH, 1, c as u64]).random_range(0.5..1.5))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut sizes: Vec<u64> = weights
        .iter()
        .map(|w| ((private_total as f64 * w / wsum).floor() as u64).max(1))
        .collect();
    let assigned: u64 = sizes.iter().sum();
    if assigned > private_total {
        return Err(Error::Config(crate::config::ConfigError::Invalid(
            "data_mix private data too small for its client count".into(),
        )));
    }
    sizes[0] += private_total - assigned;

    let mut blocks: Vec<SampleBlock> = sizes
        .iter()
        .enumerate()
        .map(|(c, &size)| SampleBlock {
            id: c as u32,
            size,
            owners: Owners::Single(c),
        })
        .collect();
    let mut left = mix.redundant;
    let mut j = 0u64;
    while left > 0 {
        let size = left.min(mix.shared_block);
        let mut r = rng::stream(seed, &[tag::GRAPH, 2, j]);
        let a = r.random_range(0..n);
        let b = (a + r.random_range(1..n)) % n;
        blocks.push(SampleBlock {
            id: (n as u64 + j) as u32,
            size,
            owners: Owners::pair(a, b),
        });
        left -= size;
        j += 1;
    }
    let names = (0..n).map(|c| format!("u{c}")).collect();
    Ok(SocialGraph::new(names, blocks)?)
}

impl World {
    pub fn generate(cfg: &ExperimentConfig) -> Result<World, Error> {
        let graph = match &cfg.data_mix {
            Some(mix) => mix_graph(mix, cfg.seed)?,
            None => generate_graph(
                &GraphParams {
                    n_clients: cfg.scenario.n_clients,
                    avg_degree: cfg.scenario.avg_degree,
                    private_size: cfg.scenario.private_size,
                    shared_size: cfg.scenario.shared_size,
                },
                cfg.seed,
            )?,
        };
        let arena = Arena {
            width: cfg.scenario.width,
            height: cfg.scenario.height,
        };
        let placement = PlacementParams {
            arena,
            n_es: cfg.scenario.n_es,
            n_clients: graph.n_clients(),
            es_bandwidth: cfg.system.bandwidth,
            coverage_radius: cfg.scenario.coverage_radius,
        };
        let (sites, mobility) = place_scenario(&placement, &mut rng::stream(cfg.seed, &[tag::PLACEMENT]))?;
        let mut r = rng::stream(cfg.seed, &[tag::RADIO]);
        let (p, f) = (cfg.system.tx_power, cfg.system.carrier_ghz);
        let radios = (0..graph.n_clients())
            .map(|_| ClientRadio {
                tx_power: r.random_range(p.0..=p.1),
                carrier_ghz: r.random_range(f.0..=f.1),
            })
            .collect();
        Ok(World {
            arena,
            graph,
            sites,
            radios,
            mobility,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.graph.n_clients()
    }

    pub fn distance(&self, client: ClientId, es: usize) -> f64 {
        self.mobility[client].position.distance(&self.sites[es].position)
    }

    /// Channel gain to `es`, or `None` outside its coverage.
    pub fn gain(&self, client: ClientId, es: usize) -> Option<f64> {
        let site = &self.sites[es];
        let pos = &self.mobility[client].position;
        site.covers(pos)
            .then(|| channel_gain(pos, site, self.radios[client].carrier_ghz))
    }

    /// Move every client for `dt` seconds; each client draws from its own stream.
    pub fn advance(&mut self, dt: f64, seed: u64, round: usize) {
        for (c, state) in self.mobility.iter_mut().enumerate() {
            let mut r = rng::stream(seed, &[tag::MOBILITY, round as u64, c as u64]);
            *state = step_mobility(state, dt, &self.arena, &mut r);
        }
    }
}

/// Per-round quantities derived from the world's current state.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContext {
    /// Indexed by client id.
    pub clients: Vec<AssocClient>,
    pub local_iters: Vec<u32>,
    pub distances: Vec<Vec<f64>>,
    /// Covered clients that can meet `t0` alone at some covering ES.
    pub admissible: Vec<ClientId>,
    pub template: P1Instance,
    pub es_bandwidth: Vec<f64>,
    pub bound_params: BoundParams,
}

impl RoundContext {
    pub fn new(world: &World, cfg: &ExperimentConfig, model_bits: f64) -> Self {
        let s = &cfg.system;
        let g = &world.graph;
        let mean = g.data_sizes().iter().sum::<u64>() as f64 / g.n_clients() as f64;
        let template = P1Instance {
            clients: Vec::new(),
            bandwidth: s.bandwidth,
            n0: s.n0,
            t0: s.t0,
            tau: s.tau,
            cpu_min: s.cpu_min,
            cpu_max: s.cpu_max,
            model_bits,
            capacitance: s.capacitance,
        };
        let es_bandwidth: Vec<f64> = world.sites.iter().map(|e| e.bandwidth).collect();
        let mut local_iters = Vec::with_capacity(g.n_clients());
        let mut clients = Vec::with_capacity(g.n_clients());
        let mut admissible = Vec::new();
        for c in 0..g.n_clients() {
            let d = g.data_size(c);
            let lambda = s.local_iters.unwrap_or_else(|| local_iterations(d as f64, mean, s.lambda0));
            let workload = lambda as f64 * s.cycles_per_sample * d as f64;
            let gains: Vec<Option<f64>> = (0..world.sites.len()).map(|k| world.gain(c, k)).collect();
            let fits = gains.iter().enumerate().any(|(k, gk)| {
                gk.is_some_and(|h| {
                    let alone = P1Instance {
                        clients: vec![P1Client {
                            workload,
                            gain: h,
                            tx_power: world.radios[c].tx_power,
                        }],
                        bandwidth: es_bandwidth[k],
                        ..template.clone()
                    };
                    alone.latency_slack(0, s.cpu_max, es_bandwidth[k]) <= 0.0
                })
            });
            if fits {
                admissible.push(c);
            }
            local_iters.push(lambda);
            clients.push(AssocClient {
                id: c,
                data_size: d,
                workload,
                tx_power: world.radios[c].tx_power,
                gains,
            });
        }
        let distances = (0..g.n_clients())
            .map(|c| (0..world.sites.len()).map(|k| world.distance(c, k)).collect())
            .collect();
        RoundContext {
            clients,
            local_iters,
            distances,
            admissible,
            template,
            es_bandwidth,
            bound_params: BoundParams {
                tau: s.tau,
                t0: s.t0,
                cpu_max: s.cpu_max,
                cycles_per_sample: s.cycles_per_sample,
                capacitance: s.capacitance,
            },
        }
    }

    /// Association problem restricted to `selection`, in the given order.
    pub fn problem(&self, selection: &[ClientId]) -> AssocProblem {
        AssocProblem {
            template: self.template.clone(),
            es_bandwidth: self.es_bandwidth.clone(),
            clients: selection.iter().map(|&c| self.clients[c].clone()).collect(),
        }
    }

    /// `B_S` of a selection.
    pub fn bound(&self, selection: &[ClientId]) -> f64 {
        let terms: Vec<BoundTerm> = selection
            .iter()
            .map(|&c| BoundTerm {
                data_size: self.clients[c].data_size as f64,
                local_iters: self.local_iters[c],
                tx_power: self.clients[c].tx_power,
            })
            .collect();
        energy_upper_bound(&terms, &self.bound_params).bound
    }

    pub fn radio_compute(&self, world: &World, cfg: &ExperimentConfig, c: ClientId) -> ClientRadioCompute {
        ClientRadioCompute {
            tx_power: world.radios[c].tx_power,
            carrier_ghz: world.radios[c].carrier_ghz,
            cycles_per_sample: cfg.system.cycles_per_sample,
            local_iters: self.local_iters[c],
            capacitance: cfg.system.capacitance,
            cpu_min: cfg.system.cpu_min,
            cpu_max: cfg.system.cpu_max,
            model_bits: self.template.model_bits,
        }
    }

    /// Population means for the schedulable-count estimate. The mean gain is
    /// taken at the mean distance from each client to its nearest covering ES.
    pub fn cap_inputs(&self, world: &World, cfg: &ExperimentConfig) -> CapInputs {
        let s = &cfg.system;
        let n = world.n_clients() as f64;
        let nearest: Vec<f64> = (0..world.n_clients())
            .filter_map(|c| {
                (0..world.sites.len())
                    .filter(|&k| self.clients[c].gains[k].is_some())
                    .map(|k| self.distances[c][k])
                    .min_by(f64::total_cmp)
            })
            .collect();
        let mean_dist = if nearest.is_empty() {
            cfg.scenario.coverage_radius
        } else {
            nearest.iter().sum::<f64>() / nearest.len() as f64
        };
        let carrier = 0.5 * (s.carrier_ghz.0 + s.carrier_ghz.1);
        CapInputs {
            mean_data: world.graph.data_sizes().iter().sum::<u64>() as f64 / n,
            mean_cpu: 0.5 * (s.cpu_min + s.cpu_max),
            mean_power: 0.5 * (s.tx_power.0 + s.tx_power.1),
            mean_gain: 10f64.powf(-pathloss_db(mean_dist, carrier) / 10.0),
            bandwidth: s.bandwidth,
            n0: s.n0,
            model_bits: self.template.model_bits,
            t0: s.t0,
            local_iters: s.local_iters.map_or(s.lambda0, f64::from),
            cycles_per_sample: s.cycles_per_sample,
            n_es: world.sites.len(),
            n_clients: self.admissible.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_is_deterministic() {
        let cfg = ExperimentConfig::default();
        let a = World::generate(&cfg).unwrap();
        let b = World::generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_clients(), 60);
        assert_eq!(a.sites.len(), 4);
        let mut c = a.clone();
        c.advance(10.0, cfg.seed, 0);
        let mut d = a.clone();
        d.advance(10.0, cfg.seed, 0);
        assert_eq!(c, d);
        assert_ne!(c.mobility, a.mobility);
    }

    #[test]
    fn default_world_is_admissible() {
        let cfg = ExperimentConfig::default();
        let w = World::generate(&cfg).unwrap();
        let ctx = RoundContext::new(&w, &cfg, 5280.0);
        assert_eq!(ctx.admissible.len(), 60);
        // every client is covered by every ES in the default arena
        assert!(ctx.clients.iter().all(|c| c.gains.iter().all(Option::is_some)));
        let b = ctx.bound(&[0, 1]);
        assert!(b > 0.0);
    }

    #[test]
    fn mix_graph_hits_targets() {
        for (eff, red) in [(8000, 1000), (8000, 5000), (12000, 3000)] {
            let mix = DataMixConfig {
                effective: eff,
                redundant: red,
                ..DataMixConfig::default()
            };
            let g = mix_graph(&mix, 4).unwrap();
            assert_eq!(g.total_unique(), eff);
            assert_eq!(g.total_shared(), red);
            let all: Vec<ClientId> = (0..g.n_clients()).collect();
            let cov = g.coverage(&all).unwrap();
            assert_eq!((cov.effective_size, cov.redundant_size), (eff, red));
        }
    }

    #[test]
    fn mix_graphs_share_blocks_across_settings() {
        let small = mix_graph(&DataMixConfig { redundant: 1000, ..DataMixConfig::default() }, 9).unwrap();
        let large = mix_graph(&DataMixConfig { redundant: 3000, ..DataMixConfig::default() }, 9).unwrap();
        let shared = |g: &SocialGraph| -> Vec<SampleBlock> {
            g.blocks().iter().filter(|b| b.owners.is_shared()).cloned().collect()
        };
        assert_eq!(&shared(&large)[..5], &shared(&small)[..]);
    }
}
