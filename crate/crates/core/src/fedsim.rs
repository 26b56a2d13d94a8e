//! Round-by-round hierarchical training: selection, association and allocation
//! for the current positions, `τ` edge iterations of local training with
//! clipped and noised uploads, then cloud aggregation and evaluation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{fast_greedy, AssocError, AssocProblem, AssociationMap, EsGroup};
use crate::config::{Algorithm, ExperimentConfig};
use crate::costmodel::{comm_cost, compute_cost, round_totals, CostBreakdown};
use crate::learner::{Dataset, Learner, SoftmaxRegression, SyntheticTask};
use crate::privacy::{clip_and_noise, noise_record, NoiseRecord};
use crate::resource::{
    kkt_residual, AllocationSolution, AoSolver, ClientAllocation, FrequencyRegime, P1Solver,
};
use crate::rng::{self, tag};
use crate::scenario::{RoundContext, World};
use crate::selection::{
    client_cap, effectiveness_driven, pemo, random_selection, redundancy_driven, selection_bounds,
    PemoParams, SelectError, SelectionBounds, SelectionPlan,
};
use crate::socialnet::ClientId;
use crate::Error;

/// Data-weighted mean of models; used both at the ES and at the cloud.
pub fn weighted_average(models: &[(Vec<f64>, f64)]) -> Result<Vec<f64>, Error> {
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    let Some((first, _)) = models.first() else {
        return Err(Error::Output("nothing to aggregate".into()));
    };
    if !(total > 0.0) {
        return Err(Error::Output(format!("aggregation weights sum to {total}")));
    }
    let mut out = vec![0.0; first.len()];
    for (m, w) in models {
        if m.len() != out.len() {
            return Err(Error::Output("models of different sizes".into()));
        }
        let s = w / total;
        out.iter_mut().zip(m).for_each(|(o, x)| *o += s * x);
    }
    Ok(out)
}

/// Solve P1 for a fixed assignment (`assignment[i]` is the ES of problem client `i`).
pub fn solve_assignment(
    problem: &AssocProblem,
    assignment: &[usize],
    solver: &dyn P1Solver,
) -> Result<AssociationMap, AssocError> {
    let mut map = AssociationMap::empty();
    map.assignment = assignment.to_vec();
    for es in 0..problem.n_es() {
        let members: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == es).collect();
        if members.is_empty() {
            continue;
        }
        let solution = solver.solve(&problem.instance(es, &members))?;
        map.solver_calls += 1;
        map.energy += solution.objective;
        map.groups.push(EsGroup { es, members, solution });
    }
    Ok(map)
}

/// Each client joins its nearest covering ES; allocation per ES is optimal.
pub fn nearest_association(
    problem: &AssocProblem,
    distances: &[Vec<f64>],
    solver: &dyn P1Solver,
) -> Result<AssociationMap, AssocError> {
    let assignment = problem
        .clients
        .iter()
        .map(|c| {
            (0..problem.n_es())
                .filter(|&k| c.gains[k].is_some())
                .min_by(|&a, &b| distances[c.id][a].total_cmp(&distances[c.id][b]))
                .ok_or(AssocError::NoCoverage { client: c.id })
        })
        .collect::<Result<Vec<_>, _>>()?;
    solve_assignment(problem, &assignment, solver)
}

/// Random covering ES, equal bandwidth shares and a CPU frequency drawn
/// uniformly from the range that still meets `t0`.
pub fn random_allocation<R: Rng + ?Sized>(problem: &AssocProblem, rng: &mut R) -> Result<AssociationMap, AssocError> {
    let mut assignment = Vec::with_capacity(problem.clients.len());
    for c in &problem.clients {
        let covering: Vec<usize> = (0..problem.n_es()).filter(|&k| c.gains[k].is_some()).collect();
        if covering.is_empty() {
            return Err(AssocError::NoCoverage { client: c.id });
        }
        assignment.push(covering[rng.random_range(0..covering.len())]);
    }
    let mut map = AssociationMap::empty();
    map.assignment = assignment.clone();
    for es in 0..problem.n_es() {
        let members: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == es).collect();
        if members.is_empty() {
            continue;
        }
        let inst = problem.instance(es, &members);
        let share = inst.bandwidth / members.len() as f64;
        let mut clients = Vec::with_capacity(members.len());
        for (slot, &i) in members.iter().enumerate() {
            let left = inst.t0 - inst.comm_time(slot, share);
            let lo = if left > 0.0 {
                (inst.clients[slot].workload / left).max(inst.cpu_min)
            } else {
                f64::INFINITY
            };
            if lo > inst.cpu_max {
                return Err(AssocError::Infeasible {
                    client: problem.clients[i].id,
                });
            }
            let nu = if lo < inst.cpu_max {
                rng.random_range(lo..=inst.cpu_max)
            } else {
                inst.cpu_max
            };
            clients.push(ClientAllocation {
                cpu_freq: nu,
                bandwidth: share,
                binding: inst.latency_slack(slot, nu, share) >= -1e-9 * inst.t0,
                regime: FrequencyRegime::Slack,
                theta: 0.0,
                gamma: 0.0,
                sigma: 0.0,
            });
        }
        let nus: Vec<f64> = clients.iter().map(|c| c.cpu_freq).collect();
        let bs: Vec<f64> = clients.iter().map(|c| c.bandwidth).collect();
        let mut solution = AllocationSolution {
            objective: inst.energy(&nus, &bs),
            clients,
            mu: 0.0,
            kkt_residual: 0.0,
            ao_iterations: 0,
        };
        solution.kkt_residual = kkt_residual(&inst, &solution);
        map.energy += solution.objective;
        map.groups.push(EsGroup { es, members, solution });
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub algorithm: Algorithm,
    /// Clients that passed the coverage and single-client latency checks.
    pub admissible: usize,
    pub bounds: Option<SelectionBounds>,
    pub plan: SelectionPlan,
    /// ES of each selected client, aligned with `plan.selection`.
    pub assignment: Vec<usize>,
    pub r_re: f64,
    /// `E_total` from the per-client cost breakdown, J
    pub energy: f64,
    /// `t_total`, s
    pub latency: f64,
    /// `Σ_k E_k*` reported by the allocator, J
    pub objective: f64,
    pub max_kkt_residual: f64,
    pub solver_calls: usize,
    pub sigma_up_mean: f64,
    pub sigma_down_max: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub cumulative_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub final_loss: f64,
    pub total_energy: f64,
    pub mean_energy: f64,
    pub mean_latency: f64,
    pub max_latency: f64,
    pub mean_selected: f64,
    pub mean_r_ef: f64,
    pub mean_r_re: f64,
    pub max_kkt_residual: f64,
    pub solver_calls: usize,
}

impl RunSummary {
    pub fn from_reports(cfg: &ExperimentConfig, reports: &[RoundReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RoundReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let last = reports.last();
        Self {
            algorithm: cfg.algorithm,
            seed: cfg.seed,
            rounds: reports.len(),
            final_accuracy: last.map_or(0.0, |r| r.accuracy),
            best_accuracy: reports.iter().map(|r| r.accuracy).fold(0.0, f64::max),
            final_loss: last.map_or(f64::NAN, |r| r.loss),
            total_energy: reports.iter().map(|r| r.energy).sum(),
            mean_energy: mean(&|r| r.energy),
            mean_latency: mean(&|r| r.latency),
            max_latency: reports.iter().map(|r| r.latency).fold(0.0, f64::max),
            mean_selected: mean(&|r| r.plan.m as f64),
            mean_r_ef: mean(&|r| r.plan.r_ef),
            mean_r_re: mean(&|r| r.r_re),
            max_kkt_residual: reports.iter().map(|r| r.max_kkt_residual).fold(0.0, f64::max),
            solver_calls: reports.iter().map(|r| r.solver_calls).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub reports: Vec<RoundReport>,
    pub summary: RunSummary,
}

struct RoundPlan {
    bounds: Option<SelectionBounds>,
    plan: SelectionPlan,
    problem: AssocProblem,
    assoc: AssociationMap,
}

pub struct Simulator {
    cfg: ExperimentConfig,
    world: World,
    learner: SoftmaxRegression,
    datasets: Vec<Dataset>,
    test: Dataset,
    model: Vec<f64>,
    model_bits: f64,
    round: usize,
    cumulative_energy: f64,
}

impl Simulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let world = World::generate(cfg)?;
        let task = SyntheticTask::new(cfg.task.clone(), world.n_clients(), cfg.seed);
        let learner = task.learner();
        let model_bits = cfg
            .system
            .model_bits
            .unwrap_or(32.0 * learner.param_count() as f64);
        Ok(Self {
            datasets: task.client_datasets(&world.graph),
            test: task.test_set(),
            model: learner.init(),
            cfg: cfg.clone(),
            world,
            learner,
            model_bits,
            round: 0,
            cumulative_energy: 0.0,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn model(&self) -> &[f64] {
        &self.model
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn context(&self) -> RoundContext {
        RoundContext::new(&self.world, &self.cfg, self.model_bits)
    }

    fn plan_round(&self, ctx: &RoundContext) -> Result<RoundPlan, Error> {
        let cfg = &self.cfg;
        let g = &self.world.graph;
        let u = &ctx.admissible;
        let seed = cfg.seed;
        let round = self.round as u64;
        let r_ef0 = cfg.selection.r_ef0;
        let solver = AoSolver {
            tol: cfg.system.solver_tol,
        };
        let cap = ctx.cap_inputs(&self.world, cfg);
        let baseline_m = |h: usize| cfg.selection.baseline_clients.unwrap_or(h).min(u.len());
        let (mut selection, bounds) = match cfg.algorithm {
            Algorithm::DoSnm => {
                let b = selection_bounds(g, u, &cap, r_ef0)?;
                let params = PemoParams {
                    r_ef0,
                    xi: cfg.selection.xi,
                    retries: cfg.selection.retries,
                };
                let bound_of = |s: &[ClientId]| ctx.bound(s);
                let mut r = rng::stream(seed, &[tag::SELECTION, round]);
                (pemo(g, u, &b, &params, &bound_of, &mut r)?.selection, Some(b))
            }
            Algorithm::Ra | Algorithm::Lg => {
                let (_, h) = client_cap(&cap)?;
                let mut r = rng::stream(seed, &[tag::BASELINE, round, 0]);
                (random_selection(u, baseline_m(h), &mut r)?, None)
            }
            Algorithm::Rd => (redundancy_driven(g, u, r_ef0)?, None),
            Algorithm::Ed => {
                let (_, h) = client_cap(&cap)?;
                (effectiveness_driven(g, u, h.min(u.len())), None)
            }
            Algorithm::Full => (u.clone(), None),
        };
        if selection.is_empty() {
            return Err(SelectError::NotEnoughClients {
                wanted: 1,
                available: u.len(),
            }
            .into());
        }
        selection.sort_unstable();
        let problem = ctx.problem(&selection);
        let assoc = match cfg.algorithm {
            Algorithm::Ra => random_allocation(&problem, &mut rng::stream(seed, &[tag::BASELINE, round, 1]))?,
            Algorithm::Lg => nearest_association(&problem, &ctx.distances, &solver)?,
            _ => fast_greedy(&problem, &solver)?,
        };
        let plan = SelectionPlan::new(g, selection.clone(), ctx.bound(&selection));
        Ok(RoundPlan {
            bounds,
            plan,
            problem,
            assoc,
        })
    }

    /// Run one global round and advance the clients' positions.
    pub fn step(&mut self) -> Result<RoundReport, Error> {
        let round = self.round;
        self.step_inner().map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self) -> Result<RoundReport, Error> {
        let cfg = &self.cfg;
        let s = &cfg.system;
        let seed = cfg.seed;
        let round = self.round;
        let ctx = self.context();
        let RoundPlan {
            bounds,
            plan,
            problem,
            assoc,
        } = self.plan_round(&ctx)?;

        let mut per_client = Vec::with_capacity(problem.clients.len());
        let mut max_kkt: f64 = 0.0;
        for g in &assoc.groups {
            max_kkt = max_kkt.max(g.solution.kkt_residual);
            for (slot, &i) in g.members.iter().enumerate() {
                let c = &problem.clients[i];
                let a = &g.solution.clients[slot];
                let rc = ctx.radio_compute(&self.world, cfg, c.id);
                let (t_cmp, e_cmp) = compute_cost(c.data_size as f64, a.cpu_freq, &rc)?;
                let gain = c.gains[g.es].ok_or(AssocError::NoCoverage { client: c.id })?;
                let (t_com, e_com) = comm_cost(self.model_bits, a.bandwidth, gain, c.tx_power, s.n0)?;
                per_client.push(CostBreakdown {
                    t_cmp,
                    t_com,
                    e_cmp,
                    e_com,
                });
            }
        }
        let totals = round_totals(&per_client, s.tau);

        let dp = cfg.privacy.as_ref().map(|p| p.dp_config(s.tau, round));
        let members: Vec<Vec<ClientId>> = assoc
            .groups
            .iter()
            .map(|g| g.members.iter().map(|&i| problem.clients[i].id).collect())
            .collect();
        let records: Vec<Option<NoiseRecord>> = members
            .iter()
            .map(|m| {
                let sizes: Vec<f64> = m.iter().map(|&c| self.world.graph.data_size(c) as f64).collect();
                dp.as_ref().map(|d| noise_record(d, &sizes)).transpose()
            })
            .collect::<Result<_, _>>()?;

        let lr = s.learning_rate;
        let mut edge_models = vec![self.model.clone(); members.len()];
        for t in 0..s.tau {
            for (l, group) in members.iter().enumerate() {
                let start = &edge_models[l];
                let record = records[l].as_ref();
                let locals: Vec<(Vec<f64>, f64)> = group
                    .par_iter()
                    .enumerate()
                    .map(|(j, &c)| {
                        let mut w = self
                            .learner
                            .local_train(start, &self.datasets[c], ctx.local_iters[c], lr);
                        if let (Some(d), Some(r)) = (&dp, record) {
                            let mut noise = rng::stream(seed, &[tag::UPLINK_NOISE, round as u64, t as u64, c as u64]);
                            clip_and_noise(&mut w, r.sigma_up[j], d.clip, &mut noise);
                        }
                        (w, self.world.graph.data_size(c) as f64)
                    })
                    .collect();
                let mut edge = weighted_average(&locals)?;
                if let Some(r) = record.filter(|r| r.sigma_down > 0.0) {
                    let es = assoc.groups[l].es as u64;
                    let mut noise = rng::stream(seed, &[tag::DOWNLINK_NOISE, round as u64, t as u64, es]);
                    clip_and_noise(&mut edge, r.sigma_down, f64::INFINITY, &mut noise);
                }
                edge_models[l] = edge;
            }
        }
        let edge_weights = members
            .iter()
            .map(|m| m.iter().map(|&c| self.world.graph.data_size(c) as f64).sum::<f64>());
        let cloud: Vec<(Vec<f64>, f64)> = edge_models.into_iter().zip(edge_weights).collect();
        self.model = weighted_average(&cloud)?;

        let accuracy = self.learner.evaluate(&self.model, &self.test);
        let loss = self.learner.loss(&self.model, &self.test);
        let n_up: usize = records.iter().flatten().map(|r| r.sigma_up.len()).sum();
        let sigma_up_mean = if n_up == 0 {
            0.0
        } else {
            records.iter().flatten().flat_map(|r| &r.sigma_up).sum::<f64>() / n_up as f64
        };
        let sigma_down_max = records.iter().flatten().map(|r| r.sigma_down).fold(0.0, f64::max);
        let r_re = self.world.graph.coverage(&plan.selection)?.r_re;
        self.cumulative_energy += totals.energy;

        let report = RoundReport {
            round,
            algorithm: cfg.algorithm,
            admissible: ctx.admissible.len(),
            bounds,
            assignment: assoc.assignment.clone(),
            r_re,
            energy: totals.energy,
            latency: totals.latency,
            objective: assoc.energy,
            max_kkt_residual: max_kkt,
            solver_calls: assoc.solver_calls,
            sigma_up_mean,
            sigma_down_max,
            accuracy,
            loss,
            cumulative_energy: self.cumulative_energy,
            plan,
        };
        let dt = cfg.scenario.dt;
        self.world.advance(dt, seed, round);
        self.round += 1;
        Ok(report)
    }
}

/// Run `cfg.rounds` global rounds from scratch.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, Error> {
    let mut sim = Simulator::new(cfg)?;
    let reports = (0..cfg.rounds)
        .map(|_| sim.step())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunOutput {
        config: cfg.clone(),
        summary: RunSummary::from_reports(cfg, &reports),
        reports,
    })
}
