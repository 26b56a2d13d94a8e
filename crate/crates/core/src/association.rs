//! Client-to-ES association: the fast greedy heuristic and an exhaustive oracle.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resource::{AllocationSolution, P1Client, P1Error, P1Instance, P1Solver};
use crate::socialnet::ClientId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("client {client} is outside every ES's coverage")]
    NoCoverage { client: ClientId },
    #[error("client {client} cannot be added to any covering ES without breaking feasibility")]
    Infeasible { client: ClientId },
    #[error("no feasible assignment exists")]
    NoFeasibleAssignment,
    #[error("exhaustive search over {states} assignments exceeds the limit of {limit}")]
    SizeError { states: f64, limit: usize },
    #[error(transparent)]
    Solver(#[from] P1Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssocClient {
    pub id: ClientId,
    pub data_size: u64,
    /// `X_n`, cycles per edge iteration
    pub workload: f64,
    pub tx_power: f64,
    /// Channel gain to each ES; `None` outside coverage.
    pub gains: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssocProblem {
    /// Shared P1 parameters; `clients` and `bandwidth` are ignored.
    pub template: P1Instance,
    pub es_bandwidth: Vec<f64>,
    pub clients: Vec<AssocClient>,
}

impl AssocProblem {
    pub fn n_es(&self) -> usize {
        self.es_bandwidth.len()
    }

    /// P1 instance for ES `es` serving `members` (indices into `clients`).
    pub fn instance(&self, es: usize, members: &[usize]) -> P1Instance {
        P1Instance {
            clients: members
                .iter()
                .map(|&i| {
                    let c = &self.clients[i];
                    P1Client {
                        workload: c.workload,
                        gain: c.gains[es].expect("member is covered by its ES"),
                        tx_power: c.tx_power,
                    }
                })
                .collect(),
            bandwidth: self.es_bandwidth[es],
            ..self.template.clone()
        }
    }

    fn covering(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.clients[i]
            .gains
            .iter()
            .enumerate()
            .filter_map(|(k, g)| g.map(|_| k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsGroup {
    pub es: usize,
    /// Indices into the problem's client list, aligned with `solution.clients`.
    pub members: Vec<usize>,
    pub solution: AllocationSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMap {
    /// ES of each problem client.
    pub assignment: Vec<usize>,
    /// Non-empty ES groups in ES order.
    pub groups: Vec<EsGroup>,
    /// `Σ_k E_k*`, J
    pub energy: f64,
    pub solver_calls: usize,
}

impl AssociationMap {
    pub fn empty() -> Self {
        Self {
            assignment: Vec::new(),
            groups: Vec::new(),
            energy: 0.0,
            solver_calls: 0,
        }
    }

    pub fn group_of(&self, es: usize) -> Option<&EsGroup> {
        self.groups.iter().find(|g| g.es == es)
    }
}

fn infeasible(e: &P1Error) -> bool {
    matches!(
        e,
        P1Error::ClientInfeasible { .. } | P1Error::BandwidthExhausted { .. }
    )
}

/// Assign clients in descending data-size order (ties: ascending id), each to
/// the covering ES whose tentative re-solve adds the least energy (ties: lowest
/// ES index).
pub fn fast_greedy(problem: &AssocProblem, solver: &dyn P1Solver) -> Result<AssociationMap, AssocError> {
    let n = problem.clients.len();
    let k = problem.n_es();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&problem.clients[a], &problem.clients[b]);
        cb.data_size.cmp(&ca.data_size).then(ca.id.cmp(&cb.id))
    });

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut solutions: Vec<Option<AllocationSolution>> = vec![None; k];
    let mut assignment = vec![usize::MAX; n];
    let mut calls = 0;
    for &i in &order {
        let mut best: Option<(f64, usize, AllocationSolution)> = None;
        let mut covered = false;
        for es in problem.covering(i) {
            covered = true;
            let mut trial = members[es].clone();
            trial.push(i);
            calls += 1;
            let sol = match solver.solve(&problem.instance(es, &trial)) {
                Ok(s) => s,
                Err(e) if infeasible(&e) => continue,
                Err(e) => return Err(e.into()),
            };
            let before = solutions[es].as_ref().map_or(0.0, |s| s.objective);
            let delta = sol.objective - before;
            if best.as_ref().is_none_or(|(d, _, _)| delta < *d) {
                best = Some((delta, es, sol));
            }
        }
        let id = problem.clients[i].id;
        let (_, es, sol) = match best {
            Some(b) => b,
            None if !covered => return Err(AssocError::NoCoverage { client: id }),
            None => return Err(AssocError::Infeasible { client: id }),
        };
        members[es].push(i);
        solutions[es] = Some(sol);
        assignment[i] = es;
    }
    Ok(assemble(assignment, members, solutions, calls))
}

fn assemble(
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    solutions: Vec<Option<AllocationSolution>>,
    solver_calls: usize,
) -> AssociationMap {
    let groups: Vec<EsGroup> = members
        .into_iter()
        .zip(solutions)
        .enumerate()
        .filter_map(|(es, (m, s))| {
            s.map(|solution| EsGroup {
                es,
                members: m,
                solution,
            })
        })
        .collect();
    AssociationMap {
        assignment,
        energy: groups.iter().map(|g| g.solution.objective).sum(),
        groups,
        solver_calls,
    }
}

pub const EXHAUSTIVE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub best: AssociationMap,
    /// Energy of the worst feasible assignment.
    pub worst_energy: f64,
    pub feasible: usize,
    pub states: usize,
}

/// Optimal association by enumeration of every in-coverage assignment.
pub fn exhaustive_assoc(problem: &AssocProblem, solver: &dyn P1Solver) -> Result<ExhaustiveResult, AssocError> {
    let n = problem.clients.len();
    let k = problem.n_es();
    let states = (k as f64).powi(n as i32);
    if states > EXHAUSTIVE_LIMIT as f64 || n > 64 {
        return Err(AssocError::SizeError {
            states,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    if n == 0 {
        return Ok(ExhaustiveResult {
            best: AssociationMap::empty(),
            worst_energy: 0.0,
            feasible: 1,
            states: 1,
        });
    }
    for i in 0..n {
        if problem.covering(i).next().is_none() {
            return Err(AssocError::NoCoverage {
                client: problem.clients[i].id,
            });
        }
    }

    let mut cache: HashMap<(usize, u64), Option<AllocationSolution>> = HashMap::new();
    let mut calls = 0;
    let mut eval = |es: usize, mask: u64| -> Result<Option<AllocationSolution>, AssocError> {
        if let Some(hit) = cache.get(&(es, mask)) {
            return Ok(hit.clone());
        }
        let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        calls += 1;
        let out = match solver.solve(&problem.instance(es, &members)) {
            Ok(s) => Some(s),
            Err(e) if infeasible(&e) => None,
            Err(e) => return Err(e.into()),
        };
        cache.insert((es, mask), out.clone());
        Ok(out)
    };

    let mut digits = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut worst = f64::NEG_INFINITY;
    let mut feasible = 0;
    let mut visited = 0;
    'outer: loop {
        visited += 1;
        if digits
            .iter()
            .enumerate()
            .all(|(i, &es)| problem.clients[i].gains[es].is_some())
        {
            let mut masks = vec![0u64; k];
            for (i, &es) in digits.iter().enumerate() {
                masks[es] |= 1 << i;
            }
            let mut total = 0.0;
            let mut ok = true;
            for (es, &mask) in masks.iter().enumerate() {
                if mask == 0 {
                    continue;
                }
                match eval(es, mask)? {
                    Some(s) => total += s.objective,
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                feasible += 1;
                worst = worst.max(total);
                if best.as_ref().is_none_or(|(e, _)| total < *e) {
                    best = Some((total, digits.clone()));
                }
            }
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < k {
                continue 'outer;
            }
            *d = 0;
        }
        break;
    }

    let (_, assignment) = best.ok_or(AssocError::NoFeasibleAssignment)?;
    let mut members = vec![Vec::new(); k];
    for (i, &es) in assignment.iter().enumerate() {
        members[es].push(i);
    }
    let mut solutions = vec![None; k];
    for (es, m) in members.iter().enumerate() {
        if !m.is_empty() {
            let mask = m.iter().fold(0u64, |acc, &i| acc | 1 << i);
            solutions[es] = eval(es, mask)?;
        }
    }
    Ok(ExhaustiveResult {
        best: assemble(assignment, members, solutions, calls),
        worst_energy: worst,
        feasible,
        states: visited,
    })
}
