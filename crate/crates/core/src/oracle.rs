//! Brute-force cross-checks of the allocator and the association heuristic on
//! small random instances.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::association::{exhaustive_assoc, fast_greedy, AssocClient, AssocError, AssocProblem, AssociationMap};
use crate::mobility::pathloss_db;
use crate::resource::{grid_oracle_p1, solve_p1, AoSolver, P1Client, P1Error, P1Instance};
use crate::rng::SimRng;

fn gain(distance: f64, carrier_ghz: f64) -> f64 {
    10f64.powf(-pathloss_db(distance, carrier_ghz) / 10.0)
}

fn template() -> P1Instance {
    P1Instance {
        clients: Vec::new(),
        bandwidth: 1e7,
        n0: 4e-21,
        t0: 0.2,
        tau: 1,
        cpu_min: 1e9,
        cpu_max: 1e10,
        model_bits: 2e5,
        capacitance: 2e-28,
    }
}

/// Feasible instance with 2–4 clients. `t0` is a random factor in
/// `[1.05, 4)` above the smallest budget an equal split at `ν_max` meets, so
/// binding and slack clients both occur.
pub fn random_p1_instance<R: Rng + ?Sized>(rng: &mut R) -> P1Instance {
    let m = rng.random_range(2..=4);
    let clients = (0..m)
        .map(|_| {
            let d: f64 = rng.random_range(50.0..600.0);
            let dist: f64 = rng.random_range(50.0..1500.0);
            let f: f64 = rng.random_range(1.0..4.0);
            P1Client {
                workload: 5.0 * 90822.0 * d,
                gain: gain(dist, f),
                tx_power: rng.random_range(0.1..1.0),
            }
        })
        .collect();
    let mut inst = P1Instance {
        clients,
        model_bits: rng.random_range(1e4..2e6),
        ..template()
    };
    let share = inst.bandwidth / m as f64;
    let need = (0..m)
        .map(|i| inst.clients[i].workload / inst.cpu_max + inst.comm_time(i, share))
        .fold(0.0, f64::max);
    inst.t0 = need * rng.random_range(1.05..4.0);
    inst
}

/// `m` clients, `k` ESs, everyone covered, distances 30–1000 m.
pub fn random_assoc_problem<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize) -> AssocProblem {
    let clients = (0..m)
        .map(|id| {
            let d: u64 = rng.random_range(50..300);
            AssocClient {
                id,
                data_size: d,
                workload: 5.0 * 90822.0 * d as f64,
                tx_power: rng.random_range(0.1..1.0),
                gains: (0..k).map(|_| Some(gain(rng.random_range(30.0..1000.0), 2.0))).collect(),
            }
        })
        .collect();
    AssocProblem {
        template: template(),
        es_bandwidth: vec![1e7; k],
        clients,
    }
}

/// Grid resolution used against the allocator: finer for fewer clients.
pub fn grid_resolution(m: usize) -> usize {
    if m <= 3 {
        300
    } else {
        120
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1OracleRow {
    pub clients: usize,
    pub energy: f64,
    pub grid_energy: f64,
    /// `(energy − grid) / grid`; negative when the allocator beats the grid.
    pub gap: f64,
    pub kkt_residual: f64,
    pub ao_iterations: usize,
    pub binding: usize,
}

pub fn p1_oracle_rows(seed: u64, count: usize, tol: f64) -> Result<Vec<P1OracleRow>, P1Error> {
    let mut rng = SimRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let inst = random_p1_instance(&mut rng);
            let sol = solve_p1(&inst, tol)?;
            let grid = grid_oracle_p1(&inst, grid_resolution(inst.len()))?;
            Ok(P1OracleRow {
                clients: inst.len(),
                energy: sol.objective,
                grid_energy: grid.objective,
                gap: (sol.objective - grid.objective) / grid.objective,
                kkt_residual: sol.kkt_residual,
                ao_iterations: sol.ao_iterations,
                binding: sol.clients.iter().filter(|c| c.binding).count(),
            })
        })
        .collect()
}

/// First violated partition invariant of an association, if any: every client
/// in exactly one group, at a covering ES, with the group's bandwidth respected.
pub fn partition_violation(problem: &AssocProblem, map: &AssociationMap) -> Option<String> {
    let mut seen = vec![0usize; problem.clients.len()];
    for g in &map.groups {
        if g.members.len() != g.solution.clients.len() {
            return Some(format!("ES {}: members and allocations differ in length", g.es));
        }
        let total: f64 = g.solution.clients.iter().map(|c| c.bandwidth).sum();
        if total > problem.es_bandwidth[g.es] * (1.0 + 1e-9) {
            return Some(format!("ES {}: bandwidth {total} exceeds {}", g.es, problem.es_bandwidth[g.es]));
        }
        for &i in &g.members {
            seen[i] += 1;
            if map.assignment.get(i) != Some(&g.es) {
                return Some(format!("client {i}: assignment disagrees with group {}", g.es));
            }
            if problem.clients[i].gains[g.es].is_none() {
                return Some(format!("client {i}: ES {} does not cover it", g.es));
            }
        }
    }
    seen.iter()
        .position(|&n| n != 1)
        .map(|i| format!("client {i} appears in {} groups", seen[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2OracleRow {
    pub greedy_energy: f64,
    pub optimum: f64,
    pub worst: f64,
    /// `greedy / optimum`
    pub ratio: f64,
    pub feasible_assignments: usize,
    pub violation: Option<String>,
}

pub fn p2_oracle_rows(seed: u64, count: usize, m: usize, k: usize, tol: f64) -> Result<Vec<P2OracleRow>, AssocError> {
    let mut rng = SimRng::seed_from_u64(seed);
    let solver = AoSolver { tol };
    (0..count)
        .map(|_| {
            let p = random_assoc_problem(&mut rng, m, k);
            let greedy = fast_greedy(&p, &solver)?;
            let ex = exhaustive_assoc(&p, &solver)?;
            let violation = partition_violation(&p, &greedy).or_else(|| partition_violation(&p, &ex.best));
            Ok(P2OracleRow {
                greedy_energy: greedy.energy,
                optimum: ex.best.energy,
                worst: ex.worst_energy,
                ratio: greedy.energy / ex.best.energy,
                feasible_assignments: ex.feasible,
                violation,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p1_rows_agree_with_grid() {
        for row in p1_oracle_rows(5, 6, 1e-10).unwrap() {
            assert!(row.gap <= 0.01, "{row:?}");
            assert!(row.kkt_residual < 1e-6);
            assert!(row.ao_iterations <= row.clients + 1);
        }
    }

    #[test]
    fn p2_rows_are_sane() {
        for row in p2_oracle_rows(8, 3, 4, 2, 1e-10).unwrap() {
            assert!(row.violation.is_none(), "{row:?}");
            assert!(row.ratio >= 1.0 - 1e-9);
            assert!(row.worst >= row.optimum);
        }
    }

    #[test]
    fn detects_broken_partitions() {
        let mut rng = SimRng::seed_from_u64(2);
        let p = random_assoc_problem(&mut rng, 3, 2);
        let mut map = fast_greedy(&p, &AoSolver::default()).unwrap();
        assert_eq!(partition_violation(&p, &map), None);
        let g = &mut map.groups[0];
        let extra = g.solution.clients[0];
        g.members.push(g.members[0]);
        g.solution.clients.push(extra);
        assert!(partition_violation(&p, &map).is_some());
    }
}
