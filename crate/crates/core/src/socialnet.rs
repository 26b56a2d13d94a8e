//! Data-sharing social graph and effective/redundant data accounting.
//!
//! Every sample lives in exactly one [`SampleBlock`]. A block is owned either by a
//! single client (private data) or by two clients (data exchanged between them,
//! e.g. a chat history stored on both phones). Shared blocks are the edges of the
//! social graph.
//!
//! For a selection `S` of clients:
//! * the *effective* data is the union of the selected clients' blocks;
//! * the *redundant* data is the set of samples held by two selected clients,
//!   i.e. trained twice in the same round.
//!
//! Because no block has more than two owners,
//! `trained(S) = effective(S) + redundant(S)` holds exactly.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SimRng};

pub type ClientId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph configuration: {0}")]
    Config(String),
    #[error("unknown client id {0}")]
    UnknownClient(ClientId),
    #[error("invalid block {id}: {reason}")]
    InvalidBlock { id: u32, reason: String },
    #[error("client {0} owns no samples")]
    EmptyClient(ClientId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One or two owners. The pair form is stored with the smaller id first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClientId>", into = "Vec<ClientId>")]
pub enum Owners {
    Single(ClientId),
    Pair(ClientId, ClientId),
}

impl Owners {
    pub fn pair(a: ClientId, b: ClientId) -> Self {
        if a <= b {
            Owners::Pair(a, b)
        } else {
            Owners::Pair(b, a)
        }
    }

    pub fn contains(&self, c: ClientId) -> bool {
        match *self {
            Owners::Single(a) => a == c,
            Owners::Pair(a, b) => a == c || b == c,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ClientId> {
        let (a, b) = match *self {
            Owners::Single(a) => (a, None),
            Owners::Pair(a, b) => (a, Some(b)),
        };
        std::iter::once(a).chain(b)
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, Owners::Pair(..))
    }

    /// For a shared block, the owner that is not `c`.
    pub fn partner(&self, c: ClientId) -> Option<ClientId> {
        match *self {
            Owners::Pair(a, b) if a == c => Some(b),
            Owners::Pair(a, b) if b == c => Some(a),
            _ => None,
        }
    }
}

impl TryFrom<Vec<ClientId>> for Owners {
    type Error = String;

    fn try_from(v: Vec<ClientId>) -> Result<Self, Self::Error> {
        match v.as_slice() {
            [a] => Ok(Owners::Single(*a)),
            [a, b] if a != b => Ok(Owners::pair(*a, *b)),
            [_, _] => Err("a block cannot be shared by a client with itself".into()),
            _ => Err(format!("a block must have 1 or 2 owners, got {}", v.len())),
        }
    }
}

impl From<Owners> for Vec<ClientId> {
    fn from(o: Owners) -> Self {
        o.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBlock {
    pub id: u32,
    pub size: u64,
    pub owners: Owners,
}

/// On-disk form of a [`SocialGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub clients: Vec<String>,
    pub blocks: Vec<SampleBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct SocialGraph {
    names: Vec<String>,
    blocks: Vec<SampleBlock>,
    /// Block indices per client.
    client_blocks: Vec<Vec<usize>>,
    data_sizes: Vec<u64>,
    total_unique: u64,
    total_shared: u64,
}

impl TryFrom<GraphFile> for SocialGraph {
    type Error = GraphError;

    fn try_from(f: GraphFile) -> Result<Self, Self::Error> {
        SocialGraph::new(f.clients, f.blocks)
    }
}

impl From<SocialGraph> for GraphFile {
    fn from(g: SocialGraph) -> Self {
        GraphFile {
            clients: g.names,
            blocks: g.blocks,
        }
    }
}

impl SocialGraph {
    pub fn new(names: Vec<String>, blocks: Vec<SampleBlock>) -> Result<Self, GraphError> {
        let n = names.len();
        if n == 0 {
            return Err(GraphError::Config("graph has no clients".into()));
        }
        let mut client_blocks = vec![Vec::new(); n];
        let mut data_sizes = vec![0u64; n];
        let mut ids = BTreeSet::new();
        let mut total_unique = 0;
        let mut total_shared = 0;
        for (bi, b) in blocks.iter().enumerate() {
            if b.size == 0 {
                return Err(GraphError::InvalidBlock {
                    id: b.id,
                    reason: "size must be at least 1".into(),
                });
            }
            if !ids.insert(b.id) {
                return Err(GraphError::InvalidBlock {
                    id: b.id,
                    reason: "duplicate block id".into(),
                });
            }
            for c in b.owners.iter() {
                if c >= n {
                    return Err(GraphError::UnknownClient(c));
                }
                client_blocks[c].push(bi);
                data_sizes[c] += b.size;
            }
            total_unique += b.size;
            if b.owners.is_shared() {
                total_shared += b.size;
            }
        }
        if let Some(c) = data_sizes.iter().position(|&d| d == 0) {
            return Err(GraphError::EmptyClient(c));
        }
        Ok(Self {
            names,
            blocks,
            client_blocks,
            data_sizes,
            total_unique,
            total_shared,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn n_clients(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn blocks(&self) -> &[SampleBlock] {
        &self.blocks
    }

    /// Indices (into [`Self::blocks`]) of the blocks `c` owns.
    pub fn blocks_of(&self, c: ClientId) -> &[usize] {
        &self.client_blocks[c]
    }

    /// `D_n`: total samples held by client `c`, shared blocks included.
    pub fn data_size(&self, c: ClientId) -> u64 {
        self.data_sizes[c]
    }

    pub fn data_sizes(&self) -> &[u64] {
        &self.data_sizes
    }

    /// `D_ef^U`: number of distinct samples in the community.
    pub fn total_unique(&self) -> u64 {
        self.total_unique
    }

    /// `D_re^U`: samples that would be trained twice if everyone participated.
    pub fn total_shared(&self) -> u64 {
        self.total_shared
    }

    /// Shared-sample count between two clients (0 if they are not adjacent).
    pub fn edge_weight(&self, a: ClientId, b: ClientId) -> u64 {
        if a >= self.n_clients() || b >= self.n_clients() {
            return 0;
        }
        self.client_blocks[a]
            .iter()
            .map(|&bi| &self.blocks[bi])
            .filter(|b_| b_.owners.partner(a) == Some(b))
            .map(|b_| b_.size)
            .sum()
    }

    pub fn n_edges(&self) -> usize {
        let pairs: BTreeSet<_> = self
            .blocks
            .iter()
            .filter_map(|b| match b.owners {
                Owners::Pair(x, y) => Some((x, y)),
                Owners::Single(_) => None,
            })
            .collect();
        pairs.len()
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.n_edges() as f64 / self.n_clients() as f64
    }

    fn selection_mask(&self, selection: &[ClientId]) -> Result<Vec<bool>, GraphError> {
        let mut mask = vec![false; self.n_clients()];
        for &c in selection {
            if c >= mask.len() {
                return Err(GraphError::UnknownClient(c));
            }
            mask[c] = true;
        }
        Ok(mask)
    }

    /// Effective/redundant data and coverage rates of a selection.
    /// Duplicate ids in `selection` are ignored.
    pub fn coverage(&self, selection: &[ClientId]) -> Result<CoverageReport, GraphError> {
        let mask = self.selection_mask(selection)?;
        let mut effective = 0;
        let mut redundant = 0;
        for b in &self.blocks {
            let picked = b.owners.iter().filter(|&c| mask[c]).count();
            if picked >= 1 {
                effective += b.size;
            }
            if picked == 2 {
                redundant += b.size;
            }
        }
        let trained = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(c, _)| self.data_sizes[c])
            .sum();
        Ok(CoverageReport::new(
            effective,
            redundant,
            trained,
            self.total_unique,
            self.total_shared,
        ))
    }

    /// Same contract as [`Self::coverage`], computed by materialising every sample
    /// id and taking literal unions and pairwise intersections. Test oracle.
    pub fn coverage_oracle(&self, selection: &[ClientId]) -> Result<CoverageReport, GraphError> {
        let mask = self.selection_mask(selection)?;
        let mut offset = 0u64;
        let mut datasets: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); self.n_clients()];
        for b in &self.blocks {
            for c in b.owners.iter() {
                datasets[c].extend(offset..offset + b.size);
            }
            offset += b.size;
        }
        let chosen: Vec<&BTreeSet<u64>> = mask
            .iter()
            .zip(&datasets)
            .filter(|(&m, _)| m)
            .map(|(_, d)| d)
            .collect();

        let union: BTreeSet<u64> = chosen.iter().flat_map(|d| d.iter().copied()).collect();
        let mut twice = BTreeSet::new();
        for i in 0..chosen.len() {
            for j in i + 1..chosen.len() {
                twice.extend(chosen[i].intersection(chosen[j]).copied());
            }
        }
        let trained = chosen.iter().map(|d| d.len() as u64).sum();

        let all_union: BTreeSet<u64> = datasets.iter().flat_map(|d| d.iter().copied()).collect();
        let mut all_twice = BTreeSet::new();
        for i in 0..datasets.len() {
            for j in i + 1..datasets.len() {
                all_twice.extend(datasets[i].intersection(&datasets[j]).copied());
            }
        }
        Ok(CoverageReport::new(
            union.len() as u64,
            twice.len() as u64,
            trained,
            all_union.len() as u64,
            all_twice.len() as u64,
        ))
    }

    pub fn tracker(&self) -> CoverageTracker<'_> {
        CoverageTracker::new(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub effective_size: u64,
    pub redundant_size: u64,
    pub trained_size: u64,
    pub r_ef: f64,
    pub r_re: f64,
}

impl CoverageReport {
    fn new(effective: u64, redundant: u64, trained: u64, unique_all: u64, shared_all: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Self {
            effective_size: effective,
            redundant_size: redundant,
            trained_size: trained,
            r_ef: ratio(effective, unique_all),
            r_re: ratio(redundant, shared_all),
        }
    }
}

/// Incremental coverage state used by the greedy selection heuristics.
#[derive(Debug, Clone)]
pub struct CoverageTracker<'g> {
    graph: &'g SocialGraph,
    selected: Vec<bool>,
    covered: Vec<bool>,
    effective: u64,
    redundant: u64,
    order: Vec<ClientId>,
}

impl<'g> CoverageTracker<'g> {
    pub fn new(graph: &'g SocialGraph) -> Self {
        Self {
            graph,
            selected: vec![false; graph.n_clients()],
            covered: vec![false; graph.blocks.len()],
            effective: 0,
            redundant: 0,
            order: Vec::new(),
        }
    }

    pub fn is_selected(&self, c: ClientId) -> bool {
        self.selected[c]
    }

    /// Samples `c` would add to the effective set.
    pub fn marginal_effective(&self, c: ClientId) -> u64 {
        self.graph.client_blocks[c]
            .iter()
            .filter(|&&bi| !self.covered[bi])
            .map(|&bi| self.graph.blocks[bi].size)
            .sum()
    }

    /// Samples `c` would add to the redundant set.
    pub fn marginal_redundant(&self, c: ClientId) -> u64 {
        self.graph.client_blocks[c]
            .iter()
            .map(|&bi| &self.graph.blocks[bi])
            .filter(|b| b.owners.partner(c).is_some_and(|p| self.selected[p]))
            .map(|b| b.size)
            .sum()
    }

    pub fn add(&mut self, c: ClientId) {
        if self.selected[c] {
            return;
        }
        self.effective += self.marginal_effective(c);
        self.redundant += self.marginal_redundant(c);
        for &bi in &self.graph.client_blocks[c] {
            self.covered[bi] = true;
        }
        self.selected[c] = true;
        self.order.push(c);
    }

    pub fn effective(&self) -> u64 {
        self.effective
    }

    pub fn redundant(&self) -> u64 {
        self.redundant
    }

    pub fn r_ef(&self) -> f64 {
        if self.graph.total_unique == 0 {
            0.0
        } else {
            self.effective as f64 / self.graph.total_unique as f64
        }
    }

    pub fn selection(&self) -> &[ClientId] {
        &self.order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub n_clients: usize,
    pub avg_degree: f64,
    pub private_size: (u64, u64),
    pub shared_size: (u64, u64),
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            n_clients: 60,
            avg_degree: 4.0,
            private_size: (50, 300),
            shared_size: (20, 100),
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        let range_ok = |(lo, hi): (u64, u64)| lo >= 1 && lo <= hi;
        if self.n_clients == 0 {
            return Err(GraphError::Config("n_clients must be at least 1".into()));
        }
        if !(self.avg_degree.is_finite() && self.avg_degree >= 0.0) {
            return Err(GraphError::Config(format!(
                "avg_degree must be a nonnegative number, got {}",
                self.avg_degree
            )));
        }
        if !range_ok(self.private_size) {
            return Err(GraphError::Config(format!(
                "private size range {:?} must satisfy 1 <= min <= max",
                self.private_size
            )));
        }
        if !range_ok(self.shared_size) {
            return Err(GraphError::Config(format!(
                "shared size range {:?} must satisfy 1 <= min <= max",
                self.shared_size
            )));
        }
        Ok(())
    }
}

/// Sparse random community: one private block per client plus
/// `round(avg_degree * n / 2)` distinct client pairs drawn uniformly
/// (the G(n, m) Erdős–Rényi variant), each carrying one shared block.
pub fn generate_graph(params: &GraphParams, seed: u64) -> Result<SocialGraph, GraphError> {
    params.validate()?;
    let mut rng: SimRng = rng::stream(seed, &[rng::tag::GRAPH]);
    let n = params.n_clients;
    let mut blocks = Vec::new();
    for c in 0..n {
        blocks.push(SampleBlock {
            id: c as u32,
            size: rng.random_range(params.private_size.0..=params.private_size.1),
            owners: Owners::Single(c),
        });
    }

    let max_edges = n * (n - 1) / 2;
    let target = ((params.avg_degree * n as f64 / 2.0).round() as usize).min(max_edges);
    let mut picked: Vec<usize> = index::sample(&mut rng, max_edges.max(1), target)
        .into_iter()
        .collect();
    picked.sort_unstable();
    for (k, lin) in picked.into_iter().enumerate() {
        let (a, b) = pair_from_linear(n, lin);
        blocks.push(SampleBlock {
            id: (n + k) as u32,
            size: rng.random_range(params.shared_size.0..=params.shared_size.1),
            owners: Owners::pair(a, b),
        });
    }
    let names = (0..n).map(|c| format!("u{c}")).collect();
    SocialGraph::new(names, blocks)
}

/// Maps `0..n(n-1)/2` onto the pairs `(i, j)`, `i < j`, in row-major order.
fn pair_from_linear(n: usize, mut lin: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if lin < row {
            return (i, i + 1 + lin);
        }
        lin -= row;
    }
    unreachable!("linear pair index out of range")
}
