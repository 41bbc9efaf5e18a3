//! Routing-game data model: instances, flows, congestion, tolls, costs,
//! the exact potential function, and the unsatisfaction predicate.
//!
//! An instance is a directed graph (parallel edges allowed) with a convex
//! non-decreasing latency on each edge and one unit demand per player. All
//! types are immutable values after construction; every operation here is a
//! pure function.

use std::fmt;

use thiserror::Error;

/// Absolute tolerance for real comparisons throughout the crate.
pub const ABS_TOL: f64 = 1e-9;

/// Conservation residual allowed for fractional flows produced by the solver.
pub const FLOW_FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("player {player}: conservation violated at vertex '{vertex}' (residual {residual:.3e})")]
    Conservation {
        player: usize,
        vertex: String,
        residual: f64,
    },
    #[error("player {player}: support is not a single simple path ({detail})")]
    NotSimplePath { player: usize, detail: String },
    #[error("player index {index} out of range (n = {n})")]
    PlayerIndex { index: usize, n: usize },
    #[error("flow is not integral at player {player}, edge {edge}")]
    NotIntegral { player: usize, edge: usize },
    #[error("player {player}: destination unreachable from source")]
    Unreachable { player: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Latency functions
// ---------------------------------------------------------------------------

/// Per-edge latency, restricted to families that are non-decreasing, convex
/// and twice differentiable on `[0, n]` by construction (coefficients are
/// required non-negative).
#[derive(Debug, Clone, PartialEq)]
pub enum Latency {
    /// `a*y + b`. A constant latency is `a = 0`.
    Affine { a: f64, b: f64 },
    /// `a*y^k + b` with integer exponent `k >= 1`.
    Monomial { a: f64, k: u32, b: f64 },
}

impl Latency {
    pub fn constant(c: f64) -> Self {
        Latency::Affine { a: 0.0, b: c }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let (a, b, k) = match *self {
            Latency::Affine { a, b } => (a, b, 1),
            Latency::Monomial { a, k, b } => (a, b, k),
        };
        if !(a >= 0.0) || !(b >= 0.0) {
            return Err(GameError::InvalidInstance(format!(
                "latency coefficients must be non-negative, got a={a}, b={b}"
            )));
        }
        if k < 1 {
            return Err(GameError::InvalidInstance(
                "monomial exponent must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Latency::Affine { a, b } => a * y + b,
            Latency::Monomial { a, k, b } => a * y.powi(k as i32) + b,
        }
    }

    pub fn deriv(&self, y: f64) -> f64 {
        match *self {
            Latency::Affine { a, .. } => a,
            Latency::Monomial { a, k, .. } => a * k as f64 * y.powi(k as i32 - 1),
        }
    }

    pub fn second_deriv(&self, y: f64) -> f64 {
        match *self {
            Latency::Affine { .. } => 0.0,
            Latency::Monomial { a, k, .. } => {
                if k < 2 {
                    0.0
                } else {
                    a * (k as f64) * (k as f64 - 1.0) * y.powi(k as i32 - 2)
                }
            }
        }
    }

    /// Tight Lipschitz constant on `[0, n]`: the derivative at `y = n`
    /// (maximal there since the families are convex).
    pub fn lipschitz(&self, n: usize) -> f64 {
        self.deriv(n as f64)
    }
}

impl fmt::Display for Latency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Latency::Affine { a, b } if a == 0.0 => write!(f, "const {b}"),
            Latency::Affine { a, b } => write!(f, "affine {a} {b}"),
            Latency::Monomial { a, k, b } => write!(f, "monomial {a} {k} {b}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

/// A directed edge, stored by vertex index. Parallel edges are distinct
/// entries of the edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
}

/// A routing-game instance: graph, latencies and one demand pair per player.
#[derive(Debug, Clone)]
pub struct RoutingInstance {
    vertex_names: Vec<String>,
    edges: Vec<Edge>,
    latencies: Vec<Latency>,
    demands: Vec<(usize, usize)>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl RoutingInstance {
    /// Build and validate an instance. Checks that demand endpoints exist,
    /// that every demand is routable, and that latencies are well-formed.
    /// Returns warnings for latencies violating the `l_e(n) <= n`
    /// boundedness condition (a guarantee-scaling condition, not an error).
    pub fn new(
        vertex_names: Vec<String>,
        edges: Vec<Edge>,
        latencies: Vec<Latency>,
        demands: Vec<(usize, usize)>,
    ) -> Result<(Self, Vec<String>), GameError> {
        if edges.is_empty() {
            return Err(GameError::InvalidInstance("need at least one edge".into()));
        }
        if demands.is_empty() {
            return Err(GameError::InvalidInstance(
                "need at least one demand".into(),
            ));
        }
        if edges.len() != latencies.len() {
            return Err(GameError::Dimension {
                expected: edges.len(),
                got: latencies.len(),
            });
        }
        let nv = vertex_names.len();
        {
            let mut sorted = vertex_names.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != nv {
                return Err(GameError::InvalidInstance("duplicate vertex id".into()));
            }
        }
        for (i, e) in edges.iter().enumerate() {
            if e.tail >= nv || e.head >= nv {
                return Err(GameError::InvalidInstance(format!(
                    "edge {i} endpoint out of range"
                )));
            }
        }
        for lat in &latencies {
            lat.validate()?;
        }
        let mut out_edges = vec![Vec::new(); nv];
        let mut in_edges = vec![Vec::new(); nv];
        for (idx, e) in edges.iter().enumerate() {
            out_edges[e.tail].push(idx);
            in_edges[e.head].push(idx);
        }
        let inst = RoutingInstance {
            vertex_names,
            edges,
            latencies,
            demands,
            out_edges,
            in_edges,
        };
        for (i, &(s, t)) in inst.demands.iter().enumerate() {
            if s >= nv || t >= nv {
                return Err(GameError::InvalidInstance(format!(
                    "demand {i} endpoint out of range"
                )));
            }
            if inst.shortest_hop_path(s, t).is_none() {
                return Err(GameError::Unreachable { player: i });
            }
        }
        let mut warnings = Vec::new();
        let n = inst.num_players();
        for (e, lat) in inst.latencies.iter().enumerate() {
            let v = lat.eval(n as f64);
            if v > n as f64 + ABS_TOL {
                warnings.push(format!(
                    "latency on edge {e} violates boundedness: l({n}) = {v} > {n}"
                ));
            }
        }
        Ok((inst, warnings))
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_players(&self) -> usize {
        self.demands.len()
    }

    pub fn vertex_name(&self, v: usize) -> &str {
        &self.vertex_names[v]
    }

    pub fn vertex_names(&self) -> &[String] {
        &self.vertex_names
    }

    pub fn vertex_index(&self, name: &str) -> Option<usize> {
        self.vertex_names.iter().position(|v| v == name)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn latency(&self, e: usize) -> &Latency {
        &self.latencies[e]
    }

    pub fn latencies(&self) -> &[Latency] {
        &self.latencies
    }

    pub fn demands(&self) -> &[(usize, usize)] {
        &self.demands
    }

    pub fn demand(&self, i: usize) -> (usize, usize) {
        self.demands[i]
    }

    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    /// Instance Lipschitz constant: `gamma = max_e l_e'(n)`.
    pub fn gamma(&self) -> f64 {
        let n = self.num_players();
        self.latencies
            .iter()
            .map(|l| l.lipschitz(n))
            .fold(0.0, f64::max)
    }

    /// Toll cap `U = n * gamma`.
    pub fn toll_cap(&self) -> f64 {
        self.num_players() as f64 * self.gamma()
    }

    /// Same graph and latencies, different demand list.
    pub fn with_demands(&self, demands: Vec<(usize, usize)>) -> Result<Self, GameError> {
        let (inst, _) = RoutingInstance::new(
            self.vertex_names.clone(),
            self.edges.clone(),
            self.latencies.clone(),
            demands,
        )?;
        Ok(inst)
    }

    /// Fewest-edges path from `s` to `t` (BFS, smallest edge index first).
    /// Returns the ordered edge list; `Some(vec![])` when `s == t`.
    pub fn shortest_hop_path(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        if s == t {
            return Some(Vec::new());
        }
        let nv = self.num_vertices();
        let mut prev: Vec<Option<usize>> = vec![None; nv];
        let mut seen = vec![false; nv];
        let mut queue = std::collections::VecDeque::new();
        seen[s] = true;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &self.out_edges[u] {
                let v = self.edges[e].head;
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = Some(e);
                    if v == t {
                        return Some(self.unwind_path(s, t, &prev));
                    }
                    queue.push_back(v);
                }
            }
        }
        None
    }

    fn unwind_path(&self, s: usize, t: usize, prev: &[Option<usize>]) -> Vec<usize> {
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            let e = prev[v].expect("broken predecessor chain");
            path.push(e);
            v = self.edges[e].tail;
        }
        path.reverse();
        path
    }

    /// Cheapest `s -> t` path under the given non-negative edge weights
    /// (Dijkstra; deterministic tie-break by settle order and edge index).
    /// Returns `(cost, ordered edge list)`.
    pub fn cheapest_path(&self, s: usize, t: usize, weights: &[f64]) -> Option<(f64, Vec<usize>)> {
        debug_assert_eq!(weights.len(), self.num_edges());
        if s == t {
            return Some((0.0, Vec::new()));
        }
        let nv = self.num_vertices();
        let mut dist = vec![f64::INFINITY; nv];
        let mut prev: Vec<Option<usize>> = vec![None; nv];
        let mut settled = vec![false; nv];
        let mut heap = std::collections::BinaryHeap::new();
        dist[s] = 0.0;
        heap.push(HeapEntry {
            cost: 0.0,
            vertex: s,
        });
        while let Some(HeapEntry { cost, vertex: u }) = heap.pop() {
            if settled[u] {
                continue;
            }
            settled[u] = true;
            if u == t {
                return Some((cost, self.unwind_path(s, t, &prev)));
            }
            for &e in &self.out_edges[u] {
                let v = self.edges[e].head;
                let nd = cost + weights[e];
                if !settled[v] && nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = Some(e);
                    heap.push(HeapEntry {
                        cost: nd,
                        vertex: v,
                    });
                }
            }
        }
        None
    }
}

/// Min-heap entry ordered by cost, then vertex index for determinism.
struct HeapEntry {
    cost: f64,
    vertex: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.vertex == other.vertex
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // reversed: BinaryHeap is a max-heap, we want smallest cost first
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(other.vertex.cmp(&self.vertex))
    }
}

// ---------------------------------------------------------------------------
// Flows, congestion, tolls
// ---------------------------------------------------------------------------

/// Unsplittable flow: one `{0,1}` row per player, support a single simple
/// directed path for the player's demand (empty for a self-loop demand).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralFlow {
    rows: Vec<Vec<u8>>,
}

impl IntegralFlow {
    /// Assemble from per-player edge lists; validates against the instance.
    pub fn from_paths(inst: &RoutingInstance, paths: &[Vec<usize>]) -> Result<Self, GameError> {
        if paths.len() != inst.num_players() {
            return Err(GameError::Dimension {
                expected: inst.num_players(),
                got: paths.len(),
            });
        }
        let m = inst.num_edges();
        let mut rows = vec![vec![0u8; m]; paths.len()];
        for (i, path) in paths.iter().enumerate() {
            for &e in path {
                if e >= m {
                    return Err(GameError::Dimension { expected: m, got: e });
                }
                rows[i][e] = 1;
            }
        }
        let flow = IntegralFlow { rows };
        flow.validate(inst)?;
        Ok(flow)
    }

    pub fn from_rows(inst: &RoutingInstance, rows: Vec<Vec<u8>>) -> Result<Self, GameError> {
        let flow = IntegralFlow { rows };
        flow.validate(inst)?;
        Ok(flow)
    }

    pub fn num_players(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    /// Replace one player's route (revalidates that player only).
    pub fn with_player_path(
        &self,
        inst: &RoutingInstance,
        i: usize,
        path: &[usize],
    ) -> Result<Self, GameError> {
        let mut rows = self.rows.clone();
        let mut row = vec![0u8; inst.num_edges()];
        for &e in path {
            row[e] = 1;
        }
        rows[i] = row;
        let flow = IntegralFlow { rows };
        flow.validate_player(inst, i)?;
        Ok(flow)
    }

    /// Per-edge loads `y_e = sum_i x_{i,e}`.
    pub fn congestion(&self, inst: &RoutingInstance) -> Congestion {
        let m = inst.num_edges();
        let mut y = vec![0.0; m];
        for row in &self.rows {
            for (e, &v) in row.iter().enumerate() {
                y[e] += v as f64;
            }
        }
        Congestion { y, n: self.rows.len() }
    }

    /// Ordered edge list of player `i`'s path, derived from the matrix row
    /// by walking the support from the source.
    pub fn path_edges(&self, inst: &RoutingInstance, i: usize) -> Vec<usize> {
        walk_row_path(inst, inst.demand(i), &self.rows[i])
    }

    /// Full feasibility: conservation and simple-path support per player.
    pub fn validate(&self, inst: &RoutingInstance) -> Result<(), GameError> {
        if self.rows.len() != inst.num_players() {
            return Err(GameError::Dimension {
                expected: inst.num_players(),
                got: self.rows.len(),
            });
        }
        for i in 0..self.rows.len() {
            self.validate_player(inst, i)?;
        }
        Ok(())
    }

    fn validate_player(&self, inst: &RoutingInstance, i: usize) -> Result<(), GameError> {
        let row = &self.rows[i];
        if row.len() != inst.num_edges() {
            return Err(GameError::Dimension {
                expected: inst.num_edges(),
                got: row.len(),
            });
        }
        for (e, &v) in row.iter().enumerate() {
            if v > 1 {
                return Err(GameError::NotIntegral { player: i, edge: e });
            }
        }
        check_conservation(inst, i, &row.iter().map(|&v| v as f64).collect::<Vec<_>>(), ABS_TOL)?;
        // conservation plus {0,1} entries still admits disjoint cycles; walk
        // the support to rule them out
        let (s, t) = inst.demand(i);
        let support: usize = row.iter().map(|&v| v as usize).sum();
        let walked = self.path_edges(inst, i);
        if walked.len() != support {
            return Err(GameError::NotSimplePath {
                player: i,
                detail: format!("support has {support} edges, path walk uses {}", walked.len()),
            });
        }
        let mut seen = vec![false; inst.num_vertices()];
        let mut u = s;
        seen[u] = true;
        for &e in &walked {
            u = inst.edges()[e].head;
            if seen[u] {
                return Err(GameError::NotSimplePath {
                    player: i,
                    detail: format!("vertex '{}' revisited", inst.vertex_name(u)),
                });
            }
            seen[u] = true;
        }
        if u != t {
            return Err(GameError::NotSimplePath {
                player: i,
                detail: "path does not end at the destination".into(),
            });
        }
        Ok(())
    }
}

/// Relaxed flow: per-player entries in `[0,1]`, conservation within
/// tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalFlow {
    rows: Vec<Vec<f64>>,
}

impl FractionalFlow {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        FractionalFlow { rows }
    }

    pub fn num_players(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.rows[i]
    }

    pub fn congestion(&self, inst: &RoutingInstance) -> Congestion {
        let m = inst.num_edges();
        let mut y = vec![0.0; m];
        for row in &self.rows {
            for (e, &v) in row.iter().enumerate() {
                y[e] += v;
            }
        }
        Congestion { y, n: self.rows.len() }
    }

    pub fn validate(&self, inst: &RoutingInstance, tol: f64) -> Result<(), GameError> {
        if self.rows.len() != inst.num_players() {
            return Err(GameError::Dimension {
                expected: inst.num_players(),
                got: self.rows.len(),
            });
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != inst.num_edges() {
                return Err(GameError::Dimension {
                    expected: inst.num_edges(),
                    got: row.len(),
                });
            }
            for &v in row.iter() {
                if !(-tol..=1.0 + tol).contains(&v) {
                    return Err(GameError::InvalidInstance(format!(
                        "fractional entry {v} outside [0,1] for player {i}"
                    )));
                }
            }
            check_conservation(inst, i, row, tol)?;
        }
        Ok(())
    }
}

fn check_conservation(
    inst: &RoutingInstance,
    player: usize,
    row: &[f64],
    tol: f64,
) -> Result<(), GameError> {
    let (s, t) = inst.demand(player);
    for u in 0..inst.num_vertices() {
        let out: f64 = inst.out_edges(u).iter().map(|&e| row[e]).sum();
        let inn: f64 = inst.in_edges(u).iter().map(|&e| row[e]).sum();
        let d = if s == t {
            0.0
        } else if u == s {
            1.0
        } else if u == t {
            -1.0
        } else {
            0.0
        };
        let residual = (out - inn - d).abs();
        if residual > tol {
            return Err(GameError::Conservation {
                player,
                vertex: inst.vertex_name(u).to_string(),
                residual,
            });
        }
    }
    Ok(())
}

/// Per-edge aggregate load. May be a noisy release, so entries are real
/// numbers in `[0, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Congestion {
    y: Vec<f64>,
    n: usize,
}

impl Congestion {
    pub fn new(y: Vec<f64>, n: usize) -> Result<Self, GameError> {
        for (e, &v) in y.iter().enumerate() {
            if !(-ABS_TOL..=n as f64 + ABS_TOL).contains(&v) {
                return Err(GameError::InvalidInstance(format!(
                    "congestion {v} on edge {e} outside [0, {n}]"
                )));
            }
        }
        Ok(Congestion { y, n })
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn get(&self, e: usize) -> f64 {
        self.y[e]
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Anonymous per-edge constant tolls, non-negative and capped at `n*gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct TollVector {
    tau: Vec<f64>,
}

impl TollVector {
    pub fn zeros(m: usize) -> Self {
        TollVector { tau: vec![0.0; m] }
    }

    pub fn new(tau: Vec<f64>, cap: f64) -> Result<Self, GameError> {
        for (e, &v) in tau.iter().enumerate() {
            if v < -ABS_TOL || v > cap + ABS_TOL {
                return Err(GameError::InvalidInstance(format!(
                    "toll {v} on edge {e} outside [0, {cap}]"
                )));
            }
        }
        Ok(TollVector { tau })
    }

    pub fn values(&self) -> &[f64] {
        &self.tau
    }

    pub fn get(&self, e: usize) -> f64 {
        self.tau[e]
    }
}

/// How edge tolls are charged: a fixed constant vector, or the functional
/// marginal-cost toll evaluated at the edge load.
#[derive(Debug, Clone)]
pub enum TollSchedule {
    Constant(TollVector),
    MarginalCost,
}

impl TollSchedule {
    pub fn none(m: usize) -> Self {
        TollSchedule::Constant(TollVector::zeros(m))
    }

    /// Toll charged on edge `e` at load `y`.
    pub fn toll(&self, inst: &RoutingInstance, e: usize, y: f64) -> f64 {
        match self {
            TollSchedule::Constant(tau) => tau.get(e),
            TollSchedule::MarginalCost => marginal_toll(inst.latency(e), y, inst.toll_cap()),
        }
    }
}

// ---------------------------------------------------------------------------
// Costs and the potential
// ---------------------------------------------------------------------------

/// Flow matrices usable by the cost operations.
pub trait PlayerFlows {
    fn players(&self) -> usize;
    fn entry(&self, i: usize, e: usize) -> f64;

    fn loads(&self, m: usize) -> Vec<f64> {
        let mut y = vec![0.0; m];
        for e in 0..m {
            for i in 0..self.players() {
                y[e] += self.entry(i, e);
            }
        }
        y
    }
}

impl PlayerFlows for IntegralFlow {
    fn players(&self) -> usize {
        self.num_players()
    }
    fn entry(&self, i: usize, e: usize) -> f64 {
        self.rows[i][e] as f64
    }
}

impl PlayerFlows for FractionalFlow {
    fn players(&self) -> usize {
        self.num_players()
    }
    fn entry(&self, i: usize, e: usize) -> f64 {
        self.rows[i][e]
    }
}

/// Average latency `phi(x) = (1/n) sum_e y_e l_e(y_e)` of a feasible flow.
pub fn average_cost<F: PlayerFlows>(inst: &RoutingInstance, x: &F) -> Result<f64, GameError> {
    feasibility_gate(inst, x)?;
    let y = x.loads(inst.num_edges());
    let n = inst.num_players() as f64;
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(e, &load)| load * inst.latency(e).eval(load))
        .sum();
    Ok(total / n)
}

fn feasibility_gate<F: PlayerFlows>(inst: &RoutingInstance, x: &F) -> Result<(), GameError> {
    if x.players() != inst.num_players() {
        return Err(GameError::Dimension {
            expected: inst.num_players(),
            got: x.players(),
        });
    }
    for i in 0..x.players() {
        let row: Vec<f64> = (0..inst.num_edges()).map(|e| x.entry(i, e)).collect();
        check_conservation(inst, i, &row, FLOW_FEAS_TOL)?;
    }
    Ok(())
}

/// Player `i`'s individual cost under flow `x` and constant tolls:
/// `sum_e x_{i,e} (l_e(y_e) + tau_e)`.
pub fn player_cost<F: PlayerFlows>(
    inst: &RoutingInstance,
    x: &F,
    i: usize,
    tau: &TollVector,
) -> Result<f64, GameError> {
    if i >= x.players() {
        return Err(GameError::PlayerIndex {
            index: i,
            n: x.players(),
        });
    }
    let y = x.loads(inst.num_edges());
    let mut cost = 0.0;
    for e in 0..inst.num_edges() {
        let xie = x.entry(i, e);
        if xie != 0.0 {
            cost += xie * (inst.latency(e).eval(y[e]) + tau.get(e));
        }
    }
    Ok(cost)
}

/// Cost of routing on the edges of `path` when the network carries the given
/// congestion: `sum_{e in path} (l_e(y_e) + tau_e)`. Latencies are evaluated
/// at the supplied `y`, not at the path's own loads.
pub fn path_cost_at(
    inst: &RoutingInstance,
    path: &[usize],
    y: &Congestion,
    tolls: &TollSchedule,
) -> f64 {
    path.iter()
        .map(|&e| inst.latency(e).eval(y.get(e)) + tolls.toll(inst, e, y.get(e)))
        .sum()
}

/// Marginal-cost toll `tau*(y) = (y-1)(l(y) - l(y-1))`, clipped to
/// `[0, cap]`. The raw formula is negative for `y < 1` (which a noisy load
/// can produce), hence the lower clip; the upper clip is the toll cap
/// `n*gamma`.
pub fn marginal_toll(latency: &Latency, y: f64, cap: f64) -> f64 {
    let raw = (y - 1.0) * (latency.eval(y) - latency.eval(y - 1.0));
    raw.clamp(0.0, cap)
}

/// Exact potential of the tolled game:
/// `Psi(x) = sum_e sum_{k=1}^{y_e} [l_e(k) + tau*_e(k)]`.
///
/// Telescoping gives `Psi(x) = sum_e y_e l_e(y_e) = n * phi(x)`; the double
/// sum is evaluated literally here so that identity stays a real check.
pub fn potential(inst: &RoutingInstance, x: &IntegralFlow) -> Result<f64, GameError> {
    x.validate(inst)?;
    let y = x.congestion(inst);
    let cap = inst.toll_cap();
    let mut total = 0.0;
    for e in 0..inst.num_edges() {
        let load = y.get(e).round() as usize;
        let lat = inst.latency(e);
        for k in 1..=load {
            total += lat.eval(k as f64) + marginal_toll(lat, k as f64, cap);
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Unsatisfaction
// ---------------------------------------------------------------------------

/// Outcome of the unsatisfaction test for one player.
#[derive(Debug, Clone)]
pub struct Unsatisfaction {
    pub unsatisfied: bool,
    /// Cost-minimizing alternative path (ordered edge list).
    pub best_path: Vec<usize>,
    /// Cost saving of the best alternative: current cost minus best cost.
    pub gain: f64,
}

/// Tests whether player `i` is `rho`-unsatisfied with respect to congestion
/// `y`: whether some alternative path `x_i'` has
/// `cost(x_i', y - x_i + x_i') <= cost(x_i, y) - rho`.
///
/// The search is a single-source cheapest path with weights
/// `w_e = l_e(y_e + 1 - x_{i,e}) + tau_e`: edges the player already uses are
/// re-added at load `y_e`, new edges at load `y_e + 1`. A `rho` of positive
/// infinity never reports unsatisfied; at `rho = 0` a strictly positive gain
/// is required (staying put is always cost-neutral).
pub fn is_unsatisfied(
    inst: &RoutingInstance,
    x: &IntegralFlow,
    i: usize,
    y: &Congestion,
    tolls: &TollSchedule,
    rho: f64,
) -> Result<Unsatisfaction, GameError> {
    if i >= x.num_players() {
        return Err(GameError::PlayerIndex {
            index: i,
            n: x.num_players(),
        });
    }
    is_unsatisfied_row(inst, i, inst.demand(i), x.row(i), y, tolls, rho)
}

/// Row-level form of the unsatisfaction test: sees only the player's own
/// demand and route besides the shared congestion and tolls. The mediator's
/// repair stage is built on this function, so a player's replacement path
/// structurally cannot depend on another player's report.
pub fn is_unsatisfied_row(
    inst: &RoutingInstance,
    player: usize,
    demand: (usize, usize),
    row: &[u8],
    y: &Congestion,
    tolls: &TollSchedule,
    rho: f64,
) -> Result<Unsatisfaction, GameError> {
    let (s, t) = demand;
    let m = inst.num_edges();
    let weights: Vec<f64> = (0..m)
        .map(|e| {
            let load = y.get(e) + 1.0 - row[e] as f64;
            inst.latency(e).eval(load) + tolls.toll(inst, e, load)
        })
        .collect();
    let (best_cost, best_path) = inst
        .cheapest_path(s, t, &weights)
        .ok_or(GameError::Unreachable { player })?;
    let current = walk_row_path(inst, demand, row);
    let current_cost = path_cost_at(inst, &current, y, tolls);
    let gain = current_cost - best_cost;
    let unsatisfied = if rho.is_infinite() {
        false
    } else {
        gain > ABS_TOL && gain >= rho - ABS_TOL
    };
    Ok(Unsatisfaction {
        unsatisfied,
        best_path,
        gain,
    })
}

/// Ordered edge list of a single-row path, walked from the source.
pub fn walk_row_path(inst: &RoutingInstance, demand: (usize, usize), row: &[u8]) -> Vec<usize> {
    let (s, t) = demand;
    let mut path = Vec::new();
    let mut u = s;
    while u != t {
        match inst.out_edges(u).iter().copied().find(|&e| row[e] == 1) {
            Some(e) => {
                path.push(e);
                u = inst.edges()[e].head;
            }
            None => break,
        }
    }
    path
}
