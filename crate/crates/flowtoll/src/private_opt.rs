//! Privately computing an approximately optimal fractional flow, and
//! rounding it.
//!
//! The convex relaxation of the min-average-latency program couples per-edge
//! congestion variables `y` to the per-player flow variables `x` through the
//! constraints `sum_i x_{i,e} = y_e`. Dualizing those constraints yields a
//! zero-sum Lagrangian game between a flow player minimizing over
//! `F^R(s) x [0,n]^m` and a dual player maximizing over the restricted
//! domain `||lambda||_1 <= 2m`. The private solver simulates repeated play:
//! the dual player approximately best-responds through the exponential
//! mechanism (pick the most violated signed constraint), the flow player
//! runs projected gradient descent. Averaged plays are approximate minimax
//! strategies, and the average flow is rounded per player by path-stripping
//! randomized rounding.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use nalgebra::{DMatrix, DVector};

use crate::dp_mech::{self, DpError, QualityScore};
use crate::game_core::{FractionalFlow, GameError, RoutingInstance, FLOW_FEAS_TOL};

/// Residual below which an edge is treated as unused during path stripping.
const STRIP_EDGE_TOL: f64 = 1e-9;

/// Residual mass discarded (then renormalized away) after stripping.
const STRIP_MASS_TOL: f64 = 1e-6;

/// Target KKT residual for the flow-polytope projection.
const PROJ_KKT_TOL: f64 = 1e-6;

/// Tightened internal stopping target for the projection sweep.
const PROJ_STOP_TOL: f64 = 1e-7;

const PROJ_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum OptError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error("projection for player {player} did not reach KKT residual {target:.1e} (got {achieved:.3e} after {sweeps} sweeps)")]
    ProjectionStalled {
        player: usize,
        target: f64,
        achieved: f64,
        sweeps: usize,
    },
    #[error("path stripping stalled for player {player}: residual mass {mass:.3e} with no source-destination path")]
    StrippingStalled { player: usize, mass: f64 },
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),
}

// ---------------------------------------------------------------------------
// RNG substreams
// ---------------------------------------------------------------------------

/// Independent substream domains carved out of one master seed.
pub mod rng_domains {
    pub const EXP_MECH_ROUND: u64 = 1;
    pub const PSRR_PLAYER: u64 = 2;
    pub const P_CON: u64 = 3;
    pub const DEVIATION_TRIAL: u64 = 4;
}

/// Deterministic substream `(domain, index)` of a master seed.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) ^ index);
    rng
}

// ---------------------------------------------------------------------------
// Lagrangian pieces
// ---------------------------------------------------------------------------

/// Relaxed objective `c(y) = (1/n) sum_e y_e l_e(y_e)`.
pub fn relaxed_cost(inst: &RoutingInstance, y: &[f64]) -> f64 {
    let n = inst.num_players() as f64;
    y.iter()
        .enumerate()
        .map(|(e, &u)| u * inst.latency(e).eval(u))
        .sum::<f64>()
        / n
}

/// Signed constraint violations `f_e(z) = sum_i x_{i,e} - y_e`.
pub fn violations(x: &FractionalFlow, y: &[f64]) -> Vec<f64> {
    let m = y.len();
    let mut f = vec![0.0; m];
    for row in x.rows() {
        for (e, &v) in row.iter().enumerate() {
            f[e] += v;
        }
    }
    for (e, fe) in f.iter_mut().enumerate() {
        *fe -= y[e];
    }
    f
}

/// `L(x, y, lambda) = c(y) - sum_e lambda_e (sum_i x_{i,e} - y_e)`.
pub fn lagrangian_value(
    inst: &RoutingInstance,
    x: &FractionalFlow,
    y: &[f64],
    lambda: &[f64],
) -> f64 {
    let f = violations(x, y);
    relaxed_cost(inst, y) - lambda.iter().zip(&f).map(|(l, v)| l * v).sum::<f64>()
}

/// Gradient of the Lagrangian in the flow block: the same `-lambda` row for
/// every player.
pub fn grad_x(n: usize, lambda: &[f64]) -> Vec<Vec<f64>> {
    (0..n).map(|_| lambda.iter().map(|&l| -l).collect()).collect()
}

/// Gradient of the Lagrangian in the congestion block:
/// `(1/n)(l_e(y_e) + y_e l_e'(y_e)) + lambda_e`.
pub fn grad_y(inst: &RoutingInstance, y: &[f64], lambda: &[f64]) -> Vec<f64> {
    let n = inst.num_players() as f64;
    y.iter()
        .enumerate()
        .map(|(e, &u)| {
            let lat = inst.latency(e);
            (lat.eval(u) + u * lat.deriv(u)) / n + lambda[e]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Projections and the descent step
// ---------------------------------------------------------------------------

/// Dense Euclidean projector onto one player's flow polytope
/// `{x in [0,1]^m : conservation}` via Dykstra's alternating projections
/// between the conservation subspace and the box, with a KKT-residual
/// stopping rule.
#[derive(Debug, Clone)]
pub struct FlowProjector {
    inst: RoutingInstance,
    incidence: DMatrix<f64>,
    /// `A^T (A A^T)^+`, applied to the conservation residual.
    correction: DMatrix<f64>,
    nv: usize,
    m: usize,
}

impl FlowProjector {
    pub fn new(inst: &RoutingInstance) -> Self {
        let nv = inst.num_vertices();
        let m = inst.num_edges();
        let mut a = DMatrix::zeros(nv, m);
        for (e, edge) in inst.edges().iter().enumerate() {
            a[(edge.tail, e)] += 1.0;
            a[(edge.head, e)] -= 1.0;
        }
        let aat: DMatrix<f64> = &a * a.transpose();
        let correction = a.transpose() * aat.pseudo_inverse(1e-12).expect("pinv of A A^T");
        FlowProjector {
            inst: inst.clone(),
            incidence: a,
            correction,
            nv,
            m,
        }
    }

    /// Demand vector: +1 at the source, -1 at the destination (all zeros for
    /// a degenerate self-loop demand).
    fn demand_vector(&self, demand: (usize, usize)) -> DVector<f64> {
        let mut b = DVector::zeros(self.nv);
        let (s, t) = demand;
        if s != t {
            b[s] += 1.0;
            b[t] -= 1.0;
        }
        b
    }

    fn affine_project(&self, v: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        v - &self.correction * (&self.incidence * v - b)
    }

    /// Euclidean projection of `v` onto the polytope of `demand`.
    pub fn project(
        &self,
        player: usize,
        demand: (usize, usize),
        v: &[f64],
    ) -> Result<Vec<f64>, OptError> {
        let b = self.demand_vector(demand);
        let target = DVector::from_column_slice(v);
        let mut y = target.clone();
        let mut p = DVector::zeros(self.m);
        let mut q = DVector::zeros(self.m);
        let mut best: Option<(f64, DVector<f64>)> = None;
        for sweep in 0..PROJ_MAX_SWEEPS {
            let a = self.affine_project(&(&y + &p), &b);
            p = &y + &p - &a;
            let bq = &a + &q;
            y = bq.map(|v| v.clamp(0.0, 1.0));
            q = bq - &y;
            // the KKT check runs a small exact linear oracle, so after a
            // warm-up it runs only periodically
            if sweep < 16 || sweep % 8 == 0 || sweep == PROJ_MAX_SWEEPS - 1 {
                let residual = self.kkt_residual(player, demand, &y, &target, &b)?;
                if best.as_ref().map_or(true, |(r, _)| residual < *r) {
                    best = Some((residual, y.clone()));
                }
                if residual <= PROJ_STOP_TOL || (sweep > 200 && residual <= PROJ_KKT_TOL) {
                    return Ok(y.iter().cloned().collect());
                }
            }
        }
        match best {
            Some((residual, point)) if residual <= PROJ_KKT_TOL => {
                Ok(point.iter().cloned().collect())
            }
            Some((residual, _)) => Err(OptError::ProjectionStalled {
                player,
                target: PROJ_KKT_TOL,
                achieved: residual,
                sweeps: PROJ_MAX_SWEEPS,
            }),
            None => unreachable!("projection loop always records a residual"),
        }
    }

    /// Optimality residual of `x` as a candidate projection of `v`, in
    /// distance units. Primal feasibility plus the variational-inequality
    /// gap `max_{z in C} <v - x, z - x>`, evaluated exactly by the linear
    /// minimization oracle over the polytope; the square root of that gap
    /// bounds the distance to the true projection.
    fn kkt_residual(
        &self,
        player: usize,
        demand: (usize, usize),
        x: &DVector<f64>,
        v: &DVector<f64>,
        b: &DVector<f64>,
    ) -> Result<f64, OptError> {
        let w: Vec<f64> = (0..self.m).map(|e| v[e] - x[e]).collect();
        let neg_w: Vec<f64> = w.iter().map(|&c| -c).collect();
        let (_, min_neg) = min_linear_over_flow_polytope(&self.inst, player, demand, &neg_w)?;
        let w_dot_x: f64 = w.iter().enumerate().map(|(e, &c)| c * x[e]).sum();
        let vi_gap = (-min_neg - w_dot_x).max(0.0);
        let mut res = vi_gap.sqrt();
        for e in 0..self.m {
            res = res.max(-x[e]).max(x[e] - 1.0);
        }
        let feas = &self.incidence * x - b;
        Ok(res.max(feas.amax()))
    }
}

/// Projection target of a single descent step.
pub enum Domain<'a> {
    /// Coordinate-wise box `[lo, hi]^m`.
    Box { lo: f64, hi: f64 },
    /// One player's flow polytope.
    Flow {
        projector: &'a FlowProjector,
        player: usize,
        demand: (usize, usize),
    },
}

/// One projected gradient step `point <- Pi_D(point - eta * grad)`.
pub fn gd_step(domain: &Domain, point: &[f64], grad: &[f64], eta: f64) -> Result<Vec<f64>, OptError> {
    let moved: Vec<f64> = point
        .iter()
        .zip(grad)
        .map(|(&p, &g)| p - eta * g)
        .collect();
    match domain {
        Domain::Box { lo, hi } => Ok(moved.iter().map(|&v| v.clamp(*lo, *hi)).collect()),
        Domain::Flow {
            projector,
            player,
            demand,
        } => projector.project(*player, *demand, &moved),
    }
}

// ---------------------------------------------------------------------------
// Dual best response
// ---------------------------------------------------------------------------

/// Signed constraint-violation scores over the outcome set `{+,-} x E`,
/// ordered all-plus then all-minus by edge index. Per-player sensitivity is
/// 1: one player's rerouting moves `sum_i x_{i,e}` by at most 1 on any edge.
#[derive(Debug, Clone)]
pub struct ViolationScore {
    pub violations: Vec<f64>,
}

impl ViolationScore {
    pub fn new(x: &FractionalFlow, y: &[f64]) -> Self {
        ViolationScore {
            violations: violations(x, y),
        }
    }

    pub fn quality(&self) -> QualityScore {
        let m = self.violations.len();
        let mut scores = Vec::with_capacity(2 * m);
        scores.extend(self.violations.iter().cloned());
        scores.extend(self.violations.iter().map(|v| -v));
        QualityScore::new(scores, 1.0)
    }

    /// Decode an outcome index into `(positive_sign, edge)`.
    pub fn decode(&self, outcome: usize) -> (bool, usize) {
        let m = self.violations.len();
        if outcome < m {
            (true, outcome)
        } else {
            (false, outcome - m)
        }
    }
}

/// The dual player's one-hot approximate best response: privately select the
/// most violated signed constraint and put mass `2m` on it. Selecting the
/// `+` outcome (over-congested edge) sets `lambda_e = -2m`, which is the
/// penalty-maximizing sign for `L`; `flip_sign` inverts the rule for
/// experiments.
pub fn dual_best_response<R: Rng + ?Sized>(
    inst: &RoutingInstance,
    x: &FractionalFlow,
    y: &[f64],
    eps: f64,
    flip_sign: bool,
    rng: &mut R,
) -> Result<DualPlay, OptError> {
    let m = inst.num_edges();
    let vs = ViolationScore::new(x, y);
    let quality = vs.quality();
    let outcome = dp_mech::exponential_mechanism(&quality, eps, rng)?;
    let (plus, edge) = vs.decode(outcome);
    let magnitude = 2.0 * m as f64;
    let base = if plus { -magnitude } else { magnitude };
    let value = if flip_sign { -base } else { base };
    let selected_q = quality.scores()[outcome];
    let max_q = quality
        .scores()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DualPlay {
        edge,
        plus,
        value,
        selected_q,
        exp_mech_gap: max_q - selected_q,
    })
}

/// One round of the dual player: a one-hot vector described by its support.
#[derive(Debug, Clone, Copy)]
pub struct DualPlay {
    pub edge: usize,
    pub plus: bool,
    pub value: f64,
    /// Score of the selected signed constraint.
    pub selected_q: f64,
    /// Suboptimality of the private selection versus the true maximum.
    pub exp_mech_gap: f64,
}

impl DualPlay {
    pub fn to_vec(&self, m: usize) -> Vec<f64> {
        let mut lambda = vec![0.0; m];
        lambda[self.edge] = self.value;
        lambda
    }
}

// ---------------------------------------------------------------------------
// Exact minimizers used by the regret diagnostics
// ---------------------------------------------------------------------------

/// Exact minimum of a linear function `w . x` over one player's flow
/// polytope, by negative-cycle cancelling on the residual graph. The
/// polytope's vertices are integral, so the optimum is attained at a `{0,1}`
/// point.
pub fn min_linear_over_flow_polytope(
    inst: &RoutingInstance,
    player: usize,
    demand: (usize, usize),
    w: &[f64],
) -> Result<(Vec<f64>, f64), OptError> {
    let m = inst.num_edges();
    let (s, t) = demand;
    let mut x = vec![0u8; m];
    if s != t {
        let path = inst
            .shortest_hop_path(s, t)
            .ok_or(GameError::Unreachable { player })?;
        for e in path {
            x[e] = 1;
        }
    }
    let cap = 4 * m * m + 64;
    for _ in 0..cap {
        match find_negative_residual_cycle(inst, &x, w) {
            Some(cycle) => {
                for &(e, forward) in &cycle {
                    x[e] = if forward { 1 } else { 0 };
                }
            }
            None => {
                let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                let value = xf.iter().zip(w).map(|(a, b)| a * b).sum();
                return Ok((xf, value));
            }
        }
    }
    Err(OptError::ResourceCap(
        "negative-cycle cancelling did not terminate".into(),
    ))
}

/// Bellman-Ford negative-cycle detection on the residual graph of `x`.
/// Returns the cycle as `(edge, set_forward)` toggles, or `None`.
fn find_negative_residual_cycle(
    inst: &RoutingInstance,
    x: &[u8],
    w: &[f64],
) -> Option<Vec<(usize, bool)>> {
    let nv = inst.num_vertices();
    // residual arcs: (from, to, cost, edge, forward)
    let mut arcs = Vec::with_capacity(x.len());
    for (e, edge) in inst.edges().iter().enumerate() {
        if x[e] == 0 {
            arcs.push((edge.tail, edge.head, w[e], e, true));
        } else {
            arcs.push((edge.head, edge.tail, -w[e], e, false));
        }
    }
    let mut dist = vec![0.0f64; nv];
    let mut pred: Vec<Option<usize>> = vec![None; nv]; // predecessor arc index
    let mut touched = None;
    for round in 0..nv {
        let mut relaxed = false;
        for (ai, &(from, to, cost, _, _)) in arcs.iter().enumerate() {
            if dist[from] + cost < dist[to] - 1e-12 {
                dist[to] = dist[from] + cost;
                pred[to] = Some(ai);
                relaxed = true;
                if round == nv - 1 {
                    touched = Some(to);
                }
            }
        }
        if !relaxed {
            return None;
        }
    }
    let mut v = touched?;
    // walk back nv steps to guarantee we are inside the cycle
    for _ in 0..nv {
        v = arcs[pred[v]?].0;
    }
    let start = v;
    let mut cycle = Vec::new();
    loop {
        let ai = pred[v]?;
        let (from, _, _, e, forward) = arcs[ai];
        cycle.push((e, forward));
        v = from;
        if v == start {
            break;
        }
    }
    Some(cycle)
}

/// Exact minimum of the separable congestion objective
/// `(1/n) u l_e(u) + lambda_e u` over `u in [0, n]`, per edge (ternary
/// search on a convex function, endpoints included).
pub fn min_congestion_profile(inst: &RoutingInstance, lambda: &[f64]) -> f64 {
    let n = inst.num_players() as f64;
    (0..inst.num_edges())
        .map(|e| {
            let lat = inst.latency(e);
            let g = |u: f64| u * lat.eval(u) / n + lambda[e] * u;
            let mut lo = 0.0f64;
            let mut hi = n;
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if g(m1) <= g(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let mid = 0.5 * (lo + hi);
            g(mid).min(g(0.0)).min(g(n))
        })
        .sum()
}

// ---------------------------------------------------------------------------
// The private solver
// ---------------------------------------------------------------------------

/// Knobs of the private gradient-descent solver.
#[derive(Debug, Clone, Copy)]
pub struct PgdParams {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    /// Multiplier on the iteration-count formula (the Theta constant).
    pub c_t: f64,
    /// Invert the dual sign rule (diagnostic flag).
    pub flip_dual_sign: bool,
    /// Run the mechanisms noise-free (exact argmax, zero Laplace noise).
    /// Budget constants are still derived from the nominal epsilon/delta.
    pub noise_free: bool,
}

impl PgdParams {
    pub fn iteration_count(&self, n: usize, m: usize) -> (usize, bool) {
        let raw = self.c_t * self.epsilon * n as f64 * (m as f64).sqrt()
            / (((m * n) as f64 / self.beta).ln() * (1.0 / self.delta).ln().sqrt());
        let t = raw.floor() as i64;
        if t < 1 {
            (1, true)
        } else {
            (t as usize, false)
        }
    }
}

/// Per-round record kept for the diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct RoundRecord {
    pub round: usize,
    pub plus: bool,
    pub edge: usize,
    /// The dual mass actually placed on the edge (sign-rule and flip-flag
    /// applied).
    pub lambda_value: f64,
    pub selected_violation: f64,
    pub exp_mech_gap: f64,
    pub lagrangian: f64,
}

impl RoundRecord {
    /// The full dual play of this round.
    pub fn lambda(&self, m: usize) -> Vec<f64> {
        let mut lambda = vec![0.0; m];
        lambda[self.edge] = self.lambda_value;
        lambda
    }
}

/// Everything the solver can report about one run.
#[derive(Debug, Clone)]
pub struct PgdDiagnostics {
    pub rounds: usize,
    pub t_clamped: bool,
    pub eps_prime: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    pub g_x: f64,
    pub g_y: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub per_round: Vec<RoundRecord>,
    /// Realized average regret of the flow player against the fixed
    /// averaged loss sequence.
    pub primal_regret: f64,
    /// Realized average regret of the dual player.
    pub dual_regret: f64,
    /// Unscaled realized regret of the x-block (Zinkevich bound `GD sqrt(T)`
    /// applies to this).
    pub regret_x_block: f64,
    /// Unscaled realized regret of the y-block.
    pub regret_y_block: f64,
    /// Lagrangian value at the averaged plays.
    pub lagrangian_at_avg: f64,
    /// Minimax gap estimate `R = R_z + R_lambda`.
    pub minimax_gap: f64,
    /// Averaged dual play.
    pub avg_dual: Vec<f64>,
    /// Max-norm of the averaged constraint violation.
    pub avg_violation_inf: f64,
    /// Per-round exponential-mechanism suboptimality bound from the budget
    /// (`2 ln(2 m T / beta) / eps'`), zero when noise-free.
    pub exp_mech_bound: f64,
}

/// JDP gradient descent on the restricted Lagrangian game. Returns the
/// averaged fractional flow and the run diagnostics; the caller is
/// responsible for budget accounting and rounding.
pub fn p_gd(
    inst: &RoutingInstance,
    params: &PgdParams,
    seed: u64,
) -> Result<(FractionalFlow, PgdDiagnostics), OptError> {
    let n = inst.num_players();
    let m = inst.num_edges();
    let nf = n as f64;
    let mf = m as f64;
    let gamma = inst.gamma();

    let (rounds, t_clamped) = params.iteration_count(n, m);
    let eps_prime = dp_mech::advanced_composition_epsilon(params.epsilon, params.delta, rounds)?;
    let eps_mech = if params.noise_free {
        f64::INFINITY
    } else {
        eps_prime
    };

    // constant block of the algorithm, verbatim
    let g_y = ((mf - 1.0) * (gamma + 1.0).powi(2) + (gamma + 1.0 + 2.0 * mf).powi(2)).sqrt();
    let d_y = nf * mf.sqrt();
    let g_x = 2.0 * mf * nf.sqrt();
    let d_x = (mf * nf).sqrt();
    let eta_x = d_x / (g_x * (rounds as f64).sqrt());
    let eta_y = d_y / (g_y * (rounds as f64).sqrt());

    let projector = FlowProjector::new(inst);

    // feasible start: each player spread on a fewest-edges path
    let mut x_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (s, t) = inst.demand(i);
        let path = inst
            .shortest_hop_path(s, t)
            .ok_or(GameError::Unreachable { player: i })?;
        let mut row = vec![0.0; m];
        for e in path {
            row[e] = 1.0;
        }
        x_rows.push(row);
    }
    let mut x = FractionalFlow::new(x_rows);
    let mut y: Vec<f64> = {
        let c = x.congestion(inst);
        c.values().to_vec()
    };

    let mut avg_x = vec![vec![0.0; m]; n];
    let mut avg_y = vec![0.0; m];
    let mut avg_lambda = vec![0.0; m];
    let mut avg_violation = vec![0.0; m];
    let mut sum_lagrangian = 0.0;
    let mut sum_lambda_dot_f = 0.0;
    let mut sum_rx_losses = 0.0;
    let mut sum_ry_losses = 0.0;
    let mut per_round = Vec::with_capacity(rounds);

    for t in 0..rounds {
        let mut rng = substream(seed, rng_domains::EXP_MECH_ROUND, t as u64);
        let play = dual_best_response(inst, &x, &y, eps_mech, params.flip_dual_sign, &mut rng)?;
        let lambda = play.to_vec(m);

        let f = violations(&x, &y);
        let lambda_dot_f = lambda[play.edge] * f[play.edge];
        let cy = relaxed_cost(inst, &y);
        let lag = cy - lambda_dot_f;
        per_round.push(RoundRecord {
            round: t,
            plus: play.plus,
            edge: play.edge,
            lambda_value: play.value,
            selected_violation: play.selected_q,
            exp_mech_gap: play.exp_mech_gap,
            lagrangian: lag,
        });

        for e in 0..m {
            avg_violation[e] += f[e];
            avg_lambda[e] += lambda[e];
            avg_y[e] += y[e];
        }
        sum_lagrangian += lag;
        sum_lambda_dot_f += lambda_dot_f;
        // per-block loss values at the played points:
        //   r_x(x) = -sum_i lambda . x_i,  r_y(y) = c(y) + lambda . y
        let lam_e = lambda[play.edge];
        let mut rx = 0.0;
        for i in 0..n {
            avg_x[i]
                .iter_mut()
                .zip(x.row(i))
                .for_each(|(a, &v)| *a += v);
            rx -= lam_e * x.row(i)[play.edge];
        }
        sum_rx_losses += rx;
        sum_ry_losses += cy + lam_e * y[play.edge];

        // primal descent: x gets the constant gradient -lambda per player,
        // y gets the derivative of c plus lambda
        let gy = grad_y(inst, &y, &lambda);
        let grad_row: Vec<f64> = lambda.iter().map(|&l| -l).collect();
        let mut new_rows = Vec::with_capacity(n);
        for i in 0..n {
            let domain = Domain::Flow {
                projector: &projector,
                player: i,
                demand: inst.demand(i),
            };
            new_rows.push(gd_step(&domain, x.row(i), &grad_row, eta_x)?);
        }
        x = FractionalFlow::new(new_rows);
        x.validate(inst, FLOW_FEAS_TOL)?;
        y = gd_step(&Domain::Box { lo: 0.0, hi: nf }, &y, &gy, eta_y)?;
    }

    let tf = rounds as f64;
    for row in &mut avg_x {
        for v in row.iter_mut() {
            *v = (*v / tf).clamp(0.0, 1.0);
        }
    }
    for v in avg_y.iter_mut() {
        *v /= tf;
    }
    for v in avg_lambda.iter_mut() {
        *v /= tf;
    }
    for v in avg_violation.iter_mut() {
        *v /= tf;
    }
    let avg_flow = FractionalFlow::new(avg_x);
    avg_flow.validate(inst, FLOW_FEAS_TOL)?;

    // exact fixed-sequence minimizers for the realized regrets
    let mut min_rx_avg = 0.0;
    for i in 0..n {
        let w: Vec<f64> = avg_lambda.iter().map(|&l| -l).collect();
        let (_, v) = min_linear_over_flow_polytope(inst, i, inst.demand(i), &w)?;
        min_rx_avg += v;
    }
    let min_ry_avg = min_congestion_profile(inst, &avg_lambda);

    let regret_x_block = sum_rx_losses - tf * min_rx_avg;
    let regret_y_block = sum_ry_losses - tf * min_ry_avg;
    let primal_regret = sum_lagrangian / tf - (min_rx_avg + min_ry_avg);

    let avg_violation_inf = avg_violation.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let dual_regret = 2.0 * mf * avg_violation_inf + sum_lambda_dot_f / tf;

    let lagrangian_at_avg = lagrangian_value(inst, &avg_flow, &avg_y, &avg_lambda);

    let exp_mech_bound = if params.noise_free {
        0.0
    } else {
        2.0 * (2.0 * mf * tf / params.beta).ln() / eps_prime
    };

    let diagnostics = PgdDiagnostics {
        rounds,
        t_clamped,
        eps_prime,
        eta_x,
        eta_y,
        g_x,
        g_y,
        d_x,
        d_y,
        per_round,
        primal_regret,
        dual_regret,
        regret_x_block,
        regret_y_block,
        lagrangian_at_avg,
        minimax_gap: primal_regret + dual_regret,
        avg_dual: avg_lambda,
        avg_violation_inf,
        exp_mech_bound,
    };
    Ok((avg_flow, diagnostics))
}

// ---------------------------------------------------------------------------
// Path stripping and randomized rounding
// ---------------------------------------------------------------------------

/// Rounds one player's fractional flow to a single path: cancel any cycle
/// flow, strip the remainder into weighted source-destination paths by
/// repeated bottleneck extraction (depth-first, smallest edge index first),
/// renormalize, and sample one path. An integral input comes back unchanged
/// with probability 1.
pub fn psrr<R: Rng + ?Sized>(
    inst: &RoutingInstance,
    player: usize,
    row: &[f64],
    rng: &mut R,
) -> Result<Vec<usize>, OptError> {
    let (s, t) = inst.demand(player);
    let mut residual: Vec<f64> = row.to_vec();
    cancel_cycles(inst, &mut residual);
    if s == t {
        return Ok(Vec::new());
    }

    let mut paths: Vec<(Vec<usize>, f64)> = Vec::new();
    loop {
        let mass: f64 = inst.out_edges(s).iter().map(|&e| residual[e].max(0.0)).sum();
        if mass <= STRIP_MASS_TOL {
            break;
        }
        match dfs_positive_path(inst, &residual, s, t) {
            Some(path) => {
                let w = path
                    .iter()
                    .map(|&e| residual[e])
                    .fold(f64::INFINITY, f64::min);
                for &e in &path {
                    residual[e] -= w;
                }
                paths.push((path, w));
            }
            None => {
                return Err(OptError::StrippingStalled {
                    player,
                    mass,
                });
            }
        }
    }
    if paths.is_empty() {
        return Err(OptError::StrippingStalled { player, mass: 0.0 });
    }
    let total: f64 = paths.iter().map(|(_, w)| w).sum();
    let mut draw: f64 = rng.gen::<f64>() * total;
    for (path, w) in &paths {
        draw -= w;
        if draw <= 0.0 {
            return Ok(path.clone());
        }
    }
    Ok(paths.last().unwrap().0.clone())
}

/// Removes circulation mass: repeatedly finds a directed cycle in the
/// positive-residual support and subtracts the bottleneck around it.
fn cancel_cycles(inst: &RoutingInstance, residual: &mut [f64]) {
    loop {
        match find_positive_cycle(inst, residual) {
            Some(cycle) => {
                let w = cycle
                    .iter()
                    .map(|&e| residual[e])
                    .fold(f64::INFINITY, f64::min);
                for &e in &cycle {
                    residual[e] -= w;
                }
            }
            None => return,
        }
    }
}

fn find_positive_cycle(inst: &RoutingInstance, residual: &[f64]) -> Option<Vec<usize>> {
    let nv = inst.num_vertices();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; nv];
    let mut stack_edges: Vec<usize> = Vec::new();
    let mut stack_vertices: Vec<usize> = Vec::new();

    fn dfs(
        inst: &RoutingInstance,
        residual: &[f64],
        u: usize,
        color: &mut [u8],
        stack_edges: &mut Vec<usize>,
        stack_vertices: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        color[u] = 1;
        stack_vertices.push(u);
        for &e in inst.out_edges(u) {
            if residual[e] <= STRIP_EDGE_TOL {
                continue;
            }
            let v = inst.edges()[e].head;
            if color[v] == 1 {
                // cycle found: edges from v back around to u, plus e
                let pos = stack_vertices.iter().position(|&w| w == v).unwrap();
                let mut cycle: Vec<usize> = stack_edges[pos..].to_vec();
                cycle.push(e);
                return Some(cycle);
            }
            if color[v] == 0 {
                stack_edges.push(e);
                if let Some(c) = dfs(inst, residual, v, color, stack_edges, stack_vertices) {
                    return Some(c);
                }
                stack_edges.pop();
            }
        }
        color[u] = 2;
        stack_vertices.pop();
        None
    }

    for start in 0..nv {
        if color[start] == 0 {
            if let Some(c) = dfs(
                inst,
                residual,
                start,
                &mut color,
                &mut stack_edges,
                &mut stack_vertices,
            ) {
                return Some(c);
            }
        }
    }
    None
}

/// Depth-first search for an `s -> t` path through edges with residual above
/// the stripping threshold, following the smallest edge index first.
fn dfs_positive_path(
    inst: &RoutingInstance,
    residual: &[f64],
    s: usize,
    t: usize,
) -> Option<Vec<usize>> {
    let nv = inst.num_vertices();
    let mut visited = vec![false; nv];
    let mut path: Vec<usize> = Vec::new();

    fn dfs(
        inst: &RoutingInstance,
        residual: &[f64],
        u: usize,
        t: usize,
        visited: &mut [bool],
        path: &mut Vec<usize>,
    ) -> bool {
        if u == t {
            return true;
        }
        visited[u] = true;
        for &e in inst.out_edges(u) {
            if residual[e] <= STRIP_EDGE_TOL {
                continue;
            }
            let v = inst.edges()[e].head;
            if visited[v] {
                continue;
            }
            path.push(e);
            if dfs(inst, residual, v, t, visited, path) {
                return true;
            }
            path.pop();
        }
        false
    }

    if dfs(inst, residual, s, t, &mut visited, &mut path) {
        Some(path)
    } else {
        None
    }
}

/// Additive cost bound of the rounding step:
/// `m (gamma + 1) sqrt(2 n ln(m / beta))`.
pub fn rounding_gap_bound(m: usize, gamma: f64, n: usize, beta: f64) -> f64 {
    m as f64 * (gamma + 1.0) * (2.0 * n as f64 * ((m as f64) / beta).ln()).sqrt()
}
