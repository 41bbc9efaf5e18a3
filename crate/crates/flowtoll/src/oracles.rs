//! Exact ground-truth solvers and the incentive-measurement harness.
//!
//! These are the referees for the private pipeline: brute-force enumeration
//! of the optimal unsplittable flow, a certified solver for the fractional
//! relaxation, best-response dynamics, Nash verification, unsatisfied-player
//! counting, and a Monte-Carlo estimate of what a single player gains by
//! deviating from good behavior in the mediated game. Everything here is
//! desk-scale by design: operations refuse oversized inputs rather than
//! approximate.

use thiserror::Error;

use rand::Rng;

use crate::game_core::{
    self, Congestion, GameError, IntegralFlow, RoutingInstance, TollSchedule, TollVector,
};
use crate::mediator::{self, MediatorConfig, MediatorError, MediatorReport};
use crate::private_opt::{rng_domains, substream, OptError};

/// Enumeration guard: simple paths per player.
pub const MAX_PATHS_PER_PLAYER: usize = 1_000;

/// Enumeration guard: total path profiles.
pub const MAX_PROFILES: u128 = 10_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("player {player} has {count} simple paths, enumeration cap is {cap}")]
    TooManyPaths {
        player: usize,
        count: usize,
        cap: usize,
    },
    #[error("{profiles} path profiles exceed the enumeration cap {cap}")]
    TooManyProfiles { profiles: u128, cap: u128 },
    #[error("relaxation solver did not certify optimality (gap {gap:.3e} after {iters} iterations)")]
    RelaxationNotConverged { gap: f64, iters: usize },
    #[error("best-response dynamics did not terminate within {0} moves")]
    DynamicsDiverged(usize),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
    #[error(transparent)]
    Opt(#[from] OptError),
}

// ---------------------------------------------------------------------------
// Path enumeration and brute force
// ---------------------------------------------------------------------------

/// All simple `s -> t` paths as ordered edge lists, depth-first in edge
/// order. `s == t` yields the single empty path.
pub fn enumerate_simple_paths(
    inst: &RoutingInstance,
    player: usize,
    s: usize,
    t: usize,
) -> Result<Vec<Vec<usize>>, OracleError> {
    if s == t {
        return Ok(vec![Vec::new()]);
    }
    let mut paths = Vec::new();
    let mut visited = vec![false; inst.num_vertices()];
    let mut stack = Vec::new();

    fn dfs(
        inst: &RoutingInstance,
        u: usize,
        t: usize,
        visited: &mut [bool],
        stack: &mut Vec<usize>,
        paths: &mut Vec<Vec<usize>>,
        player: usize,
    ) -> Result<(), OracleError> {
        if u == t {
            paths.push(stack.clone());
            if paths.len() > MAX_PATHS_PER_PLAYER {
                return Err(OracleError::TooManyPaths {
                    player,
                    count: paths.len(),
                    cap: MAX_PATHS_PER_PLAYER,
                });
            }
            return Ok(());
        }
        visited[u] = true;
        for &e in inst.out_edges(u) {
            let v = inst.edges()[e].head;
            if !visited[v] {
                stack.push(e);
                dfs(inst, v, t, visited, stack, paths, player)?;
                stack.pop();
            }
        }
        visited[u] = false;
        Ok(())
    }

    dfs(inst, s, t, &mut visited, &mut stack, &mut paths, player)?;
    Ok(paths)
}

/// Exhaustive minimum of the average cost over all unsplittable flows.
/// Profiles are scanned in lexicographic order (player 0 most significant),
/// and the first minimizer is kept, which fixes the tie-break.
pub fn brute_force_opt(inst: &RoutingInstance) -> Result<(IntegralFlow, f64), OracleError> {
    let n = inst.num_players();
    let all_paths: Vec<Vec<Vec<usize>>> = (0..n)
        .map(|i| {
            let (s, t) = inst.demand(i);
            enumerate_simple_paths(inst, i, s, t)
        })
        .collect::<Result<_, _>>()?;
    let profiles: u128 = all_paths.iter().map(|p| p.len() as u128).product();
    if profiles > MAX_PROFILES {
        return Err(OracleError::TooManyProfiles {
            profiles,
            cap: MAX_PROFILES,
        });
    }
    let m = inst.num_edges();
    let nf = n as f64;
    let mut choice = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut loads = vec![0.0f64; m];
        for (i, &j) in choice.iter().enumerate() {
            for &e in &all_paths[i][j] {
                loads[e] += 1.0;
            }
        }
        let cost = loads
            .iter()
            .enumerate()
            .map(|(e, &u)| u * inst.latency(e).eval(u))
            .sum::<f64>()
            / nf;
        if best.as_ref().map_or(true, |(b, _)| cost < *b - 1e-12) {
            best = Some((cost, choice.clone()));
        }
        // lexicographic odometer, last player fastest
        let mut k = n;
        loop {
            if k == 0 {
                let (cost, sel) = best.expect("at least one profile");
                let paths: Vec<Vec<usize>> = sel
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| all_paths[i][j].clone())
                    .collect();
                let flow = IntegralFlow::from_paths(inst, &paths)?;
                return Ok((flow, cost));
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] == all_paths[k].len() {
                choice[k] = 0;
            } else {
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fractional relaxation
// ---------------------------------------------------------------------------

/// Certified optimum of the convex relaxation, solved in the path
/// formulation: one probability simplex per player over its simple paths,
/// accelerated projected gradient descent with backtracking, terminated by
/// the linearization (Frank-Wolfe) gap, which upper-bounds the
/// suboptimality.
pub fn fractional_opt(inst: &RoutingInstance) -> Result<f64, OracleError> {
    let certified = fractional_opt_with_gap(inst, 1e-7, 400_000)?;
    Ok(certified.0)
}

pub fn fractional_opt_with_gap(
    inst: &RoutingInstance,
    gap_target: f64,
    max_iters: usize,
) -> Result<(f64, f64), OracleError> {
    let n = inst.num_players();
    let all_paths: Vec<Vec<Vec<usize>>> = (0..n)
        .map(|i| {
            let (s, t) = inst.demand(i);
            enumerate_simple_paths(inst, i, s, t)
        })
        .collect::<Result<_, _>>()?;
    let m = inst.num_edges();
    let nf = n as f64;

    let objective = |weights: &[Vec<f64>]| -> f64 {
        let mut loads = vec![0.0f64; m];
        for (i, w) in weights.iter().enumerate() {
            for (j, &wj) in w.iter().enumerate() {
                for &e in &all_paths[i][j] {
                    loads[e] += wj;
                }
            }
        }
        loads
            .iter()
            .enumerate()
            .map(|(e, &u)| u * inst.latency(e).eval(u))
            .sum::<f64>()
            / nf
    };
    let gradient = |weights: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut loads = vec![0.0f64; m];
        for (i, w) in weights.iter().enumerate() {
            for (j, &wj) in w.iter().enumerate() {
                for &e in &all_paths[i][j] {
                    loads[e] += wj;
                }
            }
        }
        let marginal: Vec<f64> = loads
            .iter()
            .enumerate()
            .map(|(e, &u)| {
                let lat = inst.latency(e);
                (lat.eval(u) + u * lat.deriv(u)) / nf
            })
            .collect();
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                (0..w.len())
                    .map(|j| all_paths[i][j].iter().map(|&e| marginal[e]).sum())
                    .collect()
            })
            .collect()
    };
    // Frank-Wolfe gap: <grad, p> - sum_i min_j grad_ij upper-bounds the
    // suboptimality of p
    let fw_gap = |weights: &[Vec<f64>], grad: &[Vec<f64>]| -> f64 {
        let mut gap = 0.0;
        for (w, g) in weights.iter().zip(grad) {
            let inner: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
            let lowest = g.iter().cloned().fold(f64::INFINITY, f64::min);
            gap += inner - lowest;
        }
        gap
    };

    let mut point: Vec<Vec<f64>> = all_paths
        .iter()
        .map(|p| vec![1.0 / p.len() as f64; p.len()])
        .collect();
    let mut momentum = point.clone();
    let mut t_acc = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut value = objective(&point);
    let mut iters = 0usize;
    let mut last_gap = f64::INFINITY;

    while iters < max_iters {
        iters += 1;
        let grad = gradient(&momentum);
        let f_momentum = objective(&momentum);
        // backtracking on the smoothness constant
        let candidate = loop {
            let stepped: Vec<Vec<f64>> = momentum
                .iter()
                .zip(&grad)
                .map(|(w, g)| {
                    let moved: Vec<f64> = w
                        .iter()
                        .zip(g)
                        .map(|(&a, &b)| a - b / lipschitz)
                        .collect();
                    project_simplex(&moved)
                })
                .collect();
            let fc = objective(&stepped);
            let mut quad = f_momentum;
            for (i, w) in stepped.iter().enumerate() {
                for (j, &wj) in w.iter().enumerate() {
                    let d = wj - momentum[i][j];
                    quad += grad[i][j] * d + 0.5 * lipschitz * d * d;
                }
            }
            if fc <= quad + 1e-12 || lipschitz > 1e12 {
                break stepped;
            }
            lipschitz *= 2.0;
        };
        let new_value = objective(&candidate);
        // function restart keeps the acceleration monotone enough
        if new_value > value {
            momentum = point.clone();
            t_acc = 1.0;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
            let coef = (t_acc - 1.0) / t_next;
            momentum = candidate
                .iter()
                .zip(&point)
                .map(|(newp, oldp)| {
                    newp.iter()
                        .zip(oldp)
                        .map(|(&a, &b)| a + coef * (a - b))
                        .collect()
                })
                .collect();
            t_acc = t_next;
            point = candidate;
            value = new_value;
        }
        if iters % 32 == 0 {
            let g_here = gradient(&point);
            last_gap = fw_gap(&point, &g_here);
            if last_gap <= gap_target {
                return Ok((value, last_gap));
            }
        }
    }
    let g_here = gradient(&point);
    last_gap = last_gap.min(fw_gap(&point, &g_here));
    if last_gap <= gap_target {
        Ok((value, last_gap))
    } else {
        Err(OracleError::RelaxationNotConverged {
            gap: last_gap,
            iters,
        })
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&u| (u - theta).max(0.0)).collect()
}

// ---------------------------------------------------------------------------
// Nash verification and dynamics
// ---------------------------------------------------------------------------

/// Result of a Nash check: the worst deviation over all players.
#[derive(Debug, Clone)]
pub struct NashReport {
    pub is_nash: bool,
    pub worst_player: usize,
    pub worst_gain: f64,
}

/// Exact best-response check of a flow at its own congestion: every
/// player's cheapest alternative under the true post-deviation loads, with
/// either constant or functional tolls. The flow is an `eta`-approximate
/// Nash flow iff no gain exceeds `eta`.
pub fn verify_nash(
    inst: &RoutingInstance,
    x: &IntegralFlow,
    tolls: &TollSchedule,
    eta: f64,
) -> Result<NashReport, OracleError> {
    let y = x.congestion(inst);
    let mut worst_player = 0;
    let mut worst_gain = f64::NEG_INFINITY;
    for i in 0..x.num_players() {
        let r = game_core::is_unsatisfied(inst, x, i, &y, tolls, 0.0)?;
        if r.gain > worst_gain {
            worst_gain = r.gain;
            worst_player = i;
        }
    }
    Ok(NashReport {
        is_nash: worst_gain <= eta,
        worst_player,
        worst_gain,
    })
}

/// Sequential `rho`-best-response dynamics at the true congestion, lowest
/// unsatisfied player index first. The tolled game is an exact potential
/// game, so the dynamics terminate; the result with `rho = 0` is an exact
/// Nash flow. Returns the final flow and the number of moves.
pub fn best_response_dynamics(
    inst: &RoutingInstance,
    start: &IntegralFlow,
    tolls: &TollSchedule,
    rho: f64,
) -> Result<(IntegralFlow, usize), OracleError> {
    let move_cap = 200_000;
    let mut flow = start.clone();
    let mut moves = 0;
    'outer: loop {
        let y = flow.congestion(inst);
        for i in 0..flow.num_players() {
            let r = game_core::is_unsatisfied(inst, &flow, i, &y, tolls, rho)?;
            if r.unsatisfied {
                flow = flow.with_player_path(inst, i, &r.best_path)?;
                moves += 1;
                if moves > move_cap {
                    return Err(OracleError::DynamicsDiverged(move_cap));
                }
                continue 'outer;
            }
        }
        return Ok((flow, moves));
    }
}

/// Number of players `zeta`-unsatisfied at congestion `y`.
pub fn count_unsatisfied(
    inst: &RoutingInstance,
    tolls: &TollSchedule,
    x: &IntegralFlow,
    y: &Congestion,
    zeta: f64,
) -> Result<usize, OracleError> {
    let mut count = 0;
    for i in 0..x.num_players() {
        if game_core::is_unsatisfied(inst, x, i, y, tolls, zeta)?.unsatisfied {
            count += 1;
        }
    }
    Ok(count)
}

// ---------------------------------------------------------------------------
// Deviation harness
// ---------------------------------------------------------------------------

/// What the deviating player tells the mediator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportChoice {
    Truthful,
    Misreport((usize, usize)),
    OptOut,
}

/// How the deviating player maps the mediator's suggestion to an action.
/// The remap's output must be feasible for the player's true demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Remap {
    Identity,
    ConstantPath(Vec<usize>),
    /// Cheapest route for the true demand judged against the published
    /// noisy congestion and tolls (all the player ever sees).
    BestResponseToSuggestion,
}

impl Remap {
    fn label(&self) -> String {
        match self {
            Remap::Identity => "identity".into(),
            Remap::ConstantPath(p) => format!("const{p:?}"),
            Remap::BestResponseToSuggestion => "best-response".into(),
        }
    }
}

/// One unilateral deviation under test.
#[derive(Debug, Clone)]
pub struct DeviationProfile {
    pub player: usize,
    pub report: ReportChoice,
    pub remap: Remap,
}

impl DeviationProfile {
    pub fn label(&self) -> String {
        let report = match &self.report {
            ReportChoice::Truthful => "truthful".into(),
            ReportChoice::Misreport((s, t)) => format!("misreport({s}->{t})"),
            ReportChoice::OptOut => "optout".into(),
        };
        format!("{report}+{}", self.remap.label())
    }

    pub fn is_good_behavior(&self) -> bool {
        self.report == ReportChoice::Truthful && self.remap == Remap::Identity
    }
}

/// The canonical finite deviation menu for one player: good behavior,
/// best-responding to the suggestion, every constant path (reported
/// truthfully or after opting out), and the endpoint-swapped misreport when
/// it is routable. Remaps whose output could be infeasible for the true
/// demand are dropped.
pub fn canonical_menu(
    inst: &RoutingInstance,
    player: usize,
) -> Result<Vec<DeviationProfile>, OracleError> {
    let (s, t) = inst.demand(player);
    let paths = enumerate_simple_paths(inst, player, s, t)?;
    let mut menu = vec![
        DeviationProfile {
            player,
            report: ReportChoice::Truthful,
            remap: Remap::Identity,
        },
        DeviationProfile {
            player,
            report: ReportChoice::Truthful,
            remap: Remap::BestResponseToSuggestion,
        },
    ];
    for p in &paths {
        menu.push(DeviationProfile {
            player,
            report: ReportChoice::Truthful,
            remap: Remap::ConstantPath(p.clone()),
        });
        menu.push(DeviationProfile {
            player,
            report: ReportChoice::OptOut,
            remap: Remap::ConstantPath(p.clone()),
        });
    }
    // swapped endpoints: only if the misreported demand is routable, and
    // only with a remap that restores feasibility for the true demand
    if s != t && inst.shortest_hop_path(t, s).is_some() {
        menu.push(DeviationProfile {
            player,
            report: ReportChoice::Misreport((t, s)),
            remap: Remap::BestResponseToSuggestion,
        });
    }
    Ok(menu)
}

/// Monte-Carlo estimate of a deviation's value to the player.
#[derive(Debug, Clone)]
pub struct DeviationEstimate {
    pub label: String,
    pub trials: usize,
    pub good_mean: f64,
    pub deviation_mean: f64,
    /// Positive when the deviation helps: good-behavior cost minus
    /// deviation cost.
    pub gain: f64,
    /// 95% confidence half-width of the paired difference.
    pub ci_half_width: f64,
}

/// Player `i`'s realized cost when they route `path` and everybody else
/// routes `others`: `sum_{e in path} (l_e(load_e) + tau_e)`.
fn realized_cost(
    inst: &RoutingInstance,
    path: &[usize],
    others: &[Vec<usize>],
    tolls: &TollVector,
) -> f64 {
    let mut loads = vec![0.0f64; inst.num_edges()];
    for p in others {
        for &e in p {
            loads[e] += 1.0;
        }
    }
    for &e in path {
        loads[e] += 1.0;
    }
    path.iter()
        .map(|&e| inst.latency(e).eval(loads[e]) + tolls.get(e))
        .sum()
}

fn apply_remap(
    inst: &RoutingInstance,
    player: usize,
    true_demand: (usize, usize),
    suggestion: Option<&Vec<usize>>,
    output: &mediator::MediatorOutput,
    remap: &Remap,
) -> Result<Vec<usize>, OracleError> {
    match remap {
        Remap::Identity => {
            let path = suggestion
                .cloned()
                .ok_or(GameError::Unreachable { player })?;
            Ok(path)
        }
        Remap::ConstantPath(p) => Ok(p.clone()),
        Remap::BestResponseToSuggestion => {
            let m = inst.num_edges();
            let mut row = vec![0u8; m];
            if let Some(p) = suggestion {
                for &e in p {
                    row[e] = 1;
                }
            }
            let schedule = TollSchedule::Constant(output.tolls.clone());
            let report = game_core::is_unsatisfied_row(
                inst,
                player,
                true_demand,
                &row,
                &output.noisy_congestion,
                &schedule,
                0.0,
            )?;
            Ok(report.best_path)
        }
    }
}

/// Estimates the expected mediated-game cost of good behavior versus one
/// deviation profile, with everyone else truthful, using common random
/// numbers: trial `k` runs both arms on the same mediator seed, so the
/// identity deviation measures exactly zero.
pub fn measure_deviation_gain(
    inst: &RoutingInstance,
    config: &MediatorConfig,
    profile: &DeviationProfile,
    trials: usize,
    seed: u64,
) -> Result<DeviationEstimate, OracleError> {
    assert!(trials >= 1);
    let i = profile.player;
    let true_demand = inst.demand(i);
    let truthful = MediatorReport::truthful(inst);
    let deviant = match profile.report {
        ReportChoice::Truthful => truthful.clone(),
        ReportChoice::Misreport(d) => truthful.with_report(i, Some(d)),
        ReportChoice::OptOut => truthful.with_report(i, None),
    };

    let mut diffs = Vec::with_capacity(trials);
    let mut good_sum = 0.0;
    let mut dev_sum = 0.0;
    for k in 0..trials {
        let mut trial_rng = substream(seed, rng_domains::DEVIATION_TRIAL, k as u64);
        let mediator_seed: u64 = trial_rng.gen();

        let good_out = mediator::flowtoll(inst, &truthful, config, mediator_seed)?;
        let good_paths: Vec<Vec<usize>> = good_out
            .suggestions
            .iter()
            .map(|p| p.clone().expect("all players opted in"))
            .collect();
        let good_others: Vec<Vec<usize>> = (0..inst.num_players())
            .filter(|&j| j != i)
            .map(|j| good_paths[j].clone())
            .collect();
        let good_cost = realized_cost(inst, &good_paths[i], &good_others, &good_out.tolls);

        // the deviation arm re-runs the mediator on the same seed, so a
        // no-op deviation reproduces the good arm exactly
        let dev_out = mediator::flowtoll(inst, &deviant, config, mediator_seed)?;
        let dev_others: Vec<Vec<usize>> = (0..inst.num_players())
            .filter(|&j| j != i)
            .map(|j| {
                dev_out.suggestions[j]
                    .clone()
                    .expect("non-deviating players opted in")
            })
            .collect();
        let action = apply_remap(
            inst,
            i,
            true_demand,
            dev_out.suggestions[i].as_ref(),
            &dev_out,
            &profile.remap,
        )?;
        let dev_cost = realized_cost(inst, &action, &dev_others, &dev_out.tolls);

        good_sum += good_cost;
        dev_sum += dev_cost;
        diffs.push(good_cost - dev_cost);
    }
    let tf = trials as f64;
    let gain = diffs.iter().sum::<f64>() / tf;
    let variance = if trials > 1 {
        diffs.iter().map(|d| (d - gain).powi(2)).sum::<f64>() / (tf - 1.0)
    } else {
        0.0
    };
    let ci_half_width = 1.96 * (variance / tf).sqrt();
    Ok(DeviationEstimate {
        label: profile.label(),
        trials,
        good_mean: good_sum / tf,
        deviation_mean: dev_sum / tf,
        gain,
        ci_half_width,
    })
}
