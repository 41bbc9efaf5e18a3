//! The end-to-end flow mediator.
//!
//! Players submit demand reports (or opt out). The pipeline runs three
//! stages on the opted-in demands with the privacy budget split as
//!
//! 1. a private near-optimal flow from the gradient-descent solver at
//!    `(eps/4, delta/2)`, rounded to paths per player;
//! 2. a private congestion release at `eps/4`, from which the anonymous
//!    marginal-cost tolls are derived (the released congestion and the
//!    tolls are `(3 eps/4, delta/2)`-differentially private in the
//!    demands);
//! 3. a repair pass that reroutes every player left substantially
//!    unsatisfied, judged against the frozen noisy congestion.
//!
//! Players see only the shared dual-play sequence, the noisy congestion,
//! the tolls, and their own data; the whole output is `(eps, delta)`-jointly
//! differentially private.

use rand::Rng;
use thiserror::Error;

use crate::dp_mech::{self, PrivacyBudget, PrivacyKind};
use crate::game_core::{
    self, Congestion, GameError, IntegralFlow, RoutingInstance, TollSchedule, TollVector,
};
use crate::private_opt::{
    self, p_gd, psrr, rng_domains, substream, OptError, PgdDiagnostics, PgdParams,
};

#[derive(Debug, Error)]
pub enum MediatorError {
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: OptError,
    },
    #[error("stage {stage}: {source}")]
    GameStage {
        stage: &'static str,
        #[source]
        source: GameError,
    },
}

fn stage(stage: &'static str) -> impl FnOnce(OptError) -> MediatorError {
    move |source| MediatorError::Stage { stage, source }
}

fn game_stage(stage: &'static str) -> impl FnOnce(GameError) -> MediatorError {
    move |source| MediatorError::GameStage { stage, source }
}

// ---------------------------------------------------------------------------
// Reports and outputs
// ---------------------------------------------------------------------------

/// What each player tells the mediator: a demand pair, or opt-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediatorReport {
    reports: Vec<Option<(usize, usize)>>,
}

impl MediatorReport {
    pub fn new(reports: Vec<Option<(usize, usize)>>) -> Self {
        MediatorReport { reports }
    }

    /// Everyone reports their true demand.
    pub fn truthful(inst: &RoutingInstance) -> Self {
        MediatorReport {
            reports: inst.demands().iter().map(|&d| Some(d)).collect(),
        }
    }

    /// One player's report replaced (misreport or opt-out).
    pub fn with_report(&self, i: usize, report: Option<(usize, usize)>) -> Self {
        let mut reports = self.reports.clone();
        reports[i] = report;
        MediatorReport { reports }
    }

    pub fn reports(&self) -> &[Option<(usize, usize)>] {
        &self.reports
    }

    pub fn opted_in(&self) -> Vec<usize> {
        (0..self.reports.len())
            .filter(|&i| self.reports[i].is_some())
            .collect()
    }
}

/// Pipeline knobs. In noise-free diagnostic mode the mechanisms run exact
/// (zero Laplace noise, argmax selection) while every derived constant
/// (iteration count, step sizes, repair threshold) still comes from the
/// nominal epsilon/delta/beta below; such runs are NOT private and their
/// outputs say so.
#[derive(Debug, Clone, Copy)]
pub struct MediatorConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    /// Multiplier on the solver's iteration-count formula.
    pub c_t: f64,
    /// Multiplier on the closed-form optimization-error estimate.
    pub c_alpha: f64,
    pub flip_dual_sign: bool,
    pub noise_free: bool,
}

impl Default for MediatorConfig {
    fn default() -> Self {
        MediatorConfig {
            epsilon: 1.0,
            delta: 0.1,
            beta: 0.05,
            c_t: 1.0,
            c_alpha: 1.0,
            flip_dual_sign: false,
            noise_free: false,
        }
    }
}

/// Run record embedded in every mediator output.
#[derive(Debug, Clone)]
pub struct MediatorDiagnostics {
    pub budget: PrivacyBudget,
    /// Differential privacy of the released congestion and tolls:
    /// the composition intermediate `(3 eps/4, delta/2)`.
    pub tolls_dp: (f64, f64),
    /// Joint differential privacy of the whole output: `(eps, delta)`.
    pub jdp_total: (f64, f64),
    pub pgd: Option<PgdDiagnostics>,
    /// Closed-form optimization-error estimate `alpha(eps)` used for the
    /// repair threshold (the realized value needs an oracle and is measured
    /// by the experiment runner, not here).
    pub alpha_formula: f64,
    /// Repair threshold `zeta_hat`.
    pub zeta_hat: f64,
    pub unsatisfied_before_repair: usize,
    pub rerouted: usize,
    /// Average cost of the rounded flow before and after repair (over the
    /// opted-in players).
    pub cost_before_repair: f64,
    pub cost_after_repair: f64,
    /// The rounded pre-repair routes, indexed like the effective instance.
    pub pre_repair_paths: Vec<Vec<usize>>,
    pub effective_n: usize,
    pub noise_free: bool,
}

/// The mediator's answer: one suggested path per opted-in player, shared
/// anonymous tolls, the noisy congestion they were derived from, and the run
/// record. `suggestions[i]` is `None` exactly for the players who opted out.
#[derive(Debug, Clone)]
pub struct MediatorOutput {
    pub suggestions: Vec<Option<Vec<usize>>>,
    pub tolls: TollVector,
    pub noisy_congestion: Congestion,
    pub diagnostics: MediatorDiagnostics,
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Private congestion release: per-edge Laplace noise at scale `m/eps`,
/// clamped into `[0, n]` (the upper clamp is the algorithm's, the lower one
/// keeps the marginal-cost toll meaningful).
pub fn p_con<R: Rng + ?Sized>(
    inst: &RoutingInstance,
    x: &IntegralFlow,
    eps: f64,
    rng: &mut R,
) -> Result<Congestion, MediatorError> {
    x.validate(inst).map_err(game_stage("p-con"))?;
    let m = inst.num_edges() as f64;
    let n = inst.num_players() as f64;
    let scale = if eps.is_infinite() { 0.0 } else { m / eps };
    let exact = x.congestion(inst);
    let mut noisy = Vec::with_capacity(exact.len());
    for e in 0..exact.len() {
        let z = dp_mech::laplace_sample(scale, rng).map_err(|e| stage("p-con")(OptError::Dp(e)))?;
        noisy.push((exact.get(e) + z).clamp(0.0, n));
    }
    Congestion::new(noisy, inst.num_players()).map_err(game_stage("p-con"))
}

/// Marginal-cost tolls evaluated at a (possibly noisy) congestion.
pub fn tolls_from_congestion(inst: &RoutingInstance, y: &Congestion) -> TollVector {
    let cap = inst.toll_cap();
    let tau: Vec<f64> = (0..inst.num_edges())
        .map(|e| game_core::marginal_toll(inst.latency(e), y.get(e), cap))
        .collect();
    TollVector::new(tau, cap).expect("clipped tolls are in range")
}

/// Simultaneous best responses of unsatisfied players. Every player is
/// tested against the same frozen congestion `y` (the loop never updates
/// it), so the pass order is irrelevant; the unsatisfied players move to
/// their cheapest routes under `y' = y - x_i + x_i'` all at once.
pub fn p_br(
    inst: &RoutingInstance,
    tolls: &TollVector,
    y: &Congestion,
    x: &IntegralFlow,
    zeta: f64,
) -> Result<IntegralFlow, MediatorError> {
    let schedule = TollSchedule::Constant(tolls.clone());
    let mut paths: Vec<Vec<usize>> = Vec::with_capacity(x.num_players());
    for i in 0..x.num_players() {
        paths.push(p_br_player(
            inst,
            i,
            inst.demand(i),
            x.row(i),
            y,
            &schedule,
            zeta,
        )?);
    }
    IntegralFlow::from_paths(inst, &paths).map_err(game_stage("p-br"))
}

/// One player's repair decision from their own data plus the shared signal.
#[allow(clippy::too_many_arguments)]
pub fn p_br_player(
    inst: &RoutingInstance,
    player: usize,
    demand: (usize, usize),
    row: &[u8],
    y: &Congestion,
    tolls: &TollSchedule,
    zeta: f64,
) -> Result<Vec<usize>, MediatorError> {
    let report = game_core::is_unsatisfied_row(inst, player, demand, row, y, tolls, zeta)
        .map_err(game_stage("p-br"))?;
    if report.unsatisfied {
        Ok(report.best_path)
    } else {
        Ok(game_core::walk_row_path(inst, demand, row))
    }
}

// ---------------------------------------------------------------------------
// Bound calculators
// ---------------------------------------------------------------------------

/// Closed-form optimization-error estimate
/// `alpha = C_alpha * sqrt(n) * m^(5/4) / sqrt(eps)`.
pub fn alpha_formula(c_alpha: f64, n: usize, m: usize, eps: f64) -> f64 {
    if eps.is_infinite() {
        return 0.0;
    }
    c_alpha * (n as f64).sqrt() * (m as f64).powf(1.25) / eps.sqrt()
}

/// Repair threshold
/// `zeta_hat = 4 sqrt(m n gamma alpha) + 8 gamma m^2 ln(m/beta) / eps`.
pub fn zeta_hat(m: usize, n: usize, gamma: f64, alpha: f64, eps: f64, beta: f64) -> f64 {
    let mf = m as f64;
    let a = alpha.max(0.0);
    let first = 4.0 * (mf * n as f64 * gamma * a).sqrt();
    let second = if eps.is_infinite() {
        0.0
    } else {
        8.0 * gamma * mf * mf * (mf / beta).ln() / eps
    };
    first + second
}

/// Equilibrium-quality bound with the explicit constants:
/// `eta_eq = 6 sqrt(m n alpha gamma) + 12 gamma m^2 ln(m / beta) / eps`.
pub fn eta_eq_bound(m: usize, n: usize, gamma: f64, alpha: f64, eps: f64, beta: f64) -> f64 {
    let mf = m as f64;
    let a = alpha.max(0.0);
    let first = 6.0 * (mf * n as f64 * a * gamma).sqrt();
    let second = if eps.is_infinite() {
        0.0
    } else {
        12.0 * gamma * mf * mf * (mf / beta).ln() / eps
    };
    first + second
}

/// Optimality bound after repair:
/// `eta_opt = alpha + sqrt(m n gamma alpha)/2 + sqrt(m n alpha)/(2 sqrt(gamma))`.
pub fn eta_opt_bound(m: usize, n: usize, gamma: f64, alpha: f64) -> f64 {
    let a = alpha.max(0.0);
    if a == 0.0 {
        return 0.0;
    }
    let mn = m as f64 * n as f64;
    a + (mn * gamma * a).sqrt() / 2.0 + (mn * a).sqrt() / (2.0 * gamma.sqrt())
}

/// Ex-post equilibrium bound of the mediated game:
/// `eta = eta_eq + m (U + n)(2 eps + beta + delta)`.
pub fn eta_game_bound(
    eta_eq: f64,
    m: usize,
    toll_cap: f64,
    n: usize,
    eps: f64,
    beta: f64,
    delta: f64,
) -> f64 {
    eta_eq + m as f64 * (toll_cap + n as f64) * (2.0 * eps + beta + delta)
}

// ---------------------------------------------------------------------------
// The pipeline
// ---------------------------------------------------------------------------

/// Runs the full mediator on the players' reports. Opted-out players get no
/// suggestion and contribute nothing; all constants use the effective player
/// count. With every player opted out the mediator returns an empty answer
/// and consumes no budget.
pub fn flowtoll(
    inst: &RoutingInstance,
    reports: &MediatorReport,
    config: &MediatorConfig,
    seed: u64,
) -> Result<MediatorOutput, MediatorError> {
    let m = inst.num_edges();
    let opted = reports.opted_in();
    let mut budget = PrivacyBudget::new(
        config.epsilon,
        config.delta,
        config.beta,
        config.noise_free,
    );

    if opted.is_empty() {
        let diagnostics = MediatorDiagnostics {
            budget,
            tolls_dp: (0.0, 0.0),
            jdp_total: (0.0, 0.0),
            pgd: None,
            alpha_formula: 0.0,
            zeta_hat: 0.0,
            unsatisfied_before_repair: 0,
            rerouted: 0,
            cost_before_repair: 0.0,
            cost_after_repair: 0.0,
            pre_repair_paths: Vec::new(),
            effective_n: 0,
            noise_free: config.noise_free,
        };
        return Ok(MediatorOutput {
            suggestions: vec![None; reports.reports().len()],
            tolls: TollVector::zeros(m),
            noisy_congestion: Congestion::new(vec![0.0; m], 0).expect("zero congestion is valid"),
            diagnostics,
        });
    }

    let demands: Vec<(usize, usize)> = opted
        .iter()
        .map(|&i| reports.reports()[i].expect("opted-in players have demands"))
        .collect();
    let eff = inst.with_demands(demands).map_err(game_stage("reports"))?;
    let n_eff = eff.num_players();

    // stage 1: private near-optimal fractional flow, then per-player rounding
    let eps_pgd = config.epsilon / 4.0;
    let delta_pgd = config.delta / 2.0;
    let params = PgdParams {
        epsilon: eps_pgd,
        delta: delta_pgd,
        beta: config.beta / 2.0,
        c_t: config.c_t,
        flip_dual_sign: config.flip_dual_sign,
        noise_free: config.noise_free,
    };
    let (avg_flow, pgd_diag) = p_gd(&eff, &params, seed).map_err(stage("p-gd"))?;
    budget.charge("p-gd", eps_pgd, delta_pgd, PrivacyKind::Jdp);

    let mut rounded_paths = Vec::with_capacity(n_eff);
    for i in 0..n_eff {
        let mut rng = substream(seed, rng_domains::PSRR_PLAYER, i as u64);
        rounded_paths.push(psrr(&eff, i, avg_flow.row(i), &mut rng).map_err(stage("psrr"))?);
    }
    let x_rounded = IntegralFlow::from_paths(&eff, &rounded_paths).map_err(game_stage("psrr"))?;

    // stage 2: private congestion and the tolls derived from it
    let eps_con = config.epsilon / 4.0;
    let eps_con_mech = if config.noise_free {
        f64::INFINITY
    } else {
        eps_con
    };
    let mut con_rng = substream(seed, rng_domains::P_CON, 0);
    let y_hat = p_con(&eff, &x_rounded, eps_con_mech, &mut con_rng)?;
    budget.charge("p-con", eps_con, 0.0, PrivacyKind::Dp);
    let tolls = tolls_from_congestion(&eff, &y_hat);
    let tolls_dp = dp_mech::dp_jdp_composition_bound(eps_pgd, delta_pgd, eps_con);
    let jdp_total = (eps_pgd + tolls_dp.0, delta_pgd + tolls_dp.1);

    // stage 3: repair the unsatisfied players against the frozen release
    let alpha = alpha_formula(config.c_alpha, n_eff, m, config.epsilon);
    let zeta = zeta_hat(m, n_eff, eff.gamma(), alpha, config.epsilon, config.beta);
    let schedule = TollSchedule::Constant(tolls.clone());
    let mut unsatisfied = 0;
    for i in 0..n_eff {
        let r = game_core::is_unsatisfied_row(
            &eff,
            i,
            eff.demand(i),
            x_rounded.row(i),
            &y_hat,
            &schedule,
            zeta,
        )
        .map_err(game_stage("p-br"))?;
        if r.unsatisfied {
            unsatisfied += 1;
        }
    }
    let x_final = p_br(&eff, &tolls, &y_hat, &x_rounded, zeta)?;
    let rerouted = (0..n_eff)
        .filter(|&i| x_final.row(i) != x_rounded.row(i))
        .count();

    let cost_before = game_core::average_cost(&eff, &x_rounded).map_err(game_stage("psrr"))?;
    let cost_after = game_core::average_cost(&eff, &x_final).map_err(game_stage("p-br"))?;

    let mut suggestions: Vec<Option<Vec<usize>>> = vec![None; reports.reports().len()];
    for (k, &orig) in opted.iter().enumerate() {
        suggestions[orig] = Some(x_final.path_edges(&eff, k));
    }

    let diagnostics = MediatorDiagnostics {
        budget,
        tolls_dp,
        jdp_total,
        pgd: Some(pgd_diag),
        alpha_formula: alpha,
        zeta_hat: zeta,
        unsatisfied_before_repair: unsatisfied,
        rerouted,
        cost_before_repair: cost_before,
        cost_after_repair: cost_after,
        pre_repair_paths: rounded_paths,
        effective_n: n_eff,
        noise_free: config.noise_free,
    };
    Ok(MediatorOutput {
        suggestions,
        tolls,
        noisy_congestion: y_hat,
        diagnostics,
    })
}

/// Recomputes one opted-in player's suggestion from the public billboard
/// signal (the dual-play sequence, the noisy congestion, the tolls, the
/// shared constants) plus that player's own report and rounding substream.
/// Exists for the structural privacy audit: the result must be identical to
/// the pipeline's suggestion without ever touching other players' data.
#[allow(clippy::too_many_arguments)]
pub fn replay_player_from_billboard(
    inst: &RoutingInstance,
    player_index_in_effective: usize,
    demand: (usize, usize),
    dual_plays: &[Vec<f64>],
    eta_x: f64,
    y_hat: &Congestion,
    tolls: &TollVector,
    zeta: f64,
    seed: u64,
) -> Result<Vec<usize>, MediatorError> {
    let single = inst
        .with_demands(vec![demand])
        .map_err(game_stage("billboard-replay"))?;
    let projector = private_opt::FlowProjector::new(&single);
    let m = inst.num_edges();
    let (s, t) = demand;
    let path = single
        .shortest_hop_path(s, t)
        .ok_or(GameError::Unreachable { player: 0 })
        .map_err(game_stage("billboard-replay"))?;
    let mut x = vec![0.0; m];
    for e in path {
        x[e] = 1.0;
    }
    let rounds = dual_plays.len() as f64;
    let mut avg = vec![0.0; m];
    for lambda in dual_plays {
        for e in 0..m {
            avg[e] += x[e];
        }
        let grad: Vec<f64> = lambda.iter().map(|&l| -l).collect();
        let domain = private_opt::Domain::Flow {
            projector: &projector,
            player: 0,
            demand,
        };
        x = private_opt::gd_step(&domain, &x, &grad, eta_x).map_err(stage("billboard-replay"))?;
    }
    for v in avg.iter_mut() {
        *v = (*v / rounds).clamp(0.0, 1.0);
    }
    let mut rng = substream(
        seed,
        rng_domains::PSRR_PLAYER,
        player_index_in_effective as u64,
    );
    let rounded = psrr(&single, 0, &avg, &mut rng).map_err(stage("billboard-replay"))?;
    let mut row = vec![0u8; m];
    for &e in &rounded {
        row[e] = 1;
    }
    let schedule = TollSchedule::Constant(tolls.clone());
    p_br_player(
        inst,
        player_index_in_effective,
        demand,
        &row,
        y_hat,
        &schedule,
        zeta,
    )
}
