//! Instance and result text formats, seeded instance generators, and the
//! experiment runner behind the command-line interface.
//!
//! Both file formats are versioned, line-oriented and human-diffable. Runs
//! are deterministic: one (instance, config, seed) triple always renders
//! byte-identical result text, so wall-clock timing is reported on the
//! human-readable summary only and never enters a result file.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::game_core::{
    Edge, GameError, IntegralFlow, Latency, RoutingInstance, TollSchedule,
};
use crate::mediator::{self, MediatorConfig, MediatorError, MediatorOutput, MediatorReport};
use crate::oracles::{self, OracleError};
use crate::private_opt::{rounding_gap_bound, OptError};

pub const INSTANCE_HEADER: &str = "flowtoll-instance v1";
pub const RESULT_HEADER: &str = "flowtoll-result v1";

/// Environment variable consulted for the default master seed.
pub const SEED_ENV_VAR: &str = "FLOWTOLL_SEED";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: {msg}")]
    Semantic { line: usize, msg: String },
    #[error("instance invariant violated: {0}")]
    Game(#[from] GameError),
    #[error("generator gave up: {0}")]
    Generator(String),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error("result check failed: {0}")]
    CheckFailed(String),
}

impl IoError {
    /// Exit-code contract: 0 success, 2 invariant violation, 3 infeasible
    /// input, 4 resource cap.
    pub fn exit_code(&self) -> i32 {
        match self {
            IoError::CheckFailed(_) => 2,
            IoError::Syntax { .. } | IoError::Semantic { .. } | IoError::Game(_) => 3,
            IoError::Generator(_) => 4,
            IoError::Oracle(e) => match e {
                OracleError::TooManyPaths { .. }
                | OracleError::TooManyProfiles { .. }
                | OracleError::RelaxationNotConverged { .. }
                | OracleError::DynamicsDiverged(_) => 4,
                OracleError::Game(_) => 3,
                _ => 4,
            },
            IoError::Mediator(_) | IoError::Opt(_) => 4,
        }
    }
}

// ---------------------------------------------------------------------------
// Instance documents
// ---------------------------------------------------------------------------

/// A parsed instance file: the validated instance, the optional known-OPT
/// annotation carried by regression corpora, and any boundedness warnings
/// raised at load time.
#[derive(Debug, Clone)]
pub struct InstanceDoc {
    pub instance: RoutingInstance,
    pub opt_annotation: Option<f64>,
    pub warnings: Vec<String>,
}

fn tokens_with_cols(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..idx]));
            }
        } else if start.is_none() {
            start = Some(idx);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn parse_float(line: usize, col: usize, tok: &str, what: &str) -> Result<f64, IoError> {
    tok.parse::<f64>().map_err(|_| IoError::Syntax {
        line,
        col,
        msg: format!("expected {what}, got '{tok}'"),
    })
}

/// Parses the versioned instance format. Unknown directives and malformed
/// fields are rejected with line/column positions; semantic violations
/// (duplicate vertices, unknown endpoints, unroutable demands) name the
/// offending construct.
pub fn parse_instance(text: &str) -> Result<InstanceDoc, IoError> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((ln, raw)) => {
                let trimmed = raw.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                break (ln + 1, trimmed);
            }
            None => {
                return Err(IoError::Syntax {
                    line: 1,
                    col: 1,
                    msg: "empty document".into(),
                })
            }
        }
    };
    if header.1 != INSTANCE_HEADER {
        return Err(IoError::Syntax {
            line: header.0,
            col: 1,
            msg: format!("expected header '{INSTANCE_HEADER}'"),
        });
    }

    let mut vertex_names: Vec<String> = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut latencies: Vec<Latency> = Vec::new();
    let mut demands: Vec<(usize, usize)> = Vec::new();
    let mut demand_lines: Vec<usize> = Vec::new();
    let mut opt_annotation: Option<f64> = None;

    let lookup = |names: &[String], line: usize, col: usize, tok: &str| -> Result<usize, IoError> {
        names
            .iter()
            .position(|v| v == tok)
            .ok_or_else(|| IoError::Semantic {
                line,
                msg: format!("unknown vertex '{tok}' (column {col})"),
            })
    };

    for (idx, raw) in lines {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks = tokens_with_cols(raw);
        let (col0, directive) = toks[0];
        match directive {
            "vertex" => {
                if toks.len() != 2 {
                    return Err(IoError::Syntax {
                        line,
                        col: col0,
                        msg: "vertex takes exactly one id".into(),
                    });
                }
                let name = toks[1].1;
                if vertex_names.iter().any(|v| v == name) {
                    return Err(IoError::Semantic {
                        line,
                        msg: format!("duplicate vertex id '{name}'"),
                    });
                }
                vertex_names.push(name.to_string());
            }
            "edge" => {
                if toks.len() < 4 {
                    return Err(IoError::Syntax {
                        line,
                        col: col0,
                        msg: "edge takes: tail head family coefficients".into(),
                    });
                }
                let tail = lookup(&vertex_names, line, toks[1].0, toks[1].1)?;
                let head = lookup(&vertex_names, line, toks[2].0, toks[2].1)?;
                let family = toks[3].1;
                let latency = match family {
                    "affine" => {
                        if toks.len() != 6 {
                            return Err(IoError::Syntax {
                                line,
                                col: toks[3].0,
                                msg: "affine takes coefficients: a b".into(),
                            });
                        }
                        Latency::Affine {
                            a: parse_float(line, toks[4].0, toks[4].1, "coefficient a")?,
                            b: parse_float(line, toks[5].0, toks[5].1, "coefficient b")?,
                        }
                    }
                    "const" => {
                        if toks.len() != 5 {
                            return Err(IoError::Syntax {
                                line,
                                col: toks[3].0,
                                msg: "const takes one coefficient".into(),
                            });
                        }
                        Latency::constant(parse_float(line, toks[4].0, toks[4].1, "constant")?)
                    }
                    "monomial" => {
                        if toks.len() != 7 {
                            return Err(IoError::Syntax {
                                line,
                                col: toks[3].0,
                                msg: "monomial takes coefficients: a k b".into(),
                            });
                        }
                        let a = parse_float(line, toks[4].0, toks[4].1, "coefficient a")?;
                        let k: u32 = toks[5].1.parse().map_err(|_| IoError::Syntax {
                            line,
                            col: toks[5].0,
                            msg: format!("expected integer exponent, got '{}'", toks[5].1),
                        })?;
                        let b = parse_float(line, toks[6].0, toks[6].1, "coefficient b")?;
                        Latency::Monomial { a, k, b }
                    }
                    other => {
                        return Err(IoError::Syntax {
                            line,
                            col: toks[3].0,
                            msg: format!("unknown latency family '{other}'"),
                        })
                    }
                };
                if let Err(e) = latency.validate() {
                    return Err(IoError::Semantic {
                        line,
                        msg: e.to_string(),
                    });
                }
                edges.push(Edge { tail, head });
                latencies.push(latency);
            }
            "demand" => {
                if toks.len() != 3 {
                    return Err(IoError::Syntax {
                        line,
                        col: col0,
                        msg: "demand takes: source destination".into(),
                    });
                }
                let s = lookup(&vertex_names, line, toks[1].0, toks[1].1)?;
                let t = lookup(&vertex_names, line, toks[2].0, toks[2].1)?;
                demands.push((s, t));
                demand_lines.push(line);
            }
            "opt" => {
                if toks.len() != 2 {
                    return Err(IoError::Syntax {
                        line,
                        col: col0,
                        msg: "opt takes one value".into(),
                    });
                }
                if opt_annotation.is_some() {
                    return Err(IoError::Semantic {
                        line,
                        msg: "duplicate opt annotation".into(),
                    });
                }
                opt_annotation = Some(parse_float(line, toks[1].0, toks[1].1, "opt value")?);
            }
            other => {
                return Err(IoError::Syntax {
                    line,
                    col: col0,
                    msg: format!("unknown directive '{other}'"),
                })
            }
        }
    }

    match RoutingInstance::new(vertex_names, edges, latencies, demands) {
        Ok((instance, warnings)) => Ok(InstanceDoc {
            instance,
            opt_annotation,
            warnings,
        }),
        Err(GameError::Unreachable { player }) => Err(IoError::Semantic {
            line: demand_lines.get(player).copied().unwrap_or(1),
            msg: format!("demand {player} is unroutable"),
        }),
        Err(e) => Err(IoError::Semantic {
            line: 1,
            msg: e.to_string(),
        }),
    }
}

/// Canonical text form; `parse(serialize(parse(text)))` equals
/// `parse(text)`.
pub fn serialize_instance(doc: &InstanceDoc) -> String {
    let inst = &doc.instance;
    let mut out = String::new();
    out.push_str(INSTANCE_HEADER);
    out.push('\n');
    for v in inst.vertex_names() {
        let _ = writeln!(out, "vertex {v}");
    }
    for (e, edge) in inst.edges().iter().enumerate() {
        let _ = writeln!(
            out,
            "edge {} {} {}",
            inst.vertex_name(edge.tail),
            inst.vertex_name(edge.head),
            inst.latency(e)
        );
    }
    for &(s, t) in inst.demands() {
        let _ = writeln!(out, "demand {} {}", inst.vertex_name(s), inst.vertex_name(t));
    }
    if let Some(v) = doc.opt_annotation {
        let _ = writeln!(out, "opt {v}");
    }
    out
}

// ---------------------------------------------------------------------------
// Instance generators
// ---------------------------------------------------------------------------

/// Graph shapes the generator can build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    ParallelLinks,
    Grid,
    LayeredDag,
}

impl std::str::FromStr for GenKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel-links" | "parallel" => Ok(GenKind::ParallelLinks),
            "grid" => Ok(GenKind::Grid),
            "layered-dag" | "layered" => Ok(GenKind::LayeredDag),
            other => Err(format!("unknown instance kind '{other}'")),
        }
    }
}

/// Latency families the generator draws from. Coefficients are sampled so
/// that the boundedness condition `l_e(n) <= n` holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenFamily {
    Affine,
    Quadratic,
    Mixed,
    /// Two-link fixture family: one unit-slope linear edge, constant 2 on
    /// the rest.
    Pigou,
}

impl std::str::FromStr for GenFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "affine" => Ok(GenFamily::Affine),
            "quadratic" => Ok(GenFamily::Quadratic),
            "mixed" => Ok(GenFamily::Mixed),
            "pigou" => Ok(GenFamily::Pigou),
            other => Err(format!("unknown latency family '{other}'")),
        }
    }
}

fn sample_latency(family: GenFamily, edge: usize, n: usize, rng: &mut ChaCha20Rng) -> Latency {
    let nf = n as f64;
    match family {
        GenFamily::Pigou => {
            if edge == 0 {
                Latency::Affine { a: 1.0, b: 0.0 }
            } else {
                Latency::constant(2.0)
            }
        }
        GenFamily::Affine => {
            let b = rng.gen_range(0.0..0.5_f64);
            let a_max = ((nf - b) / nf).max(0.05);
            let a = rng.gen_range(0.05..a_max.max(0.06));
            Latency::Affine { a, b }
        }
        GenFamily::Quadratic => {
            let b = rng.gen_range(0.0..0.5_f64);
            let a_max = ((nf - b) / (nf * nf)).max(0.01);
            let a = rng.gen_range(0.01..a_max.max(0.011));
            Latency::Monomial { a, k: 2, b }
        }
        GenFamily::Mixed => {
            if edge % 2 == 0 {
                sample_latency(GenFamily::Affine, edge, n, rng)
            } else {
                sample_latency(GenFamily::Quadratic, edge, n, rng)
            }
        }
    }
}

/// Deterministic seeded instance generator. All demands are routable (the
/// demand sampler retries up to 100 times, then errors); the boundedness
/// check runs at load and its findings are returned as warnings.
pub fn generate_instance(
    kind: GenKind,
    n: usize,
    m_target: usize,
    family: GenFamily,
    seed: u64,
) -> Result<InstanceDoc, IoError> {
    assert!(n >= 1, "need at least one player");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(0x67656e); // generator substream

    let (vertex_names, edges): (Vec<String>, Vec<Edge>) = match kind {
        GenKind::ParallelLinks => {
            let m = m_target.max(1);
            let names = vec!["s".to_string(), "t".to_string()];
            let edges = (0..m).map(|_| Edge { tail: 0, head: 1 }).collect();
            (names, edges)
        }
        GenKind::Grid => {
            // smallest k-by-k vertex grid with right/down edges reaching the
            // requested edge count
            let mut k = 2usize;
            while 2 * k * (k - 1) < m_target && k < 8 {
                k += 1;
            }
            let mut names = Vec::new();
            for r in 0..k {
                for c in 0..k {
                    names.push(format!("v{r}_{c}"));
                }
            }
            let at = |r: usize, c: usize| r * k + c;
            let mut edges = Vec::new();
            for r in 0..k {
                for c in 0..k {
                    if c + 1 < k {
                        edges.push(Edge {
                            tail: at(r, c),
                            head: at(r, c + 1),
                        });
                    }
                    if r + 1 < k {
                        edges.push(Edge {
                            tail: at(r, c),
                            head: at(r + 1, c),
                        });
                    }
                }
            }
            (names, edges)
        }
        GenKind::LayeredDag => {
            let width = 2usize;
            let layers = (m_target / (width * width)).clamp(1, 6) + 1;
            let mut names = Vec::new();
            for l in 0..=layers {
                for w in 0..width {
                    names.push(format!("l{l}_{w}"));
                }
            }
            let at = |l: usize, w: usize| l * width + w;
            let mut edges = Vec::new();
            for l in 0..layers {
                for a in 0..width {
                    for b in 0..width {
                        edges.push(Edge {
                            tail: at(l, a),
                            head: at(l + 1, b),
                        });
                    }
                }
            }
            (names, edges)
        }
    };

    let latencies: Vec<Latency> = (0..edges.len())
        .map(|e| sample_latency(family, e, n, &mut rng))
        .collect();

    // provisional instance (single trivial demand) to reuse the routability
    // check while sampling real demands
    let nv = vertex_names.len();
    let mut demands = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _attempt in 0..100 {
            let (s, t) = match kind {
                GenKind::ParallelLinks => (0, 1),
                GenKind::Grid => {
                    let k = (nv as f64).sqrt().round() as usize;
                    let r1 = rng.gen_range(0..k - 1);
                    let c1 = rng.gen_range(0..k - 1);
                    let r2 = rng.gen_range(r1 + 1..k);
                    let c2 = rng.gen_range(c1 + 1..k);
                    (r1 * k + c1, r2 * k + c2)
                }
                GenKind::LayeredDag => {
                    let width = 2usize;
                    let layers = nv / width - 1;
                    let s = rng.gen_range(0..width);
                    let t = layers * width + rng.gen_range(0..width);
                    (s, t)
                }
            };
            let probe = RoutingInstance::new(
                vertex_names.clone(),
                edges.clone(),
                latencies.clone(),
                vec![(s, t)],
            );
            if probe.is_ok() {
                found = Some((s, t));
                break;
            }
        }
        match found {
            Some(d) => demands.push(d),
            None => {
                return Err(IoError::Generator(
                    "no routable demand found in 100 attempts".into(),
                ))
            }
        }
    }

    let (instance, warnings) = RoutingInstance::new(vertex_names, edges, latencies, demands)?;
    Ok(InstanceDoc {
        instance,
        opt_annotation: None,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Run configuration and results
// ---------------------------------------------------------------------------

/// Full experiment configuration; every knob is echoed verbatim into the
/// result file.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub mediator: MediatorConfig,
    pub seed: u64,
    pub trials: usize,
    /// Also run the exact oracles and report the realized optimality gap
    /// (instance must be enumerable).
    pub compute_oracle: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mediator: MediatorConfig::default(),
            seed: 0,
            trials: 10_000,
            compute_oracle: false,
        }
    }
}

/// Everything a `solve` run produces, pre-rendering.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: MediatorOutput,
    pub config: RunConfig,
    pub bounds: Vec<(String, f64)>,
    pub oracle: Vec<(String, f64)>,
}

/// Runs the mediator end-to-end on an instance and collects the result
/// document contents.
pub fn run_experiment(doc: &InstanceDoc, config: &RunConfig) -> Result<RunOutcome, IoError> {
    let inst = &doc.instance;
    let reports = MediatorReport::truthful(inst);
    let output = mediator::flowtoll(inst, &reports, &config.mediator, config.seed)?;

    let n_eff = output.diagnostics.effective_n;
    let m = inst.num_edges();
    let gamma = inst.gamma();
    let cfg = &config.mediator;
    let alpha = output.diagnostics.alpha_formula;
    let eta_eq = mediator::eta_eq_bound(m, n_eff, gamma, alpha, cfg.epsilon, cfg.beta);
    let mut bounds = vec![
        ("zeta-hat".to_string(), output.diagnostics.zeta_hat),
        ("alpha-formula".to_string(), alpha),
        (
            "rounding-gap".to_string(),
            rounding_gap_bound(m, gamma, n_eff, cfg.beta),
        ),
        ("eta-eq".to_string(), eta_eq),
        (
            "eta-opt".to_string(),
            mediator::eta_opt_bound(m, n_eff, gamma, alpha),
        ),
        (
            "eta-game".to_string(),
            mediator::eta_game_bound(
                eta_eq,
                m,
                n_eff as f64 * gamma,
                n_eff,
                cfg.epsilon,
                cfg.beta,
                cfg.delta,
            ),
        ),
    ];
    if let Some(pgd) = &output.diagnostics.pgd {
        bounds.push((
            "regret-primal-bound".to_string(),
            (pgd.g_y * pgd.d_y + pgd.g_x * pgd.d_x) / (pgd.rounds as f64).sqrt(),
        ));
    }

    let mut oracle = Vec::new();
    if config.compute_oracle {
        let (_, opt) = oracles::brute_force_opt(inst)?;
        let opt_r = oracles::fractional_opt(inst)?;
        oracle.push(("opt".to_string(), opt));
        oracle.push(("opt-fractional".to_string(), opt_r));
        oracle.push((
            "alpha-realized".to_string(),
            output.diagnostics.cost_before_repair - opt,
        ));
        oracle.push((
            "final-gap".to_string(),
            output.diagnostics.cost_after_repair - opt,
        ));
    }

    Ok(RunOutcome {
        output,
        config: *config,
        bounds,
        oracle,
    })
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

/// Renders the canonical result document. Deterministic for a fixed
/// (instance, config, seed).
pub fn render_result(outcome: &RunOutcome) -> String {
    let mut out = String::new();
    let cfg = &outcome.config;
    let med = &cfg.mediator;
    let diag = &outcome.output.diagnostics;
    out.push_str(RESULT_HEADER);
    out.push('\n');
    let _ = writeln!(out, "config epsilon {}", med.epsilon);
    let _ = writeln!(out, "config delta {}", med.delta);
    let _ = writeln!(out, "config beta {}", med.beta);
    let _ = writeln!(out, "config c-t {}", med.c_t);
    let _ = writeln!(out, "config c-alpha {}", med.c_alpha);
    let _ = writeln!(out, "config flip-dual-sign {}", fmt_bool(med.flip_dual_sign));
    let _ = writeln!(out, "config noise-free {}", fmt_bool(med.noise_free));
    let _ = writeln!(out, "config seed {}", cfg.seed);
    let _ = writeln!(out, "config trials {}", cfg.trials);
    if diag.noise_free {
        let _ = writeln!(
            out,
            "warning this run is NOT private: noise-free diagnostic mode"
        );
    }
    let _ = writeln!(out, "players {}", outcome.output.suggestions.len());
    let _ = writeln!(out, "effective-n {}", diag.effective_n);
    for (i, sug) in outcome.output.suggestions.iter().enumerate() {
        match sug {
            None => {
                let _ = writeln!(out, "suggestion {i} optout");
            }
            Some(path) if path.is_empty() => {
                let _ = writeln!(out, "suggestion {i} empty");
            }
            Some(path) => {
                let edges: Vec<String> = path.iter().map(|e| format!("e{e}")).collect();
                let _ = writeln!(out, "suggestion {i} path {}", edges.join(" "));
            }
        }
    }
    for (e, &t) in outcome.output.tolls.values().iter().enumerate() {
        let _ = writeln!(out, "toll {e} {t}");
    }
    for (e, &y) in outcome.output.noisy_congestion.values().iter().enumerate() {
        let _ = writeln!(out, "congestion {e} {y}");
    }
    let _ = writeln!(out, "diag zeta-hat {}", diag.zeta_hat);
    let _ = writeln!(out, "diag alpha-formula {}", diag.alpha_formula);
    let _ = writeln!(
        out,
        "diag unsatisfied-before-repair {}",
        diag.unsatisfied_before_repair
    );
    let _ = writeln!(out, "diag rerouted {}", diag.rerouted);
    let _ = writeln!(out, "diag cost-before-repair {}", diag.cost_before_repair);
    let _ = writeln!(out, "diag cost-after-repair {}", diag.cost_after_repair);
    if let Some(pgd) = &diag.pgd {
        let _ = writeln!(out, "diag rounds {}", pgd.rounds);
        let _ = writeln!(out, "diag t-clamped {}", fmt_bool(pgd.t_clamped));
        let _ = writeln!(out, "diag eps-prime {}", pgd.eps_prime);
        let _ = writeln!(out, "diag eta-x {}", pgd.eta_x);
        let _ = writeln!(out, "diag eta-y {}", pgd.eta_y);
        let _ = writeln!(out, "diag g-x {}", pgd.g_x);
        let _ = writeln!(out, "diag g-y {}", pgd.g_y);
        let _ = writeln!(out, "diag d-x {}", pgd.d_x);
        let _ = writeln!(out, "diag d-y {}", pgd.d_y);
        let _ = writeln!(out, "diag primal-regret {}", pgd.primal_regret);
        let _ = writeln!(out, "diag dual-regret {}", pgd.dual_regret);
        let _ = writeln!(out, "diag regret-x-block {}", pgd.regret_x_block);
        let _ = writeln!(out, "diag regret-y-block {}", pgd.regret_y_block);
        let _ = writeln!(out, "diag lagrangian-at-avg {}", pgd.lagrangian_at_avg);
        let _ = writeln!(out, "diag minimax-gap {}", pgd.minimax_gap);
        let _ = writeln!(out, "diag avg-violation-inf {}", pgd.avg_violation_inf);
        let _ = writeln!(out, "diag exp-mech-bound {}", pgd.exp_mech_bound);
        for r in &pgd.per_round {
            let sign = if r.plus { "+" } else { "-" };
            let _ = writeln!(
                out,
                "round {} {sign} e{} violation {} gap {} lagrangian {}",
                r.round, r.edge, r.selected_violation, r.exp_mech_gap, r.lagrangian
            );
        }
    }
    for c in diag.budget.charges() {
        let _ = writeln!(out, "ledger {} {} {} {}", c.mechanism, c.epsilon, c.delta, c.kind);
    }
    let _ = writeln!(
        out,
        "ledger-intermediate tolls-dp {} {}",
        diag.tolls_dp.0, diag.tolls_dp.1
    );
    let _ = writeln!(
        out,
        "ledger-total jdp {} {}",
        diag.jdp_total.0, diag.jdp_total.1
    );
    for (name, v) in &outcome.bounds {
        let _ = writeln!(out, "bound {name} {v}");
    }
    for (name, v) in &outcome.oracle {
        let _ = writeln!(out, "oracle {name} {v}");
    }
    out
}

/// Short human-readable table for stdout; the only place wall-clock timing
/// appears.
pub fn render_summary(outcome: &RunOutcome, wall_ms: u128) -> String {
    let diag = &outcome.output.diagnostics;
    let mut out = String::new();
    let _ = writeln!(out, "flowtoll run summary");
    let _ = writeln!(out, "  players (opted in) : {}", diag.effective_n);
    if diag.noise_free {
        let _ = writeln!(out, "  privacy            : NONE (noise-free diagnostic mode)");
    } else {
        let _ = writeln!(
            out,
            "  privacy            : ({}, {})-JDP",
            diag.jdp_total.0, diag.jdp_total.1
        );
    }
    let _ = writeln!(out, "  cost before repair : {:.6}", diag.cost_before_repair);
    let _ = writeln!(out, "  cost after repair  : {:.6}", diag.cost_after_repair);
    let _ = writeln!(out, "  zeta-hat           : {:.6}", diag.zeta_hat);
    let _ = writeln!(
        out,
        "  unsatisfied/reroute: {}/{}",
        diag.unsatisfied_before_repair, diag.rerouted
    );
    if let Some(pgd) = &diag.pgd {
        let _ = writeln!(out, "  solver rounds      : {}", pgd.rounds);
        if pgd.t_clamped {
            let _ = writeln!(
                out,
                "  warning            : iteration formula gave 0 rounds, clamped to 1"
            );
        }
        let _ = writeln!(
            out,
            "  realized regrets   : primal {:.6}, dual {:.6}",
            pgd.primal_regret, pgd.dual_regret
        );
    }
    for (name, v) in &outcome.oracle {
        let _ = writeln!(out, "  oracle {name:<12}: {v:.6}");
    }
    let _ = writeln!(out, "  wall-clock         : {wall_ms} ms");
    out
}

// ---------------------------------------------------------------------------
// Result parsing and the invariant check
// ---------------------------------------------------------------------------

/// Structured view of a parsed result file, for re-verification.
#[derive(Debug, Clone, Default)]
pub struct ParsedResult {
    pub epsilon: f64,
    pub delta: f64,
    pub noise_free: bool,
    pub players: usize,
    pub effective_n: usize,
    pub suggestions: Vec<Option<Vec<usize>>>,
    pub tolls: Vec<f64>,
    pub congestion: Vec<f64>,
    pub ledger: Vec<(String, f64, f64, String)>,
    pub tolls_dp: Option<(f64, f64)>,
    pub jdp_total: Option<(f64, f64)>,
}

pub fn parse_result(text: &str) -> Result<ParsedResult, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULT_HEADER => {}
        Some((ln, _)) => {
            return Err(IoError::Syntax {
                line: ln + 1,
                col: 1,
                msg: format!("expected header '{RESULT_HEADER}'"),
            })
        }
        None => {
            return Err(IoError::Syntax {
                line: 1,
                col: 1,
                msg: "empty document".into(),
            })
        }
    }
    let mut res = ParsedResult::default();
    let mut sugg: Vec<(usize, Option<Vec<usize>>)> = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let toks = tokens_with_cols(raw);
        if toks.is_empty() {
            continue;
        }
        let bad = |msg: &str| IoError::Syntax {
            line,
            col: toks[0].0,
            msg: msg.to_string(),
        };
        match toks[0].1 {
            "config" if toks.len() == 3 => match toks[1].1 {
                "epsilon" => res.epsilon = parse_float(line, toks[2].0, toks[2].1, "epsilon")?,
                "delta" => res.delta = parse_float(line, toks[2].0, toks[2].1, "delta")?,
                "noise-free" => res.noise_free = toks[2].1 == "true",
                _ => {}
            },
            "players" if toks.len() == 2 => {
                res.players = toks[1].1.parse().map_err(|_| bad("bad player count"))?;
            }
            "effective-n" if toks.len() == 2 => {
                res.effective_n = toks[1].1.parse().map_err(|_| bad("bad effective-n"))?;
            }
            "suggestion" => {
                let i: usize = toks[1].1.parse().map_err(|_| bad("bad player index"))?;
                let entry = match toks[2].1 {
                    "optout" => None,
                    "empty" => Some(Vec::new()),
                    "path" => {
                        let mut path = Vec::new();
                        for (c, tok) in &toks[3..] {
                            let e: usize = tok
                                .strip_prefix('e')
                                .and_then(|s| s.parse().ok())
                                .ok_or(IoError::Syntax {
                                    line,
                                    col: *c,
                                    msg: format!("bad edge token '{tok}'"),
                                })?;
                            path.push(e);
                        }
                        Some(path)
                    }
                    _ => return Err(bad("suggestion takes: optout | empty | path e...")),
                };
                sugg.push((i, entry));
            }
            "toll" if toks.len() == 3 => {
                res.tolls
                    .push(parse_float(line, toks[2].0, toks[2].1, "toll")?);
            }
            "congestion" if toks.len() == 3 => {
                res.congestion
                    .push(parse_float(line, toks[2].0, toks[2].1, "congestion")?);
            }
            "ledger" if toks.len() == 5 => {
                res.ledger.push((
                    toks[1].1.to_string(),
                    parse_float(line, toks[2].0, toks[2].1, "epsilon charge")?,
                    parse_float(line, toks[3].0, toks[3].1, "delta charge")?,
                    toks[4].1.to_string(),
                ));
            }
            "ledger-intermediate" if toks.len() == 4 => {
                res.tolls_dp = Some((
                    parse_float(line, toks[2].0, toks[2].1, "epsilon")?,
                    parse_float(line, toks[3].0, toks[3].1, "delta")?,
                ));
            }
            "ledger-total" if toks.len() == 4 => {
                res.jdp_total = Some((
                    parse_float(line, toks[2].0, toks[2].1, "epsilon")?,
                    parse_float(line, toks[3].0, toks[3].1, "delta")?,
                ));
            }
            // remaining directives are diagnostics; they round-trip as text
            "diag" | "round" | "bound" | "oracle" | "warning" | "config" => {}
            other => {
                return Err(IoError::Syntax {
                    line,
                    col: toks[0].0,
                    msg: format!("unknown directive '{other}'"),
                })
            }
        }
    }
    sugg.sort_by_key(|(i, _)| *i);
    res.suggestions = sugg.into_iter().map(|(_, p)| p).collect();
    Ok(res)
}

/// Re-verifies a result file against its instance: suggestion feasibility,
/// toll bounds, congestion bounds, and the privacy-ledger arithmetic.
/// Returns the list of passed checks; the first violated invariant aborts
/// with `CheckFailed`.
pub fn check_result(doc: &InstanceDoc, result: &ParsedResult) -> Result<Vec<String>, IoError> {
    let inst = &doc.instance;
    let mut passed = Vec::new();
    let fail = |msg: String| IoError::CheckFailed(msg);

    if result.players != inst.num_players() {
        return Err(fail(format!(
            "player count {} does not match instance ({})",
            result.players,
            inst.num_players()
        )));
    }

    // suggestion feasibility for every opted-in player
    let opted: Vec<usize> = (0..result.suggestions.len())
        .filter(|&i| result.suggestions[i].is_some())
        .collect();
    if opted.len() != result.effective_n {
        return Err(fail(format!(
            "effective-n {} does not match {} opted-in suggestions",
            result.effective_n,
            opted.len()
        )));
    }
    if !opted.is_empty() {
        let demands: Vec<(usize, usize)> = opted.iter().map(|&i| inst.demand(i)).collect();
        let eff = inst.with_demands(demands)?;
        let paths: Vec<Vec<usize>> = opted
            .iter()
            .map(|&i| result.suggestions[i].clone().unwrap())
            .collect();
        IntegralFlow::from_paths(&eff, &paths)
            .map_err(|e| fail(format!("suggestion infeasible: {e}")))?;
        passed.push("suggestions feasible".to_string());

        // toll cap uses the effective player count
        let cap = eff.toll_cap() + 1e-9;
        for (e, &t) in result.tolls.iter().enumerate() {
            if !(-1e-9..=cap).contains(&t) {
                return Err(fail(format!(
                    "toll {t} on edge {e} outside [0, {}]",
                    eff.toll_cap()
                )));
            }
        }
        passed.push("tolls within [0, n*gamma]".to_string());

        let n_eff = eff.num_players() as f64;
        for (e, &y) in result.congestion.iter().enumerate() {
            if !(-1e-9..=n_eff + 1e-9).contains(&y) {
                return Err(fail(format!("congestion {y} on edge {e} outside [0, {n_eff}]")));
            }
        }
        passed.push("congestion within [0, n]".to_string());

        // ledger arithmetic per the budget split
        let eps = result.epsilon;
        let delta = result.delta;
        let find = |name: &str| result.ledger.iter().find(|(n, ..)| n == name);
        let pgd = find("p-gd").ok_or_else(|| fail("ledger missing p-gd charge".into()))?;
        let pcon = find("p-con").ok_or_else(|| fail("ledger missing p-con charge".into()))?;
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        if !close(pgd.1, eps / 4.0) || !close(pgd.2, delta / 2.0) || pgd.3 != "jdp" {
            return Err(fail(format!(
                "p-gd charge ({}, {}, {}) does not match (eps/4, delta/2, jdp)",
                pgd.1, pgd.2, pgd.3
            )));
        }
        if !close(pcon.1, eps / 4.0) || !close(pcon.2, 0.0) || pcon.3 != "dp" {
            return Err(fail(format!(
                "p-con charge ({}, {}, {}) does not match (eps/4, 0, dp)",
                pcon.1, pcon.2, pcon.3
            )));
        }
        let expect_mid = crate::dp_mech::dp_jdp_composition_bound(eps / 4.0, delta / 2.0, eps / 4.0);
        let mid = result
            .tolls_dp
            .ok_or_else(|| fail("missing ledger-intermediate".into()))?;
        if !close(mid.0, expect_mid.0) || !close(mid.1, expect_mid.1) {
            return Err(fail(format!(
                "tolls intermediate ({}, {}) does not match (3 eps/4, delta/2)",
                mid.0, mid.1
            )));
        }
        let total = result
            .jdp_total
            .ok_or_else(|| fail("missing ledger-total".into()))?;
        if !close(total.0, eps / 4.0 + expect_mid.0) || !close(total.1, delta / 2.0 + expect_mid.1)
        {
            return Err(fail(format!(
                "jdp total ({}, {}) does not match (eps, delta)",
                total.0, total.1
            )));
        }
        passed.push("privacy ledger totals match the budget split".to_string());
    } else {
        if result.ledger.is_empty() {
            passed.push("empty run consumed no budget".to_string());
        } else {
            return Err(fail("opt-out run must consume no budget".into()));
        }
    }
    Ok(passed)
}

// ---------------------------------------------------------------------------
// Oracle and deviation reports (text tables)
// ---------------------------------------------------------------------------

/// Runs the exact oracles on an instance and renders a table.
pub fn oracle_report(doc: &InstanceDoc) -> Result<String, IoError> {
    let inst = &doc.instance;
    let (opt_flow, opt) = oracles::brute_force_opt(inst)?;
    let opt_r = oracles::fractional_opt(inst)?;
    let (nash_flow, moves) =
        oracles::best_response_dynamics(inst, &opt_flow, &TollSchedule::MarginalCost, 0.0)?;
    let nash_check = oracles::verify_nash(inst, &nash_flow, &TollSchedule::MarginalCost, 1e-9)?;
    let untolled = oracles::verify_nash(inst, &opt_flow, &TollSchedule::none(inst.num_edges()), 0.0)?;
    let mut out = String::new();
    let _ = writeln!(out, "oracle report");
    let _ = writeln!(out, "  opt (integral)      : {opt}");
    let _ = writeln!(out, "  opt (fractional)    : {opt_r}");
    if let Some(known) = doc.opt_annotation {
        let _ = writeln!(out, "  opt (annotated)     : {known}");
    }
    let _ = writeln!(
        out,
        "  optimal flow Nash under marginal tolls: {} (worst gain {:.3e})",
        nash_check.is_nash, nash_check.worst_gain
    );
    let _ = writeln!(out, "  best-response moves from opt: {moves}");
    let _ = writeln!(
        out,
        "  optimal flow Nash untolled: {} (worst gain {:.3e}, player {})",
        untolled.is_nash, untolled.worst_gain, untolled.worst_player
    );
    for i in 0..inst.num_players() {
        let path = opt_flow.path_edges(inst, i);
        let edges: Vec<String> = path.iter().map(|e| format!("e{e}")).collect();
        let _ = writeln!(out, "  opt path player {i}: [{}]", edges.join(" "));
    }
    Ok(out)
}

/// Runs the canonical deviation menu for one player and renders the
/// per-deviation gain table.
pub fn deviation_report(
    doc: &InstanceDoc,
    player: usize,
    config: &RunConfig,
) -> Result<String, IoError> {
    let inst = &doc.instance;
    if player >= inst.num_players() {
        return Err(IoError::Game(GameError::PlayerIndex {
            index: player,
            n: inst.num_players(),
        }));
    }
    let menu = oracles::canonical_menu(inst, player)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "deviation gains for player {player} ({} trials, paired seeds, positive = deviation helps)",
        config.trials
    );
    for profile in &menu {
        let est = oracles::measure_deviation_gain(
            inst,
            &config.mediator,
            profile,
            config.trials,
            config.seed,
        )?;
        let _ = writeln!(
            out,
            "  {:<40} gain {:>12.6} +- {:>10.6}   (good {:.6}, deviation {:.6})",
            est.label, est.gain, est.ci_half_width, est.good_mean, est.deviation_mean
        );
    }
    Ok(out)
}
