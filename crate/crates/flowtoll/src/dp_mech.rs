//! Differential-privacy primitives: the Laplace mechanism, the exponential
//! mechanism, and composition accounting.
//!
//! Every randomized routine takes an explicitly seeded generator, so callers
//! own their streams and identical seeds reproduce identical draws. A
//! privacy parameter of `f64::INFINITY` is the noise-free diagnostic
//! sentinel: the Laplace scale degenerates to zero and the exponential
//! mechanism returns the exact argmax. Runs using it are not private and are
//! labeled as such wherever budgets are reported.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("laplace scale must be non-negative, got {0}")]
    NegativeScale(f64),
    #[error("outcome set is empty")]
    EmptyOutcomes,
    #[error("all quality scores are -inf")]
    DegenerateScores,
    #[error("delta must lie in (0,1), got {0}")]
    BadDelta(f64),
}

/// One draw from the zero-mean Laplace distribution with the given scale,
/// via the inverse CDF of a single 64-bit uniform. Scale zero is the
/// deterministic noise-free case.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64, DpError> {
    if scale < 0.0 {
        return Err(DpError::NegativeScale(scale));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    // u in (0,1); the open interval keeps ln away from 0 and -inf
    let u = loop {
        let v: f64 = rng.gen();
        if v > 0.0 && v < 1.0 {
            break v;
        }
    };
    Ok(if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    })
}

/// A finite, ordered outcome set with a quality score per outcome and the
/// per-player sensitivity of the score. The caller supplies the sensitivity;
/// for the constraint-violation score used by the private solver it is 1.
#[derive(Debug, Clone)]
pub struct QualityScore {
    scores: Vec<f64>,
    sensitivity: f64,
}

impl QualityScore {
    pub fn new(scores: Vec<f64>, sensitivity: f64) -> Self {
        assert!(sensitivity > 0.0, "sensitivity must be positive");
        QualityScore {
            scores,
            sensitivity,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// First index attaining the maximum score (the outcome-order
    /// tie-break).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            if s.is_finite() || s == f64::INFINITY {
                match best {
                    Some((_, b)) if s <= b => {}
                    _ => best = Some((i, s)),
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Samples an outcome index with probability proportional to
/// `exp(eps * q(o) / (2 * sensitivity))`. Scores are shifted by their
/// maximum before exponentiating, so the weights never overflow. With the
/// infinite-epsilon sentinel this is the exact argmax with ties broken by
/// outcome order.
pub fn exponential_mechanism<R: Rng + ?Sized>(
    qs: &QualityScore,
    eps: f64,
    rng: &mut R,
) -> Result<usize, DpError> {
    assert!(eps > 0.0, "epsilon must be positive (or the infinite sentinel)");
    if qs.is_empty() {
        return Err(DpError::EmptyOutcomes);
    }
    if eps.is_infinite() {
        return qs.argmax().ok_or(DpError::DegenerateScores);
    }
    let max = qs
        .scores
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(DpError::DegenerateScores);
    }
    let gain = eps / (2.0 * qs.sensitivity);
    let weights: Vec<f64> = qs
        .scores
        .iter()
        .map(|&s| ((s - max) * gain).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut draw: f64 = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        draw -= w;
        if draw <= 0.0 {
            return Ok(i);
        }
    }
    Ok(weights.len() - 1)
}

/// Additive suboptimality guarantee of the exponential mechanism: with
/// probability `1 - beta` the selected outcome scores within
/// `(2 * sensitivity / eps) * ln(|O| / beta)` of the best.
pub fn utility_bound_exp_mech(sensitivity: f64, num_outcomes: usize, eps: f64, beta: f64) -> f64 {
    if eps.is_infinite() {
        return 0.0;
    }
    (2.0 * sensitivity / eps) * ((num_outcomes as f64) / beta).ln()
}

/// Per-use epsilon under T-fold adaptive composition:
/// `eps' = eps_total / sqrt(8 T ln(1/delta))`.
pub fn advanced_composition_epsilon(
    eps_total: f64,
    delta: f64,
    rounds: usize,
) -> Result<f64, DpError> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(DpError::BadDelta(delta));
    }
    assert!(rounds >= 1, "need at least one round");
    Ok(eps_total / (8.0 * rounds as f64 * (1.0 / delta).ln()).sqrt())
}

/// Composing a DP mechanism after a JDP one: running an
/// `eps_d`-differentially-private map on the output of an
/// `(eps_j, delta_j)`-jointly-differentially-private mechanism is
/// `(2*eps_d + eps_j, delta_j)`-differentially private.
pub fn dp_jdp_composition_bound(eps_j: f64, delta_j: f64, eps_d: f64) -> (f64, f64) {
    (2.0 * eps_d + eps_j, delta_j)
}

// ---------------------------------------------------------------------------
// Budget ledger
// ---------------------------------------------------------------------------

/// Which flavor of privacy a charge claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivacyKind {
    Dp,
    Jdp,
}

impl std::fmt::Display for PrivacyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrivacyKind::Dp => write!(f, "dp"),
            PrivacyKind::Jdp => write!(f, "jdp"),
        }
    }
}

/// One append-only ledger entry.
#[derive(Debug, Clone)]
pub struct Charge {
    pub mechanism: String,
    pub epsilon: f64,
    pub delta: f64,
    pub kind: PrivacyKind,
}

/// Privacy-budget accounting threaded through the pipeline. Charges are
/// append-only; totals are derived on demand. `noise_free` marks the ledger
/// of a diagnostic run whose charges are nominal only (the run is NOT
/// private).
#[derive(Debug, Clone)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub beta: f64,
    pub noise_free: bool,
    charges: Vec<Charge>,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, beta: f64, noise_free: bool) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        assert!((0.0..1.0).contains(&delta), "delta must lie in [0,1)");
        assert!(beta > 0.0 && beta < 1.0, "beta must lie in (0,1)");
        PrivacyBudget {
            epsilon,
            delta,
            beta,
            noise_free,
            charges: Vec::new(),
        }
    }

    pub fn charge(&mut self, mechanism: &str, epsilon: f64, delta: f64, kind: PrivacyKind) {
        self.charges.push(Charge {
            mechanism: mechanism.to_string(),
            epsilon,
            delta,
            kind,
        });
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    /// Basic composition: charges add up coordinate-wise.
    pub fn total_basic(&self) -> (f64, f64) {
        let eps = self.charges.iter().map(|c| c.epsilon).sum();
        let delta = self.charges.iter().map(|c| c.delta).sum();
        (eps, delta)
    }

    /// Advanced composition of `rounds` identical per-use charges
    /// `eps_each`, with slack `delta`: total epsilon
    /// `eps_each * sqrt(8 * rounds * ln(1/delta))`, total delta
    /// `rounds * delta_each + delta`.
    pub fn advanced_total(
        eps_each: f64,
        delta_each: f64,
        rounds: usize,
        delta_slack: f64,
    ) -> (f64, f64) {
        let eps = eps_each * (8.0 * rounds as f64 * (1.0 / delta_slack).ln()).sqrt();
        (eps, rounds as f64 * delta_each + delta_slack)
    }
}
