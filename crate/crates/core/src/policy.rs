//! Causal policies: the innocent baseline, the constant-sensing-probability
//! Shiryaev rule and the budgeted sensing rate.
//!
//! Posterior odds are kept in the log domain. After `n` observations the
//! statistic is `Lambda_n = P(Gamma <= n | X^n, Y^n) / P(Gamma > n | X^n, Y^n)`
//! and obeys
//!
//! ```text
//! Lambda_{n+1} = exp(L_{n+1}) / (1 - rho) * Lambda_n + rho / (1 - rho),   Lambda_0 = 0,
//! ```
//!
//! with `L = x * l(y)` the modulated LLR. The stopping time `tau` is the
//! number of observations after which `ln Lambda` first reaches
//! `b_alpha = ln((1 - alpha) / alpha)`.

use std::sync::Arc;

use rand::Rng;

use crate::bounds;
use crate::dp::BeliefGridPolicy;
use crate::error::{Error, Result};
use crate::model::{ChannelSpec, Prior, Scenario};

/// A policy `(tau, beta)`.
#[derive(Debug, Clone)]
pub enum PolicyKind {
    /// Never probe; stop deterministically after `stop_at` observations.
    Innocent { stop_at: u64 },
    /// Probe with constant probability `beta` until the Shiryaev rule fires.
    ConstantBetaShiryaev { beta: f64 },
    /// Probe at the rate tabulated on a belief grid, stop with the Shiryaev rule.
    Dp(Arc<BeliefGridPolicy>),
}

impl PolicyKind {
    pub fn innocent(stop_at: u64) -> Result<Self> {
        if stop_at == 0 {
            return Err(Error::InvalidParameter {
                name: "stop_at",
                value: 0.0,
                reason: "the innocent policy needs at least one observation",
            });
        }
        Ok(Self::Innocent { stop_at })
    }

    /// The innocent policy stopping at `N_alpha`.
    pub fn innocent_for(scenario: &Scenario) -> Self {
        Self::Innocent { stop_at: scenario.n_alpha }
    }

    /// `beta = 0` is accepted: it is what the budgeted rate returns for a
    /// zero covertness budget, and the rule then never probes.
    pub fn constant_beta(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter {
                name: "beta",
                value: beta,
                reason: "sensing probability must lie in [0, 1]",
            });
        }
        Ok(Self::ConstantBetaShiryaev { beta })
    }

    /// Constant-beta Shiryaev rule at the budgeted rate `beta*_alpha`.
    pub fn proposed(scenario: &Scenario) -> Result<Self> {
        Self::constant_beta(proposed_sensing_rate(scenario)?)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Innocent { .. } => "innocent",
            Self::ConstantBetaShiryaev { .. } => "constant_beta",
            Self::Dp(_) => "dp",
        }
    }

    /// Sensing probability used for the next action given the current state.
    /// Zero once the state is stopped.
    pub fn sensing_probability(&self, state: &ShiryaevState) -> f64 {
        if state.stopped {
            return 0.0;
        }
        match self {
            Self::Innocent { .. } => 0.0,
            Self::ConstantBetaShiryaev { beta } => *beta,
            Self::Dp(grid) => grid.beta_at_log_odds(state.log_odds),
        }
    }

    /// Stopping decision on the information gathered so far. Never true
    /// before the first observation.
    pub fn should_stop(&self, state: &ShiryaevState, scenario: &Scenario) -> bool {
        match self {
            Self::Innocent { stop_at } => state.t >= *stop_at,
            Self::ConstantBetaShiryaev { .. } | Self::Dp(_) => {
                shiryaev_should_stop(state, scenario.b_alpha)
            }
        }
    }
}

/// Draws the next action: `Ber(beta)` while running, `0` once stopped.
pub fn act<R: Rng + ?Sized>(policy: &PolicyKind, state: &ShiryaevState, rng: &mut R) -> usize {
    let beta = policy.sensing_probability(state);
    if beta <= 0.0 {
        0
    } else if beta >= 1.0 {
        1
    } else {
        usize::from(rng.gen_bool(beta))
    }
}

/// Shiryaev posterior-odds state after `t` observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiryaevState {
    /// `ln Lambda_t`; `None` before any observation, where `Lambda_0 = 0`.
    pub log_odds: Option<f64>,
    pub t: u64,
    pub stopped: bool,
}

impl Default for ShiryaevState {
    fn default() -> Self {
        Self::new()
    }
}

impl ShiryaevState {
    pub fn new() -> Self {
        Self { log_odds: None, t: 0, stopped: false }
    }

    /// `ln Lambda_t`, `-inf` for the empty state.
    pub fn log_odds_or_neg_inf(&self) -> f64 {
        self.log_odds.unwrap_or(f64::NEG_INFINITY)
    }

    /// Posterior probability of change `p_t = Lambda_t / (1 + Lambda_t)`.
    pub fn posterior(&self) -> f64 {
        match self.log_odds {
            None => 0.0,
            Some(l) if l > 0.0 => 1.0 / (1.0 + (-l).exp()),
            Some(l) => {
                let e = l.exp();
                e / (1.0 + e)
            }
        }
    }

    /// `1 - p_t`, accurate when `p_t` is close to one.
    pub fn posterior_complement(&self) -> f64 {
        match self.log_odds {
            None => 1.0,
            Some(l) if l > 0.0 => {
                let e = (-l).exp();
                e / (1.0 + e)
            }
            Some(l) => 1.0 / (1.0 + l.exp()),
        }
    }

    /// Marks the state as stopped; later updates leave it unchanged.
    pub fn stop(&mut self) {
        self.stopped = true;
    }
}

/// `ln(e^a + e^b)`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// One step of the odds recursion with log-likelihood ratio `llr`.
pub fn log_odds_step(log_odds: Option<f64>, llr: f64, prior: &Prior) -> f64 {
    let drift = match log_odds {
        None => f64::NEG_INFINITY,
        Some(l) => l + llr + prior.d,
    };
    log_add_exp(drift, prior.log_hazard_odds())
}

/// `ln Lambda_n` from the cumulative form
/// `Lambda_n = T_n^-1 sum_{m=1}^n pi_m exp(L_{m+1} + .. + L_n)`, where
/// `llrs` holds `L_1, .., L_n`. Quadratic cost; intended for cross-checks.
/// `None` for `n = 0`.
pub fn cumulative_log_odds(prior: &Prior, llrs: &[f64]) -> Option<f64> {
    let n = llrs.len();
    let mut acc = f64::NEG_INFINITY;
    let mut suffix = 0.0;
    for m in (1..=n).rev() {
        let log_pi = prior.rho.ln() - prior.d * (m - 1) as f64;
        acc = log_add_exp(acc, log_pi + suffix);
        suffix += llrs[m - 1];
    }
    (n > 0).then_some(acc + prior.d * n as f64)
}

/// Feeds observation `y` taken under action `x` into the statistic.
/// A stopped state is returned unchanged.
pub fn shiryaev_update(
    state: ShiryaevState,
    x: usize,
    y: usize,
    prior: &Prior,
    channel: &ChannelSpec,
) -> Result<ShiryaevState> {
    if x > 1 {
        return Err(Error::InvalidSymbol { index: x, size: 2 });
    }
    let l = channel.llr(y)?;
    if state.stopped {
        return Ok(state);
    }
    let llr = if x == 1 { l } else { 0.0 };
    Ok(ShiryaevState {
        log_odds: Some(log_odds_step(state.log_odds, llr, prior)),
        t: state.t + 1,
        stopped: false,
    })
}

/// `true` iff `ln Lambda_t >= b_alpha` (boundary inclusive).
pub fn shiryaev_should_stop(state: &ShiryaevState, b_alpha: f64) -> bool {
    state.log_odds.is_some_and(|l| l >= b_alpha)
}

/// The budgeted sensing rate `beta*_alpha = min(1, beta~_alpha)`, where
/// `beta~_alpha` makes the relaxed ECB upper bound equal to `delta`.
pub fn proposed_sensing_rate(scenario: &Scenario) -> Result<f64> {
    let relaxed = bounds::add_relaxed(scenario)?;
    let ch = &scenario.channel;
    let denom = ch.chi2_pre / scenario.prior.rho + ch.chi2_post * relaxed;
    Ok((scenario.delta / denom).sqrt().min(1.0))
}
