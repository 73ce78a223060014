//! Closed-form delay bounds and asymptotes.
//!
//! Notation: `L = |ln alpha|`, `d = |ln(1 - rho)|`, `D` and `V` the first two
//! moments of Alice's post-change LLR under probing, `chi2_0`/`chi2_1` Eve's
//! pre/post-change chi-squared divergences, `C_rho = ln((1 - rho) / rho)`.
//!
//! | quantity | value |
//! |----------|-------|
//! | innocent delay | `N - (1 - (1 - rho)^N) / rho`, `N = ceil(L / d)` |
//! | `ADD_upper(beta)` | `(b_alpha + C_rho) / (beta D + d) + (beta V + 2 d beta D + d^2) / (beta D + d)^2` |
//! | `M_over` | `(V + 2 d D + d^2) / d^2` |
//! | `ADD_relaxed` | `(b_alpha + C_rho) / d + M_over` |
//! | `ECB_upper(beta)` | `beta^2 (chi2_0 / rho + chi2_1 ADD_relaxed)` |
//! | converse (two terms) | `L / d - D sqrt(delta) / (d^1.5 sqrt(chi2_1)) sqrt(L)` |
//! | exact converse | `r_+^2`, `r_+ = (-K + sqrt(K^2 + 4 d (L - d / rho))) / (2 d)`, `K = D sqrt(delta / chi2_1)` |

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ChannelSpec, Prior, Scenario};
use crate::policy::proposed_sensing_rate;

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "beta",
            value: beta,
            reason: "sensing probability must lie in [0, 1]",
        })
    }
}

fn check_relaxation_range(s: &Scenario) -> Result<()> {
    if s.alpha < 1.0 - s.prior.rho {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "alpha",
            value: s.alpha,
            reason: "relaxed bounds need alpha < min(1/2, 1 - rho)",
        })
    }
}

/// `b_alpha + C_rho`, the boundary of the shifted random walk.
fn boundary(s: &Scenario) -> f64 {
    s.b_alpha + s.prior.c_rho
}

/// Non-asymptotic delay bound of the constant-beta Shiryaev rule (Lorden's
/// overshoot inequality). `beta = 0` is allowed.
pub fn add_upper(s: &Scenario, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let (d, dd, v) = (s.prior.d, s.channel.info, s.channel.info_second_moment);
    let drift = beta * dd + d;
    Ok(boundary(s) / drift + (beta * v + 2.0 * d * beta * dd + d * d) / (drift * drift))
}

/// Uniform overshoot constant `(V + 2 d D + d^2) / d^2`.
pub fn m_over(channel: &ChannelSpec, prior: &Prior) -> f64 {
    let d = prior.d;
    (channel.info_second_moment + 2.0 * d * channel.info + d * d) / (d * d)
}

/// `beta`-free relaxation of [`add_upper`], valid for `alpha < min(1/2, 1 - rho)`.
pub fn add_relaxed(s: &Scenario) -> Result<f64> {
    check_relaxation_range(s)?;
    Ok(boundary(s) / s.prior.d + m_over(&s.channel, &s.prior))
}

/// Relaxed ECB bound `beta^2 (chi2_0 / rho + chi2_1 ADD_relaxed)`.
pub fn ecb_upper(s: &Scenario, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let ch = &s.channel;
    Ok(beta * beta * (ch.chi2_pre / s.prior.rho + ch.chi2_post * add_relaxed(s)?))
}

/// `K = D sqrt(delta / chi2_1)`.
pub fn k_const(s: &Scenario) -> f64 {
    s.channel.info * (s.delta / s.channel.chi2_post).sqrt()
}

/// Coefficient of `sqrt(L)` shared by the converse and the achievability
/// expansion: `D sqrt(delta) / (d^1.5 sqrt(chi2_1))`.
pub fn second_order_coefficient(s: &Scenario) -> f64 {
    k_const(s) / s.prior.d.powf(1.5)
}

/// First-order delay `L / d` (the innocent asymptote).
pub fn first_order(s: &Scenario) -> f64 {
    s.abs_ln_alpha / s.prior.d
}

/// Two leading terms of the converse, `L / d - coefficient * sqrt(L)`. The
/// `O(1)` remainder has no computable constant and is not included.
pub fn converse_lower(s: &Scenario) -> f64 {
    first_order(s) - second_order_coefficient(s) * s.abs_ln_alpha.sqrt()
}

/// The non-asymptotic converse before Taylor expansion: the square of the
/// positive root of `d x^2 + K x - (L - d / rho) = 0`.
pub fn exact_quadratic_root_lower(s: &Scenario) -> Result<f64> {
    let d = s.prior.d;
    let c1 = d / s.prior.rho;
    let l = s.abs_ln_alpha;
    if l <= c1 {
        return Err(Error::VacuousBound { abs_ln_alpha: l, c1 });
    }
    let k = k_const(s);
    let root = (-k + (k * k + 4.0 * d * (l - c1)).sqrt()) / (2.0 * d);
    Ok(root * root)
}

/// `1 + x/2 - A_r x^2` with `A_r = (1 - r)^(-3/2) / 8`, a lower bound on
/// `sqrt(1 + x)` for `|x| <= r < 1`.
pub fn sqrt_taylor_lower(x: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter {
            name: "r",
            value: r,
            reason: "radius must lie in ]0, 1[",
        });
    }
    if !(0.0..=r).contains(&x.abs()) {
        return Err(Error::InvalidParameter {
            name: "x",
            value: x,
            reason: "|x| must not exceed r",
        });
    }
    let a_r = 0.125 * (1.0 - r).powf(-1.5);
    Ok(1.0 + 0.5 * x - a_r * x * x)
}

/// Exact delay of the innocent policy stopping at `N_alpha`:
/// `E[(N - Gamma)^+] = N - (1 - (1 - rho)^N) / rho`.
pub fn innocent_add(s: &Scenario) -> f64 {
    let n = s.n_alpha;
    n as f64 - (1.0 - s.prior.tail(n)) / s.prior.rho
}

/// Exact false-alarm probability of the innocent policy, `(1 - rho)^N`.
pub fn innocent_pfa(s: &Scenario) -> f64 {
    s.prior.tail(s.n_alpha)
}

/// Every closed-form quantity at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub abs_ln_alpha: f64,
    pub alpha: f64,
    pub beta_star: f64,
    pub add_upper: f64,
    pub add_relaxed: f64,
    pub m_over: f64,
    pub ecb_upper: f64,
    /// Two-term converse expansion; also the achievability asymptote.
    pub converse_lower_second_order: f64,
    pub first_order: f64,
    pub second_order_achievable: f64,
    pub k_const: f64,
    /// `None` where the exact converse is vacuous.
    pub exact_converse: Option<f64>,
    pub innocent_add: f64,
}

impl BoundsReport {
    pub fn compute(s: &Scenario) -> Result<Self> {
        let beta_star = proposed_sensing_rate(s)?;
        let two_term = converse_lower(s);
        Ok(Self {
            abs_ln_alpha: s.abs_ln_alpha,
            alpha: s.alpha,
            beta_star,
            add_upper: add_upper(s, beta_star)?,
            add_relaxed: add_relaxed(s)?,
            m_over: m_over(&s.channel, &s.prior),
            ecb_upper: ecb_upper(s, beta_star)?,
            converse_lower_second_order: two_term,
            first_order: first_order(s),
            second_order_achievable: two_term,
            k_const: k_const(s),
            exact_converse: exact_quadratic_root_lower(s).ok(),
            innocent_add: innocent_add(s),
        })
    }
}
