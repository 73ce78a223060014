//! Belief-grid dynamic programming baseline.
//!
//! The belief is `p_n = P(Gamma <= n | data)`, the probability that the next
//! observation is post-change. Continuing at belief `p` with sensing rate
//! `beta` costs
//!
//! ```text
//! p + lambda * beta^2 * (chi2_0 (1 - p) + chi2_1 p)
//! ```
//!
//! and moves the belief to
//!
//! ```text
//! p' = (p P^x_1(y) + (1 - p) rho P^x_0(y)) / (p P^x_1(y) + (1 - p) P^x_0(y)).
//! ```
//!
//! Stopping is only allowed, and then forced, once `p >= 1 - alpha`: the
//! stop cost is infinite below that level and zero above. This keeps the
//! Shiryaev guarantee `PFA <= alpha` for every extracted policy.
//!
//! The grid holds `p = 0`, points uniform in log-odds on
//! `[ln(rho / (1 - rho)), b_alpha]`, and `p = 1`. After the first
//! observation the log-odds never drops below `ln(rho / (1 - rho))`.
//! Values between grid points are interpolated linearly in log-odds.
//! The covertness multiplier `lambda` is tuned by bisection so that the
//! Monte-Carlo ECB of the extracted policy meets the budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::policy::{log_odds_step, proposed_sensing_rate, PolicyKind};
use crate::simulate::{estimate_with, McOptions, McSummary};

/// A solved belief-grid policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefGridPolicy {
    pub abs_ln_alpha: f64,
    pub rho: f64,
    pub delta: f64,
    /// Lowest and highest finite log-odds grid points.
    pub log_odds_min: f64,
    pub log_odds_max: f64,
    /// Belief at each grid point, sorted, starting at 0 and ending at 1.
    pub belief: Vec<f64>,
    pub stop: Vec<bool>,
    pub beta: Vec<f64>,
    pub value: Vec<f64>,
    pub lambda: f64,
    pub action_set: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Monte-Carlo evaluation used to accept `lambda`, if any.
    #[serde(default)]
    pub evaluation: Option<DpEvaluation>,
}

/// Monte-Carlo figures recorded with a solved policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpEvaluation {
    pub n_runs: u64,
    pub seed: u64,
    pub add_mean: f64,
    pub ecb_mean: f64,
    pub ecb_stderr: f64,
    pub pfa_mean: f64,
}

impl BeliefGridPolicy {
    /// Number of finite log-odds points.
    fn inner(&self) -> usize {
        self.belief.len() - 2
    }

    fn spacing(&self) -> f64 {
        (self.log_odds_max - self.log_odds_min) / (self.inner() - 1) as f64
    }

    /// Grid index nearest to the given log-odds (`None` is `p = 0`).
    fn nearest(&self, log_odds: Option<f64>) -> usize {
        match log_odds {
            None => 0,
            Some(u) if u >= self.log_odds_max => self.belief.len() - 1,
            Some(u) => {
                let k = ((u - self.log_odds_min) / self.spacing()).round().max(0.0) as usize;
                1 + k.min(self.inner() - 1)
            }
        }
    }

    /// Sensing rate at log-odds `log_odds`, read from the nearest grid point.
    pub fn beta_at_log_odds(&self, log_odds: Option<f64>) -> f64 {
        self.beta[self.nearest(log_odds)]
    }

    /// Sensing rate at belief `p`.
    pub fn beta_at(&self, p: f64) -> f64 {
        let log_odds = if p <= 0.0 {
            None
        } else if p >= 1.0 {
            Some(f64::INFINITY)
        } else {
            Some((p / (1.0 - p)).ln())
        };
        self.beta_at_log_odds(log_odds)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let n = p.belief.len();
        if n < 4 || p.stop.len() != n || p.beta.len() != n || p.value.len() != n {
            return Err(Error::Config("belief-grid policy tables have inconsistent lengths".into()));
        }
        Ok(p)
    }
}

/// Interpolation target of a transition: value `(1 - w) V[i] + w V[i + 1]`,
/// or zero once the stopping region is reached.
#[derive(Debug, Clone, Copy)]
enum Next {
    Interp(usize, f64),
    Absorbed,
}

/// Transition structure of one continuing grid point.
#[derive(Debug, Clone)]
struct Node {
    belief: f64,
    /// `chi2_0 (1 - p) + chi2_1 p`.
    covert_cost: f64,
    /// Next belief after an innocent action.
    passive: Next,
    /// `(P(y | x = 1), next)` for each `y`.
    active: Vec<(f64, Next)>,
}

/// Precomputed dynamics on the grid.
#[derive(Debug, Clone)]
struct Model {
    belief: Vec<f64>,
    log_odds_min: f64,
    log_odds_max: f64,
    spacing: f64,
    /// `None` for grid points inside the stopping region.
    nodes: Vec<Option<Node>>,
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Model {
    fn new(s: &Scenario, grid_size: usize) -> Result<Self> {
        if grid_size < 64 {
            return Err(Error::InvalidParameter {
                name: "grid_size",
                value: grid_size as f64,
                reason: "belief grid needs at least 64 points",
            });
        }
        let inner = grid_size - 2;
        let (lo, hi) = (s.prior.log_hazard_odds(), s.b_alpha);
        let spacing = (hi - lo) / (inner - 1) as f64;
        let log_odds: Vec<Option<f64>> = std::iter::once(None)
            .chain((0..inner).map(|k| Some(if k == inner - 1 { hi } else { lo + k as f64 * spacing })))
            .chain(std::iter::once(Some(f64::INFINITY)))
            .collect();
        let belief: Vec<f64> = log_odds.iter().map(|u| u.map_or(0.0, sigmoid)).collect();
        let mut model = Self { belief, log_odds_min: lo, log_odds_max: hi, spacing, nodes: Vec::new() };
        let ch = &s.channel;
        let nodes = log_odds
            .iter()
            .zip(&model.belief)
            .map(|(&u, &p)| {
                if u.is_some_and(|u| u >= hi) {
                    return Ok(None);
                }
                let active = (0..ch.y_size())
                    .map(|y| {
                        let py = p * ch.alice(1, 1).prob(y) + (1.0 - p) * ch.alice(1, 0).prob(y);
                        let next = if py > 0.0 {
                            model.locate(log_odds_step(u, ch.modulated_llr(1, y)?, &s.prior))
                        } else {
                            Next::Absorbed
                        };
                        Ok((py, next))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Some(Node {
                    belief: p,
                    covert_cost: ch.chi2_pre * (1.0 - p) + ch.chi2_post * p,
                    passive: model.locate(log_odds_step(u, 0.0, &s.prior)),
                    active,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        model.nodes = nodes;
        Ok(model)
    }

    fn locate(&self, u: f64) -> Next {
        if u >= self.log_odds_max {
            return Next::Absorbed;
        }
        let inner = self.belief.len() - 2;
        let x = ((u - self.log_odds_min) / self.spacing).max(0.0);
        let k = (x.floor() as usize).min(inner - 2);
        let w = (x - k as f64).clamp(0.0, 1.0);
        Next::Interp(1 + k, w)
    }

    fn eval(next: Next, v: &[f64]) -> f64 {
        match next {
            Next::Absorbed => 0.0,
            Next::Interp(i, w) => (1.0 - w) * v[i] + w * v[i + 1],
        }
    }

    /// Best continuation at `node`: `(cost, beta)`.
    fn best(node: &Node, v: &[f64], lambda: f64, actions: &[f64]) -> (f64, f64) {
        let passive = Self::eval(node.passive, v);
        let active: f64 = node.active.iter().map(|&(py, n)| py * Self::eval(n, v)).sum();
        let cost = |b: f64| {
            let covert = if b == 0.0 { 0.0 } else { lambda * b * b * node.covert_cost };
            covert + (1.0 - b) * passive + b * active
        };
        let costs: Vec<f64> = actions.iter().map(|&b| cost(b)).collect();
        let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * (1.0 + min.abs());
        // Ties go to the cheapest probe, except without a covertness price,
        // where they go to the most informative one.
        let mut pick = actions.iter().zip(&costs).filter(|(_, &c)| c <= min + tol).map(|(&b, _)| b);
        let beta = if lambda == 0.0 {
            pick.fold(f64::NEG_INFINITY, f64::max)
        } else {
            pick.next().unwrap_or(0.0)
        };
        (node.belief + cost(beta), beta)
    }

    fn sweep(&self, v: &[f64], lambda: f64, actions: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.nodes
            .par_iter()
            .map(|node| match node {
                None => (0.0, 0.0),
                Some(n) => Self::best(n, v, lambda, actions),
            })
            .unzip()
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpOptions {
    pub grid_size: usize,
    /// Finite action set; `None` selects [`default_action_set`].
    pub action_set: Option<Vec<f64>>,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Monte-Carlo runs per bisection step.
    pub mc_runs: u64,
    pub seed: u64,
    pub bisection_steps: usize,
    /// Accept once the MC ECB lies in `[band_low * delta, delta]`.
    pub band_low: f64,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            grid_size: 1024,
            action_set: None,
            tolerance: 1e-8,
            max_iterations: 100_000,
            mc_runs: 20_000,
            seed: 0x5eed,
            bisection_steps: 40,
            band_low: 0.8,
        }
    }
}

/// `{0, beta*/2, beta*, 2 beta*, 1}` merged with a geometric ladder of 25
/// rates from `1e-3` to `1`, sorted and deduplicated.
pub fn default_action_set(s: &Scenario) -> Result<Vec<f64>> {
    let b = proposed_sensing_rate(s)?;
    let mut set: Vec<f64> = [0.0, b / 2.0, b, 2.0 * b, 1.0].iter().map(|v| v.min(1.0)).collect();
    set.extend((0..25).map(|j| 10f64.powf(-3.0 + 3.0 * j as f64 / 24.0)));
    normalize_actions(set)
}

fn normalize_actions(mut set: Vec<f64>) -> Result<Vec<f64>> {
    if let Some(&b) = set.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::InvalidParameter {
            name: "action",
            value: b,
            reason: "sensing rates must lie in [0, 1]",
        });
    }
    set.push(0.0);
    set.sort_by(f64::total_cmp);
    set.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    Ok(set)
}

/// Result of value iteration at a fixed multiplier.
struct Solved {
    value: Vec<f64>,
    beta: Vec<f64>,
    iterations: usize,
    residual: f64,
}

fn value_iteration(model: &Model, lambda: f64, actions: &[f64], opts: &DpOptions, warm: Option<&[f64]>) -> Result<Solved> {
    let mut v = warm.map_or_else(|| vec![0.0; model.belief.len()], <[f64]>::to_vec);
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let (next, beta) = model.sweep(&v, lambda, actions);
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual < opts.tolerance {
            return Ok(Solved { value: v, beta, iterations: it, residual });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iterations, residual })
}

fn assemble(s: &Scenario, model: &Model, solved: Solved, lambda: f64, actions: &[f64]) -> BeliefGridPolicy {
    BeliefGridPolicy {
        abs_ln_alpha: s.abs_ln_alpha,
        rho: s.prior.rho,
        delta: s.delta,
        log_odds_min: model.log_odds_min,
        log_odds_max: model.log_odds_max,
        belief: model.belief.clone(),
        stop: model.nodes.iter().map(Option::is_none).collect(),
        beta: solved.beta,
        value: solved.value,
        lambda,
        action_set: actions.to_vec(),
        iterations: solved.iterations,
        residual: solved.residual,
        evaluation: None,
    }
}

/// Value iteration at a fixed multiplier.
pub fn solve_fixed_lambda(s: &Scenario, lambda: f64, opts: &DpOptions) -> Result<BeliefGridPolicy> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
            reason: "multiplier must be non-negative",
        });
    }
    let actions = match &opts.action_set {
        Some(a) => normalize_actions(a.clone())?,
        None => default_action_set(s)?,
    };
    let model = Model::new(s, opts.grid_size)?;
    let solved = value_iteration(&model, lambda, &actions, opts, None)?;
    Ok(assemble(s, &model, solved, lambda, &actions))
}

/// One Jacobi sweep of the Bellman operator on `policy`'s value function.
pub fn bellman_backup(policy: &BeliefGridPolicy, s: &Scenario, lambda: f64) -> Result<Vec<f64>> {
    let model = Model::new(s, policy.belief.len())?;
    if model.belief.len() != policy.value.len() {
        return Err(Error::Config("value vector does not match the grid".into()));
    }
    Ok(model.sweep(&policy.value, lambda, &policy.action_set).0)
}

fn evaluate(s: &Scenario, policy: &BeliefGridPolicy, opts: &DpOptions) -> Result<McSummary> {
    let kind = PolicyKind::Dp(std::sync::Arc::new(policy.clone()));
    estimate_with(s, &kind, &McOptions::new(opts.mc_runs, opts.seed))
}

fn record(policy: &mut BeliefGridPolicy, m: &McSummary) {
    policy.evaluation = Some(DpEvaluation {
        n_runs: m.n_runs,
        seed: m.seed,
        add_mean: m.add_mean,
        ecb_mean: m.ecb_mean,
        ecb_stderr: m.ecb_stderr,
        pfa_mean: m.pfa_mean,
    });
}

/// Solves the scalarized problem and bisects `log lambda` until the MC ECB
/// of the extracted policy lies in `[band_low * delta, delta]`. If the band
/// is never hit, the feasible policy with the largest ECB is returned.
pub fn solve(s: &Scenario, opts: &DpOptions) -> Result<BeliefGridPolicy> {
    let actions = match &opts.action_set {
        Some(a) => normalize_actions(a.clone())?,
        None => default_action_set(s)?,
    };
    let model = Model::new(s, opts.grid_size)?;
    let run = |lambda: f64, warm: Option<&[f64]>| -> Result<(BeliefGridPolicy, McSummary)> {
        let solved = value_iteration(&model, lambda, &actions, opts, warm)?;
        let mut policy = assemble(s, &model, solved, lambda, &actions);
        let m = evaluate(s, &policy, opts)?;
        record(&mut policy, &m);
        Ok((policy, m))
    };
    let in_band = |m: &McSummary| m.ecb_mean <= s.delta && m.ecb_mean >= opts.band_low * s.delta;

    // Unconstrained probing may already fit the budget.
    let (free, m) = run(0.0, None)?;
    if m.ecb_mean <= s.delta {
        return Ok(free);
    }
    let (mut lo, mut hi) = (-5.0f64, 20.0f64);
    let mut best: Option<(BeliefGridPolicy, f64)> = None;
    let (top, m) = run(10f64.powf(hi), None)?;
    if m.ecb_mean > s.delta {
        // Even a prohibitive price probes too much; only silence is safe.
        return solve_fixed_lambda(s, f64::INFINITY, &DpOptions { action_set: Some(vec![0.0]), ..opts.clone() });
    }
    best = best.or(Some((top, m.ecb_mean)));
    let mut warm: Option<Vec<f64>> = None;
    for _ in 0..opts.bisection_steps {
        let mid = 0.5 * (lo + hi);
        let (policy, m) = run(10f64.powf(mid), warm.as_deref())?;
        if m.ecb_mean <= s.delta {
            hi = mid;
            if best.as_ref().is_none_or(|(_, e)| m.ecb_mean > *e) {
                warm = Some(policy.value.clone());
                best = Some((policy.clone(), m.ecb_mean));
            }
            if in_band(&m) {
                return Ok(policy);
            }
        } else {
            lo = mid;
        }
    }
    Ok(best.expect("a feasible policy was recorded").0)
}
