//! Monte-Carlo estimation of ADD, PFA and ECB.
//!
//! Replication `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `i`, so results do not depend on how replications are scheduled across
//! threads. Aggregation is an ordered reduction over the replication index.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::policy::{act, shiryaev_update, PolicyKind, ShiryaevState};

/// Default cap on the length of a single run.
pub const DEFAULT_T_MAX: u64 = 1_000_000;

/// How the changepoint is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GammaMode {
    /// Fresh draw from the geometric prior.
    Prior,
    /// Fixed `Gamma = k`, for per-changepoint diagnostics.
    Fixed(u64),
}

/// One simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyTrace {
    pub gamma: u64,
    /// Number of observations taken before stopping.
    pub tau: u64,
    /// `(tau - gamma)^+`.
    pub delay: u64,
    /// `tau < gamma`.
    pub false_alarm: bool,
    /// `sum_{i=1}^{tau} chi2_{theta_i} beta_i^2`.
    pub ecb_cost: f64,
    pub actions_taken: u64,
    /// The run hit the cap before stopping.
    pub capped: bool,
    /// `ln Lambda_tau`.
    pub final_log_odds: Option<f64>,
}

impl PolicyTrace {
    /// `P(Gamma > tau | data)`, the posterior false-alarm probability.
    pub fn posterior_false_alarm(&self) -> f64 {
        ShiryaevState { log_odds: self.final_log_odds, t: self.tau, stopped: true }.posterior_complement()
    }
}

/// Simulates one run of `policy`.
pub fn run_one<R: rand::Rng + ?Sized>(scenario: &Scenario, policy: &PolicyKind, rng: &mut R) -> Result<PolicyTrace> {
    run_one_with(scenario, policy, GammaMode::Prior, DEFAULT_T_MAX, rng)
}

pub fn run_one_with<R: rand::Rng + ?Sized>(
    scenario: &Scenario,
    policy: &PolicyKind,
    gamma: GammaMode,
    t_max: u64,
    rng: &mut R,
) -> Result<PolicyTrace> {
    let gamma = match gamma {
        GammaMode::Prior => scenario.prior.sample(rng),
        GammaMode::Fixed(k) => k,
    };
    let ch = &scenario.channel;
    let mut state = ShiryaevState::new();
    let mut ecb_cost = 0.0;
    let mut actions_taken = 0;
    let mut capped = false;
    while !policy.should_stop(&state, scenario) {
        if state.t >= t_max {
            capped = true;
            break;
        }
        let beta = policy.sensing_probability(&state);
        let x = act(policy, &state, rng);
        let t = state.t + 1;
        let theta = usize::from(t > gamma);
        ecb_cost += ch.chi2(theta) * beta * beta;
        actions_taken += x as u64;
        let (y, _z) = ch.sample_observation(x, theta, rng);
        state = shiryaev_update(state, x, y, &scenario.prior, ch)?;
    }
    let tau = state.t;
    Ok(PolicyTrace {
        gamma,
        tau,
        delay: tau.saturating_sub(gamma),
        false_alarm: tau < gamma,
        ecb_cost,
        actions_taken,
        capped,
        final_log_odds: state.log_odds,
    })
}

/// Aggregate estimates over `n_runs` replications.
#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub n_runs: u64,
    pub add_mean: f64,
    pub add_stderr: f64,
    pub pfa_mean: f64,
    pub pfa_stderr: f64,
    pub ecb_mean: f64,
    pub ecb_stderr: f64,
    pub seed: u64,
    pub wall_time_s: f64,
    pub cap_hits: u64,
    pub tau_mean: f64,
    /// `E[min(tau, Gamma)]`.
    pub pre_change_mean: f64,
    pub actions_mean: f64,
    /// Mean posterior false-alarm probability at stopping.
    pub posterior_pfa_mean: f64,
}

/// Equality ignores the wall-clock time.
impl PartialEq for McSummary {
    fn eq(&self, o: &Self) -> bool {
        self.n_runs == o.n_runs
            && self.add_mean == o.add_mean
            && self.add_stderr == o.add_stderr
            && self.pfa_mean == o.pfa_mean
            && self.pfa_stderr == o.pfa_stderr
            && self.ecb_mean == o.ecb_mean
            && self.ecb_stderr == o.ecb_stderr
            && self.seed == o.seed
            && self.cap_hits == o.cap_hits
            && self.tau_mean == o.tau_mean
            && self.pre_change_mean == o.pre_change_mean
            && self.actions_mean == o.actions_mean
            && self.posterior_pfa_mean == o.posterior_pfa_mean
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    /// Sample standard deviation over `sqrt(n)`.
    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Estimation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub n_runs: u64,
    pub seed: u64,
    pub t_max: u64,
    pub gamma: GammaMode,
}

impl McOptions {
    pub fn new(n_runs: u64, seed: u64) -> Self {
        Self { n_runs, seed, t_max: DEFAULT_T_MAX, gamma: GammaMode::Prior }
    }
}

/// RNG for replication `index`.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs every replication and returns the traces in replication order.
pub fn traces(scenario: &Scenario, policy: &PolicyKind, opts: &McOptions) -> Result<Vec<PolicyTrace>> {
    if opts.n_runs == 0 {
        return Err(Error::InvalidParameter {
            name: "n_runs",
            value: 0.0,
            reason: "at least one replication is needed",
        });
    }
    (0..opts.n_runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(opts.seed, i);
            run_one_with(scenario, policy, opts.gamma, opts.t_max, &mut rng)
        })
        .collect()
}

/// Reduces traces (in order) to a summary.
pub fn summarize(traces: &[PolicyTrace], seed: u64, wall_time_s: f64) -> McSummary {
    let (mut add, mut pfa, mut ecb) = (Moments::default(), Moments::default(), Moments::default());
    let (mut tau, mut pre, mut acts, mut post) =
        (Moments::default(), Moments::default(), Moments::default(), Moments::default());
    let mut cap_hits = 0;
    for tr in traces {
        add.push(tr.delay as f64);
        pfa.push(f64::from(u8::from(tr.false_alarm)));
        ecb.push(tr.ecb_cost);
        tau.push(tr.tau as f64);
        pre.push(tr.tau.min(tr.gamma) as f64);
        acts.push(tr.actions_taken as f64);
        post.push(tr.posterior_false_alarm());
        cap_hits += u64::from(tr.capped);
    }
    McSummary {
        n_runs: traces.len() as u64,
        add_mean: add.mean,
        add_stderr: add.stderr(),
        pfa_mean: pfa.mean,
        pfa_stderr: pfa.stderr(),
        ecb_mean: ecb.mean,
        ecb_stderr: ecb.stderr(),
        seed,
        wall_time_s,
        cap_hits,
        tau_mean: tau.mean,
        pre_change_mean: pre.mean,
        actions_mean: acts.mean,
        posterior_pfa_mean: post.mean,
    }
}

/// Estimates ADD, PFA and ECB with `n_runs` replications.
pub fn estimate(scenario: &Scenario, policy: &PolicyKind, n_runs: u64, seed: u64) -> Result<McSummary> {
    estimate_with(scenario, policy, &McOptions::new(n_runs, seed))
}

pub fn estimate_with(scenario: &Scenario, policy: &PolicyKind, opts: &McOptions) -> Result<McSummary> {
    let start = Instant::now();
    let traces = traces(scenario, policy, opts)?;
    Ok(summarize(&traces, opts.seed, start.elapsed().as_secs_f64()))
}
