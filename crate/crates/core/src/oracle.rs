//! Exact small-horizon check of the covertness bound chain.
//!
//! Enumerates every `(x, y, z)` path of length `N` together with the
//! changepoint, truncated to classes `Gamma = 1, .., N` plus a lumped tail
//! `Gamma > N`. The tail is exact for the `Z^N` marginal: all `N`
//! observations are pre-change for every `k > N`.
//!
//! Eve's law of `Z^N` under the active policy is compared with her law
//! under the innocent policy (never probe). The relative entropy between the
//! two must not exceed the truncated ECB, and the same holds conditionally
//! on each changepoint class.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::policy::{shiryaev_update, PolicyKind, ShiryaevState};
use crate::probability::{kl_divergence, Pmf};

/// Largest horizon accepted.
pub const MAX_HORIZON: usize = 8;

/// Largest number of `(x, y, z)` paths the enumerator will visit.
pub const MAX_PATHS: u128 = 1 << 30;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Per-class accumulators: `mass[c * n_z + zi]` and `ecb[c]`.
#[derive(Debug, Clone)]
struct Accumulator {
    mass: Vec<Compensated>,
    ecb: Vec<Compensated>,
}

impl Accumulator {
    fn new(classes: usize, n_z: usize) -> Self {
        Self {
            mass: vec![Compensated::default(); classes * n_z],
            ecb: vec![Compensated::default(); classes],
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        for (a, b) in self.mass.iter_mut().zip(&other.mass) {
            a.add(b.sum);
            a.add(b.carry);
        }
        for (a, b) in self.ecb.iter_mut().zip(&other.ecb) {
            a.add(b.sum);
            a.add(b.carry);
        }
    }
}

struct Walk<'a> {
    scenario: &'a Scenario,
    policy: &'a PolicyKind,
    horizon: usize,
    n_z: usize,
    z_size: usize,
    y_size: usize,
}

impl Walk<'_> {
    /// Number of changepoint classes: `1..=N` and the tail.
    fn classes(&self) -> usize {
        self.horizon + 1
    }

    /// `theta_t` for class index `c` (0-based, `c = N` is the tail).
    fn theta(&self, t: usize, c: usize) -> usize {
        usize::from(c < self.horizon && t > c + 1)
    }

    fn initial_weights(&self) -> Vec<f64> {
        let prior = &self.scenario.prior;
        let mut w: Vec<f64> = (1..=self.horizon as u64).map(|k| prior.pmf(k)).collect();
        w.push(prior.tail(self.horizon as u64));
        w
    }

    /// Sensing probability at the next step and its branches.
    fn actions(&self, state: &ShiryaevState) -> (f64, Vec<(usize, f64)>) {
        let beta = self.policy.sensing_probability(state);
        let mut out = Vec::with_capacity(2);
        if beta < 1.0 {
            out.push((0, 1.0 - beta));
        }
        if beta > 0.0 {
            out.push((1, beta));
        }
        (beta, out)
    }

    /// Accrues step `t`'s ECB term for every class at this node.
    fn accrue(&self, t: usize, beta: f64, weights: &[f64], acc: &mut Accumulator) {
        if beta == 0.0 {
            return;
        }
        let ch = &self.scenario.channel;
        for (c, &w) in weights.iter().enumerate() {
            acc.ecb[c].add(w * ch.chi2(self.theta(t, c)) * beta * beta);
        }
    }

    /// Weights after taking branch `(x, y, z)` at step `t`; `None` if every
    /// class has zero mass on it.
    fn step_weights(&self, t: usize, weights: &[f64], x: usize, px: f64, y: usize, z: usize) -> Option<Vec<f64>> {
        let ch = &self.scenario.channel;
        let idx = y * self.z_size + z;
        let next: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(c, &w)| w * px * ch.joint(x, self.theta(t, c)).prob(idx))
            .collect();
        next.iter().any(|&w| w > 0.0).then_some(next)
    }

    fn advance(&self, state: ShiryaevState, x: usize, y: usize) -> Result<ShiryaevState> {
        if state.stopped {
            return Ok(state);
        }
        let mut next = shiryaev_update(state, x, y, &self.scenario.prior, &self.scenario.channel)?;
        if self.policy.should_stop(&next, self.scenario) {
            next.stop();
        }
        Ok(next)
    }

    /// Depth-first walk from a node that has completed `t` steps.
    fn descend(
        &self,
        t: usize,
        state: ShiryaevState,
        weights: &[f64],
        zi: usize,
        acc: &mut Accumulator,
    ) -> Result<()> {
        if t == self.horizon {
            for (c, &w) in weights.iter().enumerate() {
                acc.mass[c * self.n_z + zi].add(w);
            }
            return Ok(());
        }
        let step = t + 1;
        let (beta, actions) = self.actions(&state);
        self.accrue(step, beta, weights, acc);
        for (x, px) in actions {
            for y in 0..self.y_size {
                let next_state = self.advance(state, x, y)?;
                for z in 0..self.z_size {
                    if let Some(w) = self.step_weights(step, weights, x, px, y, z) {
                        self.descend(step, next_state, &w, zi * self.z_size + z, acc)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs the walk, parallel over the first step's branches.
    fn run(&self) -> Result<Accumulator> {
        let root = ShiryaevState::new();
        let weights = self.initial_weights();
        let mut acc = Accumulator::new(self.classes(), self.n_z);
        let (beta, actions) = self.actions(&root);
        self.accrue(1, beta, &weights, &mut acc);
        let branches: Vec<(usize, f64, usize, usize)> = actions
            .iter()
            .flat_map(|&(x, px)| {
                (0..self.y_size).flat_map(move |y| (0..self.z_size).map(move |z| (x, px, y, z)))
            })
            .collect();
        let parts: Vec<Result<Accumulator>> = branches
            .par_iter()
            .map(|&(x, px, y, z)| {
                let mut part = Accumulator::new(self.classes(), self.n_z);
                if let Some(w) = self.step_weights(1, &weights, x, px, y, z) {
                    let state = self.advance(root, x, y)?;
                    self.descend(1, state, &w, z, &mut part)?;
                }
                Ok(part)
            })
            .collect();
        for part in parts {
            acc.merge(&part?);
        }
        Ok(acc)
    }
}

fn check_feasible(scenario: &Scenario, horizon: usize) -> Result<()> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(Error::InvalidParameter {
            name: "horizon",
            value: horizon as f64,
            reason: "enumeration horizon must lie in 1..=8",
        });
    }
    let ch = &scenario.channel;
    let per_step = 2 * ch.y_size() as u128 * ch.z_size() as u128;
    let paths = per_step.checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if paths > MAX_PATHS {
        return Err(Error::EnumerationTooLarge { paths, limit: MAX_PATHS });
    }
    Ok(())
}


/// Eve's law of `Z^N`, split by changepoint class, plus the exact
/// per-class truncated ECB.
struct Enumeration {
    horizon: usize,
    n_z: usize,
    /// Unconditional mass of each class (`pi_1..pi_N`, then `T_N`).
    class_weight: Vec<f64>,
    /// `class_mass[c][zi]`: joint mass of class `c` and Eve's sequence `zi`.
    class_mass: Vec<Vec<f64>>,
    class_ecb: Vec<f64>,
}

impl Enumeration {
    fn run(scenario: &Scenario, policy: &PolicyKind, horizon: usize) -> Result<Self> {
        check_feasible(scenario, horizon)?;
        let z_size = scenario.channel.z_size();
        let walk = Walk {
            scenario,
            policy,
            horizon,
            n_z: z_size.pow(horizon as u32),
            z_size,
            y_size: scenario.channel.y_size(),
        };
        let acc = walk.run()?;
        let n_z = walk.n_z;
        let class_mass = (0..walk.classes())
            .map(|c| acc.mass[c * n_z..(c + 1) * n_z].iter().map(Compensated::value).collect())
            .collect();
        Ok(Self {
            horizon,
            n_z,
            class_weight: walk.initial_weights(),
            class_mass,
            class_ecb: acc.ecb.iter().map(Compensated::value).collect(),
        })
    }

    fn marginal(&self) -> Result<Pmf> {
        let mut total = vec![Compensated::default(); self.n_z];
        for row in &self.class_mass {
            for (t, &m) in total.iter_mut().zip(row) {
                t.add(m);
            }
        }
        to_pmf(total.iter().map(Compensated::value).collect())
    }

    fn conditional(&self, c: usize) -> Result<Pmf> {
        let w = self.class_weight[c];
        to_pmf(self.class_mass[c].iter().map(|m| m / w).collect())
    }
}

fn to_pmf(mass: Vec<f64>) -> Result<Pmf> {
    // Leaf masses can round to tiny negatives only through the division by
    // the class weight; clamp them before validation.
    Pmf::new(mass.into_iter().map(|m| m.max(0.0)).collect())
}

/// Exact law of Eve's observations `Z^N` under `policy`, indexed base `|Z|`
/// with `z_1` most significant.
pub fn enumerate_eve_distribution(scenario: &Scenario, policy: &PolicyKind, horizon: usize) -> Result<Pmf> {
    Enumeration::run(scenario, policy, horizon)?.marginal()
}

/// Conditional comparison for one changepoint class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChangepointCheck {
    /// Changepoint value; `horizon + 1` stands for the lumped tail `Gamma > N`.
    pub k: u64,
    /// Prior mass of the class.
    pub weight: f64,
    pub conditional_kl: f64,
    /// `E_k[sum_{i <= min(tau, N)} chi2_{theta_i(k)} beta_i^2]`.
    pub conditional_ecb: f64,
}

/// Result of the truncated comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedDistributions {
    pub horizon: usize,
    #[serde(skip)]
    pub p_active: Pmf,
    #[serde(skip)]
    pub p_innocent: Pmf,
    /// `D(P_active || P_innocent)` on `Z^N`.
    pub true_kl: f64,
    /// `E[sum_{i <= min(tau, N)} chi2_{theta_i} beta_i^2]`.
    pub ecb_truncated: f64,
    /// `sum_k pi_k D(P_active | k || P_innocent | k)`.
    pub mixture_kl_bound: f64,
    pub per_changepoint: Vec<ChangepointCheck>,
    /// Informational `1 - sqrt(KL / 2)`.
    pub detection_error_floor: f64,
}

/// Absolute slack allowed on KL comparisons.
pub const KL_TOL: f64 = 1e-9;

impl TruncatedDistributions {
    /// `ecb_truncated - true_kl`.
    pub fn chain_margin(&self) -> f64 {
        self.ecb_truncated - self.true_kl
    }

    /// Every inequality of the chain: mixture KL <= convexity bound <= ECB,
    /// and the per-class bound for each class.
    pub fn chain_holds(&self) -> bool {
        self.true_kl <= self.mixture_kl_bound + KL_TOL
            && self.mixture_kl_bound <= self.ecb_truncated + KL_TOL
            && self
                .per_changepoint
                .iter()
                .all(|c| c.conditional_kl <= c.conditional_ecb + KL_TOL)
    }
}

/// Enumerates both policies to horizon `N` and evaluates every step of the
/// covertness chain exactly.
pub fn truncated_kl_vs_ecb(scenario: &Scenario, policy: &PolicyKind, horizon: usize) -> Result<TruncatedDistributions> {
    let active = Enumeration::run(scenario, policy, horizon)?;
    let innocent = Enumeration::run(scenario, &PolicyKind::Innocent { stop_at: horizon as u64 }, horizon)?;
    let p_active = active.marginal()?;
    let p_innocent = innocent.marginal()?;
    let true_kl = kl_divergence(&p_active, &p_innocent)?;

    let mut per_changepoint = Vec::with_capacity(active.class_weight.len());
    let mut mixture = Compensated::default();
    let mut ecb = Compensated::default();
    for (c, &weight) in active.class_weight.iter().enumerate() {
        let conditional_kl = kl_divergence(&active.conditional(c)?, &innocent.conditional(c)?)?;
        let conditional_ecb = active.class_ecb[c] / weight;
        mixture.add(weight * conditional_kl);
        ecb.add(active.class_ecb[c]);
        per_changepoint.push(ChangepointCheck {
            k: c as u64 + 1,
            weight,
            conditional_kl,
            conditional_ecb,
        });
    }
    Ok(TruncatedDistributions {
        horizon: active.horizon,
        p_active,
        p_innocent,
        true_kl,
        ecb_truncated: ecb.value(),
        mixture_kl_bound: mixture.value(),
        per_changepoint,
        detection_error_floor: 1.0 - (true_kl / 2.0).sqrt(),
    })
}
