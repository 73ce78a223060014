//! Randomized invariant checks. Each check takes generated inputs and is
//! driven either by `proptest!` or by [`suite`] for the acceptance report.

use std::sync::Arc;

use covert_qcd::bounds;
use covert_qcd::oracle::{truncated_kl_vs_ecb, KL_TOL};
use covert_qcd::policy::{log_odds_step, proposed_sensing_rate, shiryaev_update};
use covert_qcd::probability::{chi2_divergence, kl_divergence, llr_second_moment};
use covert_qcd::simulate::{estimate, replication_rng, run_one};
use covert_qcd::{build_channel, ChannelSpec, ChannelTables, Pmf, PolicyKind, Prior, Scenario, ShiryaevState};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{brute_force_eve, llr, sum_form_log_odds};

type Check = std::result::Result<(), TestCaseError>;

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

pub fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.02f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

/// Pair of full-support distributions on a common alphabet of size 2..=6.
pub fn pmf_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|n| (weights(n), weights(n)))
}

/// Product channels with no free passive sensing and alphabets of size
/// 2 or 3, filtered to those the library accepts.
pub fn channel() -> impl Strategy<Value = Arc<ChannelSpec>> {
    (2usize..=3, 2usize..=3)
        .prop_flat_map(|(ny, nz)| {
            (weights(ny), weights(ny), weights(ny), weights(nz), weights(nz), weights(nz), weights(nz))
        })
        .prop_filter_map("degenerate channel", |(p0, p10, p11, q00, q01, q10, q11)| {
            let pmf = |v: Vec<f64>| Pmf::new(v).ok();
            let (p0, p10, p11) = (pmf(p0)?, pmf(p10)?, pmf(p11)?);
            let (q00, q01, q10, q11) = (pmf(q00)?, pmf(q01)?, pmf(q10)?, pmf(q11)?);
            let tables = ChannelTables::product([[&p0, &p0], [&p10, &p11]], [[&q00, &q01], [&q10, &q11]]).ok()?;
            let ch = build_channel(tables).ok()?;
            (ch.info > 1e-3 && ch.chi2_post > 1e-6 && ch.chi2_pre > 1e-6).then(|| Arc::new(ch))
        })
}

pub fn divergences_are_nonnegative((p, q): (Vec<f64>, Vec<f64>)) -> Check {
    let (pp, qq) = (ok(Pmf::new(p.clone()))?, ok(Pmf::new(q.clone()))?);
    let k = ok(kl_divergence(&pp, &qq))?;
    let c = ok(chi2_divergence(&pp, &qq))?;
    let m = ok(llr_second_moment(&pp, &qq))?;
    prop_assert!(k >= 0.0 && c >= 0.0);
    prop_assert!(m >= k * k - 1e-10);
    prop_assert!((k - super::kl(&p, &q)).abs() <= 1e-12 * (1.0 + k));
    prop_assert!((c - super::chi2(&p, &q)).abs() <= 1e-12 * (1.0 + c));
    Ok(())
}

pub fn kl_vanishes_only_on_equality((p, q): (Vec<f64>, Vec<f64>)) -> Check {
    let (pp, qq) = (ok(Pmf::new(p.clone()))?, ok(Pmf::new(q.clone()))?);
    prop_assert!(ok(kl_divergence(&pp, &pp))?.abs() <= 1e-12);
    let gap = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > 1e-6 {
        prop_assert!(ok(kl_divergence(&pp, &qq))? > 0.0);
    }
    Ok(())
}

pub fn divergences_ignore_relabeling((p, q): (Vec<f64>, Vec<f64>), seed: u64) -> Check {
    let mut perm: Vec<usize> = (0..p.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let shuffle = |v: &[f64]| ok(Pmf::new(perm.iter().map(|&i| v[i]).collect()));
    let (pp, qq) = (ok(Pmf::new(p.clone()))?, ok(Pmf::new(q.clone()))?);
    let (ps, qs) = (shuffle(&p)?, shuffle(&q)?);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
    prop_assert!(close(ok(kl_divergence(&pp, &qq))?, ok(kl_divergence(&ps, &qs))?));
    prop_assert!(close(ok(chi2_divergence(&pp, &qq))?, ok(chi2_divergence(&ps, &qs))?));
    prop_assert!(close(ok(llr_second_moment(&pp, &qq))?, ok(llr_second_moment(&ps, &qs))?));
    Ok(())
}

pub fn idle_observations_carry_no_evidence(ch: Arc<ChannelSpec>) -> Check {
    for y in 0..ch.y_size() {
        // Passive marginals agree up to the validation tolerance.
        prop_assert!(ok(ch.modulated_llr(0, y))?.abs() <= 1e-10);
        let l1 = ok(ch.modulated_llr(1, y))?;
        prop_assert!((l1 - ok(ch.llr(y))?).abs() <= 1e-12);
        prop_assert!((l1 - llr(ch.tables(), 1, y)).abs() <= 1e-12);
    }
    Ok(())
}

pub fn prior_tail_is_geometric(rho: f64, n: u64) -> Check {
    let p = ok(Prior::new(rho))?;
    let (a, b) = (p.tail(n) * (1.0 - rho), p.tail(n + 1));
    prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300) + 1e-300, "{} vs {}", a, b);
    Ok(())
}

/// Recursion against the changepoint sum on a random trace.
pub fn recursion_matches_sum(ch: Arc<ChannelSpec>, rho: f64, beta: f64, len: usize, seed: u64) -> Check {
    let prior = ok(Prior::new(rho))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = prior.sample(&mut rng);
    let mut state = ShiryaevState::new();
    let mut llrs = Vec::with_capacity(len);
    for t in 1..=len as u64 {
        let x = usize::from(rng.gen_bool(beta));
        let (y, _) = ch.sample_observation(x, usize::from(t > gamma), &mut rng);
        state = ok(shiryaev_update(state, x, y, &prior, &ch))?;
        llrs.push(llr(ch.tables(), x, y));
    }
    let direct = sum_form_log_odds(rho, &llrs).expect("non-empty trace");
    let rec = state.log_odds.expect("non-empty trace");
    prop_assert!((rec - direct).abs() <= 1e-9 + 1e-9 * direct.abs(), "{} vs {}", rec, direct);
    Ok(())
}

pub fn innocent_stops_on_schedule(rho: f64, abs_ln_alpha: f64, seed: u64) -> Check {
    let s = ok(Scenario::new(ChannelSpec::reference(), ok(Prior::new(rho))?, 1.0 / 24.0, abs_ln_alpha))?;
    let n = (abs_ln_alpha / -(1.0 - rho).ln()).ceil() as u64;
    prop_assert_eq!(s.n_alpha, n);
    let tr = ok(run_one(&s, &PolicyKind::innocent_for(&s), &mut replication_rng(seed, 0)))?;
    prop_assert_eq!(tr.tau, n);
    prop_assert_eq!(tr.actions_taken, 0);
    let pfa = bounds::innocent_pfa(&s);
    prop_assert!((pfa - (1.0 - rho).powi(n as i32)).abs() <= 1e-12 * pfa);
    prop_assert!(pfa <= s.alpha * (1.0 + 1e-12));
    Ok(())
}

pub fn same_seed_same_trace(beta: f64, abs_ln_alpha: f64, seed: u64) -> Check {
    let s = ok(Scenario::reference(abs_ln_alpha))?;
    let p = ok(PolicyKind::constant_beta(beta))?;
    let a = ok(run_one(&s, &p, &mut replication_rng(seed, 3)))?;
    let b = ok(run_one(&s, &p, &mut replication_rng(seed, 3)))?;
    prop_assert_eq!(a, b);
    Ok(())
}

/// Exact converse never exceeds the achievable bound at the budgeted rate.
pub fn bounds_sandwich(rho: f64, delta: f64, abs_ln_alpha: f64) -> Check {
    let s = ok(Scenario::new(ChannelSpec::reference(), ok(Prior::new(rho))?, delta, abs_ln_alpha))?;
    let upper = ok(bounds::add_upper(&s, ok(proposed_sensing_rate(&s))?))?;
    if let Ok(lower) = bounds::exact_quadratic_root_lower(&s) {
        prop_assert!(lower <= upper, "{} > {}", lower, upper);
    }
    Ok(())
}

pub fn more_sensing_less_delay(abs_ln_alpha: f64, b1: f64, b2: f64) -> Check {
    let s = ok(Scenario::reference(abs_ln_alpha))?;
    let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
    prop_assert!(ok(bounds::add_upper(&s, hi))? <= ok(bounds::add_upper(&s, lo))? + 1e-12);
    Ok(())
}

/// Every step of the covertness chain, with stopping active.
pub fn covertness_chain(ch: Arc<ChannelSpec>, rho: f64, beta: f64, abs_ln_alpha: f64, horizon: usize) -> Check {
    let s = ok(Scenario::new(ch, ok(Prior::new(rho))?, 1.0, abs_ln_alpha))?;
    let p = ok(PolicyKind::constant_beta(beta))?;
    let r = ok(truncated_kl_vs_ecb(&s, &p, horizon))?;
    prop_assert!(r.true_kl <= r.ecb_truncated + KL_TOL);
    prop_assert!(r.true_kl <= r.mixture_kl_bound + KL_TOL);
    for c in &r.per_changepoint {
        prop_assert!(c.conditional_kl <= c.conditional_ecb + KL_TOL, "k = {}", c.k);
    }
    let next = ok(truncated_kl_vs_ecb(&s, &p, horizon + 1))?;
    prop_assert!(next.true_kl >= r.true_kl - KL_TOL);
    Ok(())
}

/// Library enumeration against the brute-force reference when Alice never
/// stops inside the horizon.
pub fn enumeration_matches_brute_force(ch: Arc<ChannelSpec>, rho: f64, beta: f64, horizon: usize) -> Check {
    let s = ok(Scenario::new(ch.clone(), ok(Prior::new(rho))?, 1.0, 200.0))?;
    let r = ok(truncated_kl_vs_ecb(&s, &ok(PolicyKind::constant_beta(beta))?, horizon))?;
    let bf = brute_force_eve(ch.tables(), rho, beta, horizon);
    prop_assert!((r.true_kl - bf.kl).abs() <= KL_TOL, "{} vs {}", r.true_kl, bf.kl);
    prop_assert!((r.ecb_truncated - bf.ecb).abs() <= 1e-12);
    prop_assert_eq!(r.per_changepoint.len(), bf.classes.len());
    for (c, &(w, kl, ecb)) in r.per_changepoint.iter().zip(&bf.classes) {
        prop_assert!((c.weight - w).abs() <= 1e-15);
        prop_assert!((c.conditional_kl - kl).abs() <= KL_TOL);
        prop_assert!((c.conditional_ecb - ecb).abs() <= 1e-12);
    }
    for (a, b) in r.p_active.mass().iter().zip(&bf.active) {
        prop_assert!((a - b).abs() <= 1e-15);
    }
    Ok(())
}

pub fn delay_accounting(beta: f64, abs_ln_alpha: f64, seed: u64) -> Check {
    let s = ok(Scenario::reference(abs_ln_alpha))?;
    let m = ok(estimate(&s, &ok(PolicyKind::constant_beta(beta))?, 200, seed))?;
    prop_assert!((m.add_mean + m.pre_change_mean - m.tau_mean).abs() <= 1e-9 * m.tau_mean);
    prop_assert!(m.posterior_pfa_mean <= s.alpha);
    Ok(())
}

/// A step without probing moves the belief only by the prior hazard.
pub fn idle_belief_step(rho: f64, p: f64) -> Check {
    let prior = ok(Prior::new(rho))?;
    let u = (p / (1.0 - p)).ln();
    let next = log_odds_step(Some(u), 0.0, &prior);
    let q = 1.0 / (1.0 + (-next).exp());
    let expected = p + (1.0 - p) * rho;
    prop_assert!((q - expected).abs() <= 1e-12, "{} vs {}", q, expected);
    let first = log_odds_step(None, 0.0, &prior);
    prop_assert!((1.0 / (1.0 + (-first).exp()) - rho).abs() <= 1e-12);
    Ok(())
}

fn run<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Check) -> std::result::Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, check).map_err(|e| e.to_string())
}

/// Runs every check with `cases` generated inputs each.
pub fn suite(cases: u32) -> Vec<(&'static str, std::result::Result<(), String>)> {
    let rho = 0.005f64..0.5;
    let chain_cases = cases.min(1000);
    vec![
        ("divergences non-negative", run(cases, pmf_pair(), divergences_are_nonnegative)),
        ("KL zero only on equal laws", run(cases, pmf_pair(), kl_vanishes_only_on_equality)),
        ("divergences ignore relabeling", run(cases, (pmf_pair(), any::<u64>()), |(p, s)| divergences_ignore_relabeling(p, s))),
        ("idle observations carry no evidence", run(cases, channel(), idle_observations_carry_no_evidence)),
        ("geometric prior tail", run(cases, (rho.clone(), 0u64..2000), |(r, n)| prior_tail_is_geometric(r, n))),
        (
            "recursion matches changepoint sum",
            run(cases, (channel(), rho.clone(), 0.0f64..=1.0, 1usize..=50, any::<u64>()), |(c, r, b, n, s)| {
                recursion_matches_sum(c, r, b, n, s)
            }),
        ),
        ("innocent stops on schedule", run(cases, (rho.clone(), 0.7f64..20.0, any::<u64>()), |(r, l, s)| innocent_stops_on_schedule(r, l, s))),
        ("same seed same trace", run(cases, (0.0f64..=1.0, 1.0f64..10.0, any::<u64>()), |(b, l, s)| same_seed_same_trace(b, l, s))),
        ("bound sandwich", run(cases, (0.01f64..0.3, 1e-3f64..1.0, 1.0f64..40.0), |(r, d, l)| bounds_sandwich(r, d, l))),
        ("more sensing less delay", run(cases, (1.0f64..=14.0, 0.0f64..0.1, 0.0f64..0.1), |(l, a, b)| more_sensing_less_delay(l, a, b))),
        (
            "covertness chain",
            run(chain_cases, (channel(), 0.01f64..0.3, 0.0f64..=1.0, 0.7f64..8.0, 1usize..=3), |(c, r, b, l, n)| {
                covertness_chain(c, r, b, l, n)
            }),
        ),
        (
            "enumeration matches brute force",
            run(chain_cases, (channel(), 0.01f64..0.3, 0.0f64..=1.0, 1usize..=3), |(c, r, b, n)| {
                enumeration_matches_brute_force(c, r, b, n)
            }),
        ),
        ("delay accounting", run(cases, (0.0f64..=1.0, 1.0f64..6.0, any::<u64>()), |(b, l, s)| delay_accounting(b, l, s))),
        ("idle belief step", run(cases, (rho, 1e-6f64..0.999999), |(r, p)| idle_belief_step(r, p))),
    ]
}
