//! Reference computations shared by the integration tests. Everything here
//! works directly from the joint channel tables in plain arithmetic and does
//! not call into the library's numerical code.

#![allow(dead_code)]

pub mod invariants;

use covert_qcd::ChannelTables;

/// Joint table for input `x` and state `theta`.
pub fn table(t: &ChannelTables, x: usize, theta: usize) -> &[f64] {
    match (x, theta) {
        (0, 0) => &t.x0_theta0,
        (0, _) => &t.x0_theta1,
        (_, 0) => &t.x1_theta0,
        _ => &t.x1_theta1,
    }
}

/// Alice's marginal over `y`.
pub fn alice(t: &ChannelTables, x: usize, theta: usize) -> Vec<f64> {
    let w = table(t, x, theta);
    (0..t.y_size).map(|y| (0..t.z_size).map(|z| w[y * t.z_size + z]).sum()).collect()
}

/// Eve's marginal over `z`.
pub fn eve(t: &ChannelTables, x: usize, theta: usize) -> Vec<f64> {
    let w = table(t, x, theta);
    (0..t.z_size).map(|z| (0..t.y_size).map(|y| w[y * t.z_size + z]).sum()).collect()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

pub fn llr_second_moment(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln().powi(2)).sum()
}

pub fn chi2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b) / b).sum()
}

/// `D`, `V`, `chi2_0`, `chi2_1` from the tables.
pub fn constants(t: &ChannelTables) -> (f64, f64, f64, f64) {
    let (p11, p10) = (alice(t, 1, 1), alice(t, 1, 0));
    (
        kl(&p11, &p10),
        llr_second_moment(&p11, &p10),
        chi2(&eve(t, 1, 0), &eve(t, 0, 0)),
        chi2(&eve(t, 1, 1), &eve(t, 0, 1)),
    )
}

/// Log-likelihood ratio of Alice's observation `y` after input `x`.
pub fn llr(t: &ChannelTables, x: usize, y: usize) -> f64 {
    if x == 0 {
        return 0.0;
    }
    (alice(t, 1, 1)[y] / alice(t, 1, 0)[y]).ln()
}

/// Posterior odds of `Gamma <= n` after `n` observations, by the sum over
/// changepoints: `(1 - rho)^-n sum_k rho (1 - rho)^(k-1) prod_{t > k} e^{L_t}`.
/// Returns `ln` of the odds, or `None` before any observation.
pub fn sum_form_log_odds(rho: f64, llrs: &[f64]) -> Option<f64> {
    let n = llrs.len();
    if n == 0 {
        return None;
    }
    let mut num = 0.0;
    for k in 1..=n {
        let post: f64 = llrs[k..].iter().sum();
        num += rho * (1.0 - rho).powi(k as i32 - 1) * post.exp();
    }
    Some((num / (1.0 - rho).powi(n as i32)).ln())
}

/// Delay of the policy that never probes and stops at step `n`.
pub fn innocent_delay(rho: f64, n: u64) -> f64 {
    (1..=n).map(|k| rho * (1.0 - rho).powi(k as i32 - 1) * (n - k) as f64).sum()
}

/// Exact comparison of Eve's view under a constant sensing rate against the
/// never-probing policy, for horizons short enough that Alice never stops.
pub struct BruteForce {
    pub kl: f64,
    pub ecb: f64,
    /// Per changepoint `k = 1..=N`, then the tail `Gamma > N`:
    /// (weight, conditional KL, conditional ECB).
    pub classes: Vec<(f64, f64, f64)>,
    pub active: Vec<f64>,
}

pub fn brute_force_eve(t: &ChannelTables, rho: f64, beta: f64, n: usize) -> BruteForce {
    let (_, _, c0, c1) = constants(t);
    let mix = |theta: usize| -> Vec<f64> {
        let (q0, q1) = (eve(t, 0, theta), eve(t, 1, theta));
        q0.iter().zip(&q1).map(|(a, b)| (1.0 - beta) * a + beta * b).collect()
    };
    let act = [mix(0), mix(1)];
    let idle = [eve(t, 0, 0), eve(t, 0, 1)];
    let zs = t.z_size;
    let paths = zs.pow(n as u32);
    let mut weights: Vec<f64> = (1..=n).map(|k| rho * (1.0 - rho).powi(k as i32 - 1)).collect();
    weights.push((1.0 - rho).powi(n as i32));
    let mut p_act = vec![0.0; paths];
    let mut p_idle = vec![0.0; paths];
    let mut classes = Vec::new();
    let mut ecb = 0.0;
    for (c, &w) in weights.iter().enumerate() {
        let k = c + 1;
        let mut ca = vec![0.0; paths];
        let mut ci = vec![0.0; paths];
        for (idx, (a, b)) in ca.iter_mut().zip(ci.iter_mut()).enumerate() {
            let (mut pa, mut pi) = (1.0, 1.0);
            for step in 0..n {
                let z = idx / zs.pow((n - 1 - step) as u32) % zs;
                let theta = usize::from(step + 1 > k);
                pa *= act[theta][z];
                pi *= idle[theta][z];
            }
            *a = pa;
            *b = pi;
        }
        let cond_ecb: f64 = (1..=n).map(|s| beta * beta * if s > k { c1 } else { c0 }).sum();
        classes.push((w, kl(&ca, &ci), cond_ecb));
        ecb += w * cond_ecb;
        for i in 0..paths {
            p_act[i] += w * ca[i];
            p_idle[i] += w * ci[i];
        }
    }
    BruteForce { kl: kl(&p_act, &p_idle), ecb, classes, active: p_act }
}
