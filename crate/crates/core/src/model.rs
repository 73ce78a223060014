//! The controlled channel `W(y, z | x, theta)`, Alice's and Eve's marginals,
//! the geometric changepoint prior and the scenario constants derived from
//! them.
//!
//! Time is indexed from `t = 1`. With changepoint `Gamma = k` the state is
//! `theta_t = 1{t > k}`: the observation at `t = k` is still pre-change.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probability::{chi2_divergence, kl_divergence, llr_second_moment, Pmf};

/// Largest alphabet accepted for either output.
pub const MAX_ALPHABET: usize = 16;

/// Tolerance used when checking `P^0_1 = P^0_0`.
const PASSIVE_TOL: f64 = 1e-12;

/// Divergences at or below this level are treated as zero.
const DIVERGENCE_FLOOR: f64 = 1e-12;

/// The four joint tables of a channel, row-major over `(y, z)`:
/// entry `y * z_size + z` holds `W(y, z | x, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelTables {
    pub y_size: usize,
    pub z_size: usize,
    pub x0_theta0: Vec<f64>,
    pub x0_theta1: Vec<f64>,
    pub x1_theta0: Vec<f64>,
    pub x1_theta1: Vec<f64>,
}

impl ChannelTables {
    /// Builds the tables of a channel whose outputs are conditionally
    /// independent: `W(y, z | x, theta) = P^x_theta(y) Q^x_theta(z)`.
    /// Both arrays are indexed `[x][theta]`.
    pub fn product(alice: [[&Pmf; 2]; 2], eve: [[&Pmf; 2]; 2]) -> Result<Self> {
        let y_size = alice[0][0].support_size();
        let z_size = eve[0][0].support_size();
        let table = |x: usize, theta: usize| -> Result<Vec<f64>> {
            let (p, q) = (alice[x][theta], eve[x][theta]);
            if p.support_size() != y_size || q.support_size() != z_size {
                return Err(Error::InvalidChannel("marginals have inconsistent alphabets".into()));
            }
            Ok(p.mass()
                .iter()
                .flat_map(|py| q.mass().iter().map(move |qz| py * qz))
                .collect())
        };
        Ok(Self {
            y_size,
            z_size,
            x0_theta0: table(0, 0)?,
            x0_theta1: table(0, 1)?,
            x1_theta0: table(1, 0)?,
            x1_theta1: table(1, 1)?,
        })
    }

    /// The binary product channel of the reference numerical scenario:
    /// `P^1_0 = Ber(0.2)`, `P^1_1 = Ber(0.8)`, `P^0_0 = P^0_1 = Ber(0.5)`,
    /// `Q^1_0 = Ber(0.6)`, `Q^0_0 = Ber(0.4)`, `Q^1_1 = Ber(0.7)`, `Q^0_1 = Ber(0.3)`.
    pub fn reference() -> Self {
        let b = |p| Pmf::bernoulli(p).expect("valid Bernoulli parameter");
        let (p00, p01, p10, p11) = (b(0.5), b(0.5), b(0.2), b(0.8));
        let (q00, q01, q10, q11) = (b(0.4), b(0.3), b(0.6), b(0.7));
        Self::product([[&p00, &p01], [&p10, &p11]], [[&q00, &q01], [&q10, &q11]])
            .expect("reference channel is consistent")
    }

    fn slice(&self, x: usize, theta: usize) -> &[f64] {
        match (x, theta) {
            (0, 0) => &self.x0_theta0,
            (0, _) => &self.x0_theta1,
            (_, 0) => &self.x1_theta0,
            _ => &self.x1_theta1,
        }
    }
}

/// A validated channel together with its marginals and divergence constants.
#[derive(Debug, Clone)]
pub struct ChannelSpec {
    tables: ChannelTables,
    joint: [[Pmf; 2]; 2],
    alice: [[Pmf; 2]; 2],
    eve: [[Pmf; 2]; 2],
    samplers: [[WeightedIndex<f64>; 2]; 2],
    /// `ln(P^1_1(y) / P^1_0(y))`, `-inf` where `P^1_1(y) = 0`.
    llr: Vec<f64>,
    /// `D(P^1_1 || P^1_0)`.
    pub info: f64,
    /// `V(P^1_1 || P^1_0)`.
    pub info_second_moment: f64,
    /// `chi2(Q^1_0 || Q^0_0)`.
    pub chi2_pre: f64,
    /// `chi2(Q^1_1 || Q^0_1)`.
    pub chi2_post: f64,
}

/// Validates the joint tables and derives marginals and constants.
///
/// Rejects channels that break any modelling assumption: free passive
/// sensing (`P^0_1 != P^0_0`), zero or infinite active gain, and Eve
/// channels that either expose probes with certainty (`Q^1 not << Q^0`) or
/// cannot see them at all (`Q^1 = Q^0`).
pub fn build_channel(tables: ChannelTables) -> Result<ChannelSpec> {
    let (ny, nz) = (tables.y_size, tables.z_size);
    if ny == 0 || nz == 0 || ny > MAX_ALPHABET || nz > MAX_ALPHABET {
        return Err(Error::InvalidChannel(format!(
            "alphabet sizes |Y| = {ny}, |Z| = {nz} must lie in 1..={MAX_ALPHABET}"
        )));
    }
    let slice_pmf = |x: usize, theta: usize| -> Result<Pmf> {
        let s = tables.slice(x, theta);
        if s.len() != ny * nz {
            return Err(Error::InvalidChannel(format!(
                "table (x={x}, theta={theta}) has {} entries, expected {}",
                s.len(),
                ny * nz
            )));
        }
        Pmf::new(s.to_vec()).map_err(|e| {
            Error::InvalidChannel(format!("table (x={x}, theta={theta}): {e}"))
        })
    };
    let joint = [
        [slice_pmf(0, 0)?, slice_pmf(0, 1)?],
        [slice_pmf(1, 0)?, slice_pmf(1, 1)?],
    ];
    let alice_of = |w: &Pmf| {
        Pmf::new(
            (0..ny)
                .map(|y| w.mass()[y * nz..(y + 1) * nz].iter().sum())
                .collect(),
        )
    };
    let eve_of = |w: &Pmf| {
        Pmf::new(
            (0..nz)
                .map(|z| (0..ny).map(|y| w.prob(y * nz + z)).sum())
                .collect(),
        )
    };
    let alice = [
        [alice_of(&joint[0][0])?, alice_of(&joint[0][1])?],
        [alice_of(&joint[1][0])?, alice_of(&joint[1][1])?],
    ];
    let eve = [
        [eve_of(&joint[0][0])?, eve_of(&joint[0][1])?],
        [eve_of(&joint[1][0])?, eve_of(&joint[1][1])?],
    ];

    if let Some(symbol) = (0..ny).find(|&y| (alice[0][1].prob(y) - alice[0][0].prob(y)).abs() > PASSIVE_TOL) {
        return Err(Error::FreePassiveSensing { symbol });
    }

    let info = kl_divergence(&alice[1][1], &alice[1][0]).map_err(|_| Error::NoActiveGain(f64::INFINITY))?;
    if !(info > DIVERGENCE_FLOOR && info.is_finite()) {
        return Err(Error::NoActiveGain(info));
    }
    let info_second_moment = llr_second_moment(&alice[1][1], &alice[1][0])?;

    let mut chi2 = [0.0; 2];
    for (theta, c) in chi2.iter_mut().enumerate() {
        *c = chi2_divergence(&eve[1][theta], &eve[0][theta]).map_err(|e| Error::EveHiding {
            theta,
            reason: format!("Q^1 is not absolutely continuous w.r.t. Q^0 ({e})"),
        })?;
        if *c <= DIVERGENCE_FLOOR {
            return Err(Error::EveHiding {
                theta,
                reason: "Q^1 = Q^0, so probes are invisible and the covertness constraint is void".into(),
            });
        }
    }

    let llr = (0..ny)
        .map(|y| {
            let (p1, p0) = (alice[1][1].prob(y), alice[1][0].prob(y));
            if p1 == 0.0 {
                f64::NEG_INFINITY
            } else {
                (p1 / p0).ln()
            }
        })
        .collect();
    let samplers = [
        [sampler(&joint[0][0]), sampler(&joint[0][1])],
        [sampler(&joint[1][0]), sampler(&joint[1][1])],
    ];

    Ok(ChannelSpec {
        tables,
        joint,
        alice,
        eve,
        samplers,
        llr,
        info,
        info_second_moment,
        chi2_pre: chi2[0],
        chi2_post: chi2[1],
    })
}

fn sampler(p: &Pmf) -> WeightedIndex<f64> {
    WeightedIndex::new(p.mass()).expect("validated pmf has positive mass")
}

impl ChannelSpec {
    /// The reference binary channel, already validated.
    pub fn reference() -> Arc<Self> {
        Arc::new(build_channel(ChannelTables::reference()).expect("reference channel is valid"))
    }

    pub fn tables(&self) -> &ChannelTables {
        &self.tables
    }

    pub fn y_size(&self) -> usize {
        self.tables.y_size
    }

    pub fn z_size(&self) -> usize {
        self.tables.z_size
    }

    /// `W(. , . | x, theta)` over the flattened `(y, z)` alphabet.
    pub fn joint(&self, x: usize, theta: usize) -> &Pmf {
        &self.joint[x][theta]
    }

    /// Alice's marginal `P^x_theta`.
    pub fn alice(&self, x: usize, theta: usize) -> &Pmf {
        &self.alice[x][theta]
    }

    /// Eve's marginal `Q^x_theta`.
    pub fn eve(&self, x: usize, theta: usize) -> &Pmf {
        &self.eve[x][theta]
    }

    /// `chi2(Q^1_theta || Q^0_theta)`.
    pub fn chi2(&self, theta: usize) -> f64 {
        if theta == 0 {
            self.chi2_pre
        } else {
            self.chi2_post
        }
    }

    /// Unmodulated LLR `l(y) = ln(P^1_1(y) / P^1_0(y))`.
    pub fn llr(&self, y: usize) -> Result<f64> {
        self.llr
            .get(y)
            .copied()
            .ok_or(Error::InvalidSymbol { index: y, size: self.y_size() })
    }

    /// Modulated LLR `L(x, y) = ln(P^x_1(y) / P^x_0(y))`, computed from the
    /// marginals directly. Symbols impossible under both hypotheses give 0.
    pub fn modulated_llr(&self, x: usize, y: usize) -> Result<f64> {
        if x > 1 {
            return Err(Error::InvalidSymbol { index: x, size: 2 });
        }
        if y >= self.y_size() {
            return Err(Error::InvalidSymbol { index: y, size: self.y_size() });
        }
        let (p1, p0) = (self.alice[x][1].prob(y), self.alice[x][0].prob(y));
        Ok(match (p1 > 0.0, p0 > 0.0) {
            (false, false) => 0.0,
            (false, true) => f64::NEG_INFINITY,
            (true, false) => f64::INFINITY,
            (true, true) => (p1 / p0).ln(),
        })
    }

    /// Draws `(y, z)` from `W(. , . | x, theta)`.
    pub fn sample_observation<R: Rng + ?Sized>(&self, x: usize, theta: usize, rng: &mut R) -> (usize, usize) {
        let idx = self.samplers[x][theta].sample(rng);
        (idx / self.z_size(), idx % self.z_size())
    }
}

/// Draws `(y, z)` for action `x` in state `theta`.
pub fn sample_observation<R: Rng + ?Sized>(channel: &ChannelSpec, x: usize, theta: usize, rng: &mut R) -> (usize, usize) {
    channel.sample_observation(x, theta, rng)
}

/// Geometric changepoint prior `P(Gamma = k) = rho (1 - rho)^(k-1)`, `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub rho: f64,
    /// Tail exponent `|ln(1 - rho)|`.
    pub d: f64,
    /// `ln((1 - rho) / rho)`.
    pub c_rho: f64,
    /// `E[Gamma] = 1 / rho`.
    pub mean: f64,
}

impl Prior {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter {
                name: "rho",
                value: rho,
                reason: "prior parameter must lie in ]0, 1[",
            });
        }
        Ok(Self {
            rho,
            d: -(-rho).ln_1p(),
            c_rho: ((1.0 - rho) / rho).ln(),
            mean: 1.0 / rho,
        })
    }

    /// `pi_k`, zero for `k = 0`.
    pub fn pmf(&self, k: u64) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.rho * self.tail(k - 1)
        }
    }

    /// `T_n = P(Gamma > n) = exp(-d n)`.
    pub fn tail(&self, n: u64) -> f64 {
        (-self.d * n as f64).exp()
    }

    /// `ln(rho / (1 - rho)) = -c_rho`.
    pub fn log_hazard_odds(&self) -> f64 {
        -self.c_rho
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        sample_changepoint(self, rng)
    }
}

/// Draws `Gamma ~ Geo(rho)` on `{1, 2, ..}`.
pub fn sample_changepoint<R: Rng + ?Sized>(prior: &Prior, rng: &mut R) -> u64 {
    // rand_distr counts failures before the first success.
    let failures = rand_distr::Geometric::new(prior.rho)
        .expect("rho validated in ]0, 1[")
        .sample(rng);
    failures.saturating_add(1)
}

/// One operating point: channel, prior, covertness budget and PFA target.
///
/// The PFA target is carried as `|ln alpha|`, which is what experiment grids
/// enumerate; `alpha` is derived from it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub channel: Arc<ChannelSpec>,
    pub prior: Prior,
    /// Covertness budget on the ECB.
    pub delta: f64,
    pub abs_ln_alpha: f64,
    pub alpha: f64,
    /// Stopping time of the innocent policy, `ceil(|ln alpha| / d)`.
    pub n_alpha: u64,
    /// Shiryaev log-odds threshold `ln((1 - alpha) / alpha)`.
    pub b_alpha: f64,
}

impl Scenario {
    pub fn new(channel: Arc<ChannelSpec>, prior: Prior, delta: f64, abs_ln_alpha: f64) -> Result<Self> {
        if delta.is_nan() || delta < 0.0 {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "covertness budget must be non-negative",
            });
        }
        if abs_ln_alpha <= std::f64::consts::LN_2 || !abs_ln_alpha.is_finite() {
            return Err(Error::InvalidParameter {
                name: "|ln alpha|",
                value: abs_ln_alpha,
                reason: "alpha must lie in ]0, 1/2[",
            });
        }
        let alpha = (-abs_ln_alpha).exp();
        Ok(Self {
            channel,
            prior,
            delta,
            abs_ln_alpha,
            alpha,
            n_alpha: (abs_ln_alpha / prior.d).ceil().max(1.0) as u64,
            b_alpha: abs_ln_alpha + (-alpha).ln_1p(),
        })
    }

    /// The reference scenario: reference channel, `rho = 1/20`, `delta = 1/24`.
    pub fn reference(abs_ln_alpha: f64) -> Result<Self> {
        Self::new(
            ChannelSpec::reference(),
            Prior::new(1.0 / 20.0)?,
            1.0 / 24.0,
            abs_ln_alpha,
        )
    }

    /// Same channel, prior and budget at a different PFA target.
    pub fn with_abs_ln_alpha(&self, abs_ln_alpha: f64) -> Result<Self> {
        Self::new(self.channel.clone(), self.prior, self.delta, abs_ln_alpha)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.channel.clone(), self.prior, delta, self.abs_ln_alpha)
    }
}
