//! Finite probability mass functions and the divergence functionals used by
//! every other module.
//!
//! All logarithms are natural. Terms with `p_i = 0` contribute nothing,
//! whatever `q_i` is (the `0 ln 0 = 0` convention).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalization tolerance accepted on construction.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A probability mass function over `{0, .., n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pmf {
    mass: Vec<f64>,
}

impl Pmf {
    /// Validates `mass` and renormalizes it so it sums to one exactly (up to
    /// rounding). Entries must be finite and non-negative, and the total must
    /// be within [`NORMALIZATION_TOL`] of one.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidPmf("empty support".into()));
        }
        if let Some((i, &m)) = mass
            .iter()
            .enumerate()
            .find(|(_, m)| !m.is_finite() || **m < 0.0)
        {
            return Err(Error::InvalidPmf(format!("entry {i} = {m} is not a probability")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidPmf(format!("entries sum to {total}, not 1")));
        }
        let mass = mass.into_iter().map(|m| m / total).collect();
        Ok(Self { mass })
    }

    /// `Ber(p)` as a PMF over `{0, 1}` with `P(1) = p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter {
                name: "p",
                value: p,
                reason: "Bernoulli parameter must lie in [0, 1]",
            });
        }
        Self::new(vec![1.0 - p, p])
    }

    /// Point mass on `symbol` within an alphabet of `size` symbols.
    pub fn point(size: usize, symbol: usize) -> Result<Self> {
        if symbol >= size {
            return Err(Error::InvalidSymbol { index: symbol, size });
        }
        let mut mass = vec![0.0; size];
        mass[symbol] = 1.0;
        Self::new(mass)
    }

    pub fn support_size(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn prob(&self, symbol: usize) -> f64 {
        self.mass[symbol]
    }

    /// `true` if every entry agrees with `other` within `tol`.
    pub fn approx_eq(&self, other: &Pmf, tol: f64) -> bool {
        self.mass.len() == other.mass.len()
            && self
                .mass
                .iter()
                .zip(&other.mass)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Returns `(p, q)` pairs after checking the support sizes agree and `p << q`.
    fn paired<'a>(&'a self, q: &'a Pmf) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
        if self.mass.len() != q.mass.len() {
            return Err(Error::SupportMismatch {
                left: self.mass.len(),
                right: q.mass.len(),
            });
        }
        if let Some((symbol, (&p, _))) = self
            .mass
            .iter()
            .zip(&q.mass)
            .enumerate()
            .find(|(_, (&p, &q))| p > 0.0 && q == 0.0)
        {
            return Err(Error::NotAbsolutelyContinuous { symbol, p });
        }
        Ok(self.mass.iter().copied().zip(q.mass.iter().copied()))
    }
}

impl TryFrom<Vec<f64>> for Pmf {
    type Error = Error;

    fn try_from(mass: Vec<f64>) -> Result<Self> {
        Pmf::new(mass)
    }
}

impl From<Pmf> for Vec<f64> {
    fn from(p: Pmf) -> Self {
        p.mass
    }
}

/// Relative entropy `D(p || q) = sum p_i ln(p_i / q_i)` in nats.
pub fn kl_divergence(p: &Pmf, q: &Pmf) -> Result<f64> {
    let kl: f64 = p
        .paired(q)?
        .filter(|(p, _)| *p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum();
    // Rounding can leave a tiny negative value for p == q.
    Ok(kl.max(0.0))
}

/// Second moment of the log-likelihood ratio, `sum p_i (ln(p_i / q_i))^2`.
pub fn llr_second_moment(p: &Pmf, q: &Pmf) -> Result<f64> {
    Ok(p.paired(q)?
        .filter(|(p, _)| *p > 0.0)
        .map(|(p, q)| p * (p / q).ln().powi(2))
        .sum())
}

/// Chi-squared divergence `sum (p_i - q_i)^2 / q_i`.
pub fn chi2_divergence(p: &Pmf, q: &Pmf) -> Result<f64> {
    Ok(p.paired(q)?
        .filter(|(_, q)| *q > 0.0)
        .map(|(p, q)| (p - q).powi(2) / q)
        .sum())
}

/// The three divergences of one ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergencePair {
    /// Relative entropy (nats).
    pub kl: f64,
    /// LLR second moment (nats^2).
    pub second_moment: f64,
    pub chi2: f64,
}

impl DivergencePair {
    pub fn between(p: &Pmf, q: &Pmf) -> Result<Self> {
        Ok(Self {
            kl: kl_divergence(p, q)?,
            second_moment: llr_second_moment(p, q)?,
            chi2: chi2_divergence(p, q)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ber(p: f64) -> Pmf {
        Pmf::bernoulli(p).unwrap()
    }

    #[test]
    fn kl_matches_hand_values() {
        let d = kl_divergence(&ber(0.8), &ber(0.2)).unwrap();
        assert!((d - 0.6 * 4f64.ln()).abs() < 1e-15);
        assert!((d - 0.83178).abs() < 1e-5);

        let d = kl_divergence(&ber(0.7), &ber(0.3)).unwrap();
        assert!((d - 0.4 * (7.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((d - 0.338919).abs() < 1e-6);

        assert_eq!(kl_divergence(&ber(0.37), &ber(0.37)).unwrap(), 0.0);
    }

    #[test]
    fn second_moment_matches_hand_values() {
        let v = llr_second_moment(&ber(0.8), &ber(0.2)).unwrap();
        assert!((v - 4f64.ln().powi(2)).abs() < 1e-14);
        assert!((v - 1.92181).abs() < 1e-5);

        let v = llr_second_moment(&ber(0.7), &ber(0.3)).unwrap();
        assert!((v - (7.0f64 / 3.0).ln().powi(2)).abs() < 1e-14);
        assert!((v - 0.717914).abs() < 1e-6);

        assert_eq!(llr_second_moment(&ber(0.5), &ber(0.5)).unwrap(), 0.0);
    }

    #[test]
    fn chi2_matches_hand_values() {
        let c = chi2_divergence(&ber(0.7), &ber(0.3)).unwrap();
        assert!((c - 16.0 / 21.0).abs() < 1e-14);
        let c = chi2_divergence(&ber(0.6), &ber(0.4)).unwrap();
        assert!((c - 1.0 / 6.0).abs() < 1e-14);
        assert_eq!(chi2_divergence(&ber(0.2), &ber(0.2)).unwrap(), 0.0);
    }

    #[test]
    fn zero_mass_terms_are_dropped() {
        let p = Pmf::new(vec![0.0, 0.5, 0.5]).unwrap();
        let q = Pmf::new(vec![0.0, 0.25, 0.75]).unwrap();
        let d = kl_divergence(&p, &q).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert!((d - expected).abs() < 1e-15);
        assert!(chi2_divergence(&p, &q).unwrap().is_finite());
    }

    #[test]
    fn errors() {
        let p3 = Pmf::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(
            kl_divergence(&ber(0.5), &p3),
            Err(Error::SupportMismatch { left: 2, right: 3 })
        ));
        assert!(matches!(
            chi2_divergence(&ber(0.5), &ber(1.0)),
            Err(Error::NotAbsolutelyContinuous { symbol: 0, .. })
        ));
        assert!(Pmf::new(vec![0.5, 0.6]).is_err());
        assert!(Pmf::new(vec![-0.1, 1.1]).is_err());
        assert!(Pmf::new(vec![]).is_err());
        assert!(Pmf::new(vec![f64::NAN, 1.0]).is_err());
        // Degenerate single-symbol support is allowed.
        assert_eq!(Pmf::new(vec![1.0]).unwrap().support_size(), 1);
    }

    #[test]
    fn json_round_trip_validates() {
        let p: Pmf = serde_json::from_str("[0.25, 0.75]").unwrap();
        assert_eq!(p.prob(1), 0.75);
        assert!(serde_json::from_str::<Pmf>("[0.25, 0.7]").is_err());
    }

    fn pmf_pair(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.01f64..1.0, n),
        )
    }

    fn normalize(w: &[f64]) -> Option<Pmf> {
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return None;
        }
        Pmf::new(w.iter().map(|x| x / s).collect()).ok()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn divergence_inequalities((pw, qw) in (2usize..8).prop_flat_map(pmf_pair)) {
            let (Some(p), Some(q)) = (normalize(&pw), normalize(&qw)) else { return Ok(()); };
            let pair = DivergencePair::between(&p, &q).unwrap();
            prop_assert!(pair.kl >= 0.0);
            prop_assert!(pair.chi2 >= 0.0);
            prop_assert!(pair.second_moment + 1e-10 >= pair.kl * pair.kl);
            // ln(1+x) <= x gives D <= chi2.
            prop_assert!(pair.kl <= pair.chi2 + 1e-12);
        }

        #[test]
        fn kl_zero_iff_equal((pw, qw) in (2usize..6).prop_flat_map(pmf_pair)) {
            let (Some(p), Some(q)) = (normalize(&pw), normalize(&qw)) else { return Ok(()); };
            prop_assert!(kl_divergence(&q, &q).unwrap() < 1e-15);
            if !p.approx_eq(&q, 1e-6) {
                prop_assert!(kl_divergence(&p, &q).unwrap() > 0.0);
            }
        }

        #[test]
        fn permutation_invariance(
            (pw, qw) in (2usize..7).prop_flat_map(pmf_pair),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (Some(p), Some(q)) = (normalize(&pw), normalize(&qw)) else { return Ok(()); };
            let mut order: Vec<usize> = (0..p.support_size()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let pp = Pmf::new(order.iter().map(|&i| p.prob(i)).collect()).unwrap();
            let qp = Pmf::new(order.iter().map(|&i| q.prob(i)).collect()).unwrap();
            let a = DivergencePair::between(&p, &q).unwrap();
            let b = DivergencePair::between(&pp, &qp).unwrap();
            prop_assert!((a.kl - b.kl).abs() <= 1e-12 * (1.0 + a.kl));
            prop_assert!((a.chi2 - b.chi2).abs() <= 1e-12 * (1.0 + a.chi2));
            prop_assert!((a.second_moment - b.second_moment).abs() <= 1e-12 * (1.0 + a.second_moment));
        }
    }
}
