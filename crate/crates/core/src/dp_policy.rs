//! Posted-price policies: optimal backward induction for known product
//! distributions and exact / Monte Carlo / sample-average evaluation.
//!
//! Buyer `i` buys iff the item is unsold and `V_i ≥ π_i`; a [`Price::Reject`]
//! entry never sells.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{CorrelatedSource, DiscreteDist, ProductDist, SampleSet};
use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, mean_stderr, CompensatedSum};

/// Margin a later revenue candidate must clear to replace an earlier one.
pub const REVENUE_TIE_TOL: f64 = 1e-12;

/// A price offered to one buyer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Price {
    Offer(f64),
    /// Never sell to this buyer.
    Reject,
}

impl Price {
    pub fn offer(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(Price::Offer(p))
        } else {
            Err(Error::OutOfRange { value: p })
        }
    }

    #[inline]
    pub fn accepts(self, value: f64) -> bool {
        match self {
            Price::Offer(p) => value >= p,
            Price::Reject => false,
        }
    }

    pub fn as_offer(self) -> Option<f64> {
        match self {
            Price::Offer(p) => Some(p),
            Price::Reject => None,
        }
    }

    /// Ordering key where `Reject` sorts after every offer.
    pub fn sort_key(self) -> f64 {
        match self {
            Price::Offer(p) => p,
            Price::Reject => f64::INFINITY,
        }
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Price::Offer(p) => write!(f, "{p}"),
            Price::Reject => f.write_str("REJECT"),
        }
    }
}

impl FromStr for Price {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "REJECT" {
            return Ok(Price::Reject);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| Error::Parse { line: 1, msg: format!("bad price token `{s}`") })?;
        Price::offer(p)
    }
}

impl Serialize for Price {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Price::Offer(p) => ser.serialize_f64(*p),
            Price::Reject => ser.serialize_str("REJECT"),
        }
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tok(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(p) => Price::offer(p).map_err(serde::de::Error::custom),
            Raw::Tok(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// What the seller is paid for: the winner's value, or the price they pay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Welfare,
    Revenue,
}

impl Objective {
    /// Payoff when a buyer with `value` accepts `price`.
    #[inline]
    pub fn payoff(self, value: f64, price: f64) -> f64 {
        match self {
            Objective::Welfare => value,
            Objective::Revenue => price,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Welfare => "welfare",
            Objective::Revenue => "revenue",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "welfare" => Ok(Objective::Welfare),
            "revenue" => Ok(Objective::Revenue),
            other => Err(Error::InvalidConfig(format!("unknown objective `{other}`"))),
        }
    }
}

/// A full price vector `(π_1, …, π_n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Price>", into = "Vec<Price>")]
pub struct PricePolicy {
    prices: Vec<Price>,
}

impl TryFrom<Vec<Price>> for PricePolicy {
    type Error = Error;
    fn try_from(prices: Vec<Price>) -> Result<Self> {
        PricePolicy::new(prices)
    }
}

impl From<PricePolicy> for Vec<Price> {
    fn from(p: PricePolicy) -> Self {
        p.prices
    }
}

impl PricePolicy {
    pub fn new(prices: Vec<Price>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::Empty("prices"));
        }
        for p in &prices {
            if let Price::Offer(x) = p {
                if !(0.0..=1.0).contains(x) {
                    return Err(Error::OutOfRange { value: *x });
                }
            }
        }
        Ok(Self { prices })
    }

    /// Policy offering the given numeric prices.
    pub fn from_offers(prices: &[f64]) -> Result<Self> {
        Self::new(prices.iter().map(|&p| Price::Offer(p)).collect())
    }

    pub fn reject_all(n: usize) -> Result<Self> {
        Self::new(vec![Price::Reject; n])
    }

    pub fn n(&self) -> usize {
        self.prices.len()
    }

    pub fn prices(&self) -> &[Price] {
        &self.prices
    }

    /// Realized objective on one trajectory under the first-acceptance rule.
    pub fn outcome(&self, values: &[f64], obj: Objective) -> f64 {
        for (&price, &v) in self.prices.iter().zip(values) {
            if price.accepts(v) {
                // accepted prices are always offers
                return obj.payoff(v, price.as_offer().unwrap_or(0.0));
            }
        }
        0.0
    }
}

/// Value-to-go `r_1..r_{n+1}` (stored 0-based, last entry 0) and the policy it induces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DPResult {
    pub value_to_go: Vec<f64>,
    pub policy: PricePolicy,
    pub objective: Objective,
}

impl DPResult {
    /// Optimal expected objective from the first buyer.
    pub fn value(&self) -> f64 {
        self.value_to_go[0]
    }
}

/// Welfare backward induction: `r_i = E[max(r_{i+1}, V_i)]`, `π_i = r_{i+1}`.
///
/// Evaluated through the same accept-set sums as [`policy_value_to_go`], so a
/// policy accepting the same support points scores bit-identically.
pub fn welfare_dp(pd: &ProductDist) -> DPResult {
    let n = pd.n();
    let mut r = vec![0.0; n + 1];
    let mut prices = vec![Price::Reject; n];
    for i in (0..n).rev() {
        let next = r[i + 1];
        prices[i] = Price::Offer(next);
        r[i] = offer_value(pd.marginal(i), next, next, Objective::Welfare);
    }
    DPResult {
        value_to_go: r,
        policy: PricePolicy { prices },
        objective: Objective::Welfare,
    }
}

/// Best revenue price for one buyer given the continuation value.
///
/// Candidates are the support points in ascending order and then `Reject`;
/// a later candidate wins only if it beats the incumbent by more than
/// [`REVENUE_TIE_TOL`].
pub fn revenue_step(d: &DiscreteDist, next: f64) -> (Price, f64) {
    let mut below = CompensatedSum::new();
    let total = compensated_sum(d.probs().iter().copied());
    let mut best: Option<(Price, f64)> = None;
    for (p, prob) in d.iter() {
        let below_p = below.value();
        let tail = (total - below_p).max(0.0);
        let value = p * tail + next * below_p;
        if best.is_none_or(|(_, b)| value > b + REVENUE_TIE_TOL) {
            best = Some((Price::Offer(p), value));
        }
        below.add(prob);
    }
    let (price, value) = best.expect("distribution has nonempty support");
    if next > value + REVENUE_TIE_TOL {
        (Price::Reject, next)
    } else {
        (price, value)
    }
}

/// Revenue backward induction over candidate prices `support(D_i) ∪ {Reject}`.
pub fn revenue_dp(pd: &ProductDist) -> DPResult {
    let n = pd.n();
    let mut r = vec![0.0; n + 1];
    let mut prices = vec![Price::Reject; n];
    for i in (0..n).rev() {
        let (price, value) = revenue_step(pd.marginal(i), r[i + 1]);
        prices[i] = price;
        r[i] = value.clamp(0.0, 1.0);
    }
    DPResult {
        value_to_go: r,
        policy: PricePolicy { prices },
        objective: Objective::Revenue,
    }
}

/// Optimal policy for `obj` on a known product distribution.
pub fn optimal_dp(pd: &ProductDist, obj: Objective) -> DPResult {
    match obj {
        Objective::Welfare => welfare_dp(pd),
        Objective::Revenue => revenue_dp(pd),
    }
}

/// Value of offering `price` to a buyer with law `d` when the continuation is `next`:
/// `next + Σ_{v ≥ price} p(v) (payoff − next)`.
fn offer_value(d: &DiscreteDist, price: f64, next: f64, obj: Objective) -> f64 {
    let mut gain = CompensatedSum::new();
    for (v, p) in d.iter().filter(|&(v, _)| v >= price) {
        gain.add(p * (obj.payoff(v, price) - next));
    }
    next + gain.value()
}

/// Exact value-to-go of `policy` on a product distribution (length `n+1`).
pub fn policy_value_to_go(pd: &ProductDist, policy: &PricePolicy, obj: Objective) -> Result<Vec<f64>> {
    if pd.n() != policy.n() {
        return Err(Error::LengthMismatch { expected: pd.n(), found: policy.n() });
    }
    let n = pd.n();
    let mut w = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let next = w[i + 1];
        w[i] = match policy.prices[i] {
            Price::Reject => next,
            Price::Offer(price) => offer_value(pd.marginal(i), price, next, obj),
        };
    }
    Ok(w)
}

/// Exact expected objective of `policy` under `src`.
pub fn eval_exact(src: &CorrelatedSource, policy: &PricePolicy, obj: Objective) -> Result<f64> {
    if src.n() != policy.n() {
        return Err(Error::LengthMismatch { expected: src.n(), found: policy.n() });
    }
    let mut acc = CompensatedSum::new();
    for (weight, pd) in src.components() {
        acc.add(weight * policy_value_to_go(pd, policy, obj)?[0]);
    }
    Ok(acc.value())
}

/// Monte Carlo estimate `(mean, stderr)` over `count` trajectories.
///
/// Uses the same row streams as [`crate::distributions::sample_trajectories`],
/// so the estimate equals [`eval_on_samples`] on that sample set.
pub fn eval_monte_carlo(
    src: &CorrelatedSource,
    policy: &PricePolicy,
    obj: Objective,
    count: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if src.n() != policy.n() {
        return Err(Error::LengthMismatch { expected: src.n(), found: policy.n() });
    }
    if count < 2 {
        return Err(Error::Domain(format!("Monte Carlo needs at least 2 trajectories, got {count}")));
    }
    let n = src.n();
    let outcomes: Vec<f64> = (0..count as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |row, t| {
                src.sample_row(seed, t, row);
                policy.outcome(row, obj)
            },
        )
        .collect();
    Ok(mean_stderr(&outcomes))
}

/// Average realized objective over the rows of `s`.
pub fn eval_on_samples(s: &SampleSet, policy: &PricePolicy, obj: Objective) -> Result<f64> {
    if s.n() != policy.n() {
        return Err(Error::LengthMismatch { expected: policy.n(), found: s.n() });
    }
    let total = compensated_sum(s.rows().map(|row| policy.outcome(row, obj)));
    Ok(total / s.len() as f64)
}
