//! Lower-bound constructions.
//!
//! * The product revenue instance: each buyer is either "High" or "Low", the
//!   two laws share a support and give the same optimal value-to-go
//!   `(n+1−i)/(4n)` but different optimal prices.
//! * The correlated instance over a change-point class: a uniformly random
//!   decision point carries all of a trajectory's value.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{CorrelatedSource, DiscreteDist, MixtureComponent, ProductDist};
use crate::dp_policy::{Objective, Price, PricePolicy};
use crate::error::{Error, Result};
use crate::learners::{ChangePointSet, SegmentPrices};

/// Tolerance when matching a price against the canonical pair.
pub const CANONICAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    High,
    Low,
}

impl Level {
    pub fn flip(self) -> Self {
        match self {
            Level::High => Level::Low,
            Level::Low => Level::High,
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'H' => Some(Level::High),
            'L' => Some(Level::Low),
            _ => None,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::High => "H",
            Level::Low => "L",
        })
    }
}

/// How High/Low bits are chosen: listed explicitly (`"HLLH"`) or drawn
/// uniformly (`"random:<seed>"`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BitsSpec {
    Explicit(Vec<Level>),
    Random(u64),
}

impl BitsSpec {
    /// Resolve to exactly `len` levels.
    pub fn resolve(&self, len: usize) -> Result<Vec<Level>> {
        match self {
            BitsSpec::Explicit(bits) if bits.len() == len => Ok(bits.clone()),
            BitsSpec::Explicit(bits) => Err(Error::InvalidConfig(format!(
                "expected {len} High/Low bits, got {}",
                bits.len()
            ))),
            BitsSpec::Random(seed) => Ok(random_bits(len, *seed)),
        }
    }
}

impl FromStr for BitsSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(seed) = s.strip_prefix("random:") {
            let seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad bits seed in `{s}`")))?;
            return Ok(BitsSpec::Random(seed));
        }
        s.chars()
            .map(|c| Level::from_char(c).ok_or_else(|| Error::InvalidConfig(format!("bad bit `{c}` in `{s}`"))))
            .collect::<Result<Vec<_>>>()
            .map(BitsSpec::Explicit)
    }
}

impl fmt::Display for BitsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BitsSpec::Explicit(bits) => bits.iter().try_for_each(|b| write!(f, "{b}")),
            BitsSpec::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

/// Fair, independent High/Low bits.
pub fn random_bits(len: usize, seed: u64) -> Vec<Level> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| if rng.random_bool(0.5) { Level::High } else { Level::Low }).collect()
}

/// Configuration of the product revenue instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductHardConfig {
    n: usize,
    eps: f64,
    bits: Vec<Level>,
}

impl ProductHardConfig {
    pub fn new(n: usize, eps: f64, bits: Vec<Level>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("hard instance needs n >= 2, got {n}")));
        }
        if !(eps > 0.0 && eps <= 1.0 / 32.0) {
            return Err(Error::InvalidConfig(format!("eps must lie in (0, 1/32], got {eps}")));
        }
        if bits.len() != n {
            return Err(Error::InvalidConfig(format!("expected {n} bits, got {}", bits.len())));
        }
        Ok(Self { n, eps, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn bits(&self) -> &[Level] {
        &self.bits
    }

    /// `(low-optimal, high-optimal)` prices for 1-based buyer `i`:
    /// `(1/4 + (n−i)/4n, 1/2 + (n−i)/4n)`.
    pub fn canonical_prices(&self, i: usize) -> (f64, f64) {
        canonical_prices(self.n, i)
    }

    /// Policy posting the optimal price for every buyer, except the listed
    /// 1-based buyers, which get the other canonical price.
    pub fn policy_with_mistakes(&self, mistakes: &[usize]) -> PricePolicy {
        let prices = (1..=self.n)
            .map(|i| {
                let (low, high) = self.canonical_prices(i);
                let right = match self.bits[i - 1] {
                    Level::High => high,
                    Level::Low => low,
                };
                let wrong = if right == high { low } else { high };
                Price::Offer(if mistakes.contains(&i) { wrong } else { right })
            })
            .collect();
        PricePolicy::new(prices).expect("canonical prices lie in [0, 1]")
    }
}

pub fn canonical_prices(n: usize, i: usize) -> (f64, f64) {
    let shift = (n - i) as f64 / (4.0 * n as f64);
    (0.25 + shift, 0.5 + shift)
}

/// The High/Low marginal for 1-based buyer `i`.
pub fn hard_marginal(n: usize, eps: f64, i: usize, level: Level) -> Result<DiscreteDist> {
    let nf = n as f64;
    let (low_price, high_price) = canonical_prices(n, i);
    let half = 1.0 / (2.0 * nf);
    let probs = match level {
        Level::High => [1.0 - 1.0 / nf + 16.0 * eps / nf, half - 16.0 * eps / nf, half],
        Level::Low => [1.0 - 1.0 / nf, half + 8.0 * eps / nf, half - 8.0 * eps / nf],
    };
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-15 {
        return Err(Error::InvalidConfig(format!("buyer {i}: table row sums to {total}")));
    }
    DiscreteDist::new(vec![0.0, low_price, high_price], probs.to_vec())
}

/// Product distribution with each buyer's marginal set by its bit.
pub fn gen_product_revenue_hard(cfg: &ProductHardConfig) -> Result<ProductDist> {
    let marginals = cfg
        .bits
        .iter()
        .enumerate()
        .map(|(idx, &level)| hard_marginal(cfg.n, cfg.eps, idx + 1, level))
        .collect::<Result<Vec<_>>>()?;
    ProductDist::new(marginals)
}

/// Optimal value-to-go `((n+1−i)/(4n))_{i=1..n+1}`, identical for every configuration.
pub fn hard_optimal_values(n: usize) -> Vec<f64> {
    (1..=n + 1).map(|i| (n + 1 - i) as f64 / (4.0 * n as f64)).collect()
}

/// Number of buyers priced at the other configuration's optimum.
pub fn count_mistakes(policy: &PricePolicy, cfg: &ProductHardConfig) -> Result<usize> {
    if policy.n() != cfg.n {
        return Err(Error::LengthMismatch { expected: cfg.n, found: policy.n() });
    }
    let mut mistakes = 0;
    for (idx, (&price, &level)) in policy.prices().iter().zip(&cfg.bits).enumerate() {
        let buyer = idx + 1;
        let (low, high) = cfg.canonical_prices(buyer);
        let p = price
            .as_offer()
            .ok_or_else(|| Error::NonCanonicalPrice { buyer, price: price.to_string() })?;
        let posted = if (p - low).abs() <= CANONICAL_TOL {
            Level::Low
        } else if (p - high).abs() <= CANONICAL_TOL {
            Level::High
        } else {
            return Err(Error::NonCanonicalPrice { buyer, price: price.to_string() });
        };
        if posted != level {
            mistakes += 1;
        }
    }
    Ok(mistakes)
}

/// Upper bound `1/4 − 2ε (M/n)((M+1)/n)` on the revenue of an `M`-mistake policy.
pub fn mistake_loss_bound(n: usize, eps: f64, mistakes: usize) -> f64 {
    let nf = n as f64;
    let m = mistakes as f64;
    0.25 - 2.0 * eps * (m / nf) * ((m + 1.0) / nf)
}

/// `(√(C(C+x)), C + x/2 − x²/(2C))`; the first is never below the second.
pub fn taylor_lower_bound(c: f64, x: f64) -> Result<(f64, f64)> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Domain(format!("C must be positive, got {c}")));
    }
    if x.is_nan() || x < -c {
        return Err(Error::Domain(format!("x = {x} is below -C = {}", -c)));
    }
    let lhs = (c * (c + x)).max(0.0).sqrt();
    let rhs = c + x / 2.0 - x * x / (2.0 * c);
    Ok((lhs, rhs))
}

/// Decision points `S′ ⊆ {1} ∪ S` (1-based, ascending).
///
/// Revenue uses every point. Welfare scans `{1} ∪ S` in ascending order and
/// keeps `i` when `i + 1 ≤ n` and `i − 1` was not kept, so no kept point is
/// followed by another kept point.
pub fn decision_points(cps: &ChangePointSet, obj: Objective) -> Vec<usize> {
    let candidates = std::iter::once(1).chain(cps.points().iter().copied());
    match obj {
        Objective::Revenue => candidates.collect(),
        Objective::Welfare => {
            let mut kept: Vec<usize> = Vec::new();
            for i in candidates {
                let follows_kept = kept.last().is_some_and(|&last| last + 1 == i);
                if i < cps.n() && !follows_kept {
                    kept.push(i);
                }
            }
            kept
        }
    }
}

/// Configuration of the correlated change-point instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedHardConfig {
    cps: ChangePointSet,
    eps: f64,
    objective: Objective,
    sprime: Vec<usize>,
    bits: Vec<Level>,
}

impl CorrelatedHardConfig {
    /// `bits[m]` is the level of the `m`-th decision point in [`decision_points`] order.
    pub fn new(cps: ChangePointSet, eps: f64, objective: Objective, bits: &BitsSpec) -> Result<Self> {
        let sprime = decision_points(&cps, objective);
        let bits = bits.resolve(sprime.len())?;
        Self::with_decision_points(cps, eps, objective, sprime, bits)
    }

    /// Validate an explicit decision-point set.
    pub fn with_decision_points(
        cps: ChangePointSet,
        eps: f64,
        objective: Objective,
        sprime: Vec<usize>,
        bits: Vec<Level>,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidConfig(format!("eps must lie in (0, 1/2), got {eps}")));
        }
        if sprime.is_empty() {
            return Err(Error::InvalidConfig("no decision points".into()));
        }
        if bits.len() != sprime.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} bits, got {}",
                sprime.len(),
                bits.len()
            )));
        }
        if sprime.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("decision points must be strictly increasing".into()));
        }
        for &i in &sprime {
            if i != 1 && !cps.points().contains(&i) {
                return Err(Error::InvalidConfig(format!("decision point {i} is not in {{1}} ∪ S")));
            }
            if objective == Objective::Welfare && (i + 1 > cps.n() || sprime.contains(&(i + 1))) {
                return Err(Error::InvalidConfig(format!(
                    "welfare decision point {i} needs a free successor buyer"
                )));
            }
        }
        let floor = cps.k() / 2;
        if sprime.len() < floor {
            return Err(Error::InvalidConfig(format!(
                "only {} decision points, need at least {floor}",
                sprime.len()
            )));
        }
        Ok(Self { cps, eps, objective, sprime, bits })
    }

    pub fn cps(&self) -> &ChangePointSet {
        &self.cps
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn decision_points(&self) -> &[usize] {
        &self.sprime
    }

    pub fn bits(&self) -> &[Level] {
        &self.bits
    }

    /// Same instance with the bit at decision-point position `m` flipped.
    pub fn flipped(&self, m: usize) -> Self {
        let mut out = self.clone();
        out.bits[m] = out.bits[m].flip();
        out
    }
}

/// Equal-weight mixture over decision points; all other coordinates are 0.
pub fn gen_correlated_hard(cfg: &CorrelatedHardConfig) -> Result<CorrelatedSource> {
    let n = cfg.cps.n();
    let weight = 1.0 / cfg.sprime.len() as f64;
    let up = 0.5 + cfg.eps;
    let down = 0.5 - cfg.eps;
    let zero = DiscreteDist::point_mass(0.0)?;
    let components = cfg
        .sprime
        .iter()
        .zip(&cfg.bits)
        .map(|(&point, &level)| {
            let p_one = if level == Level::High { up } else { down };
            let mut marginals = vec![zero.clone(); n];
            match cfg.objective {
                Objective::Welfare => {
                    marginals[point - 1] = DiscreteDist::point_mass(0.5)?;
                    marginals[point] = DiscreteDist::new(vec![0.0, 1.0], vec![1.0 - p_one, p_one])?;
                }
                Objective::Revenue => {
                    marginals[point - 1] = DiscreteDist::new(vec![0.5, 1.0], vec![1.0 - p_one, p_one])?;
                }
            }
            Ok(MixtureComponent { weight, marginals: ProductDist::new(marginals)? })
        })
        .collect::<Result<Vec<_>>>()?;
    CorrelatedSource::mixture(components)
}

/// Optimal value and segment prices: 1 at High decision segments, 1/2 at
/// Low ones, 1 elsewhere.
pub fn correlated_hard_optimum(cfg: &CorrelatedHardConfig) -> Result<(f64, SegmentPrices)> {
    let mut rho = vec![Price::Offer(1.0); cfg.cps.k()];
    let mut total = 0.0;
    for (&point, &level) in cfg.sprime.iter().zip(&cfg.bits) {
        let seg = cfg.cps.segment_of(point - 1);
        match level {
            Level::High => {
                rho[seg] = Price::Offer(1.0);
                total += 0.5 + cfg.eps;
            }
            Level::Low => {
                rho[seg] = Price::Offer(0.5);
                total += 0.5;
            }
        }
    }
    Ok((total / cfg.sprime.len() as f64, SegmentPrices(rho)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardKind {
    Product,
    Correlated,
}

fn default_hard_objective() -> Objective {
    Objective::Revenue
}

/// File form of a hard instance, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardInstanceSpec {
    pub kind: HardKind,
    pub n: usize,
    pub eps: f64,
    /// `"HLLH"` style or `"random:<seed>"`; defaults to `random:0`.
    #[serde(default)]
    pub bits: Option<String>,
    /// Change points for the correlated kind.
    #[serde(default)]
    pub change_points: Vec<usize>,
    /// The product kind is revenue only.
    #[serde(default = "default_hard_objective")]
    pub objective: Objective,
}

/// A generated instance with its optimal policy and value.
#[derive(Debug, Clone)]
pub struct HardInstance {
    pub source: CorrelatedSource,
    pub optimal_policy: PricePolicy,
    pub optimal_value: f64,
}

impl HardInstanceSpec {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("line {}: {e}", e.line())))
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))
        }
    }

    fn bits_spec(&self) -> Result<BitsSpec> {
        self.bits.as_deref().unwrap_or("random:0").parse()
    }

    pub fn build(&self) -> Result<HardInstance> {
        let invalid = |e: Error| Error::InvalidConfig(e.to_string());
        match self.kind {
            HardKind::Product => {
                if self.objective != Objective::Revenue {
                    return Err(Error::InvalidConfig("the product instance is revenue only".into()));
                }
                let bits = self.bits_spec()?.resolve(self.n).map_err(invalid)?;
                let cfg = ProductHardConfig::new(self.n, self.eps, bits).map_err(invalid)?;
                let optimal_policy = cfg.policy_with_mistakes(&[]);
                Ok(HardInstance {
                    source: gen_product_revenue_hard(&cfg)?.into(),
                    optimal_policy,
                    optimal_value: 0.25,
                })
            }
            HardKind::Correlated => {
                let cps = ChangePointSet::new(self.n, self.change_points.clone()).map_err(invalid)?;
                let cfg = CorrelatedHardConfig::new(cps, self.eps, self.objective, &self.bits_spec()?).map_err(invalid)?;
                let (optimal_value, rho) = correlated_hard_optimum(&cfg)?;
                Ok(HardInstance {
                    source: gen_correlated_hard(&cfg)?,
                    optimal_policy: crate::learners::expand(cfg.cps(), &rho)?,
                    optimal_value,
                })
            }
        }
    }
}
