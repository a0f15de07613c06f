//! Buyer value distributions, sample sets and information distances.
//!
//! All values live in `[0, 1]`. Inputs outside that range are rejected, never
//! clipped. Finite distributions are stored in canonical form (ascending,
//! duplicate support points merged) so equality and distances are
//! well-defined.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, stream_rng};

/// Absolute tolerance on the total probability mass.
pub const NORMALIZATION_TOL: f64 = 1e-9;

fn check_unit(value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange { value })
    }
}

/// A finite distribution over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiscrete", into = "RawDiscrete")]
pub struct DiscreteDist {
    support: Vec<f64>,
    probs: Vec<f64>,
    // sampling table; entries from the last positive-mass point on are 1.0
    cdf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawDiscrete {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawDiscrete> for DiscreteDist {
    type Error = Error;
    fn try_from(raw: RawDiscrete) -> Result<Self> {
        DiscreteDist::new(raw.support, raw.probs)
    }
}

impl From<DiscreteDist> for RawDiscrete {
    fn from(d: DiscreteDist) -> Self {
        RawDiscrete { support: d.support, probs: d.probs }
    }
}

impl DiscreteDist {
    /// Validate and canonicalize `(support, probs)`.
    ///
    /// Unsorted supports are sorted; probabilities at duplicate values are
    /// merged.
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Empty("support"));
        }
        if support.len() != probs.len() {
            return Err(Error::LengthMismatch { expected: support.len(), found: probs.len() });
        }
        for &v in &support {
            check_unit(v)?;
        }
        for &p in &probs {
            if p.is_nan() || p < 0.0 {
                return Err(Error::NegativeProb { prob: p });
            }
        }
        let sum = compensated_sum(probs.iter().copied());
        if !sum.is_finite() || (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NonNormalized { sum });
        }

        let mut pairs: Vec<(f64, f64)> = support.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            match support.last() {
                // -0.0 and 0.0 compare equal and are merged here
                Some(&last) if last == v => *probs.last_mut().unwrap() += p,
                _ => {
                    support.push(if v == 0.0 { 0.0 } else { v });
                    probs.push(p);
                }
            }
        }
        let cdf = build_cdf(&probs);
        Ok(Self { support, probs, cdf })
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new(vec![value], vec![1.0])
    }

    /// Uniform distribution over the given values (duplicates accumulate mass).
    pub fn uniform(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("values"));
        }
        let p = 1.0 / values.len() as f64;
        Self::new(values.to_vec(), vec![p; values.len()])
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Iterate `(value, probability)` pairs in ascending value order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }

    /// `E[f(V)]` with compensated summation.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        compensated_sum(self.iter().map(|(v, p)| p * f(v)))
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    /// Draw one value.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        self.support[idx.min(self.support.len() - 1)]
    }
}

fn build_cdf(probs: &[f64]) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    if let Some(last_pos) = probs.iter().rposition(|&p| p > 0.0) {
        for c in &mut cdf[last_pos..] {
            *c = 1.0;
        }
    }
    cdf
}

/// Independent buyers: `D_1 × … × D_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DiscreteDist>", into = "Vec<DiscreteDist>")]
pub struct ProductDist {
    marginals: Vec<DiscreteDist>,
}

impl TryFrom<Vec<DiscreteDist>> for ProductDist {
    type Error = Error;
    fn try_from(marginals: Vec<DiscreteDist>) -> Result<Self> {
        ProductDist::new(marginals)
    }
}

impl From<ProductDist> for Vec<DiscreteDist> {
    fn from(p: ProductDist) -> Self {
        p.marginals
    }
}

impl ProductDist {
    pub fn new(marginals: Vec<DiscreteDist>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Empty("marginals"));
        }
        Ok(Self { marginals })
    }

    pub fn n(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[DiscreteDist] {
        &self.marginals
    }

    pub fn marginal(&self, i: usize) -> &DiscreteDist {
        &self.marginals[i]
    }

    fn sample_into<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (slot, d) in out.iter_mut().zip(&self.marginals) {
            *slot = d.sample(rng);
        }
    }
}

/// One component of a finite mixture: buyers independent within it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub marginals: ProductDist,
}

/// A distribution over trajectories `[0,1]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawSource")]
pub enum CorrelatedSource {
    Product { marginals: ProductDist },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawSource {
    Product { marginals: ProductDist },
    Mixture { components: Vec<MixtureComponent> },
}

impl TryFrom<RawSource> for CorrelatedSource {
    type Error = Error;
    fn try_from(raw: RawSource) -> Result<Self> {
        match raw {
            RawSource::Product { marginals } => Ok(CorrelatedSource::Product { marginals }),
            RawSource::Mixture { components } => CorrelatedSource::mixture(components),
        }
    }
}

impl From<ProductDist> for CorrelatedSource {
    fn from(marginals: ProductDist) -> Self {
        CorrelatedSource::Product { marginals }
    }
}

impl CorrelatedSource {
    /// Validated finite mixture.
    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components.first().ok_or(Error::Empty("mixture components"))?;
        let n = first.marginals.n();
        for c in &components {
            if c.marginals.n() != n {
                return Err(Error::LengthMismatch { expected: n, found: c.marginals.n() });
            }
            if c.weight.is_nan() || c.weight < 0.0 {
                return Err(Error::NegativeProb { prob: c.weight });
            }
        }
        let sum = compensated_sum(components.iter().map(|c| c.weight));
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NonNormalized { sum });
        }
        Ok(CorrelatedSource::Mixture { components })
    }

    pub fn n(&self) -> usize {
        match self {
            CorrelatedSource::Product { marginals } => marginals.n(),
            CorrelatedSource::Mixture { components } => components[0].marginals.n(),
        }
    }

    /// `(weight, product law)` view that treats a product as a one-component mixture.
    pub fn components(&self) -> Vec<(f64, &ProductDist)> {
        match self {
            CorrelatedSource::Product { marginals } => vec![(1.0, marginals)],
            CorrelatedSource::Mixture { components } => {
                components.iter().map(|c| (c.weight, &c.marginals)).collect()
            }
        }
    }

    /// Draw one trajectory into `out` (length `n`).
    pub fn sample_into<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            CorrelatedSource::Product { marginals } => marginals.sample_into(rng, out),
            CorrelatedSource::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = components.len() - 1;
                for (idx, c) in components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc && c.weight > 0.0 {
                        chosen = idx;
                        break;
                    }
                }
                components[chosen].marginals.sample_into(rng, out);
            }
        }
    }

    /// Draw row `row` of the stream identified by `seed`.
    ///
    /// Row `t` uses its own generator seeded with
    /// [`derive_seed(seed, t)`](crate::numeric::derive_seed).
    pub fn sample_row(&self, seed: u64, row: u64, out: &mut [f64]) {
        let mut rng = stream_rng(seed, row);
        self.sample_into(&mut rng, out);
    }
}

/// `T` sampled trajectories of width `n`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    values: Vec<f64>,
}

impl SampleSet {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.first().ok_or(Error::EmptySampleSet)?.len();
        if n == 0 {
            return Err(Error::Empty("sample row"));
        }
        let mut values = Vec::with_capacity(n * rows.len());
        for row in rows {
            if row.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: row.len() });
            }
            values.extend(row);
        }
        Self::from_flat(n, values)
    }

    /// Build from a row-major buffer of `T·n` values.
    pub fn from_flat(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("sample row"));
        }
        if values.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if !values.len().is_multiple_of(n) {
            return Err(Error::LengthMismatch { expected: n, found: values.len() % n });
        }
        for &v in &values {
            check_unit(v)?;
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of trajectories `T`.
    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n)
    }

    pub fn column(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.values[i..].iter().step_by(self.n).copied()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }
}

/// Draw `count` IID trajectories from `src`; a pure function of `(src, count, seed)`.
///
/// Rows are generated in parallel; row `t` depends only on `(seed, t)`.
pub fn sample_trajectories(src: &CorrelatedSource, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::EmptySampleSet);
    }
    let n = src.n();
    let mut values = vec![0.0; n * count];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(t, row)| src.sample_row(seed, t as u64, row));
    Ok(SampleSet { n, values })
}

/// Uniform distribution over the observed values of column `i` (0-based).
pub fn empirical_marginal(s: &SampleSet, i: usize) -> Result<DiscreteDist> {
    if i >= s.n() {
        return Err(Error::IndexOutOfRange { index: i, len: s.n() });
    }
    let mut col: Vec<f64> = s.column(i).collect();
    col.sort_by(f64::total_cmp);
    let total = col.len() as f64;
    let mut support = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for v in col {
        match support.last() {
            Some(&last) if last == v => *counts.last_mut().unwrap() += 1,
            _ => {
                support.push(v);
                counts.push(1);
            }
        }
    }
    let probs = counts.into_iter().map(|c| c as f64 / total).collect();
    DiscreteDist::new(support, probs)
}

/// Product of all empirical marginals.
pub fn empirical_product(s: &SampleSet) -> Result<ProductDist> {
    let marginals = (0..s.n()).map(|i| empirical_marginal(s, i)).collect::<Result<Vec<_>>>()?;
    ProductDist::new(marginals)
}

/// Walk the union of two sorted supports, yielding `(p_a(x), p_b(x))`.
fn aligned(a: &DiscreteDist, b: &DiscreteDist) -> Vec<(f64, f64)> {
    let (sa, pa) = (a.support(), a.probs());
    let (sb, pb) = (b.support(), b.probs());
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(sa.len() + sb.len());
    while i < sa.len() || j < sb.len() {
        if j >= sb.len() || (i < sa.len() && sa[i] < sb[j]) {
            out.push((pa[i], 0.0));
            i += 1;
        } else if i >= sa.len() || sb[j] < sa[i] {
            out.push((0.0, pb[j]));
            j += 1;
        } else {
            out.push((pa[i], pb[j]));
            i += 1;
            j += 1;
        }
    }
    out
}

/// Squared Hellinger distance `1 − Σ_x √(a(x) b(x))`, clamped to `[0, 1]`.
pub fn hellinger_sq(a: &DiscreteDist, b: &DiscreteDist) -> f64 {
    let affinity = compensated_sum(aligned(a, b).into_iter().map(|(p, q)| (p * q).sqrt()));
    (1.0 - affinity).clamp(0.0, 1.0)
}

/// Total variation distance `½ Σ_x |a(x) − b(x)|`.
pub fn tv_distance(a: &DiscreteDist, b: &DiscreteDist) -> f64 {
    0.5 * compensated_sum(aligned(a, b).into_iter().map(|(p, q)| (p - q).abs()))
}

/// Random marginal: support size uniform in `1..=max_support`, values on the
/// `1e-3` grid, weights normalized uniforms.
pub fn random_discrete<R: Rng + ?Sized>(rng: &mut R, max_support: usize) -> DiscreteDist {
    let size = rng.random_range(1..=max_support.max(1));
    let support: Vec<f64> = (0..size).map(|_| rng.random_range(0..=1000u32) as f64 / 1000.0).collect();
    let weights: Vec<f64> = (0..size).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| w / total).collect();
    DiscreteDist::new(support, probs).expect("generated marginal is valid by construction")
}

/// Random product distribution of `n` buyers built from [`random_discrete`].
pub fn random_product<R: Rng + ?Sized>(rng: &mut R, n: usize, max_support: usize) -> Result<ProductDist> {
    ProductDist::new((0..n).map(|_| random_discrete(rng, max_support)).collect())
}
