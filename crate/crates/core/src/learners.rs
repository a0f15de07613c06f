//! Learners that turn a [`SampleSet`] into a price policy.
//!
//! * [`learn_product_welfare`] / [`learn_product_revenue`]: optimal policy
//!   of the empirical product distribution.
//! * [`learn_saa`]: sample average approximation over the change-point class
//!   `Π_S`, searched exhaustively over realized values.
//! * [`saa_oracle`]: the same search over a uniform price grid, used to
//!   validate the realized-value grid.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::distributions::{empirical_product, SampleSet};
use crate::dp_policy::{revenue_dp, DPResult, Objective, Price, PricePolicy};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Default cap on the number of candidate price vectors SAA may score.
pub const DEFAULT_GRID_BUDGET: u128 = 100_000_000;

/// Two sample scores closer than this (on the per-trajectory average) are tied.
pub const SCORE_TIE_TOL: f64 = 1e-12;

/// Change points `S ⊆ {2, …, n}` (1-based buyer indices, as in the model)
/// and the consecutive segments they induce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangePointSet {
    n: usize,
    points: Vec<usize>,
}

impl ChangePointSet {
    pub fn new(n: usize, mut points: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("change-point set needs n >= 1".into()));
        }
        points.sort_unstable();
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("duplicate change point".into()));
        }
        if let Some(&bad) = points.iter().find(|&&p| p < 2 || p > n) {
            return Err(Error::InvalidConfig(format!("change point {bad} outside 2..={n}")));
        }
        Ok(Self { n, points })
    }

    /// `S = ∅`: one static price.
    pub fn static_price(n: usize) -> Result<Self> {
        Self::new(n, Vec::new())
    }

    /// `S = {2, …, n}`: every buyer gets its own price.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, (2..=n).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// Number of segments `k = |S| + 1`.
    pub fn k(&self) -> usize {
        self.points.len() + 1
    }

    /// Segments as 0-based buyer ranges.
    pub fn segments(&self) -> Vec<Range<usize>> {
        let mut bounds = Vec::with_capacity(self.k() + 1);
        bounds.push(0);
        bounds.extend(self.points.iter().map(|p| p - 1));
        bounds.push(self.n);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }

    /// Segment containing 0-based buyer `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        self.points.partition_point(|&p| p - 1 <= i)
    }
}

/// One price per segment, `ρ = (ρ_1, …, ρ_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrices(pub Vec<Price>);

impl SegmentPrices {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Expand segment prices into the full policy `π_i = ρ_j` for `i ∈ I_j`.
pub fn expand(cps: &ChangePointSet, rho: &SegmentPrices) -> Result<PricePolicy> {
    if rho.len() != cps.k() {
        return Err(Error::LengthMismatch { expected: cps.k(), found: rho.len() });
    }
    let mut prices = Vec::with_capacity(cps.n());
    for (seg, &price) in cps.segments().into_iter().zip(&rho.0) {
        prices.extend(std::iter::repeat_n(price, seg.len()));
    }
    PricePolicy::new(prices)
}

/// Empirical welfare recursion `r̂_{n+1} = 0`,
/// `r̂_i = (1/T) Σ_t (V_i^{(t)} − r̂_{i+1})⁺ + r̂_{i+1}` (0-based, length `n+1`).
pub fn empirical_welfare_values(s: &SampleSet) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let n = s.n();
    let t = s.len() as f64;
    let mut r = vec![0.0; n + 1];
    for i in (0..n).rev() {
        let next = r[i + 1];
        let excess = compensated_sum(s.column(i).map(|v| (v - next).max(0.0))) / t;
        r[i] = excess + next;
    }
    Ok(r)
}

/// Learned welfare policy `π_i = r̂_{i+1}`.
pub fn learn_product_welfare(s: &SampleSet) -> Result<(PricePolicy, DPResult)> {
    let r = empirical_welfare_values(s)?;
    let policy = PricePolicy::from_offers(&r[1..])?;
    let dp = DPResult { value_to_go: r, policy: policy.clone(), objective: Objective::Welfare };
    Ok((policy, dp))
}

/// Revenue DP on the product of empirical marginals.
pub fn learn_product_revenue(s: &SampleSet) -> Result<(PricePolicy, DPResult)> {
    if s.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let dp = revenue_dp(&empirical_product(s)?);
    Ok((dp.policy.clone(), dp))
}

/// Empirical-DP learner for either objective.
pub fn learn_product(s: &SampleSet, obj: Objective) -> Result<(PricePolicy, DPResult)> {
    match obj {
        Objective::Welfare => learn_product_welfare(s),
        Objective::Revenue => learn_product_revenue(s),
    }
}

/// Result of an exhaustive segment-price search.
#[derive(Debug, Clone, PartialEq)]
pub struct SaaFit {
    pub rho: SegmentPrices,
    /// `eval_on_samples(expand(rho))`.
    pub score: f64,
    /// Number of candidate vectors in the grid.
    pub grid_size: u128,
}

/// Realized-value grid per segment: `{0} ∪ {values in I_j} ∪ {Reject}`.
pub fn realized_grids(s: &SampleSet, cps: &ChangePointSet) -> Vec<Vec<Price>> {
    cps.segments()
        .into_iter()
        .map(|seg| {
            let mut vals: Vec<f64> = std::iter::once(0.0)
                .chain(s.rows().flat_map(|row| row[seg.clone()].iter().copied()))
                .collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals.into_iter().map(Price::Offer).chain(std::iter::once(Price::Reject)).collect()
        })
        .collect()
}

/// Uniform grid `{0, 1/m, …, 1, Reject}` for each of `k` segments.
pub fn uniform_grids(k: usize, resolution: usize) -> Vec<Vec<Price>> {
    let grid: Vec<Price> = (0..=resolution)
        .map(|i| Price::Offer(i as f64 / resolution as f64))
        .chain(std::iter::once(Price::Reject))
        .collect();
    vec![grid; k]
}

/// SAA over `Π_S` with the default evaluation budget.
pub fn learn_saa(s: &SampleSet, cps: &ChangePointSet, obj: Objective) -> Result<SegmentPrices> {
    Ok(fit_saa(s, cps, obj, DEFAULT_GRID_BUDGET)?.rho)
}

/// SAA over `Π_S`; errors with `GridOverflow` when `Π |G_j| > budget`.
pub fn fit_saa(s: &SampleSet, cps: &ChangePointSet, obj: Objective, budget: u128) -> Result<SaaFit> {
    check_width(s, cps)?;
    search_grid(s, cps, obj, &realized_grids(s, cps), budget)
}

/// Brute force over the uniform grid of resolution `m`.
pub fn saa_oracle(s: &SampleSet, cps: &ChangePointSet, obj: Objective, grid_resolution: usize) -> Result<SegmentPrices> {
    Ok(fit_saa_oracle(s, cps, obj, grid_resolution, DEFAULT_GRID_BUDGET)?.rho)
}

pub fn fit_saa_oracle(
    s: &SampleSet,
    cps: &ChangePointSet,
    obj: Objective,
    grid_resolution: usize,
    budget: u128,
) -> Result<SaaFit> {
    if grid_resolution < 2 {
        return Err(Error::InvalidConfig(format!("grid resolution must be >= 2, got {grid_resolution}")));
    }
    check_width(s, cps)?;
    search_grid(s, cps, obj, &uniform_grids(cps.k(), grid_resolution), budget)
}

fn check_width(s: &SampleSet, cps: &ChangePointSet) -> Result<()> {
    if s.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if s.n() != cps.n() {
        return Err(Error::LengthMismatch { expected: cps.n(), found: s.n() });
    }
    Ok(())
}

/// Distinct trajectories with multiplicities, in order of first appearance.
struct RowGroups<'a> {
    rows: Vec<&'a [f64]>,
    counts: Vec<f64>,
}

impl<'a> RowGroups<'a> {
    fn new(s: &'a SampleSet) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for row in s.rows() {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&g) => counts[g] += 1.0,
                None => {
                    index.insert(key, rows.len());
                    rows.push(row);
                    counts.push(1.0);
                }
            }
        }
        Self { rows, counts }
    }
}

struct Search<'a> {
    groups: RowGroups<'a>,
    segments: Vec<Range<usize>>,
    grids: &'a [Vec<Price>],
    obj: Objective,
    // suffix_max[g][j]: largest value of group g from segment j onwards
    suffix_max: Vec<Vec<f64>>,
    tol: f64,
    current: Vec<Price>,
    best: Option<(Vec<Price>, f64)>,
}

impl Search<'_> {
    /// First acceptance inside segment `j` for group `g` at `price`.
    fn accept_in_segment(&self, g: usize, j: usize, price: Price) -> Option<f64> {
        let row = self.groups.rows[g];
        let p = price.as_offer()?;
        row[self.segments[j].clone()]
            .iter()
            .find(|&&v| v >= p)
            .map(|&v| self.obj.payoff(v, p))
    }

    fn visit(&mut self, j: usize, remaining: &[usize], acc: f64) {
        if j == self.segments.len() {
            if self.best.as_ref().is_none_or(|(_, b)| acc > b + self.tol) {
                self.best = Some((self.current.clone(), acc));
            }
            return;
        }
        if let Some((_, b)) = &self.best {
            let bound: f64 = acc
                + remaining
                    .iter()
                    .map(|&g| self.groups.counts[g] * self.suffix_max[g][j])
                    .sum::<f64>();
            // every leaf below comes later in lexicographic order
            if bound <= b + self.tol {
                return;
            }
        }
        let grids = self.grids;
        let mut next = Vec::with_capacity(remaining.len());
        for &price in &grids[j] {
            next.clear();
            let mut gained = 0.0;
            for &g in remaining {
                match self.accept_in_segment(g, j, price) {
                    Some(pay) => gained += self.groups.counts[g] * pay,
                    None => next.push(g),
                }
            }
            self.current.push(price);
            self.visit(j + 1, &next, acc + gained);
            self.current.pop();
        }
    }
}

/// Exhaustive lexicographic search of `grids[0] × … × grids[k-1]`.
///
/// Returns the first (lexicographically smallest, `Reject` last) vector whose
/// sample total beats all earlier ones by more than the tie tolerance.
fn search_grid(
    s: &SampleSet,
    cps: &ChangePointSet,
    obj: Objective,
    grids: &[Vec<Price>],
    budget: u128,
) -> Result<SaaFit> {
    let grid_size = grids
        .iter()
        .try_fold(1u128, |acc, g| acc.checked_mul(g.len() as u128))
        .unwrap_or(u128::MAX);
    if grid_size > budget {
        return Err(Error::GridOverflow { required: grid_size, budget });
    }
    let groups = RowGroups::new(s);
    let segments = cps.segments();
    let suffix_max = groups
        .rows
        .iter()
        .map(|row| {
            let mut out = vec![0.0f64; segments.len() + 1];
            for j in (0..segments.len()).rev() {
                let seg_max = row[segments[j].clone()].iter().copied().fold(0.0, f64::max);
                out[j] = out[j + 1].max(seg_max);
            }
            out
        })
        .collect();
    let all: Vec<usize> = (0..groups.rows.len()).collect();
    let mut search = Search {
        groups,
        segments,
        grids,
        obj,
        suffix_max,
        tol: SCORE_TIE_TOL * s.len() as f64,
        current: Vec::with_capacity(cps.k()),
        best: None,
    };
    search.visit(0, &all, 0.0);
    let (best, _) = search.best.expect("grid is nonempty");
    let rho = SegmentPrices(best);
    let score = crate::dp_policy::eval_on_samples(s, &expand(cps, &rho)?, obj)?;
    Ok(SaaFit { rho, score, grid_size })
}
