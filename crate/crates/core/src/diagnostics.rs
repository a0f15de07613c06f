//! Diagnostics for the learners: the empirical-DP error process, the
//! conditional-mean sum check, and exact good-set decompositions for the
//! change-point policy class.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{ProductDist, SampleSet};
use crate::dp_policy::{Objective, Price};
use crate::error::{Error, Result};
use crate::learners::{empirical_welfare_values, ChangePointSet, SegmentPrices};
use crate::numeric::{compensated_sum, stream_rng};

/// Per-buyer errors `η_i` of the empirical welfare recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProcess {
    pub eta: Vec<f64>,
}

impl ErrorProcess {
    fn prefix_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.eta.iter().scan(0.0, |acc, &e| {
            *acc += e;
            Some(*acc)
        })
    }

    /// `max_{j ∈ {0..n}} Σ_{i≤j} η_i` (the empty prefix contributes 0).
    pub fn max_prefix(&self) -> f64 {
        self.prefix_sums().fold(0.0, f64::max)
    }

    /// `max_{j ∈ {0..n}} (−Σ_{i≤j} η_i)`.
    pub fn max_negative_prefix(&self) -> f64 {
        self.prefix_sums().fold(0.0, |m, s| m.max(-s))
    }
}

/// `η_i = (1/T) Σ_t (V_i^{(t)} − r̂_{i+1})⁺ − E[(V_i − r̂_{i+1})⁺]`, the
/// expectation taken exactly under the true marginal.
pub fn error_process(s: &SampleSet, pd_true: &ProductDist) -> Result<ErrorProcess> {
    if s.n() != pd_true.n() {
        return Err(Error::LengthMismatch { expected: pd_true.n(), found: s.n() });
    }
    let r_hat = empirical_welfare_values(s)?;
    let t = s.len() as f64;
    let eta = (0..s.n())
        .map(|i| {
            let next = r_hat[i + 1];
            let empirical = compensated_sum(s.column(i).map(|v| (v - next).max(0.0))) / t;
            let expected = pd_true.marginal(i).expect(|v| (v - next).max(0.0));
            empirical - expected
        })
        .collect();
    Ok(ErrorProcess { eta })
}

/// `max_{j ∈ {1..n}} |Σ_{i≤j} η_i|`; 0 for an empty process.
pub fn max_partial_sum(e: &ErrorProcess) -> f64 {
    e.prefix_sums().fold(0.0, |m, s| m.max(s.abs()))
}

/// Sequence families with `Σ Y_i ≤ 1` surely and closed-form conditional means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SequenceLaw {
    /// `Y_i = 1/n` for every `i`.
    DeterministicSplit,
    /// While the unit budget is unspent, `Y_i = 1` with probability `hazard`
    /// (spending it), else 0. Conditional mean is `hazard` until spent.
    BernoulliCascade { hazard: f64 },
    /// `Y_i = U_i · B_i` with `U_i ~ Uniform[0,1)` and `B_i` the remaining
    /// budget. Conditional mean is `B_i / 2`.
    UniformFraction,
}

impl SequenceLaw {
    /// Built-in families used by the acceptance runs.
    pub fn builtin() -> Vec<SequenceLaw> {
        vec![
            SequenceLaw::DeterministicSplit,
            SequenceLaw::BernoulliCascade { hazard: 0.05 },
            SequenceLaw::UniformFraction,
        ]
    }

    /// Draw one sequence of length `n`; returns `(Σ Y_i, Σ E[Y_i | history])`.
    fn run<R: Rng>(self, n: usize, rng: &mut R) -> (f64, f64) {
        let mut total = 0.0;
        let mut cond = 0.0;
        match self {
            SequenceLaw::DeterministicSplit => {
                let y = 1.0 / n as f64;
                for _ in 0..n {
                    total += y;
                    cond += y;
                }
            }
            SequenceLaw::BernoulliCascade { hazard } => {
                for _ in 0..n {
                    cond += hazard;
                    if rng.random_bool(hazard) {
                        total = 1.0;
                        break;
                    }
                }
            }
            SequenceLaw::UniformFraction => {
                let mut budget = 1.0;
                for _ in 0..n {
                    cond += budget / 2.0;
                    let y = rng.random::<f64>() * budget;
                    total += y;
                    budget -= y;
                }
            }
        }
        (total, cond)
    }
}

impl FromStr for SequenceLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "deterministic-split" => return Ok(SequenceLaw::DeterministicSplit),
            "uniform-fraction" => return Ok(SequenceLaw::UniformFraction),
            _ => {}
        }
        if let Some(h) = s.strip_prefix("bernoulli-cascade:") {
            if let Ok(hazard) = h.parse::<f64>() {
                if hazard > 0.0 && hazard <= 1.0 {
                    return Ok(SequenceLaw::BernoulliCascade { hazard });
                }
            }
        }
        Err(Error::UnsupportedGenerator(s.to_string()))
    }
}

impl fmt::Display for SequenceLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceLaw::DeterministicSplit => f.write_str("deterministic-split"),
            SequenceLaw::BernoulliCascade { hazard } => write!(f, "bernoulli-cascade:{hazard}"),
            SequenceLaw::UniformFraction => f.write_str("uniform-fraction"),
        }
    }
}

/// Threshold `(e/(e−1)) ln(e/δ)` on the sum of conditional means.
pub fn conditional_sum_threshold(delta: f64) -> f64 {
    let e = std::f64::consts::E;
    e / (e - 1.0) * (e / delta).ln()
}

/// Fraction of `num_trials` sequences whose conditional-mean sum reaches the threshold.
pub fn conditional_sum_check(num_trials: usize, n: usize, law: SequenceLaw, delta: f64, seed: u64) -> Result<f64> {
    if num_trials == 0 || n == 0 {
        return Err(Error::Domain("need at least one trial and one step".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1], got {delta}")));
    }
    if let SequenceLaw::BernoulliCascade { hazard } = law {
        if !(hazard > 0.0 && hazard <= 1.0) {
            return Err(Error::UnsupportedGenerator(law.to_string()));
        }
    }
    let threshold = conditional_sum_threshold(delta);
    let hits: usize = (0..num_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial);
            let (total, cond) = law.run(n, &mut rng);
            debug_assert!(total <= 1.0 + 1e-12);
            usize::from(cond >= threshold)
        })
        .sum();
    Ok(hits as f64 / num_trials as f64)
}

/// Interval endpoint with explicit infinities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bound {
    NegInf,
    Finite(f64),
    PosInf,
}

impl Bound {
    /// `price > self`, with `Reject` treated as `+∞`.
    fn below(self, price: Price) -> bool {
        match (self, price) {
            (Bound::PosInf, _) => false,
            (_, Price::Reject) => true,
            (Bound::NegInf, _) => true,
            (Bound::Finite(b), Price::Offer(p)) => p > b,
        }
    }

    /// `price ≤ self`, with `Reject` treated as `+∞`.
    fn at_least(self, price: Price) -> bool {
        match (self, price) {
            (Bound::PosInf, _) => true,
            (_, Price::Reject) => false,
            (Bound::NegInf, _) => false,
            (Bound::Finite(b), Price::Offer(p)) => p <= b,
        }
    }
}

/// `G(v, z) = ∪_j (u_1,∞) × … × (u_{j−1},∞) × (l_j, u_j] × ℝ^{k−j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodSetDecomposition {
    /// `(l_j, u_j)` per segment.
    pub bounds: Vec<(Bound, Bound)>,
    pub z: f64,
    pub objective: Objective,
}

/// Good-set bounds for trajectory `v` and target `z`.
///
/// Welfare: `u_j = max v(I_j)`; `l_j = −∞` if the first in-segment value
/// reaches `z`, otherwise the largest value before the first one that does
/// (or `max v(I_j)` if none does).
///
/// Revenue: `u_j = max v(I_j)` and `l_j` is the largest float below `z`,
/// capped at `u_j`, so that `ρ_j > l_j ⟺ ρ_j ≥ z`. A sale at price exactly
/// `z` earns `z`, which must be a member.
pub fn good_set(v: &[f64], z: f64, cps: &ChangePointSet, obj: Objective) -> Result<GoodSetDecomposition> {
    if v.len() != cps.n() {
        return Err(Error::LengthMismatch { expected: cps.n(), found: v.len() });
    }
    let k = cps.k();
    if z <= 0.0 {
        let mut bounds = vec![(Bound::NegInf, Bound::NegInf); k];
        bounds[0] = (Bound::NegInf, Bound::PosInf);
        return Ok(GoodSetDecomposition { bounds, z, objective: obj });
    }
    let bounds = cps
        .segments()
        .into_iter()
        .map(|seg| {
            let w = &v[seg];
            let upper = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lower = match obj {
                Objective::Welfare => match w.iter().position(|&x| x >= z) {
                    Some(0) => Bound::NegInf,
                    Some(m) => Bound::Finite(w[..m].iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                    None => Bound::Finite(upper),
                },
                Objective::Revenue => Bound::Finite(z.next_down().min(upper)),
            };
            (lower, Bound::Finite(upper))
        })
        .collect();
    Ok(GoodSetDecomposition { bounds, z, objective: obj })
}

/// Exact membership `ρ ∈ G(v, z)` via the prefix-interval union.
pub fn member(g: &GoodSetDecomposition, rho: &SegmentPrices) -> Result<bool> {
    if rho.len() != g.bounds.len() {
        return Err(Error::LengthMismatch { expected: g.bounds.len(), found: rho.len() });
    }
    for (&(lower, upper), &price) in g.bounds.iter().zip(&rho.0) {
        if lower.below(price) && upper.at_least(price) {
            return Ok(true);
        }
        // later terms require ρ_j > u_j
        if !upper.below(price) {
            return Ok(false);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{random_product, sample_trajectories, CorrelatedSource, DiscreteDist};
    use crate::dp_policy::{eval_exact, welfare_dp};
    use crate::learners::{expand, learn_product_welfare};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simulate(v: &[f64], z: f64, cps: &ChangePointSet, obj: Objective, rho: &SegmentPrices) -> bool {
        expand(cps, rho).unwrap().outcome(v, obj) >= z
    }

    #[test]
    fn error_process_is_zero_when_empirical_equals_truth() {
        let pd = ProductDist::new(vec![
            DiscreteDist::new(vec![0.2, 0.8], vec![0.5, 0.5]).unwrap(),
            DiscreteDist::new(vec![0.1, 0.4], vec![0.5, 0.5]).unwrap(),
        ])
        .unwrap();
        let s = SampleSet::from_rows(vec![vec![0.2, 0.1], vec![0.8, 0.4]]).unwrap();
        let e = error_process(&s, &pd).unwrap();
        assert!(e.eta.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn error_process_single_sample() {
        let pd = ProductDist::new(vec![DiscreteDist::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap()]).unwrap();
        let s = SampleSet::from_rows(vec![vec![1.0]]).unwrap();
        assert_eq!(error_process(&s, &pd).unwrap().eta, vec![0.5]);
        let wide = SampleSet::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(error_process(&wide, &pd), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn partial_sum_examples() {
        assert_eq!(max_partial_sum(&ErrorProcess { eta: vec![0.0; 4] }), 0.0);
        assert_eq!(max_partial_sum(&ErrorProcess { eta: vec![0.5, -0.5] }), 0.5);
        let e = ErrorProcess { eta: vec![-0.1, -0.2, 0.05] };
        assert!((max_partial_sum(&e) - 0.3).abs() < 1e-15);
        assert_eq!(e.max_prefix(), 0.0);
        assert!((e.max_negative_prefix() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pointwise_inequality_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..300 {
            let n = rng.random_range(1..=12);
            let t = rng.random_range(1..=30);
            let pd = random_product(&mut rng, n, 4).unwrap();
            let src: CorrelatedSource = pd.clone().into();
            let s = sample_trajectories(&src, t, rng.random()).unwrap();
            let (policy, dp) = learn_product_welfare(&s).unwrap();
            let r1 = eval_exact(&src, &policy, Objective::Welfare).unwrap();
            let r_star = welfare_dp(&pd).value();
            let e = error_process(&s, &pd).unwrap();
            assert!(r1 >= dp.value() - e.max_prefix() - 1e-9);
            assert!(dp.value() >= r_star - e.max_negative_prefix() - 1e-9);
            assert!(r1 >= r_star - 2.0 * max_partial_sum(&e) - 1e-9);
        }
    }

    #[test]
    fn conditional_sum_trivial_cases() {
        assert!(conditional_sum_threshold(0.5) > 1.0);
        assert_eq!(conditional_sum_check(100, 2, SequenceLaw::DeterministicSplit, 0.5, 1).unwrap(), 0.0);
        assert!((conditional_sum_threshold(1.0) - 1.5819767068693265).abs() < 1e-12);
        for law in SequenceLaw::builtin() {
            // a sum of conditional means above 1.58 is possible, but the
            // realized sum never exceeds the budget
            let f = conditional_sum_check(200, 30, law, 1.0, 2).unwrap();
            assert!(f <= 1.0);
        }
    }

    #[test]
    fn cascade_frequency_stays_below_delta() {
        let law = SequenceLaw::BernoulliCascade { hazard: 0.05 };
        let f = conditional_sum_check(10_000, 400, law, 0.1, 3).unwrap();
        assert!(f <= 0.1 + 3.0 * (0.1f64 / 1e4).sqrt(), "{f}");
    }

    #[test]
    fn generator_tags() {
        assert_eq!("uniform-fraction".parse::<SequenceLaw>().unwrap(), SequenceLaw::UniformFraction);
        assert_eq!(
            "bernoulli-cascade:0.2".parse::<SequenceLaw>().unwrap(),
            SequenceLaw::BernoulliCascade { hazard: 0.2 }
        );
        assert!(matches!("gaussian".parse::<SequenceLaw>(), Err(Error::UnsupportedGenerator(_))));
        assert!(matches!("bernoulli-cascade:2".parse::<SequenceLaw>(), Err(Error::UnsupportedGenerator(_))));
        let bad = SequenceLaw::BernoulliCascade { hazard: 0.0 };
        assert!(matches!(conditional_sum_check(10, 5, bad, 0.1, 0), Err(Error::UnsupportedGenerator(_))));
    }

    #[test]
    fn nonpositive_target_admits_everything() {
        let cps = ChangePointSet::new(3, vec![2]).unwrap();
        for obj in [Objective::Welfare, Objective::Revenue] {
            let g = good_set(&[0.1, 0.2, 0.3], 0.0, &cps, obj).unwrap();
            for rho in [
                vec![Price::Reject, Price::Reject],
                vec![Price::Offer(0.0), Price::Offer(1.0)],
                vec![Price::Offer(0.7), Price::Reject],
            ] {
                assert!(member(&g, &SegmentPrices(rho)).unwrap());
            }
        }
    }

    #[test]
    fn welfare_static_example() {
        let cps = ChangePointSet::static_price(2).unwrap();
        let v = [0.3, 0.7];
        let g = good_set(&v, 0.5, &cps, Objective::Welfare).unwrap();
        assert_eq!(g.bounds, vec![(Bound::Finite(0.3), Bound::Finite(0.7))]);
        for (rho, want) in [(0.2, false), (0.3, false), (0.5, true), (0.7, true), (0.8, false)] {
            let r = SegmentPrices(vec![Price::Offer(rho)]);
            assert_eq!(member(&g, &r).unwrap(), want, "rho = {rho}");
            assert_eq!(simulate(&v, 0.5, &cps, Objective::Welfare, &r), want);
        }
    }

    #[test]
    fn revenue_static_example() {
        let cps = ChangePointSet::static_price(2).unwrap();
        let v = [0.3, 0.7];
        let g = good_set(&v, 0.5, &cps, Objective::Revenue).unwrap();
        assert_eq!(g.bounds[0].1, Bound::Finite(0.7));
        for (rho, want) in [(0.3, false), (0.4999, false), (0.5, true), (0.6, true), (0.7, true), (0.71, false)] {
            let r = SegmentPrices(vec![Price::Offer(rho)]);
            assert_eq!(member(&g, &r).unwrap(), want, "rho = {rho}");
            assert_eq!(simulate(&v, 0.5, &cps, Objective::Revenue, &r), want);
        }
    }

    #[test]
    fn interval_endpoints() {
        // two segments: (0.4 | 0.2, 0.9), z = 0.8
        let cps = ChangePointSet::new(3, vec![2]).unwrap();
        let v = [0.4, 0.2, 0.9];
        let g = good_set(&v, 0.8, &cps, Objective::Welfare).unwrap();
        let (l2, u2) = g.bounds[1];
        assert_eq!((l2, u2), (Bound::Finite(0.2), Bound::Finite(0.9)));
        // ρ_1 just above u_1 and ρ_2 = u_2 is a member
        let rho = SegmentPrices(vec![Price::Offer(0.41), Price::Offer(0.9)]);
        assert!(member(&g, &rho).unwrap());
        // ρ_2 = l_2 is not
        let rho = SegmentPrices(vec![Price::Offer(0.41), Price::Offer(0.2)]);
        assert!(!member(&g, &rho).unwrap());
        assert!(member(&g, &SegmentPrices(vec![Price::Reject, Price::Offer(0.5)])).unwrap());
        assert!(member(&g, &SegmentPrices(vec![Price::Offer(0.1)])).is_err());
    }

    #[test]
    fn welfare_upper_bound_tracks_segment_max_only() {
        let cps = ChangePointSet::static_price(4).unwrap();
        let base = [0.1, 0.6, 0.3, 0.2];
        let g = good_set(&base, 0.5, &cps, Objective::Welfare).unwrap();
        // perturb a value after the first one reaching z, keeping it below the max
        let g2 = good_set(&[0.1, 0.6, 0.35, 0.2], 0.5, &cps, Objective::Welfare).unwrap();
        assert_eq!(g.bounds, g2.bounds);
        // raising the segment max moves u but not l
        let g3 = good_set(&[0.1, 0.6, 0.3, 0.95], 0.5, &cps, Objective::Welfare).unwrap();
        assert_eq!(g3.bounds[0].0, g.bounds[0].0);
        assert_eq!(g3.bounds[0].1, Bound::Finite(0.95));
    }
}
