//! Experiment configs, runners and report writers.
//!
//! Every trial draws from its own derived seed, so reports do not depend on
//! the worker count. Rows are emitted in `(T, trial)` order.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{error_process, good_set, max_partial_sum, member};
use crate::distributions::{random_product, sample_trajectories, CorrelatedSource, ProductDist};
use crate::dp_policy::{eval_exact, optimal_dp, Objective, Price};
use crate::error::{Error, Result};
use crate::hard_instances::{
    correlated_hard_optimum, decision_points, gen_correlated_hard, gen_product_revenue_hard, random_bits, BitsSpec,
    CorrelatedHardConfig, Level, ProductHardConfig,
};
use crate::learners::{expand, learn_product, learn_saa, ChangePointSet, SegmentPrices};
use crate::numeric::{derive_seed, mean_stderr, median, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RegretCurve,
    #[serde(rename = "theorem1-frequency")]
    SuccessFrequency,
    ProductHardness,
    CorrelatedHardness,
    GoodsetFuzz,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::RegretCurve => "regret-curve",
            ExperimentKind::SuccessFrequency => "theorem1-frequency",
            ExperimentKind::ProductHardness => "product-hardness",
            ExperimentKind::CorrelatedHardness => "correlated-hardness",
            ExperimentKind::GoodsetFuzz => "goodset-fuzz",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_objective() -> Objective {
    Objective::Welfare
}

fn default_max_support() -> usize {
    5
}

/// One experiment definition, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Number of buyers.
    pub n: usize,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Change points `S`, 1-based, for the correlated experiments.
    #[serde(default)]
    pub change_points: Vec<usize>,
    /// `"HLLH"` style or `"random:<seed>"`. A random spec is redrawn per trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<String>,
    /// Sample counts `T` to run; theorem1-frequency derives one when empty.
    #[serde(default)]
    pub schedule: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Largest support of a random marginal.
    #[serde(default = "default_max_support")]
    pub max_support: usize,
    /// Draw a new random instance per trial instead of one per experiment.
    #[serde(default)]
    pub fresh_instance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// `⌈(5 ln(2e/δ)/ε)²⌉`.
pub fn success_sample_count(eps: f64, delta: f64) -> usize {
    let e = std::f64::consts::E;
    ((5.0 * (2.0 * e / delta).ln() / eps).powi(2)).ceil() as usize
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    /// Parse TOML, or JSON when the text is a JSON object. A `meta.json`
    /// written by [`write_reports`] is accepted via its `config` key.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = if text.trim_start().starts_with('{') {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| invalid(format!("line {}: {e}", e.line())))?;
            let value = match value.get("config") {
                Some(inner) if value.get("experiment").is_none() => inner.clone(),
                _ => value,
            };
            serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| invalid(e.to_string().trim_end().to_string()))?
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Fill derived fields and check ranges.
    pub fn resolve(mut self) -> Result<Self> {
        if self.n == 0 {
            return Err(invalid("field `n`: must be at least 1"));
        }
        if self.trials == 0 {
            return Err(invalid("field `trials`: must be at least 1"));
        }
        if self.max_support == 0 {
            return Err(invalid("field `max_support`: must be at least 1"));
        }
        for (name, v) in [("eps", self.eps), ("delta", self.delta)] {
            if let Some(v) = v {
                if !(v > 0.0 && v < 1.0) {
                    return Err(invalid(format!("field `{name}`: {v} is not in (0, 1)")));
                }
            }
        }
        let need_eps = || self.eps.ok_or_else(|| invalid(format!("field `eps`: required by {}", self.experiment)));
        match self.experiment {
            ExperimentKind::SuccessFrequency => {
                let eps = need_eps()?;
                let delta = self.delta.ok_or_else(|| invalid("field `delta`: required by theorem1-frequency"))?;
                if self.objective != Objective::Welfare {
                    return Err(invalid("field `objective`: theorem1-frequency is welfare only"));
                }
                if self.schedule.is_empty() {
                    self.schedule = vec![success_sample_count(eps, delta)];
                }
            }
            ExperimentKind::ProductHardness => {
                let eps = need_eps()?;
                if self.n < 2 || eps > 1.0 / 32.0 {
                    return Err(invalid("product-hardness needs n >= 2 and eps <= 1/32"));
                }
            }
            ExperimentKind::CorrelatedHardness => {
                need_eps()?;
            }
            ExperimentKind::RegretCurve | ExperimentKind::GoodsetFuzz => {}
        }
        if self.schedule.is_empty() {
            return Err(invalid("field `schedule`: must list at least one sample count"));
        }
        if self.schedule.contains(&0) {
            return Err(invalid("field `schedule`: sample counts must be at least 1"));
        }
        if let Some(b) = &self.bits {
            b.parse::<BitsSpec>().map_err(|e| invalid(format!("field `bits`: {e}")))?;
        } else if matches!(self.experiment, ExperimentKind::ProductHardness | ExperimentKind::CorrelatedHardness) {
            self.bits = Some(BitsSpec::Random(self.seed).to_string());
        }
        if self.experiment == ExperimentKind::CorrelatedHardness {
            // surface instance errors before running
            CorrelatedHardConfig::new(self.cps()?, self.eps.unwrap_or(0.0), self.objective, &self.bits_spec()?)
                .map_err(|e| invalid(e.to_string()))?;
        }
        Ok(self)
    }

    fn cps(&self) -> Result<ChangePointSet> {
        ChangePointSet::new(self.n, self.change_points.clone()).map_err(|e| invalid(format!("field `change_points`: {e}")))
    }

    fn bits_spec(&self) -> Result<BitsSpec> {
        match &self.bits {
            Some(b) => b.parse(),
            None => Ok(BitsSpec::Random(self.seed)),
        }
    }
}

/// One report row. Absent diagnostics are written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub t: usize,
    pub max_partial_sum: Option<f64>,
    pub regret: Option<f64>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub trials: usize,
    pub mean_regret: Option<f64>,
    pub median_regret: Option<f64>,
    pub stderr_regret: Option<f64>,
    pub success_frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
}

/// Run on a dedicated pool of `threads` workers (0 = rayon default).
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    let cfg = cfg.clone().resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Io(e.to_string()))?;
    pool.install(|| run_resolved(&cfg))
}

const INSTANCE_STREAM: u64 = u64::MAX;

/// Slack on regret thresholds so that rounding in exact evaluation cannot flip
/// a success flag when regret equals the threshold.
pub const REGRET_TOL: f64 = 1e-12;

fn run_resolved(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut rows = Vec::with_capacity(cfg.schedule.len() * cfg.trials);
    let mut summary = Vec::with_capacity(cfg.schedule.len());
    for (ti, &t) in cfg.schedule.iter().enumerate() {
        let base = derive_seed(cfg.seed, ti as u64);
        let block = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(base, trial as u64);
                run_trial(cfg, t, trial, seed).map(|(max_partial_sum, regret, success)| TrialRow {
                    trial,
                    seed,
                    t,
                    max_partial_sum,
                    regret,
                    success,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        summary.push(summarize(t, &block));
        rows.extend(block);
    }
    Ok(ExperimentOutput { rows, summary })
}

fn summarize(t: usize, block: &[TrialRow]) -> SummaryRow {
    let regrets: Vec<f64> = block.iter().filter_map(|r| r.regret).collect();
    let (mean, stderr) = mean_stderr(&regrets);
    let some = |x: f64| (!regrets.is_empty()).then_some(x);
    SummaryRow {
        t,
        trials: block.len(),
        mean_regret: some(mean),
        median_regret: some(median(&regrets)),
        stderr_regret: some(stderr),
        success_frequency: block.iter().filter(|r| r.success).count() as f64 / block.len() as f64,
    }
}

type TrialResult = (Option<f64>, Option<f64>, bool);

fn run_trial(cfg: &ExperimentConfig, t: usize, trial: usize, seed: u64) -> Result<TrialResult> {
    match cfg.experiment {
        ExperimentKind::RegretCurve | ExperimentKind::SuccessFrequency => {
            let instance_seed = if cfg.fresh_instance { seed } else { cfg.seed };
            let mut rng = stream_rng(instance_seed, INSTANCE_STREAM);
            let pd = random_product(&mut rng, cfg.n, cfg.max_support)?;
            product_trial(&pd, cfg.objective, t, seed, cfg.eps.unwrap_or(f64::INFINITY))
        }
        ExperimentKind::ProductHardness => {
            let eps = cfg.eps.unwrap_or_default();
            let bits = trial_bits(&cfg.bits_spec()?, cfg.n, trial)?;
            let pd = gen_product_revenue_hard(&ProductHardConfig::new(cfg.n, eps, bits)?)?;
            product_trial(&pd, Objective::Revenue, t, seed, eps)
        }
        ExperimentKind::CorrelatedHardness => {
            let eps = cfg.eps.unwrap_or_default();
            let cps = cfg.cps()?;
            let sprime = decision_points(&cps, cfg.objective);
            let bits = trial_bits(&cfg.bits_spec()?, sprime.len(), trial)?;
            let hard = CorrelatedHardConfig::with_decision_points(cps, eps, cfg.objective, sprime, bits)?;
            let regret = correlated_regret(&hard, t, seed)?;
            Ok((None, Some(regret), regret < eps / 2.0 - REGRET_TOL))
        }
        ExperimentKind::GoodsetFuzz => {
            let mismatches = goodset_fuzz(cfg.n, t, seed)?;
            Ok((None, None, mismatches == 0))
        }
    }
}

fn trial_bits(spec: &BitsSpec, len: usize, trial: usize) -> Result<Vec<Level>> {
    match spec {
        BitsSpec::Random(s) => Ok(random_bits(len, derive_seed(*s, trial as u64))),
        explicit => explicit.resolve(len),
    }
}

fn product_trial(pd: &ProductDist, obj: Objective, t: usize, seed: u64, eps: f64) -> Result<TrialResult> {
    let src: CorrelatedSource = pd.clone().into();
    let s = sample_trajectories(&src, t, seed)?;
    let (policy, _) = learn_product(&s, obj)?;
    let regret = optimal_dp(pd, obj).value() - eval_exact(&src, &policy, obj)?;
    let mps = match obj {
        Objective::Welfare => Some(max_partial_sum(&error_process(&s, pd)?)),
        Objective::Revenue => None,
    };
    Ok((mps, Some(regret), regret <= eps + REGRET_TOL))
}

/// Exact regret of SAA trained on `t` samples of the correlated instance.
pub fn correlated_regret(cfg: &CorrelatedHardConfig, t: usize, seed: u64) -> Result<f64> {
    let src = gen_correlated_hard(cfg)?;
    let (opt, _) = correlated_hard_optimum(cfg)?;
    let s = sample_trajectories(&src, t, seed)?;
    let rho = learn_saa(&s, cfg.cps(), cfg.objective())?;
    let value = eval_exact(&src, &expand(cfg.cps(), &rho)?, cfg.objective())?;
    Ok(opt - value)
}

/// Compare good-set membership against direct simulation on `cases` random
/// cases with up to `max_n` buyers and `k ≤ 4`, both objectives. Returns the
/// number of disagreements.
pub fn goodset_fuzz(max_n: usize, cases: usize, seed: u64) -> Result<usize> {
    let mut rng = stream_rng(seed, 0);
    let mut mismatches = 0;
    for _ in 0..cases {
        let n = rng.random_range(1..=max_n.max(1));
        // a small value palette forces ties between v, z and ρ
        let palette: Vec<f64> = (0..rng.random_range(1..=4)).map(|_| rng.random_range(0..=20) as f64 / 20.0).collect();
        let v: Vec<f64> = (0..n).map(|_| palette[rng.random_range(0..palette.len())]).collect();
        let mut points: Vec<usize> = (2..=n).filter(|_| rng.random_bool(0.5)).collect();
        while points.len() > 3 {
            points.remove(rng.random_range(0..points.len()));
        }
        let cps = ChangePointSet::new(n, points)?;
        let z = match rng.random_range(0..4) {
            0 => -rng.random::<f64>() * 0.1,
            1 => 0.0,
            2 => palette[rng.random_range(0..palette.len())],
            _ => rng.random::<f64>(),
        };
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| match rng.random_range(0..6) {
            0 => Price::Reject,
            1 => Price::Offer(z.clamp(0.0, 1.0)),
            2 => Price::Offer(rng.random::<f64>()),
            3 => Price::Offer(z.clamp(0.0, 1.0).next_down().max(0.0)),
            _ => Price::Offer(palette[rng.random_range(0..palette.len())]),
        };
        let rho = SegmentPrices((0..cps.k()).map(|_| pick(&mut rng)).collect());
        let policy = expand(&cps, &rho)?;
        for obj in [Objective::Welfare, Objective::Revenue] {
            let g = good_set(&v, z, &cps, obj)?;
            if member(&g, &rho)? != (policy.outcome(&v, obj) >= z) {
                mismatches += 1;
            }
        }
    }
    Ok(mismatches)
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn report_csv(out: &ExperimentOutput) -> String {
    let mut s = String::from("trial,seed,T,max_partial_sum,regret,success\n");
    for r in &out.rows {
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.trial,
            r.seed,
            r.t,
            cell(r.max_partial_sum),
            cell(r.regret),
            u8::from(r.success)
        );
    }
    s
}

pub fn summary_csv(out: &ExperimentOutput) -> String {
    let mut s = String::from("T,trials,mean_regret,median_regret,stderr_regret,success_frequency\n");
    for r in &out.summary {
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.t,
            r.trials,
            cell(r.mean_regret),
            cell(r.median_regret),
            cell(r.stderr_regret),
            r.success_frequency
        );
    }
    s
}

#[derive(Serialize)]
struct Meta<'a> {
    config: &'a ExperimentConfig,
    version: &'a str,
    threads: usize,
    wall_time_secs: f64,
}

/// Resolve, run and write `report.csv`, `summary.csv` and `meta.json` into
/// `dir` (created if missing). Nothing is written when the config is invalid.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, threads: usize) -> Result<ExperimentOutput> {
    let resolved = cfg.clone().resolve()?;
    let start = Instant::now();
    let out = run_experiment(&resolved, threads)?;
    write_reports(dir, &resolved, &out, threads, start.elapsed().as_secs_f64())?;
    Ok(out)
}

pub fn write_reports(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput, threads: usize, wall: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), report_csv(out))?;
    fs::write(dir.join("summary.csv"), summary_csv(out))?;
    let meta = Meta { config: cfg, version: env!("CARGO_PKG_VERSION"), threads, wall_time_secs: wall };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join("meta.json"), text + "\n")?;
    Ok(())
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| invalid(format!("unknown experiment `{s}`")))
    }
}
