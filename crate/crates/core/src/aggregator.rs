//! Hierarchical Beta-Binomial aggregation by forward Monte Carlo.
//!
//! Each leaf benchmark's success count gives a Beta posterior under a
//! noninformative prior. One replication draws a success probability per
//! leaf, simulates latent Bernoulli scores from it, pools those into a Beta
//! per subdomain, draws from that, simulates latent scores into the root
//! pool, and records the mean of the root Beta. The replications form the
//! posterior sample for the root ("Goodness") and for each subdomain.
//!
//! Latent draws are split equally: `N_d` across a subdomain's leaves and `N`
//! across subdomains, remainders going to the earliest entries in config
//! order. A Bernoulli run of length `n` is drawn as one `Binomial(n, p)`.
//!
//! Replications are independent (no chain). Replication `r` uses its own
//! keyed substream, so parallel execution gives the same output as serial.

use std::collections::BTreeMap;
use std::ops::Add;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::HierarchyConfig;
use crate::seeding::{substream, Stream};

pub const DEFAULT_REPLICATIONS: usize = 2000;
/// Default latent draws per subdomain. Large enough that the simulated
/// Bernoulli noise is negligible next to the leaf posterior spread.
pub const DEFAULT_SUBDOMAIN_DRAWS: u64 = 1_000_000;
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregatorError {
    #[error("invalid counts: {successes} successes out of {total}")]
    InvalidCounts { successes: u64, total: u64 },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("no counts for leaf benchmark `{0}`")]
    MissingLeaf(String),
    #[error("cannot summarize an empty sample")]
    EmptySamples,
    #[error("sample value {0} is outside [0, 1]")]
    InvalidSample(f64),
    #[error("credible level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
}

/// Successes out of `total` questions on one benchmark (or a pool of them).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCounts")]
pub struct LeafCounts {
    successes: u64,
    total: u64,
}

#[derive(Deserialize)]
struct RawCounts {
    successes: u64,
    total: u64,
}

impl TryFrom<RawCounts> for LeafCounts {
    type Error = AggregatorError;

    fn try_from(raw: RawCounts) -> Result<Self, Self::Error> {
        LeafCounts::new(raw.successes, raw.total)
    }
}

impl LeafCounts {
    pub fn new(successes: u64, total: u64) -> Result<Self, AggregatorError> {
        if total == 0 || successes > total {
            return Err(AggregatorError::InvalidCounts { successes, total });
        }
        Ok(Self { successes, total })
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn failures(&self) -> u64 {
        self.total - self.successes
    }

    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.total as f64
    }

    /// Pooled counts of several benchmarks; `None` for an empty pool.
    pub fn pool(counts: impl IntoIterator<Item = LeafCounts>) -> Option<LeafCounts> {
        counts.into_iter().reduce(Add::add)
    }
}

impl Add for LeafCounts {
    type Output = LeafCounts;

    fn add(self, rhs: Self) -> Self {
        LeafCounts {
            successes: self.successes + rhs.successes,
            total: self.total + rhs.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    fn distribution(&self) -> Beta<f64> {
        Beta::new(self.alpha, self.beta).expect("floored Beta parameters are positive")
    }
}

/// `Beta(successes, total - successes)`, with a zero parameter replaced by
/// `epsilon` so the distribution is proper.
fn floored_beta(successes: u64, total: u64, epsilon: f64) -> BetaParams {
    let floor = |x: u64| if x == 0 { epsilon } else { x as f64 };
    BetaParams {
        alpha: floor(successes),
        beta: floor(total - successes),
    }
}

pub fn leaf_posterior(counts: LeafCounts, epsilon: f64) -> BetaParams {
    floored_beta(counts.successes, counts.total, epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of Monte Carlo replications `R`.
    pub replications: usize,
    /// Latent draws per subdomain `N_d`. `None` uses the question count,
    /// the sum of the subdomain's leaf sizes; that setting re-simulates
    /// sampling noise the leaf posteriors already carry and roughly doubles
    /// interval width on desk-sized corpora.
    pub subdomain_draws: Option<u64>,
    /// Latent draws in the root pool `N`; `None` means the sum of `N_d`.
    pub root_draws: Option<u64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            replications: DEFAULT_REPLICATIONS,
            subdomain_draws: Some(DEFAULT_SUBDOMAIN_DRAWS),
            root_draws: None,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AggregatorError> {
        let bad = |m: &str| Err(AggregatorError::InvalidConfig(m.to_string()));
        if self.replications == 0 {
            return bad("replications must be positive");
        }
        if self.subdomain_draws == Some(0) {
            return bad("subdomain draws must be positive");
        }
        if self.root_draws == Some(0) {
            return bad("root draws must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad("epsilon must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Split `total` into `parts` near-equal shares, earliest shares absorbing
/// the remainder.
fn allocate(total: u64, parts: usize) -> Vec<u64> {
    let parts_u = parts as u64;
    let base = total / parts_u;
    let extra = total % parts_u;
    (0..parts_u).map(|i| base + u64::from(i < extra)).collect()
}

struct LeafPlan {
    posterior: Beta<f64>,
    draws: u64,
}

struct SubdomainPlan {
    leaves: Vec<LeafPlan>,
    draws: u64,
    root_draws: u64,
}

struct Plan {
    subdomains: Vec<SubdomainPlan>,
    root_draws: u64,
    epsilon: f64,
}

impl Plan {
    fn build(
        counts: &BTreeMap<String, LeafCounts>,
        hierarchy: &HierarchyConfig,
        cfg: &SamplerConfig,
    ) -> Result<Self, AggregatorError> {
        cfg.validate()?;
        let mut subdomains = Vec::with_capacity(hierarchy.subdomains().len());
        for sd in hierarchy.subdomains() {
            let leaf_counts = sd
                .leaves
                .iter()
                .map(|id| {
                    counts
                        .get(id)
                        .copied()
                        .ok_or_else(|| AggregatorError::MissingLeaf(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let draws = cfg
                .subdomain_draws
                .unwrap_or_else(|| leaf_counts.iter().map(LeafCounts::total).sum());
            let leaves = leaf_counts
                .iter()
                .zip(allocate(draws, leaf_counts.len()))
                .map(|(c, n)| LeafPlan {
                    posterior: leaf_posterior(*c, cfg.epsilon).distribution(),
                    draws: n,
                })
                .collect();
            subdomains.push(SubdomainPlan {
                leaves,
                draws,
                root_draws: 0,
            });
        }
        let root_draws = cfg
            .root_draws
            .unwrap_or_else(|| subdomains.iter().map(|s| s.draws).sum());
        for (sd, n) in subdomains
            .iter_mut()
            .zip(allocate(root_draws, hierarchy.subdomains().len()))
        {
            sd.root_draws = n;
        }
        Ok(Self {
            subdomains,
            root_draws,
            epsilon: cfg.epsilon,
        })
    }

    /// One replication: the root mean and each subdomain's posterior mean.
    fn replicate<R: Rng>(&self, rng: &mut R, subdomain_means: &mut Vec<f64>) -> f64 {
        subdomain_means.clear();
        let mut root_successes = 0u64;
        for sd in &self.subdomains {
            let mut latent = 0u64;
            for leaf in &sd.leaves {
                let p = leaf.posterior.sample(rng);
                latent += bernoulli_run(rng, leaf.draws, p);
            }
            let posterior = floored_beta(latent, sd.draws, self.epsilon);
            subdomain_means.push(posterior.mean());
            let p = posterior.distribution().sample(rng);
            root_successes += bernoulli_run(rng, sd.root_draws, p);
        }
        floored_beta(root_successes, self.root_draws, self.epsilon).mean()
    }
}

/// Number of successes among `n` Bernoulli(p) trials.
fn bernoulli_run<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 {
        return 0;
    }
    Binomial::new(n, p.clamp(0.0, 1.0))
        .expect("probability in [0, 1]")
        .sample(rng)
}

/// Posterior samples for the root and every subdomain, one value per
/// replication, in replication order.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchySamples {
    pub root: Vec<f64>,
    pub subdomains: Vec<(String, Vec<f64>)>,
}

pub fn sample_hierarchy(
    counts: &BTreeMap<String, LeafCounts>,
    hierarchy: &HierarchyConfig,
    cfg: &SamplerConfig,
) -> Result<HierarchySamples, AggregatorError> {
    let plan = Plan::build(counts, hierarchy, cfg)?;
    let rows: Vec<(f64, Vec<f64>)> = (0..cfg.replications as u64)
        .into_par_iter()
        .map_init(Vec::new, |scratch, r| {
            let mut rng = substream(Stream::Replication, cfg.seed, &[&r.to_le_bytes()]);
            let root = plan.replicate(&mut rng, scratch);
            (root, scratch.clone())
        })
        .collect();

    let mut subdomains: Vec<(String, Vec<f64>)> = hierarchy
        .subdomains()
        .iter()
        .map(|sd| (sd.name.clone(), Vec::with_capacity(rows.len())))
        .collect();
    let mut root = Vec::with_capacity(rows.len());
    for (root_mean, sd_means) in rows {
        root.push(root_mean);
        for ((_, column), value) in subdomains.iter_mut().zip(sd_means) {
            column.push(value);
        }
    }
    Ok(HierarchySamples { root, subdomains })
}

pub fn sample_root(
    counts: &BTreeMap<String, LeafCounts>,
    hierarchy: &HierarchyConfig,
    cfg: &SamplerConfig,
) -> Result<Vec<f64>, AggregatorError> {
    sample_hierarchy(counts, hierarchy, cfg).map(|s| s.root)
}

/// Monte Carlo mean with an equal-tailed empirical credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub replications: usize,
}

/// Linear interpolation between order statistics (`h = (n - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summarize posterior samples in `[0, 1]`.
///
/// For heavily skewed, near-degenerate samples the arithmetic mean can fall
/// outside the equal-tailed quantile interval; the nearer bound is then moved
/// to the mean so that `ci_low <= mean <= ci_high` always holds.
pub fn summarize(samples: &[f64], level: f64) -> Result<PosteriorSummary, AggregatorError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(AggregatorError::InvalidLevel(level));
    }
    if samples.is_empty() {
        return Err(AggregatorError::EmptySamples);
    }
    if let Some(bad) = samples.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(AggregatorError::InvalidSample(*bad));
    }
    let mean = (samples.iter().sum::<f64>() / samples.len() as f64).clamp(0.0, 1.0);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let ci_low = quantile_sorted(&sorted, tail).min(mean);
    let ci_high = quantile_sorted(&sorted, 1.0 - tail).max(mean);
    Ok(PosteriorSummary {
        mean,
        ci_low,
        ci_high,
        level,
        replications: samples.len(),
    })
}

/// Monte Carlo estimate of `P(p_a > p_b)` for independent floored Beta
/// posteriors of the two counts.
pub fn posterior_greater(
    a: LeafCounts,
    b: LeafCounts,
    draws: u64,
    seed: u64,
    epsilon: f64,
) -> Result<f64, AggregatorError> {
    if draws == 0 {
        return Err(AggregatorError::InvalidConfig(
            "dominance draws must be positive".into(),
        ));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(AggregatorError::InvalidConfig(
            "epsilon must lie in (0, 1]".into(),
        ));
    }
    let da = leaf_posterior(a, epsilon).distribution();
    let db = leaf_posterior(b, epsilon).distribution();
    let mut rng = substream(Stream::Dominance, seed, &[]);
    let mut wins = 0u64;
    for _ in 0..draws {
        let pa = da.sample(&mut rng);
        let pb = db.sample(&mut rng);
        if pa > pb {
            wins += 1;
        }
    }
    Ok(wins as f64 / draws as f64)
}
