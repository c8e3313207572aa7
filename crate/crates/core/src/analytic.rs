//! Closed-form expected costs for time-based caching under a pay-per-use
//! price model.
//!
//! Every per-item formula assumes requests for the item follow a homogeneous
//! Poisson process. Population-level costs are expectations over a
//! double-Zipf catalog (movie rank x ad rank) and are estimated by sampling
//! item pairs from the joint pmf and averaging per-item costs. Transmission
//! is a flat per-request charge added last; it never changes a decision.
//!
//! All times are hours and all rates are requests per hour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::workload::ItemId;

/// Storage price used in the reference experiments, dollars per item-hour.
pub const REFERENCE_STORAGE: f64 = 4.86e-7;
/// Compute price used in the reference experiments, dollars per generated item.
pub const REFERENCE_COMPUTE: f64 = 7.2e-4;
/// Transmission price used in the reference experiments, dollars per served item.
pub const REFERENCE_TRANSMISSION: f64 = 5.25e-4;
/// Monte-Carlo sample count used for population-level estimates.
pub const REFERENCE_SAMPLES: usize = 25_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("rank {rank} outside 1..={n}")]
    RankOutOfRange { rank: u64, n: u64 },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

fn require_positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(invalid(
            name,
            format!("must be positive and finite, got {value}"),
        ))
    }
}

/// Cloud prices for one item: storage per hour, one computation, one transfer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    storage_per_item_hour: f64,
    compute_per_item: f64,
    transmission_per_item: f64,
}

impl CostModel {
    pub fn new(
        storage_per_item_hour: f64,
        compute_per_item: f64,
        transmission_per_item: f64,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            storage_per_item_hour: require_positive("storage price", storage_per_item_hour)?,
            compute_per_item: require_positive("compute price", compute_per_item)?,
            transmission_per_item: require_positive("transmission price", transmission_per_item)?,
        })
    }

    /// AWS-derived prices for 10 s chunks of 720p video.
    pub fn reference() -> Self {
        Self {
            storage_per_item_hour: REFERENCE_STORAGE,
            compute_per_item: REFERENCE_COMPUTE,
            transmission_per_item: REFERENCE_TRANSMISSION,
        }
    }

    pub fn storage(&self) -> f64 {
        self.storage_per_item_hour
    }

    pub fn compute(&self) -> f64 {
        self.compute_per_item
    }

    pub fn transmission(&self) -> f64 {
        self.transmission_per_item
    }

    /// Arrival rate S/C above which keeping an item forever is cheaper than
    /// recomputing it on every request.
    pub fn break_even_rate(&self) -> f64 {
        self.storage_per_item_hour / self.compute_per_item
    }

    /// Gap C/S at which storing an item across the gap costs exactly one
    /// recomputation.
    pub fn break_even_window(&self) -> f64 {
        self.compute_per_item / self.storage_per_item_hour
    }
}

/// Generalized harmonic number `H(n, s) = sum_{i=1..n} i^-s`.
///
/// Terms are accumulated from the smallest (`i = n`) to the largest.
pub fn harmonic(n: u64, s: f64) -> Result<f64, ModelError> {
    if n == 0 {
        return Err(invalid("catalog size", "must be at least 1"));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(invalid(
            "zipf exponent",
            format!("must be finite and >= 0, got {s}"),
        ));
    }
    Ok((1..=n).rev().map(|i| (i as f64).powf(-s)).sum())
}

/// Zipf popularity law over ranks `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipfLaw {
    n: u64,
    s: f64,
    h: f64,
    // cumulative[r - 1] = P(rank <= r); last entry pinned to 1.
    cumulative: Vec<f64>,
}

impl ZipfLaw {
    pub fn new(n: u64, s: f64) -> Result<Self, ModelError> {
        let h = harmonic(n, s)?;
        let len = usize::try_from(n).map_err(|_| invalid("catalog size", "too large"))?;
        let mut cumulative = Vec::with_capacity(len);
        let mut acc = 0.0;
        for rank in 1..=n {
            acc += (rank as f64).powf(-s) / h;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self {
            n,
            s,
            h,
            cumulative,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn exponent(&self) -> f64 {
        self.s
    }

    pub fn normalizer(&self) -> f64 {
        self.h
    }

    pub fn pmf(&self, rank: u64) -> Result<f64, ModelError> {
        zipf_pmf(self, rank)
    }

    /// Inverse-CDF draw of a rank.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        // u < 1 and the last entry is 1, so idx < len.
        idx.min(self.cumulative.len() - 1) as u64 + 1
    }
}

pub fn zipf_pmf(law: &ZipfLaw, rank: u64) -> Result<f64, ModelError> {
    if rank == 0 || rank > law.n {
        return Err(ModelError::RankOutOfRange { rank, n: law.n });
    }
    Ok((rank as f64).powf(-law.s) / law.h)
}

/// Double-Zipf catalog with independent movie and ad choice, driven by a
/// global Poisson arrival rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    movies: ZipfLaw,
    ads: ZipfLaw,
    lambda: f64,
}

impl PopulationModel {
    pub fn new(movies: ZipfLaw, ads: ZipfLaw, lambda: f64) -> Result<Self, ModelError> {
        Ok(Self {
            movies,
            ads,
            lambda: require_positive("arrival rate", lambda)?,
        })
    }

    /// 10,000 movies at s=0.8 and 5,000 ads at s=0.94.
    pub fn reference(lambda: f64) -> Result<Self, ModelError> {
        Self::new(
            ZipfLaw::new(10_000, 0.8)?,
            ZipfLaw::new(5_000, 0.94)?,
            lambda,
        )
    }

    /// Alternate ad catalog (500 ads at s=0.91) seen in the validation figure caption.
    pub fn caption_variant(lambda: f64) -> Result<Self, ModelError> {
        Self::new(ZipfLaw::new(10_000, 0.8)?, ZipfLaw::new(500, 0.91)?, lambda)
    }

    pub fn movies(&self) -> &ZipfLaw {
        &self.movies
    }

    pub fn ads(&self) -> &ZipfLaw {
        &self.ads
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, ModelError> {
        Self::new(self.movies.clone(), self.ads.clone(), lambda)
    }

    pub fn joint_pmf(&self, item: ItemId) -> Result<f64, ModelError> {
        Ok(self.movies.pmf(item.movie as u64)? * self.ads.pmf(item.ad as u64)?)
    }

    /// Per-item Poisson rate `lambda * p(i, j)`.
    pub fn item_rate(&self, item: ItemId) -> Result<f64, ModelError> {
        Ok(self.lambda * self.joint_pmf(item)?)
    }

    pub fn sample_item<R: Rng + ?Sized>(&self, rng: &mut R) -> ItemId {
        let movie = self.movies.sample(rng) as u32;
        let ad = self.ads.sample(rng) as u32;
        ItemId::new(movie, ad)
    }

    /// Draws the Monte-Carlo sample set of per-item rates for this population.
    pub fn sample_rates(&self, mc: MonteCarloSpec) -> RateSample {
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        let rates = (0..mc.samples)
            .map(|_| {
                let movie = self.movies.sample(&mut rng);
                let ad = self.ads.sample(&mut rng);
                let p = (movie as f64).powf(-self.movies.s) / self.movies.h
                    * ((ad as f64).powf(-self.ads.s) / self.ads.h);
                self.lambda * p
            })
            .collect();
        RateSample { rates }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarloSpec {
    pub samples: usize,
    pub seed: u64,
}

impl MonteCarloSpec {
    pub fn new(samples: usize, seed: u64) -> Result<Self, ModelError> {
        if samples == 0 {
            return Err(invalid("monte-carlo samples", "must be at least 1"));
        }
        Ok(Self { samples, seed })
    }
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self {
            samples: REFERENCE_SAMPLES,
            seed: 0,
        }
    }
}

/// Per-item rates drawn from the joint pmf. Sharing one sample across
/// evaluators keeps comparisons between policies and TTLs paired.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSample {
    rates: Vec<f64>,
}

impl RateSample {
    pub fn from_rates(rates: Vec<f64>) -> Self {
        Self { rates }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    fn mean_of(&self, per_item: impl Fn(f64) -> f64) -> f64 {
        self.rates.iter().map(|&r| per_item(r)).sum::<f64>() / self.rates.len() as f64
    }

    pub fn global_ttl_cost(&self, ttl: f64, cm: &CostModel) -> Result<f64, ModelError> {
        check_ttl(ttl)?;
        if ttl == 0.0 {
            // every sample costs exactly C
            return Ok(cm.compute() + cm.transmission());
        }
        Ok(self.mean_of(|r| ttl_item_cost(r, ttl, cm)) + cm.transmission())
    }

    pub fn individual_ttl_cost(&self, cm: &CostModel) -> f64 {
        self.mean_of(|r| individual_item_cost(r, cm)) + cm.transmission()
    }

    pub fn lower_bound_cost(&self, cm: &CostModel) -> f64 {
        self.mean_of(|r| lower_bound_item_cost(r, cm)) + cm.transmission()
    }
}

fn check_ttl(ttl: f64) -> Result<(), ModelError> {
    if ttl.is_nan() || ttl < 0.0 {
        return Err(invalid("ttl", format!("must be >= 0, got {ttl}")));
    }
    Ok(())
}

// S/lambda * (1 - e^{-lambda T}) + C e^{-lambda T}, using expm1 so that the
// small-lambda limit does not cancel.
fn ttl_item_cost(lambda_k: f64, ttl: f64, cm: &CostModel) -> f64 {
    if ttl == 0.0 {
        return cm.compute();
    }
    let x = lambda_k * ttl;
    let stored = -(-x).exp_m1();
    cm.storage() / lambda_k * stored + cm.compute() * (-x).exp()
}

/// Expected serve cost per request (transmission excluded) for an item of
/// rate `lambda_k` kept for `ttl` hours after each access.
///
/// `ttl = 0` gives `C`, `ttl = +inf` gives `S / lambda_k`.
pub fn expected_item_cost(lambda_k: f64, ttl: f64, cm: &CostModel) -> Result<f64, ModelError> {
    require_positive("item rate", lambda_k)?;
    check_ttl(ttl)?;
    Ok(ttl_item_cost(lambda_k, ttl, cm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeepDecision {
    NeverCache,
    CacheForever,
}

/// Rate threshold rule. Equality resolves to `NeverCache`.
pub fn keep_decision(lambda_k: f64, cm: &CostModel) -> KeepDecision {
    if lambda_k > cm.break_even_rate() {
        KeepDecision::CacheForever
    } else {
        KeepDecision::NeverCache
    }
}

/// Per-request cost when the item's true rate is known: `S/lambda` above the
/// threshold, `C` below.
pub fn individual_item_cost(lambda_k: f64, cm: &CostModel) -> f64 {
    match keep_decision(lambda_k, cm) {
        KeepDecision::CacheForever => cm.storage() / lambda_k,
        KeepDecision::NeverCache => cm.compute(),
    }
}

/// Clairvoyant per-request cost `(S/lambda)(1 - e^{-C lambda / S})`: each gap
/// pays `min(gap * S, C)`.
pub fn lower_bound_item_cost(lambda_k: f64, cm: &CostModel) -> f64 {
    let x = lambda_k * cm.break_even_window();
    if x == 0.0 {
        return cm.compute();
    }
    cm.storage() / lambda_k * -(-x).exp_m1()
}

pub fn global_ttl_cost(
    pm: &PopulationModel,
    ttl: f64,
    cm: &CostModel,
    mc: MonteCarloSpec,
) -> Result<f64, ModelError> {
    check_ttl(ttl)?;
    pm.sample_rates(mc).global_ttl_cost(ttl, cm)
}

pub fn individual_ttl_cost(pm: &PopulationModel, cm: &CostModel, mc: MonteCarloSpec) -> f64 {
    pm.sample_rates(mc).individual_ttl_cost(cm)
}

pub fn lower_bound_cost(pm: &PopulationModel, cm: &CostModel, mc: MonteCarloSpec) -> f64 {
    pm.sample_rates(mc).lower_bound_cost(cm)
}

/// Grid search for the global TTL minimizing the expected cost. One rate
/// sample is shared across all grid points; ties go to the smaller TTL.
pub fn optimal_global_ttl(
    pm: &PopulationModel,
    cm: &CostModel,
    mc: MonteCarloSpec,
    grid: &[f64],
) -> Result<(f64, f64), ModelError> {
    if grid.is_empty() {
        return Err(invalid("ttl grid", "must not be empty"));
    }
    for &ttl in grid {
        check_ttl(ttl)?;
    }
    let sample = pm.sample_rates(mc);
    let mut best: Option<(f64, f64)> = None;
    for &ttl in grid {
        let cost = sample.global_ttl_cost(ttl, cm)?;
        best = match best {
            Some((bt, bc)) if bc < cost || (bc == cost && bt <= ttl) => Some((bt, bc)),
            _ => Some((ttl, cost)),
        };
    }
    Ok(best.expect("grid is nonempty"))
}
