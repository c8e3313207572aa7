//! Per-request caching decisions.
//!
//! A policy sees requests in time order and answers two questions for each:
//! was the item resident when the request arrived, and how long should it be
//! kept now. The engine owns residency and the cost ledger; policies only
//! keep the bookkeeping their rule needs.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::analytic::{keep_decision, CostModel, KeepDecision, PopulationModel};
use crate::workload::{ItemId, Request};

// Relative slack when comparing quantities that are equal in exact arithmetic
// but computed along different float paths (e.g. `(C/S) * S` against `C`).
const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("request at {found} precedes previous request at {previous}")]
    TimeRegression { previous: f64, found: f64 },
    #[error("invalid policy parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("item {0} is outside the population catalog")]
    UnknownItem(ItemId),
}

/// How long the requested item stays resident after this request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Retention {
    /// Not stored.
    Drop,
    /// Resident while `now < t`; `t` may be `+inf`.
    Until(f64),
    /// Resident up to and including the item's next request at `t`.
    ThroughNextRequest(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyVerdict {
    pub hit: bool,
    pub store_until: Retention,
    /// Another item pushed out to make room (capacity-bounded policies only).
    pub evicted: Option<ItemId>,
}

impl PolicyVerdict {
    fn new(hit: bool, store_until: Retention) -> Self {
        Self {
            hit,
            store_until,
            evicted: None,
        }
    }
}

pub trait Policy {
    fn name(&self) -> &'static str;

    /// `next_time` is the item's next request time; only policies that
    /// report `needs_lookahead` receive it.
    fn on_request(
        &mut self,
        request: &Request,
        next_time: Option<f64>,
    ) -> Result<PolicyVerdict, PolicyError>;

    fn needs_lookahead(&self) -> bool {
        false
    }

    /// Upper bound on resident items, if the policy has one.
    fn capacity(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Default, Clone)]
struct Clock {
    last: Option<f64>,
}

impl Clock {
    fn advance(&mut self, now: f64) -> Result<(), PolicyError> {
        if let Some(previous) = self.last {
            if now < previous {
                return Err(PolicyError::TimeRegression {
                    previous,
                    found: now,
                });
            }
        }
        self.last = Some(now);
        Ok(())
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, PolicyError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(PolicyError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

/// One TTL for every item, refreshed on each access.
#[derive(Debug, Clone)]
pub struct GlobalTtl {
    ttl: f64,
    deadlines: HashMap<ItemId, f64>,
    clock: Clock,
}

impl GlobalTtl {
    pub fn new(ttl: f64) -> Result<Self, PolicyError> {
        if ttl.is_nan() || ttl < 0.0 {
            return Err(PolicyError::InvalidParameter {
                name: "ttl",
                reason: format!("must be >= 0, got {ttl}"),
            });
        }
        Ok(Self {
            ttl,
            deadlines: HashMap::new(),
            clock: Clock::default(),
        })
    }

    pub fn ttl(&self) -> f64 {
        self.ttl
    }
}

impl Policy for GlobalTtl {
    fn name(&self) -> &'static str {
        "global-ttl"
    }

    fn on_request(
        &mut self,
        request: &Request,
        _: Option<f64>,
    ) -> Result<PolicyVerdict, PolicyError> {
        let now = request.time;
        self.clock.advance(now)?;
        let hit = self
            .deadlines
            .get(&request.item)
            .is_some_and(|&deadline| now < deadline);
        if self.ttl == 0.0 {
            return Ok(PolicyVerdict::new(hit, Retention::Drop));
        }
        let deadline = now + self.ttl;
        self.deadlines.insert(request.item, deadline);
        Ok(PolicyVerdict::new(hit, Retention::Until(deadline)))
    }
}

/// Trailing record of one item's request times over a fixed duration.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    duration: f64,
    timestamps: VecDeque<f64>,
}

impl SlidingWindow {
    pub fn new(duration: f64) -> Result<Self, PolicyError> {
        Ok(Self {
            duration: positive("window", duration)?,
            timestamps: VecDeque::new(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Drops entries outside `(now - duration, now]`.
    pub fn expire(&mut self, now: f64) {
        let horizon = now - self.duration;
        while self.timestamps.front().is_some_and(|&t| t <= horizon) {
            self.timestamps.pop_front();
        }
    }

    pub fn record(&mut self, now: f64) {
        self.expire(now);
        self.timestamps.push_back(now);
    }

    pub fn count(&self) -> usize {
        self.timestamps.len()
    }

    pub fn estimated_rate(&self) -> f64 {
        self.count() as f64 / self.duration
    }

    /// Instant at which the count falls below `min_count` if no further
    /// requests arrive, or `None` if it is already below.
    pub fn holds_until(&self, min_count: usize) -> Option<f64> {
        let n = self.count();
        if min_count == 0 || n < min_count {
            return None;
        }
        Some(self.timestamps[n - min_count] + self.duration)
    }
}

/// Smallest request count `m` with `m / window > S / C`, the window-estimate
/// version of the keep rule. A window of exactly `C/S` needs two requests.
pub fn min_count_to_store(window: f64, cm: &CostModel) -> usize {
    let exact = window * cm.break_even_rate();
    let nearest = exact.round();
    let threshold = if (exact - nearest).abs() <= TIE_EPSILON * nearest.max(1.0) {
        nearest
    } else {
        exact
    };
    threshold.floor() as usize + 1
}

#[derive(Debug, Clone)]
struct WindowedItem {
    window: SlidingWindow,
    resident_until: Option<f64>,
}

/// Stores an item while its sliding-window rate estimate exceeds S/C. The
/// decision is re-made on every request, and residency lapses at the first
/// instant expiring window entries would flip it.
#[derive(Debug, Clone)]
pub struct IndividualTtl {
    window: f64,
    min_count: usize,
    items: HashMap<ItemId, WindowedItem>,
    clock: Clock,
}

impl IndividualTtl {
    pub fn new(window: f64, cm: &CostModel) -> Result<Self, PolicyError> {
        let window = positive("window", window)?;
        Ok(Self {
            window,
            min_count: min_count_to_store(window, cm),
            items: HashMap::new(),
            clock: Clock::default(),
        })
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }
}

impl Policy for IndividualTtl {
    fn name(&self) -> &'static str {
        "individual-ttl"
    }

    fn on_request(
        &mut self,
        request: &Request,
        _: Option<f64>,
    ) -> Result<PolicyVerdict, PolicyError> {
        let now = request.time;
        self.clock.advance(now)?;
        let window = self.window;
        let state = self
            .items
            .entry(request.item)
            .or_insert_with(|| WindowedItem {
                window: SlidingWindow {
                    duration: window,
                    timestamps: VecDeque::new(),
                },
                resident_until: None,
            });
        let hit = state.resident_until.is_some_and(|until| now < until);
        state.window.record(now);
        let store_until = state
            .window
            .holds_until(self.min_count)
            .filter(|&until| until > now);
        state.resident_until = store_until;
        Ok(PolicyVerdict::new(
            hit,
            store_until.map_or(Retention::Drop, Retention::Until),
        ))
    }
}

/// Individual TTL given each item's true rate instead of an estimate:
/// items above S/C are kept forever from their first request.
#[derive(Debug, Clone)]
pub struct PerfectRateTtl {
    population: PopulationModel,
    cost: CostModel,
    resident: HashSet<ItemId>,
    clock: Clock,
}

impl PerfectRateTtl {
    pub fn new(population: PopulationModel, cost: CostModel) -> Self {
        Self {
            population,
            cost,
            resident: HashSet::new(),
            clock: Clock::default(),
        }
    }
}

impl Policy for PerfectRateTtl {
    fn name(&self) -> &'static str {
        "individual-ttl-oracle"
    }

    fn on_request(
        &mut self,
        request: &Request,
        _: Option<f64>,
    ) -> Result<PolicyVerdict, PolicyError> {
        self.clock.advance(request.time)?;
        let rate = self
            .population
            .item_rate(request.item)
            .map_err(|_| PolicyError::UnknownItem(request.item))?;
        let hit = self.resident.contains(&request.item);
        match keep_decision(rate, &self.cost) {
            KeepDecision::CacheForever => {
                self.resident.insert(request.item);
                Ok(PolicyVerdict::new(hit, Retention::Until(f64::INFINITY)))
            }
            KeepDecision::NeverCache => Ok(PolicyVerdict::new(hit, Retention::Drop)),
        }
    }
}

/// Whether holding an item across `gap` hours is strictly cheaper than
/// recomputing it. Equal cost resolves to recompute.
pub fn cheaper_to_store(gap: f64, cm: &CostModel) -> bool {
    gap * cm.storage() < cm.compute() * (1.0 - TIE_EPSILON)
}

/// Clairvoyant floor: knowing the next request time, keep the item across
/// the gap iff that is cheaper than recomputing.
#[derive(Debug, Clone)]
pub struct LowerBound {
    cost: CostModel,
    kept_for: HashMap<ItemId, f64>,
    clock: Clock,
}

impl LowerBound {
    pub fn new(cost: CostModel) -> Self {
        Self {
            cost,
            kept_for: HashMap::new(),
            clock: Clock::default(),
        }
    }
}

impl Policy for LowerBound {
    fn name(&self) -> &'static str {
        "lower-bound"
    }

    fn needs_lookahead(&self) -> bool {
        true
    }

    fn on_request(
        &mut self,
        request: &Request,
        next_time: Option<f64>,
    ) -> Result<PolicyVerdict, PolicyError> {
        let now = request.time;
        self.clock.advance(now)?;
        let hit = self.kept_for.remove(&request.item) == Some(now);
        let store_until = match next_time {
            Some(next) if next >= now && cheaper_to_store(next - now, &self.cost) => {
                self.kept_for.insert(request.item, next);
                Retention::ThroughNextRequest(next)
            }
            _ => Retention::Drop,
        };
        Ok(PolicyVerdict::new(hit, store_until))
    }
}

/// Fixed-capacity least-recently-used cache.
#[derive(Debug, Clone)]
pub struct LruState {
    capacity: usize,
    // recency stamp -> item, oldest first
    order: BTreeMap<u64, ItemId>,
    stamps: HashMap<ItemId, u64>,
    next_stamp: u64,
}

impl LruState {
    pub fn new(capacity: usize) -> Result<Self, PolicyError> {
        if capacity == 0 {
            return Err(PolicyError::InvalidParameter {
                name: "capacity",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self {
            capacity,
            order: BTreeMap::new(),
            stamps: HashMap::new(),
            next_stamp: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn contains(&self, item: &ItemId) -> bool {
        self.stamps.contains_key(item)
    }

    /// Most recent first.
    pub fn recency(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.order.values().rev().copied()
    }

    /// Touches `item`; returns whether it was resident and what was evicted.
    pub fn access(&mut self, item: ItemId) -> (bool, Option<ItemId>) {
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        if let Some(old) = self.stamps.insert(item, stamp) {
            self.order.remove(&old);
            self.order.insert(stamp, item);
            return (true, None);
        }
        self.order.insert(stamp, item);
        if self.stamps.len() > self.capacity {
            let (_, victim) = self
                .order
                .pop_first()
                .expect("over capacity implies nonempty");
            self.stamps.remove(&victim);
            return (false, Some(victim));
        }
        (false, None)
    }
}

#[derive(Debug, Clone)]
pub struct Lru {
    state: LruState,
    clock: Clock,
}

impl Lru {
    pub fn new(capacity: usize) -> Result<Self, PolicyError> {
        Ok(Self {
            state: LruState::new(capacity)?,
            clock: Clock::default(),
        })
    }

    pub fn state(&self) -> &LruState {
        &self.state
    }
}

impl Policy for Lru {
    fn name(&self) -> &'static str {
        "lru"
    }

    fn capacity(&self) -> Option<usize> {
        Some(self.state.capacity)
    }

    fn on_request(
        &mut self,
        request: &Request,
        _: Option<f64>,
    ) -> Result<PolicyVerdict, PolicyError> {
        self.clock.advance(request.time)?;
        let (hit, evicted) = self.state.access(request.item);
        Ok(PolicyVerdict {
            hit,
            store_until: Retention::Until(f64::INFINITY),
            evicted,
        })
    }
}

/// Serializable description of a policy and its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    GlobalTtl { ttl: f64 },
    IndividualTtl { window: f64 },
    IndividualTtlOracle,
    LowerBound,
    Lru { capacity: usize },
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::GlobalTtl { .. } => "global-ttl",
            PolicySpec::IndividualTtl { .. } => "individual-ttl",
            PolicySpec::IndividualTtlOracle => "individual-ttl-oracle",
            PolicySpec::LowerBound => "lower-bound",
            PolicySpec::Lru { .. } => "lru",
        }
    }

    /// Name and value of the tunable parameter, if any.
    pub fn parameter(&self) -> (&'static str, Option<f64>) {
        match *self {
            PolicySpec::GlobalTtl { ttl } => ("ttl", Some(ttl)),
            PolicySpec::IndividualTtl { window } => ("window", Some(window)),
            PolicySpec::Lru { capacity } => ("capacity", Some(capacity as f64)),
            PolicySpec::IndividualTtlOracle | PolicySpec::LowerBound => ("none", None),
        }
    }

    /// `population` is required by the perfect-rate oracle only.
    pub fn build(
        &self,
        cm: &CostModel,
        population: Option<&PopulationModel>,
    ) -> Result<Box<dyn Policy + Send>, PolicyError> {
        Ok(match *self {
            PolicySpec::GlobalTtl { ttl } => Box::new(GlobalTtl::new(ttl)?),
            PolicySpec::IndividualTtl { window } => Box::new(IndividualTtl::new(window, cm)?),
            PolicySpec::IndividualTtlOracle => {
                let pm = population.ok_or(PolicyError::InvalidParameter {
                    name: "population",
                    reason: "the rate oracle needs a synthetic population".into(),
                })?;
                Box::new(PerfectRateTtl::new(pm.clone(), *cm))
            }
            PolicySpec::LowerBound => Box::new(LowerBound::new(*cm)),
            PolicySpec::Lru { capacity } => Box::new(Lru::new(capacity)?),
        })
    }
}
