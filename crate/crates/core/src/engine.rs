//! Discrete-event replay of a request stream against one policy.
//!
//! Storage is charged per residency interval in continuous time. Events at
//! equal timestamps run in a fixed order: expiring residencies, then
//! requests (in stream order), then residencies that were held through a
//! request at that instant. Open residencies are closed at the last request
//! time when the stream ends.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::analytic::CostModel;
use crate::policies::{Policy, PolicyError, Retention};
use crate::workload::{ItemId, Request};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("request {index} at {found} precedes previous request at {previous}")]
    OutOfOrder {
        index: usize,
        previous: f64,
        found: f64,
    },
    #[error("request {index} has invalid time {found}")]
    InvalidTime { index: usize, found: f64 },
    #[error("policy {policy} failed: {source}")]
    Policy {
        policy: &'static str,
        #[source]
        source: PolicyError,
    },
    #[error("policy {policy} violated an invariant at t={time}: {detail}")]
    Violation {
        policy: &'static str,
        time: f64,
        detail: String,
    },
    #[error("no requests were measured")]
    NoRequests,
    #[error("invalid measurement window: {0}")]
    InvalidWindow(String),
    #[error("warmup {warmup} h is beyond the trace span {span} h")]
    WarmupBeyondSpan { warmup: f64, span: f64 },
}

/// Dollars and counts accumulated by one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostLedger {
    pub compute_dollars: f64,
    pub storage_dollars: f64,
    pub transmission_dollars: f64,
    pub requests: u64,
    pub computes: u64,
    pub hits: u64,
    /// Hours between the first and last measured request.
    pub span: f64,
    pub stored_item_hours: f64,
}

impl CostLedger {
    pub fn total(&self) -> f64 {
        self.compute_dollars + self.storage_dollars + self.transmission_dollars
    }

    pub fn cost_per_request(&self) -> Result<f64, EngineError> {
        cost_per_request(self)
    }

    pub fn hit_ratio(&self) -> Option<f64> {
        (self.requests > 0).then(|| self.hits as f64 / self.requests as f64)
    }
}

pub fn cost_per_request(ledger: &CostLedger) -> Result<f64, EngineError> {
    if ledger.requests == 0 {
        return Err(EngineError::NoRequests);
    }
    Ok(ledger.total() / ledger.requests as f64)
}

/// Interval over which requests and storage are charged. Cache state is
/// always built from the whole stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub warmup: f64,
    pub until: f64,
}

impl Measurement {
    pub const FULL: Measurement = Measurement {
        warmup: 0.0,
        until: f64::INFINITY,
    };

    pub fn new(warmup: f64, until: f64) -> Result<Self, EngineError> {
        if !(warmup.is_finite() && warmup >= 0.0) {
            return Err(EngineError::InvalidWindow(format!(
                "warmup must be finite and >= 0, got {warmup}"
            )));
        }
        if until.is_nan() || until <= warmup {
            return Err(EngineError::InvalidWindow(format!(
                "end {until} must be after warmup {warmup}"
            )));
        }
        Ok(Self { warmup, until })
    }

    fn counts(&self, time: f64) -> bool {
        time >= self.warmup && time < self.until
    }

    fn clipped(&self, from: f64, to: f64) -> f64 {
        (to.min(self.until) - from.max(self.warmup)).max(0.0)
    }
}

impl Default for Measurement {
    fn default() -> Self {
        Self::FULL
    }
}

/// An item's current stay in the cache.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residency {
    pub stored_since: f64,
    pub deadline: f64,
    /// Deadline is the item's next request, which the residency serves.
    pub through_request: bool,
    generation: u64,
}

impl Residency {
    pub fn is_resident(&self, now: f64) -> bool {
        self.stored_since <= now
            && (now < self.deadline || (self.through_request && now == self.deadline))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Expiry {
    time: f64,
    // 0: expires before requests at `time`; 1: after them
    phase: u8,
    item: ItemId,
    generation: u64,
}

impl Eq for Expiry {}

impl Ord for Expiry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.phase.cmp(&other.phase))
            .then(self.item.cmp(&other.item))
            .then(self.generation.cmp(&other.generation))
    }
}

impl PartialOrd for Expiry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Resident items plus the pending-expiry queue.
#[derive(Debug, Default)]
pub struct CacheState {
    resident: HashMap<ItemId, Residency>,
    expiries: BinaryHeap<Reverse<Expiry>>,
    next_generation: u64,
}

impl CacheState {
    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn get(&self, item: &ItemId) -> Option<&Residency> {
        self.resident.get(item)
    }

    // Pops every expiry due before a request at `now`; returns closed intervals.
    fn expire_before(&mut self, now: f64, closed: &mut impl FnMut(f64, f64)) {
        while let Some(Reverse(next)) = self.expiries.peek().copied() {
            let due = next.time < now || (next.time == now && next.phase == 0);
            if !due {
                break;
            }
            self.expiries.pop();
            if let Some(res) = self.resident.get(&next.item) {
                if res.generation == next.generation {
                    closed(res.stored_since, next.time);
                    self.resident.remove(&next.item);
                }
            }
        }
    }

    fn remove(&mut self, item: &ItemId) -> Option<Residency> {
        self.resident.remove(item)
    }

    fn store(&mut self, item: ItemId, now: f64, deadline: f64, through_request: bool) {
        let generation = self.next_generation;
        self.next_generation += 1;
        let stored_since = self.resident.get(&item).map_or(now, |r| r.stored_since);
        self.resident.insert(
            item,
            Residency {
                stored_since,
                deadline,
                through_request,
                generation,
            },
        );
        if deadline.is_finite() {
            self.expiries.push(Reverse(Expiry {
                time: deadline,
                phase: u8::from(through_request),
                item,
                generation,
            }));
        }
    }
}

struct Accumulator {
    window: Measurement,
    requests: u64,
    computes: u64,
    hits: u64,
    stored_item_hours: f64,
    first: Option<f64>,
    last: Option<f64>,
}

impl Accumulator {
    fn close(&mut self, from: f64, to: f64) {
        self.stored_item_hours += self.window.clipped(from, to);
    }

    fn finish(self, cm: &CostModel) -> CostLedger {
        CostLedger {
            compute_dollars: self.computes as f64 * cm.compute(),
            storage_dollars: self.stored_item_hours * cm.storage(),
            transmission_dollars: self.requests as f64 * cm.transmission(),
            requests: self.requests,
            computes: self.computes,
            hits: self.hits,
            span: match (self.first, self.last) {
                (Some(a), Some(b)) => b - a,
                _ => 0.0,
            },
            stored_item_hours: self.stored_item_hours,
        }
    }
}

/// Next request time for the same item, for each position in `trace`.
pub fn next_request_times(trace: &[Request]) -> Vec<Option<f64>> {
    let mut upcoming: HashMap<ItemId, f64> = HashMap::new();
    let mut next = vec![None; trace.len()];
    for (idx, r) in trace.iter().enumerate().rev() {
        next[idx] = upcoming.insert(r.item, r.time);
    }
    next
}

/// Replays `trace` through `policy`, charging everything.
pub fn run<I>(trace: I, policy: &mut dyn Policy, cm: &CostModel) -> Result<CostLedger, EngineError>
where
    I: IntoIterator<Item = Request>,
{
    run_measured(trace, policy, cm, Measurement::FULL)
}

/// Replays `trace` through `policy`, charging only requests and storage that
/// fall inside `window`.
pub fn run_measured<I>(
    trace: I,
    policy: &mut dyn Policy,
    cm: &CostModel,
    window: Measurement,
) -> Result<CostLedger, EngineError>
where
    I: IntoIterator<Item = Request>,
{
    if policy.needs_lookahead() {
        let trace: Vec<Request> = trace.into_iter().collect();
        let next = next_request_times(&trace);
        drive(trace.into_iter().zip(next), policy, cm, window)
    } else {
        drive(trace.into_iter().map(|r| (r, None)), policy, cm, window)
    }
}

/// Steady-state measurement: state is built from the whole stream but only
/// activity after `warmup` is charged. `horizon` is the end of the observed
/// period when known (e.g. a synthetic run's duration); otherwise the last
/// request time is used.
pub fn warmup_filter<I>(
    trace: I,
    policy: &mut dyn Policy,
    cm: &CostModel,
    warmup: f64,
    horizon: Option<f64>,
) -> Result<CostLedger, EngineError>
where
    I: IntoIterator<Item = Request>,
{
    let trace: Vec<Request> = trace.into_iter().collect();
    let span = horizon.unwrap_or_else(|| trace.last().map_or(0.0, |r| r.time));
    if warmup > 0.0 && warmup >= span {
        return Err(EngineError::WarmupBeyondSpan { warmup, span });
    }
    run_measured(trace, policy, cm, Measurement::new(warmup, f64::INFINITY)?)
}

fn violation(policy: &dyn Policy, time: f64, detail: impl Into<String>) -> EngineError {
    EngineError::Violation {
        policy: policy.name(),
        time,
        detail: detail.into(),
    }
}

fn drive<I>(
    events: I,
    policy: &mut dyn Policy,
    cm: &CostModel,
    window: Measurement,
) -> Result<CostLedger, EngineError>
where
    I: Iterator<Item = (Request, Option<f64>)>,
{
    let mut cache = CacheState::default();
    let mut acc = Accumulator {
        window,
        requests: 0,
        computes: 0,
        hits: 0,
        stored_item_hours: 0.0,
        first: None,
        last: None,
    };
    let mut clock: Option<f64> = None;

    for (index, (request, next_time)) in events.enumerate() {
        let now = request.time;
        if !(now.is_finite() && now >= 0.0) {
            return Err(EngineError::InvalidTime { index, found: now });
        }
        if let Some(previous) = clock {
            if now < previous {
                return Err(EngineError::OutOfOrder {
                    index,
                    previous,
                    found: now,
                });
            }
        }
        clock = Some(now);

        cache.expire_before(now, &mut |from, to| acc.close(from, to));
        let resident = cache.get(&request.item).is_some_and(|r| r.is_resident(now));

        let verdict =
            policy
                .on_request(&request, next_time)
                .map_err(|source| EngineError::Policy {
                    policy: policy.name(),
                    source,
                })?;
        if verdict.hit != resident {
            return Err(violation(
                policy,
                now,
                format!(
                    "reported hit={} for {} but residency says {}",
                    verdict.hit, request.item, resident
                ),
            ));
        }

        if window.counts(now) {
            acc.requests += 1;
            if verdict.hit {
                acc.hits += 1;
            } else {
                acc.computes += 1;
            }
            acc.first.get_or_insert(now);
            acc.last = Some(now);
        }

        if let Some(victim) = verdict.evicted {
            if victim == request.item {
                return Err(violation(policy, now, "evicted the requested item"));
            }
            let res = cache
                .remove(&victim)
                .ok_or_else(|| violation(policy, now, format!("evicted non-resident {victim}")))?;
            acc.close(res.stored_since, now);
        }

        let (deadline, through) = match verdict.store_until {
            Retention::Drop => (None, false),
            Retention::Until(t) => (Some(t), false),
            Retention::ThroughNextRequest(t) => (Some(t), true),
        };
        match deadline {
            Some(t) if t.is_nan() || t < now => {
                return Err(violation(
                    policy,
                    now,
                    format!("retention deadline {t} in the past"),
                ));
            }
            Some(t) if t > now || (through && t == now) => {
                cache.store(request.item, now, t, through);
            }
            _ => {
                if let Some(res) = cache.remove(&request.item) {
                    acc.close(res.stored_since, now);
                }
            }
        }

        if let Some(capacity) = policy.capacity() {
            if cache.len() > capacity {
                return Err(violation(
                    policy,
                    now,
                    format!("{} resident items exceed capacity {capacity}", cache.len()),
                ));
            }
        }
    }

    if let Some(end) = clock {
        let mut open: Vec<(ItemId, Residency)> = cache.resident.drain().collect();
        open.sort_unstable_by_key(|(item, _)| *item);
        for (_, res) in open {
            acc.close(res.stored_since, res.deadline.min(end));
        }
    }
    Ok(acc.finish(cm))
}
