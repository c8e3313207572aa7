//! Request streams: synthetic Poisson x double-Zipf arrivals, timestamped
//! request traces, and arrivals synthesized from per-movie view counts.
//!
//! Text formats, one record per line, `#` lines and blank lines skipped:
//!
//! ```text
//! # request trace: time_hours,movie_id[,ad_id]
//! 0.0,17,3
//! 1.5,17
//!
//! # count trace: movie_id,upload_time_hours,total_views,horizon_hours
//! 17,0.0,1200,3840.0
//! ```

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::io::BufRead;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytic::{PopulationModel, ZipfLaw};

/// A cacheable item: movie `movie` rendered with ad `ad`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId {
    pub movie: u32,
    pub ad: u32,
}

impl ItemId {
    pub const fn new(movie: u32, ad: u32) -> Self {
        Self { movie, ad }
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.movie, self.ad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub time: f64,
    pub item: ItemId,
}

impl Request {
    pub const fn new(time: f64, item: ItemId) -> Self {
        Self { time, item }
    }
}

/// One request-trace line. `ad` is `None` when the trace carries movies only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub time: f64,
    pub movie: u32,
    pub ad: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountTraceRecord {
    pub movie_id: u32,
    pub upload_time: f64,
    pub total_views: u64,
    pub horizon: f64,
}

impl CountTraceRecord {
    pub fn window(&self) -> f64 {
        self.horizon - self.upload_time
    }

    pub fn rate(&self) -> f64 {
        self.total_views as f64 / self.window()
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: timestamp {found} precedes previous timestamp {previous}")]
    TimeRegression {
        line: usize,
        previous: f64,
        found: f64,
    },
    #[error("line {line}: negative timestamp {found}")]
    NegativeTime { line: usize, found: f64 },
    #[error("movie {movie_id}: empty observation window [{upload_time}, {horizon})")]
    EmptyWindow {
        movie_id: u32,
        upload_time: f64,
        horizon: f64,
    },
    #[error("invalid workload parameter: {0}")]
    InvalidParameter(String),
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

fn malformed(line: usize, reason: impl Into<String>) -> WorkloadError {
    WorkloadError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn parse_hours(line: usize, what: &str, field: &str) -> Result<f64, WorkloadError> {
    let value: f64 = field
        .parse()
        .map_err(|_| malformed(line, format!("{what} `{field}` is not a number")))?;
    if !value.is_finite() {
        return Err(malformed(line, format!("{what} `{field}` is not finite")));
    }
    Ok(value)
}

fn parse_id(line: usize, what: &str, field: &str) -> Result<u32, WorkloadError> {
    match field.parse::<u32>() {
        Ok(0) => Err(malformed(line, format!("{what} must be >= 1"))),
        Ok(id) => Ok(id),
        Err(_) => Err(malformed(
            line,
            format!("{what} `{field}` is not a positive integer"),
        )),
    }
}

// Returns the payload of a data line, or None for blank and comment lines.
fn data_line(raw: &str) -> Option<&str> {
    let line = raw.trim_end_matches(['\n', '\r']).trim();
    if line.is_empty() || line.starts_with('#') {
        None
    } else {
        Some(line)
    }
}

/// Parses one request-trace line. Blank and comment lines give `Ok(None)`.
pub fn parse_request_line(line_no: usize, raw: &str) -> Result<Option<TraceEntry>, WorkloadError> {
    let Some(line) = data_line(raw) else {
        return Ok(None);
    };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if !(2..=3).contains(&fields.len()) {
        return Err(malformed(
            line_no,
            format!(
                "expected 2 or 3 comma-separated fields, found {}",
                fields.len()
            ),
        ));
    }
    let time = parse_hours(line_no, "time", fields[0])?;
    if time < 0.0 {
        return Err(WorkloadError::NegativeTime {
            line: line_no,
            found: time,
        });
    }
    let movie = parse_id(line_no, "movie id", fields[1])?;
    let ad = match fields.get(2) {
        Some(f) => Some(parse_id(line_no, "ad id", f)?),
        None => None,
    };
    Ok(Some(TraceEntry { time, movie, ad }))
}

/// Streaming reader over a request trace. Yields entries in file order and
/// stops after the first error.
pub struct RequestTraceReader<R> {
    source: R,
    buf: String,
    line_no: usize,
    previous: Option<f64>,
    failed: bool,
}

pub fn parse_request_trace<R: BufRead>(source: R) -> RequestTraceReader<R> {
    RequestTraceReader {
        source,
        buf: String::new(),
        line_no: 0,
        previous: None,
        failed: false,
    }
}

impl<R: BufRead> Iterator for RequestTraceReader<R> {
    type Item = Result<TraceEntry, WorkloadError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.source.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            self.line_no += 1;
            let entry = match parse_request_line(self.line_no, &self.buf) {
                Ok(Some(entry)) => entry,
                Ok(None) => continue,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            };
            if let Some(previous) = self.previous {
                if entry.time < previous {
                    self.failed = true;
                    return Some(Err(WorkloadError::TimeRegression {
                        line: self.line_no,
                        previous,
                        found: entry.time,
                    }));
                }
            }
            self.previous = Some(entry.time);
            return Some(Ok(entry));
        }
    }
}

pub fn parse_count_line(
    line_no: usize,
    raw: &str,
) -> Result<Option<CountTraceRecord>, WorkloadError> {
    let Some(line) = data_line(raw) else {
        return Ok(None);
    };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(malformed(
            line_no,
            format!("expected 4 comma-separated fields, found {}", fields.len()),
        ));
    }
    let movie_id = parse_id(line_no, "movie id", fields[0])?;
    let upload_time = parse_hours(line_no, "upload time", fields[1])?;
    if upload_time < 0.0 {
        return Err(WorkloadError::NegativeTime {
            line: line_no,
            found: upload_time,
        });
    }
    let total_views = fields[2].parse::<u64>().map_err(|_| {
        malformed(
            line_no,
            format!("view count `{}` is not a count", fields[2]),
        )
    })?;
    let horizon = parse_hours(line_no, "horizon", fields[3])?;
    if horizon <= upload_time {
        return Err(WorkloadError::EmptyWindow {
            movie_id,
            upload_time,
            horizon,
        });
    }
    Ok(Some(CountTraceRecord {
        movie_id,
        upload_time,
        total_views,
        horizon,
    }))
}

pub fn parse_count_trace<R: BufRead>(source: R) -> Result<Vec<CountTraceRecord>, WorkloadError> {
    let mut records = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        if let Some(record) = parse_count_line(idx + 1, &line?)? {
            records.push(record);
        }
    }
    Ok(records)
}

/// Keeps a seeded uniform random subset of `fraction` of the records, in
/// their original order.
pub fn subsample_records(
    records: &[CountTraceRecord],
    fraction: f64,
    seed: u64,
) -> Result<Vec<CountTraceRecord>, WorkloadError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(WorkloadError::InvalidParameter(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let keep = ((records.len() as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, records.len(), keep.min(records.len())).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i]).collect())
}

/// Homogeneous Poisson arrivals over `[0, duration)` with movie and ad drawn
/// independently from the population's Zipf laws.
pub struct SyntheticStream {
    population: PopulationModel,
    interarrival: Exp<f64>,
    rng: ChaCha8Rng,
    clock: f64,
    duration: f64,
}

pub fn gen_synthetic(
    pm: &PopulationModel,
    duration: f64,
    seed: u64,
) -> Result<SyntheticStream, WorkloadError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(WorkloadError::InvalidParameter(format!(
            "duration must be positive and finite, got {duration}"
        )));
    }
    let interarrival = Exp::new(pm.lambda())
        .map_err(|e| WorkloadError::InvalidParameter(format!("arrival rate: {e}")))?;
    Ok(SyntheticStream {
        population: pm.clone(),
        interarrival,
        rng: ChaCha8Rng::seed_from_u64(seed),
        clock: 0.0,
        duration,
    })
}

impl Iterator for SyntheticStream {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        if self.clock >= self.duration {
            return None;
        }
        self.clock += self.interarrival.sample(&mut self.rng);
        if self.clock >= self.duration {
            return None;
        }
        let item = self.population.sample_item(&mut self.rng);
        Some(Request::new(self.clock, item))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    time: f64,
    record: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.record.cmp(&other.record))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct RecordArrivals {
    movie: u32,
    horizon: f64,
    clock: f64,
    gap: Exp<f64>,
    rng: ChaCha8Rng,
}

impl RecordArrivals {
    fn advance(&mut self) -> Option<f64> {
        self.clock += self.gap.sample(&mut self.rng);
        (self.clock < self.horizon).then_some(self.clock)
    }
}

/// Time-ordered merge of one constant-rate Poisson stream per count record.
/// Equal timestamps come out in record order.
pub struct CountSynthesis {
    streams: Vec<Option<RecordArrivals>>,
    heap: BinaryHeap<Reverse<Pending>>,
}

pub fn synthesize_from_counts(
    records: &[CountTraceRecord],
    seed: u64,
) -> Result<CountSynthesis, WorkloadError> {
    let mut streams = Vec::with_capacity(records.len());
    let mut heap = BinaryHeap::new();
    for (idx, rec) in records.iter().enumerate() {
        if !(rec.upload_time.is_finite() && rec.horizon.is_finite() && rec.window() > 0.0) {
            return Err(WorkloadError::EmptyWindow {
                movie_id: rec.movie_id,
                upload_time: rec.upload_time,
                horizon: rec.horizon,
            });
        }
        if rec.total_views == 0 {
            streams.push(None);
            continue;
        }
        let gap = Exp::new(rec.rate())
            .map_err(|e| WorkloadError::InvalidParameter(format!("movie {}: {e}", rec.movie_id)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        let mut arrivals = RecordArrivals {
            movie: rec.movie_id,
            horizon: rec.horizon,
            clock: rec.upload_time,
            gap,
            rng,
        };
        if let Some(time) = arrivals.advance() {
            heap.push(Reverse(Pending { time, record: idx }));
        }
        streams.push(Some(arrivals));
    }
    Ok(CountSynthesis { streams, heap })
}

impl Iterator for CountSynthesis {
    type Item = TraceEntry;

    fn next(&mut self) -> Option<TraceEntry> {
        let Reverse(Pending { time, record }) = self.heap.pop()?;
        let stream = self.streams[record]
            .as_mut()
            .expect("only live streams are scheduled");
        let movie = stream.movie;
        if let Some(next) = stream.advance() {
            self.heap.push(Reverse(Pending { time: next, record }));
        }
        Some(TraceEntry {
            time,
            movie,
            ad: None,
        })
    }
}

/// Attaches an ad to every entry that lacks one, drawn i.i.d. from `ads`
/// independently of the movie. Entries that already name an ad keep it.
pub struct OverlayAds<I> {
    inner: I,
    ads: ZipfLaw,
    rng: ChaCha8Rng,
}

pub fn overlay_ads<I>(entries: I, ads: &ZipfLaw, seed: u64) -> OverlayAds<I::IntoIter>
where
    I: IntoIterator<Item = TraceEntry>,
{
    OverlayAds {
        inner: entries.into_iter(),
        ads: ads.clone(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl<I: Iterator<Item = TraceEntry>> Iterator for OverlayAds<I> {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        let entry = self.inner.next()?;
        let ad = match entry.ad {
            Some(ad) => ad,
            None => self.ads.sample(&mut self.rng) as u32,
        };
        Some(Request::new(entry.time, ItemId::new(entry.movie, ad)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.inner.size_hint()
    }
}

/// Content digest of a request stream, used to show that paired runs saw
/// the same trace.
pub fn trace_checksum<'a>(requests: impl IntoIterator<Item = &'a Request>) -> String {
    let mut hasher = Sha256::new();
    for r in requests {
        hasher.update(r.time.to_bits().to_le_bytes());
        hasher.update(r.item.movie.to_le_bytes());
        hasher.update(r.item.ad.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
