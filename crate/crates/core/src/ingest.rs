//! Event catalog ingestion: CSV parsing, normalization to model units, and
//! train/validation/test splitting.
//!
//! Raw catalogs carry calendar timestamps and latitude/longitude degrees.
//! Normalization maps timestamps to scaled units (one unit is 30 days by
//! default) relative to an origin, and maps the configured lon/lat box
//! affinely onto the target region (longitude becomes x, latitude y). The
//! math core only ever sees normalized values.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::domain::{Event, EventSequence, SpatialRegion};
use crate::error::{Error, Result};

/// Seconds per scaled time unit: 30 days.
pub const SECONDS_PER_UNIT: f64 = 3600.0 * 24.0 * 30.0;

/// Timestamp formats tried in order when none is configured.
pub const DEFAULT_TIME_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%m/%d/%Y %I:%M:%S %p",
    "%m/%d/%Y %H:%M",
    "%Y-%m-%d",
    "%m/%d/%Y",
];

/// One parsed catalog row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// UTC assumed.
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
}

/// Which CSV columns hold the fields, plus accepted timestamp formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    pub lat: String,
    pub lon: String,
    #[serde(default)]
    pub time_formats: Vec<String>,
}

impl ColumnMap {
    pub fn new(time: &str, lat: &str, lon: &str) -> Self {
        ColumnMap {
            time: time.into(),
            lat: lat.into(),
            lon: lon.into(),
            time_formats: Vec::new(),
        }
    }

    fn parse_time(&self, s: &str) -> Option<NaiveDateTime> {
        let formats: Vec<&str> = if self.time_formats.is_empty() {
            DEFAULT_TIME_FORMATS.to_vec()
        } else {
            self.time_formats.iter().map(|f| f.as_str()).collect()
        };
        for f in formats {
            if let Ok(ts) = NaiveDateTime::parse_from_str(s, f) {
                return Some(ts);
            }
            // Date-only formats need the missing midnight time appended.
            if let Ok(d) = chrono::NaiveDate::parse_from_str(s, f) {
                return Some(d.and_hms_opt(0, 0, 0).unwrap());
            }
        }
        None
    }
}

/// A row that failed to parse, with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

/// Parse result: good records in file order plus per-row diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseReport {
    pub records: Vec<RawRecord>,
    pub errors: Vec<RowError>,
}

/// Parse an event catalog CSV. Malformed rows are collected into the report,
/// not silently dropped; missing columns are a configuration error.
pub fn parse_csv(path: &str, columns: &ColumnMap) -> Result<ParseReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_reader(file, columns)
}

pub fn parse_csv_reader(reader: impl std::io::Read, columns: &ColumnMap) -> Result<ParseReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Config(format!("unreadable CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column '{name}'")))
    };
    let it = col(&columns.time)?;
    let ila = col(&columns.lat)?;
    let ilo = col(&columns.lon)?;

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { line, message: format!("unreadable row: {e}") });
                continue;
            }
        };
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let timestamp = match columns.parse_time(field(it)) {
            Some(ts) => ts,
            None => {
                errors.push(RowError {
                    line,
                    message: format!("unparseable timestamp '{}'", field(it)),
                });
                continue;
            }
        };
        let num = |i: usize, what: &str| -> std::result::Result<f64, RowError> {
            field(i).parse::<f64>().map_err(|_| RowError {
                line,
                message: format!("unparseable {what} '{}'", field(i)),
            })
        };
        let lat = match num(ila, "latitude") {
            Ok(v) => v,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        let lon = match num(ilo, "longitude") {
            Ok(v) => v,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        if !(-90.0..=90.0).contains(&lat) {
            errors.push(RowError { line, message: format!("latitude {lat} out of [-90, 90]") });
            continue;
        }
        if !(-180.0..=180.0).contains(&lon) {
            errors.push(RowError { line, message: format!("longitude {lon} out of [-180, 180]") });
            continue;
        }
        records.push(RawRecord { timestamp, lat, lon });
    }
    Ok(ParseReport { records, errors })
}

/// Normalization from calendar/geographic units into model units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    /// Timestamp mapped to t = 0.
    pub origin: NaiveDateTime,
    /// Seconds per scaled time unit.
    pub seconds_per_unit: f64,
    /// Source box: records outside it are excluded.
    pub lon_lo: f64,
    pub lon_hi: f64,
    pub lat_lo: f64,
    pub lat_hi: f64,
    /// Target region the source box maps onto (lon -> x, lat -> y).
    pub target: SpatialRegion,
}

impl NormalizationSpec {
    pub fn new(
        origin: NaiveDateTime,
        lon_range: (f64, f64),
        lat_range: (f64, f64),
        target: SpatialRegion,
    ) -> Result<Self> {
        if lon_range.0 >= lon_range.1 || lat_range.0 >= lat_range.1 {
            return Err(Error::Config("degenerate lon/lat box".into()));
        }
        Ok(NormalizationSpec {
            origin,
            seconds_per_unit: SECONDS_PER_UNIT,
            lon_lo: lon_range.0,
            lon_hi: lon_range.1,
            lat_lo: lat_range.0,
            lat_hi: lat_range.1,
            target,
        })
    }

    pub fn with_seconds_per_unit(mut self, s: f64) -> Self {
        self.seconds_per_unit = s;
        self
    }

    pub fn normalize_time(&self, ts: NaiveDateTime) -> f64 {
        let delta = ts.signed_duration_since(self.origin);
        let seconds = delta.num_seconds() as f64
            + delta.subsec_nanos() as f64 * 1e-9;
        seconds / self.seconds_per_unit
    }

    pub fn denormalize_time(&self, t: f64) -> NaiveDateTime {
        // Split whole seconds from the fraction: a single nanosecond count
        // overflows f64 integer precision after a few months.
        let seconds = t * self.seconds_per_unit;
        let whole = seconds.trunc() as i64;
        let nanos = (seconds.fract() * 1e9).round() as i64;
        self.origin + chrono::Duration::seconds(whole) + chrono::Duration::nanoseconds(nanos)
    }

    pub fn normalize_location(&self, lon: f64, lat: f64) -> [f64; 2] {
        let fx = (lon - self.lon_lo) / (self.lon_hi - self.lon_lo);
        let fy = (lat - self.lat_lo) / (self.lat_hi - self.lat_lo);
        [
            self.target.x_lo + fx * (self.target.x_hi - self.target.x_lo),
            self.target.y_lo + fy * (self.target.y_hi - self.target.y_lo),
        ]
    }

    pub fn denormalize_location(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x - self.target.x_lo) / (self.target.x_hi - self.target.x_lo);
        let fy = (y - self.target.y_lo) / (self.target.y_hi - self.target.y_lo);
        (
            self.lon_lo + fx * (self.lon_hi - self.lon_lo),
            self.lat_lo + fy * (self.lat_hi - self.lat_lo),
        )
    }

    fn in_box(&self, r: &RawRecord) -> bool {
        r.lon >= self.lon_lo && r.lon <= self.lon_hi && r.lat >= self.lat_lo && r.lat <= self.lat_hi
    }
}

/// Normalization output: the sequence plus how many records fell outside the
/// configured box.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub seq: EventSequence,
    pub excluded: usize,
}

/// Map records into model units, excluding out-of-box records and sorting by
/// time (stable, so tied timestamps keep file order).
pub fn normalize(records: &[RawRecord], spec: &NormalizationSpec) -> Result<Normalized> {
    if records.is_empty() {
        return Err(Error::Precondition("no records to normalize".into()));
    }
    let mut excluded = 0usize;
    let mut events: Vec<Event> = Vec::with_capacity(records.len());
    for r in records {
        if !spec.in_box(r) {
            excluded += 1;
            continue;
        }
        let t = spec.normalize_time(r.timestamp);
        let [x, y] = spec.normalize_location(r.lon, r.lat);
        events.push(Event::new(t, x, y));
    }
    events.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    let t_start = events.first().map(|e| e.t.min(0.0)).unwrap_or(0.0);
    let t_end = events.last().map(|e| e.t).unwrap_or(0.0);
    let seq = EventSequence::with_window(events, spec.target, t_start, t_end)?;
    Ok(Normalized { seq, excluded })
}

/// Contiguous time-ordered split by event count: floor for train and
/// validation, remainder to test. Windows meet at the boundary event times.
pub fn split(
    seq: &EventSequence,
    f_train: f64,
    f_val: f64,
) -> Result<(EventSequence, EventSequence, EventSequence)> {
    if !(f_train > 0.0 && f_val > 0.0 && f_train + f_val < 1.0) {
        return Err(Error::Precondition(format!(
            "need 0 < f_train and 0 < f_val with f_train + f_val < 1, got {f_train}, {f_val}"
        )));
    }
    let n = seq.len();
    let n_train = (n as f64 * f_train).floor() as usize;
    let n_val = (n as f64 * f_val).floor() as usize;
    let events = seq.events();
    let b1 = if n_train == 0 { seq.t_start } else { events[n_train - 1].t };
    let b2 = if n_val == 0 { b1 } else { events[n_train + n_val - 1].t };
    let train = EventSequence::with_window(
        events[..n_train].to_vec(),
        seq.region,
        seq.t_start,
        b1,
    )?;
    let val = EventSequence::with_window(
        events[n_train..n_train + n_val].to_vec(),
        seq.region,
        b1,
        b2,
    )?;
    let test = EventSequence::with_window(
        events[n_train + n_val..].to_vec(),
        seq.region,
        b2,
        seq.t_end.max(b2),
    )?;
    Ok((train, val, test))
}

/// Partition the observation span into `n_parts` equal spans, each re-offset
/// to start at t = 0.
pub fn split_sequences(seq: &EventSequence, n_parts: usize) -> Result<Vec<EventSequence>> {
    if n_parts == 0 {
        return Err(Error::Precondition("n_parts must be at least 1".into()));
    }
    let span = seq.span() / n_parts as f64;
    let mut parts = Vec::with_capacity(n_parts);
    for i in 0..n_parts {
        let lo = seq.t_start + i as f64 * span;
        let hi = seq.t_start + (i + 1) as f64 * span;
        let last = i == n_parts - 1;
        let events: Vec<Event> = seq
            .events()
            .iter()
            .filter(|e| e.t >= lo && (e.t < hi || (last && e.t <= hi)))
            .map(|e| Event::new(e.t - lo, e.x, e.y))
            .collect();
        parts.push(EventSequence::with_window(events, seq.region, 0.0, span)?);
    }
    Ok(parts)
}

/// Write a sequence as the canonical `t,x,y` CSV (9 decimal places).
pub fn events_to_csv(seq: &EventSequence) -> String {
    let mut out = String::from("t,x,y\n");
    for e in seq.events() {
        out.push_str(&format!("{:.9},{:.9},{:.9}\n", e.t, e.x, e.y));
    }
    out
}

/// Read the canonical `t,x,y` CSV produced by [`events_to_csv`].
pub fn events_from_csv(
    content: &str,
    region: SpatialRegion,
    window: Option<(f64, f64)>,
) -> Result<EventSequence> {
    let mut events = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if idx == 0 {
            if line.trim() != "t,x,y" {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header 't,x,y', got '{line}'"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let mut next = |what: &str| -> Result<f64> {
            it.next()
                .ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: format!("missing {what}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("unparseable {what}"),
                })
        };
        let t = next("t")?;
        let x = next("x")?;
        let y = next("y")?;
        events.push(Event::new(t, x, y));
    }
    match window {
        Some((t0, t1)) => EventSequence::with_window(events, region, t0, t1),
        None => EventSequence::new(events, region),
    }
}
