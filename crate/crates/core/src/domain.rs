//! Core value types: events, sequences, the spatial region, history windows.
//!
//! All coordinates are stored in normalized model units (see `ingest`); raw
//! calendar/geographic units never enter the math core. Values are immutable
//! after construction and safe to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation: a time stamp and a 2-D location, in scaled units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Event {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Event { t, x, y }
    }

    pub fn location(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Axis-aligned bounding box of the observed region, in scaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialRegion {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl SpatialRegion {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite() && y_lo.is_finite() && y_hi.is_finite()) {
            return Err(Error::Precondition("region bounds must be finite".into()));
        }
        if x_lo >= x_hi || y_lo >= y_hi {
            return Err(Error::Precondition(format!(
                "degenerate region: [{x_lo}, {x_hi}] x [{y_lo}, {y_hi}]"
            )));
        }
        Ok(SpatialRegion { x_lo, x_hi, y_lo, y_hi })
    }

    /// Region area |L|.
    pub fn area(&self) -> f64 {
        (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_lo && x <= self.x_hi && y >= self.y_lo && y <= self.y_hi
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_lo + self.x_hi),
            0.5 * (self.y_lo + self.y_hi),
        ]
    }
}

/// A time-ordered event sequence over a region, with its observation window.
///
/// Times are nondecreasing; equal timestamps are allowed (real catalogs have
/// them) and keep input order. The window `[t_start, t_end]` bounds the
/// likelihood integral; by default it spans from 0 to the last event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    events: Vec<Event>,
    pub region: SpatialRegion,
    pub t_start: f64,
    pub t_end: f64,
}

impl EventSequence {
    /// Build a sequence with the default observation window `[0, t_last]`.
    pub fn new(events: Vec<Event>, region: SpatialRegion) -> Result<Self> {
        let t_end = events.last().map(|e| e.t).unwrap_or(0.0);
        Self::with_window(events, region, 0.0, t_end)
    }

    /// Build a sequence with an explicit observation window.
    pub fn with_window(
        events: Vec<Event>,
        region: SpatialRegion,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end < t_start {
            return Err(Error::Precondition(format!(
                "invalid observation window [{t_start}, {t_end}]"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if !e.t.is_finite() || !e.x.is_finite() || !e.y.is_finite() {
                return Err(Error::Precondition(format!("non-finite event at index {i}")));
            }
            if !region.contains(e.x, e.y) {
                return Err(Error::Precondition(format!(
                    "event at index {i} lies outside the region: ({}, {})",
                    e.x, e.y
                )));
            }
            if i > 0 && e.t < events[i - 1].t {
                return Err(Error::Precondition(format!(
                    "event times decrease at index {i}: {} < {}",
                    e.t,
                    events[i - 1].t
                )));
            }
        }
        Ok(EventSequence { events, region, t_start, t_end })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Observation span `t_end - t_start`.
    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// The history window `N(t, nu)`: events with `t_j` in `[t - nu, t)`.
    ///
    /// Half-open on the right, so an event exactly at the evaluation time does
    /// not excite itself. Order is preserved; the empty slice is valid.
    pub fn history(&self, t: f64, nu: f64) -> &[Event] {
        history(&self.events, t, nu)
    }
}

/// The history window over a sorted event slice: `t_j` in `[t - nu, t)`.
pub fn history(events: &[Event], t: f64, nu: f64) -> &[Event] {
    debug_assert!(nu > 0.0, "history window nu must be positive");
    debug_assert!(t.is_finite());
    let lo = events.partition_point(|e| e.t < t - nu);
    let hi = events.partition_point(|e| e.t < t);
    &events[lo..hi]
}

/// A truncated lookback: reference time `t` and horizon `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub t: f64,
    pub nu: f64,
}

impl HistoryWindow {
    pub fn new(t: f64, nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !t.is_finite() {
            return Err(Error::Precondition(format!(
                "history window needs nu > 0 and finite t, got nu={nu}, t={t}"
            )));
        }
        Ok(HistoryWindow { t, nu })
    }

    pub fn of<'a>(&self, seq: &'a EventSequence) -> &'a [Event] {
        seq.history(self.t, self.nu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(ts: &[f64]) -> EventSequence {
        let region = SpatialRegion::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let events = ts.iter().map(|&t| Event::new(t, 0.0, 0.0)).collect();
        EventSequence::new(events, region).unwrap()
    }

    #[test]
    fn history_window_membership() {
        let s = seq(&[1.0, 2.0, 3.0]);
        let h = s.history(3.5, 2.0);
        let ts: Vec<f64> = h.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![2.0, 3.0]);
    }

    #[test]
    fn history_of_empty_sequence_is_empty() {
        let s = seq(&[]);
        assert!(s.history(5.0, 1.0).is_empty());
    }

    #[test]
    fn history_right_boundary_is_excluded() {
        // An event exactly at the query time is outside the half-open window.
        let s = seq(&[0.0, 10.0]);
        assert!(s.history(10.0, 5.0).is_empty());
    }

    #[test]
    fn history_left_boundary_is_included() {
        let s = seq(&[5.0, 7.0]);
        let ts: Vec<f64> = s.history(10.0, 5.0).iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![5.0, 7.0]);
    }

    #[test]
    fn ties_keep_input_order() {
        let region = SpatialRegion::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let events = vec![
            Event::new(1.0, 0.1, 0.0),
            Event::new(1.0, 0.2, 0.0),
            Event::new(1.0, 0.3, 0.0),
        ];
        let s = EventSequence::new(events, region).unwrap();
        let xs: Vec<f64> = s.history(2.0, 5.0).iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn decreasing_times_are_rejected() {
        let region = SpatialRegion::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let events = vec![Event::new(2.0, 0.0, 0.0), Event::new(1.0, 0.0, 0.0)];
        assert!(EventSequence::new(events, region).is_err());
    }

    #[test]
    fn out_of_region_event_is_rejected() {
        let region = SpatialRegion::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let events = vec![Event::new(0.0, 3.0, 0.0)];
        assert!(EventSequence::new(events, region).is_err());
    }

    #[test]
    fn degenerate_region_is_rejected() {
        assert!(SpatialRegion::new(1.0, 1.0, 0.0, 2.0).is_err());
        assert!(SpatialRegion::new(0.0, 1.0, 2.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn history_respects_bounds_and_nesting(
            mut ts in prop::collection::vec(0.0f64..100.0, 0..50),
            t in 0.0f64..120.0,
            nu1 in 0.1f64..30.0,
            extra in 0.1f64..30.0,
        ) {
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let s = seq(&ts);
            let nu2 = nu1 + extra;
            let h1 = s.history(t, nu1);
            let h2 = s.history(t, nu2);
            for e in h1 {
                prop_assert!(e.t >= t - nu1 && e.t < t);
            }
            // A narrower window is a suffix subset of the wider one.
            prop_assert!(h1.len() <= h2.len());
            prop_assert_eq!(&h2[h2.len() - h1.len()..], h1);
        }
    }
}
