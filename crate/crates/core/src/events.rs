//! ON/OFF state extraction, start-up events and low-power exclusion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{HouseholdDataset, TimeGrid};
use crate::error::{Error, Result};

pub const DEFAULT_ON_THRESHOLD: f64 = 15.0;
pub const DEFAULT_MIN_DURATION: usize = 2;
pub const DEFAULT_EXCLUDE_BELOW: f64 = 50.0;
pub const DEFAULT_PEAK_QUANTILE: f64 = 0.99;

/// Start-up and shut-down events of one appliance.
///
/// A start-up is the timestamp of the first slot of an ON run; a shut-down
/// is the timestamp of the first OFF slot after it. A series that begins ON
/// has no start-up for its first run, and one that ends ON has no final
/// shut-down.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    pub appliance_id: String,
    pub startups: Vec<i64>,
    pub shutdowns: Vec<i64>,
    pub on_mask: Vec<bool>,
    pub grid: TimeGrid,
}

impl EventStream {
    pub fn from_mask(appliance_id: impl Into<String>, on_mask: Vec<bool>, grid: TimeGrid) -> Self {
        let mut startups = Vec::new();
        let mut shutdowns = Vec::new();
        for i in 1..on_mask.len() {
            match (on_mask[i - 1], on_mask[i]) {
                (false, true) => startups.push(grid.timestamp(i)),
                (true, false) => shutdowns.push(grid.timestamp(i)),
                _ => {}
            }
        }
        EventStream {
            appliance_id: appliance_id.into(),
            startups,
            shutdowns,
            on_mask,
            grid,
        }
    }

    /// Rebuild the ON mask from the event lists alone.
    pub fn from_events(
        appliance_id: impl Into<String>,
        startups: Vec<i64>,
        shutdowns: Vec<i64>,
        grid: TimeGrid,
    ) -> Result<Self> {
        let slot = |t: i64| -> Result<usize> {
            let off = t - grid.start;
            if off <= 0 || off % grid.step != 0 || off / grid.step >= grid.count as i64 {
                return Err(Error::Data(format!("event at {t} is not an interior grid point")));
            }
            Ok((off / grid.step) as usize)
        };
        let starts_on = match (startups.first(), shutdowns.first()) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(s), Some(d)) => d < s,
        };
        let mut mask = vec![false; grid.count];
        let mut state = starts_on;
        let mut cursor = 0usize;
        let mut boundaries: Vec<usize> = startups
            .iter()
            .chain(&shutdowns)
            .map(|t| slot(*t))
            .collect::<Result<_>>()?;
        boundaries.sort_unstable();
        for b in boundaries {
            mask[cursor..b].fill(state);
            state = !state;
            cursor = b;
        }
        mask[cursor..].fill(state);
        let rebuilt = EventStream::from_mask(appliance_id, mask, grid);
        if rebuilt.startups != startups || rebuilt.shutdowns != shutdowns {
            return Err(Error::Data(format!(
                "events of {} do not alternate",
                rebuilt.appliance_id
            )));
        }
        Ok(rebuilt)
    }

    /// Two-level power trace (0 or `level` watts) that re-creates this mask.
    pub fn reconstruct_power(&self, level: f64) -> Vec<f64> {
        self.on_mask.iter().map(|on| if *on { level } else { 0.0 }).collect()
    }

    pub fn starts_on(&self) -> bool {
        self.on_mask.first().copied().unwrap_or(false)
    }
}

/// Run-length view of a boolean mask: `(state, start, len)`.
fn runs(mask: &[bool]) -> Vec<(bool, usize, usize)> {
    let mut out: Vec<(bool, usize, usize)> = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        match out.last_mut() {
            Some((s, _, len)) if *s == m => *len += 1,
            _ => out.push((m, i, 1)),
        }
    }
    out
}

/// Debounce a raw ON mask: ON runs shorter than `min_duration` are switched
/// OFF, then OFF runs shorter than `min_duration` lying between two ON runs
/// are switched ON. The result is a fixed point of this function.
pub fn debounce(mask: &[bool], min_duration: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for (state, start, len) in runs(mask) {
        if state && len < min_duration {
            out[start..start + len].fill(false);
        }
    }
    let r = runs(&out);
    for w in 0..r.len() {
        let (state, start, len) = r[w];
        let interior = w > 0 && w + 1 < r.len();
        if !state && interior && len < min_duration {
            out[start..start + len].fill(true);
        }
    }
    out
}

/// Threshold a power series into ON/OFF states (ON iff power > threshold),
/// debounce, and collect start-up and shut-down events.
pub fn extract_events(
    series: &crate::data::ApplianceSeries,
    on_threshold: f64,
    min_duration: usize,
) -> Result<EventStream> {
    if !(on_threshold > 0.0) {
        return Err(Error::Config(format!("on_threshold must be > 0, got {on_threshold}")));
    }
    if min_duration == 0 {
        return Err(Error::Config("min_duration must be >= 1".into()));
    }
    let raw: Vec<bool> = series.power.iter().map(|p| *p > on_threshold).collect();
    Ok(EventStream::from_mask(
        series.id.clone(),
        debounce(&raw, min_duration),
        series.grid,
    ))
}

/// Linear-interpolated quantile (`q` in `[0, 1]`) of a non-empty sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_val, upper) = v.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub excluded: Vec<String>,
    pub rule_threshold: f64,
    pub peak_quantile: f64,
    pub retained_count: usize,
    /// Robust peak (quantile of power) per channel.
    pub peaks: BTreeMap<String, f64>,
}

impl ExclusionReport {
    pub fn is_excluded(&self, id: &str) -> bool {
        self.excluded.iter().any(|e| e == id)
    }
}

/// Split off appliances whose robust peak power is below `peak_threshold`.
/// Returns the dataset restricted to the retained appliances; excluded
/// channels stay available in the input dataset for later re-attachment.
pub fn exclude_low_power(
    dataset: &HouseholdDataset,
    peak_threshold: f64,
) -> Result<(HouseholdDataset, ExclusionReport)> {
    exclude_low_power_at(dataset, peak_threshold, DEFAULT_PEAK_QUANTILE)
}

pub fn exclude_low_power_at(
    dataset: &HouseholdDataset,
    peak_threshold: f64,
    peak_quantile: f64,
) -> Result<(HouseholdDataset, ExclusionReport)> {
    if !(peak_threshold > 0.0) {
        return Err(Error::Config(format!("exclusion threshold must be > 0, got {peak_threshold}")));
    }
    let mut peaks = BTreeMap::new();
    let mut retained = Vec::new();
    let mut excluded = Vec::new();
    for a in &dataset.appliances {
        let peak = quantile(&a.power, peak_quantile);
        peaks.insert(a.id.clone(), peak);
        if peak < peak_threshold {
            excluded.push(a.id.clone());
        } else {
            retained.push(a.id.clone());
        }
    }
    if retained.is_empty() {
        return Err(Error::Data(format!(
            "all {} appliances fall below {peak_threshold} W; nothing to mine",
            dataset.appliances.len()
        )));
    }
    let report = ExclusionReport {
        excluded,
        rule_threshold: peak_threshold,
        peak_quantile,
        retained_count: retained.len(),
        peaks,
    };
    Ok((dataset.with_appliances(&retained)?, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsManifest {
    pub grid: TimeGrid,
    pub days: usize,
    pub on_threshold: f64,
    pub min_duration: usize,
    /// Channels mined for association, in matrix order.
    pub retained: Vec<String>,
    pub exclusion: ExclusionReport,
}

/// Write `events.csv` (`appliance_id,kind,timestamp`) and `events.json`.
pub fn write_events(dir: &Path, streams: &[EventStream], manifest: &EventsManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("events.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["appliance_id", "kind", "timestamp"])
        .map_err(|e| Error::csv(&path, e))?;
    for s in streams {
        let mut all: Vec<(i64, &str)> = s
            .startups
            .iter()
            .map(|t| (*t, "startup"))
            .chain(s.shutdowns.iter().map(|t| (*t, "shutdown")))
            .collect();
        all.sort();
        for (t, kind) in all {
            w.write_record([s.appliance_id.as_str(), kind, &t.to_string()])
                .map_err(|e| Error::csv(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("events.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Read streams for every retained channel (matrix order) plus the manifest.
pub fn read_events(dir: &Path) -> Result<(Vec<EventStream>, EventsManifest)> {
    let path = dir.join("events.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: EventsManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let path = dir.join("events.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let mut by_id: BTreeMap<String, (Vec<i64>, Vec<i64>)> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(&path, e))?;
        let (id, kind, t) = (&rec[0], &rec[1], &rec[2]);
        let t: i64 = t
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad timestamp {t:?}", path.display())))?;
        let entry = by_id.entry(id.to_string()).or_default();
        match kind {
            "startup" => entry.0.push(t),
            "shutdown" => entry.1.push(t),
            other => return Err(Error::Data(format!("unknown event kind {other:?}"))),
        }
    }
    let streams = manifest
        .retained
        .iter()
        .map(|id| {
            let (up, down) = by_id.remove(id).unwrap_or_default();
            EventStream::from_events(id.clone(), up, down, manifest.grid)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((streams, manifest))
}
