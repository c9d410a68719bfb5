//! CSV ingestion onto a uniform source grid.
//!
//! A schema (TOML) lists one `[[sources]]` entry per CSV layout. Each source
//! names its timestamp column and maps numeric columns to channel codes or to
//! weather fields. Files passed on the command line are matched to sources by
//! basename when the source sets `file`, otherwise by header contents.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{ApplianceSeries, HouseholdDataset, TimeGrid, WeatherSeries};
use crate::error::{Error, Result};

fn default_max_fill() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSchema {
    /// Fixed offset of local time from UTC, in hours.
    #[serde(default)]
    pub utc_offset_hours: f64,
    /// Source sampling step in seconds; inferred from the channel files when absent.
    #[serde(default)]
    pub step: Option<i64>,
    /// Longest run of missing samples that is forward-filled.
    #[serde(default = "default_max_fill")]
    pub max_fill: usize,
    /// Channel id of the main meter. When absent the total is the appliance sum.
    #[serde(default)]
    pub total: Option<String>,
    #[serde(default)]
    pub holidays: Vec<NaiveDate>,
    pub sources: Vec<SourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub file: Option<String>,
    pub timestamp: String,
    /// chrono format for local-time timestamps; unix seconds when absent.
    #[serde(default)]
    pub timestamp_format: Option<String>,
    #[serde(default)]
    pub channels: BTreeMap<String, ChannelSpec>,
    #[serde(default)]
    pub weather: Option<WeatherColumns>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSpec {
    Id(String),
    Named { id: String, name: String },
}

impl ChannelSpec {
    pub fn id(&self) -> &str {
        match self {
            ChannelSpec::Id(id) | ChannelSpec::Named { id, .. } => id,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ChannelSpec::Id(id) => id,
            ChannelSpec::Named { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherColumns {
    pub temperature: String,
    pub humidity: String,
    pub dew_point: String,
}

/// A run of missing samples in one channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub start_slot: usize,
    pub len: usize,
    /// `true` when forward-filled, `false` when zeroed.
    pub filled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub max_fill: usize,
    pub gaps: BTreeMap<String, Vec<Gap>>,
    /// Negative readings clamped to zero, per channel.
    pub clamped_negative: BTreeMap<String, usize>,
}

impl GapReport {
    pub fn missing_samples(&self, channel: &str) -> usize {
        self.gaps.get(channel).map_or(0, |g| g.iter().map(|g| g.len).sum())
    }
}

impl IngestSchema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: IngestSchema =
            toml::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn utc_offset_seconds(&self) -> i64 {
        (self.utc_offset_hours * 3600.0).round() as i64
    }

    fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("schema lists no sources".into()));
        }
        if let Some(step) = self.step {
            if step <= 0 {
                return Err(Error::Config(format!("step must be positive, got {step}")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for src in &self.sources {
            for ch in src.channels.values() {
                if !seen.insert(ch.id().to_string()) {
                    return Err(Error::Config(format!("channel {} mapped twice", ch.id())));
                }
            }
        }
        if self.sources.iter().filter(|s| s.weather.is_some()).count() != 1 {
            return Err(Error::Config("schema needs exactly one weather source".into()));
        }
        if let Some(total) = &self.total {
            if !seen.contains(total) {
                return Err(Error::Config(format!("total channel {total} is not mapped")));
            }
        }
        Ok(())
    }

    fn match_source(&self, path: &Path, header: &csv::StringRecord) -> Option<usize> {
        let base = path.file_name().and_then(|b| b.to_str()).unwrap_or_default();
        if let Some(i) = self.sources.iter().position(|s| s.file.as_deref() == Some(base)) {
            return Some(i);
        }
        let has = |c: &str| header.iter().any(|h| h == c);
        self.sources.iter().position(|s| {
            s.file.is_none()
                && has(&s.timestamp)
                && s.channels.keys().all(|c| has(c))
                && s.weather
                    .as_ref()
                    .is_none_or(|w| has(&w.temperature) && has(&w.humidity) && has(&w.dew_point))
        })
    }
}

struct RawColumn {
    times: Vec<i64>,
    values: Vec<Option<f64>>,
}

struct RawSource {
    index: usize,
    columns: Vec<(String, RawColumn)>,
}

fn parse_timestamp(field: &str, format: Option<&str>, offset: i64, path: &Path) -> Result<i64> {
    let field = field.trim();
    match format {
        None => field
            .parse::<i64>()
            .or_else(|_| field.parse::<f64>().map(|t| t as i64))
            .map_err(|_| Error::Data(format!("{}: bad unix timestamp {field:?}", path.display()))),
        Some(fmt) => NaiveDateTime::parse_from_str(field, fmt)
            .map(|dt| dt.and_utc().timestamp() - offset)
            .map_err(|e| Error::Data(format!("{}: timestamp {field:?}: {e}", path.display()))),
    }
}

fn parse_value(field: &str) -> Option<f64> {
    let v = field.trim().parse::<f64>().ok()?;
    v.is_finite().then_some(v)
}

fn read_source(path: &Path, schema: &IngestSchema) -> Result<RawSource> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let index = schema.match_source(path, &header).ok_or_else(|| {
        Error::Data(format!("{}: no schema source matches this file", path.display()))
    })?;
    let src = &schema.sources[index];
    let column_of = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("{}: mandatory column {name:?} not found", path.display()))
        })
    };
    let ts_col = column_of(&src.timestamp)?;
    let mut wanted: Vec<(String, usize)> = Vec::new();
    for (column, ch) in &src.channels {
        wanted.push((ch.id().to_string(), column_of(column)?));
    }
    if let Some(w) = &src.weather {
        wanted.push(("@temperature".into(), column_of(&w.temperature)?));
        wanted.push(("@humidity".into(), column_of(&w.humidity)?));
        wanted.push(("@dew_point".into(), column_of(&w.dew_point)?));
    }

    let offset = schema.utc_offset_seconds();
    let mut times = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); wanted.len()];
    let mut last = i64::MIN;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let t = parse_timestamp(
            record.get(ts_col).unwrap_or_default(),
            src.timestamp_format.as_deref(),
            offset,
            path,
        )?;
        if t < last {
            return Err(Error::Data(format!(
                "{}: timestamps not monotone at data row {} ({t} < {last})",
                path.display(),
                row + 1
            )));
        }
        last = t;
        times.push(t);
        for ((_, col), out) in wanted.iter().zip(values.iter_mut()) {
            out.push(record.get(*col).and_then(parse_value));
        }
    }
    let columns = wanted
        .into_iter()
        .zip(values)
        .map(|((name, _), values)| {
            (
                name,
                RawColumn {
                    times: times.clone(),
                    values,
                },
            )
        })
        .collect();
    Ok(RawSource { index, columns })
}

/// Place readings on the grid. Readings land in the slot containing them;
/// later readings overwrite earlier ones in the same slot.
fn place(col: &RawColumn, grid: TimeGrid) -> Vec<Option<f64>> {
    let mut out = vec![None; grid.count];
    for (t, v) in col.times.iter().zip(&col.values) {
        if *t < grid.start || *t >= grid.end() {
            continue;
        }
        let slot = ((t - grid.start) / grid.step) as usize;
        if v.is_some() {
            out[slot] = *v;
        }
    }
    out
}

/// Forward-fill runs of at most `max_fill` missing samples; longer runs (and
/// leading gaps) become zero. Every run is recorded.
fn fill_gaps(raw: Vec<Option<f64>>, max_fill: usize) -> (Vec<f64>, Vec<Gap>) {
    let mut out = Vec::with_capacity(raw.len());
    let mut gaps = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        match raw[i] {
            Some(v) => {
                out.push(v);
                i += 1;
            }
            None => {
                let start = i;
                while i < raw.len() && raw[i].is_none() {
                    i += 1;
                }
                let len = i - start;
                let prev = out.last().copied();
                let filled = len <= max_fill && prev.is_some();
                let fill = if filled { prev.unwrap_or(0.0) } else { 0.0 };
                out.extend(std::iter::repeat_n(fill, len));
                gaps.push(Gap {
                    start_slot: start,
                    len,
                    filled,
                });
            }
        }
    }
    (out, gaps)
}

/// Sample-and-hold for coarse weather readings: every slot takes the most
/// recent reading at or before it, leading slots take the first reading.
fn hold(raw: Vec<Option<f64>>) -> Vec<f64> {
    let first = raw.iter().flatten().next().copied().unwrap_or(0.0);
    let mut last = first;
    raw.into_iter()
        .map(|v| {
            if let Some(v) = v {
                last = v;
            }
            last
        })
        .collect()
}

fn infer_step(columns: &[&RawColumn]) -> Option<i64> {
    columns
        .iter()
        .flat_map(|c| c.times.windows(2).map(|w| w[1] - w[0]))
        .filter(|d| *d > 0)
        .min()
}

/// Read one or more CSV files described by `schema` into a dataset on the
/// source grid, with a report of filled and zeroed gaps.
pub fn ingest_csv<P: AsRef<Path>>(
    paths: &[P],
    schema: &IngestSchema,
) -> Result<(HouseholdDataset, GapReport)> {
    if paths.is_empty() {
        return Err(Error::Config("no data files given".into()));
    }
    let sources = paths
        .iter()
        .map(|p| read_source(p.as_ref(), schema))
        .collect::<Result<Vec<_>>>()?;

    for (i, spec) in schema.sources.iter().enumerate() {
        if !sources.iter().any(|s| s.index == i) {
            let what = spec.file.clone().unwrap_or_else(|| format!("source #{i}"));
            return Err(Error::Data(format!("no data file supplied for schema source {what}")));
        }
    }

    let mut channel_cols: Vec<(&str, &RawColumn)> = Vec::new();
    let mut weather_cols: BTreeMap<&str, &RawColumn> = BTreeMap::new();
    for src in &sources {
        for (name, col) in &src.columns {
            match name.strip_prefix('@') {
                Some(field) => {
                    weather_cols.insert(field, col);
                }
                None => channel_cols.push((name, col)),
            }
        }
    }
    let channel_raw: Vec<&RawColumn> = channel_cols.iter().map(|(_, c)| *c).collect();
    let step = match schema.step {
        Some(s) => s,
        None => infer_step(&channel_raw)
            .ok_or_else(|| Error::Data("cannot infer the sampling step".into()))?,
    };
    let start = channel_raw
        .iter()
        .filter_map(|c| c.times.first())
        .min()
        .copied()
        .ok_or_else(|| Error::Data("channel files hold no rows".into()))?;
    let end = channel_raw
        .iter()
        .filter_map(|c| c.times.last())
        .max()
        .copied()
        .unwrap_or(start);
    let grid = TimeGrid::new(start, step, ((end - start) / step + 1) as usize)?;

    let mut report = GapReport {
        max_fill: schema.max_fill,
        ..GapReport::default()
    };
    let names: BTreeMap<&str, &str> = schema
        .sources
        .iter()
        .flat_map(|s| s.channels.values().map(|c| (c.id(), c.name())))
        .collect();

    let mut appliances = Vec::new();
    let mut total = None;
    for (id, col) in channel_cols {
        let (mut power, gaps) = fill_gaps(place(col, grid), schema.max_fill);
        let mut clamped = 0;
        for p in power.iter_mut().filter(|p| **p < 0.0) {
            *p = 0.0;
            clamped += 1;
        }
        if clamped > 0 {
            report.clamped_negative.insert(id.to_string(), clamped);
        }
        if !gaps.is_empty() {
            report.gaps.insert(id.to_string(), gaps);
        }
        let series = ApplianceSeries::new(id, names.get(id).copied().unwrap_or(id), power, grid)?;
        if schema.total.as_deref() == Some(id) {
            total = Some(series);
        } else {
            appliances.push(series);
        }
    }
    appliances.sort_by(|a, b| a.id.cmp(&b.id));

    let weather_field = |f: &str| -> Vec<f64> {
        weather_cols.get(f).map_or_else(|| vec![0.0; grid.count], |c| hold(place(c, grid)))
    };
    let humidity = weather_field("humidity")
        .into_iter()
        .map(|h| h.clamp(0.0, 100.0))
        .collect();
    let weather = WeatherSeries::new(
        weather_field("temperature"),
        humidity,
        weather_field("dew_point"),
        grid,
    )?;

    let total = match total {
        Some(t) => t,
        None => {
            let mut sum = vec![0.0; grid.count];
            for a in &appliances {
                for (s, p) in sum.iter_mut().zip(&a.power) {
                    *s += p;
                }
            }
            ApplianceSeries::new("TOTAL", "appliance sum", sum, grid)?
        }
    };

    let dataset = HouseholdDataset::new(
        appliances,
        total,
        weather,
        &schema.holidays,
        schema.utc_offset_seconds(),
    )?;
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::path::PathBuf;

    const SCHEMA: &str = r#"
max_fill = 5
[[sources]]
timestamp = "unix_ts"
[sources.channels]
A = "A"
B = { id = "B", name = "Boiler" }
[sources.weather]
temperature = "T"
humidity = "H"
dew_point = "D"
"#;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_rows_two_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "unix_ts,A,B,T,H,D\n0,1,2,5,50,1\n60,3,4,5,50,1\n120,5,6,5,50,1\n");
        let schema = IngestSchema::from_toml(SCHEMA).unwrap();
        let (ds, report) = ingest_csv(&[p], &schema).unwrap();
        assert_eq!(ds.grid(), TimeGrid { start: 0, step: 60, count: 3 });
        assert_eq!(ds.appliance("A").unwrap().power, vec![1.0, 3.0, 5.0]);
        assert_eq!(ds.appliance("B").unwrap().name, "Boiler");
        assert_eq!(ds.total.power, vec![3.0, 7.0, 11.0]);
        assert!(report.gaps.is_empty());
    }

    #[test]
    fn forward_fill_single_missing_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "unix_ts,A,B,T,H,D\n0,7,2,5,50,1\n60,,4,5,50,1\n120,5,6,5,50,1\n");
        let schema = IngestSchema::from_toml(SCHEMA).unwrap();
        let (ds, report) = ingest_csv(&[p], &schema).unwrap();
        assert_eq!(ds.appliance("A").unwrap().power, vec![7.0, 7.0, 5.0]);
        assert_eq!(report.gaps["A"], vec![Gap { start_slot: 1, len: 1, filled: true }]);
    }

    #[test]
    fn long_gap_is_zeroed_and_reported() {
        let raw = vec![Some(3.0), None, None, None, Some(1.0), None];
        let (v, gaps) = fill_gaps(raw, 2);
        assert_eq!(v, vec![3.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(gaps.len(), 2);
        assert!(!gaps[0].filled && gaps[1].filled);
        let (v, gaps) = fill_gaps(vec![None, Some(2.0)], 5);
        assert_eq!(v, vec![0.0, 2.0]);
        assert!(!gaps[0].filled);
    }

    #[test]
    fn missing_timestamp_row_is_a_gap() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "unix_ts,A,B,T,H,D\n0,7,2,5,50,1\n120,5,6,5,50,1\n");
        let schema = IngestSchema::from_toml(&format!("step = 60\n{SCHEMA}")).unwrap();
        let (ds, _) = ingest_csv(&[p], &schema).unwrap();
        assert_eq!(ds.grid().count, 3);
        assert_eq!(ds.appliance("A").unwrap().power, vec![7.0, 7.0, 5.0]);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let schema = IngestSchema::from_toml(SCHEMA).unwrap();
        let p = write(dir.path(), "bad.csv", "unix_ts,A,B,T,H,D\n60,1,2,5,50,1\n0,3,4,5,50,1\n");
        assert!(matches!(ingest_csv(&[p], &schema), Err(Error::Data(m)) if m.contains("monotone")));
        let p = write(dir.path(), "cols.csv", "unix_ts,A,T,H,D\n0,1,5,50,1\n");
        assert!(ingest_csv(&[p], &schema).is_err());
        let missing = dir.path().join("nope.csv");
        assert!(matches!(ingest_csv(&[missing], &schema), Err(Error::Csv { .. })));
    }

    #[test]
    fn per_file_sources_and_formatted_weather() {
        let schema = IngestSchema::from_toml(
            r#"
utc_offset_hours = -7
total = "WHE"
[[sources]]
file = "Electricity_A.csv"
timestamp = "unix_ts"
channels = { P = "A" }
[[sources]]
file = "Electricity_WHE.csv"
timestamp = "unix_ts"
channels = { P = "WHE" }
[[sources]]
file = "Weather.csv"
timestamp = "Date/Time"
timestamp_format = "%Y-%m-%d %H:%M"
weather = { temperature = "Temp", humidity = "Hum", dew_point = "Dew" }
"#,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        // 1970-01-01 07:00 UTC is midnight at UTC-7.
        let t0 = 7 * 3600;
        let a = write(dir.path(), "Electricity_A.csv", &format!("unix_ts,P\n{},10\n{},20\n", t0, t0 + 60));
        let w = write(dir.path(), "Electricity_WHE.csv", &format!("unix_ts,P\n{},15\n{},25\n", t0, t0 + 60));
        let m = write(dir.path(), "Weather.csv", "Date/Time,Temp,Hum,Dew\n1970-01-01 00:00,-3.5,80,-6\n");
        let (ds, _) = ingest_csv(&[a, w, m], &schema).unwrap();
        assert_eq!(ds.appliances.len(), 1);
        assert_eq!(ds.total.id, "WHE");
        assert_eq!(ds.total.power, vec![15.0, 25.0]);
        assert_eq!(ds.weather.temperature, vec![-3.5, -3.5]);
        assert_eq!(ds.calendar.start_date, NaiveDate::from_ymd_opt(1970, 1, 1).unwrap());
    }

    #[test]
    fn schema_validation() {
        assert!(IngestSchema::from_toml("sources = []").is_err());
        let dup = r#"
[[sources]]
timestamp = "t"
channels = { X = "A", Y = "A" }
weather = { temperature = "T", humidity = "H", dew_point = "D" }
"#;
        assert!(IngestSchema::from_toml(dup).is_err());
    }
}
