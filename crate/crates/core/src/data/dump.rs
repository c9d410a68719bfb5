//! Canonical on-disk dataset layout: one `timestamp,power` CSV per channel
//! under `channels/`, `total.csv`, `weather.csv`, and `manifest.json`.
//! Floats are written in shortest round-trip form, so a dump reads back
//! bit-identical and rewriting it produces identical bytes.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ApplianceSeries, GapReport, HouseholdDataset, TimeGrid, WeatherSeries};
use crate::error::{Error, Result};

pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub grid: TimeGrid,
    pub days: usize,
    pub utc_offset_seconds: i64,
    pub start_date: NaiveDate,
    pub holidays: Vec<NaiveDate>,
    pub channels: Vec<ChannelEntry>,
    pub total: ChannelEntry,
    pub gap_report: GapReport,
}

fn write_series(path: &Path, grid: TimeGrid, columns: &[(&str, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["timestamp"];
    header.extend(columns.iter().map(|(n, _)| *n));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for i in 0..grid.count {
        let mut row = vec![grid.timestamp(i).to_string()];
        row.extend(columns.iter().map(|(_, v)| v[i].to_string()));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_series(path: &Path, grid: TimeGrid, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut cols = vec![Vec::with_capacity(grid.count); width];
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let t: i64 = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: bad timestamp at row {i}", path.display())))?;
        if t != grid.timestamp(i) {
            return Err(Error::Data(format!("{}: row {i} is off the manifest grid", path.display())));
        }
        for (c, col) in cols.iter_mut().enumerate() {
            let v: f64 = rec
                .get(c + 1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad value at row {i}", path.display())))?;
            col.push(v);
        }
    }
    if cols.iter().any(|c| c.len() != grid.count) {
        return Err(Error::Shape(format!("{}: expected {} rows", path.display(), grid.count)));
    }
    Ok(cols)
}

fn channel_file(id: &str) -> String {
    format!("{id}.csv")
}

pub fn write_dump(dataset: &HouseholdDataset, gaps: &GapReport, dir: &Path) -> Result<DatasetManifest> {
    let chan_dir = dir.join("channels");
    fs::create_dir_all(&chan_dir).map_err(|e| Error::io(&chan_dir, e))?;
    let grid = dataset.grid();
    for a in &dataset.appliances {
        write_series(&chan_dir.join(channel_file(&a.id)), grid, &[("power", &a.power)])?;
    }
    write_series(&dir.join("total.csv"), grid, &[("power", &dataset.total.power)])?;
    let w = &dataset.weather;
    write_series(
        &dir.join("weather.csv"),
        grid,
        &[
            ("temperature", &w.temperature),
            ("humidity", &w.humidity),
            ("dew_point", &w.dew_point),
        ],
    )?;
    let manifest = DatasetManifest {
        version: DUMP_VERSION,
        grid,
        days: dataset.days,
        utc_offset_seconds: dataset.utc_offset_seconds,
        start_date: dataset.calendar.start_date,
        holidays: dataset.calendar.holidays(),
        channels: dataset
            .appliances
            .iter()
            .map(|a| ChannelEntry {
                id: a.id.clone(),
                name: a.name.clone(),
            })
            .collect(),
        total: ChannelEntry {
            id: dataset.total.id.clone(),
            name: dataset.total.name.clone(),
        },
        gap_report: gaps.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_dump(dir: &Path) -> Result<(HouseholdDataset, DatasetManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.version != DUMP_VERSION {
        return Err(Error::Data(format!("unsupported dump version {}", manifest.version)));
    }
    let grid = manifest.grid;
    let mut appliances = Vec::new();
    for ch in &manifest.channels {
        let mut cols = read_series(&dir.join("channels").join(channel_file(&ch.id)), grid, 1)?;
        appliances.push(ApplianceSeries::new(&ch.id, &ch.name, cols.remove(0), grid)?);
    }
    let mut cols = read_series(&dir.join("total.csv"), grid, 1)?;
    let total = ApplianceSeries::new(&manifest.total.id, &manifest.total.name, cols.remove(0), grid)?;
    let mut w = read_series(&dir.join("weather.csv"), grid, 3)?.into_iter();
    let (t, h, d) = (w.next().unwrap(), w.next().unwrap(), w.next().unwrap());
    let weather = WeatherSeries::new(t, h, d, grid)?;
    let dataset = HouseholdDataset::new(
        appliances,
        total,
        weather,
        &manifest.holidays,
        manifest.utc_offset_seconds,
    )?;
    if dataset.calendar.start_date != manifest.start_date || dataset.days != manifest.days {
        return Err(Error::Data("manifest calendar does not match its grid".into()));
    }
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HouseholdDataset {
        let grid = TimeGrid::new(0, 7200, 24).unwrap();
        let a = ApplianceSeries::new("A", "a", (0..24).map(|i| i as f64 * 0.1).collect(), grid).unwrap();
        let b = ApplianceSeries::new("B", "b", vec![1.0 / 3.0; 24], grid).unwrap();
        let total = ApplianceSeries::new("T", "t", vec![5.0; 24], grid).unwrap();
        let weather = WeatherSeries::new(vec![-1.25; 24], vec![55.0; 24], vec![0.3; 24], grid).unwrap();
        let hol = [NaiveDate::from_ymd_opt(1970, 1, 2).unwrap()];
        HouseholdDataset::new(vec![a, b], total, weather, &hol, 0).unwrap()
    }

    #[test]
    fn dump_round_trip_is_exact_and_bytes_stable() {
        let ds = small();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_dump(&ds, &GapReport::default(), d1.path()).unwrap();
        let (back, _) = read_dump(d1.path()).unwrap();
        assert_eq!(back, ds);
        write_dump(&back, &GapReport::default(), d2.path()).unwrap();
        for f in ["manifest.json", "total.csv", "weather.csv", "channels/A.csv", "channels/B.csv"] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
