//! One function per stage. Each reads only the artifacts of earlier
//! stages and writes its own.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use log::info;
use serde::{Deserialize, Serialize};

use super::config::{ForecastSection, KMode};
use crate::association::{association_matrix, read_matrix, write_matrix, AssociationConfig};
use crate::clustering::{fixed_k, select_k, AttachRule, ClusterFile};
use crate::data::{ingest_csv, read_dump, write_dump, ApplianceSeries, GapReport, HouseholdDataset, IngestSchema};
use crate::error::{Error, Result};
use crate::evaluation::{compare_methods, split_day, ClusterForecast, EvalReport, TestPeriod};
use crate::events::{exclude_low_power_at, extract_events, read_events, write_events, EventsManifest};
use crate::features::{build_feature_table, select_features, write_selection, FeatureSelection, FeatureTable};
use crate::forecaster::{first_forecast_day, ForecastModel, InputScaling, TrainReport};
use crate::synthetic::{generate, SynthSpec};

pub const TOTAL_TARGET: &str = "total";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Ingest metered CSV files into a dataset dump.
pub fn ingest(data: &[impl AsRef<Path>], schema: &Path, out: &Path) -> Result<GapReport> {
    let schema = IngestSchema::load(schema)?;
    let (ds, gaps) = ingest_csv(data, &schema)?;
    create_dir(out)?;
    write_dump(&ds, &gaps, out)?;
    info!("ingested {} channels over {} days", ds.appliances.len(), ds.days);
    Ok(gaps)
}

/// Generate a synthetic household into a dataset dump plus `planted.json`.
pub fn synth(spec: &Path, out: &Path) -> Result<()> {
    let spec = SynthSpec::load(spec)?;
    let h = generate(&spec)?;
    create_dir(out)?;
    write_dump(&h.dataset, &GapReport::default(), out)?;
    write_json(&out.join("planted.json"), &h.labels)?;
    info!("generated {} appliances over {} days", h.dataset.appliances.len(), h.dataset.days);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventParams {
    pub on_threshold: f64,
    pub min_duration: usize,
    pub exclude_below: f64,
    pub peak_quantile: f64,
}

/// Exclude low-power channels and extract start-up/shut-down events.
pub fn events(dataset_dir: &Path, p: &EventParams, out: &Path) -> Result<EventsManifest> {
    let (ds, _) = read_dump(dataset_dir)?;
    let (retained, exclusion) = exclude_low_power_at(&ds, p.exclude_below, p.peak_quantile)?;
    let streams = retained
        .appliances
        .iter()
        .map(|a| extract_events(a, p.on_threshold, p.min_duration))
        .collect::<Result<Vec<_>>>()?;
    let manifest = EventsManifest {
        grid: ds.grid(),
        days: ds.days,
        on_threshold: p.on_threshold,
        min_duration: p.min_duration,
        retained: retained.appliance_ids(),
        exclusion,
    };
    write_events(out, &streams, &manifest)?;
    info!(
        "{} channels retained, {} excluded",
        manifest.retained.len(),
        manifest.exclusion.excluded.len()
    );
    Ok(manifest)
}

/// Mine the association matrix into `out` (`q.csv` plus counters sidecar).
pub fn associate(events_dir: &Path, cfg: &AssociationConfig, out: &Path) -> Result<()> {
    let (streams, manifest) = read_events(events_dir)?;
    let m = association_matrix(&streams, cfg, manifest.days as u64)?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_matrix(out, &m)
}

/// Spectral clustering of a stored matrix. `excluded` lists channels left
/// out of mining, attached per `attach`.
pub fn cluster(q_path: &Path, k: KMode, seed: u64, attach: AttachRule, excluded: Vec<String>, out: &Path) -> Result<ClusterFile> {
    let m = read_matrix(q_path)?;
    let assignment = match k {
        KMode::Auto => select_k(&m, seed)?,
        KMode::Fixed(k) => fixed_k(&m, k, seed)?,
    };
    let mut file = ClusterFile::new(&assignment, attach);
    file.excluded = excluded;
    // Fail early if the attach rule cannot be honoured.
    file.members()?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    file.write(out)?;
    info!("k = {}", file.k);
    Ok(file)
}

/// Exclusion list recorded by the events stage.
pub fn excluded_channels(events_dir: &Path) -> Result<Vec<String>> {
    let manifest: EventsManifest = read_json(&events_dir.join("events.json"))?;
    Ok(manifest.exclusion.excluded)
}

/// Forecast targets: the appliance total and one series per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub members: Vec<String>,
}

pub fn targets(clusters: &ClusterFile, all: &[String]) -> Result<Vec<Target>> {
    let mut out = vec![Target {
        name: TOTAL_TARGET.into(),
        members: all.to_vec(),
    }];
    for (i, members) in clusters.members()?.into_iter().enumerate() {
        out.push(Target {
            name: format!("cluster-{i}"),
            members,
        });
    }
    Ok(out)
}

/// Slotwise sum of the member channels.
pub fn target_series(ds: &HouseholdDataset, members: &[String]) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; ds.grid().count];
    for id in members {
        let a = ds
            .appliance(id)
            .ok_or_else(|| Error::Data(format!("channel {id} is not in the dataset")))?;
        for (s, p) in sum.iter_mut().zip(&a.power) {
            *s += p;
        }
    }
    Ok(sum)
}

fn forecast_view(dataset_dir: &Path, step: i64) -> Result<HouseholdDataset> {
    let (ds, _) = read_dump(dataset_dir)?;
    ds.resample_to(step)
}

fn target_inputs(ds: &HouseholdDataset, clusters: &ClusterFile) -> Result<Vec<(Target, Vec<f64>)>> {
    targets(clusters, &ds.appliance_ids())?
        .into_iter()
        .map(|t| {
            let s = target_series(ds, &t.members)?;
            Ok((t, s))
        })
        .collect()
}

/// DCC table over the training split plus the selected inputs per target.
pub fn dcc(
    dataset_dir: &Path,
    clusters_path: &Path,
    f: &ForecastSection,
    threshold: f64,
    out: &Path,
) -> Result<(FeatureTable, Vec<FeatureSelection>)> {
    let ds = forecast_view(dataset_dir, f.step)?;
    let clusters = ClusterFile::read(clusters_path)?;
    let train_days = split_day(&ds, f.train_months)?;
    let series = target_inputs(&ds, &clusters)?
        .into_iter()
        .map(|(t, s)| ApplianceSeries::new(t.name, t.members.join("+"), s, ds.grid()))
        .collect::<Result<Vec<_>>>()?;
    let table = build_feature_table(&ds, &series, train_days)?;
    let selection = select_features(&table, threshold)?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    table.write_csv(out)?;
    write_selection(&out.with_file_name("selection.json"), &selection)?;
    Ok((table, selection))
}

pub fn read_selection(path: &Path) -> Result<Vec<FeatureSelection>> {
    read_json(path)
}

/// Index of trained models written next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIndex {
    pub step: i64,
    pub train_days: usize,
    pub targets: Vec<Target>,
    pub training: BTreeMap<String, TrainReport>,
}

fn model_file(target: &str) -> String {
    format!("{target}.json")
}

/// Train one model per target on the training split.
pub fn train(
    dataset_dir: &Path,
    clusters_path: &Path,
    selection: &[FeatureSelection],
    f: &ForecastSection,
    out: &Path,
) -> Result<ModelIndex> {
    let ds = forecast_view(dataset_dir, f.step)?;
    let clusters = ClusterFile::read(clusters_path)?;
    let train_days = split_day(&ds, f.train_months)?;
    create_dir(out)?;
    let mut index = ModelIndex {
        step: f.step,
        train_days,
        targets: Vec::new(),
        training: BTreeMap::new(),
    };
    for (i, (target, series)) in target_inputs(&ds, &clusters)?.into_iter().enumerate() {
        let features = &selection
            .iter()
            .find(|s| s.target == target.name)
            .ok_or_else(|| Error::Data(format!("no feature selection for {}", target.name)))?
            .features;
        let config = if target.name == TOTAL_TARGET {
            f.overall_model.resolve(f.window_days)
        } else {
            f.cluster_model.resolve(f.window_days)
        };
        let first = first_forecast_day(features, config.input_window_days);
        if first >= train_days {
            return Err(Error::Data(format!(
                "{}: {train_days} training days leave no sample after the {first}-day history",
                target.name
            )));
        }
        let scaling = InputScaling::fit(&ds, &series, features, train_days)?;
        let seed = f.seed.wrapping_add(i as u64);
        let mut model = ForecastModel::new(config, target.name.clone(), scaling, seed)?;
        let samples = model.samples(&ds, &series, first..train_days)?;
        let mut tc = f.train;
        tc.seed = tc.seed.wrapping_add(i as u64);
        let report = model.train(&samples, &tc)?;
        info!(
            "{}: {} samples, best epoch {} of {}",
            target.name,
            samples.len(),
            report.best_epoch,
            report.epochs_run
        );
        model.save(&out.join(model_file(&target.name)))?;
        index.training.insert(target.name.clone(), report);
        index.targets.push(target);
    }
    write_json(&out.join("index.json"), &index)?;
    Ok(index)
}

/// One forecast row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub target: String,
    pub date: NaiveDate,
    pub slot: usize,
    pub value: f64,
}

/// Forecast the given days (default: every day after the training split).
pub fn forecast(models_dir: &Path, dataset_dir: &Path, dates: Option<&[NaiveDate]>, out: &Path) -> Result<Vec<ForecastRow>> {
    let index: ModelIndex = read_json(&models_dir.join("index.json"))?;
    let ds = forecast_view(dataset_dir, index.step)?;
    let days: Vec<usize> = match dates {
        Some(dates) => dates
            .iter()
            .map(|d| {
                ds.calendar
                    .day_index(*d)
                    .ok_or_else(|| Error::Data(format!("{d} is outside the dataset")))
            })
            .collect::<Result<_>>()?,
        None => (index.train_days..ds.days).collect(),
    };
    let mut rows = Vec::new();
    for t in &index.targets {
        let model = ForecastModel::load(&models_dir.join(model_file(&t.name)))?;
        let series = target_series(&ds, &t.members)?;
        for &d in &days {
            for (slot, value) in model.predict_day_ahead(&ds, &series, d)?.into_iter().enumerate() {
                rows.push(ForecastRow {
                    target: t.name.clone(),
                    date: ds.calendar.date(d),
                    slot,
                    value,
                });
            }
        }
    }
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::csv(out, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::csv(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    write_json(&out.with_file_name("targets.json"), &index)?;
    Ok(rows)
}

/// Score the forecasts in `forecasts_dir` against the dataset in `truth_dir`.
pub fn evaluate(forecasts_dir: &Path, truth_dir: &Path, out: &Path) -> Result<EvalReport> {
    let index: ModelIndex = read_json(&forecasts_dir.join("targets.json"))?;
    let path = forecasts_dir.join("forecast.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let mut by_target: BTreeMap<String, BTreeMap<(NaiveDate, usize), f64>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: ForecastRow = row.map_err(|e| Error::csv(&path, e))?;
        by_target.entry(row.target).or_default().insert((row.date, row.slot), row.value);
    }
    let ds = forecast_view(truth_dir, index.step)?;
    let overall = by_target
        .get(TOTAL_TARGET)
        .ok_or_else(|| Error::Data(format!("{}: no `{TOTAL_TARGET}` forecast", path.display())))?;
    let keys: Vec<(NaiveDate, usize)> = overall.keys().copied().collect();
    let dates: Vec<NaiveDate> = {
        let mut d: Vec<NaiveDate> = keys.iter().map(|k| k.0).collect();
        d.dedup();
        d
    };
    let spd = ds.calendar.slots_per_day;
    if keys.len() != dates.len() * spd {
        return Err(Error::Data("forecast does not cover whole days".into()));
    }
    let slot_index = |date: NaiveDate, slot: usize| -> Result<usize> {
        let d = ds
            .calendar
            .day_index(date)
            .ok_or_else(|| Error::Data(format!("forecast date {date} is outside the truth dataset")))?;
        Ok(d * spd + slot)
    };
    let pick = |series: &[f64]| -> Result<Vec<f64>> { keys.iter().map(|(d, s)| Ok(series[slot_index(*d, *s)?])).collect() };

    let all = ds.appliance_ids();
    let truth_total = pick(&target_series(&ds, &all)?)?;
    let mut clusters = Vec::new();
    for t in index.targets.iter().filter(|t| t.name != TOTAL_TARGET) {
        let fc = by_target
            .get(&t.name)
            .ok_or_else(|| Error::Data(format!("no forecast for {}", t.name)))?;
        let forecast = keys
            .iter()
            .map(|k| {
                fc.get(k)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("{} lacks a forecast for {} slot {}", t.name, k.0, k.1)))
            })
            .collect::<Result<Vec<_>>>()?;
        clusters.push(ClusterForecast {
            members: t.members.clone(),
            forecast,
            truth: pick(&target_series(&ds, &t.members)?)?,
        });
    }
    let overall: Vec<f64> = overall.values().copied().collect();
    let test = TestPeriod {
        start_date: dates[0],
        days: dates.len(),
        slots_per_day: spd,
    };
    let report = compare_methods(&clusters, &overall, &truth_total, &all, test)?;
    if let Some(parent) = out.parent() {
        create_dir(parent)?;
    }
    write_json(out, &report)?;
    Ok(report)
}
