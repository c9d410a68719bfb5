//! Day-ahead load forecaster.
//!
//! A sample for target day `d` covers the `input_window_days` days ending at
//! `d`. Each step carries the selected features for that slot: load lags
//! (the same slot 1, 2 or 7 days earlier, so nothing from day `d` itself
//! leaks in), weather at the slot, and calendar ids that index summed
//! day-of-week, slot-of-day and holiday embedding tables. The target is the
//! 12 loads of day `d`.
//!
//! Loads are min-max scaled with the target's own training range; weather
//! channels with their training ranges.

mod gradcheck;
mod net;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{HouseholdDataset, NormalizationParams};
use crate::error::{Error, Result};
use crate::features::FeatureKind;

pub use gradcheck::{gradient_check, TensorCheck, FD_STEP, REL_FLOOR};
pub use net::{Layout, ModelConfig, Sample, TensorSpec};
pub use train::{mean_loss, train, TrainConfig, TrainReport};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Scaling of numeric inputs and of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub features: Vec<FeatureKind>,
    pub inputs: NormalizationParams,
    pub target: NormalizationParams,
}

impl InputScaling {
    /// Fit on the first `train_days` days.
    pub fn fit(dataset: &HouseholdDataset, target: &[f64], features: &[FeatureKind], train_days: usize) -> Result<Self> {
        let spd = dataset.calendar.slots_per_day;
        let end = (train_days * spd).min(target.len());
        if end == 0 {
            return Err(Error::Data("no training slots to fit scaling on".into()));
        }
        let target_norm = NormalizationParams::fit_scalar(&target[..end])?;
        let mut min = Vec::new();
        let mut max = Vec::new();
        for f in features {
            let p = match f {
                FeatureKind::Temperature => NormalizationParams::fit_scalar(&dataset.weather.temperature[..end])?,
                FeatureKind::Humidity => NormalizationParams::fit_scalar(&dataset.weather.humidity[..end])?,
                FeatureKind::DewPoint => NormalizationParams::fit_scalar(&dataset.weather.dew_point[..end])?,
                _ => target_norm.clone(),
            };
            min.push(p.min[0]);
            max.push(p.max[0]);
        }
        Ok(InputScaling {
            features: features.to_vec(),
            inputs: NormalizationParams { min, max },
            target: target_norm,
        })
    }
}

/// Earliest target day with a complete input window and lag history.
pub fn first_forecast_day(features: &[FeatureKind], window_days: usize) -> usize {
    let max_lag = features.iter().filter_map(|f| f.lag_days()).max().unwrap_or(0);
    window_days - 1 + max_lag
}

fn check_day(dataset: &HouseholdDataset, target: &[f64], features: &[FeatureKind], window_days: usize, d: usize) -> Result<()> {
    let first = first_forecast_day(features, window_days);
    if d < first {
        return Err(Error::Data(format!(
            "day {d} lacks history: the first forecastable day is {first}"
        )));
    }
    if d >= dataset.days {
        return Err(Error::Data(format!("day {d} is past the {}-day dataset", dataset.days)));
    }
    if target.len() < dataset.days * dataset.calendar.slots_per_day {
        return Err(Error::Shape("target series is shorter than the dataset".into()));
    }
    Ok(())
}

/// Inputs for target day `d` with an empty target.
pub fn build_input(
    dataset: &HouseholdDataset,
    target: &[f64],
    scaling: &InputScaling,
    window_days: usize,
    d: usize,
) -> Result<Sample> {
    check_day(dataset, target, &scaling.features, window_days, d)?;
    let spd = dataset.calendar.slots_per_day;
    let start = (d + 1 - window_days) * spd;
    let steps = window_days * spd;
    let mut numeric = Vec::with_capacity(steps * scaling.features.len());
    let mut calendar = Vec::with_capacity(steps);
    for t in start..start + steps {
        for (i, f) in scaling.features.iter().enumerate() {
            numeric.push(scaling.inputs.apply_value(i, f.value(target, dataset, t)));
        }
        let day = t / spd;
        calendar.push([
            dataset.calendar.day_of_week[day] as usize,
            t % spd,
            usize::from(dataset.calendar.is_holiday[day]),
        ]);
    }
    Ok(Sample {
        numeric,
        calendar,
        target: Vec::new(),
    })
}

/// Inputs and normalized target loads for day `d`.
pub fn build_sample(
    dataset: &HouseholdDataset,
    target: &[f64],
    scaling: &InputScaling,
    window_days: usize,
    d: usize,
) -> Result<Sample> {
    let mut s = build_input(dataset, target, scaling, window_days, d)?;
    let spd = dataset.calendar.slots_per_day;
    s.target = target[d * spd..(d + 1) * spd]
        .iter()
        .map(|v| scaling.target.apply_value(0, *v))
        .collect();
    Ok(s)
}

/// A trained network for one target series.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub target: String,
    pub scaling: InputScaling,
    pub params: Vec<f64>,
    layout: Layout,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.numeric == other.numeric
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    target: String,
    config: ModelConfig,
    scaling: InputScaling,
    tensors: Vec<NamedTensor>,
}

impl ForecastModel {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, target: impl Into<String>, scaling: InputScaling, seed: u64) -> Result<Self> {
        let layout = Layout::new(config, scaling.features.len())?;
        let params = layout.init(seed);
        Ok(ForecastModel {
            target: target.into(),
            scaling,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn features(&self) -> &[FeatureKind] {
        &self.scaling.features
    }

    fn check_grid(&self, dataset: &HouseholdDataset) -> Result<()> {
        if dataset.calendar.slots_per_day != self.config().output_slots {
            return Err(Error::Shape(format!(
                "dataset has {} slots per day, model emits {}",
                dataset.calendar.slots_per_day,
                self.config().output_slots
            )));
        }
        Ok(())
    }

    /// Samples for target days `days` (each must have full history).
    pub fn samples(&self, dataset: &HouseholdDataset, target: &[f64], days: std::ops::Range<usize>) -> Result<Vec<Sample>> {
        self.check_grid(dataset)?;
        let w = self.config().input_window_days;
        days.map(|d| build_sample(dataset, target, &self.scaling, w, d)).collect()
    }

    pub fn train(&mut self, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
        train(&self.layout, &mut self.params, samples, cfg)
    }

    /// Raw (normalized) network output.
    pub fn forward(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.layout.predict(&self.params, sample)
    }

    /// Map normalized outputs to watts, clamped at zero.
    pub fn denormalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|y| self.scaling.target.invert_value(0, *y).max(0.0)).collect()
    }

    /// Forecast the loads of day `d` in watts. Only target values before
    /// day `d` are read.
    pub fn predict_day_ahead(&self, dataset: &HouseholdDataset, target: &[f64], d: usize) -> Result<Vec<f64>> {
        self.check_grid(dataset)?;
        let input = build_input(dataset, target, &self.scaling, self.config().input_window_days, d)?;
        Ok(self.denormalize(&self.forward(&input)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .layout
            .tensors
            .iter()
            .map(|t| NamedTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                values: self.params[t.range()].to_vec(),
            })
            .collect();
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            target: self.target.clone(),
            config: *self.config(),
            scaling: self.scaling.clone(),
            tensors,
        };
        let text = serde_json::to_string(&ck).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        let layout = Layout::new(ck.config, ck.scaling.features.len())?;
        if ck.tensors.len() != layout.tensors.len() {
            return Err(Error::Shape(format!("{}: wrong tensor count", path.display())));
        }
        let mut params = vec![0.0; layout.total];
        for (spec, t) in layout.tensors.iter().zip(&ck.tensors) {
            if spec.name != t.name || spec.shape != t.shape || t.values.len() != spec.len() {
                return Err(Error::Shape(format!(
                    "{}: tensor {} does not match the model layout",
                    path.display(),
                    t.name
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{}: tensor {} is not finite", path.display(), t.name)));
            }
            params[spec.range()].copy_from_slice(&t.values);
        }
        Ok(ForecastModel {
            target: ck.target,
            scaling: ck.scaling,
            params,
            layout,
        })
    }
}
