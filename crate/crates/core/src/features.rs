//! Input-feature screening by distance correlation.
//!
//! Distance correlation is the biased (V-statistic) form: with
//! `a_kl = |x_k - x_l|` double-centered into `A`, and likewise `B` for `y`,
//!
//! ```text
//! dCov^2(x, y) = mean(A * B)
//! dCor(x, y)   = sqrt( dCov^2(x, y) / sqrt(dCov^2(x, x) * dCov^2(y, y)) )
//! ```
//!
//! It lies in `[0, 1]`, equals 1 for an affine relation and is 0 here by
//! convention when either input is constant.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ApplianceSeries, HouseholdDataset};
use crate::error::{Error, Result};

pub const DEFAULT_DCC_THRESHOLD: f64 = 0.2;

/// Row means of the pairwise distance matrix `|x_k - x_l|`, computed from
/// sorted prefix sums in `O(n log n)`.
fn distance_row_means(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let total: f64 = x.iter().sum();
    let mut means = vec![0.0; n];
    let mut below = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        let xk = x[k];
        let above = total - below - xk;
        let sum = xk * rank as f64 - below + above - xk * (n - rank - 1) as f64;
        means[k] = sum / n as f64;
        below += xk;
    }
    means
}

/// Distance correlation of two equal-length samples (`n >= 2`).
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("dcor inputs differ in length: {} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Data(format!("dcor needs at least 2 samples, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("dcor inputs must be finite".into()));
    }
    let ra = distance_row_means(x);
    let rb = distance_row_means(y);
    let ga = ra.iter().sum::<f64>() / n as f64;
    let gb = rb.iter().sum::<f64>() / n as f64;

    let (mut s_ab, mut s_aa, mut s_bb) = (0.0, 0.0, 0.0);
    for k in 0..n {
        // Diagonal term: a_kk = 0.
        let akk = -2.0 * ra[k] + ga;
        let bkk = -2.0 * rb[k] + gb;
        s_ab += akk * bkk;
        s_aa += akk * akk;
        s_bb += bkk * bkk;
        let (mut row_ab, mut row_aa, mut row_bb) = (0.0, 0.0, 0.0);
        for l in k + 1..n {
            let a = (x[k] - x[l]).abs() - ra[k] - ra[l] + ga;
            let b = (y[k] - y[l]).abs() - rb[k] - rb[l] + gb;
            row_ab += a * b;
            row_aa += a * a;
            row_bb += b * b;
        }
        s_ab += 2.0 * row_ab;
        s_aa += 2.0 * row_aa;
        s_bb += 2.0 * row_bb;
    }
    // Mean pairwise distance 0 means a constant sample.
    if ga == 0.0 || gb == 0.0 || s_aa <= 0.0 || s_bb <= 0.0 {
        return Ok(0.0);
    }
    let r2 = s_ab / (s_aa * s_bb).sqrt();
    Ok(r2.clamp(0.0, 1.0).sqrt())
}

/// Candidate inputs screened against each target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "lag-7d")]
    Lag7d,
    #[serde(rename = "lag-2d")]
    Lag2d,
    #[serde(rename = "lag-1d")]
    Lag1d,
    #[serde(rename = "temperature")]
    Temperature,
    #[serde(rename = "humidity")]
    Humidity,
    #[serde(rename = "dew_point")]
    DewPoint,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Lag7d,
        FeatureKind::Lag2d,
        FeatureKind::Lag1d,
        FeatureKind::Temperature,
        FeatureKind::Humidity,
        FeatureKind::DewPoint,
    ];

    /// Lag in days for historical-load features.
    pub fn lag_days(self) -> Option<usize> {
        match self {
            FeatureKind::Lag7d => Some(7),
            FeatureKind::Lag2d => Some(2),
            FeatureKind::Lag1d => Some(1),
            _ => None,
        }
    }

    pub fn is_load(self) -> bool {
        self.lag_days().is_some()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Lag7d => "lag-7d",
            FeatureKind::Lag2d => "lag-2d",
            FeatureKind::Lag1d => "lag-1d",
            FeatureKind::Temperature => "temperature",
            FeatureKind::Humidity => "humidity",
            FeatureKind::DewPoint => "dew_point",
        }
    }

    /// Value of this feature at forecast slot `t` for `target`.
    /// Load lags use the same slot index `lag` days earlier.
    pub fn value(self, target: &[f64], dataset: &HouseholdDataset, t: usize) -> f64 {
        let spd = dataset.calendar.slots_per_day;
        match self.lag_days() {
            Some(lag) => target[t - lag * spd],
            None => match self {
                FeatureKind::Temperature => dataset.weather.temperature[t],
                FeatureKind::Humidity => dataset.weather.humidity[t],
                _ => dataset.weather.dew_point[t],
            },
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown feature {s:?}")))
    }
}

pub const MAX_LAG_DAYS: usize = 7;

/// DCC of every candidate feature (rows) against every target (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub features: Vec<FeatureKind>,
    pub targets: Vec<String>,
    /// `values[feature][target]`.
    pub values: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn get(&self, feature: FeatureKind, target: &str) -> Option<f64> {
        let f = self.features.iter().position(|x| *x == feature)?;
        let t = self.targets.iter().position(|x| x == target)?;
        Some(self.values[f][t])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["feature".to_string()];
        header.extend(self.targets.iter().cloned());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (f, row) in self.features.iter().zip(&self.values) {
            let mut rec = vec![f.name().to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let targets: Vec<String> = r
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .skip(1)
            .map(str::to_string)
            .collect();
        let mut features = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            features.push(rec[0].parse()?);
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != targets.len() {
                return Err(Error::Shape(format!("{}: ragged row", path.display())));
            }
            values.push(row);
        }
        Ok(FeatureTable {
            features,
            targets,
            values,
        })
    }
}

/// Aligned `(feature, target)` samples over forecast slots
/// `[MAX_LAG_DAYS * spd, train_days * spd)`.
pub fn aligned_pairs(
    feature: FeatureKind,
    target: &[f64],
    dataset: &HouseholdDataset,
    train_days: usize,
) -> (Vec<f64>, Vec<f64>) {
    let spd = dataset.calendar.slots_per_day;
    (MAX_LAG_DAYS * spd..train_days * spd)
        .map(|t| (feature.value(target, dataset, t), target[t]))
        .unzip()
}

/// Build the DCC table on the first `train_days` days of a forecast-grid
/// dataset. The first week is dropped so every lag is available.
pub fn build_feature_table(
    dataset: &HouseholdDataset,
    targets: &[ApplianceSeries],
    train_days: usize,
) -> Result<FeatureTable> {
    if train_days > dataset.days {
        return Err(Error::Data(format!(
            "training split of {train_days} days exceeds the {}-day dataset",
            dataset.days
        )));
    }
    if train_days < MAX_LAG_DAYS + 2 {
        return Err(Error::Data(format!(
            "need more than {} days of history for the {MAX_LAG_DAYS}-day lag, got {train_days}",
            MAX_LAG_DAYS + 1
        )));
    }
    let mut values = vec![vec![0.0; targets.len()]; FeatureKind::ALL.len()];
    for (t, target) in targets.iter().enumerate() {
        if target.grid != dataset.grid() {
            return Err(Error::Shape(format!("target {} is not on the dataset grid", target.id)));
        }
        for (f, kind) in FeatureKind::ALL.iter().enumerate() {
            let (x, y) = aligned_pairs(*kind, &target.power, dataset, train_days);
            values[f][t] = distance_correlation(&x, &y)?;
        }
    }
    Ok(FeatureTable {
        features: FeatureKind::ALL.to_vec(),
        targets: targets.iter().map(|t| t.id.clone()).collect(),
        values,
    })
}

/// Selected inputs for one target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub target: String,
    pub features: Vec<FeatureKind>,
}

/// Keep features whose DCC reaches `threshold`; the historical-load feature
/// with the highest DCC is always kept (ties go to the shorter lag).
pub fn select_features(table: &FeatureTable, threshold: f64) -> Result<Vec<FeatureSelection>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("DCC threshold {threshold} outside [0, 1]")));
    }
    let mut out = Vec::new();
    for (t, target) in table.targets.iter().enumerate() {
        let best_lag = table
            .features
            .iter()
            .enumerate()
            .filter(|(_, k)| k.is_load())
            .max_by(|(a, ka), (b, kb)| {
                table.values[*a][t]
                    .total_cmp(&table.values[*b][t])
                    .then(kb.lag_days().cmp(&ka.lag_days()))
            })
            .map(|(_, k)| *k);
        let features = table
            .features
            .iter()
            .enumerate()
            .filter(|(f, k)| table.values[*f][t] >= threshold || Some(**k) == best_lag)
            .map(|(_, k)| *k)
            .collect();
        out.push(FeatureSelection {
            target: target.clone(),
            features,
        });
    }
    Ok(out)
}

pub fn write_selection(path: &Path, sel: &[FeatureSelection]) -> Result<()> {
    let text = serde_json::to_string_pretty(sel).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
