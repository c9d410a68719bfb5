//! Forecast scoring and the cluster-sum versus whole-household comparison.

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data::HouseholdDataset;
use crate::error::{Error, Result};

/// Relative tolerance for the cluster-truth conservation check.
pub const CONSERVATION_TOL: f64 = 1e-9;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "forecast has {} values, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("cannot score an empty forecast".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sae: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sae / pred.len() as f64)
}

/// Percentage change of `proposed` relative to `baseline`.
pub fn relative_delta(proposed: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (proposed - baseline) / baseline * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub rmse: f64,
    pub mae: f64,
}

impl Score {
    pub fn of(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let s = Score {
            rmse: rmse(pred, truth)?,
            mae: mae(pred, truth)?,
        };
        // RMSE >= MAE by Cauchy-Schwarz, up to rounding.
        debug_assert!(s.rmse >= s.mae * (1.0 - 1e-12), "{s:?}");
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    #[serde(flatten)]
    pub pooled: Score,
    pub per_day: Vec<Score>,
    pub per_slot: Vec<Score>,
}

impl MethodScore {
    fn of(pred: &[f64], truth: &[f64], slots_per_day: usize) -> Result<Self> {
        let pooled = Score::of(pred, truth)?;
        let per_day = pred
            .chunks(slots_per_day)
            .zip(truth.chunks(slots_per_day))
            .map(|(p, t)| Score::of(p, t))
            .collect::<Result<_>>()?;
        let per_slot = (0..slots_per_day)
            .map(|s| {
                let p: Vec<f64> = pred.iter().skip(s).step_by(slots_per_day).copied().collect();
                let t: Vec<f64> = truth.iter().skip(s).step_by(slots_per_day).copied().collect();
                Score::of(&p, &t)
            })
            .collect::<Result<_>>()?;
        Ok(MethodScore {
            pooled,
            per_day,
            per_slot,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestPeriod {
    pub start_date: NaiveDate,
    pub days: usize,
    pub slots_per_day: usize,
}

/// Scores of both methods against the appliance-sum truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MethodScore,
    pub proposed: MethodScore,
    /// `(proposed - overall) / overall` in percent; absent when the
    /// baseline error is zero.
    pub delta_rmse_pct: Option<f64>,
    pub delta_mae_pct: Option<f64>,
    pub test: TestPeriod,
    /// Largest relative gap between summed cluster truth and total truth.
    pub conservation_error: f64,
}

/// One cluster's forecast over the test period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterForecast {
    pub members: Vec<String>,
    pub forecast: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Compare the slotwise sum of cluster forecasts with a direct forecast of
/// the total. Every id in `appliances` must belong to exactly one cluster.
pub fn compare_methods(
    clusters: &[ClusterForecast],
    overall: &[f64],
    truth_total: &[f64],
    appliances: &[String],
    test: TestPeriod,
) -> Result<EvalReport> {
    let n = truth_total.len();
    if n != test.days * test.slots_per_day {
        return Err(Error::Shape(format!(
            "truth has {n} values for {} days of {} slots",
            test.days, test.slots_per_day
        )));
    }
    for id in appliances {
        let owners = clusters.iter().filter(|c| c.members.contains(id)).count();
        if owners != 1 {
            return Err(Error::Data(format!("appliance {id} belongs to {owners} clusters")));
        }
    }
    if let Some(extra) = clusters
        .iter()
        .flat_map(|c| &c.members)
        .find(|m| !appliances.contains(m))
    {
        return Err(Error::Data(format!("cluster member {extra} is not a known appliance")));
    }

    // Fixed summation order keeps the result independent of input order.
    let mut order: Vec<&ClusterForecast> = clusters.iter().collect();
    let key = |c: &ClusterForecast| {
        let mut m = c.members.clone();
        m.sort();
        m
    };
    order.sort_by_key(|c| key(c));
    let mut proposed = vec![0.0; n];
    let mut truth_sum = vec![0.0; n];
    for c in order {
        if c.forecast.len() != n || c.truth.len() != n {
            return Err(Error::Shape(format!(
                "cluster {:?} covers {} slots, expected {n}",
                c.members,
                c.forecast.len()
            )));
        }
        for i in 0..n {
            proposed[i] += c.forecast[i];
            truth_sum[i] += c.truth[i];
        }
    }
    let conservation_error = truth_sum
        .iter()
        .zip(truth_total)
        .map(|(s, t)| (s - t).abs() / t.abs().max(1.0))
        .fold(0.0, f64::max);
    if conservation_error > CONSERVATION_TOL {
        return Err(Error::Data(format!(
            "cluster truth does not add up to the total (relative error {conservation_error:e})"
        )));
    }

    let overall = MethodScore::of(overall, truth_total, test.slots_per_day)?;
    let proposed = MethodScore::of(&proposed, truth_total, test.slots_per_day)?;
    Ok(EvalReport {
        delta_rmse_pct: relative_delta(proposed.pooled.rmse, overall.pooled.rmse),
        delta_mae_pct: relative_delta(proposed.pooled.mae, overall.pooled.mae),
        overall,
        proposed,
        test,
        conservation_error,
    })
}

/// Day index of the first day after `months` calendar months.
pub fn split_day(dataset: &HouseholdDataset, months: u32) -> Result<usize> {
    let start = dataset.calendar.start_date;
    let boundary = start
        .checked_add_months(Months::new(months))
        .ok_or_else(|| Error::Config(format!("{months} months from {start} overflows the calendar")))?;
    let day = (boundary - start).num_days() as usize;
    if months == 0 || day >= dataset.days {
        return Err(Error::Data(format!(
            "a {months}-month training period leaves no test days in a {}-day dataset",
            dataset.days
        )));
    }
    Ok(day)
}

/// Chronological split after `train_months` calendar months.
pub fn split_dataset(dataset: &HouseholdDataset, train_months: u32) -> Result<(HouseholdDataset, HouseholdDataset)> {
    let day = split_day(dataset, train_months)?;
    Ok((dataset.slice_days(0, day)?, dataset.slice_days(day, dataset.days)?))
}
