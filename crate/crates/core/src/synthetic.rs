//! Synthetic households with planted co-activation structure.
//!
//! Each day, every appliance draws a Poisson number of primary start-ups
//! whose rate scales with its group's weekday factor and the day's
//! temperature. Each primary start-up triggers every other appliance with
//! probability `within` (same planted group) or `across`, at a uniform
//! offset below `co_window`. Start-ups become rectangular pulses; the
//! planted event log is read off the final ON mask.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{ApplianceSeries, HouseholdDataset, TimeGrid, WeatherSeries, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::events::EventStream;

/// Minimum pulse length and minimum gap between pulses, in slots.
pub const MIN_PULSE_SLOTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceSpec {
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    /// ON power in watts.
    pub power: f64,
    pub startups_per_day: f64,
    /// Uniform ON-duration range in minutes.
    pub duration_minutes: [f64; 2],
    /// Planted group index into `clusters`.
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSpec {
    /// Mean local hour of primary start-ups.
    pub peak_hour: f64,
    /// Standard deviation in hours; 0 means uniform over the day.
    pub spread_hours: f64,
    /// Rate factor per weekday, Monday first.
    pub weekday: [f64; 7],
    /// Relative rate change per unit of normalized daily temperature anomaly.
    pub temperature_gain: f64,
}

impl Default for GroupSpec {
    fn default() -> Self {
        GroupSpec {
            peak_hour: 12.0,
            spread_hours: 0.0,
            weekday: [1.0; 7],
            temperature_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherSpec {
    pub mean: f64,
    pub annual_amplitude: f64,
    pub daily_amplitude: f64,
    pub noise_std: f64,
    pub humidity_mean: f64,
    pub humidity_amplitude: f64,
}

impl Default for WeatherSpec {
    fn default() -> Self {
        WeatherSpec {
            mean: 12.0,
            annual_amplitude: 10.0,
            daily_amplitude: 4.0,
            noise_std: 0.5,
            humidity_mean: 65.0,
            humidity_amplitude: 15.0,
        }
    }
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2012, 4, 2).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    pub days: usize,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    /// Grid step in seconds.
    #[serde(default = "SynthSpec::default_step")]
    pub step: i64,
    /// Gaussian noise on every appliance channel, watts.
    #[serde(default = "SynthSpec::default_noise")]
    pub noise_std: f64,
    /// Constant unmetered load added to the main meter, watts.
    #[serde(default)]
    pub base_load: f64,
    /// Co-activation offset bound in seconds.
    #[serde(default = "SynthSpec::default_co_window")]
    pub co_window: i64,
    pub within: f64,
    #[serde(default)]
    pub across: f64,
    #[serde(default)]
    pub holidays: Vec<NaiveDate>,
    #[serde(default)]
    pub weather: WeatherSpec,
    #[serde(default)]
    pub clusters: Vec<GroupSpec>,
    pub appliances: Vec<ApplianceSpec>,
}

impl SynthSpec {
    fn default_step() -> i64 {
        60
    }

    fn default_noise() -> f64 {
        2.0
    }

    fn default_co_window() -> i64 {
        1800
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.days == 0 {
            return bad("days must be positive".into());
        }
        if self.step <= 0 || SECONDS_PER_DAY % self.step != 0 {
            return bad(format!("step {} must divide a day", self.step));
        }
        for (name, p) in [("within", self.within), ("across", self.across)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if !(self.noise_std >= 0.0 && self.base_load >= 0.0) {
            return bad("noise_std and base_load must be non-negative".into());
        }
        if self.co_window <= 0 {
            return bad("co_window must be positive".into());
        }
        if self.appliances.is_empty() {
            return bad("at least one appliance is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.appliances {
            if !seen.insert(&a.id) {
                return bad(format!("duplicate appliance id {}", a.id));
            }
            if !(a.power > 0.0 && a.power.is_finite()) {
                return bad(format!("appliance {}: power must be positive", a.id));
            }
            if !(a.startups_per_day >= 0.0) {
                return bad(format!("appliance {}: startups_per_day must be non-negative", a.id));
            }
            let [lo, hi] = a.duration_minutes;
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("appliance {}: bad duration range [{lo}, {hi}]", a.id));
            }
            if a.cluster >= self.clusters.len().max(1) {
                return bad(format!("appliance {}: cluster {} is not defined", a.id, a.cluster));
            }
        }
        for g in &self.clusters {
            if g.weekday.iter().any(|w| !(*w >= 0.0)) || !(g.spread_hours >= 0.0) {
                return bad("group weekday factors and spread must be non-negative".into());
            }
        }
        Ok(())
    }

    fn group(&self, i: usize) -> GroupSpec {
        self.clusters.get(i).cloned().unwrap_or_default()
    }

    pub fn slots_per_day(&self) -> usize {
        (SECONDS_PER_DAY / self.step) as usize
    }
}

/// Generated household plus the planted ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthHousehold {
    pub dataset: HouseholdDataset,
    /// Planted group of every appliance.
    pub labels: BTreeMap<String, usize>,
    /// Planted start-up and shut-down events, one stream per appliance.
    pub events: Vec<EventStream>,
}

impl SynthHousehold {
    /// Planted labels in dataset appliance order.
    pub fn label_vec(&self) -> Vec<usize> {
        self.dataset.appliances.iter().map(|a| self.labels[&a.id]).collect()
    }
}

/// Magnus-formula dew point (°C) from temperature (°C) and relative
/// humidity (%).
pub fn dew_point(temperature: f64, humidity: f64) -> f64 {
    const B: f64 = 17.62;
    const C: f64 = 243.12;
    let gamma = (humidity.max(1e-6) / 100.0).ln() + B * temperature / (C + temperature);
    C * gamma / (B - gamma)
}

fn weather(spec: &SynthSpec, grid: TimeGrid, rng: &mut ChaCha8Rng) -> Result<(WeatherSeries, Vec<f64>)> {
    let w = &spec.weather;
    let spd = spec.slots_per_day();
    let noise = Normal::new(0.0, w.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut temperature = Vec::with_capacity(grid.count);
    let mut humidity = Vec::with_capacity(grid.count);
    let mut daily = Vec::with_capacity(spec.days);
    for d in 0..spec.days {
        let date = spec.start_date + chrono::Duration::days(d as i64);
        // Coldest around mid-January.
        let season = -(2.0 * PI * (date.ordinal() as f64 - 15.0) / 365.25).cos();
        let day_mean = w.mean + w.annual_amplitude * season;
        let mut sum = 0.0;
        for s in 0..spd {
            let hour = s as f64 * 24.0 / spd as f64;
            let diurnal = -(2.0 * PI * (hour - 3.0) / 24.0).cos();
            let t = day_mean + w.daily_amplitude * diurnal + noise.sample(rng);
            let h = (w.humidity_mean - w.humidity_amplitude * diurnal + 2.0 * noise.sample(rng)).clamp(5.0, 100.0);
            sum += t;
            temperature.push(t);
            humidity.push(h);
        }
        daily.push(sum / spd as f64);
    }
    let dew = temperature.iter().zip(&humidity).map(|(t, h)| dew_point(*t, *h)).collect();
    Ok((WeatherSeries::new(temperature, humidity, dew, grid)?, daily))
}

/// Close interior OFF gaps shorter than `min` slots.
fn close_gaps(mask: &mut [bool], min: usize) {
    let mut last_on: Option<usize> = None;
    for i in 0..mask.len() {
        if mask[i] {
            if let Some(prev) = last_on {
                if i - prev - 1 < min {
                    mask[prev + 1..i].fill(true);
                }
            }
            last_on = Some(i);
        }
    }
}

/// Generate a household. Deterministic for a given spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthHousehold> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spd = spec.slots_per_day();
    let start = spec
        .start_date
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
        .and_utc()
        .timestamp();
    let grid = TimeGrid::new(start, spec.step, spec.days * spd)?;
    let (weather, daily_temp) = weather(spec, grid, &mut rng)?;
    let n = spec.appliances.len();
    let amp = spec.weather.annual_amplitude.abs().max(1e-9);

    // Start slots per appliance.
    let mut starts: Vec<Vec<usize>> = vec![Vec::new(); n];
    let co_slots = ((spec.co_window - 1) / spec.step) as usize;
    for (d, &temp) in daily_temp.iter().enumerate().take(spec.days) {
        let dow = (spec.start_date + chrono::Duration::days(d as i64)).weekday().num_days_from_monday() as usize;
        let anomaly = (temp - spec.weather.mean) / amp;
        for (i, a) in spec.appliances.iter().enumerate() {
            let g = spec.group(a.cluster);
            let rate = (a.startups_per_day * g.weekday[dow] * (1.0 + g.temperature_gain * anomaly)).max(0.0);
            let count = if rate > 0.0 {
                Poisson::new(rate).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..count {
                let hour = if g.spread_hours > 0.0 {
                    let h: f64 = Normal::new(g.peak_hour, g.spread_hours)
                        .map_err(|e| Error::Config(e.to_string()))?
                        .sample(&mut rng);
                    h.rem_euclid(24.0)
                } else {
                    rng.random_range(0.0..24.0)
                };
                let slot = d * spd + ((hour / 24.0 * spd as f64) as usize).min(spd - 1);
                starts[i].push(slot);
                for (j, b) in spec.appliances.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    let p = if b.cluster == a.cluster { spec.within } else { spec.across };
                    if p > 0.0 && rng.random_bool(p) {
                        let offset = rng.random_range(0..=co_slots);
                        starts[j].push(slot + offset);
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut appliances = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut total = vec![spec.base_load; grid.count];
    for (i, a) in spec.appliances.iter().enumerate() {
        let mut mask = vec![false; grid.count];
        for &s in &starts[i] {
            let [lo, hi] = a.duration_minutes;
            let minutes = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let len = ((minutes * 60.0 / spec.step as f64).round() as usize).max(MIN_PULSE_SLOTS);
            let end = (s + len).min(grid.count);
            if end - s.min(end) >= MIN_PULSE_SLOTS {
                mask[s..end].fill(true);
            }
        }
        close_gaps(&mut mask, MIN_PULSE_SLOTS);
        let power: Vec<f64> = mask
            .iter()
            .map(|on| {
                let base = if *on { a.power } else { 0.0 };
                let p = base + if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                p.max(0.0)
            })
            .collect();
        for (t, p) in total.iter_mut().zip(&power) {
            *t += p;
        }
        let name = a.name.clone().unwrap_or_else(|| a.id.clone());
        appliances.push(ApplianceSeries::new(a.id.clone(), name, power, grid)?);
        events.push(EventStream::from_mask(a.id.clone(), mask, grid));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|x, y| spec.appliances[*x].id.cmp(&spec.appliances[*y].id));
    let appliances: Vec<ApplianceSeries> = order.iter().map(|i| appliances[*i].clone()).collect();
    let events: Vec<EventStream> = order.iter().map(|i| events[*i].clone()).collect();
    let total = ApplianceSeries::new("TOTAL", "total", total, grid)?;
    let dataset = HouseholdDataset::new(appliances, total, weather, &spec.holidays, 0)?;
    let labels = spec.appliances.iter().map(|a| (a.id.clone(), a.cluster)).collect();
    Ok(SynthHousehold {
        dataset,
        labels,
        events,
    })
}

/// Noise-free household whose appliances follow fixed daily shapes scaled
/// by a weekday factor. `templates[i]` holds one value per slot of day.
pub fn pattern_household(
    start_date: NaiveDate,
    days: usize,
    step: i64,
    templates: &[Vec<f64>],
    weekday: [f64; 7],
) -> Result<HouseholdDataset> {
    if step <= 0 || SECONDS_PER_DAY % step != 0 {
        return Err(Error::Config(format!("step {step} must divide a day")));
    }
    let spd = (SECONDS_PER_DAY / step) as usize;
    if templates.is_empty() || templates.iter().any(|t| t.len() != spd) {
        return Err(Error::Config(format!("templates must have {spd} values each")));
    }
    let start = start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
    let grid = TimeGrid::new(start, step, days * spd)?;
    let first_dow = start_date.weekday().num_days_from_monday() as usize;
    let mut appliances = Vec::new();
    let mut total = vec![0.0; grid.count];
    for (i, tpl) in templates.iter().enumerate() {
        let power: Vec<f64> = (0..grid.count)
            .map(|t| tpl[t % spd] * weekday[(first_dow + t / spd) % 7])
            .collect();
        for (s, p) in total.iter_mut().zip(&power) {
            *s += p;
        }
        appliances.push(ApplianceSeries::new(format!("p{i}"), format!("pattern {i}"), power, grid)?);
    }
    let temperature: Vec<f64> = (0..grid.count)
        .map(|t| 12.0 + 8.0 * (2.0 * PI * t as f64 / (spd as f64 * 365.25)).sin())
        .collect();
    let humidity = vec![60.0; grid.count];
    let dew = temperature.iter().map(|t| dew_point(*t, 60.0)).collect();
    let weather = WeatherSeries::new(temperature, humidity, dew, grid)?;
    let total = ApplianceSeries::new("TOTAL", "total", total, grid)?;
    HouseholdDataset::new(appliances, total, weather, &[], 0)
}
