//! Domain types shared by every stage: time grids, appliance and weather
//! series, calendar features and the household dataset.

mod dump;
mod ingest;
mod normalize;
mod resample;

pub use dump::{read_dump, write_dump, DatasetManifest};
pub use ingest::{ingest_csv, ChannelSpec, Gap, GapReport, IngestSchema, SourceSpec, WeatherColumns};
pub use normalize::NormalizationParams;
pub use resample::{resample, resample_values};

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Uniform sampling grid. `start` is a unix timestamp, `step` is in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: i64,
    pub step: i64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(start: i64, step: i64, count: usize) -> Result<Self> {
        if step <= 0 {
            return Err(Error::Data(format!("grid step must be positive, got {step}")));
        }
        if count == 0 {
            return Err(Error::Data("grid must hold at least one sample".into()));
        }
        Ok(TimeGrid { start, step, count })
    }

    pub fn timestamp(&self, slot: usize) -> i64 {
        self.start + self.step * slot as i64
    }

    /// Exclusive end of the covered span.
    pub fn end(&self) -> i64 {
        self.timestamp(self.count)
    }

    /// Slots per day when the step divides a day evenly.
    pub fn slots_per_day(&self) -> Option<usize> {
        (SECONDS_PER_DAY % self.step == 0).then(|| (SECONDS_PER_DAY / self.step) as usize)
    }

    /// Number of whole days spanned by the grid.
    pub fn whole_days(&self) -> usize {
        ((self.step * self.count as i64) / SECONDS_PER_DAY) as usize
    }

    /// Day index (counted from `start`) that contains timestamp `t`.
    pub fn day_of(&self, t: i64) -> i64 {
        (t - self.start).div_euclid(SECONDS_PER_DAY)
    }
}

/// Mean real power per slot (watts) of one sub-metered channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSeries {
    pub id: String,
    pub name: String,
    pub power: Vec<f64>,
    pub grid: TimeGrid,
}

impl ApplianceSeries {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        power: Vec<f64>,
        grid: TimeGrid,
    ) -> Result<Self> {
        let id = id.into();
        if power.len() != grid.count {
            return Err(Error::Shape(format!(
                "series {id}: {} values on a grid of {}",
                power.len(),
                grid.count
            )));
        }
        if let Some(i) = power.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data(format!(
                "series {id}: power[{i}] = {} is not a finite non-negative value",
                power[i]
            )));
        }
        Ok(ApplianceSeries {
            id,
            name: name.into(),
            power,
            grid,
        })
    }

    /// Energy in watt-hours over the whole series.
    pub fn energy_wh(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.grid.step as f64 / 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    pub temperature: Vec<f64>,
    pub humidity: Vec<f64>,
    pub dew_point: Vec<f64>,
    pub grid: TimeGrid,
}

impl WeatherSeries {
    pub fn new(
        temperature: Vec<f64>,
        humidity: Vec<f64>,
        dew_point: Vec<f64>,
        grid: TimeGrid,
    ) -> Result<Self> {
        for (name, v) in [
            ("temperature", &temperature),
            ("humidity", &humidity),
            ("dew_point", &dew_point),
        ] {
            if v.len() != grid.count {
                return Err(Error::Shape(format!(
                    "weather {name}: {} values on a grid of {}",
                    v.len(),
                    grid.count
                )));
            }
        }
        if let Some(h) = humidity.iter().find(|h| !(0.0..=100.0).contains(*h)) {
            return Err(Error::Data(format!("humidity {h} outside [0, 100]")));
        }
        Ok(WeatherSeries {
            temperature,
            humidity,
            dew_point,
            grid,
        })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        WeatherSeries {
            temperature: vec![0.0; grid.count],
            humidity: vec![0.0; grid.count],
            dew_point: vec![0.0; grid.count],
            grid,
        }
    }
}

/// Per-day calendar attributes. Day 0 starts at the grid start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarFeatures {
    /// Local date of day 0.
    pub start_date: NaiveDate,
    /// 0 = Monday .. 6 = Sunday.
    pub day_of_week: Vec<u8>,
    pub is_holiday: Vec<bool>,
    pub slots_per_day: usize,
}

impl CalendarFeatures {
    pub fn new(start_date: NaiveDate, days: usize, slots_per_day: usize, holidays: &[NaiveDate]) -> Self {
        let mut day_of_week = Vec::with_capacity(days);
        let mut is_holiday = Vec::with_capacity(days);
        for d in 0..days {
            let date = start_date + Duration::days(d as i64);
            day_of_week.push(date.weekday().num_days_from_monday() as u8);
            is_holiday.push(holidays.contains(&date));
        }
        CalendarFeatures {
            start_date,
            day_of_week,
            is_holiday,
            slots_per_day,
        }
    }

    pub fn days(&self) -> usize {
        self.day_of_week.len()
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + Duration::days(day as i64)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start_date).num_days();
        (d >= 0 && (d as usize) < self.days()).then_some(d as usize)
    }

    pub fn slot_of_day(&self, slot: usize) -> usize {
        slot % self.slots_per_day
    }

    pub fn holidays(&self) -> Vec<NaiveDate> {
        self.is_holiday
            .iter()
            .enumerate()
            .filter(|(_, h)| **h)
            .map(|(d, _)| self.date(d))
            .collect()
    }
}

/// Local calendar date of a unix timestamp under a fixed UTC offset.
pub fn local_date(t: i64, utc_offset_seconds: i64) -> NaiveDate {
    let days = (t + utc_offset_seconds).div_euclid(SECONDS_PER_DAY);
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch") + Duration::days(days)
}

/// Sub-metered appliances, main meter, weather and calendar on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdDataset {
    pub appliances: Vec<ApplianceSeries>,
    pub total: ApplianceSeries,
    pub weather: WeatherSeries,
    pub calendar: CalendarFeatures,
    pub days: usize,
    pub utc_offset_seconds: i64,
}

impl HouseholdDataset {
    pub fn new(
        appliances: Vec<ApplianceSeries>,
        total: ApplianceSeries,
        weather: WeatherSeries,
        holidays: &[NaiveDate],
        utc_offset_seconds: i64,
    ) -> Result<Self> {
        let grid = total.grid;
        if let Some(a) = appliances.iter().find(|a| a.grid != grid) {
            return Err(Error::Shape(format!("appliance {} is not on the dataset grid", a.id)));
        }
        if weather.grid != grid {
            return Err(Error::Shape("weather is not on the dataset grid".into()));
        }
        let slots_per_day = grid
            .slots_per_day()
            .ok_or_else(|| Error::Data(format!("step {} does not divide a day", grid.step)))?;
        let days = grid.whole_days();
        let start_date = local_date(grid.start, utc_offset_seconds);
        let calendar = CalendarFeatures::new(start_date, days, slots_per_day, holidays);
        Ok(HouseholdDataset {
            appliances,
            total,
            weather,
            calendar,
            days,
            utc_offset_seconds,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.total.grid
    }

    pub fn appliance(&self, id: &str) -> Option<&ApplianceSeries> {
        self.appliances.iter().find(|a| a.id == id)
    }

    pub fn appliance_ids(&self) -> Vec<String> {
        self.appliances.iter().map(|a| a.id.clone()).collect()
    }

    /// Slotwise sum of every sub-metered appliance.
    pub fn appliance_sum(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.grid().count];
        for a in &self.appliances {
            for (s, p) in sum.iter_mut().zip(&a.power) {
                *s += p;
            }
        }
        sum
    }

    /// Copy of the dataset restricted to the given appliance ids (in that order).
    pub fn with_appliances(&self, ids: &[String]) -> Result<Self> {
        let appliances = ids
            .iter()
            .map(|id| {
                self.appliance(id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("unknown appliance {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HouseholdDataset {
            appliances,
            ..self.clone()
        })
    }

    /// Resample every series onto a coarser grid with the given step.
    pub fn resample_to(&self, step: i64) -> Result<Self> {
        let src = self.grid();
        if step % src.step != 0 {
            return Err(Error::Data(format!(
                "target step {step} is not a multiple of source step {}",
                src.step
            )));
        }
        let ratio = (step / src.step) as usize;
        let count = src.count / ratio;
        let target = TimeGrid::new(src.start, step, count)?;
        let appliances = self
            .appliances
            .iter()
            .map(|a| resample(a, target))
            .collect::<Result<Vec<_>>>()?;
        let total = resample(&self.total, target)?;
        let weather = WeatherSeries {
            temperature: resample_values(&self.weather.temperature, src, target)?,
            humidity: resample_values(&self.weather.humidity, src, target)?,
            dew_point: resample_values(&self.weather.dew_point, src, target)?,
            grid: target,
        };
        let slots_per_day = target
            .slots_per_day()
            .ok_or_else(|| Error::Data(format!("step {step} does not divide a day")))?;
        let days = target.whole_days();
        let mut calendar = self.calendar.clone();
        calendar.slots_per_day = slots_per_day;
        calendar.day_of_week.truncate(days);
        calendar.is_holiday.truncate(days);
        Ok(HouseholdDataset {
            appliances,
            total,
            weather,
            calendar,
            days,
            utc_offset_seconds: self.utc_offset_seconds,
        })
    }

    /// Contiguous sub-dataset covering days `[from, to)`.
    pub fn slice_days(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.days {
            return Err(Error::OutOfRange {
                name: "day range",
                value: format!("{from}..{to}"),
                range: format!("0..={}", self.days),
            });
        }
        let spd = self.calendar.slots_per_day;
        let src = self.grid();
        let grid = TimeGrid::new(src.timestamp(from * spd), src.step, (to - from) * spd)?;
        let cut = |v: &[f64]| v[from * spd..to * spd].to_vec();
        let cut_series = |s: &ApplianceSeries| ApplianceSeries {
            id: s.id.clone(),
            name: s.name.clone(),
            power: cut(&s.power),
            grid,
        };
        Ok(HouseholdDataset {
            appliances: self.appliances.iter().map(cut_series).collect(),
            total: cut_series(&self.total),
            weather: WeatherSeries {
                temperature: cut(&self.weather.temperature),
                humidity: cut(&self.weather.humidity),
                dew_point: cut(&self.weather.dew_point),
                grid,
            },
            calendar: CalendarFeatures {
                start_date: self.calendar.date(from),
                day_of_week: self.calendar.day_of_week[from..to].to_vec(),
                is_holiday: self.calendar.is_holiday[from..to].to_vec(),
                slots_per_day: spd,
            },
            days: to - from,
            utc_offset_seconds: self.utc_offset_seconds,
        })
    }

    /// Append a dataset that starts exactly where `self` ends.
    pub fn concat(&self, next: &HouseholdDataset) -> Result<Self> {
        let a = self.grid();
        let b = next.grid();
        if a.step != b.step || a.end() != b.start || self.appliance_ids() != next.appliance_ids() {
            return Err(Error::Shape("datasets are not contiguous".into()));
        }
        let grid = TimeGrid::new(a.start, a.step, a.count + b.count)?;
        let join = |x: &[f64], y: &[f64]| [x, y].concat();
        let join_series = |x: &ApplianceSeries, y: &ApplianceSeries| ApplianceSeries {
            id: x.id.clone(),
            name: x.name.clone(),
            power: join(&x.power, &y.power),
            grid,
        };
        Ok(HouseholdDataset {
            appliances: self
                .appliances
                .iter()
                .zip(&next.appliances)
                .map(|(x, y)| join_series(x, y))
                .collect(),
            total: join_series(&self.total, &next.total),
            weather: WeatherSeries {
                temperature: join(&self.weather.temperature, &next.weather.temperature),
                humidity: join(&self.weather.humidity, &next.weather.humidity),
                dew_point: join(&self.weather.dew_point, &next.weather.dew_point),
                grid,
            },
            calendar: CalendarFeatures {
                start_date: self.calendar.start_date,
                day_of_week: [&self.calendar.day_of_week[..], &next.calendar.day_of_week[..]].concat(),
                is_holiday: [&self.calendar.is_holiday[..], &next.calendar.is_holiday[..]].concat(),
                slots_per_day: self.calendar.slots_per_day,
            },
            days: self.days + next.days,
            utc_offset_seconds: self.utc_offset_seconds,
        })
    }
}
