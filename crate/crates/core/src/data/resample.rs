use super::{ApplianceSeries, TimeGrid};
use crate::error::{Error, Result};

/// Mean-power resampling onto a coarser grid. Each target slot is the
/// arithmetic mean of the source slots it covers, so energy
/// (`sum * step`) is conserved.
pub fn resample(series: &ApplianceSeries, target: TimeGrid) -> Result<ApplianceSeries> {
    let power = resample_values(&series.power, series.grid, target)?;
    Ok(ApplianceSeries {
        id: series.id.clone(),
        name: series.name.clone(),
        power,
        grid: target,
    })
}

pub fn resample_values(values: &[f64], source: TimeGrid, target: TimeGrid) -> Result<Vec<f64>> {
    if values.len() != source.count {
        return Err(Error::Shape(format!(
            "{} values on a source grid of {}",
            values.len(),
            source.count
        )));
    }
    if target.step % source.step != 0 {
        return Err(Error::Data(format!(
            "target step {} is not an integer multiple of source step {}",
            target.step, source.step
        )));
    }
    let offset = target.start - source.start;
    if offset < 0 || offset % source.step != 0 || target.end() > source.end() {
        return Err(Error::Data(format!(
            "target span [{}, {}) is not aligned inside source span [{}, {})",
            target.start,
            target.end(),
            source.start,
            source.end()
        )));
    }
    let ratio = (target.step / source.step) as usize;
    let first = (offset / source.step) as usize;
    Ok(values[first..first + ratio * target.count]
        .chunks_exact(ratio)
        .map(|chunk| chunk.iter().sum::<f64>() / ratio as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(power: Vec<f64>, step: i64) -> ApplianceSeries {
        let grid = TimeGrid::new(0, step, power.len()).unwrap();
        ApplianceSeries::new("A", "a", power, grid).unwrap()
    }

    #[test]
    fn pairwise_mean() {
        let s = series(vec![2.0, 4.0, 6.0, 8.0], 60);
        let out = resample(&s, TimeGrid::new(0, 120, 2).unwrap()).unwrap();
        assert_eq!(out.power, vec![3.0, 7.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let s = series(vec![5.5; 36], 60);
        for step in [60, 120, 180, 240, 360, 720, 2160] {
            let n = 36 * 60 / step as usize;
            let out = resample(&s, TimeGrid::new(0, step, n).unwrap()).unwrap();
            assert!(out.power.iter().all(|p| *p == 5.5), "step {step}");
        }
    }

    #[test]
    fn one_day_to_two_hour_slots() {
        let power: Vec<f64> = (0..1440).map(|i| ((i * 37) % 101) as f64 * 1.5).collect();
        let s = series(power.clone(), 60);
        let out = resample(&s, TimeGrid::new(0, 7200, 12).unwrap()).unwrap();
        assert_eq!(out.power.len(), 12);
        for (slot, got) in out.power.iter().enumerate() {
            let direct = power[slot * 120..(slot + 1) * 120].iter().sum::<f64>() / 120.0;
            assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_non_integer_ratio_and_span() {
        let s = series(vec![1.0; 6], 60);
        assert!(resample(&s, TimeGrid::new(0, 90, 4).unwrap()).is_err());
        assert!(resample(&s, TimeGrid::new(0, 120, 4).unwrap()).is_err());
        assert!(resample(&s, TimeGrid::new(30, 120, 2).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn energy_is_conserved(
            power in prop::collection::vec(0.0f64..5000.0, 1..20),
            ratio in 1usize..8,
        ) {
            let mut values = Vec::new();
            for _ in 0..ratio {
                values.extend_from_slice(&power);
            }
            let src = series(values.clone(), 60);
            let target = TimeGrid::new(0, 60 * ratio as i64, power.len()).unwrap();
            let out = resample(&src, target).unwrap();
            let e_src: f64 = values.iter().sum::<f64>() * 60.0;
            let e_dst: f64 = out.power.iter().sum::<f64>() * target.step as f64;
            prop_assert!((e_src - e_dst).abs() <= 1e-9 * e_src.abs().max(1.0));
        }
    }
}
