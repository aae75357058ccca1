//! Time resolution of the dispatch model and profile aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Resolution {
    /// Every native profile step.
    FullYear,
    /// The year split into `days` contiguous blocks, each replaced by its
    /// average day sampled every `step_minutes`.
    RepresentativeDays { days: usize, step_minutes: u32 },
}

impl Resolution {
    /// Small grid for tests and desk runs: 4 days × 6 steps of 4 h.
    pub fn desk() -> Resolution {
        Resolution::RepresentativeDays { days: 4, step_minutes: 240 }
    }

    /// Parse `full-year` or `rep-days:<days>x<minutes>`.
    pub fn parse(s: &str) -> Option<Resolution> {
        if s == "full-year" {
            return Some(Resolution::FullYear);
        }
        let spec = s.strip_prefix("rep-days:")?;
        let (d, m) = spec.split_once('x')?;
        Some(Resolution::RepresentativeDays { days: d.parse().ok()?, step_minutes: m.parse().ok()? })
    }
}

/// Meteorological season of a day of year: 0 = DJF, 1 = MAM, 2 = JJA, 3 = SON.
pub fn season_of_day(day_of_year: usize) -> usize {
    match day_of_year % 365 {
        0..=58 => 0,
        59..=150 => 1,
        151..=242 => 2,
        243..=333 => 3,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub steps: usize,
    pub steps_per_day: usize,
    pub hours_per_step: f64,
    /// Real days each model step stands for; annual totals are `Σ weight · value`.
    pub weight: Vec<f64>,
    pub season: Vec<usize>,
    native_steps_per_day: usize,
    /// Native steps merged into one model step.
    group: usize,
    /// Day ranges `[start, end)` of each represented day.
    blocks: Vec<(usize, usize)>,
}

impl TimeGrid {
    /// Grid for profiles of `native_steps` values at `native_minutes` resolution.
    pub fn new(native_steps: usize, native_minutes: u32, resolution: Resolution) -> Result<TimeGrid> {
        if native_minutes == 0 || 1440 % native_minutes != 0 {
            return Err(Error::Invalid(format!("profile resolution {native_minutes} min does not divide a day")));
        }
        let native_per_day = (1440 / native_minutes) as usize;
        if native_steps == 0 || native_steps % native_per_day != 0 {
            return Err(Error::Invalid(format!("{native_steps} steps is not a whole number of days")));
        }
        let days = native_steps / native_per_day;
        let (blocks, step_minutes) = match resolution {
            Resolution::FullYear => ((0..days).map(|d| (d, d + 1)).collect::<Vec<_>>(), native_minutes),
            Resolution::RepresentativeDays { days: k, step_minutes } => {
                if k == 0 || k > days {
                    return Err(Error::Invalid(format!("{k} representative days from {days} days of data")));
                }
                if step_minutes == 0 || 1440 % step_minutes != 0 || step_minutes % native_minutes != 0 {
                    return Err(Error::Invalid(format!("step of {step_minutes} min incompatible with {native_minutes} min data")));
                }
                ((0..k).map(|b| (b * days / k, (b + 1) * days / k)).collect(), step_minutes)
            }
        };
        let steps_per_day = (1440 / step_minutes) as usize;
        let mut weight = Vec::with_capacity(blocks.len() * steps_per_day);
        let mut season = Vec::with_capacity(weight.capacity());
        for &(a, b) in &blocks {
            let w = (b - a) as f64 * 365.0 / days as f64;
            let mid_doy = ((a + b) as f64 / 2.0 * 365.0 / days as f64) as usize;
            for _ in 0..steps_per_day {
                weight.push(w);
                season.push(season_of_day(mid_doy));
            }
        }
        Ok(TimeGrid {
            steps: weight.len(),
            steps_per_day,
            hours_per_step: step_minutes as f64 / 60.0,
            weight,
            season,
            native_steps_per_day: native_per_day,
            group: (step_minutes / native_minutes) as usize,
            blocks,
        })
    }

    fn reduce(&self, values: &[f64], mean: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps);
        for &(a, b) in &self.blocks {
            let n_days = (b - a) as f64;
            for j in 0..self.steps_per_day {
                let mut acc = 0.0;
                for d in a..b {
                    let base = d * self.native_steps_per_day + j * self.group;
                    acc += values[base..base + self.group].iter().sum::<f64>();
                }
                let v = acc / n_days;
                out.push(if mean { v / self.group as f64 } else { v });
            }
        }
        out
    }

    /// Energy per model step (kWh) from a native energy profile.
    pub fn aggregate_energy(&self, values: &[f64]) -> Vec<f64> {
        self.reduce(values, false)
    }

    /// Mean fraction per model step from a native fraction profile.
    pub fn aggregate_fraction(&self, values: &[f64]) -> Vec<f64> {
        self.reduce(values, true)
    }

    /// Annual total of a per-step series.
    pub fn annual(&self, series: &[f64]) -> f64 {
        self.weight.iter().zip(series).map(|(w, v)| w * v).sum()
    }
}
