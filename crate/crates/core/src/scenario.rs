//! Exogenous multi-period frame: prices, CO₂ price, emission factors, caps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Carrier;
use crate::error::{Error, Result};

const REFERENCE_SCENARIO: &str = include_str!("../../../scenarios/reference_2023_2045.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFrame {
    pub id: String,
    /// Stage years, strictly increasing.
    pub periods: Vec<i32>,
    /// ct/kWh per carrier, one value per stage year.
    pub prices: BTreeMap<Carrier, Vec<f64>>,
    /// €/t per stage year.
    pub co2_price: Vec<f64>,
    /// gCO₂eq/kWh per carrier and stage year.
    pub grid_emission_factor: BTreeMap<Carrier, Vec<f64>>,
    /// ct/kWh per stage year.
    pub feed_in_tariff: Vec<f64>,
    /// Fraction of buildings per year.
    pub refurb_rate_cap: f64,
    pub conversion_rate_cap: f64,
    /// Installs plus new envelope components per building and stage.
    pub max_parallel_retrofits: u32,
    #[serde(default)]
    pub synthetic_fields: Vec<String>,
}

/// Years `(start, end]` covered by one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: i32,
    pub end: i32,
}

impl Period {
    pub fn years(self) -> u32 {
        (self.end - self.start).max(0) as u32
    }

    /// Calendar years of the period, earliest first.
    pub fn calendar(self) -> impl Iterator<Item = i32> {
        (self.start + 1)..=self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub renovation: u32,
    pub conversion: u32,
}

impl ScenarioFrame {
    pub fn reference() -> ScenarioFrame {
        ScenarioFrame::from_toml(REFERENCE_SCENARIO).expect("shipped scenario is valid")
    }

    pub fn from_toml(text: &str) -> Result<ScenarioFrame> {
        let frame: ScenarioFrame = toml::from_str(text).map_err(|e| Error::Parse(format!("scenario: {e}")))?;
        frame.validate()?;
        Ok(frame)
    }

    pub fn load_file(path: &Path) -> Result<ScenarioFrame> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScenarioFrame::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::validation("scenario", field, msg));
        if self.periods.is_empty() {
            return bad("periods", "no stage years".into());
        }
        if self.periods.windows(2).any(|w| w[0] >= w[1]) {
            return bad("periods", format!("{:?} not strictly increasing", self.periods));
        }
        let n = self.periods.len();
        let mut series: Vec<(String, &Vec<f64>)> = vec![("co2_price".into(), &self.co2_price), ("feed_in_tariff".into(), &self.feed_in_tariff)];
        series.extend(self.prices.iter().map(|(c, v)| (format!("prices.{}", c.as_str()), v)));
        series.extend(self.grid_emission_factor.iter().map(|(c, v)| (format!("grid_emission_factor.{}", c.as_str()), v)));
        for (name, values) in series {
            if values.len() != n {
                return bad(&name, format!("{} values for {n} periods", values.len()));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return bad(&name, format!("{v} must be finite and ≥ 0"));
            }
        }
        for (name, cap) in [("refurb_rate_cap", self.refurb_rate_cap), ("conversion_rate_cap", self.conversion_rate_cap)] {
            if !(cap > 0.0 && cap <= 1.0) {
                return bad(name, format!("{cap} outside (0, 1]"));
            }
        }
        Ok(())
    }

    fn interpolate(&self, values: &[f64], year: i32) -> Result<f64> {
        let first = self.periods[0];
        let last = *self.periods.last().unwrap();
        if year < first || year > last {
            return Err(Error::YearOutOfRange { year, first, last });
        }
        let k = self.periods.partition_point(|&p| p <= year) - 1;
        if self.periods[k] == year || k + 1 == self.periods.len() {
            return Ok(values[k]);
        }
        let (y0, y1) = (self.periods[k] as f64, self.periods[k + 1] as f64);
        let t = (year as f64 - y0) / (y1 - y0);
        Ok(values[k] + t * (values[k + 1] - values[k]))
    }

    /// ct/kWh.
    pub fn price_at(&self, carrier: Carrier, year: i32) -> Result<f64> {
        let v = self.prices.get(&carrier).ok_or_else(|| Error::UnknownCarrier(carrier.as_str().into()))?;
        self.interpolate(v, year)
    }

    /// gCO₂eq/kWh.
    pub fn emission_factor_at(&self, carrier: Carrier, year: i32) -> Result<f64> {
        let v = self.grid_emission_factor.get(&carrier).ok_or_else(|| Error::UnknownCarrier(carrier.as_str().into()))?;
        self.interpolate(v, year)
    }

    /// €/t.
    pub fn co2_price_at(&self, year: i32) -> Result<f64> {
        self.interpolate(&self.co2_price, year)
    }

    /// ct/kWh.
    pub fn feed_in_at(&self, year: i32) -> Result<f64> {
        self.interpolate(&self.feed_in_tariff, year)
    }

    /// Measures allowed over a period: `floor(cap · buildings · years)` per class.
    pub fn retrofit_budgets(&self, building_count: usize, period: Period) -> Budgets {
        let n = building_count as f64;
        let years = period.years() as f64;
        Budgets {
            renovation: floor_budget(self.refurb_rate_cap * n * years),
            conversion: floor_budget(self.conversion_rate_cap * n * years),
        }
    }

    /// Measures allowed in any single year: `floor(cap · buildings)` per class.
    pub fn annual_budgets(&self, building_count: usize) -> Budgets {
        let n = building_count as f64;
        Budgets {
            renovation: floor_budget(self.refurb_rate_cap * n),
            conversion: floor_budget(self.conversion_rate_cap * n),
        }
    }
}

/// Floor with a small guard so that products like 0.02·50 land on 1.
fn floor_budget(x: f64) -> u32 {
    (x + 1e-9).floor().max(0.0) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_prices_at_stage_years() {
        let f = ScenarioFrame::reference();
        assert_eq!(f.price_at(Carrier::Electricity, 2030).unwrap(), 31.62);
        assert_eq!(f.price_at(Carrier::Gas, 2045).unwrap(), 27.68);
        assert_eq!(f.emission_factor_at(Carrier::Electricity, 2045).unwrap(), 37.5);
        assert_eq!(f.co2_price_at(2023).unwrap(), 80.0);
    }

    #[test]
    fn interpolation_between_stage_years() {
        let f = ScenarioFrame::reference();
        let oracle = 13.94 + (14.63 - 13.94) * 3.0 / 5.0;
        assert!((f.price_at(Carrier::Gas, 2028).unwrap() - oracle).abs() < 1e-12);
        assert!((f.price_at(Carrier::Gas, 2028).unwrap() - 14.354).abs() < 1e-9);
        let mid = f.emission_factor_at(Carrier::Electricity, 2040).unwrap() / 2.0 + f.emission_factor_at(Carrier::Electricity, 2045).unwrap() / 2.0;
        // 2042.5 is not a year; check the mean via the linear form instead.
        let a = f.emission_factor_at(Carrier::Electricity, 2042).unwrap();
        let b = f.emission_factor_at(Carrier::Electricity, 2043).unwrap();
        assert!(((a + b) / 2.0 - mid).abs() < 1e-9);
        assert_eq!(f.emission_factor_at(Carrier::Oil, 2031).unwrap(), 266.0);
    }

    #[test]
    fn out_of_range_and_unknown() {
        let f = ScenarioFrame::reference();
        assert!(matches!(f.price_at(Carrier::Gas, 2050), Err(Error::YearOutOfRange { .. })));
        assert!(matches!(f.price_at(Carrier::Heat, 2030), Err(Error::UnknownCarrier(_))));
    }

    #[test]
    fn budget_examples() {
        let f = ScenarioFrame::reference();
        let p = Period { start: 2025, end: 2030 };
        let b = f.retrofit_budgets(3127, p);
        assert_eq!(b.renovation, (0.02f64 * 3127.0 * 5.0).floor() as u32);
        assert_eq!(b.renovation, 312);
        assert_eq!(b.conversion, 703);
        assert_eq!(f.retrofit_budgets(1, p).renovation, 0);
    }

    #[test]
    fn invalid_frames_are_rejected() {
        let text = REFERENCE_SCENARIO.replace("periods = [2023, 2025", "periods = [2025, 2023");
        assert!(ScenarioFrame::from_toml(&text).is_err());
        let text = REFERENCE_SCENARIO.replace("refurb_rate_cap = 0.02", "refurb_rate_cap = 0.0");
        assert!(ScenarioFrame::from_toml(&text).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_is_continuous(year in 2023i32..2045) {
            let f = ScenarioFrame::reference();
            let a = f.price_at(Carrier::Gas, year).unwrap();
            let b = f.price_at(Carrier::Gas, year + 1).unwrap();
            let gas = &f.prices[&Carrier::Gas];
            let steepest = (1..f.periods.len())
                .map(|k| (gas[k] - gas[k - 1]).abs() / (f.periods[k] - f.periods[k - 1]) as f64)
                .fold(0.0, f64::max);
            prop_assert!((a - b).abs() <= steepest + 1e-9);
        }

        #[test]
        fn budgets_are_monotone(n in 1usize..5000, years in 1i32..10, cap in 0.001f64..0.5) {
            let mut f = ScenarioFrame::reference();
            f.refurb_rate_cap = cap;
            let p = Period { start: 2030, end: 2030 + years };
            let q = Period { start: 2030, end: 2031 + years };
            let b = f.retrofit_budgets(n, p).renovation;
            prop_assert!(f.retrofit_budgets(n + 1, p).renovation >= b);
            prop_assert!(f.retrofit_budgets(n, q).renovation >= b);
            f.refurb_rate_cap = (cap * 1.5).min(1.0);
            prop_assert!(f.retrofit_budgets(n, p).renovation >= b);
        }
    }
}
