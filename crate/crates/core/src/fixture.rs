//! Synthetic twin generator.
//!
//! Profiles come from archetype shapes (heating degree days, daily usage
//! curves, clear-sky solar with daily cloudiness) scaled per building. Every
//! number is synthetic; nothing here is calibrated against measured data.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::twin::{Building, BuildingType, DemandProfile, EnergyTwin, RefurbState, TechnologyInstance, TwinMeta, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub buildings: usize,
    pub seed: u64,
    pub base_year: i32,
    /// Every building starts with a gas boiler and has no heat network access.
    pub gas_dominated: bool,
    /// Days of hourly data.
    pub days: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { buildings: 20, seed: 42, base_year: 2023, gas_dominated: false, days: 365 }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub twin: EnergyTwin,
    /// Space heat plus hot water over all buildings, summed while generating (kWh).
    pub heat_total: f64,
}

/// Daily mean outdoor temperature, °C.
fn outdoor_temperature(day: usize) -> f64 {
    10.0 - 10.0 * (2.0 * PI * (day as f64 + 10.5) / 365.0).cos()
}

/// Relative heating activity by hour of day (mean 1).
fn heating_shape(hour: usize) -> f64 {
    let base = match hour {
        0..=4 => 0.7,
        5..=8 => 1.5,
        9..=16 => 0.9,
        17..=21 => 1.3,
        _ => 0.8,
    };
    base / (0.7 * 5.0 + 1.5 * 4.0 + 0.9 * 8.0 + 1.3 * 5.0 + 0.8 * 2.0) * 24.0
}

/// Relative domestic use by hour (mean 1); used for hot water and electricity.
fn usage_shape(hour: usize, office: bool) -> f64 {
    let raw = |h: usize| -> f64 {
        if office {
            if (8..18).contains(&h) {
                2.0
            } else {
                0.3
            }
        } else {
            match h {
                0..=5 => 0.3,
                6..=8 => 1.8,
                9..=16 => 0.8,
                17..=21 => 1.9,
                _ => 0.7,
            }
        }
    };
    let sum: f64 = (0..24).map(raw).sum();
    raw(hour) / sum * 24.0
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn solar_availability(days: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(days * 24);
    for d in 0..days {
        let season = 0.5 - 0.5 * (2.0 * PI * (d as f64 + 10.5) / 365.0).cos();
        let amplitude = 0.35 + 0.5 * season;
        let daylight = 8.0 + 8.0 * season;
        let clouds: f64 = rng.gen_range(0.35..1.0);
        for h in 0..24 {
            let t = (h as f64 + 0.5 - (12.0 - daylight / 2.0)) / daylight;
            let sun = if (0.0..=1.0).contains(&t) { (PI * t).sin() } else { 0.0 };
            out.push(round4((sun * amplitude * clouds).clamp(0.0, 1.0)));
        }
    }
    out
}

/// Generate a synthetic twin deterministically from `cfg.seed`.
pub fn generate(cfg: &FixtureConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.days * 24;
    let availability = solar_availability(cfg.days, &mut rng);
    let temperature: Vec<f64> = (0..cfg.days).map(outdoor_temperature).collect();
    let degree_days: f64 = temperature.iter().map(|t| (15.0 - t).max(0.0)).sum();
    let cooling_days: f64 = temperature.iter().map(|t| (t - 16.0).max(0.0)).sum::<f64>().max(1e-9);
    let mut heat_total = 0.0;
    let mut buildings = Vec::with_capacity(cfg.buildings);
    for k in 0..cfg.buildings {
        let id = format!("b{:03}", k + 1);
        let draw: f64 = rng.gen();
        let building_type = if draw < 0.8 {
            BuildingType::Residential
        } else if draw < 0.95 {
            BuildingType::Commercial
        } else {
            BuildingType::Public
        };
        let office = building_type != BuildingType::Residential;
        let construction_year = rng.gen_range(1920..=2015);
        let roof_area: f64 = if office { rng.gen_range(250.0..700.0) } else { rng.gen_range(80.0..220.0) };
        let storeys = rng.gen_range(1..=4) as f64;
        let floor_area = roof_area * storeys;
        let open_space_area = if !office && rng.gen_bool(0.5) { rng.gen_range(100.0..600.0f64).round() } else { 0.0 };
        let specific_heat = match construction_year {
            ..=1948 => 190.0,
            1949..=1978 => 170.0,
            1979..=1994 => 120.0,
            1995..=2009 => 85.0,
            _ => 55.0,
        } * rng.gen_range(0.85..1.15);
        let mut refurb_state = RefurbState::default();
        if construction_year < 1995 {
            refurb_state.roof = rng.gen_bool(0.25);
            refurb_state.window = rng.gen_bool(0.3);
            refurb_state.wall = rng.gen_bool(0.1);
            refurb_state.cellar = rng.gen_bool(0.1);
        }
        let space_annual = specific_heat * floor_area;
        let hot_water_annual = if office { 5.0 } else { 15.0 } * floor_area;
        let electricity_annual = if office { 45.0 } else { 28.0 } * floor_area;
        let cooling_annual = if office { 20.0 * floor_area } else { 0.0 };

        let mut columns: BTreeMap<Vector, Vec<f64>> = BTreeMap::new();
        for v in [Vector::Electricity, Vector::SpaceHeat, Vector::HotWater] {
            columns.insert(v, Vec::with_capacity(steps));
        }
        if office {
            columns.insert(Vector::Cooling, Vec::with_capacity(steps));
        }
        for (d, &t) in temperature.iter().enumerate() {
            let weekday = d % 7 < 5;
            let heat_day = (15.0 - t).max(0.0) / degree_days * space_annual;
            let cool_day = (t - 16.0).max(0.0) / cooling_days * cooling_annual;
            let activity = if office && !weekday { 0.4 } else { 1.0 };
            let noise: f64 = rng.gen_range(0.9..1.1);
            for h in 0..24 {
                let sh = round4(heat_day / 24.0 * heating_shape(h) * noise);
                let hw = round4(hot_water_annual / steps as f64 * usage_shape(h, office) * activity * noise);
                let winter = 1.0 + 0.15 * (2.0 * PI * (d as f64 + 10.5) / 365.0).cos();
                let el = round4(electricity_annual / steps as f64 * usage_shape(h, office) * activity * winter);
                columns.get_mut(&Vector::SpaceHeat).unwrap().push(sh);
                columns.get_mut(&Vector::HotWater).unwrap().push(hw);
                columns.get_mut(&Vector::Electricity).unwrap().push(el);
                heat_total += sh + hw;
                if let Some(c) = columns.get_mut(&Vector::Cooling) {
                    let daytime = if (9..19).contains(&h) { 2.4 } else { 0.0 };
                    c.push(round4(cool_day / 24.0 * daytime * activity));
                }
            }
        }
        let demand: BTreeMap<Vector, DemandProfile> =
            columns.into_iter().map(|(v, values)| (v, DemandProfile { values, resolution: 60 })).collect();
        let heat_peak = demand[&Vector::SpaceHeat].peak_kw() + demand[&Vector::HotWater].peak_kw();
        let el_peak = demand[&Vector::Electricity].peak_kw();

        let heat_network_access = !cfg.gas_dominated && rng.gen_bool(0.2);
        let main = if cfg.gas_dominated {
            "gas_boiler"
        } else {
            match rng.gen_range(0..20) {
                0..=11 => "gas_boiler",
                12..=16 => "oil_boiler",
                17..=18 => "air_source_hp",
                _ => "pellet_boiler",
            }
        };
        let main_life = if main == "air_source_hp" { 18 } else { 20 };
        let mut installed = vec![
            TechnologyInstance {
                id: String::new(),
                tech_id: main.to_string(),
                size: (heat_peak * 1.2).ceil().max(5.0),
                install_year: cfg.base_year - rng.gen_range(0..main_life),
            },
            TechnologyInstance {
                id: String::new(),
                tech_id: "grid_connection".to_string(),
                size: (el_peak + heat_peak).ceil().max(20.0),
                install_year: cfg.base_year - rng.gen_range(0..27),
            },
        ];
        if !cfg.gas_dominated && rng.gen_bool(0.2) {
            installed.push(TechnologyInstance {
                id: String::new(),
                tech_id: "photovoltaics".to_string(),
                size: (roof_area * 0.3 / 6.0).floor().max(1.0),
                install_year: cfg.base_year - rng.gen_range(0..15),
            });
        }
        if office {
            installed.push(TechnologyInstance {
                id: String::new(),
                tech_id: "air_conditioner".to_string(),
                size: (demand[&Vector::Cooling].peak_kw() * 1.2).ceil().max(2.0),
                install_year: cfg.base_year - rng.gen_range(0..15),
            });
        }
        for inst in &mut installed {
            inst.id = format!("{}-{}", inst.tech_id, inst.install_year);
        }
        let location = [8.40 + rng.gen_range(-0.01..0.01), 49.00 + rng.gen_range(-0.01..0.01)];
        buildings.push(Building {
            id,
            location: [round6(location[0]), round6(location[1])],
            building_type,
            construction_year,
            roof_area: roof_area.round(),
            open_space_area,
            demand,
            refurb_state,
            installed,
            heat_network_access,
        });
    }
    let meta = TwinMeta {
        id: format!("synthetic-{}-{}", cfg.buildings, cfg.seed),
        base_year: cfg.base_year,
        synthetic: true,
        availability: BTreeMap::from([("solar".to_string(), DemandProfile { values: availability, resolution: 60 })]),
    };
    Fixture { twin: EnergyTwin { meta, buildings }, heat_total }
}

/// Hourly solar availability of one clear day.
pub fn clear_day_solar() -> Vec<f64> {
    (0..24).map(|h| round4(((h as f64 - 6.0) / 12.0 * PI).sin().max(0.0))).collect()
}

/// Metadata of a one-day hourly twin with a clear-day solar profile.
pub fn day_meta(base_year: i32) -> TwinMeta {
    TwinMeta {
        id: "day".into(),
        base_year,
        synthetic: true,
        availability: BTreeMap::from([("solar".to_string(), DemandProfile { values: clear_day_solar(), resolution: 60 })]),
    }
}

/// Residential building with hourly space-heat and electricity profiles and
/// a 50 kW grid connection as its only plant.
pub fn day_building(id: &str, space_heat: &[f64], electricity: &[f64]) -> Building {
    let profile = |v: &[f64]| DemandProfile { values: v.to_vec(), resolution: 60 };
    Building {
        id: id.into(),
        location: [8.4, 49.0],
        building_type: BuildingType::Residential,
        construction_year: 1970,
        roof_area: 100.0,
        open_space_area: 0.0,
        demand: BTreeMap::from([(Vector::SpaceHeat, profile(space_heat)), (Vector::Electricity, profile(electricity))]),
        refurb_state: RefurbState::default(),
        installed: vec![TechnologyInstance { id: "grid_connection-2020".into(), tech_id: "grid_connection".into(), size: 50.0, install_year: 2020 }],
        heat_network_access: false,
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn write_csv(path: &Path, profiles: &BTreeMap<String, &DemandProfile>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let names: Vec<&String> = profiles.keys().collect();
    w.write_record(names.iter().map(|s| s.as_str())).map_err(|e| Error::Invalid(e.to_string()))?;
    let steps = profiles.values().next().map_or(0, |p| p.values.len());
    for s in 0..steps {
        w.write_record(profiles.values().map(|p| p.values[s].to_string())).map_err(|e| Error::Invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `twin.json` with sidecar profile CSVs under `dir/profiles/`.
pub fn write_fixture(twin: &EnergyTwin, dir: &Path) -> Result<PathBuf> {
    let profiles = dir.join("profiles");
    std::fs::create_dir_all(&profiles).map_err(|e| Error::io(&profiles, e))?;
    let resolution = |m: &BTreeMap<String, &DemandProfile>| m.values().next().map_or(60, |p| p.resolution);
    let mut meta = json!({ "id": twin.meta.id, "base_year": twin.meta.base_year, "synthetic": twin.meta.synthetic });
    if !twin.meta.availability.is_empty() {
        let m: BTreeMap<String, &DemandProfile> = twin.meta.availability.iter().map(|(k, v)| (k.clone(), v)).collect();
        write_csv(&profiles.join("availability.csv"), &m)?;
        meta["availability"] = json!({ "csv": "profiles/availability.csv", "resolution": resolution(&m) });
    }
    let mut buildings = Vec::new();
    for b in &twin.buildings {
        let m: BTreeMap<String, &DemandProfile> = b.demand.iter().map(|(k, v)| (k.as_str().to_string(), v)).collect();
        let name = format!("{}.csv", b.id);
        write_csv(&profiles.join(&name), &m)?;
        let mut doc = serde_json::to_value(b).map_err(|e| Error::Invalid(e.to_string()))?;
        doc["demand"] = json!({ "csv": format!("profiles/{name}"), "resolution": resolution(&m) });
        buildings.push(doc);
    }
    let doc = json!({ "meta": meta, "buildings": buildings });
    let path = dir.join("twin.json");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &doc).map_err(|e| Error::Invalid(e.to_string()))?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
