//! Stage aggregates and file exports (long-format CSV, GeoJSON points).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::catalog::{CostBreakdown, DurationClass, TechKind};
use crate::error::{Error, Result};
use crate::model::{BuildingSolution, Category, Emissions};
use crate::pathway::{Measure, MeasureCategory, MeasureKind, TransformationPath};
use crate::scenario::Budgets;

/// Annual flows of one carrier, kWh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub demand: f64,
    pub generation: f64,
    pub import: f64,
    pub export: f64,
    /// Net energy put into storage over the year (charge minus discharge).
    pub storage_net: f64,
    /// Heat produced beyond demand and dissipated.
    pub surplus: f64,
}

impl EnergyBalance {
    /// Supply minus all uses; zero for a closed balance.
    pub fn residual(&self) -> f64 {
        self.generation + self.import - self.demand - self.export - self.storage_net - self.surplus
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearCounts {
    pub renovation_voluntary: u32,
    pub renovation_mandatory: u32,
    pub conversion_voluntary: u32,
    pub conversion_mandatory: u32,
}

impl YearCounts {
    pub fn renovations(&self) -> u32 {
        self.renovation_voluntary + self.renovation_mandatory
    }

    pub fn conversions(&self) -> u32 {
        self.conversion_voluntary + self.conversion_mandatory
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub year: i32,
    pub building_count: usize,
    pub solved_count: usize,
    /// Refurbishment measures by added components.
    pub refurb_frequency: BTreeMap<String, usize>,
    /// Solved buildings by technology with the largest heat output ("none" without heat).
    pub heating_frequency: BTreeMap<String, usize>,
    /// MW of heat or cooling output per technology.
    pub thermal_mw: BTreeMap<String, f64>,
    /// MW of electrical output per technology (PV, CHP electrical side).
    pub electrical_mw: BTreeMap<String, f64>,
    /// MWh of storage capacity per technology.
    pub storage_mwh: BTreeMap<String, f64>,
    pub grid_connection_mw: f64,
    pub energy_balance: BTreeMap<String, EnergyBalance>,
    /// Share of PV generation used on site.
    pub self_consumption: f64,
    pub pv_generation_kwh: f64,
    pub costs: BTreeMap<Category, CostBreakdown>,
    pub cost_total: f64,
    pub emissions: BTreeMap<Category, Emissions>,
    pub emissions_total: Emissions,
    /// Scope 1 + 2 + 3 of `emissions_total`.
    pub emission_sum: f64,
    /// Scheduled building units per implementation year (one per building and class).
    pub per_year: BTreeMap<i32, YearCounts>,
    /// Realized annual rates including mandatory measures, by year.
    pub renovation_rate: BTreeMap<i32, f64>,
    pub conversion_rate: BTreeMap<i32, f64>,
    pub annual_budgets: Budgets,
}

fn units_per_year(measures: &[Measure]) -> BTreeMap<i32, YearCounts> {
    let mut seen: BTreeMap<(i32, &str, DurationClass, MeasureCategory), ()> = BTreeMap::new();
    for m in measures {
        if let Some(y) = m.implementation_year {
            seen.insert((y, m.building_id.as_str(), m.class, m.category), ());
        }
    }
    let mut out: BTreeMap<i32, YearCounts> = BTreeMap::new();
    for (y, _, class, cat) in seen.into_keys() {
        let c = out.entry(y).or_default();
        match (class, cat) {
            (DurationClass::Renovation, MeasureCategory::Voluntary) => c.renovation_voluntary += 1,
            (DurationClass::Renovation, MeasureCategory::Mandatory) => c.renovation_mandatory += 1,
            (DurationClass::PlantConversion, MeasureCategory::Voluntary) => c.conversion_voluntary += 1,
            (DurationClass::PlantConversion, MeasureCategory::Mandatory) => c.conversion_mandatory += 1,
        }
    }
    out
}

/// Aggregate one stage's final solutions and scheduled measures.
pub fn aggregate_stage(year: i32, solutions: &[BuildingSolution], measures: &[Measure], building_count: usize, annual_budgets: Budgets) -> StageReport {
    let mut refurb_frequency: BTreeMap<String, usize> = BTreeMap::new();
    for m in measures {
        if let MeasureKind::Refurbishment { added, .. } = &m.kind {
            *refurb_frequency.entry(added.label()).or_default() += 1;
        }
    }
    let mut heating_frequency: BTreeMap<String, usize> = BTreeMap::new();
    let mut thermal_mw: BTreeMap<String, f64> = BTreeMap::new();
    let mut electrical_mw: BTreeMap<String, f64> = BTreeMap::new();
    let mut storage_mwh: BTreeMap<String, f64> = BTreeMap::new();
    let mut grid_connection_mw = 0.0;
    let mut costs: BTreeMap<Category, CostBreakdown> = BTreeMap::new();
    let mut emissions: BTreeMap<Category, Emissions> = BTreeMap::new();
    let mut emissions_total = Emissions::default();
    let mut el = EnergyBalance::default();
    let mut heat = EnergyBalance::default();
    let mut cool = EnergyBalance::default();
    let mut fuels: BTreeMap<String, EnergyBalance> = BTreeMap::new();
    for sol in solutions {
        let key = sol.primary_heat_tech.clone().unwrap_or_else(|| "none".into());
        *heating_frequency.entry(key).or_default() += 1;
        for (tech, &kw) in &sol.capacities {
            let mw = kw / 1000.0;
            match sol.tech_kinds.get(tech) {
                Some(TechKind::ThermalStorage | TechKind::Battery) => *storage_mwh.entry(tech.clone()).or_default() += mw,
                Some(TechKind::GridConnection) => grid_connection_mw += mw,
                Some(TechKind::Photovoltaic) => *electrical_mw.entry(tech.clone()).or_default() += mw,
                _ => *thermal_mw.entry(tech.clone()).or_default() += mw,
            }
            if let Some(kw_el) = sol.chp_electrical_kw.get(tech) {
                *electrical_mw.entry(tech.clone()).or_default() += kw_el / 1000.0;
            }
        }
        for (cat, c) in &sol.costs_by_category {
            costs.entry(*cat).or_default().add(c);
        }
        for (cat, e) in &sol.emissions_by_category {
            emissions.entry(*cat).or_default().add(e);
        }
        emissions_total.add(&sol.emissions);
        let d = &sol.dispatch;
        use crate::twin::Vector;
        el.demand += d.demand[&Vector::Electricity] + d.conversion_electricity;
        el.generation += d.pv_generation + d.chp_generation;
        el.import += d.electricity_import;
        el.export += d.electricity_export;
        el.storage_net += d.battery_charge - d.battery_discharge;
        heat.demand += d.demand[&Vector::SpaceHeat] + d.demand[&Vector::HotWater];
        heat.generation += d.heat_output.values().sum::<f64>();
        heat.storage_net += d.heat_storage_charge - d.heat_storage_discharge;
        cool.demand += d.demand[&Vector::Cooling];
        cool.generation += d.cooling_output.values().sum::<f64>();
        for (c, &v) in &d.fuel_use {
            let b = fuels.entry(c.as_str().to_string()).or_default();
            b.import += v;
            b.demand += v;
        }
    }
    heat.surplus = (heat.generation - heat.demand - heat.storage_net).max(0.0);
    cool.surplus = (cool.generation - cool.demand).max(0.0);
    let mut energy_balance = fuels;
    energy_balance.insert("electricity".into(), el);
    energy_balance.insert("heat".into(), heat);
    energy_balance.insert("cooling".into(), cool);
    let pv: f64 = solutions.iter().map(|s| s.dispatch.pv_generation).sum();
    let pv_export: f64 = solutions.iter().filter(|s| s.dispatch.pv_generation > 0.0).map(|s| s.dispatch.electricity_export.min(s.dispatch.pv_generation)).sum();
    let self_consumption = if pv > 1e-9 { (pv - pv_export) / pv } else { 0.0 };
    let mut cost_sum = CostBreakdown::default();
    for c in costs.values() {
        cost_sum.add(c);
    }
    let per_year = units_per_year(measures);
    let n = building_count.max(1) as f64;
    let renovation_rate = per_year.iter().map(|(y, c)| (*y, c.renovations() as f64 / n)).collect();
    let conversion_rate = per_year.iter().map(|(y, c)| (*y, c.conversions() as f64 / n)).collect();
    StageReport {
        year,
        building_count,
        solved_count: solutions.len(),
        refurb_frequency,
        heating_frequency,
        thermal_mw,
        electrical_mw,
        storage_mwh,
        grid_connection_mw,
        energy_balance,
        self_consumption,
        pv_generation_kwh: pv,
        costs,
        cost_total: cost_sum.total(),
        emission_sum: emissions_total.scope1 + emissions_total.scope2 + emissions_total.scope3,
        emissions,
        emissions_total,
        per_year,
        renovation_rate,
        conversion_rate,
        annual_budgets,
    }
}

/// Relative change first → last stage; `None` where the first value is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayDeltas {
    pub first_year: i32,
    pub last_year: i32,
    pub heat_demand: Option<f64>,
    pub electricity_demand: Option<f64>,
    pub thermal_mw: Option<f64>,
    pub electrical_mw: Option<f64>,
    pub pv_mw: Option<f64>,
    pub cost_total: Option<f64>,
    pub scope1: Option<f64>,
    pub scope2: Option<f64>,
    pub scope3: Option<f64>,
    pub emissions_operational: Option<f64>,
}

fn rel(first: f64, last: f64) -> Option<f64> {
    (first.abs() > 1e-12).then(|| (last - first) / first)
}

pub fn pathway_deltas(path: &TransformationPath) -> Result<PathwayDeltas> {
    if path.stages.len() < 2 {
        return Err(Error::Invalid(format!("deltas need two stages, path has {}", path.stages.len())));
    }
    let a = &path.stages[0].report;
    let b = &path.stages[path.stages.len() - 1].report;
    let bal = |r: &StageReport, k: &str| r.energy_balance.get(k).map_or(0.0, |e| e.demand);
    let sum = |m: &BTreeMap<String, f64>| m.values().sum::<f64>();
    let pv = |r: &StageReport| r.electrical_mw.get("photovoltaics").copied().unwrap_or(0.0);
    let op = |r: &StageReport| r.emissions_total.scope1 + r.emissions_total.scope2;
    Ok(PathwayDeltas {
        first_year: a.year,
        last_year: b.year,
        heat_demand: rel(bal(a, "heat"), bal(b, "heat")),
        electricity_demand: rel(bal(a, "electricity"), bal(b, "electricity")),
        thermal_mw: rel(sum(&a.thermal_mw), sum(&b.thermal_mw)),
        electrical_mw: rel(sum(&a.electrical_mw), sum(&b.electrical_mw)),
        pv_mw: rel(pv(a), pv(b)),
        cost_total: rel(a.cost_total, b.cost_total),
        scope1: rel(a.emissions_total.scope1, b.emissions_total.scope1),
        scope2: rel(a.emissions_total.scope2, b.emissions_total.scope2),
        scope3: rel(a.emissions_total.scope3, b.emissions_total.scope3),
        emissions_operational: rel(op(a), op(b)),
    })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv sink>", io),
        other => Error::Invalid(format!("csv: {other:?}")),
    }
}

/// Long-format rows `(stage_year, metric, key, value)` of one report.
pub fn report_rows(r: &StageReport) -> Vec<(String, String, f64)> {
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    let mut push = |metric: &str, key: &str, value: f64| rows.push((metric.to_string(), key.to_string(), value));
    push("building_count", "", r.building_count as f64);
    push("solved_count", "", r.solved_count as f64);
    for (k, v) in &r.refurb_frequency {
        push("refurb_frequency", k, *v as f64);
    }
    for (k, v) in &r.heating_frequency {
        push("heating_frequency", k, *v as f64);
    }
    for (k, v) in &r.thermal_mw {
        push("thermal_mw", k, *v);
    }
    for (k, v) in &r.electrical_mw {
        push("electrical_mw", k, *v);
    }
    for (k, v) in &r.storage_mwh {
        push("storage_mwh", k, *v);
    }
    push("grid_connection_mw", "", r.grid_connection_mw);
    for (carrier, b) in &r.energy_balance {
        for (name, v) in [
            ("demand", b.demand),
            ("generation", b.generation),
            ("import", b.import),
            ("export", b.export),
            ("storage_net", b.storage_net),
            ("surplus", b.surplus),
        ] {
            push(&format!("energy_{name}_kwh"), carrier, v);
        }
    }
    push("self_consumption", "", r.self_consumption);
    push("pv_generation_kwh", "", r.pv_generation_kwh);
    for (cat, c) in &r.costs {
        for (name, v) in [
            ("capex", c.capex),
            ("capex_subsidy", c.capex_subsidy),
            ("opex", c.opex),
            ("deconstruction", c.deconstruction),
            ("residual_value", c.residual_value),
        ] {
            push(&format!("cost_{name}"), cat.as_str(), v);
        }
        push("cost_total", cat.as_str(), c.total());
    }
    push("cost_total", "all", r.cost_total);
    for (cat, e) in &r.emissions {
        for (name, v) in [("scope1", e.scope1), ("scope2", e.scope2), ("scope3", e.scope3), ("scope3_annualized", e.scope3_annualized)] {
            push(&format!("emissions_{name}_kg"), cat.as_str(), v);
        }
    }
    let t = &r.emissions_total;
    for (name, v) in [("scope1", t.scope1), ("scope2", t.scope2), ("scope3", t.scope3), ("scope3_annualized", t.scope3_annualized)] {
        push(&format!("emissions_{name}_kg"), "all", v);
    }
    push("emissions_total_kg", "all", r.emission_sum);
    for (y, c) in &r.per_year {
        let y = y.to_string();
        push("renovations_voluntary", &y, c.renovation_voluntary as f64);
        push("renovations_mandatory", &y, c.renovation_mandatory as f64);
        push("conversions_voluntary", &y, c.conversion_voluntary as f64);
        push("conversions_mandatory", &y, c.conversion_mandatory as f64);
    }
    for (y, v) in &r.renovation_rate {
        push("renovation_rate", &y.to_string(), *v);
    }
    for (y, v) in &r.conversion_rate {
        push("conversion_rate", &y.to_string(), *v);
    }
    push("annual_budget_renovation", "", r.annual_budgets.renovation as f64);
    push("annual_budget_conversion", "", r.annual_budgets.conversion as f64);
    rows
}

/// Long-format report table for the given stages (all stages when `year` is `None`).
pub fn export_csv<W: Write>(path: &TransformationPath, year: Option<i32>, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(["stage_year", "metric", "key", "value"]).map_err(csv_err)?;
    for stage in path.stages.iter().filter(|s| year.map_or(true, |y| y == s.year)) {
        for (metric, key, value) in report_rows(&stage.report) {
            w.write_record([stage.year.to_string(), metric, key, value.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))
}

/// Scheduled measures, one row each.
pub fn export_measures_csv<W: Write>(path: &TransformationPath, year: Option<i32>, sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(["stage_year", "building_id", "kind", "detail", "size_kw", "category", "class", "score_cost", "score_emission", "implementation_year"])
        .map_err(csv_err)?;
    for stage in path.stages.iter().filter(|s| year.map_or(true, |y| y == s.year)) {
        for m in &stage.measures {
            let (kind, detail, size) = match &m.kind {
                MeasureKind::Refurbishment { added, .. } => ("refurbishment", added.label(), String::new()),
                MeasureKind::PlantInstall { tech_id, size } => ("plant_install", tech_id.clone(), size.to_string()),
                MeasureKind::PlantDismantle { instance_id, .. } => ("plant_dismantle", instance_id.clone(), String::new()),
            };
            let category = match m.category {
                MeasureCategory::Mandatory => "mandatory",
                MeasureCategory::Voluntary => "voluntary",
            };
            let class = match m.class {
                DurationClass::Renovation => "renovation",
                DurationClass::PlantConversion => "plant_conversion",
            };
            w.write_record([
                stage.year.to_string(),
                m.building_id.clone(),
                kind.to_string(),
                detail,
                size,
                category.to_string(),
                class.to_string(),
                m.reduction_score.cost.to_string(),
                m.reduction_score.emission.to_string(),
                m.implementation_year.map(|y| y.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv sink>", e))
}

/// One point feature per solved building of stage `year`.
pub fn export_geojson<W: Write>(path: &TransformationPath, year: i32, sink: W) -> Result<()> {
    let stage = path.stage(year).ok_or_else(|| Error::Invalid(format!("no stage {year} in path")))?;
    let mut features = Vec::new();
    for sol in &stage.solutions {
        let Some(info) = path.buildings.iter().find(|b| b.id == sol.building_id) else { continue };
        let heating = sol.primary_heat_tech.clone().unwrap_or_else(|| "none".into());
        let installed_kw = sol.primary_heat_tech.as_ref().and_then(|t| sol.capacities.get(t)).copied().unwrap_or(0.0);
        features.push(serde_json::json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": [info.location[0], info.location[1]] },
            "properties": {
                "building_id": sol.building_id,
                "heating_tech": heating,
                "installed_kw": installed_kw,
                "variant": sol.chosen_variant.label(),
                "annual_heat_kwh": sol.dispatch.heat_output.values().sum::<f64>(),
            }
        }));
    }
    let doc = serde_json::json!({ "type": "FeatureCollection", "features": features });
    let mut sink = sink;
    serde_json::to_writer_pretty(&mut sink, &doc).map_err(|e| Error::Invalid(format!("geojson: {e}")))?;
    sink.write_all(b"\n").map_err(|e| Error::io("<geojson sink>", e))
}

/// Parse a long-format report CSV into `(stage_year, metric, key) → value`.
pub fn read_report_csv<R: std::io::Read>(source: R) -> Result<BTreeMap<(i32, String, String), f64>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("report csv: {e}")))?;
        let year: i32 = rec[0].parse().map_err(|_| Error::Parse(format!("report csv: year '{}'", &rec[0])))?;
        let value: f64 = rec[3].parse().map_err(|_| Error::Parse(format!("report csv: value '{}'", &rec[3])))?;
        out.insert((year, rec[1].to_string(), rec[2].to_string()), value);
    }
    Ok(out)
}
