//! Checks on a finished path and on single fixture solves.

use std::collections::{BTreeMap, BTreeSet};

use tpath::catalog::{Carrier, Catalog, DurationClass, Siting, TechKind};
use tpath::model::{BuildingModel, ObjectiveMode};
use tpath::pathway::{BuildingStock, MeasureCategory, StageKind, TransformationPath};
use tpath::report::export_geojson;
use tpath::twin::{Building, Vector};

pub type Check = Result<String, String>;

fn fail<T>(msg: impl Into<String>) -> Result<T, String> {
    Err(msg.into())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Per-year voluntary units never exceed `floor(cap · N)`.
pub fn rate_caps(path: &TransformationPath, refurb_cap: f64, conversion_cap: f64) -> Check {
    let n = path.buildings.len() as f64;
    let renovation_budget = (refurb_cap * n + 1e-9).floor() as usize;
    let conversion_budget = (conversion_cap * n + 1e-9).floor() as usize;
    let mut years = 0;
    let mut scheduled = 0;
    for stage in path.stages.iter().filter(|s| s.kind == StageKind::Optimized) {
        let mut units: BTreeMap<(i32, DurationClass), BTreeSet<&str>> = BTreeMap::new();
        for m in stage.measures.iter().filter(|m| m.category == MeasureCategory::Voluntary) {
            let Some(y) = m.implementation_year else {
                return fail(format!("{} voluntary measure of {} has no year", stage.year, m.building_id));
            };
            units.entry((y, m.class)).or_default().insert(&m.building_id);
        }
        for ((y, class), set) in &units {
            let budget = match class {
                DurationClass::Renovation => renovation_budget,
                DurationClass::PlantConversion => conversion_budget,
            };
            if set.len() > budget {
                return fail(format!("{y}: {} {class:?} units > budget {budget}", set.len()));
            }
            scheduled += set.len();
        }
        for (y, c) in &stage.report.per_year {
            let own_r = units.get(&(*y, DurationClass::Renovation)).map_or(0, BTreeSet::len);
            let own_c = units.get(&(*y, DurationClass::PlantConversion)).map_or(0, BTreeSet::len);
            if c.renovation_voluntary as usize != own_r || c.conversion_voluntary as usize != own_c {
                return fail(format!("{y}: report counts differ from measures"));
            }
        }
        years += stage.period.map_or(0, |p| p.years());
    }
    Ok(format!("{years} years, {scheduled} voluntary units, budgets {renovation_budget}/{conversion_budget} per year"))
}

fn aged(stock: &[BuildingStock], catalog: &Catalog, year: i32) -> Vec<BuildingStock> {
    stock
        .iter()
        .map(|s| BuildingStock {
            building_id: s.building_id.clone(),
            refurb_state: s.refurb_state,
            installed: s.installed.iter().filter(|i| i.install_year + catalog.technologies[&i.tech_id].lifetime as i32 > year).cloned().collect(),
        })
        .collect()
}

pub fn chain(path: &TransformationPath, catalog: &Catalog) -> Check {
    for w in path.stages.windows(2) {
        let expected = aged(&w[0].committed_stock, catalog, w[1].year);
        if expected != w[1].initial_stock {
            let bad = expected.iter().zip(&w[1].initial_stock).find(|(a, b)| a != b).map(|(a, _)| a.building_id.clone());
            return fail(format!("stage {} initial stock differs from aged {} outcome at {bad:?}", w[1].year, w[0].year));
        }
    }
    Ok(format!("{} stage transitions", path.stages.len().saturating_sub(1)))
}

pub fn accounting(path: &TransformationPath, catalog: &Catalog) -> Check {
    let mut solutions = 0;
    for stage in &path.stages {
        for sol in &stage.solutions {
            solutions += 1;
            if rel(sol.objective_value, sol.objective_recomputed) > 1e-6 {
                return fail(format!("{} {}: objective {} vs recomputed {}", stage.year, sol.building_id, sol.objective_value, sol.objective_recomputed));
            }
            if sol.objective_mode == ObjectiveMode::Cost && rel(sol.objective_value, sol.costs.total()) > 1e-6 {
                return fail(format!("{} {}: objective {} vs cost breakdown {}", stage.year, sol.building_id, sol.objective_value, sol.costs.total()));
            }
            let by_cat: f64 = sol.costs_by_category.values().map(|c| c.total()).sum();
            if rel(by_cat, sol.costs.total()) > 1e-9 {
                return fail(format!("{} {}: category costs do not add up", stage.year, sol.building_id));
            }
        }
        let r = &stage.report;
        let e = &r.emissions_total;
        if r.emission_sum != e.scope1 + e.scope2 + e.scope3 {
            return fail(format!("{}: emission sum {} != scopes {}", stage.year, r.emission_sum, e.scope1 + e.scope2 + e.scope3));
        }
        let cost_sum: f64 = stage.solutions.iter().map(|s| s.costs.total()).sum();
        if rel(cost_sum, r.cost_total) > 1e-9 {
            return fail(format!("{}: report cost {} vs solutions {cost_sum}", stage.year, r.cost_total));
        }

        // Frequency vs GeoJSON vs installed power.
        let mut buf = Vec::new();
        export_geojson(path, stage.year, &mut buf).map_err(|e| e.to_string())?;
        let doc: serde_json::Value = serde_json::from_slice(&buf).map_err(|e| e.to_string())?;
        let features = doc["features"].as_array().cloned().unwrap_or_default();
        let mut geo_count: BTreeMap<String, usize> = BTreeMap::new();
        let mut geo_kw: BTreeMap<String, f64> = BTreeMap::new();
        for f in &features {
            let t = f["properties"]["heating_tech"].as_str().unwrap_or_default().to_string();
            *geo_kw.entry(t.clone()).or_default() += f["properties"]["installed_kw"].as_f64().unwrap_or(f64::NAN);
            *geo_count.entry(t).or_default() += 1;
        }
        let freq: BTreeMap<String, usize> = r.heating_frequency.iter().filter(|(_, n)| **n > 0).map(|(k, n)| (k.clone(), *n)).collect();
        if geo_count != freq {
            return fail(format!("{}: heating frequency {freq:?} vs GeoJSON {geo_count:?}", stage.year));
        }
        let mut primary_kw: BTreeMap<String, f64> = BTreeMap::new();
        let mut thermal_kw: BTreeMap<String, f64> = BTreeMap::new();
        for sol in &stage.solutions {
            let t = sol.primary_heat_tech.clone().unwrap_or_else(|| "none".into());
            *primary_kw.entry(t.clone()).or_default() += sol.primary_heat_tech.as_ref().and_then(|t| sol.capacities.get(t)).copied().unwrap_or(0.0);
            for (tech, cap) in &sol.capacities {
                let spec = &catalog.technologies[tech];
                if spec.kind.output() != Carrier::Electricity && !spec.kind.is_storage() {
                    *thermal_kw.entry(tech.clone()).or_default() += cap;
                }
            }
        }
        for (t, kw) in &primary_kw {
            if rel(*kw, geo_kw.get(t).copied().unwrap_or(0.0)) > 1e-9 {
                return fail(format!("{} {t}: GeoJSON {} kW vs solutions {kw} kW", stage.year, geo_kw.get(t).copied().unwrap_or(0.0)));
            }
        }
        for (t, kw) in &thermal_kw {
            let mw = r.thermal_mw.get(t).copied().unwrap_or(0.0);
            if rel(mw * 1000.0, *kw) > 1e-9 {
                return fail(format!("{} {t}: report {mw} MW vs installed {kw} kW", stage.year));
            }
        }
    }
    Ok(format!("{solutions} solutions across {} stages", path.stages.len()))
}

/// Solution-level constraint checks on one solved model.
pub fn constraints(m: &BuildingModel, b: &Building, catalog: &Catalog, x: &[f64], max_parallel: u32) -> Result<(), String> {
    let id = &b.id;
    // Exactly one variant.
    let vsum: f64 = m.variant_cols.iter().map(|&c| x[c]).sum();
    let ones = m.variant_cols.iter().filter(|&&c| x[c] > 0.5).count();
    if (vsum - 1.0).abs() > 1e-9 || ones != 1 || m.variant_cols.iter().any(|&c| (x[c] - x[c].round()).abs() > 1e-6) {
        return fail(format!("{id}: variant binaries sum {vsum}, {ones} set"));
    }
    let chosen = m.variant_cols.iter().position(|&c| x[c] > 0.5).unwrap();
    // Keep or dismantle.
    for ex in &m.existing {
        let (k, d) = (x[ex.keep], x[ex.dismantle]);
        if (k + d - 1.0).abs() > 1e-9 || (k - k.round()).abs() > 1e-6 {
            return fail(format!("{id}: keep {k} dismantle {d} for {}", ex.instance.id));
        }
    }
    // Roof area.
    let mut roof = 0.0;
    for i in &m.installs {
        let s = &catalog.technologies[&i.tech_id];
        if s.siting == Siting::RoofArea {
            roof += s.area_per_kw * x[i.size];
        }
    }
    for ex in &m.existing {
        let s = &catalog.technologies[&ex.instance.tech_id];
        if s.siting == Siting::RoofArea {
            roof += s.area_per_kw * ex.instance.size * x[ex.keep].round();
        }
    }
    if roof > b.roof_area * (1.0 + 1e-9) + 1e-9 {
        return fail(format!("{id}: roof use {roof} > {}", b.roof_area));
    }
    // Parallel retrofits.
    let installs = m.installs.iter().filter(|i| x[i.bin] > 0.5).count() as u32;
    let state = b.refurb_state.variant().0;
    let added = (chosen as u8 & !state).count_ones();
    if installs + added > max_parallel {
        return fail(format!("{id}: {installs} installs + {added} components > {max_parallel}"));
    }
    // Balances.
    let n = m.weights.len();
    let h = m.hours_per_step;
    let demand = &m.demand_by_variant[chosen];
    for s in 0..n {
        let mut el = x[m.import[s]] - x[m.export[s]];
        let mut heat = 0.0;
        let mut cool = 0.0;
        for t in &m.techs {
            if let Some(st) = &t.storage {
                let net = x[st.discharge[s]] - x[st.charge[s]];
                if t.kind == TechKind::Battery {
                    el += net;
                } else {
                    heat += net;
                }
                continue;
            }
            if t.output.is_empty() {
                continue;
            }
            let out = x[t.output[s]];
            match t.kind.output() {
                Carrier::Heat => heat += out,
                Carrier::Cooling => cool += out,
                _ => el += out,
            }
            el += t.power_to_heat * out;
            if t.input_carrier == Some(Carrier::Electricity) {
                el -= t.input_per_output[s] * out;
            }
        }
        let d_el = demand[&Vector::Electricity][s];
        if (el - d_el).abs() > 1e-6 * d_el.abs().max(1.0) {
            return fail(format!("{id} step {s}: electricity balance {el} vs demand {d_el}"));
        }
        let d_heat = demand[&Vector::SpaceHeat][s] + demand[&Vector::HotWater][s];
        if heat < d_heat - 1e-6 * d_heat.max(1.0) {
            return fail(format!("{id} step {s}: heat {heat} below demand {d_heat}"));
        }
        let d_cool = demand[&Vector::Cooling][s];
        if cool < d_cool - 1e-6 * d_cool.max(1.0) {
            return fail(format!("{id} step {s}: cooling {cool} below demand {d_cool}"));
        }
    }
    // Storage.
    for t in &m.techs {
        let Some(st) = &t.storage else { continue };
        let sp = catalog.technologies[&t.tech_id].storage.as_ref().unwrap();
        let cap = t.capacity.eval(x);
        let retain = (1.0 - sp.standing_loss).powf(h);
        for s in 0..n {
            let soc = x[st.soc[s]];
            if soc < -1e-9 || soc > cap + 1e-6 {
                return fail(format!("{id} {}: soc {soc} outside [0, {cap}]", t.tech_id));
            }
            let next = (s + 1) % n;
            let expect = retain * soc + sp.charge_efficiency * x[st.charge[s]] - x[st.discharge[s]] / sp.charge_efficiency;
            if (x[st.soc[next]] - expect).abs() > 1e-6 {
                return fail(format!("{id} {} step {s}: soc transition off by {}", t.tech_id, x[st.soc[next]] - expect));
            }
        }
    }
    Ok(())
}
