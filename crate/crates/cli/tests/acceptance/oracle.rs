//! Exhaustive enumeration of a toy building's discrete choices with an LP
//! dispatch per choice, written from the catalog data alone.

use std::collections::BTreeMap;

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpath::catalog::{Carrier, Catalog, Siting, TechKind, TechnologySpec};
use tpath::fixture::{day_building, day_meta};
use tpath::model::{build_model, ModelConfig, ObjectiveMode, StageContext};
use tpath::scenario::ScenarioFrame;
use tpath::timegrid::Resolution;
use tpath::twin::{Building, Component, DemandProfile, RefurbState, TechnologyInstance, Variant, Vector};

pub const YEAR: i32 = 2030;
const RATE: f64 = 0.03;
const OVERSIZE: f64 = 1.5;
const POOL: [&str; 6] = ["gas_boiler", "air_source_hp", "direct_electric_heating", "photovoltaics", "li_ion_battery", "buffer_tank"];
const SIZES: [f64; 8] = [2.0, 4.0, 6.0, 10.0, 15.0, 20.0, 30.0, 40.0];

pub struct Toy {
    pub building: Building,
    pub candidates: Vec<String>,
    pub points: Vec<f64>,
    pub mode: ObjectiveMode,
}

pub fn toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = rng.gen_range(3.0..10.0);
    let space_heat: Vec<f64> = (0..24)
        .map(|h| {
            let shape = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * (h as f64 - 5.0) / 24.0).cos();
            ((amp * shape + rng.gen_range(0.0..2.0)) * 100.0).round() / 100.0
        })
        .collect();
    let electricity: Vec<f64> = (0..24).map(|_| (rng.gen_range(0.3..3.0f64) * 100.0).round() / 100.0).collect();
    let mut b = day_building("toy", &space_heat, &electricity);
    if rng.gen_bool(0.5) {
        let hw: Vec<f64> = (0..24).map(|_| (rng.gen_range(0.0..2.0f64) * 100.0).round() / 100.0).collect();
        b.demand.insert(Vector::HotWater, DemandProfile { values: hw, resolution: 60 });
    }
    b.roof_area = rng.gen_range(20..120) as f64;
    let missing = Component::ALL[rng.gen_range(0..4)];
    b.refurb_state = RefurbState::from_variant(Variant(15 & !missing.bit()));
    let has_boiler = rng.gen_bool(0.6);
    if has_boiler {
        let size = rng.gen_range(8..30) as f64;
        let year = rng.gen_range(2012..2029);
        b.installed.push(TechnologyInstance { id: format!("gas_boiler-{year}"), tech_id: "gas_boiler".into(), size, install_year: year });
    }
    let mut pool = POOL.to_vec();
    pool.shuffle(&mut rng);
    let k = rng.gen_range(1..=3);
    let mut candidates: Vec<String> = pool[..k].iter().map(|s| s.to_string()).collect();
    let firm = ["gas_boiler", "air_source_hp"];
    if !has_boiler && !candidates.iter().any(|c| firm.contains(&c.as_str())) {
        candidates[0] = firm[rng.gen_range(0..2)].to_string();
    }
    let mut sizes = SIZES.to_vec();
    sizes.shuffle(&mut rng);
    let mut points = sizes[..3].to_vec();
    points.sort_by(f64::total_cmp);
    let mode = if seed % 2 == 0 { ObjectiveMode::Cost } else { ObjectiveMode::Weighted };
    Toy { building: b, candidates, points, mode }
}

pub fn context(frame: &ScenarioFrame) -> StageContext {
    StageContext::new(&day_meta(2023), (24, 60), frame, YEAR, Resolution::FullYear).expect("toy context")
}

/// Optimum of the model under test, `None` when it reports infeasibility.
pub fn model_optimum(toy: &Toy, catalog: &Catalog, ctx: &StageContext) -> Result<Option<f64>, String> {
    let mut cfg = ModelConfig {
        objective_mode: toy.mode,
        interest_rate: RATE,
        peak_oversize: OVERSIZE,
        candidates: Some(toy.candidates.clone()),
        size_grid: Some(toy.points.clone()),
        ..ModelConfig::default()
    };
    cfg.solve.mip_gap = 1e-10;
    let model = match build_model(&toy.building, catalog, ctx, &cfg) {
        Ok(m) => m,
        Err(tpath::Error::Infeasible { .. }) => return Ok(None),
        Err(e) => return Err(e.to_string()),
    };
    match model.solve() {
        Ok(sol) => Ok(Some(sol.objective_value)),
        Err(tpath::Error::Infeasible { .. }) => Ok(None),
        Err(e) => Err(e.to_string()),
    }
}

fn annuity(years: u32) -> f64 {
    let q = (1.0 + RATE).powi(years as i32);
    RATE * q / (q - 1.0)
}

fn factor(catalog: &Catalog, v: Variant, vector: Vector) -> f64 {
    let mut f = 1.0;
    for c in Component::ALL {
        if v.0 & c.bit() != 0 {
            let s = &catalog.refurbishment.components[&c];
            f *= match vector {
                Vector::SpaceHeat => s.space_heat_factor,
                Vector::HotWater => s.hot_water_factor,
                Vector::Cooling => s.cooling_factor,
                Vector::Electricity => 1.0,
            };
        }
    }
    f
}

fn values(b: &Building, v: Vector) -> Vec<f64> {
    b.demand.get(&v).map_or(vec![0.0; 24], |p| p.values.clone())
}

fn perf(spec: &TechnologySpec, season: usize) -> f64 {
    spec.cop.map_or(spec.efficiency, |t| t[season])
}

/// A plant available to the dispatch: new or kept.
struct Unit<'a> {
    spec: &'a TechnologySpec,
    capacity: f64,
}

struct Lp {
    p: Problem,
}

impl Lp {
    fn row(&mut self, terms: &[(Variable, f64)], op: ComparisonOp, rhs: f64) {
        let mut merged: BTreeMap<usize, (Variable, f64)> = BTreeMap::new();
        for &(v, c) in terms {
            merged.entry(v.idx()).or_insert((v, 0.0)).1 += c;
        }
        let t: Vec<(Variable, f64)> = merged.into_values().filter(|(_, c)| *c != 0.0).collect();
        self.p.add_constraint(t.as_slice(), op, rhs);
    }
}

/// Minimum annual cost over all choices, `None` if nothing is feasible.
pub fn enumerate(toy: &Toy, catalog: &Catalog, ctx: &StageContext) -> Option<f64> {
    let b = &toy.building;
    let state = b.refurb_state.variant();
    let variants: Vec<Variant> = (0..16u8).map(Variant).filter(|v| v.0 & state.0 == state.0).collect();
    let sh = values(b, Vector::SpaceHeat);
    let hw = values(b, Vector::HotWater);
    let el = values(b, Vector::Electricity);
    let peak = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(*v));
    let (peak_sh, peak_hw) = (peak(&sh), peak(&hw));
    let has_heat = peak_sh + peak_hw > 0.0;
    let heat_peak = |v: Variant| {
        factor(catalog, v, Vector::SpaceHeat) / factor(catalog, state, Vector::SpaceHeat) * peak_sh
            + factor(catalog, v, Vector::HotWater) / factor(catalog, state, Vector::HotWater) * peak_hw
    };
    let weighted = toy.mode == ObjectiveMode::Weighted;
    let co2 = if weighted { ctx.co2_price } else { 0.0 };
    let max_parallel = ctx.max_parallel_retrofits;

    let specs: Vec<&TechnologySpec> = toy.candidates.iter().map(|c| catalog.tech(c).unwrap()).collect();
    let options: Vec<Vec<Option<f64>>> = specs
        .iter()
        .map(|s| {
            let mut upper = s.max_size;
            if s.siting == Siting::RoofArea {
                upper = upper.min(b.roof_area / s.area_per_kw);
            }
            if s.kind.is_firm_heat() {
                upper = upper.min((OVERSIZE * heat_peak(state)).max(s.min_size));
            }
            let mut o = vec![None];
            o.extend(toy.points.iter().filter(|&&g| g >= s.min_size && g <= upper).map(|&g| Some(g)));
            o
        })
        .collect();
    let generation = toy.candidates.iter().chain(b.installed.iter().map(|i| &i.tech_id)).any(|id| {
        matches!(catalog.tech(id).unwrap().kind, TechKind::Photovoltaic | TechKind::Chp)
    });

    let mut best: Option<f64> = None;
    let n_opts: Vec<usize> = options.iter().map(Vec::len).collect();
    let combos: usize = n_opts.iter().product();
    let n_exist = b.installed.len();
    for &v in &variants {
        let added = (v.0 & !state.0).count_ones();
        let refurb_invest: f64 = Component::ALL
            .iter()
            .filter(|c| v.0 & !state.0 & c.bit() != 0)
            .map(|c| {
                let s = &catalog.refurbishment.components[c];
                s.cost_per_m2 * s.area_ratio * b.roof_area
            })
            .sum();
        let refurb_embodied: f64 = Component::ALL
            .iter()
            .filter(|c| v.0 & !state.0 & c.bit() != 0)
            .map(|c| {
                let s = &catalog.refurbishment.components[c];
                s.embodied_per_m2 * s.area_ratio * b.roof_area
            })
            .sum();
        let lifetime = catalog.refurbishment.lifetime;
        let base_fixed = annuity(lifetime) * refurb_invest + co2 * refurb_embodied / lifetime as f64;
        for combo in 0..combos {
            let mut rest = combo;
            let chosen: Vec<Option<f64>> = options
                .iter()
                .map(|o| {
                    let pick = o[rest % o.len()];
                    rest /= o.len();
                    pick
                })
                .collect();
            let installs = chosen.iter().filter(|c| c.is_some()).count() as u32;
            if installs + added > max_parallel {
                continue;
            }
            for keep_mask in 0u32..(1 << n_exist) {
                let mut fixed = base_fixed;
                let mut units: Vec<Unit> = Vec::new();
                let mut grid_cap = 0.0;
                let mut connected = false;
                let mut roof_used = 0.0;
                for (s, size) in specs.iter().zip(&chosen) {
                    if let Some(g) = *size {
                        fixed += annuity(s.lifetime) * (s.capex_per_kw * g + s.capex_fixed) * (1.0 - s.subsidy_rate) + s.opex_fixed_per_kw * g;
                        fixed += co2 * s.embodied_per_kw * g / s.lifetime as f64;
                        if s.siting == Siting::RoofArea {
                            roof_used += s.area_per_kw * g;
                        }
                        units.push(Unit { spec: s, capacity: g });
                    }
                }
                for (k, inst) in b.installed.iter().enumerate() {
                    let s = catalog.tech(&inst.tech_id).unwrap();
                    let a = annuity(s.lifetime);
                    if keep_mask & (1 << k) != 0 {
                        let remaining = (inst.install_year + s.lifetime as i32 - YEAR).max(0) as f64;
                        let residual = (s.capex_fixed + s.capex_per_kw * inst.size) * (remaining / s.lifetime as f64).min(1.0);
                        fixed += s.opex_fixed_per_kw * inst.size - a * residual;
                        if s.siting == Siting::RoofArea {
                            roof_used += s.area_per_kw * inst.size;
                        }
                        if s.kind == TechKind::GridConnection {
                            grid_cap += inst.size;
                            connected = true;
                        } else {
                            units.push(Unit { spec: s, capacity: inst.size });
                        }
                    } else {
                        fixed += a * (s.deconstruction_fixed + s.deconstruction_per_kw * inst.size);
                        fixed += co2 * s.recycling_per_kw * inst.size / s.lifetime as f64;
                    }
                }
                if roof_used > b.roof_area + 1e-9 {
                    continue;
                }
                let firm: f64 = units.iter().filter(|u| u.spec.kind.is_firm_heat()).map(|u| u.capacity).sum();
                if has_heat && firm < heat_peak(v) - 1e-9 {
                    continue;
                }
                let heat_f = (factor(catalog, v, Vector::SpaceHeat) / factor(catalog, state, Vector::SpaceHeat), factor(catalog, v, Vector::HotWater) / factor(catalog, state, Vector::HotWater));
                let heat_demand: Vec<f64> = (0..24).map(|s| heat_f.0 * sh[s] + heat_f.1 * hw[s]).collect();
                if let Some(op) = dispatch(&units, &heat_demand, &el, connected, grid_cap, generation, co2, ctx) {
                    let total = fixed + op;
                    if best.map_or(true, |b| total < b) {
                        best = Some(total);
                    }
                }
            }
        }
    }
    best
}

/// Annual operating cost of the cheapest dispatch, `None` if infeasible.
#[allow(clippy::too_many_arguments)]
fn dispatch(units: &[Unit], heat_demand: &[f64], el: &[f64], connected: bool, grid_cap: f64, generation: bool, co2: f64, ctx: &StageContext) -> Option<f64> {
    let n = 24;
    let h = 1.0;
    let w = 365.0;
    let mut lp = Lp { p: Problem::new(OptimizationDirection::Minimize) };
    let mut elec: Vec<Vec<(Variable, f64)>> = vec![Vec::new(); n];
    let mut heat: Vec<Vec<(Variable, f64)>> = vec![Vec::new(); n];
    let p_el = ctx.price[&Carrier::Electricity];
    let ef = |c: Carrier| ctx.emission_factor.get(&c).copied().unwrap_or(0.0);
    // Merge units of the same technology: capacity adds up.
    let mut merged: BTreeMap<&str, (&TechnologySpec, f64)> = BTreeMap::new();
    for u in units {
        merged.entry(u.spec.tech_id.as_str()).or_insert((u.spec, 0.0)).1 += u.capacity;
    }
    for (spec, cap) in merged.into_values() {
        if spec.kind.is_storage() {
            let sp = spec.storage.as_ref().unwrap();
            let retain = (1.0 - sp.standing_loss).powf(h);
            let soc: Vec<Variable> = (0..n).map(|_| lp.p.add_var(0.0, (0.0, cap))).collect();
            let ch: Vec<Variable> = (0..n).map(|_| lp.p.add_var(0.0, (0.0, f64::INFINITY))).collect();
            let dis: Vec<Variable> = (0..n).map(|_| lp.p.add_var(0.0, (0.0, f64::INFINITY))).collect();
            for s in 0..n {
                let next = (s + 1) % n;
                lp.row(&[(soc[next], 1.0), (soc[s], -retain), (ch[s], -sp.charge_efficiency), (dis[s], 1.0 / sp.charge_efficiency)], ComparisonOp::Eq, 0.0);
                lp.row(&[(ch[s], 1.0), (dis[s], 1.0)], ComparisonOp::Le, sp.c_rate * h * cap);
                let target = if spec.kind == TechKind::Battery { &mut elec[s] } else { &mut heat[s] };
                target.push((dis[s], 1.0));
                target.push((ch[s], -1.0));
            }
            continue;
        }
        let avail: Vec<f64> = match &spec.availability {
            Some(name) => ctx.availability[name].clone(),
            None => vec![1.0; n],
        };
        for s in 0..n {
            let input = 1.0 / perf(spec, ctx.grid.season[s]);
            let mut cost = 0.0;
            match spec.carrier_in {
                Some(Carrier::Electricity) => {}
                Some(c) => cost = w * input * (ctx.price[&c] + co2 * ef(c)),
                None => {}
            }
            let out = lp.p.add_var(cost, (0.0, cap * h * avail[s]));
            match spec.kind {
                TechKind::Photovoltaic => elec[s].push((out, 1.0)),
                TechKind::Chp => {
                    heat[s].push((out, 1.0));
                    elec[s].push((out, spec.power_to_heat.unwrap()));
                }
                _ => heat[s].push((out, 1.0)),
            }
            if spec.carrier_in == Some(Carrier::Electricity) {
                elec[s].push((out, -input));
            }
        }
    }
    let imp_hi = if connected { h * grid_cap } else { 0.0 };
    let exp_hi = if connected && generation { h * grid_cap } else { 0.0 };
    for s in 0..n {
        let imp = lp.p.add_var(w * (p_el + co2 * ef(Carrier::Electricity)), (0.0, imp_hi));
        let exp = lp.p.add_var(-w * ctx.feed_in, (0.0, exp_hi));
        elec[s].push((imp, 1.0));
        elec[s].push((exp, -1.0));
        lp.row(&elec[s], ComparisonOp::Eq, el[s]);
        if heat_demand[s] > 0.0 || !heat[s].is_empty() {
            lp.row(&heat[s], ComparisonOp::Ge, heat_demand[s]);
        }
    }
    match lp.p.solve() {
        Ok(sol) => Some(sol.objective()),
        Err(minilp::Error::Infeasible) => None,
        Err(minilp::Error::Unbounded) => panic!("toy dispatch unbounded"),
    }
}
