//! One building's expansion-and-operation MILP for one stage.
//!
//! Decisions: a size and install binary per candidate technology, keep or
//! dismantle per existing plant, and one of the 16 refurbishment variants.
//! Operation: one output variable per technology and step, storage state of
//! charge, and grid import/export. Costs are annual: investments enter as
//! annuities, kept plant earns its annualized residual value as a credit and
//! dismantled plant pays its annualized deconstruction, so keeping versus
//! dismantling differs by the opportunity cost of dismantling.
//!
//! Dispatch rows per step `s` with step length `h` and day weight `w_s`:
//! - electricity: generation + import + battery discharge = base demand +
//!   heat pump, electric heater and chiller input + battery charge + export
//! - heat: Σ heat output + tank discharge − tank charge ≥ Σ_v y_v · demand_v
//!   (surplus heat is dissipated)
//! - cooling: Σ chiller output ≥ Σ_v y_v · cooling_v
//! - output ≤ h · availability_s · capacity per technology
//! - storage: soc_{s+1} = (1 − loss)^h soc_s + η · charge − discharge / η,
//!   cyclic over the horizon, soc ≤ capacity, charge + discharge ≤ c·h·capacity
//! - grid import and export ≤ h · grid connection capacity; a building
//!   without a connection exchanges nothing when the catalog offers one
//!
//! Demand depending on the refurbishment variant is written as a convex
//! combination `Σ_v y_v · demand_v` with `Σ_v y_v = 1`, which is exact for
//! binary `y` and needs no big-M.

use std::collections::{BTreeMap, BTreeSet};

use milp::{SolveOutcome, SolveParams, SolveRequest, SolveStatus};
use serde::{Deserialize, Serialize};

use crate::catalog::{annuity_factor, residual_value, Carrier, Catalog, CostBreakdown, Sector, Siting, TechKind, TechnologySpec};
use crate::error::{Error, Result};
use crate::scenario::ScenarioFrame;
use crate::timegrid::{Resolution, TimeGrid};
use crate::twin::{admissible_refurb_variants, Building, TechnologyInstance, TwinMeta, Variant, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    #[default]
    Cost,
    /// Emissions first; cost breaks ties with weight 1e-6 €⁻¹.
    Emission,
    /// Cost plus CO₂ price times emissions.
    Weighted,
}

/// Weight of cost in emission mode.
pub const EMISSION_MODE_COST_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Heat,
    Electricity,
    Refurbishment,
}

impl Category {
    pub fn of(spec: &TechnologySpec) -> Category {
        match (spec.sector, spec.kind) {
            (Sector::Heat | Sector::Cooling, _) => Category::Heat,
            (Sector::Storage, TechKind::ThermalStorage) => Category::Heat,
            _ => Category::Electricity,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Heat => "heat",
            Category::Electricity => "electricity",
            Category::Refurbishment => "refurbishment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum CostPart {
    Capex,
    Subsidy,
    Opex,
    Deconstruction,
    Residual,
}

/// Which investment decisions a solve may take.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstallPolicy {
    #[default]
    Free,
    Forbidden,
    Only(BTreeSet<String>),
}

/// Decision restrictions expressed as variable bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionFreeze {
    /// Fix the refurbishment variant.
    pub variant: Option<Variant>,
    pub installs: InstallPolicy,
    /// Keep every existing instance.
    pub keep_all: bool,
    /// Fix install sizes per technology (0 = not installed).
    pub fixed_sizes: Option<BTreeMap<String, f64>>,
    /// Fix keep (true) or dismantle (false) per instance id.
    pub fixed_keep: Option<BTreeMap<String, bool>>,
}

impl DecisionFreeze {
    /// Status quo operation only: variant as is, no installs, keep everything.
    pub fn dispatch_only(state: Variant) -> Self {
        DecisionFreeze { variant: Some(state), installs: InstallPolicy::Forbidden, keep_all: true, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub objective_mode: ObjectiveMode,
    /// Interest rate for annuities.
    pub interest_rate: f64,
    /// New heat or cooling converters are capped at this multiple of the design peak.
    pub peak_oversize: f64,
    /// Candidate technologies; `None` means every applicable catalog entry.
    pub candidates: Option<Vec<String>>,
    /// Restrict new sizes to these values (kW).
    pub size_grid: Option<Vec<f64>>,
    pub freeze: DecisionFreeze,
    pub solve: SolveParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            objective_mode: ObjectiveMode::Cost,
            interest_rate: 0.03,
            peak_oversize: 1.5,
            candidates: None,
            size_grid: None,
            freeze: DecisionFreeze::default(),
            solve: SolveParams::default(),
        }
    }
}

/// Stage-wide inputs shared by all buildings.
#[derive(Debug, Clone)]
pub struct StageContext {
    pub year: i32,
    pub grid: TimeGrid,
    /// Availability fractions on the model grid.
    pub availability: BTreeMap<String, Vec<f64>>,
    /// €/kWh.
    pub price: BTreeMap<Carrier, f64>,
    /// kg/kWh.
    pub emission_factor: BTreeMap<Carrier, f64>,
    /// €/kg.
    pub co2_price: f64,
    /// €/kWh.
    pub feed_in: f64,
    pub max_parallel_retrofits: u32,
}

impl StageContext {
    pub fn new(meta: &TwinMeta, native: (usize, u32), frame: &ScenarioFrame, year: i32, resolution: Resolution) -> Result<StageContext> {
        let grid = TimeGrid::new(native.0, native.1, resolution)?;
        let availability = meta.availability.iter().map(|(k, p)| (k.clone(), grid.aggregate_fraction(&p.values))).collect();
        let mut price = BTreeMap::new();
        for c in frame.prices.keys() {
            price.insert(*c, frame.price_at(*c, year)? / 100.0);
        }
        let mut emission_factor = BTreeMap::new();
        for c in frame.grid_emission_factor.keys() {
            emission_factor.insert(*c, frame.emission_factor_at(*c, year)? / 1000.0);
        }
        Ok(StageContext {
            year,
            grid,
            availability,
            price,
            emission_factor,
            co2_price: frame.co2_price_at(year)? / 1000.0,
            feed_in: frame.feed_in_at(year)? / 100.0,
            max_parallel_retrofits: frame.max_parallel_retrofits,
        })
    }

    fn price(&self, c: Carrier) -> Result<f64> {
        self.price.get(&c).copied().ok_or_else(|| Error::UnknownCarrier(c.as_str().into()))
    }

    fn ef(&self, c: Carrier) -> f64 {
        self.emission_factor.get(&c).copied().unwrap_or(0.0)
    }
}

/// Sparse linear expression over model columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr(pub Vec<(usize, f64)>);

impl LinExpr {
    fn push(&mut self, col: usize, coef: f64) {
        if coef != 0.0 {
            self.0.push((col, coef));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|&(j, c)| c * x[j]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct InstallVars {
    pub tech_id: String,
    pub size: usize,
    pub bin: usize,
    pub upper: f64,
    /// Grid-point binaries with their sizes when a size grid is configured.
    pub grid_points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ExistingVars {
    pub instance: TechnologyInstance,
    pub keep: usize,
    pub dismantle: usize,
    pub keep_row: usize,
}

#[derive(Debug, Clone)]
pub struct StorageVars {
    pub soc: Vec<usize>,
    pub charge: Vec<usize>,
    pub discharge: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TechVars {
    pub tech_id: String,
    pub kind: TechKind,
    /// Available capacity: new size plus kept instance sizes.
    pub capacity: LinExpr,
    /// Main output per step (empty for storage and grid connection).
    pub output: Vec<usize>,
    /// Input energy per unit output per step.
    pub input_per_output: Vec<f64>,
    pub storage: Option<StorageVars>,
    pub input_carrier: Option<Carrier>,
    /// Electricity per unit heat for CHP units.
    pub power_to_heat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Scope1,
    Scope2,
    Scope3,
}

#[derive(Debug, Clone)]
pub struct BuildingModel {
    pub building_id: String,
    pub year: i32,
    pub objective_mode: ObjectiveMode,
    pub co2_price: f64,
    pub request: SolveRequest,
    pub state_variant: Variant,
    pub variant_cols: Vec<usize>,
    pub installs: Vec<InstallVars>,
    pub existing: Vec<ExistingVars>,
    pub techs: Vec<TechVars>,
    pub import: Vec<usize>,
    pub export: Vec<usize>,
    pub weights: Vec<f64>,
    pub hours_per_step: f64,
    /// Per-step base demand by variant and vector (kWh).
    pub demand_by_variant: Vec<BTreeMap<Vector, Vec<f64>>>,
    pub roof_row: Option<usize>,
    pub open_space_row: Option<usize>,
    pub parallel_row: usize,
    pub variant_row: usize,
    pub balance_rows: BTreeMap<Carrier, Vec<usize>>,
    costs: BTreeMap<(Category, CostPart), LinExpr>,
    /// One-off scope-3 amounts are in `Scope3`; scope 1 and 2 are annual.
    emissions: BTreeMap<(Category, Scope), LinExpr>,
    scope3_annualized: BTreeMap<Category, LinExpr>,
}

struct Builder {
    req: SolveRequest,
    costs: BTreeMap<(Category, CostPart), LinExpr>,
    emissions: BTreeMap<(Category, Scope), LinExpr>,
    scope3_annualized: BTreeMap<Category, LinExpr>,
}

impl Builder {
    fn col(&mut self, name: String, lo: f64, hi: f64, integer: bool) -> usize {
        self.req.add_col(name, lo, hi, 0.0, integer)
    }

    fn row(&mut self, name: String, terms: &[(usize, f64)], lo: f64, hi: f64) -> usize {
        self.req.add_row(name, terms, lo, hi)
    }

    fn cost(&mut self, cat: Category, part: CostPart, col: usize, coef: f64) {
        self.costs.entry((cat, part)).or_default().push(col, coef);
    }

    fn emit(&mut self, cat: Category, scope: Scope, col: usize, coef: f64) {
        self.emissions.entry((cat, scope)).or_default().push(col, coef);
    }

    fn emit_embodied(&mut self, cat: Category, col: usize, kg: f64, lifetime: u32) {
        self.emit(cat, Scope::Scope3, col, kg);
        self.scope3_annualized.entry(cat).or_default().push(col, kg / lifetime as f64);
    }
}

/// Per-step series of one building on the model grid plus full-resolution design peaks.
#[derive(Debug, Clone)]
pub struct BuildingSeries {
    pub demand: BTreeMap<Vector, Vec<f64>>,
    /// kW, from the native profiles.
    pub design_peak: BTreeMap<Vector, f64>,
}

impl BuildingSeries {
    pub fn new(b: &Building, grid: &TimeGrid) -> BuildingSeries {
        let mut demand = BTreeMap::new();
        let mut design_peak = BTreeMap::new();
        for v in Vector::ALL {
            match b.demand.get(&v) {
                Some(p) => {
                    demand.insert(v, grid.aggregate_energy(&p.values));
                    design_peak.insert(v, p.peak_kw());
                }
                None => {
                    demand.insert(v, vec![0.0; grid.steps]);
                    design_peak.insert(v, 0.0);
                }
            }
        }
        BuildingSeries { demand, design_peak }
    }
}

fn applicable(spec: &TechnologySpec, b: &Building, series: &BuildingSeries) -> bool {
    if spec.requires_heat_network && !b.heat_network_access {
        return false;
    }
    match spec.siting {
        Siting::RoofArea if b.roof_area <= 0.0 => return false,
        Siting::OpenSpace if b.open_space_area <= 0.0 => return false,
        _ => {}
    }
    if spec.kind == TechKind::Chiller && series.design_peak[&Vector::Cooling] <= 0.0 {
        return false;
    }
    true
}

/// Build the stage model of building `b`.
pub fn build_model(b: &Building, catalog: &Catalog, ctx: &StageContext, config: &ModelConfig) -> Result<BuildingModel> {
    let series = BuildingSeries::new(b, &ctx.grid);
    build_model_with_series(b, &series, catalog, ctx, config)
}

pub fn build_model_with_series(b: &Building, series: &BuildingSeries, catalog: &Catalog, ctx: &StageContext, config: &ModelConfig) -> Result<BuildingModel> {
    let grid = &ctx.grid;
    let n = grid.steps;
    let h = grid.hours_per_step;
    let state = b.refurb_state.variant();
    let admissible = admissible_refurb_variants(b);
    let freeze = &config.freeze;
    if let Some(v) = freeze.variant {
        if !admissible.contains(&v) {
            return Err(Error::InadmissibleVariant { building: b.id.clone(), variant: v.0 });
        }
    }

    let mut bl = Builder {
        req: SolveRequest::new(0),
        costs: BTreeMap::new(),
        emissions: BTreeMap::new(),
        scope3_annualized: BTreeMap::new(),
    };
    bl.req.params = config.solve.clone();

    // Refurbishment variants.
    let refurb_annuity = annuity_factor(config.interest_rate, catalog.refurbishment.lifetime);
    let mut variant_cols = Vec::with_capacity(Variant::COUNT);
    for v in Variant::all() {
        let allowed = admissible.contains(&v) && freeze.variant.map_or(true, |f| f == v);
        let fixed = freeze.variant == Some(v);
        let col = bl.col(format!("variant[{}]", v.0), if fixed { 1.0 } else { 0.0 }, if allowed { 1.0 } else { 0.0 }, true);
        if admissible.contains(&v) {
            let invest = catalog.refurb_investment(b, v);
            bl.cost(Category::Refurbishment, CostPart::Capex, col, refurb_annuity * invest);
            bl.emit_embodied(Category::Refurbishment, col, catalog.refurb_embodied(b, v), catalog.refurbishment.lifetime);
        }
        variant_cols.push(col);
    }
    let terms: Vec<(usize, f64)> = variant_cols.iter().map(|&c| (c, 1.0)).collect();
    let variant_row = bl.row("variant_choice".into(), &terms, 1.0, 1.0);

    let demand_by_variant: Vec<BTreeMap<Vector, Vec<f64>>> = Variant::all()
        .map(|v| {
            Vector::ALL
                .into_iter()
                .map(|vec| {
                    let f = if vec.is_thermal() && v.includes(state) { catalog.relative_factor(state, v, vec) } else { 1.0 };
                    (vec, series.demand[&vec].iter().map(|x| x * f).collect())
                })
                .collect()
        })
        .collect();
    let heat_peak = |v: Variant| -> f64 {
        let f = |vec| if v.includes(state) { catalog.relative_factor(state, v, vec) } else { 1.0 };
        f(Vector::SpaceHeat) * series.design_peak[&Vector::SpaceHeat] + f(Vector::HotWater) * series.design_peak[&Vector::HotWater]
    };
    let cooling_peak = |v: Variant| -> f64 {
        let f = if v.includes(state) { catalog.relative_factor(state, v, Vector::Cooling) } else { 1.0 };
        f * series.design_peak[&Vector::Cooling]
    };

    // Technology set: candidates plus anything already installed.
    let mut candidate_ids: BTreeSet<String> = match &config.candidates {
        Some(list) => {
            for id in list {
                catalog.tech(id)?;
            }
            list.iter().cloned().collect()
        }
        None => catalog.technologies.values().filter(|s| applicable(s, b, series)).map(|s| s.tech_id.clone()).collect(),
    };
    match &freeze.installs {
        InstallPolicy::Free => {}
        InstallPolicy::Forbidden => candidate_ids.clear(),
        InstallPolicy::Only(set) => candidate_ids.retain(|t| set.contains(t)),
    }
    if let Some(fixed) = &freeze.fixed_sizes {
        candidate_ids.retain(|t| fixed.contains_key(t));
    }
    let mut tech_ids: BTreeSet<String> = candidate_ids.clone();
    for inst in &b.installed {
        catalog.tech(&inst.tech_id)?;
        tech_ids.insert(inst.tech_id.clone());
    }

    let max_heat_peak = heat_peak(state);
    let max_cooling_peak = cooling_peak(state);
    let year = ctx.year;

    // Existing plant: keep or dismantle.
    let mut existing = Vec::new();
    for inst in &b.installed {
        let spec = catalog.tech(&inst.tech_id)?;
        let cat = Category::of(spec);
        let annuity = annuity_factor(config.interest_rate, spec.lifetime);
        let fixed = freeze.fixed_keep.as_ref().and_then(|m| m.get(&inst.id)).copied();
        let force_keep = freeze.keep_all || fixed == Some(true);
        let force_dismantle = fixed == Some(false);
        let keep = bl.col(format!("keep[{}]", inst.id), if force_keep { 1.0 } else { 0.0 }, if force_dismantle { 0.0 } else { 1.0 }, true);
        let dismantle = bl.col(format!("dismantle[{}]", inst.id), if force_dismantle { 1.0 } else { 0.0 }, if force_keep { 0.0 } else { 1.0 }, true);
        let keep_row = bl.row(format!("keep_or_dismantle[{}]", inst.id), &[(keep, 1.0), (dismantle, 1.0)], 1.0, 1.0);
        bl.cost(cat, CostPart::Opex, keep, spec.opex_fixed_per_kw * inst.size);
        bl.cost(cat, CostPart::Residual, keep, annuity * residual_value(spec, inst, year));
        bl.cost(cat, CostPart::Deconstruction, dismantle, annuity * spec.deconstruction(inst.size));
        bl.emit_embodied(cat, dismantle, spec.recycling_per_kw * inst.size, spec.lifetime);
        existing.push(ExistingVars { instance: inst.clone(), keep, dismantle, keep_row });
    }

    // New installs.
    let mut installs = Vec::new();
    for id in &candidate_ids {
        let spec = catalog.tech(id)?;
        let cat = Category::of(spec);
        let annuity = annuity_factor(config.interest_rate, spec.lifetime);
        let mut upper = spec.max_size;
        match spec.siting {
            Siting::RoofArea => upper = upper.min(b.roof_area / spec.area_per_kw),
            Siting::OpenSpace => upper = upper.min(b.open_space_area / spec.area_per_kw),
            _ => {}
        }
        // Oversize cap, but never below the smallest unit on offer.
        if spec.kind.is_firm_heat() {
            upper = upper.min((config.peak_oversize * max_heat_peak).max(spec.min_size));
        }
        if spec.kind == TechKind::Chiller {
            upper = upper.min((config.peak_oversize * max_cooling_peak).max(spec.min_size));
        }
        let fixed_size = freeze.fixed_sizes.as_ref().and_then(|m| m.get(id)).copied();
        let usable = upper >= spec.min_size && upper > 0.0;
        let (size_lo, size_hi, bin_lo, bin_hi) = match fixed_size {
            Some(s) if s > 0.0 => (s, s, 1.0, 1.0),
            Some(_) => (0.0, 0.0, 0.0, 0.0),
            None if usable => (0.0, upper, 0.0, 1.0),
            None => (0.0, 0.0, 0.0, 0.0),
        };
        let size = bl.col(format!("size[{id}]"), size_lo, size_hi, false);
        let bin = bl.col(format!("install[{id}]"), bin_lo, bin_hi, true);
        let cap = if usable { upper } else { 0.0 }.max(size_hi);
        bl.row(format!("size_max[{id}]"), &[(size, 1.0), (bin, -cap)], f64::NEG_INFINITY, 0.0);
        bl.row(format!("size_min[{id}]"), &[(size, 1.0), (bin, -spec.min_size)], 0.0, f64::INFINITY);
        let mut grid_points = Vec::new();
        if let (Some(points), None) = (&config.size_grid, fixed_size) {
            let mut terms = vec![(size, 1.0)];
            let mut link = vec![(bin, 1.0)];
            for (k, &g) in points.iter().enumerate() {
                let ok = usable && g >= spec.min_size && g <= upper;
                let z = bl.col(format!("size_point[{id},{k}]"), 0.0, if ok { 1.0 } else { 0.0 }, true);
                terms.push((z, -g));
                link.push((z, -1.0));
                grid_points.push((z, g));
            }
            bl.row(format!("size_grid[{id}]"), &terms, 0.0, 0.0);
            bl.row(format!("size_grid_link[{id}]"), &link, 0.0, 0.0);
        }
        let gross = annuity * spec.capex_per_kw;
        let gross_fixed = annuity * spec.capex_fixed;
        bl.cost(cat, CostPart::Capex, size, gross);
        bl.cost(cat, CostPart::Capex, bin, gross_fixed);
        bl.cost(cat, CostPart::Subsidy, size, gross * spec.subsidy_rate);
        bl.cost(cat, CostPart::Subsidy, bin, gross_fixed * spec.subsidy_rate);
        bl.cost(cat, CostPart::Opex, size, spec.opex_fixed_per_kw);
        bl.emit_embodied(cat, size, spec.embodied_per_kw, spec.lifetime);
        installs.push(InstallVars { tech_id: id.clone(), size, bin, upper: cap, grid_points });
    }

    // Parallel retrofit limit.
    let mut terms: Vec<(usize, f64)> = installs.iter().map(|i| (i.bin, 1.0)).collect();
    for (v, &col) in Variant::all().zip(&variant_cols) {
        let added = v.added_to(state).count();
        if added > 0 {
            terms.push((col, added as f64));
        }
    }
    let parallel_row = bl.row("parallel_retrofits".into(), &terms, f64::NEG_INFINITY, ctx.max_parallel_retrofits as f64);

    // Siting rows.
    let mut roof_terms = Vec::new();
    let mut open_terms = Vec::new();
    for inst in &installs {
        let spec = catalog.tech(&inst.tech_id)?;
        match spec.siting {
            Siting::RoofArea => roof_terms.push((inst.size, spec.area_per_kw)),
            Siting::OpenSpace => open_terms.push((inst.size, spec.area_per_kw)),
            _ => {}
        }
    }
    for ex in &existing {
        let spec = catalog.tech(&ex.instance.tech_id)?;
        match spec.siting {
            Siting::RoofArea => roof_terms.push((ex.keep, spec.area_per_kw * ex.instance.size)),
            Siting::OpenSpace => open_terms.push((ex.keep, spec.area_per_kw * ex.instance.size)),
            _ => {}
        }
    }
    let roof_row = (!roof_terms.is_empty()).then(|| bl.row("roof_area".into(), &roof_terms, f64::NEG_INFINITY, b.roof_area));
    let open_space_row = (!open_terms.is_empty()).then(|| bl.row("open_space_area".into(), &open_terms, f64::NEG_INFINITY, b.open_space_area));

    // Capacity expressions and dispatch.
    let mut techs = Vec::new();
    let mut elec: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut heat: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut cool: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut firm_heat = Vec::new();
    let mut firm_cool = Vec::new();
    let mut grid_cap: Option<LinExpr> = None;
    let mut has_generation = false;
    for id in &tech_ids {
        let spec = catalog.tech(id)?;
        let cat = Category::of(spec);
        let mut capacity = LinExpr::default();
        if let Some(inst) = installs.iter().find(|i| &i.tech_id == id) {
            capacity.push(inst.size, 1.0);
        }
        for ex in existing.iter().filter(|e| &e.instance.tech_id == id) {
            capacity.push(ex.keep, ex.instance.size);
        }
        let avail: Vec<f64> = match &spec.availability {
            Some(name) => ctx
                .availability
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("building {}: missing availability profile '{name}' for {id}", b.id)))?,
            None => vec![1.0; n],
        };
        let mut tv = TechVars {
            tech_id: id.clone(),
            kind: spec.kind,
            capacity: capacity.clone(),
            output: Vec::new(),
            input_per_output: Vec::new(),
            storage: None,
            input_carrier: spec.carrier_in,
            power_to_heat: if spec.kind == TechKind::Chp { spec.power_to_heat.unwrap_or(0.0) } else { 0.0 },
        };
        match spec.kind {
            TechKind::GridConnection => {
                grid_cap = Some(match grid_cap.take() {
                    Some(mut g) => {
                        g.0.extend(capacity.0.iter().copied());
                        g
                    }
                    None => capacity.clone(),
                });
            }
            TechKind::ThermalStorage | TechKind::Battery => {
                let sp = spec.storage.as_ref().expect("validated storage parameters");
                let retain = (1.0 - sp.standing_loss).powf(h);
                let eta = sp.charge_efficiency;
                let soc: Vec<usize> = (0..n).map(|s| bl.col(format!("soc[{id},{s}]"), 0.0, f64::INFINITY, false)).collect();
                let charge: Vec<usize> = (0..n).map(|s| bl.col(format!("charge[{id},{s}]"), 0.0, f64::INFINITY, false)).collect();
                let discharge: Vec<usize> = (0..n).map(|s| bl.col(format!("discharge[{id},{s}]"), 0.0, f64::INFINITY, false)).collect();
                for s in 0..n {
                    let next = (s + 1) % n;
                    let mut terms = vec![(soc[next], 1.0), (charge[s], -eta), (discharge[s], 1.0 / eta)];
                    if next == s {
                        terms[0].1 -= retain;
                    } else {
                        terms.push((soc[s], -retain));
                    }
                    bl.row(format!("soc_balance[{id},{s}]"), &terms, 0.0, 0.0);
                    let mut t = vec![(soc[s], 1.0)];
                    t.extend(capacity.0.iter().map(|&(j, c)| (j, -c)));
                    bl.row(format!("soc_max[{id},{s}]"), &t, f64::NEG_INFINITY, 0.0);
                    let mut t = vec![(charge[s], 1.0), (discharge[s], 1.0)];
                    t.extend(capacity.0.iter().map(|&(j, c)| (j, -c * sp.c_rate * h)));
                    bl.row(format!("storage_power[{id},{s}]"), &t, f64::NEG_INFINITY, 0.0);
                    let target = if spec.kind == TechKind::Battery { &mut elec[s] } else { &mut heat[s] };
                    target.push((discharge[s], 1.0));
                    target.push((charge[s], -1.0));
                }
                tv.storage = Some(StorageVars { soc, charge, discharge });
            }
            _ => {
                let in_carrier = spec.carrier_in;
                for s in 0..n {
                    let a = avail[s];
                    let out = bl.col(format!("out[{id},{s}]"), 0.0, if a > 0.0 { f64::INFINITY } else { 0.0 }, false);
                    if a > 0.0 {
                        let mut t = vec![(out, 1.0)];
                        t.extend(capacity.0.iter().map(|&(j, c)| (j, -c * h * a)));
                        bl.row(format!("output_max[{id},{s}]"), &t, f64::NEG_INFINITY, 0.0);
                    }
                    let perf = spec.performance(grid.season[s]);
                    let input = if in_carrier.is_some() { 1.0 / perf } else { 0.0 };
                    tv.output.push(out);
                    tv.input_per_output.push(input);
                    let w = grid.weight[s];
                    match spec.kind.output() {
                        Carrier::Heat => heat[s].push((out, 1.0)),
                        Carrier::Cooling => cool[s].push((out, 1.0)),
                        _ => {
                            elec[s].push((out, 1.0));
                            has_generation = true;
                        }
                    }
                    if spec.kind == TechKind::Chp {
                        elec[s].push((out, spec.power_to_heat.unwrap_or(0.0)));
                        has_generation = true;
                    }
                    match in_carrier {
                        Some(Carrier::Electricity) => elec[s].push((out, -input)),
                        Some(c) => {
                            bl.cost(cat, CostPart::Opex, out, w * input * ctx.price(c)?);
                            let scope = if c.is_combustible() { Scope::Scope1 } else { Scope::Scope2 };
                            bl.emit(cat, scope, out, w * input * ctx.ef(c));
                        }
                        None => {}
                    }
                }
                if spec.kind.is_firm_heat() {
                    firm_heat.extend(capacity.0.iter().copied());
                }
                if spec.kind == TechKind::Chiller {
                    firm_cool.extend(capacity.0.iter().copied());
                }
            }
        }
        techs.push(tv);
    }

    // Grid exchange.
    let p_el = ctx.price(Carrier::Electricity)?;
    let ef_el = ctx.ef(Carrier::Electricity);
    let mut import = Vec::with_capacity(n);
    let mut export = Vec::with_capacity(n);
    let connected = grid_cap.is_some() || !catalog.technologies.values().any(|t| t.kind == TechKind::GridConnection);
    let import_hi = if connected { f64::INFINITY } else { 0.0 };
    let export_hi = if connected && has_generation { f64::INFINITY } else { 0.0 };
    for s in 0..n {
        let w = grid.weight[s];
        let imp = bl.col(format!("import[{s}]"), 0.0, import_hi, false);
        let exp = bl.col(format!("export[{s}]"), 0.0, export_hi, false);
        bl.cost(Category::Electricity, CostPart::Opex, imp, w * p_el);
        bl.cost(Category::Electricity, CostPart::Opex, exp, -w * ctx.feed_in);
        bl.emit(Category::Electricity, Scope::Scope2, imp, w * ef_el);
        if let Some(g) = &grid_cap {
            for (col, name) in [(imp, "import_max"), (exp, "export_max")] {
                if name == "export_max" && !has_generation {
                    continue;
                }
                let mut t = vec![(col, 1.0)];
                t.extend(g.0.iter().map(|&(j, c)| (j, -c * h)));
                bl.row(format!("{name}[{s}]"), &t, f64::NEG_INFINITY, 0.0);
            }
        }
        elec[s].push((imp, 1.0));
        elec[s].push((exp, -1.0));
        import.push(imp);
        export.push(exp);
    }

    // Carrier balances.
    let mut balance_rows: BTreeMap<Carrier, Vec<usize>> = BTreeMap::new();
    let has_heat = series.design_peak[&Vector::SpaceHeat] + series.design_peak[&Vector::HotWater] > 0.0;
    let has_cooling = series.design_peak[&Vector::Cooling] > 0.0;
    for s in 0..n {
        let r = bl.row(format!("balance_electricity[{s}]"), &elec[s], series.demand[&Vector::Electricity][s], series.demand[&Vector::Electricity][s]);
        balance_rows.entry(Carrier::Electricity).or_default().push(r);
        if has_heat || !heat[s].is_empty() {
            let mut t = heat[s].clone();
            for (k, &col) in variant_cols.iter().enumerate() {
                let d = demand_by_variant[k][&Vector::SpaceHeat][s] + demand_by_variant[k][&Vector::HotWater][s];
                if d != 0.0 {
                    t.push((col, -d));
                }
            }
            let r = bl.row(format!("balance_heat[{s}]"), &t, 0.0, f64::INFINITY);
            balance_rows.entry(Carrier::Heat).or_default().push(r);
        }
        if has_cooling || !cool[s].is_empty() {
            let mut t = cool[s].clone();
            for (k, &col) in variant_cols.iter().enumerate() {
                let d = demand_by_variant[k][&Vector::Cooling][s];
                if d != 0.0 {
                    t.push((col, -d));
                }
            }
            let r = bl.row(format!("balance_cooling[{s}]"), &t, 0.0, f64::INFINITY);
            balance_rows.entry(Carrier::Cooling).or_default().push(r);
        }
    }

    // Peak coverage on the design peaks.
    if has_heat {
        if firm_heat.is_empty() {
            return Err(Error::Infeasible { building: b.id.clone(), message: "no technology can cover the heat peak".into() });
        }
        let mut t = firm_heat.clone();
        for (v, &col) in Variant::all().zip(&variant_cols) {
            t.push((col, -heat_peak(v)));
        }
        bl.row("peak_heat".into(), &t, 0.0, f64::INFINITY);
    }
    if has_cooling {
        if firm_cool.is_empty() {
            return Err(Error::Infeasible { building: b.id.clone(), message: "no technology can cover the cooling peak".into() });
        }
        let mut t = firm_cool.clone();
        for (v, &col) in Variant::all().zip(&variant_cols) {
            t.push((col, -cooling_peak(v)));
        }
        bl.row("peak_cooling".into(), &t, 0.0, f64::INFINITY);
    }

    // Objective.
    let weight_cost = match config.objective_mode {
        ObjectiveMode::Emission => EMISSION_MODE_COST_WEIGHT,
        _ => 1.0,
    };
    let weight_emission = match config.objective_mode {
        ObjectiveMode::Cost => 0.0,
        ObjectiveMode::Emission => 1.0,
        ObjectiveMode::Weighted => ctx.co2_price,
    };
    let mut objective = vec![0.0; bl.req.num_cols];
    for ((_, part), expr) in &bl.costs {
        let sign = match part {
            CostPart::Subsidy | CostPart::Residual => -1.0,
            _ => 1.0,
        };
        for &(j, c) in &expr.0 {
            objective[j] += weight_cost * sign * c;
        }
    }
    if weight_emission > 0.0 {
        for ((_, scope), expr) in &bl.emissions {
            if *scope == Scope::Scope3 {
                continue;
            }
            for &(j, c) in &expr.0 {
                objective[j] += weight_emission * c;
            }
        }
        for expr in bl.scope3_annualized.values() {
            for &(j, c) in &expr.0 {
                objective[j] += weight_emission * c;
            }
        }
    }
    bl.req.objective = objective;

    Ok(BuildingModel {
        building_id: b.id.clone(),
        year,
        objective_mode: config.objective_mode,
        co2_price: ctx.co2_price,
        request: bl.req,
        state_variant: state,
        variant_cols,
        installs,
        existing,
        techs,
        import,
        export,
        weights: grid.weight.clone(),
        hours_per_step: h,
        demand_by_variant,
        roof_row,
        open_space_row,
        parallel_row,
        variant_row,
        balance_rows,
        costs: bl.costs,
        emissions: bl.emissions,
        scope3_annualized: bl.scope3_annualized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Install {
    pub tech_id: String,
    pub size: f64,
}

/// kgCO₂eq. Scope 1 and 2 are annual operation; scope 3 is the embodied
/// amount of this stage's installs, dismantles and refurbishment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Emissions {
    pub scope1: f64,
    pub scope2: f64,
    pub scope3: f64,
    /// Scope 3 spread over the service lives, as used by the objective.
    pub scope3_annualized: f64,
}

impl Emissions {
    pub fn total(&self) -> f64 {
        self.scope1 + self.scope2 + self.scope3
    }

    pub fn annual(&self) -> f64 {
        self.scope1 + self.scope2 + self.scope3_annualized
    }

    pub fn add(&mut self, o: &Emissions) {
        self.scope1 += o.scope1;
        self.scope2 += o.scope2;
        self.scope3 += o.scope3;
        self.scope3_annualized += o.scope3_annualized;
    }
}

/// Annual energy flows, kWh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchSummary {
    pub electricity_import: f64,
    pub electricity_export: f64,
    pub pv_generation: f64,
    pub chp_generation: f64,
    /// Share of PV generation used on site; 0 without PV.
    pub self_consumption: f64,
    /// Purchased fuel and heat by carrier (electricity excluded).
    pub fuel_use: BTreeMap<Carrier, f64>,
    /// Heat output by technology.
    pub heat_output: BTreeMap<String, f64>,
    pub cooling_output: BTreeMap<String, f64>,
    /// Demand after refurbishment, by vector.
    pub demand: BTreeMap<Vector, f64>,
    /// Electricity used by heat pumps, electric heaters and chillers.
    pub conversion_electricity: f64,
    pub battery_charge: f64,
    pub battery_discharge: f64,
    pub heat_storage_charge: f64,
    pub heat_storage_discharge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSolution {
    pub building_id: String,
    pub year: i32,
    pub status: String,
    pub chosen_variant: Variant,
    pub installs: Vec<Install>,
    pub keeps: Vec<String>,
    pub dismantles: Vec<String>,
    pub costs: CostBreakdown,
    pub costs_by_category: BTreeMap<Category, CostBreakdown>,
    pub emissions: Emissions,
    pub emissions_by_category: BTreeMap<Category, Emissions>,
    pub dispatch: DispatchSummary,
    /// kW (kWh for storage) available per technology after the stage decisions.
    pub capacities: BTreeMap<String, f64>,
    pub tech_kinds: BTreeMap<String, TechKind>,
    /// Electrical rating of CHP units, kW.
    pub chp_electrical_kw: BTreeMap<String, f64>,
    /// Technology with the largest annual heat output.
    pub primary_heat_tech: Option<String>,
    pub objective_mode: ObjectiveMode,
    /// Solver objective.
    pub objective_value: f64,
    /// Objective rebuilt from the cost and emission records.
    pub objective_recomputed: f64,
}

impl BuildingSolution {
    pub fn total_cost(&self) -> f64 {
        self.costs.total()
    }
}

impl BuildingModel {
    /// Solve with the reference solver and extract the solution.
    pub fn solve(&self) -> Result<BuildingSolution> {
        let outcome = milp::solve(&self.request)?;
        self.extract_solution(&outcome)
    }

    pub fn solve_with(&self, backend: &dyn milp::Backend) -> Result<BuildingSolution> {
        let outcome = backend.solve(&self.request)?;
        self.extract_solution(&outcome)
    }

    pub fn write_lp<W: std::io::Write>(&self, sink: W) -> Result<()> {
        Ok(milp::lp_format::write_lp(&self.request, sink)?)
    }

    pub fn num_binaries(&self) -> usize {
        self.request.integrality.iter().filter(|b| **b).count()
    }

    /// Columns fixed to zero among the variant binaries.
    pub fn fixed_variant_count(&self) -> usize {
        self.variant_cols.iter().filter(|&&c| self.request.col_upper[c] == 0.0).count()
    }

    fn annual(&self, cols: &[usize], x: &[f64]) -> f64 {
        cols.iter().zip(&self.weights).map(|(&c, w)| w * x[c]).sum()
    }

    pub fn extract_solution(&self, outcome: &SolveOutcome) -> Result<BuildingSolution> {
        let has_point = !outcome.primal.is_empty() && matches!(outcome.status, SolveStatus::Optimal | SolveStatus::FeasibleGap | SolveStatus::TimeLimit);
        if !has_point {
            return Err(Error::Infeasible {
                building: self.building_id.clone(),
                message: format!("solver status {}", outcome.status.as_str()),
            });
        }
        let x = &outcome.primal;
        let tol = self.request.params.integrality_tol.max(1e-4);
        for (j, &is_int) in self.request.integrality.iter().enumerate() {
            if is_int && (x[j] - x[j].round()).abs() > tol {
                return Err(Error::Invalid(format!(
                    "building {}: binary {} = {} is not integral",
                    self.building_id, self.request.col_names[j], x[j]
                )));
            }
        }
        let on = |c: usize| x[c] > 0.5;
        let chosen: Vec<Variant> = Variant::all().zip(&self.variant_cols).filter(|(_, &c)| on(c)).map(|(v, _)| v).collect();
        if chosen.len() != 1 {
            return Err(Error::Invalid(format!("building {}: {} variants chosen", self.building_id, chosen.len())));
        }
        let chosen_variant = chosen[0];
        let installs: Vec<Install> = self
            .installs
            .iter()
            .filter(|i| on(i.bin))
            .map(|i| Install { tech_id: i.tech_id.clone(), size: x[i.size] })
            .collect();
        let keeps = self.existing.iter().filter(|e| on(e.keep)).map(|e| e.instance.id.clone()).collect();
        let dismantles = self.existing.iter().filter(|e| on(e.dismantle)).map(|e| e.instance.id.clone()).collect();

        let mut costs_by_category: BTreeMap<Category, CostBreakdown> = BTreeMap::new();
        for ((cat, part), expr) in &self.costs {
            let v = expr.eval(x);
            let e = costs_by_category.entry(*cat).or_default();
            match part {
                CostPart::Capex => e.capex += v,
                CostPart::Subsidy => e.capex_subsidy += v,
                CostPart::Opex => e.opex += v,
                CostPart::Deconstruction => e.deconstruction += v,
                CostPart::Residual => e.residual_value += v,
            }
        }
        let mut costs = CostBreakdown::default();
        for c in costs_by_category.values() {
            costs.add(c);
        }
        let mut emissions_by_category: BTreeMap<Category, Emissions> = BTreeMap::new();
        for ((cat, scope), expr) in &self.emissions {
            let v = expr.eval(x);
            let e = emissions_by_category.entry(*cat).or_default();
            match scope {
                Scope::Scope1 => e.scope1 += v,
                Scope::Scope2 => e.scope2 += v,
                Scope::Scope3 => e.scope3 += v,
            }
        }
        for (cat, expr) in &self.scope3_annualized {
            emissions_by_category.entry(*cat).or_default().scope3_annualized += expr.eval(x);
        }
        let mut emissions = Emissions::default();
        for e in emissions_by_category.values() {
            emissions.add(e);
        }
        let objective_recomputed = match self.objective_mode {
            ObjectiveMode::Cost => costs.total(),
            ObjectiveMode::Weighted => costs.total() + self.co2_price * emissions.annual(),
            ObjectiveMode::Emission => emissions.annual() + EMISSION_MODE_COST_WEIGHT * costs.total(),
        };

        let mut dispatch = DispatchSummary::default();
        dispatch.electricity_import = self.annual(&self.import, x);
        dispatch.electricity_export = self.annual(&self.export, x);
        let k = chosen_variant.0 as usize;
        for v in Vector::ALL {
            dispatch.demand.insert(v, self.demand_by_variant[k][&v].iter().zip(&self.weights).map(|(d, w)| d * w).sum());
        }
        let mut capacities = BTreeMap::new();
        let mut tech_kinds = BTreeMap::new();
        let mut chp_electrical_kw = BTreeMap::new();
        for t in &self.techs {
            let cap = t.capacity.eval(x);
            if cap > 1e-9 {
                capacities.insert(t.tech_id.clone(), cap);
                tech_kinds.insert(t.tech_id.clone(), t.kind);
                if t.kind == TechKind::Chp {
                    chp_electrical_kw.insert(t.tech_id.clone(), cap * t.power_to_heat);
                }
            }
            if let Some(st) = &t.storage {
                let (ch, dis) = (self.annual(&st.charge, x), self.annual(&st.discharge, x));
                if t.kind == TechKind::Battery {
                    dispatch.battery_charge += ch;
                    dispatch.battery_discharge += dis;
                } else {
                    dispatch.heat_storage_charge += ch;
                    dispatch.heat_storage_discharge += dis;
                }
            }
            if t.output.is_empty() {
                continue;
            }
            let out = self.annual(&t.output, x);
            let input: f64 = t.output.iter().zip(&t.input_per_output).zip(&self.weights).map(|((&c, r), w)| w * r * x[c]).sum();
            match t.kind {
                TechKind::Photovoltaic => dispatch.pv_generation += out,
                TechKind::Chiller => {
                    dispatch.cooling_output.insert(t.tech_id.clone(), out);
                }
                _ => {
                    dispatch.heat_output.insert(t.tech_id.clone(), out);
                }
            }
            if t.kind == TechKind::Chp {
                dispatch.chp_generation += out * t.power_to_heat;
            }
            if matches!(t.kind, TechKind::HeatPump | TechKind::Chiller) || (t.kind == TechKind::Boiler && t.input_carrier == Some(Carrier::Electricity)) {
                dispatch.conversion_electricity += input;
            } else if input > 0.0 {
                if let Some(c) = t.input_carrier {
                    *dispatch.fuel_use.entry(c).or_default() += input;
                }
            }
        }
        dispatch.self_consumption = if dispatch.pv_generation > 1e-9 {
            ((dispatch.pv_generation - dispatch.electricity_export) / dispatch.pv_generation).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let primary_heat_tech = dispatch
            .heat_output
            .iter()
            .filter(|(_, v)| **v > 1e-6)
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(k, _)| k.clone());
        Ok(BuildingSolution {
            building_id: self.building_id.clone(),
            year: self.year,
            status: outcome.status.as_str().to_string(),
            chosen_variant,
            installs,
            keeps,
            dismantles,
            costs,
            costs_by_category,
            emissions,
            emissions_by_category,
            dispatch,
            capacities,
            tech_kinds,
            chp_electrical_kw,
            primary_heat_tech,
            objective_mode: self.objective_mode,
            objective_value: outcome.objective,
            objective_recomputed,
        })
    }
}
