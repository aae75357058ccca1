//! Multi-stage transformation heuristic.
//!
//! Each stage ages the stock, removes expired plant, solves every building
//! without rate limits, turns the differences to the status quo into
//! measures, admits them under the per-class retrofit budgets, re-solves the
//! buildings whose measures were deferred and assigns implementation years.
//! The committed outcome is the next stage's status quo.

use std::collections::{BTreeMap, BTreeSet};

use milp::{Backend, ReferenceBackend, SolveParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, DurationClass, TechKind};
use crate::error::{Error, Result};
use crate::model::{build_model, BuildingSolution, DecisionFreeze, InstallPolicy, ModelConfig, ObjectiveMode, StageContext};
use crate::report::{aggregate_stage, StageReport};
use crate::scenario::{Budgets, Period, ScenarioFrame};
use crate::timegrid::Resolution;
use crate::twin::{Building, BuildingType, EnergyTwin, RefurbState, TechnologyInstance, Variant, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMode {
    #[default]
    Cost,
    Emission,
    /// Cost first, emissions break ties.
    Lexicographic,
}

/// Run settings; also the TOML config file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathwayConfig {
    pub objective_mode: ObjectiveMode,
    pub ranking_mode: RankingMode,
    pub resolution: Resolution,
    pub interest_rate: f64,
    pub peak_oversize: f64,
    pub mip_gap: f64,
    pub time_limit_s: f64,
    pub node_limit: usize,
    /// Stage years; defaults to the scenario's periods.
    pub periods: Option<Vec<i32>>,
    pub refurb_rate_cap: Option<f64>,
    pub conversion_rate_cap: Option<f64>,
    pub max_parallel_retrofits: Option<u32>,
    pub seed: u64,
}

impl Default for PathwayConfig {
    fn default() -> Self {
        let solve = SolveParams::default();
        let model = ModelConfig::default();
        PathwayConfig {
            objective_mode: ObjectiveMode::Cost,
            ranking_mode: RankingMode::Cost,
            resolution: Resolution::FullYear,
            interest_rate: model.interest_rate,
            peak_oversize: model.peak_oversize,
            mip_gap: solve.mip_gap,
            time_limit_s: solve.time_limit_s,
            node_limit: solve.node_limit,
            periods: None,
            refurb_rate_cap: None,
            conversion_rate_cap: None,
            max_parallel_retrofits: None,
            seed: 0,
        }
    }
}

impl PathwayConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            objective_mode: self.objective_mode,
            interest_rate: self.interest_rate,
            peak_oversize: self.peak_oversize,
            solve: SolveParams {
                mip_gap: self.mip_gap,
                time_limit_s: self.time_limit_s,
                node_limit: self.node_limit,
                deterministic_seed: self.seed,
                ..SolveParams::default()
            },
            ..ModelConfig::default()
        }
    }

    /// Scenario with the configured overrides applied.
    pub fn effective_frame(&self, frame: &ScenarioFrame) -> Result<ScenarioFrame> {
        let mut f = frame.clone();
        if let Some(c) = self.refurb_rate_cap {
            f.refurb_rate_cap = c;
        }
        if let Some(c) = self.conversion_rate_cap {
            f.conversion_rate_cap = c;
        }
        if let Some(m) = self.max_parallel_retrofits {
            f.max_parallel_retrofits = m;
        }
        f.validate()?;
        Ok(f)
    }

    pub fn stage_years(&self, frame: &ScenarioFrame) -> Result<Vec<i32>> {
        let years = self.periods.clone().unwrap_or_else(|| frame.periods.clone());
        let (first, last) = (frame.periods[0], *frame.periods.last().unwrap());
        if years.is_empty() || years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("config", "periods", format!("{years:?} not strictly increasing")));
        }
        if let Some(&y) = years.iter().find(|&&y| y < first || y > last) {
            return Err(Error::YearOutOfRange { year: y, first, last });
        }
        Ok(years)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureCategory {
    Mandatory,
    Voluntary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeasureKind {
    Refurbishment { added: Variant, variant: Variant },
    PlantInstall { tech_id: String, size: f64 },
    PlantDismantle { instance_id: String, tech_id: String },
}

/// Annual improvement of the unrestricted plan over the building's fallback.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionScore {
    /// €/yr.
    pub cost: f64,
    /// kgCO₂eq/yr.
    pub emission: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub building_id: String,
    pub kind: MeasureKind,
    pub category: MeasureCategory,
    pub class: DurationClass,
    pub reduction_score: ReductionScore,
    /// Earliest sensible year for mandatory replacements (expiry of the old plant).
    pub due_year: Option<i32>,
    pub implementation_year: Option<i32>,
}

impl Measure {
    fn unit(&self) -> (String, DurationClass) {
        (self.building_id.clone(), self.class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedInstance {
    pub building_id: String,
    pub instance: TechnologyInstance,
    pub expiry_year: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessResult {
    pub twin: EnergyTwin,
    pub removed: Vec<RemovedInstance>,
    /// Buildings whose remaining plant cannot cover a design peak.
    pub flagged: Vec<String>,
}

/// Remove every instance with `install_year + lifetime ≤ year`.
pub fn preprocess_stage(twin: &EnergyTwin, catalog: &Catalog, year: i32) -> Result<PreprocessResult> {
    let mut out = twin.clone();
    let mut removed = Vec::new();
    let mut flagged = Vec::new();
    for b in &mut out.buildings {
        let mut keep = Vec::with_capacity(b.installed.len());
        for inst in b.installed.drain(..) {
            let spec = catalog.tech(&inst.tech_id)?;
            let expiry = inst.install_year + spec.lifetime as i32;
            if expiry <= year {
                removed.push(RemovedInstance { building_id: b.id.clone(), instance: inst, expiry_year: expiry });
            } else {
                keep.push(inst);
            }
        }
        b.installed = keep;
        if !deficient_services(b, catalog).is_empty() {
            flagged.push(b.id.clone());
        }
    }
    Ok(PreprocessResult { twin: out, removed, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage_year: i32,
    pub building_id: String,
    pub message: String,
}

/// Solutions keyed by building id plus per-building failures.
#[derive(Debug, Clone, Default)]
pub struct StageSolutions {
    pub solutions: BTreeMap<String, BuildingSolution>,
    pub failures: BTreeMap<String, String>,
}

fn solve_buildings<F>(buildings: &[&Building], catalog: &Catalog, ctx: &StageContext, backend: &dyn Backend, config_of: F) -> StageSolutions
where
    F: Fn(&Building) -> Option<ModelConfig> + Sync,
{
    let results: Vec<(String, Option<Result<BuildingSolution>>)> = buildings
        .par_iter()
        .map(|b| {
            let res = config_of(b).map(|cfg| build_model(b, catalog, ctx, &cfg).and_then(|m| m.solve_with(backend)));
            (b.id.clone(), res)
        })
        .collect();
    let mut out = StageSolutions::default();
    for (id, res) in results {
        match res {
            Some(Ok(s)) => {
                out.solutions.insert(id, s);
            }
            Some(Err(e)) => {
                out.failures.insert(id, e.to_string());
            }
            None => {}
        }
    }
    out
}

/// Solve every building of a preprocessed twin without rate limits.
pub fn optimize_stage_unrestricted(twin: &EnergyTwin, catalog: &Catalog, ctx: &StageContext, config: &ModelConfig, backend: &dyn Backend) -> StageSolutions {
    let refs: Vec<&Building> = twin.buildings.iter().collect();
    solve_buildings(&refs, catalog, ctx, backend, |_| Some(config.clone()))
}

/// Evaluate every building's status quo with all decisions frozen.
pub fn evaluate_status_quo(twin: &EnergyTwin, catalog: &Catalog, ctx: &StageContext, config: &ModelConfig, backend: &dyn Backend) -> StageSolutions {
    let refs: Vec<&Building> = twin.buildings.iter().collect();
    solve_buildings(&refs, catalog, ctx, backend, |b| {
        Some(ModelConfig { freeze: DecisionFreeze::dispatch_only(b.refurb_state.variant()), ..config.clone() })
    })
}

/// A service the stage-start plant must be able to cover at its design peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    Heat,
    Cooling,
    Grid,
}

impl Service {
    pub fn served_by(self, kind: TechKind) -> bool {
        match self {
            Service::Heat => kind.is_firm_heat(),
            Service::Cooling => kind == TechKind::Chiller,
            Service::Grid => kind == TechKind::GridConnection,
        }
    }
}

/// Services whose remaining plant falls short of the design peak.
pub fn deficient_services(b: &Building, catalog: &Catalog) -> Vec<Service> {
    let capacity = |s: Service| -> f64 {
        b.installed
            .iter()
            .filter(|i| catalog.tech(&i.tech_id).map_or(false, |t| s.served_by(t.kind)))
            .map(|i| i.size)
            .sum()
    };
    let peak = |v: Vector| b.demand.get(&v).map_or(0.0, |p| p.peak_kw());
    let mut out = Vec::new();
    let heat = peak(Vector::SpaceHeat) + peak(Vector::HotWater);
    if heat > 0.0 && capacity(Service::Heat) + 1e-9 < heat {
        out.push(Service::Heat);
    }
    let cooling = peak(Vector::Cooling);
    if cooling > 0.0 && capacity(Service::Cooling) + 1e-9 < cooling {
        out.push(Service::Cooling);
    }
    let grid_in_catalog = catalog.technologies.values().any(|t| t.kind == TechKind::GridConnection);
    if grid_in_catalog && capacity(Service::Grid) + 1e-9 < peak(Vector::Electricity) {
        out.push(Service::Grid);
    }
    out
}

/// A replacement that a building without a working status quo must carry out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MandatoryChoice {
    Install { tech_id: String },
    Refurbishment,
}

/// Pick the mandatory measures from a plan: per deficient service every
/// install serving it. Without a deficient service the single pick is a like-for-like
/// replacement, else one in the same sector, else the largest firm heat
/// source, else the largest install. The refurbishment is mandatory only when
/// no install can take that role.
pub fn select_mandatory(sol: &BuildingSolution, initial: &Building, expired: &[&TechnologyInstance], catalog: &Catalog) -> Vec<MandatoryChoice> {
    let expired_techs: BTreeSet<&str> = expired.iter().map(|i| i.tech_id.as_str()).collect();
    let pick = |pred: &dyn Fn(&str) -> bool, taken: &[MandatoryChoice]| -> Option<String> {
        sol.installs
            .iter()
            .filter(|i| pred(&i.tech_id) && !taken.contains(&MandatoryChoice::Install { tech_id: i.tech_id.clone() }))
            .max_by(|a, b| {
                let like = |t: &str| expired_techs.contains(t);
                like(&a.tech_id).cmp(&like(&b.tech_id)).then(a.size.total_cmp(&b.size)).then_with(|| b.tech_id.cmp(&a.tech_id))
            })
            .map(|i| i.tech_id.clone())
    };
    let kind_of = |t: &str| catalog.tech(t).ok().map(|s| s.kind);
    let refurbished = sol.chosen_variant != initial.refurb_state.variant();
    let mut out = Vec::new();
    let deficient = deficient_services(initial, catalog);
    for service in &deficient {
        let serving: Vec<MandatoryChoice> = sol
            .installs
            .iter()
            .filter(|i| kind_of(&i.tech_id).map_or(false, |k| service.served_by(k)))
            .map(|i| MandatoryChoice::Install { tech_id: i.tech_id.clone() })
            .collect();
        if serving.is_empty() && refurbished && !out.contains(&MandatoryChoice::Refurbishment) {
            out.push(MandatoryChoice::Refurbishment);
        }
        for c in serving {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    if deficient.is_empty() {
        let sectors: BTreeSet<_> = expired.iter().filter_map(|i| catalog.tech(&i.tech_id).ok().map(|s| s.sector)).collect();
        let sector_of = |t: &str| catalog.tech(t).ok().map(|s| s.sector);
        let choice = pick(&|t| expired_techs.contains(t), &out)
            .or_else(|| pick(&|t| sector_of(t).map_or(false, |s| sectors.contains(&s)), &out))
            .or_else(|| pick(&|t| kind_of(t).map_or(false, |k| k.is_firm_heat()), &out))
            .or_else(|| pick(&|_| true, &out))
            .map(|tech_id| MandatoryChoice::Install { tech_id })
            .or_else(|| refurbished.then_some(MandatoryChoice::Refurbishment));
        out.extend(choice);
    }
    out
}

/// Expiry year of the plant a mandatory measure replaces, within the period.
fn due_year(choice: &MandatoryChoice, expired: &[&RemovedInstance], catalog: &Catalog, period: Period) -> i32 {
    let matched = match choice {
        MandatoryChoice::Install { tech_id } => {
            let kind = catalog.tech(tech_id).ok().map(|s| s.kind);
            let same_role = |r: &&&RemovedInstance| {
                let other = catalog.tech(&r.instance.tech_id).ok().map(|s| s.kind);
                match (kind, other) {
                    (Some(a), Some(b)) => [Service::Heat, Service::Cooling, Service::Grid].iter().any(|s| s.served_by(a) && s.served_by(b)),
                    _ => false,
                }
            };
            expired
                .iter()
                .filter(|r| &r.instance.tech_id == tech_id)
                .map(|r| r.expiry_year)
                .min()
                .or_else(|| expired.iter().filter(same_role).map(|r| r.expiry_year).min())
        }
        MandatoryChoice::Refurbishment => None,
    };
    matched.unwrap_or(period.start + 1).clamp(period.start + 1, period.end)
}

fn mandatory_with_years(sol: &BuildingSolution, initial: &Building, removed: &[RemovedInstance], catalog: &Catalog, period: Period) -> Vec<(MandatoryChoice, i32)> {
    let expired: Vec<&RemovedInstance> = removed.iter().filter(|r| r.building_id == initial.id).collect();
    let instances: Vec<&TechnologyInstance> = expired.iter().map(|r| &r.instance).collect();
    select_mandatory(sol, initial, &instances, catalog)
        .into_iter()
        .map(|c| {
            let y = due_year(&c, &expired, catalog, period);
            (c, y)
        })
        .collect()
}

fn install_policy(mandatory: &[(MandatoryChoice, i32)]) -> InstallPolicy {
    let techs: BTreeSet<String> = mandatory
        .iter()
        .filter_map(|(c, _)| match c {
            MandatoryChoice::Install { tech_id } => Some(tech_id.clone()),
            MandatoryChoice::Refurbishment => None,
        })
        .collect();
    if techs.is_empty() {
        InstallPolicy::Forbidden
    } else {
        InstallPolicy::Only(techs)
    }
}

/// Measures implied by a solution relative to the building's stage-start stock.
pub fn derive_measures(initial: &Building, sol: &BuildingSolution, mandatory: &[(MandatoryChoice, i32)], score: ReductionScore) -> Vec<Measure> {
    let state = initial.refurb_state.variant();
    let mut out = Vec::new();
    let mut push = |kind: MeasureKind, class: DurationClass, due: Option<i32>| {
        out.push(Measure {
            building_id: initial.id.clone(),
            kind,
            category: if due.is_some() { MeasureCategory::Mandatory } else { MeasureCategory::Voluntary },
            class,
            reduction_score: score,
            due_year: due,
            implementation_year: None,
        });
    };
    let due_of = |c: &MandatoryChoice| mandatory.iter().find(|(m, _)| m == c).map(|(_, y)| *y);
    if sol.chosen_variant != state {
        push(
            MeasureKind::Refurbishment { added: sol.chosen_variant.added_to(state), variant: sol.chosen_variant },
            DurationClass::Renovation,
            due_of(&MandatoryChoice::Refurbishment),
        );
    }
    for inst in &sol.installs {
        let due = due_of(&MandatoryChoice::Install { tech_id: inst.tech_id.clone() });
        push(MeasureKind::PlantInstall { tech_id: inst.tech_id.clone(), size: inst.size }, DurationClass::PlantConversion, due);
    }
    for id in &sol.dismantles {
        let tech_id = initial.installed.iter().find(|i| &i.id == id).map(|i| i.tech_id.clone()).unwrap_or_default();
        push(MeasureKind::PlantDismantle { instance_id: id.clone(), tech_id }, DurationClass::PlantConversion, None);
    }
    out
}

/// Outcome of the budget step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CapOutcome {
    /// Mandatory measures first, then admitted voluntary measures in rank order.
    pub scheduled: Vec<Measure>,
    pub deferred: Vec<Measure>,
}

fn rank_cmp(a: &Measure, b: &Measure, mode: RankingMode) -> std::cmp::Ordering {
    let (sa, sb) = (a.reduction_score, b.reduction_score);
    let by_score = match mode {
        RankingMode::Cost => sb.cost.total_cmp(&sa.cost),
        RankingMode::Emission => sb.emission.total_cmp(&sa.emission),
        RankingMode::Lexicographic => sb.cost.total_cmp(&sa.cost).then(sb.emission.total_cmp(&sa.emission)),
    };
    by_score.then_with(|| a.building_id.cmp(&b.building_id)).then_with(|| b.class.cmp(&a.class))
}

/// Schedule mandatory measures unconditionally and admit voluntary measures
/// as (building, class) units in score order until each class budget is used.
pub fn rank_and_cap(measures: &[Measure], budgets: Budgets, mode: RankingMode) -> CapOutcome {
    let mut out = CapOutcome::default();
    out.scheduled.extend(measures.iter().filter(|m| m.category == MeasureCategory::Mandatory).cloned());
    let mut units: Vec<((String, DurationClass), Vec<&Measure>)> = Vec::new();
    for m in measures.iter().filter(|m| m.category == MeasureCategory::Voluntary) {
        match units.iter_mut().find(|(k, _)| *k == m.unit()) {
            Some((_, v)) => v.push(m),
            None => units.push((m.unit(), vec![m])),
        }
    }
    units.sort_by(|a, b| rank_cmp(a.1[0], b.1[0], mode));
    let mut left = budgets;
    for (_, members) in units {
        let slot = match members[0].class {
            DurationClass::Renovation => &mut left.renovation,
            DurationClass::PlantConversion => &mut left.conversion,
        };
        let target = if *slot > 0 {
            *slot -= 1;
            &mut out.scheduled
        } else {
            &mut out.deferred
        };
        target.extend(members.into_iter().cloned());
    }
    out
}

/// Assign implementation years within `(period.start, period.end]`.
///
/// Voluntary units take years in the given order, at most `annual` units per
/// class and year. Mandatory measures take their due year, or the first year.
pub fn interpolate_years(scheduled: &[Measure], period: Period, annual: Budgets) -> Result<Vec<Measure>> {
    let first = period.start + 1;
    let mut out = scheduled.to_vec();
    let mut unit_year: BTreeMap<(String, DurationClass), i32> = BTreeMap::new();
    let mut used: BTreeMap<(i32, DurationClass), u32> = BTreeMap::new();
    for m in out.iter_mut() {
        if m.category == MeasureCategory::Mandatory {
            m.implementation_year = Some(m.due_year.unwrap_or(first).clamp(first, period.end));
            continue;
        }
        if let Some(&y) = unit_year.get(&m.unit()) {
            m.implementation_year = Some(y);
            continue;
        }
        let cap = match m.class {
            DurationClass::Renovation => annual.renovation,
            DurationClass::PlantConversion => annual.conversion,
        };
        let year = period
            .calendar()
            .find(|y| used.get(&(*y, m.class)).copied().unwrap_or(0) < cap)
            .ok_or_else(|| Error::Invalid(format!("{}: more {:?} measures than annual budgets allow in {}..{}", m.building_id, m.class, first, period.end)))?;
        *used.entry((year, m.class)).or_default() += 1;
        unit_year.insert(m.unit(), year);
        m.implementation_year = Some(year);
    }
    Ok(out)
}

/// Voluntary units admissible over a period: the period budget, but never
/// more than the annual budgets can place year by year.
pub fn period_budgets(frame: &ScenarioFrame, building_count: usize, period: Period) -> Budgets {
    let total = frame.retrofit_budgets(building_count, period);
    let annual = frame.annual_budgets(building_count);
    Budgets {
        renovation: total.renovation.min(annual.renovation * period.years()),
        conversion: total.conversion.min(annual.conversion * period.years()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingStock {
    pub building_id: String,
    pub refurb_state: RefurbState,
    pub installed: Vec<TechnologyInstance>,
}

fn stock_of(twin: &EnergyTwin) -> Vec<BuildingStock> {
    twin.buildings
        .iter()
        .map(|b| BuildingStock { building_id: b.id.clone(), refurb_state: b.refurb_state, installed: b.installed.clone() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// Operation of the existing stock only.
    StatusQuo,
    Optimized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub year: i32,
    pub kind: StageKind,
    pub period: Option<Period>,
    pub budgets: Option<Budgets>,
    pub annual_budgets: Option<Budgets>,
    /// Stock after expired plant was removed.
    pub initial_stock: Vec<BuildingStock>,
    pub removed: Vec<RemovedInstance>,
    pub flagged: Vec<String>,
    /// Buildings whose status quo cannot operate.
    pub no_fallback: Vec<String>,
    pub solutions: Vec<BuildingSolution>,
    pub measures: Vec<Measure>,
    pub deferred: Vec<Measure>,
    pub committed_stock: Vec<BuildingStock>,
    pub report: StageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_id: String,
    pub twin_id: String,
    /// SHA-256 over config, catalog and scenario.
    pub config_hash: String,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingInfo {
    pub id: String,
    pub location: [f64; 2],
    pub building_type: BuildingType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationPath {
    pub provenance: Provenance,
    pub config: PathwayConfig,
    pub buildings: Vec<BuildingInfo>,
    pub stages: Vec<Stage>,
    pub diagnostics: Vec<Diagnostic>,
}

impl TransformationPath {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(format!("path serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<TransformationPath> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("path document: {e}")))
    }

    pub fn stage(&self, year: i32) -> Option<&Stage> {
        self.stages.iter().find(|s| s.year == year)
    }
}

pub fn config_hash(config: &PathwayConfig, catalog: &Catalog, frame: &ScenarioFrame) -> String {
    let mut h = Sha256::new();
    for part in [
        serde_json::to_vec(config).expect("config serializes"),
        serde_json::to_vec(catalog).expect("catalog serializes"),
        serde_json::to_vec(frame).expect("scenario serializes"),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(&part);
    }
    format!("{:x}", h.finalize())
}

pub fn run_pathway(twin: &EnergyTwin, catalog: &Catalog, frame: &ScenarioFrame, config: &PathwayConfig) -> Result<TransformationPath> {
    run_pathway_with_backend(twin, catalog, frame, config, &ReferenceBackend)
}

pub fn run_pathway_with_backend(twin: &EnergyTwin, catalog: &Catalog, frame: &ScenarioFrame, config: &PathwayConfig, backend: &dyn Backend) -> Result<TransformationPath> {
    twin.validate()?;
    catalog.validate()?;
    let frame = config.effective_frame(frame)?;
    let years = config.stage_years(&frame)?;
    let native = twin.timesteps().ok_or_else(|| Error::Invalid("twin has no demand profiles".into()))?;
    let model_config = config.model_config();
    let mut stock = twin.clone();
    let mut stages = Vec::with_capacity(years.len());
    let mut diagnostics = Vec::new();
    let mut previous = twin.meta.base_year;
    for (k, &year) in years.iter().enumerate() {
        let ctx = StageContext::new(&twin.meta, native, &frame, year, config.resolution)?;
        let stage = if k == 0 && year <= twin.meta.base_year {
            status_quo_stage(&stock, catalog, &frame, &ctx, &model_config, backend, &mut diagnostics)?
        } else {
            let period = Period { start: previous, end: year };
            optimized_stage(&stock, catalog, &frame, &ctx, &model_config, config.ranking_mode, period, backend, &mut diagnostics)?
        };
        apply_stock(&mut stock, &stage.committed_stock);
        previous = year;
        stages.push(stage);
    }
    Ok(TransformationPath {
        provenance: Provenance {
            scenario_id: frame.id.clone(),
            twin_id: twin.meta.id.clone(),
            config_hash: config_hash(config, catalog, &frame),
            backend: backend.name().to_string(),
        },
        config: config.clone(),
        buildings: twin
            .buildings
            .iter()
            .map(|b| BuildingInfo { id: b.id.clone(), location: b.location, building_type: b.building_type })
            .collect(),
        stages,
        diagnostics,
    })
}

fn apply_stock(twin: &mut EnergyTwin, stock: &[BuildingStock]) {
    for (b, s) in twin.buildings.iter_mut().zip(stock) {
        debug_assert_eq!(b.id, s.building_id);
        b.refurb_state = s.refurb_state;
        b.installed = s.installed.clone();
    }
}

fn note(diagnostics: &mut Vec<Diagnostic>, year: i32, building: &str, message: impl Into<String>) {
    let message = message.into();
    log::warn!("{year} {building}: {message}");
    diagnostics.push(Diagnostic { stage_year: year, building_id: building.to_string(), message });
}

fn status_quo_stage(
    stock: &EnergyTwin,
    catalog: &Catalog,
    frame: &ScenarioFrame,
    ctx: &StageContext,
    config: &ModelConfig,
    backend: &dyn Backend,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Stage> {
    let year = ctx.year;
    let pre = preprocess_stage(stock, catalog, year)?;
    let sq = evaluate_status_quo(&pre.twin, catalog, ctx, config, backend);
    for (id, msg) in &sq.failures {
        note(diagnostics, year, id, format!("status quo: {msg}"));
    }
    let solutions: Vec<BuildingSolution> = sq.solutions.into_values().collect();
    let report = aggregate_stage(year, &solutions, &[], pre.twin.buildings.len(), frame.annual_budgets(pre.twin.buildings.len()));
    Ok(Stage {
        year,
        kind: StageKind::StatusQuo,
        period: None,
        budgets: None,
        annual_budgets: None,
        initial_stock: stock_of(&pre.twin),
        removed: pre.removed,
        flagged: pre.flagged,
        no_fallback: sq.failures.keys().cloned().collect(),
        solutions,
        measures: Vec::new(),
        deferred: Vec::new(),
        committed_stock: stock_of(&pre.twin),
        report,
    })
}

/// Per-building working state within one optimized stage.
struct Plan<'a> {
    building: &'a Building,
    unrestricted: Option<BuildingSolution>,
    status_quo: Option<BuildingSolution>,
    mandatory: Vec<(MandatoryChoice, i32)>,
    score: ReductionScore,
}

#[allow(clippy::too_many_arguments)]
fn optimized_stage(
    stock: &EnergyTwin,
    catalog: &Catalog,
    frame: &ScenarioFrame,
    ctx: &StageContext,
    config: &ModelConfig,
    ranking: RankingMode,
    period: Period,
    backend: &dyn Backend,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Stage> {
    let year = ctx.year;
    let pre = preprocess_stage(stock, catalog, year)?;
    let twin = &pre.twin;
    let n = twin.buildings.len();
    let unrestricted = optimize_stage_unrestricted(twin, catalog, ctx, config, backend);
    let status_quo = evaluate_status_quo(twin, catalog, ctx, config, backend);
    for (id, msg) in &unrestricted.failures {
        note(diagnostics, year, id, format!("unrestricted solve: {msg}"));
    }

    let mut plans: Vec<Plan> = twin
        .buildings
        .iter()
        .map(|b| Plan {
            building: b,
            unrestricted: unrestricted.solutions.get(&b.id).cloned(),
            status_quo: status_quo.solutions.get(&b.id).cloned(),
            mandatory: Vec::new(),
            score: ReductionScore::default(),
        })
        .collect();
    let no_fallback: Vec<String> = plans.iter().filter(|p| p.status_quo.is_none()).map(|p| p.building.id.clone()).collect();

    // Mandatory choice and the fallback against which scores are measured.
    let mut minimal_configs: BTreeMap<String, ModelConfig> = BTreeMap::new();
    for p in plans.iter_mut() {
        let Some(sol) = &p.unrestricted else { continue };
        if p.status_quo.is_some() {
            continue;
        }
        p.mandatory = mandatory_with_years(sol, p.building, &pre.removed, catalog, period);
        if p.mandatory.is_empty() {
            note(diagnostics, year, &p.building.id, "no status quo fallback and no replacement in the plan");
            continue;
        }
        let state = p.building.refurb_state.variant();
        let variant = if p.mandatory.iter().any(|(c, _)| *c == MandatoryChoice::Refurbishment) { sol.chosen_variant } else { state };
        let freeze = DecisionFreeze { variant: Some(variant), installs: install_policy(&p.mandatory), keep_all: true, ..Default::default() };
        minimal_configs.insert(p.building.id.clone(), ModelConfig { freeze, ..config.clone() });
    }
    let with_minimal: Vec<&Building> = plans.iter().filter(|p| minimal_configs.contains_key(&p.building.id)).map(|p| p.building).collect();
    let minimal = solve_buildings(&with_minimal, catalog, ctx, backend, |b| minimal_configs.get(&b.id).cloned());
    for p in plans.iter_mut() {
        let Some(sol) = &p.unrestricted else { continue };
        let reference = p.status_quo.as_ref().or_else(|| minimal.solutions.get(&p.building.id));
        match reference {
            Some(r) => {
                p.score = ReductionScore {
                    cost: r.total_cost() - sol.total_cost(),
                    emission: r.emissions.annual() - sol.emissions.annual(),
                };
            }
            None if !p.mandatory.is_empty() => {
                note(diagnostics, year, &p.building.id, "minimal replacement infeasible; scoring against the unrestricted plan");
            }
            None => {}
        }
    }

    let measures: Vec<Measure> = plans
        .iter()
        .filter_map(|p| p.unrestricted.as_ref().map(|s| derive_measures(p.building, s, &p.mandatory, p.score)))
        .flatten()
        .collect();
    let budgets = period_budgets(frame, n, period);
    let annual = frame.annual_budgets(n);
    let capped = rank_and_cap(&measures, budgets, ranking);

    // Which classes each building may still change.
    let scheduled_units: BTreeSet<(String, DurationClass)> =
        capped.scheduled.iter().filter(|m| m.category == MeasureCategory::Voluntary).map(Measure::unit).collect();
    let mut conversion_left = budgets.conversion - scheduled_units.iter().filter(|u| u.1 == DurationClass::PlantConversion).count() as u32;
    let mut renovation_free: BTreeSet<String> = BTreeSet::new();
    let mut plant_free: BTreeSet<String> = BTreeSet::new();
    for (id, class) in &scheduled_units {
        match class {
            DurationClass::Renovation => renovation_free.insert(id.clone()),
            DurationClass::PlantConversion => plant_free.insert(id.clone()),
        };
    }
    // Buildings denied renovation may still convert plant while budget remains.
    let mut denied_renovation: Vec<&Measure> = capped.deferred.iter().filter(|m| m.class == DurationClass::Renovation).collect();
    denied_renovation.sort_by(|a, b| rank_cmp(a, b, ranking));
    for m in denied_renovation {
        if !plant_free.contains(&m.building_id) && conversion_left > 0 {
            conversion_left -= 1;
            plant_free.insert(m.building_id.clone());
        }
    }

    let mut reopt_configs: BTreeMap<String, ModelConfig> = BTreeMap::new();
    for p in &plans {
        let id = &p.building.id;
        let Some(sol) = &p.unrestricted else { continue };
        let wants = |c: DurationClass| measures.iter().any(|m| &m.building_id == id && m.category == MeasureCategory::Voluntary && m.class == c);
        let (reno, plant) = (renovation_free.contains(id), plant_free.contains(id));
        if (reno || !wants(DurationClass::Renovation)) && (plant || !wants(DurationClass::PlantConversion)) {
            continue;
        }
        let state = p.building.refurb_state.variant();
        let variant = if reno || p.mandatory.iter().any(|(c, _)| *c == MandatoryChoice::Refurbishment) { sol.chosen_variant } else { state };
        let (installs, keep_all) = if plant { (InstallPolicy::Free, false) } else { (install_policy(&p.mandatory), true) };
        let freeze = DecisionFreeze { variant: Some(variant), installs, keep_all, ..Default::default() };
        reopt_configs.insert(id.clone(), ModelConfig { freeze, ..config.clone() });
    }
    let reopt_buildings: Vec<&Building> = plans.iter().filter(|p| reopt_configs.contains_key(&p.building.id)).map(|p| p.building).collect();
    let reopt = solve_buildings(&reopt_buildings, catalog, ctx, backend, |b| reopt_configs.get(&b.id).cloned());

    // Final plans, measures and implementation years.
    let mut finals: Vec<(&Plan, BuildingSolution)> = Vec::new();
    // Buildings left with only their unrestricted plan: every change is required.
    let mut forced: BTreeSet<String> = BTreeSet::new();
    for p in &plans {
        let id = &p.building.id;
        let Some(unr) = &p.unrestricted else {
            if let Some(sq) = &p.status_quo {
                finals.push((p, sq.clone()));
            }
            continue;
        };
        let sol = match reopt_configs.contains_key(id).then(|| reopt.solutions.get(id)) {
            None => unr.clone(),
            Some(Some(s)) => s.clone(),
            Some(None) => {
                let msg = reopt.failures.get(id).cloned().unwrap_or_default();
                if let Some(sq) = &p.status_quo {
                    note(diagnostics, year, id, format!("capped re-solve failed ({msg}); keeping the status quo"));
                    sq.clone()
                } else if let Some(s) = minimal.solutions.get(id) {
                    note(diagnostics, year, id, format!("capped re-solve failed ({msg}); using the minimal replacement"));
                    s.clone()
                } else {
                    note(diagnostics, year, id, format!("capped re-solve failed ({msg}); no restricted alternative, plan treated as required"));
                    forced.insert(id.clone());
                    unr.clone()
                }
            }
        };
        finals.push((p, sol));
    }
    let mut final_measures: Vec<Measure> = Vec::new();
    for (p, sol) in &finals {
        if p.unrestricted.is_none() {
            continue;
        }
        let mandatory = if p.status_quo.is_none() { mandatory_with_years(sol, p.building, &pre.removed, catalog, period) } else { Vec::new() };
        let mut ms = derive_measures(p.building, sol, &mandatory, p.score);
        if forced.contains(&p.building.id) {
            for m in ms.iter_mut().filter(|m| m.category == MeasureCategory::Voluntary) {
                m.category = MeasureCategory::Mandatory;
                m.due_year = Some(period.start + 1);
            }
        }
        final_measures.extend(ms);
    }
    let mut ordered: Vec<Measure> = final_measures.iter().filter(|m| m.category == MeasureCategory::Mandatory).cloned().collect();
    let mut voluntary: Vec<Measure> = final_measures.into_iter().filter(|m| m.category == MeasureCategory::Voluntary).collect();
    voluntary.sort_by(|a, b| rank_cmp(a, b, ranking));
    ordered.extend(voluntary);
    let scheduled = interpolate_years(&ordered, period, annual)?;

    // Commit: kept plant plus new installs dated by their measure.
    let mut committed = Vec::with_capacity(n);
    let solved: BTreeMap<&str, &BuildingSolution> = finals.iter().map(|(p, s)| (p.building.id.as_str(), s)).collect();
    for b in &twin.buildings {
        let Some(sol) = solved.get(b.id.as_str()) else {
            committed.push(BuildingStock { building_id: b.id.clone(), refurb_state: b.refurb_state, installed: b.installed.clone() });
            continue;
        };
        let keep: BTreeSet<&String> = sol.keeps.iter().collect();
        let mut installed: Vec<TechnologyInstance> = b.installed.iter().filter(|i| keep.contains(&i.id)).cloned().collect();
        for inst in &sol.installs {
            let y = scheduled
                .iter()
                .find(|m| m.building_id == b.id && matches!(&m.kind, MeasureKind::PlantInstall { tech_id, .. } if *tech_id == inst.tech_id))
                .and_then(|m| m.implementation_year)
                .unwrap_or(period.start + 1);
            let mut id = format!("{}-{y}", inst.tech_id);
            let mut k = 2;
            while installed.iter().any(|i| i.id == id) {
                id = format!("{}-{y}-{k}", inst.tech_id);
                k += 1;
            }
            installed.push(TechnologyInstance { id, tech_id: inst.tech_id.clone(), size: inst.size, install_year: y });
        }
        committed.push(BuildingStock { building_id: b.id.clone(), refurb_state: RefurbState::from_variant(sol.chosen_variant), installed });
    }

    let solutions: Vec<BuildingSolution> = finals.into_iter().map(|(_, s)| s).collect();
    let report = aggregate_stage(year, &solutions, &scheduled, n, annual);
    Ok(Stage {
        year,
        kind: StageKind::Optimized,
        period: Some(period),
        budgets: Some(budgets),
        annual_budgets: Some(annual),
        initial_stock: stock_of(twin),
        removed: pre.removed,
        flagged: pre.flagged,
        no_fallback,
        solutions,
        measures: scheduled,
        deferred: capped.deferred,
        committed_stock: committed,
        report,
    })
}

/// Stock at the start of the next stage implied by a committed stage.
pub fn age_stock(committed: &[BuildingStock], catalog: &Catalog, year: i32) -> Result<Vec<BuildingStock>> {
    committed
        .iter()
        .map(|s| {
            let mut installed = Vec::new();
            for i in &s.installed {
                if i.install_year + catalog.tech(&i.tech_id)?.lifetime as i32 > year {
                    installed.push(i.clone());
                }
            }
            Ok(BuildingStock { building_id: s.building_id.clone(), refurb_state: s.refurb_state, installed })
        })
        .collect()
}

/// Gas boilers and gas-fired CHP units.
pub fn is_gas_fired(catalog: &Catalog, tech_id: &str) -> bool {
    catalog
        .tech(tech_id)
        .map_or(false, |s| s.carrier_in == Some(crate::catalog::Carrier::Gas) && matches!(s.kind, TechKind::Boiler | TechKind::Chp))
}
