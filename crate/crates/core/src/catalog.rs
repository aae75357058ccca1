//! Technology and refurbishment parameters.
//!
//! The catalog is a TOML document. A default catalog with placeholder values
//! (`synthetic = true`) ships in `data/default_catalog.toml`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twin::{Building, Component, DemandProfile, TechnologyInstance, Variant, Vector};

const DEFAULT_CATALOG: &str = include_str!("../data/default_catalog.toml");

/// Purchased or on-site energy carriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    Electricity,
    Gas,
    Oil,
    Pellets,
    Woodchips,
    DistrictHeat,
    Heat,
    Cooling,
}

impl Carrier {
    pub fn as_str(self) -> &'static str {
        match self {
            Carrier::Electricity => "electricity",
            Carrier::Gas => "gas",
            Carrier::Oil => "oil",
            Carrier::Pellets => "pellets",
            Carrier::Woodchips => "woodchips",
            Carrier::DistrictHeat => "district_heat",
            Carrier::Heat => "heat",
            Carrier::Cooling => "cooling",
        }
    }

    pub fn parse(s: &str) -> Option<Carrier> {
        [
            Carrier::Electricity,
            Carrier::Gas,
            Carrier::Oil,
            Carrier::Pellets,
            Carrier::Woodchips,
            Carrier::DistrictHeat,
            Carrier::Heat,
            Carrier::Cooling,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }

    /// Burned on site; its emissions are scope 1.
    pub fn is_combustible(self) -> bool {
        matches!(self, Carrier::Gas | Carrier::Oil | Carrier::Pellets | Carrier::Woodchips)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Heat,
    Cooling,
    Electricity,
    Storage,
}

/// Operating semantics of a technology inside the dispatch model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechKind {
    /// Fuel or electricity to heat at fixed efficiency.
    Boiler,
    /// Electricity to heat at a seasonal COP.
    HeatPump,
    /// Roof collector; heat output limited by solar availability.
    SolarThermal,
    /// Fuel to heat plus electricity at a fixed power-to-heat ratio.
    Chp,
    /// Heat network substation.
    HeatExchanger,
    /// Electricity to cooling at a seasonal COP.
    Chiller,
    Photovoltaic,
    ThermalStorage,
    Battery,
    /// Limits grid import and export power.
    GridConnection,
}

impl TechKind {
    pub fn is_storage(self) -> bool {
        matches!(self, TechKind::ThermalStorage | TechKind::Battery)
    }

    /// Dispatchable heat sources that count towards peak coverage.
    pub fn is_firm_heat(self) -> bool {
        matches!(self, TechKind::Boiler | TechKind::HeatPump | TechKind::Chp | TechKind::HeatExchanger)
    }

    pub fn produces_heat(self) -> bool {
        self.is_firm_heat() || self == TechKind::SolarThermal
    }

    /// Output carrier of the main dispatch variable.
    pub fn output(self) -> Carrier {
        match self {
            TechKind::Boiler | TechKind::HeatPump | TechKind::SolarThermal | TechKind::Chp | TechKind::HeatExchanger | TechKind::ThermalStorage => Carrier::Heat,
            TechKind::Chiller => Carrier::Cooling,
            TechKind::Photovoltaic | TechKind::Battery | TechKind::GridConnection => Carrier::Electricity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Siting {
    RoofArea,
    OpenSpace,
    Indoor,
    GridConnection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageParams {
    /// Fraction of content lost per hour.
    pub standing_loss: f64,
    /// One-way efficiency applied on charge and on discharge.
    pub charge_efficiency: f64,
    /// Maximum charge or discharge power per kWh of capacity.
    pub c_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnologySpec {
    #[serde(skip)]
    pub tech_id: String,
    pub sector: Sector,
    pub kind: TechKind,
    /// Input carrier; absent for solar-driven and storage technologies.
    #[serde(default)]
    pub carrier_in: Option<Carrier>,
    pub carrier_out: Vec<Carrier>,
    /// €/kW (€/kWh for storage).
    pub capex_per_kw: f64,
    #[serde(default)]
    pub capex_fixed: f64,
    /// €/kW/yr.
    #[serde(default)]
    pub opex_fixed_per_kw: f64,
    /// Output per unit input for converters; 1 when unused.
    #[serde(default = "one")]
    pub efficiency: f64,
    /// Seasonal COP `[DJF, MAM, JJA, SON]` for heat pumps and chillers.
    #[serde(default)]
    pub cop: Option<[f64; 4]>,
    /// Electricity output per unit heat output for combined heat and power.
    #[serde(default)]
    pub power_to_heat: Option<f64>,
    pub lifetime: u32,
    #[serde(default)]
    pub deconstruction_fixed: f64,
    #[serde(default)]
    pub deconstruction_per_kw: f64,
    /// kgCO₂eq/kW at installation.
    #[serde(default)]
    pub embodied_per_kw: f64,
    /// kgCO₂eq/kW at dismantling.
    #[serde(default)]
    pub recycling_per_kw: f64,
    #[serde(default)]
    pub subsidy_rate: f64,
    pub siting: Siting,
    /// m² per kW for roof- and open-space-sited technologies.
    #[serde(default)]
    pub area_per_kw: f64,
    #[serde(default)]
    pub min_size: f64,
    pub max_size: f64,
    /// Name of the twin availability profile limiting output.
    #[serde(default)]
    pub availability: Option<String>,
    #[serde(default)]
    pub storage: Option<StorageParams>,
    #[serde(default)]
    pub requires_heat_network: bool,
}

fn one() -> f64 {
    1.0
}

impl TechnologySpec {
    /// Gross investment for a plant of `size`, €.
    pub fn capex(&self, size: f64) -> f64 {
        self.capex_fixed + self.capex_per_kw * size
    }

    pub fn deconstruction(&self, size: f64) -> f64 {
        self.deconstruction_fixed + self.deconstruction_per_kw * size
    }

    /// Conversion factor for a season index (0 = DJF).
    pub fn performance(&self, season: usize) -> f64 {
        match self.cop {
            Some(table) => table[season],
            None => self.efficiency,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::validation(&self.tech_id, field, msg));
        if self.lifetime == 0 {
            return bad("lifetime", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.subsidy_rate) {
            return bad("subsidy_rate", format!("{} outside [0, 1]", self.subsidy_rate));
        }
        if self.min_size > self.max_size || self.min_size < 0.0 {
            return bad("min_size", format!("{} vs max_size {}", self.min_size, self.max_size));
        }
        for (field, v) in [
            ("capex_per_kw", self.capex_per_kw),
            ("capex_fixed", self.capex_fixed),
            ("opex_fixed_per_kw", self.opex_fixed_per_kw),
            ("deconstruction_fixed", self.deconstruction_fixed),
            ("deconstruction_per_kw", self.deconstruction_per_kw),
            ("embodied_per_kw", self.embodied_per_kw),
            ("recycling_per_kw", self.recycling_per_kw),
            ("area_per_kw", self.area_per_kw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, format!("{v} must be finite and ≥ 0"));
            }
        }
        if !(self.efficiency > 0.0) {
            return bad("efficiency", format!("{} must be positive", self.efficiency));
        }
        match self.kind {
            TechKind::HeatPump | TechKind::Chiller => match self.cop {
                Some(t) if t.iter().all(|c| *c > 0.0) => {}
                _ => return bad("cop", "seasonal COP table required".into()),
            },
            TechKind::Chp if self.power_to_heat.map_or(true, |r| r <= 0.0) => {
                return bad("power_to_heat", "positive ratio required".into());
            }
            TechKind::ThermalStorage | TechKind::Battery => match &self.storage {
                Some(s) if (0.0..1.0).contains(&s.standing_loss) && s.charge_efficiency > 0.0 && s.charge_efficiency <= 1.0 && s.c_rate > 0.0 => {}
                _ => return bad("storage", "storage parameters required".into()),
            },
            TechKind::Boiler | TechKind::Chp | TechKind::HeatExchanger if self.carrier_in.is_none() => {
                return bad("carrier_in", "converter needs an input carrier".into());
            }
            _ => {}
        }
        if matches!(self.siting, Siting::RoofArea | Siting::OpenSpace) && self.area_per_kw <= 0.0 {
            return bad("area_per_kw", "area-sited technology needs area_per_kw > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationClass {
    PlantConversion,
    Renovation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    /// € per m² of this envelope component.
    pub cost_per_m2: f64,
    /// Component area in m² per m² of roof area.
    pub area_ratio: f64,
    pub space_heat_factor: f64,
    #[serde(default = "one")]
    pub hot_water_factor: f64,
    #[serde(default = "one")]
    pub cooling_factor: f64,
    #[serde(default)]
    pub embodied_per_m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefurbCatalog {
    /// Service life used to annualize envelope investments, years.
    pub lifetime: u32,
    pub components: BTreeMap<Component, ComponentSpec>,
}

/// Derived parameters of one refurbishment variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefurbSpec {
    pub variant: Variant,
    /// €/m² per component contained in the variant.
    pub capex_per_component: BTreeMap<Component, f64>,
    /// Multiplicative factor per thermal vector against the unrefurbished state.
    pub demand_reduction: BTreeMap<Vector, f64>,
    pub duration_class: DurationClass,
}

/// Annualized cost components, €/yr. All fields are non-negative; the
/// residual value enters the objective as a credit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub capex: f64,
    pub capex_subsidy: f64,
    pub opex: f64,
    pub deconstruction: f64,
    pub residual_value: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.capex - self.capex_subsidy + self.opex + self.deconstruction - self.residual_value
    }

    pub fn add(&mut self, other: &CostBreakdown) {
        self.capex += other.capex;
        self.capex_subsidy += other.capex_subsidy;
        self.opex += other.opex;
        self.deconstruction += other.deconstruction;
        self.residual_value += other.residual_value;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub version: String,
    #[serde(default)]
    pub synthetic: bool,
    pub technologies: BTreeMap<String, TechnologySpec>,
    pub refurbishment: RefurbCatalog,
}

impl Catalog {
    pub fn default_catalog() -> Catalog {
        Catalog::from_toml(DEFAULT_CATALOG).expect("shipped catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<Catalog> {
        let mut cat: Catalog = toml::from_str(text).map_err(|e| Error::Parse(format!("catalog: {e}")))?;
        for (id, spec) in cat.technologies.iter_mut() {
            spec.tech_id = id.clone();
        }
        cat.validate()?;
        Ok(cat)
    }

    pub fn load_file(path: &Path) -> Result<Catalog> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Catalog::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for spec in self.technologies.values() {
            spec.validate()?;
        }
        for c in Component::ALL {
            let spec = self
                .refurbishment
                .components
                .get(&c)
                .ok_or_else(|| Error::validation("refurbishment", c.as_str(), "component missing"))?;
            for (field, f) in [("space_heat_factor", spec.space_heat_factor), ("hot_water_factor", spec.hot_water_factor), ("cooling_factor", spec.cooling_factor)] {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::validation("refurbishment", field, format!("{f} outside (0, 1]")));
                }
            }
            if spec.cost_per_m2 < 0.0 || spec.area_ratio < 0.0 || spec.embodied_per_m2 < 0.0 {
                return Err(Error::validation("refurbishment", c.as_str(), "negative cost, area or emission"));
            }
        }
        if self.refurbishment.lifetime == 0 {
            return Err(Error::validation("refurbishment", "lifetime", "must be positive"));
        }
        Ok(())
    }

    pub fn tech(&self, id: &str) -> Result<&TechnologySpec> {
        self.technologies.get(id).ok_or_else(|| Error::UnknownTech(id.to_string()))
    }

    /// Demand factor of `variant` against the unrefurbished state.
    pub fn variant_factor(&self, variant: Variant, vector: Vector) -> f64 {
        variant
            .components()
            .map(|c| {
                let spec = &self.refurbishment.components[&c];
                match vector {
                    Vector::SpaceHeat => spec.space_heat_factor,
                    Vector::HotWater => spec.hot_water_factor,
                    Vector::Cooling => spec.cooling_factor,
                    Vector::Electricity => 1.0,
                }
            })
            .product()
    }

    /// Demand factor of moving a building from `state` to `variant`.
    pub fn relative_factor(&self, state: Variant, variant: Variant, vector: Vector) -> f64 {
        self.variant_factor(variant, vector) / self.variant_factor(state, vector)
    }

    pub fn refurb_spec(&self, variant: Variant) -> RefurbSpec {
        RefurbSpec {
            variant,
            capex_per_component: variant.components().map(|c| (c, self.refurbishment.components[&c].cost_per_m2)).collect(),
            demand_reduction: [Vector::SpaceHeat, Vector::HotWater, Vector::Cooling]
                .into_iter()
                .map(|v| (v, self.variant_factor(variant, v)))
                .collect(),
            duration_class: DurationClass::Renovation,
        }
    }

    /// One-off cost of adding the components of `variant` missing from the building's state, €.
    pub fn refurb_investment(&self, b: &Building, variant: Variant) -> f64 {
        variant
            .added_to(b.refurb_state.variant())
            .components()
            .map(|c| {
                let s = &self.refurbishment.components[&c];
                s.cost_per_m2 * s.area_ratio * b.roof_area
            })
            .sum()
    }

    /// Embodied emissions of the added components, kgCO₂eq.
    pub fn refurb_embodied(&self, b: &Building, variant: Variant) -> f64 {
        variant
            .added_to(b.refurb_state.variant())
            .components()
            .map(|c| {
                let s = &self.refurbishment.components[&c];
                s.embodied_per_m2 * s.area_ratio * b.roof_area
            })
            .sum()
    }

    pub fn residual_value(&self, inst: &TechnologyInstance, at_year: i32) -> Result<f64> {
        Ok(residual_value(self.tech(&inst.tech_id)?, inst, at_year))
    }

    pub fn opportunity_cost_of_dismantle(&self, inst: &TechnologyInstance, at_year: i32) -> Result<f64> {
        Ok(opportunity_cost_of_dismantle(self.tech(&inst.tech_id)?, inst, at_year))
    }
}

/// Straight-line undepreciated capex, €.
pub fn residual_value(spec: &TechnologySpec, inst: &TechnologyInstance, at_year: i32) -> f64 {
    let remaining = crate::twin::remaining_lifetime(inst, spec.lifetime, at_year) as f64;
    let share = (remaining / spec.lifetime as f64).min(1.0);
    (spec.capex(inst.size) * share).max(0.0)
}

/// Foregone residual value plus deconstruction, €.
pub fn opportunity_cost_of_dismantle(spec: &TechnologySpec, inst: &TechnologyInstance, at_year: i32) -> f64 {
    residual_value(spec, inst, at_year) + spec.deconstruction(inst.size)
}

/// Thermal profiles scaled for `variant`; electricity unchanged.
pub fn effective_demand(b: &Building, variant: Variant, catalog: &Catalog) -> Result<BTreeMap<Vector, DemandProfile>> {
    let state = b.refurb_state.variant();
    if !variant.includes(state) {
        return Err(Error::InadmissibleVariant { building: b.id.clone(), variant: variant.0 });
    }
    Ok(b.demand
        .iter()
        .map(|(&vector, p)| {
            let f = if vector.is_thermal() { catalog.relative_factor(state, variant, vector) } else { 1.0 };
            (vector, DemandProfile { values: p.values.iter().map(|v| v * f).collect(), resolution: p.resolution })
        })
        .collect())
}

/// Constant annual payment per € invested over `years` at `rate`.
pub fn annuity_factor(rate: f64, years: u32) -> f64 {
    let n = years as f64;
    if rate.abs() < 1e-12 {
        return 1.0 / n;
    }
    let q = (1.0 + rate).powf(n);
    rate * q / (q - 1.0)
}
