//! Digital energy twin: the building stock each stage starts from.
//!
//! The document is JSON with `meta` and `buildings[]`. Profiles are either
//! inline (`{"values": [...], "resolution": 60}` per vector) or a sidecar CSV
//! reference (`{"csv": "profiles/b01.csv", "resolution": 60}`) with one column
//! per vector and one row per timestep, resolved against the document's
//! directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vector {
    Electricity,
    SpaceHeat,
    HotWater,
    Cooling,
}

impl Vector {
    pub const ALL: [Vector; 4] = [Vector::Electricity, Vector::SpaceHeat, Vector::HotWater, Vector::Cooling];

    pub fn as_str(self) -> &'static str {
        match self {
            Vector::Electricity => "electricity",
            Vector::SpaceHeat => "space_heat",
            Vector::HotWater => "hot_water",
            Vector::Cooling => "cooling",
        }
    }

    pub fn parse(s: &str) -> Option<Vector> {
        Vector::ALL.into_iter().find(|v| v.as_str() == s)
    }

    /// Heat vectors are the ones envelope refurbishment acts on.
    pub fn is_thermal(self) -> bool {
        !matches!(self, Vector::Electricity)
    }
}

impl fmt::Display for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    /// kWh per timestep.
    pub values: Vec<f64>,
    /// Minutes per step.
    pub resolution: u32,
}

impl DemandProfile {
    pub fn hours_per_step(&self) -> f64 {
        self.resolution as f64 / 60.0
    }

    pub fn annual_sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Highest mean power over one step, in kW.
    pub fn peak_kw(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(*v)) / self.hours_per_step()
    }

    fn check(&self, building: &str, field: &str) -> Result<()> {
        if self.resolution == 0 || 1440 % self.resolution != 0 {
            return Err(Error::validation(building, field, format!("resolution {} does not divide 1440", self.resolution)));
        }
        if let Some(k) = self.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(building, field, format!("value {} at step {k}", self.values[k])));
        }
        Ok(())
    }
}

/// Envelope components in bit order of the variant index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Roof,
    Wall,
    Window,
    Cellar,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Roof, Component::Wall, Component::Window, Component::Cellar];

    pub fn bit(self) -> u8 {
        match self {
            Component::Roof => 1,
            Component::Wall => 2,
            Component::Window => 4,
            Component::Cellar => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Roof => "roof",
            Component::Wall => "wall",
            Component::Window => "window",
            Component::Cellar => "cellar",
        }
    }
}

/// One of the 16 refurbishment variants, as a bitmask over [`Component`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Variant(pub u8);

impl Variant {
    pub const COUNT: usize = 16;
    pub const NONE: Variant = Variant(0);
    pub const FULL: Variant = Variant(15);

    pub fn all() -> impl Iterator<Item = Variant> {
        (0..Self::COUNT as u8).map(Variant)
    }

    pub fn contains(self, c: Component) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn components(self) -> impl Iterator<Item = Component> {
        Component::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    pub fn includes(self, other: Variant) -> bool {
        self.0 & other.0 == other.0
    }

    /// Components in `self` that `base` lacks.
    pub fn added_to(self, base: Variant) -> Variant {
        Variant(self.0 & !base.0)
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    /// `"none"` or components joined by `+`, e.g. `"roof+window"`.
    pub fn label(self) -> String {
        if self.0 == 0 {
            return "none".into();
        }
        self.components().map(Component::as_str).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefurbState {
    pub roof: bool,
    pub wall: bool,
    pub window: bool,
    pub cellar: bool,
}

impl RefurbState {
    pub fn variant(self) -> Variant {
        let mut v = 0;
        for (flag, c) in [(self.roof, Component::Roof), (self.wall, Component::Wall), (self.window, Component::Window), (self.cellar, Component::Cellar)] {
            if flag {
                v |= c.bit();
            }
        }
        Variant(v)
    }

    pub fn from_variant(v: Variant) -> Self {
        Self {
            roof: v.contains(Component::Roof),
            wall: v.contains(Component::Wall),
            window: v.contains(Component::Window),
            cellar: v.contains(Component::Cellar),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnologyInstance {
    /// Unique within the building; derived from tech and year when omitted.
    #[serde(default)]
    pub id: String,
    pub tech_id: String,
    /// kW, or kWh for storage.
    pub size: f64,
    pub install_year: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildingType {
    Residential,
    Commercial,
    Public,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    /// `[lon, lat]` in decimal degrees.
    pub location: [f64; 2],
    pub building_type: BuildingType,
    pub construction_year: i32,
    pub roof_area: f64,
    pub open_space_area: f64,
    pub demand: BTreeMap<Vector, DemandProfile>,
    pub refurb_state: RefurbState,
    pub installed: Vec<TechnologyInstance>,
    pub heat_network_access: bool,
}

impl Building {
    pub fn profile(&self, vector: Vector) -> Result<&DemandProfile> {
        self.demand.get(&vector).ok_or_else(|| Error::MissingProfile {
            building: self.id.clone(),
            vector: vector.to_string(),
        })
    }

    pub fn annual_demand(&self, vector: Vector) -> f64 {
        self.demand.get(&vector).map_or(0.0, DemandProfile::annual_sum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinMeta {
    pub id: String,
    /// Year the status quo describes.
    pub base_year: i32,
    #[serde(default)]
    pub synthetic: bool,
    /// Per-step output fraction of rated size for weather-driven technologies,
    /// keyed by the catalog's `availability` name (e.g. `"solar"`).
    #[serde(default)]
    pub availability: BTreeMap<String, DemandProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTwin {
    pub meta: TwinMeta,
    pub buildings: Vec<Building>,
}

// Raw document shapes; sidecar references are resolved into the public types.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarRef {
    csv: String,
    resolution: u32,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawProfiles {
    Sidecar(SidecarRef),
    Inline(BTreeMap<String, DemandProfile>),
}

#[derive(Deserialize)]
struct RawMeta {
    id: String,
    base_year: i32,
    #[serde(default)]
    synthetic: bool,
    #[serde(default)]
    availability: Option<RawProfiles>,
}

#[derive(Deserialize)]
struct RawBuilding {
    id: String,
    location: [f64; 2],
    building_type: BuildingType,
    construction_year: i32,
    roof_area: f64,
    open_space_area: f64,
    demand: RawProfiles,
    #[serde(default)]
    refurb_state: RefurbState,
    #[serde(default)]
    installed: Vec<TechnologyInstance>,
    #[serde(default)]
    heat_network_access: bool,
}

#[derive(Deserialize)]
struct RawTwin {
    meta: RawMeta,
    buildings: Vec<RawBuilding>,
}

fn read_sidecar(base: Option<&Path>, r: &SidecarRef, owner: &str) -> Result<BTreeMap<String, DemandProfile>> {
    let path = match base {
        Some(dir) => dir.join(&r.csv),
        None => PathBuf::from(&r.csv),
    };
    let mut reader = csv::Reader::from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!("{}: row {} has {} fields", path.display(), row + 1, rec.len())));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{}: row {} column {}: '{field}'", path.display(), row + 1, headers[k])))?;
            columns[k].push(v);
        }
    }
    if headers.is_empty() {
        return Err(Error::validation(owner, "demand", format!("{} has no columns", path.display())));
    }
    Ok(headers
        .into_iter()
        .zip(columns)
        .map(|(h, values)| (h, DemandProfile { values, resolution: r.resolution }))
        .collect())
}

fn resolve(raw: RawProfiles, base: Option<&Path>, owner: &str) -> Result<BTreeMap<String, DemandProfile>> {
    match raw {
        RawProfiles::Inline(m) => Ok(m),
        RawProfiles::Sidecar(r) => read_sidecar(base, &r, owner),
    }
}

/// Parse and validate a twin document. Sidecar paths resolve against `base_dir`.
pub fn load_twin<R: Read>(source: R, base_dir: Option<&Path>) -> Result<EnergyTwin> {
    let raw: RawTwin = serde_json::from_reader(source).map_err(|e| Error::Parse(format!("twin document: {e}")))?;
    let availability = match raw.meta.availability {
        Some(a) => resolve(a, base_dir, "meta")?,
        None => BTreeMap::new(),
    };
    let meta = TwinMeta {
        id: raw.meta.id,
        base_year: raw.meta.base_year,
        synthetic: raw.meta.synthetic,
        availability,
    };
    let mut buildings = Vec::with_capacity(raw.buildings.len());
    for rb in raw.buildings {
        let named = resolve(rb.demand, base_dir, &rb.id)?;
        let mut demand = BTreeMap::new();
        for (name, profile) in named {
            let vector = Vector::parse(&name).ok_or_else(|| Error::validation(&rb.id, "demand", format!("unknown vector '{name}'")))?;
            demand.insert(vector, profile);
        }
        let mut installed = rb.installed;
        assign_instance_ids(&mut installed);
        buildings.push(Building {
            id: rb.id,
            location: rb.location,
            building_type: rb.building_type,
            construction_year: rb.construction_year,
            roof_area: rb.roof_area,
            open_space_area: rb.open_space_area,
            demand,
            refurb_state: rb.refurb_state,
            installed,
            heat_network_access: rb.heat_network_access,
        });
    }
    let twin = EnergyTwin { meta, buildings };
    twin.validate()?;
    Ok(twin)
}

/// Load a twin document from a file, resolving sidecars next to it.
pub fn load_twin_file(path: &Path) -> Result<EnergyTwin> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_twin(std::io::BufReader::new(file), path.parent())
}

/// Serialize with all profiles inline.
pub fn write_twin<W: std::io::Write>(twin: &EnergyTwin, sink: W) -> Result<()> {
    serde_json::to_writer(sink, twin).map_err(|e| Error::Parse(format!("twin serialization: {e}")))
}

fn assign_instance_ids(installed: &mut [TechnologyInstance]) {
    let mut taken: HashSet<String> = installed.iter().filter(|i| !i.id.is_empty()).map(|i| i.id.clone()).collect();
    for inst in installed.iter_mut().filter(|i| i.id.is_empty()) {
        let stem = format!("{}-{}", inst.tech_id, inst.install_year);
        let mut id = stem.clone();
        let mut k = 2;
        while taken.contains(&id) {
            id = format!("{stem}-{k}");
            k += 1;
        }
        taken.insert(id.clone());
        inst.id = id;
    }
}

impl EnergyTwin {
    /// Number of steps every profile must have; taken from the first profile found.
    pub fn timesteps(&self) -> Option<(usize, u32)> {
        self.meta
            .availability
            .values()
            .chain(self.buildings.iter().flat_map(|b| b.demand.values()))
            .next()
            .map(|p| (p.values.len(), p.resolution))
    }

    pub fn building(&self, id: &str) -> Option<&Building> {
        self.buildings.iter().find(|b| b.id == id)
    }

    /// Check every invariant of the twin types.
    pub fn validate(&self) -> Result<()> {
        let grid = self.timesteps();
        if let Some((steps, res)) = grid {
            if (steps as u64 * res as u64) % 1440 != 0 || steps == 0 {
                return Err(Error::validation("meta", "timesteps", format!("{steps} steps of {res} min is not a whole number of days")));
            }
        }
        let same_grid = |p: &DemandProfile, owner: &str, field: &str| -> Result<()> {
            p.check(owner, field)?;
            if let Some((steps, res)) = grid {
                if p.values.len() != steps || p.resolution != res {
                    return Err(Error::validation(
                        owner,
                        field,
                        format!("{} steps at {} min, expected {steps} at {res} min", p.values.len(), p.resolution),
                    ));
                }
            }
            Ok(())
        };
        for (name, p) in &self.meta.availability {
            same_grid(p, "meta", &format!("availability.{name}"))?;
            if let Some(v) = p.values.iter().find(|v| **v > 1.0) {
                return Err(Error::validation("meta", &format!("availability.{name}"), format!("fraction {v} above 1")));
            }
        }
        let mut seen = HashSet::new();
        for b in &self.buildings {
            if b.id.is_empty() {
                return Err(Error::validation("<empty>", "id", "building id is empty"));
            }
            if !seen.insert(b.id.as_str()) {
                return Err(Error::DuplicateId(b.id.clone()));
            }
            let [lon, lat] = b.location;
            if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
                return Err(Error::validation(&b.id, "location", format!("[{lon}, {lat}] is not WGS84")));
            }
            if !b.roof_area.is_finite() || b.roof_area < 0.0 {
                return Err(Error::validation(&b.id, "roof_area", format!("{} < 0", b.roof_area)));
            }
            if !b.open_space_area.is_finite() || b.open_space_area < 0.0 {
                return Err(Error::validation(&b.id, "open_space_area", format!("{} < 0", b.open_space_area)));
            }
            if b.construction_year > self.meta.base_year {
                return Err(Error::validation(&b.id, "construction_year", format!("{} after base year", b.construction_year)));
            }
            for (v, p) in &b.demand {
                same_grid(p, &b.id, &format!("demand.{v}"))?;
            }
            let mut ids = HashSet::new();
            for inst in &b.installed {
                if !(inst.size.is_finite() && inst.size > 0.0) {
                    return Err(Error::validation(&b.id, "installed.size", format!("{} for {}", inst.size, inst.tech_id)));
                }
                if inst.install_year > self.meta.base_year {
                    return Err(Error::validation(&b.id, "installed.install_year", format!("{} after base year", inst.install_year)));
                }
                if !ids.insert(inst.id.as_str()) {
                    return Err(Error::validation(&b.id, "installed.id", format!("duplicate instance id '{}'", inst.id)));
                }
            }
        }
        Ok(())
    }

    /// Σ space heat + hot water over all buildings, kWh.
    pub fn total_heat_demand(&self) -> f64 {
        self.buildings
            .iter()
            .map(|b| b.annual_demand(Vector::SpaceHeat) + b.annual_demand(Vector::HotWater))
            .sum()
    }
}

/// Years of service left; 0 means expired.
pub fn remaining_lifetime(inst: &TechnologyInstance, lifetime: u32, at_year: i32) -> u32 {
    (inst.install_year + lifetime as i32 - at_year).max(0) as u32
}

/// Variants reachable from the building's current state without undoing work.
pub fn admissible_refurb_variants(b: &Building) -> BTreeSet<Variant> {
    let state = b.refurb_state.variant();
    Variant::all().filter(|v| v.includes(state)).collect()
}

/// Maximum mean power of a demand vector, kW.
pub fn peak_demand(b: &Building, vector: Vector) -> Result<f64> {
    Ok(b.profile(vector)?.peak_kw())
}
