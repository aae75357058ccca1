//! Acceptance criteria, one PASS or FAIL line each.

mod oracle;
mod solver;
mod suites;

use std::process::{Command, ExitCode};
use std::time::Instant;

use tpath::catalog::{Carrier, Catalog, TechKind};
use tpath::fixture::{generate, FixtureConfig};
use tpath::model::{build_model, ModelConfig, StageContext};
use tpath::pathway::{is_gas_fired, optimize_stage_unrestricted, preprocess_stage, run_pathway, PathwayConfig, StageKind, TransformationPath};
use tpath::scenario::ScenarioFrame;
use tpath::timegrid::Resolution;
use tpath::twin::EnergyTwin;

use suites::Check;

const STAGES: [i32; 3] = [2023, 2030, 2045];

fn desk_config(refurb: f64, conversion: f64, periods: &[i32]) -> PathwayConfig {
    PathwayConfig {
        resolution: Resolution::desk(),
        periods: Some(periods.to_vec()),
        refurb_rate_cap: Some(refurb),
        conversion_rate_cap: Some(conversion),
        ..PathwayConfig::default()
    }
}

struct Runs {
    twin: EnergyTwin,
    catalog: Catalog,
    frame: ScenarioFrame,
    capped: TransformationPath,
    capped_again: TransformationPath,
    loose: TransformationPath,
}

fn runs() -> Runs {
    let twin = generate(&FixtureConfig::default()).twin;
    let catalog = Catalog::default_catalog();
    let frame = ScenarioFrame::reference();
    let cfg = desk_config(0.02, 0.045, &STAGES);
    let capped = run_pathway(&twin, &catalog, &frame, &cfg).expect("capped pathway");
    let capped_again = run_pathway(&twin, &catalog, &frame, &cfg).expect("capped pathway rerun");
    let loose = run_pathway(&twin, &catalog, &frame, &desk_config(0.1, 0.25, &[2023, 2025, 2030, 2045])).expect("loose pathway");
    Runs { twin, catalog, frame, capped, capped_again, loose }
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let catalog = Catalog::default_catalog();
    let frame = ScenarioFrame::reference();
    let ctx = oracle::context(&frame);
    let (mut feasible, mut infeasible) = (0, 0);
    let mut worst = 0.0f64;
    for seed in 0..80u64 {
        let toy = oracle::toy(seed);
        let model = oracle::model_optimum(&toy, &catalog, &ctx).map_err(|e| format!("toy {seed}: {e}"))?;
        let exact = oracle::enumerate(&toy, &catalog, &ctx);
        match (model, exact) {
            (Some(a), Some(b)) => {
                let r = (a - b).abs() / b.abs().max(1.0);
                worst = worst.max(r);
                if r > 1e-6 {
                    return Err(format!("toy {seed}: model {a} vs enumeration {b} (rel {r:e})"));
                }
                feasible += 1;
            }
            (None, None) => infeasible += 1,
            (a, b) => return Err(format!("toy {seed}: model {a:?} vs enumeration {b:?}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 120.0 {
        return Err(format!("took {secs:.1} s"));
    }
    if feasible < 50 {
        return Err(format!("only {feasible} feasible toys"));
    }
    Ok(format!("{feasible} feasible + {infeasible} infeasible toys, worst rel {worst:.1e}, {secs:.1} s"))
}

fn constraint_suite(r: &Runs) -> Check {
    let native = r.twin.timesteps().unwrap();
    let mut solved = 0;
    let mut storage = 0;
    for year in [2030, 2045] {
        let pre = preprocess_stage(&r.twin, &r.catalog, year).map_err(|e| e.to_string())?;
        let ctx = StageContext::new(&r.twin.meta, native, &r.frame, year, Resolution::desk()).map_err(|e| e.to_string())?;
        for b in &pre.twin.buildings {
            let m = build_model(b, &r.catalog, &ctx, &ModelConfig::default()).map_err(|e| format!("{}: {e}", b.id))?;
            let out = milp::solve(&m.request).map_err(|e| format!("{}: {e}", b.id))?;
            if !out.status.has_solution() {
                return Err(format!("{year} {}: {}", b.id, out.status.as_str()));
            }
            suites::constraints(&m, b, &r.catalog, &out.primal, ctx.max_parallel_retrofits).map_err(|e| format!("{year} {e}"))?;
            storage += m.techs.iter().filter(|t| t.storage.as_ref().is_some() && t.capacity.eval(&out.primal) > 0.0).count();
            solved += 1;
        }
    }
    Ok(format!("{solved} building solves, {storage} with storage built"))
}

fn rate_caps(r: &Runs) -> Check {
    let reference = ScenarioFrame::reference();
    if reference.refurb_rate_cap != 0.02 || reference.conversion_rate_cap != 0.045 {
        return Err(format!("reference caps {} / {}", reference.refurb_rate_cap, reference.conversion_rate_cap));
    }
    let a = suites::rate_caps(&r.capped, 0.02, 0.045)?;
    let b = suites::rate_caps(&r.loose, 0.1, 0.25)?;
    Ok(format!("2%/4.5%: {a}; 10%/25%: {b}"))
}

fn gas_and_hp(path: &TransformationPath, catalog: &Catalog) -> Vec<(i32, f64, f64)> {
    path.stages
        .iter()
        .filter(|s| s.kind == StageKind::Optimized)
        .map(|s| {
            let mut gas = 0.0;
            let mut hp = 0.0;
            for sol in &s.solutions {
                for (t, kw) in &sol.capacities {
                    if is_gas_fired(catalog, t) {
                        gas += kw;
                    }
                    if catalog.technologies[t].kind == TechKind::HeatPump {
                        hp += kw;
                    }
                }
            }
            (s.year, gas, hp)
        })
        .collect()
}

fn directional() -> Check {
    let twin = generate(&FixtureConfig { buildings: 12, seed: 7, gas_dominated: true, ..FixtureConfig::default() }).twin;
    let catalog = Catalog::default_catalog();
    let frame = ScenarioFrame::reference();
    let gas = &frame.prices[&Carrier::Gas];
    let el = &frame.prices[&Carrier::Electricity];
    if gas[1] != 13.94 || gas[5] != 27.68 || el[0] != 49.39 || el[5] != 23.59 || frame.co2_price[0] != 80.0 || frame.co2_price[5] != 200.0 {
        return Err("reference trajectory differs from the published table".into());
    }
    let mut cfg = desk_config(1.0, 1.0, &frame.periods.clone());
    cfg.mip_gap = 1e-7;
    let path = run_pathway(&twin, &catalog, &frame, &cfg).map_err(|e| e.to_string())?;
    let series = gas_and_hp(&path, &catalog);
    for w in series.windows(2) {
        let ((y0, g0, h0), (y1, g1, h1)) = (w[0], w[1]);
        if g1 > g0 * (1.0 + 1e-9) + 1e-9 {
            return Err(format!("gas capacity rises {y0}->{y1}: {g0:.2} -> {g1:.2} kW"));
        }
        if h1 < h0 * (1.0 - 1e-9) - 1e-9 {
            return Err(format!("heat pump capacity falls {y0}->{y1}: {h0:.2} -> {h1:.2} kW"));
        }
    }

    // Paired runs: only the gas price changes.
    let native = twin.timesteps().unwrap();
    let mut config = ModelConfig::default();
    config.solve.mip_gap = 1e-9;
    let mut pairs = Vec::new();
    for year in [2025, 2030] {
        let pre = preprocess_stage(&twin, &catalog, year).map_err(|e| e.to_string())?;
        let mut consumption = Vec::new();
        for scale in [1.0, 1.5, 2.5] {
            let mut f = frame.clone();
            for p in f.prices.get_mut(&Carrier::Gas).unwrap() {
                *p *= scale;
            }
            let ctx = StageContext::new(&twin.meta, native, &f, year, Resolution::desk()).map_err(|e| e.to_string())?;
            let sols = optimize_stage_unrestricted(&pre.twin, &catalog, &ctx, &config, &milp::ReferenceBackend);
            if !sols.failures.is_empty() {
                return Err(format!("paired run failures: {:?}", sols.failures));
            }
            let total: f64 = sols.solutions.values().map(|s| s.dispatch.fuel_use.get(&Carrier::Gas).copied().unwrap_or(0.0)).sum();
            consumption.push((scale, total));
        }
        for w in consumption.windows(2) {
            if w[1].1 > w[0].1 * (1.0 + 1e-6) + 1e-6 {
                return Err(format!("{year}: gas use rises with price: x{} {:.0} kWh -> x{} {:.0} kWh", w[0].0, w[0].1, w[1].0, w[1].1));
            }
        }
        let cells: Vec<String> = consumption.iter().map(|(s, c)| format!("x{s} {:.0}", c / 1000.0)).collect();
        pairs.push(format!("{year} [{}] MWh", cells.join(", ")));
    }
    let fmt: Vec<String> = series.iter().map(|(y, g, h)| format!("{y}: gas {g:.0} hp {h:.0}")).collect();
    Ok(format!("{}; gas use {}", fmt.join(", "), pairs.join(", ")))
}

fn chain_and_determinism(r: &Runs) -> Check {
    let a = r.capped.to_json().map_err(|e| e.to_string())?;
    let b = r.capped_again.to_json().map_err(|e| e.to_string())?;
    if a != b {
        return Err("two identical runs serialize differently".into());
    }
    let back = TransformationPath::from_json(&a).map_err(|e| e.to_string())?;
    if back.to_json().map_err(|e| e.to_string())? != a {
        return Err("path document does not round-trip".into());
    }
    let c1 = suites::chain(&r.capped, &r.catalog)?;
    let c2 = suites::chain(&r.loose, &r.catalog)?;
    Ok(format!("{} bytes identical; {c1}; {c2}", a.len()))
}

fn accounting(r: &Runs) -> Check {
    let a = suites::accounting(&r.capped, &r.catalog)?;
    let b = suites::accounting(&r.loose, &r.catalog)?;
    Ok(format!("{a}; {b}"))
}

fn end_to_end(catalog: &Catalog) -> Check {
    let bin = env!("CARGO_BIN_EXE_tpath");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).env_remove("TPATH_SOLVER").env_remove("TPATH_TIME_LIMIT").output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {} {}", out.status, String::from_utf8_lossy(&out.stderr)));
        }
        Ok(())
    };
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    run(&["gen-fixture", "--buildings", "20", "--out", &d("fx")])?;
    run(&["pathway", "--twin", &d("fx/twin.json"), "--out", &d("run"), "--periods", "2023,2030,2045", "--resolution", "rep-days:4x240"])?;
    run(&["report", "--path", &d("run/path.json"), "--out", &d("rep")])?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        return Err(format!("took {secs:.0} s"));
    }
    let text = std::fs::read_to_string(dir.path().join("run/path.json")).map_err(|e| e.to_string())?;
    let path = TransformationPath::from_json(&text).map_err(|e| e.to_string())?;
    if path.stages.len() != 3 {
        return Err(format!("{} stages", path.stages.len()));
    }
    suites::rate_caps(&path, 0.02, 0.045)?;
    suites::chain(&path, catalog)?;
    suites::accounting(&path, catalog)?;
    for y in STAGES {
        for f in [format!("report_{y}.csv"), format!("measures_{y}.csv"), format!("buildings_{y}.geojson")] {
            let a = std::fs::read(dir.path().join("run").join(&f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dir.path().join("rep").join(&f)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{f} differs after report"));
            }
        }
    }
    Ok(format!("exit 0 in {secs:.1} s, suites green on the written path"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, res: Check| {
        match &res {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    };
    report("oracle equivalence", oracle_equivalence());
    let r = runs();
    report("constraint suite", constraint_suite(&r));
    report("rate caps", rate_caps(&r));
    report("directional response", directional());
    report("chain consistency and determinism", chain_and_determinism(&r));
    report("accounting closure", accounting(&r));
    report("solver correctness", solver::correctness());
    report("end-to-end desk run", end_to_end(&r.catalog));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    }
}
