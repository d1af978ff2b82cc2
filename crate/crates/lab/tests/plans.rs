use rankone_core::correlation::BlockCounter;
use rankone_core::operator::{limit_scan, ScanConfig};
use rankone_core::{catalog, Tower};
use rankone_lab::plan::{construction_lines, DepthMode};
use rankone_lab::report::Status;
use rankone_lab::{emit_report, parse_config, run_plan, ConfigError, OutputFormat};
use serde_json::Value;

const MINIMAL: &str = "\
construction.catalog = modified-chacon
plan.engine = block
experiment.scan.kind = limit-scan
experiment.scan.lags = -h[J-2]
";

fn strip_wall_time(text: &str) -> String {
    let mut v: Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_seconds");
    serde_json::to_string_pretty(&v).unwrap()
}

#[test]
fn minimal_plan_resolves_defaults() {
    let plan = parse_config(MINIMAL).unwrap_or_else(|e| panic!("{e}"));
    let ctx = &plan.context;
    assert_eq!(ctx.base, 3);
    assert_eq!(ctx.level(ctx.base), 13);
    // Largest J with l_J <= 10^7: l_15 = 7174453.
    assert_eq!(ctx.depth, 15);
    assert_eq!(plan.depth_mode, DepthMode::Budget(10_000_000));
    let echo = plan.echo();
    assert_eq!(echo["base_mode"], "auto");
    assert_eq!(echo["experiments"][0]["params"]["window"], 8);
    assert_eq!(echo["experiments"][0]["params"]["lags"][0]["lag"], -797161);
    assert_eq!(echo["output"]["format"], "json");
}

#[test]
fn limit_scan_matches_direct_classification() {
    let plan = parse_config(MINIMAL).unwrap_or_else(|e| panic!("{e}"));
    let report = run_plan(&plan);
    let scan = report.get("scan").unwrap();
    assert_eq!(scan.status, Status::Ok);
    let fitted = &scan.result.as_ref().unwrap()["lags"][0]["classification"];

    let realized = catalog("modified-chacon").unwrap().realize(15).unwrap();
    let tower = Tower::new(&realized, 3, 15).unwrap();
    let direct = limit_scan(&tower, &[-797161], &ScanConfig::default(), &BlockCounter).unwrap();
    let c = &direct.lags[0].classification;
    assert_eq!(fitted["theta"].as_f64().unwrap(), c.theta);
    assert_eq!(fitted["residual_max"].as_f64().unwrap(), c.residual_max);
    // Two stages of depth gap leave mass 1/9 on the product term.
    assert!((c.coeff(0) - 4.0 / 9.0).abs() < 0.01 && (c.coeff(1) - 4.0 / 9.0).abs() < 0.01);
    assert!((c.theta - 1.0 / 9.0).abs() < 0.01);
    assert_eq!(scan.classifications[0].coefficients, c.coefficients);
}

#[test]
fn stochastic_schedule_needs_seed() {
    let text = "construction.catalog = stochastic-chacon\nexperiment.s.kind = limit-scan\nexperiment.s.lags = h5\n";
    let err = parse_config(text).unwrap_err();
    assert!(matches!(err, ConfigError::Validation { .. }));
    assert!(err.to_string().contains("seed"));
    let inline = "\
construction.cut_rule = affine
construction.cuts = 1, 1
construction.spacer_rule = bernoulli
construction.bernoulli_a = 1/2
";
    assert!(parse_config(inline).unwrap_err().to_string().contains("seed"));
    let plan = parse_config(&format!("{inline}plan.seed = 3\n")).unwrap();
    assert_eq!(plan.context.seed, Some(3));
    assert_eq!(plan.echo()["construction"]["bernoulli_a"], "1/2");
}

#[test]
fn lag_beyond_cap_is_rejected() {
    let text = "\
construction.catalog = chacon
plan.depth = 12
experiment.far.kind = rigidity
experiment.far.lags = h11
";
    let err = parse_config(text).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("l_J/4"), "{msg}");
    assert!(msg.contains("line 4"), "{msg}");
    // l_12 = 4095, so 1023 is the largest admissible lag.
    assert!(parse_config(&text.replace("h11", "1023")).is_ok());
    assert!(parse_config(&text.replace("h11", "-1024")).is_err());
}

#[test]
fn parse_errors_carry_positions() {
    let err = parse_config("construction.catalog = chacon\nplan.depth\n").unwrap_err();
    match err {
        ConfigError::Parse(p) => assert_eq!((p.line, p.column), (2, 1)),
        other => panic!("{other:?}"),
    }
    let err = parse_config("construction.catalog = chacon\nplan.depth = many\n").unwrap_err();
    match err {
        ConfigError::Parse(p) => assert_eq!((p.line, p.column), (2, 14)),
        other => panic!("{other:?}"),
    }
    let err = parse_config("construction.catalog = nope\n").unwrap_err();
    assert!(err.to_string().contains("line 1"));
    let err = parse_config("construction.catalog = chacon\nexperiment.x.kind = teleport\n").unwrap_err();
    assert!(err.to_string().contains("unknown experiment kind"));
    let err = parse_config("construction.catalog = chacon\nexperiment.x.kind = flow-limit\n").unwrap_err();
    assert!(err.to_string().contains("does not apply"));
}

#[test]
fn same_plan_same_json() {
    let text = "\
construction.catalog = stochastic-chacon
plan.seed = 11
plan.depth = 8
experiment.scan.kind = limit-scan
experiment.scan.lags = h[J-3], 2h[J-3]
experiment.mix.kind = mixing
experiment.mix.tail = 200..240
experiment.tri.kind = triple
experiment.tri.pairs = 1:2, h4:h5
";
    let a = run_plan(&parse_config(text).unwrap()).to_json();
    let b = run_plan(&parse_config(text).unwrap()).to_json();
    assert_eq!(strip_wall_time(&a), strip_wall_time(&b));
    let other = run_plan(&parse_config(&text.replace("seed = 11", "seed = 12")).unwrap()).to_json();
    assert_ne!(strip_wall_time(&a), strip_wall_time(&other));
}

#[test]
fn failing_experiment_is_isolated() {
    let text = "\
construction.catalog = staircase-flow
plan.j0 = 2
plan.depth = 5
experiment.starved.kind = flow-limit
experiment.starved.budget = 10
experiment.fine.kind = flow-limit
experiment.fine.stage = 4
";
    let report = run_plan(&parse_config(text).unwrap());
    assert_eq!(report.experiments.len(), 2);
    assert_eq!(report.experiments[0].status, Status::Error);
    assert!(report.experiments[0].error.as_ref().unwrap().contains("budget"));
    assert!(report.experiments[0].result.is_none());
    assert_eq!(report.experiments[1].status, Status::Ok);
    assert!(report.experiments[1].result.as_ref().unwrap()["residual"].is_number());
    assert_eq!(report.failures(), 1);
}

#[test]
fn empty_plan_emits_empty_array() {
    let dir = tempfile::tempdir().unwrap();
    let plan = parse_config("construction.catalog = dyadic-odometer\n").unwrap();
    let report = run_plan(&plan);
    let paths = emit_report(&report, dir.path(), OutputFormat::Both).unwrap();
    assert_eq!(paths.len(), 1);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&paths[0]).unwrap()).unwrap();
    assert_eq!(v["experiments"], Value::Array(vec![]));
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn matrix_csv_has_one_row_per_entry() {
    let dir = tempfile::tempdir().unwrap();
    let text = "\
construction.catalog = modified-chacon
plan.depth = 9
experiment.scan.kind = limit-scan
experiment.scan.lags = h5..7, -h6, 17
";
    let plan = parse_config(text).unwrap();
    let report = run_plan(&plan);
    emit_report(&report, dir.path(), OutputFormat::Csv).unwrap();
    let dim = plan.context.level(plan.context.base) as usize + 1;
    let matrices = std::fs::read_to_string(dir.path().join("scan.matrices.csv")).unwrap();
    let lines: Vec<&str> = matrices.lines().collect();
    assert_eq!(lines[0], "lag,a,b,value");
    assert_eq!(lines.len() - 1, 5 * dim * dim);
    let classes = std::fs::read_to_string(dir.path().join("scan.classifications.csv")).unwrap();
    let lines: Vec<&str> = classes.lines().collect();
    assert_eq!(lines[0], "lag,coeff_index,coeff,theta,residual");
    assert_eq!(lines.len() - 1, 5 * 17);
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn converge_writes_one_table_per_depth() {
    let dir = tempfile::tempdir().unwrap();
    let text = "\
construction.catalog = modified-chacon
plan.j0 = 3
plan.depth = 9
experiment.conv.kind = converge
experiment.conv.depths = 8, 10, 12
experiment.conv.lags = -h[J-2]
";
    let report = run_plan(&parse_config(text).unwrap());
    let conv = report.get("conv").unwrap();
    assert_eq!(conv.status, Status::Ok);
    let trend = conv.result.as_ref().unwrap()["trend"].as_array().unwrap();
    assert_eq!(trend.len(), 3);
    let residuals: Vec<f64> = trend.iter().map(|t| t["distance_to_product"].as_f64().unwrap()).collect();
    assert!(residuals.iter().all(|r| *r > 0.0));
    emit_report(&report, dir.path(), OutputFormat::Csv).unwrap();
    for d in [8, 10, 12] {
        assert!(dir.path().join(format!("conv.J{d}.matrices.csv")).exists());
    }
}

#[test]
fn json_round_trips_exactly() {
    let text = "\
construction.catalog = spaced-odometer5
plan.depth = 5
experiment.scan.kind = limit-scan
experiment.scan.lags = h3, -h3+1
experiment.rig.kind = rigidity
experiment.rig.lags = h2..3
experiment.rig.matrices = true
experiment.dis.kind = disjointness
experiment.dis.p = 2
experiment.dis.q = 3
experiment.dis.n = 40
";
    let report = run_plan(&parse_config(text).unwrap());
    assert_eq!(report.failures(), 0);
    let json = report.to_json();
    let parsed: Value = serde_json::from_str(&json).unwrap();
    let mut again = serde_json::to_string_pretty(&parsed).unwrap();
    again.push('\n');
    assert_eq!(json, again);
    let first = &report.experiments[1].matrices[0].rows;
    let rig = &report.get("rig").unwrap().result.as_ref().unwrap()["entries"][0]["distance_l1"];
    assert!(rig.as_f64().unwrap().is_finite());
    assert!(first.iter().flatten().all(|x| x.is_finite()));
}

#[test]
fn inline_schedule_lines_round_trip() {
    let text = "\
construction.kind = transformation
construction.h1 = 2
construction.cut_rule = list
construction.cuts = 3, 4
construction.spacer_rule = lists
construction.spacers = 0, 1, 2; 1, 0, 0, 3
construction.bound_spacer = 4
construction.bound_cut = 5
plan.depth = 5
";
    let plan = parse_config(text).unwrap();
    let lines = construction_lines(&plan.context.schedule, None);
    let again = parse_config(&format!("{lines}plan.depth = 5\n")).unwrap();
    assert_eq!(again.context.schedule, plan.context.schedule);
    assert_eq!(again.context.levels[..5], [3, 12, 52, 212, 852]);
}

#[test]
fn budget_picks_deepest_fitting_stage() {
    let plan = parse_config("construction.catalog = chacon\nplan.budget = 1000\n").unwrap();
    // l_J = 2^J - 1; 1023 > 1000 >= 511.
    assert_eq!(plan.context.depth, 9);
    let plan = parse_config("construction.catalog = staircase-flow\nplan.j0 = 3\nplan.budget = 5000\n").unwrap();
    let segments = plan.echo();
    assert_eq!(segments["depth_mode"], "budget");
    assert!(plan.context.depth >= 5);
}
