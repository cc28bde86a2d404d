use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpa")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name).display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn assert_schema(doc: &Value, schema: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema);
    let schema = json(path);
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let result = compiled
        .validate(doc)
        .map_err(|errs| errs.map(|e| format!("{} at {}", e, e.instance_path)).collect::<Vec<_>>());
    if let Err(msgs) = result {
        panic!("{schema}: {msgs:?}");
    }
}

fn rows(path: PathBuf) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

/// Simulates a shipped config into `dir/name` and returns the outcome file.
fn simulate(dir: &Path, cfg: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(cfg.trim_end_matches(".toml"));
    let cfg_path = config(cfg);
    let mut args = vec!["simulate", "--config", &cfg_path, "--out-dir", s(&out)];
    args.extend_from_slice(extra);
    ok(fpa(&args));
    out.join("outcomes.csv")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const UNIFORM_ONE_COMPONENT: &str = r#"
seed = 11
[simulate]
sample_size = 50000
[simulate.model]
model = "benchmark"
n_lo = 3
weights = [1.0]
[simulate.model.value]
kind = "uniform"
lo = 0.0
hi = 1.0
[detection]
h0 = 0.3
[estimate]
n_lo = 3
"#;

#[test]
fn simulate_is_deterministic_and_documented() {
    let dir = TempDir::new().unwrap();
    let a = simulate(dir.path(), "sqrt_benchmark.toml", &[]);
    let b_dir = dir.path().join("again");
    ok(fpa(&["simulate", "--config", &config("sqrt_benchmark.toml"), "--out-dir", s(&b_dir)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(b_dir.join("outcomes.csv")).unwrap());

    let records = rows(a.clone());
    assert_eq!(records.len(), 100_000);
    assert!(records.iter().all(|r| &r[1] == "1" && &r[2] == "0"));

    let manifest = json(a.with_file_name("run_manifest.json"));
    assert_schema(&manifest, "run_manifest.schema.json");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest, {
        let mut m = json(b_dir.join("run_manifest.json"));
        m["config"]["out_dir"] = manifest["config"]["out_dir"].clone();
        m
    });
    assert_schema(&json(a.with_file_name("outcomes.provenance.json")), "provenance.schema.json");

    let reseeded = dir.path().join("seed8");
    ok(fpa(&["simulate", "--config", &config("sqrt_benchmark.toml"), "--seed", "8", "--out-dir", s(&reseeded)]));
    assert_ne!(fs::read(&a).unwrap(), fs::read(reseeded.join("outcomes.csv")).unwrap());
    assert_ne!(manifest["config_hash"], json(reseeded.join("run_manifest.json"))["config_hash"]);
}

#[test]
fn reserve_outcomes_leave_unsold_prices_empty() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "reserve_known.toml", &[]);
    let records = rows(csv);
    let unsold: Vec<_> = records.iter().filter(|r| &r[1] == "0").collect();
    assert!(!unsold.is_empty());
    assert!(unsold.iter().all(|r| r[0].is_empty()));
    assert!(records.iter().any(|r| &r[2] == "1"));
}

#[test]
fn detect_finds_the_two_discontinuities() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "sqrt_benchmark.toml", &[]);
    let out = dir.path().join("detect");
    ok(fpa(&["detect", "--input", s(&csv), "--h0", "0.3", "--out-dir", s(&out)]));
    let jumps = rows(out.join("jumps.csv"));
    assert_eq!(jumps.len(), 2);
    for (row, target) in jumps.iter().zip([2.0 / 3.0, 0.8]) {
        let loc: f64 = row[1].parse().unwrap();
        assert!((loc - target).abs() < 0.02, "{loc}");
    }
    assert!(rows(out.join("density.csv")).len() > 1000);
    assert_schema(&json(out.join("run_manifest.json")), "run_manifest.schema.json");
}

#[test]
fn detect_on_a_single_component_has_no_interior_jump() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "uniform.toml", UNIFORM_ONE_COMPONENT);
    let sim = dir.path().join("sim");
    ok(fpa(&["simulate", "--config", s(&cfg), "--out-dir", s(&sim)]));
    let out = dir.path().join("detect");
    ok(fpa(&["detect", "--config", s(&cfg), "--input", s(&sim.join("outcomes.csv")), "--out-dir", s(&out)]));
    assert!(rows(out.join("jumps.csv")).iter().all(|r| &r[4] == "true"));
}

#[test]
fn empty_input_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let empty = write_config(dir.path(), "empty.csv", "");
    let out = fpa(&["detect", "--input", s(&empty), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    let header_only = write_config(dir.path(), "header.csv", "winning_bid,sold,atom\n");
    assert_eq!(code(&fpa(&["detect", "--input", s(&header_only), "--out-dir", s(&dir.path().join("o"))])), 2);
}

#[test]
fn estimate_recovers_the_competition_distribution() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "sqrt_benchmark.toml", &[]);
    let out = dir.path().join("estimate");
    ok(fpa(&["estimate", "--config", &config("sqrt_benchmark.toml"), "--input", s(&csv), "--out-dir", s(&out)]));
    let comp = json(out.join("competition.json"));
    assert_schema(&comp, "competition.schema.json");
    let p2 = comp["weights"][0]["p"].as_f64().unwrap();
    let v_hi = comp["estimate"]["v_hi"].as_f64().unwrap();
    assert!((p2 - 0.5).abs() < 0.05 && (v_hi - 1.0).abs() < 0.05, "p2 {p2}, v_hi {v_hi}");
    assert_eq!(comp["passed"], true);
    assert_schema(&json(out.join("recovery_trace.json")), "recovery_trace.schema.json");
    assert_schema(&json(out.join("run_manifest.json")), "run_manifest.schema.json");

    let hill = rows(out.join("hill_trace.csv"));
    assert!(!hill.is_empty());
    let values = rows(out.join("value_quantile.csv"));
    for r in values.iter().filter(|r| (0.3..0.98).contains(&r[0].parse::<f64>().unwrap())) {
        let (a, v): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!((v - a.sqrt()).abs() < 0.05, "V({a}) = {v}");
    }

    // plot-data CSVs carry the same numbers as the JSON report
    let jumps = rows(out.join("jumps.csv"));
    for (row, j) in jumps.iter().zip(comp["jumps"].as_array().unwrap()) {
        assert_eq!(row[1].parse::<f64>().unwrap(), j["location"].as_f64().unwrap());
        assert_eq!(row[2].parse::<f64>().unwrap(), j["size"].as_f64().unwrap());
    }
}

#[test]
fn recover_from_a_saved_competition_estimate() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "sqrt_benchmark.toml", &[]);
    let est = dir.path().join("estimate");
    ok(fpa(&["estimate", "--config", &config("sqrt_benchmark.toml"), "--input", s(&csv), "--out-dir", s(&est)]));
    let rec = dir.path().join("recover");
    ok(fpa(&["recover", "--input", s(&csv), "--competition", s(&est.join("competition.json")), "--out-dir", s(&rec)]));
    assert_eq!(fs::read(est.join("value_quantile.csv")).unwrap(), fs::read(rec.join("value_quantile.csv")).unwrap());
    let trace = json(rec.join("recovery_trace.json"));
    assert_schema(&trace, "recovery_trace.schema.json");
    assert_eq!(trace["n_hi"], 3);
}

#[test]
fn single_component_estimate_puts_all_mass_on_one_level() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "uniform.toml", UNIFORM_ONE_COMPONENT);
    let sim = dir.path().join("sim");
    ok(fpa(&["simulate", "--config", s(&cfg), "--out-dir", s(&sim)]));
    let out = dir.path().join("estimate");
    ok(fpa(&["estimate", "--config", s(&cfg), "--input", s(&sim.join("outcomes.csv")), "--out-dir", s(&out)]));
    let comp = json(out.join("competition.json"));
    assert_eq!(comp["weights"].as_array().unwrap().len(), 1);
    assert_eq!(comp["weights"][0]["n"], 3);
    assert_eq!(comp["weights"][0]["p"].as_f64(), Some(1.0));
}

#[test]
fn contaminated_sample_exits_with_diagnostics_failure() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "sqrt_benchmark.toml", &[]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // every 50th record replaced by a draw from U(0.8, 1.6)
    for (k, line) in lines.iter_mut().skip(1).step_by(50).enumerate() {
        let u = (k as f64 * 0.618_033_988_749_895).fract();
        *line = format!("{},1,0", 0.8 + 0.8 * u);
    }
    let bad = dir.path().join("contaminated.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("estimate");
    let run = fpa(&["estimate", "--config", &config("sqrt_benchmark.toml"), "--input", s(&bad), "--out-dir", s(&out)]);
    assert_eq!(code(&run), 3, "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stderr).contains("sample_below_value"));
    let comp = json(out.join("competition.json"));
    assert_schema(&comp, "competition.schema.json");
    assert_eq!(comp["passed"], false);
    assert!(!out.join("value_quantile.csv").exists());
}

fn diagnose(cfg: &str, drop_z: bool) -> Value {
    let dir = TempDir::new().unwrap();
    let mut csv = simulate(dir.path(), cfg, &[]);
    if drop_z {
        let text = fs::read_to_string(&csv).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().unwrap().clone();
        let keep: Vec<usize> = (0..header.len()).filter(|&i| &header[i] != "z").collect();
        let stripped = dir.path().join("no_z.csv");
        let mut w = csv::Writer::from_path(&stripped).unwrap();
        w.write_record(keep.iter().map(|&i| &header[i])).unwrap();
        for r in rdr.records() {
            let r = r.unwrap();
            w.write_record(keep.iter().map(|&i| &r[i])).unwrap();
        }
        w.flush().unwrap();
        csv = stripped;
    }
    let out = dir.path().join("diagnose");
    ok(fpa(&["diagnose", "--input", s(&csv), "--out-dir", s(&out)]));
    let doc = json(out.join("endogenous.json"));
    assert_schema(&doc, "endogenous.schema.json");
    assert_schema(&json(out.join("run_manifest.json")), "run_manifest.schema.json");
    if doc["identification"]["route"].as_str().unwrap().starts_with("entry") {
        assert!(!rows(out.join("cost_curve.csv")).is_empty());
    }
    doc
}

#[test]
fn diagnose_reserve_fixture() {
    let doc = diagnose("reserve_known.toml", false);
    assert_eq!(doc["report"]["entry_verdict"], "ReservePrice");
    assert_eq!(doc["report"]["info_verdict"], "BuyersObserveN");
    assert_eq!(doc["identification"]["route"], "reserve_known_n");
    for (p, r) in doc["identification"]["points"].as_array().unwrap().iter().zip([0.5, 0.6]) {
        let q = p["atoms"]["screening"].as_f64().unwrap();
        assert!((q - r).abs() < 0.03, "F(R) = {q} at R = {r}");
        assert_eq!(p["atoms"]["n_potential"], 2);
    }
}

#[test]
fn diagnose_entry_fixture() {
    let doc = diagnose("entry_unknown.toml", false);
    assert_eq!(doc["report"]["entry_verdict"], "EntryCost");
    assert_eq!(doc["report"]["info_verdict"], "BuyersDoNotObserveN");
    assert_eq!(doc["identification"]["route"], "entry_unknown_n");
    assert_eq!(doc["identification"]["system"]["n_potential"], 2);
}

#[test]
fn diagnose_without_instrument_is_inconclusive() {
    let doc = diagnose("reserve_known.toml", true);
    assert_eq!(doc["report"]["entry_verdict"], "Inconclusive");
    assert!(!doc["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn exit_codes_name_the_problem() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "sqrt_benchmark.toml", &[]);
    let o = s(dir.path());

    let bad_theta = fpa(&["estimate", "--input", s(&csv), "--theta", "1.5", "--out-dir", o]);
    assert_eq!(code(&bad_theta), 2);
    assert!(String::from_utf8_lossy(&bad_theta.stderr).contains("estimate.theta"));

    let bad_h0 = fpa(&["detect", "--input", s(&csv), "--h0", "0.6", "--out-dir", o]);
    assert_eq!(code(&bad_h0), 2);
    assert!(String::from_utf8_lossy(&bad_h0.stderr).contains("h0"));

    let missing = fpa(&["detect", "--input", s(&dir.path().join("nope.csv")), "--out-dir", o]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("input"));

    let typo = write_config(dir.path(), "typo.toml", "[detection]\nhzero = 0.3\n");
    let typo_run = fpa(&["detect", "--config", s(&typo), "--input", s(&csv), "--out-dir", o]);
    assert_eq!(code(&typo_run), 2);
    assert!(String::from_utf8_lossy(&typo_run.stderr).contains("hzero"));

    let bad_row = write_config(dir.path(), "bad.csv", "winning_bid,sold,atom\n0.5,1,0\nabc,1,0\n");
    let row_run = fpa(&["detect", "--input", s(&bad_row), "--out-dir", o]);
    assert_eq!(code(&row_run), 2);
    assert!(String::from_utf8_lossy(&row_run.stderr).contains("row"));

    assert_eq!(code(&fpa(&["detect", "--config", s(&dir.path().join("none.toml")), "--input", s(&csv)])), 4);
    let blocked = write_config(dir.path(), "file_in_the_way", "");
    assert_eq!(code(&fpa(&["detect", "--input", s(&csv), "--out-dir", s(&blocked.join("sub"))])), 4);

    let no_sim = write_config(dir.path(), "nosim.toml", "seed = 1\n");
    assert_eq!(code(&fpa(&["simulate", "--config", s(&no_sim), "--out-dir", o])), 2);
}

#[test]
fn flags_override_config_values_in_the_manifest() {
    let dir = TempDir::new().unwrap();
    let csv = simulate(dir.path(), "sqrt_benchmark.toml", &[]);
    let out = dir.path().join("detect");
    ok(fpa(&[
        "detect",
        "--config",
        &config("sqrt_benchmark.toml"),
        "--input",
        s(&csv),
        "--h0",
        "0.25",
        "--out-dir",
        s(&out),
    ]));
    let m = json(out.join("run_manifest.json"));
    assert_eq!(m["config"]["detection"]["h0"], 0.25);
    assert_eq!(m["config"]["detection"]["h1"], 0.5);
    assert_eq!(m["input"]["rows_read"], 100_000);
}
