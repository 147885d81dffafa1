use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pilotmatch::models::predict_linear;
use pilotmatch::pilot::fit_propensity;
use pilotmatch::sensitivity::max_gamma;
use pilotmatch::{Dataset, FeatureSpace, Matching, PilotOptions};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pilotmatch"));
    c.env_remove(pilotmatch_cli::SEED_ENV);
    c
}

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["pilotmatch"];
    all.extend_from_slice(args);
    pilotmatch_cli::run(all)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_base_has_2000_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("base.csv");
    assert_eq!(run(&["generate", "--seed", "3", "--out", p(&out)]), 0);
    let ds = Dataset::read_csv(&out).unwrap();
    assert_eq!(ds.n(), 2000);
    assert_eq!(ds.p(), 10);
    assert!(ds.truth.is_some());
}

#[test]
fn generate_rejects_bad_rho() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"scenario": {"name": "base", "rho": 1.5}, "seed": 1}"#).unwrap();
    let out = bin().args(["generate", "--config", p(&cfg), "--out", p(&dir.path().join("x.csv"))]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));

    let out = bin().args(["generate", "--rho", "1.5", "--out", p(&dir.path().join("x.csv"))]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_config_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"scenario": {"name": "base"}, "seed": 1, "colour": 3}"#).unwrap();
    assert_eq!(run(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("x.csv"))]), 2);
}

#[test]
fn generate_same_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    assert_eq!(run(&["generate", "--seed", "9", "--out", p(&a)]), 0);
    assert_eq!(run(&["generate", "--seed", "9", "--out", p(&b)]), 0);
    assert_eq!(run(&["generate", "--seed", "10", "--out", p(&c)]), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn seed_precedence_flag_env_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"scenario": {"name": "base", "n": 50}, "seed": 5}"#).unwrap();
    let gen = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut c = bin();
        c.args(["generate", "--config", p(&cfg), "--out", p(&out)]);
        if let Some(e) = env {
            c.env(pilotmatch_cli::SEED_ENV, e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        assert!(c.status().unwrap().success());
        fs::read(out).unwrap()
    };
    let expect = |seed: u64| {
        let spec = pilotmatch::ScenarioSpec { n: 50, ..pilotmatch::ScenarioSpec::base() };
        pilotmatch::datagen::generate(&spec, seed).unwrap().to_csv_string().into_bytes()
    };
    assert_eq!(gen("c.csv", None, None), expect(5));
    assert_eq!(gen("e.csv", Some("6"), None), expect(6));
    assert_eq!(gen("f.csv", Some("6"), Some("7")), expect(7));
}

#[test]
fn version_mentions_rng_algorithm() {
    let out = bin().arg("--version").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(pilotmatch::VERSION));
    assert!(text.contains(pilotmatch::RNG_ALGORITHM));
}

#[test]
fn match_pilot_emits_four_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("base.csv");
    assert_eq!(run(&["generate", "--seed", "4", "--out", p(&data)]), 0);
    let prefix = dir.path().join("run");
    assert_eq!(run(&["match", "--data", p(&data), "--method", "pilot", "--k", "1", "--seed", "2", "--out-prefix", p(&prefix)]), 0);
    for suffix in ["_matching.csv", "_estimate.json", "_ac.csv", "_ac.svg"] {
        let f = dir.path().join(format!("run{suffix}"));
        assert!(f.exists() && fs::metadata(&f).unwrap().len() > 0, "{suffix}");
    }
    let ds = Dataset::read_csv(&data).unwrap();
    let m = Matching::from_csv_str(&fs::read_to_string(dir.path().join("run_matching.csv")).unwrap(), FeatureSpace::Score2d)
        .unwrap();
    m.check(&ds.t).unwrap();
    assert_eq!(m.sets.len(), ds.n_treated());

    let est: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run_estimate.json")).unwrap()).unwrap();
    assert_eq!(est["seed"], 2);
    assert_eq!(est["estimate"]["n_sets"], ds.n_treated());
    assert!(est["pilot"]["pilot_units"].as_array().unwrap().len() >= ds.n_treated());
    assert!(est["sensitivity"]["gamma_star"].as_f64().unwrap() >= 1.0);

    let svg = fs::read_to_string(dir.path().join("run_ac.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    let ac = fs::read_to_string(dir.path().join("run_ac.csv")).unwrap();
    assert_eq!(ac.lines().count(), ds.n() + 1);
}

#[test]
fn match_full_and_other_methods_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("base.csv");
    assert_eq!(run(&["generate", "--seed", "8", "--n", "400", "--out", p(&data)]), 0);
    for (method, k) in [("mahalanobis", "2"), ("propensity", "full"), ("pilot", "full")] {
        let prefix = dir.path().join(format!("{method}_{k}"));
        assert_eq!(run(&["match", "--data", p(&data), "--method", method, "--k", k, "--out-prefix", p(&prefix)]), 0, "{method} {k}");
    }
}

fn fixture_csv() -> String {
    let rows = [
        [0.9, 0.3, 1.0],
        [-0.4, 1.1, 1.0],
        [1.3, -0.2, 0.0],
        [-0.8, 0.4, 0.0],
        [0.2, -1.0, 0.0],
        [-0.1, 0.7, 0.0],
    ];
    let mut s = String::from("x1,x2,t,y\n");
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&format!("{},{},{},{}\n", r[0], r[1], r[2], i as f64 * 0.5));
    }
    s
}

#[test]
fn propensity_pairs_on_six_units_match_exhaustive_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("six.csv");
    fs::write(&data, fixture_csv()).unwrap();
    let prefix = dir.path().join("six");
    assert_eq!(run(&["match", "--data", p(&data), "--method", "propensity", "--k", "1", "--out-prefix", p(&prefix)]), 0);

    let ds = Dataset::read_csv(&data).unwrap();
    let phi = predict_linear(&fit_propensity(&ds, &PilotOptions::default()).unwrap(), &ds.x).unwrap();
    let (treated, controls) = (ds.treated_indices(), ds.control_indices());
    let mut all = Vec::new();
    for &a in &controls {
        for &b in &controls {
            if a != b {
                let cost = (phi[treated[0]] - phi[a]).abs() + (phi[treated[1]] - phi[b]).abs();
                all.push((cost, vec![(treated[0], a), (treated[1], b)]));
            }
        }
    }
    let best = all.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
    let optimal: Vec<&Vec<(usize, usize)>> = all.iter().filter(|a| a.0 <= best + 1e-9).map(|a| &a.1).collect();
    let m = Matching::from_csv_str(&fs::read_to_string(dir.path().join("six_matching.csv")).unwrap(), FeatureSpace::PropensityScalar)
        .unwrap();
    let mut got: Vec<(usize, usize)> = m.sets.iter().map(|s| (s.treated[0], s.controls[0])).collect();
    got.sort();
    assert!(optimal.contains(&&got), "{got:?} not among {optimal:?}");
}

#[test]
fn match_k_too_large_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("six.csv");
    fs::write(&data, fixture_csv()).unwrap();
    let out = bin()
        .args(["match", "--data", p(&data), "--method", "propensity", "--k", "3", "--out-prefix", p(&dir.path().join("z"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn missing_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(run(&["match", "--data", p(&missing), "--out-prefix", p(&dir.path().join("z"))]), 4);
    assert_eq!(run(&["acplot", "--input", p(&missing), "--out", p(&dir.path().join("z.svg"))]), 4);
}

#[test]
fn bad_usage_exits_2() {
    assert_eq!(run(&["match", "--method", "nearest"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

fn smoke_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("smoke.json");
    fs::write(
        &cfg,
        r#"{"simulation": {"scenario": {"name": "base"}, "methods": ["pilot"], "k_values": [1], "replicates": 2, "base_seed": 11}}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn simulate_smoke_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let start = Instant::now();
    assert_eq!(run(&["simulate", "--config", p(&cfg), "--out", p(&a)]), 0);
    assert!(start.elapsed().as_secs_f64() < 10.0);
    for f in ["results.csv", "aggregates.csv", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(run(&["simulate", "--config", p(&cfg), "--out", p(&b), "--jobs", "1"]), 0);
    for f in ["results.csv", "aggregates.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
}

#[test]
fn simulate_rejects_unknown_keys_and_missing_out() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"simulation": {"scenario": {"name": "base"}, "replicate": 2}}"#).unwrap();
    assert_eq!(run(&["simulate", "--config", p(&bad), "--out", p(&dir.path().join("o"))]), 2);
    let cfg = smoke_config(dir.path());
    assert_eq!(run(&["simulate", "--config", p(&cfg)]), 2);
}

fn pair_fixture(dir: &Path, diffs: &[f64]) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut data = String::from("x1,x2,t,y\n");
    let mut matching = String::from("set_id,role,unit_id\n");
    for (s, d) in diffs.iter().enumerate() {
        let base = (s as f64 * 0.37).sin();
        data.push_str(&format!("{base},0,1,{}\n", base + d));
        data.push_str(&format!("{base},1,0,{base}\n"));
        matching.push_str(&format!("{},treated,{}\n{},control,{}\n", s + 1, 2 * s + 1, s + 1, 2 * s + 2));
    }
    let (dp, mp) = (dir.join("pairs.csv"), dir.join("pairs_matching.csv"));
    fs::write(&dp, data).unwrap();
    fs::write(&mp, matching).unwrap();
    (dp, mp)
}

#[test]
fn sensitivity_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let diffs: Vec<f64> = (0..30).map(|i| 1.0 + ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
    let (dp, mp) = pair_fixture(dir.path(), &diffs);
    let out_json = dir.path().join("gamma.json");
    assert_eq!(run(&["sensitivity", "--matching", p(&mp), "--data", p(&dp), "--out", p(&out_json)]), 0);
    let printed: pilotmatch::SensitivityResult = serde_json::from_str(&fs::read_to_string(&out_json).unwrap()).unwrap();

    let ds = Dataset::read_csv(&dp).unwrap();
    let m = Matching::from_csv_str(&fs::read_to_string(&mp).unwrap(), FeatureSpace::RawCovariates).unwrap();
    let lib = max_gamma(&m, &ds.y, 0.05, 0.01).unwrap();
    assert_eq!(printed.gamma_star, lib.gamma_star);
    assert_eq!(printed.not_significant, lib.not_significant);
    assert_eq!(printed.p_at_gamma.len(), lib.p_at_gamma.len());
    for (a, b) in printed.p_at_gamma.iter().zip(&lib.p_at_gamma) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() <= 1e-12 * b.1.max(1e-300));
    }
    assert!(printed.gamma_star > 1.0);
}

#[test]
fn sensitivity_not_significant_flags_gamma_one() {
    let dir = tempfile::tempdir().unwrap();
    let diffs: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.1 }).collect();
    let (dp, mp) = pair_fixture(dir.path(), &diffs);
    let out_json = dir.path().join("gamma.json");
    assert_eq!(run(&["sensitivity", "--matching", p(&mp), "--data", p(&dp), "--out", p(&out_json)]), 0);
    let res: pilotmatch::SensitivityResult = serde_json::from_str(&fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(res.gamma_star, 1.0);
    assert!(res.not_significant);
}

#[test]
fn sensitivity_alpha_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let (dp, mp) = pair_fixture(dir.path(), &[1.0, 2.0, 0.5]);
    for alpha in ["0", "1", "1.5", "-0.1"] {
        let out = bin()
            .args(["sensitivity", "--matching", p(&mp), "--data", p(&dp), &format!("--alpha={alpha}")])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2), "alpha {alpha}");
    }
}

#[test]
fn acplot_renders_from_match_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    assert_eq!(run(&["generate", "--seed", "1", "--n", "300", "--out", p(&data)]), 0);
    let prefix = dir.path().join("m");
    assert_eq!(run(&["match", "--data", p(&data), "--method", "propensity", "--out-prefix", p(&prefix)]), 0);
    let svg = dir.path().join("again.svg");
    assert_eq!(run(&["acplot", "--input", p(&dir.path().join("m_ac.csv")), "--out", p(&svg), "--title", "demo"]), 0);
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains("demo"));
    assert!(text.contains("</svg>"));
}
