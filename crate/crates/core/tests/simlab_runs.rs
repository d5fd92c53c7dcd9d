use std::io::Write;
use std::path::Path;

use car_core::simlab::{redesign_from_csv, run_discrete_shift_study, run_experiment, Generator, GeneratorSpec, RunOptions};
use car_core::{ExperimentConfig, RngStream};

fn table1(reps: usize, sizes: &str, policies: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "rho": "2/3",
            "generator": {{"kind": "table1_continuous"}},
            "policies": {policies},
            "sample_sizes": {sizes},
            "replications": {reps},
            "additional": [
                {{"name": "sqrt_sum_abs", "formula": "sqrt_sum_abs"}},
                {{"name": "sum_squares", "formula": "sum_squares"}},
                {{"name": "const", "formula": {{"constant": {{"value": 2.5}}}}}}
            ],
            "base_seed": 17
        }}"#
    ))
    .unwrap()
}

const ALL: &str = r#"[
    {"name": "CR", "kind": "complete_randomization"},
    {"name": "RMM", "kind": "minimization", "rho1": 0.9},
    {"name": "FR", "kind": "feasible", "p": 0.2}
]"#;

#[test]
fn csv_is_identical_across_thread_counts() {
    let c = table1(40, "[50, 100]", ALL);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&c, RunOptions::default()).unwrap().to_csv_string())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run_experiment(&c, RunOptions::default()).unwrap().to_csv_string());
    assert!(one.starts_with("policy,n,stat,mean,sd\n"));
    let other_seed = run_experiment(&c, RunOptions { base_seed: Some(18), ..Default::default() }).unwrap().to_csv_string();
    assert_ne!(one, other_seed);
}

#[test]
fn constant_additional_is_multiple_of_total() {
    let c = table1(30, "[25, 60]", ALL);
    let r = run_experiment(&c, RunOptions::default()).unwrap();
    for p in ["CR", "RMM", "FR"] {
        for n in [25, 60] {
            let total = r.values(p, n, "imb_total").unwrap();
            let y = r.values(p, n, "shift_const").unwrap();
            for (t, v) in total.iter().zip(&y) {
                assert!((2.5 * t - v).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn common_covariates_across_policies() {
    // With the covariate stream shared, CR and RMM see the same units, so the
    // total-imbalance of CR equals sum (T - rho) over identical draws.
    let c = table1(5, "[30]", ALL);
    let r = run_experiment(&c, RunOptions::default()).unwrap();
    let a = r.values("CR", 30, "imb_total").unwrap();
    let b = r.values("CR", 30, "imb_total").unwrap();
    assert_eq!(a, b);
}

#[test]
fn reps_override_and_validation() {
    let c = table1(100, "[20]", ALL);
    let r = run_experiment(&c, RunOptions { replications: Some(2), base_seed: None }).unwrap();
    assert_eq!(r.replications, 2);
    assert_eq!(r.values("FR", 20, "imb_x1").unwrap().len(), 2);
    assert!(run_experiment(&c, RunOptions { replications: Some(1), base_seed: None }).is_err());

    let bad = ExperimentConfig::from_json(
        r#"{"rho":"2/3","generator":{"kind":"table1_continuous"},"policies":[{"name":"FR","kind":"feasible","p":0.4}],"sample_sizes":[10],"replications":3}"#,
    )
    .unwrap_err();
    assert!(bad.to_string().contains("policies[0].p"), "{bad}");
    assert!(bad.to_string().contains("0 < p < min(ρ,1−ρ)"), "{bad}");
}

#[test]
fn strata_partition_total() {
    let c = ExperimentConfig::from_path(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/table3.json"))).unwrap();
    let (r, rows) = run_discrete_shift_study(&c, RunOptions { replications: Some(20), base_seed: None }).unwrap();
    assert_eq!(rows.len(), 2 * 5 * 6);
    for p in &r.policies {
        for &n in &r.sample_sizes {
            let total = r.values(p, n, "imb_total").unwrap();
            let strata: Vec<Vec<f64>> = ["1_1", "1_2", "1_3", "2_1", "2_2", "2_3"]
                .iter()
                .map(|s| r.values(p, n, &format!("stratum_{s}")).unwrap())
                .collect();
            for (k, t) in total.iter().enumerate() {
                let sum: f64 = strata.iter().map(|s| s[k]).sum();
                assert!((sum - t).abs() < 1e-9, "{sum} vs {t}");
            }
        }
    }
}

fn write_csv(rows: &[Vec<f64>], header: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "{header}").unwrap();
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", cells.join(",")).unwrap();
    }
    f
}

fn csv_config(path: &Path, columns: &str, mode: &str, scaling: &str, sizes: &str, reps: usize, policies: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{
            "rho": "2/3",
            "generator": {{"kind": "csv_resample", "path": {path:?}, "columns": {columns}, "mode": "{mode}", "scaling": "{scaling}"}},
            "policies": {policies},
            "sample_sizes": {sizes},
            "replications": {reps},
            "additional": [{{"name": "sum_squares", "formula": "sum_squares"}}],
            "base_seed": 5
        }}"#,
        path = path.display().to_string()
    ))
    .unwrap()
}

#[test]
fn redesign_matches_generator_statistics() {
    let gen = Generator::load(&GeneratorSpec::Table1Continuous).unwrap();
    let mut rng = RngStream::new(77, 0);
    let mut cur = gen.cursor(&mut rng);
    let (mut raw, mut extra) = (Vec::new(), Vec::new());
    let rows: Vec<Vec<f64>> = (0..20_000)
        .map(|_| {
            gen.draw(&mut cur, &mut rng, &mut raw, &mut extra).unwrap();
            raw.clone()
        })
        .collect();
    let f = write_csv(&rows, "a,b,c");
    let c = csv_config(f.path(), r#"["a","b","c"]"#, "bootstrap", "none", "[200]", 2000, ALL);
    let csv_run = redesign_from_csv(&c, None, RunOptions::default()).unwrap();
    let direct = run_experiment(&table1(2000, "[200]", ALL), RunOptions::default()).unwrap();
    let cr_csv = csv_run.summary("CR", 200, "imb_x1").unwrap();
    let cr_dir = direct.summary("CR", 200, "imb_x1").unwrap();
    // SD estimates at R = 2000 have relative SE about 1.6%.
    assert!((cr_csv.sd / cr_dir.sd - 1.0).abs() < 0.08, "{} vs {}", cr_csv.sd, cr_dir.sd);
    let rmm_csv = csv_run.summary("RMM", 200, "shift_sum_squares").unwrap();
    let rmm_dir = direct.summary("RMM", 200, "shift_sum_squares").unwrap();
    let se = (rmm_csv.se.powi(2) + rmm_dir.se.powi(2)).sqrt();
    assert!((rmm_csv.mean - rmm_dir.mean).abs() < 4.0 * se, "{} vs {}", rmm_csv.mean, rmm_dir.mean);
}

#[test]
fn single_row_redesign() {
    let f = write_csv(&[vec![3.0, -1.0]], "a,b");
    let c = csv_config(f.path(), r#"["a","b"]"#, "fixed", "none", "[1]", 200, r#"[{"name":"CR","kind":"complete_randomization"}]"#);
    let r = redesign_from_csv(&c, None, RunOptions::default()).unwrap();
    let x1 = r.values("CR", 1, "imb_x1").unwrap();
    let (treat, control) = (3.0 * (1.0 / 3.0), 3.0 * (-2.0 / 3.0));
    assert!(x1.iter().all(|v| (v - treat).abs() < 1e-12 || (v - control).abs() < 1e-12));
    assert!(x1.iter().any(|v| (v - treat).abs() < 1e-12));
    assert!(x1.iter().any(|v| (v - control).abs() < 1e-12));
    assert!(run_experiment(&csv_config(f.path(), r#"["a","b"]"#, "fixed", "none", "[2]", 2, r#"[{"name":"CR","kind":"complete_randomization"}]"#), RunOptions::default()).is_err());
}

#[test]
fn constant_column_tracks_total() {
    let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1, 2.0]).collect();
    let f = write_csv(&rows, "a,c");
    let c = csv_config(f.path(), r#"["a","c"]"#, "permute", "none", "[50]", 100, r#"[{"name":"CR","kind":"complete_randomization"}]"#);
    let r = redesign_from_csv(&c, None, RunOptions::default()).unwrap();
    let sd_c = r.summary("CR", 50, "imb_x2").unwrap().sd;
    let sd_t = r.summary("CR", 50, "imb_total").unwrap().sd;
    assert!((sd_c - 2.0 * sd_t).abs() < 1e-9);

    let scaled = csv_config(f.path(), r#"["a","c"]"#, "permute", "standardize", "[50]", 10, r#"[{"name":"CR","kind":"complete_randomization"}]"#);
    let err = run_experiment(&scaled, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("constant"), "{err}");
}

#[test]
fn missing_csv_column_is_reported() {
    let f = write_csv(&[vec![1.0], vec![2.0]], "a");
    let c = csv_config(f.path(), r#"["a","nope"]"#, "fixed", "none", "[2]", 2, r#"[{"name":"CR","kind":"complete_randomization"}]"#);
    let err = run_experiment(&c, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}
