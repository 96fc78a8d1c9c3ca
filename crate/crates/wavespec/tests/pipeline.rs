//! End-to-end pipeline on a coarse grid: output files, metadata, cache reuse
//! and byte-identical reruns.

use std::fs;

use wavespec::io_cli::pipeline::run_session;
use wavespec::io_cli::{CacheStatus, RunConfig, Session};

const FILES: [&str; 6] =
    ["profile.csv", "growth_curve.csv", "spectrum.json", "packet.csv", "packet_fit.json", "validation.json"];

fn coarse_config(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::new(0.2, 0.5);
    cfg.grid.nx = 96;
    cfg.grid.nz = 12;
    cfg.k_range.nk = 31;
    cfg.k_range.k_max = 1.5;
    cfg.packet.nk = 9;
    cfg.output.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn coarse_pipeline_writes_reproducible_outputs() {
    let root = tempfile::tempdir().unwrap();
    let cache = root.path().join("cache");
    let (first, second) = (root.path().join("a"), root.path().join("b"));

    let cold = run_session(&Session::with_cache_dir(coarse_config(&first), cache.clone()).unwrap()).unwrap();
    assert_eq!((cold.solitary_cache, cold.dno_cache), (CacheStatus::Miss, CacheStatus::Miss));
    let warm = run_session(&Session::with_cache_dir(coarse_config(&second), cache).unwrap()).unwrap();
    assert_eq!((warm.solitary_cache, warm.dno_cache), (CacheStatus::Hit, CacheStatus::Hit));

    for name in FILES {
        let a = fs::read_to_string(first.join(name)).unwrap();
        let b = fs::read_to_string(second.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
        if name.ends_with(".csv") {
            assert!(a.starts_with("# code_version: "), "{name}");
            assert!(a.lines().nth(1).unwrap().starts_with("# config_digest: "), "{name}");
        } else {
            let doc: serde_json::Value = serde_json::from_str(&a).unwrap();
            assert!(doc["metadata"]["config_digest"].as_str().is_some_and(|d| d.len() == 64), "{name}");
            assert!(doc["report"].is_object(), "{name}");
        }
    }

    let header = |name: &str| -> String {
        let text = fs::read_to_string(first.join(name)).unwrap();
        text.lines().find(|l| !l.starts_with('#')).unwrap().to_owned()
    };
    assert_eq!(header("profile.csv"), "x,eta,phi,Z,v,gamma");
    assert_eq!(header("growth_curve.csv"), "k,sigma_re,sigma_im,n_neg_L,f_k");
    assert_eq!(header("packet.csv"), "t,packet_norm,fit_residual");

    let validation: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("validation.json")).unwrap()).unwrap();
    let checks = validation["report"]["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert_eq!(validation["report"]["passed"].as_bool(), Some(checks.iter().all(|c| c["pass"] == true)));
}

#[test]
fn invalid_configuration_is_a_usage_error() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = coarse_config(root.path());
    cfg.beta = 0.3;
    let err = Session::new(cfg).err().expect("beta below 1/3 must be rejected");
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("beta"), "{err}");
}
