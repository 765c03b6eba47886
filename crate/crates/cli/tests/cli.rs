use std::path::PathBuf;

use clap::Parser;
use viscodpg::adapt::Strategy;
use viscodpg_cli::config::{BenchArgs, Cli, Command, FileConfig, RunConfig, PENALTY_FLAG_WEIGHT};
use viscodpg_cli::{main_with_args, CliError};

fn bench_args(extra: &[&str]) -> BenchArgs {
    let argv = ["viscodpg", "bench"].iter().chain(extra).copied();
    match Cli::try_parse_from(argv).unwrap().command {
        Command::Bench(a) => a,
        other => panic!("expected bench, got {other:?}"),
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("viscodpg-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn empty_bench_resolves_to_defaults() {
    let cfg = RunConfig::resolve(&bench_args(&[])).unwrap();
    assert_eq!((cfg.wi.as_slice(), cfg.re.as_slice(), cfg.alpha.as_slice()), (&[0.1][..], &[0.0][..], &[0.0][..]));
    assert_eq!((cfg.beta, cfg.p, cfg.dp, cfg.theta), (0.59, 2, 2, 0.2));
    assert_eq!(cfg.strategy, Strategy::Energy);
    assert_eq!(cfg.penalty, None);
    assert!(!cfg.is_sweep());
    assert_eq!(cfg.points().len(), 1);
}

#[test]
fn out_of_range_values_are_all_reported() {
    let err = RunConfig::resolve(&bench_args(&["--theta", "1.5", "--damping", "0", "--jobs", "0"])).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let CliError::Config(msgs) = err else { panic!("expected a config error") };
    for key in ["theta", "damping", "jobs"] {
        assert!(msgs.iter().any(|m| m.contains(key)), "{key} missing from {msgs:?}");
    }
}

#[test]
fn comma_lists_form_a_sweep() {
    let cfg = RunConfig::resolve(&bench_args(&["--wi", "0.1,0.4", "--out", "sweep"])).unwrap();
    let pts = cfg.points();
    assert_eq!(pts.len(), 2);
    assert_eq!((pts[0].wi, pts[1].wi), (0.1, 0.4));
    assert_ne!(pts[0].dir, pts[1].dir);
    assert!(pts.iter().all(|p| p.dir.starts_with("sweep")));
    let cfg = RunConfig::resolve(&bench_args(&["--wi", "0.3", "--re", "0,1", "--coupling", "navier-stokes"]));
    assert!(cfg.is_err(), "re = 0 contradicts navier-stokes coupling");
}

#[test]
fn flags_override_file_override_defaults() {
    let file = FileConfig::parse("wi = [0.2, 0.3]\ntheta = 0.3\nstrategy = \"adhoc2\"\nmax_refs = 4\n").unwrap();
    let cfg = RunConfig::merge(&bench_args(&["--theta", "0.25"]), &file).unwrap();
    assert_eq!(cfg.wi, vec![0.2, 0.3]);
    assert_eq!(cfg.theta, 0.25);
    assert_eq!(cfg.strategy, Strategy::Adhoc2);
    assert_eq!(cfg.max_refs, 4);
    assert_eq!(cfg.dof_budget, 400_000);
    let b = &cfg.points()[1].bench;
    assert_eq!((b.wi, b.adapt.theta, b.adapt.max_refinements), (0.3, 0.25, 4));
}

#[test]
fn unknown_file_keys_are_rejected() {
    assert!(matches!(FileConfig::parse("wii = [0.1]"), Err(CliError::Config(_))));
}

#[test]
fn bare_penalty_flag_uses_the_default_weight() {
    let cfg = RunConfig::resolve(&bench_args(&["--penalty"])).unwrap();
    assert_eq!(cfg.penalty, Some(PENALTY_FLAG_WEIGHT));
    let cfg = RunConfig::resolve(&bench_args(&["--penalty", "7"])).unwrap();
    assert_eq!(cfg.points()[0].bench.adapt.penalty_t12, Some(7.0));
}

#[test]
fn resolved_config_round_trips_through_toml() {
    let cfg = RunConfig::resolve(&bench_args(&["--wi", "0.1,0.2", "--penalty", "5"])).unwrap();
    let file = FileConfig::parse(&cfg.to_toml()).unwrap();
    assert_eq!(RunConfig::merge(&bench_args(&[]), &file).unwrap(), cfg);
}

#[test]
fn exit_codes() {
    assert_eq!(main_with_args(["viscodpg", "bench", "--bogus"]), 2);
    assert_eq!(main_with_args(["viscodpg", "bench", "--theta", "1.5"]), 2);
    assert_eq!(main_with_args(["viscodpg", "--help"]), 0);
    assert_eq!(main_with_args(["viscodpg", "check"]), 0);
}

#[test]
fn single_record_bench_is_deterministic() {
    let dirs = [scratch("det-a"), scratch("det-b")];
    for d in &dirs {
        let code = main_with_args(["viscodpg", "bench", "--max-refs", "0", "--out", d.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    let records = std::fs::read_to_string(dirs[0].join("records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(lines.next(), Some("ref,dof,drag_flux,drag_field,drag_err,energy_err,newton_iters,quadratic"));
    assert_eq!(lines.count(), 1);
    assert_eq!(records, std::fs::read_to_string(dirs[1].join("records.csv")).unwrap());
    let gamma = std::fs::read_to_string(dirs[0].join("gamma.csv")).unwrap();
    assert!(gamma.starts_with("s,x,y,T11,T12,T22,that1\n"));
    assert!(dirs[0].join("run_config.toml").exists() && dirs[0].join("config.json").exists());
    for d in &dirs {
        let _ = std::fs::remove_dir_all(d);
    }
}

#[test]
fn mms_writes_a_rates_table() {
    let dir = scratch("mms");
    assert_eq!(main_with_args(["viscodpg", "mms", "--levels", "3", "--out", dir.to_str().unwrap()]), 0);
    let mut rdr = csv::Reader::from_path(dir.join("mms.csv")).unwrap();
    let rates: Vec<f64> = rdr.records().filter_map(|r| r.unwrap()[5].parse().ok()).collect();
    assert_eq!(rates.len(), 3);
    assert!(rates.iter().all(|&r| r > 2.7), "{rates:?}");
    let _ = std::fs::remove_dir_all(&dir);
}
