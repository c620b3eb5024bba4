//! End-to-end checks of the binary: exit codes, determinism and the
//! analyze pipeline, all through real process invocations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lendsim"))
}

fn scenario_json(seed: u64, horizon: u64) -> String {
    format!(
        r#"{{
        "schema_version": 1,
        "seed": {seed},
        "horizon_blocks": {horizon},
        "seconds_per_block": 600,
        "tokens": [
            {{"symbol": "ETH", "is_stablecoin": false}},
            {{"symbol": "DAI", "is_stablecoin": true}}
        ],
        "pools": [
            {{
                "token": 0,
                "interest_regimes": [{{"activation_block": 0, "base_rate": "0.02", "slope_low": "0.2", "slope_high": "2", "kink": "0.8", "reserve_factor": "0.1"}}],
                "collateral": {{"gamma": "0.4", "accepted_as_collateral": true}}
            }},
            {{
                "token": 1,
                "interest_regimes": [{{"activation_block": 0, "base_rate": "0.02", "slope_low": "0.2", "slope_high": "2", "kink": "0.8", "reserve_factor": "0.1"}}],
                "collateral": {{"gamma": "0.25", "accepted_as_collateral": true}}
            }}
        ],
        "oracle": {{"prices": [{{"token": 0, "source": "gbm", "p0": 2000.0, "mu_annual": 0.0, "sigma_annual": 0.6}}],
                   "shock": {{"block": {shock}, "multiplier": "0.7", "token": 0}}}},
        "agents": [
            {{
                "category": "SmallAddress",
                "count": 6,
                "capital_usd": {{"dist": "fixed", "usd": "20000"}},
                "strategy": {{"kind": "hold_deposit", "token": 1, "start_block": 0}}
            }},
            {{
                "category": "LargeAddress",
                "count": 3,
                "capital_usd": {{"dist": "fixed", "usd": "30000"}},
                "strategy": {{"kind": "borrow_and_hold", "collateral_token": 0, "borrow_token": 1,
                             "borrow_fraction": "0.8", "hold_blocks": 300, "start_block": 5, "repeat": true}}
            }},
            {{
                "category": "LiquidatorBot",
                "count": 1,
                "capital_usd": {{"dist": "fixed", "usd": "1000000"}},
                "strategy": {{"kind": "liquidator_bot", "inventory_token": 1}}
            }}
        ]
    }}"#,
        seed = seed,
        horizon = horizon,
        shock = horizon / 2,
    )
}

fn write_scenario(dir: &Path, seed: u64, horizon: u64) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, scenario_json(seed, horizon)).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn lendsim");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn simulate_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path(), 7, 600);
    let run1 = tmp.path().join("run1");
    let run2 = tmp.path().join("run2");
    for dir in [&run1, &run2] {
        run_ok(
            bin()
                .arg("simulate")
                .arg("--scenario")
                .arg(&scenario)
                .arg("--out")
                .arg(dir),
        );
    }
    let ledger1 = std::fs::read(run1.join("ledger.jsonl")).unwrap();
    let ledger2 = std::fs::read(run2.join("ledger.jsonl")).unwrap();
    assert!(!ledger1.is_empty());
    assert_eq!(ledger1, ledger2);
    let m1 = std::fs::read(run1.join("manifest.json")).unwrap();
    let m2 = std::fs::read(run2.join("manifest.json")).unwrap();
    assert_eq!(m1, m2);
    // every other output file matches too
    for file in [
        "snapshots.csv",
        "risk.csv",
        "agents.csv",
        "rewards.csv",
        "prices.csv",
    ] {
        assert_eq!(
            std::fs::read(run1.join(file)).unwrap(),
            std::fs::read(run2.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn ledger_csv_flag_writes_exact_header() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path(), 7, 100);
    let run = tmp.path().join("run");
    run_ok(
        bin()
            .arg("simulate")
            .arg("--scenario")
            .arg(&scenario)
            .arg("--out")
            .arg(&run)
            .arg("--ledger-csv"),
    );
    let csv = std::fs::read_to_string(run.join("ledger.csv")).unwrap();
    assert!(csv.starts_with("block,seq,address,kind,token,amount,usd_value,counterparty\n"));
    assert!(csv.lines().count() > 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f == "ledger.csv"));
}

#[test]
fn overwrite_refused_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path(), 7, 100);
    let run = tmp.path().join("run");
    run_ok(
        bin()
            .arg("simulate")
            .arg("--scenario")
            .arg(&scenario)
            .arg("--out")
            .arg(&run),
    );
    let out = bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--force"), "stderr: {stderr}");
    // with --force it succeeds
    run_ok(
        bin()
            .arg("simulate")
            .arg("--scenario")
            .arg(&scenario)
            .arg("--out")
            .arg(&run)
            .arg("--force"),
    );
}

#[test]
fn seed_and_blocks_overrides_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path(), 7, 600);
    let run = tmp.path().join("run");
    run_ok(
        bin()
            .arg("simulate")
            .arg("--scenario")
            .arg(&scenario)
            .arg("--seed")
            .arg("99")
            .arg("--blocks")
            .arg("420")
            .arg("--out")
            .arg(&run),
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["horizon_blocks"], 420);
    assert_eq!(manifest["overrides"]["seed"], 99);
    assert_eq!(manifest["overrides"]["blocks"], 420);
    // shrinking the horizon below the configured shock is a validation
    // failure, not a crash
    let out = bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(&scenario)
        .arg("--blocks")
        .arg("120")
        .arg("--out")
        .arg(tmp.path().join("run2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_scenario_exits_one_with_json_error() {
    let out = bin()
        .arg("simulate")
        .arg("--scenario")
        .arg("/definitely/not/here.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2)); // unreadable file is an io error
    let stderr = String::from_utf8_lossy(&out.stderr);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).expect("json error object");
    assert_eq!(err["error"]["kind"], "io");

    // a structurally invalid scenario is a validation failure with field
    // diagnostics
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": 2, "seed": 1, "horizon_blocks": 0, "tokens": [], "pools": [], "agents": []}"#).unwrap();
    let out = bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let err: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(err["error"]["kind"], "validation");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("schema_version"));
}

#[test]
fn sweep_parallelism_invisible_in_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path(), 7, 400);
    let out1 = tmp.path().join("sweep1");
    let out4 = tmp.path().join("sweep4");
    for (dir, par) in [(&out1, "1"), (&out4, "4")] {
        run_ok(
            bin()
                .arg("sweep")
                .arg("--scenario")
                .arg(&scenario)
                .arg("--param")
                .arg("/oracle/shock/multiplier")
                .arg("--values")
                .arg("1.0,0.8,0.6")
                .arg("--parallel")
                .arg(par)
                .arg("--out")
                .arg(dir),
        );
    }
    let s1 = std::fs::read(out1.join("sweep_summary.csv")).unwrap();
    let s4 = std::fs::read(out4.join("sweep_summary.csv")).unwrap();
    assert_eq!(s1, s4);
    // one run dir per value
    assert!(out1.join("case-000/ledger.jsonl").exists());
    assert!(out1.join("case-002/manifest.json").exists());
    // empty values list is a validation error
    let out = bin()
        .arg("sweep")
        .arg("--scenario")
        .arg(&scenario)
        .arg("--param")
        .arg("/seed")
        .arg("--values")
        .arg("")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // unresolvable parameter path
    let out = bin()
        .arg("sweep")
        .arg("--scenario")
        .arg(&scenario)
        .arg("--param")
        .arg("/not/a/field")
        .arg("--values")
        .arg("1,2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_reports_run_and_empty_ledger_is_fine() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = write_scenario(tmp.path(), 3, 9000); // > 62 days of 600s blocks
    let run = tmp.path().join("run");
    run_ok(
        bin()
            .arg("simulate")
            .arg("--scenario")
            .arg(&scenario)
            .arg("--out")
            .arg(&run),
    );
    for report in ["tables", "loans", "redeposits", "concentration", "network", "liqmatrix"] {
        run_ok(bin().arg("analyze").arg(&run).arg("--report").arg(report));
    }
    run_ok(
        bin()
            .arg("analyze")
            .arg(&run)
            .arg("--report")
            .arg("regress-eq4")
            .arg("--token")
            .arg("DAI"),
    );
    assert!(run.join("reports/regress_eq4_DAI.txt").exists());
    run_ok(
        bin()
            .arg("analyze")
            .arg(&run)
            .arg("--report")
            .arg("concentration")
            .arg("--top")
            .arg("2"),
    );
    let conc = std::fs::read_to_string(run.join("reports/concentration.csv")).unwrap();
    assert!(conc.starts_with("side,top_k,value"));

    // unknown report: validation failure
    let out = bin()
        .arg("analyze")
        .arg(&run)
        .arg("--report")
        .arg("nope")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // a run with no events still yields well-formed reports and exit 0
    let empty_scenario = tmp.path().join("empty.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&scenario_json(1, 50)).unwrap();
    doc["agents"] = serde_json::json!([]);
    doc["oracle"]["shock"] = serde_json::Value::Null;
    std::fs::write(&empty_scenario, doc.to_string()).unwrap();
    let empty_run = tmp.path().join("empty-run");
    run_ok(
        bin()
            .arg("simulate")
            .arg("--scenario")
            .arg(&empty_scenario)
            .arg("--out")
            .arg(&empty_run),
    );
    for report in ["tables", "loans", "redeposits", "concentration", "network", "liqmatrix"] {
        run_ok(bin().arg("analyze").arg(&empty_run).arg("--report").arg(report));
    }
    let loans = std::fs::read_to_string(empty_run.join("reports/closed_loans.csv")).unwrap();
    assert_eq!(loans.lines().count(), 1); // header only
}
