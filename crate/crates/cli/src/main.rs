//! Command-line entry points: run simulations, sweep parameters, and turn
//! run directories into analytics reports.
//!
//! Exit codes are a stable contract: 0 success, 1 validation failure,
//! 2 I/O failure. Errors also go to stderr as one JSON object per line.

use clap::{Args, Parser, Subcommand};
use lendsim_core::analytics::regression::{
    build_features, build_redeposit_panel, format_table, logistic_clustered, ols_newey_west,
    RegressionSide,
};
use lendsim_core::analytics::{
    concentration, detect_redeposits, flow_network, liquidation_matrix, micro_filter,
    reconstruct_closed_loans, summary_tables, AnalyticsError, VolumeSide,
};
use lendsim_core::engine::{run, sweep};
use lendsim_core::ledger::{BlockClock, TokenId};
use lendsim_core::report;
use lendsim_core::scenario::Scenario;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lendsim", version, about = "Pooled lending protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write a run directory.
    Simulate(SimulateArgs),
    /// Produce analytics reports from a run directory.
    Analyze(AnalyzeArgs),
    /// Run a scenario once per value of a swept parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the horizon, in blocks.
    #[arg(long)]
    blocks: Option<u64>,
    /// Output directory (defaults under $LENDSIM_OUT or the cwd).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing run directory.
    #[arg(long)]
    force: bool,
    /// Also write the event ledger as ledger.csv.
    #[arg(long)]
    ledger_csv: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory produced by `simulate`.
    run_dir: PathBuf,
    /// Report to produce: tables, loans, redeposits, concentration,
    /// network, liqmatrix, regress-eq4, regress-eq5, regress-logit.
    #[arg(long)]
    report: String,
    /// Top-k for concentration.
    #[arg(long, default_value_t = 100)]
    top: usize,
    /// Token symbol for per-pool reports.
    #[arg(long)]
    token: Option<String>,
    /// Market token symbol for regression controls (default: first
    /// non-stablecoin).
    #[arg(long)]
    market: Option<String>,
    /// Output directory for reports (default: <run_dir>/reports).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// JSON pointer into the scenario document, e.g. /seed or
    /// /oracle/shock/multiplier.
    #[arg(long)]
    param: String,
    /// Comma-separated values; each parsed as JSON, falling back to a
    /// string.
    #[arg(long)]
    values: String,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

/// 1 for validation problems, 2 for I/O problems.
struct CliError {
    exit: u8,
    kind: &'static str,
    message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> CliError {
        CliError {
            exit: 1,
            kind: "validation",
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> CliError {
        CliError {
            exit: 2,
            kind: "io",
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let json = serde_json::json!({
                "error": {"kind": e.kind, "message": e.message}
            });
            eprintln!("{json}");
            ExitCode::from(e.exit)
        }
    }
}

fn default_out_dir(scenario_path: &Path, seed: u64) -> PathBuf {
    let stem = scenario_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".to_string());
    let root = std::env::var_os("LENDSIM_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    root.join(format!("{stem}-seed{seed}"))
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut scenario =
        Scenario::from_json(&text).map_err(|e| CliError::validation(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    scenario
        .resolve_price_files(base)
        .map_err(|e| CliError::validation(e.to_string()))?;
    Ok(scenario)
}

fn guard_overwrite(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.join("manifest.json").exists() && !force {
        return Err(CliError::validation(format!(
            "output directory {} already holds a run; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

fn scenario_hash(scenario: &Scenario) -> String {
    let canonical = serde_json::to_string(scenario).expect("scenario serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    let mut overrides = serde_json::Map::new();
    if let Some(seed) = args.seed {
        scenario.seed = seed;
        overrides.insert("seed".into(), seed.into());
    }
    if let Some(blocks) = args.blocks {
        scenario.horizon_blocks = blocks;
        overrides.insert("blocks".into(), blocks.into());
    }
    scenario
        .validate()
        .map_err(|e| CliError::validation(e.to_string()))?;
    let out_dir = args
        .out
        .unwrap_or_else(|| default_out_dir(&args.scenario, scenario.seed));
    guard_overwrite(&out_dir, args.force)?;

    let output = run(&scenario).map_err(|e| CliError::validation(e.to_string()))?;
    let mut files = report::write_run_dir(&out_dir, &output, &scenario.token_infos())
        .map_err(|e| CliError::io(e.to_string()))?;
    if args.ledger_csv {
        let path = out_dir.join("ledger.csv");
        let file = std::fs::File::create(&path)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
        output
            .ledger
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| CliError::io(e.to_string()))?;
        files.push("ledger.csv".to_string());
    }

    let manifest = serde_json::json!({
        "schema_version": lendsim_core::scenario::SCHEMA_VERSION,
        "scenario_sha256": scenario_hash(&scenario),
        "seed": scenario.seed,
        "horizon_blocks": scenario.horizon_blocks,
        "seconds_per_block": scenario.seconds_per_block,
        "reward_start_block": scenario.reward.as_ref().map(|r| r.start_block),
        "overrides": overrides,
        "files": files,
        "summary": output.summary,
    });
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| CliError::io(format!("cannot write {}: {e}", manifest_path.display())))?;
    println!("run written to {}", out_dir.display());
    Ok(())
}

struct RunDir {
    dir: PathBuf,
    ledger: lendsim_core::Ledger,
    snapshots: Vec<lendsim_core::engine::PoolSnapshotRow>,
    prices: Vec<lendsim_core::engine::PriceRow>,
    tokens: Vec<lendsim_core::TokenInfo>,
    categories: std::collections::BTreeMap<lendsim_core::AddressId, lendsim_core::AgentCategory>,
    clock: BlockClock,
    reward_start_block: Option<u64>,
}

fn load_run_dir(dir: &Path) -> Result<RunDir, CliError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", manifest_path.display())))?,
    )
    .map_err(|e| CliError::validation(format!("bad manifest: {e}")))?;
    let spb = manifest["seconds_per_block"]
        .as_u64()
        .ok_or_else(|| CliError::validation("manifest missing seconds_per_block"))?;
    let reward_start_block = manifest["reward_start_block"].as_u64();
    let io = |e: report::ReportError| CliError::io(e.to_string());
    Ok(RunDir {
        dir: dir.to_path_buf(),
        ledger: report::load_ledger(dir).map_err(io)?,
        snapshots: report::load_snapshots(dir).map_err(io)?,
        prices: report::load_prices(dir).map_err(io)?,
        tokens: report::load_tokens(dir).map_err(io)?,
        categories: report::load_categories(dir).map_err(io)?,
        clock: BlockClock::new(spb),
        reward_start_block,
    })
}

impl RunDir {
    fn token_by_symbol(&self, symbol: &str) -> Result<TokenId, CliError> {
        self.tokens
            .iter()
            .position(|t| t.symbol == symbol)
            .map(|i| TokenId(i as u32))
            .ok_or_else(|| CliError::validation(format!("unknown token symbol {symbol:?}")))
    }

    fn market_token(&self, flag: &Option<String>) -> Result<TokenId, CliError> {
        match flag {
            Some(sym) => self.token_by_symbol(sym),
            None => self
                .tokens
                .iter()
                .position(|t| !t.is_stablecoin)
                .map(|i| TokenId(i as u32))
                .ok_or_else(|| {
                    CliError::validation("no non-stablecoin token to use as the market control")
                }),
        }
    }
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(header)
        .and_then(|_| {
            for row in rows {
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        })
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let run_dir = load_run_dir(&args.run_dir)?;
    let out_dir = args.out.clone().unwrap_or_else(|| run_dir.dir.join("reports"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let need_token = || -> Result<TokenId, CliError> {
        let sym = args
            .token
            .as_ref()
            .ok_or_else(|| CliError::validation("--token is required for this report"))?;
        run_dir.token_by_symbol(sym)
    };
    match args.report.as_str() {
        "tables" => {
            let t = summary_tables(
                &run_dir.ledger,
                &run_dir.clock,
                &run_dir.tokens,
                &run_dir.categories,
            );
            let path = out_dir.join("tables.json");
            std::fs::write(&path, serde_json::to_string_pretty(&t).unwrap())
                .map_err(|e| CliError::io(e.to_string()))?;
            let rows = t
                .net_deposits
                .iter()
                .map(|(token, s)| {
                    vec![
                        run_dir.tokens[token.0 as usize].symbol.clone(),
                        s.n_days.to_string(),
                        format!("{:.6}", s.mean),
                        format!("{:.6}", s.sd),
                        format!("{:.6}", s.min),
                        format!("{:.6}", s.p5),
                        format!("{:.6}", s.p50),
                        format!("{:.6}", s.p95),
                        format!("{:.6}", s.max),
                    ]
                })
                .collect();
            write_csv(
                &out_dir.join("net_deposits.csv"),
                &["token", "n_days", "mean", "sd", "min", "p5", "p50", "p95", "max"],
                rows,
            )?;
            println!("wrote {}", out_dir.join("tables.json").display());
        }
        "loans" => {
            let loans = reconstruct_closed_loans(&run_dir.ledger, &run_dir.clock);
            let rows = loans
                .iter()
                .map(|l| {
                    vec![
                        l.address.to_string(),
                        run_dir.tokens[l.token.0 as usize].symbol.clone(),
                        l.open_block.to_string(),
                        l.close_block.to_string(),
                        l.draw_events.len().to_string(),
                        l.repay_events.len().to_string(),
                        l.peak_debt_usd.to_string(),
                        format!("{:.6}", l.duration_days),
                        l.liquidated.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &out_dir.join("closed_loans.csv"),
                &[
                    "address",
                    "token",
                    "open_block",
                    "close_block",
                    "draws",
                    "repays",
                    "peak_debt_usd",
                    "duration_days",
                    "liquidated",
                ],
                rows,
            )?;
            println!("wrote {}", out_dir.join("closed_loans.csv").display());
        }
        "redeposits" => {
            let days = detect_redeposits(&run_dir.ledger, &run_dir.clock, 86_400);
            let rows = days
                .iter()
                .map(|d| {
                    vec![
                        d.address.to_string(),
                        run_dir.tokens[d.token.0 as usize].symbol.clone(),
                        d.day.to_string(),
                        d.total_drawn_usd.to_string(),
                        d.redeposited_same_day.to_string(),
                        d.redeposited_within_1d.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &out_dir.join("loan_days.csv"),
                &[
                    "address",
                    "token",
                    "day",
                    "total_drawn_usd",
                    "redeposited_same_day",
                    "redeposited_within_1d",
                ],
                rows,
            )?;
            println!("wrote {}", out_dir.join("loan_days.csv").display());
        }
        "concentration" => {
            let mut rows = Vec::new();
            for (side, name) in [
                (VolumeSide::Deposits, "deposits"),
                (VolumeSide::Loans, "loans"),
            ] {
                match concentration(&run_dir.ledger, side, args.top) {
                    Ok(share) => rows.push(vec![
                        name.to_string(),
                        args.top.to_string(),
                        format!("{share:.6}"),
                    ]),
                    Err(AnalyticsError::EmptyLedger) => {}
                    Err(e) => return Err(CliError::validation(e.to_string())),
                }
            }
            // micro addresses ride along: they are part of the same
            // address-level census
            let micro = micro_filter(&run_dir.ledger, &run_dir.tokens);
            rows.push(vec![
                "micro_addresses".to_string(),
                String::new(),
                micro.len().to_string(),
            ]);
            write_csv(
                &out_dir.join("concentration.csv"),
                &["side", "top_k", "value"],
                rows,
            )?;
            println!("wrote {}", out_dir.join("concentration.csv").display());
        }
        "network" => {
            let net = flow_network(&run_dir.ledger, &run_dir.categories, &run_dir.tokens)
                .map_err(|e| CliError::validation(e.to_string()))?;
            let rows = net
                .iter()
                .map(|((from, to), usd)| vec![from.name(), to.name(), usd.to_string()])
                .collect();
            write_csv(&out_dir.join("flow_network.csv"), &["from", "to", "usd"], rows)?;
            println!("wrote {}", out_dir.join("flow_network.csv").display());
        }
        "liqmatrix" => {
            let m = liquidation_matrix(&run_dir.ledger, run_dir.tokens.len())
                .map_err(|e| CliError::validation(e.to_string()))?;
            let mut header: Vec<&str> = vec!["loan_token"];
            let symbols: Vec<String> = run_dir.tokens.iter().map(|t| t.symbol.clone()).collect();
            for s in &symbols {
                header.push(s);
            }
            header.push("row_total");
            let row_sums = m.row_sums();
            let col_sums = m.col_sums();
            let mut rows = Vec::new();
            for (i, row) in m.usd.iter().enumerate() {
                let mut out = vec![symbols[i].clone()];
                out.extend(row.iter().map(|v| v.to_string()));
                out.push(row_sums[i].to_string());
                rows.push(out);
            }
            let mut totals = vec!["collateral_total".to_string()];
            totals.extend(col_sums.iter().map(|v| v.to_string()));
            totals.push(m.total().to_string());
            rows.push(totals);
            write_csv(&out_dir.join("liquidation_matrix.csv"), &header, rows)?;
            println!("wrote {}", out_dir.join("liquidation_matrix.csv").display());
        }
        "regress-eq4" | "regress-eq5" => {
            let token = need_token()?;
            let market = run_dir.market_token(&args.market)?;
            let side = if args.report == "regress-eq4" {
                RegressionSide::NetDeposits
            } else {
                RegressionSide::Loans
            };
            let features = build_features(
                &run_dir.ledger,
                &run_dir.snapshots,
                &run_dir.prices,
                &run_dir.clock,
                token,
                market,
                run_dir.reward_start_block,
                side,
            )
            .map_err(|e| CliError::validation(e.to_string()))?;
            let result =
                ols_newey_west(&features, 1).map_err(|e| CliError::validation(e.to_string()))?;
            write_regression(&out_dir, &args.report, &args.token, &result)?;
        }
        "regress-logit" => {
            let token = need_token()?;
            let panel = build_redeposit_panel(
                &run_dir.ledger,
                &run_dir.snapshots,
                &run_dir.clock,
                token,
                &run_dir.categories,
                run_dir.reward_start_block,
            )
            .map_err(|e| CliError::validation(e.to_string()))?;
            let result = logistic_clustered(
                &panel.names,
                &panel.rows,
                &panel.labels,
                &panel.cluster_ids,
            )
            .map_err(|e| CliError::validation(e.to_string()))?;
            write_regression(&out_dir, &args.report, &args.token, &result)?;
        }
        other => {
            return Err(CliError::validation(format!("unknown report {other:?}")));
        }
    }
    Ok(())
}

fn write_regression(
    out_dir: &Path,
    report: &str,
    token: &Option<String>,
    result: &lendsim_core::analytics::regression::RegressionResult,
) -> Result<(), CliError> {
    let suffix = token.as_deref().unwrap_or("all");
    let stem = format!("{}_{}", report.replace('-', "_"), suffix);
    let rows = result
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            vec![
                n.clone(),
                format!("{:.10}", result.coefficients[i]),
                format!("{:.10}", result.std_errors[i]),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join(format!("{stem}.csv")),
        &["name", "coefficient", "std_error"],
        rows,
    )?;
    let title = format!("{report} ({suffix})");
    let txt = format_table(result, &title);
    let path = out_dir.join(format!("{stem}.txt"));
    std::fs::write(&path, txt).map_err(|e| CliError::io(e.to_string()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_values(raw: &str) -> Result<Vec<serde_json::Value>, CliError> {
    let values: Vec<serde_json::Value> = raw
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let s = s.trim();
            serde_json::from_str(s).unwrap_or_else(|_| serde_json::Value::String(s.to_string()))
        })
        .collect();
    if values.is_empty() {
        return Err(CliError::validation("no sweep values supplied"));
    }
    Ok(values)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let values = parse_values(&args.values)?;
    let out_dir = args
        .out
        .unwrap_or_else(|| default_out_dir(&args.scenario, scenario.seed).with_extension("sweep"));
    if out_dir.join("sweep_summary.csv").exists() && !args.force {
        return Err(CliError::validation(format!(
            "output directory {} already holds a sweep; pass --force to overwrite",
            out_dir.display()
        )));
    }
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;

    let cases = sweep(&scenario, &args.param, &values, args.parallel)
        .map_err(|e| CliError::validation(e.to_string()))?;

    // one run directory per value, plus the summary
    let mut doc = serde_json::to_value(&scenario).expect("scenario serializes");
    let mut rows = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        *doc.pointer_mut(&args.param).expect("validated by sweep") = case.value.clone();
        let s: Scenario =
            serde_json::from_value(doc.clone()).map_err(|e| CliError::validation(e.to_string()))?;
        let output = run(&s).map_err(|e| CliError::validation(e.to_string()))?;
        let case_dir = out_dir.join(format!("case-{i:03}"));
        report::write_run_dir(&case_dir, &output, &s.token_infos())
            .map_err(|e| CliError::io(e.to_string()))?;
        let manifest = serde_json::json!({
            "schema_version": lendsim_core::scenario::SCHEMA_VERSION,
            "scenario_sha256": scenario_hash(&s),
            "seed": s.seed,
            "horizon_blocks": s.horizon_blocks,
            "seconds_per_block": s.seconds_per_block,
            "reward_start_block": s.reward.as_ref().map(|r| r.start_block),
            "overrides": {"param": args.param.clone(), "value": case.value.clone()},
            "summary": output.summary,
        });
        std::fs::write(
            case_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).unwrap(),
        )
        .map_err(|e| CliError::io(e.to_string()))?;
        rows.push(vec![
            case.value.to_string(),
            format!("case-{i:03}"),
            case.summary.events.to_string(),
            case.summary.total_deposited_usd.to_string(),
            case.summary.total_borrowed_usd.to_string(),
            case.summary.total_liquidated_usd.to_string(),
            case.summary.liquidation_events.to_string(),
            case.summary.cascade_waves.to_string(),
        ]);
    }
    write_csv(
        &out_dir.join("sweep_summary.csv"),
        &[
            "value",
            "run_dir",
            "events",
            "total_deposited_usd",
            "total_borrowed_usd",
            "total_liquidated_usd",
            "liquidation_events",
            "cascade_waves",
        ],
        rows,
    )?;
    println!("sweep written to {}", out_dir.display());
    Ok(())
}
