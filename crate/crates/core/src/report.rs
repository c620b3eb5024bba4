//! File formats for run outputs.
//!
//! A run directory holds the event ledger as JSONL plus CSV logs for pool
//! snapshots, borrower risk, prices, AMM state, agent summaries, rewards,
//! per-block liquidation and rejected intents. Amounts are written as
//! exact decimal strings. The same module reads the files back for the
//! analyze pipeline.

use crate::engine::{
    AgentSummary, AmmSnapshotRow, LiquidationBlockRow, PoolSnapshotRow, PriceRow, Rejection,
    RewardRow, RiskRow, RunOutput,
};
use crate::ledger::{AddressId, AgentCategory, Ledger, TokenId, TokenInfo};
use crate::wad::{SignedWad, Wad};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {path}: {reason}")]
    Malformed { path: String, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> ReportError {
    ReportError::Malformed {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const RISK_FILE: &str = "risk.csv";
pub const AGENTS_FILE: &str = "agents.csv";
pub const REWARDS_FILE: &str = "rewards.csv";
pub const PRICES_FILE: &str = "prices.csv";
pub const AMM_FILE: &str = "amm.csv";
pub const LIQUIDATIONS_FILE: &str = "liquidations.csv";
pub const REJECTIONS_FILE: &str = "rejections.csv";
pub const TOKENS_FILE: &str = "tokens.csv";

/// Write every output file; returns the file names written.
pub fn write_run_dir(
    dir: &Path,
    output: &RunOutput,
    tokens: &[TokenInfo],
) -> Result<Vec<String>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut files = Vec::new();
    let mut path = dir.join(LEDGER_FILE);
    {
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(f);
        output.ledger.write_jsonl(&mut w).map_err(|e| io_err(&path, e))?;
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    files.push(LEDGER_FILE.to_string());

    path = dir.join(SNAPSHOTS_FILE);
    write_snapshots(&path, &output.pool_snapshots)?;
    files.push(SNAPSHOTS_FILE.to_string());

    path = dir.join(RISK_FILE);
    write_risk(&path, &output.risk_rows)?;
    files.push(RISK_FILE.to_string());

    path = dir.join(AGENTS_FILE);
    write_agents(&path, &output.agent_summaries)?;
    files.push(AGENTS_FILE.to_string());

    path = dir.join(REWARDS_FILE);
    write_rewards(&path, &output.reward_rows)?;
    files.push(REWARDS_FILE.to_string());

    path = dir.join(PRICES_FILE);
    write_prices(&path, &output.price_rows)?;
    files.push(PRICES_FILE.to_string());

    path = dir.join(AMM_FILE);
    write_amm(&path, &output.amm_snapshots)?;
    files.push(AMM_FILE.to_string());

    path = dir.join(LIQUIDATIONS_FILE);
    write_liquidations(&path, &output.liquidation_blocks)?;
    files.push(LIQUIDATIONS_FILE.to_string());

    path = dir.join(REJECTIONS_FILE);
    write_rejections(&path, &output.rejections)?;
    files.push(REJECTIONS_FILE.to_string());

    path = dir.join(TOKENS_FILE);
    write_tokens(&path, tokens)?;
    files.push(TOKENS_FILE.to_string());

    Ok(files)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ReportError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn opt_wad(w: Option<Wad>) -> String {
    w.map(|v| v.to_string()).unwrap_or_default()
}

fn write_snapshots(path: &Path, rows: &[PoolSnapshotRow]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "block",
        "token",
        "cash",
        "borrows",
        "reserves",
        "ctoken_supply",
        "exchange_rate",
        "utilization",
        "borrow_rate",
        "supply_rate",
        "supply_reward_apy",
        "borrow_reward_apy",
    ])
    .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([
            r.block.to_string(),
            r.token.to_string(),
            r.cash.to_string(),
            r.borrows.to_string(),
            r.reserves.to_string(),
            r.ctoken_supply.to_string(),
            r.exchange_rate.to_string(),
            r.utilization.to_string(),
            r.borrow_rate.to_string(),
            r.supply_rate.to_string(),
            opt_wad(r.supply_reward_apy),
            opt_wad(r.borrow_reward_apy),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_risk(path: &Path, rows: &[RiskRow]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "block",
        "address",
        "liquidity_usd",
        "total_collateral_usd",
        "total_debt_usd",
    ])
    .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([
            r.block.to_string(),
            r.address.to_string(),
            r.liquidity_usd.to_string(),
            r.total_collateral_usd.to_string(),
            r.total_debt_usd.to_string(),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_agents(path: &Path, rows: &[AgentSummary]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "address",
        "category",
        "total_deposited",
        "total_borrowed",
        "reward_claimed",
        "liquidated_count",
        "pnl_usd",
    ])
    .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([
            r.address.to_string(),
            r.category.to_string(),
            r.total_deposited.to_string(),
            r.total_borrowed.to_string(),
            r.reward_claimed.to_string(),
            r.liquidated_count.to_string(),
            r.pnl_usd.to_string(),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_rewards(path: &Path, rows: &[RewardRow]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["address", "accrued", "claimed"])
        .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([
            r.address.to_string(),
            r.accrued.to_string(),
            r.claimed.to_string(),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_prices(path: &Path, rows: &[PriceRow]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["block", "token", "price"])
        .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([r.block.to_string(), r.token.to_string(), r.price.to_string()])
            .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_amm(path: &Path, rows: &[AmmSnapshotRow]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "block",
        "token_x",
        "token_y",
        "reserve_x",
        "reserve_y",
        "spot_price",
    ])
    .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([
            r.block.to_string(),
            r.token_x.to_string(),
            r.token_y.to_string(),
            r.reserve_x.to_string(),
            r.reserve_y.to_string(),
            r.spot_price.to_string(),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_liquidations(path: &Path, rows: &[LiquidationBlockRow]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "block",
        "liquidation_usd",
        "events",
        "outstanding_loans_usd",
        "max_wave",
    ])
    .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([
            r.block.to_string(),
            r.liquidation_usd.to_string(),
            r.events.to_string(),
            r.outstanding_loans_usd.to_string(),
            r.max_wave.to_string(),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_rejections(path: &Path, rows: &[Rejection]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["block", "address", "action", "reason"])
        .map_err(|e| bad(path, e.to_string()))?;
    for r in rows {
        w.write_record([
            r.block.to_string(),
            r.address.to_string(),
            r.action.clone(),
            r.reason.clone(),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_tokens(path: &Path, tokens: &[TokenInfo]) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["token", "symbol", "is_stablecoin", "decimals"])
        .map_err(|e| bad(path, e.to_string()))?;
    for (i, t) in tokens.iter().enumerate() {
        w.write_record([
            i.to_string(),
            t.symbol.clone(),
            t.is_stablecoin.to_string(),
            t.decimals.to_string(),
        ])
        .map_err(|e| bad(path, e.to_string()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------
// readers

fn csv_records(path: &Path) -> Result<Vec<csv::StringRecord>, ReportError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(f));
    rdr.records()
        .map(|r| r.map_err(|e| bad(path, e.to_string())))
        .collect()
}

fn parse_wad(path: &Path, s: &str) -> Result<Wad, ReportError> {
    s.parse().map_err(|e: crate::wad::WadError| bad(path, e.to_string()))
}

fn parse_opt_wad(path: &Path, s: &str) -> Result<Option<Wad>, ReportError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_wad(path, s).map(Some)
    }
}

fn parse_u64(path: &Path, s: &str) -> Result<u64, ReportError> {
    s.parse().map_err(|_| bad(path, format!("bad integer {s:?}")))
}

pub fn load_ledger(dir: &Path) -> Result<Ledger, ReportError> {
    let path = dir.join(LEDGER_FILE);
    let f = File::open(&path).map_err(|e| io_err(&path, e))?;
    Ledger::read_jsonl(BufReader::new(f)).map_err(|e| bad(&path, e.to_string()))
}

pub fn load_snapshots(dir: &Path) -> Result<Vec<PoolSnapshotRow>, ReportError> {
    let path = dir.join(SNAPSHOTS_FILE);
    csv_records(&path)?
        .iter()
        .map(|r| {
            Ok(PoolSnapshotRow {
                block: parse_u64(&path, &r[0])?,
                token: TokenId(parse_u64(&path, &r[1])? as u32),
                cash: parse_wad(&path, &r[2])?,
                borrows: parse_wad(&path, &r[3])?,
                reserves: parse_wad(&path, &r[4])?,
                ctoken_supply: parse_wad(&path, &r[5])?,
                exchange_rate: parse_wad(&path, &r[6])?,
                utilization: parse_wad(&path, &r[7])?,
                borrow_rate: parse_wad(&path, &r[8])?,
                supply_rate: parse_wad(&path, &r[9])?,
                supply_reward_apy: parse_opt_wad(&path, &r[10])?,
                borrow_reward_apy: parse_opt_wad(&path, &r[11])?,
            })
        })
        .collect()
}

pub fn load_prices(dir: &Path) -> Result<Vec<PriceRow>, ReportError> {
    let path = dir.join(PRICES_FILE);
    csv_records(&path)?
        .iter()
        .map(|r| {
            Ok(PriceRow {
                block: parse_u64(&path, &r[0])?,
                token: TokenId(parse_u64(&path, &r[1])? as u32),
                price: parse_wad(&path, &r[2])?,
            })
        })
        .collect()
}

pub fn load_tokens(dir: &Path) -> Result<Vec<TokenInfo>, ReportError> {
    let path = dir.join(TOKENS_FILE);
    csv_records(&path)?
        .iter()
        .map(|r| {
            Ok(TokenInfo {
                symbol: r[1].to_string(),
                is_stablecoin: &r[2] == "true",
                decimals: parse_u64(&path, &r[3])? as u8,
            })
        })
        .collect()
}

pub fn load_categories(dir: &Path) -> Result<BTreeMap<AddressId, AgentCategory>, ReportError> {
    let path = dir.join(AGENTS_FILE);
    let mut out = BTreeMap::new();
    for r in csv_records(&path)? {
        let addr = AddressId(parse_u64(&path, &r[0])? as u32);
        let cat = AgentCategory::ALL
            .iter()
            .find(|c| c.name() == &r[1])
            .copied()
            .ok_or_else(|| bad(&path, format!("unknown category {:?}", &r[1])))?;
        out.insert(addr, cat);
    }
    Ok(out)
}

pub fn load_liquidation_blocks(dir: &Path) -> Result<Vec<LiquidationBlockRow>, ReportError> {
    let path = dir.join(LIQUIDATIONS_FILE);
    csv_records(&path)?
        .iter()
        .map(|r| {
            Ok(LiquidationBlockRow {
                block: parse_u64(&path, &r[0])?,
                liquidation_usd: parse_wad(&path, &r[1])?,
                events: parse_u64(&path, &r[2])?,
                outstanding_loans_usd: parse_wad(&path, &r[3])?,
                max_wave: parse_u64(&path, &r[4])? as u32,
            })
        })
        .collect()
}

/// Risk rows are written by the engine; the loader exists for post-hoc
/// checks in tests and external tooling.
pub fn load_risk(dir: &Path) -> Result<Vec<RiskRow>, ReportError> {
    let path = dir.join(RISK_FILE);
    csv_records(&path)?
        .iter()
        .map(|r| {
            let liq: SignedWad = serde_json::from_value(serde_json::Value::String(r[2].to_string()))
                .map_err(|e| bad(&path, e.to_string()))?;
            Ok(RiskRow {
                block: parse_u64(&path, &r[0])?,
                address: AddressId(parse_u64(&path, &r[1])? as u32),
                liquidity_usd: liq,
                total_collateral_usd: parse_wad(&path, &r[3])?,
                total_debt_usd: parse_wad(&path, &r[4])?,
            })
        })
        .collect()
}
