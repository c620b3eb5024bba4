//! Shared domain types and the append-only event ledger.
//!
//! The ledger is the simulated analogue of on-chain transaction data: every
//! state-changing action appends one record, totally ordered by
//! `(block, seq)`. Analytics only ever reads the ledger plus the per-block
//! snapshot logs.

use crate::wad::Wad;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};

pub const SECONDS_PER_YEAR: u64 = 31_536_000;
pub const DEFAULT_SECONDS_PER_BLOCK: u64 = 13;

/// Opaque token identifier, unique within a scenario.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

/// Opaque address identifier, unique within a scenario.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct AddressId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for AddressId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Token metadata. The stablecoin flag is immutable for the life of a
/// scenario and drives both pricing defaults and analytics filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenInfo {
    pub symbol: String,
    pub is_stablecoin: bool,
    pub decimals: u8,
}

/// Block counter plus the seconds-per-block convention used to convert
/// annual rates to per-block rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockClock {
    pub block_number: u64,
    pub seconds_per_block: u64,
}

impl BlockClock {
    pub fn new(seconds_per_block: u64) -> BlockClock {
        assert!(seconds_per_block > 0, "seconds_per_block must be positive");
        BlockClock {
            block_number: 0,
            seconds_per_block,
        }
    }

    pub fn blocks_per_year(&self) -> u64 {
        SECONDS_PER_YEAR / self.seconds_per_block
    }

    pub fn blocks_per_day(&self) -> u64 {
        86_400 / self.seconds_per_block
    }

    /// UTC day bucket of a block (day 0 starts at block 0).
    pub fn day_of_block(&self, block: u64) -> u64 {
        block * self.seconds_per_block / 86_400
    }

    pub fn advance(&mut self) {
        self.block_number += 1;
    }
}

impl Default for BlockClock {
    fn default() -> Self {
        BlockClock::new(DEFAULT_SECONDS_PER_BLOCK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Deposit,
    Withdraw,
    Borrow,
    Repay,
    LiquidateRepay,
    LiquidateSeize,
    Swap,
    ClaimReward,
    RewardAccrue,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Deposit => "Deposit",
            EventKind::Withdraw => "Withdraw",
            EventKind::Borrow => "Borrow",
            EventKind::Repay => "Repay",
            EventKind::LiquidateRepay => "LiquidateRepay",
            EventKind::LiquidateSeize => "LiquidateSeize",
            EventKind::Swap => "Swap",
            EventKind::ClaimReward => "ClaimReward",
            EventKind::RewardAccrue => "RewardAccrue",
        };
        f.write_str(s)
    }
}

/// Address roles, used for analytics grouping. The first seven mirror the
/// usual manual classification of lending-protocol users; `MicroAddress`
/// and `LiquidatorBot` are simulation roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentCategory {
    LargeAddress,
    SmallAddress,
    MicroAddress,
    YieldAggregator,
    OnRamp,
    DecentralizedExchange,
    AssetManagement,
    UnidentifiedContract,
    LiquidatorBot,
}

impl AgentCategory {
    pub const ALL: [AgentCategory; 9] = [
        AgentCategory::LargeAddress,
        AgentCategory::SmallAddress,
        AgentCategory::MicroAddress,
        AgentCategory::YieldAggregator,
        AgentCategory::OnRamp,
        AgentCategory::DecentralizedExchange,
        AgentCategory::AssetManagement,
        AgentCategory::UnidentifiedContract,
        AgentCategory::LiquidatorBot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AgentCategory::LargeAddress => "LargeAddress",
            AgentCategory::SmallAddress => "SmallAddress",
            AgentCategory::MicroAddress => "MicroAddress",
            AgentCategory::YieldAggregator => "YieldAggregator",
            AgentCategory::OnRamp => "OnRamp",
            AgentCategory::DecentralizedExchange => "DecentralizedExchange",
            AgentCategory::AssetManagement => "AssetManagement",
            AgentCategory::UnidentifiedContract => "UnidentifiedContract",
            AgentCategory::LiquidatorBot => "LiquidatorBot",
        }
    }
}

impl fmt::Display for AgentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One ledger record.
///
/// `amount` is in token units except for `LiquidateSeize`, where it counts
/// seized cTokens; `usd_value` is always the USD value at the event block
/// (for seizures: cTokens x exchange rate x price).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub block: u64,
    pub seq: u64,
    pub address: AddressId,
    pub kind: EventKind,
    pub token: TokenId,
    pub amount: Wad,
    pub usd_value: Wad,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counterparty: Option<AddressId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("event block {new} precedes last ledger block {last}")]
    OutOfOrderBlock { last: u64, new: u64 },
    #[error("malformed ledger line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Append-only, single-writer event log.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ledger {
    events: Vec<Event>,
}

impl Ledger {
    pub fn new() -> Ledger {
        Ledger { events: Vec::new() }
    }

    /// Appends an event, assigning the next sequence id. Blocks must be
    /// non-decreasing; within a block, sequence order is authoritative.
    pub fn append(&mut self, mut event: Event) -> Result<u64, LedgerError> {
        if let Some(last) = self.events.last() {
            if event.block < last.block {
                return Err(LedgerError::OutOfOrderBlock {
                    last: last.block,
                    new: event.block,
                });
            }
        }
        let seq = self.events.len() as u64;
        event.seq = seq;
        self.events.push(event);
        Ok(seq)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON object per line, in sequence order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Ledger, LedgerError> {
        let mut ledger = Ledger::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| LedgerError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: Event = serde_json::from_str(&line).map_err(|e| LedgerError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            ledger.events.push(ev);
        }
        Ok(ledger)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "block",
            "seq",
            "address",
            "kind",
            "token",
            "amount",
            "usd_value",
            "counterparty",
        ])?;
        for ev in &self.events {
            wtr.write_record([
                ev.block.to_string(),
                ev.seq.to_string(),
                ev.address.0.to_string(),
                ev.kind.to_string(),
                ev.token.0.to_string(),
                ev.amount.to_string(),
                ev.usd_value.to_string(),
                ev.counterparty.map(|a| a.0.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
