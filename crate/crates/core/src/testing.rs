//! Shared fixtures for integration tests and benches.
//!
//! The centerpiece is a hand-authored 50-event ledger exercising every
//! analytics path: multi-draw loan cycles, liquidated cycles, same-day and
//! next-day redeposits, micro deposits, and cross-category stablecoin
//! flows. Expected values for it are hand-tabulated in the tests that
//! consume it; change nothing here without re-deriving them.

use crate::ledger::{
    AddressId, AgentCategory, BlockClock, Event, EventKind, Ledger, TokenId, TokenInfo,
};
use crate::wad::Wad;
use std::collections::BTreeMap;

pub const ETH: TokenId = TokenId(0);
pub const DAI: TokenId = TokenId(1);
pub const USDC: TokenId = TokenId(2);

/// 100-second blocks: 864 blocks per UTC day.
pub fn fixture_clock() -> BlockClock {
    BlockClock::new(100)
}

pub fn fixture_tokens() -> Vec<TokenInfo> {
    vec![
        TokenInfo {
            symbol: "ETH".into(),
            is_stablecoin: false,
            decimals: 18,
        },
        TokenInfo {
            symbol: "DAI".into(),
            is_stablecoin: true,
            decimals: 18,
        },
        TokenInfo {
            symbol: "USDC".into(),
            is_stablecoin: true,
            decimals: 18,
        },
    ]
}

pub fn fixture_categories() -> BTreeMap<AddressId, AgentCategory> {
    let mut m = BTreeMap::new();
    m.insert(AddressId(1), AgentCategory::LargeAddress);
    m.insert(AddressId(2), AgentCategory::SmallAddress);
    m.insert(AddressId(3), AgentCategory::MicroAddress);
    m.insert(AddressId(4), AgentCategory::YieldAggregator);
    m.insert(AddressId(5), AgentCategory::LiquidatorBot);
    m.insert(AddressId(6), AgentCategory::SmallAddress);
    m.insert(AddressId(7), AgentCategory::OnRamp);
    m.insert(AddressId(8), AgentCategory::MicroAddress);
    m.insert(AddressId(9), AgentCategory::SmallAddress);
    m.insert(AddressId(10), AgentCategory::AssetManagement);
    m
}

/// Exactly fifty events over six UTC days. ETH trades at 2000 USD until
/// day 2, then at 1200 USD.
pub fn fixture_ledger() -> Ledger {
    let mut ledger = Ledger::new();
    let mut push = |block: u64,
                    addr: u32,
                    kind: EventKind,
                    token: TokenId,
                    amount: &str,
                    usd: &str,
                    counterparty: Option<u32>| {
        ledger
            .append(Event {
                block,
                seq: 0,
                address: AddressId(addr),
                kind,
                token,
                amount: amount.parse::<Wad>().unwrap(),
                usd_value: usd.parse::<Wad>().unwrap(),
                counterparty: counterparty.map(AddressId),
            })
            .unwrap();
    };
    use EventKind::*;
    // day 0
    push(0, 1, Deposit, DAI, "50000", "50000", None);
    push(1, 2, Deposit, DAI, "10000", "10000", None);
    push(2, 7, Deposit, USDC, "5000", "5000", None);
    push(3, 10, Deposit, ETH, "10", "20000", None);
    push(4, 3, Deposit, USDC, "3", "3", None);
    push(5, 8, Deposit, DAI, "2", "2", None);
    push(6, 9, Deposit, DAI, "3", "3", None);
    push(10, 9, Withdraw, DAI, "3", "3", None);
    push(20, 4, Deposit, ETH, "5", "10000", None);
    push(21, 4, Borrow, DAI, "4000", "4000", None);
    push(22, 4, Deposit, DAI, "4000", "4000", None);
    push(30, 6, Deposit, ETH, "2", "4000", None);
    push(31, 6, Borrow, DAI, "2000", "2000", None);
    push(40, 1, Borrow, USDC, "8000", "8000", None);
    push(50, 7, Withdraw, USDC, "1000", "1000", None);
    // day 1
    push(864, 2, Deposit, DAI, "500", "500", None);
    push(900, 4, Borrow, DAI, "1000", "1000", None);
    push(910, 4, Deposit, DAI, "1000", "1000", None);
    push(950, 1, Repay, USDC, "3000", "3000", None);
    push(1_000, 6, Borrow, USDC, "500", "500", None);
    push(1_100, 10, Borrow, DAI, "5000", "5000", None);
    push(1_200, 2, Withdraw, DAI, "200", "200", None);
    // day 2: ETH now 1200; address 6 goes under water and is partially
    // liquidated by the bot (address 5)
    push(1_730, 6, LiquidateRepay, DAI, "1000", "1000", Some(5));
    push(1_730, 6, LiquidateSeize, ETH, "0.9", "1080", Some(5));
    push(1_740, 6, LiquidateRepay, USDC, "250", "250", Some(5));
    push(1_740, 6, LiquidateSeize, ETH, "0.225", "270", Some(5));
    push(1_800, 5, Swap, ETH, "1.125", "1350", None);
    push(1_900, 4, Repay, DAI, "5000", "5000", None);
    push(2_000, 6, Repay, DAI, "1000", "1000", None);
    push(2_100, 6, Repay, USDC, "250", "250", None);
    push(2_200, 10, Deposit, USDC, "2000", "2000", None);
    // day 3
    push(2_600, 1, Repay, USDC, "5000", "5000", None);
    push(2_700, 2, Borrow, ETH, "1", "1200", None);
    push(2_800, 2, Deposit, ETH, "1", "1200", None);
    push(2_900, 4, Borrow, DAI, "600", "600", None);
    push(3_400, 10, Repay, DAI, "2500", "2500", None);
    // day 4 (starts at block 3456)
    push(3_456, 4, Deposit, DAI, "600", "600", None);
    push(3_500, 2, Repay, ETH, "1", "1200", None);
    push(3_600, 7, Withdraw, USDC, "4000", "4000", None);
    push(3_700, 1, Withdraw, DAI, "10000", "10000", None);
    push(3_800, 10, Borrow, USDC, "1500", "1500", None);
    push(3_900, 2, Deposit, USDC, "800", "800", None);
    push(4_000, 4, Borrow, DAI, "300", "300", None);
    // day 5
    push(4_400, 6, Withdraw, ETH, "0.875", "1050", None);
    push(4_500, 10, Repay, DAI, "2500", "2500", None);
    push(4_600, 10, Repay, USDC, "1500", "1500", None);
    push(4_700, 2, Withdraw, DAI, "300", "300", None);
    push(4_800, 7, Deposit, DAI, "1200", "1200", None);
    push(4_900, 1, Deposit, ETH, "3", "3600", None);
    push(5_000, 2, Withdraw, USDC, "100", "100", None);
    assert_eq!(ledger.len(), 50);
    ledger
}
