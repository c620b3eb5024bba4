//! Shared scenario builders for integration tests.

use lendsim_core::agents::{AgentSpec, CapitalDist, GasModel, Strategy};
use lendsim_core::comptroller::{CollateralConfig, LiquidationConfig};
use lendsim_core::interest::InterestParams;
use lendsim_core::ledger::AgentCategory;
use lendsim_core::scenario::{
    OracleConfig, PoolConfig, PriceConfig, RegimeConfig, Scenario, TokenConfig, TokenPriceConfig,
};
use lendsim_core::wad::Wad;
use lendsim_core::TokenId;

pub const ETH: TokenId = TokenId(0);
pub const DAI: TokenId = TokenId(1);

pub fn wad(x: f64) -> Wad {
    Wad::from_f64(x).unwrap()
}

/// Two tokens (volatile ETH at 2000, stablecoin DAI), two pools, no agents.
pub fn base_scenario(horizon: u64) -> Scenario {
    Scenario {
        schema_version: 1,
        seed: 42,
        horizon_blocks: horizon,
        seconds_per_block: 13,
        utilization_convention: Default::default(),
        oracle_amm_coupling: false,
        snapshot_every: 1,
        check_invariants: true,
        tokens: vec![
            TokenConfig {
                symbol: "ETH".into(),
                is_stablecoin: false,
                decimals: 18,
            },
            TokenConfig {
                symbol: "DAI".into(),
                is_stablecoin: true,
                decimals: 18,
            },
        ],
        pools: vec![
            PoolConfig {
                token: ETH,
                initial_exchange_rate: Wad::ONE,
                interest_regimes: vec![RegimeConfig {
                    activation_block: 0,
                    params: InterestParams::default(),
                }],
                collateral: CollateralConfig::default_for(false),
                reward_speed_per_block: Wad::ZERO,
            },
            PoolConfig {
                token: DAI,
                initial_exchange_rate: Wad::ONE,
                interest_regimes: vec![RegimeConfig {
                    activation_block: 0,
                    params: InterestParams::default(),
                }],
                collateral: CollateralConfig::default_for(true),
                reward_speed_per_block: Wad::ZERO,
            },
        ],
        amm_pools: vec![],
        oracle: OracleConfig {
            prices: vec![TokenPriceConfig {
                token: ETH,
                config: PriceConfig::Constant {
                    price: Wad::from_int(2000),
                },
            }],
            shock: None,
        },
        gas: GasModel::default(),
        liquidation: LiquidationConfig::default(),
        reward: None,
        agents: vec![],
    }
}

pub fn depositors(count: u32, capital: u64, token: TokenId, first_address: Option<u32>) -> AgentSpec {
    AgentSpec {
        category: AgentCategory::SmallAddress,
        count,
        capital_usd: CapitalDist::Fixed {
            usd: Wad::from_int(capital),
        },
        strategy: Strategy::HoldDeposit {
            token,
            start_block: 0,
            exit_block: None,
        },
        first_address,
    }
}

pub fn borrowers(
    count: u32,
    capital: u64,
    fraction: f64,
    hold_blocks: u64,
    first_address: Option<u32>,
) -> AgentSpec {
    AgentSpec {
        category: AgentCategory::LargeAddress,
        count,
        capital_usd: CapitalDist::Fixed {
            usd: Wad::from_int(capital),
        },
        strategy: Strategy::BorrowAndHold {
            collateral_token: ETH,
            borrow_token: DAI,
            borrow_fraction: wad(fraction),
            hold_blocks,
            start_block: 0,
            repeat: false,
            redeposit_prob: Wad::ZERO,
        },
        first_address,
    }
}

pub fn liquidator(capital: u64, first_address: Option<u32>) -> AgentSpec {
    AgentSpec {
        category: AgentCategory::LiquidatorBot,
        count: 1,
        capital_usd: CapitalDist::Fixed {
            usd: Wad::from_int(capital),
        },
        strategy: Strategy::LiquidatorBot {
            inventory_token: DAI,
            sell_seized: false,
        },
        first_address,
    }
}

pub fn ledger_bytes(output: &lendsim_core::engine::RunOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    output.ledger.write_jsonl(&mut buf).unwrap();
    buf
}
