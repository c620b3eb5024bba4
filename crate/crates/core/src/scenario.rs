//! Scenario configuration: the single JSON document that, together with a
//! seed, fully determines a run.
//!
//! Tokens are referenced everywhere by their index in the `tokens` array.
//! Validation reports field-level diagnostics before anything executes.

use crate::agents::{AgentSpec, GasModel, Strategy};
use crate::amm::AmmPool;
use crate::comptroller::{CollateralConfig, Comptroller, EmissionParams, LiquidationConfig};
use crate::interest::{InterestParams, RegimeSchedule};
use crate::ledger::{TokenId, TokenInfo};
use crate::oracle::{generate_gbm, PriceOracle, PriceSeries, PriceSource};
use crate::pool::{PoolState, UtilizationConvention};
use crate::wad::Wad;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("scenario field `{field}`: {reason}")]
pub struct ValidationError {
    pub field: String,
    pub reason: String,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ValidationError {
    ValidationError {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenConfig {
    pub symbol: String,
    pub is_stablecoin: bool,
    #[serde(default = "default_decimals")]
    pub decimals: u8,
}

fn default_decimals() -> u8 {
    18
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub activation_block: u64,
    #[serde(flatten)]
    pub params: InterestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub token: TokenId,
    /// Underlying per cToken at launch.
    #[serde(default = "default_exchange_rate")]
    pub initial_exchange_rate: Wad,
    pub interest_regimes: Vec<RegimeConfig>,
    pub collateral: CollateralConfig,
    /// Reward tokens streamed to this pool per block (half to each side).
    #[serde(default)]
    pub reward_speed_per_block: Wad,
}

fn default_exchange_rate() -> Wad {
    Wad::ONE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmmConfig {
    pub token_x: TokenId,
    pub token_y: TokenId,
    pub reserve_x: Wad,
    pub reserve_y: Wad,
    #[serde(default = "default_amm_fee")]
    pub fee: Wad,
    /// Feed token_x's oracle price from this pool's spot each block
    /// (requires the scenario-level coupling flag).
    #[serde(default)]
    pub couple_oracle: bool,
}

fn default_amm_fee() -> Wad {
    Wad(3_000_000_000_000_000)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PriceConfig {
    /// Pegged at exactly 1 USD.
    Stable,
    Constant {
        price: Wad,
    },
    Gbm {
        p0: f64,
        mu_annual: f64,
        sigma_annual: f64,
        /// Mixed into the scenario seed so each token gets its own path.
        #[serde(default)]
        seed_offset: u64,
    },
    /// Per-block price list; must cover the horizon.
    PerBlock {
        prices: Vec<Wad>,
    },
    /// Daily price list, expanded to a per-block step function.
    Daily {
        prices: Vec<Wad>,
    },
    /// CSV file with header `block,price` (per block) or `date,price`
    /// (daily, expanded to a step function). Resolved relative to the
    /// scenario file by `resolve_price_files` before the run starts.
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPriceConfig {
    pub token: TokenId,
    #[serde(flatten)]
    pub config: PriceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockConfig {
    pub block: u64,
    pub multiplier: Wad,
    /// Token to shock; absent means every non-stablecoin.
    #[serde(default)]
    pub token: Option<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(default)]
    pub prices: Vec<TokenPriceConfig>,
    #[serde(default)]
    pub shock: Option<ShockConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub token: TokenId,
    #[serde(default)]
    pub start_block: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon_blocks: u64,
    #[serde(default = "default_spb")]
    pub seconds_per_block: u64,
    #[serde(default)]
    pub utilization_convention: UtilizationConvention,
    #[serde(default)]
    pub oracle_amm_coupling: bool,
    /// Record pool/risk/price snapshots every N blocks.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    /// Verify conservation and accrual identities every block (slower).
    #[serde(default)]
    pub check_invariants: bool,
    pub tokens: Vec<TokenConfig>,
    pub pools: Vec<PoolConfig>,
    #[serde(default)]
    pub amm_pools: Vec<AmmConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub gas: GasModel,
    #[serde(default)]
    pub liquidation: LiquidationConfig,
    #[serde(default)]
    pub reward: Option<RewardConfig>,
    pub agents: Vec<AgentSpec>,
}

fn default_spb() -> u64 {
    13
}

fn default_snapshot_every() -> u64 {
    1
}

impl Scenario {
    pub fn from_json(json: &str) -> Result<Scenario, ValidationError> {
        let scenario: Scenario = serde_json::from_str(json)
            .map_err(|e| invalid("<document>", e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn token(&self, id: TokenId) -> Option<&TokenConfig> {
        self.tokens.get(id.0 as usize)
    }

    fn check_token(&self, field: &str, id: TokenId) -> Result<(), ValidationError> {
        if self.token(id).is_none() {
            return Err(invalid(field, format!("token {} does not exist", id.0)));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.horizon_blocks == 0 {
            return Err(invalid("horizon_blocks", "must be at least 1"));
        }
        if self.seconds_per_block == 0 {
            return Err(invalid("seconds_per_block", "must be positive"));
        }
        if self.snapshot_every == 0 {
            return Err(invalid("snapshot_every", "must be positive"));
        }
        if self.tokens.is_empty() {
            return Err(invalid("tokens", "at least one token required"));
        }
        let mut symbols = BTreeSet::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if !symbols.insert(t.symbol.clone()) {
                return Err(invalid(
                    format!("tokens[{i}].symbol"),
                    format!("duplicate symbol {:?}", t.symbol),
                ));
            }
        }
        let mut pool_tokens = BTreeSet::new();
        for (i, p) in self.pools.iter().enumerate() {
            self.check_token(&format!("pools[{i}].token"), p.token)?;
            if !pool_tokens.insert(p.token) {
                return Err(invalid(
                    format!("pools[{i}].token"),
                    "duplicate pool for token",
                ));
            }
            if p.initial_exchange_rate.is_zero() {
                return Err(invalid(
                    format!("pools[{i}].initial_exchange_rate"),
                    "must be positive",
                ));
            }
            let entries: Vec<(u64, InterestParams)> = p
                .interest_regimes
                .iter()
                .map(|r| (r.activation_block, r.params))
                .collect();
            RegimeSchedule::new(entries)
                .map_err(|e| invalid(format!("pools[{i}].interest_regimes"), e.to_string()))?;
        }
        for (i, cfg) in self.oracle.prices.iter().enumerate() {
            self.check_token(&format!("oracle.prices[{i}].token"), cfg.token)?;
            match &cfg.config {
                PriceConfig::Constant { price } if price.is_zero() => {
                    return Err(invalid(
                        format!("oracle.prices[{i}].price"),
                        "must be positive",
                    ));
                }
                PriceConfig::Gbm { p0, sigma_annual, .. } => {
                    if *p0 <= 0.0 || !p0.is_finite() {
                        return Err(invalid(
                            format!("oracle.prices[{i}].p0"),
                            "must be positive",
                        ));
                    }
                    if *sigma_annual < 0.0 {
                        return Err(invalid(
                            format!("oracle.prices[{i}].sigma_annual"),
                            "must be non-negative",
                        ));
                    }
                }
                PriceConfig::PerBlock { prices } | PriceConfig::Daily { prices } => {
                    if prices.is_empty() {
                        return Err(invalid(
                            format!("oracle.prices[{i}].prices"),
                            "must not be empty",
                        ));
                    }
                    if prices.iter().any(|p| p.is_zero()) {
                        return Err(invalid(
                            format!("oracle.prices[{i}].prices"),
                            "prices must be positive",
                        ));
                    }
                }
                _ => {}
            }
        }
        if let Some(shock) = &self.oracle.shock {
            if shock.multiplier.is_zero() {
                return Err(invalid("oracle.shock.multiplier", "must be positive"));
            }
            if shock.block >= self.horizon_blocks {
                return Err(invalid("oracle.shock.block", "beyond horizon"));
            }
            if let Some(t) = shock.token {
                self.check_token("oracle.shock.token", t)?;
            }
        }
        for (i, a) in self.amm_pools.iter().enumerate() {
            self.check_token(&format!("amm_pools[{i}].token_x"), a.token_x)?;
            self.check_token(&format!("amm_pools[{i}].token_y"), a.token_y)?;
            if a.token_x == a.token_y {
                return Err(invalid(
                    format!("amm_pools[{i}]"),
                    "pair tokens must differ",
                ));
            }
            if a.reserve_x.is_zero() || a.reserve_y.is_zero() {
                return Err(invalid(
                    format!("amm_pools[{i}]"),
                    "reserves must be positive",
                ));
            }
            if a.fee >= Wad::ONE {
                return Err(invalid(format!("amm_pools[{i}].fee"), "must be below 1"));
            }
            if a.couple_oracle && !self.oracle_amm_coupling {
                return Err(invalid(
                    format!("amm_pools[{i}].couple_oracle"),
                    "requires scenario oracle_amm_coupling",
                ));
            }
        }
        if let Some(reward) = &self.reward {
            self.check_token("reward.token", reward.token)?;
        } else {
            for (i, p) in self.pools.iter().enumerate() {
                if !p.reward_speed_per_block.is_zero() {
                    return Err(invalid(
                        format!("pools[{i}].reward_speed_per_block"),
                        "reward speed set but no reward token configured",
                    ));
                }
            }
        }
        // the health-improvement inequality, per accepted collateral token
        let bonus = Wad::ONE + self.liquidation.liquidator_incentive;
        for (i, p) in self.pools.iter().enumerate() {
            if p.collateral.accepted_as_collateral {
                let factor = (Wad::ONE - p.collateral.gamma)
                    .mul(bonus)
                    .map_err(|e| invalid(format!("pools[{i}].collateral"), e.to_string()))?;
                if factor >= Wad::ONE {
                    return Err(invalid(
                        format!("pools[{i}].collateral.gamma"),
                        "(1 - gamma)(1 + incentive) must stay below 1",
                    ));
                }
            }
        }
        // agents: token references, address ranges, strategy constraints
        let gamma_of = |t: TokenId| {
            self.pools
                .iter()
                .find(|p| p.token == t)
                .map(|p| p.collateral.gamma)
        };
        let mut claimed: Vec<(u32, u32)> = Vec::new();
        let mut next_auto = 0u32;
        for (i, spec) in self.agents.iter().enumerate() {
            let field = format!("agents[{i}]");
            let start = spec.first_address.unwrap_or(next_auto);
            let end = start
                .checked_add(spec.count)
                .ok_or_else(|| invalid(&field, "address range overflows"))?;
            for &(s, e) in &claimed {
                if start < e && s < end {
                    return Err(invalid(
                        format!("{field}.first_address"),
                        "address range overlaps another spec",
                    ));
                }
            }
            claimed.push((start, end));
            next_auto = next_auto.max(end);
            match &spec.strategy {
                Strategy::HoldDeposit { token, .. } | Strategy::RateChaser { token, .. } => {
                    self.check_token(&format!("{field}.strategy.token"), *token)?;
                }
                Strategy::BorrowAndHold {
                    collateral_token,
                    borrow_token,
                    borrow_fraction,
                    ..
                } => {
                    self.check_token(&format!("{field}.strategy.collateral_token"), *collateral_token)?;
                    self.check_token(&format!("{field}.strategy.borrow_token"), *borrow_token)?;
                    if *borrow_fraction > Wad::ONE {
                        return Err(invalid(
                            format!("{field}.strategy.borrow_fraction"),
                            "must be at most 1",
                        ));
                    }
                }
                Strategy::LeverageLoop { token, fraction, .. } => {
                    self.check_token(&format!("{field}.strategy.token"), *token)?;
                    let gamma = gamma_of(*token).ok_or_else(|| {
                        invalid(format!("{field}.strategy.token"), "no pool for token")
                    })?;
                    if *fraction > Wad::ONE - gamma {
                        return Err(invalid(
                            format!("{field}.strategy.fraction"),
                            "must be at most 1 - gamma",
                        ));
                    }
                }
                Strategy::LiquidatorBot { inventory_token, .. } => {
                    self.check_token(&format!("{field}.strategy.inventory_token"), *inventory_token)?;
                }
                Strategy::MicroAirdrop { token, deposit_usd, .. } => {
                    self.check_token(&format!("{field}.strategy.token"), *token)?;
                    let t = self.token(*token).unwrap();
                    if !t.is_stablecoin {
                        return Err(invalid(
                            format!("{field}.strategy.token"),
                            "micro deposits must be stablecoin",
                        ));
                    }
                    if *deposit_usd > Wad::from_int(3) {
                        return Err(invalid(
                            format!("{field}.strategy.deposit_usd"),
                            "micro deposits are at most 3 USD",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Token metadata in TokenId order.
    pub fn token_infos(&self) -> Vec<TokenInfo> {
        self.tokens
            .iter()
            .map(|t| TokenInfo {
                symbol: t.symbol.clone(),
                is_stablecoin: t.is_stablecoin,
                decimals: t.decimals,
            })
            .collect()
    }

    /// Build the lending pools.
    pub fn build_pools(&self) -> BTreeMap<TokenId, PoolState> {
        self.pools
            .iter()
            .map(|p| {
                let entries = p
                    .interest_regimes
                    .iter()
                    .map(|r| (r.activation_block, r.params))
                    .collect();
                let schedule = RegimeSchedule::new(entries).expect("validated");
                (
                    p.token,
                    PoolState::new(
                        p.token,
                        schedule,
                        p.initial_exchange_rate,
                        self.utilization_convention,
                    ),
                )
            })
            .collect()
    }

    /// Build the AMM pools in config order.
    pub fn build_amms(&self) -> Vec<AmmPool> {
        self.amm_pools
            .iter()
            .map(|a| {
                AmmPool::new(a.token_x, a.token_y, a.reserve_x, a.reserve_y, a.fee)
                    .expect("validated")
            })
            .collect()
    }

    /// Build the risk engine.
    pub fn build_comptroller(&self) -> Comptroller {
        let collateral: BTreeMap<TokenId, CollateralConfig> = self
            .pools
            .iter()
            .map(|p| (p.token, p.collateral))
            .collect();
        let mut emission = BTreeMap::new();
        if let Some(reward) = &self.reward {
            for p in &self.pools {
                if !p.reward_speed_per_block.is_zero() {
                    emission.insert(
                        p.token,
                        EmissionParams {
                            speed_per_block: p.reward_speed_per_block,
                            start_block: reward.start_block,
                        },
                    );
                }
            }
        }
        Comptroller::new(
            collateral,
            self.liquidation,
            emission,
            self.reward.as_ref().map(|r| r.token),
        )
        .expect("validated")
    }

    /// Materialize every token's price path, including the configured
    /// shock. Tokens without an explicit config default to 1.0 when
    /// flagged stablecoin, and must be configured otherwise.
    pub fn build_oracle(&self) -> Result<PriceOracle, ValidationError> {
        let mut oracle = PriceOracle::new();
        let mut configured: BTreeMap<TokenId, &PriceConfig> = BTreeMap::new();
        for cfg in &self.oracle.prices {
            configured.insert(cfg.token, &cfg.config);
        }
        for (idx, token) in self.tokens.iter().enumerate() {
            let id = TokenId(idx as u32);
            let series = match configured.get(&id) {
                Some(PriceConfig::Stable) | None if token.is_stablecoin => {
                    PriceSeries::constant(id, Wad::ONE, self.horizon_blocks)
                }
                Some(PriceConfig::Stable) => {
                    PriceSeries::constant(id, Wad::ONE, self.horizon_blocks)
                }
                Some(PriceConfig::Constant { price }) => {
                    PriceSeries::constant(id, *price, self.horizon_blocks)
                }
                Some(PriceConfig::Gbm {
                    p0,
                    mu_annual,
                    sigma_annual,
                    seed_offset,
                }) => generate_gbm(
                    id,
                    token_seed(self.seed, id, *seed_offset),
                    *p0,
                    *mu_annual,
                    *sigma_annual,
                    self.horizon_blocks,
                    self.seconds_per_block,
                )
                .map_err(|e| invalid("oracle.prices", e.to_string()))?,
                Some(PriceConfig::PerBlock { prices }) => {
                    let mut expanded = prices.clone();
                    if (expanded.len() as u64) < self.horizon_blocks {
                        let last = *expanded.last().unwrap();
                        expanded.resize(self.horizon_blocks as usize, last);
                    }
                    PriceSeries::from_prices(id, PriceSource::File, expanded)
                        .map_err(|e| invalid("oracle.prices", e.to_string()))?
                }
                Some(PriceConfig::Daily { prices }) => PriceSeries::from_daily(
                    id,
                    prices,
                    self.horizon_blocks,
                    self.seconds_per_block,
                )
                .map_err(|e| invalid("oracle.prices", e.to_string()))?,
                Some(PriceConfig::File { path }) => {
                    return Err(invalid(
                        "oracle.prices",
                        format!(
                            "price file {path:?} not resolved; call resolve_price_files first"
                        ),
                    ));
                }
                None => {
                    return Err(invalid(
                        "oracle.prices",
                        format!(
                            "non-stablecoin token {} ({}) has no price config",
                            id.0, token.symbol
                        ),
                    ));
                }
            };
            oracle.insert(series);
        }
        if let Some(shock) = &self.oracle.shock {
            let targets: Vec<TokenId> = match shock.token {
                Some(t) => vec![t],
                None => self
                    .tokens
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| !t.is_stablecoin)
                    .map(|(i, _)| TokenId(i as u32))
                    .collect(),
            };
            for t in targets {
                oracle
                    .series_mut(t)
                    .map_err(|e| invalid("oracle.shock", e.to_string()))?
                    .apply_shock(shock.block, shock.multiplier)
                    .map_err(|e| invalid("oracle.shock", e.to_string()))?;
            }
        }
        Ok(oracle)
    }
}

impl Scenario {
    /// Replace `File` price sources with the loaded series. Paths are
    /// resolved relative to `base_dir`. A `block,price` header yields a
    /// per-block series; `date,price` yields a daily series whose rows
    /// are consecutive days in file order.
    pub fn resolve_price_files(&mut self, base_dir: &std::path::Path) -> Result<(), ValidationError> {
        for (i, cfg) in self.oracle.prices.iter_mut().enumerate() {
            let PriceConfig::File { path } = &cfg.config else {
                continue;
            };
            let field = format!("oracle.prices[{i}].path");
            let full = base_dir.join(path);
            let file = std::fs::File::open(&full)
                .map_err(|e| invalid(&field, format!("cannot open {}: {e}", full.display())))?;
            let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
            let headers = rdr
                .headers()
                .map_err(|e| invalid(&field, e.to_string()))?
                .clone();
            let daily = match (headers.get(0), headers.get(1)) {
                (Some("block"), Some("price")) => false,
                (Some("date"), Some("price")) => true,
                _ => {
                    return Err(invalid(
                        &field,
                        "header must be 'block,price' or 'date,price'",
                    ));
                }
            };
            let mut prices = Vec::new();
            for record in rdr.records() {
                let record = record.map_err(|e| invalid(&field, e.to_string()))?;
                let price: Wad = record
                    .get(1)
                    .unwrap_or("")
                    .parse()
                    .map_err(|e: crate::wad::WadError| invalid(&field, e.to_string()))?;
                prices.push(price);
            }
            if prices.is_empty() {
                return Err(invalid(&field, "price file has no rows"));
            }
            cfg.config = if daily {
                PriceConfig::Daily { prices }
            } else {
                PriceConfig::PerBlock { prices }
            };
        }
        Ok(())
    }
}

/// Stable per-token seed derivation.
pub fn token_seed(scenario_seed: u64, token: TokenId, offset: u64) -> u64 {
    scenario_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((token.0 as u64 + 1).wrapping_mul(0x517C_C1B7_2722_0A95))
        .wrapping_add(offset)
}

/// Stable per-agent seed derivation.
pub fn agent_seed(scenario_seed: u64, address: u32) -> u64 {
    scenario_seed
        .wrapping_mul(0xD1B5_4A32_D192_ED03)
        .wrapping_add((address as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::CapitalDist;
    use crate::ledger::AgentCategory;

    fn minimal() -> Scenario {
        Scenario {
            schema_version: 1,
            seed: 7,
            horizon_blocks: 100,
            seconds_per_block: 13,
            utilization_convention: UtilizationConvention::CashPlusBorrows,
            oracle_amm_coupling: false,
            snapshot_every: 1,
            check_invariants: false,
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
                    token: TokenId(0),
                    initial_exchange_rate: Wad::ONE,
                    interest_regimes: vec![RegimeConfig {
                        activation_block: 0,
                        params: InterestParams::default(),
                    }],
                    collateral: CollateralConfig::default_for(false),
                    reward_speed_per_block: Wad::ZERO,
                },
                PoolConfig {
                    token: TokenId(1),
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
                    token: TokenId(0),
                    config: PriceConfig::Constant {
                        price: Wad::from_int(2000),
                    },
                }],
                shock: None,
            },
            gas: GasModel::default(),
            liquidation: LiquidationConfig::default(),
            reward: None,
            agents: vec![AgentSpec {
                category: AgentCategory::SmallAddress,
                count: 2,
                capital_usd: CapitalDist::Fixed {
                    usd: Wad::from_int(1000),
                },
                strategy: Strategy::HoldDeposit {
                    token: TokenId(1),
                    start_block: 0,
                    exit_block: None,
                },
                first_address: None,
            }],
        }
    }

    #[test]
    fn minimal_scenario_validates_and_builds() {
        let s = minimal();
        s.validate().unwrap();
        let pools = s.build_pools();
        assert_eq!(pools.len(), 2);
        let oracle = s.build_oracle().unwrap();
        assert_eq!(oracle.price(TokenId(1), 50).unwrap(), Wad::ONE);
        assert_eq!(oracle.price(TokenId(0), 50).unwrap(), Wad::from_int(2000));
    }

    #[test]
    fn json_roundtrip() {
        let s = minimal();
        let json = serde_json::to_string_pretty(&s).unwrap();
        let back = Scenario::from_json(&json).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_bad_schema_version() {
        let mut s = minimal();
        s.schema_version = 2;
        let err = s.validate().unwrap_err();
        assert_eq!(err.field, "schema_version");
    }

    #[test]
    fn rejects_unknown_token_reference() {
        let mut s = minimal();
        s.pools[0].token = TokenId(9);
        let err = s.validate().unwrap_err();
        assert!(err.field.contains("pools[0]"));
    }

    #[test]
    fn rejects_missing_volatile_price() {
        let mut s = minimal();
        s.oracle.prices.clear();
        s.validate().unwrap();
        let err = s.build_oracle().unwrap_err();
        assert!(err.reason.contains("no price config"));
    }

    #[test]
    fn rejects_overlapping_address_ranges() {
        let mut s = minimal();
        let mut extra = s.agents[0].clone();
        extra.first_address = Some(1);
        s.agents.push(extra);
        let err = s.validate().unwrap_err();
        assert!(err.reason.contains("overlaps"));
    }

    #[test]
    fn rejects_leverage_fraction_above_limit() {
        let mut s = minimal();
        s.agents.push(AgentSpec {
            category: AgentCategory::YieldAggregator,
            count: 1,
            capital_usd: CapitalDist::Fixed {
                usd: Wad::from_int(1000),
            },
            strategy: Strategy::LeverageLoop {
                token: TokenId(1),
                fraction: Wad::from_f64(0.8).unwrap(),
                rounds: 5,
                start_block: 0,
                claim_threshold: Wad::ONE,
            },
            first_address: None,
        });
        // DAI gamma is 0.25, so 0.8 > 0.75 is rejected
        let err = s.validate().unwrap_err();
        assert!(err.reason.contains("1 - gamma"));
    }

    #[test]
    fn price_files_resolve_per_block_and_daily() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("eth.csv"), "block,price\n0,2000\n1,1800\n").unwrap();
        std::fs::write(dir.path().join("daily.csv"), "date,price\n2021-01-01,10\n2021-01-02,20\n")
            .unwrap();
        let mut s = minimal();
        s.oracle.prices = vec![TokenPriceConfig {
            token: TokenId(0),
            config: PriceConfig::File {
                path: "eth.csv".into(),
            },
        }];
        // unresolved file sources refuse to build
        assert!(s.build_oracle().is_err());
        s.resolve_price_files(dir.path()).unwrap();
        let oracle = s.build_oracle().unwrap();
        assert_eq!(oracle.price(TokenId(0), 0).unwrap(), Wad::from_int(2000));
        assert_eq!(oracle.price(TokenId(0), 1).unwrap(), Wad::from_int(1800));
        // the last value extends to the horizon
        assert_eq!(oracle.price(TokenId(0), 99).unwrap(), Wad::from_int(1800));

        let mut s = minimal();
        s.seconds_per_block = 86_400; // one block per day
        s.oracle.prices = vec![TokenPriceConfig {
            token: TokenId(0),
            config: PriceConfig::File {
                path: "daily.csv".into(),
            },
        }];
        s.resolve_price_files(dir.path()).unwrap();
        let oracle = s.build_oracle().unwrap();
        assert_eq!(oracle.price(TokenId(0), 0).unwrap(), Wad::from_int(10));
        assert_eq!(oracle.price(TokenId(0), 1).unwrap(), Wad::from_int(20));

        // missing file is a field-level diagnostic
        let mut s = minimal();
        s.oracle.prices = vec![TokenPriceConfig {
            token: TokenId(0),
            config: PriceConfig::File {
                path: "nope.csv".into(),
            },
        }];
        let err = s.resolve_price_files(dir.path()).unwrap_err();
        assert!(err.field.contains("oracle.prices[0]"));
    }

    #[test]
    fn shock_applies_to_non_stablecoins_by_default() {
        let mut s = minimal();
        s.oracle.shock = Some(ShockConfig {
            block: 10,
            multiplier: Wad::from_f64(0.5).unwrap(),
            token: None,
        });
        let oracle = s.build_oracle().unwrap();
        assert_eq!(oracle.price(TokenId(0), 10).unwrap(), Wad::from_int(1000));
        // stablecoin untouched
        assert_eq!(oracle.price(TokenId(1), 10).unwrap(), Wad::ONE);
    }
}
