//! Cross-pool risk engine: collateral factors, account liquidity, partial
//! liquidation with a liquidator incentive, and reward emission.
//!
//! Account liquidity is the haircut collateral value minus the debt value,
//! summed across every market:
//! `sum_j (1 - gamma_j) P_j Q_j - sum_i P_i L_i`. Negative liquidity makes
//! an account liquidatable; borrows and withdrawals are gated on the
//! weaker condition that liquidity stays non-negative after the action.
//!
//! Rewards stream per block at a configured speed per pool, split equally
//! between the supply side and the borrow side, shared pro rata within
//! each side. A side with no participants forfeits its half to the
//! treasury counter. Accrual is lazily materialized per address through
//! cumulative indices; callers must `touch` an address in a pool before
//! changing its balances there.

use crate::ledger::{AddressId, TokenId};
use crate::pool::{AccountPosition, PoolError, PoolState};
use crate::wad::{SignedWad, Wad, WadError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type Positions = BTreeMap<(AddressId, TokenId), AccountPosition>;
pub type PriceMap = BTreeMap<TokenId, Wad>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComptrollerError {
    #[error("missing price for token {0:?}")]
    MissingPrice(TokenId),
    #[error("missing pool for token {0:?}")]
    MissingPool(TokenId),
    #[error("account liquidity is non-negative; not liquidatable")]
    NotLiquidatable,
    #[error("repay {amount} exceeds close-factor limit {limit}")]
    ExceedsCloseFactor { amount: Wad, limit: Wad },
    #[error("borrower holds {have} cTokens of the seize token, need {need}")]
    InsufficientSeizableCollateral { have: Wad, need: Wad },
    #[error("nothing accrued to claim")]
    NothingToClaim,
    #[error("token {0:?} is not accepted as collateral")]
    NotCollateral(TokenId),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Wad(#[from] WadError),
}

/// Per-token collateral haircut. The collateral factor is `1 - gamma`;
/// tokens not accepted as collateral contribute nothing to borrow limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollateralConfig {
    pub gamma: Wad,
    pub accepted_as_collateral: bool,
}

impl CollateralConfig {
    /// Defaults anchored to common practice: 25% haircut for stablecoins,
    /// 40% for volatile tokens.
    pub fn default_for(is_stablecoin: bool) -> CollateralConfig {
        CollateralConfig {
            gamma: if is_stablecoin {
                Wad(250_000_000_000_000_000)
            } else {
                Wad(400_000_000_000_000_000)
            },
            accepted_as_collateral: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiquidationConfig {
    /// Largest fraction of one debt a single liquidation may repay.
    pub close_factor: Wad,
    /// Premium on seized collateral over the repaid value.
    pub liquidator_incentive: Wad,
}

impl Default for LiquidationConfig {
    fn default() -> Self {
        LiquidationConfig {
            close_factor: Wad(500_000_000_000_000_000),
            liquidator_incentive: Wad(80_000_000_000_000_000),
        }
    }
}

/// Emission speed for one pool: reward tokens per block, half to each
/// side, from `start_block` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub speed_per_block: Wad,
    pub start_block: u64,
}

/// Per-address reward account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RewardAccount {
    pub accrued: Wad,
    pub claimed: Wad,
}

/// Cumulative per-pool reward indices plus exact emission accounting.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RewardPoolState {
    /// Cumulative reward per cToken, scaled by 1e18.
    pub supply_index: Wad,
    /// Cumulative reward per unit of index-normalized debt, scaled by 1e18.
    pub borrow_index: Wad,
    /// Sum of per-address normalized debt weights (principal / snapshot).
    pub total_borrow_weight: Wad,
    pub last_block: u64,
    /// Total reward streamed into this pool so far.
    pub emitted: Wad,
    /// Pots forfeited because a side was empty (treasury counter).
    pub withheld: Wad,
    /// Truncation lost when converting pots to index increments. An upper
    /// estimate: span materialization can recover part of it.
    pub index_dust: Wad,
    /// Number of per-address floor operations, each losing < 1 raw unit.
    pub materializations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
struct RewardSnapshot {
    supply_index: Wad,
    borrow_index: Wad,
    borrow_weight: Wad,
}

/// What a liquidation did, for event emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiquidationOutcome {
    pub repaid: Wad,
    pub seized_ctokens: Wad,
    pub seized_underlying: Wad,
}

/// Raw and reward-adjusted rates for one pool. Reward APYs are absent
/// when the corresponding side has no balance to spread the pot over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetRates {
    pub supply_rate: Wad,
    pub borrow_rate: Wad,
    pub supply_reward_apy: Option<Wad>,
    pub borrow_reward_apy: Option<Wad>,
    pub net_supply_rate: Option<Wad>,
    pub net_borrow_rate: Option<SignedWad>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Comptroller {
    pub collateral: BTreeMap<TokenId, CollateralConfig>,
    pub liquidation: LiquidationConfig,
    pub emission: BTreeMap<TokenId, EmissionParams>,
    pub reward_token: Option<TokenId>,
    pub reward_pools: BTreeMap<TokenId, RewardPoolState>,
    reward_snapshots: BTreeMap<(AddressId, TokenId), RewardSnapshot>,
    pub reward_accounts: BTreeMap<AddressId, RewardAccount>,
}

impl Comptroller {
    pub fn new(
        collateral: BTreeMap<TokenId, CollateralConfig>,
        liquidation: LiquidationConfig,
        emission: BTreeMap<TokenId, EmissionParams>,
        reward_token: Option<TokenId>,
    ) -> Result<Comptroller, ComptrollerError> {
        // the health-improvement inequality must hold for every accepted
        // collateral token, or liquidation could worsen an account
        let bonus = Wad::ONE.checked_add(liquidation.liquidator_incentive)?;
        for (token, cfg) in &collateral {
            if cfg.gamma > Wad::ONE {
                return Err(ComptrollerError::InvalidConfig(format!(
                    "gamma for token {} above 1",
                    token.0
                )));
            }
            if cfg.accepted_as_collateral {
                let factor = (Wad::ONE - cfg.gamma).mul(bonus)?;
                if factor >= Wad::ONE {
                    return Err(ComptrollerError::InvalidConfig(format!(
                        "(1 - gamma)(1 + incentive) >= 1 for token {}",
                        token.0
                    )));
                }
            }
        }
        if liquidation.close_factor.is_zero() || liquidation.close_factor > Wad::ONE {
            return Err(ComptrollerError::InvalidConfig(
                "close factor must be in (0, 1]".into(),
            ));
        }
        Ok(Comptroller {
            collateral,
            liquidation,
            emission,
            reward_token,
            reward_pools: BTreeMap::new(),
            reward_snapshots: BTreeMap::new(),
            reward_accounts: BTreeMap::new(),
        })
    }

    pub fn gamma(&self, token: TokenId) -> Option<Wad> {
        self.collateral.get(&token).map(|c| c.gamma)
    }

    /// USD value of collateral counted toward borrow limits.
    pub fn collateral_value(
        &self,
        address: AddressId,
        pools: &BTreeMap<TokenId, PoolState>,
        positions: &Positions,
        prices: &PriceMap,
    ) -> Result<Wad, ComptrollerError> {
        let mut total = Wad::ZERO;
        for ((addr, token), pos) in positions.range((address, TokenId(0))..=(address, TokenId(u32::MAX))) {
            debug_assert_eq!(*addr, address);
            if pos.ctoken_balance.is_zero() {
                continue;
            }
            let cfg = match self.collateral.get(token) {
                Some(c) if c.accepted_as_collateral => c,
                _ => continue,
            };
            let pool = pools
                .get(token)
                .ok_or(ComptrollerError::MissingPool(*token))?;
            let price = *prices
                .get(token)
                .ok_or(ComptrollerError::MissingPrice(*token))?;
            let underlying = pos.ctoken_balance.mul(pool.exchange_rate()?)?;
            let usd = underlying.mul(price)?;
            total = total.checked_add(usd.mul(Wad::ONE - cfg.gamma)?)?;
        }
        Ok(total)
    }

    /// USD value of outstanding debt across all markets.
    pub fn debt_value(
        &self,
        address: AddressId,
        pools: &BTreeMap<TokenId, PoolState>,
        positions: &Positions,
        prices: &PriceMap,
    ) -> Result<Wad, ComptrollerError> {
        let mut total = Wad::ZERO;
        for ((addr, token), pos) in positions.range((address, TokenId(0))..=(address, TokenId(u32::MAX))) {
            debug_assert_eq!(*addr, address);
            if pos.borrow_principal.is_zero() {
                continue;
            }
            let pool = pools
                .get(token)
                .ok_or(ComptrollerError::MissingPool(*token))?;
            let price = *prices
                .get(token)
                .ok_or(ComptrollerError::MissingPrice(*token))?;
            let debt = pos.current_debt(pool)?;
            total = total.checked_add(debt.mul(price)?)?;
        }
        Ok(total)
    }

    /// Signed USD account liquidity. Negative means liquidatable.
    pub fn account_liquidity(
        &self,
        address: AddressId,
        pools: &BTreeMap<TokenId, PoolState>,
        positions: &Positions,
        prices: &PriceMap,
    ) -> Result<SignedWad, ComptrollerError> {
        let collateral = self
            .collateral_value(address, pools, positions, prices)?
            .to_signed()?;
        let debt = self
            .debt_value(address, pools, positions, prices)?
            .to_signed()?;
        Ok(collateral - debt)
    }

    /// Whether an action adding `extra_debt_usd` of exposure leaves the
    /// account's liquidity non-negative (weak inequality at action time).
    pub fn check_borrow_allowed(
        &self,
        address: AddressId,
        extra_debt_usd: Wad,
        pools: &BTreeMap<TokenId, PoolState>,
        positions: &Positions,
        prices: &PriceMap,
    ) -> Result<bool, ComptrollerError> {
        let liquidity = self.account_liquidity(address, pools, positions, prices)?;
        Ok(liquidity.checked_sub(extra_debt_usd.to_signed()?)?.0 >= 0)
    }

    /// Partially repay an underwater borrower's debt and seize collateral
    /// cTokens worth the repaid value plus the incentive.
    ///
    /// The caller is responsible for checking the liquidator holds the
    /// repay tokens and for appending the ledger events.
    #[allow(clippy::too_many_arguments)]
    pub fn liquidate(
        &mut self,
        liquidator: AddressId,
        borrower: AddressId,
        repay_token: TokenId,
        repay_amount: Wad,
        seize_token: TokenId,
        pools: &mut BTreeMap<TokenId, PoolState>,
        positions: &mut Positions,
        prices: &PriceMap,
    ) -> Result<LiquidationOutcome, ComptrollerError> {
        if repay_amount.is_zero() {
            return Err(ComptrollerError::Pool(PoolError::ZeroAmount));
        }
        let liquidity = self.account_liquidity(borrower, pools, positions, prices)?;
        if !liquidity.is_negative() {
            return Err(ComptrollerError::NotLiquidatable);
        }
        let p_repay = *prices
            .get(&repay_token)
            .ok_or(ComptrollerError::MissingPrice(repay_token))?;
        let p_seize = *prices
            .get(&seize_token)
            .ok_or(ComptrollerError::MissingPrice(seize_token))?;

        let debt = {
            let pool = pools
                .get(&repay_token)
                .ok_or(ComptrollerError::MissingPool(repay_token))?;
            positions
                .get(&(borrower, repay_token))
                .map(|p| p.current_debt(pool))
                .transpose()?
                .unwrap_or(Wad::ZERO)
        };
        let limit = debt.mul(self.liquidation.close_factor)?;
        if repay_amount > limit {
            return Err(ComptrollerError::ExceedsCloseFactor {
                amount: repay_amount,
                limit,
            });
        }

        // seized cTokens = repay * P_repay * (1 + incentive) / (P_seize * rate)
        let seize_rate = pools
            .get(&seize_token)
            .ok_or(ComptrollerError::MissingPool(seize_token))?
            .exchange_rate()?;
        let bonus = Wad::ONE.checked_add(self.liquidation.liquidator_incentive)?;
        let seized_underlying = repay_amount.mul(p_repay)?.mul(bonus)?.div(p_seize)?;
        let seized_ctokens = seized_underlying.div(seize_rate)?;
        let held = positions
            .get(&(borrower, seize_token))
            .map(|p| p.ctoken_balance)
            .unwrap_or(Wad::ZERO);
        if seized_ctokens > held {
            return Err(ComptrollerError::InsufficientSeizableCollateral {
                have: held,
                need: seized_ctokens,
            });
        }

        // repay the debt on the borrower's behalf
        {
            let pool = pools.get_mut(&repay_token).expect("checked above");
            self.touch(borrower, pool, positions.get(&(borrower, repay_token)).unwrap());
            let pos = positions.get_mut(&(borrower, repay_token)).unwrap();
            pool.repay(pos, repay_amount)?;
            let pos = positions.get(&(borrower, repay_token)).unwrap().clone();
            self.update_borrow_weight(borrower, repay_token, &pos);
        }

        // move the seized cTokens, materializing both sides' rewards first
        {
            let pool = pools.get(&seize_token).expect("checked above");
            let borrower_pos = positions.entry((borrower, seize_token)).or_default().clone();
            self.touch(borrower, pool, &borrower_pos);
            let liq_pos = positions.entry((liquidator, seize_token)).or_default().clone();
            self.touch(liquidator, pool, &liq_pos);
        }
        positions
            .get_mut(&(borrower, seize_token))
            .unwrap()
            .ctoken_balance -= seized_ctokens;
        let lp = positions.entry((liquidator, seize_token)).or_default();
        lp.ctoken_balance = lp.ctoken_balance.checked_add(seized_ctokens)?;

        Ok(LiquidationOutcome {
            repaid: repay_amount,
            seized_ctokens,
            seized_underlying,
        })
    }

    /// Stream rewards into a pool's indices up to `block`. O(1) per call;
    /// address balances are settled lazily by `touch`.
    pub fn accrue_rewards(&mut self, pool: &PoolState, block: u64) -> Result<(), ComptrollerError> {
        let Some(params) = self.emission.get(&pool.token).copied() else {
            return Ok(());
        };
        let state = self.reward_pools.entry(pool.token).or_default();
        let from = state.last_block.max(params.start_block);
        state.last_block = block;
        if block <= from || params.speed_per_block.is_zero() {
            return Ok(());
        }
        let delta = (block - from) as u128;
        let pot = params.speed_per_block.mul_int(delta)?;
        state.emitted = state.emitted.checked_add(pot)?;
        let supply_pot = pot.div_int(2)?;
        let borrow_pot = pot - supply_pot;

        // supply side, pro rata by cToken balance
        if pool.ctoken_supply.is_zero() {
            state.withheld = state.withheld.checked_add(supply_pot)?;
        } else {
            match supply_pot.div(pool.ctoken_supply) {
                Ok(delta_idx) => {
                    state.supply_index = state.supply_index.checked_add(delta_idx)?;
                    let distributed = pool.ctoken_supply.mul(delta_idx)?;
                    state.index_dust = state.index_dust.checked_add(supply_pot - distributed)?;
                }
                // a dust-sized side cannot absorb the pot without index
                // overflow; forfeit it like an empty side
                Err(WadError::Overflow(_)) => {
                    state.withheld = state.withheld.checked_add(supply_pot)?;
                }
                Err(e) => return Err(e.into()),
            }
        }

        // borrow side, pro rata by index-normalized debt
        if state.total_borrow_weight.is_zero() {
            state.withheld = state.withheld.checked_add(borrow_pot)?;
        } else {
            let weight = state.total_borrow_weight;
            match borrow_pot.div(weight) {
                Ok(delta_idx) => {
                    state.borrow_index = state.borrow_index.checked_add(delta_idx)?;
                    let distributed = weight.mul(delta_idx)?;
                    state.index_dust = state.index_dust.checked_add(borrow_pot - distributed)?;
                }
                Err(WadError::Overflow(_)) => {
                    state.withheld = state.withheld.checked_add(borrow_pot)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    /// Settle an address's pending rewards in one pool against the current
    /// indices. Must run before the position's balances change. Returns
    /// the newly accrued amount.
    pub fn touch(
        &mut self,
        address: AddressId,
        pool: &PoolState,
        position: &AccountPosition,
    ) -> Wad {
        if !self.emission.contains_key(&pool.token) {
            return Wad::ZERO;
        }
        let state = self.reward_pools.entry(pool.token).or_default();
        let snap = self
            .reward_snapshots
            .entry((address, pool.token))
            .or_default();
        let mut earned = Wad::ZERO;
        if state.supply_index > snap.supply_index && !position.ctoken_balance.is_zero() {
            let d = state.supply_index - snap.supply_index;
            earned += position.ctoken_balance.mul(d).expect("reward mul");
            state.materializations += 1;
        }
        if state.borrow_index > snap.borrow_index && !snap.borrow_weight.is_zero() {
            let d = state.borrow_index - snap.borrow_index;
            earned += snap.borrow_weight.mul(d).expect("reward mul");
            state.materializations += 1;
        }
        snap.supply_index = state.supply_index;
        snap.borrow_index = state.borrow_index;
        if !earned.is_zero() {
            let acct = self.reward_accounts.entry(address).or_default();
            acct.accrued += earned;
        }
        earned
    }

    /// Refresh an address's borrow weight after its principal changed.
    pub fn update_borrow_weight(
        &mut self,
        address: AddressId,
        token: TokenId,
        position: &AccountPosition,
    ) {
        if !self.emission.contains_key(&token) {
            return;
        }
        let new_weight = if position.borrow_principal.is_zero() {
            Wad::ZERO
        } else {
            position
                .borrow_principal
                .div(position.borrow_index_snapshot)
                .expect("borrow weight")
        };
        let state = self.reward_pools.entry(token).or_default();
        let snap = self.reward_snapshots.entry((address, token)).or_default();
        state.total_borrow_weight =
            state.total_borrow_weight + new_weight - snap.borrow_weight;
        snap.borrow_weight = new_weight;
    }

    /// Settle every address in every emitting pool (end-of-run sweep).
    pub fn sweep(&mut self, pools: &BTreeMap<TokenId, PoolState>, positions: &Positions) {
        let keys: Vec<(AddressId, TokenId)> = positions.keys().copied().collect();
        for (addr, token) in keys {
            if let Some(pool) = pools.get(&token) {
                let pos = positions.get(&(addr, token)).unwrap().clone();
                self.touch(addr, pool, &pos);
            }
        }
    }

    /// Move an address's accrued rewards to claimed. The caller mints the
    /// reward tokens and appends the event.
    pub fn claim(&mut self, address: AddressId) -> Result<Wad, ComptrollerError> {
        let acct = self.reward_accounts.entry(address).or_default();
        if acct.accrued.is_zero() {
            return Err(ComptrollerError::NothingToClaim);
        }
        let amount = acct.accrued;
        acct.accrued = Wad::ZERO;
        acct.claimed += amount;
        Ok(amount)
    }

    pub fn accrued(&self, address: AddressId) -> Wad {
        self.reward_accounts
            .get(&address)
            .map(|a| a.accrued)
            .unwrap_or(Wad::ZERO)
    }

    /// Materialized plus still-unsettled rewards for an address, without
    /// mutating anything. What a claim right now would pay out.
    pub fn pending_rewards(
        &self,
        address: AddressId,
        pools: &BTreeMap<TokenId, PoolState>,
        positions: &Positions,
    ) -> Wad {
        let mut total = self.accrued(address);
        for (token, state) in &self.reward_pools {
            let Some(snap) = self.reward_snapshots.get(&(address, *token)) else {
                continue;
            };
            if pools.get(token).is_none() {
                continue;
            }
            if state.supply_index > snap.supply_index {
                if let Some(pos) = positions.get(&(address, *token)) {
                    if !pos.ctoken_balance.is_zero() {
                        let d = state.supply_index - snap.supply_index;
                        total += pos.ctoken_balance.mul(d).unwrap_or(Wad::ZERO);
                    }
                }
            }
            if state.borrow_index > snap.borrow_index && !snap.borrow_weight.is_zero() {
                let d = state.borrow_index - snap.borrow_index;
                total += snap.borrow_weight.mul(d).unwrap_or(Wad::ZERO);
            }
        }
        total
    }

    /// Raw rates plus reward-adjusted net rates for one pool.
    pub fn net_rates(
        &self,
        pool: &PoolState,
        block: u64,
        blocks_per_year: u64,
        prices: &PriceMap,
    ) -> Result<NetRates, ComptrollerError> {
        let supply_rate = pool.current_supply_rate(block)?;
        let borrow_rate = pool.current_borrow_rate(block)?;
        let (mut supply_reward, mut borrow_reward) = (None, None);
        if let (Some(params), Some(reward_token)) =
            (self.emission.get(&pool.token), self.reward_token)
        {
            if !params.speed_per_block.is_zero() && block >= params.start_block {
                let p_reward = *prices
                    .get(&reward_token)
                    .ok_or(ComptrollerError::MissingPrice(reward_token))?;
                let p_token = *prices
                    .get(&pool.token)
                    .ok_or(ComptrollerError::MissingPrice(pool.token))?;
                let side_annual_usd = params
                    .speed_per_block
                    .div_int(2)?
                    .mul_int(blocks_per_year as u128)?
                    .mul(p_reward)?;
                let supplied_usd = pool
                    .ctoken_supply
                    .mul(pool.exchange_rate()?)?
                    .mul(p_token)?;
                if !supplied_usd.is_zero() {
                    supply_reward = Some(side_annual_usd.div(supplied_usd)?);
                }
                let borrowed_usd = pool.total_borrows.mul(p_token)?;
                if !borrowed_usd.is_zero() {
                    borrow_reward = Some(side_annual_usd.div(borrowed_usd)?);
                }
            }
        }
        let net_supply_rate = match supply_reward {
            Some(r) => Some(supply_rate.checked_add(r)?),
            None => Some(supply_rate),
        };
        let net_borrow_rate = match borrow_reward {
            Some(r) => Some(borrow_rate.to_signed()? - r.to_signed()?),
            None => Some(borrow_rate.to_signed()?),
        };
        Ok(NetRates {
            supply_rate,
            borrow_rate,
            supply_reward_apy: supply_reward,
            borrow_reward_apy: borrow_reward,
            net_supply_rate,
            net_borrow_rate,
        })
    }
}
