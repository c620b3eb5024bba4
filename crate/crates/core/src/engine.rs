//! The deterministic block loop.
//!
//! Each block executes fixed phases in order: (1) oracle update, (2) pool
//! interest accrual, (3) reward accrual, (4) agent steps in AddressId
//! order, (5) liquidation scan and execution, (6) snapshot. A scenario and
//! its seed fully determine every output byte.
//!
//! Gas is a USD-denominated meta cost charged to agent PnL; it never moves
//! tokens, so per-token conservation is exact: for every token, agent
//! wallets plus pool cash plus AMM reserves equals everything ever minted
//! or injected.

use crate::agents::{
    liquidator_scan, AgentState, Amount, GasModel, Intent, Strategy, WorldView,
};
use crate::amm::AmmPool;
use crate::comptroller::{Comptroller, PriceMap, Positions};
use crate::ledger::{AddressId, AgentCategory, BlockClock, Event, EventKind, Ledger, TokenId};
use crate::oracle::PriceOracle;
use crate::pool::PoolState;
use crate::scenario::{agent_seed, Scenario, ValidationError};
use crate::wad::{SignedWad, Wad};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("invariant violated at block {block}: {what}")]
    InvariantViolation { block: u64, what: String },
    #[error("engine fault at block {block}: {what}")]
    Fault { block: u64, what: String },
}

/// One pool snapshot row (per snapshot block, per pool).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSnapshotRow {
    pub block: u64,
    pub token: TokenId,
    pub cash: Wad,
    pub borrows: Wad,
    pub reserves: Wad,
    pub ctoken_supply: Wad,
    pub exchange_rate: Wad,
    pub utilization: Wad,
    pub borrow_rate: Wad,
    pub supply_rate: Wad,
    pub supply_reward_apy: Option<Wad>,
    pub borrow_reward_apy: Option<Wad>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmmSnapshotRow {
    pub block: u64,
    pub token_x: TokenId,
    pub token_y: TokenId,
    pub reserve_x: Wad,
    pub reserve_y: Wad,
    pub spot_price: Wad,
}

/// Borrower risk row (accounts with open debt only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub block: u64,
    pub address: AddressId,
    pub liquidity_usd: SignedWad,
    pub total_collateral_usd: Wad,
    pub total_debt_usd: Wad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub block: u64,
    pub token: TokenId,
    pub price: Wad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub address: AddressId,
    pub category: AgentCategory,
    pub total_deposited: Wad,
    pub total_borrowed: Wad,
    pub reward_claimed: Wad,
    pub liquidated_count: u64,
    pub pnl_usd: SignedWad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub address: AddressId,
    pub accrued: Wad,
    pub claimed: Wad,
}

/// An agent intent the engine refused, kept as data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub block: u64,
    pub address: AddressId,
    pub action: String,
    pub reason: String,
}

/// Per-block liquidation activity, with fire-sale wave attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidationBlockRow {
    pub block: u64,
    pub liquidation_usd: Wad,
    pub events: u64,
    pub outstanding_loans_usd: Wad,
    pub max_wave: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub blocks: u64,
    pub events: u64,
    pub total_deposited_usd: Wad,
    pub total_borrowed_usd: Wad,
    pub total_liquidated_usd: Wad,
    pub liquidation_events: u64,
    pub cascade_waves: u32,
    pub rejected_intents: u64,
}

/// Everything a run produces. Derivable from (scenario, seed) alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub ledger: Ledger,
    pub pool_snapshots: Vec<PoolSnapshotRow>,
    pub amm_snapshots: Vec<AmmSnapshotRow>,
    pub risk_rows: Vec<RiskRow>,
    pub price_rows: Vec<PriceRow>,
    pub agent_summaries: Vec<AgentSummary>,
    pub reward_rows: Vec<RewardRow>,
    pub rejections: Vec<Rejection>,
    pub liquidation_blocks: Vec<LiquidationBlockRow>,
    pub summary: RunSummary,
}

/// Why a token's price moved at the last oracle update, for cascade wave
/// attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PriceCause {
    Exogenous,
    Shock,
    /// AMM-coupled move after liquidator bots sold seized collateral of
    /// the given wave.
    BotSale(u32),
}

struct Sim {
    scenario: Scenario,
    clock: BlockClock,
    pools: BTreeMap<TokenId, PoolState>,
    positions: Positions,
    comptroller: Comptroller,
    oracle: PriceOracle,
    amms: Vec<AmmPool>,
    agents: Vec<AgentState>,
    agent_rngs: Vec<ChaCha12Rng>,
    ledger: Ledger,
    gas: GasModel,
    prices: PriceMap,
    injected: BTreeMap<TokenId, Wad>,
    // cascade bookkeeping
    price_cause: BTreeMap<TokenId, PriceCause>,
    seized_wave: BTreeMap<TokenId, u32>,
    sold_wave: BTreeMap<TokenId, (u64, u32)>,
    max_wave: u32,
    // output accumulators
    pool_snapshots: Vec<PoolSnapshotRow>,
    amm_snapshots: Vec<AmmSnapshotRow>,
    risk_rows: Vec<RiskRow>,
    price_rows: Vec<PriceRow>,
    rejections: Vec<Rejection>,
    liquidation_blocks: Vec<LiquidationBlockRow>,
    summary: RunSummary,
}

/// Run a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, EngineError> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario.clone())?;
    let horizon = scenario.horizon_blocks;
    for block in 0..horizon {
        sim.step_block(block)?;
    }
    sim.finish()
}

impl Sim {
    fn new(scenario: Scenario) -> Result<Sim, EngineError> {
        let pools = scenario.build_pools();
        let comptroller = scenario.build_comptroller();
        let oracle = scenario.build_oracle()?;
        let amms = scenario.build_amms();
        let gas = scenario.gas;
        let clock = BlockClock::new(scenario.seconds_per_block);

        let mut injected: BTreeMap<TokenId, Wad> = BTreeMap::new();
        for amm in &amms {
            *injected.entry(amm.token_x).or_insert(Wad::ZERO) += amm.reserve_x;
            *injected.entry(amm.token_y).or_insert(Wad::ZERO) += amm.reserve_y;
        }

        // block-0 prices are needed to convert capital USD into wallets
        let mut prices = PriceMap::new();
        for token in oracle.tokens() {
            prices.insert(
                token,
                oracle
                    .price(token, 0)
                    .map_err(|e| EngineError::Fault {
                        block: 0,
                        what: e.to_string(),
                    })?,
            );
        }

        // expand agent specs; addresses pin the stepping order
        let mut agents: Vec<AgentState> = Vec::new();
        let mut next_auto = 0u32;
        for spec in &scenario.agents {
            let start = spec.first_address.unwrap_or(next_auto);
            next_auto = next_auto.max(start + spec.count);
            for i in 0..spec.count {
                let address = AddressId(start + i);
                let mut rng = ChaCha12Rng::seed_from_u64(agent_seed(scenario.seed, address.0));
                let capital = spec.capital_usd.sample(&mut rng);
                let mut agent =
                    AgentState::new(address, spec.category, spec.strategy.clone(), capital);
                fund_wallet(&mut agent, capital, &prices, &mut injected);
                agents.push(agent);
            }
        }
        agents.sort_by_key(|a| a.address);
        let agent_rngs = agents
            .iter()
            .map(|a| ChaCha12Rng::seed_from_u64(agent_seed(scenario.seed, a.address.0).rotate_left(17)))
            .collect();

        Ok(Sim {
            scenario,
            clock,
            pools,
            positions: Positions::new(),
            comptroller,
            oracle,
            amms,
            agents,
            agent_rngs,
            ledger: Ledger::new(),
            gas,
            prices,
            injected,
            price_cause: BTreeMap::new(),
            seized_wave: BTreeMap::new(),
            sold_wave: BTreeMap::new(),
            max_wave: 0,
            pool_snapshots: Vec::new(),
            amm_snapshots: Vec::new(),
            risk_rows: Vec::new(),
            price_rows: Vec::new(),
            rejections: Vec::new(),
            liquidation_blocks: Vec::new(),
            summary: RunSummary::default(),
        })
    }

    fn step_block(&mut self, block: u64) -> Result<(), EngineError> {
        self.clock.block_number = block;

        // phase 1: oracle update
        self.update_prices(block)?;

        // phase 2: interest accrual (regime changes bind before accrual)
        let bpy = self.clock.blocks_per_year();
        for pool in self.pools.values_mut() {
            let before_borrows = pool.total_borrows;
            let before_reserves = pool.total_reserves;
            let accrual = pool.accrue(block, bpy).map_err(|e| EngineError::Fault {
                block,
                what: e.to_string(),
            })?;
            if self.scenario.check_invariants {
                // reserve share must be exactly lambda of the interest
                let interest = pool.total_borrows - before_borrows;
                let lambda = pool.schedule.active_params(block).reserve_factor;
                let expected = interest.mul(lambda).expect("reserve check");
                if pool.total_reserves - before_reserves != expected
                    || interest != accrual.interest
                {
                    return Err(EngineError::InvariantViolation {
                        block,
                        what: format!("accrual identity broken for token {}", pool.token.0),
                    });
                }
            }
        }

        // phase 3: reward accrual
        let pool_tokens: Vec<TokenId> = self.pools.keys().copied().collect();
        for t in &pool_tokens {
            let pool = self.pools.get(t).unwrap().clone();
            self.comptroller
                .accrue_rewards(&pool, block)
                .map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
        }

        // phase 4: agent steps in AddressId order
        let mut agents = std::mem::take(&mut self.agents);
        let mut rngs = std::mem::take(&mut self.agent_rngs);
        for (agent, rng) in agents.iter_mut().zip(rngs.iter_mut()) {
            let intents = {
                let view = WorldView {
                    block,
                    blocks_per_year: bpy,
                    pools: &self.pools,
                    positions: &self.positions,
                    prices: &self.prices,
                    comptroller: &self.comptroller,
                    gas: &self.gas,
                };
                agent.step(&view, rng)
            };
            for intent in intents {
                if let Err(reason) = self.apply_intent(agent, block, intent) {
                    self.summary.rejected_intents += 1;
                    self.rejections.push(Rejection {
                        block,
                        address: agent.address,
                        action: format!("{intent:?}"),
                        reason,
                    });
                }
            }
        }

        // phase 5: liquidation scan and execution
        self.run_liquidations(&mut agents, block)?;
        self.agents = agents;
        self.agent_rngs = rngs;

        // phase 6: snapshot
        if block.is_multiple_of(self.scenario.snapshot_every) || block + 1 == self.scenario.horizon_blocks {
            self.snapshot(block)?;
        }
        if self.scenario.check_invariants {
            self.check_conservation(block)?;
        }
        Ok(())
    }

    fn update_prices(&mut self, block: u64) -> Result<(), EngineError> {
        self.price_cause.clear();
        // AMM-coupled tokens read the spot of the pool after last block's
        // trades; everything else follows its exogenous series
        if self.scenario.oracle_amm_coupling {
            // an exogenous shock reaches a coupled market through
            // arbitrage: external traders rebalance the pool to the
            // shocked price before the oracle reads it
            if let Some(shock) = self.scenario.oracle.shock.clone() {
                if shock.block == block {
                    for (i, amm) in self.amms.iter_mut().enumerate() {
                        if !self.scenario.amm_pools[i].couple_oracle {
                            continue;
                        }
                        let hit = match shock.token {
                            Some(t) => t == amm.token_x,
                            None => {
                                !self.scenario.tokens[amm.token_x.0 as usize].is_stablecoin
                            }
                        };
                        if !hit {
                            continue;
                        }
                        let spot = amm.spot_price().map_err(|e| EngineError::Fault {
                            block,
                            what: e.to_string(),
                        })?;
                        let target = spot.mul(shock.multiplier).map_err(|e| {
                            EngineError::Fault {
                                block,
                                what: e.to_string(),
                            }
                        })?;
                        if let Some((token_in, amount_in, amount_out)) =
                            arb_to_spot(amm, target)
                        {
                            let token_out =
                                amm.other(token_in).expect("arb token in pair");
                            *self.injected.entry(token_in).or_insert(Wad::ZERO) +=
                                amount_in;
                            let inj = self
                                .injected
                                .entry(token_out)
                                .or_insert(Wad::ZERO);
                            *inj = inj.saturating_sub(amount_out);
                        }
                    }
                }
            }
            for (i, amm) in self.amms.iter().enumerate() {
                if !self.scenario.amm_pools[i].couple_oracle {
                    continue;
                }
                let spot = amm.spot_price().map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
                let p_y = self
                    .oracle
                    .price(amm.token_y, block)
                    .map_err(|e| EngineError::Fault {
                        block,
                        what: e.to_string(),
                    })?;
                let coupled = spot.mul(p_y).map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
                let prior = self.prices.get(&amm.token_x).copied();
                self.oracle
                    .series_mut(amm.token_x)
                    .and_then(|s| s.override_from(block, coupled))
                    .map_err(|e| EngineError::Fault {
                        block,
                        what: e.to_string(),
                    })?;
                if prior.map(|p| p != coupled).unwrap_or(false) {
                    if let Some(&(sold_at, wave)) = self.sold_wave.get(&amm.token_x) {
                        if sold_at + 1 == block {
                            self.price_cause
                                .insert(amm.token_x, PriceCause::BotSale(wave));
                        }
                    }
                }
            }
        }
        if let Some(shock) = &self.scenario.oracle.shock {
            if shock.block == block {
                let targets: Vec<TokenId> = match shock.token {
                    Some(t) => vec![t],
                    None => self
                        .scenario
                        .tokens
                        .iter()
                        .enumerate()
                        .filter(|(_, t)| !t.is_stablecoin)
                        .map(|(i, _)| TokenId(i as u32))
                        .collect(),
                };
                for t in targets {
                    self.price_cause.insert(t, PriceCause::Shock);
                }
            }
        }
        let tokens: Vec<TokenId> = self.oracle.tokens().collect();
        for token in tokens {
            let p = self
                .oracle
                .price(token, block)
                .map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
            self.prices.insert(token, p);
            self.price_cause.entry(token).or_insert(PriceCause::Exogenous);
        }
        Ok(())
    }

    fn price(&self, token: TokenId) -> Wad {
        self.prices.get(&token).copied().unwrap_or(Wad::ZERO)
    }

    fn usd(&self, token: TokenId, amount: Wad) -> Wad {
        amount.mul(self.price(token)).unwrap_or(Wad::ZERO)
    }

    #[allow(clippy::too_many_arguments)]
    fn append_event(
        &mut self,
        block: u64,
        address: AddressId,
        kind: EventKind,
        token: TokenId,
        amount: Wad,
        usd_value: Wad,
        counterparty: Option<AddressId>,
    ) {
        self.ledger
            .append(Event {
                block,
                seq: 0,
                address,
                kind,
                token,
                amount,
                usd_value,
                counterparty,
            })
            .expect("engine emits blocks in order");
        self.summary.events += 1;
    }

    /// Resolve and apply one intent; `Err(reason)` leaves state untouched.
    fn apply_intent(
        &mut self,
        agent: &mut AgentState,
        block: u64,
        intent: Intent,
    ) -> Result<(), String> {
        match intent {
            Intent::Deposit { token, amount } => {
                let wallet = agent.wallet_balance(token);
                let amount = match amount {
                    Amount::Exact(w) => {
                        if w > wallet {
                            return Err("deposit exceeds wallet".into());
                        }
                        w
                    }
                    Amount::All => wallet,
                    Amount::AtMost(w) => w.min(wallet),
                    Amount::FractionOfMax(_) => return Err("unsupported amount kind".into()),
                };
                if amount.is_zero() {
                    return Err("deposit of zero".into());
                }
                let pool = self.pools.get_mut(&token).ok_or("no pool for token")?;
                let pos = self.positions.entry((agent.address, token)).or_default();
                self.comptroller.touch(agent.address, pool, pos);
                pool.deposit(pos, amount).map_err(|e| e.to_string())?;
                agent.debit_wallet(token, amount).map_err(|e| e.to_string())?;
                let usd = self.usd(token, amount);
                agent.total_deposited_usd += usd;
                agent.gas_paid_usd += self.gas.deposit;
                self.summary.total_deposited_usd += usd;
                self.append_event(block, agent.address, EventKind::Deposit, token, amount, usd, None);
                Ok(())
            }
            Intent::Withdraw { token, ctokens } => {
                let pos = self
                    .positions
                    .get(&(agent.address, token))
                    .cloned()
                    .unwrap_or_default();
                let pool = self.pools.get(&token).ok_or("no pool for token")?.clone();
                let rate = pool.exchange_rate().map_err(|e| e.to_string())?;
                let requested = match ctokens {
                    Amount::Exact(w) => w,
                    Amount::All => pos.ctoken_balance,
                    Amount::AtMost(w) => w.min(pos.ctoken_balance),
                    Amount::FractionOfMax(_) => return Err("unsupported amount kind".into()),
                };
                if requested.is_zero() {
                    return Err("withdrawal of zero".into());
                }
                // risk gate: liquidity must stay non-negative afterwards;
                // tokens that are not accepted collateral free no capacity
                let returned = requested.mul(rate).map_err(|e| e.to_string())?;
                let freed_usd = match self.comptroller.collateral.get(&token) {
                    Some(cfg) if cfg.accepted_as_collateral => self
                        .usd(token, returned)
                        .mul(Wad::ONE - cfg.gamma)
                        .map_err(|e| e.to_string())?,
                    _ => Wad::ZERO,
                };
                let allowed = self
                    .comptroller
                    .check_borrow_allowed(
                        agent.address,
                        freed_usd,
                        &self.pools,
                        &self.positions,
                        &self.prices,
                    )
                    .map_err(|e| e.to_string())?;
                if !allowed {
                    return Err("withdrawal would leave the account undercollateralized".into());
                }
                let pool = self.pools.get_mut(&token).unwrap();
                let pos_ref = self.positions.get_mut(&(agent.address, token)).ok_or("no position")?;
                self.comptroller.touch(agent.address, pool, pos_ref);
                let returned = pool.withdraw(pos_ref, requested).map_err(|e| e.to_string())?;
                agent.credit_wallet(token, returned);
                agent.gas_paid_usd += self.gas.withdraw;
                let usd = self.usd(token, returned);
                self.append_event(block, agent.address, EventKind::Withdraw, token, returned, usd, None);
                Ok(())
            }
            Intent::Borrow { token, amount } => {
                let price = self.price(token);
                if price.is_zero() {
                    return Err("no price for borrow token".into());
                }
                let liquidity = self
                    .comptroller
                    .account_liquidity(agent.address, &self.pools, &self.positions, &self.prices)
                    .map_err(|e| e.to_string())?;
                let max_by_liquidity = liquidity.clamp_positive().div(price).unwrap_or(Wad::ZERO);
                let pool_cash = self
                    .pools
                    .get(&token)
                    .ok_or("no pool for token")?
                    .total_cash;
                let amount = match amount {
                    Amount::Exact(w) => w,
                    Amount::All => max_by_liquidity.min(pool_cash),
                    Amount::AtMost(w) => w.min(max_by_liquidity).min(pool_cash),
                    Amount::FractionOfMax(f) => max_by_liquidity
                        .mul(f)
                        .map_err(|e| e.to_string())?
                        .min(pool_cash),
                };
                if amount.is_zero() {
                    return Err("borrow of zero".into());
                }
                let extra_usd = amount.mul(price).map_err(|e| e.to_string())?;
                let allowed = self
                    .comptroller
                    .check_borrow_allowed(
                        agent.address,
                        extra_usd,
                        &self.pools,
                        &self.positions,
                        &self.prices,
                    )
                    .map_err(|e| e.to_string())?;
                if !allowed {
                    return Err("borrow limit exceeded".into());
                }
                let pool = self.pools.get_mut(&token).unwrap();
                let pos = self.positions.entry((agent.address, token)).or_default();
                self.comptroller.touch(agent.address, pool, pos);
                pool.borrow(pos, amount).map_err(|e| e.to_string())?;
                let pos = pos.clone();
                self.comptroller.update_borrow_weight(agent.address, token, &pos);
                agent.credit_wallet(token, amount);
                agent.total_borrowed_usd += extra_usd;
                agent.gas_paid_usd += self.gas.borrow;
                self.summary.total_borrowed_usd += extra_usd;
                self.append_event(block, agent.address, EventKind::Borrow, token, amount, extra_usd, None);
                Ok(())
            }
            Intent::Repay { token, amount } => {
                let pool = self.pools.get(&token).ok_or("no pool for token")?;
                let pos = self
                    .positions
                    .get(&(agent.address, token))
                    .ok_or("no position to repay")?;
                let debt = pos.current_debt(pool).map_err(|e| e.to_string())?;
                let wallet = agent.wallet_balance(token);
                let amount = match amount {
                    Amount::Exact(w) => {
                        if w > wallet {
                            return Err("repay exceeds wallet".into());
                        }
                        w
                    }
                    Amount::All => debt.min(wallet),
                    Amount::AtMost(w) => w.min(debt).min(wallet),
                    Amount::FractionOfMax(_) => return Err("unsupported amount kind".into()),
                };
                if amount.is_zero() {
                    return Err("repay of zero".into());
                }
                let pool = self.pools.get_mut(&token).unwrap();
                let pos_ref = self.positions.get_mut(&(agent.address, token)).unwrap();
                self.comptroller.touch(agent.address, pool, pos_ref);
                pool.repay(pos_ref, amount).map_err(|e| e.to_string())?;
                let pos = pos_ref.clone();
                self.comptroller.update_borrow_weight(agent.address, token, &pos);
                agent.debit_wallet(token, amount).map_err(|e| e.to_string())?;
                agent.gas_paid_usd += self.gas.repay;
                let usd = self.usd(token, amount);
                self.append_event(block, agent.address, EventKind::Repay, token, amount, usd, None);
                Ok(())
            }
            Intent::Claim => {
                let reward_token = self.comptroller.reward_token.ok_or("no reward token")?;
                // settle lazily accrued rewards before paying them out
                let tokens: Vec<TokenId> = self.pools.keys().copied().collect();
                for token in tokens {
                    if let Some(pos) = self.positions.get(&(agent.address, token)) {
                        let pos = pos.clone();
                        let pool = self.pools.get(&token).unwrap();
                        self.comptroller.touch(agent.address, pool, &pos);
                    }
                }
                let amount = self
                    .comptroller
                    .claim(agent.address)
                    .map_err(|e| e.to_string())?;
                agent.credit_wallet(reward_token, amount);
                agent.reward_claimed += amount;
                agent.gas_paid_usd += self.gas.claim;
                *self.injected.entry(reward_token).or_insert(Wad::ZERO) += amount;
                let usd = self.usd(reward_token, amount);
                self.append_event(
                    block,
                    agent.address,
                    EventKind::ClaimReward,
                    reward_token,
                    amount,
                    usd,
                    None,
                );
                Ok(())
            }
            Intent::Swap {
                token_in,
                token_out,
                amount_in,
            } => {
                let wallet = agent.wallet_balance(token_in);
                let amount = match amount_in {
                    Amount::Exact(w) => {
                        if w > wallet {
                            return Err("swap exceeds wallet".into());
                        }
                        w
                    }
                    Amount::All => wallet,
                    Amount::AtMost(w) => w.min(wallet),
                    Amount::FractionOfMax(_) => return Err("unsupported amount kind".into()),
                };
                if amount.is_zero() {
                    return Err("swap of zero".into());
                }
                let idx = self
                    .amms
                    .iter()
                    .position(|a| {
                        (a.token_x == token_in && a.token_y == token_out)
                            || (a.token_y == token_in && a.token_x == token_out)
                    })
                    .ok_or("no amm pool for pair")?;
                let out = self.amms[idx]
                    .swap_exact_in(token_in, amount)
                    .map_err(|e| e.to_string())?;
                agent.debit_wallet(token_in, amount).map_err(|e| e.to_string())?;
                agent.credit_wallet(token_out, out);
                agent.gas_paid_usd += self.gas.swap;
                let usd = self.usd(token_in, amount);
                // a liquidator dumping seized collateral marks the token for
                // next block's cascade attribution
                if matches!(agent.strategy, Strategy::LiquidatorBot { .. }) {
                    if let Some(&wave) = self.seized_wave.get(&token_in) {
                        self.sold_wave.insert(token_in, (block, wave));
                    }
                }
                self.append_event(block, agent.address, EventKind::Swap, token_in, amount, usd, None);
                Ok(())
            }
        }
    }

    fn run_liquidations(
        &mut self,
        agents: &mut [AgentState],
        block: u64,
    ) -> Result<(), EngineError> {
        let bot_indices: Vec<usize> = agents
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(a.strategy, Strategy::LiquidatorBot { .. }))
            .map(|(i, _)| i)
            .collect();
        let mut liq_usd = Wad::ZERO;
        let mut liq_events = 0u64;
        let mut block_max_wave = 0u32;
        if !bot_indices.is_empty() {
            let borrowers: Vec<AddressId> = {
                let mut set = std::collections::BTreeSet::new();
                for ((addr, _), pos) in self.positions.iter() {
                    if !pos.borrow_principal.is_zero() {
                        set.insert(*addr);
                    }
                }
                set.into_iter().collect()
            };
            let intents = {
                let view = WorldView {
                    block,
                    blocks_per_year: self.clock.blocks_per_year(),
                    pools: &self.pools,
                    positions: &self.positions,
                    prices: &self.prices,
                    comptroller: &self.comptroller,
                    gas: &self.gas,
                };
                liquidator_scan(&view, &borrowers)
            };
            for li in intents {
                // first bot (in address order) able to fund the repay
                let Some(&bot_idx) = bot_indices
                    .iter()
                    .find(|&&i| agents[i].wallet_balance(li.repay_token) >= li.repay_amount)
                else {
                    continue;
                };
                let bot = &mut agents[bot_idx];
                let before = if self.scenario.check_invariants {
                    Some(
                        self.comptroller
                            .account_liquidity(
                                li.borrower,
                                &self.pools,
                                &self.positions,
                                &self.prices,
                            )
                            .map_err(|e| EngineError::Fault {
                                block,
                                what: e.to_string(),
                            })?,
                    )
                } else {
                    None
                };
                let outcome = match self.comptroller.liquidate(
                    bot.address,
                    li.borrower,
                    li.repay_token,
                    li.repay_amount,
                    li.seize_token,
                    &mut self.pools,
                    &mut self.positions,
                    &self.prices,
                ) {
                    Ok(o) => o,
                    Err(e) => {
                        self.rejections.push(Rejection {
                            block,
                            address: bot.address,
                            action: format!("Liquidate {:?}", li),
                            reason: e.to_string(),
                        });
                        continue;
                    }
                };
                bot.debit_wallet(li.repay_token, outcome.repaid)
                    .map_err(|e| EngineError::Fault {
                        block,
                        what: e.to_string(),
                    })?;
                bot.gas_paid_usd += self.gas.liquidate;
                if let Some(before) = before {
                    let after = self
                        .comptroller
                        .account_liquidity(li.borrower, &self.pools, &self.positions, &self.prices)
                        .map_err(|e| EngineError::Fault {
                            block,
                            what: e.to_string(),
                        })?;
                    if after <= before {
                        return Err(EngineError::InvariantViolation {
                            block,
                            what: format!(
                                "liquidation did not improve account {} liquidity",
                                li.borrower.0
                            ),
                        });
                    }
                }
                // wave attribution from the price cause of the collateral
                let wave = match self.price_cause.get(&li.seize_token) {
                    Some(PriceCause::BotSale(w)) => w + 1,
                    _ => 1,
                };
                block_max_wave = block_max_wave.max(wave);
                self.max_wave = self.max_wave.max(wave);
                let entry = self.seized_wave.entry(li.seize_token).or_insert(0);
                *entry = (*entry).max(wave);

                let repay_usd = self.usd(li.repay_token, outcome.repaid);
                let seize_usd = self.usd(li.seize_token, outcome.seized_underlying);
                liq_usd += repay_usd;
                liq_events += 1;
                self.summary.total_liquidated_usd += repay_usd;
                self.summary.liquidation_events += 1;
                let borrower_idx = agents
                    .binary_search_by_key(&li.borrower, |a| a.address)
                    .ok();
                if let Some(bi) = borrower_idx {
                    agents[bi].liquidated_count += 1;
                }
                self.append_event(
                    block,
                    li.borrower,
                    EventKind::LiquidateRepay,
                    li.repay_token,
                    outcome.repaid,
                    repay_usd,
                    Some(agents[bot_idx].address),
                );
                self.append_event(
                    block,
                    li.borrower,
                    EventKind::LiquidateSeize,
                    li.seize_token,
                    outcome.seized_ctokens,
                    seize_usd,
                    Some(agents[bot_idx].address),
                );
            }
        }
        if liq_events > 0 || block.is_multiple_of(self.scenario.snapshot_every) {
            let outstanding = self.total_outstanding_loans_usd();
            self.liquidation_blocks.push(LiquidationBlockRow {
                block,
                liquidation_usd: liq_usd,
                events: liq_events,
                outstanding_loans_usd: outstanding,
                max_wave: block_max_wave,
            });
        }
        Ok(())
    }

    fn total_outstanding_loans_usd(&self) -> Wad {
        let mut total = Wad::ZERO;
        for pool in self.pools.values() {
            total += self.usd(pool.token, pool.total_borrows);
        }
        total
    }

    fn snapshot(&mut self, block: u64) -> Result<(), EngineError> {
        let bpy = self.clock.blocks_per_year();
        for pool in self.pools.values() {
            let rates = self
                .comptroller
                .net_rates(pool, block, bpy, &self.prices)
                .map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
            self.pool_snapshots.push(PoolSnapshotRow {
                block,
                token: pool.token,
                cash: pool.total_cash,
                borrows: pool.total_borrows,
                reserves: pool.total_reserves,
                ctoken_supply: pool.ctoken_supply,
                exchange_rate: pool.exchange_rate().map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?,
                utilization: pool.utilization().map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?,
                borrow_rate: rates.borrow_rate,
                supply_rate: rates.supply_rate,
                supply_reward_apy: rates.supply_reward_apy,
                borrow_reward_apy: rates.borrow_reward_apy,
            });
        }
        for amm in &self.amms {
            self.amm_snapshots.push(AmmSnapshotRow {
                block,
                token_x: amm.token_x,
                token_y: amm.token_y,
                reserve_x: amm.reserve_x,
                reserve_y: amm.reserve_y,
                spot_price: amm.spot_price().map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?,
            });
        }
        for (token, price) in &self.prices {
            self.price_rows.push(PriceRow {
                block,
                token: *token,
                price: *price,
            });
        }
        // risk report rows for accounts with open debt
        let mut seen = std::collections::BTreeSet::new();
        for ((addr, _), pos) in self.positions.iter() {
            if !pos.borrow_principal.is_zero() {
                seen.insert(*addr);
            }
        }
        for addr in seen {
            let liquidity = self
                .comptroller
                .account_liquidity(addr, &self.pools, &self.positions, &self.prices)
                .map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
            let collateral = self
                .comptroller
                .collateral_value(addr, &self.pools, &self.positions, &self.prices)
                .map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
            let debt = self
                .comptroller
                .debt_value(addr, &self.pools, &self.positions, &self.prices)
                .map_err(|e| EngineError::Fault {
                    block,
                    what: e.to_string(),
                })?;
            self.risk_rows.push(RiskRow {
                block,
                address: addr,
                liquidity_usd: liquidity,
                total_collateral_usd: collateral,
                total_debt_usd: debt,
            });
        }
        Ok(())
    }

    /// After the final sweep, everything streamed must be accounted for:
    /// credited to addresses, withheld to the treasury, or bounded dust.
    fn check_reward_conservation(&self, block: u64) -> Result<(), EngineError> {
        let mut emitted = Wad::ZERO;
        let mut withheld = Wad::ZERO;
        let mut dust_bound = Wad::ZERO;
        for state in self.comptroller.reward_pools.values() {
            emitted += state.emitted;
            withheld += state.withheld;
            dust_bound += state.index_dust + Wad(state.materializations as u128);
        }
        let credited: Wad = self
            .comptroller
            .reward_accounts
            .values()
            .map(|a| a.accrued + a.claimed)
            .sum();
        if credited + withheld > emitted {
            return Err(EngineError::InvariantViolation {
                block,
                what: "rewards over-distributed".into(),
            });
        }
        let residual = emitted - credited - withheld;
        if residual > dust_bound {
            return Err(EngineError::InvariantViolation {
                block,
                what: format!(
                    "reward dust {} exceeds accounted bound {}",
                    residual, dust_bound
                ),
            });
        }
        Ok(())
    }

    /// Per-token conservation: wallets + pool cash + AMM reserves must
    /// equal everything injected, exactly.
    fn check_conservation(&self, block: u64) -> Result<(), EngineError> {
        let mut held: BTreeMap<TokenId, Wad> = BTreeMap::new();
        for agent in &self.agents {
            for (token, bal) in &agent.wallet {
                *held.entry(*token).or_insert(Wad::ZERO) += *bal;
            }
        }
        for pool in self.pools.values() {
            *held.entry(pool.token).or_insert(Wad::ZERO) += pool.total_cash;
        }
        for amm in &self.amms {
            *held.entry(amm.token_x).or_insert(Wad::ZERO) += amm.reserve_x;
            *held.entry(amm.token_y).or_insert(Wad::ZERO) += amm.reserve_y;
        }
        for (token, injected) in &self.injected {
            let have = held.get(token).copied().unwrap_or(Wad::ZERO);
            if have != *injected {
                return Err(EngineError::InvariantViolation {
                    block,
                    what: format!(
                        "token {} conservation: held {} vs injected {}",
                        token.0, have, injected
                    ),
                });
            }
        }
        for (token, have) in &held {
            let injected = self.injected.get(token).copied().unwrap_or(Wad::ZERO);
            if *have != injected {
                return Err(EngineError::InvariantViolation {
                    block,
                    what: format!(
                        "token {} conservation: held {} vs injected {}",
                        token.0, have, injected
                    ),
                });
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput, EngineError> {
        let last_block = self.scenario.horizon_blocks - 1;
        // settle all pending rewards and record them
        self.comptroller.sweep(&self.pools, &self.positions);
        if self.scenario.check_invariants {
            self.check_reward_conservation(last_block)?;
        }
        let reward_token = self.comptroller.reward_token;
        let accounts: Vec<(AddressId, Wad, Wad)> = self
            .comptroller
            .reward_accounts
            .iter()
            .map(|(a, acct)| (*a, acct.accrued, acct.claimed))
            .collect();
        if let Some(rt) = reward_token {
            for (addr, accrued, _) in &accounts {
                if !accrued.is_zero() {
                    let usd = self.usd(rt, *accrued);
                    self.append_event(
                        last_block,
                        *addr,
                        EventKind::RewardAccrue,
                        rt,
                        *accrued,
                        usd,
                        None,
                    );
                }
            }
        }
        let reward_rows: Vec<RewardRow> = accounts
            .iter()
            .map(|(a, accrued, claimed)| RewardRow {
                address: *a,
                accrued: *accrued,
                claimed: *claimed,
            })
            .collect();

        // agent summaries with mark-to-market PnL at final prices
        let mut agent_summaries = Vec::with_capacity(self.agents.len());
        for agent in &self.agents {
            let mut wealth = SignedWad::ZERO;
            for (token, bal) in &agent.wallet {
                wealth = wealth + self.usd(*token, *bal).to_signed().unwrap_or(SignedWad::ZERO);
            }
            for ((addr, token), pos) in self
                .positions
                .range((agent.address, TokenId(0))..=(agent.address, TokenId(u32::MAX)))
            {
                debug_assert_eq!(*addr, agent.address);
                if let Some(pool) = self.pools.get(token) {
                    let rate = pool.exchange_rate().unwrap_or(Wad::ZERO);
                    let supplied = pos.ctoken_balance.mul(rate).unwrap_or(Wad::ZERO);
                    wealth = wealth
                        + self.usd(*token, supplied).to_signed().unwrap_or(SignedWad::ZERO);
                    let debt = pos.current_debt(pool).unwrap_or(Wad::ZERO);
                    wealth = wealth
                        - self.usd(*token, debt).to_signed().unwrap_or(SignedWad::ZERO);
                }
            }
            if let Some(rt) = reward_token {
                let accrued = self.comptroller.accrued(agent.address);
                wealth = wealth + self.usd(rt, accrued).to_signed().unwrap_or(SignedWad::ZERO);
            }
            let pnl = wealth
                - agent
                    .initial_capital_usd
                    .to_signed()
                    .unwrap_or(SignedWad::ZERO)
                - agent.gas_paid_usd.to_signed().unwrap_or(SignedWad::ZERO);
            agent_summaries.push(AgentSummary {
                address: agent.address,
                category: agent.category,
                total_deposited: agent.total_deposited_usd,
                total_borrowed: agent.total_borrowed_usd,
                reward_claimed: agent.reward_claimed,
                liquidated_count: agent.liquidated_count,
                pnl_usd: pnl,
            });
        }

        self.summary.blocks = self.scenario.horizon_blocks;
        self.summary.cascade_waves = self.max_wave;
        Ok(RunOutput {
            ledger: self.ledger,
            pool_snapshots: self.pool_snapshots,
            amm_snapshots: self.amm_snapshots,
            risk_rows: self.risk_rows,
            price_rows: self.price_rows,
            agent_summaries,
            reward_rows,
            rejections: self.rejections,
            liquidation_blocks: self.liquidation_blocks,
            summary: self.summary,
        })
    }
}

/// Fee-free arbitrage swap that moves the pool's spot price of x to
/// `target` (y per x). Returns the executed (token_in, in, out), or None
/// when the pool already sits at or past the target in the only direction
/// we model (sales of x). Bisection on integers keeps it deterministic.
fn arb_to_spot(pool: &mut AmmPool, target: Wad) -> Option<(TokenId, Wad, Wad)> {
    let spot = pool.spot_price().ok()?;
    if target >= spot || target.is_zero() {
        return None;
    }
    let spot_after = |amount_in: u128| -> Option<Wad> {
        let mut probe = pool.clone();
        probe.fee = Wad::ZERO;
        probe.swap_exact_in(pool.token_x, Wad(amount_in)).ok()?;
        probe.spot_price().ok()
    };
    // find an upper bracket
    let mut hi = 1u128 << 20;
    loop {
        match spot_after(hi) {
            Some(s) if s <= target => break,
            Some(_) => {
                hi = hi.checked_mul(2)?;
            }
            None => return None,
        }
        if hi > (1u128 << 110) {
            return None;
        }
    }
    let mut lo = 0u128;
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        match spot_after(mid) {
            Some(s) if s <= target => hi = mid,
            Some(_) => lo = mid,
            None => lo = mid,
        }
    }
    let mut fee = Wad::ZERO;
    std::mem::swap(&mut pool.fee, &mut fee);
    let out = pool.swap_exact_in(pool.token_x, Wad(hi)).ok();
    std::mem::swap(&mut pool.fee, &mut fee);
    out.map(|o| (pool.token_x, Wad(hi), o))
}

fn fund_wallet(
    agent: &mut AgentState,
    capital_usd: Wad,
    prices: &PriceMap,
    injected: &mut BTreeMap<TokenId, Wad>,
) {
    if capital_usd.is_zero() {
        return;
    }
    let mut grants: Vec<(TokenId, Wad)> = Vec::new();
    match &agent.strategy {
        Strategy::HoldDeposit { token, .. }
        | Strategy::RateChaser { token, .. }
        | Strategy::LeverageLoop { token, .. }
        | Strategy::MicroAirdrop { token, .. } => grants.push((*token, capital_usd)),
        Strategy::LiquidatorBot { inventory_token, .. } => {
            grants.push((*inventory_token, capital_usd))
        }
        Strategy::BorrowAndHold {
            collateral_token,
            borrow_token,
            ..
        } => {
            // keep a tenth as a repayment buffer in the borrow token
            let buffer = capital_usd.div_int(10).expect("buffer");
            grants.push((*collateral_token, capital_usd - buffer));
            grants.push((*borrow_token, buffer));
        }
    }
    for (token, usd) in grants {
        let price = prices.get(&token).copied().unwrap_or(Wad::ZERO);
        if price.is_zero() {
            continue;
        }
        let tokens = usd.div(price).expect("wallet sizing");
        if tokens.is_zero() {
            continue;
        }
        agent.credit_wallet(token, tokens);
        *injected.entry(token).or_insert(Wad::ZERO) += tokens;
    }
}

/// Run one scenario per shock multiplier and report the cascade profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrashCase {
    pub multiplier: Wad,
    pub summary: RunSummary,
    pub liquidation_blocks: Vec<LiquidationBlockRow>,
}

pub fn run_crash_experiment(
    base: &Scenario,
    shock_block: u64,
    multipliers: &[Wad],
    token: Option<TokenId>,
) -> Result<Vec<CrashCase>, EngineError> {
    if multipliers.iter().any(|m| m.is_zero() || *m > Wad::ONE) {
        return Err(EngineError::Validation(ValidationError {
            field: "multipliers".into(),
            reason: "must lie in (0, 1]".into(),
        }));
    }
    let mut out = Vec::with_capacity(multipliers.len());
    for &m in multipliers {
        let mut scenario = base.clone();
        scenario.oracle.shock = Some(crate::scenario::ShockConfig {
            block: shock_block,
            multiplier: m,
            token,
        });
        let result = run(&scenario)?;
        out.push(CrashCase {
            multiplier: m,
            summary: result.summary,
            liquidation_blocks: result.liquidation_blocks,
        });
    }
    Ok(out)
}

/// Summary row of one sweep case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCase {
    pub value: serde_json::Value,
    pub summary: RunSummary,
}

/// Run the scenario once per value of the parameter at `pointer` (JSON
/// pointer into the scenario document). Runs are independent; execution
/// order never affects results, which are returned in input order.
pub fn sweep(
    base: &Scenario,
    pointer: &str,
    values: &[serde_json::Value],
    parallelism: usize,
) -> Result<Vec<SweepCase>, EngineError> {
    if values.is_empty() {
        return Err(EngineError::Validation(ValidationError {
            field: "values".into(),
            reason: "at least one sweep value required".into(),
        }));
    }
    let mut doc = serde_json::to_value(base).map_err(|e| EngineError::Fault {
        block: 0,
        what: e.to_string(),
    })?;
    if doc.pointer(pointer).is_none() {
        return Err(EngineError::Validation(ValidationError {
            field: pointer.to_string(),
            reason: "parameter path does not resolve in the scenario".into(),
        }));
    }
    let scenarios: Result<Vec<Scenario>, EngineError> = values
        .iter()
        .map(|v| {
            *doc.pointer_mut(pointer).unwrap() = v.clone();
            let s: Scenario =
                serde_json::from_value(doc.clone()).map_err(|e| {
                    EngineError::Validation(ValidationError {
                        field: pointer.to_string(),
                        reason: e.to_string(),
                    })
                })?;
            s.validate()?;
            Ok(s)
        })
        .collect();
    let scenarios = scenarios?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| EngineError::Fault {
            block: 0,
            what: e.to_string(),
        })?;
    let results: Vec<Result<RunSummary, EngineError>> = pool.install(|| {
        use rayon::prelude::*;
        scenarios
            .par_iter()
            .map(|s| run(s).map(|o| o.summary))
            .collect()
    });
    let mut out = Vec::with_capacity(values.len());
    for (value, result) in values.iter().zip(results) {
        out.push(SweepCase {
            value: value.clone(),
            summary: result?,
        });
    }
    Ok(out)
}
