//! Agent strategies that generate the event flow.
//!
//! Agents are stepped once per block in address order. A step reads an
//! immutable world view and returns intents; the engine validates and
//! applies them, logging rejections instead of corrupting state. All
//! randomness comes from per-agent seeded generators, so a scenario and a
//! seed fully determine the intent stream.

use crate::comptroller::{Comptroller, PriceMap, Positions};
use crate::ledger::{AddressId, AgentCategory, TokenId};
use crate::pool::PoolState;
use crate::wad::{Wad, WadError};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("leverage fraction {f} exceeds collateral factor {max}")]
    FractionTooHigh { f: Wad, max: Wad },
    #[error("micro airdrop deposits must be stablecoin")]
    MicroNotStablecoin,
    #[error("micro airdrop deposit {0} exceeds the 3 USD definition")]
    MicroTooLarge(Wad),
    #[error(transparent)]
    Wad(#[from] WadError),
}

/// Fixed USD cost per action kind, independent of transaction size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GasModel {
    pub deposit: Wad,
    pub withdraw: Wad,
    pub borrow: Wad,
    pub repay: Wad,
    pub liquidate: Wad,
    pub claim: Wad,
    pub swap: Wad,
}

impl GasModel {
    pub fn uniform(cost: Wad) -> GasModel {
        GasModel {
            deposit: cost,
            withdraw: cost,
            borrow: cost,
            repay: cost,
            liquidate: cost,
            claim: cost,
            swap: cost,
        }
    }
}

/// How much of something an intent moves. The engine resolves `All`,
/// `AtMost` and `FractionOfMax` against live state, so agents can sit
/// exactly on protocol boundaries without racing fixed-point rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Amount {
    Exact(Wad),
    /// Entire wallet / cToken balance / outstanding debt.
    All,
    /// As requested, clamped to what preconditions allow.
    AtMost(Wad),
    /// Fraction of the maximum the risk engine allows (borrows only).
    FractionOfMax(Wad),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Intent {
    Deposit { token: TokenId, amount: Amount },
    Withdraw { token: TokenId, ctokens: Amount },
    Borrow { token: TokenId, amount: Amount },
    Repay { token: TokenId, amount: Amount },
    Claim,
    Swap { token_in: TokenId, token_out: TokenId, amount_in: Amount },
}

/// Initial capital draw, in USD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CapitalDist {
    Fixed { usd: Wad },
    Uniform { lo: Wad, hi: Wad },
    /// Heavy-tailed book, for concentration experiments.
    Pareto { alpha: f64, min_usd: Wad },
}

impl CapitalDist {
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> Wad {
        match self {
            CapitalDist::Fixed { usd } => *usd,
            CapitalDist::Uniform { lo, hi } => {
                if hi <= lo {
                    return *lo;
                }
                let span = hi.0 - lo.0;
                Wad(lo.0 + rng.gen_range(0..=span))
            }
            CapitalDist::Pareto { alpha, min_usd } => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                let x = min_usd.to_f64() * u.powf(-1.0 / alpha);
                // cap to keep fixed-point math comfortable
                Wad::from_f64(x.min(1e15)).unwrap_or(*min_usd)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Deposit everything at `start_block`, optionally exit later.
    HoldDeposit {
        token: TokenId,
        start_block: u64,
        #[serde(default)]
        exit_block: Option<u64>,
    },
    /// Post collateral, draw a loan at a fraction of the limit, repay
    /// after a holding period. With `repeat`, the cycle restarts after a
    /// cooldown of the same length. With positive `redeposit_prob`, some
    /// cycles park the drawn tokens back into the same pool, the
    /// yield-farming tell that redeposit analytics look for.
    BorrowAndHold {
        collateral_token: TokenId,
        borrow_token: TokenId,
        /// Fraction of the borrow limit actually drawn (safety buffer).
        borrow_fraction: Wad,
        hold_blocks: u64,
        start_block: u64,
        #[serde(default)]
        repeat: bool,
        #[serde(default)]
        redeposit_prob: Wad,
    },
    /// The recursive same-token deposit-borrow-redeposit strategy.
    LeverageLoop {
        token: TokenId,
        /// Per-round borrow fraction, at most (1 - gamma).
        fraction: Wad,
        rounds: u32,
        start_block: u64,
        /// Claim once accrued reward value reaches this multiple of the
        /// claim gas cost.
        claim_threshold: Wad,
    },
    /// Holds stablecoin inventory; liquidations are executed by the
    /// engine's scan. Optionally redeems and dumps seized collateral.
    LiquidatorBot {
        inventory_token: TokenId,
        #[serde(default)]
        sell_seized: bool,
    },
    /// Exactly one small stablecoin deposit, then silence.
    MicroAirdrop {
        token: TokenId,
        deposit_usd: Wad,
        at_block: u64,
    },
    /// Deposits when the net supply rate clears a threshold, exits when
    /// it does not.
    RateChaser {
        token: TokenId,
        threshold: Wad,
        review_every: u64,
    },
}

/// Batch of identical agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub category: AgentCategory,
    pub count: u32,
    pub capital_usd: CapitalDist,
    pub strategy: Strategy,
    /// Pins AddressIds independently of spec order; defaults to
    /// sequential assignment.
    #[serde(default)]
    pub first_address: Option<u32>,
}

/// One-shot micro depositor wave. Enforces the micro-address definition:
/// stablecoin only, at most 3 USD.
pub fn micro_airdrop_wave(
    count: u32,
    deposit_usd: Wad,
    token: TokenId,
    token_is_stablecoin: bool,
    at_block: u64,
) -> Result<AgentSpec, AgentError> {
    if !token_is_stablecoin {
        return Err(AgentError::MicroNotStablecoin);
    }
    if deposit_usd > Wad::from_int(3) {
        return Err(AgentError::MicroTooLarge(deposit_usd));
    }
    Ok(AgentSpec {
        category: AgentCategory::MicroAddress,
        count,
        capital_usd: CapitalDist::Fixed { usd: deposit_usd },
        strategy: Strategy::MicroAirdrop {
            token,
            deposit_usd,
            at_block,
        },
        first_address: None,
    })
}

/// Planned (deposit, borrow) amounts for each round of the leverage loop:
/// round k deposits `capital * f^k` and borrows `capital * f^(k+1)`; the
/// final round redeposits without borrowing again.
pub fn leverage_loop_plan(
    capital: Wad,
    fraction: Wad,
    gamma: Wad,
    n_rounds: u32,
) -> Result<Vec<(Wad, Option<Wad>)>, AgentError> {
    let max = Wad::ONE - gamma;
    if fraction > max {
        return Err(AgentError::FractionTooHigh { f: fraction, max });
    }
    let mut plan = Vec::with_capacity(n_rounds as usize + 1);
    let mut deposit = capital;
    for k in 0..=n_rounds {
        if deposit.is_zero() {
            break;
        }
        let borrow = if k < n_rounds {
            let b = deposit.mul(fraction)?;
            if b.is_zero() {
                None
            } else {
                Some(b)
            }
        } else {
            None
        };
        plan.push((deposit, borrow));
        match borrow {
            Some(b) => deposit = b,
            None => break,
        }
    }
    Ok(plan)
}

/// Immutable view agents read when deciding their intents.
pub struct WorldView<'a> {
    pub block: u64,
    pub blocks_per_year: u64,
    pub pools: &'a BTreeMap<TokenId, PoolState>,
    pub positions: &'a Positions,
    pub prices: &'a PriceMap,
    pub comptroller: &'a Comptroller,
    pub gas: &'a GasModel,
}

impl WorldView<'_> {
    pub fn price(&self, token: TokenId) -> Wad {
        self.prices.get(&token).copied().unwrap_or(Wad::ZERO)
    }

    fn net_supply_rate(&self, token: TokenId) -> Option<Wad> {
        let pool = self.pools.get(&token)?;
        self.comptroller
            .net_rates(pool, self.block, self.blocks_per_year, self.prices)
            .ok()
            .and_then(|r| r.net_supply_rate)
    }

    fn position(&self, address: AddressId, token: TokenId) -> Option<&crate::pool::AccountPosition> {
        self.positions.get(&(address, token))
    }
}

/// Mutable per-agent runtime state. Wallets live here; positions live in
/// the engine's position map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentState {
    pub address: AddressId,
    pub category: AgentCategory,
    pub strategy: Strategy,
    pub wallet: BTreeMap<TokenId, Wad>,
    pub initial_capital_usd: Wad,
    // lifecycle flags
    entered: bool,
    exited: bool,
    last_review: Option<u64>,
    // running stats for the per-agent summary
    pub total_deposited_usd: Wad,
    pub total_borrowed_usd: Wad,
    pub reward_claimed: Wad,
    pub liquidated_count: u64,
    pub gas_paid_usd: Wad,
}

impl AgentState {
    pub fn new(
        address: AddressId,
        category: AgentCategory,
        strategy: Strategy,
        capital_usd: Wad,
    ) -> AgentState {
        AgentState {
            address,
            category,
            strategy,
            wallet: BTreeMap::new(),
            initial_capital_usd: capital_usd,
            entered: false,
            exited: false,
            last_review: None,
            total_deposited_usd: Wad::ZERO,
            total_borrowed_usd: Wad::ZERO,
            reward_claimed: Wad::ZERO,
            liquidated_count: 0,
            gas_paid_usd: Wad::ZERO,
        }
    }

    pub fn wallet_balance(&self, token: TokenId) -> Wad {
        self.wallet.get(&token).copied().unwrap_or(Wad::ZERO)
    }

    pub fn credit_wallet(&mut self, token: TokenId, amount: Wad) {
        if amount.is_zero() {
            return;
        }
        let entry = self.wallet.entry(token).or_insert(Wad::ZERO);
        *entry = entry.checked_add(amount).expect("wallet overflow");
    }

    pub fn debit_wallet(&mut self, token: TokenId, amount: Wad) -> Result<(), WadError> {
        if amount.is_zero() {
            return Ok(());
        }
        let entry = self.wallet.entry(token).or_insert(Wad::ZERO);
        *entry = entry.checked_sub(amount)?;
        Ok(())
    }

    /// Decide this block's actions. Stateless strategies return nothing
    /// once done; rejected intents do not advance lifecycle flags unless
    /// the strategy is inherently one-shot.
    pub fn step(&mut self, view: &WorldView<'_>, rng: &mut ChaCha12Rng) -> Vec<Intent> {
        let mut intents = Vec::new();
        match self.strategy.clone() {
            Strategy::HoldDeposit {
                token,
                start_block,
                exit_block,
            } => {
                if !self.entered && view.block >= start_block {
                    if !self.wallet_balance(token).is_zero() {
                        intents.push(Intent::Deposit {
                            token,
                            amount: Amount::All,
                        });
                    }
                    self.entered = true;
                } else if let Some(exit) = exit_block {
                    if self.entered && !self.exited && view.block >= exit {
                        if view
                            .position(self.address, token)
                            .map(|p| !p.ctoken_balance.is_zero())
                            .unwrap_or(false)
                        {
                            intents.push(Intent::Withdraw {
                                token,
                                ctokens: Amount::All,
                            });
                        }
                        self.exited = true;
                    }
                }
            }
            Strategy::BorrowAndHold {
                collateral_token,
                borrow_token,
                borrow_fraction,
                hold_blocks,
                start_block,
                repeat,
                redeposit_prob,
            } => {
                let gate = self.last_review.unwrap_or(start_block);
                if !self.entered && view.block >= gate {
                    if !self.wallet_balance(collateral_token).is_zero() {
                        intents.push(Intent::Deposit {
                            token: collateral_token,
                            amount: Amount::All,
                        });
                        intents.push(Intent::Borrow {
                            token: borrow_token,
                            amount: Amount::FractionOfMax(borrow_fraction),
                        });
                        if !redeposit_prob.is_zero() {
                            let u = Wad::from_f64(rng.gen_range(0.0..1.0)).unwrap_or(Wad::ONE);
                            if u < redeposit_prob {
                                intents.push(Intent::Deposit {
                                    token: borrow_token,
                                    amount: Amount::All,
                                });
                            }
                        }
                    }
                    self.entered = true;
                    self.last_review = Some(view.block + hold_blocks);
                } else if self.entered && !self.exited && view.block >= gate {
                    let debt_open = view
                        .position(self.address, borrow_token)
                        .map(|p| !p.borrow_principal.is_zero())
                        .unwrap_or(false);
                    if debt_open {
                        // unwind a redeposited loan before repaying it
                        if view
                            .position(self.address, borrow_token)
                            .map(|p| !p.ctoken_balance.is_zero())
                            .unwrap_or(false)
                        {
                            intents.push(Intent::Withdraw {
                                token: borrow_token,
                                ctokens: Amount::All,
                            });
                        }
                        intents.push(Intent::Repay {
                            token: borrow_token,
                            amount: Amount::All,
                        });
                        intents.push(Intent::Withdraw {
                            token: collateral_token,
                            ctokens: Amount::All,
                        });
                    }
                    if repeat {
                        // cool down, then run the cycle again
                        self.entered = false;
                        self.last_review = Some(view.block + hold_blocks);
                    } else {
                        self.exited = true;
                    }
                }
            }
            Strategy::LeverageLoop {
                token,
                fraction,
                rounds,
                start_block,
                claim_threshold,
            } => {
                if !self.entered && view.block >= start_block {
                    self.entered = true;
                    let capital = self.wallet_balance(token);
                    let gamma = view.comptroller.gamma(token).unwrap_or(Wad::ONE);
                    if let Ok(plan) = leverage_loop_plan(capital, fraction, gamma, rounds) {
                        let price = view.price(token);
                        let round_gas = view.gas.deposit.checked_add(view.gas.borrow).unwrap_or(Wad::ZERO);
                        for (deposit, borrow) in plan {
                            // stop when the marginal round is smaller than
                            // the gas it costs to run it
                            if !round_gas.is_zero() {
                                let deposit_usd = deposit.mul(price).unwrap_or(Wad::ZERO);
                                if deposit_usd < round_gas {
                                    break;
                                }
                            }
                            intents.push(Intent::Deposit {
                                token,
                                amount: Amount::All,
                            });
                            if let Some(b) = borrow {
                                intents.push(Intent::Borrow {
                                    token,
                                    amount: Amount::AtMost(b),
                                });
                            }
                        }
                    }
                } else if self.entered {
                    // claim policy: wait until the reward is worth the gas
                    let pending = view.comptroller.pending_rewards(
                        self.address,
                        view.pools,
                        view.positions,
                    );
                    if !pending.is_zero() {
                        if let Some(reward_token) = view.comptroller.reward_token {
                            let value = pending.mul(view.price(reward_token)).unwrap_or(Wad::ZERO);
                            let hurdle = claim_threshold.mul(view.gas.claim).unwrap_or(Wad::ZERO);
                            if value >= hurdle && !value.is_zero() {
                                intents.push(Intent::Claim);
                            }
                        }
                    }
                }
            }
            Strategy::LiquidatorBot {
                inventory_token,
                sell_seized,
            } => {
                if sell_seized {
                    // redeem foreign cTokens picked up as seized collateral
                    for ((addr, token), pos) in view
                        .positions
                        .range((self.address, TokenId(0))..=(self.address, TokenId(u32::MAX)))
                    {
                        debug_assert_eq!(*addr, self.address);
                        if *token != inventory_token && !pos.ctoken_balance.is_zero() {
                            intents.push(Intent::Withdraw {
                                token: *token,
                                ctokens: Amount::All,
                            });
                            intents.push(Intent::Swap {
                                token_in: *token,
                                token_out: inventory_token,
                                amount_in: Amount::All,
                            });
                        }
                    }
                    // dump any loose non-inventory wallet balances too
                    for (token, bal) in self.wallet.clone() {
                        if token != inventory_token && !bal.is_zero() {
                            intents.push(Intent::Swap {
                                token_in: token,
                                token_out: inventory_token,
                                amount_in: Amount::All,
                            });
                        }
                    }
                }
            }
            Strategy::MicroAirdrop {
                token,
                deposit_usd,
                at_block,
            } => {
                if !self.entered && view.block >= at_block {
                    let price = view.price(token);
                    if !price.is_zero() {
                        if let Ok(tokens) = deposit_usd.div(price) {
                            let tokens = tokens.min(self.wallet_balance(token));
                            if !tokens.is_zero() {
                                intents.push(Intent::Deposit {
                                    token,
                                    amount: Amount::Exact(tokens),
                                });
                            }
                        }
                    }
                    self.entered = true;
                }
            }
            Strategy::RateChaser {
                token,
                threshold,
                review_every,
            } => {
                let due = match self.last_review {
                    None => true,
                    Some(last) => view.block >= last + review_every.max(1),
                };
                if due {
                    // small deterministic jitter so a cohort does not move
                    // in lockstep
                    if rng.gen_ratio(9, 10) {
                        self.last_review = Some(view.block);
                        let attractive = self
                            .net_rate_clears(view, token, threshold)
                            .unwrap_or(false);
                        let in_pool = view
                            .position(self.address, token)
                            .map(|p| !p.ctoken_balance.is_zero())
                            .unwrap_or(false);
                        if attractive && !self.wallet_balance(token).is_zero() {
                            intents.push(Intent::Deposit {
                                token,
                                amount: Amount::All,
                            });
                        } else if !attractive && in_pool {
                            intents.push(Intent::Withdraw {
                                token,
                                ctokens: Amount::All,
                            });
                        }
                    }
                }
            }
        }
        intents
    }

    fn net_rate_clears(&self, view: &WorldView<'_>, token: TokenId, threshold: Wad) -> Option<bool> {
        Some(view.net_supply_rate(token)? >= threshold)
    }
}

/// A liquidation opportunity found by the scan, before a bot is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiquidationIntent {
    pub borrower: AddressId,
    pub repay_token: TokenId,
    pub repay_amount: Wad,
    pub seize_token: TokenId,
    pub expected_profit_usd: Wad,
}

/// Scan every indebted account and propose profitable close-factor
/// liquidations, most profitable first. An opportunity is profitable when
/// the incentive on the repaid value covers the liquidation gas cost.
pub fn liquidator_scan(
    view: &WorldView<'_>,
    borrowers: &[AddressId],
) -> Vec<LiquidationIntent> {
    let mut intents = Vec::new();
    for &borrower in borrowers {
        let Ok(liquidity) =
            view.comptroller
                .account_liquidity(borrower, view.pools, view.positions, view.prices)
        else {
            continue;
        };
        if !liquidity.is_negative() {
            continue;
        }
        // largest debt to repay, largest collateral to seize
        let mut best_debt: Option<(TokenId, Wad, Wad)> = None; // token, debt, usd
        let mut best_coll: Option<(TokenId, Wad, Wad)> = None; // token, ctokens, usd
        for ((addr, token), pos) in view
            .positions
            .range((borrower, TokenId(0))..=(borrower, TokenId(u32::MAX)))
        {
            debug_assert_eq!(*addr, borrower);
            let Some(pool) = view.pools.get(token) else {
                continue;
            };
            let price = view.price(*token);
            if !pos.borrow_principal.is_zero() {
                let debt = pos.current_debt(pool).unwrap_or(Wad::ZERO);
                let usd = debt.mul(price).unwrap_or(Wad::ZERO);
                if best_debt.map(|(_, _, u)| usd > u).unwrap_or(true) {
                    best_debt = Some((*token, debt, usd));
                }
            }
            if !pos.ctoken_balance.is_zero() {
                let rate = pool.exchange_rate().unwrap_or(Wad::ZERO);
                let usd = pos
                    .ctoken_balance
                    .mul(rate)
                    .and_then(|u| u.mul(price))
                    .unwrap_or(Wad::ZERO);
                if best_coll.map(|(_, _, u)| usd > u).unwrap_or(true) {
                    best_coll = Some((*token, pos.ctoken_balance, usd));
                }
            }
        }
        let (Some((repay_token, debt, _)), Some((seize_token, seize_ctokens, seize_usd))) =
            (best_debt, best_coll)
        else {
            continue;
        };
        let close_factor = view.comptroller.liquidation.close_factor;
        let incentive = view.comptroller.liquidation.liquidator_incentive;
        let p_repay = view.price(repay_token);
        if p_repay.is_zero() {
            continue;
        }
        // close-factor cap, then seizable-collateral cap
        let mut repay = debt.mul(close_factor).unwrap_or(Wad::ZERO);
        let bonus = Wad::ONE + incentive;
        let seize_pool = view.pools.get(&seize_token).expect("pool exists");
        let rate = seize_pool.exchange_rate().unwrap_or(Wad::ZERO);
        let p_seize = view.price(seize_token);
        let _ = seize_usd;
        let max_seize_usd = seize_ctokens
            .mul(rate)
            .and_then(|u| u.mul(p_seize))
            .unwrap_or(Wad::ZERO);
        let max_repay_usd = max_seize_usd.div(bonus).unwrap_or(Wad::ZERO);
        let repay_usd = repay.mul(p_repay).unwrap_or(Wad::ZERO);
        let capped_usd = repay_usd.min(max_repay_usd);
        if capped_usd < repay_usd {
            repay = capped_usd.div(p_repay).unwrap_or(Wad::ZERO);
        }
        if repay.is_zero() {
            continue;
        }
        let final_repay_usd = repay.mul(p_repay).unwrap_or(Wad::ZERO);
        let gross = final_repay_usd.mul(incentive).unwrap_or(Wad::ZERO);
        if gross < view.gas.liquidate {
            continue; // arbitrage profit does not cover gas
        }
        intents.push(LiquidationIntent {
            borrower,
            repay_token,
            repay_amount: repay,
            seize_token,
            expected_profit_usd: gross - view.gas.liquidate,
        });
    }
    intents.sort_by(|a, b| {
        b.expected_profit_usd
            .cmp(&a.expected_profit_usd)
            .then(a.borrower.cmp(&b.borrower))
    });
    intents
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comptroller::{CollateralConfig, LiquidationConfig};
    use crate::interest::{InterestParams, RegimeSchedule};
    use crate::pool::{AccountPosition, UtilizationConvention};
    use rand::SeedableRng;

    const ETH: TokenId = TokenId(0);
    const DAI: TokenId = TokenId(1);

    fn wad(x: f64) -> Wad {
        Wad::from_f64(x).unwrap()
    }

    #[test]
    fn loop_plan_geometric_series() {
        // gamma 0.25, f = 0.75: totals approach 4x supplied / 3x borrowed
        let plan =
            leverage_loop_plan(Wad::ONE, wad(0.75), wad(0.25), 60).unwrap();
        let supplied: Wad = plan.iter().map(|(d, _)| *d).sum();
        let borrowed: Wad = plan.iter().filter_map(|(_, b)| *b).sum();
        assert!((supplied.to_f64() - 4.0).abs() < 1e-6);
        assert!((borrowed.to_f64() - 3.0).abs() < 1e-6);
        // single round: supplied 1.75, borrowed 0.75
        let plan = leverage_loop_plan(Wad::ONE, wad(0.75), wad(0.25), 1).unwrap();
        let supplied: Wad = plan.iter().map(|(d, _)| *d).sum();
        let borrowed: Wad = plan.iter().filter_map(|(_, b)| *b).sum();
        assert_eq!(supplied, wad(1.75));
        assert_eq!(borrowed, wad(0.75));
        // zero rounds: plain deposit
        let plan = leverage_loop_plan(Wad::ONE, wad(0.75), wad(0.25), 0).unwrap();
        assert_eq!(plan, vec![(Wad::ONE, None)]);
    }

    #[test]
    fn loop_plan_rejects_excess_fraction() {
        let err = leverage_loop_plan(Wad::ONE, wad(0.80), wad(0.25), 3).unwrap_err();
        assert!(matches!(err, AgentError::FractionTooHigh { .. }));
    }

    #[test]
    fn micro_wave_definition_boundary() {
        assert!(micro_airdrop_wave(1000, Wad::from_int(3), DAI, true, 0).is_ok());
        assert_eq!(
            micro_airdrop_wave(10, Wad::from_int(5), DAI, true, 0).unwrap_err(),
            AgentError::MicroTooLarge(Wad::from_int(5))
        );
        assert_eq!(
            micro_airdrop_wave(10, Wad::from_int(3), ETH, false, 0).unwrap_err(),
            AgentError::MicroNotStablecoin
        );
        let spec = micro_airdrop_wave(0, Wad::from_int(3), DAI, true, 0).unwrap();
        assert_eq!(spec.count, 0);
    }

    struct Fixture {
        pools: BTreeMap<TokenId, PoolState>,
        positions: Positions,
        prices: PriceMap,
        comptroller: Comptroller,
        gas: GasModel,
    }

    fn fixture() -> Fixture {
        let mut pools = BTreeMap::new();
        for t in [ETH, DAI] {
            pools.insert(
                t,
                PoolState::new(
                    t,
                    RegimeSchedule::single(InterestParams::default()),
                    Wad::ONE,
                    UtilizationConvention::CashPlusBorrows,
                ),
            );
        }
        let mut collateral = BTreeMap::new();
        collateral.insert(ETH, CollateralConfig::default_for(false));
        collateral.insert(DAI, CollateralConfig::default_for(true));
        let comptroller = Comptroller::new(
            collateral,
            LiquidationConfig::default(),
            BTreeMap::new(),
            None,
        )
        .unwrap();
        let mut prices = PriceMap::new();
        prices.insert(ETH, Wad::from_int(2000));
        prices.insert(DAI, Wad::ONE);
        Fixture {
            pools,
            positions: Positions::new(),
            prices,
            comptroller,
            gas: GasModel::default(),
        }
    }

    fn view<'a>(f: &'a Fixture, block: u64) -> WorldView<'a> {
        WorldView {
            block,
            blocks_per_year: 2_425_846,
            pools: &f.pools,
            positions: &f.positions,
            prices: &f.prices,
            comptroller: &f.comptroller,
            gas: &f.gas,
        }
    }

    #[test]
    fn hold_deposit_emits_single_full_deposit() {
        let f = fixture();
        let mut agent = AgentState::new(
            AddressId(1),
            AgentCategory::SmallAddress,
            Strategy::HoldDeposit {
                token: DAI,
                start_block: 0,
                exit_block: None,
            },
            Wad::from_int(100),
        );
        agent.credit_wallet(DAI, Wad::from_int(100));
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let intents = agent.step(&view(&f, 0), &mut rng);
        assert_eq!(
            intents,
            vec![Intent::Deposit {
                token: DAI,
                amount: Amount::All
            }]
        );
        // second step: nothing
        assert!(agent.step(&view(&f, 1), &mut rng).is_empty());
    }

    #[test]
    fn zero_capital_agent_stays_idle() {
        let f = fixture();
        let mut agent = AgentState::new(
            AddressId(1),
            AgentCategory::SmallAddress,
            Strategy::HoldDeposit {
                token: DAI,
                start_block: 0,
                exit_block: None,
            },
            Wad::ZERO,
        );
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(agent.step(&view(&f, 0), &mut rng).is_empty());
    }

    #[test]
    fn leverage_loop_emits_alternating_intents() {
        let f = fixture();
        let mut agent = AgentState::new(
            AddressId(1),
            AgentCategory::YieldAggregator,
            Strategy::LeverageLoop {
                token: DAI,
                fraction: wad(0.75),
                rounds: 2,
                start_block: 0,
                claim_threshold: Wad::ONE,
            },
            Wad::from_int(100),
        );
        agent.credit_wallet(DAI, Wad::from_int(100));
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let intents = agent.step(&view(&f, 0), &mut rng);
        assert_eq!(
            intents,
            vec![
                Intent::Deposit { token: DAI, amount: Amount::All },
                Intent::Borrow { token: DAI, amount: Amount::AtMost(wad(75.0)) },
                Intent::Deposit { token: DAI, amount: Amount::All },
                Intent::Borrow { token: DAI, amount: Amount::AtMost(wad(56.25)) },
                Intent::Deposit { token: DAI, amount: Amount::All },
            ]
        );
    }

    #[test]
    fn scan_finds_profitable_liquidation_only() {
        let mut f = fixture();
        // borrower: 1 ETH collateral, 1000 DAI debt; fund the DAI pool
        let mut lender = AccountPosition::default();
        f.pools
            .get_mut(&DAI)
            .unwrap()
            .deposit(&mut lender, Wad::from_int(10_000))
            .unwrap();
        f.positions.insert((AddressId(9), DAI), lender);
        let mut coll = AccountPosition::default();
        f.pools
            .get_mut(&ETH)
            .unwrap()
            .deposit(&mut coll, Wad::ONE)
            .unwrap();
        f.positions.insert((AddressId(1), ETH), coll);
        let mut debt = AccountPosition::default();
        f.pools
            .get_mut(&DAI)
            .unwrap()
            .borrow(&mut debt, Wad::from_int(1000))
            .unwrap();
        f.positions.insert((AddressId(1), DAI), debt);

        // healthy book: no intents
        let intents = liquidator_scan(&view(&f, 0), &[AddressId(1)]);
        assert!(intents.is_empty());

        // crash ETH to 1200: liquidity = 0.6*1200 - 1000 = -280
        f.prices.insert(ETH, Wad::from_int(1200));
        let intents = liquidator_scan(&view(&f, 0), &[AddressId(1)]);
        assert_eq!(intents.len(), 1);
        let li = &intents[0];
        assert_eq!(li.repay_token, DAI);
        assert_eq!(li.seize_token, ETH);
        assert_eq!(li.repay_amount, Wad::from_int(500));
        // profit = 500 * 0.08 = 40 with zero gas
        assert_eq!(li.expected_profit_usd, Wad::from_int(40));

        // gas 41 makes it unprofitable
        f.gas.liquidate = Wad::from_int(41);
        let intents = liquidator_scan(&view(&f, 0), &[AddressId(1)]);
        assert!(intents.is_empty());

        // gas 20 leaves profit 20
        f.gas.liquidate = Wad::from_int(20);
        let intents = liquidator_scan(&view(&f, 0), &[AddressId(1)]);
        assert_eq!(intents[0].expected_profit_usd, Wad::from_int(20));
    }

    #[test]
    fn micro_agent_single_intent_lifecycle() {
        let f = fixture();
        let mut agent = AgentState::new(
            AddressId(5),
            AgentCategory::MicroAddress,
            Strategy::MicroAirdrop {
                token: DAI,
                deposit_usd: Wad::from_int(3),
                at_block: 2,
            },
            Wad::from_int(3),
        );
        agent.credit_wallet(DAI, Wad::from_int(3));
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(agent.step(&view(&f, 0), &mut rng).is_empty());
        let intents = agent.step(&view(&f, 2), &mut rng);
        assert_eq!(
            intents,
            vec![Intent::Deposit {
                token: DAI,
                amount: Amount::Exact(Wad::from_int(3))
            }]
        );
        for b in 3..10 {
            assert!(agent.step(&view(&f, b), &mut rng).is_empty());
        }
    }
}
