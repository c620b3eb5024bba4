//! The cToken market state machine.
//!
//! Deposits mint depository receipts at the current exchange rate,
//! withdrawals redeem them, borrows draw down pool cash, repayments restore
//! it. Interest accrues once per block gap: simple within the gap,
//! compounding across accruals through the borrow index. The exchange rate
//! is stored as underlying-per-cToken, so it only ever rises; quoting the
//! reciprocal (cTokens per underlying) is a display concern.
//!
//! All rounding truncates toward zero, which is always in the pool's
//! favor: deposits mint at most the exact cToken amount, redemptions pay
//! out at most the exact underlying amount.

use crate::interest::{borrow_rate, InterestError, RegimeSchedule};
use crate::ledger::TokenId;
use crate::wad::{Wad, WadError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoolError {
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("clock at block {clock} is behind last accrual block {last}")]
    ClockBehindAccrual { clock: u64, last: u64 },
    #[error("insufficient cToken balance: have {have}, need {need}")]
    InsufficientCTokens { have: Wad, need: Wad },
    #[error("insufficient pool cash: have {have}, need {need}")]
    InsufficientCash { have: Wad, need: Wad },
    #[error("repayment {amount} exceeds outstanding debt {debt}")]
    Overpayment { amount: Wad, debt: Wad },
    #[error(transparent)]
    Interest(#[from] InterestError),
    #[error(transparent)]
    Wad(#[from] WadError),
}

/// Which denominator the utilization ratio uses. The self-consistent
/// default divides by cash plus borrows; the alternative adds reserves to
/// the denominator, following the looser "deposits plus reserves" phrasing
/// sometimes used for this ratio. Neither is asserted as ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilizationConvention {
    #[default]
    CashPlusBorrows,
    DepositsPlusReserves,
}

/// One cToken market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub token: TokenId,
    /// Underlying tokens held by the pool.
    pub total_cash: Wad,
    /// Underlying owed by borrowers, including accrued interest.
    pub total_borrows: Wad,
    /// Interest retained for the protocol (an allocation within pool
    /// assets, not separate tokens).
    pub total_reserves: Wad,
    pub ctoken_supply: Wad,
    /// Cumulative borrow interest index, starts at 1.
    pub borrow_index: Wad,
    pub last_accrual_block: u64,
    pub schedule: RegimeSchedule,
    /// Exchange rate used while ctoken_supply is zero.
    pub initial_exchange_rate: Wad,
    pub utilization_convention: UtilizationConvention,
}

/// What one accrual did, for reserve-share verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accrual {
    pub delta_blocks: u64,
    pub interest: Wad,
    pub reserve_take: Wad,
}

/// Per-address position in one market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AccountPosition {
    pub ctoken_balance: Wad,
    pub borrow_principal: Wad,
    pub borrow_index_snapshot: Wad,
}

impl AccountPosition {
    /// Debt including interest accrued since the position last touched the
    /// borrow index.
    pub fn current_debt(&self, pool: &PoolState) -> Result<Wad, WadError> {
        if self.borrow_principal.is_zero() {
            return Ok(Wad::ZERO);
        }
        self.borrow_principal
            .mul_div(pool.borrow_index.0, self.borrow_index_snapshot.0)
    }

    pub fn is_empty(&self) -> bool {
        self.ctoken_balance.is_zero() && self.borrow_principal.is_zero()
    }
}

impl PoolState {
    pub fn new(
        token: TokenId,
        schedule: RegimeSchedule,
        initial_exchange_rate: Wad,
        utilization_convention: UtilizationConvention,
    ) -> PoolState {
        assert!(!initial_exchange_rate.is_zero());
        PoolState {
            token,
            total_cash: Wad::ZERO,
            total_borrows: Wad::ZERO,
            total_reserves: Wad::ZERO,
            ctoken_supply: Wad::ZERO,
            borrow_index: Wad::ONE,
            last_accrual_block: 0,
            schedule,
            initial_exchange_rate,
            utilization_convention,
        }
    }

    /// Underlying per cToken.
    pub fn exchange_rate(&self) -> Result<Wad, WadError> {
        if self.ctoken_supply.is_zero() {
            return Ok(self.initial_exchange_rate);
        }
        let assets = self
            .total_cash
            .checked_add(self.total_borrows)?
            .checked_sub(self.total_reserves)?;
        assets.div(self.ctoken_supply)
    }

    /// Share of supplied funds currently lent out, clamped to [0, 1].
    pub fn utilization(&self) -> Result<Wad, WadError> {
        if self.total_borrows.is_zero() {
            return Ok(Wad::ZERO);
        }
        let denom = match self.utilization_convention {
            UtilizationConvention::CashPlusBorrows => {
                self.total_cash.checked_add(self.total_borrows)?
            }
            UtilizationConvention::DepositsPlusReserves => self
                .total_cash
                .checked_add(self.total_borrows)?
                .checked_add(self.total_reserves)?,
        };
        if denom.is_zero() {
            return Ok(Wad::ZERO);
        }
        Ok(self.total_borrows.div(denom)?.min(Wad::ONE))
    }

    /// Annual borrow rate at the current utilization under the regime
    /// active at `block`.
    pub fn current_borrow_rate(&self, block: u64) -> Result<Wad, PoolError> {
        let params = self.schedule.active_params(block);
        Ok(borrow_rate(params, self.utilization()?)?)
    }

    pub fn current_supply_rate(&self, block: u64) -> Result<Wad, PoolError> {
        let params = self.schedule.active_params(block);
        Ok(crate::interest::supply_rate(params, self.utilization()?)?)
    }

    /// Accrue interest up to `block`. Simple interest over the gap:
    /// `interest = borrows * (rate / blocks_per_year) * delta_blocks`, of
    /// which exactly `reserve_factor * interest` is set aside as reserves.
    /// Idempotent within a block.
    pub fn accrue(&mut self, block: u64, blocks_per_year: u64) -> Result<Accrual, PoolError> {
        if block < self.last_accrual_block {
            return Err(PoolError::ClockBehindAccrual {
                clock: block,
                last: self.last_accrual_block,
            });
        }
        let delta = block - self.last_accrual_block;
        if delta == 0 {
            return Ok(Accrual::default());
        }
        self.last_accrual_block = block;
        if self.total_borrows.is_zero() {
            return Ok(Accrual {
                delta_blocks: delta,
                ..Accrual::default()
            });
        }
        let params = self.schedule.active_params(block);
        let annual = borrow_rate(params, self.utilization()?)?;
        let per_block = annual.div_int(blocks_per_year as u128)?;
        let factor = per_block.mul_int(delta as u128)?;
        let interest = self.total_borrows.mul(factor)?;
        let reserve_take = interest.mul(params.reserve_factor)?;
        self.total_borrows = self.total_borrows.checked_add(interest)?;
        self.total_reserves = self.total_reserves.checked_add(reserve_take)?;
        self.borrow_index = self.borrow_index.mul(Wad::ONE.checked_add(factor)?)?;
        Ok(Accrual {
            delta_blocks: delta,
            interest,
            reserve_take,
        })
    }

    /// Mint cTokens for `amount` underlying at the current exchange rate.
    pub fn deposit(
        &mut self,
        position: &mut AccountPosition,
        amount: Wad,
    ) -> Result<Wad, PoolError> {
        if amount.is_zero() {
            return Err(PoolError::ZeroAmount);
        }
        let rate = self.exchange_rate()?;
        let minted = amount.div(rate)?;
        self.total_cash = self.total_cash.checked_add(amount)?;
        self.ctoken_supply = self.ctoken_supply.checked_add(minted)?;
        position.ctoken_balance = position.ctoken_balance.checked_add(minted)?;
        Ok(minted)
    }

    /// Redeem `ctokens` for underlying at the current exchange rate.
    /// Account-liquidity gating happens in the risk engine, not here.
    pub fn withdraw(
        &mut self,
        position: &mut AccountPosition,
        ctokens: Wad,
    ) -> Result<Wad, PoolError> {
        if ctokens.is_zero() {
            return Ok(Wad::ZERO);
        }
        if ctokens > position.ctoken_balance {
            return Err(PoolError::InsufficientCTokens {
                have: position.ctoken_balance,
                need: ctokens,
            });
        }
        let rate = self.exchange_rate()?;
        let returned = ctokens.mul(rate)?;
        if returned > self.total_cash {
            return Err(PoolError::InsufficientCash {
                have: self.total_cash,
                need: returned,
            });
        }
        self.total_cash -= returned;
        self.ctoken_supply -= ctokens;
        position.ctoken_balance -= ctokens;
        Ok(returned)
    }

    /// Draw `amount` underlying from pool cash. Borrow-limit gating
    /// happens in the risk engine.
    pub fn borrow(
        &mut self,
        position: &mut AccountPosition,
        amount: Wad,
    ) -> Result<(), PoolError> {
        if amount.is_zero() {
            return Err(PoolError::ZeroAmount);
        }
        if amount > self.total_cash {
            return Err(PoolError::InsufficientCash {
                have: self.total_cash,
                need: amount,
            });
        }
        let debt = position.current_debt(self)?;
        self.total_cash -= amount;
        self.total_borrows = self.total_borrows.checked_add(amount)?;
        position.borrow_principal = debt.checked_add(amount)?;
        position.borrow_index_snapshot = self.borrow_index;
        Ok(())
    }

    /// Repay up to the full outstanding debt.
    pub fn repay(&mut self, position: &mut AccountPosition, amount: Wad) -> Result<(), PoolError> {
        if amount.is_zero() {
            return Err(PoolError::ZeroAmount);
        }
        let debt = position.current_debt(self)?;
        if amount > debt {
            return Err(PoolError::Overpayment { amount, debt });
        }
        self.total_cash = self.total_cash.checked_add(amount)?;
        // individual truncation can leave the aggregate a few ulps behind
        self.total_borrows = self.total_borrows.saturating_sub(amount);
        position.borrow_principal = debt - amount;
        position.borrow_index_snapshot = self.borrow_index;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interest::InterestParams;
    use proptest::prelude::*;

    const T: TokenId = TokenId(0);
    const BPY: u64 = 2_425_846; // 13-second blocks

    fn fresh_pool() -> PoolState {
        PoolState::new(
            T,
            RegimeSchedule::single(InterestParams::default()),
            Wad::ONE,
            UtilizationConvention::CashPlusBorrows,
        )
    }

    fn pos() -> AccountPosition {
        AccountPosition::default()
    }

    #[test]
    fn deposit_at_identity_rate() {
        let mut pool = fresh_pool();
        let mut p = pos();
        let minted = pool.deposit(&mut p, Wad::from_int(100)).unwrap();
        assert_eq!(minted, Wad::from_int(100));
        assert_eq!(pool.total_cash, Wad::from_int(100));
        assert_eq!(pool.ctoken_supply, Wad::from_int(100));
        assert_eq!(pool.deposit(&mut p, Wad::ZERO), Err(PoolError::ZeroAmount));
    }

    #[test]
    fn paper_scale_mint() {
        // initial rate 1/46.2896 underlying per cToken: depositing 1 mints
        // 46.2896 cTokens (up to one ulp of truncation)
        let mut pool = PoolState::new(
            T,
            RegimeSchedule::single(InterestParams::default()),
            Wad::from_ratio(crate::wad::WAD, 46_289_600_000_000_000_000).unwrap(),
            UtilizationConvention::CashPlusBorrows,
        );
        let mut p = pos();
        let minted = pool.deposit(&mut p, Wad::ONE).unwrap();
        let expect = 46.2896;
        assert!((minted.to_f64() - expect).abs() < 1e-9);
    }

    #[test]
    fn utilization_ratios() {
        let mut pool = fresh_pool();
        let mut lender = pos();
        let mut borrower = pos();
        pool.deposit(&mut lender, Wad::from_int(100)).unwrap();
        assert_eq!(pool.utilization().unwrap(), Wad::ZERO);
        pool.borrow(&mut borrower, Wad::from_int(50)).unwrap();
        // cash 50, borrows 50 -> U = 0.5
        assert_eq!(pool.utilization().unwrap(), Wad::from_f64(0.5).unwrap());
        pool.borrow(&mut borrower, Wad::from_int(30)).unwrap();
        // cash 20, borrows 80 -> U = 0.8
        assert_eq!(pool.utilization().unwrap(), Wad::from_f64(0.8).unwrap());
    }

    #[test]
    fn utilization_convention_differs_with_reserves() {
        let mut pool = fresh_pool();
        let mut lender = pos();
        let mut borrower = pos();
        pool.deposit(&mut lender, Wad::from_int(100)).unwrap();
        pool.borrow(&mut borrower, Wad::from_int(80)).unwrap();
        pool.accrue(BPY, BPY).unwrap(); // one year
        let u_default = pool.utilization().unwrap();
        pool.utilization_convention = UtilizationConvention::DepositsPlusReserves;
        let u_alt = pool.utilization().unwrap();
        assert!(pool.total_reserves > Wad::ZERO);
        assert!(u_alt < u_default);
    }

    #[test]
    fn accrue_is_idempotent_within_block() {
        let mut pool = fresh_pool();
        let mut lender = pos();
        let mut borrower = pos();
        pool.deposit(&mut lender, Wad::from_int(100)).unwrap();
        pool.borrow(&mut borrower, Wad::from_int(50)).unwrap();
        pool.accrue(10, BPY).unwrap();
        let snap = pool.clone();
        let a = pool.accrue(10, BPY).unwrap();
        assert_eq!(a.interest, Wad::ZERO);
        assert_eq!(pool, snap);
        assert!(matches!(
            pool.accrue(5, BPY),
            Err(PoolError::ClockBehindAccrual { .. })
        ));
    }

    #[test]
    fn accrue_without_borrows_only_moves_clock() {
        let mut pool = fresh_pool();
        let mut lender = pos();
        pool.deposit(&mut lender, Wad::from_int(100)).unwrap();
        let a = pool.accrue(500, BPY).unwrap();
        assert_eq!(a.interest, Wad::ZERO);
        assert_eq!(pool.last_accrual_block, 500);
        assert_eq!(pool.borrow_index, Wad::ONE);
    }

    #[test]
    fn one_year_simple_accrual() {
        // rate pinned at 10% annual: flat 0.02 base + 0.2*0.4 utilization
        let params = InterestParams {
            base_rate: Wad::from_f64(0.10).unwrap(),
            slope_low: Wad::ZERO,
            slope_high: Wad::ZERO,
            kink: Wad::ONE,
            reserve_factor: Wad::from_f64(0.10).unwrap(),
        };
        let mut pool = PoolState::new(
            T,
            RegimeSchedule::single(params),
            Wad::ONE,
            UtilizationConvention::CashPlusBorrows,
        );
        let mut lender = pos();
        let mut borrower = pos();
        pool.deposit(&mut lender, Wad::from_int(2000)).unwrap();
        pool.borrow(&mut borrower, Wad::from_int(1000)).unwrap();
        let a = pool.accrue(BPY, BPY).unwrap();
        // one year of simple interest at 10% on 1000 = 100, reserves 10
        let interest = a.interest.to_f64();
        assert!((interest - 100.0).abs() < 1e-6, "interest {interest}");
        assert_eq!(a.reserve_take, a.interest.mul(params.reserve_factor).unwrap());
        let debt = borrower.current_debt(&pool).unwrap().to_f64();
        assert!((debt - 1100.0).abs() < 1e-6, "debt {debt}");
    }

    #[test]
    fn repay_paths() {
        let mut pool = fresh_pool();
        let mut lender = pos();
        let mut borrower = pos();
        pool.deposit(&mut lender, Wad::from_int(200)).unwrap();
        pool.borrow(&mut borrower, Wad::from_int(100)).unwrap();
        // partial
        pool.repay(&mut borrower, Wad::from_int(40)).unwrap();
        assert_eq!(borrower.current_debt(&pool).unwrap(), Wad::from_int(60));
        // overpayment
        assert!(matches!(
            pool.repay(&mut borrower, Wad::from_int(61)),
            Err(PoolError::Overpayment { .. })
        ));
        // full close
        pool.repay(&mut borrower, Wad::from_int(60)).unwrap();
        assert_eq!(borrower.current_debt(&pool).unwrap(), Wad::ZERO);
        assert_eq!(pool.total_cash, Wad::from_int(200));
    }

    #[test]
    fn repay_accrued_debt_closes_loan() {
        let params = InterestParams {
            base_rate: Wad::from_f64(0.10).unwrap(),
            slope_low: Wad::ZERO,
            slope_high: Wad::ZERO,
            kink: Wad::ONE,
            reserve_factor: Wad::ZERO,
        };
        let mut pool = PoolState::new(
            T,
            RegimeSchedule::single(params),
            Wad::ONE,
            UtilizationConvention::CashPlusBorrows,
        );
        let mut lender = pos();
        let mut borrower = pos();
        pool.deposit(&mut lender, Wad::from_int(1000)).unwrap();
        pool.borrow(&mut borrower, Wad::from_int(100)).unwrap();
        pool.accrue(BPY, BPY).unwrap();
        let debt = borrower.current_debt(&pool).unwrap();
        assert!((debt.to_f64() - 110.0).abs() < 1e-6);
        pool.repay(&mut borrower, debt).unwrap();
        assert_eq!(borrower.current_debt(&pool).unwrap(), Wad::ZERO);
    }

    #[test]
    fn withdraw_limits() {
        let mut pool = fresh_pool();
        let mut lender = pos();
        let mut borrower = pos();
        pool.deposit(&mut lender, Wad::from_int(100)).unwrap();
        pool.borrow(&mut borrower, Wad::from_int(90)).unwrap();
        // redeeming more than balance
        assert!(matches!(
            pool.withdraw(&mut lender, Wad::from_int(101)),
            Err(PoolError::InsufficientCTokens { .. })
        ));
        // pool has only 10 cash left
        assert!(matches!(
            pool.withdraw(&mut lender, Wad::from_int(11)),
            Err(PoolError::InsufficientCash { .. })
        ));
        // zero redemption is a no-op
        let snap = pool.clone();
        assert_eq!(pool.withdraw(&mut lender, Wad::ZERO).unwrap(), Wad::ZERO);
        assert_eq!(pool, snap);
    }

    #[test]
    fn paper_exchange_rate_fixture() {
        // rate moves 46.2896 -> 46.2859 cTokens per underlying over a day;
        // redeeming everything returns 46.2896/46.2859 per deposited unit
        let r0 = Wad::from_ratio(crate::wad::WAD, 46_289_600_000_000_000_000).unwrap();
        let r1 = Wad::from_ratio(crate::wad::WAD, 46_285_900_000_000_000_000).unwrap();
        let mut pool = PoolState::new(
            T,
            RegimeSchedule::single(InterestParams::default()),
            r0,
            UtilizationConvention::CashPlusBorrows,
        );
        let mut p = pos();
        let mut other = pos();
        pool.deposit(&mut p, Wad::ONE).unwrap();
        pool.deposit(&mut other, Wad::from_int(10)).unwrap();
        // drive the rate to r1 by injecting the implied interest directly
        let target_assets = pool.ctoken_supply.mul(r1).unwrap();
        pool.total_borrows = target_assets - pool.total_cash;
        let all = p.ctoken_balance;
        let redeemed = pool.withdraw(&mut p, all).unwrap();
        let expect = 46.2896 / 46.2859;
        assert!(
            (redeemed.to_f64() - expect).abs() < 1e-9,
            "redeemed {redeemed}"
        );
    }

    #[test]
    fn exchange_rate_never_decreases() {
        let mut pool = fresh_pool();
        let mut a = pos();
        let mut b = pos();
        let mut last_rate = pool.exchange_rate().unwrap();
        pool.deposit(&mut a, Wad::from_int(1000)).unwrap();
        pool.borrow(&mut b, Wad::from_int(700)).unwrap();
        for block in 1..200u64 {
            pool.accrue(block * 100, BPY).unwrap();
            if block % 3 == 0 {
                pool.deposit(&mut a, Wad::from_int(7)).unwrap();
            }
            if block % 5 == 0 {
                let debt = b.current_debt(&pool).unwrap();
                pool.repay(&mut b, debt.min(Wad::from_int(2))).unwrap();
            }
            let rate = pool.exchange_rate().unwrap();
            assert!(rate >= last_rate, "rate decreased at block {block}");
            last_rate = rate;
        }
    }

    proptest! {
        // random event sequences: preconditions fail cleanly, balances
        // never go negative, cash conservation holds exactly
        #[test]
        fn prop_random_sequences_conserve_cash(ops in proptest::collection::vec((0u8..4, 1u64..500), 1..60)) {
            let mut pool = fresh_pool();
            let mut lender = pos();
            let mut borrower = pos();
            let mut net_cash = Wad::ZERO; // deposits - withdrawals - borrows + repays
            let mut block = 0u64;
            for (op, amt) in ops {
                block += 1;
                pool.accrue(block, BPY).unwrap();
                let amount = Wad::from_int(amt);
                match op {
                    0 => {
                        if pool.deposit(&mut lender, amount).is_ok() {
                            net_cash += amount;
                        }
                    }
                    1 => {
                        if let Ok(returned) = pool.withdraw(&mut lender, amount) {
                            net_cash -= returned;
                        }
                    }
                    2 => {
                        if pool.borrow(&mut borrower, amount).is_ok() {
                            net_cash -= amount;
                        }
                    }
                    _ => {
                        let debt = borrower.current_debt(&pool).unwrap();
                        let pay = amount.min(debt);
                        if !pay.is_zero() && pool.repay(&mut borrower, pay).is_ok() {
                            net_cash += pay;
                        }
                    }
                }
                prop_assert_eq!(pool.total_cash, net_cash);
            }
        }
    }
}
