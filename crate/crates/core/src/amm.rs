//! Constant-product market maker.
//!
//! Swaps move along the hyperbola x*y = k. Output amounts round in the
//! pool's favor, so a fee-free swap leaves the product within one ulp
//! above its prior value and a fee-bearing swap strictly grows it. This is
//! the venue where liquidators dump seized collateral, which (with oracle
//! coupling on) feeds price impact back into the lending market.

use crate::ledger::TokenId;
use crate::wad::{Wad, WadError};
use primitive_types::U256;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AmmError {
    #[error("token {0} is not in this pair")]
    TokenNotInPair(TokenId),
    #[error("swap input must be positive")]
    ZeroInput,
    #[error("swap output rounds to zero")]
    ZeroOutput,
    #[error("pool reserves are empty")]
    EmptyPool,
    #[error("liquidity add must match the reserve ratio")]
    DisproportionateAdd,
    #[error("burn exceeds LP supply")]
    ExcessBurn,
    #[error(transparent)]
    Wad(#[from] WadError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmmPool {
    pub token_x: TokenId,
    pub token_y: TokenId,
    pub reserve_x: Wad,
    pub reserve_y: Wad,
    /// Fee on input amount, in [0, 1). 0.003 is the usual convention.
    pub fee: Wad,
    pub lp_supply: Wad,
}

impl AmmPool {
    pub fn new(
        token_x: TokenId,
        token_y: TokenId,
        reserve_x: Wad,
        reserve_y: Wad,
        fee: Wad,
    ) -> Result<AmmPool, AmmError> {
        if reserve_x.is_zero() || reserve_y.is_zero() {
            return Err(AmmError::EmptyPool);
        }
        if fee >= Wad::ONE {
            return Err(AmmError::Wad(WadError::Overflow("fee out of range")));
        }
        // initial LP supply: geometric mean of the raw reserves
        let lp = isqrt_u256(U256::from(reserve_x.0) * U256::from(reserve_y.0));
        Ok(AmmPool {
            token_x,
            token_y,
            reserve_x,
            reserve_y,
            fee,
            lp_supply: Wad(lp),
        })
    }

    pub fn other(&self, token: TokenId) -> Result<TokenId, AmmError> {
        if token == self.token_x {
            Ok(self.token_y)
        } else if token == self.token_y {
            Ok(self.token_x)
        } else {
            Err(AmmError::TokenNotInPair(token))
        }
    }

    /// Product of the raw reserves (a 256-bit quantity).
    pub fn k(&self) -> U256 {
        U256::from(self.reserve_x.0) * U256::from(self.reserve_y.0)
    }

    /// Spot price of x in units of y.
    pub fn spot_price(&self) -> Result<Wad, AmmError> {
        if self.reserve_x.is_zero() || self.reserve_y.is_zero() {
            return Err(AmmError::EmptyPool);
        }
        Ok(self.reserve_y.div(self.reserve_x)?)
    }

    /// Swap a fixed input for as much output as the curve allows.
    ///
    /// The post-swap output reserve is ceil(k / new_input_reserve), the
    /// smallest reserve that keeps the product from shrinking.
    pub fn swap_exact_in(&mut self, token_in: TokenId, amount_in: Wad) -> Result<Wad, AmmError> {
        if amount_in.is_zero() {
            return Err(AmmError::ZeroInput);
        }
        let x_side = if token_in == self.token_x {
            true
        } else if token_in == self.token_y {
            false
        } else {
            return Err(AmmError::TokenNotInPair(token_in));
        };
        let (r_in, r_out) = if x_side {
            (self.reserve_x, self.reserve_y)
        } else {
            (self.reserve_y, self.reserve_x)
        };
        let effective_in = amount_in.mul(Wad::ONE - self.fee)?;
        let k = U256::from(r_in.0) * U256::from(r_out.0);
        let new_in = U256::from(r_in.0) + U256::from(effective_in.0);
        // ceil division keeps k non-decreasing
        let new_out = (k + new_in - U256::from(1u8)) / new_in;
        if new_out > U256::from(u128::MAX) {
            return Err(AmmError::Wad(WadError::Overflow("swap")));
        }
        let new_out = Wad(new_out.as_u128());
        let amount_out = r_out.checked_sub(new_out)?;
        if amount_out.is_zero() {
            return Err(AmmError::ZeroOutput);
        }
        // the fee portion of the input also stays in the pool
        let new_in_full = r_in.checked_add(amount_in)?;
        if x_side {
            self.reserve_x = new_in_full;
            self.reserve_y = new_out;
        } else {
            self.reserve_y = new_in_full;
            self.reserve_x = new_out;
        }
        Ok(amount_out)
    }

    /// Mint LP tokens for a proportional deposit. `amount_x` sets the
    /// scale; `amount_y` must match the current ratio to within one ulp.
    pub fn add_liquidity(&mut self, amount_x: Wad, amount_y: Wad) -> Result<Wad, AmmError> {
        if amount_x.is_zero() || amount_y.is_zero() {
            return Err(AmmError::ZeroInput);
        }
        let expected_y = amount_x.mul_div(self.reserve_y.0, self.reserve_x.0)?;
        let diff = if amount_y >= expected_y {
            amount_y - expected_y
        } else {
            expected_y - amount_y
        };
        if diff > Wad(1) {
            return Err(AmmError::DisproportionateAdd);
        }
        let minted = self.lp_supply.mul_div(amount_x.0, self.reserve_x.0)?;
        self.reserve_x = self.reserve_x.checked_add(amount_x)?;
        self.reserve_y = self.reserve_y.checked_add(amount_y)?;
        self.lp_supply = self.lp_supply.checked_add(minted)?;
        Ok(minted)
    }

    /// Burn LP tokens for a pro-rata share of both reserves.
    pub fn remove_liquidity(&mut self, lp_tokens: Wad) -> Result<(Wad, Wad), AmmError> {
        if lp_tokens > self.lp_supply {
            return Err(AmmError::ExcessBurn);
        }
        if lp_tokens.is_zero() {
            return Ok((Wad::ZERO, Wad::ZERO));
        }
        let out_x = self.reserve_x.mul_div(lp_tokens.0, self.lp_supply.0)?;
        let out_y = self.reserve_y.mul_div(lp_tokens.0, self.lp_supply.0)?;
        self.reserve_x -= out_x;
        self.reserve_y -= out_y;
        self.lp_supply -= lp_tokens;
        Ok((out_x, out_y))
    }
}

/// LP value relative to holding, as the pool price ratio moves by `r`:
/// `2 sqrt(r) / (1 + r) - 1`. Zero at r = 1, negative elsewhere,
/// symmetric in r and 1/r.
pub fn divergent_loss(price_ratio: f64) -> Result<f64, AmmError> {
    if price_ratio <= 0.0 || !price_ratio.is_finite() {
        return Err(AmmError::ZeroInput);
    }
    Ok(2.0 * price_ratio.sqrt() / (1.0 + price_ratio) - 1.0)
}

fn isqrt_u256(v: U256) -> u128 {
    if v.is_zero() {
        return 0;
    }
    let mut x = U256::from(1u8) << v.bits().div_ceil(2);
    loop {
        let nx = (x + v / x) >> 1;
        if nx >= x {
            break;
        }
        x = nx;
    }
    x.as_u128()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const X: TokenId = TokenId(0);
    const Y: TokenId = TokenId(1);

    fn pool(rx: u64, ry: u64, fee: f64) -> AmmPool {
        AmmPool::new(
            X,
            Y,
            Wad::from_int(rx),
            Wad::from_int(ry),
            Wad::from_f64(fee).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_swap() {
        // (1000, 1000), fee 0, sell 100 x: out = 1000 - 1e6/1100 = 90.9090..
        let mut p = pool(1000, 1000, 0.0);
        let out = p.swap_exact_in(X, Wad::from_int(100)).unwrap();
        let expect = Wad::from_int(1000) - Wad::from_ratio(1_000_000, 1100).unwrap();
        // pool rounds output down by at most one ulp vs the exact value
        assert!(out <= expect);
        assert!(expect.0 - out.0 <= 1);
        let approx = out.to_f64();
        assert!((approx - 90.90909090909092).abs() < 1e-9);
    }

    #[test]
    fn zero_input_rejected() {
        let mut p = pool(1000, 1000, 0.0);
        assert_eq!(p.swap_exact_in(X, Wad::ZERO), Err(AmmError::ZeroInput));
        assert_eq!(
            p.swap_exact_in(TokenId(9), Wad::ONE),
            Err(AmmError::TokenNotInPair(TokenId(9)))
        );
    }

    #[test]
    fn spot_price_ratio_and_impact() {
        let p = pool(1000, 1000, 0.0);
        assert_eq!(p.spot_price().unwrap(), Wad::ONE);
        let p2 = pool(1000, 2000, 0.0);
        assert_eq!(p2.spot_price().unwrap(), Wad::from_int(2));
        // selling x lowers the price of x
        let mut p3 = pool(1000, 1000, 0.0);
        p3.swap_exact_in(X, Wad::from_int(100)).unwrap();
        assert!(p3.spot_price().unwrap() < Wad::ONE);
    }

    #[test]
    fn combined_swap_beats_split_swaps() {
        let total = Wad::from_int(100);
        for fee in [0.0, 0.003] {
            let mut split = pool(1000, 1000, fee);
            let out_a = split.swap_exact_in(X, Wad::from_int(40)).unwrap();
            let out_b = split.swap_exact_in(X, Wad::from_int(60)).unwrap();
            let mut combined = pool(1000, 1000, fee);
            let out_c = combined.swap_exact_in(X, total).unwrap();
            assert!(out_c >= out_a + out_b);
        }
    }

    #[test]
    fn divergent_loss_values() {
        assert_eq!(divergent_loss(1.0).unwrap(), 0.0);
        assert!((divergent_loss(4.0).unwrap() + 0.2).abs() < 1e-15);
        // symmetric in r and 1/r
        for r in [0.1, 0.5, 2.0, 7.3] {
            let a = divergent_loss(r).unwrap();
            let b = divergent_loss(1.0 / r).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(divergent_loss(0.0).is_err());
        assert!(divergent_loss(-2.0).is_err());
    }

    #[test]
    fn liquidity_pro_rata() {
        let mut p = pool(1000, 2000, 0.003);
        let supply0 = p.lp_supply;
        // add 10% of both reserves -> 10% of supply
        let minted = p
            .add_liquidity(Wad::from_int(100), Wad::from_int(200))
            .unwrap();
        assert_eq!(minted, supply0.mul_div(1, 10).unwrap());
        // disproportionate add is rejected
        assert_eq!(
            p.add_liquidity(Wad::from_int(10), Wad::from_int(10)),
            Err(AmmError::DisproportionateAdd)
        );
        // remove everything -> entire reserves
        let all = p.lp_supply;
        let (ox, oy) = p.remove_liquidity(all).unwrap();
        assert_eq!(ox, Wad::from_int(1100));
        assert_eq!(oy, Wad::from_int(2200));
        assert_eq!(p.lp_supply, Wad::ZERO);
    }

    #[test]
    fn burn_above_supply_rejected() {
        let mut p = pool(1000, 1000, 0.0);
        let too_much = p.lp_supply + Wad(1);
        assert_eq!(p.remove_liquidity(too_much), Err(AmmError::ExcessBurn));
    }

    #[test]
    fn fees_accrue_to_remaining_lps() {
        // deposit, run fee-bearing swaps, withdraw: redeemed value at the
        // final spot price is at least the pro-rata share of the original k
        let mut p = pool(1000, 1000, 0.003);
        let minted = p
            .add_liquidity(Wad::from_int(100), Wad::from_int(100))
            .unwrap();
        let k0 = p.k();
        for i in 0..50 {
            let token = if i % 2 == 0 { X } else { Y };
            p.swap_exact_in(token, Wad::from_int(37)).unwrap();
        }
        assert!(p.k() > k0, "fee swaps must grow k");
        let share = minted.0 as f64 / p.lp_supply.0 as f64;
        let (ox, oy) = p.remove_liquidity(minted).unwrap();
        let spot = p.spot_price().unwrap().to_f64();
        let redeemed = ox.to_f64() * spot + oy.to_f64();
        // value of the same share of the ORIGINAL reserves at final spot
        let base = share * (1100.0 * spot + 1100.0);
        assert!(redeemed >= base * 0.999_999);
    }

    proptest! {
        #[test]
        fn prop_k_never_decreases(
            rx in 1u64..1_000_000,
            ry in 1u64..1_000_000,
            sell in 1u64..500_000,
            x_side in proptest::bool::ANY,
            fee_bps in 0u32..100,
        ) {
            let fee = Wad::from_ratio(fee_bps as u128, 10_000).unwrap();
            let mut p = AmmPool::new(X, Y, Wad::from_int(rx), Wad::from_int(ry), fee).unwrap();
            let k0 = p.k();
            let token = if x_side { X } else { Y };
            if p.swap_exact_in(token, Wad::from_int(sell)).is_ok() {
                prop_assert!(p.k() >= k0);
                if fee_bps > 0 {
                    prop_assert!(p.k() > k0);
                }
            }
        }

        #[test]
        fn prop_round_trip_never_profits(
            rx in 10u64..1_000_000,
            ry in 10u64..1_000_000,
            sell in 1u64..100_000,
            fee_bps in 0u32..100,
        ) {
            let fee = Wad::from_ratio(fee_bps as u128, 10_000).unwrap();
            let mut p = AmmPool::new(X, Y, Wad::from_int(rx), Wad::from_int(ry), fee).unwrap();
            let start = Wad::from_int(sell);
            if let Ok(got_y) = p.swap_exact_in(X, start) {
                if let Ok(back_x) = p.swap_exact_in(Y, got_y) {
                    prop_assert!(back_x <= start);
                }
            }
        }
    }
}
