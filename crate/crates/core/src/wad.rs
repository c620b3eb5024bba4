//! 18-decimal fixed-point arithmetic.
//!
//! All protocol state (balances, rates, prices, ratios) lives in [`Wad`],
//! an unsigned integer scaled by 10^18. Addition and subtraction are exact;
//! multiplication and division truncate toward zero, so each operation is
//! exact or short by at most one ulp (1e-18). Anything that would overflow
//! is an error, never a silent wrap.
//!
//! [`SignedWad`] covers the few places that need a sign (account liquidity,
//! net borrow rates, divergent loss).

use primitive_types::U256;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

/// Scale factor: one whole unit.
pub const WAD: u128 = 1_000_000_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WadError {
    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),
    #[error("division by zero")]
    DivisionByZero,
    #[error("subtraction underflow: {0} < {1}")]
    Underflow(Wad, Wad),
    #[error("cannot parse {0:?} as a decimal")]
    Parse(String),
}

/// Unsigned quantity scaled by 10^18.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Wad(pub u128);

impl Wad {
    pub const ZERO: Wad = Wad(0);
    pub const ONE: Wad = Wad(WAD);

    /// Whole units, e.g. `Wad::from_int(3)` is 3.0.
    pub const fn from_int(n: u64) -> Wad {
        Wad(n as u128 * WAD)
    }

    /// `numer / denom` as a fixed-point ratio, truncated.
    pub fn from_ratio(numer: u128, denom: u128) -> Result<Wad, WadError> {
        if denom == 0 {
            return Err(WadError::DivisionByZero);
        }
        let v = U256::from(numer) * U256::from(WAD) / U256::from(denom);
        u256_to_wad(v, "from_ratio")
    }

    /// Nearest representable value to an f64. Intended for configuration
    /// and test fixtures, not protocol math.
    pub fn from_f64(x: f64) -> Result<Wad, WadError> {
        if !x.is_finite() || x < 0.0 {
            return Err(WadError::Overflow("from_f64"));
        }
        let scaled = x * WAD as f64;
        if scaled >= u128::MAX as f64 {
            return Err(WadError::Overflow("from_f64"));
        }
        Ok(Wad(scaled.round() as u128))
    }

    /// Lossy conversion for analytics.
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / WAD as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, rhs: Wad) -> Result<Wad, WadError> {
        self.0
            .checked_add(rhs.0)
            .map(Wad)
            .ok_or(WadError::Overflow("add"))
    }

    pub fn checked_sub(self, rhs: Wad) -> Result<Wad, WadError> {
        self.0
            .checked_sub(rhs.0)
            .map(Wad)
            .ok_or(WadError::Underflow(self, rhs))
    }

    pub fn saturating_sub(self, rhs: Wad) -> Wad {
        Wad(self.0.saturating_sub(rhs.0))
    }

    /// `self * rhs / 10^18`, truncated toward zero.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Wad) -> Result<Wad, WadError> {
        let v = U256::from(self.0) * U256::from(rhs.0) / U256::from(WAD);
        u256_to_wad(v, "mul")
    }

    /// `self * 10^18 / rhs`, truncated toward zero.
    #[allow(clippy::should_implement_trait)]
    pub fn div(self, rhs: Wad) -> Result<Wad, WadError> {
        if rhs.is_zero() {
            return Err(WadError::DivisionByZero);
        }
        let v = U256::from(self.0) * U256::from(WAD) / U256::from(rhs.0);
        u256_to_wad(v, "div")
    }

    /// `self * numer / denom` on raw integers, truncated. One rounding step
    /// instead of two.
    pub fn mul_div(self, numer: u128, denom: u128) -> Result<Wad, WadError> {
        if denom == 0 {
            return Err(WadError::DivisionByZero);
        }
        let v = U256::from(self.0) * U256::from(numer) / U256::from(denom);
        u256_to_wad(v, "mul_div")
    }

    /// Scale by an integer count (e.g. a number of blocks).
    pub fn mul_int(self, n: u128) -> Result<Wad, WadError> {
        self.0
            .checked_mul(n)
            .map(Wad)
            .ok_or(WadError::Overflow("mul_int"))
    }

    /// Divide by an integer count, truncated.
    pub fn div_int(self, n: u128) -> Result<Wad, WadError> {
        if n == 0 {
            return Err(WadError::DivisionByZero);
        }
        Ok(Wad(self.0 / n))
    }

    pub fn min(self, rhs: Wad) -> Wad {
        if self <= rhs {
            self
        } else {
            rhs
        }
    }

    pub fn max(self, rhs: Wad) -> Wad {
        if self >= rhs {
            self
        } else {
            rhs
        }
    }

    pub fn to_signed(self) -> Result<SignedWad, WadError> {
        if self.0 > i128::MAX as u128 {
            return Err(WadError::Overflow("to_signed"));
        }
        Ok(SignedWad(self.0 as i128))
    }
}

fn u256_to_wad(v: U256, op: &'static str) -> Result<Wad, WadError> {
    if v > U256::from(u128::MAX) {
        Err(WadError::Overflow(op))
    } else {
        Ok(Wad(v.as_u128()))
    }
}

impl Add for Wad {
    type Output = Wad;
    /// Panics on overflow; use `checked_add` where inputs are untrusted.
    fn add(self, rhs: Wad) -> Wad {
        Wad(self.0.checked_add(rhs.0).expect("wad add overflow"))
    }
}

impl AddAssign for Wad {
    fn add_assign(&mut self, rhs: Wad) {
        *self = *self + rhs;
    }
}

impl Sub for Wad {
    type Output = Wad;
    fn sub(self, rhs: Wad) -> Wad {
        Wad(self.0.checked_sub(rhs.0).expect("wad sub underflow"))
    }
}

impl SubAssign for Wad {
    fn sub_assign(&mut self, rhs: Wad) {
        *self = *self - rhs;
    }
}

impl Sum for Wad {
    fn sum<I: Iterator<Item = Wad>>(iter: I) -> Wad {
        iter.fold(Wad::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Wad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / WAD;
        let frac = self.0 % WAD;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let s = format!("{frac:018}");
            write!(f, "{whole}.{}", s.trim_end_matches('0'))
        }
    }
}

impl FromStr for Wad {
    type Err = WadError;

    /// Exact decimal parse, up to 18 fractional digits.
    fn from_str(s: &str) -> Result<Wad, WadError> {
        let bad = || WadError::Parse(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if frac.len() > 18 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: u128 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| bad())?
        };
        let mut frac_raw: u128 = 0;
        if !frac.is_empty() {
            frac_raw = frac.parse().map_err(|_| bad())?;
            frac_raw *= 10u128.pow(18 - frac.len() as u32);
        }
        whole
            .checked_mul(WAD)
            .and_then(|w| w.checked_add(frac_raw))
            .map(Wad)
            .ok_or(WadError::Overflow("parse"))
    }
}

// Serialized as an exact decimal string; numbers are accepted on input for
// configuration convenience (rounded to the nearest representable value).
impl Serialize for Wad {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Wad {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Wad, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Wad;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a decimal string or non-negative number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Wad, E> {
                v.parse().map_err(E::custom)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Wad, E> {
                Wad::from_f64(v).map_err(E::custom)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Wad, E> {
                Ok(Wad::from_int(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Wad, E> {
                if v < 0 {
                    Err(E::custom("negative value for unsigned quantity"))
                } else {
                    Ok(Wad::from_int(v as u64))
                }
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// Signed quantity scaled by 10^18. Same truncation-toward-zero rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SignedWad(pub i128);

impl SignedWad {
    pub const ZERO: SignedWad = SignedWad(0);

    pub fn from_wad(w: Wad) -> Result<SignedWad, WadError> {
        w.to_signed()
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / WAD as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, rhs: SignedWad) -> Result<SignedWad, WadError> {
        self.0
            .checked_add(rhs.0)
            .map(SignedWad)
            .ok_or(WadError::Overflow("signed add"))
    }

    pub fn checked_sub(self, rhs: SignedWad) -> Result<SignedWad, WadError> {
        self.0
            .checked_sub(rhs.0)
            .map(SignedWad)
            .ok_or(WadError::Overflow("signed sub"))
    }

    /// Non-negative part as an unsigned Wad; negative clamps to zero.
    pub fn clamp_positive(self) -> Wad {
        if self.0 <= 0 {
            Wad::ZERO
        } else {
            Wad(self.0 as u128)
        }
    }
}

impl Add for SignedWad {
    type Output = SignedWad;
    fn add(self, rhs: SignedWad) -> SignedWad {
        SignedWad(self.0.checked_add(rhs.0).expect("signed wad add overflow"))
    }
}

impl Sub for SignedWad {
    type Output = SignedWad;
    fn sub(self, rhs: SignedWad) -> SignedWad {
        SignedWad(self.0.checked_sub(rhs.0).expect("signed wad sub overflow"))
    }
}

impl Neg for SignedWad {
    type Output = SignedWad;
    fn neg(self) -> SignedWad {
        SignedWad(-self.0)
    }
}

impl fmt::Display for SignedWad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 < 0 {
            write!(f, "-{}", Wad(self.0.unsigned_abs()))
        } else {
            write!(f, "{}", Wad(self.0 as u128))
        }
    }
}

impl Serialize for SignedWad {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SignedWad {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<SignedWad, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = SignedWad;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a decimal string or number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<SignedWad, E> {
                let (neg, body) = match v.strip_prefix('-') {
                    Some(rest) => (true, rest),
                    None => (false, v),
                };
                let w: Wad = body.parse().map_err(E::custom)?;
                let signed = w.to_signed().map_err(E::custom)?;
                Ok(if neg { -signed } else { signed })
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<SignedWad, E> {
                let w = Wad::from_f64(v.abs()).map_err(E::custom)?;
                let signed = w.to_signed().map_err(E::custom)?;
                Ok(if v < 0.0 { -signed } else { signed })
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SignedWad, E> {
                Ok(SignedWad(v as i128 * WAD as i128))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SignedWad, E> {
                Ok(SignedWad(v as i128 * WAD as i128))
            }
        }
        deserializer.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mul_identity_and_zero() {
        let x = Wad(1_234_567_890_123_456_789);
        assert_eq!(x.mul(Wad::ONE).unwrap(), x);
        assert_eq!(x.mul(Wad::ZERO).unwrap(), Wad::ZERO);
        assert_eq!(Wad::ONE.mul(Wad::ONE).unwrap(), Wad::ONE);
    }

    #[test]
    fn mul_exact_rational() {
        // 2.5 * 0.4 = 1.0 exactly
        let a = Wad(2_500_000_000_000_000_000);
        let b = Wad(400_000_000_000_000_000);
        assert_eq!(a.mul(b).unwrap(), Wad::ONE);
    }

    #[test]
    fn mul_truncates_toward_zero() {
        // (1e-18) * (1e-18) truncates to 0
        assert_eq!(Wad(1).mul(Wad(1)).unwrap(), Wad::ZERO);
        // 1/3 * 3 = 0.999999999999999999 (one ulp short, never over)
        let third = Wad::ONE.div(Wad::from_int(3)).unwrap();
        let back = third.mul(Wad::from_int(3)).unwrap();
        assert_eq!(back, Wad(WAD - 1));
    }

    #[test]
    fn overflow_is_error() {
        let big = Wad(u128::MAX);
        assert!(matches!(big.mul(big), Err(WadError::Overflow(_))));
        assert!(matches!(
            big.checked_add(Wad(1)),
            Err(WadError::Overflow(_))
        ));
    }

    #[test]
    fn div_by_zero_is_error() {
        assert_eq!(Wad::ONE.div(Wad::ZERO), Err(WadError::DivisionByZero));
    }

    #[test]
    fn signed_clamp() {
        assert_eq!(SignedWad(-5).clamp_positive(), Wad::ZERO);
        assert_eq!(SignedWad(5).clamp_positive(), Wad(5));
    }

    #[test]
    fn display_trims_zeros() {
        assert_eq!(Wad::from_int(3).to_string(), "3");
        assert_eq!(Wad(1_500_000_000_000_000_000).to_string(), "1.5");
        assert_eq!(SignedWad(-1_500_000_000_000_000_000).to_string(), "-1.5");
    }

    #[test]
    fn parse_exact_decimals() {
        assert_eq!("3".parse::<Wad>().unwrap(), Wad::from_int(3));
        assert_eq!("1.5".parse::<Wad>().unwrap(), Wad(1_500_000_000_000_000_000));
        assert_eq!("0.000000000000000001".parse::<Wad>().unwrap(), Wad(1));
        assert_eq!(".5".parse::<Wad>().unwrap(), Wad(WAD / 2));
        assert!("1.2.3".parse::<Wad>().is_err());
        assert!("abc".parse::<Wad>().is_err());
        assert!("1.0000000000000000001".parse::<Wad>().is_err());
    }

    #[test]
    fn serde_string_roundtrip() {
        let w = Wad(1_234_567_890_123_456_789);
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(json, "\"1.234567890123456789\"");
        assert_eq!(serde_json::from_str::<Wad>(&json).unwrap(), w);
        // numbers accepted on input
        assert_eq!(serde_json::from_str::<Wad>("2.5").unwrap(), Wad(2_500_000_000_000_000_000));
        assert_eq!(serde_json::from_str::<Wad>("7").unwrap(), Wad::from_int(7));
        let s = SignedWad(-42_000_000_000_000_000);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SignedWad>(&json).unwrap(), s);
        assert_eq!(serde_json::from_str::<SignedWad>("-3").unwrap(), SignedWad(-3 * WAD as i128));
    }

    proptest! {
        #[test]
        fn prop_mul_one_is_identity(raw in 0u128..=u128::MAX / 2) {
            let x = Wad(raw);
            prop_assert_eq!(x.mul(Wad::ONE).unwrap(), x);
            prop_assert_eq!(x.mul(Wad::ZERO).unwrap(), Wad::ZERO);
        }

        #[test]
        fn prop_mul_within_one_ulp(a in 0u128..u128::MAX >> 64, b in 0u128..u128::MAX >> 64) {
            // exact rational product vs truncated fixed point: error < 1 ulp
            let exact = U256::from(a) * U256::from(b);
            let got = U256::from(Wad(a).mul(Wad(b)).unwrap().0) * U256::from(WAD);
            prop_assert!(got <= exact);
            prop_assert!(exact - got < U256::from(WAD));
        }

        #[test]
        fn prop_add_sub_roundtrip(a in 0u128..u128::MAX / 2, b in 0u128..u128::MAX / 2) {
            let x = Wad(a);
            let y = Wad(b);
            prop_assert_eq!((x + y) - y, x);
        }
    }
}
