//! Kinked utilization-based interest rate model.
//!
//! The borrow rate is piecewise linear in utilization U: slope `slope_low`
//! up to the kink, `slope_high` above it, continuous at the kink. The
//! supply rate is the borrow rate scaled by utilization and by one minus
//! the reserve factor, so depositor income never exceeds borrower interest.
//! Parameters can change at scheduled blocks (a regime schedule), mirroring
//! how deployed rate models get re-voted over time.

use crate::wad::{Wad, WadError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InterestError {
    #[error("utilization {0} outside [0, 1]")]
    UtilizationOutOfRange(Wad),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Wad(#[from] WadError),
}

/// Annualized rate-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterestParams {
    /// Base borrow rate at zero utilization (annual).
    pub base_rate: Wad,
    /// Slope below the kink.
    pub slope_low: Wad,
    /// Slope above the kink; must be >= slope_low.
    pub slope_high: Wad,
    /// Kink utilization, in (0, 1].
    pub kink: Wad,
    /// Fraction of borrower interest kept as reserves, in [0, 1).
    pub reserve_factor: Wad,
}

impl InterestParams {
    pub fn validate(&self) -> Result<(), InterestError> {
        if self.slope_high < self.slope_low {
            return Err(InterestError::InvalidParams(
                "slope_high must be >= slope_low".into(),
            ));
        }
        if self.kink.is_zero() || self.kink > Wad::ONE {
            return Err(InterestError::InvalidParams("kink must be in (0, 1]".into()));
        }
        if self.reserve_factor >= Wad::ONE {
            return Err(InterestError::InvalidParams(
                "reserve_factor must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

impl Default for InterestParams {
    /// The fixture parameter set used throughout tests and examples:
    /// base 2%, slopes 20% / 200%, kink at 80% utilization, reserve
    /// factor 10%.
    fn default() -> Self {
        InterestParams {
            base_rate: Wad(20_000_000_000_000_000),
            slope_low: Wad(200_000_000_000_000_000),
            slope_high: Wad(2_000_000_000_000_000_000),
            kink: Wad(800_000_000_000_000_000),
            reserve_factor: Wad(100_000_000_000_000_000),
        }
    }
}

/// Annual borrow rate at utilization `u`.
pub fn borrow_rate(params: &InterestParams, u: Wad) -> Result<Wad, InterestError> {
    if u > Wad::ONE {
        return Err(InterestError::UtilizationOutOfRange(u));
    }
    if u <= params.kink {
        Ok(params.base_rate.checked_add(params.slope_low.mul(u)?)?)
    } else {
        let at_kink = params.slope_low.mul(params.kink)?;
        let excess = params.slope_high.mul(u - params.kink)?;
        Ok(params
            .base_rate
            .checked_add(at_kink)?
            .checked_add(excess)?)
    }
}

/// Annual supply rate at utilization `u`: borrow rate, scaled down by the
/// reserve factor and by utilization.
pub fn supply_rate(params: &InterestParams, u: Wad) -> Result<Wad, InterestError> {
    let ib = borrow_rate(params, u)?;
    let pass_through = Wad::ONE - params.reserve_factor;
    Ok(ib.mul(pass_through)?.mul(u)?)
}

/// Time-scheduled parameter regimes. The first entry must activate at
/// block 0 so every block is covered; activation blocks strictly increase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    entries: Vec<(u64, InterestParams)>,
}

impl RegimeSchedule {
    pub fn new(entries: Vec<(u64, InterestParams)>) -> Result<RegimeSchedule, InterestError> {
        if entries.is_empty() {
            return Err(InterestError::InvalidSchedule("no entries".into()));
        }
        if entries[0].0 != 0 {
            return Err(InterestError::InvalidSchedule(
                "first entry must activate at block 0".into(),
            ));
        }
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(InterestError::InvalidSchedule(
                    "activation blocks must strictly increase".into(),
                ));
            }
        }
        for (_, p) in &entries {
            p.validate()?;
        }
        Ok(RegimeSchedule { entries })
    }

    pub fn single(params: InterestParams) -> RegimeSchedule {
        RegimeSchedule {
            entries: vec![(0, params)],
        }
    }

    /// Params of the latest regime activated at or before `block`.
    /// A regime takes effect at block start, before accrual.
    pub fn active_params(&self, block: u64) -> &InterestParams {
        let idx = self
            .entries
            .partition_point(|(activation, _)| *activation <= block);
        &self.entries[idx - 1].1
    }

    pub fn entries(&self) -> &[(u64, InterestParams)] {
        &self.entries
    }
}
