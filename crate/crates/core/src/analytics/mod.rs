//! Measurement procedures over event ledgers.
//!
//! Everything here is a pure function of the ledger (plus token metadata,
//! category labels and the block clock); nothing reaches back into live
//! simulation state. Debt trajectories are replayed per (address, token)
//! from borrow and repay flows, clamped at zero so that a final repayment
//! covering accrued interest still closes the cycle.

pub mod regression;

use crate::ledger::{AddressId, AgentCategory, BlockClock, Event, EventKind, Ledger, TokenId, TokenInfo};
use crate::wad::Wad;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("ledger has no relevant events")]
    EmptyLedger,
    #[error("liquidation events are unpaired at seq {0}")]
    UnpairedLiquidation(u64),
    #[error("address {0} has no category label")]
    UncategorizedAddress(AddressId),
    #[error("regressor matrix is rank deficient")]
    RankDeficient,
    #[error("IRLS did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error("perfect separation detected; coefficients withheld")]
    PerfectSeparation,
    #[error("insufficient history: need {need} days, have {have}")]
    InsufficientHistory { need: usize, have: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One complete borrow-repayment cycle: debt rises from zero and returns
/// to exactly zero. May span several draws and repayments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoan {
    pub address: AddressId,
    pub token: TokenId,
    pub open_block: u64,
    pub close_block: u64,
    pub draw_events: Vec<u64>,
    pub repay_events: Vec<u64>,
    pub peak_debt_usd: Wad,
    pub duration_days: f64,
    /// Whether any repayment in the cycle came from a liquidator.
    pub liquidated: bool,
}

/// A loan that was still open at the end of the ledger. Excluded from
/// closed-loan statistics but counted in liquidation shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoan {
    pub address: AddressId,
    pub token: TokenId,
    pub open_block: u64,
    pub draw_events: Vec<u64>,
    pub peak_debt_usd: Wad,
    pub drawn_usd: Wad,
    pub liquidated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanBook {
    pub closed: Vec<ClosedLoan>,
    pub open: Vec<OpenLoan>,
}

/// Replay debt per (address, token) and cut it into maximal positive
/// intervals. `Borrow` raises debt; `Repay` and `LiquidateRepay` lower it.
pub fn reconstruct_loans(ledger: &Ledger, clock: &BlockClock) -> LoanBook {
    struct Track {
        debt: Wad,
        open_block: u64,
        draws: Vec<u64>,
        repays: Vec<u64>,
        peak_usd: Wad,
        drawn_usd: Wad,
        liquidated: bool,
    }
    let mut tracks: BTreeMap<(AddressId, TokenId), Track> = BTreeMap::new();
    let mut closed = Vec::new();
    for ev in ledger.events() {
        let lowers = matches!(ev.kind, EventKind::Repay | EventKind::LiquidateRepay);
        let raises = ev.kind == EventKind::Borrow;
        if !raises && !lowers {
            continue;
        }
        let key = (ev.address, ev.token);
        if raises {
            let track = tracks.entry(key).or_insert_with(|| Track {
                debt: Wad::ZERO,
                open_block: ev.block,
                draws: Vec::new(),
                repays: Vec::new(),
                peak_usd: Wad::ZERO,
                drawn_usd: Wad::ZERO,
                liquidated: false,
            });
            if track.debt.is_zero() {
                track.open_block = ev.block;
            }
            track.debt += ev.amount;
            track.draws.push(ev.seq);
            track.drawn_usd += ev.usd_value;
            // mark debt to the price implied by this event
            if !ev.amount.is_zero() {
                let usd = track
                    .debt
                    .mul_div(ev.usd_value.0, ev.amount.0)
                    .unwrap_or(Wad::ZERO);
                track.peak_usd = track.peak_usd.max(usd);
            }
        } else if let Some(track) = tracks.get_mut(&key) {
            if track.debt.is_zero() {
                continue; // repayment with no tracked debt: nothing to close
            }
            track.repays.push(ev.seq);
            if ev.kind == EventKind::LiquidateRepay {
                track.liquidated = true;
            }
            // clamp at zero: interest makes final repayments exceed the
            // sum of draws
            track.debt = track.debt.saturating_sub(ev.amount);
            if track.debt.is_zero() {
                let t = tracks.remove(&key).unwrap();
                let duration_blocks = ev.block - t.open_block;
                closed.push(ClosedLoan {
                    address: key.0,
                    token: key.1,
                    open_block: t.open_block,
                    close_block: ev.block,
                    draw_events: t.draws,
                    repay_events: t.repays,
                    peak_debt_usd: t.peak_usd,
                    duration_days: duration_blocks as f64 * clock.seconds_per_block as f64
                        / 86_400.0,
                    liquidated: t.liquidated,
                });
            }
        }
    }
    let open = tracks
        .into_iter()
        .map(|((address, token), t)| OpenLoan {
            address,
            token,
            open_block: t.open_block,
            draw_events: t.draws,
            peak_debt_usd: t.peak_usd,
            drawn_usd: t.drawn_usd,
            liquidated: t.liquidated,
        })
        .collect();
    LoanBook { closed, open }
}

/// Closed loans only, in ledger order.
pub fn reconstruct_closed_loans(ledger: &Ledger, clock: &BlockClock) -> Vec<ClosedLoan> {
    reconstruct_loans(ledger, clock).closed
}

/// A day on which an address drew a token loan, with redeposit flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanDay {
    pub address: AddressId,
    pub token: TokenId,
    pub day: u64,
    pub total_drawn_usd: Wad,
    pub redeposited_same_day: bool,
    pub redeposited_within_1d: bool,
}

/// Group borrow events into (address, token, day) buckets and flag those
/// where the borrower deposited the same token back into the pool on the
/// same UTC day (after the draw) or within `window_seconds` of any draw.
pub fn detect_redeposits(
    ledger: &Ledger,
    clock: &BlockClock,
    window_seconds: u64,
) -> Vec<LoanDay> {
    // deposits indexed by (address, token), in seq order
    let mut deposits: BTreeMap<(AddressId, TokenId), Vec<&Event>> = BTreeMap::new();
    for ev in ledger.events() {
        if ev.kind == EventKind::Deposit {
            deposits.entry((ev.address, ev.token)).or_default().push(ev);
        }
    }
    let mut days: BTreeMap<(AddressId, TokenId, u64), LoanDay> = BTreeMap::new();
    for ev in ledger.events() {
        if ev.kind != EventKind::Borrow {
            continue;
        }
        let day = clock.day_of_block(ev.block);
        let entry = days
            .entry((ev.address, ev.token, day))
            .or_insert_with(|| LoanDay {
                address: ev.address,
                token: ev.token,
                day,
                total_drawn_usd: Wad::ZERO,
                redeposited_same_day: false,
                redeposited_within_1d: false,
            });
        entry.total_drawn_usd += ev.usd_value;
        if entry.redeposited_same_day && entry.redeposited_within_1d {
            continue;
        }
        if let Some(deps) = deposits.get(&(ev.address, ev.token)) {
            for dep in deps {
                // only deposits after the draw count as redeposits
                if dep.seq <= ev.seq {
                    continue;
                }
                if clock.day_of_block(dep.block) == day {
                    entry.redeposited_same_day = true;
                }
                if (dep.block - ev.block) * clock.seconds_per_block <= window_seconds {
                    entry.redeposited_within_1d = true;
                }
            }
        }
    }
    days.into_values().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeSide {
    Deposits,
    Loans,
}

/// Share of total USD volume owned by the top-k addresses.
pub fn concentration(ledger: &Ledger, side: VolumeSide, k: usize) -> Result<f64, AnalyticsError> {
    if k == 0 {
        return Err(AnalyticsError::InvalidArgument("k must be at least 1".into()));
    }
    let kind = match side {
        VolumeSide::Deposits => EventKind::Deposit,
        VolumeSide::Loans => EventKind::Borrow,
    };
    let mut volumes: BTreeMap<AddressId, Wad> = BTreeMap::new();
    for ev in ledger.events() {
        if ev.kind == kind {
            *volumes.entry(ev.address).or_insert(Wad::ZERO) += ev.usd_value;
        }
    }
    if volumes.is_empty() {
        return Err(AnalyticsError::EmptyLedger);
    }
    let mut ranked: Vec<(AddressId, Wad)> = volumes.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: f64 = ranked.iter().map(|(_, v)| v.to_f64()).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let top: f64 = ranked.iter().take(k).map(|(_, v)| v.to_f64()).sum();
    Ok(top / total)
}

/// Addresses whose entire ledger activity is exactly one stablecoin
/// deposit worth at most 3 USD.
pub fn micro_filter(ledger: &Ledger, tokens: &[TokenInfo]) -> BTreeSet<AddressId> {
    #[derive(Default)]
    struct Activity {
        events: u64,
        micro_deposit: bool,
    }
    let threshold = Wad::from_int(3);
    let mut acts: BTreeMap<AddressId, Activity> = BTreeMap::new();
    for ev in ledger.events() {
        let act = acts.entry(ev.address).or_default();
        act.events += 1;
        if ev.kind == EventKind::Deposit
            && ev.usd_value <= threshold
            && tokens
                .get(ev.token.0 as usize)
                .map(|t| t.is_stablecoin)
                .unwrap_or(false)
        {
            act.micro_deposit = true;
        }
    }
    acts.into_iter()
        .filter(|(_, a)| a.events == 1 && a.micro_deposit)
        .map(|(addr, _)| addr)
        .collect()
}

/// Node of the stablecoin flow network: an address category or one of the
/// two protocol venues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowNode {
    Category(AgentCategory),
    LendingPool,
    Amm,
}

impl FlowNode {
    pub fn name(&self) -> String {
        match self {
            FlowNode::Category(c) => c.name().to_string(),
            FlowNode::LendingPool => "LendingPool".to_string(),
            FlowNode::Amm => "Amm".to_string(),
        }
    }
}

/// Directed stablecoin flows between categories and the protocol venues,
/// in USD.
pub fn flow_network(
    ledger: &Ledger,
    categories: &BTreeMap<AddressId, AgentCategory>,
    tokens: &[TokenInfo],
) -> Result<BTreeMap<(FlowNode, FlowNode), Wad>, AnalyticsError> {
    let mut edges: BTreeMap<(FlowNode, FlowNode), Wad> = BTreeMap::new();
    let mut add = |from: FlowNode, to: FlowNode, usd: Wad| {
        *edges.entry((from, to)).or_insert(Wad::ZERO) += usd;
    };
    let stable = |t: TokenId| {
        tokens
            .get(t.0 as usize)
            .map(|ti| ti.is_stablecoin)
            .unwrap_or(false)
    };
    for ev in ledger.events() {
        if !stable(ev.token) {
            continue;
        }
        let cat = |addr: AddressId| {
            categories
                .get(&addr)
                .copied()
                .map(FlowNode::Category)
                .ok_or(AnalyticsError::UncategorizedAddress(addr))
        };
        match ev.kind {
            EventKind::Deposit => add(cat(ev.address)?, FlowNode::LendingPool, ev.usd_value),
            EventKind::Withdraw => add(FlowNode::LendingPool, cat(ev.address)?, ev.usd_value),
            EventKind::Borrow => add(FlowNode::LendingPool, cat(ev.address)?, ev.usd_value),
            EventKind::Repay => add(cat(ev.address)?, FlowNode::LendingPool, ev.usd_value),
            EventKind::LiquidateRepay => {
                // the liquidator (counterparty) repays on the borrower's
                // behalf
                let liq = ev
                    .counterparty
                    .ok_or(AnalyticsError::UnpairedLiquidation(ev.seq))?;
                add(cat(liq)?, FlowNode::LendingPool, ev.usd_value);
            }
            EventKind::Swap => add(cat(ev.address)?, FlowNode::Amm, ev.usd_value),
            // seizures move cTokens, claims move the reward token
            EventKind::LiquidateSeize | EventKind::ClaimReward | EventKind::RewardAccrue => {}
        }
    }
    Ok(edges)
}

/// Token-by-token liquidation matrix: cell (i, j) is the USD of token-i
/// debt repaid by liquidators who seized token-j collateral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidationMatrix {
    pub n_tokens: usize,
    /// Row-major: `usd[repay_token][seize_token]`.
    pub usd: Vec<Vec<Wad>>,
}

impl LiquidationMatrix {
    pub fn row_sums(&self) -> Vec<Wad> {
        self.usd.iter().map(|row| row.iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<Wad> {
        let mut sums = vec![Wad::ZERO; self.n_tokens];
        for row in &self.usd {
            for (j, v) in row.iter().enumerate() {
                sums[j] += *v;
            }
        }
        sums
    }

    pub fn total(&self) -> Wad {
        self.row_sums().into_iter().sum()
    }
}

/// Pair adjacent LiquidateRepay / LiquidateSeize events and accumulate the
/// repaid USD per (loan token, collateral token).
pub fn liquidation_matrix(
    ledger: &Ledger,
    n_tokens: usize,
) -> Result<LiquidationMatrix, AnalyticsError> {
    let mut usd = vec![vec![Wad::ZERO; n_tokens]; n_tokens];
    let events = ledger.events();
    let mut i = 0;
    while i < events.len() {
        let ev = &events[i];
        match ev.kind {
            EventKind::LiquidateRepay => {
                let seize = events.get(i + 1).filter(|s| {
                    s.kind == EventKind::LiquidateSeize
                        && s.block == ev.block
                        && s.address == ev.address
                        && s.counterparty == ev.counterparty
                });
                let Some(seize) = seize else {
                    return Err(AnalyticsError::UnpairedLiquidation(ev.seq));
                };
                let (r, s) = (ev.token.0 as usize, seize.token.0 as usize);
                if r >= n_tokens || s >= n_tokens {
                    return Err(AnalyticsError::InvalidArgument(format!(
                        "token index out of range at seq {}",
                        ev.seq
                    )));
                }
                usd[r][s] += ev.usd_value;
                i += 2;
            }
            EventKind::LiquidateSeize => {
                return Err(AnalyticsError::UnpairedLiquidation(ev.seq));
            }
            _ => i += 1,
        }
    }
    Ok(LiquidationMatrix { n_tokens, usd })
}

/// Distribution summary of a daily series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub n_days: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl SeriesStats {
    pub fn from_values(mut values: Vec<f64>) -> SeriesStats {
        if values.is_empty() {
            return SeriesStats {
                n_days: 0,
                mean: 0.0,
                sd: 0.0,
                min: 0.0,
                p5: 0.0,
                p50: 0.0,
                p95: 0.0,
                max: 0.0,
            };
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let pct = |q: f64| -> f64 {
            // nearest-rank on the sorted sample
            let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
            values[idx]
        };
        SeriesStats {
            n_days: n,
            mean,
            sd: var.sqrt(),
            min: values[0],
            p5: pct(0.05),
            p50: pct(0.50),
            p95: pct(0.95),
            max: values[n - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLoanStats {
    pub category: AgentCategory,
    pub closed_loans: usize,
    pub avg_value_usd: f64,
    pub avg_duration_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRedepositStats {
    pub token: TokenId,
    pub loan_days: usize,
    pub same_day_share: f64,
    pub within_1d_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLiquidationStats {
    pub token: TokenId,
    pub loans: usize,
    pub loans_liquidated: usize,
    pub loan_value_usd: f64,
    pub liquidated_usd: f64,
    pub share_liquidated_by_count: f64,
    pub share_liquidated_by_usd: f64,
}

/// The summary report bundle: daily net-deposit stats per token, loan
/// stats per category, redeposit shares and liquidation shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTables {
    pub net_deposits: Vec<(TokenId, SeriesStats)>,
    pub loans_by_category: Vec<CategoryLoanStats>,
    pub redeposits_by_token: Vec<TokenRedepositStats>,
    pub liquidations_by_token: Vec<TokenLiquidationStats>,
}

pub fn summary_tables(
    ledger: &Ledger,
    clock: &BlockClock,
    tokens: &[TokenInfo],
    categories: &BTreeMap<AddressId, AgentCategory>,
) -> SummaryTables {
    let n_tokens = tokens.len();
    // daily net deposits per token, in USD
    let mut daily: BTreeMap<(TokenId, u64), f64> = BTreeMap::new();
    for ev in ledger.events() {
        let day = clock.day_of_block(ev.block);
        match ev.kind {
            EventKind::Deposit => {
                *daily.entry((ev.token, day)).or_insert(0.0) += ev.usd_value.to_f64();
            }
            EventKind::Withdraw => {
                *daily.entry((ev.token, day)).or_insert(0.0) -= ev.usd_value.to_f64();
            }
            _ => {}
        }
    }
    let mut net_deposits = Vec::with_capacity(n_tokens);
    for idx in 0..n_tokens {
        let token = TokenId(idx as u32);
        let values: Vec<f64> = daily
            .range((token, 0)..=(token, u64::MAX))
            .map(|(_, v)| *v)
            .collect();
        net_deposits.push((token, SeriesStats::from_values(values)));
    }

    // closed-loan stats per category
    let book = reconstruct_loans(ledger, clock);
    let mut per_cat: BTreeMap<AgentCategory, (usize, f64, f64)> = BTreeMap::new();
    for loan in &book.closed {
        let cat = categories
            .get(&loan.address)
            .copied()
            .unwrap_or(AgentCategory::SmallAddress);
        let entry = per_cat.entry(cat).or_insert((0, 0.0, 0.0));
        entry.0 += 1;
        entry.1 += loan.peak_debt_usd.to_f64();
        entry.2 += loan.duration_days;
    }
    let loans_by_category = per_cat
        .into_iter()
        .map(|(category, (n, value, days))| CategoryLoanStats {
            category,
            closed_loans: n,
            avg_value_usd: value / n.max(1) as f64,
            avg_duration_days: days / n.max(1) as f64,
        })
        .collect();

    // redeposit shares per token
    let loan_days = detect_redeposits(ledger, clock, 86_400);
    let mut redeposits_by_token = Vec::with_capacity(n_tokens);
    for idx in 0..n_tokens {
        let token = TokenId(idx as u32);
        let rows: Vec<&LoanDay> = loan_days.iter().filter(|d| d.token == token).collect();
        let n = rows.len();
        let same = rows.iter().filter(|d| d.redeposited_same_day).count();
        let within = rows.iter().filter(|d| d.redeposited_within_1d).count();
        redeposits_by_token.push(TokenRedepositStats {
            token,
            loan_days: n,
            same_day_share: if n == 0 { 0.0 } else { same as f64 / n as f64 },
            within_1d_share: if n == 0 { 0.0 } else { within as f64 / n as f64 },
        });
    }

    // liquidation shares per token over all loans (closed and open)
    let mut liq = Vec::with_capacity(n_tokens);
    for idx in 0..n_tokens {
        let token = TokenId(idx as u32);
        let mut loans = 0usize;
        let mut liquidated = 0usize;
        let mut value = 0.0;
        for l in book.closed.iter().filter(|l| l.token == token) {
            loans += 1;
            liquidated += l.liquidated as usize;
            value += l.peak_debt_usd.to_f64();
        }
        for l in book.open.iter().filter(|l| l.token == token) {
            loans += 1;
            liquidated += l.liquidated as usize;
            value += l.peak_debt_usd.to_f64();
        }
        let liq_usd: f64 = ledger
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::LiquidateRepay && e.token == token)
            .map(|e| e.usd_value.to_f64())
            .sum();
        liq.push(TokenLiquidationStats {
            token,
            loans,
            loans_liquidated: liquidated,
            loan_value_usd: value,
            liquidated_usd: liq_usd,
            share_liquidated_by_count: if loans == 0 {
                0.0
            } else {
                liquidated as f64 / loans as f64
            },
            share_liquidated_by_usd: if value == 0.0 { 0.0 } else { liq_usd / value },
        });
    }

    SummaryTables {
        net_deposits,
        loans_by_category,
        redeposits_by_token,
        liquidations_by_token: liq,
    }
}

/// Fit of a kinked two-segment rate curve to (utilization, rate) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct KinkFit {
    pub base_rate: f64,
    pub slope_low: f64,
    pub slope_high: f64,
    pub kink: f64,
    pub max_abs_residual: f64,
}

/// Recover (a, b, c, U*) from scatter samples by trying every observed
/// utilization as the kink and solving the continuity-constrained least
/// squares for each candidate.
pub fn fit_kinked_model(samples: &[(f64, f64)]) -> Result<KinkFit, AnalyticsError> {
    if samples.len() < 4 {
        return Err(AnalyticsError::InvalidArgument(
            "need at least 4 samples".into(),
        ));
    }
    let mut candidates: Vec<f64> = samples.iter().map(|(u, _)| *u).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();
    let mut best: Option<KinkFit> = None;
    for &kink in &candidates {
        // rate = a + b*min(u, kink) + c*max(u - kink, 0)
        let rows: Vec<[f64; 3]> = samples
            .iter()
            .map(|(u, _)| [1.0, u.min(kink), (u - kink).max(0.0)])
            .collect();
        let has_upper = samples.iter().any(|(u, _)| *u > kink);
        let cols = if has_upper { 3 } else { 2 };
        let Some(beta) = ols_small(&rows, samples, cols) else {
            continue;
        };
        let mut max_resid = 0.0f64;
        for (row, (_, y)) in rows.iter().zip(samples) {
            let fit: f64 = (0..cols).map(|j| beta[j] * row[j]).sum();
            max_resid = max_resid.max((fit - y).abs());
        }
        let candidate = KinkFit {
            base_rate: beta[0],
            slope_low: beta[1],
            slope_high: if cols == 3 { beta[2] } else { beta[1] },
            kink,
            max_abs_residual: max_resid,
        };
        if best
            .as_ref()
            .map(|b| candidate.max_abs_residual < b.max_abs_residual)
            .unwrap_or(true)
        {
            best = Some(candidate);
        }
    }
    best.ok_or(AnalyticsError::RankDeficient)
}

/// Tiny dense OLS used by the kink fitter.
#[allow(clippy::needless_range_loop)] // Gauss-Jordan works on row pairs
fn ols_small(rows: &[[f64; 3]], samples: &[(f64, f64)], cols: usize) -> Option<Vec<f64>> {
    let mut xtx = [[0.0f64; 3]; 3];
    let mut xty = [0.0f64; 3];
    for (row, (_, y)) in rows.iter().zip(samples) {
        for i in 0..cols {
            xty[i] += row[i] * y;
            for j in 0..cols {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    // Gauss-Jordan with partial pivoting
    let n = cols;
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = xtx[i][j];
        }
        a[i][n] = xty[i];
    }
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for j in 0..=n {
                    a[r][j] -= f * a[col][j];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n]).collect())
}
