//! Daily panel construction and the two regression estimators: OLS with
//! Newey-West (Bartlett kernel) standard errors for the net-deposit and
//! loan regressions, and an IRLS logistic fit with cluster-robust sandwich
//! errors for the redeposit model.
//!
//! All numerics here are f64; fixed point stays on the protocol side.

use super::AnalyticsError;
use crate::engine::{PoolSnapshotRow, PriceRow};
use crate::ledger::{AddressId, AgentCategory, BlockClock, EventKind, Ledger, TokenId};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Dependent side of the daily regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionSide {
    /// Daily net deposits (USD million) on lagged supply-side rates.
    NetDeposits,
    /// log(1 + daily loans drawn in USD million) on lagged borrow-side
    /// rates.
    Loans,
}

/// Named design matrix plus the dependent vector, daily frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    /// Row-major regressors, including the constant column.
    pub rows: Vec<Vec<f64>>,
    pub dependent: Vec<f64>,
    /// First day index represented (after lag/window trimming).
    pub first_day: u64,
}

/// Coefficients with a covariance estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Full covariance, row-major.
    pub covariance: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub se_method: String,
    pub r_squared: Option<f64>,
    pub pseudo_r_squared: Option<f64>,
    pub n_clusters: Option<usize>,
}

/// Assemble the daily design matrix for one pool.
///
/// Day buckets follow UTC midnight. Rates, the emission dummy and reward
/// APYs enter lagged one day; pool size and the market-price controls
/// (1-day return, 7-day return, trailing 30-day volatility of daily simple
/// returns, in percent) enter contemporaneously. The first 30 days are
/// consumed by the volatility window.
#[allow(clippy::too_many_arguments)]
pub fn build_features(
    ledger: &Ledger,
    snapshots: &[PoolSnapshotRow],
    prices: &[PriceRow],
    clock: &BlockClock,
    token: TokenId,
    market_token: TokenId,
    post_start_block: Option<u64>,
    side: RegressionSide,
) -> Result<FeatureMatrix, AnalyticsError> {
    // last snapshot of each day for this pool
    let mut day_snap: BTreeMap<u64, &PoolSnapshotRow> = BTreeMap::new();
    for row in snapshots.iter().filter(|r| r.token == token) {
        day_snap.insert(clock.day_of_block(row.block), row);
    }
    // last market price of each day
    let mut day_price: BTreeMap<u64, f64> = BTreeMap::new();
    for row in prices.iter().filter(|r| r.token == market_token) {
        day_price.insert(clock.day_of_block(row.block), row.price.to_f64());
    }
    let mut day_token_price: BTreeMap<u64, f64> = BTreeMap::new();
    for row in prices.iter().filter(|r| r.token == token) {
        day_token_price.insert(clock.day_of_block(row.block), row.price.to_f64());
    }
    let n_days = match day_snap.keys().max() {
        Some(&d) => d + 1,
        None => 0,
    };
    // the volatility window plus the one-day lag
    if n_days < 32 {
        return Err(AnalyticsError::InsufficientHistory {
            need: 32,
            have: n_days as usize,
        });
    }

    // daily flows from the ledger, in USD million
    let mut net_deposit = vec![0.0f64; n_days as usize];
    let mut loans_drawn = vec![0.0f64; n_days as usize];
    for ev in ledger.events() {
        if ev.token != token {
            continue;
        }
        let day = clock.day_of_block(ev.block) as usize;
        if day >= n_days as usize {
            continue;
        }
        let usd_m = ev.usd_value.to_f64() / 1e6;
        match ev.kind {
            EventKind::Deposit => net_deposit[day] += usd_m,
            EventKind::Withdraw => net_deposit[day] -= usd_m,
            EventKind::Borrow => loans_drawn[day] += usd_m,
            _ => {}
        }
    }

    // carry the last observed snapshot forward across empty days
    let mut rates = Vec::with_capacity(n_days as usize);
    let mut last: Option<&PoolSnapshotRow> = None;
    for d in 0..n_days {
        if let Some(s) = day_snap.get(&d) {
            last = Some(s);
        }
        rates.push(last);
    }
    let market: Vec<Option<f64>> = {
        let mut out = Vec::with_capacity(n_days as usize);
        let mut lastp = None;
        for d in 0..n_days {
            if let Some(p) = day_price.get(&d) {
                lastp = Some(*p);
            }
            out.push(lastp);
        }
        out
    };
    let post_day = post_start_block.map(|b| clock.day_of_block(b));

    let rate_name = match side {
        RegressionSide::NetDeposits => "SupplyRate",
        RegressionSide::Loans => "BorrowRate",
    };
    let reward_name = match side {
        RegressionSide::NetDeposits => "SupplyReward",
        RegressionSide::Loans => "BorrowReward",
    };
    let names = vec![
        "const".to_string(),
        "Post(t-1)".to_string(),
        format!("{rate_name}(t-1)"),
        format!("Post x {rate_name}(t-1)"),
        format!("{reward_name}(t-1)"),
        "log(PoolSize)".to_string(),
        "MarketReturn(1d)".to_string(),
        "MarketReturn(7d)".to_string(),
        "MarketVol(30d)".to_string(),
    ];
    let mut rows = Vec::new();
    let mut dependent = Vec::new();
    let mut first_day = None;
    for d in 31..n_days {
        let (Some(snap_lag), Some(snap_now)) = (rates[(d - 1) as usize], rates[d as usize]) else {
            continue;
        };
        let Some(p_now) = market[d as usize] else {
            continue;
        };
        let (Some(p_1), Some(p_7)) = (market[(d - 1) as usize], market[(d - 7) as usize]) else {
            continue;
        };
        // trailing 30 daily simple returns ending today
        let mut rets = Vec::with_capacity(30);
        let mut ok = true;
        for k in 0..30 {
            let (hi, lo) = (market[(d - k) as usize], market[(d - k - 1) as usize]);
            match (hi, lo) {
                (Some(h), Some(l)) if l > 0.0 => rets.push(h / l - 1.0),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let mean_r = rets.iter().sum::<f64>() / rets.len() as f64;
        let var_r =
            rets.iter().map(|r| (r - mean_r) * (r - mean_r)).sum::<f64>() / rets.len() as f64;
        let vol_pct = var_r.sqrt() * 100.0;

        let token_price_now = day_token_price
            .get(&d)
            .copied()
            .unwrap_or_else(|| day_token_price.values().last().copied().unwrap_or(0.0));
        let pool_usd_m = (snap_now.cash + snap_now.borrows)
            .saturating_sub(snap_now.reserves)
            .to_f64()
            * token_price_now
            / 1e6;
        if pool_usd_m <= 0.0 {
            continue;
        }
        let post_lag = match post_day {
            Some(pd) if d > pd => 1.0,
            _ => 0.0,
        };
        let (rate_lag, reward_lag) = match side {
            RegressionSide::NetDeposits => (
                snap_lag.supply_rate.to_f64(),
                snap_lag.supply_reward_apy.map(|w| w.to_f64()).unwrap_or(0.0),
            ),
            RegressionSide::Loans => (
                snap_lag.borrow_rate.to_f64(),
                snap_lag.borrow_reward_apy.map(|w| w.to_f64()).unwrap_or(0.0),
            ),
        };
        let y = match side {
            RegressionSide::NetDeposits => net_deposit[d as usize],
            RegressionSide::Loans => (1.0 + loans_drawn[d as usize].max(0.0)).ln(),
        };
        rows.push(vec![
            1.0,
            post_lag,
            rate_lag,
            post_lag * rate_lag,
            reward_lag,
            pool_usd_m.ln(),
            p_now / p_1 - 1.0,
            p_now / p_7 - 1.0,
            vol_pct,
        ]);
        dependent.push(y);
        first_day.get_or_insert(d);
    }
    // identically zero regressors (no emission, flat prices) carry no
    // information and would make the design singular
    let k = names.len();
    let keep: Vec<usize> = (0..k)
        .filter(|&j| j == 0 || rows.iter().any(|r| r[j] != 0.0))
        .collect();
    let names: Vec<String> = keep.iter().map(|&j| names[j].clone()).collect();
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    if rows.len() <= names.len() {
        return Err(AnalyticsError::InsufficientHistory {
            need: names.len() + 1,
            have: rows.len(),
        });
    }
    Ok(FeatureMatrix {
        names,
        rows,
        dependent,
        first_day: first_day.unwrap_or(0),
    })
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let k = rows[0].len();
    DMatrix::from_fn(n, k, |i, j| rows[i][j])
}

/// OLS with heteroskedasticity-and-autocorrelation-consistent standard
/// errors: Bartlett-kernel weights up to `lag`. Lag 0 reduces to HC0.
pub fn ols_newey_west(
    features: &FeatureMatrix,
    lag: usize,
) -> Result<RegressionResult, AnalyticsError> {
    let n = features.rows.len();
    let k = features.names.len();
    if n <= k {
        return Err(AnalyticsError::InsufficientHistory { need: k + 1, have: n });
    }
    let x = to_matrix(&features.rows);
    let y = DVector::from_column_slice(&features.dependent);
    let xtx = x.transpose() * &x;
    let xtx_inv = xtx
        .clone()
        .try_inverse()
        .ok_or(AnalyticsError::RankDeficient)?;
    let beta = &xtx_inv * x.transpose() * &y;
    let resid = &y - &x * &beta;

    // S = sum_t e_t^2 x_t x_t'
    //   + sum_{l=1}^{L} w_l sum_{t>l} (x_t e_t e_{t-l} x_{t-l}' + transpose)
    let mut s = DMatrix::<f64>::zeros(k, k);
    for t in 0..n {
        let xt = x.row(t).transpose();
        s += &xt * xt.transpose() * (resid[t] * resid[t]);
    }
    for l in 1..=lag.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let mut gamma = DMatrix::<f64>::zeros(k, k);
        for t in l..n {
            let xt = x.row(t).transpose();
            let xl = x.row(t - l).transpose();
            gamma += &xt * xl.transpose() * (resid[t] * resid[t - l]);
        }
        s += (&gamma + gamma.transpose()) * w;
    }
    let cov = &xtx_inv * s * &xtx_inv;

    let mean_y = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
    let ss_res: f64 = resid.iter().map(|v| v * v).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(RegressionResult {
        names: features.names.clone(),
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        covariance: (0..k)
            .map(|i| (0..k).map(|j| cov[(i, j)]).collect())
            .collect(),
        n_obs: n,
        se_method: format!("Newey-West(lag={lag})"),
        r_squared: Some(r2),
        pseudo_r_squared: None,
        n_clusters: None,
    })
}

const IRLS_TOL: f64 = 1e-10;
const IRLS_MAX_ITER: usize = 100;

/// Logistic regression by iteratively reweighted least squares with a
/// cluster-robust sandwich covariance over per-cluster score sums.
pub fn logistic_clustered(
    names: &[String],
    rows: &[Vec<f64>],
    labels: &[f64],
    cluster_ids: &[u64],
) -> Result<RegressionResult, AnalyticsError> {
    let n = rows.len();
    if n == 0 || labels.len() != n || cluster_ids.len() != n {
        return Err(AnalyticsError::InvalidArgument(
            "rows, labels and clusters must align".into(),
        ));
    }
    if labels.iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(AnalyticsError::InvalidArgument("labels must be 0/1".into()));
    }
    let k = names.len();
    let x = to_matrix(rows);
    let y = DVector::from_column_slice(labels);

    let mut beta = DVector::<f64>::zeros(k);
    let mut converged = false;
    let mut xtwx_inv = DMatrix::<f64>::zeros(k, k);
    for _ in 0..IRLS_MAX_ITER {
        let eta = &x * &beta;
        let p: DVector<f64> = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let w: DVector<f64> = p.map(|pi| (pi * (1.0 - pi)).max(1e-12));
        // X' W X and X' W z with z = eta + (y - p) / w
        let mut xtwx = DMatrix::<f64>::zeros(k, k);
        let mut xtwz = DVector::<f64>::zeros(k);
        for t in 0..n {
            let xt = x.row(t).transpose();
            let z = eta[t] + (y[t] - p[t]) / w[t];
            xtwx += &xt * xt.transpose() * w[t];
            xtwz += &xt * (w[t] * z);
        }
        xtwx_inv = xtwx.try_inverse().ok_or(AnalyticsError::RankDeficient)?;
        let new_beta = &xtwx_inv * xtwz;
        let delta = (&new_beta - &beta).amax();
        beta = new_beta;
        if delta < IRLS_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(AnalyticsError::NonConvergence(IRLS_MAX_ITER));
    }
    let eta = &x * &beta;
    let p: DVector<f64> = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
    // perfect separation: the fit drives every probability to its label
    let max_gap = (0..n).map(|t| (y[t] - p[t]).abs()).fold(0.0f64, f64::max);
    if max_gap < 1e-8 {
        return Err(AnalyticsError::PerfectSeparation);
    }

    // cluster-robust sandwich over score sums
    let mut scores: BTreeMap<u64, DVector<f64>> = BTreeMap::new();
    for t in 0..n {
        let xt = x.row(t).transpose();
        let s = xt * (y[t] - p[t]);
        scores
            .entry(cluster_ids[t])
            .and_modify(|acc| *acc += &s)
            .or_insert(s);
    }
    let n_clusters = scores.len();
    if n_clusters < 2 {
        return Err(AnalyticsError::InvalidArgument(
            "need at least 2 clusters".into(),
        ));
    }
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    let cov = &xtwx_inv * meat * &xtwx_inv;

    // McFadden pseudo R^2 against the intercept-only fit
    let ll: f64 = (0..n)
        .map(|t| {
            let pi = p[t].clamp(1e-300, 1.0 - 1e-16);
            y[t] * pi.ln() + (1.0 - y[t]) * (1.0 - pi).ln()
        })
        .sum();
    let pbar = labels.iter().sum::<f64>() / n as f64;
    let ll0 = if pbar > 0.0 && pbar < 1.0 {
        n as f64 * (pbar * pbar.ln() + (1.0 - pbar) * (1.0 - pbar).ln())
    } else {
        0.0
    };
    let pseudo_r2 = if ll0 != 0.0 { 1.0 - ll / ll0 } else { 0.0 };

    Ok(RegressionResult {
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        covariance: (0..k)
            .map(|i| (0..k).map(|j| cov[(i, j)]).collect())
            .collect(),
        n_obs: n,
        se_method: format!("cluster-robust({n_clusters} clusters)"),
        r_squared: None,
        pseudo_r_squared: Some(pseudo_r2),
        n_clusters: Some(n_clusters),
    })
}

/// Redeposit design matrix: the loan-day rows of one pool with lagged
/// rates, log loan size and category fixed effects, labels from the
/// within-one-day flag.
pub struct RedepositPanel {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub cluster_ids: Vec<u64>,
}

pub fn build_redeposit_panel(
    ledger: &Ledger,
    snapshots: &[PoolSnapshotRow],
    clock: &BlockClock,
    token: TokenId,
    categories: &BTreeMap<AddressId, AgentCategory>,
    post_start_block: Option<u64>,
) -> Result<RedepositPanel, AnalyticsError> {
    let loan_days: Vec<_> = super::detect_redeposits(ledger, clock, 86_400)
        .into_iter()
        .filter(|d| d.token == token)
        .collect();
    if loan_days.is_empty() {
        return Err(AnalyticsError::EmptyLedger);
    }
    let mut day_snap: BTreeMap<u64, &PoolSnapshotRow> = BTreeMap::new();
    for row in snapshots.iter().filter(|r| r.token == token) {
        day_snap.insert(clock.day_of_block(row.block), row);
    }
    // category fixed effects relative to the first category present
    let all_present: Vec<AgentCategory> = loan_days
        .iter()
        .map(|d| {
            categories
                .get(&d.address)
                .copied()
                .unwrap_or(AgentCategory::SmallAddress)
        })
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let base_cat = all_present.first().copied();
    let cats_present: Vec<AgentCategory> = all_present
        .into_iter()
        .filter(|c| Some(*c) != base_cat)
        .collect();
    let mut names = vec![
        "const".to_string(),
        "Post(t-1)".to_string(),
        "BorrowRate(t-1)".to_string(),
        "BorrowReward(t-1)".to_string(),
        "log(LoanSizeUSD)".to_string(),
    ];
    for c in &cats_present {
        names.push(format!("cat:{}", c.name()));
    }
    let post_day = post_start_block.map(|b| clock.day_of_block(b));
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut clusters = Vec::new();
    for d in &loan_days {
        let lag_day = d.day.saturating_sub(1);
        let snap = day_snap
            .range(..=lag_day)
            .next_back()
            .map(|(_, s)| *s)
            .or_else(|| day_snap.values().next().copied());
        let Some(snap) = snap else { continue };
        let post = match post_day {
            Some(pd) if lag_day >= pd => 1.0,
            _ => 0.0,
        };
        let mut row = vec![
            1.0,
            post,
            snap.borrow_rate.to_f64(),
            snap.borrow_reward_apy.map(|w| w.to_f64()).unwrap_or(0.0),
            d.total_drawn_usd.to_f64().max(1e-12).ln(),
        ];
        let cat = categories
            .get(&d.address)
            .copied()
            .unwrap_or(AgentCategory::SmallAddress);
        for c in &cats_present {
            row.push(if cat == *c { 1.0 } else { 0.0 });
        }
        rows.push(row);
        labels.push(if d.redeposited_within_1d { 1.0 } else { 0.0 });
        clusters.push(d.address.0 as u64);
    }
    // drop identically zero regressors, as in build_features
    let k = names.len();
    let keep: Vec<usize> = (0..k)
        .filter(|&j| j == 0 || rows.iter().any(|r| r[j] != 0.0))
        .collect();
    let names: Vec<String> = keep.iter().map(|&j| names[j].clone()).collect();
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    Ok(RedepositPanel {
        names,
        rows,
        labels,
        cluster_ids: clusters,
    })
}

/// Render a regression result the way empirical tables usually look:
/// coefficient, standard error in parentheses, significance stars at the
/// 10/5/1 percent levels.
pub fn format_table(result: &RegressionResult, title: &str) -> String {
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    let width = result
        .names
        .iter()
        .map(|n| n.len())
        .max()
        .unwrap_or(8)
        .max(8);
    for i in 0..result.names.len() {
        let coef = result.coefficients[i];
        let se = result.std_errors[i];
        let z = if se > 0.0 { (coef / se).abs() } else { f64::INFINITY };
        let stars = if z >= 2.5758 {
            "***"
        } else if z >= 1.9600 {
            "**"
        } else if z >= 1.6449 {
            "*"
        } else {
            ""
        };
        out.push_str(&format!(
            "{:width$}  {:>12.4}{:<3}\n{:width$}  ({:>10.4})\n",
            result.names[i],
            coef,
            stars,
            "",
            se,
            width = width
        ));
    }
    out.push_str(&format!("Observations  {}\n", result.n_obs));
    if let Some(r2) = result.r_squared {
        out.push_str(&format!("R-squared     {r2:.4}\n"));
    }
    if let Some(pr2) = result.pseudo_r_squared {
        out.push_str(&format!("Pseudo R-sq   {pr2:.4}\n"));
    }
    out.push_str(&format!("SEs           {}\n", result.se_method));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn fm(rows: Vec<Vec<f64>>, y: Vec<f64>, k: usize) -> FeatureMatrix {
        FeatureMatrix {
            names: (0..k).map(|i| format!("x{i}")).collect(),
            rows,
            dependent: y,
            first_day: 0,
        }
    }

    #[test]
    fn perfect_fit_exact_coefficients() {
        // y = 1 + 2x exactly: coefficients recovered, SEs zero
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| 1.0 + 2.0 * i as f64).collect();
        let r = ols_newey_west(&fm(rows, y, 2), 1).unwrap();
        assert!((r.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((r.coefficients[1] - 2.0).abs() < 1e-10);
        assert!(r.std_errors.iter().all(|se| *se < 1e-8));
        assert!((r.r_squared.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lag_zero_equals_hc0() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 0.5 + r[1] - 2.0 * r[2] + rng.gen_range(-0.3..0.3))
            .collect();
        let f = fm(rows.clone(), y.clone(), 3);
        let nw0 = ols_newey_west(&f, 0).unwrap();
        // independent HC0: (X'X)^-1 (sum e^2 x x') (X'X)^-1 with scalar loops
        let k = 3;
        let n = rows.len();
        let mut xtx = vec![vec![0.0; k]; k];
        for r in &rows {
            for i in 0..k {
                for j in 0..k {
                    xtx[i][j] += r[i] * r[j];
                }
            }
        }
        let inv = invert(&xtx).unwrap();
        // beta = inv * X'y
        let mut xty = vec![0.0; k];
        for (r, yi) in rows.iter().zip(&y) {
            for i in 0..k {
                xty[i] += r[i] * yi;
            }
        }
        let beta: Vec<f64> = (0..k).map(|i| (0..k).map(|j| inv[i][j] * xty[j]).sum()).collect();
        let resid: Vec<f64> = rows
            .iter()
            .zip(&y)
            .map(|(r, yi)| yi - (0..k).map(|j| beta[j] * r[j]).sum::<f64>())
            .collect();
        let mut s = vec![vec![0.0; k]; k];
        for t in 0..n {
            for i in 0..k {
                for j in 0..k {
                    s[i][j] += resid[t] * resid[t] * rows[t][i] * rows[t][j];
                }
            }
        }
        let mut cov = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                for a in 0..k {
                    for b in 0..k {
                        cov[i][j] += inv[i][a] * s[a][b] * inv[b][j];
                    }
                }
            }
        }
        for i in 0..k {
            assert!((nw0.coefficients[i] - beta[i]).abs() < 1e-10);
            assert!((nw0.std_errors[i] - cov[i][i].sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn nw_covariance_symmetric_psd_on_ar1() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 200;
        let mut e = 0.0;
        let rows: Vec<Vec<f64>> = (0..n).map(|t| vec![1.0, (t as f64 / 17.0).sin()]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                e = 0.6 * e + rng.gen_range(-0.5..0.5);
                1.0 + 0.5 * r[1] + e
            })
            .collect();
        let r = ols_newey_west(&fm(rows, y, 2), 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.covariance[i][j] - r.covariance[j][i]).abs() < 1e-12);
            }
            assert!(r.covariance[i][i] >= 0.0);
        }
        // 2x2 PSD: determinant non-negative
        let det = r.covariance[0][0] * r.covariance[1][1] - r.covariance[0][1] * r.covariance[1][0];
        assert!(det >= -1e-15);
    }

    #[allow(clippy::needless_range_loop)] // elimination works on row pairs
    fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
        let n = m.len();
        let mut a: Vec<Vec<f64>> = m
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
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
                    for j in 0..2 * n {
                        a[r][j] -= f * a[col][j];
                    }
                }
            }
        }
        Some(a.into_iter().map(|row| row[n..].to_vec()).collect())
    }

    #[test]
    fn intercept_only_logit_closed_form() {
        // 30% positive labels: intercept = log(0.3/0.7)
        let n = 200;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0]).collect();
        let labels: Vec<f64> = (0..n).map(|i| if i % 10 < 3 { 1.0 } else { 0.0 }).collect();
        let clusters: Vec<u64> = (0..n as u64).collect();
        let r = logistic_clustered(&["const".into()], &rows, &labels, &clusters).unwrap();
        let expect = (0.3f64 / 0.7).ln();
        assert!((r.coefficients[0] - expect).abs() < 1e-10);
        // mean predicted equals the sample rate
        let p = 1.0 / (1.0 + (-r.coefficients[0]).exp());
        assert!((p - 0.3).abs() < 1e-10);
    }

    #[test]
    fn logit_mean_prediction_matches_rate() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 400;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.gen_range(-2.0..2.0)])
            .collect();
        let labels: Vec<f64> = rows
            .iter()
            .map(|r| {
                let p = 1.0 / (1.0 + (-(-0.5 + 1.2 * r[1])).exp());
                if rng.gen_range(0.0..1.0) < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let clusters: Vec<u64> = (0..n as u64).map(|i| i % 40).collect();
        let r = logistic_clustered(
            &["const".into(), "x".into()],
            &rows,
            &labels,
            &clusters,
        )
        .unwrap();
        let mean_p: f64 = rows
            .iter()
            .map(|row| {
                let eta: f64 = r.coefficients[0] + r.coefficients[1] * row[1];
                1.0 / (1.0 + (-eta).exp())
            })
            .sum::<f64>()
            / n as f64;
        let rate = labels.iter().sum::<f64>() / n as f64;
        assert!((mean_p - rate).abs() < 1e-10);
        assert_eq!(r.n_clusters, Some(40));
        assert!(r.pseudo_r_squared.unwrap() > 0.0);
    }

    #[test]
    fn one_cluster_per_row_is_hc_robust() {
        // degenerate clustering equals the per-observation sandwich
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 150;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0, rng.gen_range(-1.0..1.0)])
            .collect();
        let labels: Vec<f64> = rows
            .iter()
            .map(|r| {
                let p = 1.0 / (1.0 + (-(0.2 + 0.8 * r[1])).exp());
                if rng.gen_range(0.0..1.0) < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let per_row: Vec<u64> = (0..n as u64).collect();
        let r = logistic_clustered(&["c".into(), "x".into()], &rows, &labels, &per_row).unwrap();
        assert_eq!(r.n_clusters, Some(n));
        assert!(r.std_errors.iter().all(|se| se.is_finite() && *se > 0.0));
    }

    #[test]
    fn perfect_separation_detected() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![1.0, if i < 20 { -1.0 } else { 1.0 }])
            .collect();
        let labels: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else { 1.0 }).collect();
        let clusters: Vec<u64> = (0..40u64).collect();
        let err = logistic_clustered(&["c".into(), "x".into()], &rows, &labels, &clusters)
            .unwrap_err();
        assert!(matches!(
            err,
            AnalyticsError::PerfectSeparation | AnalyticsError::NonConvergence(_)
        ));
    }

    #[test]
    fn table_formatting_contains_stars_and_ses() {
        let r = RegressionResult {
            names: vec!["const".into(), "x".into()],
            coefficients: vec![1.0, -0.5],
            std_errors: vec![0.1, 1.0],
            covariance: vec![vec![0.01, 0.0], vec![0.0, 1.0]],
            n_obs: 100,
            se_method: "Newey-West(lag=1)".into(),
            r_squared: Some(0.5),
            pseudo_r_squared: None,
            n_clusters: None,
        };
        let table = format_table(&r, "Test");
        assert!(table.contains("***"));
        assert!(table.contains("("));
        assert!(table.contains("Newey-West"));
    }
}
