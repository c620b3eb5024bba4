//! Exogenous per-block USD price feeds.
//!
//! Every token gets a full price path over the simulation horizon before
//! the run starts: a constant peg for stablecoins, a file-supplied series,
//! a seeded geometric Brownian path, or a scripted path. Shocks rescale
//! the path from a block onward. When AMM coupling is enabled the engine
//! overrides a token's price block by block from the AMM spot; the series
//! here then only provides the starting level.

use crate::ledger::{TokenId, SECONDS_PER_YEAR};
use crate::wad::Wad;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("block {0} outside series horizon {1}")]
    BlockOutOfRange(u64, u64),
    #[error("no price series for token {0}")]
    MissingToken(TokenId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceSource {
    File,
    Gbm,
    Scripted,
    AmmCoupled,
}

/// A fully materialized per-block USD price path for one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub token: TokenId,
    pub source: PriceSource,
    prices: Vec<Wad>,
}

impl PriceSeries {
    pub fn from_prices(
        token: TokenId,
        source: PriceSource,
        prices: Vec<Wad>,
    ) -> Result<PriceSeries, OracleError> {
        if prices.is_empty() {
            return Err(OracleError::InvalidParameter("empty price series".into()));
        }
        if prices.iter().any(|p| p.is_zero()) {
            return Err(OracleError::InvalidParameter(
                "prices must be positive".into(),
            ));
        }
        Ok(PriceSeries {
            token,
            source,
            prices,
        })
    }

    /// Constant price over the horizon (stablecoin peg or degenerate path).
    pub fn constant(token: TokenId, price: Wad, horizon_blocks: u64) -> PriceSeries {
        assert!(!price.is_zero());
        PriceSeries {
            token,
            source: PriceSource::Scripted,
            prices: vec![price; horizon_blocks as usize],
        }
    }

    /// Expand a daily price list to per-block resolution: the price is a
    /// step function, constant within each day.
    pub fn from_daily(
        token: TokenId,
        daily: &[Wad],
        horizon_blocks: u64,
        seconds_per_block: u64,
    ) -> Result<PriceSeries, OracleError> {
        if daily.is_empty() {
            return Err(OracleError::InvalidParameter("empty daily series".into()));
        }
        let mut prices = Vec::with_capacity(horizon_blocks as usize);
        for b in 0..horizon_blocks {
            let day = (b * seconds_per_block / 86_400) as usize;
            let day = day.min(daily.len() - 1);
            prices.push(daily[day]);
        }
        PriceSeries::from_prices(token, PriceSource::File, prices)
    }

    pub fn horizon(&self) -> u64 {
        self.prices.len() as u64
    }

    pub fn price_at(&self, block: u64) -> Result<Wad, OracleError> {
        self.prices
            .get(block as usize)
            .copied()
            .ok_or(OracleError::BlockOutOfRange(block, self.horizon()))
    }

    /// Scale all prices from `block` onward by `multiplier`.
    pub fn apply_shock(&mut self, block: u64, multiplier: Wad) -> Result<(), OracleError> {
        if multiplier.is_zero() {
            return Err(OracleError::InvalidParameter(
                "shock multiplier must be positive".into(),
            ));
        }
        if block >= self.horizon() {
            return Err(OracleError::BlockOutOfRange(block, self.horizon()));
        }
        for p in &mut self.prices[block as usize..] {
            *p = p.mul(multiplier).expect("shock overflow");
            assert!(!p.is_zero(), "shock drove price to zero");
        }
        Ok(())
    }

    /// Engine hook for AMM-coupled feeds.
    pub fn override_from(&mut self, block: u64, price: Wad) -> Result<(), OracleError> {
        if price.is_zero() {
            return Err(OracleError::InvalidParameter(
                "override price must be positive".into(),
            ));
        }
        if block >= self.horizon() {
            return Err(OracleError::BlockOutOfRange(block, self.horizon()));
        }
        for p in &mut self.prices[block as usize..] {
            *p = price;
        }
        Ok(())
    }
}

/// Seeded geometric Brownian motion sampled per block.
///
/// `dt = seconds_per_block / seconds_per_year`; the log-price step is
/// `(mu - sigma^2/2) dt + sigma sqrt(dt) Z`. The same seed always
/// reproduces the same path bit for bit.
pub fn generate_gbm(
    token: TokenId,
    seed: u64,
    p0: f64,
    mu_annual: f64,
    sigma_annual: f64,
    horizon_blocks: u64,
    seconds_per_block: u64,
) -> Result<PriceSeries, OracleError> {
    if p0 <= 0.0 || !p0.is_finite() {
        return Err(OracleError::InvalidParameter("p0 must be positive".into()));
    }
    if sigma_annual < 0.0 || !sigma_annual.is_finite() || !mu_annual.is_finite() {
        return Err(OracleError::InvalidParameter(
            "mu must be finite, sigma non-negative".into(),
        ));
    }
    if horizon_blocks == 0 {
        return Err(OracleError::InvalidParameter("zero horizon".into()));
    }
    let dt = seconds_per_block as f64 / SECONDS_PER_YEAR as f64;
    let drift = (mu_annual - 0.5 * sigma_annual * sigma_annual) * dt;
    let vol = sigma_annual * dt.sqrt();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut p = p0;
    let mut prices = Vec::with_capacity(horizon_blocks as usize);
    prices.push(Wad::from_f64(p0).expect("p0 representable"));
    for _ in 1..horizon_blocks {
        let z: f64 = StandardNormal.sample(&mut rng);
        p *= (drift + vol * z).exp();
        prices.push(Wad::from_f64(p).expect("gbm price representable").max(Wad(1)));
    }
    PriceSeries::from_prices(token, PriceSource::Gbm, prices)
}

/// Correlated GBM paths for several tokens via a Cholesky factor of the
/// supplied correlation matrix. Row/column order follows `tokens`.
#[allow(clippy::too_many_arguments)]
pub fn generate_correlated_gbm(
    tokens: &[TokenId],
    seed: u64,
    p0: &[f64],
    mu_annual: &[f64],
    sigma_annual: &[f64],
    correlation: &[Vec<f64>],
    horizon_blocks: u64,
    seconds_per_block: u64,
) -> Result<Vec<PriceSeries>, OracleError> {
    let n = tokens.len();
    if p0.len() != n || mu_annual.len() != n || sigma_annual.len() != n || correlation.len() != n {
        return Err(OracleError::InvalidParameter(
            "mismatched parameter lengths".into(),
        ));
    }
    if horizon_blocks == 0 {
        return Err(OracleError::InvalidParameter("zero horizon".into()));
    }
    let chol = cholesky(correlation)?;
    let dt = seconds_per_block as f64 / SECONDS_PER_YEAR as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut level: Vec<f64> = p0.to_vec();
    let mut paths: Vec<Vec<Wad>> = (0..n)
        .map(|i| vec![Wad::from_f64(p0[i]).expect("p0 representable")])
        .collect();
    let mut z = vec![0.0f64; n];
    for _ in 1..horizon_blocks {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            // correlated normal: row i of L times z
            let mut w = 0.0;
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                w += chol[i][j] * zj;
            }
            let drift = (mu_annual[i] - 0.5 * sigma_annual[i] * sigma_annual[i]) * dt;
            level[i] *= (drift + sigma_annual[i] * dt.sqrt() * w).exp();
            paths[i].push(
                Wad::from_f64(level[i])
                    .expect("gbm price representable")
                    .max(Wad(1)),
            );
        }
    }
    tokens
        .iter()
        .zip(paths)
        .map(|(t, p)| PriceSeries::from_prices(*t, PriceSource::Gbm, p))
        .collect()
}

fn cholesky(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OracleError> {
    let n = m.len();
    let mut l = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        if m[i].len() != n {
            return Err(OracleError::InvalidParameter(
                "correlation matrix not square".into(),
            ));
        }
        for j in 0..=i {
            let mut sum = m[i][j];
            for (lik, ljk) in l[i].iter().zip(&l[j]).take(j) {
                sum -= lik * ljk;
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(OracleError::NotPositiveDefinite);
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// All token price paths for one run.
#[derive(Debug, Clone, Default)]
pub struct PriceOracle {
    series: Vec<Option<PriceSeries>>,
}

impl PriceOracle {
    pub fn new() -> PriceOracle {
        PriceOracle { series: Vec::new() }
    }

    pub fn insert(&mut self, series: PriceSeries) {
        let idx = series.token.0 as usize;
        if self.series.len() <= idx {
            self.series.resize(idx + 1, None);
        }
        self.series[idx] = Some(series);
    }

    pub fn series(&self, token: TokenId) -> Result<&PriceSeries, OracleError> {
        self.series
            .get(token.0 as usize)
            .and_then(|s| s.as_ref())
            .ok_or(OracleError::MissingToken(token))
    }

    pub fn series_mut(&mut self, token: TokenId) -> Result<&mut PriceSeries, OracleError> {
        self.series
            .get_mut(token.0 as usize)
            .and_then(|s| s.as_mut())
            .ok_or(OracleError::MissingToken(token))
    }

    pub fn price(&self, token: TokenId, block: u64) -> Result<Wad, OracleError> {
        self.series(token)?.price_at(block)
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.series
            .iter()
            .filter_map(|s| s.as_ref().map(|s| s.token))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: TokenId = TokenId(0);

    #[test]
    fn constant_series_lookup() {
        let s = PriceSeries::constant(T, Wad::ONE, 10);
        assert_eq!(s.price_at(0).unwrap(), Wad::ONE);
        assert_eq!(s.price_at(9).unwrap(), Wad::ONE);
        assert!(matches!(
            s.price_at(10),
            Err(OracleError::BlockOutOfRange(10, 10))
        ));
    }

    #[test]
    fn file_series_lookup() {
        let s = PriceSeries::from_prices(
            T,
            PriceSource::File,
            vec![Wad::from_int(2000), Wad::from_int(1800)],
        )
        .unwrap();
        assert_eq!(s.price_at(1).unwrap(), Wad::from_int(1800));
    }

    #[test]
    fn daily_expansion_is_step_function() {
        let daily = vec![Wad::from_int(10), Wad::from_int(20)];
        // 100-second blocks: day boundary at block 864
        let s = PriceSeries::from_daily(T, &daily, 1000, 100).unwrap();
        assert_eq!(s.price_at(863).unwrap(), Wad::from_int(10));
        assert_eq!(s.price_at(864).unwrap(), Wad::from_int(20));
        assert_eq!(s.price_at(999).unwrap(), Wad::from_int(20));
    }

    #[test]
    fn gbm_zero_sigma_is_pure_drift() {
        let s = generate_gbm(T, 1, 100.0, 0.0, 0.0, 50, 13).unwrap();
        for b in 0..50 {
            assert_eq!(s.price_at(b).unwrap(), Wad::from_int(100));
        }
        // positive drift, zero sigma: p_t = p0 exp(mu t)
        let s = generate_gbm(T, 1, 100.0, 0.5, 0.0, 1000, 13).unwrap();
        let t = 999.0 * 13.0 / SECONDS_PER_YEAR as f64;
        let expect = 100.0 * (0.5 * t).exp();
        let got = s.price_at(999).unwrap().to_f64();
        assert!((got - expect).abs() / expect < 1e-9);
    }

    #[test]
    fn gbm_same_seed_identical() {
        let a = generate_gbm(T, 42, 2000.0, 0.1, 0.8, 500, 13).unwrap();
        let b = generate_gbm(T, 42, 2000.0, 0.1, 0.8, 500, 13).unwrap();
        assert_eq!(a, b);
        let c = generate_gbm(T, 43, 2000.0, 0.1, 0.8, 500, 13).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gbm_martingale_terminal_mean() {
        // mu = 0: E[P_T] = p0; check the Monte Carlo mean over many paths
        let n_paths = 10_000;
        let horizon = 200u64;
        let sigma = 0.8;
        let spb = 13 * 500; // chunkier blocks so T is non-trivial
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..n_paths {
            let s = generate_gbm(T, seed, 100.0, 0.0, sigma, horizon, spb).unwrap();
            let p = s.price_at(horizon - 1).unwrap().to_f64();
            sum += p;
            sumsq += p * p;
        }
        let mean = sum / n_paths as f64;
        let var = sumsq / n_paths as f64 - mean * mean;
        let se = (var / n_paths as f64).sqrt();
        assert!(
            (mean - 100.0).abs() < 3.0 * se,
            "terminal mean {mean} departs from 100 by more than 3 SE ({se})"
        );
    }

    #[test]
    fn shock_scales_tail() {
        let mut s = PriceSeries::constant(T, Wad::from_int(2000), 10);
        s.apply_shock(4, Wad::from_f64(0.6).unwrap()).unwrap();
        assert_eq!(s.price_at(3).unwrap(), Wad::from_int(2000));
        assert_eq!(s.price_at(4).unwrap(), Wad::from_int(1200));
        assert_eq!(s.price_at(9).unwrap(), Wad::from_int(1200));
        // identity shock is a no-op
        let mut s2 = PriceSeries::constant(T, Wad::from_int(2000), 10);
        s2.apply_shock(4, Wad::ONE).unwrap();
        assert_eq!(s2.price_at(7).unwrap(), Wad::from_int(2000));
    }

    #[test]
    fn correlated_paths_track_correlation() {
        let tokens = [TokenId(0), TokenId(1)];
        let corr = vec![vec![1.0, 0.9], vec![0.9, 1.0]];
        let out = generate_correlated_gbm(
            &tokens,
            7,
            &[100.0, 100.0],
            &[0.0, 0.0],
            &[0.8, 0.8],
            &corr,
            5000,
            13 * 100,
        )
        .unwrap();
        // sample correlation of log returns should be near 0.9
        let rets = |s: &PriceSeries| -> Vec<f64> {
            (1..s.horizon())
                .map(|b| {
                    (s.price_at(b).unwrap().to_f64() / s.price_at(b - 1).unwrap().to_f64()).ln()
                })
                .collect()
        };
        let (a, b) = (rets(&out[0]), rets(&out[1]));
        let n = a.len() as f64;
        let (ma, mb) = (
            a.iter().sum::<f64>() / n,
            b.iter().sum::<f64>() / n,
        );
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.len() {
            cov += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma).powi(2);
            vb += (b[i] - mb).powi(2);
        }
        let rho = cov / (va.sqrt() * vb.sqrt());
        assert!((rho - 0.9).abs() < 0.05, "sample correlation {rho}");
    }
}
