//! Synthetic data generators shared by the integration tests.
#![allow(dead_code)]

use m6_core::factor_risk::{FactorConfig, StandardizedPanel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Standardized panel drawn from the layered model's own filter: factor
/// assets `F1..F3` are the level-1..3 factors, whose joint covariance follows
/// a BEKK recursion towards the identity. Each of the `n_assets` other
/// assets is built bottom-up: a BEKK specific shock, plus at every level a
/// loading times that level's factor, where the loading is `S_t⁻¹ c_t` and
/// `c_t` runs the same covariance recursion the fit uses. Every recursion
/// uses `(omega, gamma)`.
pub fn layered_bekk_panel(
    seed: u64,
    n_assets: usize,
    n_days: usize,
    omega: f64,
    gamma: f64,
) -> (StandardizedPanel, FactorConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 3;
    let b = 1.0 - omega - gamma;
    let c0: Vec<[f64; 3]> = (0..n_assets)
        .map(|_| {
            [
                0.5 + 0.3 * rng.sample::<f64, _>(StandardNormal),
                0.4 * rng.sample::<f64, _>(StandardNormal),
                0.4 * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    let mut c = c0.clone();
    let mut fcov = DMatrix::<f64>::identity(k, k);
    let mut h: Vec<f64> = vec![1.0; n_assets];
    let mut z = Vec::with_capacity(n_days);
    for _ in 0..n_days {
        let chol = fcov.clone().cholesky().expect("factor covariance stays PD");
        let n: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let f = chol.l() * nalgebra::DVector::from_vec(n);
        let mut row: Vec<f64> = f.iter().copied().collect();
        for i in 0..n_assets {
            let e = h[i].sqrt() * rng.sample::<f64, _>(StandardNormal);
            h[i] = omega + gamma * e * e + b * h[i];
            // level 3 innermost, level 1 outermost
            let mut u = e;
            for j in (0..k).rev() {
                u += c[i][j] / fcov[(j, j)] * f[j];
                c[i][j] = omega * c0[i][j] + gamma * f[j] * u + b * c[i][j];
            }
            row.push(u);
        }
        for r in 0..k {
            for col in 0..k {
                let target = if r == col { 1.0 } else { 0.0 };
                fcov[(r, col)] = omega * target + gamma * f[r] * f[col] + b * fcov[(r, col)];
            }
        }
        z.push(row);
    }
    let mut tickers: Vec<String> = (1..=k).map(|j| format!("F{j}")).collect();
    tickers.extend((0..n_assets).map(|i| format!("S{i:03}")));
    let base = chrono::NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
    let dates = (0..n_days).map(|d| base + chrono::Days::new(d as u64)).collect();
    let config = FactorConfig::from_toml(
        "version = 1\n\
         [[factor]]\nname = \"L1\"\nlevel = 1\nweights = { F1 = 1.0 }\n\
         [[factor]]\nname = \"L2\"\nlevel = 2\nweights = { F2 = 1.0 }\n\
         [[factor]]\nname = \"L3\"\nlevel = 3\nweights = { F3 = 1.0 }\n",
    )
    .expect("valid config");
    (
        StandardizedPanel {
            dates,
            tickers,
            z,
            vol_scale: vec![1.0; n_assets + k],
        },
        config,
    )
}

/// Weekdays from `start`, `n` of them.
pub fn business_days(start: chrono::NaiveDate, n: usize) -> Vec<chrono::NaiveDate> {
    use chrono::Datelike;
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if d.weekday().num_days_from_monday() < 5 {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Random-walk OHLC histories with volumes on a shared weekday calendar.
/// Daily volatility differs by asset (1% to 3%) and drifts slowly.
pub fn synthetic_histories(
    seed: u64,
    n_assets: usize,
    start: chrono::NaiveDate,
    n_days: usize,
) -> Vec<m6_core::market_data::PriceHistory> {
    use m6_core::market_data::{PriceHistory, PriceRow};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days = business_days(start, n_days);
    (0..n_assets)
        .map(|i| {
            let base_vol = 0.01 + 0.02 * rng.random::<f64>();
            let mut log_vol: f64 = 0.0;
            let mut close = 20.0 + 200.0 * rng.random::<f64>();
            let volume_level = 1e5 + 1e7 * rng.random::<f64>();
            let entries = days
                .iter()
                .map(|&d| {
                    log_vol = 0.97 * log_vol + 0.1 * rng.sample::<f64, _>(StandardNormal);
                    let vol = base_vol * log_vol.exp();
                    let open = close * (0.3 * vol * rng.sample::<f64, _>(StandardNormal)).exp();
                    let c = open * (0.9 * vol * rng.sample::<f64, _>(StandardNormal)).exp();
                    let high = open.max(c) * (0.5 * vol * rng.sample::<f64, _>(StandardNormal).abs()).exp();
                    let low = open.min(c) * (-0.5 * vol * rng.sample::<f64, _>(StandardNormal).abs()).exp();
                    close = c;
                    let volume = volume_level * (0.3 * rng.sample::<f64, _>(StandardNormal)).exp();
                    (
                        d,
                        PriceRow {
                            open,
                            high,
                            low,
                            close: c,
                            adj_close: c,
                            volume: Some(volume.round()),
                        },
                    )
                })
                .collect();
            PriceHistory::new(format!("T{i:03}"), entries).expect("valid synthetic rows")
        })
        .collect()
}
