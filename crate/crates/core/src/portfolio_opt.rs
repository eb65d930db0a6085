//! Score construction, linear-Bayes alphas, Sharpe-ratio maximisation (plain
//! and with a minimum-volatility target), reverse optimisation and realised
//! information coefficients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{median, spearman};
use crate::submission::{MAX_GROSS, MIN_GROSS, N_QUINTILES};

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("alpha vector is identically zero")]
    ZeroAlpha,
    #[error("portfolio is identically zero")]
    ZeroPortfolio,
    #[error("expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("covariance is not positive semi-definite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("invalid constraints: {0}")]
    Constraints(String),
}

/// `Σ k·p_k` per asset, standardized across assets to mean 0 and
/// (population) sd 1. When every raw score is equal the centred scores are
/// divided by √2, the sd of `{1, …, 5}`.
pub fn score_submission(probs: &[[f64; N_QUINTILES]]) -> Vec<f64> {
    let raw: Vec<f64> = probs
        .iter()
        .map(|p| p.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x).sum())
        .collect();
    let n = raw.len() as f64;
    let m = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    let div = if sd > 1e-12 { sd } else { std::f64::consts::SQRT_2 };
    raw.iter().map(|x| (x - m) / div).collect()
}

/// `α = ic · σ · score`.
pub fn linear_bayes_alpha(score: f64, ic: f64, sigma20_annualized: f64) -> f64 {
    ic * sigma20_annualized * score
}

/// Alphas for a cross-section. `daily_var20` holds daily variance forecasts
/// for the 20-day horizon; with `annualize` they are scaled by 252 before
/// taking the square root.
pub fn alpha_vector(scores: &[f64], ic: f64, daily_var20: &[f64], annualize: bool) -> Vec<f64> {
    scores
        .iter()
        .zip(daily_var20)
        .map(|(s, v)| {
            let sigma = if annualize { (TRADING_DAYS * v).sqrt() } else { v.sqrt() };
            linear_bayes_alpha(*s, ic, sigma)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolverStatus {
    Converged,
    Failed,
    InfeasibleTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedPortfolio {
    pub weights: Vec<f64>,
    /// `√(252 · w Σ w')`.
    pub ex_ante_vol: f64,
    /// `w α / √(w Σ w')`.
    pub objective_value: f64,
    pub status: SolverStatus,
    pub constraint_set: String,
    /// Projected-gradient residual of the best start.
    pub stationarity: f64,
    pub starts_converged: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub min_gross: f64,
    pub max_gross: f64,
    /// Gross exposure of the returned weights.
    pub target_gross: f64,
    pub starts: usize,
    pub tolerance: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            min_gross: MIN_GROSS,
            max_gross: MAX_GROSS,
            target_gross: MAX_GROSS,
            starts: 8,
            tolerance: 1e-6,
            max_iter: 20_000,
            seed: 0,
        }
    }
}

impl OptimizerOptions {
    fn check(&self) -> Result<(), PortfolioError> {
        let ok = self.min_gross > 0.0
            && self.min_gross <= self.target_gross
            && self.target_gross <= self.max_gross
            && self.starts >= 1
            && self.tolerance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PortfolioError::Constraints(format!(
                "need 0 < min_gross <= target_gross <= max_gross, got {} / {} / {}",
                self.min_gross, self.target_gross, self.max_gross
            )))
        }
    }

    fn label(&self) -> String {
        format!("gross[{},{}]", self.min_gross, self.max_gross)
    }
}

/// `w α / √(w Σ w')`; zero for a zero-risk portfolio.
pub fn sharpe(w: &[f64], alpha: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let wv = DVector::from_column_slice(w);
    let var = (wv.transpose() * sigma * &wv)[(0, 0)];
    if var <= 0.0 {
        return 0.0;
    }
    dot(w, alpha) / var.sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gross(w: &[f64]) -> f64 {
    w.iter().map(|x| x.abs()).sum()
}

fn check_inputs(alpha: &[f64], sigma: &DMatrix<f64>) -> Result<(), PortfolioError> {
    if sigma.nrows() != alpha.len() || sigma.ncols() != alpha.len() {
        return Err(PortfolioError::Dimension {
            expected: sigma.nrows(),
            got: alpha.len(),
        });
    }
    if alpha.iter().all(|a| *a == 0.0) {
        return Err(PortfolioError::ZeroAlpha);
    }
    let min_eig = SymmetricEigen::new(sigma.clone()).eigenvalues.min();
    let scale = sigma.diagonal().max().max(1e-300);
    if min_eig < -1e-10 * scale.max(1.0) {
        return Err(PortfolioError::NotPsd(min_eig));
    }
    Ok(())
}

/// Euclidean projection onto `{x ≥ 0, Σx ≤ 1}`.
fn project_capped_simplex(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
    if x.iter().sum::<f64>() <= 1.0 {
        return;
    }
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// Maximisation problem on the split variables `x = (p, n)`, `w = p − n`.
struct Problem<'a> {
    alpha: &'a [f64],
    sigma: &'a DMatrix<f64>,
    /// Required annualised variance; 0 disables the constraint.
    min_var_ann: f64,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.alpha.len()
    }

    fn weights(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|i| x[i] - x[n + i]).collect()
    }

    /// Augmented-Lagrangian value and gradient in `w`.
    fn value_grad(&self, w: &[f64], lambda: f64, mu: f64) -> (f64, Vec<f64>) {
        let wv = DVector::from_column_slice(w);
        let sw = self.sigma * &wv;
        let var = wv.dot(&sw).max(1e-300);
        let sd = var.sqrt();
        let ret = dot(w, self.alpha);
        let s = ret / sd;
        let mut grad: Vec<f64> = (0..w.len())
            .map(|i| self.alpha[i] / sd - ret * sw[i] / (var * sd))
            .collect();
        let mut val = s;
        if self.min_var_ann > 0.0 {
            // constraint h(w) = 252 wΣw / v² − 1 ≥ 0, scaled to be unitless
            let h = TRADING_DAYS * var / self.min_var_ann - 1.0;
            let t = lambda - mu * h;
            if t > 0.0 {
                val -= (t * t - lambda * lambda) / (2.0 * mu);
                let dh = 2.0 * TRADING_DAYS / self.min_var_ann;
                for i in 0..w.len() {
                    grad[i] += t * dh * sw[i];
                }
            } else {
                val += lambda * lambda / (2.0 * mu);
            }
        }
        (val, grad)
    }

    fn split_grad(&self, g: &[f64]) -> Vec<f64> {
        g.iter().copied().chain(g.iter().map(|v| -v)).collect()
    }

    /// Norm of `x − P(x + g)`, the fixed-point residual of projected ascent.
    fn residual(&self, x: &[f64], lambda: f64, mu: f64) -> f64 {
        let (_, g) = self.value_grad(&self.weights(x), lambda, mu);
        let g = self.split_grad(&g);
        let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
        project_capped_simplex(&mut y);
        x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Projected gradient ascent with Armijo backtracking.
    fn ascend(&self, x: &mut Vec<f64>, lambda: f64, mu: f64, tol: f64, max_iter: usize) -> usize {
        let mut step = 1e-2;
        for it in 0..max_iter {
            let w = self.weights(x);
            let (f0, g) = self.value_grad(&w, lambda, mu);
            let g = self.split_grad(&g);
            let mut accepted = false;
            for _ in 0..60 {
                let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + step * b).collect();
                project_capped_simplex(&mut y);
                let d: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                let (f1, _) = self.value_grad(&self.weights(&y), lambda, mu);
                if f1 >= f0 + 1e-4 * dot(&g, &d) && f1.is_finite() {
                    let moved = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    *x = y;
                    accepted = true;
                    step *= 2.0;
                    if moved == 0.0 {
                        return it;
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted || (it % 16 == 0 && self.residual(x, lambda, mu) <= tol) {
                return it;
            }
        }
        max_iter
    }
}

fn starting_points(alpha: &[f64], sigma: &DMatrix<f64>, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = alpha.len();
    let mut starts = Vec::with_capacity(count);
    starts.push(vec![1.0 / n as f64; n]);
    starts.push(alpha.to_vec());
    if let Some(t) = tangency(alpha, sigma) {
        starts.push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < count {
        starts.push((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    starts.truncate(count.max(1));
    starts
        .into_iter()
        .filter(|w| gross(w) > 0.0)
        .map(|w| {
            let g = gross(&w);
            w.iter().map(|v| v / g).collect()
        })
        .collect()
}

/// Direction `Σ⁻¹ α` (pseudo-inverse for singular Σ), scaled to gross 1.
pub fn tangency(alpha: &[f64], sigma: &DMatrix<f64>) -> Option<Vec<f64>> {
    let a = DVector::from_column_slice(alpha);
    let w = match sigma.clone().cholesky() {
        Some(ch) => ch.solve(&a),
        None => sigma.clone().pseudo_inverse(1e-14).ok()? * a,
    };
    let w: Vec<f64> = w.iter().copied().collect();
    let g = gross(&w);
    if !(g > 0.0) || !g.is_finite() {
        return None;
    }
    Some(w.iter().map(|v| v / g).collect())
}

fn to_split(w: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|v| v.max(0.0))
        .chain(w.iter().map(|v| (-v).max(0.0)))
        .collect()
}

fn rescale(w: &[f64], target: f64) -> Vec<f64> {
    let g = gross(w);
    w.iter().map(|v| v * target / g).collect()
}

fn finish(
    w: Vec<f64>,
    alpha: &[f64],
    sigma: &DMatrix<f64>,
    status: SolverStatus,
    label: String,
    stationarity: f64,
    starts_converged: usize,
) -> OptimizedPortfolio {
    let wv = DVector::from_column_slice(&w);
    let var = (wv.transpose() * sigma * &wv)[(0, 0)].max(0.0);
    OptimizedPortfolio {
        ex_ante_vol: (TRADING_DAYS * var).sqrt(),
        objective_value: sharpe(&w, alpha, sigma),
        weights: w,
        status,
        constraint_set: label,
        stationarity,
        starts_converged,
    }
}

/// Maximises `w α / √(w Σ w')` over `min_gross ≤ Σ|w| ≤ max_gross`. The
/// objective is scale-free, so the best direction is searched on the unit
/// L1 ball and returned at `target_gross`.
pub fn max_sharpe(
    alpha: &[f64],
    sigma: &DMatrix<f64>,
    opts: &OptimizerOptions,
) -> Result<OptimizedPortfolio, PortfolioError> {
    solve(alpha, sigma, 0.0, opts)
}

/// [`max_sharpe`] with the extra constraint `√(252 · w Σ w') ≥ min_vol`.
/// Returns `INFEASIBLE_TARGET` (with the unconstrained solution) when no
/// portfolio within the gross cap reaches `min_vol`.
pub fn max_sharpe_risk_target(
    alpha: &[f64],
    sigma: &DMatrix<f64>,
    min_vol: f64,
    opts: &OptimizerOptions,
) -> Result<OptimizedPortfolio, PortfolioError> {
    if !(min_vol >= 0.0) {
        return Err(PortfolioError::Constraints(format!("min_vol must be >= 0, got {min_vol}")));
    }
    if min_vol == 0.0 {
        return max_sharpe(alpha, sigma, opts);
    }
    check_inputs(alpha, sigma)?;
    opts.check()?;
    // vol is convex in w, so over the L1 ball it peaks at a single full position
    let max_vol = opts.max_gross * (TRADING_DAYS * sigma.diagonal().max()).sqrt();
    if min_vol > max_vol {
        let mut out = max_sharpe(alpha, sigma, opts)?;
        out.status = SolverStatus::InfeasibleTarget;
        out.constraint_set = format!("{};vol>={min_vol}", opts.label());
        return Ok(out);
    }
    solve(alpha, sigma, min_vol, opts)
}

fn solve(
    alpha: &[f64],
    sigma: &DMatrix<f64>,
    min_vol: f64,
    opts: &OptimizerOptions,
) -> Result<OptimizedPortfolio, PortfolioError> {
    check_inputs(alpha, sigma)?;
    opts.check()?;
    // the search runs on the unit L1 ball, so the target is expressed there
    let unit_min_var = (min_vol / opts.max_gross).powi(2);
    let problem = Problem {
        alpha,
        sigma,
        min_var_ann: unit_min_var,
    };
    let label = if min_vol > 0.0 {
        format!("{};vol>={min_vol}", opts.label())
    } else {
        opts.label()
    };
    let mut best: Option<(f64, Vec<f64>, f64, bool)> = None;
    let mut converged = 0;
    for start in starting_points(alpha, sigma, opts.starts, opts.seed) {
        let mut x = to_split(&start);
        let (mut lambda, mut mu) = (0.0, 10.0);
        let rounds = if min_vol > 0.0 { 40 } else { 1 };
        for _ in 0..rounds {
            problem.ascend(&mut x, lambda, mu, opts.tolerance, opts.max_iter);
            if min_vol == 0.0 {
                break;
            }
            let w = problem.weights(&x);
            let wv = DVector::from_column_slice(&w);
            let var = (wv.transpose() * sigma * &wv)[(0, 0)];
            let h = TRADING_DAYS * var / unit_min_var - 1.0;
            lambda = (lambda - mu * h).max(0.0);
            if h >= -1e-9 && problem.residual(&x, lambda, mu) <= opts.tolerance {
                break;
            }
            mu = (mu * 2.0).min(1e8);
        }
        let w = problem.weights(&x);
        let resid = problem.residual(&x, lambda, mu);
        let feasible = if min_vol > 0.0 {
            let wv = DVector::from_column_slice(&w);
            let vol = (TRADING_DAYS * (wv.transpose() * sigma * &wv)[(0, 0)]).sqrt();
            vol >= min_vol / opts.max_gross - 1e-9
        } else {
            true
        };
        let ok = resid <= opts.tolerance && feasible && gross(&w) > 0.0;
        if ok {
            converged += 1;
        }
        let obj = sharpe(&w, alpha, sigma);
        let better = match &best {
            None => true,
            Some((b, _, _, bok)) => (ok && !bok) || (ok == *bok && obj > *b),
        };
        if better {
            best = Some((obj, w, resid, ok));
        }
    }
    let (_, w, resid, ok) = best.ok_or(PortfolioError::ZeroAlpha)?;
    if gross(&w) == 0.0 {
        return Err(PortfolioError::ZeroPortfolio);
    }
    let status = if ok { SolverStatus::Converged } else { SolverStatus::Failed };
    Ok(finish(rescale(&w, opts.target_gross), alpha, sigma, status, label, resid, converged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverseConfig {
    /// Assumed information coefficient for the alpha bounds.
    pub ic: f64,
    /// Score, in standard deviations, at the bound.
    pub score: f64,
    /// Push every alpha to its bound with the sign of the weight instead of
    /// using the stationarity direction.
    pub literal: bool,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        ReverseConfig {
            ic: 0.3,
            score: 3.0,
            literal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseResult {
    pub implied_alpha: Vec<f64>,
    /// Quintile rank 1..=5 of each implied alpha.
    pub ranks: Vec<u8>,
    /// One-hot forecast rows matching `ranks`.
    pub forecast: Vec<[f64; N_QUINTILES]>,
}

/// Quintile 1..=5 of each value by ascending position (ties broken by
/// index), position `p` of `N` going to `ceil(5p/N)`.
pub fn quintile_ranks(values: &[f64]) -> Vec<u8> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0u8; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = (N_QUINTILES * (pos + 1)).div_ceil(n) as u8;
    }
    ranks
}

/// Alphas under which `w` is Sharpe-optimal: `α ∝ Σw`, scaled so the
/// largest `|α_i| / b_i` equals 1 with `b_i = ic · score · √(252 Σ_ii)`.
pub fn reverse_optimize(
    w: &[f64],
    sigma: &DMatrix<f64>,
    cfg: &ReverseConfig,
) -> Result<ReverseResult, PortfolioError> {
    if sigma.nrows() != w.len() {
        return Err(PortfolioError::Dimension {
            expected: sigma.nrows(),
            got: w.len(),
        });
    }
    if gross(w) == 0.0 {
        return Err(PortfolioError::ZeroPortfolio);
    }
    let bounds: Vec<f64> = (0..w.len())
        .map(|i| cfg.ic * cfg.score * (TRADING_DAYS * sigma[(i, i)].max(0.0)).sqrt())
        .collect();
    let implied_alpha: Vec<f64> = if cfg.literal {
        w.iter()
            .zip(&bounds)
            .map(|(w, b)| if *w == 0.0 { 0.0 } else { w.signum() * b })
            .collect()
    } else {
        let sw = sigma * DVector::from_column_slice(w);
        let s = (0..w.len())
            .filter(|&i| sw[i] != 0.0)
            .map(|i| bounds[i] / sw[i].abs())
            .fold(f64::INFINITY, f64::min);
        if !s.is_finite() {
            return Err(PortfolioError::ZeroPortfolio);
        }
        sw.iter().map(|v| s * v).collect()
    };
    let ranks = quintile_ranks(&implied_alpha);
    let forecast = ranks
        .iter()
        .map(|&r| {
            let mut row = [0.0; N_QUINTILES];
            row[r as usize - 1] = 1.0;
            row
        })
        .collect();
    Ok(ReverseResult {
        implied_alpha,
        ranks,
        forecast,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcResult {
    pub ic: f64,
    /// Scores or returns were constant, so the IC is reported as 0.
    pub degenerate: bool,
}

/// Spearman correlation of scores with the returns that followed.
pub fn realized_ic(scores: &[f64], returns: &[f64]) -> IcResult {
    match spearman(scores, returns) {
        Some(ic) => IcResult { ic, degenerate: false },
        None => IcResult {
            ic: 0.0,
            degenerate: true,
        },
    }
}

/// One submission-period observation for the IC study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcStudyEntry {
    pub team_id: String,
    pub period: u32,
    pub ic: f64,
    pub submitted_risk: f64,
    pub optimal_risk: f64,
    pub submitted_return: f64,
    pub optimal_return: f64,
    pub submitted_ir: f64,
    pub optimal_ir: f64,
}

/// Medians for one IC quintile group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcQuintileRow {
    pub quintile: u8,
    pub count: usize,
    pub median_ic: f64,
    pub submitted_risk: f64,
    pub optimal_risk: f64,
    pub submitted_return: f64,
    pub optimal_return: f64,
    pub submitted_ir: f64,
    pub optimal_ir: f64,
}

/// Splits each period's entries into five IC groups (sizes differing by at
/// most one; entry of ascending position `r` of `n` lands in group
/// `floor(5r/n) + 1`).
pub fn ic_quintile_groups(entries: &[IcStudyEntry]) -> Vec<u8> {
    let mut groups = vec![0u8; entries.len()];
    let mut periods: Vec<u32> = entries.iter().map(|e| e.period).collect();
    periods.sort_unstable();
    periods.dedup();
    for p in periods {
        let mut idx: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].period == p).collect();
        idx.sort_by(|&a, &b| {
            entries[a]
                .ic
                .total_cmp(&entries[b].ic)
                .then_with(|| entries[a].team_id.cmp(&entries[b].team_id))
        });
        let n = idx.len();
        for (r, &i) in idx.iter().enumerate() {
            groups[i] = (N_QUINTILES * r / n) as u8 + 1;
        }
    }
    groups
}

/// Table of per-group medians, quintile 1 (lowest IC) first. Empty groups
/// are omitted.
pub fn ic_quintile_report(entries: &[IcStudyEntry]) -> Vec<IcQuintileRow> {
    let groups = ic_quintile_groups(entries);
    (1..=N_QUINTILES as u8)
        .filter_map(|q| {
            let members: Vec<&IcStudyEntry> = entries
                .iter()
                .zip(&groups)
                .filter(|(_, g)| **g == q)
                .map(|(e, _)| e)
                .collect();
            if members.is_empty() {
                return None;
            }
            let med = |f: fn(&IcStudyEntry) -> f64| median(&members.iter().map(|e| f(e)).collect::<Vec<_>>());
            Some(IcQuintileRow {
                quintile: q,
                count: members.len(),
                median_ic: med(|e| e.ic),
                submitted_risk: med(|e| e.submitted_risk),
                optimal_risk: med(|e| e.optimal_risk),
                submitted_return: med(|e| e.submitted_return),
                optimal_return: med(|e| e.optimal_return),
                submitted_ir: med(|e| e.submitted_ir),
                optimal_ir: med(|e| e.optimal_ir),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn score_examples() {
        let s = score_submission(&[[0.2; 5], [0.2; 5]]);
        assert_eq!(s, vec![0.0, 0.0]);
        let raw = [0.0, 0.1, 0.2, 0.5, 0.2]
            .iter()
            .enumerate()
            .map(|(k, p)| (k + 1) as f64 * p)
            .sum::<f64>();
        assert!((raw - 3.8).abs() < 1e-12);
        let s = score_submission(&[[0.0, 0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0, 0.0]]);
        assert!((s[0] - 1.0).abs() < 1e-12 && (s[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(linear_bayes_alpha(1.3, 0.0, 0.2), 0.0);
        assert!((linear_bayes_alpha(1.0, 0.1, 0.2) - 0.02).abs() < 1e-15);
        assert_eq!(linear_bayes_alpha(0.0, 0.1, 0.2), 0.0);
        let a = alpha_vector(&[1.0], 0.1, &[0.0004], true);
        assert!((a[0] - 0.1 * (252.0f64 * 0.0004).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tangency_two_assets() {
        let s = diag(&[0.04, 0.04]);
        let p = max_sharpe(&[0.02, 0.01], &s, &OptimizerOptions::default()).unwrap();
        assert_eq!(p.status, SolverStatus::Converged);
        assert!((p.weights[0] / p.weights[1] - 2.0).abs() < 1e-6);
        assert!((gross(&p.weights) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_cases() {
        let s = diag(&[0.01; 4]);
        let p = max_sharpe(&[0.05; 4], &s, &OptimizerOptions::default()).unwrap();
        for w in &p.weights {
            assert!((w - 0.25).abs() < 1e-6);
        }
        let s2 = diag(&[0.01; 2]);
        let p = max_sharpe(&[0.03, -0.03], &s2, &OptimizerOptions::default()).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-6 && (p.weights[1] + 0.5).abs() < 1e-6);
        assert!(matches!(max_sharpe(&[0.0, 0.0], &s2, &OptimizerOptions::default()), Err(PortfolioError::ZeroAlpha)));
    }

    #[test]
    fn risk_target_cases() {
        let s = diag(&[0.0001, 0.0004]);
        let a = [0.02, 0.01];
        let opts = OptimizerOptions::default();
        let plain = max_sharpe(&a, &s, &opts).unwrap();
        let zero = max_sharpe_risk_target(&a, &s, 0.0, &opts).unwrap();
        assert_eq!(plain, zero);
        let max_vol = (252.0f64 * 0.0004).sqrt();
        let inf = max_sharpe_risk_target(&a, &s, max_vol * 1.01, &opts).unwrap();
        assert_eq!(inf.status, SolverStatus::InfeasibleTarget);
        let target = 0.9 * max_vol;
        assert!(plain.ex_ante_vol < target);
        let t = max_sharpe_risk_target(&a, &s, target, &opts).unwrap();
        assert_eq!(t.status, SolverStatus::Converged, "{t:?}");
        assert!(t.ex_ante_vol >= target - 1e-6);
    }

    #[test]
    fn capped_simplex_projection() {
        let mut x = vec![0.5, 0.7, -0.2];
        project_capped_simplex(&mut x);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((x[0] - 0.4).abs() < 1e-15 && (x[1] - 0.6).abs() < 1e-15 && x[2] == 0.0);
        let mut y = vec![0.1, 0.2];
        project_capped_simplex(&mut y);
        assert_eq!(y, vec![0.1, 0.2]);
    }

    #[test]
    fn reverse_examples() {
        let s = diag(&[0.01; 5]);
        let w = [0.1, -0.3, 0.2, 0.05, 0.0];
        let r = reverse_optimize(&w, &s, &ReverseConfig::default()).unwrap();
        assert_eq!(r.ranks, vec![4, 1, 5, 3, 2]);
        let bound = 0.9 * (252.0f64 * 0.01).sqrt();
        let m = r.implied_alpha.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!((m - bound).abs() < 1e-12);
        let single = reverse_optimize(&[0.0, 0.0, 1.0, 0.0, 0.0], &s, &ReverseConfig::default()).unwrap();
        assert_eq!(single.ranks[2], 5);
        assert_eq!(single.forecast[2], [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(reverse_optimize(&[0.0; 5], &s, &ReverseConfig::default()).is_err());
        let lit = reverse_optimize(&w, &s, &ReverseConfig { literal: true, ..Default::default() }).unwrap();
        assert!((lit.implied_alpha[1] + bound).abs() < 1e-12);
    }

    #[test]
    fn ic_examples() {
        let r = [0.01, 0.03, -0.02, 0.05];
        assert!((realized_ic(&r, &r).ic - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        assert!((realized_ic(&neg, &r).ic + 1.0).abs() < 1e-12);
        let flat = realized_ic(&[1.0; 4], &r);
        assert!(flat.degenerate && flat.ic == 0.0);
    }

    #[test]
    fn ic_groups_balanced() {
        let entries: Vec<IcStudyEntry> = (0..23)
            .map(|i| IcStudyEntry {
                team_id: format!("t{i}"),
                period: 1,
                ic: (i as f64 * 0.37).sin(),
                submitted_risk: 0.1,
                optimal_risk: 0.05,
                submitted_return: 0.0,
                optimal_return: 0.0,
                submitted_ir: 0.0,
                optimal_ir: 0.0,
            })
            .collect();
        let g = ic_quintile_groups(&entries);
        let counts: Vec<usize> = (1..=5).map(|q| g.iter().filter(|&&x| x == q).count()).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(ic_quintile_report(&entries).len(), 5);
    }
}
