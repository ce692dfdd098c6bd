//! Evaluation metrics: daily information coefficients, their information
//! ratios, and a holding-period backtest with overlapping tranches.

use crate::engine::{average_ranks, Mat, Panel, Signal, EPS, LABEL_HORIZON};
use std::io::Write;
use std::path::Path;

/// Pearson correlation across assets for one day, over pairs where both
/// sides are finite. `None` when fewer than two pairs or either side is
/// constant.
pub fn daily_ic(signal: &[f64], labels: &[f64]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = signal
        .iter()
        .zip(labels)
        .filter(|(s, l)| s.is_finite() && l.is_finite())
        .map(|(&s, &l)| (s, l))
        .collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (ms, ml) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / n,
        pairs.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let (mut cov, mut vs, mut vl) = (0.0f64, 0.0f64, 0.0f64);
    for (s, l) in &pairs {
        cov += (s - ms) * (l - ml);
        vs += (s - ms) * (s - ms);
        vl += (l - ml) * (l - ml);
    }
    if vs < EPS * EPS || vl < EPS * EPS {
        return None;
    }
    Some(cov / (vs.sqrt() * vl.sqrt()))
}

/// Spearman correlation: Pearson on average ranks.
pub fn daily_rank_ic(signal: &[f64], labels: &[f64]) -> Option<f64> {
    let keep: Vec<bool> = signal
        .iter()
        .zip(labels)
        .map(|(s, l)| s.is_finite() && l.is_finite())
        .collect();
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .zip(&keep)
            .map(|(&x, &k)| if k { x } else { f64::NAN })
            .collect()
    };
    let rs: Vec<f64> = average_ranks(&mask(signal))
        .into_iter()
        .map(|r| r.unwrap_or(f64::NAN))
        .collect();
    let rl: Vec<f64> = average_ranks(&mask(labels))
        .into_iter()
        .map(|r| r.unwrap_or(f64::NAN))
        .collect();
    daily_ic(&rs, &rl)
}

#[derive(Debug, Clone, Copy)]
pub struct CorrelationMetrics {
    pub ic: f64,
    pub icir: f64,
    pub rank_ic: f64,
    pub rank_icir: f64,
    pub days: usize,
}

fn mean_over_std(series: &[f64]) -> (f64, f64) {
    if series.is_empty() {
        return (0.0, 0.0);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd < EPS { 0.0 } else { mean / sd })
}

/// Mean daily IC / RankIC and their information ratios over the signal's
/// valid days.
pub fn correlation_metrics(signal: &Signal, labels: &Mat) -> CorrelationMetrics {
    let mut ics = Vec::new();
    let mut rics = Vec::new();
    for d in signal.valid_days() {
        if let Some(c) = daily_ic(signal.values.row(d), labels.row(d)) {
            ics.push(c);
        }
        if let Some(c) = daily_rank_ic(signal.values.row(d), labels.row(d)) {
            rics.push(c);
        }
    }
    let (ic, icir) = mean_over_std(&ics);
    let (rank_ic, rank_icir) = mean_over_std(&rics);
    CorrelationMetrics {
        ic,
        icir,
        rank_ic,
        rank_icir,
        days: ics.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BacktestMode {
    /// Equal-weight long the top 20% by signal.
    LongOnly,
    /// Long the top decile, short the bottom decile, half capital each leg.
    LongShort,
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    /// Wealth curve, starting at 1.0 on the first accounted day.
    pub wealth: Vec<f64>,
    pub daily_returns: Vec<f64>,
    /// Date index of the first wealth point.
    pub start_day: usize,
    pub total_return: f64,
    pub annualized_return: f64,
    pub annualized_vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
}

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Largest peak-to-trough loss of a wealth curve, as a non-positive number.
pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &w in wealth {
        peak = peak.max(w);
        worst = worst.min(w / peak - 1.0);
    }
    worst
}

fn select(signal_row: &[f64], frac: f64, bottom: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..signal_row.len())
        .filter(|&i| signal_row[i].is_finite())
        .collect();
    idx.sort_by(|&a, &b| signal_row[a].partial_cmp(&signal_row[b]).unwrap());
    let k = ((idx.len() as f64 * frac).floor() as usize).max(1).min(idx.len());
    if bottom {
        idx.truncate(k);
    } else {
        idx = idx.split_off(idx.len() - k);
    }
    idx
}

fn basket_return(returns: &[f64], basket: &[usize]) -> f64 {
    let vals: Vec<f64> = basket
        .iter()
        .map(|&a| returns[a])
        .filter(|r| r.is_finite())
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Simulate trading the signal. Each day a new tranche worth `1/horizon` of
/// capital is opened from that day's closing cross-section and held for
/// `horizon` days; daily portfolio return is the sum over active tranches of
/// their close-to-close basket returns. Wealth compounds multiplicatively.
pub fn backtest(
    panel: &Panel,
    signal: &Signal,
    mode: BacktestMode,
    horizon: usize,
    cost_bps: f64,
) -> BacktestResult {
    let days = panel.days();
    let n = panel.assets_len();
    let h = horizon.max(1);
    // day-over-day close returns
    let mut rets = Mat::nan(days, n);
    for d in 1..days {
        for a in 0..n {
            let (p0, p1) = (panel.close.get(d - 1, a), panel.close.get(d, a));
            if p0.is_finite() && p1.is_finite() && p0 > 0.0 {
                rets.set(d, a, p1 / p0 - 1.0);
            }
        }
    }
    // baskets opened per day
    let mut baskets: Vec<Option<(Vec<usize>, Vec<usize>)>> = vec![None; days];
    for d in signal.valid_days() {
        let row = signal.values.row(d);
        let b = match mode {
            BacktestMode::LongOnly => (select(row, 0.2, false), Vec::new()),
            BacktestMode::LongShort => (select(row, 0.1, false), select(row, 0.1, true)),
        };
        baskets[d] = Some(b);
    }
    let start_day = signal.valid_from + 1;
    let mut wealth = vec![1.0];
    let mut daily_returns = Vec::new();
    for t in start_day..days {
        let mut r = 0.0;
        for back in 1..=h {
            let Some(open_day) = t.checked_sub(back) else { break };
            let Some((long, short)) = &baskets[open_day] else { continue };
            let mut tranche = match mode {
                BacktestMode::LongOnly => basket_return(rets.row(t), long),
                BacktestMode::LongShort => {
                    0.5 * (basket_return(rets.row(t), long) - basket_return(rets.row(t), short))
                }
            };
            if back == 1 {
                // round-trip cost charged when the tranche opens
                tranche -= 2.0 * cost_bps * 1e-4;
            }
            r += tranche / h as f64;
        }
        daily_returns.push(r);
        wealth.push(wealth.last().unwrap() * (1.0 + r));
    }
    let total_return = wealth.last().unwrap() - 1.0;
    let span = daily_returns.len().max(1) as f64;
    let annualized_return = wealth
        .last()
        .unwrap()
        .powf(TRADING_DAYS_PER_YEAR / span)
        - 1.0;
    let (mean, _) = mean_over_std(&daily_returns);
    let var = daily_returns
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / span;
    let annualized_vol = var.sqrt() * TRADING_DAYS_PER_YEAR.sqrt();
    let sharpe = if var.sqrt() < EPS {
        0.0
    } else {
        mean / var.sqrt() * TRADING_DAYS_PER_YEAR.sqrt()
    };
    BacktestResult {
        max_drawdown: max_drawdown(&wealth),
        wealth,
        daily_returns,
        start_day,
        total_return,
        annualized_return,
        annualized_vol,
        sharpe,
    }
}

/// Default holding horizon, matching the label horizon.
pub const DEFAULT_HORIZON: usize = LABEL_HORIZON;

/// Wealth curve as `date,ret,wealth` CSV, one row per accounted day;
/// values are printed with `{}` so they re-parse to identical doubles.
pub fn write_wealth_csv(
    path: &Path,
    dates: &[String],
    result: &BacktestResult,
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "date,ret,wealth")?;
    for (i, r) in result.daily_returns.iter().enumerate() {
        let d = (result.start_day + i).min(dates.len() - 1);
        writeln!(f, "{},{},{}", dates[d], r, result.wealth[i + 1])?;
    }
    Ok(())
}
