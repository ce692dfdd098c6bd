//! Panel data and expression evaluation.
//!
//! A [`Panel`] holds six raw feature matrices (days x assets) plus forward
//! return labels. [`evaluate`] turns a terminal expression tree into a
//! cross-sectionally normalized [`Signal`]. Rolling operators recompute each
//! window directly; at desk scale (D <= a few thousand) that is fast enough
//! and keeps the NaN policy obvious: the first rows inside the lookback are
//! NaN, and NaNs inside the valid region flow into the per-day imputation
//! pass of [`cross_normalize`].

use crate::formula::{BinaryOp, ExprTree, Feature, RollingBinaryOp, RollingUnaryOp, Token, UnaryOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const EPS: f64 = 1e-8;
/// Forward-return horizon in trading days, matching the backtest hold period.
pub const LABEL_HORIZON: usize = 20;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("rolling window {window} exceeds panel length {days}")]
    WindowExceedsPanel { window: usize, days: usize },
    #[error("invalid panel dimensions: days={days}, assets={assets}")]
    InvalidDimensions { days: usize, assets: usize },
    #[error("malformed csv at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense row-major days x assets matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn nan(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, f64::NAN)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map2(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }
}

/// Immutable panel of raw market data plus forward-return labels.
#[derive(Debug, Clone)]
pub struct Panel {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    pub open: Mat,
    pub high: Mat,
    pub low: Mat,
    pub close: Mat,
    pub vwap: Mat,
    pub volume: Mat,
    /// Forward returns, NaN where unknown (tail days, or before a planted
    /// signal's valid range).
    pub labels: Mat,
}

impl Panel {
    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn assets_len(&self) -> usize {
        self.assets.len()
    }

    pub fn feature(&self, f: Feature) -> &Mat {
        match f {
            Feature::Open => &self.open,
            Feature::High => &self.high,
            Feature::Low => &self.low,
            Feature::Close => &self.close,
            Feature::Vwap => &self.vwap,
            Feature::Volume => &self.volume,
        }
    }
}

/// A per-alpha output matrix, z-scored per day.
#[derive(Debug, Clone)]
pub struct Signal {
    pub values: Mat,
    /// First day index free of lookback contamination.
    pub valid_from: usize,
    /// Days whose cross-section was constant or all-NaN before imputation.
    pub degenerate_days: Vec<bool>,
}

impl Signal {
    /// True when no usable day remains: such an alpha gets the reward floor.
    pub fn is_degenerate(&self) -> bool {
        (self.valid_from..self.values.rows).all(|d| self.degenerate_days[d])
    }

    /// Day indices usable for metrics.
    pub fn valid_days(&self) -> impl Iterator<Item = usize> + '_ {
        (self.valid_from..self.values.rows).filter(move |&d| !self.degenerate_days[d])
    }
}

fn op_lookback(op: RollingUnaryOp, w: usize) -> usize {
    match op {
        RollingUnaryOp::Ref
        | RollingUnaryOp::TsDelta
        | RollingUnaryOp::TsDiv
        | RollingUnaryOp::TsPctChange => w,
        _ => w - 1,
    }
}

/// Total lookback depth of a tree, i.e. the `valid_from` of its signal.
pub fn lookback(tree: &ExprTree) -> usize {
    fn rec(tree: &ExprTree, idx: usize) -> usize {
        let node = &tree.nodes[idx];
        match node.token {
            Token::Feature(_) | Token::Window(_) | Token::Sep => 0,
            Token::Unary(_) => rec(tree, node.children[0]),
            Token::Binary(_) => node
                .children
                .iter()
                .map(|&c| rec(tree, c))
                .max()
                .unwrap_or(0),
            Token::RollingUnary(op) => {
                let w = window_of(tree, node.children[1]);
                rec(tree, node.children[0]) + op_lookback(op, w)
            }
            Token::RollingBinary(_) => {
                let w = window_of(tree, node.children[2]);
                let a = rec(tree, node.children[0]);
                let b = rec(tree, node.children[1]);
                a.max(b) + (w - 1)
            }
        }
    }
    rec(tree, tree.root)
}

fn window_of(tree: &ExprTree, idx: usize) -> usize {
    match tree.nodes[idx].token {
        Token::Window(w) => w as usize,
        _ => unreachable!("window child expected"),
    }
}

/// Evaluate a terminal tree against a panel and z-score the result per day.
pub fn evaluate(tree: &ExprTree, panel: &Panel) -> Result<Signal, EngineError> {
    let max_w = tree.max_window() as usize;
    if max_w > panel.days() {
        return Err(EngineError::WindowExceedsPanel {
            window: max_w,
            days: panel.days(),
        });
    }
    let raw = eval_node(tree, tree.root, panel);
    let (values, degenerate_days) = cross_normalize(&raw);
    Ok(Signal {
        values,
        valid_from: lookback(tree),
        degenerate_days,
    })
}

fn eval_node(tree: &ExprTree, idx: usize, panel: &Panel) -> Mat {
    let node = &tree.nodes[idx];
    match node.token {
        Token::Feature(f) => panel.feature(f).clone(),
        Token::Window(_) | Token::Sep => unreachable!("non-data node evaluated"),
        Token::Unary(op) => {
            let x = eval_node(tree, node.children[0], panel);
            unary_op(op, &x)
        }
        Token::Binary(op) => {
            let a = eval_node(tree, node.children[0], panel);
            let b = eval_node(tree, node.children[1], panel);
            binary_op(op, &a, &b)
        }
        Token::RollingUnary(op) => {
            let x = eval_node(tree, node.children[0], panel);
            let w = window_of(tree, node.children[1]);
            rolling_unary(op, &x, w)
        }
        Token::RollingBinary(op) => {
            let a = eval_node(tree, node.children[0], panel);
            let b = eval_node(tree, node.children[1], panel);
            let w = window_of(tree, node.children[2]);
            rolling_binary(op, &a, &b, w)
        }
    }
}

pub fn unary_op(op: UnaryOp, x: &Mat) -> Mat {
    match op {
        UnaryOp::Abs => x.map(f64::abs),
        UnaryOp::Slog1p => x.map(|v| v.signum() * v.abs().ln_1p()),
        UnaryOp::Inv => x.map(|v| 1.0 / (v + EPS.copysign(if v < 0.0 { -1.0 } else { 1.0 }))),
        UnaryOp::Sign => x.map(|v| if v.is_nan() { f64::NAN } else { v.signum() }),
        UnaryOp::Log => x.map(|v| (v + EPS).ln()),
        UnaryOp::Rank => cross_rank(x),
    }
}

/// Per-day average-rank transform mapped to [0, 1]; single valid value -> 0.5.
pub fn cross_rank(x: &Mat) -> Mat {
    let mut out = Mat::nan(x.rows, x.cols);
    for d in 0..x.rows {
        let row = x.row(d);
        let ranks = average_ranks(row);
        let n_valid = row.iter().filter(|v| !v.is_nan()).count();
        for c in 0..x.cols {
            if let Some(r) = ranks[c] {
                let v = if n_valid <= 1 {
                    0.5
                } else {
                    (r - 1.0) / (n_valid as f64 - 1.0)
                };
                out.set(d, c, v);
            }
        }
    }
    out
}

/// Average (tie-adjusted) 1-based ranks over the non-NaN entries of a slice.
pub fn average_ranks(values: &[f64]) -> Vec<Option<f64>> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![None; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = Some(avg);
        }
        i = j + 1;
    }
    out
}

pub fn binary_op(op: BinaryOp, a: &Mat, b: &Mat) -> Mat {
    match op {
        BinaryOp::Add => a.map2(b, |x, y| x + y),
        BinaryOp::Sub => a.map2(b, |x, y| x - y),
        BinaryOp::Mul => a.map2(b, |x, y| x * y),
        BinaryOp::Div => a.map2(b, |x, y| {
            x / (y + EPS.copysign(if y < 0.0 { -1.0 } else { 1.0 }))
        }),
        BinaryOp::Pow => a.map2(b, f64::powf),
        BinaryOp::Greater => a.map2(b, |x, y| {
            if x.is_nan() || y.is_nan() {
                f64::NAN
            } else {
                f64::from(u8::from(x > y))
            }
        }),
        BinaryOp::Less => a.map2(b, |x, y| {
            if x.is_nan() || y.is_nan() {
                f64::NAN
            } else {
                f64::from(u8::from(x < y))
            }
        }),
    }
}

fn window_slice<'a>(col: &'a [f64], d: usize, w: usize) -> Option<&'a [f64]> {
    (d + 1 >= w).then(|| &col[d + 1 - w..=d])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population central moment of given order.
fn central_moment(xs: &[f64], m: f64, order: u32) -> f64 {
    xs.iter().map(|&x| (x - m).powi(order as i32)).sum::<f64>() / xs.len() as f64
}

fn median_of(xs: &mut Vec<f64>) -> f64 {
    if xs.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// One rolling-unary window reduced to a value. Population moments are used
/// throughout, so window 1 gives zero variance rather than an undefined one.
fn rolling_unary_window(op: RollingUnaryOp, win: &[f64], current: f64, lagged: f64) -> f64 {
    match op {
        RollingUnaryOp::Ref => lagged,
        RollingUnaryOp::TsDelta => current - lagged,
        RollingUnaryOp::TsDiv => current / (lagged + EPS.copysign(if lagged < 0.0 { -1.0 } else { 1.0 })),
        RollingUnaryOp::TsPctChange => {
            (current - lagged) / (lagged + EPS.copysign(if lagged < 0.0 { -1.0 } else { 1.0 }))
        }
        RollingUnaryOp::TsMean => mean(win),
        RollingUnaryOp::TsSum => win.iter().sum(),
        RollingUnaryOp::TsStd => central_moment(win, mean(win), 2).sqrt(),
        RollingUnaryOp::TsVar => central_moment(win, mean(win), 2),
        RollingUnaryOp::TsIr => {
            let m = mean(win);
            m / (central_moment(win, m, 2).sqrt() + EPS)
        }
        RollingUnaryOp::TsMinMaxDiff => {
            let mx = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mn = win.iter().cloned().fold(f64::INFINITY, f64::min);
            mx - mn
        }
        RollingUnaryOp::TsMaxDiff => {
            current - win.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        }
        RollingUnaryOp::TsMinDiff => current - win.iter().cloned().fold(f64::INFINITY, f64::min),
        RollingUnaryOp::TsSkew => {
            let m = mean(win);
            let v = central_moment(win, m, 2);
            if v <= 0.0 {
                f64::NAN
            } else {
                central_moment(win, m, 3) / v.powf(1.5)
            }
        }
        RollingUnaryOp::TsKurt => {
            let m = mean(win);
            let v = central_moment(win, m, 2);
            if v <= 0.0 {
                f64::NAN
            } else {
                central_moment(win, m, 4) / (v * v) - 3.0
            }
        }
        RollingUnaryOp::TsMax => win.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        RollingUnaryOp::TsMin => win.iter().cloned().fold(f64::INFINITY, f64::min),
        RollingUnaryOp::TsMed => median_of(&mut win.to_vec()),
        RollingUnaryOp::TsMad => {
            let med = median_of(&mut win.to_vec());
            median_of(&mut win.iter().map(|&x| (x - med).abs()).collect())
        }
        RollingUnaryOp::TsRank => {
            let ranks = average_ranks(win);
            match ranks.last().copied().flatten() {
                Some(r) if win.len() > 1 => (r - 1.0) / (win.len() as f64 - 1.0),
                Some(_) => 0.5,
                None => f64::NAN,
            }
        }
        RollingUnaryOp::TsWma => {
            // weights w, w-1, ..., 1 with the largest on the newest value
            let w = win.len();
            let denom = (w * (w + 1)) as f64 / 2.0;
            win.iter()
                .enumerate()
                .map(|(i, &x)| (i + 1) as f64 * x)
                .sum::<f64>()
                / denom
        }
        RollingUnaryOp::TsEma => {
            let w = win.len();
            let alpha = 2.0 / (w as f64 + 1.0);
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, &x) in win.iter().enumerate() {
                // age of sample: newest (last) has age 0
                let coef = (1.0 - alpha).powi((w - 1 - i) as i32);
                num += coef * x;
                den += coef;
            }
            num / den
        }
    }
}

pub fn rolling_unary(op: RollingUnaryOp, x: &Mat, w: usize) -> Mat {
    assert!(w >= 1);
    let mut out = Mat::nan(x.rows, x.cols);
    let lb = op_lookback(op, w);
    for c in 0..x.cols {
        let col: Vec<f64> = (0..x.rows).map(|d| x.get(d, c)).collect();
        for d in lb..x.rows {
            let lagged = if d >= w { col[d - w] } else { f64::NAN };
            let v = match op {
                RollingUnaryOp::Ref
                | RollingUnaryOp::TsDelta
                | RollingUnaryOp::TsDiv
                | RollingUnaryOp::TsPctChange => {
                    rolling_unary_window(op, &[], col[d], col[d - w])
                }
                _ => match window_slice(&col, d, w) {
                    Some(win) if win.iter().all(|v| !v.is_nan()) => {
                        rolling_unary_window(op, win, col[d], lagged)
                    }
                    _ => f64::NAN,
                },
            };
            out.set(d, c, v);
        }
    }
    out
}

pub fn rolling_binary(op: RollingBinaryOp, a: &Mat, b: &Mat, w: usize) -> Mat {
    assert!(w >= 1);
    let mut out = Mat::nan(a.rows, a.cols);
    for c in 0..a.cols {
        let ca: Vec<f64> = (0..a.rows).map(|d| a.get(d, c)).collect();
        let cb: Vec<f64> = (0..b.rows).map(|d| b.get(d, c)).collect();
        for d in (w - 1)..a.rows {
            let (wa, wb) = match (window_slice(&ca, d, w), window_slice(&cb, d, w)) {
                (Some(x), Some(y)) => (x, y),
                _ => continue,
            };
            if wa.iter().chain(wb.iter()).any(|v| v.is_nan()) {
                continue;
            }
            let ma = mean(wa);
            let mb = mean(wb);
            let cov = wa
                .iter()
                .zip(wb)
                .map(|(&x, &y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / w as f64;
            let v = match op {
                RollingBinaryOp::TsCov => cov,
                RollingBinaryOp::TsCorr => {
                    let va = central_moment(wa, ma, 2);
                    let vb = central_moment(wb, mb, 2);
                    if va <= 0.0 || vb <= 0.0 {
                        f64::NAN
                    } else {
                        cov / (va * vb).sqrt()
                    }
                }
            };
            out.set(d, c, v);
        }
    }
    out
}

/// Per-day z-score with mean imputation of NaNs. Returns the normalized
/// matrix and a per-day degeneracy flag (constant or all-NaN rows become
/// zeros and are flagged).
pub fn cross_normalize(values: &Mat) -> (Mat, Vec<bool>) {
    let mut out = Mat::filled(values.rows, values.cols, 0.0);
    let mut degenerate = vec![false; values.rows];
    for d in 0..values.rows {
        let row = values.row(d);
        let valid: Vec<f64> = row.iter().copied().filter(|v| v.is_finite()).collect();
        if valid.is_empty() {
            degenerate[d] = true;
            continue;
        }
        let m_impute = mean(&valid);
        let imputed: Vec<f64> = row
            .iter()
            .map(|&v| if v.is_finite() { v } else { m_impute })
            .collect();
        let m = mean(&imputed);
        let sd = central_moment(&imputed, m, 2).sqrt();
        if sd < EPS {
            degenerate[d] = true;
            continue;
        }
        for (c, &v) in imputed.iter().enumerate() {
            out.set(d, c, (v - m) / sd);
        }
    }
    (out, degenerate)
}

/// Noise level that makes the planted signal's oracle IC approximately
/// `target` (cross-sectional unit-variance signal plus iid Gaussian noise).
pub fn sigma_for_oracle_ic(target: f64) -> f64 {
    assert!(target > 0.0 && target <= 1.0);
    (1.0 / (target * target) - 1.0).sqrt()
}

/// Deterministic geometric random-walk OHLCV panel. With a planted tree the
/// labels equal the planted alpha's normalized signal plus Gaussian noise,
/// so an oracle IC is available; otherwise labels are forward
/// `LABEL_HORIZON`-day simple returns.
pub fn generate_synthetic(
    seed: u64,
    days: usize,
    assets: usize,
    planted: Option<&ExprTree>,
    noise_sigma: f64,
) -> Result<Panel, EngineError> {
    if days < 100 || assets < 10 {
        return Err(EngineError::InvalidDimensions {
            days,
            assets,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut close = Mat::nan(days, assets);
    let mut open = Mat::nan(days, assets);
    let mut high = Mat::nan(days, assets);
    let mut low = Mat::nan(days, assets);
    let mut vwap = Mat::nan(days, assets);
    let mut volume = Mat::nan(days, assets);
    for a in 0..assets {
        let mut level: f64 = 100.0 * (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
        let drift: f64 = 0.0002 * rng.sample::<f64, _>(StandardNormal);
        let vol_base: f64 = 10.0 + rng.gen_range(0.0..2.0);
        for d in 0..days {
            let prev = level;
            let r: f64 = rng.sample::<f64, _>(StandardNormal);
            level *= (drift + 0.02 * r).exp();
            let gap: f64 = rng.sample::<f64, _>(StandardNormal);
            let o = prev * (0.005 * gap).exp();
            let c = level;
            let hi_n: f64 = rng.sample::<f64, _>(StandardNormal);
            let lo_n: f64 = rng.sample::<f64, _>(StandardNormal);
            let h = o.max(c) * (0.008 * hi_n.abs()).exp();
            let l = o.min(c) * (-0.008 * lo_n.abs()).exp();
            let vw = (o + c + h + l) / 4.0;
            let vn: f64 = rng.sample::<f64, _>(StandardNormal);
            let v = (vol_base + vn).exp();
            open.set(d, a, o);
            close.set(d, a, c);
            high.set(d, a, h);
            low.set(d, a, l);
            vwap.set(d, a, vw);
            volume.set(d, a, v);
        }
    }
    let dates = (0..days).map(|d| format!("{:06}", d + 1)).collect();
    let asset_names = (0..assets).map(|a| format!("A{a:04}")).collect();
    let mut panel = Panel {
        dates,
        assets: asset_names,
        open,
        high,
        low,
        close,
        vwap,
        volume,
        labels: Mat::nan(days, assets),
    };
    match planted {
        Some(tree) => {
            let sig = evaluate(tree, &panel)?;
            let mut labels = Mat::nan(days, assets);
            for d in sig.valid_days() {
                for a in 0..assets {
                    let n: f64 = rng.sample::<f64, _>(StandardNormal);
                    labels.set(d, a, sig.values.get(d, a) + noise_sigma * n);
                }
            }
            panel.labels = labels;
        }
        None => {
            let mut labels = Mat::nan(days, assets);
            for d in 0..days.saturating_sub(LABEL_HORIZON + 1) {
                for a in 0..assets {
                    let p0 = panel.close.get(d + 1, a);
                    let p1 = panel.close.get(d + 1 + LABEL_HORIZON, a);
                    labels.set(d, a, p1 / p0 - 1.0);
                }
            }
            panel.labels = labels;
        }
    }
    Ok(panel)
}

/// Write the long-format panel CSV with a trailing `label` column (empty
/// where unknown) so generated labels survive a round trip.
pub fn write_panel_csv(panel: &Panel, path: &Path) -> Result<(), EngineError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "date,asset,open,high,low,close,vwap,volume,label")?;
    for d in 0..panel.days() {
        for a in 0..panel.assets_len() {
            let y = panel.labels.get(d, a);
            let label = if y.is_nan() { String::new() } else { y.to_string() };
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                panel.dates[d],
                panel.assets[a],
                panel.open.get(d, a),
                panel.high.get(d, a),
                panel.low.get(d, a),
                panel.close.get(d, a),
                panel.vwap.get(d, a),
                panel.volume.get(d, a),
                label,
            )?;
        }
    }
    Ok(())
}

/// Read a long-format panel CSV. Missing (date, asset) cells stay NaN.
/// A trailing `label` column (as written by `write_panel_csv`) is used
/// directly when present; otherwise labels are forward `LABEL_HORIZON`-day
/// returns computed from close.
pub fn read_panel_csv(path: &Path) -> Result<Panel, EngineError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows: Vec<(String, String, [f64; 7])> = Vec::new();
    let mut has_label = false;
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            let base = "date,asset,open,high,low,close,vwap,volume";
            match line.trim() {
                h if h == base => {}
                h if h == format!("{base},label") => has_label = true,
                _ => {
                    return Err(EngineError::MalformedCsv {
                        line: 1,
                        reason: format!("expected header '{base}' (optionally with ',label')"),
                    })
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let want = if has_label { 9 } else { 8 };
        if parts.len() != want {
            return Err(EngineError::MalformedCsv {
                line: lineno + 1,
                reason: format!("expected {want} fields, got {}", parts.len()),
            });
        }
        let mut vals = [f64::NAN; 7];
        for (i, p) in parts[2..].iter().enumerate() {
            if i == 6 && p.trim().is_empty() {
                continue; // unknown label
            }
            vals[i] = p.trim().parse::<f64>().map_err(|e| EngineError::MalformedCsv {
                line: lineno + 1,
                reason: e.to_string(),
            })?;
        }
        rows.push((parts[0].to_string(), parts[1].to_string(), vals));
    }
    let mut dates: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    dates.sort();
    dates.dedup();
    let mut assets: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    assets.sort();
    assets.dedup();
    let days = dates.len();
    let n = assets.len();
    if days == 0 || n == 0 {
        return Err(EngineError::MalformedCsv {
            line: 0,
            reason: "no data rows".into(),
        });
    }
    let didx: std::collections::HashMap<&str, usize> =
        dates.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let aidx: std::collections::HashMap<&str, usize> =
        assets.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let mut mats = [
        Mat::nan(days, n),
        Mat::nan(days, n),
        Mat::nan(days, n),
        Mat::nan(days, n),
        Mat::nan(days, n),
        Mat::nan(days, n),
        Mat::nan(days, n),
    ];
    for (date, asset, vals) in &rows {
        let d = didx[date.as_str()];
        let a = aidx[asset.as_str()];
        for (m, &v) in mats.iter_mut().zip(vals) {
            m.set(d, a, v);
        }
    }
    let [open, high, low, close, vwap, volume, mut labels] = mats;
    if !has_label {
        for d in 0..days.saturating_sub(LABEL_HORIZON + 1) {
            for a in 0..n {
                let p0 = close.get(d + 1, a);
                let p1 = close.get(d + 1 + LABEL_HORIZON, a);
                labels.set(d, a, p1 / p0 - 1.0);
            }
        }
    }
    Ok(Panel {
        dates,
        assets,
        open,
        high,
        low,
        close,
        vwap,
        volume,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{parse_rpn, Vocabulary};

    fn small_panel() -> Panel {
        // 3 days, 2 assets, hand-checkable closes
        let close = Mat {
            rows: 3,
            cols: 2,
            data: vec![10.0, 20.0, 11.0, 19.0, 12.5, 18.0],
        };
        Panel {
            dates: vec!["d1".into(), "d2".into(), "d3".into()],
            assets: vec!["a".into(), "b".into()],
            open: close.clone(),
            high: close.map(|v| v * 1.01),
            low: close.map(|v| v * 0.99),
            vwap: close.clone(),
            volume: Mat::filled(3, 2, 1000.0),
            close,
            labels: Mat::nan(3, 2),
        }
    }

    #[test]
    fn ts_delta_matches_hand_computation() {
        let v = Vocabulary::full();
        let tree = parse_rpn(&v, "close 1 TsDelta").unwrap();
        let panel = small_panel();
        let raw = eval_node(&tree, tree.root, &panel);
        assert!(raw.get(0, 0).is_nan());
        assert_eq!(raw.get(1, 0), 1.0);
        assert_eq!(raw.get(1, 1), -1.0);
        assert_eq!(raw.get(2, 0), 1.5);
        assert_eq!(raw.get(2, 1), -1.0);
        assert_eq!(lookback(&tree), 1);
    }

    #[test]
    fn sign_of_positive_prices_is_degenerate() {
        let v = Vocabulary::full();
        let tree = parse_rpn(&v, "close Sign").unwrap();
        let sig = evaluate(&tree, &small_panel()).unwrap();
        assert!(sig.is_degenerate());
    }

    #[test]
    fn rank_of_three_values() {
        let x = Mat {
            rows: 1,
            cols: 3,
            data: vec![3.0, 1.0, 2.0],
        };
        let r = cross_rank(&x);
        assert_eq!(r.row(0), &[1.0, 0.0, 0.5]);
    }

    #[test]
    fn ts_sum_window_one_is_identity() {
        let x = Mat {
            rows: 4,
            cols: 1,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let y = rolling_unary(RollingUnaryOp::TsSum, &x, 1);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn ts_max_small_example() {
        let x = Mat {
            rows: 3,
            cols: 1,
            data: vec![1.0, 3.0, 2.0],
        };
        let y = rolling_unary(RollingUnaryOp::TsMax, &x, 2);
        assert!(y.get(0, 0).is_nan());
        assert_eq!(y.get(1, 0), 3.0);
        assert_eq!(y.get(2, 0), 3.0);
    }

    #[test]
    fn ts_corr_self_is_one() {
        let x = Mat {
            rows: 6,
            cols: 1,
            data: vec![1.0, 2.0, 1.5, 3.0, 2.5, 4.0],
        };
        let y = rolling_binary(RollingBinaryOp::TsCorr, &x, &x, 3);
        for d in 2..6 {
            assert!((y.get(d, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_normalize_examples() {
        let x = Mat {
            rows: 3,
            cols: 3,
            data: vec![1.0, 2.0, 3.0, 5.0, 5.0, 5.0, 1.0, f64::NAN, 3.0],
        };
        let (z, degen) = cross_normalize(&x);
        assert!((z.get(0, 0) + 1.224744871391589).abs() < 1e-6);
        assert!((z.get(0, 1)).abs() < 1e-12);
        assert!((z.get(0, 2) - 1.224744871391589).abs() < 1e-6);
        assert!(degen[1]);
        assert_eq!(z.row(1), &[0.0, 0.0, 0.0]);
        // NaN imputed with day mean 2.0, then z-scored like [1,2,3]
        assert!(!degen[2]);
        assert!((z.get(2, 1)).abs() < 1e-12);
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let p1 = generate_synthetic(7, 120, 12, None, 0.0).unwrap();
        let p2 = generate_synthetic(7, 120, 12, None, 0.0).unwrap();
        assert_eq!(p1.close.data, p2.close.data);
        for d in 0..p1.days() {
            for a in 0..p1.assets_len() {
                let (o, h, l, c) = (
                    p1.open.get(d, a),
                    p1.high.get(d, a),
                    p1.low.get(d, a),
                    p1.close.get(d, a),
                );
                assert!(h >= o.max(c));
                assert!(l <= o.min(c));
                assert!(l > 0.0);
                assert!(p1.volume.get(d, a) >= 0.0);
            }
        }
        assert!(generate_synthetic(1, 50, 5, None, 0.0).is_err());
    }

    #[test]
    fn planted_labels_with_zero_noise_equal_signal() {
        let v = Vocabulary::full();
        let tree = parse_rpn(&v, "close 10 TsDelta").unwrap();
        let panel = generate_synthetic(3, 150, 15, Some(&tree), 0.0).unwrap();
        let sig = evaluate(&tree, &panel).unwrap();
        for d in sig.valid_days() {
            for a in 0..panel.assets_len() {
                assert!((panel.labels.get(d, a) - sig.values.get(d, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let panel = generate_synthetic(11, 110, 10, None, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        write_panel_csv(&panel, &path).unwrap();
        let back = read_panel_csv(&path).unwrap();
        assert_eq!(back.dates, panel.dates);
        assert_eq!(back.assets, panel.assets);
        assert_eq!(back.close.data, panel.close.data);
    }

    #[test]
    fn lookahead_freedom_of_rolling_ops() {
        // permuting rows after day d must not change output at day d
        let x = Mat {
            rows: 10,
            cols: 1,
            data: (0..10).map(|i| (i as f64).sin() + i as f64 * 0.1).collect(),
        };
        let mut fut = x.clone();
        fut.data[7..].reverse();
        for op in RollingUnaryOp::ALL {
            let a = rolling_unary(op, &x, 3);
            let b = rolling_unary(op, &fut, 3);
            for d in 0..7 {
                let (va, vb) = (a.get(d, 0), b.get(d, 0));
                assert!(va == vb || (va.is_nan() && vb.is_nan()), "{op:?} day {d}");
            }
        }
    }
}
