//! The mined-alpha pool, the periodic linear recombination into a single
//! composite signal, and estimator-variance diagnostics for the pool's
//! correlation structure.

use crate::engine::{cross_normalize, Mat, Signal, EPS, LABEL_HORIZON};
use crate::formula::ExprTree;
use crate::metrics::daily_ic;
use nalgebra::{DMatrix, DVector};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 50;
pub const DEFAULT_REBALANCE: usize = 20;
pub const DEFAULT_LOOKBACK: usize = 252;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pool is empty")]
    Empty,
    #[error("need at least two entries for diagnostics")]
    TooSmall,
    #[error("no trailing window with valid rows")]
    NoValidRows,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed pool file at line {0}")]
    MalformedPoolFile(usize),
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub tree: ExprTree,
    pub canonical: String,
    pub embedding: Vec<f64>,
    pub signal: Signal,
    pub r_ic: f64,
    pub admit_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmitOutcome {
    Added,
    /// Entry replaced the weakest member; payload is the evicted index's
    /// former canonical position.
    Replaced(usize),
    Duplicate,
    /// Pool full and the candidate is no better than the weakest member.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct AlphaPool {
    pub capacity: usize,
    pub entries: Vec<PoolEntry>,
}

impl AlphaPool {
    pub fn new(capacity: usize) -> Self {
        AlphaPool {
            capacity: capacity.max(1),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.entries.iter().any(|e| e.canonical == canonical)
    }

    /// Insert an entry, deduplicating on canonical form and evicting the
    /// lowest-`r_ic` member when at capacity.
    pub fn insert(&mut self, entry: PoolEntry) -> AdmitOutcome {
        if self.contains(&entry.canonical) {
            return AdmitOutcome::Duplicate;
        }
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
            return AdmitOutcome::Added;
        }
        let (weakest, _) = self
            .entries
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.r_ic.partial_cmp(&b.1.r_ic).unwrap())
            .unwrap();
        if entry.r_ic <= self.entries[weakest].r_ic {
            return AdmitOutcome::Rejected;
        }
        self.entries[weakest] = entry;
        AdmitOutcome::Replaced(weakest)
    }

    pub fn max_r_ic(&self) -> f64 {
        self.entries.iter().map(|e| e.r_ic).fold(0.0, f64::max)
    }

    /// One line per entry: canonical RPN, admission step, r_ic.
    pub fn write_csv(&self, path: &Path) -> Result<(), PoolError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "rpn,admit_step,r_ic")?;
        for e in &self.entries {
            writeln!(f, "{},{},{}", e.canonical, e.admit_step, e.r_ic)?;
        }
        Ok(())
    }
}

/// Parse a pool export back into (rpn, admit_step, r_ic) rows; signals and
/// embeddings are recomputed by the caller against its panel/network.
pub fn read_pool_csv(path: &Path) -> Result<Vec<(String, u64, f64)>, PoolError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.rsplitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(PoolError::MalformedPoolFile(i + 1));
        }
        let r_ic: f64 = parts[0].parse().map_err(|_| PoolError::MalformedPoolFile(i + 1))?;
        let step: u64 = parts[1].parse().map_err(|_| PoolError::MalformedPoolFile(i + 1))?;
        rows.push((parts[2].to_string(), step, r_ic));
    }
    Ok(rows)
}

/// Per-rebalance-date weights over all pool entries (zeros where not
/// selected).
#[derive(Debug, Clone)]
pub struct WeightSchedule {
    pub dates: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

pub fn write_weights_csv(
    path: &Path,
    panel_dates: &[String],
    schedule: &WeightSchedule,
    n_entries: usize,
) -> Result<(), PoolError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..n_entries).map(|i| format!("alpha{i}")).collect();
    writeln!(f, "date,{}", header.join(","))?;
    for (d, w) in schedule.dates.iter().zip(&schedule.weights) {
        let row: Vec<String> = w.iter().map(|x| format!("{x}")).collect();
        writeln!(f, "{},{}", panel_dates[*d], row.join(","))?;
    }
    Ok(())
}

/// Periodically re-select the entries with the strongest trailing |IC|,
/// refit linear weights of their signals against the labels over the
/// trailing window (ridge-stabilized), and emit the weighted sum as the
/// composite signal. Label rows within the forward-return horizon of the
/// rebalance date are excluded from the fit so no future prices leak in.
pub fn combine_mega_alpha(
    signals: &[&Signal],
    labels: &Mat,
    rebalance: usize,
    lookback: usize,
    top_k: usize,
) -> Result<(Signal, WeightSchedule), PoolError> {
    if signals.is_empty() {
        return Err(PoolError::Empty);
    }
    let days = labels.rows;
    let n_assets = labels.cols;
    let base_valid = signals.iter().map(|s| s.valid_from).max().unwrap();
    let rebalance = rebalance.max(1);
    // first date with at least one usable trailing label row
    let first = base_valid + LABEL_HORIZON + 1;
    if first >= days {
        return Err(PoolError::NoValidRows);
    }
    let mut combined = Mat::nan(days, n_assets);
    let mut schedule = WeightSchedule {
        dates: Vec::new(),
        weights: Vec::new(),
    };
    let mut d = first;
    while d < days {
        let window_end = d - LABEL_HORIZON; // exclusive
        let window_start = window_end.saturating_sub(lookback).max(base_valid);
        let window: Vec<usize> = (window_start..window_end)
            .filter(|&t| signals.iter().all(|s| !s.degenerate_days[t]))
            .collect();
        let span_end = (d + rebalance).min(days);
        if window.is_empty() {
            d = span_end;
            continue;
        }
        // trailing |IC| ranking
        let mut scored: Vec<(usize, f64)> = signals
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let ics: Vec<f64> = window
                    .iter()
                    .filter_map(|&t| daily_ic(s.values.row(t), labels.row(t)))
                    .collect();
                let m = if ics.is_empty() {
                    0.0
                } else {
                    (ics.iter().sum::<f64>() / ics.len() as f64).abs()
                };
                (i, m)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        scored.truncate(top_k.max(1));
        let chosen: Vec<usize> = scored.iter().map(|&(i, _)| i).collect();
        let k = chosen.len();
        // stack (day, asset) observations
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for &t in &window {
            for a in 0..n_assets {
                let y = labels.get(t, a);
                if !y.is_finite() {
                    continue;
                }
                let row: Vec<f64> = chosen.iter().map(|&i| signals[i].values.get(t, a)).collect();
                if row.iter().any(|v| !v.is_finite()) {
                    continue;
                }
                xs.extend(row);
                ys.push(y);
            }
        }
        if ys.is_empty() {
            d = span_end;
            continue;
        }
        let x = DMatrix::from_row_slice(ys.len(), k, &xs);
        let y = DVector::from_vec(ys);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * y;
        let eps = 1e-6 * xtx.trace() / k as f64;
        let reg = &xtx + DMatrix::identity(k, k) * eps;
        let w = reg
            .clone()
            .cholesky()
            .map(|c| c.solve(&xty))
            .unwrap_or_else(|| reg.lu().solve(&xty).unwrap_or_else(|| DVector::zeros(k)));
        let mut full = vec![0.0; signals.len()];
        for (j, &i) in chosen.iter().enumerate() {
            full[i] = w[j];
        }
        schedule.dates.push(d);
        schedule.weights.push(full);
        for t in d..span_end {
            for a in 0..n_assets {
                let mut v = 0.0;
                let mut ok = true;
                for (j, &i) in chosen.iter().enumerate() {
                    let z = signals[i].values.get(t, a);
                    if !z.is_finite() {
                        ok = false;
                        break;
                    }
                    v += w[j] * z;
                }
                if ok {
                    combined.set(t, a, v);
                }
            }
        }
        d = span_end;
    }
    if schedule.dates.is_empty() {
        return Err(PoolError::NoValidRows);
    }
    let (normalized, degenerate_days) = cross_normalize(&combined);
    Ok((
        Signal {
            values: normalized,
            valid_from: first,
            degenerate_days,
        },
        schedule,
    ))
}

#[derive(Debug, Clone)]
pub struct DiversityReport {
    /// Pairwise signal correlation matrix with unit diagonal.
    pub corr: DMatrix<f64>,
    /// Eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub kappa2: f64,
    /// tr Var of the OLS solution: (σ²/T) Σ 1/λ_i.
    pub trace_variance: f64,
    /// In-sample fitted-risk identity σ²·N.
    pub in_sample_risk: f64,
    /// Out-of-sample prediction risk σ²(1 + N/T).
    pub prediction_risk: f64,
    /// Variance inflation factor per entry: diagonal of Σ⁻¹.
    pub vif: Vec<f64>,
    /// λ_min below tolerance: OLS quantities reported from the pseudo-limit.
    pub singular: bool,
}

/// Correlation matrix of the pool signals across shared valid (day, asset)
/// observations.
pub fn signal_correlation_matrix(signals: &[&Signal]) -> DMatrix<f64> {
    let n = signals.len();
    let days = signals.iter().map(|s| s.values.rows).min().unwrap_or(0);
    let from = signals.iter().map(|s| s.valid_from).max().unwrap_or(0);
    let cols = signals.first().map(|s| s.values.cols).unwrap_or(0);
    let mut obs: Vec<Vec<f64>> = vec![Vec::new(); n];
    for d in from..days {
        if signals.iter().any(|s| s.degenerate_days[d]) {
            continue;
        }
        for a in 0..cols {
            if signals.iter().all(|s| s.values.get(d, a).is_finite()) {
                for (i, s) in signals.iter().enumerate() {
                    obs[i].push(s.values.get(d, a));
                }
            }
        }
    }
    let mut corr = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = daily_ic(&obs[i], &obs[j]).unwrap_or(0.0);
            corr[(i, j)] = c;
            corr[(j, i)] = c;
        }
    }
    corr
}

fn eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| b.partial_cmp(a).unwrap());
    e
}

/// Estimator-variance diagnostics for a pool correlation structure.
pub fn variance_diagnostics(
    signals: &[&Signal],
    sigma2: f64,
    t: usize,
) -> Result<DiversityReport, PoolError> {
    if signals.len() < 2 {
        return Err(PoolError::TooSmall);
    }
    let corr = signal_correlation_matrix(signals);
    Ok(diagnostics_from_corr(corr, sigma2, t))
}

/// Same report computed directly from a correlation matrix (used by tests
/// and the CLI report on synthetic structures).
pub fn diagnostics_from_corr(corr: DMatrix<f64>, sigma2: f64, t: usize) -> DiversityReport {
    let n = corr.nrows();
    let eigenvalues = eigenvalues_desc(&corr);
    let lam_max = eigenvalues[0];
    let lam_min = *eigenvalues.last().unwrap();
    let singular = lam_min <= EPS;
    let kappa2 = if singular { f64::INFINITY } else { lam_max / lam_min };
    let trace_variance = if singular {
        f64::INFINITY
    } else {
        sigma2 / t as f64 * eigenvalues.iter().map(|l| 1.0 / l).sum::<f64>()
    };
    let vif = if singular {
        vec![f64::INFINITY; n]
    } else {
        let inv = corr.clone().try_inverse().unwrap();
        (0..n).map(|i| inv[(i, i)]).collect()
    };
    DiversityReport {
        corr,
        eigenvalues,
        kappa2,
        trace_variance,
        in_sample_risk: sigma2 * n as f64,
        prediction_risk: sigma2 * (1.0 + n as f64 / t as f64),
        vif,
        singular,
    }
}

/// Trace variance of the ridge solution: (σ²/T) Σ_i 1/(λ_i + λ).
pub fn ridge_variance(corr: &DMatrix<f64>, lambda: f64, sigma2: f64, t: usize) -> f64 {
    assert!(lambda >= 0.0);
    sigma2 / t as f64
        * eigenvalues_desc(corr)
            .iter()
            .map(|l| 1.0 / (l + lambda))
            .sum::<f64>()
}

/// Equicorrelated correlation matrix: ones on the diagonal, ρ elsewhere.
pub fn equicorrelated(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{parse_rpn, Vocabulary};

    fn entry(rpn: &str, r_ic: f64) -> PoolEntry {
        let vocab = Vocabulary::full();
        let tree = parse_rpn(&vocab, rpn).unwrap();
        PoolEntry {
            canonical: tree.canonical_rpn(),
            tree,
            embedding: vec![0.0],
            signal: Signal {
                values: Mat::filled(1, 2, 0.0),
                valid_from: 0,
                degenerate_days: vec![false],
            },
            r_ic,
            admit_step: 0,
        }
    }

    #[test]
    fn dedup_is_canonical_and_eviction_drops_the_weakest() {
        let mut pool = AlphaPool::new(2);
        assert_eq!(pool.insert(entry("close open Add", 0.3)), AdmitOutcome::Added);
        // commuted duplicate
        assert_eq!(pool.insert(entry("open close Add", 0.9)), AdmitOutcome::Duplicate);
        assert_eq!(pool.insert(entry("close", 0.1)), AdmitOutcome::Added);
        assert_eq!(pool.insert(entry("open", 0.05)), AdmitOutcome::Rejected);
        assert_eq!(pool.insert(entry("high", 0.2)), AdmitOutcome::Replaced(1));
        assert_eq!(pool.len(), 2);
        assert!((pool.max_r_ic() - 0.3).abs() < 1e-12);
    }

    fn toy_signal(data: Vec<f64>, days: usize, assets: usize) -> Signal {
        let (values, degenerate_days) = cross_normalize(&Mat {
            rows: days,
            cols: assets,
            data,
        });
        Signal {
            values,
            valid_from: 0,
            degenerate_days,
        }
    }

    // deterministic pseudo-random stream for test fixtures
    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    #[test]
    fn single_entry_mega_alpha_preserves_ordering() {
        let (days, assets) = (120, 8);
        let mut seed = 5u64;
        let data: Vec<f64> = (0..days * assets).map(|_| lcg(&mut seed)).collect();
        let sig = toy_signal(data, days, assets);
        // labels proportional to the signal -> positive trailing IC
        let labels = sig.values.map(|v| 0.5 * v);
        let (mega, schedule) =
            combine_mega_alpha(&[&sig], &labels, 20, 60, 10).unwrap();
        assert!(!schedule.dates.is_empty());
        for w in &schedule.weights {
            assert!(w[0] > 0.0);
        }
        for d in mega.valid_days() {
            let c = daily_ic(mega.values.row(d), sig.values.row(d)).unwrap();
            assert!((c - 1.0).abs() < 1e-9, "day {d}: corr {c}");
        }
    }

    #[test]
    fn duplicated_entries_stay_finite_and_match_single_entry() {
        let (days, assets) = (120, 8);
        let mut seed = 9u64;
        let data: Vec<f64> = (0..days * assets).map(|_| lcg(&mut seed)).collect();
        let sig = toy_signal(data, days, assets);
        let labels = sig.values.map(|v| 2.0 * v);
        let (single, _) = combine_mega_alpha(&[&sig], &labels, 20, 60, 10).unwrap();
        let (dup, schedule) = combine_mega_alpha(&[&sig, &sig], &labels, 20, 60, 10).unwrap();
        for w in &schedule.weights {
            assert!(w.iter().all(|x| x.is_finite()));
        }
        for d in dup.valid_days() {
            for a in 0..assets {
                assert!((dup.values.get(d, a) - single.values.get(d, a)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn exact_linear_model_recovers_weight_ratio() {
        let (days, assets) = (120, 8);
        let mut seed = 11u64;
        let d1: Vec<f64> = (0..days * assets).map(|_| lcg(&mut seed)).collect();
        let d2: Vec<f64> = (0..days * assets).map(|_| lcg(&mut seed)).collect();
        let s1 = toy_signal(d1, days, assets);
        let s2 = toy_signal(d2, days, assets);
        let labels = s1.values.map2(&s2.values, |a, b| 2.0 * a + 0.5 * b);
        let (_, schedule) = combine_mega_alpha(&[&s1, &s2], &labels, 20, 60, 10).unwrap();
        for w in &schedule.weights {
            // the stabilizing ridge perturbs the exact solution at ~1e-6
            assert!((w[0] / w[1] - 4.0).abs() < 1e-4, "ratio {}", w[0] / w[1]);
        }
    }

    #[test]
    fn equicorrelated_closed_forms() {
        // two alphas at rho = 0.9: condition number (1+rho)/(1-rho) = 19
        let rep = diagnostics_from_corr(equicorrelated(2, 0.9), 1.0, 100);
        assert!((rep.kappa2 - 19.0).abs() < 1e-9);
        // N=3, rho=0.5 -> eigenvalues {2.0, 0.5, 0.5}
        let rep = diagnostics_from_corr(equicorrelated(3, 0.5), 1.0, 100);
        let e = &rep.eigenvalues;
        assert!((e[0] - 2.0).abs() < 1e-9 && (e[1] - 0.5).abs() < 1e-9 && (e[2] - 0.5).abs() < 1e-9);
        // identity, N=4, T=100 -> trace variance 0.04
        let rep = diagnostics_from_corr(DMatrix::identity(4, 4), 1.0, 100);
        assert!((rep.trace_variance - 0.04).abs() < 1e-12);
        assert!((rep.prediction_risk - 1.04).abs() < 1e-12);
    }

    #[test]
    fn ridge_variance_examples_and_monotonicity() {
        let c = equicorrelated(3, 0.5);
        let v = ridge_variance(&c, 0.5, 1.0, 100);
        assert!((v - 0.024).abs() < 1e-12);
        let ols = ridge_variance(&c, 0.0, 1.0, 100);
        let rep = diagnostics_from_corr(c.clone(), 1.0, 100);
        assert!((ols - rep.trace_variance).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for lam in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let v = ridge_variance(&c, lam, 1.0, 100);
            assert!(v < prev);
            prev = v;
        }
        assert!(ridge_variance(&c, 1e9, 1.0, 100) < 1e-8);
    }

    #[test]
    fn lower_rho_means_lower_trace_variance() {
        let mut prev = f64::INFINITY;
        for rho in [0.9, 0.5, 0.1, 0.0] {
            let rep = diagnostics_from_corr(equicorrelated(4, rho), 1.0, 100);
            assert!(rep.trace_variance < prev, "rho {rho}");
            prev = rep.trace_variance;
        }
    }

    #[test]
    fn pool_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.csv");
        let mut pool = AlphaPool::new(10);
        pool.insert(entry("close open Add", 0.25));
        pool.insert(entry("close 10 TsMean", 0.5));
        pool.write_csv(&path).unwrap();
        let rows = read_pool_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, "close open Add");
        assert_eq!(rows[1].0, "close 10 TsMean");
        assert!((rows[1].2 - 0.5).abs() < 1e-15);
    }
}
