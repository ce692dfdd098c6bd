//! Reward terms for mined alphas: predictive power, structural diversity
//! relative to the current pool, and output novelty, plus the annealing
//! schedule that combines them.

use crate::engine::Signal;
use crate::metrics::daily_ic;

pub const REWARD_FLOOR: f64 = 1e-6;
pub const DEFAULT_KNN: usize = 5;

/// Pool member view needed by the reward terms.
pub struct PoolView<'a> {
    pub signals: &'a [&'a Signal],
    pub embeddings: &'a [&'a [f64]],
}

/// Per-term breakdown of a candidate's reward.
#[derive(Debug, Clone, Copy)]
pub struct RewardBreakdown {
    pub r_ic: f64,
    pub r_sa: f64,
    pub r_nov: f64,
    pub lambda: f64,
    pub eta: f64,
    pub total: f64,
}

/// Absolute mean daily information coefficient of a signal.
pub fn r_ic(signal: &Signal, labels: &crate::engine::Mat) -> f64 {
    let ics: Vec<f64> = signal
        .valid_days()
        .filter_map(|d| daily_ic(signal.values.row(d), labels.row(d)))
        .collect();
    if ics.is_empty() {
        return 0.0;
    }
    (ics.iter().sum::<f64>() / ics.len() as f64).abs()
}

/// Mean squared distance between two normalized signal panels over their
/// shared valid days, scaled so two perfectly anti-correlated signals are at
/// distance 2 (per-day `||z_i - z_j||^2 / (2 N)`).
pub fn behavioural_distance(a: &Signal, b: &Signal) -> f64 {
    let days = a.values.rows.min(b.values.rows);
    let from = a.valid_from.max(b.valid_from);
    let mut total = 0.0;
    let mut count = 0usize;
    for d in from..days {
        if a.degenerate_days[d] || b.degenerate_days[d] {
            continue;
        }
        let (ra, rb) = (a.values.row(d), b.values.row(d));
        let n = ra.len();
        let ss: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
        total += ss / (2.0 * n as f64);
        count += 1;
    }
    if count == 0 {
        // nothing to compare against: treat as maximally distant
        return 2.0;
    }
    total / count as f64
}

/// Structure-aware diversity reward. Pool members are weighted by softmax of
/// negative squared embedding distance over the `k` nearest neighbours, and
/// the reward decays with the weighted behavioural distance to them.
pub fn r_sa(
    candidate_signal: &Signal,
    candidate_embedding: &[f64],
    pool: &PoolView,
    k: usize,
) -> f64 {
    if pool.signals.is_empty() {
        return 1.0;
    }
    let mut dist2: Vec<(usize, f64)> = pool
        .embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let d2: f64 = e
                .iter()
                .zip(candidate_embedding)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (i, d2)
        })
        .collect();
    dist2.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    dist2.truncate(k.max(1));
    let m = dist2.iter().map(|&(_, d)| -d).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = dist2.iter().map(|&(_, d)| (-d - m).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut weighted = 0.0;
    for ((i, _), w) in dist2.iter().zip(&weights) {
        weighted += (w / z) * behavioural_distance(candidate_signal, pool.signals[*i]);
    }
    (-weighted).exp()
}

/// Novelty against the pool: one minus the largest absolute signal
/// correlation with any member.
pub fn r_nov(candidate: &Signal, pool: &PoolView) -> f64 {
    let mut worst: f64 = 0.0;
    for member in pool.signals {
        if let Some(ic) = signal_correlation(candidate, member) {
            worst = worst.max(ic.abs());
        }
    }
    1.0 - worst
}

/// Mean daily cross-sectional correlation between two signals on shared
/// valid days.
pub fn signal_correlation(a: &Signal, b: &Signal) -> Option<f64> {
    let days = a.values.rows.min(b.values.rows);
    let from = a.valid_from.max(b.valid_from);
    let mut acc = 0.0;
    let mut count = 0usize;
    for d in from..days {
        if a.degenerate_days[d] || b.degenerate_days[d] {
            continue;
        }
        if let Some(c) = daily_ic(a.values.row(d), b.values.row(d)) {
            acc += c;
            count += 1;
        }
    }
    (count > 0).then(|| acc / count as f64)
}

/// Diversity/novelty coefficients at training step `t`: both decay linearly
/// from their maxima to zero over `t_anneal` steps.
pub fn anneal(t: u64, t_anneal: u64, lambda_max: f64, eta_max: f64) -> (f64, f64) {
    let frac = if t_anneal == 0 {
        0.0
    } else {
        (1.0 - t as f64 / t_anneal as f64).max(0.0)
    };
    (frac * lambda_max, frac * eta_max)
}

/// Combined reward with the annealed weights; floored away from zero so
/// log-rewards stay finite.
pub fn combined(
    candidate_signal: &Signal,
    candidate_embedding: &[f64],
    labels: &crate::engine::Mat,
    pool: &PoolView,
    k: usize,
    t: u64,
    t_anneal: u64,
    lambda_max: f64,
    eta_max: f64,
) -> RewardBreakdown {
    let (lambda, eta) = anneal(t, t_anneal, lambda_max, eta_max);
    if candidate_signal.is_degenerate() {
        return RewardBreakdown {
            r_ic: 0.0,
            r_sa: 0.0,
            r_nov: 0.0,
            lambda,
            eta,
            total: REWARD_FLOOR,
        };
    }
    let ic = r_ic(candidate_signal, labels);
    let sa = r_sa(candidate_signal, candidate_embedding, pool, k);
    let nov = r_nov(candidate_signal, pool);
    let total = (ic + lambda * sa + eta * nov).max(REWARD_FLOOR);
    RewardBreakdown {
        r_ic: ic,
        r_sa: sa,
        r_nov: nov,
        lambda,
        eta,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Mat, Signal};

    fn signal_from_rows(rows: Vec<Vec<f64>>) -> Signal {
        let (normalized, degenerate_days) = crate::engine::cross_normalize(&Mat {
            rows: rows.len(),
            cols: rows[0].len(),
            data: rows.concat(),
        });
        Signal {
            values: normalized,
            valid_from: 0,
            degenerate_days,
        }
    }

    #[test]
    fn identical_signals_have_zero_distance_and_unit_correlation() {
        let a = signal_from_rows(vec![vec![1.0, 2.0, 3.0, 4.0]; 5]);
        let b = a.clone();
        assert!(behavioural_distance(&a, &b) < 1e-12);
        assert!((signal_correlation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anti_correlated_signals_are_at_distance_two() {
        let a = signal_from_rows(vec![vec![1.0, 2.0, 3.0, 4.0]; 5]);
        let b = signal_from_rows(vec![vec![4.0, 3.0, 2.0, 1.0]; 5]);
        let d = behavioural_distance(&a, &b);
        assert!((d - 2.0).abs() < 1e-12, "distance {d}");
        let pool_signals = [&b];
        let pool = PoolView {
            signals: &pool_signals,
            embeddings: &[&[0.0, 0.0]],
        };
        let sa = r_sa(&a, &[0.0, 0.0], &pool, 5);
        assert!((sa - (-2.0f64).exp()).abs() < 1e-12);
        assert!((r_nov(&a, &pool) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn empty_pool_gives_full_diversity_and_novelty() {
        let a = signal_from_rows(vec![vec![1.0, 2.0, 3.0]; 3]);
        let pool = PoolView {
            signals: &[],
            embeddings: &[],
        };
        assert_eq!(r_sa(&a, &[1.0], &pool, 5), 1.0);
        assert_eq!(r_nov(&a, &pool), 1.0);
    }

    #[test]
    fn knn_weights_favour_the_nearest_member() {
        // near member identical (distance 0), far member anti-correlated;
        // with k=1 only the near one counts.
        let cand = signal_from_rows(vec![vec![1.0, 2.0, 3.0, 4.0]; 4]);
        let near = cand.clone();
        let far = signal_from_rows(vec![vec![4.0, 3.0, 2.0, 1.0]; 4]);
        let signals = [&near, &far];
        let e_near = [0.1, 0.0];
        let e_far = [1.5, 0.0];
        let pool = PoolView {
            signals: &signals,
            embeddings: &[&e_near, &e_far],
        };
        let sa1 = r_sa(&cand, &[0.0, 0.0], &pool, 1);
        assert!((sa1 - 1.0).abs() < 1e-12, "nearest is identical: {sa1}");
        let sa2 = r_sa(&cand, &[0.0, 0.0], &pool, 2);
        assert!(sa2 < sa1);
    }

    #[test]
    fn r_ic_matches_hand_computed_correlation() {
        // signal equals labels exactly on every day -> |mean IC| = 1
        let labels = Mat {
            rows: 3,
            cols: 4,
            data: vec![0.1, 0.2, 0.3, 0.4, 0.4, 0.3, 0.2, 0.1, 0.1, 0.3, 0.2, 0.4],
        };
        let sig = signal_from_rows(vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.4, 0.3, 0.2, 0.1],
            vec![0.1, 0.3, 0.2, 0.4],
        ]);
        assert!((r_ic(&sig, &labels) - 1.0).abs() < 1e-12);
        // sign-flipped signal also earns |.| = 1
        let flipped = Signal {
            values: sig.values.map(|v| -v),
            valid_from: 0,
            degenerate_days: sig.degenerate_days.clone(),
        };
        assert!((r_ic(&flipped, &labels) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anneal_schedule_hits_endpoints() {
        let (l0, e0) = anneal(0, 100, 1.0, 0.3);
        assert_eq!((l0, e0), (1.0, 0.3));
        let (lh, eh) = anneal(50, 100, 1.0, 0.3);
        assert!((lh - 0.5).abs() < 1e-12 && (eh - 0.15).abs() < 1e-12);
        let (l1, e1) = anneal(100, 100, 1.0, 0.3);
        assert_eq!((l1, e1), (0.0, 0.0));
        let (l2, _) = anneal(150, 100, 1.0, 0.3);
        assert_eq!(l2, 0.0);
    }
}
