//! Sequential construction of expression trees under the learned policy.
//!
//! A trajectory appends tokens to a stack-machine build state. Whenever the
//! state holds a complete expression, construction stops with probability
//! `len / max_len` before the policy is consulted again; the stop/continue
//! decision contributes `ln p` (or `ln (1 - p)`) to the trajectory's forward
//! log-probability. Because each complete tree has exactly one construction
//! sequence, the backward policy is the constant 1 and its log-probability
//! is identically zero.

use crate::formula::{legal_actions, BuildState, ExprTree, Token, Vocabulary};
use crate::rgcn::PolicyNet;
use crate::tensor::{Tape, ValueId};
use rand::Rng;

/// One sampled construction sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tokens: Vec<Token>,
    /// log P_F of every decision: token choices plus stop/continue outcomes.
    pub log_pf: f64,
    pub stopped_early: bool,
    pub tree: ExprTree,
}

/// Probability of stopping at a terminal-valid state of the given length.
pub fn early_stop_prob(len: usize, max_len: usize) -> f64 {
    (len as f64 / max_len as f64).clamp(0.0, 1.0)
}

/// Draw the stop/continue decision at a terminal-valid state.
pub fn sample_stop(len: usize, max_len: usize, rng: &mut impl Rng) -> bool {
    let p = early_stop_prob(len, max_len);
    p >= 1.0 || rng.gen::<f64>() < p
}

/// Choose an index from masked log-probabilities.
fn sample_masked(log_probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &lp) in log_probs.iter().enumerate() {
        if lp == f64::NEG_INFINITY {
            continue;
        }
        acc += lp.exp();
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.expect("no legal action to sample")
}

/// One policy consultation within a trajectory: the full masked
/// log-probability vector, the mask it was computed under, and the chosen
/// entry's scalar node.
#[derive(Debug, Clone)]
pub struct Decision {
    pub log_probs: ValueId,
    pub mask: Vec<bool>,
    pub chosen: ValueId,
}

/// Sample one trajectory, accumulating differentiable per-decision
/// log-probabilities on `tape`. Returns the trajectory together with one
/// [`Decision`] per token choice (stop decisions are parameter-free and
/// enter only the scalar `log_pf`).
pub fn sample_trajectory(
    net: &PolicyNet,
    vocab: &Vocabulary,
    max_len: usize,
    tape: &mut Tape,
    rng: &mut impl Rng,
) -> (Trajectory, Vec<Decision>) {
    let mut state = BuildState::new();
    let mut tokens = Vec::new();
    let mut log_pf = 0.0;
    let mut choice_nodes = Vec::new();
    let mut stopped_early = false;
    loop {
        if state.is_terminal_valid() {
            let p = early_stop_prob(state.len(), max_len);
            let mut mask = legal_actions(&state, vocab, max_len);
            mask[vocab.sep_index()] = false;
            let can_continue = mask.iter().any(|&m| m);
            let stop = !can_continue || sample_stop(state.len(), max_len, rng);
            if stop {
                if can_continue && p < 1.0 {
                    log_pf += p.ln();
                    stopped_early = true;
                }
                break;
            }
            log_pf += (1.0 - p).ln();
            let (_, e) = net.forward(tape, state.nodes(), vocab);
            let lp = net.policy_logits(tape, e, &mask);
            let choice = sample_masked(tape.value(lp), rng);
            let node = tape.index(lp, choice);
            log_pf += tape.value(node)[0];
            choice_nodes.push(Decision {
                log_probs: lp,
                mask: mask.clone(),
                chosen: node,
            });
            let token = *vocab.token(choice);
            state.apply(token).expect("masked action must apply");
            tokens.push(token);
            continue;
        }
        let mask = legal_actions(&state, vocab, max_len);
        let (_, e) = net.forward(tape, state.nodes(), vocab);
        let lp = net.policy_logits(tape, e, &mask);
        let choice = sample_masked(tape.value(lp), rng);
        let node = tape.index(lp, choice);
        log_pf += tape.value(node)[0];
        choice_nodes.push(Decision {
            log_probs: lp,
            mask: mask.clone(),
            chosen: node,
        });
        let token = *vocab.token(choice);
        state.apply(token).expect("masked action must apply");
        tokens.push(token);
    }
    let tree = state.to_tree().expect("terminated state must be complete");
    (
        Trajectory {
            tokens,
            log_pf,
            stopped_early,
            tree,
        },
        choice_nodes,
    )
}

/// Exact forward log-probability of producing `tree` under the current
/// policy, evaluated without touching the parameter tape. Used by tests and
/// diagnostics; returns `None` if the tree is unreachable (a masked action
/// would be required).
pub fn log_pf_of_tree(
    net: &PolicyNet,
    vocab: &Vocabulary,
    max_len: usize,
    tree: &ExprTree,
) -> Option<f64> {
    let rpn = tree.print_rpn();
    let mut state = BuildState::new();
    let mut log_pf = 0.0;
    for part in rpn.split_whitespace() {
        let token = vocab.lookup(part).ok()?;
        let idx = vocab.index_of(&token)?;
        if state.is_terminal_valid() {
            let p = early_stop_prob(state.len(), max_len);
            if p >= 1.0 {
                return None;
            }
            log_pf += (1.0 - p).ln();
        }
        let mut mask = legal_actions(&state, vocab, max_len);
        mask[vocab.sep_index()] = false;
        if !mask[idx] {
            return None;
        }
        let mut tape = Tape::new(&net.store);
        let (_, e) = net.forward(&mut tape, state.nodes(), vocab);
        let lp = net.policy_logits(&mut tape, e, &mask);
        log_pf += tape.value(lp)[idx];
        state.apply(vocab.token(idx).clone()).ok()?;
    }
    if !state.is_terminal_valid() {
        return None;
    }
    let p = early_stop_prob(state.len(), max_len);
    let mask = {
        let mut m = legal_actions(&state, vocab, max_len);
        m[vocab.sep_index()] = false;
        m
    };
    if mask.iter().any(|&m| m) && p < 1.0 {
        log_pf += p.ln();
    }
    Some(log_pf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{BinaryOp, Feature};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_vocab() -> Vocabulary {
        Vocabulary::new(
            &[Feature::Close, Feature::Open],
            &[],
            &[BinaryOp::Add, BinaryOp::Sub],
            &[],
            &[],
            &[],
        )
    }

    #[test]
    fn sampled_trajectories_are_complete_and_bounded() {
        let vocab = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::new(&vocab, 8, 2, &mut rng);
        for _ in 0..200 {
            let mut tape = Tape::new(&net.store);
            let (traj, _) = sample_trajectory(&net, &vocab, 5, &mut tape, &mut rng);
            assert!(traj.tree.len() <= 5);
            assert!(traj.log_pf <= 0.0);
            assert_eq!(traj.tokens.len(), traj.tree.len());
        }
    }

    #[test]
    fn stop_probability_is_length_over_max() {
        assert_eq!(early_stop_prob(1, 5), 0.2);
        assert_eq!(early_stop_prob(5, 5), 1.0);
        assert_eq!(early_stop_prob(20, 20), 1.0);
    }

    #[test]
    fn replayed_log_pf_matches_sampled_log_pf() {
        let vocab = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = PolicyNet::new(&vocab, 8, 2, &mut rng);
        for _ in 0..50 {
            let mut tape = Tape::new(&net.store);
            let (traj, _) = sample_trajectory(&net, &vocab, 5, &mut tape, &mut rng);
            let replayed = log_pf_of_tree(&net, &vocab, 5, &traj.tree).unwrap();
            assert!(
                (replayed - traj.log_pf).abs() < 1e-9,
                "replay {replayed} vs sampled {}",
                traj.log_pf
            );
        }
    }

    #[test]
    fn total_probability_over_enumerable_space_is_one() {
        // 2 features, Add/Sub, max_len 3: trees are the 2 singletons and the
        // 8 depth-one combinations.
        let vocab = tiny_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PolicyNet::new(&vocab, 8, 2, &mut rng);
        let feats = ["close", "open"];
        let ops = ["Add", "Sub"];
        let mut total = 0.0;
        for f in feats {
            let tree = crate::formula::parse_rpn(&vocab, f).unwrap();
            total += log_pf_of_tree(&net, &vocab, 3, &tree).unwrap().exp();
        }
        for a in feats {
            for b in feats {
                for op in ops {
                    let tree = crate::formula::parse_rpn(&vocab, &format!("{a} {b} {op}")).unwrap();
                    total += log_pf_of_tree(&net, &vocab, 3, &tree).unwrap().exp();
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9, "total probability {total}");
    }
}
