//! Trajectory-balance training loop: sample, reward, admit to the pool,
//! and take one adaptive gradient step per episode.
//!
//! The per-trajectory loss is `(logZ + Σ log P_F − log R)²` (the backward
//! log-density is identically zero for this construction), plus an entropy
//! regularizer `β · Σ_decisions Σ_a p_a log p_a` that keeps the policy from
//! collapsing early.

use crate::engine::{evaluate, Panel};
use crate::formula::{ExprTree, Vocabulary};
use crate::gfn::{sample_trajectory, Decision, Trajectory};
use crate::pool::{AlphaPool, PoolEntry};
use crate::rewards::{combined, PoolView, RewardBreakdown, REWARD_FLOOR};
use crate::rgcn::PolicyNet;
use crate::tensor::{adaptive_step, AdamConfig, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write as IoWrite};
use std::path::Path;
use thiserror::Error;

pub const TRAINER_MAGIC: &[u8; 8] = b"AMCKPT01";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Formula(#[from] crate::formula::FormulaError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: u64,
    pub max_len: usize,
    pub hidden: usize,
    pub layers: usize,
    pub entropy_coef: f64,
    pub lr: f64,
    pub lambda_max: f64,
    pub eta_max: f64,
    pub pool_capacity: usize,
    /// Steps over which the diversity/novelty weights decay to zero;
    /// defaults to `episodes`.
    pub t_anneal: u64,
    pub knn: usize,
    pub seed: u64,
    pub ic_min: f64,
    pub nov_min: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 10_000,
            max_len: 20,
            hidden: 128,
            layers: 2,
            entropy_coef: 0.01,
            lr: 1e-4,
            lambda_max: 1.0,
            eta_max: 0.3,
            pool_capacity: 50,
            t_anneal: 10_000,
            knn: 5,
            seed: 42,
            ic_min: 0.01,
            nov_min: 0.1,
            checkpoint_every: 1000,
        }
    }
}

/// What an episode's terminal object earned and whether it entered the pool.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeOutcome {
    pub reward: f64,
    pub breakdown: Option<RewardBreakdown>,
    pub admitted: bool,
    pub pool_size: usize,
}

/// Supplies rewards (and optionally maintains a pool) for the training loop.
pub trait RewardSource {
    fn assess(&mut self, tree: &ExprTree, net: &PolicyNet, episode: u64) -> EpisodeOutcome;
}

/// Fixed reward table keyed by exact serialization; used on enumerable
/// environments where the target distribution is known per terminal tree.
pub struct TableRewards {
    pub table: std::collections::HashMap<String, f64>,
}

impl RewardSource for TableRewards {
    fn assess(&mut self, tree: &ExprTree, _net: &PolicyNet, _episode: u64) -> EpisodeOutcome {
        let r = self
            .table
            .get(&tree.print_rpn())
            .copied()
            .unwrap_or(REWARD_FLOOR);
        EpisodeOutcome {
            reward: r.max(REWARD_FLOOR),
            breakdown: None,
            admitted: false,
            pool_size: 0,
        }
    }
}

/// Panel-backed rewards with pool admission (the full mining objective).
pub struct PanelRewards<'a> {
    pub panel: &'a Panel,
    pub vocab: &'a Vocabulary,
    pub pool: AlphaPool,
    pub knn: usize,
    pub t_anneal: u64,
    pub lambda_max: f64,
    pub eta_max: f64,
    pub ic_min: f64,
    pub nov_min: f64,
}

impl RewardSource for PanelRewards<'_> {
    fn assess(&mut self, tree: &ExprTree, net: &PolicyNet, episode: u64) -> EpisodeOutcome {
        let Ok(signal) = evaluate(tree, self.panel) else {
            return EpisodeOutcome {
                reward: REWARD_FLOOR,
                breakdown: None,
                admitted: false,
                pool_size: self.pool.len(),
            };
        };
        let embedding = net.embed_detached(&tree.nodes, self.vocab);
        let signals: Vec<&crate::engine::Signal> =
            self.pool.entries.iter().map(|e| &e.signal).collect();
        let embeddings: Vec<&[f64]> = self
            .pool
            .entries
            .iter()
            .map(|e| e.embedding.as_slice())
            .collect();
        let view = PoolView {
            signals: &signals,
            embeddings: &embeddings,
        };
        let breakdown = combined(
            &signal,
            &embedding,
            &self.panel.labels,
            &view,
            self.knn,
            episode,
            self.t_anneal,
            self.lambda_max,
            self.eta_max,
        );
        drop(view);
        drop(signals);
        drop(embeddings);
        let mut admitted = false;
        if !signal.is_degenerate()
            && breakdown.r_ic >= self.ic_min
            && breakdown.r_nov >= self.nov_min
        {
            let canonical = tree.canonical_rpn();
            if !self.pool.contains(&canonical) {
                let outcome = self.pool.insert(PoolEntry {
                    tree: tree.clone(),
                    canonical,
                    embedding,
                    signal,
                    r_ic: breakdown.r_ic,
                    admit_step: episode,
                });
                admitted = !matches!(
                    outcome,
                    crate::pool::AdmitOutcome::Rejected | crate::pool::AdmitOutcome::Duplicate
                );
            }
        }
        EpisodeOutcome {
            reward: breakdown.total,
            breakdown: Some(breakdown),
            admitted,
            pool_size: self.pool.len(),
        }
    }
}

/// One row of the per-episode training log.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub episode: u64,
    pub tokens: usize,
    pub reward: f64,
    pub loss: f64,
    pub log_z: f64,
    pub pool_size: usize,
    pub admitted: bool,
}

fn assemble_loss(
    tape: &mut Tape,
    net: &PolicyNet,
    traj: &Trajectory,
    decisions: &[Decision],
    log_r: f64,
    entropy_coef: f64,
) -> (crate::tensor::ValueId, f64) {
    let logz = net.log_z_node(tape);
    let choice_sum: f64 = decisions.iter().map(|d| tape.value(d.chosen)[0]).sum();
    let stop_const = traj.log_pf - choice_sum;
    let mut srcs = vec![(logz, 1.0)];
    srcs.extend(decisions.iter().map(|d| (d.chosen, 1.0)));
    let resid = tape.affine_sum(srcs, stop_const - log_r);
    let tb = tape.square(resid);
    let mut terms = vec![(tb, 1.0)];
    for d in decisions {
        let ne = tape.neg_entropy(d.log_probs, &d.mask);
        terms.push((ne, entropy_coef));
    }
    let loss = tape.affine_sum(terms, 0.0);
    let v = tape.value(loss)[0];
    (loss, v)
}

/// Run `episodes` training steps against an arbitrary reward source,
/// starting from the given episode index (for resumption). Appends one log
/// row per episode.
pub fn train_loop(
    net: &mut PolicyNet,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    source: &mut dyn RewardSource,
    rng: &mut ChaCha8Rng,
    start_episode: u64,
    mut on_episode: impl FnMut(&EpisodeLog),
) {
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for episode in start_episode..cfg.episodes {
        let (traj, decisions, grads, log) = {
            let mut tape = Tape::new(&net.store);
            let (traj, decisions) = sample_trajectory(net, vocab, cfg.max_len, &mut tape, rng);
            let outcome = source.assess(&traj.tree, net, episode);
            let log_r = outcome.reward.max(REWARD_FLOOR).ln();
            let (loss, loss_v) =
                assemble_loss(&mut tape, net, &traj, &decisions, log_r, cfg.entropy_coef);
            let grads = tape.backward(loss);
            let log = EpisodeLog {
                episode,
                tokens: traj.tokens.len(),
                reward: outcome.reward,
                loss: loss_v,
                log_z: net.log_z(),
                pool_size: outcome.pool_size,
                admitted: outcome.admitted,
            };
            (traj, decisions, grads, log)
        };
        let _ = (traj, decisions);
        adaptive_step(&mut net.store, &grads, adam);
        on_episode(&log);
    }
}

/// Everything a mining run produces.
pub struct MineResult {
    pub net: PolicyNet,
    pub pool: AlphaPool,
    pub rng: ChaCha8Rng,
    pub episodes_run: u64,
}

fn write_string(w: &mut impl IoWrite, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "non-utf8 string"))
}

/// Full training checkpoint: episode counter, RNG position, pool contents
/// (signals are recomputed on load), then the parameter blob.
pub fn save_checkpoint(
    path: &Path,
    net: &PolicyNet,
    pool: &AlphaPool,
    rng: &ChaCha8Rng,
    episode: u64,
) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(TRAINER_MAGIC)?;
    f.write_all(&episode.to_le_bytes())?;
    f.write_all(&rng.get_seed())?;
    f.write_all(&rng.get_word_pos().to_le_bytes())?;
    f.write_all(&(pool.capacity as u64).to_le_bytes())?;
    f.write_all(&(pool.entries.len() as u64).to_le_bytes())?;
    for e in &pool.entries {
        write_string(&mut f, &e.tree.print_rpn())?;
        f.write_all(&e.r_ic.to_le_bytes())?;
        f.write_all(&e.admit_step.to_le_bytes())?;
        f.write_all(&(e.embedding.len() as u64).to_le_bytes())?;
        for &x in &e.embedding {
            f.write_all(&x.to_le_bytes())?;
        }
    }
    net.write_params(&mut f)?;
    Ok(())
}

/// Restore a checkpoint into an architecture-matched net; pool signals are
/// re-evaluated against `panel`.
pub fn load_checkpoint(
    path: &Path,
    net: &mut PolicyNet,
    vocab: &Vocabulary,
    panel: &Panel,
) -> Result<(AlphaPool, ChaCha8Rng, u64), TrainError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != TRAINER_MAGIC {
        return Err(TrainError::BadCheckpoint("bad magic".into()));
    }
    let episode = read_u64(&mut f)?;
    let mut seed = [0u8; 32];
    f.read_exact(&mut seed)?;
    let mut posbuf = [0u8; 16];
    f.read_exact(&mut posbuf)?;
    let word_pos = u128::from_le_bytes(posbuf);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);
    let capacity = read_u64(&mut f)? as usize;
    let n_entries = read_u64(&mut f)? as usize;
    let mut pool = AlphaPool::new(capacity);
    for _ in 0..n_entries {
        let rpn = read_string(&mut f)?;
        let r_ic = read_f64(&mut f)?;
        let admit_step = read_u64(&mut f)?;
        let elen = read_u64(&mut f)? as usize;
        let mut embedding = vec![0.0; elen];
        for x in embedding.iter_mut() {
            *x = read_f64(&mut f)?;
        }
        let tree = crate::formula::parse_rpn(vocab, &rpn)?;
        let signal = evaluate(&tree, panel)?;
        let canonical = tree.canonical_rpn();
        pool.entries.push(PoolEntry {
            tree,
            canonical,
            embedding,
            signal,
            r_ic,
            admit_step,
        });
    }
    net.read_params(&mut f)?;
    Ok((pool, rng, episode))
}

/// The full mining run (Algorithm-1 loop) against a panel. If `run_dir`
/// holds a checkpoint it is resumed; otherwise training starts fresh.
/// Writes `checkpoint.bin` every `checkpoint_every` episodes and a
/// `training_log.csv` into `run_dir` when given.
pub fn mine(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    panel: &Panel,
    run_dir: Option<&Path>,
) -> Result<MineResult, TrainError> {
    let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyNet::new(vocab, cfg.hidden, cfg.layers, &mut seed_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut pool = AlphaPool::new(cfg.pool_capacity);
    let mut start_episode = 0;
    let ckpt_path = run_dir.map(|d| d.join("checkpoint.bin"));
    if let Some(p) = ckpt_path.as_ref().filter(|p| p.exists()) {
        let (rpool, rrng, repisode) = load_checkpoint(p, &mut net, vocab, panel)?;
        pool = rpool;
        rng = rrng;
        start_episode = repisode;
    }
    let mut log_file = match run_dir {
        Some(d) => {
            let path = d.join("training_log.csv");
            let fresh = start_episode == 0 || !path.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(!fresh)
                .write(true)
                .truncate(fresh)
                .open(path)?;
            if fresh {
                writeln!(f, "episode,tokens,reward,loss,log_z,pool_size,admitted")?;
            }
            Some(f)
        }
        None => None,
    };
    let mut source = PanelRewards {
        panel,
        vocab,
        pool,
        knn: cfg.knn,
        t_anneal: cfg.t_anneal,
        lambda_max: cfg.lambda_max,
        eta_max: cfg.eta_max,
        ic_min: cfg.ic_min,
        nov_min: cfg.nov_min,
    };
    // the loop needs the source by &mut dyn while we also checkpoint its
    // pool, so drive episodes in checkpoint-sized chunks
    let mut episode = start_episode;
    while episode < cfg.episodes {
        let chunk_end = if cfg.checkpoint_every == 0 {
            cfg.episodes
        } else {
            (episode + cfg.checkpoint_every).min(cfg.episodes)
        };
        let mut chunk_cfg = cfg.clone();
        chunk_cfg.episodes = chunk_end;
        let mut rows: Vec<EpisodeLog> = Vec::new();
        train_loop(
            &mut net,
            vocab,
            &chunk_cfg,
            &mut source,
            &mut rng,
            episode,
            |log| {
                rows.push(log.clone());
            },
        );
        if let Some(f) = log_file.as_mut() {
            for row in rows {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{}",
                    row.episode,
                    row.tokens,
                    row.reward,
                    row.loss,
                    row.log_z,
                    row.pool_size,
                    row.admitted as u8
                )?;
            }
        }
        episode = chunk_end;
        if let Some(p) = ckpt_path.as_ref() {
            save_checkpoint(p, &net, &source.pool, &rng, episode)?;
        }
    }
    Ok(MineResult {
        net,
        pool: source.pool,
        rng,
        episodes_run: cfg.episodes.saturating_sub(start_episode),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::generate_synthetic;
    use crate::formula::{BinaryOp, Feature};

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

    fn quick_cfg(episodes: u64) -> TrainConfig {
        TrainConfig {
            episodes,
            max_len: 5,
            hidden: 8,
            layers: 1,
            lr: 1e-2,
            t_anneal: episodes.max(1),
            pool_capacity: 10,
            checkpoint_every: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_episodes_is_a_no_op() {
        let vocab = tiny_vocab();
        let panel = generate_synthetic(1, 120, 12, None, 0.0).unwrap();
        let cfg = quick_cfg(0);
        let out = mine(&cfg, &vocab, &panel, None).unwrap();
        assert!(out.pool.is_empty());
        let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = PolicyNet::new(&vocab, cfg.hidden, cfg.layers, &mut seed_rng);
        for (a, b) in out.net.store.tensors.iter().zip(&fresh.store.tensors) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let vocab = tiny_vocab();
        let panel = generate_synthetic(2, 130, 12, None, 0.0).unwrap();
        let cfg = quick_cfg(30);
        let a = mine(&cfg, &vocab, &panel, None).unwrap();
        let b = mine(&cfg, &vocab, &panel, None).unwrap();
        for (x, y) in a.net.store.tensors.iter().zip(&b.net.store.tensors) {
            assert_eq!(x.data, y.data);
            assert_eq!(x.adam_m, y.adam_m);
        }
        assert_eq!(a.pool.len(), b.pool.len());
        for (x, y) in a.pool.entries.iter().zip(&b.pool.entries) {
            assert_eq!(x.canonical, y.canonical);
            assert_eq!(x.r_ic.to_bits(), y.r_ic.to_bits());
        }
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let vocab = tiny_vocab();
        let panel = generate_synthetic(3, 130, 12, None, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_cfg(24);
        cfg.checkpoint_every = 8;
        // interrupted: run to 16 (two chunks), then resume to 24
        let mut partial_cfg = cfg.clone();
        partial_cfg.episodes = 16;
        mine(&partial_cfg, &vocab, &panel, Some(dir.path())).unwrap();
        let resumed = mine(&cfg, &vocab, &panel, Some(dir.path())).unwrap();
        let straight = mine(&cfg, &vocab, &panel, None).unwrap();
        for (x, y) in resumed
            .net
            .store
            .tensors
            .iter()
            .zip(&straight.net.store.tensors)
        {
            assert_eq!(x.data, y.data, "tensor {} diverged", x.name);
            assert_eq!(x.adam_m, y.adam_m);
            assert_eq!(x.adam_v, y.adam_v);
        }
        assert_eq!(resumed.pool.len(), straight.pool.len());
    }

    #[test]
    fn training_reduces_tb_loss_on_a_fixed_table() {
        // single-tree optimum: reward mass on one formula
        let vocab = tiny_vocab();
        let mut table = std::collections::HashMap::new();
        table.insert("close open Sub".to_string(), 1.0);
        let mut source = TableRewards { table };
        let cfg = TrainConfig {
            episodes: 1500,
            lr: 1e-2,
            ..quick_cfg(1500)
        };
        let mut seed_rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = PolicyNet::new(&vocab, 8, 1, &mut seed_rng);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut first = Vec::new();
        let mut last = Vec::new();
        train_loop(&mut net, &vocab, &cfg, &mut source, &mut rng, 0, |log| {
            if log.episode < 100 {
                first.push(log.loss);
            } else if log.episode >= 1400 {
                last.push(log.loss);
            }
        });
        let m_first: f64 = first.iter().sum::<f64>() / first.len() as f64;
        let m_last: f64 = last.iter().sum::<f64>() / last.len() as f64;
        assert!(
            m_last < m_first * 0.5,
            "loss did not drop: {m_first} -> {m_last}"
        );
    }
}
