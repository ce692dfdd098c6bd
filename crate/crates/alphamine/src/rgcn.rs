//! Relation-typed graph convolution encoder and the policy/action head.
//!
//! Node states are updated as
//! `h_v <- ReLU(sum_r sum_{u in N_r(v)} (1/c_{v,r}) W_r h_u + W_0 h_v)`
//! with one weight matrix per relation type, bidirectional neighborhoods
//! (child and parent see each other under the shared relation id), and a
//! coordinate-wise max readout over the final node states. The policy head
//! maps the graph embedding to vocabulary logits; logZ is a single learnable
//! scalar.

use crate::formula::{relation_edges, ExprNode, Relation, Vocabulary};
use crate::tensor::{ParamId, ParamStore, Tape, ValueId};
use rand::Rng;
use std::io::{Read, Write};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMPARAM1";

/// Parameter layout of the policy network.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub hidden: usize,
    pub layers: usize,
    pub vocab_size: usize,
    pub store: ParamStore,
    embed: ParamId,
    start: ParamId,
    rel: Vec<[ParamId; Relation::COUNT]>,
    self_loop: Vec<ParamId>,
    head_w: ParamId,
    head_b: ParamId,
    log_z: ParamId,
}

impl PolicyNet {
    pub fn new(vocab: &Vocabulary, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let vocab_size = vocab.len();
        let embed = store.add_glorot("embed", vocab_size, hidden, rng);
        let start = store.add_glorot("start", 1, hidden, rng);
        let mut rel = Vec::new();
        let mut self_loop = Vec::new();
        for l in 0..layers {
            let mats: [ParamId; Relation::COUNT] = std::array::from_fn(|r| {
                store.add_glorot(&format!("layer{l}.rel{r}"), hidden, hidden, rng)
            });
            rel.push(mats);
            self_loop.push(store.add_glorot(&format!("layer{l}.self"), hidden, hidden, rng));
        }
        let head_w = store.add_glorot("head.w", vocab_size, hidden, rng);
        let head_b = store.add_zeros("head.b", 1, vocab_size);
        let log_z = store.add_zeros("log_z", 1, 1);
        PolicyNet {
            hidden,
            layers,
            vocab_size,
            store,
            embed,
            start,
            rel,
            self_loop,
            head_w,
            head_b,
            log_z,
        }
    }

    pub fn log_z(&self) -> f64 {
        self.store.get(self.log_z).data[0]
    }

    pub fn log_z_node(&self, tape: &mut Tape) -> ValueId {
        tape.param_vec(self.log_z)
    }

    /// Encode a (possibly partial, possibly forest-shaped) node arena into
    /// per-node states and a pooled graph embedding. An empty arena returns
    /// the learned start embedding.
    pub fn forward(
        &self,
        tape: &mut Tape,
        nodes: &[ExprNode],
        vocab: &Vocabulary,
    ) -> (Vec<ValueId>, ValueId) {
        if nodes.is_empty() {
            let e = tape.param_vec(self.start);
            return (Vec::new(), e);
        }
        let edges = relation_edges(nodes);
        // bidirectional neighbor lists per (node, relation)
        let mut neigh: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); Relation::COUNT]; nodes.len()];
        for e in &edges {
            let r = e.relation.index();
            neigh[e.parent][r].push(e.child);
            neigh[e.child][r].push(e.parent);
        }
        let mut h: Vec<ValueId> = nodes
            .iter()
            .map(|n| {
                let idx = vocab
                    .index_of(&n.token)
                    .expect("token outside vocabulary");
                tape.embed_row(self.embed, idx)
            })
            .collect();
        for l in 0..self.layers {
            let mut next = Vec::with_capacity(nodes.len());
            for v in 0..nodes.len() {
                let mut terms = vec![(tape.matvec(self.self_loop[l], h[v]), 1.0)];
                for r in 0..Relation::COUNT {
                    let ns = &neigh[v][r];
                    if ns.is_empty() {
                        continue;
                    }
                    let summed = tape.accum(ns.iter().map(|&u| (h[u], 1.0)).collect());
                    let msg = tape.matvec(self.rel[l][r], summed);
                    terms.push((msg, 1.0 / ns.len() as f64));
                }
                let pre = tape.accum(terms);
                next.push(tape.relu(pre));
            }
            h = next;
        }
        let e = tape.max_pool(h.clone());
        (h, e)
    }

    /// Masked log-probabilities over the vocabulary given a graph embedding.
    pub fn policy_logits(&self, tape: &mut Tape, embedding: ValueId, mask: &[bool]) -> ValueId {
        let wx = tape.matvec(self.head_w, embedding);
        let b = tape.param_vec(self.head_b);
        let logits = tape.accum(vec![(wx, 1.0), (b, 1.0)]);
        tape.masked_log_softmax(logits, mask)
    }

    /// Embedding of a node arena as plain numbers (no gradient), used for
    /// pool entries and the structure-aware reward.
    pub fn embed_detached(&self, nodes: &[ExprNode], vocab: &Vocabulary) -> Vec<f64> {
        let mut tape = Tape::new(&self.store);
        let (_, e) = self.forward(&mut tape, nodes, vocab);
        tape.value(e).to_vec()
    }

    pub fn write_params(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.hidden as u64).to_le_bytes())?;
        w.write_all(&(self.layers as u64).to_le_bytes())?;
        w.write_all(&(self.vocab_size as u64).to_le_bytes())?;
        w.write_all(&self.store.adam_step.to_le_bytes())?;
        w.write_all(&(self.store.tensors.len() as u64).to_le_bytes())?;
        for t in &self.store.tensors {
            let name = t.name.as_bytes();
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(t.rows as u64).to_le_bytes())?;
            w.write_all(&(t.cols as u64).to_le_bytes())?;
            for buf in [&t.data, &t.adam_m, &t.adam_v] {
                for &x in buf.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Restore parameters (and Adam state) written by [`write_params`] into
    /// a net of identical architecture.
    pub fn read_params(&mut self, r: &mut impl Read) -> std::io::Result<()> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad parameter file magic"));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> std::io::Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let hidden = read_u64(r)? as usize;
        let layers = read_u64(r)? as usize;
        let vocab_size = read_u64(r)? as usize;
        if hidden != self.hidden || layers != self.layers || vocab_size != self.vocab_size {
            return Err(bad("parameter file dimensions do not match configuration"));
        }
        self.store.adam_step = read_u64(r)?;
        let ntensors = read_u64(r)? as usize;
        if ntensors != self.store.tensors.len() {
            return Err(bad("tensor count mismatch"));
        }
        for t in &mut self.store.tensors {
            let name_len = read_u64(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            if name != t.name.as_bytes() {
                return Err(bad("tensor name mismatch"));
            }
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            if rows != t.rows || cols != t.cols {
                return Err(bad("tensor shape mismatch"));
            }
            let mut f64buf = [0u8; 8];
            for buf in [&mut t.data, &mut t.adam_m, &mut t.adam_v] {
                for x in buf.iter_mut() {
                    r.read_exact(&mut f64buf)?;
                    *x = f64::from_le_bytes(f64buf);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_rpn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(hidden: usize) -> (PolicyNet, Vocabulary) {
        let vocab = Vocabulary::full();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (PolicyNet::new(&vocab, hidden, 2, &mut rng), vocab)
    }

    #[test]
    fn identity_self_loop_passes_embedding_through() {
        let (mut net, vocab) = net(4);
        // zero all weights, then make self-loops the identity
        for t in &mut net.store.tensors {
            if t.name.contains("rel") || t.name.contains("self") {
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        for l in 0..2 {
            let id = net.self_loop[l];
            let h = net.hidden;
            for i in 0..h {
                net.store.tensors[id.0].data[i * h + i] = 1.0;
            }
        }
        // make the close embedding non-negative so ReLU is transparent
        let close_idx = vocab.index_of(&crate::formula::Token::Feature(crate::formula::Feature::Close)).unwrap();
        for j in 0..net.hidden {
            let v = net.store.tensors[net.embed.0].data[close_idx * net.hidden + j].abs();
            net.store.tensors[net.embed.0].data[close_idx * net.hidden + j] = v;
        }
        let tree = parse_rpn(&vocab, "close").unwrap();
        let e = net.embed_detached(&tree.nodes, &vocab);
        let row = net.store.get(net.embed).row(close_idx);
        assert_eq!(e, row.to_vec());
    }

    #[test]
    fn embedding_is_deterministic_and_order_invariant() {
        let (net, vocab) = net(8);
        let tree = parse_rpn(&vocab, "close open Sub 10 TsMean high Mul").unwrap();
        let e1 = net.embed_detached(&tree.nodes, &vocab);
        let e2 = net.embed_detached(&tree.nodes, &vocab);
        assert_eq!(e1, e2);

        // permute node storage order, remapping child indices
        let n = tree.nodes.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut nodes = vec![tree.nodes[0].clone(); n];
        for (new, &old) in perm.iter().enumerate() {
            let mut node = tree.nodes[old].clone();
            node.children = node.children.iter().map(|&c| inv[c]).collect();
            nodes[new] = node;
        }
        let e3 = net.embed_detached(&nodes, &vocab);
        for (a, b) in e1.iter().zip(&e3) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn commutative_operand_symmetry() {
        let (net, vocab) = net(8);
        let a = parse_rpn(&vocab, "close open Add").unwrap();
        let b = parse_rpn(&vocab, "open close Add").unwrap();
        let ea = net.embed_detached(&a.nodes, &vocab);
        let eb = net.embed_detached(&b.nodes, &vocab);
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_legal_action_gets_probability_one() {
        let (net, vocab) = net(8);
        let mut mask = vec![false; vocab.len()];
        mask[3] = true;
        let mut tape = Tape::new(&net.store);
        let (_, e) = net.forward(&mut tape, &[], &vocab);
        let lp = net.policy_logits(&mut tape, e, &mask);
        assert_eq!(tape.value(lp)[3], 0.0);
    }

    #[test]
    fn params_round_trip() {
        let (net, vocab) = net(8);
        let mut buf = Vec::new();
        net.write_params(&mut buf).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut other = PolicyNet::new(&vocab, 8, 2, &mut rng);
        other.read_params(&mut buf.as_slice()).unwrap();
        for (a, b) in net.store.tensors.iter().zip(&other.store.tensors) {
            assert_eq!(a.data, b.data);
            assert_eq!(a.adam_m, b.adam_m);
        }
    }
}
