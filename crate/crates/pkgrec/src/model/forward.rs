use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::data::{sample_tree, Corpus, SampleTree, SessionIndex};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Tape, Tensor, ValueId};

use super::params::ParameterSet;
use super::{EffectiveWiring, ModelConfig, RecurrentCell};

/// One attention weight observed at the root of a social neighborhood.
/// `friend == developer` marks the self-attention entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEntry {
    pub layer: usize,
    pub friend: u32,
    pub alpha: f64,
}

/// Attention observed while scoring one prediction instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub developer: u32,
    pub session_t: u64,
    /// Prefix length n of the instance that produced the record.
    pub position: usize,
    pub entries: Vec<AttentionEntry>,
}

pub struct InstanceOutput {
    /// Tape id of the |I| raw scores (inner products, pre-softmax).
    pub scores: ValueId,
    pub attention: Vec<AttentionEntry>,
}

/// Tape ids of all parameters, in canonical order.
struct ParamIds {
    item_embed: ValueId,
    dev_embed: ValueId,
    w_x: Vec<ValueId>,
    w_h: Vec<ValueId>,
    b: Vec<ValueId>,
    w_friend: ValueId,
    w_dep: Vec<ValueId>,
    w_soc: Vec<ValueId>,
    w_td: ValueId,
    w_ts: ValueId,
    w_t: ValueId,
    order: Vec<ValueId>,
}

impl ParamIds {
    fn leaf(tape: &mut Tape, params: &ParameterSet) -> ParamIds {
        // Must mirror ParameterSet::named() ordering.
        let item_embed = tape.leaf(params.item_embed.clone());
        let dev_embed = tape.leaf(params.dev_embed.clone());
        let w_x: Vec<ValueId> = params.cell.w_x.iter().map(|t| tape.leaf(t.clone())).collect();
        let w_h: Vec<ValueId> = params.cell.w_h.iter().map(|t| tape.leaf(t.clone())).collect();
        let b: Vec<ValueId> = params.cell.b.iter().map(|t| tape.leaf(t.clone())).collect();
        let w_friend = tape.leaf(params.w_friend.clone());
        let w_dep: Vec<ValueId> = params.w_dep.iter().map(|t| tape.leaf(t.clone())).collect();
        let w_soc: Vec<ValueId> = params.w_soc.iter().map(|t| tape.leaf(t.clone())).collect();
        let w_td = tape.leaf(params.w_td.clone());
        let w_ts = tape.leaf(params.w_ts.clone());
        let w_t = tape.leaf(params.w_t.clone());

        let mut order = vec![item_embed, dev_embed];
        order.extend(&w_x);
        order.extend(&w_h);
        order.extend(&b);
        order.push(w_friend);
        order.extend(&w_dep);
        order.extend(&w_soc);
        order.push(w_td);
        order.push(w_ts);
        order.push(w_t);

        ParamIds {
            item_embed,
            dev_embed,
            w_x,
            w_h,
            b,
            w_friend,
            w_dep,
            w_soc,
            w_td,
            w_ts,
            w_t,
            order,
        }
    }
}

/// Draw per-package dependency neighborhoods for one batch (ascending
/// package id). Empty when the dependency side is inactive — in that case no
/// randomness is consumed.
pub fn draw_dependency_samples(
    corpus: &Corpus,
    config: &ModelConfig,
    wiring: EffectiveWiring,
    rng: &mut ChaCha8Rng,
) -> Vec<SampleTree> {
    if !wiring.dependency {
        return Vec::new();
    }
    let budgets = config.dependency_budgets();
    (0..corpus.num_packages() as u32)
        .map(|p| sample_tree(&corpus.dependency, p, &budgets, rng))
        .collect()
}

/// Draw the social neighborhood of one developer, or `None` (consuming no
/// randomness) when the social side is inactive.
pub fn draw_social_sample(
    corpus: &Corpus,
    config: &ModelConfig,
    wiring: EffectiveWiring,
    developer: u32,
    rng: &mut ChaCha8Rng,
) -> Option<SampleTree> {
    wiring
        .social
        .then(|| sample_tree(&corpus.social, developer, &config.social_budgets(), rng))
}

/// Preorder arena view of a sample tree.
struct Arena {
    nodes: Vec<u32>,
    depths: Vec<usize>,
    children: Vec<Vec<usize>>,
}

fn flatten(tree: &SampleTree) -> Arena {
    fn walk(t: &SampleTree, depth: usize, arena: &mut Arena) -> usize {
        let idx = arena.nodes.len();
        arena.nodes.push(t.node);
        arena.depths.push(depth);
        arena.children.push(Vec::new());
        for c in &t.children {
            let ci = walk(c, depth + 1, arena);
            arena.children[idx].push(ci);
        }
        idx
    }
    let mut arena = Arena {
        nodes: Vec::new(),
        depths: Vec::new(),
        children: Vec::new(),
    };
    walk(tree, 0, &mut arena);
    arena
}

/// Builds the computation graph for one batch: package representations are
/// propagated once up front and shared by every instance; friend encodings
/// are cached per (friend, selected session).
pub struct BatchForward<'a> {
    tape: Tape,
    corpus: &'a Corpus,
    config: &'a ModelConfig,
    wiring: EffectiveWiring,
    train_mode: bool,
    pids: ParamIds,
    index: SessionIndex<'a>,
    item_final: Vec<ValueId>,
    friend_cache: HashMap<(u32, u64), ValueId>,
    audit: bool,
    audit_alphas: Vec<Vec<f64>>,
    social_accesses: usize,
}

impl<'a> BatchForward<'a> {
    pub fn new(
        corpus: &'a Corpus,
        params: &ParameterSet,
        config: &'a ModelConfig,
        wiring: EffectiveWiring,
        train_mode: bool,
        dependency_samples: &[SampleTree],
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::build(
            corpus,
            params,
            config,
            wiring,
            train_mode,
            dependency_samples,
            dropout_rng,
            false,
        )
    }

    /// Like [`BatchForward::new`] but records every attention distribution
    /// built anywhere in the batch, for normalization checks.
    pub fn new_audited(
        corpus: &'a Corpus,
        params: &ParameterSet,
        config: &'a ModelConfig,
        wiring: EffectiveWiring,
        train_mode: bool,
        dependency_samples: &[SampleTree],
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::build(
            corpus,
            params,
            config,
            wiring,
            train_mode,
            dependency_samples,
            dropout_rng,
            true,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        corpus: &'a Corpus,
        params: &ParameterSet,
        config: &'a ModelConfig,
        wiring: EffectiveWiring,
        train_mode: bool,
        dependency_samples: &[SampleTree],
        dropout_rng: &mut ChaCha8Rng,
        audit: bool,
    ) -> Result<Self> {
        if params.num_items() != corpus.num_packages()
            || params.num_developers() != corpus.num_developers()
        {
            return Err(Error::data(format!(
                "parameter tables ({} items, {} developers) do not match corpus ({}, {})",
                params.num_items(),
                params.num_developers(),
                corpus.num_packages(),
                corpus.num_developers()
            )));
        }
        let mut tape = Tape::new();
        let pids = ParamIds::leaf(&mut tape, params);
        let index = SessionIndex::build(&corpus.sessions, corpus.num_developers());
        let mut fwd = BatchForward {
            tape,
            corpus,
            config,
            wiring,
            train_mode,
            pids,
            index,
            item_final: Vec::new(),
            friend_cache: HashMap::new(),
            audit,
            audit_alphas: Vec::new(),
            social_accesses: 0,
        };
        fwd.build_item_finals(dependency_samples, dropout_rng)?;
        Ok(fwd)
    }

    /// Every attention distribution recorded so far (audited batches only).
    pub fn audited_alphas(&self) -> &[Vec<f64>] {
        &self.audit_alphas
    }

    /// How often this batch touched the social graph or friend sessions.
    pub fn social_access_count(&self) -> usize {
        self.social_accesses
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        self.tape.value(id)
    }

    /// Final package representations (tape ids, ascending package id).
    pub fn item_finals(&self) -> &[ValueId] {
        &self.item_final
    }

    fn build_item_finals(
        &mut self,
        dependency_samples: &[SampleTree],
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let num_items = self.corpus.num_packages();
        if !self.wiring.dependency {
            self.item_final = (0..num_items)
                .map(|i| self.tape.embed_row(self.pids.item_embed, i))
                .collect();
            return Ok(());
        }
        if dependency_samples.len() != num_items {
            return Err(Error::data(format!(
                "need one dependency sample per package ({num_items}), got {}",
                dependency_samples.len()
            )));
        }
        self.item_final = Vec::with_capacity(num_items);
        let w_dep = self.pids.w_dep.clone();
        for (i, tree) in dependency_samples.iter().enumerate() {
            debug_assert_eq!(tree.node as usize, i);
            let arena = flatten(tree);
            let table = self.pids.item_embed;
            let base: Vec<ValueId> = arena
                .nodes
                .iter()
                .map(|&n| self.tape.embed_row(table, n as usize))
                .collect();
            let (e0, el) = self.propagate(&arena, base, &w_dep, dropout_rng, None);
            let both = self.tape.concat(e0, el);
            let final_repr = self.tape.matvec(self.pids.w_td, both);
            self.item_final.push(final_repr);
        }
        Ok(())
    }

    /// Run the recurrent encoder over a session prefix.
    fn encode(&mut self, items: &[u32], dropout_rng: &mut ChaCha8Rng) -> Result<ValueId> {
        if items.is_empty() {
            return Err(Error::data("cannot encode an empty session prefix"));
        }
        let num_items = self.corpus.num_packages();
        if let Some(&bad) = items.iter().find(|&&i| i as usize >= num_items) {
            return Err(Error::data(format!(
                "unknown item id {bad} (catalog has {num_items})"
            )));
        }
        let h_dim = self.config.hidden_dim;
        let rate = self.config.dropout;
        let mut h = self.tape.zeros(vec![h_dim]);
        let mut c = self.tape.zeros(vec![h_dim]);
        for &item in items {
            let raw = self.tape.embed_row(self.pids.item_embed, item as usize);
            let x = self.tape.dropout(raw, rate, self.train_mode, dropout_rng);
            match self.config.cell {
                RecurrentCell::Lstm => {
                    let gate = |fwd: &mut Self, g: usize| {
                        let wx = fwd.tape.matvec(fwd.pids.w_x[g], x);
                        let wh = fwd.tape.matvec(fwd.pids.w_h[g], h);
                        fwd.tape.add_n(&[wx, wh, fwd.pids.b[g]])
                    };
                    let i_pre = gate(self, 0);
                    let f_pre = gate(self, 1);
                    let g_pre = gate(self, 2);
                    let o_pre = gate(self, 3);
                    let i_g = self.tape.sigmoid(i_pre);
                    let f_g = self.tape.sigmoid(f_pre);
                    let g_g = self.tape.tanh(g_pre);
                    let o_g = self.tape.sigmoid(o_pre);
                    let keep = self.tape.mul(f_g, c);
                    let write = self.tape.mul(i_g, g_g);
                    c = self.tape.add(keep, write);
                    let c_act = self.tape.tanh(c);
                    h = self.tape.mul(o_g, c_act);
                }
                RecurrentCell::Tanh => {
                    // The plain cell reuses the candidate-gate slot.
                    let wx = self.tape.matvec(self.pids.w_x[2], x);
                    let wh = self.tape.matvec(self.pids.w_h[2], h);
                    let pre = self.tape.add_n(&[wx, wh, self.pids.b[2]]);
                    h = self.tape.tanh(pre);
                }
            }
        }
        Ok(h)
    }

    /// Friend representation: fuse the friend's encoded latest session
    /// strictly before `time_step` with their static embedding.
    fn friend_repr(
        &mut self,
        friend: u32,
        time_step: u64,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<ValueId> {
        let selected = if self.wiring.zero_dynamic {
            None
        } else {
            self.index.latest_before(friend, time_step)
        };
        let key = (friend, selected.map_or(u64::MAX, |s| s.time_step));
        if let Some(&id) = self.friend_cache.get(&key) {
            return Ok(id);
        }
        let dynamic = match selected {
            Some(session) => self.encode(&session.items, dropout_rng)?,
            None => self.tape.zeros(vec![self.config.hidden_dim]),
        };
        let static_part = if self.wiring.zero_static {
            self.tape.zeros(vec![self.config.embed_dim])
        } else {
            self.tape.embed_row(self.pids.dev_embed, friend as usize)
        };
        let both = self.tape.concat(dynamic, static_part);
        let lin = self.tape.matvec(self.pids.w_friend, both);
        let fused = self.tape.relu(lin);
        self.friend_cache.insert(key, fused);
        Ok(fused)
    }

    /// Attention propagation over a sampled neighborhood.
    ///
    /// Layer-l representations are built bottom-up; a node at depth d only
    /// needs layers up to `L - d`. Candidates are the node itself followed by
    /// its sampled children; weights are the softmax of inner products
    /// against the node's previous-layer representation.
    fn propagate(
        &mut self,
        arena: &Arena,
        base: Vec<ValueId>,
        layer_weights: &[ValueId],
        dropout_rng: &mut ChaCha8Rng,
        mut record_root: Option<&mut Vec<AttentionEntry>>,
    ) -> (ValueId, ValueId) {
        let levels = layer_weights.len();
        let n = arena.nodes.len();
        debug_assert_eq!(base.len(), n);

        let mut reprs: Vec<Vec<Option<ValueId>>> = vec![vec![None; n]; levels + 1];
        for (idx, &id) in base.iter().enumerate() {
            reprs[0][idx] = Some(id);
        }
        for level in 1..=levels {
            for idx in 0..n {
                if arena.depths[idx] > levels - level {
                    continue;
                }
                let prev_self = reprs[level - 1][idx].unwrap();
                let mut candidates = vec![prev_self];
                for &child in &arena.children[idx] {
                    candidates.push(reprs[level - 1][child].unwrap());
                }
                let scores = self.tape.dot_each(prev_self, &candidates);
                let alpha = self.tape.softmax(scores);
                if self.audit {
                    self.audit_alphas
                        .push(self.tape.value(alpha).data().to_vec());
                }
                if idx == 0 {
                    if let Some(entries) = record_root.as_mut() {
                        let weights = self.tape.value(alpha).data().to_vec();
                        entries.push(AttentionEntry {
                            layer: level,
                            friend: arena.nodes[0],
                            alpha: weights[0],
                        });
                        for (c, &child) in arena.children[0].iter().enumerate() {
                            entries.push(AttentionEntry {
                                layer: level,
                                friend: arena.nodes[child],
                                alpha: weights[c + 1],
                            });
                        }
                    }
                }
                let agg = self.tape.weighted_sum(alpha, &candidates);
                let lin = self.tape.matvec(layer_weights[level - 1], agg);
                let act = self.tape.relu(lin);
                let out = self
                    .tape
                    .dropout(act, self.config.dropout, self.train_mode, dropout_rng);
                reprs[level][idx] = Some(out);
            }
        }
        (reprs[0][0].unwrap(), reprs[levels][0].unwrap())
    }

    /// Score one prediction instance: encode the prefix, refine through the
    /// social neighborhood, and take inner products with every package's
    /// final representation.
    pub fn instance(
        &mut self,
        developer: u32,
        time_step: u64,
        prefix: &[u32],
        social_sample: Option<&SampleTree>,
        dropout_rng: &mut ChaCha8Rng,
        record_attention: bool,
    ) -> Result<InstanceOutput> {
        if developer as usize >= self.corpus.num_developers() {
            return Err(Error::data(format!("unknown developer id {developer}")));
        }
        let h0 = self.encode(prefix, dropout_rng)?;
        let mut attention = Vec::new();
        let h_final = if self.wiring.social {
            let tree = social_sample.ok_or_else(|| {
                Error::data("social side active but no neighborhood sample supplied")
            })?;
            debug_assert_eq!(tree.node, developer);
            self.social_accesses += 1;
            let arena = flatten(tree);
            let mut base = Vec::with_capacity(arena.nodes.len());
            for (idx, &node) in arena.nodes.iter().enumerate() {
                if idx == 0 {
                    base.push(h0);
                } else {
                    self.social_accesses += 1;
                    base.push(self.friend_repr(node, time_step, dropout_rng)?);
                }
            }
            let w_soc = self.pids.w_soc.clone();
            let (h_root0, h_root_l) = self.propagate(
                &arena,
                base,
                &w_soc,
                dropout_rng,
                record_attention.then_some(&mut attention),
            );
            let both = self.tape.concat(h_root0, h_root_l);
            self.tape.matvec(self.pids.w_ts, both)
        } else {
            self.tape.matvec(self.pids.w_t, h0)
        };
        let item_final = self.item_final.clone();
        let scores = self.tape.dot_each(h_final, &item_final);
        Ok(InstanceOutput { scores, attention })
    }

    /// Softmax over the raw scores of an instance.
    pub fn probabilities(&self, scores: ValueId) -> Result<Vec<f64>> {
        softmax(self.tape.value(scores).data())
    }

    /// Fused −log p(target) for one instance.
    pub fn nll(&mut self, scores: ValueId, target: u32) -> Result<ValueId> {
        if target as usize >= self.corpus.num_packages() {
            return Err(Error::data(format!(
                "target item {target} absent from the catalog"
            )));
        }
        Ok(self.tape.log_softmax_nll(scores, target as usize))
    }

    /// Mean of per-instance losses.
    pub fn mean_loss(&mut self, losses: &[ValueId]) -> ValueId {
        let sum = self.tape.add_n(losses);
        self.tape.scale(sum, 1.0 / losses.len() as f64)
    }

    pub fn scalar(&self, id: ValueId) -> f64 {
        self.tape.value(id).data()[0]
    }

    pub fn backward(&mut self, loss: ValueId) {
        self.tape.backward(loss);
    }

    /// Per-parameter gradients in canonical order (zeros when off-path).
    pub fn gradients(&self) -> Vec<Tensor> {
        self.pids
            .order
            .iter()
            .map(|&id| self.tape.grad_or_zeros(id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Graph, Interner, Session};
    use crate::model::Variant;
    use crate::streams;

    fn corpus(
        devs: usize,
        pkgs: usize,
        social: &[(u32, u32)],
        deps: &[(u32, u32)],
        sessions: Vec<Session>,
    ) -> Corpus {
        let mut developers = Interner::new();
        for d in 0..devs {
            developers.intern(&format!("d{d}"));
        }
        let mut packages = Interner::new();
        for p in 0..pkgs {
            packages.intern(&format!("p{p}"));
        }
        Corpus {
            developers,
            packages,
            sessions,
            social: Graph::from_edges(devs, social),
            dependency: Graph::from_edges(pkgs, deps),
        }
    }

    fn sess(developer: u32, time_step: u64, items: &[u32]) -> Session {
        Session {
            developer,
            time_step,
            items: items.to_vec(),
        }
    }

    fn tiny_config(e: usize, h: usize, layers: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: e,
            hidden_dim: h,
            layers,
            social_budget: 10,
            dependency_budget: 10,
            dropout: 0.0,
            cell: RecurrentCell::Lstm,
        }
    }

    fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
        (
            streams::stream_rng(seed, streams::SAMPLE),
            streams::stream_rng(seed, streams::DROPOUT),
        )
    }

    fn run_probs(
        corpus: &Corpus,
        params: &ParameterSet,
        config: &ModelConfig,
        variant: Variant,
        seed: u64,
        developer: u32,
        time_step: u64,
        prefix: &[u32],
    ) -> Vec<f64> {
        let wiring = EffectiveWiring::resolve(variant, config, corpus);
        let (mut srng, mut drng) = rngs(seed);
        let deps = draw_dependency_samples(corpus, config, wiring, &mut srng);
        let mut fwd =
            BatchForward::new(corpus, params, config, wiring, false, &deps, &mut drng).unwrap();
        let social = draw_social_sample(corpus, config, wiring, developer, &mut srng);
        let out = fwd
            .instance(developer, time_step, prefix, social.as_ref(), &mut drng, false)
            .unwrap();
        fwd.probabilities(out.scores).unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform_scores() {
        let c = corpus(2, 5, &[(0, 1)], &[(0, 1)], vec![sess(1, 0, &[0, 1])]);
        let config = tiny_config(3, 4, 2);
        let mut params = ParameterSet::init(&config, 5, 2, 1);
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let probs = run_probs(&c, &params, &config, Variant::Full, 3, 0, 1, &[0, 2, 4]);
        for p in probs {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_matches_manual_lstm_steps() {
        let c = corpus(1, 3, &[], &[], vec![]);
        let config = tiny_config(2, 2, 1);
        let params = ParameterSet::init(&config, 3, 1, 7);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        assert!(!wiring.social && !wiring.dependency);
        let (_, mut drng) = rngs(0);
        let mut fwd =
            BatchForward::new(&c, &params, &config, wiring, false, &[], &mut drng).unwrap();
        let h = fwd.encode(&[0, 2, 1], &mut drng).unwrap();
        let got = fwd.value(h).data().to_vec();

        // Independent step-by-step oracle.
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hh = vec![0.0; 2];
        let mut cc = vec![0.0; 2];
        for &item in &[0usize, 2, 1] {
            let x = params.item_embed.row(item);
            let pre = |g: usize| {
                let mut out = vec![0.0; 2];
                for (r, slot) in out.iter_mut().enumerate() {
                    let mut acc = params.cell.b[g].data()[r];
                    for k in 0..2 {
                        acc += params.cell.w_x[g].data()[r * 2 + k] * x[k];
                        acc += params.cell.w_h[g].data()[r * 2 + k] * hh[k];
                    }
                    *slot = acc;
                }
                out
            };
            let (i, f, g, o) = (pre(0), pre(1), pre(2), pre(3));
            for r in 0..2 {
                cc[r] = sigmoid(f[r]) * cc[r] + sigmoid(i[r]) * g[r].tanh();
            }
            for r in 0..2 {
                hh[r] = sigmoid(o[r]) * cc[r].tanh();
            }
        }
        for (a, b) in got.iter().zip(&hh) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_item_prefix_is_one_cell_step() {
        let c = corpus(1, 3, &[], &[], vec![]);
        let config = tiny_config(2, 3, 1);
        let params = ParameterSet::init(&config, 3, 1, 9);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        let (_, mut drng) = rngs(0);
        let mut fwd =
            BatchForward::new(&c, &params, &config, wiring, false, &[], &mut drng).unwrap();
        let h = fwd.encode(&[1], &mut drng).unwrap();
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let x = params.item_embed.row(1);
        for r in 0..3 {
            let pre = |g: usize| {
                params.cell.b[g].data()[r]
                    + (0..2)
                        .map(|k| params.cell.w_x[g].data()[r * 2 + k] * x[k])
                        .sum::<f64>()
            };
            let expect = sigmoid(pre(3)) * (sigmoid(pre(0)) * pre(2).tanh()).tanh();
            let got = fwd.value(h).data()[r];
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn vanilla_cell_is_tanh_recurrence() {
        let c = corpus(1, 3, &[], &[], vec![]);
        let config = ModelConfig {
            cell: RecurrentCell::Tanh,
            ..tiny_config(2, 2, 1)
        };
        let params = ParameterSet::init(&config, 3, 1, 4);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        let (_, mut drng) = rngs(0);
        let mut fwd =
            BatchForward::new(&c, &params, &config, wiring, false, &[], &mut drng).unwrap();
        let h = fwd.encode(&[2], &mut drng).unwrap();
        let x = params.item_embed.row(2);
        for r in 0..2 {
            let pre = params.cell.b[2].data()[r]
                + (0..2)
                    .map(|k| params.cell.w_x[2].data()[r * 2 + k] * x[k])
                    .sum::<f64>();
            assert!((fwd.value(h).data()[r] - pre.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_analytic_on_crafted_embeddings() {
        // One dependency layer: target p0 = [1,0] with neighbors p1 = [1,0]
        // and p2 = [0,1]. Candidates (self, p1, p2) score (1, 1, 0), so the
        // weights are a permutation of (e, e, 1) / (2e + 1).
        let c = corpus(1, 3, &[], &[(0, 1), (0, 2)], vec![]);
        let config = tiny_config(2, 2, 1);
        let mut params = ParameterSet::init(&config, 3, 1, 1);
        params.item_embed = Tensor::new(vec![3, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        assert!(wiring.dependency && !wiring.social);
        let (mut srng, mut drng) = rngs(0);
        let deps = draw_dependency_samples(&c, &config, wiring, &mut srng);
        let fwd = BatchForward::new_audited(&c, &params, &config, wiring, false, &deps, &mut drng)
            .unwrap();
        // One attention vector per package tree; p0's is first and has
        // three candidates, p1/p2 are leaves attending only to themselves.
        let alphas = fwd.audited_alphas();
        assert_eq!(alphas.len(), 3);
        assert_eq!(alphas[0].len(), 3);
        assert_eq!(alphas[1], vec![1.0]);
        assert_eq!(alphas[2], vec![1.0]);
        let e = std::f64::consts::E;
        let mut sorted = alphas[0].clone();
        sorted.sort_by(f64::total_cmp);
        assert!((sorted[0] - 1.0 / (2.0 * e + 1.0)).abs() < 1e-12);
        assert!((sorted[1] - e / (2.0 * e + 1.0)).abs() < 1e-12);
        assert!((sorted[2] - e / (2.0 * e + 1.0)).abs() < 1e-12);
        let sum: f64 = alphas[0].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_candidates_share_attention_equally() {
        let c = corpus(1, 4, &[], &[(0, 1), (0, 2)], vec![]);
        let config = tiny_config(2, 2, 1);
        let mut params = ParameterSet::init(&config, 4, 1, 1);
        params.item_embed = Tensor::new(
            vec![4, 2],
            vec![0.4, -0.3, 0.4, -0.3, 0.4, -0.3, 9.0, 9.0],
        );
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        let (mut srng, mut drng) = rngs(0);
        let deps = draw_dependency_samples(&c, &config, wiring, &mut srng);
        let fwd = BatchForward::new_audited(&c, &params, &config, wiring, false, &deps, &mut drng)
            .unwrap();
        let three: Vec<&Vec<f64>> = fwd
            .audited_alphas()
            .iter()
            .filter(|a| a.len() == 3)
            .collect();
        assert_eq!(three.len(), 1, "only p0 has two sampled neighbors");
        for v in three[0] {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_graph_edges_reduce_to_plain_encoder_transform() {
        let sessions = vec![sess(0, 0, &[0, 1]), sess(1, 0, &[2, 3])];
        let bare = corpus(2, 5, &[], &[], sessions.clone());
        let config = tiny_config(3, 4, 2);
        let params = ParameterSet::init(&config, 5, 2, 11);
        let probs = run_probs(&bare, &params, &config, Variant::Full, 5, 0, 1, &[1, 3]);

        // Oracle: probabilities of (item_embed · (w_t · h0)).
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &bare);
        let (_, mut drng) = rngs(5);
        let mut fwd =
            BatchForward::new(&bare, &params, &config, wiring, false, &[], &mut drng).unwrap();
        let h0 = fwd.encode(&[1, 3], &mut drng).unwrap();
        let h0v = fwd.value(h0).data().to_vec();
        let hu: Vec<f64> = (0..3)
            .map(|r| {
                (0..4)
                    .map(|k| params.w_t.data()[r * 4 + k] * h0v[k])
                    .sum::<f64>()
            })
            .collect();
        let scores: Vec<f64> = (0..5)
            .map(|i| {
                params
                    .item_embed
                    .row(i)
                    .iter()
                    .zip(&hu)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect();
        let expect = softmax(&scores).unwrap();
        for (a, b) in probs.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn package_finals_ignore_the_prefix() {
        let sessions = vec![sess(0, 0, &[0, 1]), sess(0, 2, &[2, 0]), sess(1, 1, &[1, 2])];
        let c = corpus(2, 4, &[(0, 1), (1, 0)], &[(0, 1), (1, 2), (2, 3)], sessions);
        let config = tiny_config(3, 3, 2);
        let params = ParameterSet::init(&config, 4, 2, 2);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        assert!(wiring.social && wiring.dependency);

        let run = |prefix: &[u32]| -> (Vec<Vec<f64>>, Vec<f64>) {
            let (mut srng, mut drng) = rngs(8);
            let deps = draw_dependency_samples(&c, &config, wiring, &mut srng);
            let mut fwd =
                BatchForward::new(&c, &params, &config, wiring, false, &deps, &mut drng).unwrap();
            let social = draw_social_sample(&c, &config, wiring, 0, &mut srng);
            let out = fwd
                .instance(0, 2, prefix, social.as_ref(), &mut drng, false)
                .unwrap();
            let finals = fwd
                .item_finals()
                .iter()
                .map(|&id| fwd.value(id).data().to_vec())
                .collect();
            (finals, fwd.probabilities(out.scores).unwrap())
        };
        let (finals_a, probs_a) = run(&[0]);
        let (finals_b, probs_b) = run(&[0, 1]);
        assert_eq!(finals_a, finals_b, "package reprs must not depend on prefix");
        assert_ne!(probs_a, probs_b, "developer repr must depend on prefix");
    }

    #[test]
    fn eval_mode_forward_is_deterministic() {
        let sessions = vec![sess(0, 0, &[0, 1]), sess(1, 0, &[1, 2]), sess(0, 1, &[2, 3])];
        let c = corpus(2, 4, &[(0, 1)], &[(1, 2)], sessions);
        let config = tiny_config(3, 3, 2);
        let params = ParameterSet::init(&config, 4, 2, 6);
        let a = run_probs(&c, &params, &config, Variant::Full, 9, 0, 1, &[0, 1]);
        let b = run_probs(&c, &params, &config, Variant::Full, 9, 0, 1, &[0, 1]);
        assert_eq!(a, b);
        let sum: f64 = a.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn social_access_counter_is_zero_when_masked() {
        let sessions = vec![sess(0, 0, &[0, 1]), sess(1, 0, &[1, 2]), sess(0, 1, &[2, 0])];
        let c = corpus(2, 3, &[(0, 1), (1, 0)], &[(0, 1)], sessions);
        let config = tiny_config(2, 2, 1);
        let params = ParameterSet::init(&config, 3, 2, 3);
        let wiring = EffectiveWiring::resolve(Variant::DependencyOnly, &config, &c);
        let (mut srng, mut drng) = rngs(0);
        let deps = draw_dependency_samples(&c, &config, wiring, &mut srng);
        let mut fwd =
            BatchForward::new(&c, &params, &config, wiring, false, &deps, &mut drng).unwrap();
        let social = draw_social_sample(&c, &config, wiring, 0, &mut srng);
        assert!(social.is_none());
        fwd.instance(0, 1, &[0, 1], social.as_ref(), &mut drng, false)
            .unwrap();
        assert_eq!(fwd.social_access_count(), 0);
    }

    #[test]
    fn static_only_ignores_friend_sessions() {
        // Perturbing a friend's prior session must not change the output
        // when the dynamic pathway is zeroed, and must change it when the
        // static pathway is zeroed instead.
        let mut sessions = vec![sess(0, 1, &[0, 1]), sess(1, 0, &[1, 2])];
        let c1 = corpus(2, 4, &[(0, 1)], &[], sessions.clone());
        sessions[1] = sess(1, 0, &[3, 0]);
        let c2 = corpus(2, 4, &[(0, 1)], &[], sessions);
        let config = tiny_config(3, 3, 2);
        let params = ParameterSet::init(&config, 4, 2, 13);
        let a = run_probs(&c1, &params, &config, Variant::StaticOnly, 2, 0, 1, &[0]);
        let b = run_probs(&c2, &params, &config, Variant::StaticOnly, 2, 0, 1, &[0]);
        assert_eq!(a, b);
        let da = run_probs(&c1, &params, &config, Variant::DynamicOnly, 2, 0, 1, &[0]);
        let db = run_probs(&c2, &params, &config, Variant::DynamicOnly, 2, 0, 1, &[0]);
        assert_ne!(da, db);
    }

    #[test]
    fn friendless_developer_attends_only_to_self() {
        let sessions = vec![sess(0, 1, &[0, 1]), sess(1, 0, &[1, 2])];
        // d0 has no outgoing follows but the graph has edges elsewhere.
        let c = corpus(2, 4, &[(1, 0)], &[], sessions);
        let config = tiny_config(3, 3, 2);
        let params = ParameterSet::init(&config, 4, 2, 21);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        assert!(wiring.social);
        let (mut srng, mut drng) = rngs(1);
        let mut fwd =
            BatchForward::new(&c, &params, &config, wiring, false, &[], &mut drng).unwrap();
        let social = draw_social_sample(&c, &config, wiring, 0, &mut srng);
        let out = fwd
            .instance(0, 1, &[0], social.as_ref(), &mut drng, true)
            .unwrap();
        // Every layer's root attention is the singleton [1.0] on self.
        assert_eq!(out.attention.len(), config.layers);
        for entry in &out.attention {
            assert_eq!(entry.friend, 0);
            assert!((entry.alpha - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let c = corpus(1, 2, &[], &[], vec![sess(0, 0, &[0, 1])]);
        let config = tiny_config(2, 2, 1);
        let params = ParameterSet::init(&config, 2, 1, 0);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        let (_, mut drng) = rngs(0);
        let mut fwd =
            BatchForward::new(&c, &params, &config, wiring, false, &[], &mut drng).unwrap();
        assert!(fwd.instance(0, 1, &[5], None, &mut drng, false).is_err());
        assert!(fwd.instance(7, 1, &[0], None, &mut drng, false).is_err());
        let out = fwd.instance(0, 1, &[0], None, &mut drng, false).unwrap();
        assert!(fwd.nll(out.scores, 9).is_err());
    }

    #[test]
    fn loss_gradient_flows_to_used_parameters_only() {
        let sessions = vec![sess(0, 0, &[0, 1]), sess(1, 0, &[1, 2])];
        let c = corpus(2, 4, &[], &[], sessions);
        let config = tiny_config(2, 2, 1);
        let params = ParameterSet::init(&config, 4, 2, 5);
        let wiring = EffectiveWiring::resolve(Variant::Full, &config, &c);
        assert!(!wiring.social && !wiring.dependency);
        let (_, mut drng) = rngs(0);
        let mut fwd =
            BatchForward::new(&c, &params, &config, wiring, false, &[], &mut drng).unwrap();
        let out = fwd.instance(0, 1, &[0, 1], None, &mut drng, false).unwrap();
        let nll = fwd.nll(out.scores, 2).unwrap();
        let loss = fwd.mean_loss(&[nll]);
        assert!(fwd.scalar(loss) > 0.0);
        fwd.backward(loss);
        let grads = fwd.gradients();
        let named = params.named();
        assert_eq!(grads.len(), named.len());
        let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        for (g, (name, _)) in grads.iter().zip(&named) {
            let n = norm(g);
            let touched = !(name.starts_with("w_dep")
                || name.starts_with("w_soc")
                || name == "w_friend"
                || name == "w_td"
                || name == "w_ts"
                || name == "dev_embed");
            if touched {
                assert!(n > 0.0, "{name} should receive gradient");
            } else {
                assert_eq!(n, 0.0, "{name} is off-path and must stay zero");
            }
        }
    }
}
