//! The bank of binary classifiers and the attention that regroups them.
//!
//! One classifier per (veracity, stance) target pair. Classifier `k` is
//! trained only to say whether a claim has its target veracity; its
//! per-post probabilities are read as "holds the target stance". A second
//! GRU encodes the claim into a query that attends over the classifiers'
//! claim vectors, and the resulting weights regroup the binary outputs into
//! a veracity distribution for the claim and a stance distribution for
//! every post.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::data::{PropagationTree, Stance, Veracity, Vocabulary};
use crate::encoder::{encode_sequence, GruParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::treemodel::{forward_tree, AttentionKind, Direction, TreeCellParams, TreeForward, TreeShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetPair {
    pub veracity: Veracity,
    pub stance: Stance,
}

impl std::fmt::Display for TargetPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.veracity, self.stance)
    }
}

/// The full cross product, veracity-major: `k = v_index * 4 + s_index`.
pub fn target_pairs(veracities: &[Veracity]) -> Vec<TargetPair> {
    veracities
        .iter()
        .flat_map(|&veracity| Stance::ALL.into_iter().map(move |stance| TargetPair { veracity, stance }))
        .collect()
}

/// Binary bag label of a claim for one classifier: 1 iff the claim's
/// veracity is the classifier's target veracity.
pub fn binarize_label(y: Veracity, pair: TargetPair, label_set: &[Veracity]) -> Result<u8> {
    if !label_set.contains(&y) {
        return Err(Error::Contract(format!("veracity {y} is not in the label set {label_set:?}")));
    }
    Ok(u8::from(y == pair.veracity))
}

/// Which claim vector each classifier offers to the bank attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimRepr {
    /// The claim encoder's output.
    #[default]
    Raw,
    /// The claim node's tree context.
    Contextual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub direction: Direction,
    pub max_seq_len: Option<usize>,
    pub claim_repr: ClaimRepr,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 100,
            embed_dim: 100,
            direction: Direction::TopDown,
            max_seq_len: None,
            claim_repr: ClaimRepr::Raw,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config("hidden and embed_dim must be positive".into()));
        }
        if self.max_seq_len == Some(0) {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        Ok(())
    }
}

/// A tree prepared for the model: its shape and the token ids of every node.
#[derive(Clone, Debug)]
pub struct EncodedTree {
    pub shape: TreeShape,
    pub tokens: Vec<Vec<usize>>,
}

impl EncodedTree {
    pub fn new<T: Scalar>(tree: &PropagationTree, vocab: &Vocabulary<T>) -> Result<Self> {
        Ok(EncodedTree {
            shape: TreeShape::of(tree)?,
            tokens: vocab.encode_tree(tree),
        })
    }
}

/// One target pair's complete parameter set.
#[derive(Clone, Debug)]
pub struct BinaryClassifier<T> {
    pub index: usize,
    pub pair: TargetPair,
    pub direction: Direction,
    pub max_seq_len: Option<usize>,
    pub claim_repr: ClaimRepr,
    pub store: ParamStore<T>,
    pub embedding: ParamId,
    pub claim_enc: GruParams,
    pub post_enc: GruParams,
    pub tree: TreeCellParams,
}

/// Graph handles of one classifier's forward pass.
#[derive(Clone, Debug)]
pub struct ClassifierNodes {
    /// Claim vector offered to the bank attention.
    pub claim_vec: NodeId,
    pub tree: TreeForward,
}

/// Attention weights read back from a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionValues {
    #[serde(flatten)]
    pub kind: AttentionKind,
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Values of one classifier's forward pass.
#[derive(Clone, Debug)]
pub struct ClassifierOutput<T> {
    pub claim_vec: Vec<T>,
    pub stances: Vec<T>,
    pub veracity: T,
    pub attention: Vec<AttentionValues>,
}

impl<T: Scalar> BinaryClassifier<T> {
    fn new(index: usize, pair: TargetPair, cfg: &ModelConfig, vocab: &Vocabulary<T>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let mut store = ParamStore::new();
        let p = format!("clf{index}");
        let embedding = store.add(format!("{p}.embed"), vocab.embeddings().clone())?;
        let claim_enc = GruParams::register(&mut store, &format!("{p}.claim_enc"), vocab.dim(), cfg.hidden, &mut rng)?;
        let post_enc = GruParams::register(&mut store, &format!("{p}.post_enc"), vocab.dim(), cfg.hidden, &mut rng)?;
        let tree = TreeCellParams::register(&mut store, &format!("{p}.tree"), cfg.hidden, &mut rng)?;
        Ok(BinaryClassifier {
            index,
            pair,
            direction: cfg.direction,
            max_seq_len: cfg.max_seq_len,
            claim_repr: cfg.claim_repr,
            store,
            embedding,
            claim_enc,
            post_enc,
            tree,
        })
    }

    /// Builds the forward pass on a graph over this classifier's store.
    pub fn forward(&self, g: &mut Graph<'_, T>, tree: &EncodedTree) -> Result<ClassifierNodes> {
        let h_c = encode_sequence(g, &tree.tokens[0], self.embedding, &self.claim_enc, self.max_seq_len)?;
        let mut inputs = Vec::with_capacity(tree.tokens.len());
        inputs.push(h_c);
        for toks in &tree.tokens[1..] {
            inputs.push(encode_sequence(g, toks, self.embedding, &self.post_enc, self.max_seq_len)?);
        }
        let fwd = forward_tree(g, self.direction, &tree.shape, &inputs, h_c, &self.tree)?;
        let claim_vec = match self.claim_repr {
            ClaimRepr::Raw => h_c,
            ClaimRepr::Contextual => fwd.contexts[0],
        };
        Ok(ClassifierNodes { claim_vec, tree: fwd })
    }

    pub fn predict(&self, tree: &EncodedTree) -> Result<ClassifierOutput<T>> {
        let mut g = Graph::with_params(&self.store);
        let n = self.forward(&mut g, tree)?;
        Ok(ClassifierOutput {
            claim_vec: g.value(n.claim_vec).data().to_vec(),
            stances: n.tree.stances.iter().map(|&s| g.scalar(s)).collect(),
            veracity: g.scalar(n.tree.veracity),
            attention: n
                .tree
                .attention
                .iter()
                .map(|a| AttentionValues {
                    kind: a.kind,
                    members: a.members.clone(),
                    weights: g.value(a.weights).to_f64_vec(),
                })
                .collect(),
        })
    }
}

/// The GRU that encodes the claim into the bank-attention query.
#[derive(Clone, Debug)]
pub struct AggregationEncoder<T> {
    pub store: ParamStore<T>,
    pub embedding: ParamId,
    pub enc: GruParams,
    pub max_seq_len: Option<usize>,
}

impl<T: Scalar> AggregationEncoder<T> {
    fn new(cfg: &ModelConfig, vocab: &Vocabulary<T>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut store = ParamStore::new();
        let embedding = store.add("agg.embed", vocab.embeddings().clone())?;
        let enc = GruParams::register(&mut store, "agg.enc", vocab.dim(), cfg.hidden, &mut rng)?;
        Ok(AggregationEncoder {
            store,
            embedding,
            enc,
            max_seq_len: cfg.max_seq_len,
        })
    }

    pub fn query(&self, g: &mut Graph<'_, T>, claim_tokens: &[usize]) -> Result<NodeId> {
        encode_sequence(g, claim_tokens, self.embedding, &self.enc, self.max_seq_len)
    }
}

/// `β_k = softmax_k(h_a · h_c^k)`.
pub fn classifier_attention<T: Scalar>(g: &mut Graph<'_, T>, query: NodeId, claim_vecs: &[NodeId]) -> Result<NodeId> {
    if claim_vecs.is_empty() {
        return Err(Error::Contract("classifier attention over an empty bank".into()));
    }
    let scores = claim_vecs.iter().map(|&c| g.dot(query, c)).collect::<Result<Vec<_>>>()?;
    let s = g.stack(&scores)?;
    g.softmax(s)
}

/// `p̂_{i,s} = Σ_{k targeting s} β_k p_i^k` for the four stances.
pub fn aggregate_stance<T: Scalar>(raw: &[T], beta: &[T], pairs: &[TargetPair]) -> [T; 4] {
    let mut out = [T::zero(); 4];
    for ((&p, &b), pair) in raw.iter().zip(beta).zip(pairs) {
        out[pair.stance.index()] += b * p;
    }
    out
}

/// `ŷ_v = Σ_{k targeting v} β_k ỹ^k`, in the order of `veracities`.
pub fn aggregate_veracity<T: Scalar>(raw: &[T], beta: &[T], pairs: &[TargetPair], veracities: &[Veracity]) -> Vec<T> {
    let mut out = vec![T::zero(); veracities.len()];
    for ((&y, &b), pair) in raw.iter().zip(beta).zip(pairs) {
        if let Some(v) = veracities.iter().position(|&v| v == pair.veracity) {
            out[v] += b * y;
        }
    }
    out
}

/// Graph form of [`aggregate_veracity`] with the classifier outputs held
/// constant: a `[C × K]` grouping matrix times `β`.
pub fn veracity_scores_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    beta: NodeId,
    raw: &[T],
    pairs: &[TargetPair],
    veracities: &[Veracity],
) -> Result<NodeId> {
    let k = pairs.len();
    let mut m = vec![T::zero(); veracities.len() * k];
    for (j, (pair, &y)) in pairs.iter().zip(raw).enumerate() {
        let v = veracities
            .iter()
            .position(|&v| v == pair.veracity)
            .ok_or_else(|| Error::Contract(format!("pair {pair} outside the label set")))?;
        m[v * k + j] = y;
    }
    let grouping = g.input(Tensor::matrix(veracities.len(), k, m)?)?;
    g.matvec(grouping, beta)
}

/// Index of the largest score; ties go to the earliest index.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Scales scores to sum to one for display; all-zero input stays zero.
pub fn renormalize<T: Scalar>(scores: &[T]) -> Vec<T> {
    let total: T = scores.iter().copied().sum();
    if total > T::zero() {
        scores.iter().map(|&s| s / total).collect()
    } else {
        scores.to_vec()
    }
}

/// Joint output for one claim.
#[derive(Clone, Debug)]
pub struct JointPrediction<T> {
    pub claim_id: String,
    pub veracities: Vec<Veracity>,
    /// Unnormalized `ŷ_c`, aligned with `veracities`.
    pub veracity_scores: Vec<T>,
    pub predicted_veracity: Veracity,
    /// Unnormalized `p̂_i` per node (S, D, Q, C); index 0 is the claim.
    pub stance_scores: Vec<[T; 4]>,
    pub predicted_stances: Vec<Stance>,
    pub beta: Vec<T>,
    /// `p_i^k`, indexed `[k][node]`.
    pub raw_stances: Vec<Vec<T>>,
    /// `ỹ_c^k`.
    pub raw_veracity: Vec<T>,
    /// Tree attention per classifier.
    pub attention: Vec<Vec<AttentionValues>>,
}

/// Frozen classifier outputs for one claim.
#[derive(Clone, Debug)]
pub struct BankOutputs<T> {
    pub claim_vecs: Vec<Vec<T>>,
    pub veracity: Vec<T>,
    pub stances: Vec<Vec<T>>,
    pub attention: Vec<Vec<AttentionValues>>,
}

#[derive(Clone, Debug)]
pub struct ClassifierBank<T> {
    pub config: ModelConfig,
    pub veracities: Vec<Veracity>,
    pub pairs: Vec<TargetPair>,
    pub vocab: Vocabulary<T>,
    pub classifiers: Vec<BinaryClassifier<T>>,
    pub agg: AggregationEncoder<T>,
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    config: ModelConfig,
    veracities: Vec<Veracity>,
    vocab: Vec<String>,
}

impl<T: Scalar> ClassifierBank<T> {
    pub fn new(veracities: &[Veracity], vocab: Vocabulary<T>, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if veracities.is_empty() {
            return Err(Error::Config("empty veracity label set".into()));
        }
        let mut sorted = veracities.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != veracities.len() {
            return Err(Error::Config("duplicate veracity label".into()));
        }
        if vocab.dim() != config.embed_dim {
            return Err(Error::Config(format!(
                "vocabulary dim {} does not match embed_dim {}",
                vocab.dim(),
                config.embed_dim
            )));
        }
        let pairs = target_pairs(&sorted);
        let classifiers = pairs
            .iter()
            .enumerate()
            .map(|(k, &pair)| BinaryClassifier::new(k, pair, &config, &vocab, seed))
            .collect::<Result<Vec<_>>>()?;
        let agg = AggregationEncoder::new(&config, &vocab, seed)?;
        Ok(ClassifierBank {
            config,
            veracities: sorted,
            pairs,
            vocab,
            classifiers,
            agg,
        })
    }

    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    pub fn direction(&self) -> Direction {
        self.config.direction
    }

    pub fn encode(&self, tree: &PropagationTree) -> Result<EncodedTree> {
        EncodedTree::new(tree, &self.vocab)
    }

    /// Runs every classifier on one tree; classifiers run in parallel.
    pub fn bank_outputs(&self, tree: &EncodedTree) -> Result<BankOutputs<T>> {
        let outs = self
            .classifiers
            .par_iter()
            .map(|c| c.predict(tree))
            .collect::<Result<Vec<_>>>()?;
        let mut b = BankOutputs {
            claim_vecs: Vec::with_capacity(outs.len()),
            veracity: Vec::with_capacity(outs.len()),
            stances: Vec::with_capacity(outs.len()),
            attention: Vec::with_capacity(outs.len()),
        };
        for o in outs {
            b.claim_vecs.push(o.claim_vec);
            b.veracity.push(o.veracity);
            b.stances.push(o.stances);
            b.attention.push(o.attention);
        }
        Ok(b)
    }

    /// `β` for one claim given the classifiers' claim vectors.
    pub fn beta(&self, claim_tokens: &[usize], claim_vecs: &[Vec<T>]) -> Result<Vec<T>> {
        let mut g = Graph::with_params(&self.agg.store);
        let q = self.agg.query(&mut g, claim_tokens)?;
        let cs = claim_vecs
            .iter()
            .map(|c| g.input(Tensor::vector(c.clone())))
            .collect::<Result<Vec<_>>>()?;
        let beta = classifier_attention(&mut g, q, &cs)?;
        Ok(g.value(beta).data().to_vec())
    }

    pub fn predict(&self, tree: &PropagationTree) -> Result<JointPrediction<T>> {
        let enc = self.encode(tree)?;
        let out = self.bank_outputs(&enc)?;
        let beta = self.beta(&enc.tokens[0], &out.claim_vecs)?;
        let veracity_scores = aggregate_veracity(&out.veracity, &beta, &self.pairs, &self.veracities);
        let n = enc.tokens.len();
        let stance_scores: Vec<[T; 4]> = (0..n)
            .map(|i| {
                let raw: Vec<T> = out.stances.iter().map(|s| s[i]).collect();
                aggregate_stance(&raw, &beta, &self.pairs)
            })
            .collect();
        Ok(JointPrediction {
            claim_id: tree.claim_id.clone(),
            veracities: self.veracities.clone(),
            predicted_veracity: self.veracities[argmax(&veracity_scores)],
            veracity_scores,
            predicted_stances: stance_scores.iter().map(|s| Stance::ALL[argmax(s)]).collect(),
            stance_scores,
            beta,
            raw_stances: out.stances,
            raw_veracity: out.veracity,
            attention: out.attention,
        })
    }

    /// All parameters, the vocabulary embedding table and the model
    /// description, in one container.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = BankMeta {
            config: self.config.clone(),
            veracities: self.veracities.clone(),
            vocab: self.vocab.words().to_vec(),
        };
        let mut ck = Checkpoint::new(serde_json::to_value(meta)?);
        ck.insert("vocab.embed", self.vocab.embeddings())?;
        for c in &self.classifiers {
            ck.insert_store(&c.store)?;
        }
        ck.insert_store(&self.agg.store)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: BankMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad model description: {e}")))?;
        let emb: Tensor<T> = ck.tensor("vocab.embed")?;
        let vocab = Vocabulary::from_tokens(meta.vocab, emb)?;
        let mut bank = ClassifierBank::new(&meta.veracities, vocab, meta.config, 0)?;
        for c in &mut bank.classifiers {
            ck.restore_into(&mut c.store)?;
        }
        ck.restore_into(&mut bank.agg.store)?;
        Ok(bank)
    }

    /// Parameter names the bank registers, sorted.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .classifiers
            .iter()
            .flat_map(|c| c.store.iter_sorted().map(|(n, _)| n.to_string()))
            .chain(self.agg.store.iter_sorted().map(|(n, _)| n.to_string()))
            .collect();
        names.sort();
        names
    }
}
