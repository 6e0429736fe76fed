//! Recursive tree models of one binary classifier.
//!
//! Both directions share the same pieces: a GRU-style transition cell that
//! turns each node's post vector into a context vector, a two-way stance
//! head, and dot-product attention against the claim vector that pools
//! stance probabilities into a claim-level probability.
//!
//! * Bottom-up: a node's context combines its own vector with the sum of
//!   its children's contexts. Stance probabilities are pooled recursively
//!   from the leaves, each internal node attending over itself and its
//!   children.
//! * Top-down: a node's context combines its own vector with its parent's
//!   context. Each root-to-leaf path is pooled by attention over its nodes,
//!   then the paths are pooled by attention over their leaves.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::data::PropagationTree;
use crate::encoder::{gru_cell, uniform, GruParams, INIT_SCALE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[serde(rename = "td")]
    TopDown,
    #[serde(rename = "bu")]
    BottomUp,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TopDown => "td",
            Direction::BottomUp => "bu",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "td" | "topdown" | "top-down" => Ok(Direction::TopDown),
            "bu" | "bottomup" | "bottom-up" => Ok(Direction::BottomUp),
            _ => Err(Error::Config(format!("unknown direction {s:?}; expected td or bu"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Transition cell plus stance head `softmax(W_o h̃ + W_c h_c + b_o)`.
#[derive(Clone, Debug)]
pub struct TreeCellParams {
    pub cell: GruParams,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub b_o: ParamId,
}

impl TreeCellParams {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, hidden: usize, rng: &mut R) -> Result<Self> {
        let cell = GruParams::register(store, &format!("{prefix}.cell"), hidden, hidden, rng)?;
        let w_o = store.add(format!("{prefix}.w_o"), uniform(rng, &[2, hidden], INIT_SCALE))?;
        let w_c = store.add(format!("{prefix}.w_c"), uniform(rng, &[2, hidden], INIT_SCALE))?;
        let b_o = store.add(format!("{prefix}.b_o"), uniform(rng, &[2], INIT_SCALE))?;
        Ok(TreeCellParams { cell, w_o, w_c, b_o })
    }
}

/// Parent/children index view of a validated tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeShape {
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl TreeShape {
    /// Node 0 is the root and every other parent index precedes its child.
    pub fn from_parents(parents: Vec<Option<usize>>) -> Result<Self> {
        let bad = |msg: String| Error::Structure {
            claim_id: "<shape>".into(),
            msg,
        };
        if parents.is_empty() {
            return Err(bad("empty tree".into()));
        }
        let mut children = vec![Vec::new(); parents.len()];
        for (i, p) in parents.iter().enumerate() {
            match (i, p) {
                (0, None) => {}
                (i, Some(p)) if i > 0 && *p < i => children[*p].push(i),
                _ => return Err(bad(format!("node {i} has invalid parent {p:?}"))),
            }
        }
        Ok(TreeShape { parents, children })
    }

    pub fn of(tree: &PropagationTree) -> Result<Self> {
        Self::from_parents(tree.parents())
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    /// Nodes from the root down to `node`, both included.
    pub fn path_from_root(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.parents[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }
}

/// Bottom-up contexts: `h̃_j = cell(h_j, Σ_{c ∈ children(j)} h̃_c)`, zero
/// context at leaves. `inputs[0]` is the claim vector.
pub fn bu_context<T: Scalar>(
    g: &mut Graph<'_, T>,
    shape: &TreeShape,
    inputs: &[NodeId],
    cell: &GruParams,
) -> Result<Vec<NodeId>> {
    check_len(shape, inputs.len())?;
    let mut ctx: Vec<Option<NodeId>> = vec![None; shape.len()];
    for j in (0..shape.len()).rev() {
        let pooled = match shape.children(j) {
            [] => g.input(Tensor::zeros(&[cell.hidden]))?,
            [only] => ctx[*only].expect("child processed first"),
            [first, rest @ ..] => {
                let mut acc = ctx[*first].expect("child processed first");
                for c in rest {
                    acc = g.add(acc, ctx[*c].expect("child processed first"))?;
                }
                acc
            }
        };
        ctx[j] = Some(gru_cell(g, inputs[j], pooled, cell)?);
    }
    Ok(ctx.into_iter().map(|c| c.expect("all nodes visited")).collect())
}

/// Top-down contexts: `h̃_j = cell(h_j, h̃_parent(j))`, zero context at the
/// root. `inputs[0]` is the claim vector.
pub fn td_context<T: Scalar>(
    g: &mut Graph<'_, T>,
    shape: &TreeShape,
    inputs: &[NodeId],
    cell: &GruParams,
) -> Result<Vec<NodeId>> {
    check_len(shape, inputs.len())?;
    let mut ctx: Vec<NodeId> = Vec::with_capacity(shape.len());
    for j in 0..shape.len() {
        let prev = match shape.parent(j) {
            None => g.input(Tensor::zeros(&[cell.hidden]))?,
            Some(p) => ctx[p],
        };
        ctx.push(gru_cell(g, inputs[j], prev, cell)?);
    }
    Ok(ctx)
}

fn check_len(shape: &TreeShape, n: usize) -> Result<()> {
    if n != shape.len() {
        return Err(Error::Contract(format!("{n} node vectors for a tree of {} nodes", shape.len())));
    }
    Ok(())
}

/// Probability that a node holds the classifier's target stance: component
/// 0 of `softmax(W_o h̃_j + W_c h_c + b_o)`.
pub fn stance_head<T: Scalar>(g: &mut Graph<'_, T>, context: NodeId, h_c: NodeId, head: &TreeCellParams) -> Result<NodeId> {
    let (w_o, w_c, b_o) = (g.param(head.w_o)?, g.param(head.w_c)?, g.param(head.b_o)?);
    let a = g.matvec(w_o, context)?;
    let c = g.matvec(w_c, h_c)?;
    let s = g.add(a, c)?;
    let logits = g.add(s, b_o)?;
    let probs = g.softmax(logits)?;
    g.index(probs, 0)
}

/// Attention of `keys` against `query`, used to pool `values`:
/// `α = softmax_j(key_j · query)`, result `Σ_j α_j value_j`.
/// Returns `(α, pooled)`.
pub fn attend<T: Scalar>(g: &mut Graph<'_, T>, scores: &[NodeId], values: &[NodeId]) -> Result<(NodeId, NodeId)> {
    if scores.len() != values.len() || scores.is_empty() {
        return Err(Error::Contract(format!(
            "attention over {} scores and {} values",
            scores.len(),
            values.len()
        )));
    }
    let s = g.stack(scores)?;
    let alpha = g.softmax(s)?;
    let v = g.stack(values)?;
    let pooled = g.dot(alpha, v)?;
    Ok((alpha, pooled))
}

/// One attention distribution: which nodes it ranged over and its weights.
#[derive(Clone, Debug)]
pub struct AttentionNodes {
    pub kind: AttentionKind,
    pub members: Vec<usize>,
    pub weights: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "node", rename_all = "snake_case")]
pub enum AttentionKind {
    /// Bottom-up pooling at an internal node over itself and its children.
    Subtree(usize),
    /// Top-down pooling along the path ending at a leaf.
    Path(usize),
    /// Top-down pooling over the leaves.
    Leaves,
}

#[derive(Clone, Debug)]
pub struct BuAggregate {
    /// `p̃_i` for every node.
    pub aggregated: Vec<NodeId>,
    /// `p̃` at the root.
    pub veracity: NodeId,
    pub attention: Vec<AttentionNodes>,
}

/// Bottom-up recursive stance pooling.
///
/// Leaves keep their own probability. An internal node `i` attends over
/// `{i} ∪ children(i)` with scores `h̃_j · h_c`, pooling its own raw
/// probability together with the children's pooled ones. The root's pooled
/// value is the claim probability.
pub fn bu_aggregate<T: Scalar>(
    g: &mut Graph<'_, T>,
    shape: &TreeShape,
    contexts: &[NodeId],
    stances: &[NodeId],
    h_c: NodeId,
) -> Result<BuAggregate> {
    check_len(shape, contexts.len())?;
    check_len(shape, stances.len())?;
    let scores = contexts.iter().map(|&c| g.dot(c, h_c)).collect::<Result<Vec<_>>>()?;
    let mut agg: Vec<Option<NodeId>> = vec![None; shape.len()];
    let mut attention = Vec::new();
    for i in (0..shape.len()).rev() {
        if shape.is_leaf(i) {
            agg[i] = Some(stances[i]);
            continue;
        }
        let members: Vec<usize> = std::iter::once(i).chain(shape.children(i).iter().copied()).collect();
        let sc: Vec<NodeId> = members.iter().map(|&j| scores[j]).collect();
        let vals: Vec<NodeId> = std::iter::once(stances[i])
            .chain(shape.children(i).iter().map(|&c| agg[c].expect("child pooled first")))
            .collect();
        let (alpha, pooled) = attend(g, &sc, &vals)?;
        agg[i] = Some(pooled);
        attention.push(AttentionNodes {
            kind: AttentionKind::Subtree(i),
            members,
            weights: alpha,
        });
    }
    let aggregated: Vec<NodeId> = agg.into_iter().map(|a| a.expect("all nodes pooled")).collect();
    Ok(BuAggregate {
        veracity: aggregated[0],
        aggregated,
        attention,
    })
}

/// Pools the stance probabilities on one root-to-leaf path. `scores[j]` is
/// node `j`'s attention score `h̃_j · h_c`. Returns `(α, s_leaf)`.
pub fn td_path_stance<T: Scalar>(
    g: &mut Graph<'_, T>,
    path: &[usize],
    scores: &[NodeId],
    stances: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    let sc: Vec<NodeId> = path.iter().map(|&j| scores[j]).collect();
    let vals: Vec<NodeId> = path.iter().map(|&j| stances[j]).collect();
    attend(g, &sc, &vals)
}

#[derive(Clone, Debug)]
pub struct TdAggregate {
    pub leaves: Vec<usize>,
    /// `s_l` per leaf, aligned with `leaves`.
    pub path_stances: Vec<NodeId>,
    pub veracity: NodeId,
    pub attention: Vec<AttentionNodes>,
}

/// Top-down pooling: every root-to-leaf path, then attention over leaves
/// with scores `h̃_l · h_c`.
pub fn td_aggregate<T: Scalar>(
    g: &mut Graph<'_, T>,
    shape: &TreeShape,
    contexts: &[NodeId],
    stances: &[NodeId],
    h_c: NodeId,
) -> Result<TdAggregate> {
    check_len(shape, contexts.len())?;
    check_len(shape, stances.len())?;
    let scores = contexts.iter().map(|&c| g.dot(c, h_c)).collect::<Result<Vec<_>>>()?;
    let leaves = shape.leaves();
    let mut attention = Vec::with_capacity(leaves.len() + 1);
    let mut path_stances = Vec::with_capacity(leaves.len());
    for &l in &leaves {
        let path = shape.path_from_root(l);
        let (alpha, s) = td_path_stance(g, &path, &scores, stances)?;
        path_stances.push(s);
        attention.push(AttentionNodes {
            kind: AttentionKind::Path(l),
            members: path,
            weights: alpha,
        });
    }
    let leaf_scores: Vec<NodeId> = leaves.iter().map(|&l| scores[l]).collect();
    let (alpha, veracity) = attend(g, &leaf_scores, &path_stances)?;
    attention.push(AttentionNodes {
        kind: AttentionKind::Leaves,
        members: leaves.clone(),
        weights: alpha,
    });
    Ok(TdAggregate {
        leaves,
        path_stances,
        veracity,
        attention,
    })
}

/// Everything one classifier produces for one tree.
#[derive(Clone, Debug)]
pub struct TreeForward {
    pub contexts: Vec<NodeId>,
    /// `p_j` for every node, the claim included.
    pub stances: Vec<NodeId>,
    /// Claim-level probability `ỹ_c`.
    pub veracity: NodeId,
    pub attention: Vec<AttentionNodes>,
}

/// Runs contexts, stance head and pooling for one direction. `inputs[0]`
/// must be the claim vector `h_c`, the rest the post vectors.
pub fn forward_tree<T: Scalar>(
    g: &mut Graph<'_, T>,
    direction: Direction,
    shape: &TreeShape,
    inputs: &[NodeId],
    h_c: NodeId,
    params: &TreeCellParams,
) -> Result<TreeForward> {
    let contexts = match direction {
        Direction::BottomUp => bu_context(g, shape, inputs, &params.cell)?,
        Direction::TopDown => td_context(g, shape, inputs, &params.cell)?,
    };
    let stances = contexts
        .iter()
        .map(|&c| stance_head(g, c, h_c, params))
        .collect::<Result<Vec<_>>>()?;
    let (veracity, attention) = match direction {
        Direction::BottomUp => {
            let a = bu_aggregate(g, shape, &contexts, &stances, h_c)?;
            (a.veracity, a.attention)
        }
        Direction::TopDown => {
            let a = td_aggregate(g, shape, &contexts, &stances, h_c)?;
            (a.veracity, a.attention)
        }
    };
    Ok(TreeForward {
        contexts,
        stances,
        veracity,
        attention,
    })
}
