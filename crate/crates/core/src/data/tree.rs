use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Stance, Veracity};

#[derive(Clone, Debug, PartialEq)]
pub struct PostNode {
    pub post_id: String,
    pub parent: Option<usize>,
    pub text: String,
    pub gold_stance: Option<Stance>,
}

/// A claim (node 0) and the posts responding to it.
///
/// Parents always precede their children, so index order is a valid
/// top-down traversal and reverse index order a valid bottom-up one. The
/// same stored tree serves both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationTree {
    pub claim_id: String,
    pub veracity: Veracity,
    pub nodes: Vec<PostNode>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: String,
    parent: Option<usize>,
    text: String,
    stance: Option<Stance>,
}

#[derive(Serialize, Deserialize)]
struct TreeRecord {
    claim_id: String,
    veracity: Veracity,
    nodes: Vec<NodeRecord>,
}

impl PropagationTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn claim_text(&self) -> &str {
        &self.nodes[0].text
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.nodes.iter().map(|n| n.parent).collect()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                out[p].push(i);
            }
        }
        out
    }

    pub fn has_stance_labels(&self) -> bool {
        self.nodes.iter().skip(1).any(|n| n.gold_stance.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::Structure {
            claim_id: self.claim_id.clone(),
            msg,
        };
        if self.nodes.is_empty() {
            return Err(err("tree has no nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match (i, n.parent) {
                (0, None) => {}
                (0, Some(p)) => return Err(err(format!("claim node lists parent {p}"))),
                (_, None) => return Err(err(format!("node {i} has no parent; only the claim may be a root"))),
                (_, Some(p)) if p >= i => {
                    return Err(err(format!("node {i} lists parent {p}, which is not an earlier node")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Drops responses whose text repeats the claim verbatim, re-attaching
    /// their children to the dropped node's parent.
    pub fn without_retweets(mut self) -> Self {
        let claim = self.nodes[0].text.clone();
        let mut remap: Vec<Option<usize>> = Vec::with_capacity(self.nodes.len());
        let mut kept: Vec<PostNode> = Vec::with_capacity(self.nodes.len());
        // parent of each original node after resolving dropped ancestors
        let mut resolved: Vec<Option<usize>> = Vec::with_capacity(self.nodes.len());
        for (i, mut n) in self.nodes.drain(..).enumerate() {
            let parent = n.parent.and_then(|p| remap[p].or(resolved[p]));
            if i > 0 && n.text == claim {
                remap.push(None);
                resolved.push(parent);
            } else {
                n.parent = parent;
                remap.push(Some(kept.len()));
                resolved.push(None);
                kept.push(n);
            }
        }
        self.nodes = kept;
        self
    }

    fn from_record(rec: TreeRecord) -> Self {
        PropagationTree {
            claim_id: rec.claim_id,
            veracity: rec.veracity,
            nodes: rec
                .nodes
                .into_iter()
                .map(|n| PostNode {
                    post_id: n.id,
                    parent: n.parent,
                    text: n.text,
                    gold_stance: n.stance,
                })
                .collect(),
        }
    }

    fn to_record(&self) -> TreeRecord {
        TreeRecord {
            claim_id: self.claim_id.clone(),
            veracity: self.veracity,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.post_id.clone(),
                    parent: n.parent,
                    text: n.text.clone(),
                    stance: n.gold_stance,
                })
                .collect(),
        }
    }
}

/// Parses line-delimited tree records. Blank lines are skipped.
pub fn parse_dataset<R: Read>(reader: R) -> Result<Vec<PropagationTree>> {
    let mut trees = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TreeRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let tree = PropagationTree::from_record(rec);
        tree.validate()?;
        trees.push(tree.without_retweets());
    }
    Ok(trees)
}

pub fn load_dataset(path: &Path) -> Result<Vec<PropagationTree>> {
    parse_dataset(File::open(path)?)
}

pub fn write_dataset_to<W: Write>(mut w: W, trees: &[PropagationTree]) -> Result<()> {
    for t in trees {
        serde_json::to_writer(&mut w, &t.to_record())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, trees: &[PropagationTree]) -> Result<()> {
    write_dataset_to(BufWriter::new(File::create(path)?), trees)
}
