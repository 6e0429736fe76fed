use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::PropagationTree;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EMPTY: usize = 2;
const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<empty>"];

/// Lowercases and splits on anything that is not alphanumeric.
pub fn split_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn tokenize<T: Scalar>(text: &str, vocab: &Vocabulary<T>) -> Vec<usize> {
    vocab.tokenize(text)
}

/// Token ids plus the `V × d` embedding matrix they index.
#[derive(Clone, Debug)]
pub struct Vocabulary<T = f64> {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: Tensor<T>,
}

impl<T: Scalar> Vocabulary<T> {
    /// Builds from the given trees with ids assigned in lexicographic token
    /// order after the reserved ids. Rows are drawn uniformly from
    /// `[-0.1, 0.1]`; the PAD row is zero.
    pub fn build(trees: &[PropagationTree], dim: usize, seed: u64) -> Self {
        let words: BTreeSet<String> = trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .flat_map(|n| split_words(&n.text))
            .collect();
        let tokens: Vec<String> = words.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = tokens.len() + RESERVED.len();
        let mut data = vec![T::zero(); v * dim];
        for x in data.iter_mut().skip(dim) {
            *x = T::of(rng.gen_range(-0.1..0.1));
        }
        let embeddings = Tensor::matrix(v, dim, data).expect("embedding shape");
        Self::from_tokens(tokens, embeddings).expect("consistent vocabulary")
    }

    /// `tokens` excludes the reserved entries; `embeddings` has a row for
    /// every id including them.
    pub fn from_tokens(tokens: Vec<String>, embeddings: Tensor<T>) -> Result<Self> {
        let all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(tokens).collect();
        if embeddings.shape().len() != 2 || embeddings.rows() != all.len() {
            return Err(Error::dim("vocabulary", embeddings.shape(), &[all.len()]));
        }
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens: all,
            index,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Tensor<T> {
        &self.embeddings
    }

    /// Tokens without the reserved entries, in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect();
        if ids.is_empty() {
            vec![EMPTY]
        } else {
            ids
        }
    }

    /// Token ids for every node of a tree, in node order.
    pub fn encode_tree(&self, tree: &PropagationTree) -> Vec<Vec<usize>> {
        tree.nodes.iter().map(|n| self.tokenize(&n.text)).collect()
    }

    /// Row lookup: `n` ids give an `n × d` matrix.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= self.len() {
                return Err(Error::Index {
                    index: id,
                    len: self.len(),
                });
            }
            data.extend_from_slice(self.embeddings.row(id));
        }
        Tensor::matrix(ids.len(), d, data)
    }

    /// Overwrites rows of known tokens from a text embedding file: a
    /// `V d` header, then one line per token with `d` floats. Returns the
    /// number of rows replaced.
    pub fn load_embeddings(&mut self, path: &Path) -> Result<usize> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty embedding file".into(),
        })?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: 1,
                msg: format!("bad header: {e}"),
            })?;
        if dims.len() != 2 || dims[1] != self.dim() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header {header:?} does not match embedding dim {}", self.dim()),
            });
        }
        let d = self.dim();
        let mut replaced = 0;
        for (i, line) in lines {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("bad float: {e}"),
                })?;
            if values.len() != d {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {d} values, got {}", values.len()),
                });
            }
            if let Some(id) = self.id(word) {
                if id == PAD {
                    continue;
                }
                let row = &mut self.embeddings.data_mut()[id * d..(id + 1) * d];
                for (r, v) in row.iter_mut().zip(values) {
                    *r = T::of(v);
                }
                replaced += 1;
            }
        }
        Ok(replaced)
    }
}
