use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{PostNode, PropagationTree, Stance, Veracity};

/// Planted-correlation generator settings.
///
/// Each veracity class has its own root-stance distribution and its own
/// parent→child stance transition matrix (rows and columns in S, D, Q, C
/// order). Every stance has a disjoint lexicon; a token is replaced by one
/// from another stance's lexicon with probability `noise_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub claims_per_class: usize,
    pub veracities: Vec<Veracity>,
    /// Tree size range, claim included.
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub lexicon_size: usize,
    pub noise_rate: f64,
    pub root_stance: BTreeMap<Veracity, [f64; 4]>,
    pub transitions: BTreeMap<Veracity, [[f64; 4]; 4]>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use Veracity::*;
        let root_stance = BTreeMap::from([
            (N, [0.1, 0.1, 0.1, 0.7]),
            (T, [0.7, 0.1, 0.1, 0.1]),
            (F, [0.2, 0.6, 0.1, 0.1]),
            (U, [0.1, 0.1, 0.7, 0.1]),
        ]);
        let transitions = BTreeMap::from([
            (
                N,
                [
                    [0.20, 0.05, 0.05, 0.70],
                    [0.05, 0.20, 0.05, 0.70],
                    [0.05, 0.05, 0.20, 0.70],
                    [0.10, 0.05, 0.05, 0.80],
                ],
            ),
            (
                T,
                [
                    [0.70, 0.05, 0.10, 0.15],
                    [0.40, 0.30, 0.10, 0.20],
                    [0.50, 0.10, 0.20, 0.20],
                    [0.50, 0.10, 0.10, 0.30],
                ],
            ),
            (
                // denials of a false claim draw supporting replies
                F,
                [
                    [0.20, 0.60, 0.10, 0.10],
                    [0.45, 0.35, 0.10, 0.10],
                    [0.10, 0.60, 0.20, 0.10],
                    [0.10, 0.60, 0.10, 0.20],
                ],
            ),
            (
                U,
                [
                    [0.15, 0.10, 0.60, 0.15],
                    [0.10, 0.20, 0.55, 0.15],
                    [0.10, 0.10, 0.65, 0.15],
                    [0.10, 0.10, 0.50, 0.30],
                ],
            ),
        ]);
        SynthConfig {
            seed: 7,
            claims_per_class: 100,
            veracities: Veracity::ALL.to_vec(),
            min_nodes: 5,
            max_nodes: 15,
            min_tokens: 3,
            max_tokens: 8,
            lexicon_size: 20,
            noise_rate: 0.1,
            root_stance,
            transitions,
        }
    }
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Config(format!("{what}: probabilities must lie in [0, 1]")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what}: row sums to {total}, expected 1")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.claims_per_class == 0 {
            return Err(Error::Config("claims_per_class must be at least 1".into()));
        }
        if self.veracities.is_empty() {
            return Err(Error::Config("no veracity classes".into()));
        }
        let mut seen = self.veracities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.veracities.len() {
            return Err(Error::Config("duplicate veracity class".into()));
        }
        if self.min_nodes == 0 || self.max_nodes < self.min_nodes {
            return Err(Error::Config("need 1 <= min_nodes <= max_nodes".into()));
        }
        if self.min_tokens == 0 || self.max_tokens < self.min_tokens {
            return Err(Error::Config("need 1 <= min_tokens <= max_tokens".into()));
        }
        if self.lexicon_size == 0 {
            return Err(Error::Config("lexicon_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise_rate {} outside [0, 1]", self.noise_rate)));
        }
        for v in &self.veracities {
            let root = self
                .root_stance
                .get(v)
                .ok_or_else(|| Error::Config(format!("no root_stance for {v}")))?;
            check_row(root, &format!("root_stance[{v}]"))?;
            let tm = self
                .transitions
                .get(v)
                .ok_or_else(|| Error::Config(format!("no transitions for {v}")))?;
            for (r, row) in tm.iter().enumerate() {
                check_row(row, &format!("transitions[{v}][{}]", Stance::ALL[r]))?;
            }
        }
        Ok(())
    }

    /// Lexicon of a stance: `lexicon_size` words no other stance uses.
    pub fn lexicon(&self, stance: Stance) -> Vec<String> {
        let prefix = match stance {
            Stance::S => "sup",
            Stance::D => "den",
            Stance::Q => "qry",
            Stance::C => "cmt",
        };
        (0..self.lexicon_size).map(|i| format!("{prefix}{i}")).collect()
    }
}

struct Sampler<'a> {
    cfg: &'a SynthConfig,
    lexicons: Vec<Vec<String>>,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn text(&mut self, stance: Stance) -> String {
        let n = self.rng.gen_range(self.cfg.min_tokens..=self.cfg.max_tokens);
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            let mut source = stance.index();
            if self.rng.gen::<f64>() < self.cfg.noise_rate {
                // uniform over the other three lexicons
                let k = self.rng.gen_range(0..3);
                source = (source + 1 + k) % 4;
            }
            let lex = &self.lexicons[source];
            words.push(lex[self.rng.gen_range(0..lex.len())].clone());
        }
        words.join(" ")
    }

    fn tree(&mut self, claim_id: String, veracity: Veracity) -> Result<PropagationTree> {
        let cfg = self.cfg;
        let root = WeightedIndex::new(cfg.root_stance[&veracity]).map_err(|e| Error::Config(e.to_string()))?;
        let rows = cfg.transitions[&veracity]
            .iter()
            .map(WeightedIndex::new)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(e.to_string()))?;

        let size = self.rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
        let mut stances = Vec::with_capacity(size);
        let mut nodes = Vec::with_capacity(size);
        let root_stance = Stance::ALL[root.sample(&mut self.rng)];
        let claim_text = self.text(root_stance);
        stances.push(root_stance);
        nodes.push(PostNode {
            post_id: format!("{claim_id}-0"),
            parent: None,
            text: claim_text.clone(),
            gold_stance: Some(root_stance),
        });
        for i in 1..size {
            let parent = self.rng.gen_range(0..i);
            let stance = Stance::ALL[rows[stances[parent].index()].sample(&mut self.rng)];
            let mut text = self.text(stance);
            while text == claim_text {
                text = self.text(stance);
            }
            stances.push(stance);
            nodes.push(PostNode {
                post_id: format!("{claim_id}-{i}"),
                parent: Some(parent),
                text,
                gold_stance: Some(stance),
            });
        }
        Ok(PropagationTree {
            claim_id,
            veracity,
            nodes,
        })
    }
}

/// Generates `claims_per_class` trees per veracity class, interleaved by
/// class. Deterministic in `cfg.seed`.
///
/// Tree shape is a random recursive tree: node `i` attaches to a uniformly
/// chosen earlier node. Gold stances are recorded on every node, the claim
/// included.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<PropagationTree>> {
    cfg.validate()?;
    let mut sampler = Sampler {
        cfg,
        lexicons: Stance::ALL.iter().map(|&s| cfg.lexicon(s)).collect(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut trees = Vec::with_capacity(cfg.claims_per_class * cfg.veracities.len());
    for i in 0..cfg.claims_per_class {
        for &v in &cfg.veracities {
            trees.push(sampler.tree(format!("synth-{v}-{i:04}"), v)?);
        }
    }
    Ok(trees)
}
