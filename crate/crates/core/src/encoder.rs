//! GRU cells and sequence encoders.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights of one GRU: input maps `[H × in]`, recurrent maps `[H × H]` and
/// biases `[H]` for the update, reset and candidate gates.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

pub(crate) fn uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-scale..scale))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Uniform initialization range for every trainable weight.
pub const INIT_SCALE: f64 = 0.1;

impl GruParams {
    /// Registers the nine tensors under `{prefix}.{w_z,u_z,...}`.
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut add = |name: &str, shape: &[usize]| store.add(format!("{prefix}.{name}"), uniform(rng, shape, INIT_SCALE));
        let (i, h) = (input_dim, hidden);
        Ok(GruParams {
            input_dim,
            hidden,
            w_z: add("w_z", &[h, i])?,
            u_z: add("u_z", &[h, h])?,
            b_z: add("b_z", &[h])?,
            w_r: add("w_r", &[h, i])?,
            u_r: add("u_r", &[h, h])?,
            b_r: add("b_r", &[h])?,
            w_h: add("w_h", &[h, i])?,
            u_h: add("u_h", &[h, h])?,
            b_h: add("b_h", &[h])?,
        })
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }
}

fn gate<T: Scalar>(g: &mut Graph<'_, T>, w: ParamId, u: ParamId, b: ParamId, x: NodeId, h: NodeId) -> Result<NodeId> {
    let (w, u, b) = (g.param(w)?, g.param(u)?, g.param(b)?);
    let wx = g.matvec(w, x)?;
    let uh = g.matvec(u, h)?;
    let s = g.add(wx, uh)?;
    g.add(s, b)
}

/// One GRU transition:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_cell<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, h_prev: NodeId, p: &GruParams) -> Result<NodeId> {
    if g.value(x).shape() != [p.input_dim] {
        return Err(Error::dim("gru_cell input", g.value(x).shape(), &[p.input_dim]));
    }
    if g.value(h_prev).shape() != [p.hidden] {
        return Err(Error::dim("gru_cell state", g.value(h_prev).shape(), &[p.hidden]));
    }
    let z_pre = gate(g, p.w_z, p.u_z, p.b_z, x, h_prev)?;
    let z = g.sigmoid(z_pre)?;
    let r_pre = gate(g, p.w_r, p.u_r, p.b_r, x, h_prev)?;
    let r = g.sigmoid(r_pre)?;
    let rh = g.mul(r, h_prev)?;
    let c_pre = gate(g, p.w_h, p.u_h, p.b_h, x, rh)?;
    let cand = g.tanh(c_pre)?;
    // h + z ⊙ (h̃ − h)
    let diff = g.sub(cand, h_prev)?;
    let step = g.mul(z, diff)?;
    g.add(h_prev, step)
}

/// Runs a GRU left to right over embedded tokens from a zero state and
/// returns the final hidden state. `max_len` keeps only the first tokens.
pub fn encode_sequence<T: Scalar>(
    g: &mut Graph<'_, T>,
    tokens: &[usize],
    embedding: ParamId,
    p: &GruParams,
    max_len: Option<usize>,
) -> Result<NodeId> {
    if tokens.is_empty() {
        return Err(Error::Contract("encode_sequence needs at least one token".into()));
    }
    let n = max_len.map_or(tokens.len(), |m| m.clamp(1, tokens.len()));
    let mut h = g.input(Tensor::zeros(&[p.hidden]))?;
    for &t in &tokens[..n] {
        let x = g.gather_row(embedding, t)?;
        h = gru_cell(g, x, h, p)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_params, DEFAULT_EPS, DEFAULT_TOLERANCE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_store(d: usize, h: usize) -> (ParamStore<f64>, GruParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GruParams::register(&mut store, "g", d, h, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).fill_zero();
        }
        (store, p)
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let (store, p) = zero_store(3, 2);
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::vector(vec![1.0, -2.0, 0.5])).unwrap();
        let h = g.input(Tensor::vector(vec![0.8, -0.4])).unwrap();
        let out = gru_cell(&mut g, x, h, &p).unwrap();
        assert_eq!(g.value(out).data(), &[0.4, -0.2]);

        let h0 = g.input(Tensor::zeros(&[2])).unwrap();
        let out = gru_cell(&mut g, x, h0, &p).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let (store, p) = zero_store(3, 2);
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::zeros(&[4])).unwrap();
        let h = g.input(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(gru_cell(&mut g, x, h, &p), Err(Error::Dimension { .. })));
    }

    fn random_encoder(seed: u64, vocab: usize, d: usize, h: usize) -> (ParamStore<f64>, ParamId, GruParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = store.add("emb", uniform(&mut rng, &[vocab, d], 1.0)).unwrap();
        let p = GruParams::register(&mut store, "enc", d, h, &mut rng).unwrap();
        // larger weights than the default init so the check exercises curvature
        for id in p.ids() {
            let t = uniform(&mut rng, store.get(id).shape(), 0.8);
            *store.get_mut(id) = t;
        }
        (store, emb, p)
    }

    #[test]
    fn single_token_is_one_cell_step() {
        let (store, emb, p) = random_encoder(3, 5, 4, 3);
        let mut g = Graph::with_params(&store);
        let enc = encode_sequence(&mut g, &[2], emb, &p, None).unwrap();
        let x = g.gather_row(emb, 2).unwrap();
        let h0 = g.input(Tensor::zeros(&[3])).unwrap();
        let step = gru_cell(&mut g, x, h0, &p).unwrap();
        assert_eq!(g.value(enc), g.value(step));
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let (store, emb, p) = random_encoder(3, 5, 4, 3);
        let mut g = Graph::with_params(&store);
        assert!(matches!(encode_sequence(&mut g, &[], emb, &p, None), Err(Error::Contract(_))));
    }

    #[test]
    fn gates_stay_in_unit_interval() {
        let (store, emb, p) = random_encoder(11, 6, 4, 5);
        let mut g = Graph::with_params(&store);
        let x = g.gather_row(emb, 1).unwrap();
        let h = g.input(uniform(&mut ChaCha8Rng::seed_from_u64(1), &[5], 1.0)).unwrap();
        let zp = gate(&mut g, p.w_z, p.u_z, p.b_z, x, h).unwrap();
        let z = g.sigmoid(zp).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn distinct_encoders_give_distinct_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let emb = store.add("emb", uniform(&mut rng, &[6, 4], 1.0)).unwrap();
        let a = GruParams::register(&mut store, "claim_enc", 4, 3, &mut rng).unwrap();
        let b = GruParams::register(&mut store, "post_enc", 4, 3, &mut rng).unwrap();
        let mut g = Graph::with_params(&store);
        let ha = encode_sequence(&mut g, &[3, 4, 5], emb, &a, None).unwrap();
        let hb = encode_sequence(&mut g, &[3, 4, 5], emb, &b, None).unwrap();
        assert_ne!(g.value(ha), g.value(hb));
        let ha2 = encode_sequence(&mut g, &[3, 4, 5], emb, &a, None).unwrap();
        assert_eq!(g.value(ha), g.value(ha2));
    }

    #[test]
    fn max_len_truncates() {
        let (store, emb, p) = random_encoder(2, 6, 3, 3);
        let mut g = Graph::with_params(&store);
        let full = encode_sequence(&mut g, &[1, 2], emb, &p, None).unwrap();
        let cut = encode_sequence(&mut g, &[1, 2, 3, 4], emb, &p, Some(2)).unwrap();
        assert_eq!(g.value(full), g.value(cut));
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let (store, _, p) = random_encoder(17, 2, 4, 3);
        let x = uniform::<f64, _>(&mut ChaCha8Rng::seed_from_u64(8), &[4], 1.0);
        let h = uniform::<f64, _>(&mut ChaCha8Rng::seed_from_u64(9), &[3], 1.0);
        let r = check_params("gru_cell", &store, DEFAULT_EPS, |g| {
            let xn = g.input(x.clone())?;
            let hn = g.input(h.clone())?;
            let out = gru_cell(g, xn, hn, &p)?;
            g.dot(out, out)
        })
        .unwrap();
        assert!(r.passes(DEFAULT_TOLERANCE), "{r:?}");
    }

    #[test]
    fn sequence_gradient_matches_finite_differences() {
        let (store, emb, p) = random_encoder(23, 6, 4, 3);
        let r = check_params("encode_sequence", &store, DEFAULT_EPS, |g| {
            let out = encode_sequence(g, &[1, 5, 2, 2, 4], emb, &p, None)?;
            g.dot(out, out)
        })
        .unwrap();
        assert!(r.passes(DEFAULT_TOLERANCE), "{r:?}");
    }
}
