use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Gradients, ParamStore, Tensor};

/// Adam with bias-corrected moment estimates.
///
/// Moments are aligned index-for-index with the store the state was created
/// from. Frozen parameters are skipped; the step counter still advances.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: T) -> Self {
        Self::with_hyper(store, lr, T::of(0.9), T::of(0.999), T::of(1e-8))
    }

    pub fn with_hyper(store: &ParamStore<T>, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        let zeros = |s: &ParamStore<T>| s.ids().map(|id| Tensor::zeros(s.get(id).shape())).collect::<Vec<_>>();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &Tensor<T> {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor<T> {
        &self.v[i]
    }

    /// Applies one update. Gradients are left for the caller to zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        if store.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: state has {} slots, store {}, gradients {}",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let one = T::one();
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let g = grads.get(id);
            let p = store.get_mut(id);
            if g.shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::dim("adam", p.shape(), g.shape()));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = self.beta1 * *mj + (one - self.beta1) * gj;
                *vj = self.beta2 * *vj + (one - self.beta2) * gj * gj;
                let mhat = *mj / c1;
                let vhat = *vj / c2;
                *pj -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
