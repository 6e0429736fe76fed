//! Central finite-difference gradient checks.
//!
//! The relative error of an analytic gradient `a` against a numeric one `n`
//! is `|a - n| / max(|a|, |n|, REL_FLOOR)`. The floor keeps near-zero
//! gradients from turning finite-difference truncation noise into huge
//! ratios; above it the measure is a plain relative error.

use crate::error::Result;

use super::{Gradients, Graph, NodeId, ParamStore, Tensor};

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Checks gradients of a scalar function with respect to graph inputs.
pub fn check_inputs<F>(name: &str, inputs: &[Tensor<f64>], eps: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_, f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids = xs.iter().map(|x| g.input(x.clone())).collect::<Result<Vec<_>>>()?;
        let out = build(&mut g, &ids)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let ids = inputs.iter().map(|x| g.input(x.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &ids)?;
    g.backward(out, None)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, x)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();
    drop(g);

    let mut xs = inputs.to_vec();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + eps;
            let fp = eval(&xs)?;
            xs[i].data_mut()[j] = orig - eps;
            let fm = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            worst = worst.max(relative_error(a.data()[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_err: worst,
        checked,
    })
}

/// Checks gradients of a scalar loss with respect to every trainable
/// parameter in `store`.
pub fn check_params<F>(name: &str, store: &ParamStore<f64>, eps: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let mut grads = Gradients::zeros_like(store);
    {
        let mut g = Graph::with_params(store);
        let out = build(&mut g)?;
        g.backward(out, Some(&mut grads))?;
    }
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let out = build(&mut g)?;
        Ok(g.scalar(out))
    };

    let mut work = store.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + eps;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - eps;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            worst = worst.max(relative_error(grads.get(id).data()[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_err: worst,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-7).abs() < 1e-20);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        use crate::autodiff::CustomOp;
        struct BadSquare;
        impl CustomOp<f64> for BadSquare {
            fn name(&self) -> &str {
                "bad_square"
            }
            fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
                Ok(inputs[0].map(|x| x * x))
            }
            fn backward(&self, inputs: &[&Tensor<f64>], _: &Tensor<f64>, g: &Tensor<f64>) -> Vec<Tensor<f64>> {
                // should be 2x
                let d = inputs[0].data().iter().zip(g.data()).map(|(x, g)| 3.0 * x * g).collect();
                vec![Tensor::new(inputs[0].shape().to_vec(), d).unwrap()]
            }
        }
        let x = Tensor::vector(vec![0.5, -1.5]);
        let r = check_inputs("bad", &[x], DEFAULT_EPS, |g, ids| {
            let y = g.custom(Box::new(BadSquare), &[ids[0]])?;
            g.sum(y)
        })
        .unwrap();
        assert!(!r.passes(DEFAULT_TOLERANCE));
    }
}
