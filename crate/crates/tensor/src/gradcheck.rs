//! Central finite-difference oracle for tape gradients.
//!
//! Only evaluates forward passes; it never looks at the backward rules it is
//! used to verify.

use crate::{Graph, Tensor, TensorError, Var};

/// Outcome of comparing analytic and numeric gradients for one input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub input: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// `||analytic - numeric|| / max(||numeric||, tiny)`.
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self.analytic.iter().zip(&self.numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = self.numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        diff / norm.max(1e-300)
    }
}

/// Builds `op` on fresh graphs, projects its output onto a fixed random
/// direction `w` (so the scalar is `<w, op(x)>`) and compares the tape
/// gradient of every input against `(L(x + h e_i) - L(x - h e_i)) / 2h`.
pub fn check_op<F>(inputs: &[Tensor<f64>], projection_seed: u64, h: f64, op: F) -> Result<Vec<GradCheck>, TensorError>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<Tensor<f64>, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param_owned(x.clone())).collect();
        let out = op(&mut g, &vars)?;
        Ok(g.value(out).clone())
    };
    let base = eval(inputs)?;
    let w = projection(base.len(), projection_seed);
    let loss = |t: &Tensor<f64>| t.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param_owned(x.clone())).collect();
    let out = op(&mut g, &vars)?;
    let n = g.value(out).len();
    let flat = g.reshape(out, vec![1, n])?;
    let wv = g.constant(Tensor::new(vec![1, n], w.clone())?);
    let scalar = g.matmul_nt(flat, wv)?;
    let scalar = g.reshape(scalar, vec![1])?;
    let grads = g.backward(scalar)?;

    let mut checks = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            numeric.push((loss(&eval(&plus)?) - loss(&eval(&minus)?)) / (2.0 * h));
        }
        checks.push(GradCheck { input: i, analytic, numeric });
    }
    Ok(checks)
}

/// Deterministic pseudo-random projection weights in `[-1, 1]`.
fn projection(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}
