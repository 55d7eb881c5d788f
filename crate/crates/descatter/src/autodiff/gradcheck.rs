//! Central finite-difference verification of analytic gradients.
//!
//! Meant to run on `f64` tensors so the difference quotient is not
//! noise-limited; the norm-relative error of a correct gradient is then
//! dominated by the O(h^2) truncation term.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-3;

/// Outcome of one gradient comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2, 1e-12)`
    pub rel_err: f64,
    pub max_abs_diff: f64,
}

/// Checks `d loss / d inputs[i]` for every listed input of a scalar-valued
/// graph function, rebuilding the graph for each probe.
///
/// `build` receives the current input tensors and must return the loss node
/// of a freshly recorded graph.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    h: f64,
    build: impl Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
) -> Result<Vec<GradCheck>> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.var(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss).scalar_value()
    };

    // Analytic gradients from one recorded pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.var(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;

    let mut out = Vec::with_capacity(inputs.len());
    for (which, id) in ids.iter().enumerate() {
        let analytic = g
            .grad(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[which].shape()));
        let mut numeric = Tensor::<f64>::zeros(inputs[which].shape());
        let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
        for i in 0..inputs[which].numel() {
            let orig = probe[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[which].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            numeric.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(compare(&analytic, &numeric));
    }
    Ok(out)
}

fn compare(a: &Tensor<f64>, b: &Tensor<f64>) -> GradCheck {
    let mut diff2 = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    let mut max_abs = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        diff2 += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
        max_abs = max_abs.max((x - y).abs());
    }
    GradCheck {
        rel_err: diff2.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12),
        max_abs_diff: max_abs,
    }
}

/// Uniform random tensor in `[lo, hi)` from any `rand` RNG.
pub fn random_tensor(rng: &mut impl rand::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("matching length")
}
