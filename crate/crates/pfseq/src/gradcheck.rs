//! Central-difference gradient verification.
//!
//! `grad_check` compares the analytic gradient of a graph against
//! (f(p+eps) - f(p-eps)) / (2 eps) for every scalar parameter component. The
//! numeric side only ever runs forward passes over frozen-constant bindings,
//! so it shares no code with the reverse pass it is checking. Loss builders
//! must be deterministic (dropout masks and any sampling frozen by the
//! caller); this is verified by evaluating the base point twice.

use crate::error::{Error, Result};
use crate::graph::{NodeId, Tape};
use crate::optim::Params;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat component index of the worst entry.
    pub worst: (String, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub components: usize,
}

fn forward_value<F>(params: &Params, build: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let leaves = tape.bind_frozen(params)?;
    let loss = build(&mut tape, &leaves)?;
    let v = tape.value(loss);
    if v.numel() != 1 {
        return Err(Error::config("grad_check: loss must be scalar"));
    }
    Ok(v.item())
}

/// Maximum relative error between analytic and central-difference gradients,
/// over every scalar component of every parameter.
pub fn grad_check<F>(params: &mut Params, eps: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::input(format!("eps must be > 0, got {eps}")));
    }

    // Analytic gradients.
    let mut tape = Tape::new();
    let leaves = tape.bind_params(params)?;
    let loss_id = build(&mut tape, &leaves)?;
    if tape.value(loss_id).numel() != 1 {
        return Err(Error::config("grad_check: loss must be scalar"));
    }
    let loss0 = tape.value(loss_id).item();
    let grads = tape.backward(loss_id)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .enumerate()
        .map(|(i, &leaf)| match grads.get(leaf) {
            Some(g) => g.values().to_vec(),
            None => vec![0.0; params.get(i).value.numel()],
        })
        .collect();
    drop(tape);

    // Determinism probe: two fresh forward evaluations must agree bitwise.
    let probe_a = forward_value(params, &mut build)?;
    let probe_b = forward_value(params, &mut build)?;
    if probe_a.to_bits() != probe_b.to_bits() || probe_a.to_bits() != loss0.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "loss function is not deterministic: {loss0} vs {probe_a} vs {probe_b}"
        )));
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        components: 0,
    };
    for i in 0..params.len() {
        for j in 0..params.get(i).value.numel() {
            let orig = params.get(i).value.values()[j];
            params.get_mut(i).value.values_mut()[j] = orig + eps;
            let f_plus = forward_value(params, &mut build)?;
            params.get_mut(i).value.values_mut()[j] = orig - eps;
            let f_minus = forward_value(params, &mut build)?;
            params.get_mut(i).value.values_mut()[j] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs())).max(1e-8);
            report.components += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (params.get(i).name.clone(), j);
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_gradient_matches_finite_difference() {
        // f(w) = w^2 at w = 3: analytic 6, central difference ~6, tiny error.
        let mut params = Params::new();
        params.add("w", Tensor::scalar(3.0)).unwrap();
        let report = grad_check(&mut params, DEFAULT_EPS, |tape, leaves| {
            let sq = tape.mul(leaves[0], leaves[0])?;
            tape.mean_all(sq)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn composite_graph_passes_at_1e_4() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(11);
        let mut params = Params::new();
        let w1 = Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w2 = Tensor::new(vec![4, 2], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::new(vec![1, 4], (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        params.add("w1", w1).unwrap();
        params.add("w2", w2).unwrap();
        params.add("b", b).unwrap();
        let x = Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = Tensor::new(vec![2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let report = grad_check(&mut params, DEFAULT_EPS, move |tape, leaves| {
            let xc = tape.constant(x.clone())?;
            let yc = tape.constant(y.clone())?;
            let h = tape.matmul(xc, leaves[0])?;
            let h = tape.add_row(h, leaves[2])?;
            let h = tape.tanh(h)?;
            let sm = tape.masked_softmax_rows(h, None)?;
            let h = tape.mul(h, sm)?;
            let o = tape.matmul(h, leaves[1])?;
            let o = tape.sigmoid(o)?;
            tape.mse(o, yc)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn non_deterministic_loss_is_rejected() {
        use std::cell::Cell;
        let counter = Cell::new(0.0_f64);
        let mut params = Params::new();
        params.add("w", Tensor::scalar(1.0)).unwrap();
        let err = grad_check(&mut params, DEFAULT_EPS, |tape, leaves| {
            counter.set(counter.get() + 1.0);
            let c = tape.constant(Tensor::scalar(counter.get()))?;
            let p = tape.mul(leaves[0], c)?;
            tape.mean_all(p)
        })
        .unwrap_err();
        assert!(matches!(err, Error::OracleInvalid(_)), "got {err:?}");
    }
}
