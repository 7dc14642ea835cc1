#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evfuse::tensor::{NodeId, Tape, Tensor};

pub const STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds a scalar from leaves recorded in the given order.
pub type Build<'a> = dyn Fn(&mut Tape, &[NodeId]) -> NodeId + 'a;

fn eval(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &ids);
    tape.value(out).item().expect("scalar")
}

pub fn analytic(build: &Build, inputs: &[Tensor]) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &ids);
    tape.backward(out).unwrap();
    ids.iter().map(|&id| tape.grad(id).unwrap().clone()).collect()
}

pub fn mismatch(a: f64, n: f64, rel: f64, floor: f64) -> bool {
    (a - n).abs() > rel * a.abs().max(n.abs()).max(floor / rel)
}

/// Central differences over every input element (or `limit` sampled ones
/// per input). Returns the worst relative error seen and a description of
/// the first mismatch, if any.
pub fn check_gradients(build: &Build, inputs: &[Tensor], limit: Option<usize>, seed: u64) -> Result<f64, String> {
    let grads = analytic(build, inputs);
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let idx: Vec<usize> = match limit {
            Some(l) if l < t.numel() => (0..l).map(|_| r.random_range(0..t.numel())).collect(),
            _ => (0..t.numel()).collect(),
        };
        for i in idx {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * STEP);
            let a = grads[k].data()[i];
            let scale = a.abs().max(numeric.abs()).max(ABS_FLOOR / REL_TOL);
            worst = worst.max((a - numeric).abs() / scale);
            if mismatch(a, numeric, REL_TOL, ABS_FLOOR) {
                return Err(format!("input {k} element {i}: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    Ok(worst)
}
