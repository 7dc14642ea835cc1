use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evfuse::model::{eam_forward, egm_forward, joint_loss, Bound, FusionMode, ModelConfig, NetInput, SegModel};
use evfuse::tensor::{NodeId, Tape, Tensor};

use crate::Verdict;

const STEP: f64 = 1e-6;
const REL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn uniform(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with the absolute floor folded into the scale.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR / REL)
}

type Build = dyn Fn(&mut Tape, &[NodeId]) -> NodeId;

fn eval(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut t = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| t.constant(x.clone())).collect();
    let out = build(&mut t, &ids);
    t.value(out).item().unwrap()
}

/// Worst relative error over every input element.
fn check(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut t = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = build(&mut t, &ids);
    t.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let g = t.grad(ids[k]).unwrap();
        for i in 0..x.numel() {
            let mut p = inputs.to_vec();
            p[k].data_mut()[i] += STEP;
            let mut m = inputs.to_vec();
            m[k].data_mut()[i] -= STEP;
            let numeric = (eval(build, &p) - eval(build, &m)) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[i], numeric));
        }
    }
    worst
}

fn project(t: &mut Tape, y: NodeId, seed: u64) -> NodeId {
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), t.shape(y));
    let w = t.constant(w);
    let p = t.mul(y, w).unwrap();
    t.sum(p)
}

fn bound(names: &[&str], ids: &[NodeId]) -> Bound {
    let mut b = Bound::new();
    for (n, &id) in names.iter().zip(ids) {
        b.insert(*n, id);
    }
    b
}

fn op_cases(r: &mut ChaCha8Rng) -> Vec<(String, Box<Build>, Vec<Tensor>)> {
    let mut cases: Vec<(String, Box<Build>, Vec<Tensor>)> = Vec::new();
    for (k, stride, pad) in [(1, 1, 0), (3, 1, 1), (3, 2, 1), (7, 2, 3)] {
        cases.push((
            format!("conv{k}x{k}/s{stride}"),
            Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
                project(t, y, 1)
            }),
            vec![uniform(r, &[2, 8, 9]), uniform(r, &[3, 2, k, k]), uniform(r, &[3])],
        ));
    }
    for (oh, ow) in [(1, 1), (3, 4)] {
        cases.push((
            format!("pool{oh}x{ow}"),
            Box::new(move |t, v| {
                let y = t.adaptive_avg_pool(v[0], oh, ow).unwrap();
                project(t, y, 2)
            }),
            vec![uniform(r, &[2, 7, 9])],
        ));
    }
    cases.push((
        "upsample".into(),
        Box::new(|t, v| {
            let y = t.upsample_bilinear(v[0], 7, 10).unwrap();
            project(t, y, 3)
        }),
        vec![uniform(r, &[2, 3, 4])],
    ));
    let a = uniform(r, &[2, 3, 4]);
    let b = uniform(r, &[2, 3, 4]);
    let unary: [(&str, fn(&mut Tape, NodeId) -> NodeId); 3] = [
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("relu", |t, x| t.relu(x)),
        ("scale", |t, x| t.scale(x, -1.7)),
    ];
    for (name, f) in unary {
        cases.push((
            name.into(),
            Box::new(move |t, v| {
                let y = f(t, v[0]);
                project(t, y, 4)
            }),
            vec![a.clone()],
        ));
    }
    cases.push(("add".into(), Box::new(|t, v| { let y = t.add(v[0], v[1]).unwrap(); project(t, y, 5) }), vec![a.clone(), b.clone()]));
    cases.push(("mul".into(), Box::new(|t, v| { let y = t.mul(v[0], v[1]).unwrap(); project(t, y, 6) }), vec![a.clone(), b.clone()]));
    cases.push((
        "mul_gate".into(),
        Box::new(|t, v| { let y = t.mul_gate(v[0], v[1]).unwrap(); project(t, y, 7) }),
        vec![a.clone(), uniform(r, &[2, 1, 1])],
    ));
    cases.push((
        "affine".into(),
        Box::new(|t, v| { let y = t.affine(v[0], v[1], v[2]).unwrap(); project(t, y, 8) }),
        vec![a.clone(), uniform(r, &[2]), uniform(r, &[2])],
    ));
    cases.push((
        "concat+narrow".into(),
        Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]], 0).unwrap();
            let y = t.narrow(y, 0, 1, 2).unwrap();
            project(t, y, 9)
        }),
        vec![a.clone(), b.clone()],
    ));
    cases.push((
        "split".into(),
        Box::new(|t, v| {
            let p = t.split(v[0], 2, &[1, 3]).unwrap();
            let l = project(t, p[0], 10);
            let q = project(t, p[1], 11);
            t.add(l, q).unwrap()
        }),
        vec![a.clone()],
    ));
    let mut labels: Vec<usize> = (0..12).map(|i| (i * 7) % 4).collect();
    labels[5] = 255;
    cases.push((
        "cross_entropy".into(),
        Box::new(move |t, v| t.cross_entropy(v[0], &labels, Some(255)).unwrap()),
        vec![uniform(r, &[4, 3, 4])],
    ));
    let target = Tensor::from_vec(vec![2, 3, 4], (0..24).map(|i| f64::from(i % 3 == 0)).collect()).unwrap();
    cases.push(("bce".into(), Box::new(move |t, v| t.bce_with_logits(v[0], &target).unwrap()), vec![a.clone()]));

    let c = 3;
    cases.push((
        "EAM".into(),
        Box::new(|t, v| {
            let p = bound(&["m.gate_img.weight", "m.gate_img.bias", "m.gate_evt.weight", "m.gate_evt.bias"], &v[2..]);
            let y = eam_forward(t, &p, "m", v[0], v[1]).unwrap();
            project(t, y, 12)
        }),
        vec![
            uniform(r, &[c, 4, 6]),
            uniform(r, &[c, 4, 6]),
            uniform(r, &[c, c, 1, 1]),
            uniform(r, &[c]),
            uniform(r, &[c, c, 1, 1]),
            uniform(r, &[c]),
        ],
    ));
    cases.push((
        "EGM".into(),
        Box::new(|t, v| {
            let p = bound(&["m.g.weight", "m.g.bias", "m.reduce.weight", "m.reduce.bias"], &v[2..]);
            let y = egm_forward(t, &p, "m", v[0], v[1]).unwrap();
            project(t, y, 13)
        }),
        vec![
            uniform(r, &[4, 2, 4]),
            uniform(r, &[2, 8, 16]),
            uniform(r, &[2, 4, 1, 1]),
            uniform(r, &[2]),
            uniform(r, &[2, 4, 1, 1]),
            uniform(r, &[2]),
        ],
    ));
    cases
}

/// Joint loss of a 4-class model on a 32×64 input, over sampled parameters.
fn end_to_end(mode: FusionMode, seed: u64, samples: usize) -> f64 {
    let mut cfg = ModelConfig::toy(mode, 4).with_input_size(32, 64);
    cfg.spp_grids = vec![(1, 2), (1, 1)];
    let mut m = SegModel::new(cfg, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let names: Vec<String> = m.params().keys().cloned().collect();
    for n in &names {
        if n.ends_with(".shift") || n.ends_with(".bias") {
            m.param_mut(n).unwrap().data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.1..0.1));
        }
    }
    let img = uniform(&mut r, &[3, 32, 64]);
    let vol = Tensor::from_vec(vec![2, 32, 64], (0..4096).map(|_| f64::from(r.random_range(0..3u8))).collect()).unwrap();
    let target = Tensor::from_vec(vec![2, 32, 64], (0..4096).map(|_| f64::from(r.random_bool(0.3))).collect()).unwrap();
    let labels: Vec<usize> = (0..2048).map(|_| r.random_range(0..4)).collect();
    let input = NetInput::new(img).with_events(vol);
    let loss = |m: &SegModel, trainable: bool| {
        let mut t = Tape::new();
        let p = m.bind(&mut t, trainable);
        let out = m.forward(&mut t, &p, &input).unwrap();
        let l = joint_loss(&mut t, out.logits, &labels, None, out.event_logits, Some(&target), 1.0).unwrap();
        (t, p, l)
    };
    let (mut t, p, l) = loss(&m, true);
    t.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let name = &names[r.random_range(0..names.len())];
        let i = r.random_range(0..m.param(name).unwrap().numel());
        let analytic = t.grad(p.get(name).unwrap()).unwrap().data()[i];
        let orig = m.param(name).unwrap().data()[i];
        let mut at = |x: f64| {
            m.param_mut(name).unwrap().data_mut()[i] = x;
            let (t, _, l) = loss(&m, false);
            t.value(l).item().unwrap()
        };
        let numeric = (at(orig + STEP) - at(orig - STEP)) / (2.0 * STEP);
        at(orig);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

pub fn run() -> Verdict {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    let cases = op_cases(&mut r);
    let n_ops = cases.len();
    for (name, build, inputs) in cases {
        let e = check(build.as_ref(), &inputs);
        worst = worst.max(e);
        if e > REL {
            bad.push(format!("{name} ({e:.1e})"));
        }
    }
    for (mode, seed) in [(FusionMode::D2sEgm, 1), (FusionMode::S2dEam, 2)] {
        let e = end_to_end(mode, seed, 60);
        worst = worst.max(e);
        if e > REL {
            bad.push(format!("{} joint loss ({e:.1e})", mode.label()));
        }
    }
    let detail = format!("{n_ops} op/module checks plus d2s and s2d joint loss; worst relative error {worst:.2e} (tolerance 1e-4, floor 1e-6)");
    if bad.is_empty() {
        Verdict::new(true, detail)
    } else {
        Verdict::new(false, format!("{detail}; mismatches: {}", bad.join(", ")))
    }
}
