mod common;

use common::{check_gradients, rng, uniform, Build};
use evfuse::model::{eam_forward, egm_forward, espp_forward, spp_forward, Bound};
use evfuse::tensor::{NodeId, Tape, Tensor};

/// `sum(y ⊙ w)` for a fixed random `w`, so every output element matters.
fn project(tape: &mut Tape, y: NodeId, seed: u64) -> NodeId {
    let w = uniform(&mut rng(seed), tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

fn assert_grad(name: &str, build: &Build, inputs: &[Tensor]) {
    if let Err(e) = check_gradients(build, inputs, None, 1) {
        panic!("{name}: {e}");
    }
}

#[test]
fn conv2d_all_kernel_sizes() {
    let mut r = rng(10);
    for (k, stride, pad) in [(1, 1, 0), (3, 1, 1), (3, 2, 1), (7, 2, 3)] {
        let x = uniform(&mut r, &[2, 9, 8]);
        let w = uniform(&mut r, &[3, 2, k, k]);
        let b = uniform(&mut r, &[3]);
        let build = move |t: &mut Tape, v: &[NodeId]| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            project(t, y, 11)
        };
        assert_grad(&format!("conv k={k} s={stride}"), &build, &[x, w, b]);
    }
}

#[test]
fn conv2d_sum_matches_fd_at_tight_tolerance() {
    let mut r = rng(12);
    let x = uniform(&mut r, &[2, 5, 5]);
    let w = uniform(&mut r, &[2, 2, 3, 3]);
    let build = |t: &mut Tape, v: &[NodeId]| {
        let y = t.conv2d(v[0], v[1], None, 1, 1).unwrap();
        t.sum(y)
    };
    let grads = common::analytic(&build, &[x.clone(), w.clone()]);
    for i in 0..x.numel() {
        let mut p = x.clone();
        p.data_mut()[i] += 1e-6;
        let mut m = x.clone();
        m.data_mut()[i] -= 1e-6;
        let f = |xx: Tensor| {
            let mut t = Tape::new();
            let a = t.constant(xx);
            let b = t.constant(w.clone());
            let o = build(&mut t, &[a, b]);
            t.value(o).item().unwrap()
        };
        let numeric = (f(p) - f(m)) / 2e-6;
        let a = grads[0].data()[i];
        assert!(!common::mismatch(a, numeric, 1e-6, 1e-6), "element {i}: {a} vs {numeric}");
    }
}

#[test]
fn pooling_and_upsampling() {
    let mut r = rng(20);
    for (oh, ow) in [(1, 1), (2, 3), (4, 4), (3, 5)] {
        let x = uniform(&mut r, &[2, 7, 9]);
        let build = move |t: &mut Tape, v: &[NodeId]| {
            let y = t.adaptive_avg_pool(v[0], oh, ow).unwrap();
            project(t, y, 21)
        };
        assert_grad(&format!("pool {oh}x{ow}"), &build, &[x]);
    }
    for (oh, ow) in [(6, 8), (9, 4), (5, 13)] {
        let x = uniform(&mut r, &[2, 3, 4]);
        let build = move |t: &mut Tape, v: &[NodeId]| {
            let y = t.upsample_bilinear(v[0], oh, ow).unwrap();
            project(t, y, 22)
        };
        assert_grad(&format!("upsample {oh}x{ow}"), &build, &[x]);
    }
}

#[test]
fn elementwise_ops() {
    let mut r = rng(30);
    let a = uniform(&mut r, &[3, 4, 5]);
    let b = uniform(&mut r, &[3, 4, 5]);
    let g = uniform(&mut r, &[3, 1, 1]);
    let s = uniform(&mut r, &[3]);

    let sig = |t: &mut Tape, v: &[NodeId]| {
        let y = t.sigmoid(v[0]);
        project(t, y, 31)
    };
    assert_grad("sigmoid", &sig, std::slice::from_ref(&a));
    let relu = |t: &mut Tape, v: &[NodeId]| {
        let y = t.relu(v[0]);
        project(t, y, 32)
    };
    assert_grad("relu", &relu, std::slice::from_ref(&a));
    let add = |t: &mut Tape, v: &[NodeId]| {
        let y = t.add(v[0], v[1]).unwrap();
        project(t, y, 33)
    };
    assert_grad("add", &add, &[a.clone(), b.clone()]);
    let mul = |t: &mut Tape, v: &[NodeId]| {
        let y = t.mul(v[0], v[1]).unwrap();
        project(t, y, 34)
    };
    assert_grad("mul", &mul, &[a.clone(), b.clone()]);
    let gate = |t: &mut Tape, v: &[NodeId]| {
        let y = t.mul_gate(v[0], v[1]).unwrap();
        project(t, y, 35)
    };
    assert_grad("mul_gate", &gate, &[a.clone(), g.clone()]);
    let affine = |t: &mut Tape, v: &[NodeId]| {
        let y = t.affine(v[0], v[1], v[2]).unwrap();
        project(t, y, 36)
    };
    assert_grad("affine", &affine, &[a.clone(), s.clone(), s.clone()]);
    let scale = |t: &mut Tape, v: &[NodeId]| {
        let y = t.scale(v[0], -2.5);
        project(t, y, 37)
    };
    assert_grad("scale", &scale, std::slice::from_ref(&a));
    let cat = |t: &mut Tape, v: &[NodeId]| {
        let y = t.concat(&[v[0], v[1]], 0).unwrap();
        let y = t.narrow(y, 0, 2, 3).unwrap();
        project(t, y, 38)
    };
    assert_grad("concat+narrow", &cat, &[a.clone(), b.clone()]);
    let split = |t: &mut Tape, v: &[NodeId]| {
        let parts = t.split(v[0], 2, &[2, 3]).unwrap();
        let l = project(t, parts[0], 39);
        let rr = project(t, parts[1], 40);
        t.add(l, rr).unwrap()
    };
    assert_grad("split", &split, std::slice::from_ref(&a));
}

#[test]
fn losses() {
    let mut r = rng(40);
    let logits = uniform(&mut r, &[3, 4, 4]);
    let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let ce = |t: &mut Tape, v: &[NodeId]| t.cross_entropy(v[0], &labels, None).unwrap();
    assert_grad("cross_entropy", &ce, std::slice::from_ref(&logits));
    let mut partly: Vec<usize> = labels.clone();
    partly[3] = 255;
    partly[7] = 255;
    let ce_ign = |t: &mut Tape, v: &[NodeId]| t.cross_entropy(v[0], &partly, Some(255)).unwrap();
    assert_grad("cross_entropy ignore", &ce_ign, std::slice::from_ref(&logits));
    let ev = uniform(&mut r, &[2, 4, 4]);
    let target = Tensor::from_vec(vec![2, 4, 4], (0..32).map(|i| f64::from(i % 3 == 0)).collect()).unwrap();
    let bce = |t: &mut Tape, v: &[NodeId]| t.bce_with_logits(v[0], &target).unwrap();
    assert_grad("bce", &bce, &[ev]);
}

fn bound(t: &mut Tape, names: &[&str], ids: &[NodeId]) -> Bound {
    let _ = t;
    let mut b = Bound::new();
    for (n, &id) in names.iter().zip(ids) {
        b.insert(*n, id);
    }
    b
}

#[test]
fn attention_merge() {
    let mut r = rng(50);
    let c = 3;
    let inputs = vec![
        uniform(&mut r, &[c, 4, 6]),
        uniform(&mut r, &[c, 4, 6]),
        uniform(&mut r, &[c, c, 1, 1]),
        uniform(&mut r, &[c]),
        uniform(&mut r, &[c, c, 1, 1]),
        uniform(&mut r, &[c]),
    ];
    let names = ["eam.gate_img.weight", "eam.gate_img.bias", "eam.gate_evt.weight", "eam.gate_evt.bias"];
    let build = |t: &mut Tape, v: &[NodeId]| {
        let p = bound(t, &names, &v[2..]);
        let y = eam_forward(t, &p, "eam", v[0], v[1]).unwrap();
        project(t, y, 51)
    };
    assert_grad("eam", &build, &inputs);
}

#[test]
fn gate_module() {
    let mut r = rng(60);
    let (c, ce) = (4, 2);
    let inputs = vec![
        uniform(&mut r, &[c, 2, 4]),
        uniform(&mut r, &[ce, 8, 16]),
        uniform(&mut r, &[ce, c, 1, 1]),
        uniform(&mut r, &[ce]),
        uniform(&mut r, &[ce, 2 * ce, 1, 1]),
        uniform(&mut r, &[ce]),
    ];
    let names = ["egm.g.weight", "egm.g.bias", "egm.reduce.weight", "egm.reduce.bias"];
    let build = |t: &mut Tape, v: &[NodeId]| {
        let p = bound(t, &names, &v[2..]);
        let y = egm_forward(t, &p, "egm", v[0], v[1]).unwrap();
        project(t, y, 61)
    };
    assert_grad("egm", &build, &inputs);
}

#[test]
fn pyramid_heads() {
    let mut r = rng(70);
    let (c, s) = (8, 3);
    let grids = [(4, 8), (2, 4), (1, 1)];
    let mut inputs = vec![uniform(&mut r, &[c, 16, 32])];
    let mut names = Vec::new();
    for j in 0..grids.len() {
        inputs.push(uniform(&mut r, &[s, c, 1, 1]));
        inputs.push(uniform(&mut r, &[s]));
        names.push(format!("spp.g{j}.weight"));
        names.push(format!("spp.g{j}.bias"));
    }
    inputs.push(uniform(&mut r, &[s, 3 * s, 1, 1]));
    inputs.push(uniform(&mut r, &[s]));
    names.push("spp.fuse.weight".into());
    names.push("spp.fuse.bias".into());
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let build = |t: &mut Tape, v: &[NodeId]| {
        let p = bound(t, &refs, &v[1..]);
        let y = spp_forward(t, &p, "spp", v[0], &grids).unwrap();
        project(t, y, 71)
    };
    assert!(check_gradients(&build, &inputs, Some(60), 2).is_ok(), "spp");

    let ce = 2;
    let mut e_inputs = inputs[..inputs.len() - 2].to_vec();
    let mut e_names: Vec<String> = names[..names.len() - 2].to_vec();
    e_inputs.push(uniform(&mut r, &[ce, 64, 128]));
    e_inputs.push(uniform(&mut r, &[s, ce, 1, 1]));
    e_inputs.push(uniform(&mut r, &[s]));
    e_inputs.push(uniform(&mut r, &[s, 4 * s, 1, 1]));
    e_inputs.push(uniform(&mut r, &[s]));
    let n_pre = e_names.len();
    e_names.extend(["spp.ctx.weight", "spp.ctx.bias", "spp.fuse.weight", "spp.fuse.bias"].map(String::from));
    let e_refs: Vec<&str> = e_names.iter().map(String::as_str).collect();
    let build = |t: &mut Tape, v: &[NodeId]| {
        let mut ids: Vec<NodeId> = v[1..=n_pre].to_vec();
        ids.extend_from_slice(&v[n_pre + 2..]);
        let p = bound(t, &e_refs, &ids);
        let y = espp_forward(t, &p, "spp", v[0], v[n_pre + 1], &grids).unwrap();
        project(t, y, 72)
    };
    if let Err(e) = check_gradients(&build, &e_inputs, Some(60), 3) {
        panic!("espp: {e}");
    }
}
