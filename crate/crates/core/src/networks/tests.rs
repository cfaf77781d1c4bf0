use super::*;
use crate::pdes::make_problem;

fn count_formula(arch: Arch, d: usize, h: usize, w: usize, n: usize) -> usize {
    let hidden = (h - 1) * (w * w + w);
    match arch {
        Arch::FcDbsde => 1 + d + (n - 1) * (d * w + 2 * w + (h - 1) * (w * w + 2 * w) + w * d + d),
        Arch::FcElu => 1 + d + (n - 1) * (d * w + w + hidden + w * d + d),
        Arch::FcResidual => 1 + d + (n - 1) * ((d + 1) * w + w + hidden + w * d + d),
        Arch::FcMerged | Arch::FcMergedResidual => 1 + (d + 3) * w + w + hidden + w * d + d,
        Arch::FcMergedShortcut => 1 + (d + 3) * w + w + (h - 1) * ((w + d + 3) * w + w) + (w + d + 3) * d + d,
        Arch::Lstm => 1 + 4 * h * w + 4 * ((d + 1) * w + w) + (h - 1) * 4 * (w * w + w) + w * d + d,
        Arch::AugmentedLstm | Arch::ResidualLstm => {
            1 + 4 * h * w + 4 * ((d + 3) * w + w) + (h - 1) * 4 * (w * w + w) + w * d + d
        }
        Arch::HybridLstm => 1 + 4 * w + 4 * ((d + 3) * w + w) + hidden + w * d + d,
        Arch::FpSeparated => 2 * ((d + 1) * w + w + (h - 1) * (w * w + w)) + w + 1 + w * d + d,
        Arch::FpShared => (d + 1) * w + w + (h - 1) * (w * w + w) + w * (d + 1) + d + 1,
        Arch::FpAutoDiff => (d + 1) * w + w + (h - 1) * (w * w + w) + w + 1,
    }
}

#[test]
fn parameter_counts_match_closed_forms() {
    let printed: [(Arch, usize, usize); 10] = [
        (Arch::FcDbsde, 88_121, 8_009_201),
        (Arch::FcElu, 84_161, 7_969_601),
        (Arch::FcResidual, 86_141, 7_989_401),
        (Arch::FcMerged, 911, 81_101),
        (Arch::FcMergedShortcut, 1_301, 112_001),
        (Arch::FcMergedResidual, 911, 81_101),
        (Arch::Lstm, 3_011, 264_101),
        (Arch::AugmentedLstm, 3_171, 265_701),
        (Arch::HybridLstm, 1_831, 144_301),
        (Arch::ResidualLstm, 3_171, 265_701),
    ];
    for (arch, small, large) in printed {
        assert_eq!(count_formula(arch, 10, 2, 20, 100), small, "{arch}");
        assert_eq!(count_formula(arch, 100, 2, 200, 100), large, "{arch}");
        let net = Network::build(NetworkSpec::new(arch, 10, 2, 20, 100), 1).unwrap();
        assert_eq!(net.param_count(), small, "{arch}");
    }
    for (arch, n) in [(Arch::FpSeparated, 2_391), (Arch::FpShared, 1_311), (Arch::FpAutoDiff, 1_101)] {
        let net = Network::build(NetworkSpec::new(arch, 10, 3, 20, 100), 1).unwrap();
        assert_eq!(net.param_count(), n, "{arch}");
        assert_eq!(count_formula(arch, 10, 3, 20, 100), n);
    }
    for arch in Arch::DBSDE.iter().chain(&Arch::FIXED_POINT) {
        for (d, h, w, n) in [(1, 1, 3, 4), (3, 3, 5, 6), (2, 4, 2, 3)] {
            let net = Network::build(NetworkSpec::new(*arch, d, h, w, n), 0).unwrap();
            assert_eq!(net.param_count(), count_formula(*arch, d, h, w, n), "{arch} d={d} h={h}");
        }
    }
}

#[test]
fn build_rejects_empty_layers() {
    assert!(Network::build(NetworkSpec::new(Arch::FcMerged, 2, 0, 4, 10), 0).is_err());
    assert!(Network::build(NetworkSpec::new(Arch::FcMerged, 2, 2, 0, 10), 0).is_err());
    assert!("z".parse::<Arch>().is_err());
    assert_eq!("C-bis".parse::<Arch>().unwrap(), Arch::FpAutoDiff);
}

#[test]
fn init_statistics() {
    let net = Network::build(NetworkSpec::new(Arch::Lstm, 3, 2, 6, 10), 7).unwrap();
    let b = &net.params[net.index_of("lstm1.b").unwrap()];
    assert!(b.data()[6..12].iter().all(|&v| v == 1.0));
    let w = &net.params[net.index_of("lstm2.w").unwrap()];
    let bound = (6.0f64 / 12.0).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert_eq!(net.params[net.y0_index().unwrap()].item(), 0.0);
    let again = Network::build(NetworkSpec::new(Arch::Lstm, 3, 2, 6, 10), 7).unwrap();
    assert_eq!(net.params, again.params);
}

fn inputs(tape: &mut Tape, rows: usize, d: usize, seed: u64) -> KappaInputs {
    let mut r = rng::stream(seed, "test.inputs", 0);
    let mut col = |c| {
        let data = (0..rows * c).map(|_| rng::normal(&mut r)).collect();
        tape.constant(Tensor::new(rows, c, data).unwrap())
    };
    let t = col(1);
    let x = col(d);
    let y = col(1);
    let g = col(1);
    KappaInputs {
        t: Some(t),
        x,
        y: Some(y),
        g: Some(g),
    }
}

#[test]
fn zero_weights_give_zero_kappa() {
    let mut net = Network::build(NetworkSpec::new(Arch::FcElu, 3, 2, 4, 5), 0).unwrap();
    net.params.iter_mut().for_each(|p| p.data_mut().fill(0.0));
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let inp = inputs(&mut tape, 4, 3, 1);
    for step in 0..5 {
        let k = net.kappa(&mut tape, &vars, step, inp, None, false).unwrap();
        assert_eq!(tape.shape(k), [4, 3]);
        assert!(tape.value(k).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn residual_skip_is_identity_with_zero_inner_block() {
    let mut net = Network::build(NetworkSpec::new(Arch::FcResidual, 2, 3, 4, 3), 2).unwrap();
    for name in ["step1.hidden2.w", "step1.hidden2.b", "step1.hidden3.w", "step1.hidden3.b"] {
        let k = net.index_of(name).unwrap();
        net.params[k].data_mut().fill(0.0);
    }
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let inp = inputs(&mut tape, 5, 2, 3);
    let spec = match &net.layout {
        Layout::PerStep { steps, .. } => steps[0].clone(),
        _ => unreachable!(),
    };
    let x = tape.concat(&[inp.x, inp.g.unwrap()]).unwrap();
    let a = dense(&mut tape, &vars, &spec.hidden[0], x).unwrap();
    let z1 = tape.elu(a).unwrap();
    let mut trunk = spec.clone();
    trunk.out = None;
    let z = mlp_forward(&mut tape, &vars, &mut net.bn, &trunk, x, false).unwrap();
    // z2 = z1 + 0 at layer 2 is not a skip layer; z3 adds the anchor z1 to zero.
    assert_eq!(tape.value(z), tape.value(z1));
}

#[test]
fn skip_rule() {
    let skips: Vec<usize> = (2..=5).filter(|&k| adds_skip(k, 5)).collect();
    assert_eq!(skips, vec![3, 5]);
    let skips: Vec<usize> = (2..=4).filter(|&k| adds_skip(k, 4)).collect();
    assert_eq!(skips, vec![3, 4]);
    assert!(adds_skip(2, 2));
}

#[test]
fn lstm_with_zero_weights_outputs_zero_hidden() {
    let mut net = Network::build(NetworkSpec::new(Arch::Lstm, 2, 1, 3, 4), 0).unwrap();
    net.params.iter_mut().for_each(|p| p.data_mut().fill(0.0));
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let inp = inputs(&mut tape, 2, 2, 0);
    let mut state = net.initial_state(&mut tape, 2).unwrap();
    net.kappa(&mut tape, &vars, 0, inp, Some(&mut state), false).unwrap();
    let (h, c) = state.layers[0];
    assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
    assert!(net.kappa(&mut tape, &vars, 1, inp, None, false).is_err());
}

#[test]
fn recurrent_archs_are_sequence_consistent() {
    for arch in [Arch::Lstm, Arch::AugmentedLstm, Arch::HybridLstm, Arch::ResidualLstm] {
        let mut net = Network::build(NetworkSpec::new(arch, 2, 3, 4, 4), 5).unwrap();
        let mut one = Tape::new();
        let vars = net.bind(&mut one);
        let mut state = net.initial_state(&mut one, 3).unwrap();
        let mut outs = Vec::new();
        for s in 0..4 {
            let inp = inputs(&mut one, 3, 2, s);
            let k = net.kappa(&mut one, &vars, s as usize, inp, Some(&mut state), false).unwrap();
            outs.push(one.value(k).clone());
        }
        let mut carried: Option<Vec<(Tensor, Tensor)>> = None;
        for s in 0..4 {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let mut state = match &carried {
                None => net.initial_state(&mut tape, 3).unwrap(),
                Some(c) => LstmState {
                    layers: c
                        .iter()
                        .map(|(h, cc)| (tape.constant(h.clone()), tape.constant(cc.clone())))
                        .collect(),
                },
            };
            let inp = inputs(&mut tape, 3, 2, s);
            let k = net.kappa(&mut tape, &vars, s as usize, inp, Some(&mut state), false).unwrap();
            assert_eq!(tape.value(k), &outs[s as usize], "{arch} step {s}");
            carried = Some(
                state
                    .layers
                    .iter()
                    .map(|&(h, c)| (tape.value(h).clone(), tape.value(c).clone()))
                    .collect(),
            );
        }
    }
}

#[test]
fn per_step_gradients_touch_only_their_step() {
    let mut net = Network::build(NetworkSpec::new(Arch::FcDbsde, 2, 2, 3, 4), 1).unwrap();
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let inp = inputs(&mut tape, 6, 2, 2);
    let k = net.kappa(&mut tape, &vars, 2, inp, None, true).unwrap();
    let sq = tape.square(k).unwrap();
    let loss = tape.reduce_sum(sq, Axis::All).unwrap();
    let grads = tape.backward(loss).unwrap();
    let own = net.step_param_indices(2);
    assert!(!own.is_empty());
    for (i, v) in vars.iter().enumerate() {
        let nonzero = grads.get(*v).unwrap().data().iter().any(|&g| g != 0.0);
        if !own.contains(&i) {
            assert!(!nonzero, "{} has a gradient", net.names()[i]);
        }
    }
    assert!(own.iter().any(|&i| grads.get(vars[i]).unwrap().data().iter().any(|&g| g != 0.0)));
}

fn scalar_output(net: &mut Network, params: &[Tensor], training: bool) -> (f64, Option<Vec<Tensor>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.parameter(p.clone())).collect();
    let d = net.spec.d;
    let inp = inputs(&mut tape, 4, d, 9);
    let mut acc = None;
    if net.spec.arch.fixed_point() {
        let x = tape.concat(&[inp.t.unwrap(), inp.x]).unwrap();
        let (u, v) = net.uv(&mut tape, &vars, x).unwrap();
        let su = tape.square(u).unwrap();
        let mut total = tape.reduce_sum(su, Axis::All).unwrap();
        if let Some(v) = v {
            let s = tape.sin(v).unwrap();
            let sv = tape.reduce_sum(s, Axis::All).unwrap();
            total = tape.add(total, sv).unwrap();
        }
        acc = Some(total);
    } else {
        let mut state = net.initial_state(&mut tape, 4);
        for step in 0..3 {
            let k = net.kappa(&mut tape, &vars, step, inp, state.as_mut(), training).unwrap();
            let s = tape.sin(k).unwrap();
            let r = tape.reduce_sum(s, Axis::All).unwrap();
            acc = Some(match acc {
                None => r,
                Some(a) => tape.add(a, r).unwrap(),
            });
        }
    }
    let loss = acc.unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    (value, Some(vars.iter().map(|v| grads.get(*v).unwrap().clone()).collect()))
}

#[test]
fn all_architectures_pass_finite_differences() {
    for arch in Arch::DBSDE.iter().chain(&Arch::FIXED_POINT) {
        let mut net = Network::build(NetworkSpec::new(*arch, 2, 3, 3, 4), 4).unwrap();
        let params = net.params.clone();
        let bn = net.bn.clone();
        let (v0, grads) = scalar_output(&mut net, &params, false);
        let grads = grads.unwrap();
        let mut r = rng::stream(11, "test.fd", 0);
        for _ in 0..12 {
            let k = (rng::uniform_open(&mut r) * params.len() as f64) as usize;
            let j = (rng::uniform_open(&mut r) * params[k].len() as f64) as usize;
            let h = 1e-6;
            let mut p = params.clone();
            p[k].data_mut()[j] += h;
            net.bn = bn.clone();
            let up = scalar_output(&mut net, &p, false).0;
            p[k].data_mut()[j] -= 2.0 * h;
            net.bn = bn.clone();
            let dn = scalar_output(&mut net, &p, false).0;
            let fd = (up - dn) / (2.0 * h);
            let g = grads[k].data()[j];
            // ReLU kinks (arch a) only admit one-sided derivatives.
            let one_sided = [(up - v0) / h, (v0 - dn) / h];
            assert!(
                (fd - g).abs() <= 1e-5 * fd.abs().max(g.abs()).max(1.0)
                    || one_sided.iter().any(|s| (s - g).abs() <= 1e-4 * s.abs().max(1.0)),
                "{arch} {}[{j}]: fd {fd} vs {g}",
                net.names()[k]
            );
        }
    }
}

#[test]
fn fixed_point_heads() {
    let mut net = Network::build(NetworkSpec::new(Arch::FpShared, 3, 2, 5, 1), 0).unwrap();
    for n in ["net.out.w", "net.out.b"] {
        let k = net.index_of(n).unwrap();
        net.params[k].data_mut().fill(0.0);
    }
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let x = tape.constant(Tensor::full(2, 4, 0.3));
    let (u, v) = net.uv(&mut tape, &vars, x).unwrap();
    assert_eq!(tape.value(u), &Tensor::zeros(2, 1));
    assert_eq!(tape.value(v.unwrap()), &Tensor::zeros(2, 3));

    let mut a = Network::build(NetworkSpec::new(Arch::FpSeparated, 3, 2, 5, 1), 0).unwrap();
    let eval = |a: &mut Network| {
        let mut tape = Tape::new();
        let vars = a.bind(&mut tape);
        let x = tape.constant(Tensor::full(2, 4, 0.3));
        let (u, v) = a.uv(&mut tape, &vars, x).unwrap();
        (tape.value(u).clone(), tape.value(v.unwrap()).clone())
    };
    let (u0, v0) = eval(&mut a);
    for k in 0..a.params.len() {
        if a.names()[k].starts_with("u.") {
            a.params[k].data_mut().iter_mut().for_each(|p| *p += 0.25);
        }
    }
    let (u1, v1) = eval(&mut a);
    assert_ne!(u0, u1);
    assert_eq!(v0, v1);
}

#[test]
fn scaler_formulas() {
    let s = InputScaler {
        maturity: 1.0,
        dt: 0.01,
        x_mean: vec![1.0, -2.0],
        x_std: vec![2.0, 0.5],
        y_mean: -4.0,
    };
    assert_eq!(s.scale_t(0.0), -1.0);
    assert!((s.scale_t(0.99) - 1.0).abs() < 1e-15);
    let mut out = [9.0; 2];
    s.scale_x(&[1.0, -2.0], &mut out);
    assert_eq!(out, [0.0, 0.0]);
    assert_eq!(s.scale_y(-2.0), 0.5);
    let zero = InputScaler { y_mean: 0.0, ..s };
    assert_eq!(zero.scale_y(3.0), 3.0);
}

#[test]
fn scaler_fit_is_deterministic() {
    let p = make_problem("osc_square", 3, &Default::default()).unwrap();
    let a = InputScaler::fit(p.as_ref(), 10, 500, 4).unwrap();
    let b = InputScaler::fit(p.as_ref(), 10, 500, 4).unwrap();
    assert_eq!(a, b);
    assert!(a.x_std.iter().all(|&s| s > 0.0));
    assert!(a.y_mean.is_finite());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = Network::build(NetworkSpec::new(Arch::FcDbsde, 2, 2, 3, 3), 3).unwrap();
    net.bn[0].moving_mean[1] = 0.75;
    let stem = dir.path().join("ck/net");
    save_checkpoint(&net, &stem).unwrap();
    let back = load_checkpoint(&stem).unwrap();
    assert_eq!(back.params, net.params);
    assert_eq!(back.bn, net.bn);
    assert_eq!(back.spec, net.spec);
    let side = std::fs::read_to_string(stem.with_extension("json")).unwrap();
    assert!(side.contains("\"version\": 1"));
    std::fs::write(stem.with_extension("bin"), [0u8; 12]).unwrap();
    assert!(load_checkpoint(&stem).is_err());
}

