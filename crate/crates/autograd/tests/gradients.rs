use proactive_autograd::{
    grad_check, grad_check_inputs, optimizer_step, BatchNorm2d, Conv2d, ConvBnRelu, Graph, Linear,
    Mode, OptimizerSpec, ParamStore, Result, Tensor, TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU/clamp kinks are never crossed by a
/// finite-difference step.
fn away_from_kinks(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Random projection so every output element matters to the loss.
fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(x).to_vec();
    let w = g.constant(random(&shape, &mut rng));
    g.dot(x, w, &[], false)
}

#[test]
fn relu_sigmoid_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).item(), 0.5);
}

#[test]
fn unit_kernel_convolution_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random(&[2, 1, 5, 4], &mut rng);
    for k in [1usize, 3] {
        let mut kernel = vec![0.0; k * k];
        kernel[k * k / 2] = 1.0;
        let mut g = Graph::<f64>::new();
        let x = g.constant(input.clone());
        let w = g.constant(Tensor::new(&[1, 1, k, k], kernel).unwrap());
        let y = g.conv2d(x, w, None).unwrap();
        assert_eq!(g.value(y), &input);
    }
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let err = g.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    let err = g.matmul(a, a).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { op: "matmul", .. }));
}

#[test]
fn quadratic_gradient() {
    let mut store = ParamStore::<f64>::new("q");
    let w = store.add("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let sq = g.mul(wv, wv).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss).unwrap();
    store.zero_grads();
    store.accumulate_grads(&g).unwrap();
    assert_eq!(store.grad(w).data(), &[2.0, 4.0]);
}

#[test]
fn loss_independent_of_parameter_gives_zero_gradient() {
    let mut store = ParamStore::<f64>::new("q");
    let w = store.add("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let mut g = Graph::new();
    let _ = g.param(&store, w);
    let c = g.constant(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
    let loss = g.sum(c).unwrap();
    g.backward(loss).unwrap();
    store.zero_grads();
    store.accumulate_grads(&g).unwrap();
    assert_eq!(store.grad(w).data(), &[0.0, 0.0]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(2.0));
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.backward(y).unwrap_err(), TensorError::BackwardTwice);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn pointwise_and_reduction_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = away_from_kinks(&[2, 3, 4], &mut rng);
    let b = away_from_kinks(&[1, 3, 1], &mut rng);
    let pos = a.map(|v| v.abs() + 0.5);
    let report = grad_check_inputs(
        &[a, b, pos],
        |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            let q = g.div(m, v[2])?;
            let r = g.relu(q);
            let sg = g.sigmoid(v[0]);
            let e = g.exp(sg);
            let l = g.log(v[2]);
            let sq = g.sqrt(v[2]);
            let n = g.neg(l);
            let c = g.clamp(v[0], -0.5, 0.5);
            let terms = [r, e, n, sq, c];
            let mut acc = g.add_scalar(terms[0], 0.3);
            for (i, &t) in terms.iter().enumerate().skip(1) {
                let p = project(g, t, i as u64)?;
                let sc = g.scale(p, 0.5 + i as f64);
                let pa = project(g, acc, 100 + i as u64)?;
                acc = g.add(pa, sc)?;
            }
            let mean = g.spatial_mean(v[0])?;
            let pm = project(g, mean, 9)?;
            let norm = g.l2_norm_axes(v[2], &[1, 2], true)?;
            let pn = project(g, norm, 10)?;
            let tot = g.add(acc, pm)?;
            g.add(tot, pn)
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn matmul_narrow_reshape_log_softmax_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 5], &mut rng);
    let report = grad_check_inputs(
        &[a, b],
        |g, v| {
            let m = g.matmul(v[0], v[1])?;
            let ls = g.log_softmax(m, 1)?;
            let n = g.narrow(ls, 1, 1, 3)?;
            let r = g.reshape(n, &[9])?;
            project(g, r, 3)
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn softplus_and_concat_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = random(&[2, 1, 3], &mut rng).map(|v| v * 20.0);
    let b = random(&[2, 2, 3], &mut rng);
    let report = grad_check_inputs(
        &[a, b],
        |g, v| {
            let sp = g.softplus(v[0]);
            let c = g.concat(&[sp, v[1], v[0]], 1)?;
            project(g, c, 15)
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn softplus_is_stable_at_extremes() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(&[3], vec![-100.0, 0.0, 100.0]).unwrap());
    let y = g.softplus(x);
    let d = g.value(y).data();
    assert!(d[0] >= 0.0 && d[0] < 1e-30);
    assert!((d[1] - 2f32.ln()).abs() < 1e-7);
    assert_eq!(d[2], 100.0);
}

#[test]
fn concat_joins_along_an_axis() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::from_f64(&[2, 1], &[1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::from_f64(&[2, 2], &[3.0, 4.0, 5.0, 6.0]).unwrap());
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    assert!(g.concat(&[a, b], 0).is_err());
}

#[test]
fn convolution_pooling_upsampling_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[2, 2, 4, 4], &mut rng);
    let w3 = random(&[3, 2, 3, 3], &mut rng);
    let w1 = random(&[2, 3, 1, 1], &mut rng);
    let b = random(&[3], &mut rng);
    let report = grad_check_inputs(
        &[x, w3, w1, b],
        |g, v| {
            let h = g.conv2d(v[0], v[1], Some(v[3]))?;
            let p = g.avg_pool2(h)?;
            let u = g.upsample2(p)?;
            let o = g.conv2d(u, v[2], None)?;
            project(g, o, 4)
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn batch_norm_matches_finite_differences_in_both_modes() {
    for mode in [Mode::Train, Mode::Eval] {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::<f64>::new("bn");
        let bn = BatchNorm2d::new(&mut store, "bn", 3);
        // Non-trivial affine and running statistics.
        for p in store.iter_mut() {
            for v in p.value.data_mut() {
                *v += rng.random_range(0.2..0.8);
            }
        }
        let x = random(&[4, 3, 2, 2], &mut rng);
        let report = grad_check(
            &mut store,
            |g, s| {
                let xv = g.constant(x.clone());
                let y = bn.forward(g, s, xv, mode)?;
                project(g, y, 11)
            },
            STEP,
            TOL,
        )
        .unwrap();
        assert!(report.passed(), "{mode:?}: {report:#?}");
    }
}

#[test]
fn batch_norm_input_gradient_in_training_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(&[3, 2, 2, 3], &mut rng);
    let gamma = random(&[2], &mut rng);
    let beta = random(&[2], &mut rng);
    let report = grad_check_inputs(
        &[x, gamma, beta],
        |g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            project(g, y, 13)
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn running_statistics_follow_momentum() {
    let mut store = ParamStore::<f64>::new("bn");
    let bn = BatchNorm2d::new(&mut store, "bn", 1);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_f64(&[2, 1, 1, 1], &[1.0, 3.0]).unwrap());
    bn.forward(&mut g, &mut store, x, Mode::Train).unwrap();
    let rm = store.param(bn.running_mean).value.item();
    let rv = store.param(bn.running_var).value.item();
    // batch mean 2, unbiased variance 2
    assert!((rm - 0.2).abs() < 1e-12);
    assert!((rv - (0.9 + 0.2)).abs() < 1e-12);
    let before = store.param(bn.running_mean).value.clone();
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_f64(&[2, 1, 1, 1], &[5.0, 7.0]).unwrap());
    bn.forward(&mut g, &mut store, x, Mode::Eval).unwrap();
    assert_eq!(store.param(bn.running_mean).value, before);
}

fn two_layer(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) -> (Linear, Var2) {
    let l1 = Linear::new(store, "l1", 5, 8, rng);
    let w2 = store.add_fan_in_uniform("l2.weight", &[8, 2], 8, rng);
    (l1, Var2(w2))
}

struct Var2(proactive_autograd::ParamId);

#[test]
fn random_two_layer_net_with_64_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::<f64>::new("net");
    let (l1, Var2(w2)) = two_layer(&mut store, &mut rng);
    assert_eq!(store.trainable_count(), 64);
    // Perturb biases so they are not exactly zero.
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let x = away_from_kinks(&[6, 5], &mut rng);
    let target = random(&[6, 2], &mut rng);
    let report = grad_check(
        &mut store,
        |g, s| {
            let xv = g.constant(x.clone());
            let h = l1.forward(g, s, xv)?;
            let h = g.sigmoid(h);
            let w = g.param(s, w2);
            let y = g.matmul(h, w)?;
            let t = g.constant(target.clone());
            let d = g.sub(y, t)?;
            let sq = g.mul(d, d)?;
            g.mean(sq)
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.max_error() < 1e-4, "{report:#?}");
}

#[test]
fn linear_layer_errors_below_one_in_a_million() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut store = ParamStore::<f64>::new("lin");
    let lin = Linear::new(&mut store, "lin", 4, 3, &mut rng);
    let x = random(&[5, 4], &mut rng);
    let report = grad_check(
        &mut store,
        |g, s| {
            let xv = g.constant(x.clone());
            let y = lin.forward(g, s, xv)?;
            project(g, y, 5)
        },
        STEP,
        1e-6,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn relu_network_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut store = ParamStore::<f64>::new("net");
    let block = ConvBnRelu::new(&mut store, "b", 2, 3, &mut rng);
    let head = Conv2d::new(&mut store, "head", 3, 1, 1, true, &mut rng);
    let x = random(&[3, 2, 4, 4], &mut rng);
    let report = grad_check(
        &mut store,
        |g, s| {
            let xv = g.constant(x.clone());
            let h = block.forward(g, s, xv, Mode::Train)?;
            let y = head.forward(g, s, h)?;
            project(g, y, 6)
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

#[test]
fn constant_network_has_exact_zero_error() {
    let mut store = ParamStore::<f64>::new("c");
    store.add("w", Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
    let report = grad_check(
        &mut store,
        |g, _| {
            let c = g.constant(Tensor::scalar(4.0));
            Ok(g.scale(c, 2.0))
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert_eq!(report.max_error(), 0.0);
}

#[test]
fn sgd_on_quadratic_bowl_converges() {
    // f(w) = 0.5 * |w - c|^2, gradient w - c, contraction factor 0.9 per step.
    let c = [3.0, -2.0, 0.5];
    let mut store = ParamStore::<f64>::new("bowl");
    let w = store.add("w", Tensor::zeros(&[3]));
    let spec = OptimizerSpec::sgd(0.1);
    for _ in 0..100 {
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let cv = g.constant(Tensor::from_f64(&[3], &c).unwrap());
        let d = g.sub(wv, cv).unwrap();
        let sq = g.mul(d, d).unwrap();
        let s = g.sum(sq).unwrap();
        let loss = g.scale(s, 0.5);
        g.backward(loss).unwrap();
        store.zero_grads();
        store.accumulate_grads(&g).unwrap();
        optimizer_step(&mut store, &spec).unwrap();
    }
    let dist = store
        .param(w)
        .value
        .data()
        .iter()
        .zip(&c)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    // 0.9^100 * |c| ~ 1e-4
    assert!(dist < 1e-3, "{dist}");
}

fn train_small(seed: u64, steps: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new("net");
    let block = ConvBnRelu::new(&mut store, "b", 3, 4, &mut rng);
    let head = Conv2d::new(&mut store, "head", 4, 1, 3, true, &mut rng);
    let spec = OptimizerSpec::adaptive_moment(1e-2);
    for _ in 0..steps {
        let x: Vec<f32> = (0..2 * 3 * 8 * 8).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(&[2, 3, 8, 8], x).unwrap());
        let h = block.forward(&mut g, &mut store, xv, Mode::Train).unwrap();
        let y = head.forward(&mut g, &store, h).unwrap();
        let s = g.sigmoid(y);
        let loss = g.mean(s).unwrap();
        g.backward(loss).unwrap();
        store.zero_grads();
        store.accumulate_grads(&g).unwrap();
        optimizer_step(&mut store, &spec).unwrap();
    }
    store.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect()
}

#[test]
fn identical_seeds_give_bitwise_identical_parameters() {
    let a = train_small(5, 5);
    let b = train_small(5, 5);
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert!(a.iter().all(|v| v.is_finite()));
    assert_ne!(a, train_small(6, 5));
}

#[test]
fn backward_cost_is_bounded_by_four_times_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut store = ParamStore::<f32>::new("net");
    let stem = ConvBnRelu::new(&mut store, "stem", 3, 8, &mut rng);
    let block = ConvBnRelu::new(&mut store, "block", 8, 8, &mut rng);
    let head = Conv2d::new(&mut store, "head", 8, 1, 1, true, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 3, 16, 16], 0.5));
    let h = stem.forward(&mut g, &mut store, x, Mode::Train).unwrap();
    let h = g.avg_pool2(h).unwrap();
    let h = block.forward(&mut g, &mut store, h, Mode::Train).unwrap();
    let h = g.upsample2(h).unwrap();
    let y = head.forward(&mut g, &store, h).unwrap();
    let s = g.sigmoid(y);
    let loss = g.mean(s).unwrap();
    g.backward(loss).unwrap();
    let st = g.stats();
    assert!(st.backward_ops <= st.forward_ops);
    let ratio = st.backward_work as f64 / st.forward_work as f64;
    assert!(ratio <= 4.0, "backward/forward work ratio {ratio}");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_conv_nets_match_finite_differences(
            seed in 0u64..10_000,
            cin in 1usize..3,
            cout in 1usize..4,
            side in prop::sample::select(vec![2usize, 4]),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new("p");
            let conv = Conv2d::new(&mut store, "c", cin, cout, 3, true, &mut rng);
            let head = Conv2d::new(&mut store, "h", cout, 1, 1, true, &mut rng);
            let x = random(&[2, cin, side, side], &mut rng);
            let report = grad_check(
                &mut store,
                |g, s| {
                    let xv = g.constant(x.clone());
                    let h = conv.forward(g, s, xv)?;
                    let h = g.sigmoid(h);
                    let y = head.forward(g, s, h)?;
                    project(g, y, seed)
                },
                STEP,
                TOL,
            ).unwrap();
            prop_assert!(report.passed(), "{:#?}", report);
        }
    }
}
