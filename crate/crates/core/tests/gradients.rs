//! Reverse-mode gradients against finite differences and naive adjoints.

use agra::netcore::layers::{self, FeatureMap, Tensor};
use agra::netcore::{self, init_params, ArchDescriptor, Mode, ModelParams};
use agra::rng;
use agra::Signal;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

const T: usize = 300;
const STEP: f64 = 1e-4;

fn random_signal(seed: u64, scale: f64) -> Signal {
    let mut r = rng::stream(seed, 77, 0);
    let mut x = Signal::zeros(T);
    for v in x.as_mut_slice() {
        *v = scale * r.sample::<f64, _>(StandardNormal);
    }
    x
}

/// Random model/input pairs whose score is clearly non-zero.
fn live_pairs(n: usize) -> Vec<(ModelParams, Signal)> {
    let arch = ArchDescriptor::standard(T).unwrap();
    let mut pairs = Vec::new();
    let mut seed = 0;
    while pairs.len() < n {
        seed += 1;
        let m = init_params(&arch, seed).unwrap();
        let x = random_signal(seed, 1.0 + (seed % 3) as f64);
        if netcore::predict(&m, &x).unwrap().abs() > 1e-2 {
            pairs.push((m, x));
        }
    }
    pairs
}

fn l2_at(m: &ModelParams, x: &Signal) -> (f64, netcore::ForwardTrace) {
    let (s, trace) = netcore::forward(m, x, Mode::Inference).unwrap();
    (netcore::loss_l2(s), trace)
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst: f64 = 0.0;
    for (p, (m, x)) in live_pairs(20).iter().enumerate() {
        let analytic = netcore::backward_to_input(m, x).unwrap();
        let (_, base) = l2_at(m, x);
        let mut r = rng::stream(p as u64, 78, 0);
        for _ in 0..8 {
            let i = r.random_range(0..2 * T);
            let mut plus = x.clone();
            plus.as_mut_slice()[i] += STEP;
            let mut minus = x.clone();
            minus.as_mut_slice()[i] -= STEP;
            let (lp, tp) = l2_at(m, &plus);
            let (lm, tm) = l2_at(m, &minus);
            if !(base.same_linear_piece(&tp) && base.same_linear_piece(&tm)) {
                skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * STEP);
            let an = analytic.as_slice()[i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max((fd - an).abs() / denom);
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} coordinates checked ({skipped} kink-adjacent)");
    assert!(worst < 1e-3, "max relative error {worst}");
}

#[test]
fn parameter_gradient_matches_central_differences() {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (p, (m, x)) in live_pairs(4).iter().enumerate() {
        let target = 3.0;
        let (s, trace) = netcore::forward(m, x, Mode::Inference).unwrap();
        let g = netcore::backward(m, &trace, 2.0 * (s - target), false, true).unwrap();
        let grads = g.params.unwrap();
        let mut r = rng::stream(p as u64, 79, 0);
        for (layer, g) in grads.iter().enumerate() {
            for _ in 0..4 {
                let j = r.random_range(0..m.layers[layer].len());
                let eval = |d: f64| {
                    let mut mm = m.clone();
                    mm.layers[layer].data[j] += d;
                    let (sv, tr) = netcore::forward(&mm, x, Mode::Inference).unwrap();
                    (netcore::loss_l1(sv, target), tr)
                };
                let (lp, tp) = eval(STEP);
                let (lm, tm) = eval(-STEP);
                if !(trace.same_linear_piece(&tp) && trace.same_linear_piece(&tm)) {
                    continue;
                }
                let fd = (lp - lm) / (2.0 * STEP);
                let an = g.data[j];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
                checked += 1;
            }
        }
    }
    assert!(checked >= 40, "{checked}");
    assert!(worst < 1e-3, "max relative error {worst}");
}

fn fill(r: &mut agra::rng::StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn naive_conv(x: &FeatureMap, w: &Tensor) -> Vec<f64> {
    let (co, ci, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let out_len = x.len - k + 1;
    let mut out = vec![0.0; co * out_len];
    for o in 0..co {
        for t in 0..out_len {
            for c in 0..ci {
                for kk in 0..k {
                    out[o * out_len + t] += w.data[(o * ci + c) * k + kk] * x.data[c * x.len + t + kk];
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_forward_and_adjoints(ci in 1usize..4, co in 1usize..4, k in 1usize..7, extra in 0usize..30, seed in any::<u64>()) {
        let mut r = rng::stream(seed, 80, 0);
        let len = k + extra;
        let x = FeatureMap::new(ci, len, fill(&mut r, ci * len)).unwrap();
        let w = Tensor::new(&[co, ci, k], fill(&mut r, co * ci * k)).unwrap();
        let y = fill(&mut r, co * (len - k + 1));
        let out = layers::conv1d_forward(&x, &w).unwrap();
        let naive = naive_conv(&x, &w);
        for (a, b) in out.data.iter().zip(&naive) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let up = FeatureMap::new(co, len - k + 1, y.clone()).unwrap();
        let (gi, gw) = layers::conv1d_backward(&x, &w, &up, true).unwrap();
        let gi = gi.unwrap();
        let lhs = inner(&out.data, &y);
        prop_assert!((lhs - inner(&x.data, &gi.data)).abs() < 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((lhs - inner(&w.data, &gw.data)).abs() < 1e-10 * (1.0 + lhs.abs()));
        let gi_only = layers::conv1d_backward_input(len, &w, &up).unwrap();
        prop_assert_eq!(gi_only.data, gi.data);
    }

    #[test]
    fn dense_adjoints(inp in 1usize..20, out in 1usize..8, seed in any::<u64>()) {
        let mut r = rng::stream(seed, 81, 0);
        let x = fill(&mut r, inp);
        let w = Tensor::new(&[out, inp], fill(&mut r, out * inp)).unwrap();
        let y = fill(&mut r, out);
        let fwd = layers::dense_forward(&x, &w).unwrap();
        for (o, got) in fwd.iter().enumerate() {
            let naive: f64 = (0..inp).map(|i| w.data[o * inp + i] * x[i]).sum();
            prop_assert!((got - naive).abs() < 1e-12);
        }
        let (gi, gw) = layers::dense_backward(&x, &w, &y).unwrap();
        let lhs = inner(&fwd, &y);
        prop_assert!((lhs - inner(&x, &gi)).abs() < 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((lhs - inner(&w.data, &gw.data)).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn maxpool_adjoint(c in 1usize..4, window in 1usize..5, cells in 1usize..10, rem in 0usize..4, seed in any::<u64>()) {
        let mut r = rng::stream(seed, 82, 0);
        let len = window * cells + rem.min(window - 1);
        let x = FeatureMap::new(c, len, fill(&mut r, c * len)).unwrap();
        let (out, argmax) = layers::maxpool_forward(&x, window).unwrap();
        prop_assert_eq!(out.len, cells);
        for ch in 0..c {
            for j in 0..cells {
                let best = argmax[ch * cells + j];
                let cell = &x.row(ch)[j * window..(j + 1) * window];
                prop_assert!(best >= j * window && best < (j + 1) * window);
                prop_assert!(cell.iter().all(|&v| v <= x.row(ch)[best]));
            }
        }
        let y = fill(&mut r, c * cells);
        let up = FeatureMap::new(c, cells, y.clone()).unwrap();
        let g = layers::maxpool_backward(&argmax, len, &up).unwrap();
        // pooling is the linear selection `S x` for fixed winners
        prop_assert!((inner(&out.data, &y) - inner(&x.data, &g.data)).abs() < 1e-10);
    }

    #[test]
    fn relu_and_dropout_adjoints(n in 1usize..40, p in 0.0f64..0.9, seed in any::<u64>()) {
        let mut r = rng::stream(seed, 83, 0);
        let z = fill(&mut r, n);
        let y = fill(&mut r, n);
        let v = fill(&mut r, n);
        let dz: Vec<f64> = z.iter().zip(&v).map(|(a, b)| if *a > 0.0 { *b } else { 0.0 }).collect();
        prop_assert!((inner(&layers::relu_backward(&z, &y), &v) - inner(&y, &dz)).abs() < 1e-10);
        let (out, mask) = layers::dropout_forward(&z, p, Some(&mut r));
        for i in 0..n {
            prop_assert!(mask[i] == 0.0 || (mask[i] - 1.0 / (1.0 - p)).abs() < 1e-15);
            prop_assert_eq!(out[i], z[i] * mask[i]);
        }
        prop_assert!((inner(&out, &y) - inner(&z, &layers::dropout_backward(&mask, &y))).abs() < 1e-10);
    }
}

#[test]
fn zero_input_scores_exactly_zero() {
    for (m, _) in live_pairs(5) {
        assert_eq!(netcore::predict(&m, &Signal::zeros(T)).unwrap(), 0.0);
    }
}
