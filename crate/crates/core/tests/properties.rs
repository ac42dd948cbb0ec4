use agra::metrics::{self, pearson};
use agra::rng;
use agra::signalgen::{self, build_corpus, CorpusConfig, Perturbation, PerturbationShape, Range, Split, MAX_SCORE};
use agra::{Signal, SignalMean};
use proptest::prelude::*;

fn config(length: usize, seed: u64) -> CorpusConfig {
    CorpusConfig {
        n_examples: 12,
        length,
        seed,
        ..CorpusConfig::default()
    }
}

fn signal_from(len: usize, vals: &[f64]) -> Signal {
    Signal::from_flat(len, vals.iter().cycle().take(2 * len).copied().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_monotone_and_capped(a in 0.0f64..2.0, b in 0.0f64..2.0, r in 0.01f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = signalgen::score_from_mse(lo, r).unwrap();
        let s_hi = signalgen::score_from_mse(hi, r).unwrap();
        prop_assert!(s_lo <= s_hi);
        prop_assert!((0.0..=MAX_SCORE).contains(&s_hi));
        prop_assert_eq!(signalgen::score_from_mse(0.0, r).unwrap(), 0.0);
        prop_assert_eq!(signalgen::score_from_mse(r * 1.5, r).unwrap(), MAX_SCORE);
    }

    #[test]
    fn perturbation_terms_vanish_outside_support(center in 0usize..200, width in 1.0f64..10.0, amp in -3.0f64..3.0, f in 0.1f64..0.4, t in 0usize..200) {
        let p = Perturbation { dim: 0, center, width, amplitude: amp, carrier_freq: f };
        let (lo, hi) = p.support(200, 4.0);
        for shape in [PerturbationShape::WindowedCarrier, PerturbationShape::Bump] {
            let v = p.term(t, shape, 4.0);
            prop_assert!(v.abs() <= amp.abs());
            if t < lo || t >= hi {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn perturb_touches_only_listed_supports(seed in any::<u64>()) {
        let cfg = config(200, seed);
        let mut r = rng::stream(seed, 1, 0);
        let ideal = signalgen::generate_ideal(&cfg, &mut r);
        let (pert, list) = signalgen::perturb(&ideal, &cfg, &mut r);
        prop_assert!(list.len() <= cfg.max_perturbations);
        for d in 0..2 {
            for t in 0..200 {
                let covered = list.iter().any(|p| {
                    let (lo, hi) = p.support(200, cfg.support_widths);
                    p.dim == d && (lo..hi).contains(&t)
                });
                if !covered {
                    prop_assert_eq!(pert[(d, t)], ideal[(d, t)]);
                }
            }
        }
        for p in &list {
            prop_assert!(p.dim < 2 && p.center < 200);
            prop_assert!((cfg.amplitude.lo..cfg.amplitude.hi).contains(&p.amplitude.abs()));
            prop_assert!((cfg.width.lo..cfg.width.hi).contains(&p.width));
        }
    }

    #[test]
    fn pearson_is_bounded_symmetric_and_affine_invariant(
        xs in prop::collection::vec(-5.0f64..5.0, 3..40),
        k in 0.1f64..10.0,
        c in -3.0f64..3.0,
    ) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x.sin() + i as f64 * 0.1).collect();
        if let (Ok(r), Ok(r2)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - r2).abs() < 1e-12);
            let scaled: Vec<f64> = xs.iter().map(|x| k * x + c).collect();
            prop_assert!((pearson(&scaled, &ys).unwrap() - r).abs() < 1e-9);
            let flipped: Vec<f64> = xs.iter().map(|x| -x).collect();
            prop_assert!((pearson(&flipped, &ys).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn split_sizes_follow_train_fraction(n in 2usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let cfg = CorpusConfig { n_examples: n, length: 20, train_fraction: frac, seed, ..CorpusConfig::default() };
        let corpus = build_corpus(&cfg).unwrap();
        prop_assert_eq!(corpus.examples.len(), n);
        prop_assert_eq!(corpus.train().len(), cfg.n_train());
        prop_assert_eq!(corpus.train().len() + corpus.test().len(), n);
        for (i, e) in corpus.examples.iter().enumerate() {
            prop_assert_eq!(e.id, i);
        }
        let again = build_corpus(&cfg).unwrap();
        let splits = |c: &signalgen::Corpus| c.examples.iter().map(|e| e.split).collect::<Vec<Split>>();
        prop_assert_eq!(splits(&corpus), splits(&again));
    }

    #[test]
    fn signal_mean_matches_direct_average(vals in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 1..10), 1..6)) {
        let len = 5;
        let signals: Vec<Signal> = vals.iter().map(|v| signal_from(len, v)).collect();
        let mut acc = SignalMean::new(len);
        for s in &signals {
            acc.push(s).unwrap();
        }
        prop_assert_eq!(acc.count(), signals.len());
        let mean = acc.finish();
        for i in 0..2 * len {
            let direct = signals.iter().map(|s| s.as_slice()[i]).sum::<f64>() / signals.len() as f64;
            prop_assert!((mean.as_slice()[i] - direct).abs() < 1e-12);
        }
        prop_assert_eq!(metrics::mean_signal(&signals).unwrap(), mean);
    }
}

#[test]
fn corpus_is_a_pure_function_of_config() {
    let cfg = config(150, 21);
    assert_eq!(build_corpus(&cfg).unwrap(), build_corpus(&cfg).unwrap());
    let other = build_corpus(&CorpusConfig { seed: 22, ..cfg.clone() }).unwrap();
    assert_ne!(build_corpus(&cfg).unwrap().examples[0].ideal, other.examples[0].ideal);
}

#[test]
fn stored_scores_match_recomputation() {
    let corpus = build_corpus(&config(150, 5)).unwrap();
    for e in &corpus.examples {
        assert_eq!(e.score, signalgen::score(&e.ideal, &e.perturbed, &corpus.config).unwrap());
        if e.perturbations.is_empty() {
            assert_eq!(e.perturbed, e.ideal);
            assert_eq!(e.score, 0.0);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = config(50, 0);
    let bad = [
        CorpusConfig { train_fraction: 1.5, ..base.clone() },
        CorpusConfig { train_fraction: 0.0, ..base.clone() },
        CorpusConfig { n_examples: 0, ..base.clone() },
        CorpusConfig { length: 0, ..base.clone() },
        CorpusConfig { width: Range::new(-1.0, 2.0), ..base.clone() },
        CorpusConfig { score_ref_mse: 0.0, ..base.clone() },
        CorpusConfig { base_noise_sigma: -0.1, ..base.clone() },
    ];
    for cfg in bad {
        assert!(matches!(build_corpus(&cfg), Err(agra::Error::InvalidConfig(_))), "{cfg:?}");
    }
}
