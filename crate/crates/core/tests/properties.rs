use proptest::prelude::*;
use texgram_core::clustering::{cut_tree, ward_linkage, ward_linkage_naive};
use texgram_core::engine::{forward_with_taps, FeatureMap, InputSpec, Session};
use texgram_core::gram::{gram_devectorize, gram_matrix, gram_vectorize, GramVector};
use texgram_core::infotheory::{mutual_information, plugin_entropy, ContingencyTable, EntropyMethod};
use texgram_core::rdm::{compute_rdm, sort_by_class, DistanceVariant, RdmOptions};
use texgram_core::stats::{correlate, pearson_p};
use texgram_core::synthesis::{lbfgs_minimize, FnObjective, LbfgsConfig};
use texgram_core::synthetic::{conv_relu_stack, gaussian_image};
use texgram_oracle::naive_rdm;

fn feature_map() -> impl Strategy<Value = FeatureMap> {
    (1usize..6, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-10.0f32..10.0, c * h * w)
            .prop_map(move |data| FeatureMap::new("f", c, h, w, data).unwrap())
    })
}

fn gram_vectors() -> impl Strategy<Value = Vec<GramVector>> {
    (1usize..5, 1usize..12).prop_flat_map(|(n, s)| {
        let len = n * (n + 1) / 2;
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, len), s)
            .prop_map(move |vs| vs.into_iter().map(|v| GramVector::new(n, v).unwrap()).collect())
    })
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("item{i}")).collect()
}

fn condensed() -> impl Strategy<Value = Vec<f64>> {
    (2usize..14).prop_flat_map(|n| prop::collection::vec(0.01f64..10.0, n * (n - 1) / 2))
}

fn labels(kx: usize, ky: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..60).prop_flat_map(move |n| (prop::collection::vec(0..kx, n), prop::collection::vec(0..ky, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_symmetric_psd_with_nonnegative_diagonal(f in feature_map(), probe in prop::collection::vec(-1.0f64..1.0, 6)) {
        let g = gram_matrix(&f).unwrap();
        let n = g.n();
        for i in 0..n {
            prop_assert!(g.get(i, i) >= 0.0);
            for j in 0..n {
                prop_assert_eq!(g.get(i, j).to_bits(), g.get(j, i).to_bits());
            }
        }
        let v = &probe[..n];
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += v[i] * g.get(i, j) * v[j];
            }
        }
        prop_assert!(q >= -1e-9 * g.frobenius_norm().max(1.0));
    }

    #[test]
    fn gram_vector_round_trips(f in feature_map()) {
        let g = gram_matrix(&f).unwrap();
        let v = gram_vectorize(&g);
        prop_assert_eq!(v.len(), g.n() * (g.n() + 1) / 2);
        prop_assert_eq!(gram_devectorize(&v), g);
    }

    #[test]
    fn rdm_matches_oracle_and_is_a_metric(vs in gram_vectors()) {
        let r = compute_rdm(&vs, &ids(vs.len()), RdmOptions::default()).unwrap();
        let raw: Vec<Vec<f64>> = vs.iter().map(|v| v.values().to_vec()).collect();
        prop_assert_eq!(r.values(), &naive_rdm(&raw)[..]);
        let s = r.size();
        for i in 0..s {
            prop_assert_eq!(r.get(i, i), 0.0);
            for j in 0..s {
                prop_assert_eq!(r.get(i, j).to_bits(), r.get(j, i).to_bits());
                prop_assert!(r.get(i, j) >= 0.0);
                for k in 0..s {
                    let slack = 1e-5 * (1.0 + r.get(i, k) + r.get(k, j));
                    prop_assert!(r.get(i, j) <= r.get(i, k) + r.get(k, j) + slack);
                }
            }
        }
    }

    #[test]
    fn full_frobenius_dominates_upper_triangle(vs in gram_vectors()) {
        let a = compute_rdm(&vs, &ids(vs.len()), RdmOptions::default()).unwrap();
        let opts = RdmOptions { variant: DistanceVariant::FullFrobenius, standardize: false };
        let b = compute_rdm(&vs, &ids(vs.len()), opts).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(*x <= *y * (1.0 + 1e-6));
        }
    }

    #[test]
    fn class_sort_is_a_consistent_permutation(vs in gram_vectors(), seed in 0usize..1000) {
        let s = vs.len();
        let labels: Vec<usize> = (0..s).map(|i| (i * 7 + seed) % 3).collect();
        let r = compute_rdm(&vs, &ids(s), RdmOptions::default()).unwrap();
        let (sorted, perm) = sort_by_class(&r, &labels).unwrap();
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..s).collect::<Vec<_>>());
        for w in perm.windows(2) {
            prop_assert!((labels[w[0]], w[0]) < (labels[w[1]], w[1]));
        }
        for a in 0..s {
            for b in 0..s {
                prop_assert_eq!(sorted.get(a, b), r.get(perm[a], perm[b]));
            }
        }
    }

    #[test]
    fn ward_heights_are_monotone_and_match_naive(c in condensed()) {
        let d = ward_linkage(&c).unwrap();
        let n = d.leaves();
        prop_assert_eq!(d.merges().len(), n - 1);
        prop_assert_eq!(d.merges().last().unwrap().size, n);
        for w in d.merges().windows(2) {
            prop_assert!(w[0].height <= w[1].height);
        }
        let naive = ward_linkage_naive(&c).unwrap();
        for (a, b) in d.merges().iter().zip(naive.merges()) {
            prop_assert!((a.height - b.height).abs() <= 1e-9 * b.height.max(1e-300));
        }
        for k in 1..=n {
            let cut = cut_tree(&d, k).unwrap();
            let distinct: std::collections::BTreeSet<_> = cut.labels.iter().collect();
            prop_assert_eq!(distinct.len(), k);
            prop_assert_eq!(cut.labels[0], 0);
        }
    }

    #[test]
    fn plugin_mi_is_bounded_and_symmetric((x, y) in labels(4, 5)) {
        let t = ContingencyTable::from_labels(4, 5, &x, &y).unwrap();
        let mi = mutual_information(&t, EntropyMethod::PlugIn).unwrap();
        prop_assert!(mi.value >= -1e-12);
        prop_assert!(mi.value <= mi.h_x.value.min(mi.h_y.value) + 1e-12);
        let back = mutual_information(&t.transpose(), EntropyMethod::PlugIn).unwrap();
        prop_assert_eq!(mi.value.to_bits(), back.value.to_bits());
    }

    #[test]
    fn mi_is_exactly_invariant_to_relabeling((x, y) in labels(3, 4), shift in 1usize..3) {
        let t = ContingencyTable::from_labels(3, 4, &x, &y).unwrap();
        let x2: Vec<usize> = x.iter().map(|v| (v + shift) % 3).collect();
        let y2: Vec<usize> = y.iter().map(|v| 3 - v).collect();
        let t2 = ContingencyTable::from_labels(3, 4, &x2, &y2).unwrap();
        for m in [EntropyMethod::PlugIn, EntropyMethod::Nsb] {
            let a = mutual_information(&t, m).unwrap().value;
            let b = mutual_information(&t2, m).unwrap().value;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn plugin_entropy_is_at_most_log_k(counts in prop::collection::vec(0u64..50, 1..20)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let h = plugin_entropy(&counts).unwrap();
        prop_assert!(h >= 0.0 && h <= (counts.len() as f64).log2() + 1e-12);
    }

    #[test]
    fn pearson_is_bounded_and_affine_invariant(
        x in prop::collection::vec(-100.0f64..100.0, 3..30),
        scale in 0.1f64..10.0,
        offset in -50.0f64..50.0,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + (i as f64).cos()).collect();
        let a = correlate(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * scale + offset).collect();
        let b = correlate(&xs, &y).unwrap();
        match (a.r, b.r) {
            (Some(r1), Some(r2)) => {
                prop_assert!((-1.0..=1.0).contains(&r1));
                prop_assert!((r1 - r2).abs() < 1e-9);
                let p = a.p.unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
            (None, None) => {}
            other => prop_assert!(false, "definedness differs: {:?}", other),
        }
    }

    #[test]
    fn p_value_decreases_with_abs_r(r1 in 0.0f64..0.99, dr in 0.001f64..0.5, n in 4usize..40) {
        let r2 = (r1 + dr).min(0.999);
        prop_assert!(pearson_p(r2, n).unwrap() <= pearson_p(r1, n).unwrap());
        prop_assert_eq!(pearson_p(r1, n), pearson_p(-r1, n));
    }

    #[test]
    fn lbfgs_solves_convex_quadratics(diag in prop::collection::vec(0.5f64..20.0, 2..8), seed in 0u64..100) {
        let n = diag.len();
        let target: Vec<f64> = (0..n).map(|i| ((i as u64 + seed) % 7) as f64 - 3.0).collect();
        let d = diag.clone();
        let t = target.clone();
        let mut obj = FnObjective(move |x: &[f64]| {
            let f = x.iter().zip(&t).zip(&d).map(|((x, t), d)| 0.5 * d * (x - t) * (x - t)).sum();
            let g = x.iter().zip(&t).zip(&d).map(|((x, t), d)| d * (x - t)).collect();
            (f, g)
        });
        let res = lbfgs_minimize(&mut obj, &vec![0.0; n], &LbfgsConfig::default()).unwrap();
        for (x, t) in res.x.iter().zip(&target) {
            prop_assert!((x - t).abs() < 1e-6);
        }
        for w in res.trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_is_deterministic_and_backward_linear(seed in 0u64..1000, a in -3.0f32..3.0) {
        let net = conv_relu_stack(seed, "p", InputSpec::new([3, 7, 6]), &[4, 3], None).unwrap();
        let img = gaussian_image(seed + 1, [3, 7, 6]);
        let t1 = forward_with_taps(&net, &img).unwrap();
        let t2 = forward_with_taps(&net, &img).unwrap();
        prop_assert_eq!(&t1, &t2);

        let mut s = Session::new(&net);
        s.forward(&img).unwrap();
        let g: Vec<FeatureMap> = t1.iter().map(|f| FeatureMap { data: f.data.iter().map(|v| v.sin()).collect(), ..f.clone() }).collect();
        let ga: Vec<FeatureMap> = g.iter().map(|f| FeatureMap { data: f.data.iter().map(|v| v * a).collect(), ..f.clone() }).collect();
        let zero: Vec<FeatureMap> = t1.iter().map(|f| f.zeros_like()).collect();
        let b1 = s.backward_to_input(&img, &g).unwrap();
        let b2 = s.backward_to_input(&img, &ga).unwrap();
        for (x, y) in b1.data().iter().zip(b2.data()) {
            prop_assert!((x * a - y).abs() <= 1e-4 * (1.0 + y.abs()));
        }
        prop_assert!(s.backward_to_input(&img, &zero).unwrap().data().iter().all(|v| *v == 0.0));
    }
}
