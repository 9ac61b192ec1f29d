use coipo::eval::{decoding_radius, degradation_rate, rate_bucket, AccCurve};
use coipo::loss::{
    coipo_loss, coipo_loss_and_grads, delta_mi, label_mask, masked_distributions, seq_kl, LogitMatrix,
    DEFAULT_PROB_FLOOR,
};
use coipo::model::{build_vocab, tokenize};
use coipo::perturb::{
    replay, structural_radius, CleanPrompt, PerturbationConfig, PerturbationKind, Perturber, RepRange,
};
use coipo::rng::SeededRng;
use ndarray::Array2;
use proptest::prelude::*;

fn logits(t: usize, v: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0f64..6.0, t * v)
}

/// `(prompt_len, label_len, vocab)` and three logit buffers of that shape.
fn triple() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..5, 1usize..4, 2usize..12).prop_flat_map(|(p, l, v)| {
        let t = p + l;
        (Just(p), Just(l), Just(v), logits(t, v), logits(t, v), logits(t, v))
    })
}

fn mat(buf: &[f64], p: usize, l: usize, v: usize) -> LogitMatrix {
    LogitMatrix::new(Array2::from_shape_vec((p + l, v), buf.to_vec()).unwrap(), p, l).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn coipo_is_negated_delta_mi((p, l, v, a, b, c) in triple()) {
        let (n, s, o) = (mat(&a, p, l, v), mat(&b, p, l, v), mat(&c, p, l, v));
        let m = label_mask(p, l).unwrap();
        let parts = coipo_loss(&n, &s, &o, &m).unwrap();
        let d = delta_mi(&n, &s, &o, &m).unwrap();
        prop_assert_eq!(parts.coipo.to_bits(), (-d).to_bits());
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self((p, l, v, a, b, _c) in triple()) {
        let m = label_mask(p, l).unwrap();
        let pa = masked_distributions(&mat(&a, p, l, v), &m).unwrap();
        let pb = masked_distributions(&mat(&b, p, l, v), &m).unwrap();
        prop_assert!(seq_kl(&pa, &pb).unwrap() >= 0.0);
        prop_assert_eq!(seq_kl(&pa, &pa).unwrap(), 0.0);
    }

    #[test]
    fn rows_outside_the_mask_do_not_matter(
        (p, l, v, a, b, c) in triple(),
        row_sel in any::<prop::sample::Index>(),
        which in 0usize..3,
        junk in -50.0f64..50.0,
    ) {
        let m = label_mask(p, l).unwrap();
        let outside: Vec<usize> = (0..p + l).filter(|r| !m.contains(*r)).collect();
        let row = *row_sel.get(&outside);
        let mut bufs = [a.clone(), b.clone(), c.clone()];
        for x in &mut bufs[which][row * v..(row + 1) * v] {
            *x = junk;
        }
        let before = coipo_loss(&mat(&a, p, l, v), &mat(&b, p, l, v), &mat(&c, p, l, v), &m).unwrap();
        let after = coipo_loss(&mat(&bufs[0], p, l, v), &mat(&bufs[1], p, l, v), &mat(&bufs[2], p, l, v), &m).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn gradients_vanish_off_mask_and_rows_sum_to_zero((p, l, v, a, b, c) in triple()) {
        let m = label_mask(p, l).unwrap();
        let (_, gs, go) =
            coipo_loss_and_grads(&mat(&a, p, l, v), &mat(&b, p, l, v), &mat(&c, p, l, v), &m, DEFAULT_PROB_FLOOR).unwrap();
        for g in [&gs, &go] {
            for (r, row) in g.outer_iter().enumerate() {
                if m.contains(r) {
                    prop_assert!(row.sum().abs() < 1e-9);
                } else {
                    prop_assert!(row.iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn row_shifts_leave_losses_unchanged((p, l, v, a, b, c) in triple(), shift in -3.0f64..3.0) {
        let m = label_mask(p, l).unwrap();
        let shifted: Vec<f64> = b.iter().map(|x| x + shift).collect();
        let x = coipo_loss(&mat(&a, p, l, v), &mat(&b, p, l, v), &mat(&c, p, l, v), &m).unwrap();
        let y = coipo_loss(&mat(&a, p, l, v), &mat(&shifted, p, l, v), &mat(&c, p, l, v), &m).unwrap();
        prop_assert!((x.pull_kl - y.pull_kl).abs() < 1e-9);
    }
}

fn prompt_text() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,9}", 2..12).prop_map(|w| w.join(" "))
}

fn kind() -> impl Strategy<Value = PerturbationKind> {
    prop::sample::select(PerturbationKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn perturbations_replay_and_stay_in_range(text in prompt_text(), k in kind(), seed in any::<u64>(), lo in 0usize..4, span in 0usize..4) {
        let reps = RepRange::new(lo, lo + span);
        let perturber = Perturber::new(PerturbationConfig::default().with_reps(reps)).unwrap();
        let clean = CleanPrompt::new(text.clone()).unwrap();
        match perturber.perturb(&clean, Some(k), &mut SeededRng::new(seed)) {
            Ok(out) => {
                prop_assert_eq!(replay(&text, &out.edits).unwrap(), out.text.clone());
                prop_assert_eq!(structural_radius(&clean, &out).unwrap(), out.radius);
                prop_assert!(out.radius <= reps.hi);
                prop_assert!(out.edits.iter().all(|e| e.is_consistent()));
                let again = perturber.perturb(&clean, Some(k), &mut SeededRng::new(seed)).unwrap();
                prop_assert_eq!(again, out);
            }
            Err(coipo::perturb::PerturbError::NoEligibleWord) => prop_assert_eq!(k, PerturbationKind::TextFooler),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn protected_spans_survive(text in prompt_text(), k in kind(), seed in any::<u64>()) {
        let first_space = text.find(' ').unwrap();
        let clean = CleanPrompt::with_protected(text.clone(), vec![(0, first_space)]).unwrap();
        let perturber = Perturber::new(PerturbationConfig::default()).unwrap();
        if let Ok(out) = perturber.perturb(&clean, Some(k), &mut SeededRng::new(seed)) {
            let (mut s, mut e) = (0usize, first_space);
            for edit in &out.edits {
                let end = edit.position + edit.before.len();
                prop_assert!(end <= s || edit.position >= e, "edit {:?} overlaps ({}, {})", edit, s, e);
                if end <= s {
                    let delta = edit.after.len() as isize - edit.before.len() as isize;
                    s = (s as isize + delta) as usize;
                    e = (e as isize + delta) as usize;
                }
            }
            prop_assert_eq!(&out.text[s..e], &text[..first_space]);
        }
    }

    #[test]
    fn decoding_radius_matches_scan(
        raw in prop::collection::btree_map(0usize..50, 0.0f64..=1.0, 1..12),
        a in 0.0f64..=1.0,
    ) {
        let points: Vec<(usize, f64)> = raw.into_iter().collect();
        let curve = AccCurve::new(points.clone()).unwrap();
        let mut oracle = None;
        for &(r, acc) in &points {
            if acc >= a {
                oracle = Some(r);
            }
        }
        prop_assert_eq!(decoding_radius(&curve, a), oracle);
    }

    #[test]
    fn degradation_buckets_are_ordered(clean in 0.01f64..=1.0, x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
        let r_hi = degradation_rate(clean, lo).unwrap();
        let r_lo = degradation_rate(clean, hi).unwrap();
        prop_assert!(r_lo <= r_hi);
        prop_assert!(rate_bucket(r_lo) <= rate_bucket(r_hi));
        prop_assert!(rate_bucket(r_hi) < 5);
    }

    #[test]
    fn vocab_round_trips_known_tokens(words in prop::collection::vec("[a-z]{1,6}", 1..20)) {
        let text = words.join(" ");
        let vocab = build_vocab(&[text.as_str()], 1).unwrap();
        prop_assert_eq!(vocab.decode(&vocab.encode(&text)), tokenize(&text).join(" "));
    }
}
