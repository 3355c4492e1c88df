use cyclecap_core::metrics::{
    aggregate, bleu, brevity_penalty, cosine_similarity, effective_reference_length,
    modified_ngram_precision, tokenize, BleuParams,
};
use cyclecap_core::providers::sim::SimWorld;
use cyclecap_core::store::cache_key;
use cyclecap_core::{Embedding, Embedding32};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-6))
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "cat", "on", "the", "mat", "dog"]),
        0..8,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn cosine_is_bounded_and_self_similar((a, b) in (1usize..64).prop_flat_map(|d| (vector(d), vector(d)))) {
        let (ea, eb) = (Embedding::new(a.clone()).unwrap(), Embedding::new(b).unwrap());
        let c = cosine_similarity(&ea, &eb).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((cosine_similarity(&ea, &ea).unwrap() - 1.0).abs() < 1e-12);
        let negated = Embedding::new(a.iter().map(|x| -x).collect()).unwrap();
        prop_assert!((cosine_similarity(&ea, &negated).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn f32_cosine_tracks_f64(a in vector(16), b in vector(16)) {
        let c64 = cosine_similarity(&Embedding::new(a.clone()).unwrap(), &Embedding::new(b.clone()).unwrap()).unwrap();
        let c32 = cosine_similarity(
            &Embedding32::new(a.iter().map(|&x| x as f32).collect()).unwrap(),
            &Embedding32::new(b.iter().map(|&x| x as f32).collect()).unwrap(),
        ).unwrap();
        prop_assert!((c64 - c32 as f64).abs() < 1e-4);
    }

    #[test]
    fn bleu_lies_in_unit_interval(c in sentence(), refs in prop::collection::vec(sentence(), 1..4)) {
        let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
        let score = bleu::<f64>(&c, &refs, &BleuParams::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
    }

    #[test]
    fn identical_reference_gives_full_score(c in sentence().prop_filter("non-empty", |s| !s.is_empty())) {
        let score = bleu::<f64>(&c, &[&c], &BleuParams::default()).unwrap();
        prop_assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_precision_never_exceeds_one(c in sentence(), refs in prop::collection::vec(sentence(), 1..4), n in 1usize..5) {
        let refs: Vec<_> = refs.iter().map(|r| tokenize(r)).collect();
        let p = modified_ngram_precision(&tokenize(&c), &refs, n).unwrap();
        prop_assert!(p.matched <= p.total);
    }

    #[test]
    fn brevity_penalty_is_in_unit_interval(c in 1usize..50, r in 0usize..50) {
        let bp = brevity_penalty::<f64>(c, r);
        prop_assert!(bp > 0.0 && bp <= 1.0);
        prop_assert_eq!(bp == 1.0, c >= r);
    }

    #[test]
    fn effective_length_is_closest_then_shortest(c in 0usize..10, lens in prop::collection::vec(0usize..10, 1..5)) {
        let refs: Vec<_> = lens.iter().map(|&l| tokenize(&vec!["x"; l].join(" "))).collect();
        let r = effective_reference_length(c, &refs).unwrap();
        let best = lens.iter().map(|l| l.abs_diff(c)).min().unwrap();
        prop_assert_eq!(r.abs_diff(c), best);
        prop_assert!(lens.iter().all(|&l| l.abs_diff(c) > best || l >= r));
    }

    #[test]
    fn aggregate_mean_is_between_extremes(xs in prop::collection::vec(-1.0f64..1.0, 1..100)) {
        let a = aggregate(&xs);
        let (lo, hi) = (a.min.unwrap(), a.max.unwrap());
        prop_assert!(lo - 1e-12 <= a.mean.unwrap() && a.mean.unwrap() <= hi + 1e-12);
        prop_assert!(a.std.unwrap() >= 0.0);
    }

    #[test]
    fn cache_key_separates_fields(p in "[a-z]{1,8}", op in "[a-z]{1,8}", input in prop::collection::vec(any::<u8>(), 0..32)) {
        let k = cache_key(&p, &op, &input);
        prop_assert_eq!(k.as_str().len(), 64);
        prop_assert_eq!(&k, &cache_key(&p, &op, &input));
        prop_assert_ne!(&k, &cache_key(&format!("{p}x"), &op, &input));
        prop_assert_ne!(&k, &cache_key(&p, &format!("{op}x"), &input));
        // Moving a byte between provider and op must change the key.
        prop_assert_ne!(&k, &cache_key(&format!("{p}{}", &op[..1]), &op[1..], &input));
    }

    #[test]
    fn sim_caption_codec_is_within_one_quantum(seed in any::<u64>(), k in 0u64..1000, bits in 8u32..=24) {
        let world = SimWorld::new(seed, 24, 0.0, 0.0, bits).unwrap();
        let u = world.latent(k);
        let back = world.decode(&world.encode(&u)).unwrap();
        let quantum = 2.0 / ((1u64 << bits) - 1) as f64;
        prop_assert!(u.iter().zip(&back).all(|(a, b)| (a - b).abs() <= quantum / 2.0 + 1e-15));
    }
}
