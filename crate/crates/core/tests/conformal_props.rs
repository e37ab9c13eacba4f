use fedgraph_core::conformal::{
    federated_quantile, score_aps, score_raps, QuantileMethod, ScoreSet, TDigestSketch, DEFAULT_COMPRESSION,
};
use fedgraph_core::federation::{clip_to_norm, fedavg_aggregate};
use fedgraph_core::ParamVector;
use proptest::prelude::*;

fn clients() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..40), 1..6)
}

fn simplex() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, 2..8).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn rank_of(sorted: &[f64], v: f64) -> f64 {
    sorted.partition_point(|&s| s <= v) as f64 / sorted.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_quantile_is_the_sorted_order_statistic(scores in clients(), alpha in 0.01f64..0.6) {
        let k = scores.len();
        let mut all = scores.concat();
        all.sort_by(f64::total_cmp);
        let pos = ((1.0 - alpha) * (all.len() + k) as f64 - 1e-9).ceil() as usize;
        let want = if pos > all.len() { f64::INFINITY } else { all[pos - 1] };
        let got = federated_quantile(&ScoreSet::from_client_scores(scores).unwrap(), alpha, QuantileMethod::Exact).unwrap();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn every_method_is_monotone_in_alpha(scores in clients(), a in 0.01f64..0.5, b in 0.01f64..0.5) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let set = ScoreSet::from_client_scores(scores).unwrap();
        for m in [QuantileMethod::Exact, QuantileMethod::Averaging, QuantileMethod::TDigest] {
            prop_assert!(federated_quantile(&set, hi, m).unwrap() <= federated_quantile(&set, lo, m).unwrap());
        }
    }

    #[test]
    fn tdigest_merge_order_does_not_matter(
        parts in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 50..400), 3..4),
        q in 0.02f64..0.98,
    ) {
        let s: Vec<TDigestSketch> = parts.iter().map(|p| TDigestSketch::from_values(p, DEFAULT_COMPRESSION).unwrap()).collect();
        let left = s[0].merge(&s[1]).merge(&s[2]);
        let right = s[0].merge(&s[1].merge(&s[2]));
        let swapped = s[2].merge(&s[0]).merge(&s[1]);
        let mut all = parts.concat();
        all.sort_by(f64::total_cmp);
        let r = rank_of(&all, left.quantile(q).unwrap());
        prop_assert!((rank_of(&all, right.quantile(q).unwrap()) - r).abs() <= 1e-3 + 1.0 / all.len() as f64);
        prop_assert!((rank_of(&all, swapped.quantile(q).unwrap()) - r).abs() <= 1e-3 + 1.0 / all.len() as f64);
        prop_assert_eq!(left.total_weight(), all.len() as u64);
    }

    #[test]
    fn aps_lies_between_own_mass_and_one(p in simplex(), u in 0.0f64..1.0) {
        for y in 0..p.len() {
            let det = score_aps(&p, y, false, 0.0).unwrap();
            prop_assert!(det >= p[y] - 1e-12 && det <= 1.0 + 1e-9);
            let rand = score_aps(&p, y, true, u).unwrap();
            prop_assert!(rand <= det + 1e-12 && rand >= det - p[y] - 1e-12);
            // no penalty → RAPS reduces to APS
            prop_assert!((score_raps(&p, y, 0.0, 1, 1.0).unwrap() - det).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_never_exceeds_the_bound(
        g in prop::collection::vec(-1e6f64..1e6, 1..64),
        c in 0.01f64..10.0,
    ) {
        let mut g = g;
        let before: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        clip_to_norm(&mut g, c);
        let after: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(after <= c);
        if before <= c {
            prop_assert_eq!(after, before);
        }
    }

    #[test]
    fn fedavg_of_identical_models_is_that_model(
        v in prop::collection::vec(-5.0f64..5.0, 1..30),
        w in prop::collection::vec(0.1f64..100.0, 1..6),
    ) {
        let mut p = ParamVector::new();
        p.push("w", &[v.len()], &v).unwrap();
        let out = fedavg_aggregate(&vec![p.clone(); w.len()], &w).unwrap();
        prop_assert_eq!(out.as_slice(), p.as_slice());
    }
}

#[test]
fn tdigest_rank_error_on_ten_thousand_points() {
    use rand::{Rng, SeedableRng};
    let mut r = fedgraph_core::rng::Rng::seed_from_u64(17);
    let v: Vec<f64> = (0..10_000).map(|_| r.random::<f64>().powi(4)).collect();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let t = TDigestSketch::from_values(&v, DEFAULT_COMPRESSION).unwrap();
    for i in 1..200 {
        let q = i as f64 / 200.0;
        let err = (rank_of(&sorted, t.quantile(q).unwrap()) - q).abs();
        assert!(err <= 0.01, "q={q}: rank error {err}");
    }
}
