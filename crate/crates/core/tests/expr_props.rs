mod common;

use nhk::expr::{equivalent, parse};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn expr_and_point() -> impl Strategy<Value = (nhk::expr::Expr, [f64; 2])> {
    (any::<u64>(), 1usize..=5, -1.0f64..1.0, -1.0f64..1.0)
        .prop_map(|(seed, depth, x, y)| (common::random_expr(&mut ChaCha8Rng::seed_from_u64(seed), depth), [x, y]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn derivative_matches_finite_difference((e, at) in expr_and_point()) {
        let defect = common::derivative_defect(&e, &at).unwrap();
        prop_assume!(defect.is_some());
        prop_assert!(defect.unwrap() <= 1e-6, "{e} at {at:?}: {defect:?}");
    }

    #[test]
    fn printing_is_a_parse_fixed_point((e, at) in expr_and_point()) {
        let printed = e.to_string();
        let back = parse(&printed).unwrap();
        prop_assert_eq!(back.to_string(), printed.clone());
        let (a, b) = (e.eval_at(&common::VARS, &at).unwrap(), back.eval_at(&common::VARS, &at).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{printed}: {a} vs {b}");
    }

    #[test]
    fn folding_preserves_value((e, at) in expr_and_point()) {
        let folded = e.fold();
        let (a, b) = (e.eval_at(&common::VARS, &at).unwrap(), folded.eval_at(&common::VARS, &at).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{e} -> {folded}");
    }

    #[test]
    fn sum_is_commutative_up_to_canonical_form(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = common::random_expr(&mut rng, 3);
        let b = common::random_expr(&mut rng, 3);
        prop_assert!(equivalent(&a.clone().add(b.clone()), &b.add(a)));
    }
}
