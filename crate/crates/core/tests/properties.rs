//! Randomized property tests over the utility family and the estimators.

use proptest::prelude::*;
use turnpike_core::montecarlo::{estimate, estimate_weighted};
use turnpike_core::utility::UtilitySpec;

fn arb_utility() -> impl Strategy<Value = UtilitySpec> {
    let power = (-6.0..-0.05_f64).prop_map(|p| UtilitySpec::power(p).unwrap());
    let log = Just(UtilitySpec::log());
    // exponent ranges are disjoint, so p1 < p2 holds by construction
    let pareto = ((-6.0..-1.2_f64), (-1.0..-0.05_f64), (0.05..0.95_f64)).prop_map(
        |(p1, p2, beta1)| {
            UtilitySpec::pareto(vec![beta1, 1.0 - beta1], vec![p1, p2]).unwrap()
        },
    );
    let linear = ((-6.0..-1.2_f64), (-1.0..-0.05_f64), (0.1..10.0_f64), (0.1..10.0_f64))
        .prop_map(|(p1, p2, w1, w2)| {
            UtilitySpec::linear_sharing_weights(vec![w1, w2], vec![p1, p2]).unwrap()
        });
    prop_oneof![power, log, pareto, linear]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The inverse marginal is strictly decreasing and positive.
    #[test]
    fn inverse_marginal_strictly_decreasing(
        u in arb_utility(),
        z1 in -8.0..8.0_f64,
        gap in 0.01..4.0_f64,
    ) {
        let za = z1.exp();
        let zb = (z1 + gap).exp();
        let ia = u.inverse_marginal(za).unwrap();
        let ib = u.inverse_marginal(zb).unwrap();
        prop_assert!(ia > 0.0 && ib > 0.0);
        prop_assert!(ia > ib, "{u:?}: I({za}) = {ia} <= I({zb}) = {ib}");
    }

    /// Marginal and inverse marginal cancel.
    #[test]
    fn marginal_round_trip(u in arb_utility(), lz in -8.0..8.0_f64) {
        let z = lz.exp();
        let x = u.inverse_marginal(z).unwrap();
        let back = u.marginal(x).unwrap();
        prop_assert!(
            (back - z).abs() <= 1e-8 * z,
            "{u:?}: U'(I({z})) = {back}"
        );
    }

    /// `z I'(z) = -ART(I(z))` links the weighted derivative to the
    /// Arrow-Pratt tolerance for every variant.
    #[test]
    fn weighted_derivative_is_negative_tolerance(u in arb_utility(), lz in -6.0..6.0_f64) {
        let z = lz.exp();
        let j = u.inverse_marginal_derivative_weighted(z).unwrap();
        let art = u.risk_tolerance(u.inverse_marginal(z).unwrap()).unwrap();
        prop_assert!(
            (j + art).abs() <= 1e-8 * (1.0 + art.abs()),
            "{u:?}: J = {j}, ART = {art}"
        );
    }

    /// Positive scaling of the utility shifts the inverse marginal's
    /// argument and nothing else.
    #[test]
    fn scaling_shifts_argument(u in arb_utility(), c in 0.05..20.0_f64, lz in -4.0..4.0_f64) {
        let z = lz.exp();
        let scaled = u.clone().scaled(c).unwrap();
        let a = scaled.inverse_marginal(z).unwrap();
        let b = u.inverse_marginal(z / c).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
    }

    /// Weighted estimation with equal weights is plain estimation, and
    /// the standard error never grows when samples are duplicated.
    #[test]
    fn estimator_consistency(samples in prop::collection::vec(-1e3..1e3_f64, 2..40)) {
        let plain = estimate(&samples).unwrap();
        let weights = vec![3.5; samples.len()];
        let weighted = estimate_weighted(&samples, &weights).unwrap();
        prop_assert!((plain.mean - weighted.mean).abs() <= 1e-9 * (1.0 + plain.mean.abs()));

        let mut doubled = samples.clone();
        doubled.extend_from_slice(&samples);
        let twice = estimate(&doubled).unwrap();
        prop_assert!(twice.se <= plain.se * (1.0 + 1e-12));
    }
}
