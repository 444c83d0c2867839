use pricelab::analysis::{bit_budget, gbm_truncation_radius, moment_explosion_raw, riccati_blowup_time, BitModel, ExplosionCase};
use pricelab::charinv::CharFunction;
use pricelab::core::CirParams;
use pricelab::dists::{chi2_tail_bound, normal_pdf, sf_chi2, ChiSquareSpec};
use pricelab::levy::levy_char;
use pricelab::models::BkCharFn;
use pricelab::qsim::{build_qsample, DiscreteQsample, QaeDistribution, QsampleMode};
use pricelab::rng::RngStream;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn streams_replay(seed in any::<u64>(), id in any::<u64>()) {
        let (mut a, mut b) = (RngStream::new(seed, id), RngStream::new(seed, id));
        for _ in 0..256 {
            prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
        let (mut c, mut d) = (RngStream::new(seed, id).child(3), RngStream::new(seed, id).child(3));
        prop_assert_eq!(c.normal().to_bits(), d.normal().to_bits());
    }

    #[test]
    fn qae_law_sums_to_one(a in 0.0f64..=1.0, m in 1u32..=11) {
        let total: f64 = QaeDistribution::new(a, m).unwrap().probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn chi2_bound_dominates(r in 1.0f64..20.0, b in 0.0f64..120.0) {
        let exact = sf_chi2(&ChiSquareSpec::central(r), b).unwrap();
        prop_assert!(chi2_tail_bound(r, b) >= exact);
    }

    #[test]
    fn levy_conditional_char_is_even_and_bounded(x in -20.0f64..20.0, r2 in 0.0f64..30.0) {
        let (p, q) = (levy_char(x, r2), levy_char(-x, r2));
        prop_assert!((p - q).abs() <= 1e-14 * (1.0 + p.abs()));
        prop_assert!(p.abs() <= 1.0 + 1e-12);
        prop_assert!((levy_char(0.0, r2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn int_cir_char_is_hermitian(
        kappa in 0.2f64..4.0,
        theta in 0.05f64..1.0,
        sigma in 0.1f64..1.0,
        vs in 0.01f64..2.0,
        ve in 0.01f64..2.0,
        a in 0.01f64..5.0,
    ) {
        prop_assume!(4.0 * kappa * theta / (sigma * sigma) > 1.0);
        let p = CirParams::new(kappa, theta, sigma, vs, 1.0).unwrap();
        let phi = BkCharFn::new(&p, vs, ve);
        let (u, w) = (phi.eval(a), phi.eval(-a));
        prop_assert!((u - w.conj()).norm() <= 1e-10 * (1.0 + u.norm()), "{u} {w}");
        prop_assert!(u.norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn product_qsample_factors(bits_a in 2u32..6, bits_b in 2u32..6, half in 1.0f64..5.0) {
        let qa = build_qsample(&normal_pdf, -half, half, bits_a, QsampleMode::LeftEndpoint).unwrap();
        let qb = build_qsample(&|x: f64| (-x).exp(), 0.0, half, bits_b, QsampleMode::LeftEndpoint).unwrap();
        let (pa, pb) = (qa.probabilities(), qb.probabilities());
        let q = DiscreteQsample::product(vec![qa, qb]).unwrap();
        for j in 0..q.len() {
            let ix = q.index(j);
            prop_assert!((q.probability(j) - pa[ix[0]] * pb[ix[1]]).abs() < 1e-12);
        }
    }

    #[test]
    fn budgets_monotone_in_eps(sigma in 0.05f64..1.0, t in 1usize..6, d in 1usize..4, e in 1e-6f64..0.5) {
        let r1 = gbm_truncation_radius(1.0, t, d, sigma, e).unwrap();
        let r2 = gbm_truncation_radius(1.0, t, d, sigma, e / 2.0).unwrap();
        prop_assert!(r2 >= r1);
        let b1 = bit_budget(BitModel::GbmRel { sigma }, 1.0, t, d, e, e).unwrap();
        let b2 = bit_budget(BitModel::GbmRel { sigma }, 1.0, t, d, e / 2.0, e).unwrap();
        prop_assert!(b2.bits_per_primitive >= b1.bits_per_primitive);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn explosion_time_matches_riccati(kappa in 0.05f64..3.0, sigma in 0.1f64..1.5, rho in -0.95f64..0.95, omega in 1.05f64..6.0) {
        let e = moment_explosion_raw(kappa, sigma, rho, omega).unwrap();
        prop_assume!(e.t_star.is_finite() && e.t_star < 50.0);
        prop_assert!(matches!(e.case, ExplosionCase::Complex | ExplosionCase::RealRoots));
        let oracle = riccati_blowup_time(e.a, e.b, e.c, 200.0);
        prop_assert!(((e.t_star - oracle) / e.t_star).abs() < 1e-3, "{e:?} vs {oracle}");
    }
}
