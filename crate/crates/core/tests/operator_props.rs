use num_rational::BigRational;
use num_traits::One;
use proptest::prelude::*;
use rankone_core::correlation::NaiveCounter;
use rankone_core::operator::{
    build_family, classify_limit, joining_matrix, ratio, stochastic_step, Basis, FamilyParams,
    OperatorExpression,
};
use rankone_core::{catalog, Tower};

fn expression() -> impl Strategy<Value = OperatorExpression> {
    (prop::collection::vec((-4i64..=4, 1i64..=9), 0..5), 0i64..=5).prop_map(|(terms, theta)| {
        let theta = if terms.is_empty() { theta.max(1) } else { theta };
        let total: i64 = terms.iter().map(|t| t.1).sum::<i64>() + theta;
        OperatorExpression::from_terms(
            terms.into_iter().map(|(i, w)| (i, ratio(w, total))),
            ratio(theta, total),
        )
    })
}

fn binomial_kernel(a: &BigRational, m: u32, sign: i64) -> OperatorExpression {
    // (a I + (1 - a) T^sign)^m term by term.
    let b = BigRational::one() - a;
    let mut choose = BigRational::one();
    let mut terms = Vec::new();
    for i in 0..=m {
        let c = &choose * num_traits::pow(b.clone(), i as usize) * num_traits::pow(a.clone(), (m - i) as usize);
        terms.push((sign * i as i64, c));
        choose *= ratio((m - i) as i64, (i + 1) as i64);
    }
    OperatorExpression::from_terms(terms, ratio(0, 1))
}

proptest! {
    #[test]
    fn convolution_commutes_and_associates(a in expression(), b in expression(), c in expression()) {
        prop_assert_eq!(a.convolve(&b), b.convolve(&a));
        prop_assert_eq!(a.convolve(&b).convolve(&c), a.convolve(&b.convolve(&c)));
        prop_assert_eq!(a.convolve(&b).mass(), a.mass() * b.mass());
        prop_assert_eq!(a.adjoint().adjoint(), a.clone());
        prop_assert_eq!(a.convolve(&b).adjoint(), a.adjoint().convolve(&b.adjoint()));
    }

    #[test]
    fn stochastic_is_product_of_binomials(m in 0u32..=8, n in 0u32..=8, p in 1i64..=9) {
        let a = ratio(p, 10);
        let family = build_family("stochastic", &FamilyParams { m, n, a: a.clone(), ..FamilyParams::default() }).unwrap();
        prop_assert_eq!(family, binomial_kernel(&a, m, -1).convolve(&binomial_kernel(&a, n, 1)));
    }
}

#[test]
fn half_collapse_up_to_eight() {
    let half = ratio(1, 2);
    let mean = OperatorExpression::from_terms([(0, half.clone()), (1, half.clone())], ratio(0, 1));
    for total in 0..=8u32 {
        for m in 0..=total {
            let n = total - m;
            let lhs = stochastic_step(&half).pow(m).convolve(&stochastic_step(&half).adjoint().pow(n));
            let rhs = mean.pow(total).shift(-(m as i64));
            assert_eq!(lhs, rhs, "m={m} n={n}");
        }
    }
}

fn basis() -> Basis {
    let s = catalog("modified-chacon").unwrap().realize(7).unwrap();
    let t = Tower::new(&s, 2, 7).unwrap();
    Basis::build(&t, 8, &NaiveCounter, "modified-chacon").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joining_is_linear(e1 in expression(), e2 in expression(), w in 0i64..=10) {
        let b = basis();
        let alpha = ratio(w, 10);
        let mixed = joining_matrix(&e1.mix(&alpha, &e2), &b).unwrap().matrix;
        let mut sum = joining_matrix(&e1, &b).unwrap().matrix.scale(w as f64 / 10.0);
        sum.axpy(1.0 - w as f64 / 10.0, &joining_matrix(&e2, &b).unwrap().matrix);
        prop_assert!(mixed.max_abs_diff(&sum) < 1e-15);
    }

    #[test]
    fn classifier_recovers_members(e in expression()) {
        let b = basis();
        let target = joining_matrix(&e, &b).unwrap().matrix;
        let c = classify_limit(&target, &b, 8, 0.03).unwrap();
        prop_assert!(c.residual_max <= 1e-9, "residual {}", c.residual_max);
        let mass: f64 = c.coefficients.iter().map(|p| p.1).sum::<f64>() + c.theta;
        prop_assert!((mass - 1.0).abs() <= 1e-9);
        prop_assert!(c.coefficients.iter().all(|p| p.1 >= 0.0) && c.theta >= 0.0);
        prop_assert_eq!(c.clone(), classify_limit(&target, &b, 8, 0.03).unwrap());
    }
}
