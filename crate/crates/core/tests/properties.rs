use proptest::prelude::*;

use mjc::effective::EffectiveProblem;
use mjc::hjb::{solve_effective_hjb, Extension, FracLaplacian, Grid1, SchemeConfig};
use mjc::model::{builtin_benchmark, ControlSet};
use mjc::sde::PolicyHandle;
use mjc::stable::cms_transform;
use mjc::stats::ks_two_sample;
use mjc::value::{estimate_cost, estimate_effective_cost};

fn shifted(shift: f64, bump: f64) -> EffectiveProblem {
    EffectiveProblem::custom(
        "shifted",
        1.5,
        1.0,
        1.0,
        ControlSet::Interval { lo: -1.0, hi: 1.0 },
        |x, v| -x + v,
        |x, v| (1.0 + x * x).sqrt() + 0.5 * v * v,
        move |x| x.tanh() + shift + bump * (-x * x).exp(),
    )
}

proptest! {
    #[test]
    fn clamp_lands_in_the_set(lo in -5.0..0.0f64, width in 0.0..5.0f64, v in -20.0..20.0f64) {
        let set = ControlSet::interval(lo, lo + width).unwrap();
        prop_assert!(set.contains(set.clamp(v)));
        let pts = ControlSet::finite(vec![lo, lo + width, 0.3]).unwrap();
        let c = pts.clamp(v);
        prop_assert!(pts.contains(c));
        for p in [lo, lo + width, 0.3] {
            prop_assert!((c - v).abs() <= (p - v).abs());
        }
    }

    #[test]
    fn cms_is_finite_and_odd(alpha in 1.01..1.99f64, u in -0.999..0.999f64, w in 1e-6..30.0f64) {
        let v = u * std::f64::consts::FRAC_PI_2;
        let a = cms_transform(alpha, v, w);
        let b = cms_transform(alpha, -v, w);
        prop_assert!(a.is_finite());
        prop_assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn stencil_matrix_is_a_generator(alpha in 1.05..1.95f64, h in 0.01..0.5f64, n in 3usize..40) {
        let lap = FracLaplacian::new(alpha, h).unwrap();
        let m = lap.matrix(n, Extension::Constant);
        for i in 0..n {
            let row: f64 = m.row(i).sum();
            prop_assert!(row.abs() <= 1e-9 * lap.lambda_h(), "row {} sums to {}", i, row);
            for k in 0..n {
                if k != i {
                    prop_assert!(m[[i, k]] >= 0.0);
                }
            }
            prop_assert!(-m[[i, i]] <= lap.lambda_h() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ks_is_a_bounded_symmetric_distance(a in prop::collection::vec(-10.0..10.0f64, 1..60),
                                          b in prop::collection::vec(-10.0..10.0f64, 1..60)) {
        let d = ks_two_sample(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_two_sample(&b, &a));
        prop_assert_eq!(ks_two_sample(&a, &a), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ordered_terminal_data_stay_ordered(shift in 0.0..0.5f64, bump in 0.0..1.0f64) {
        let grid = Grid1::new(-4.0, 4.0, 41).unwrap();
        let sch = SchemeConfig { lf_theta: Some(6.0), output_taus: vec![0.25, 0.5], ..Default::default() };
        let lower = solve_effective_hjb(&shifted(0.0, 0.0), &grid, &sch).unwrap();
        let upper = solve_effective_hjb(&shifted(shift, bump), &grid, &sch).unwrap();
        for (a, b) in lower.values.iter().zip(&upper.values) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!(x <= y, "{} > {}", x, y);
            }
        }
    }

    #[test]
    fn discount_contracts_the_sup_norm(lambda in 0.1..3.0f64, amp in 0.1..2.0f64, k in 0.2..3.0f64) {
        let effp = EffectiveProblem::custom(
            "free", 1.5, lambda, 1.0, ControlSet::Singleton { value: 0.0 },
            |_, _| 0.0, |_, _| 0.0, move |x| amp * (k * x).sin(),
        );
        let grid = Grid1::new(-5.0, 5.0, 51).unwrap();
        let u = solve_effective_hjb(&effp, &grid, &SchemeConfig { output_taus: vec![0.5], ..Default::default() }).unwrap();
        let g_sup = u.values[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (tau, row) in u.taus.iter().zip(&u.values) {
            let sup = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(sup <= (-lambda * tau).exp() * g_sup * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn costs_are_deterministic_given_seed(seed in any::<u64>(), v in -1.0..1.0f64) {
        let spec = builtin_benchmark("BM1").unwrap();
        let effp = EffectiveProblem::closed_form(&spec).unwrap();
        let pol = PolicyHandle::constant(v, &spec.control_set);
        let a = estimate_cost(&spec, 0.2, &pol, 0.3, -0.5, 0.2, 64, 0.01, seed).unwrap();
        let b = estimate_cost(&spec, 0.2, &pol, 0.3, -0.5, 0.2, 64, 0.01, seed).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        let c = estimate_effective_cost(&effp, &pol, 0.3, 0.2, 64, 0.01, seed).unwrap();
        let d = estimate_effective_cost(&effp, &pol, 0.3, 0.2, 64, 0.01, seed).unwrap();
        prop_assert_eq!(c.mean.to_bits(), d.mean.to_bits());
    }
}

#[test]
fn grid_spec_round_trips() {
    proptest!(|(lo in -10.0..0.0f64, w in 0.5..20.0f64, half in 1usize..200)| {
        let n = 2 * half + 1;
        let g = Grid1::new(lo, lo + w, n).unwrap();
        let back = Grid1::parse(&format!("{}:{}:{}", g.lo, g.hi, g.n)).unwrap();
        prop_assert_eq!(g, back);
        prop_assert!((g.x(g.n - 1) - g.hi).abs() <= 1e-12 * g.hi.abs().max(1.0));
        prop_assert!((g.center() - (g.lo + g.hi) / 2.0).abs() <= 1e-12 * w);
    });
}
