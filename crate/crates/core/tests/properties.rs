use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pege::diagnostics::estimate_orlicz_norm;
use pege::estimator::{init_stats, truncate, update_stats, TruncationMode, TruncationSpec};
use pege::hjb::HjbOptions;
use pege::model::{
    entropy, h_star, softmax_into, CostSpec, EntropyCost, LinearCoefficient, ParamTheta, QuadraticCost, TerminalCost,
};
use pege::pege::{cycle_of, greedy_policy, is_exploration_slot, schedule_m, Schedule};
use pege::policy::Policy;
use pege::riccati::solve_riccati;
use pege::sde::{simulate_episode, NoiseStream, TimeGrid};

fn schedule() -> impl Strategy<Value = Schedule> {
    prop_oneof![
        (0.1f64..2.0).prop_map(|r| Schedule::PowerFloor { r }),
        Just(Schedule::Doubling),
    ]
}

fn simplex(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, p).prop_filter_map("degenerate", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| w.iter().map(|v| v / s).collect())
    })
}

fn samples(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn check_lipschitz(pol: &Policy, xs: &[(f64, f64)], t: f64) -> Result<(), TestCaseError> {
    let l = pol.lipschitz_budget();
    for &(x, y) in xs {
        let ax = pol.act(t, &DVector::from_element(1, x));
        let ay = pol.act(t, &DVector::from_element(1, y));
        prop_assert!(
            (ax - ay).norm() <= l * (x - y).abs() + 1e-9,
            "L = {l}, x = {x}, y = {y}"
        );
    }
    Ok(())
}

proptest! {
    #[test]
    fn cycle_index_inverts_cumulative(s in schedule(), k in 1usize..12) {
        let c = s.cumulative(k);
        prop_assert_eq!(cycle_of(&s, c).unwrap(), k);
        prop_assert_eq!(cycle_of(&s, c + 1).unwrap(), k + 1);
        prop_assert!(schedule_m(&s, k).unwrap() >= 1);
        prop_assert!(is_exploration_slot(&s, s.cumulative(k - 1) + 1).unwrap());
        if schedule_m(&s, k).unwrap() >= 1 {
            prop_assert!(!is_exploration_slot(&s, c).unwrap());
        }
    }

    #[test]
    fn fenchel_young(z in prop::collection::vec(-20.0f64..20.0, 3), a in simplex(3)) {
        let za: f64 = z.iter().zip(&a).map(|(x, y)| x * y).sum();
        prop_assert!(h_star(&z) + entropy(&a) >= za - 1e-12);
        let mut sm = vec![0.0; 3];
        softmax_into(&z, &mut sm);
        prop_assert!((sm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let zs: f64 = z.iter().zip(&sm).map(|(x, y)| x * y).sum();
        prop_assert!((h_star(&z) + entropy(&sm) - zs).abs() < 1e-9);
    }

    #[test]
    fn update_order_does_not_matter(seed in 0u64..1000, a in -1.0f64..1.0, b in 0.2f64..2.0) {
        let theta = ParamTheta::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap();
        let grid = TimeGrid::new(0.5, 50).unwrap();
        let pols = [Policy::constant(DVector::from_element(1, 1.0)), Policy::constant(DVector::from_element(1, -0.5))];
        let trajs: Vec<_> = pols
            .iter()
            .enumerate()
            .map(|(i, p)| simulate_episode(&theta, p, &grid, &DVector::from_element(1, 0.3), Some(&mut NoiseStream::new(seed, i as u64))).unwrap())
            .collect();
        let st0 = init_stats(&DMatrix::zeros(1, 2), &DMatrix::identity(2, 2)).unwrap();
        let fwd = update_stats(&update_stats(&st0, &trajs[0]).unwrap(), &trajs[1]).unwrap();
        let rev = update_stats(&update_stats(&st0, &trajs[1]).unwrap(), &trajs[0]).unwrap();
        prop_assert!((fwd.precision() - rev.precision()).amax() < 1e-9);
        prop_assert!((fwd.accumulator() - rev.accumulator()).amax() < 1e-9);
    }

    #[test]
    fn truncation_lands_in_box(v in prop::collection::vec(-10.0f64..10.0, 3)) {
        let k = TruncationSpec::new(
            DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, -2.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 0.0]),
            TruncationMode::Clamp,
        ).unwrap();
        let th = DMatrix::from_row_slice(1, 3, &v);
        let t = truncate(&k, &th, None);
        prop_assert!(k.contains(&t));
        if k.contains(&th) {
            prop_assert_eq!(t, th);
        }
    }

    #[test]
    fn orlicz_homogeneous_and_subadditive(x in samples(200), y in samples(200), c in 0.1f64..10.0, q in 1u32..=2) {
        let kx = estimate_orlicz_norm(&x, q).unwrap().k_hat;
        let ky = estimate_orlicz_norm(&y, q).unwrap().k_hat;
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let kcx = estimate_orlicz_norm(&cx, q).unwrap().k_hat;
        prop_assert!((kcx - c * kx).abs() <= 1e-8 * c * kx.max(1e-12));
        let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        prop_assert!(estimate_orlicz_norm(&s, q).unwrap().k_hat <= (kx + ky) * (1.0 + 1e-9));
    }

    #[test]
    fn orlicz_monotone(x in samples(200), q in 1u32..=2) {
        let big: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
        let kx = estimate_orlicz_norm(&x, q).unwrap().k_hat;
        prop_assert!(estimate_orlicz_norm(&big, q).unwrap().k_hat >= kx * (1.0 - 1e-9));
    }

    #[test]
    fn riccati_solution_symmetric_psd(
        a in prop::collection::vec(-1.0f64..1.0, 4),
        b in prop::collection::vec(-1.0f64..1.0, 2),
        q in 0.0f64..2.0,
    ) {
        let theta = ParamTheta::new(DMatrix::from_row_slice(2, 2, &a), DMatrix::from_row_slice(2, 1, &b)).unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(2, 2) * q, DMatrix::identity(1, 1), DMatrix::identity(2, 2)).unwrap();
        let sol = solve_riccati(&cost, &theta, &TimeGrid::new(1.0, 100).unwrap()).unwrap();
        for p in sol.p_path() {
            prop_assert!((p - p.transpose()).amax() < 1e-12);
            prop_assert!(p.clone().symmetric_eigen().eigenvalues.min() >= -1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn greedy_policies_respect_lipschitz_budget(
        a in -0.5f64..0.5,
        b1 in 0.5f64..1.5,
        b2 in -1.5f64..-0.5,
        pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 10),
        t in 0.0f64..0.99,
    ) {
        let theta = ParamTheta::new(DMatrix::from_element(1, 1, a), DMatrix::from_row_slice(1, 2, &[b1, b2])).unwrap();
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let hjb = HjbOptions { half_width: 3.0, n_x: 61, n_t: None };

        let lq = CostSpec::SmoothQuadratic(
            QuadraticCost::new(DMatrix::identity(1, 1), DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap(),
        );
        check_lipschitz(&greedy_policy(&theta, &lq, &grid, &hjb).unwrap(), &pts, t)?;

        let ent = CostSpec::EntropyRegularized(EntropyCost {
            fbar0: LinearCoefficient::Affine { c: DVector::from_vec(vec![0.0, 0.2]), k: DMatrix::from_row_slice(2, 1, &[0.5, -0.5]) },
            terminal: TerminalCost::Quadratic(DMatrix::identity(1, 1)),
        });
        check_lipschitz(&greedy_policy(&theta, &ent, &grid, &hjb).unwrap(), &pts, t)?;
    }
}
