use pilotmatch::distance::DistanceMatrix;
use pilotmatch::matching::{brute_force_match, certify_optimal, full_match, full_match_flow, integer_costs, optimal_k_match};
use pilotmatch::Matching;
use proptest::prelude::*;

fn instance(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1..=max_rows, 1usize..=2).prop_flat_map(move |(r, k)| {
        let cols = (r * k)..=max_cols.max(r * k);
        cols.prop_flat_map(move |c| {
            (prop::collection::vec(prop::collection::vec(0u32..5000, c), r), Just(k))
        })
        .prop_map(|(rows, k)| (rows.into_iter().map(|row| row.into_iter().map(|v| f64::from(v) / 1000.0).collect()).collect(), k))
    })
}

fn scaled_total(dm: &DistanceMatrix, m: &Matching) -> i64 {
    let costs = integer_costs(dm).unwrap();
    let r = |u: usize| dm.rows.iter().position(|&x| x == u).unwrap();
    let c = |u: usize| dm.cols.iter().position(|&x| x == u).unwrap();
    m.sets
        .iter()
        .flat_map(|s| s.treated.iter().flat_map(move |&t| s.controls.iter().map(move |&u| (t, u))))
        .map(|(t, u)| costs[r(t) * dm.n_cols() + c(u)])
        .sum()
}

fn arms(dm: &DistanceMatrix) -> Vec<u8> {
    (0..dm.n_rows() + dm.n_cols()).map(|u| u8::from(u < dm.n_rows())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn k_match_is_optimal((rows, k) in instance(5, 10)) {
        let dm = DistanceMatrix::from_rows(&rows).unwrap();
        let fast = optimal_k_match(&dm, k).unwrap();
        let slow = brute_force_match(&dm, k).unwrap();
        fast.check(&arms(&dm)).unwrap();
        prop_assert_eq!(scaled_total(&dm, &fast), scaled_total(&dm, &slow));
        prop_assert!(certify_optimal(&dm, k, &fast).unwrap());
        prop_assert!(fast.sets.iter().all(|s| s.controls.len() == k));
    }

    #[test]
    fn full_match_covers_and_agrees_with_flow((rows, _k) in instance(4, 9), cap in 1usize..6) {
        let dm = DistanceMatrix::from_rows(&rows).unwrap();
        let hi = if cap == 5 { f64::INFINITY } else { cap as f64 };
        match (full_match(&dm, 1.0, hi), full_match_flow(&dm, 1.0, hi)) {
            (Ok(a), Ok(b)) => {
                a.check(&arms(&dm)).unwrap();
                prop_assert_eq!(a.units().len(), dm.n_rows() + dm.n_cols());
                for s in &a.sets {
                    let ratio = s.controls.len() as f64 / s.treated.len() as f64;
                    prop_assert!(ratio >= 1.0 && ratio <= hi);
                }
                prop_assert_eq!(scaled_total(&dm, &a), scaled_total(&dm, &b));
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "solvers disagree on feasibility: {:?} / {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn control_permutation_permutes_matches((rows, k) in instance(4, 8)) {
        let dm = DistanceMatrix::from_rows(&rows).unwrap();
        let perm: Vec<usize> = (0..dm.n_cols()).rev().collect();
        let a = optimal_k_match(&dm, k).unwrap();
        let b = optimal_k_match(&dm.permute_cols(&perm), k).unwrap();
        prop_assert_eq!(scaled_total(&dm, &a), scaled_total(&dm, &b));
    }
}
