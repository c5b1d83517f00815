mod common;

use proptest::prelude::*;
use wic_contrast::analysis::isotropy_score;
use wic_contrast::numeric::Rng;

fn axis(i: usize, d: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = s;
    v
}

#[test]
fn worked_examples() {
    let sym = vec![axis(0, 2, 1.0), axis(0, 2, -1.0), axis(1, 2, 1.0), axis(1, 2, -1.0)];
    assert_eq!(isotropy_score(&sym).unwrap(), 0.0);
    let e = 1f64.exp();
    let v = vec![axis(0, 2, 1.0), axis(0, 2, 1.0), axis(1, 2, 1.0)];
    let is = isotropy_score(&v).unwrap();
    assert!((is - ((e + 2.0) / (2.0 * e + 1.0)).ln()).abs() < 1e-12);
    assert!((is + 0.311).abs() < 1e-3);
}

#[test]
fn closed_under_negation_in_higher_dimension() {
    let d = 5;
    let v: Vec<Vec<f64>> = (0..d).flat_map(|i| [axis(i, d, 2.0), axis(i, d, -2.0)]).collect();
    assert!(isotropy_score(&v).unwrap().abs() < 1e-12);
}

#[test]
fn never_positive_on_random_sets() {
    let mut rng = Rng::new(4);
    for _ in 0..1000 {
        let n = 2 + rng.below(30);
        let d = 1 + rng.below(8);
        let v = common::random_vectors(n, d, &mut rng);
        assert!(isotropy_score(&v).unwrap() <= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rotation_invariant(seed in any::<u64>(), n in 3usize..40, d in 2usize..6) {
        let mut rng = Rng::new(seed);
        let v = common::random_vectors(n, d, &mut rng);
        let r = common::random_rotation(d, &mut rng);
        let rotated: Vec<Vec<f64>> = v.iter().map(|x| common::rotate(&r, x)).collect();
        let (a, b) = (isotropy_score(&v).unwrap(), isotropy_score(&rotated).unwrap());
        prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
    }
}

#[test]
fn rank_zero_rejected() {
    assert!(isotropy_score(&vec![vec![0.0; 4]; 3]).is_err());
}
