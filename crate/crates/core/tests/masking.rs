mod common;

#[test]
fn span_mask_invariants_over_many_calls() {
    let s = common::masking_trials(100_000, 11);
    assert_eq!(s.target_masked, 0);
    assert_eq!(s.run_too_long, 0);
    assert_eq!(s.identity_broken, 0);
    assert_eq!(s.framing_touched, 0);
}

#[test]
fn exactly_one_view_per_pair_is_masked() {
    let (pairs, bad) = common::batch_mask_violations(2000, 5);
    assert!(pairs > 4000);
    assert_eq!(bad, 0);
}
