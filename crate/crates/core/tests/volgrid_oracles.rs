mod support;

fn assert_clean(f: support::Failures) {
    assert!(f.is_empty(), "{}", f.join("\n"));
}

#[test]
fn dilation_matches_flood_oracle() {
    assert_clean(support::check_dilation(50));
}

#[test]
fn gaussian_impulse_matches_dense_oracle() {
    assert_clean(support::check_gaussian());
}

#[test]
fn svol_round_trips() {
    assert_clean(support::check_svol_round_trip(100));
}
