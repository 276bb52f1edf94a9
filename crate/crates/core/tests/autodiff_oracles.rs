mod support;

fn assert_clean(f: support::Failures) {
    assert!(f.is_empty(), "{}", f.join("\n"));
}

#[test]
fn layers_match_naive_oracles() {
    assert_clean(support::check_naive_oracles());
}

#[test]
fn every_layer_passes_gradcheck() {
    assert_clean(support::check_layer_gradients());
}

#[test]
fn random_composites_pass_gradcheck() {
    assert_clean(support::check_composite_gradients(5));
}
