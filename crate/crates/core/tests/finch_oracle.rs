//! First-neighbor clustering against an explicit-adjacency, BFS reference.

mod common;

#[test]
fn matches_brute_force_reference_on_100_instances() {
    assert_eq!(common::checks::finch_against_reference(100, 2024), Ok(100));
}
