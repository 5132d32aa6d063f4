mod support;

use proptest::prelude::*;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn f1_matches_brute_force(p in arb_op_value(), g in arb_op_value()) {
        check_f1(p, g)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn grouping_is_ordered_partition(n in 0usize..200, g in 1usize..40) {
        check_grouping(n, g)?;
    }
}

#[test]
fn fifty_candidates_in_groups_of_seventeen() {
    assert_eq!(group_sizes(50, 17), [17, 17, 16]);
    assert_eq!(group_sizes(50, 5), [5; 10]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn annotation_geometry(layout in arb_layout(), letters in any::<bool>()) {
        check_annotation(layout, letters)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn answers_round_trip(rank in 0usize..80, action in arb_action(), numbers in any::<bool>()) {
        check_round_trip(rank, action, numbers)?;
    }
}

#[test]
fn messy_transcripts_parse_as_labeled() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/transcripts/messy.json");
    let (matched, total, miss) = messy_corpus(std::path::Path::new(path));
    assert_eq!(total, 30);
    assert_eq!(matched, total, "{miss:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn metrics_are_monotone(m in arb_matrix()) {
        check_monotone(m)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn attribute_matching_equals_brute_force(case in arb_attr_case()) {
        check_attribute_matching(case)?;
    }
}

#[test]
fn three_schedule_buttons_match_three_times() {
    assert_eq!(schedule_matches(), (3, 3));
}

#[tokio::test]
async fn three_schedule_buttons_trigger_disambiguation() {
    let (turns, picked) = schedule_disambiguation().await.unwrap();
    assert_eq!(turns, 3);
    assert_eq!(picked, "b");
}
