mod common;

use common::{check_retrieval, retrieval_case, RetrievalCase};
use groundchat::facts::{FactRecord, FactsCollection};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn filter_top_k_matches_brute_force_cosine(seed in any::<u64>()) {
        let case = retrieval_case(seed);
        prop_assert_eq!(check_retrieval(&case), Ok(()));
    }

    #[test]
    fn filtering_keeps_a_subset_in_bounds(seed in any::<u64>()) {
        let case = retrieval_case(seed);
        let collection = FactsCollection::index(case.records.clone());
        let candidates: Vec<_> = case.candidates.iter().map(|&i| &collection.facts()[i]).collect();
        let top = collection.filter_top_k(&case.input, &candidates, case.k);
        prop_assert_eq!(top.len(), case.k.min(candidates.len()));
        let mut ids: Vec<usize> = top.iter().map(|f| f.id).collect();
        prop_assert!(ids.iter().all(|i| case.candidates.contains(i)));
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), top.len());
    }
}

#[test]
fn oracle_sees_exact_match_first() {
    let case = RetrievalCase {
        records: ["pizza oven hot", "open late", "pizza dough fresh daily"]
            .iter()
            .map(|t| FactRecord {
                entity: "joes".into(),
                text: t.to_string(),
            })
            .collect(),
        input: vec!["open".into(), "late".into()],
        candidates: vec![0, 1, 2],
        k: 1,
    };
    assert_eq!(check_retrieval(&case), Ok(()));
    let collection = FactsCollection::index(case.records.clone());
    let all: Vec<_> = collection.facts().iter().collect();
    assert_eq!(collection.filter_top_k(&case.input, &all, 1)[0].id, 1);
}
