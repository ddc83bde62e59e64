use proptest::prelude::*;
use tagtopo_llm::parse::{extract_reason, LlmJudgment};
use tagtopo_llm::prompt::PromptKind;
use tagtopo_llm::{extract_ranked_labels, extract_ratio};

fn citeseer() -> Vec<String> {
    ["Agents", "Artificial Intelligence", "Database", "Information Retrieval", "Machine Learning", "Human-Computer Interaction"]
        .map(String::from)
        .to_vec()
}

/// (reply, expected ratio or None for a parse failure)
const RATIO_CORPUS: &[(&str, Option<f64>)] = &[
    ("Related ratio = 0.8, Reason: both study GNNs", Some(0.8)),
    ("related ratio=0.35", Some(0.35)),
    ("RELATED RATIO :  0.2 Reason: different areas", Some(0.2)),
    ("After reading both abstracts carefully, I would say the Related ratio is 0.65, Reason: shared methods.", Some(0.65)),
    ("Related ratio = 70%, Reason: overlap in datasets", Some(0.7)),
    ("Related ratio = 1.03, Reason: essentially the same paper", Some(1.0)),
    ("Paper A (2019) and Paper B share 3 authors; related ratio = 0.9, Reason: same group", Some(0.9)),
    ("On a scale from 0 to 1 I estimate 0.4 since they overlap only in evaluation.", Some(0.0)),
    ("They are somewhat related, roughly .3 overall.", Some(0.3)),
    ("Both build on GPT-3.5 and cite 12 works in common; similarity 0.55.", Some(0.55)),
    ("I cannot determine similarity.", None),
    ("Related ratio = ***, Reason: ***", None),
    ("Related ratio = 7, Reason: very related", None),
    ("", None),
];

#[test]
fn ratio_corpus_parses_exactly() {
    for (raw, want) in RATIO_CORPUS {
        match (extract_ratio(raw), want) {
            (Ok(got), Some(w)) => assert_eq!(got, *w, "{raw:?}"),
            (Err(e), None) => assert!(e.is_parse_failure(), "{raw:?}: {e}"),
            (got, want) => panic!("{raw:?}: got {got:?}, want {want:?}"),
        }
    }
}

#[test]
fn reason_follows_marker() {
    assert_eq!(extract_reason("Related ratio = 0.8, Reason: both study GNNs"), "both study GNNs");
    assert_eq!(extract_reason("related ratio=0.35"), "");
}

/// (reply, expected ranking or None for a parse failure)
fn ranking_corpus() -> Vec<(&'static str, Option<Vec<usize>>)> {
    vec![
        ("A, C. A is present because the paper studies autonomous agents.", Some(vec![0, 2])),
        ("Agents, Machine Learning", Some(vec![0, 4])),
        ("(E) Machine Learning, (B) Artificial Intelligence\nE: the paper trains a classifier.", Some(vec![4, 1])),
        ("Answer: d, a. Retrieval is central; agents appear briefly.", Some(vec![3, 0])),
        ("machine learning, (D), Agents", Some(vec![4, 3, 0])),
        ("Info, Data. Prefixes of the full names.", Some(vec![3, 2])),
        ("E, E, B", Some(vec![4, 1])),
        ("The paper is mostly about Information Retrieval with some Database work.", Some(vec![3, 2])),
        ("\"Human-Computer Interaction\", Agents", Some(vec![5, 0])),
        ("none of these", None),
        ("I'm sorry, I can't classify this paper.", None),
        ("Z, Q", None),
    ]
}

#[test]
fn ranking_corpus_parses_exactly() {
    let cats = citeseer();
    for (raw, want) in ranking_corpus() {
        match (extract_ranked_labels(raw, &cats), want) {
            (Ok(got), Some(w)) => assert_eq!(got, w, "{raw:?}"),
            (Err(e), None) => assert!(e.is_parse_failure(), "{raw:?}: {e}"),
            (got, want) => panic!("{raw:?}: got {got:?}, want {want:?}"),
        }
    }
}

#[test]
fn comma_inside_quoted_category_stays_one_item() {
    let cats = vec!["Theory, Formal".to_string(), "Systems".to_string(), "Theory".to_string()];
    assert_eq!(extract_ranked_labels("\"Theory, Formal\", Systems", &cats).unwrap(), vec![0, 1]);
    assert_eq!(extract_ranked_labels("Theory, Systems", &cats).unwrap(), vec![2, 1]);
}

#[test]
fn judgment_populates_exactly_one_field() {
    let s = LlmJudgment::parse(PromptKind::Similarity, "Related ratio = 0.4, Reason: partial", &[]).unwrap();
    assert_eq!((s.ratio, s.ranked_categories.is_none()), (Some(0.4), true));
    let r = LlmJudgment::parse(PromptKind::PseudoLabel, "C, A. C because of the query model.", &citeseer()).unwrap();
    assert!(r.ratio.is_none());
    assert_eq!(r.pseudo_label(), Some(2));
    assert_eq!(r.reason, "C because of the query model.");
}

#[test]
fn ratio_grid_round_trips_exactly() {
    for k in 0..=10 {
        let r = k as f64 / 10.0;
        assert_eq!(extract_ratio(&format!("Related ratio = {r}")).unwrap(), r);
        assert_eq!(extract_ratio(&format!("Related ratio = {r:.1}, Reason: x")).unwrap(), r);
    }
}

proptest! {
    #[test]
    fn parsed_ratio_is_always_in_unit_interval(s in ".{0,80}") {
        if let Ok(r) = extract_ratio(&s) {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn rankings_are_nonempty_duplicate_free_and_in_range(s in "[A-Fa-z ,.()]{0,40}") {
        let cats = citeseer();
        if let Ok(r) = extract_ranked_labels(&s, &cats) {
            prop_assert!(!r.is_empty());
            let mut sorted = r.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), r.len());
            prop_assert!(r.iter().all(|&i| i < cats.len()));
        }
    }
}
