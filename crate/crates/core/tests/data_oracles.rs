use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use difficulty_core::data::{question_hash_unit, write_items, write_records};
use difficulty_core::synthetic::synthetic_question;
use difficulty_core::{
    filter_dense_core, ingest, partition, AssignmentRule, Error, InteractionRecord, OptionKey, PartitionConfig, Topic,
};
use proptest::prelude::*;

fn rec(s: usize, q: usize, correct: bool) -> InteractionRecord {
    InteractionRecord {
        student_id: format!("s{s}"),
        question_id: format!("q{q}"),
        selected_option: if correct { OptionKey::A } else { OptionKey::B },
        is_correct: correct,
    }
}

/// Largest student/question subsets whose induced records satisfy both
/// thresholds, found by enumerating every pair of subsets.
fn brute_force_core(records: &[InteractionRecord], min_q: usize, min_s: usize) -> BTreeSet<(String, String)> {
    let students: Vec<&str> = records
        .iter()
        .map(|r| r.student_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let questions: Vec<&str> = records
        .iter()
        .map(|r| r.question_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut best: Option<(usize, BTreeSet<(String, String)>)> = None;
    for smask in 0u32..(1 << students.len()) {
        for qmask in 0u32..(1 << questions.len()) {
            let s_in = |s: &str| {
                students
                    .iter()
                    .position(|x| *x == s)
                    .is_some_and(|i| smask >> i & 1 == 1)
            };
            let q_in = |q: &str| {
                questions
                    .iter()
                    .position(|x| *x == q)
                    .is_some_and(|i| qmask >> i & 1 == 1)
            };
            let induced: Vec<&InteractionRecord> = records
                .iter()
                .filter(|r| s_in(&r.student_id) && q_in(&r.question_id))
                .collect();
            let mut per_s: BTreeMap<&str, usize> = BTreeMap::new();
            let mut per_q: BTreeMap<&str, usize> = BTreeMap::new();
            for r in &induced {
                *per_s.entry(&r.student_id).or_default() += 1;
                *per_q.entry(&r.question_id).or_default() += 1;
            }
            if per_s.values().all(|&n| n >= min_s) && per_q.values().all(|&n| n >= min_q) {
                let cells: BTreeSet<(String, String)> = induced
                    .iter()
                    .map(|r| (r.student_id.clone(), r.question_id.clone()))
                    .collect();
                if best.as_ref().is_none_or(|(n, _)| induced.len() > *n) {
                    best = Some((induced.len(), cells));
                }
            }
        }
    }
    best.map(|(_, c)| c).unwrap_or_default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dense_core_is_the_maximal_feasible_subset(
        cells in prop::collection::btree_set((0usize..4, 0usize..4), 0..16),
        min_q in 1usize..4,
        min_s in 1usize..4,
    ) {
        let records: Vec<InteractionRecord> = cells.iter().map(|&(s, q)| rec(s, q, (s + q) % 2 == 0)).collect();
        let expected = brute_force_core(&records, min_q, min_s);
        match filter_dense_core(&records, min_q, min_s) {
            Ok(core) => {
                let got: BTreeSet<(String, String)> =
                    core.iter().map(|r| (r.student_id.clone(), r.question_id.clone())).collect();
                prop_assert_eq!(got, expected);
                // Order of surviving records is preserved.
                let positions: Vec<usize> = core.iter().map(|c| records.iter().position(|r| r == c).unwrap()).collect();
                prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
            }
            Err(Error::EmptyCore { .. }) => prop_assert!(expected.is_empty()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn hash_split_keeps_sides_disjoint(
        cells in prop::collection::btree_set((0usize..12, 0usize..12), 40..144),
        seed in any::<u64>(),
    ) {
        let records: Vec<InteractionRecord> = cells.iter().map(|&(s, q)| rec(s, q, s > q)).collect();
        let cfg = PartitionConfig {
            min_responses_per_question: 2,
            min_attempts_per_student: 1,
            estimation_min_responses: 1,
            rule: AssignmentRule::HashSplit { seed, profiling_fraction: 0.5 },
        };
        if let Ok(p) = partition(&records, &cfg) {
            prop_assert!(p.profiling_questions.is_disjoint(&p.estimation_questions));
            for q in &p.profiling_questions {
                prop_assert!(question_hash_unit(seed, q) < 0.5);
            }
            for q in &p.estimation_questions {
                prop_assert!(question_hash_unit(seed, q) >= 0.5);
            }
        }
    }
}

#[test]
fn profiling_first_takes_the_dense_core() {
    // Four dense questions answered by everyone; two sparse ones.
    let mut records = Vec::new();
    for s in 0..6 {
        for q in 0..4 {
            records.push(rec(s, q, s % 2 == 0));
        }
    }
    for s in 0..3 {
        records.push(rec(s, 4, true));
        records.push(rec(s, 5, false));
    }
    let cfg = PartitionConfig {
        min_responses_per_question: 5,
        min_attempts_per_student: 3,
        estimation_min_responses: 3,
        rule: AssignmentRule::ProfilingFirst,
    };
    let p = partition(&records, &cfg).unwrap();
    let names = |v: &[usize]| v.iter().map(|q| format!("q{q}")).collect::<BTreeSet<_>>();
    assert_eq!(p.profiling_questions, names(&[0, 1, 2, 3]));
    assert_eq!(p.estimation_questions, names(&[4, 5]));
    assert_eq!(p.profiling_students.len(), 6);
    assert_eq!(p.profiling_records(&records).len(), 24);
    assert_eq!(p.estimation_records(&records).len(), 6);

    let strict = PartitionConfig {
        estimation_min_responses: 4,
        ..cfg
    };
    assert!(matches!(
        partition(&records, &strict),
        Err(Error::EmptyPartition("estimation"))
    ));
}

#[test]
fn ingest_reports_offending_lines() {
    let dir = tempfile::tempdir().unwrap();
    let items = dir.path().join("items.jsonl");
    let records = dir.path().join("interactions.jsonl");
    let mut bank = vec![
        synthetic_question(0, Topic::Number, OptionKey::A),
        synthetic_question(1, Topic::Algebra, OptionKey::C),
    ];
    let mut pic = synthetic_question(2, Topic::GeometryAndMeasure, OptionKey::B);
    pic.image_only = true;
    bank.push(pic);
    write_items(&items, &bank).unwrap();

    let good = |q: &str, opt: OptionKey, ok: bool| InteractionRecord {
        student_id: "s1".into(),
        question_id: q.into(),
        selected_option: opt,
        is_correct: ok,
    };
    write_records(
        &records,
        &[
            good("q0000", OptionKey::A, true),
            good("q0002", OptionKey::B, true),
            good("q0001", OptionKey::A, false),
        ],
    )
    .unwrap();
    let ds = ingest(&records, &items).unwrap();
    assert_eq!(ds.records.len(), 2);
    assert_eq!(ds.excluded_items, vec!["q0002".to_string()]);
    assert_eq!(ds.dropped_records, 1);

    // Correctness that contradicts the key, on the third line.
    write_records(
        &records,
        &[
            good("q0000", OptionKey::A, true),
            good("q0001", OptionKey::C, true),
            good("q0001", OptionKey::C, false),
        ],
    )
    .unwrap();
    match ingest(&records, &items) {
        Err(Error::CorrectnessMismatch { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected mismatch, got {other:?}"),
    }

    write_records(
        &records,
        &[good("q0000", OptionKey::A, true), good("q9999", OptionKey::A, true)],
    )
    .unwrap();
    match ingest(&records, &items) {
        Err(Error::UnknownQuestion { line, question_id, .. }) => {
            assert_eq!((line, question_id.as_str()), (2, "q9999"));
        }
        other => panic!("expected unknown question, got {other:?}"),
    }

    fs::write(&records, "{\"student_id\":\"s1\"}\n").unwrap();
    let err = ingest(&records, &items).unwrap_err();
    assert!(matches!(err, Error::Schema { line: 1, .. }));
    assert!(err.to_string().contains("interactions.jsonl:1:"));
}
