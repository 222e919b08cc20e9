use difficulty_core::lca::AssignmentRow;
use difficulty_core::profiling::{cluster_accuracies, deviation_scores, select_extremes};
use difficulty_core::{ClassAssignment, DeviationScore, Error, InteractionRecord, OptionKey};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Fixture {
    k: usize,
    classes: Vec<usize>,
    records: Vec<InteractionRecord>,
}

fn fixture() -> impl Strategy<Value = Fixture> {
    (1usize..5, 2usize..25, 1usize..8).prop_flat_map(|(k, ns, nq)| {
        (
            prop::collection::vec(0..k, ns),
            prop::collection::vec((0..ns, 0..nq, any::<bool>()), 0..300),
        )
            .prop_map(move |(classes, raw)| Fixture {
                k,
                classes,
                records: raw
                    .into_iter()
                    .map(|(s, q, ok)| InteractionRecord {
                        student_id: format!("s{s:03}"),
                        question_id: format!("q{q:02}"),
                        selected_option: if ok { OptionKey::A } else { OptionKey::B },
                        is_correct: ok,
                    })
                    .collect(),
            })
    })
}

fn assignment(f: &Fixture) -> ClassAssignment {
    ClassAssignment::from_rows(
        f.classes
            .iter()
            .enumerate()
            .map(|(s, &c)| AssignmentRow {
                student_id: format!("s{s:03}"),
                class: c + 1,
                posterior: (0..f.k).map(|j| (j == c) as u8 as f64).collect(),
            })
            .collect(),
    )
    .unwrap()
}

/// Accuracies by counting, then each cluster minus the unweighted cluster mean.
fn brute_force(f: &Fixture, min_support: u32) -> Vec<(String, usize, f64)> {
    let mut qids: Vec<String> = f.records.iter().map(|r| r.question_id.clone()).collect();
    qids.sort();
    qids.dedup();
    let mut out = Vec::new();
    for q in &qids {
        let mut acc = Vec::new();
        for c in 0..f.k {
            let mut n = 0u32;
            let mut y = 0u32;
            for r in &f.records {
                let s: usize = r.student_id[1..].parse().unwrap();
                if &r.question_id == q && f.classes[s] == c {
                    n += 1;
                    y += r.is_correct as u32;
                }
            }
            acc.push((n >= min_support).then(|| y as f64 / n as f64));
        }
        if acc.iter().all(Option::is_some) {
            let a: Vec<f64> = acc.into_iter().flatten().collect();
            let m = a.iter().sum::<f64>() / f.k as f64;
            for (c, v) in a.iter().enumerate() {
                out.push((q.clone(), c, v - m));
            }
        }
    }
    out
}

fn scores(f: &Fixture, min_support: u32) -> Vec<DeviationScore> {
    deviation_scores(&cluster_accuracies(&f.records, &assignment(f), min_support).unwrap())
}

proptest! {
    #[test]
    fn deviations_match_counting(f in fixture(), min_support in 1u32..4) {
        let got = scores(&f, min_support);
        let want = brute_force(&f, min_support);
        prop_assert_eq!(got.len(), want.len());
        for (g, (q, c, d)) in got.iter().zip(&want) {
            prop_assert_eq!(&g.question_id, q);
            prop_assert_eq!(g.cluster, *c);
            prop_assert!((g.delta - d).abs() <= 1e-12);
        }
    }

    #[test]
    fn deviations_sum_to_zero_per_question(f in fixture()) {
        let s = scores(&f, 1);
        for chunk in s.chunks(f.k) {
            prop_assert!(chunk.iter().all(|d| d.question_id == chunk[0].question_id));
            prop_assert!(chunk.iter().map(|d| d.delta).sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn deviations_ignore_record_order_and_replication(f in fixture()) {
        let base = scores(&f, 1);
        let mut shuffled = Fixture { k: f.k, classes: f.classes.clone(), records: f.records.clone() };
        shuffled.records.reverse();
        prop_assert_eq!(&scores(&shuffled, 1), &base);
        // Tripling every record keeps the accuracies, hence the deltas.
        let tripled = Fixture {
            k: f.k,
            classes: f.classes.clone(),
            records: f.records.iter().flat_map(|r| [r.clone(), r.clone(), r.clone()]).collect(),
        };
        let t = scores(&tripled, 1);
        prop_assert_eq!(t.len(), base.len());
        for (a, b) in t.iter().zip(&base) {
            prop_assert!((a.delta - b.delta).abs() <= 1e-12);
        }
    }

    #[test]
    fn extremes_match_a_full_sort(
        deltas in prop::collection::vec((0usize..3, -10i32..10), 0..60),
        per_side in 1usize..4,
    ) {
        let mut s: Vec<DeviationScore> = deltas
            .iter()
            .enumerate()
            .map(|(i, &(c, d))| DeviationScore {
                question_id: format!("q{:03}", i),
                cluster: c,
                accuracy: 0.5,
                delta: d as f64 / 10.0,
                support: 10,
            })
            .collect();
        let result = select_extremes(&s, 3, per_side);
        let enough = (0..3).all(|c| s.iter().filter(|d| d.cluster == c).count() >= 2 * per_side);
        prop_assert_eq!(result.is_ok(), enough);
        if let Ok(ext) = result {
            for e in &ext {
                let mut own: Vec<&DeviationScore> = s.iter().filter(|d| d.cluster == e.cluster).collect();
                own.sort_by(|a, b| b.delta.partial_cmp(&a.delta).unwrap().then(a.question_id.cmp(&b.question_id)));
                let top: Vec<&str> = own.iter().take(per_side).map(|d| d.question_id.as_str()).collect();
                prop_assert_eq!(e.strengths.iter().map(|d| d.question_id.as_str()).collect::<Vec<_>>(), top);
                own.sort_by(|a, b| a.delta.partial_cmp(&b.delta).unwrap().then(a.question_id.cmp(&b.question_id)));
                let bottom: Vec<&str> = own.iter().take(per_side).map(|d| d.question_id.as_str()).collect();
                prop_assert_eq!(e.weaknesses.iter().map(|d| d.question_id.as_str()).collect::<Vec<_>>(), bottom);
            }
            // Input order does not matter.
            s.reverse();
            prop_assert_eq!(select_extremes(&s, 3, per_side).unwrap(), ext);
        }
    }
}

#[test]
fn short_clusters_report_the_shortfall() {
    let s: Vec<DeviationScore> = (0..7)
        .map(|i| DeviationScore {
            question_id: format!("q{i}"),
            cluster: 0,
            accuracy: 0.5,
            delta: i as f64,
            support: 5,
        })
        .collect();
    match select_extremes(&s, 1, 5) {
        Err(Error::InsufficientQuestions {
            cluster,
            available,
            required,
            shortfall,
        }) => assert_eq!((cluster, available, required, shortfall), (1, 7, 10, 3)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn worked_example() {
    // Accuracies 0.8, 0.5, 0.2 on one question; mean 0.5.
    let f = Fixture {
        k: 3,
        classes: vec![0, 1, 2],
        records: [(0, 8), (1, 5), (2, 2)]
            .iter()
            .flat_map(|&(s, right)| {
                (0..10).map(move |i| InteractionRecord {
                    student_id: format!("s{s:03}"),
                    question_id: "q00".into(),
                    selected_option: OptionKey::A,
                    is_correct: i < right,
                })
            })
            .collect(),
    };
    let s = scores(&f, 5);
    let d: Vec<f64> = s.iter().map(|x| x.delta).collect();
    assert!((d[0] - 0.3).abs() < 1e-12 && d[1].abs() < 1e-12 && (d[2] + 0.3).abs() < 1e-12);
    assert!(s.iter().all(|x| x.support == 10));
    assert!(scores(&f, 11).is_empty());
}
