use std::collections::BTreeMap;

use difficulty_core::irt::irt_probability;
use difficulty_core::lca::AssignmentRow;
use difficulty_core::metrics::adjusted_rand_index;
use difficulty_core::profiling::{cluster_accuracies, deviation_scores};
use difficulty_core::quadrature::NormalQuadrature;
use difficulty_core::synthetic::{
    generate_irt_world, generate_lca_world, generate_persona_world, profiles_for_assignment,
};
use difficulty_core::{assign_classes, fit_lca, select_k, sweep_k, ClassAssignment, LcaConfig, SyntheticWorldConfig};

fn base() -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        n_students: 500,
        n_items: 60,
        seed: 17,
        ..SyntheticWorldConfig::default()
    }
}

#[test]
fn irt_marginals_match_their_expectation() {
    let w = generate_irt_world(&base()).unwrap();
    let quad = NormalQuadrature::new(41);
    let mut per_item: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for r in &w.records {
        let e = per_item.entry(&r.question_id).or_default();
        e.0 += r.is_correct as u8 as f64;
        e.1 += 1.0;
    }
    let mut total_expected = 0.0;
    let mut total_var = 0.0;
    let mut total_observed = 0.0;
    for it in &w.truth.items {
        let p = quad.expect(|t| irt_probability(t, it.alpha, it.beta));
        let (y, n) = per_item[it.question_id.as_str()];
        // Binomial sd plus nothing else: abilities are fresh draws per student.
        let sd = (p * (1.0 - p) / n).sqrt();
        assert!((y / n - p).abs() <= 4.5 * sd, "{}: {} vs {p}", it.question_id, y / n);
        total_expected += p * n;
        total_var += p * (1.0 - p) * n;
        total_observed += y;
    }
    assert!((total_observed - total_expected).abs() <= 3.0 * total_var.sqrt());
    // Observation rate reflects the missingness.
    let rate = w.records.len() as f64 / (500.0 * 60.0);
    assert!((rate - 0.7).abs() < 3.0 * (0.21f64 / 30000.0).sqrt());
}

#[test]
fn zero_discrimination_is_a_coin_flip() {
    let mut c = base();
    c.irt.alpha_range = (0.0, 0.0);
    let w = generate_irt_world(&c).unwrap();
    let n = w.records.len() as f64;
    let rate = w.records.iter().filter(|r| r.is_correct).count() as f64 / n;
    assert!((rate - 0.5).abs() <= 3.0 * (0.25 / n).sqrt());
}

#[test]
fn very_easy_items_are_always_solved() {
    let mut c = base();
    c.irt.alpha_range = (2.0, 2.5);
    c.irt.beta_range = (-10.0, -10.0);
    let w = generate_irt_world(&c).unwrap();
    assert!(w.records.iter().all(|r| r.is_correct));
    // Selected options stay consistent with correctness.
    let key: BTreeMap<&str, _> = w
        .items
        .iter()
        .map(|q| (q.question_id.as_str(), q.correct_option))
        .collect();
    assert!(w
        .records
        .iter()
        .all(|r| r.selected_option == key[r.question_id.as_str()]));
}

#[test]
fn opposite_topic_strengths_give_opposite_deviations() {
    let mut c = base();
    c.persona.class_ability_means = vec![0.0, 0.0];
    c.persona.topic_bonus = 1.0;
    c.irt.alpha_range = (1.0, 2.0);
    c.irt.beta_range = (-1.0, 1.0);
    let w = generate_persona_world(&c).unwrap();
    let assignment = ClassAssignment::from_rows(
        w.truth
            .students
            .iter()
            .map(|s| AssignmentRow {
                student_id: s.student_id.clone(),
                class: s.class,
                posterior: (1..=2).map(|k| (k == s.class) as u8 as f64).collect(),
            })
            .collect(),
    )
    .unwrap();
    let scores = deviation_scores(&cluster_accuracies(&w.records, &assignment, 5).unwrap());
    let topic_of: BTreeMap<&str, usize> = w
        .truth
        .items
        .iter()
        .map(|i| (i.question_id.as_str(), i.topic.index()))
        .collect();
    for class in &w.truth.classes {
        let cluster = class.class - 1;
        let strong = class.topic_shift.iter().position(|&s| s > 0.0).unwrap();
        let weak = class.topic_shift.iter().position(|&s| s < 0.0).unwrap();
        let mean_delta = |topic: usize| {
            let d: Vec<f64> = scores
                .iter()
                .filter(|s| s.cluster == cluster && topic_of[s.question_id.as_str()] == topic)
                .map(|s| s.delta)
                .collect();
            d.iter().sum::<f64>() / d.len() as f64
        };
        assert!(mean_delta(strong) > 0.05, "class {} strong topic", class.class);
        assert!(mean_delta(weak) < -0.05, "class {} weak topic", class.class);
    }
}

#[test]
fn single_class_world_selects_one_class() {
    let mut c = base();
    c.n_students = 400;
    c.n_items = 30;
    c.lca.k_true = 1;
    let w = generate_lca_world(&c).unwrap();
    assert!(w.classes.iter().all(|&k| k == 0));
    let (curve, _) = sweep_k(&w.matrix, 1..=3, &LcaConfig::default()).unwrap();
    assert_eq!(select_k(&curve).unwrap(), 1);
}

#[test]
fn persona_classes_are_ordered_and_profiles_mix_by_membership() {
    let w = generate_persona_world(&base()).unwrap();
    let mean_rho = |c: usize| {
        let p = &w.truth.class_profiles[&c];
        p.values().sum::<f64>() / p.len() as f64
    };
    for c in 1..w.truth.classes.len() {
        assert!(mean_rho(c) <= mean_rho(c + 1));
    }
    // Putting every student in one cluster yields the weighted class mix.
    let rows = w
        .truth
        .students
        .iter()
        .map(|s| AssignmentRow {
            student_id: s.student_id.clone(),
            class: 1,
            posterior: vec![1.0],
        })
        .collect();
    let merged = profiles_for_assignment(&w.truth, &ClassAssignment::from_rows(rows).unwrap());
    let mut share = BTreeMap::new();
    for s in &w.truth.students {
        *share.entry(s.class).or_insert(0.0) += 1.0 / w.truth.students.len() as f64;
    }
    for (q, v) in &merged[&1] {
        let want: f64 = share.iter().map(|(c, f)| f * w.truth.class_profiles[c][q]).sum();
        assert!((v - want).abs() < 1e-12);
    }
}

#[test]
fn full_separation_is_recovered_exactly() {
    let mut c = base();
    c.n_students = 300;
    c.n_items = 24;
    c.lca.separation = 1.0;
    let w = generate_lca_world(&c).unwrap();
    let model = fit_lca(&w.matrix, 3, &LcaConfig::default()).unwrap();
    let a = assign_classes(&model, &w.matrix).unwrap();
    assert_eq!(adjusted_rand_index(&a.classes, &w.classes), 1.0);
}

#[test]
fn one_class_model_reproduces_marginal_accuracies() {
    let mut c = base();
    c.lca.k_true = 1;
    let w = generate_lca_world(&c).unwrap();
    let m = fit_lca(&w.matrix, 1, &LcaConfig::default()).unwrap();
    for i in 0..w.matrix.n_items() {
        let obs: Vec<bool> = (0..w.matrix.n_students()).filter_map(|s| w.matrix.get(s, i)).collect();
        let acc = obs.iter().filter(|&&y| y).count() as f64 / obs.len() as f64;
        assert!((m.rho[i][0] - acc).abs() < 1e-6, "item {i}: {} vs {acc}", m.rho[i][0]);
    }
}
