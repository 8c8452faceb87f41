mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use scm_ident::ident::{
    closure_generate, closure_generate_with, closure_identifiable, equivalence_audit,
    min_tasks_for, uic_check, uic_violations, WorklistOrder, DEFAULT_MAX_FAMILY,
};
use scm_ident::topology::{FactorSet, ScmTopology};

fn family_as_sets(t: &ScmTopology, order: WorklistOrder) -> BTreeSet<BTreeSet<usize>> {
    closure_generate_with(t, order, DEFAULT_MAX_FAMILY)
        .unwrap()
        .sets()
        .iter()
        .map(|s| s.iter().collect())
        .collect()
}

#[test]
fn walkthrough_fixture() {
    let t = walkthrough();
    assert!(t.parent_latents(1).unwrap().contains(1));
    assert_eq!(t.child_tasks(0).unwrap(), FactorSet::singleton(0));
    let v = closure_identifiable(&t).unwrap();
    assert!(v.identifiable && uic_check(&t));
    let chain = v.per_latent[0].as_ref().unwrap();
    assert_eq!(chain.replay(&t), Some(FactorSet::singleton(0)));
    // {L1} arises as Pa(Y1) − Pa(Y2).
    let pa1 = t.parent_latents(0).unwrap();
    let pa2 = t.parent_latents(1).unwrap();
    assert_eq!(pa1.difference(pa2), FactorSet::singleton(0));
    assert!(chain.render(&t).iter().any(|l| l.contains("{L_1}")));
}

#[test]
fn collide_fixture() {
    let t = collide();
    assert_eq!(t.collision_pairs(), vec![(2, 3)]);
    let v = closure_identifiable(&t).unwrap();
    assert!(!v.identifiable);
    assert!(v.per_latent[2].is_none() && v.per_latent[3].is_none());
    assert_eq!(v.violating_pairs, vec![(2, 3)]);
    assert!(!uic_check(&t));
}

#[test]
fn exhaustive_distinct_columns_small() {
    // Collision pairs empty exactly when a direct comparison finds all
    // columns distinct, for every matrix with m ≤ 3, n ≤ 5.
    for m in 1..=3usize {
        for n in 1..=5usize {
            for bits in 0u64..(1 << (m * n)) {
                let rows: Vec<Vec<u8>> = (0..m)
                    .map(|i| (0..n).map(|j| ((bits >> (i * n + j)) & 1) as u8).collect())
                    .collect();
                let t = topology_from_rows(&rows);
                assert_eq!(t.collision_pairs().is_empty(), columns_distinct(&rows));
            }
        }
    }
}

#[test]
fn audit_consistency_small() {
    let r = equivalence_audit(2, 3).unwrap();
    assert!(r.mismatches.is_empty());
    assert_eq!(r.total_matrices, r.agreements);
    let expected: u64 = (1..=2)
        .flat_map(|m| (1..=3).map(move |n| 1u64 << (m * n)))
        .sum();
    assert_eq!(r.total_matrices, expected);
    let s22 = r
        .shapes
        .iter()
        .find(|s| s.num_tasks == 2 && s.num_latents == 2)
        .unwrap();
    assert_eq!(s22.matrices, 16);
    // Distinct ordered column pairs from {00, 01, 10, 11}: 4 · 3.
    assert_eq!(s22.identifiable, 12);
    let s12 = r
        .shapes
        .iter()
        .find(|s| s.num_tasks == 1 && s.num_latents == 2)
        .unwrap();
    assert_eq!(s12.identifiable, 2);
}

#[test]
fn min_tasks_matches_log2() {
    for n in 1..=9usize {
        let with_zero = min_tasks_for(n, true).unwrap();
        let without = min_tasks_for(n, false).unwrap();
        // Smallest m with 2^m ≥ n, and with 2^m − 1 ≥ n.
        let m0 = (0..).find(|&m| (1usize << m) >= n).unwrap().max(1);
        let m1 = (1..).find(|&m| (1usize << m) > n).unwrap();
        assert_eq!(with_zero.num_tasks, m0, "n={n}");
        assert_eq!(without.num_tasks, m1, "n={n}");
        assert!(uic_check(&with_zero.witness) && uic_check(&without.witness));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn deciders_agree_with_column_oracle(rows in arb_rows(6, 9)) {
        let t = topology_from_rows(&rows);
        let closure = closure_identifiable(&t).unwrap();
        let distinct = columns_distinct(&rows);
        prop_assert_eq!(closure.identifiable, distinct);
        prop_assert_eq!(uic_check(&t), distinct);
        prop_assert_eq!(closure.violating_pairs, uic_violations(&t));
    }

    #[test]
    fn colliding_matrices_rejected(rows in arb_rows_colliding(5, 8)) {
        let t = topology_from_rows(&rows);
        let distinct = columns_distinct(&rows);
        prop_assert_eq!(uic_check(&t), distinct);
        prop_assert_eq!(closure_identifiable(&t).unwrap().identifiable, distinct);
    }

    #[test]
    fn closure_matches_naive_fixpoint(rows in arb_rows(4, 7)) {
        let t = topology_from_rows(&rows);
        let fam = family_as_sets(&t, WorklistOrder::Fifo);
        prop_assert_eq!(&fam, &naive_closure(&rows));
        prop_assert!(fam.len() <= 1usize << t.num_latents());
    }

    #[test]
    fn worklist_order_invariance(rows in arb_rows(5, 8), seed in any::<u64>()) {
        let t = topology_from_rows(&rows);
        let fifo = family_as_sets(&t, WorklistOrder::Fifo);
        prop_assert_eq!(&fifo, &family_as_sets(&t, WorklistOrder::Lifo));
        prop_assert_eq!(&fifo, &family_as_sets(&t, WorklistOrder::Shuffled(seed)));
    }

    #[test]
    fn certificates_replay(rows in arb_rows(5, 8)) {
        let t = topology_from_rows(&rows);
        let family = closure_generate(&t).unwrap();
        for idx in 0..family.len() {
            let chain = family.chain(idx);
            prop_assert_eq!(chain.replay(&t), Some(family.sets()[idx]));
            prop_assert_eq!(chain.conclusion(), family.sets()[idx]);
        }
        // Tampering with a recorded set breaks replay.
        if let Some(idx) = (0..family.len()).find(|&i| family.chain(i).steps.len() > 1) {
            let mut chain = family.chain(idx);
            let last = chain.steps.len() - 1;
            chain.steps[last].set = chain.steps[last].set.union(FactorSet::full(t.num_latents()))
                .difference(chain.steps[last].set);
            if chain.steps[last].set != family.chain(idx).steps[last].set {
                prop_assert_eq!(chain.replay(&t), None);
            }
        }
    }

    #[test]
    fn permutation_invariance(
        rows in arb_rows(5, 7),
        col_keys in prop::collection::vec(any::<u32>(), 7),
        row_keys in prop::collection::vec(any::<u32>(), 5),
    ) {
        let (m, n) = (rows.len(), rows[0].len());
        let mut cperm: Vec<usize> = (0..n).collect();
        cperm.sort_by_key(|&j| (col_keys[j], j));
        let mut rperm: Vec<usize> = (0..m).collect();
        rperm.sort_by_key(|&i| (row_keys[i], i));
        let permuted: Vec<Vec<u8>> = rperm
            .iter()
            .map(|&i| cperm.iter().map(|&j| rows[i][j]).collect())
            .collect();
        let a = topology_from_rows(&rows);
        let b = topology_from_rows(&permuted);
        prop_assert_eq!(uic_check(&a), uic_check(&b));
        prop_assert_eq!(
            closure_identifiable(&a).unwrap().identifiable,
            closure_identifiable(&b).unwrap().identifiable
        );
        prop_assert_eq!(closure_generate(&a).unwrap().len(), closure_generate(&b).unwrap().len());
        prop_assert_eq!(a.collision_pairs().len(), b.collision_pairs().len());
    }

    #[test]
    fn parents_and_children_transpose(rows in arb_rows(6, 9)) {
        let t = topology_from_rows(&rows);
        for (i, row) in rows.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                prop_assert_eq!(
                    t.parent_latents(i).unwrap().contains(j),
                    t.child_tasks(j).unwrap().contains(i)
                );
                prop_assert_eq!(t.entry(i, j), a == 1);
            }
        }
    }

    #[test]
    fn parent_bound_violation_implies_rejection(rows in arb_rows(4, 9)) {
        let t = topology_from_rows(&rows);
        if t.parent_bound_diagnostic().iter().any(|r| r.violates) {
            prop_assert!(!uic_check(&t));
            prop_assert!(!t.collision_pairs().is_empty());
        }
        if t.num_latents() > 1 << t.num_tasks() {
            prop_assert!(!uic_check(&t));
        }
    }
}
