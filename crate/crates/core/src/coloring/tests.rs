use proptest::prelude::*;

use super::*;
use crate::envsim::{generate_dataset, EnvKind, EnvSpec};
use crate::graph::labels_feasible;
use crate::oracle::{brute_force_best, OracleError};
use crate::otdist::{distance_matrix, intra_cluster_score, OTParams, SpatialMap};
use crate::partition::{partition_equal_up_to_relabel, Assignment};
use crate::trace::{assign_roles, ActionLabel, Step};

fn uniform(n: usize, d: f64) -> DistanceMatrix {
    let values = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { d }).collect();
    DistanceMatrix::from_dense((0..n).collect(), values).unwrap()
}

fn frozen(pairs: &[(ObsId, usize)]) -> Assignment {
    pairs.iter().copied().collect()
}

/// Pick observations 0,2,4 reach places 1,3,5 by three different actions.
fn fan_out() -> Trace {
    assign_roles(&[
        Step::new(0, ActionLabel::pick(0), 1),
        Step::new(1, ActionLabel::place(0), 2),
        Step::new(2, ActionLabel::pick(1), 3),
        Step::new(3, ActionLabel::place(0), 4),
        Step::new(4, ActionLabel::pick(2), 5),
    ])
    .unwrap()
}

#[test]
fn different_actions_from_one_cluster_conflict() {
    let trace = fan_out();
    let ctx = ColoringContext::new(&trace, &uniform(6, 1.0), None).unwrap();
    let cg = build_conflict_graph(&ctx, Role::Place, &frozen(&[(0, 0), (2, 0), (4, 0)]), 3).unwrap();
    assert_eq!(cg.edges(), vec![(1, 3), (1, 5), (3, 5)]);
    assert!(cg.must_links().is_empty());
}

#[test]
fn same_action_from_one_cluster_links() {
    let trace = assign_roles(&[
        Step::new(0, ActionLabel::pick(0), 1),
        Step::new(1, ActionLabel::place(0), 2),
        Step::new(2, ActionLabel::pick(0), 3),
    ])
    .unwrap();
    let ctx = ColoringContext::new(&trace, &uniform(4, 1.0), None).unwrap();
    let cg = build_conflict_graph(&ctx, Role::Place, &frozen(&[(0, 0), (2, 0)]), 3).unwrap();
    assert_eq!(cg.num_edges(), 0);
    assert_eq!(cg.must_links(), &[(1, 3)]);
}

#[test]
fn unrelated_predecessors_do_not_conflict() {
    let trace = twin_steps(ActionLabel::pick(1));
    let ctx = ColoringContext::new(&trace, &uniform(4, 1.0), None).unwrap();
    let cg = build_conflict_graph(&ctx, Role::Place, &frozen(&[(0, 0), (2, 1)]), 3).unwrap();
    assert_eq!(cg.num_edges(), 0);
}

#[test]
fn conflict_graph_rejects_wrong_frozen_role() {
    let trace = fan_out();
    let ctx = ColoringContext::new(&trace, &uniform(6, 1.0), None).unwrap();
    let err = build_conflict_graph(&ctx, Role::Place, &frozen(&[(1, 0)]), 3).unwrap_err();
    assert!(matches!(err, ColoringError::InvalidInput(_)));
}

#[test]
fn triangle_needs_three_colors() {
    let trace = fan_out();
    let ctx = ColoringContext::new(&trace, &uniform(6, 1.0), None).unwrap();
    let picks = frozen(&[(0, 0), (2, 0), (4, 0)]);
    let cg = build_conflict_graph(&ctx, Role::Place, &picks, 3).unwrap();

    let mut two = ColoringState::new(&ctx, 1, 2, 3);
    for (&o, &c) in &picks {
        two.freeze(o, c);
    }
    assert_eq!(dsatur_color(&mut two, &cg, 1000, None), Err(SearchFailure::Infeasible));

    let mut three = ColoringState::new(&ctx, 1, 3, 3);
    for (&o, &c) in &picks {
        three.freeze(o, c);
    }
    let colors = dsatur_color(&mut three, &cg, 1000, None).unwrap();
    for (u, v) in cg.edges() {
        assert_ne!(colors[&u], colors[&v]);
    }
    let mut labels = vec![0; 6];
    labels
        .iter_mut()
        .enumerate()
        .for_each(|(o, l)| *l = colors.get(&o).copied().unwrap_or(0));
    assert!(labels_feasible(&trace, &labels, Some(3)));
}

#[test]
fn search_respects_node_budget() {
    let trace = fan_out();
    let ctx = ColoringContext::new(&trace, &uniform(6, 1.0), None).unwrap();
    let picks = frozen(&[(0, 0), (2, 0), (4, 0)]);
    let cg = build_conflict_graph(&ctx, Role::Place, &picks, 3).unwrap();
    let mut state = ColoringState::new(&ctx, 1, 3, 3);
    for (&o, &c) in &picks {
        state.freeze(o, c);
    }
    assert_eq!(
        dsatur_color(&mut state, &cg, 1, None),
        Err(SearchFailure::BudgetExceeded)
    );
}

/// Two disjoint pick steps with the same action.
fn twin_steps(second: ActionLabel) -> Trace {
    assign_roles(&[Step::new(0, ActionLabel::pick(0), 1), Step::new(2, second, 3)]).unwrap()
}

#[test]
fn check_feasible_accepts_and_rejects() {
    let trace = twin_steps(ActionLabel::pick(0));
    let ctx = ColoringContext::new(&trace, &uniform(4, 1.0), None).unwrap();
    let mut state = ColoringState::new(&ctx, 1, 2, 3);
    state.freeze(0, 0);
    state.freeze(2, 0);
    state.try_assign(1, 0).unwrap();
    let cg = build_conflict_graph(&ctx, Role::Place, &frozen(&[(0, 0), (2, 0)]), 3).unwrap();
    assert_eq!(check_feasible(&mut state, &cg, 3, 0), Ok(()));
    assert_eq!(
        check_feasible(&mut state, &cg, 3, 1),
        Err(Infeasibility::ExactlyOneViolation)
    );
    // A check leaves no trace in the state.
    assert_eq!(state.color_of(3), None);
}

#[test]
fn check_feasible_reports_cap_and_pair_uniqueness() {
    let trace = twin_steps(ActionLabel::pick(1));
    let ctx = ColoringContext::new(&trace, &uniform(4, 1.0), None).unwrap();

    let mut capped = ColoringState::new(&ctx, 2, 1, 1);
    capped.freeze(1, 0);
    capped.freeze(3, 0);
    capped.try_assign(0, 0).unwrap();
    let cg = build_conflict_graph(&ctx, Role::Pick, &frozen(&[(1, 0), (3, 0)]), 1).unwrap();
    assert!(cg.has_edge(0, 2));
    assert_eq!(capped.try_assign(2, 0), Err(Infeasibility::CapViolation));
    assert_eq!(
        check_feasible(&mut capped, &cg, 2, 0),
        Err(Infeasibility::NeighborConflict)
    );
    assert_eq!(check_feasible(&mut capped, &cg, 2, 1), Ok(()));

    let mut roomy = ColoringState::new(&ctx, 2, 1, 2);
    roomy.freeze(1, 0);
    roomy.freeze(3, 0);
    roomy.try_assign(0, 0).unwrap();
    assert_eq!(roomy.try_assign(2, 0), Err(Infeasibility::PairUniquenessViolation));
}

#[test]
fn undo_restores_successor_table() {
    let trace = twin_steps(ActionLabel::pick(0));
    let ctx = ColoringContext::new(&trace, &uniform(4, 1.0), None).unwrap();
    let mut state = ColoringState::new(&ctx, 1, 1, 3);
    let src = Node::new(Role::Pick, 0);
    let mark = state.mark();
    state.try_assign(0, 0).unwrap();
    state.try_assign(1, 0).unwrap();
    assert_eq!(
        state.successor(src, ActionLabel::pick(0)),
        Some(Node::new(Role::Place, 0))
    );
    state.undo_to(mark);
    assert_eq!(state.successor(src, ActionLabel::pick(0)), None);
    assert_eq!(state.used(Role::Pick), 0);
}

#[test]
fn conflicting_successors_are_rejected_up_front() {
    let trace = assign_roles(&[
        Step::new(0, ActionLabel::pick(0), 1),
        Step::new(1, ActionLabel::place(0), 0),
        Step::new(0, ActionLabel::pick(0), 2),
    ])
    .unwrap();
    let err = ColoringContext::new(&trace, &uniform(3, 1.0), None).unwrap_err();
    assert!(matches!(
        err,
        ColoringError::InconsistentTrace {
            obs: 0,
            dsts: [1, 2],
            ..
        }
    ));
}

/// Point masses jittered around three corners of a 16x16 grid.
fn three_blobs() -> (Trace, DistanceMatrix, Vec<usize>) {
    let centers = [(2, 2), (2, 13), (13, 7)];
    let offsets = [(0, 0), (1, 0), (0, 1)];
    let mut maps = Vec::new();
    let mut group = Vec::new();
    let mut steps = Vec::new();
    for (g, &(r, c)) in centers.iter().enumerate() {
        for &(dr, dc) in &offsets {
            let o = maps.len();
            maps.push(SpatialMap::point_mass(16, 16, r + dr, c + dc));
            maps.push(SpatialMap::point_mass(16, 16, 8, 8));
            group.extend([g, 0]);
            steps.push(Step::new(o, ActionLabel::pick(0), o + 1));
        }
    }
    let d = distance_matrix(&maps, &OTParams::default()).unwrap();
    (assign_roles(&steps).unwrap(), d, group)
}

#[test]
fn seeding_recovers_separated_groups() {
    let (trace, d, group) = three_blobs();
    let ctx = ColoringContext::new(&trace, &d, None).unwrap();
    let picks = ctx.ids(Role::Pick).to_vec();
    // Groups are at least five times farther apart than their own spread.
    let (mut intra, mut inter) = (0.0f64, f64::INFINITY);
    for &a in &picks {
        for &b in picks.iter().filter(|&&b| b != a) {
            if group[a] == group[b] {
                intra = intra.max(ctx.distance(a, b));
            } else {
                inter = inter.min(ctx.distance(a, b));
            }
        }
    }
    assert!(inter >= 5.0 * intra, "intra {intra} inter {inter}");

    let seeds = seed_pick_greedy(&ctx, &picks, 3);
    for &a in &picks {
        for &b in &picks {
            assert_eq!(seeds[&a] == seeds[&b], group[a] == group[b], "{a} {b}");
        }
    }
    let one = seed_pick_greedy(&ctx, &picks, 1);
    assert!(one.values().all(|&c| c == 0));
    assert_eq!(one.len(), picks.len());
}

#[test]
fn seeding_two_observations_gives_singletons() {
    let trace = twin_steps(ActionLabel::pick(0));
    let ctx = ColoringContext::new(&trace, &uniform(4, 1.0), None).unwrap();
    let seeds = seed_pick_greedy(&ctx, &[0, 2], 2);
    assert_ne!(seeds[&0], seeds[&2]);
}

#[test]
fn learns_fruit_ground_truth() {
    let ds = generate_dataset(&EnvSpec::new(EnvKind::FruitHom, 0)).unwrap();
    let d = distance_matrix(&ds.maps, &OTParams::default()).unwrap();
    let gt = Partition::from_labels(ds.trace(), &ds.classes()).unwrap();
    let learned = learn_partition(ds.trace(), &d, &ColoringParams::new(3, 3, 3)).unwrap();
    assert!(partition_equal_up_to_relabel(&learned.partition, &gt).unwrap());
    assert!((learned.v_score - intra_cluster_score(&learned.partition, &d)).abs() < 1e-9);
}

#[test]
fn single_cluster_over_cap_is_infeasible() {
    let trace = fan_out();
    let err = learn_partition(&trace, &uniform(6, 1.0), &ColoringParams::new(1, 1, 1)).unwrap_err();
    assert!(matches!(err, ColoringError::Infeasible { .. }));
}

#[test]
fn invalid_parameters() {
    let trace = fan_out();
    let d = uniform(6, 1.0);
    let err = learn_partition(&trace, &d, &ColoringParams::new(0, 1, 3)).unwrap_err();
    assert!(matches!(err, ColoringError::InvalidInput(_)));
    let err = learn_partition(&trace, &d, &ColoringParams::new(1, 4, 3)).unwrap_err();
    assert_eq!(err, ColoringError::Infeasible { stage: Stage::Place });
}

/// Four disjoint pick steps; any pick grouping is feasible when places stay apart.
fn loose_instance() -> (Trace, DistanceMatrix) {
    let steps: Vec<Step> = (0..4)
        .map(|i| Step::new(2 * i, ActionLabel::pick(i as u16), 2 * i + 1))
        .collect();
    let trace = assign_roles(&steps).unwrap();
    let n = 8;
    let values = (0..n * n)
        .map(|k| {
            let (a, b) = (k / n, k % n);
            match (a == b, a % 2 == 0 && b % 2 == 0, a / 4 == b / 4) {
                (true, _, _) => 0.0,
                (_, true, true) => 0.1,
                _ => 1.0,
            }
        })
        .collect();
    (trace, DistanceMatrix::from_dense((0..n).collect(), values).unwrap())
}

#[test]
fn refine_moves_misassigned_observation() {
    let (trace, d) = loose_instance();
    let ctx = ColoringContext::new(&trace, &d, None).unwrap();
    let start = Partition::from_labels(&trace, &[0, 0, 0, 1, 0, 2, 1, 3]).unwrap();
    let (refined, history) = refine(&ctx, &start, &ColoringParams::new(2, 4, 4)).unwrap();
    let first = &history[0];
    assert!(first.round <= 1);
    assert_eq!(first.edit, Edit::Move { obs: 4, from: 0, to: 1 });
    let expected = Partition::from_labels(&trace, &[0, 0, 0, 1, 1, 2, 1, 3]).unwrap();
    assert!(partition_equal_up_to_relabel(&refined, &expected).unwrap());
}

#[test]
fn refine_keeps_optimum() {
    let (trace, d) = loose_instance();
    let ctx = ColoringContext::new(&trace, &d, None).unwrap();
    let (best, _) = brute_force_best(&trace, &d, 2, 4, 4).unwrap();
    let (refined, history) = refine(&ctx, &best, &ColoringParams::new(2, 4, 4)).unwrap();
    assert!(history.is_empty());
    assert_eq!(refined, best);
}

#[test]
fn refine_rejects_infeasible_start() {
    let trace = fan_out();
    let ctx = ColoringContext::new(&trace, &uniform(6, 1.0), None).unwrap();
    let start = Partition::from_labels(&trace, &[0, 0, 0, 0, 0, 0]).unwrap();
    let err = refine(&ctx, &start, &ColoringParams::new(1, 1, 3)).unwrap_err();
    assert!(matches!(err, ColoringError::InvalidInput(_)));
}

#[test]
fn event_log_serializes_as_jsonl() {
    let trace = fan_out();
    let mut params = ColoringParams::new(1, 3, 3);
    params.log = true;
    let learned = learn_partition(&trace, &uniform(6, 1.0), &params).unwrap();
    let log = learned.log.unwrap();
    let mut out = Vec::new();
    log.write_jsonl(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().count(), log.events().len());
    assert!(text.lines().all(|l| l.starts_with("{\"event\":")));
}

/// A walk over at most `steps + 1` observations that sometimes returns to an earlier one.
fn random_instance() -> impl Strategy<Value = (Trace, DistanceMatrix)> {
    (
        3usize..=9,
        prop::collection::vec((0u16..3, any::<bool>(), any::<prop::sample::Index>()), 9),
        prop::collection::vec(0.05f64..1.0, 100),
    )
        .prop_map(|(len, moves, raw)| {
            let mut roles = vec![Role::Pick];
            let mut steps = Vec::new();
            let mut cur = 0;
            for &(a, revisit, pick) in moves.iter().take(len) {
                let role = roles[cur];
                let action = match role {
                    Role::Pick => ActionLabel::pick(a),
                    Role::Place => ActionLabel::place(a),
                };
                let back: Vec<ObsId> = (0..roles.len()).filter(|&o| o != cur && roles[o] != role).collect();
                let dst = if revisit && !back.is_empty() {
                    back[pick.index(back.len())]
                } else {
                    roles.push(role.opposite());
                    roles.len() - 1
                };
                steps.push(Step::new(cur, action, dst));
                cur = dst;
            }
            let n = roles.len();
            let mut values = vec![0.0; n * n];
            for a in 0..n {
                for b in a + 1..n {
                    values[a * n + b] = raw[a * 10 + b];
                    values[b * n + a] = raw[a * 10 + b];
                }
            }
            (
                assign_roles(&steps).unwrap(),
                DistanceMatrix::from_dense((0..n).collect(), values).unwrap(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn verdict_matches_brute_force(
        (trace, d) in random_instance(),
        kp in 1usize..=3,
        kq in 1usize..=3,
        cap in 1usize..=3,
    ) {
        let oracle = brute_force_best(&trace, &d, kp, kq, cap);
        match learn_partition(&trace, &d, &ColoringParams::new(kp, kq, cap)) {
            Ok(learned) => {
                let (_, best) = oracle.expect("oracle finds the learned partition feasible");
                let mut labels = vec![0; trace.num_observations()];
                for role in [Role::Pick, Role::Place] {
                    for (&o, &c) in learned.partition.assignment(role) {
                        labels[o] = c;
                    }
                }
                prop_assert!(labels_feasible(&trace, &labels, Some(cap)));
                prop_assert_eq!(learned.partition.k(Role::Pick), kp);
                prop_assert_eq!(learned.partition.k(Role::Place), kq);
                prop_assert!(learned.v_score >= best - 1e-9);
                prop_assert!(learned.v_score <= learned.v_initial + 1e-12);
                let mut v = learned.v_initial;
                for step in &learned.history {
                    prop_assert!(step.v_after < step.v_before);
                    prop_assert!(step.v_before <= v + 1e-12);
                    prop_assert!(labels_feasible(&trace, &step.labels, Some(cap)));
                    v = step.v_after;
                }
            }
            Err(ColoringError::Infeasible { .. }) => prop_assert_eq!(oracle.unwrap_err(), OracleError::Infeasible),
            // Rejected before any search, whatever the oracle says about merging the successors.
            Err(ColoringError::InconsistentTrace { obs, action, dsts }) => {
                for dst in dsts {
                    prop_assert!(trace.steps().contains(&Step::new(obs, action, dst)));
                }
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn learning_is_deterministic((trace, d) in random_instance(), kp in 1usize..=2, kq in 1usize..=2) {
        let params = ColoringParams::new(kp, kq, 3);
        let a = learn_partition(&trace, &d, &params);
        let b = learn_partition(&trace, &d, &params);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.partition, b.partition);
                prop_assert_eq!(a.history, b.history);
                prop_assert_eq!(a.v_score.to_bits(), b.v_score.to_bits());
            }
            (a, b) => prop_assert_eq!(a.err(), b.err()),
        }
    }
}
