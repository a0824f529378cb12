use absgraph::baselines::{baseline_pipeline, Baseline, DensityParams};
use absgraph::graph::{ground_truth_graph, node_states};
use absgraph::localizer::{fit_prototypes, DEFAULT_FEATURE_SIDE, DEFAULT_GAMMA};
use absgraph::sweep::{default_grid, selection_is_valid, DEFAULT_CAPS};
use absgraph::*;

fn learn(kind: EnvKind, seed: u64) -> (Dataset, DistanceMatrix, sweep::Selection) {
    let ds = generate_dataset(&EnvSpec::new(kind, seed)).unwrap();
    let d = distance_matrix(&ds.maps, &OTParams::default()).unwrap();
    let result = sweep_grid(ds.trace(), &d, &default_grid(ds.trace()), &DEFAULT_CAPS, None).unwrap();
    let selection = select_best(&result).unwrap();
    (ds, d, selection)
}

fn ground_truth(ds: &Dataset) -> Partition {
    Partition::from_labels(ds.trace(), &ds.classes()).unwrap()
}

#[test]
fn fruit_hom_sweep_recovers_ground_truth() {
    let (ds, _, s) = learn(EnvKind::FruitHom, 0);
    assert_eq!((s.cell.k_pick, s.cell.k_place), (3, 3));
    assert!(partition_equal_up_to_relabel(&s.partition, &ground_truth(&ds)).unwrap());
    assert!(selection_is_valid(ds.trace(), &s));
}

#[test]
fn blocks2_sweep_recovers_ground_truth() {
    let (ds, _, s) = learn(EnvKind::Blocks2, 1);
    assert_eq!((s.cell.k_pick, s.cell.k_place), (6, 3));
    assert!(partition_equal_up_to_relabel(&s.partition, &ground_truth(&ds)).unwrap());
}

#[test]
fn learned_fruit_graph_plans_perfectly() {
    let (ds, _, s) = learn(EnvKind::FruitHom, 2);
    let g = induce_graph(&s.partition, ds.trace()).unwrap();
    assert!(g.violations(Some(s.cell.cap)).is_empty());
    let states = node_states(&g, &ds.sampled.states);
    let m = evaluate(&g, &ds.env, &states, 200, 0, s.v_score).unwrap();
    assert_eq!(
        (m.opt_path_pct, m.any_path_pct, m.transition_pct),
        (100.0, 100.0, 100.0)
    );
}

#[test]
fn ground_truth_graph_is_perfect_everywhere() {
    for kind in EnvKind::ALL {
        let env = build_env(&EnvSpec::new(kind, 0)).unwrap();
        let (g, states) = ground_truth_graph(&env);
        let m = evaluate(&g, &env, &states, 200, 1, 0.0).unwrap();
        assert_eq!(
            (m.opt_path_pct, m.any_path_pct, m.transition_pct),
            (100.0, 100.0, 100.0),
            "{kind:?}"
        );
    }
}

#[test]
fn prototypes_localize_fresh_renders() {
    let (ds, _, s) = learn(EnvKind::FruitHom, 0);
    let c = fit_prototypes(&ds.maps, &s.partition, DEFAULT_GAMMA, DEFAULT_FEATURE_SIDE).unwrap();
    assert_eq!(c.n_classes(), 6);
    // Each state's node is the one its first observation was clustered into.
    let mut node_of_state = std::collections::BTreeMap::new();
    for (o, &state) in ds.sampled.states.iter().enumerate() {
        let (role, cluster) = s.partition.cluster_of(o).unwrap();
        node_of_state
            .entry(state)
            .or_insert(localizer::NodeRef { role, cluster });
    }
    let mut hits = 0;
    let mut total = 0;
    for (&state, &node) in &node_of_state {
        for r in 0..100u64 {
            let map = ds.env.render_map(state, 1_000_000 + r).unwrap();
            hits += usize::from(c.localize(&map).unwrap() == node);
            total += 1;
        }
    }
    assert!(hits as f64 >= 0.95 * total as f64, "{hits}/{total}");
}

#[test]
fn density_baseline_runs_on_blocks() {
    let ds = generate_dataset(&EnvSpec::new(EnvKind::Blocks2, 0)).unwrap();
    let d = distance_matrix(&ds.maps, &OTParams::default()).unwrap();
    let r = baseline_pipeline(ds.trace(), &d, &Baseline::Density(DensityParams::over_segmenting())).unwrap();
    assert!(r.partition.k(Role::Pick) >= 1 && r.partition.k(Role::Place) >= 1);
    assert!(r.v_score.is_finite());
}
