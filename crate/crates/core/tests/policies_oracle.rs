//! Fixed-policy training, clustering and selection.

use nalgebra::DMatrix;
use proptest::prelude::*;

use flexenv_core::envelope::optimal_policy;
use flexenv_core::instance::{weather_features, Instance, InstanceConfig};
use flexenv_core::policies::{
    kmeans, policy_distance, select_policy, train_average_library, train_average_policy, train_cluster_policies,
    AffinePolicy, Direction, PolicyEntry, PolicyLibrary, DEFAULT_MAX_ITER,
};

fn small_config() -> InstanceConfig {
    InstanceConfig {
        rooms: 2,
        horizon: 8,
        ..InstanceConfig::default()
    }
}

fn days(building: u64, seeds: std::ops::Range<u64>) -> Vec<Instance> {
    seeds.map(|d| Instance::synthetic(building, d, &small_config()).unwrap()).collect()
}

fn close(a: &AffinePolicy, b: &AffinePolicy, tol: f64) -> bool {
    policy_distance(a, b).unwrap().1 <= tol
}

#[test]
fn two_blobs_are_separated() {
    let mut pts = Vec::new();
    for i in 0..20 {
        let t = i as f64 * 0.05;
        pts.push(vec![t.sin() * 0.3, t.cos() * 0.3]);
        pts.push(vec![10.0 + t.cos() * 0.3, -5.0 + t.sin() * 0.3]);
    }
    let km = kmeans(&pts, 2, 17, DEFAULT_MAX_ITER).unwrap();
    for pair in km.assignments.chunks(2) {
        assert_ne!(pair[0], pair[1]);
    }
    let first = km.assignments[0];
    assert!(km.assignments.iter().step_by(2).all(|a| *a == first));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kmeans_inertia_never_increases(
        pts in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 6..40),
        k in 1usize..5,
        seed in 0u64..1000,
    ) {
        let km = kmeans(&pts, k, seed, DEFAULT_MAX_ITER).unwrap();
        for w in km.inertia.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
        let again = kmeans(&pts, k, seed, DEFAULT_MAX_ITER).unwrap();
        prop_assert_eq!(km, again);
    }

    #[test]
    fn policy_distance_triangle_inequality(
        a in prop::collection::vec(-3.0f64..3.0, 24),
        b in prop::collection::vec(-3.0f64..3.0, 24),
        c in prop::collection::vec(-3.0f64..3.0, 24),
    ) {
        let mk = |v: &Vec<f64>| AffinePolicy {
            gains: v.chunks(6).map(|ch| DMatrix::from_row_slice(2, 3, ch)).collect(),
            anchor_hour: 0,
            direction: Direction::Up,
        };
        let (pa, pb, pc) = (mk(&a), mk(&b), mk(&c));
        let ab = policy_distance(&pa, &pb).unwrap();
        let bc = policy_distance(&pb, &pc).unwrap();
        let ac = policy_distance(&pa, &pc).unwrap();
        prop_assert!(ac.0 <= ab.0 + bc.0 + 1e-12);
        prop_assert!(ac.1 <= ab.1 + bc.1 + 1e-12);
    }
}

#[test]
fn single_and_repeated_instances_average_to_the_optimum() {
    let inst = days(1, 3..4);
    let opt = optimal_policy(&inst[0].context(), Direction::Up).unwrap();
    let single = train_average_policy(&inst, Direction::Up, 0).unwrap();
    assert!(close(&single, &opt, 1e-12));
    let repeated = vec![inst[0].clone(), inst[0].clone(), inst[0].clone()];
    let avg = train_average_policy(&repeated, Direction::Up, 0).unwrap();
    assert!(close(&avg, &opt, 1e-9));
}

#[test]
fn cluster_extremes() {
    let inst = constrained_days(10..14);
    let opts: Vec<AffinePolicy> = inst
        .iter()
        .map(|i| optimal_policy(&i.context(), Direction::Down).unwrap())
        .collect();

    let per_day = train_cluster_policies(&inst, inst.len(), 5, 0).unwrap();
    let Some(PolicyEntry::Cluster { clusters }) = per_day.get(0, Direction::Down) else {
        panic!("cluster entry expected")
    };
    assert_eq!(clusters.len(), inst.len());
    let mut members: Vec<usize> = clusters.iter().map(|c| c.member).collect();
    members.sort();
    assert_eq!(members, vec![0, 1, 2, 3]);
    for c in clusters {
        assert!(close(&c.policy, &opts[c.member], 1e-12));
    }
    for (i, day) in inst.iter().enumerate() {
        let chosen = select_policy(&per_day, 0, Direction::Down, &weather_features(&day.weather)).unwrap();
        assert!(close(chosen, &opts[i], 1e-12), "day {i} selects another day's policy");
    }

    let one = train_cluster_policies(&inst, 1, 5, 0).unwrap();
    let Some(PolicyEntry::Cluster { clusters }) = one.get(0, Direction::Down) else {
        panic!("cluster entry expected")
    };
    // the standardised features have zero mean, so the centre is the origin
    let scaler = one.scaler.as_ref().unwrap();
    let norms: Vec<f64> = inst
        .iter()
        .map(|d| scaler.transform(&weather_features(&d.weather)).unwrap().iter().map(|v| v * v).sum())
        .collect();
    let central = (0..norms.len()).min_by(|&a, &b| norms[a].total_cmp(&norms[b])).unwrap();
    assert_eq!(clusters[0].member, central);
    assert!(close(&clusters[0].policy, &opts[central], 1e-12));

    let json = one.to_json().unwrap();
    assert_eq!(PolicyLibrary::from_json(&json).unwrap(), one);
}

/// Power capacity low enough that heating saturates on cold days, so that the
/// optimal policies differ from day to day.
fn constrained_days(seeds: std::ops::Range<u64>) -> Vec<Instance> {
    let cfg = InstanceConfig {
        horizon: 12,
        total_power: 3.0,
        ..InstanceConfig::default()
    };
    seeds.map(|d| Instance::synthetic(4, d, &cfg).unwrap()).collect()
}

#[test]
fn more_training_samples_do_not_increase_held_out_distance() {
    let train = constrained_days(100..120);
    let held_out = constrained_days(500..508);
    let optima: Vec<AffinePolicy> = held_out
        .iter()
        .map(|i| optimal_policy(&i.context(), Direction::Up).unwrap())
        .collect();
    let worst = |n: usize| -> f64 {
        let lib = train_average_library(&train[..n], 0, 0).unwrap();
        let policy = select_policy(&lib, 0, Direction::Up, &[]).unwrap();
        optima.iter().map(|o| policy_distance(policy, o).unwrap().1).sum::<f64>() / optima.len() as f64
    };
    let (d10, d20) = (worst(10), worst(20));
    eprintln!("held-out mean max distance: 10 samples {d10:.4}, 20 samples {d20:.4}");
    assert!(d10 > 1e-3, "held-out optima do not vary ({d10})");
    assert!(d20 <= d10 * 1.05, "mean max distance grew from {d10} to {d20}");
}
