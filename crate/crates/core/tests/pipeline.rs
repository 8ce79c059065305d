//! Whole-pipeline checks through the file formats.

use std::fs;

use switchtrack_core::cascade::{ingest, PreprocessConfig};
use switchtrack_core::closed_form::{cluster_identify, ClusterIdentifyOptions};
use switchtrack_core::initializer::{batch_initialize, RidgeConfig};
use switchtrack_core::io::{load_dataset, write_dataset};
use switchtrack_core::metrics::{best_permutation, relative_error};
use switchtrack_core::model::{generate_dataset, GenerationConfig, StructureSource};
use switchtrack_core::tracker::{track, TrackerConfig};

fn small(noise_std: f64) -> GenerationConfig {
    GenerationConfig {
        n_nodes: 10,
        n_cascades: 14,
        n_intervals: 60,
        n_states: 2,
        noise_std,
        rng_seed: 21,
        structure: StructureSource::Random { density: 0.2 },
        ..GenerationConfig::default()
    }
}

#[test]
fn dataset_survives_disk_and_identifies_exactly() {
    let cfg = small(0.0);
    let ds = generate_dataset(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &ds, Some(&cfg)).unwrap();
    let (_, back) = load_dataset(&manifest).unwrap();
    assert_eq!(back.x.x, ds.x.x);
    assert_eq!(back.snapshots.len(), ds.snapshots.len());
    for (p, q) in back.snapshots.iter().zip(&ds.snapshots) {
        assert_eq!(p.y, q.y);
    }

    let truth = back.states.as_ref().unwrap();
    let sigma = back.sigma.as_ref().unwrap();
    let id = cluster_identify(
        &back.snapshots,
        &back.x,
        &ClusterIdentifyOptions::new(2, 20, 0),
    )
    .unwrap();
    let (acc, perm) = best_permutation(sigma.labels(), id.sigma.labels(), 2).unwrap();
    assert_eq!(acc, 1.0);
    for (e, &t) in perm.iter().enumerate() {
        assert!(relative_error(&truth[t - 1], &id.states[e]).unwrap() < 1e-8);
    }
}

#[test]
fn tracking_keeps_the_sequence_and_improves_the_fit() {
    let ds = generate_dataset(&small(0.05)).unwrap();
    let truth = ds.states.as_ref().unwrap();
    let sigma = ds.sigma.as_ref().unwrap();
    let ridge = RidgeConfig {
        mu: 0.01,
        t_init: 20,
        ..RidgeConfig::default()
    };
    let init = batch_initialize(&ds.snapshots, &ds.x, 2, &ridge, 0).unwrap();
    let res = track(
        &ds.snapshots[20..],
        &ds.x,
        &init.states,
        &TrackerConfig::offline(vec![0.05; 2]),
    )
    .unwrap();
    let (acc, perm) = best_permutation(&sigma.labels()[20..], &res.sigma, 2).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    assert_eq!(res.violations, 0);
    for (e, &t) in perm.iter().enumerate() {
        let before = relative_error(&truth[t - 1], &init.states[e]).unwrap();
        let after = relative_error(&truth[t - 1], &res.states[e]).unwrap();
        assert!(after < before, "state {e}: {before} -> {after}");
    }
}

#[test]
fn ingested_events_load_as_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.jsonl");
    fs::write(
        &events,
        concat!(
            "{\"node_id\":\"a\",\"cascade_id\":\"m1\",\"timestamp\":0}\n",
            "{\"node_id\":\"b\",\"cascade_id\":\"m1\",\"timestamp\":30}\n",
            "{\"node_id\":\"c\",\"cascade_id\":\"m1\",\"timestamp\":70}\n",
            "{\"node_id\":\"b\",\"cascade_id\":\"m2\",\"timestamp\":10}\n",
            "{\"node_id\":\"c\",\"cascade_id\":\"m2\",\"timestamp\":90}\n",
            "{\"node_id\":\"a\",\"cascade_id\":\"m3\",\"timestamp\":50}\n",
        ),
    )
    .unwrap();
    let cfg = PreprocessConfig {
        n_intervals: 2,
        min_infected: 2,
        n_categories: 2,
        category_map: [("m1".to_string(), 0), ("m2".to_string(), 1)]
            .into_iter()
            .collect(),
        transform: Default::default(),
        minimum: Default::default(),
    };
    let out = dir.path().join("data");
    let manifest = ingest(&events, &cfg, &out).unwrap();
    let (_, ds) = load_dataset(&manifest).unwrap();
    assert_eq!(ds.x.n_nodes(), 3);
    // m3 has one infection and is dropped.
    assert_eq!(ds.x.n_cascades(), 2);
    assert_eq!(ds.snapshots.len(), 2);
    assert!(ds.states.is_none());
    assert!(ds
        .snapshots
        .iter()
        .all(|s| s.y.iter().all(|v| v.is_finite())));
}
