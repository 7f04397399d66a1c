mod common;

use std::collections::BTreeSet;

use eoc_core::datagen::{generate, GenSpec, GroundTruth};
use eoc_core::extract::LoadMode;
use eoc_core::kpi::{compute_kpi, group_by_subsets, Bucket, KpiQuery, KpiType};

fn run(spec: &GenSpec) -> (GroundTruth, eoc_core::config::PlatformConfig, eoc_core::store::Repository, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(spec, dir.path()).unwrap();
    let truth: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(&m.ground_truth_path).unwrap()).unwrap();
    let (cfg, repo) = common::open(&m.config_path);
    common::ingest(&cfg, &repo, LoadMode::Increment);
    (truth, cfg, repo, dir)
}

#[test]
fn linkage_recovers_planned_episodes() {
    for seed in [1, 2, 3] {
        let spec = GenSpec {
            seed,
            n_patients: 60,
            days: 60,
            ..GenSpec::default()
        };
        let (truth, _cfg, repo, _dir) = run(&spec);
        let snap = repo.snapshot();
        let got: BTreeSet<Vec<String>> = snap
            .all_episodes()
            .iter()
            .map(|e| {
                let mut ids: Vec<String> = e.events.iter().map(|ev| ev.event_id.clone()).collect();
                ids.sort();
                ids
            })
            .collect();
        let want: BTreeSet<Vec<String>> = truth.episodes.iter().map(|e| e.event_ids.clone()).collect();
        assert_eq!(got.len(), truth.episodes.len(), "seed {seed}");
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn kpis_match_ground_truth() {
    let spec = GenSpec {
        seed: 11,
        n_patients: 80,
        days: 75,
        ..GenSpec::default()
    };
    let (truth, cfg, repo, _dir) = run(&spec);
    let snap = repo.snapshot();
    let cohorts = repo.cohorts();
    let ctx = cfg.kpi_context();
    let mut checked = 0;
    for kpi in KpiType::ALL {
        for bucket in [Bucket::Day, Bucket::Week, Bucket::Month] {
            for gb in group_by_subsets() {
                let mut q = KpiQuery::new(kpi, truth.window_from, truth.window_to, bucket);
                q.group_by = gb.clone();
                let got = compute_kpi(&snap, &cohorts, &ctx, &q).unwrap();
                let want = truth.series(kpi, bucket, &gb).unwrap();
                if let Some(d) = common::diff_rows(&got.buckets, &want.buckets) {
                    panic!("{kpi} {bucket:?} {gb:?}: {d}");
                }
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 9 * 3 * 8);
}

#[test]
fn generated_data_exercises_every_kpi() {
    let spec = GenSpec::default();
    let dir = tempfile::tempdir().unwrap();
    let m = generate(&spec, dir.path()).unwrap();
    let truth: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(&m.ground_truth_path).unwrap()).unwrap();
    for kpi in KpiType::ALL {
        let s = truth.series(kpi, Bucket::Month, &[]).unwrap();
        assert!(s.buckets.iter().any(|b| b.n > 0), "{kpi} never populated");
    }
    assert!(truth.episodes.len() > spec.n_patients as usize);
}

#[test]
fn generation_is_byte_deterministic() {
    let spec = GenSpec {
        n_patients: 30,
        days: 40,
        ..GenSpec::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&spec, a.path()).unwrap();
    generate(&spec, b.path()).unwrap();
    for f in ["adt.csv", "billing.jsonl", "clinical.jsonl", "ground_truth.json", "eoc.toml"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
