#[path = "oracles/linkage.rs"]
mod oracle;

use std::collections::BTreeSet;

use eoc_core::builder::{link_events, LinkagePolicy};
use eoc_core::model::EventType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn partition_of(eps: &[eoc_core::model::EpisodeOfCare]) -> BTreeSet<BTreeSet<String>> {
    eps.iter()
        .map(|e| e.events.iter().map(|ev| ev.event_id.clone()).collect())
        .collect()
}

#[test]
fn matches_exhaustive_oracle_on_random_patients() {
    let policy = LinkagePolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2015);
    for p in 0..1000 {
        let events = oracle::random_patient(&mut rng, &format!("P{p}"), 12);
        let valid = oracle::valid_partitions(&events, &policy, true);
        assert_eq!(valid.len(), 1, "patient {p}: {} valid partitions", valid.len());
        let eps = link_events(&events, &policy).unwrap();
        assert_eq!(partition_of(&eps), valid[0], "patient {p}");
    }
}

#[test]
fn pruned_oracle_agrees_with_full_enumeration() {
    let policy = LinkagePolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for p in 0..300 {
        let events = oracle::random_patient(&mut rng, &format!("S{p}"), 7);
        assert_eq!(
            oracle::valid_partitions(&events, &policy, true),
            oracle::valid_partitions(&events, &policy, false),
            "patient {p}"
        );
    }
}

#[test]
fn stay_boundaries_match_oracle_spans() {
    let policy = LinkagePolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for p in 0..500 {
        let events = oracle::random_patient(&mut rng, &format!("B{p}"), 12);
        let facts = oracle::facts(&events, &policy);
        let eps = link_events(&events, &policy).unwrap();
        let inpatient: Vec<_> = eps
            .iter()
            .filter(|e| e.events.iter().any(|ev| ev.event_type == EventType::Admission))
            .collect();
        assert_eq!(inpatient.len(), facts.spans.len(), "patient {p}");
        let mut got: Vec<_> = inpatient
            .iter()
            .map(|e| (e.admission_time.unwrap(), e.discharge_time))
            .collect();
        let mut want: Vec<_> = facts.spans.iter().map(|s| (s.admission, s.discharge)).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want, "patient {p}");
        for e in &eps {
            e.validate().unwrap();
        }
    }
}

#[test]
fn linkage_with_other_policies() {
    for (grace, gap) in [(0, 0), (12, 6), (240, 96)] {
        let policy = LinkagePolicy {
            grace_window_hours: grace,
            session_gap_hours: gap,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(grace as u64 * 31 + gap as u64);
        for p in 0..200 {
            let events = oracle::random_patient(&mut rng, &format!("G{p}"), 10);
            let valid = oracle::valid_partitions(&events, &policy, true);
            assert_eq!(valid.len(), 1);
            assert_eq!(partition_of(&link_events(&events, &policy).unwrap()), valid[0]);
        }
    }
}
