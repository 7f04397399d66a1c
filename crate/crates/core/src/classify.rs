//! Episode cohorts: rule cohorts defined by a filter expression and
//! length-of-stay clusters found by seeded one-dimensional k-means.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{self, FilterAst, FilterError};
use crate::model::{EpisodeOfCare, Patient};
use crate::store::{EpisodeBatch, Repository, Snapshot, StoreError};

pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("invalid rule: {0}")]
    Rule(#[from] FilterError),
    #[error("invalid cohort definition: {0}")]
    Invalid(String),
    #[error("cohort {0:?} already exists")]
    Duplicate(String),
    #[error("unknown cohort {0:?}")]
    Unknown(String),
    #[error("clustering needs at least {k} closed episodes, found {found}")]
    TooFewPoints { k: usize, found: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CohortKind {
    Rule,
    Cluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDef {
    pub cohort_id: String,
    pub name: String,
    pub kind: CohortKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_params: Option<ClusterParams>,
}

impl CohortDef {
    pub fn rule(cohort_id: &str, name: &str, rule_text: &str) -> Self {
        CohortDef {
            cohort_id: cohort_id.into(),
            name: name.into(),
            kind: CohortKind::Rule,
            rule_text: Some(rule_text.into()),
            cluster_params: None,
        }
    }

    pub fn cluster(cohort_id: &str, name: &str, k: usize, seed: u64) -> Self {
        CohortDef {
            cohort_id: cohort_id.into(),
            name: name.into(),
            kind: CohortKind::Cluster,
            rule_text: None,
            cluster_params: Some(ClusterParams { k, seed }),
        }
    }

    /// Checks the definition and returns the parsed rule for RULE cohorts.
    pub fn validate(&self) -> Result<Option<FilterAst>, CohortError> {
        if self.cohort_id.is_empty()
            || !self
                .cohort_id
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
        {
            return Err(CohortError::Invalid(
                "cohort_id must be non-empty and use [A-Za-z0-9_-]".into(),
            ));
        }
        match self.kind {
            CohortKind::Rule => {
                let text = self
                    .rule_text
                    .as_deref()
                    .ok_or_else(|| CohortError::Invalid("RULE cohort needs rule_text".into()))?;
                Ok(Some(filter::parse(text)?))
            }
            CohortKind::Cluster => match self.cluster_params {
                Some(ClusterParams { k, .. }) if k >= 2 => Ok(None),
                Some(_) => Err(CohortError::Invalid("cluster k must be at least 2".into())),
                None => Err(CohortError::Invalid(
                    "CLUSTER cohort needs cluster_params".into(),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAssignment {
    pub cohort_id: String,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<f64>,
}

/// Persisted cohort definitions plus their latest materialized assignments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortRegistry {
    pub defs: BTreeMap<String, CohortDef>,
    #[serde(default)]
    pub assignments: BTreeMap<String, Vec<CohortAssignment>>,
}

impl CohortRegistry {
    /// Cohort ids usable in queries: every definition, plus `<id>.<n>` for
    /// each materialized cluster.
    pub fn is_known(&self, id: &str) -> bool {
        self.defs.contains_key(id)
            || self
                .assignments
                .values()
                .flatten()
                .any(|a| a.cohort_id == id)
    }

    pub fn add(&mut self, def: CohortDef) -> Result<(), CohortError> {
        def.validate()?;
        if self.is_known(&def.cohort_id) {
            return Err(CohortError::Duplicate(def.cohort_id));
        }
        self.defs.insert(def.cohort_id.clone(), def);
        Ok(())
    }

    /// Cohort labels an episode carries under the current definitions.
    pub fn labels_for(&self, e: &EpisodeOfCare, p: Option<&Patient>) -> BTreeSet<String> {
        let mut labels = BTreeSet::new();
        for def in self.defs.values() {
            match def.kind {
                CohortKind::Rule => {
                    let hit = def
                        .rule_text
                        .as_deref()
                        .and_then(|t| filter::parse(t).ok())
                        .is_some_and(|ast| filter::evaluate(&ast, e, p));
                    if hit {
                        labels.insert(def.cohort_id.clone());
                    }
                }
                CohortKind::Cluster => {
                    for a in self.assignments.get(&def.cohort_id).into_iter().flatten() {
                        if a.members.binary_search(&e.episode_id).is_ok() {
                            labels.insert(def.cohort_id.clone());
                            labels.insert(a.cohort_id.clone());
                        }
                    }
                }
            }
        }
        labels
    }
}

/// Members are the episodes for which the rule evaluates true.
pub fn assign_rule_cohort(
    def: &CohortDef,
    episodes: &[Arc<EpisodeOfCare>],
    patient: impl Fn(&str) -> Option<Patient>,
) -> Result<CohortAssignment, CohortError> {
    let ast = def
        .validate()?
        .ok_or_else(|| CohortError::Invalid("not a RULE cohort".into()))?;
    let mut members: Vec<String> = episodes
        .iter()
        .filter(|e| filter::evaluate(&ast, e, patient(&e.patient_id).as_ref()))
        .map(|e| e.episode_id.clone())
        .collect();
    members.sort();
    Ok(CohortAssignment {
        cohort_id: def.cohort_id.clone(),
        members,
        centroid: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Centroids in ascending order.
    pub centroids: Vec<f64>,
    /// Cluster index of each input point, indexing `centroids`.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn nearest(x: f64, centroids: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = (x - c) * (x - c);
        // strict: ties stay with the lower index
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

pub fn sse(points: &[f64], centroids: &[f64], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(x, &j)| (x - centroids[j]) * (x - centroids[j]))
        .sum()
}

fn plus_plus_init(points: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    while chosen.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|x| {
                chosen
                    .iter()
                    .map(|&c| (x - points[c]) * (x - points[c]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc > r {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).unwrap())
        } else {
            // every point coincides with a centre; take the first unchosen one
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(pick);
    }
    chosen.into_iter().map(|i| points[i]).collect()
}

/// Seeded k-means++ followed by Lloyd iterations until the assignment stops
/// changing (at most [`MAX_LLOYD_ITERATIONS`]).
pub fn kmeans_1d(points: &[f64], k: usize, seed: u64) -> Result<KMeans, CohortError> {
    if k < 2 {
        return Err(CohortError::Invalid("cluster k must be at least 2".into()));
    }
    if points.len() < k {
        return Err(CohortError::TooFewPoints {
            k,
            found: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment: Vec<usize> = points.iter().map(|&x| nearest(x, &centroids)).collect();
    let mut sse_history = vec![sse(points, &centroids, &assignment)];
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (x, &j) in points.iter().zip(&assignment) {
            sums[j] += x;
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        let next: Vec<usize> = points.iter().map(|&x| nearest(x, &centroids)).collect();
        sse_history.push(sse(points, &centroids, &next));
        if next == assignment {
            break;
        }
        assignment = next;
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    Ok(KMeans {
        centroids: order.iter().map(|&j| centroids[j]).collect(),
        assignment: assignment.iter().map(|&j| rank[j]).collect(),
        sse_history,
        iterations,
    })
}

/// Clusters the closed episodes by length of stay. Cluster `n` (in ascending
/// centroid order) becomes cohort `<cohort_id>.<n>`.
pub fn cluster_by_los(
    def: &CohortDef,
    episodes: &[Arc<EpisodeOfCare>],
) -> Result<Vec<CohortAssignment>, CohortError> {
    def.validate()?;
    let params = def
        .cluster_params
        .filter(|_| def.kind == CohortKind::Cluster)
        .ok_or_else(|| CohortError::Invalid("not a CLUSTER cohort".into()))?;
    let mut closed: Vec<(&str, f64)> = episodes
        .iter()
        .filter_map(|e| e.los().map(|los| (e.episode_id.as_str(), los)))
        .collect();
    closed.sort_by(|a, b| a.0.cmp(b.0));
    closed.dedup_by(|a, b| a.0 == b.0);
    let points: Vec<f64> = closed.iter().map(|(_, los)| *los).collect();
    let km = kmeans_1d(&points, params.k, params.seed)?;
    let mut out: Vec<CohortAssignment> = km
        .centroids
        .iter()
        .enumerate()
        .map(|(j, c)| CohortAssignment {
            cohort_id: format!("{}.{j}", def.cohort_id),
            members: Vec::new(),
            centroid: Some(*c),
        })
        .collect();
    for ((id, _), &j) in closed.iter().zip(&km.assignment) {
        out[j].members.push(id.to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub count: usize,
    pub mean_los: Option<f64>,
    pub mortality_rate: Option<f64>,
    pub mean_contribution_margin: Option<f64>,
}

/// Count, mean LOS (closed members), mortality rate and mean contribution
/// margin of the members present in `episodes`.
pub fn cohort_summary(a: &CohortAssignment, episodes: &[Arc<EpisodeOfCare>]) -> CohortSummary {
    let members: BTreeSet<&str> = a.members.iter().map(String::as_str).collect();
    let eps: Vec<&EpisodeOfCare> = episodes
        .iter()
        .filter(|e| members.contains(e.episode_id.as_str()))
        .map(|e| e.as_ref())
        .collect();
    let count = eps.len();
    let los: Vec<f64> = eps.iter().filter_map(|e| e.los()).collect();
    let mean = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
    CohortSummary {
        count,
        mean_los: mean(los.iter().sum(), los.len()),
        mortality_rate: mean(eps.iter().filter(|e| e.derived.died).count() as f64, count),
        mean_contribution_margin: mean(
            eps.iter()
                .map(|e| e.derived.contribution_margin.cents() as f64)
                .sum::<f64>()
                / 100.0,
            count,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSummary {
    pub cohort_id: String,
    pub member_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<f64>,
    pub summary: CohortSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializeResult {
    pub cohort_id: String,
    pub kind: CohortKind,
    pub assignments: Vec<AssignmentSummary>,
    pub relabeled_episodes: usize,
}

/// Registers a new cohort definition in the repository.
pub fn create_cohort(repo: &Repository, def: CohortDef) -> Result<CohortDef, CohortError> {
    let mut registry = (*repo.cohorts()).clone();
    registry.add(def.clone())?;
    repo.set_cohorts(registry)?;
    Ok(def)
}

/// Evaluates a cohort over every stored episode, persists the assignment and
/// refreshes the cohort labels stored on the episodes.
pub fn materialize(repo: &Repository, cohort_id: &str) -> Result<MaterializeResult, CohortError> {
    let mut registry = (*repo.cohorts()).clone();
    let def = registry
        .defs
        .get(cohort_id)
        .cloned()
        .ok_or_else(|| CohortError::Unknown(cohort_id.to_string()))?;
    let snap = repo.snapshot();
    let episodes = snap.all_episodes();
    let assignments = match def.kind {
        CohortKind::Rule => vec![assign_rule_cohort(&def, &episodes, |p| {
            snap.patient(p).cloned()
        })?],
        CohortKind::Cluster => cluster_by_los(&def, &episodes)?,
    };
    registry
        .assignments
        .insert(def.cohort_id.clone(), assignments.clone());
    repo.set_cohorts(registry.clone())?;
    let relabeled = relabel(repo, &registry)?;
    let summaries = assignments
        .iter()
        .map(|a| AssignmentSummary {
            cohort_id: a.cohort_id.clone(),
            member_count: a.members.len(),
            centroid: a.centroid,
            summary: cohort_summary(a, &episodes),
        })
        .collect();
    Ok(MaterializeResult {
        cohort_id: def.cohort_id,
        kind: def.kind,
        assignments: summaries,
        relabeled_episodes: relabeled,
    })
}

fn relabel(repo: &Repository, registry: &CohortRegistry) -> Result<usize, CohortError> {
    Ok(repo.commit_episodes_with(|snap: &Snapshot| {
        let mut batch = EpisodeBatch::default();
        for e in snap.all_episodes() {
            let labels = registry.labels_for(&e, snap.patient(&e.patient_id));
            if labels != e.cohort_labels {
                let mut updated = e.as_ref().clone();
                updated.cohort_labels = labels;
                batch.episodes.push(updated);
            }
        }
        batch
    })?)
}
