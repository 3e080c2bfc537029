//! K-means over latent embeddings and label extraction from pure clusters.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_name, LabelStore, Provenance};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

pub const KMEANS_TOLERANCE: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 300;
pub const DEFAULT_CLUSTERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub centers: Vec<Vec<f64>>,
    pub ids: Vec<String>,
    pub membership: Vec<usize>,
    /// Euclidean distance of each row to its assigned center.
    pub distances: Vec<f64>,
}

impl ClusterAssignment {
    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center (lowest index on ties) and the squared distance to it.
fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(row, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(rows: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![rows[rng.random_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = d2.iter().rposition(|d| *d > 0.0).unwrap();
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..rows.len())
        };
        let c = rows[pick].clone();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd's algorithm with k-means++ seeding. Stops when no center moves by
/// more than [`KMEANS_TOLERANCE`] or after [`KMEANS_MAX_ITER`] iterations.
/// An emptied cluster is moved onto the row farthest from its own center.
pub fn cluster_embeddings(ids: &[String], rows: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if ids.len() != rows.len() {
        return Err(Error::shape("embedding ids", rows.len(), ids.len()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let distinct: HashSet<Vec<u64>> = rows.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    if distinct.len() < k {
        return Err(Error::TooFewRows {
            needed: k,
            got: distinct.len(),
        });
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidConfig("embedding rows have different lengths".into()));
    }
    let mut rng = rng_for(seed, &[stream::KMEANS]);
    let mut centers = plus_plus_init(rows, k, &mut rng);
    let mut membership = vec![0; rows.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut d2 = vec![0.0; rows.len()];
        for (i, r) in rows.iter().enumerate() {
            (membership[i], d2[i]) = nearest(r, &centers);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &c) in rows.iter().zip(&membership) {
            counts[c] += 1;
            sums[c].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = (0..rows.len())
                    .filter(|&i| counts[membership[i]] > 1)
                    .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                    .expect("k distinct rows leave a cluster with two members");
                counts[membership[far]] -= 1;
                counts[c] = 1;
                membership[far] = c;
                d2[far] = 0.0;
                rows[far].clone()
            };
            shift = shift.max(sq_dist(&centers[c], &next).sqrt());
            centers[c] = next;
        }
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    let mut distances = vec![0.0; rows.len()];
    for (i, r) in rows.iter().enumerate() {
        let (c, d) = nearest(r, &centers);
        membership[i] = c;
        distances[i] = d.sqrt();
    }
    Ok(ClusterAssignment {
        k,
        centers,
        ids: ids.to_vec(),
        membership,
        distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAudit {
    pub cluster: usize,
    pub size: usize,
    /// Labeled member count per class.
    pub class_counts: Vec<usize>,
    /// Number of classes with at least one labeled member.
    pub z: usize,
    /// Mean labeled distance to the center, for clusters passing both gates.
    pub avgd: Option<f64>,
    pub class: Option<usize>,
    pub accepted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentationResult {
    pub new_labels: BTreeMap<String, usize>,
    pub audit: Vec<ClusterAudit>,
}

impl AugmentationResult {
    /// Per-class counts of new labels.
    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for c in self.new_labels.values() {
            counts[*c] += 1;
        }
        counts
    }

    /// Fraction of new labels matching `truth`, over those `truth` knows.
    pub fn accuracy(&self, truth: &LabelStore) -> Option<f64> {
        let judged: Vec<bool> = self
            .new_labels
            .iter()
            .filter_map(|(id, c)| truth.class_of(id).map(|t| t == *c))
            .collect();
        (!judged.is_empty()).then(|| judged.iter().filter(|ok| **ok).count() as f64 / judged.len() as f64)
    }
}

/// A cluster contributes labels only if its labeled members all share one
/// class and there are at least two of them; unlabeled members within the
/// mean labeled distance to the center (inclusive) receive that class.
pub fn augment_labels(clusters: &ClusterAssignment, labels: &LabelStore) -> Result<AugmentationResult> {
    let nc = labels.num_classes();
    let present: HashSet<&str> = clusters.ids.iter().map(String::as_str).collect();
    if let Some(id) = labels.ids().find(|id| !present.contains(id)) {
        return Err(Error::UnknownEntity(id.to_string()));
    }
    let mut members = vec![Vec::new(); clusters.k];
    for (i, &c) in clusters.membership.iter().enumerate() {
        members[c].push(i);
    }
    let mut result = AugmentationResult::default();
    for (cluster, rows) in members.iter().enumerate() {
        let mut class_counts = vec![0; nc];
        let mut dist_sum = vec![0.0; nc];
        for &i in rows {
            if let Some(c) = labels.class_of(&clusters.ids[i]) {
                class_counts[c] += 1;
                dist_sum[c] += clusters.distances[i];
            }
        }
        let z = class_counts.iter().filter(|n| **n > 0).count();
        let mut audit = ClusterAudit {
            cluster,
            size: rows.len(),
            class_counts: class_counts.clone(),
            z,
            avgd: None,
            class: None,
            accepted: Vec::new(),
        };
        if z == 1 {
            let class = class_counts.iter().position(|n| *n > 0).unwrap();
            if class_counts[class] >= 2 {
                let avgd = dist_sum[class] / class_counts[class] as f64;
                audit.avgd = Some(avgd);
                audit.class = Some(class);
                for &i in rows {
                    let id = &clusters.ids[i];
                    if !labels.contains(id) && clusters.distances[i] <= avgd {
                        audit.accepted.push(id.clone());
                        result.new_labels.insert(id.clone(), class);
                    }
                }
            }
        }
        result.audit.push(audit);
    }
    Ok(result)
}

/// Union of the seed store and the new labels, marked as augmented.
pub fn merge_labels(seed_labels: &LabelStore, result: &AugmentationResult) -> Result<LabelStore> {
    let mut out = seed_labels.clone();
    for (id, class) in &result.new_labels {
        if out.contains(id) {
            return Err(Error::LabelCollision(id.clone()));
        }
        out.insert(id.clone(), *class, Provenance::Augmented)?;
    }
    Ok(out)
}

pub fn format_audit(result: &AugmentationResult, num_classes: usize) -> String {
    let mut out = String::from("cluster\tsize");
    for c in 0..num_classes {
        let _ = write!(out, "\t{}", class_name(c));
    }
    out.push_str("\tZ\tAVGD\taccepted\n");
    for a in &result.audit {
        let _ = write!(out, "{}\t{}", a.cluster, a.size);
        for n in &a.class_counts {
            let _ = write!(out, "\t{n}");
        }
        let avgd = a.avgd.map_or_else(|| "-".to_string(), |v| format!("{v:.9}"));
        let accepted = if a.accepted.is_empty() {
            "-".to_string()
        } else {
            a.accepted.join(",")
        };
        let _ = writeln!(out, "\t{}\t{avgd}\t{accepted}", a.z);
    }
    out
}

pub fn write_audit(path: &Path, result: &AugmentationResult, num_classes: usize) -> Result<()> {
    fs::write(path, format_audit(result, num_classes)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn manual(distances: Vec<f64>, membership: Vec<usize>, k: usize) -> ClusterAssignment {
        let n = distances.len();
        ClusterAssignment {
            k,
            centers: vec![vec![0.0]; k],
            ids: ids(n),
            membership,
            distances,
        }
    }

    #[test]
    fn single_cluster_center_is_mean() {
        let rows = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let fit = cluster_embeddings(&ids(3), &rows, 1, 0).unwrap();
        assert!((fit.centers[0][0] - 1.0).abs() < 1e-12);
        assert!((fit.centers[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(fit.membership, vec![0, 0, 0]);
    }

    #[test]
    fn separated_blobs() {
        let mut rows = Vec::new();
        for i in 0..5 {
            rows.push(vec![i as f64 * 0.1, 0.0]);
            rows.push(vec![10.0 + i as f64 * 0.1, 5.0]);
        }
        let fit = cluster_embeddings(&ids(10), &rows, 2, 4).unwrap();
        for i in 0..10 {
            assert_eq!(fit.membership[i] == fit.membership[0], i % 2 == 0);
            let d = sq_dist(&rows[i], &fit.centers[fit.membership[i]]).sqrt();
            assert!((d - fit.distances[i]).abs() < 1e-6);
        }
        assert_eq!(fit, cluster_embeddings(&ids(10), &rows, 2, 4).unwrap());
        let dup = vec![vec![1.0]; 5];
        assert!(matches!(
            cluster_embeddings(&ids(5), &dup, 2, 0),
            Err(Error::TooFewRows { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn avgd_gate_example() {
        // labeled A at 1.0 and 3.0; unlabeled at 0.5, 2.0, 2.5
        let clusters = manual(vec![1.0, 3.0, 0.5, 2.0, 2.5], vec![0; 5], 1);
        let mut labels = LabelStore::new(4);
        labels.insert("p0", 0, Provenance::Seed).unwrap();
        labels.insert("p1", 0, Provenance::Seed).unwrap();
        let r = augment_labels(&clusters, &labels).unwrap();
        assert_eq!(r.new_labels.keys().collect::<Vec<_>>(), vec!["p2", "p3"]);
        assert_eq!(r.audit[0].avgd, Some(2.0));
    }

    #[test]
    fn purity_and_count_gates() {
        let clusters = manual(vec![1.0, 1.0, 0.1, 1.0, 0.1], vec![0, 0, 0, 1, 1], 2);
        let mut labels = LabelStore::new(4);
        labels.insert("p0", 0, Provenance::Seed).unwrap();
        labels.insert("p1", 1, Provenance::Seed).unwrap();
        labels.insert("p3", 2, Provenance::Seed).unwrap();
        let r = augment_labels(&clusters, &labels).unwrap();
        assert!(r.new_labels.is_empty());
        assert_eq!(r.audit[0].z, 2);
        assert_eq!(r.audit[1].z, 1);
        assert_eq!(r.audit[1].avgd, None);
        let text = format_audit(&r, 4);
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn merge_marks_provenance() {
        let mut seed = LabelStore::new(4);
        seed.insert("a", 0, Provenance::Seed).unwrap();
        let same = merge_labels(&seed, &AugmentationResult::default()).unwrap();
        assert_eq!(same, seed);
        let mut r = AugmentationResult::default();
        r.new_labels.insert("b".into(), 1);
        let merged = merge_labels(&seed, &r).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.ids_with(Provenance::Augmented), vec!["b"]);
        r.new_labels.insert("a".into(), 1);
        assert!(matches!(merge_labels(&seed, &r), Err(Error::LabelCollision(_))));
    }
}
