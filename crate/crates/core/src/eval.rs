//! Evaluation protocol over a held-out identity split.
//!
//! * Verification: every unordered pair of test sets, score = -distance.
//! * Closed-set identification: the first set of each identity (dataset
//!   order) is its gallery entry; all other sets are probes.
//! * Open-set identification: identities at odd positions lose their gallery
//!   entry, so every one of their sets becomes an impostor probe.

use std::collections::BTreeMap;
use std::path::Path;

use crate::actor_critic::ActorCritic;
use crate::config::Distance;
use crate::data::{Dataset, FeatureSet};
use crate::env::infer_weights;
use crate::error::{Error, Result};
use crate::metrics::{cmc_curve, open_set_curve, rate_at, roc_curve, Curve};
use crate::pgr::{pgr_distance, pgr_represent, plain_distance, plain_represent, SetRepresentation};

pub const OPERATING_POINTS: [f64; 2] = [0.01, 0.1];

#[derive(Debug, Clone, Copy)]
pub enum Pooling<'a> {
    Policy(&'a ActorCritic),
    /// Unit weights for every member.
    Average,
}

pub fn set_weights(set: &FeatureSet, pooling: Pooling<'_>) -> Result<Vec<f64>> {
    match pooling {
        Pooling::Policy(p) => Ok(infer_weights(set, p)?.0),
        Pooling::Average => Ok(vec![1.0; set.len()]),
    }
}

pub fn represent(ds: &Dataset, pooling: Pooling<'_>, distance: Distance) -> Result<Vec<SetRepresentation>> {
    ds.sets
        .iter()
        .map(|s| {
            let w = set_weights(s, pooling)?;
            match distance {
                Distance::Plain => plain_represent(s, &w),
                Distance::Pgr => pgr_represent(s, &w),
            }
        })
        .collect()
}

/// Symmetric matrix of set distances; the upper triangle is computed and
/// mirrored.
pub fn distance_matrix(reps: &[SetRepresentation], distance: Distance) -> Result<Vec<Vec<f64>>> {
    let n = reps.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let d = match distance {
                Distance::Plain => plain_distance(&reps[i], &reps[j])?,
                Distance::Pgr => pgr_distance(&reps[i], &reps[j])?,
            };
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub roc: Curve,
    pub cmc: Vec<f64>,
    pub open_set: Curve,
    pub num_sets: usize,
    pub num_pairs: usize,
    pub num_probes: usize,
    pub num_open_probes: usize,
    /// Share of sets with planted outliers in which every outlier is weighted
    /// strictly below the set's median weight. `None` without quality labels.
    pub outliers_below_median: Option<f64>,
}

impl EvalReport {
    pub fn tar_at_far(&self, far: f64) -> f64 {
        rate_at(&self.roc, far)
    }

    pub fn tpir_at_fpir(&self, fpir: f64) -> f64 {
        rate_at(&self.open_set, fpir)
    }

    pub fn rank(&self, k: usize) -> f64 {
        self.cmc[(k.max(1) - 1).min(self.cmc.len() - 1)]
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = BTreeMap::new();
        for far in OPERATING_POINTS {
            m.insert(format!("tar_at_far_{far}"), serde_json::json!(self.tar_at_far(far)));
            m.insert(format!("tpir_at_fpir_{far}"), serde_json::json!(self.tpir_at_fpir(far)));
        }
        m.insert("rank1".into(), serde_json::json!(self.rank(1)));
        m.insert("rank5".into(), serde_json::json!(self.rank(5)));
        m.insert("num_sets".into(), serde_json::json!(self.num_sets));
        m.insert("num_pairs".into(), serde_json::json!(self.num_pairs));
        m.insert("num_probes".into(), serde_json::json!(self.num_probes));
        m.insert("num_open_set_probes".into(), serde_json::json!(self.num_open_probes));
        m.insert("outliers_below_median".into(), serde_json::json!(self.outliers_below_median));
        serde_json::json!(m)
    }

    /// `metrics.json`, `roc.csv`, `cmc.csv` and `open_set.csv` in `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        let mut json = serde_json::to_string_pretty(&self.to_json()).expect("report is valid JSON");
        json.push('\n');
        write("metrics.json", json)?;
        let curve = |header: &str, c: &Curve| -> String {
            let mut s = format!("{header}\n");
            for (x, y) in c {
                s.push_str(&format!("{x},{y}\n"));
            }
            s
        };
        write("roc.csv", curve("far,tar", &self.roc))?;
        write("open_set.csv", curve("fpir,tpir", &self.open_set))?;
        let mut cmc = String::from("rank,acc\n");
        for (k, a) in self.cmc.iter().enumerate() {
            cmc.push_str(&format!("{},{a}\n", k + 1));
        }
        write("cmc.csv", cmc)
    }
}

/// Gallery and probe indices for both identification protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub gallery: Vec<usize>,
    pub probes: Vec<usize>,
    pub open_gallery: Vec<usize>,
    pub open_probes: Vec<usize>,
}

pub fn protocol(ds: &Dataset) -> Protocol {
    let mut first: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, s) in ds.sets.iter().enumerate() {
        first.entry(s.identity).or_insert(i);
    }
    let gallery: Vec<usize> = first.values().copied().collect();
    let probes: Vec<usize> = (0..ds.sets.len()).filter(|i| !gallery.contains(i)).collect();
    let enrolled = |id: usize| id % 2 == 0;
    let open_gallery: Vec<usize> = first.iter().filter(|(id, _)| enrolled(**id)).map(|(_, &i)| i).collect();
    let open_probes: Vec<usize> = (0..ds.sets.len()).filter(|i| !open_gallery.contains(i)).collect();
    Protocol {
        gallery,
        probes,
        open_gallery,
        open_probes,
    }
}

fn submatrix(dist: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|&r| cols.iter().map(|&c| dist[r][c]).collect()).collect()
}

/// Fraction of outlier-bearing sets whose outliers all sit strictly below
/// the median weight.
pub fn outlier_rate(ds: &Dataset, weights: &[Vec<f64>]) -> Option<f64> {
    if ds.sets.iter().flat_map(|s| &s.members).all(|m| m.quality.is_none()) {
        return None;
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, w) in ds.sets.iter().zip(weights) {
        let outliers: Vec<usize> = (0..s.len()).filter(|&i| s.members[i].is_planted_outlier()).collect();
        if outliers.is_empty() || outliers.len() == s.len() {
            continue;
        }
        let mut sorted = w.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        total += 1;
        hit += usize::from(outliers.iter().all(|&i| w[i] < median));
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

pub fn evaluate(ds: &Dataset, pooling: Pooling<'_>, distance: Distance) -> Result<EvalReport> {
    let weights = ds.sets.iter().map(|s| set_weights(s, pooling)).collect::<Result<Vec<_>>>()?;
    let reps = represent(ds, pooling, distance)?;
    let dist = distance_matrix(&reps, distance)?;
    evaluate_matrix(ds, &dist, outlier_rate(ds, &weights))
}

pub fn evaluate_matrix(ds: &Dataset, dist: &[Vec<f64>], outliers: Option<f64>) -> Result<EvalReport> {
    let n = ds.sets.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((-dist[i][j], ds.sets[i].identity == ds.sets[j].identity));
        }
    }
    let roc = roc_curve(&pairs)?;
    let proto = protocol(ds);
    let ids = |idx: &[usize]| idx.iter().map(|&i| ds.sets[i].identity).collect::<Vec<_>>();
    if proto.probes.is_empty() {
        return Err(Error::Input("identification needs an identity with two or more sets".into()));
    }
    let cmc = cmc_curve(&submatrix(dist, &proto.probes, &proto.gallery), &ids(&proto.gallery), &ids(&proto.probes))?;
    let open_set = open_set_curve(
        &submatrix(dist, &proto.open_probes, &proto.open_gallery),
        &ids(&proto.open_gallery),
        &ids(&proto.open_probes),
    )?;
    Ok(EvalReport {
        roc,
        cmc,
        open_set,
        num_sets: n,
        num_pairs: pairs.len(),
        num_probes: proto.probes.len(),
        num_open_probes: proto.open_probes.len(),
        outliers_below_median: outliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor_critic::ActorCriticConfig;
    use crate::data::{gen_synthetic, SyntheticConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data() -> Dataset {
        gen_synthetic(&SyntheticConfig { num_identities: 6, dim: 6, ..Default::default() }, 4).unwrap()
    }

    #[test]
    fn protocol_partitions() {
        let ds = data();
        let p = protocol(&ds);
        assert_eq!(p.gallery.len(), 6);
        assert_eq!(p.gallery.len() + p.probes.len(), ds.sets.len());
        assert_eq!(p.open_gallery.len(), 3);
        let impostors = p.open_probes.iter().filter(|&&i| ds.sets[i].identity % 2 == 1).count();
        assert_eq!(impostors, 12);
    }

    #[test]
    fn zero_head_policy_matches_average_pooling() {
        let ds = data();
        let cfg = ActorCriticConfig { feature_dim: 6, trunk_widths: vec![8], head_hidden: vec![], num_classes: 3, lambda: 0.1, interaction: false };
        let ac = ActorCritic::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for d in [Distance::Plain, Distance::Pgr] {
            let a = distance_matrix(&represent(&ds, Pooling::Policy(&ac), d).unwrap(), d).unwrap();
            let b = distance_matrix(&represent(&ds, Pooling::Average, d).unwrap(), d).unwrap();
            assert_eq!(a, b);
            let ra = evaluate(&ds, Pooling::Policy(&ac), d).unwrap();
            let rb = evaluate(&ds, Pooling::Average, d).unwrap();
            assert_eq!(ra.to_json(), rb.to_json());
        }
    }

    #[test]
    fn outlier_rate_definition() {
        let mut ds = data();
        ds.sets.truncate(1);
        let s = &mut ds.sets[0];
        s.members.truncate(3);
        for (m, q) in s.members.iter_mut().zip([0.3, 0.9, 0.8]) {
            m.quality = Some(q);
        }
        assert_eq!(outlier_rate(&ds, &[vec![0.1, 1.0, 2.0]]), Some(1.0));
        assert_eq!(outlier_rate(&ds, &[vec![1.0, 1.0, 2.0]]), Some(0.0));
        assert_eq!(outlier_rate(&ds.without_quality(), &[vec![0.1, 1.0, 2.0]]), None);
    }

    #[test]
    fn report_files_are_written() {
        let ds = data();
        let r = evaluate(&ds, Pooling::Average, Distance::Plain).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_dir(dir.path()).unwrap();
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert!(json["tar_at_far_0.01"].is_number());
        let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
        assert!(roc.starts_with("far,tar\n0,0\n"));
    }
}
