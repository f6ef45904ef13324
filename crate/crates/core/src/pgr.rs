//! Pose-guided set representation and the routed set distance.
//!
//! A set is split at 30 degrees of yaw into frontal and profile groups. Each
//! group is pooled with the weights the policy assigned while looking at the
//! whole set, and carries the share `p_i` of the total weight it holds.
//!
//! The routed distance of a set to itself is not zero when both of its pose
//! groups are populated, because the frontal/profile cross terms enter with
//! positive mass. That is kept as is.

use crate::data::FeatureSet;
use crate::env::{aggregate, relative_weights};
use crate::error::{Error, Result};

pub const FRONTAL_MAX_YAW: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SetRepresentation {
    pub f0: Vec<f64>,
    /// Frontal group, absent when empty.
    pub f1: Option<Vec<f64>>,
    /// Profile group, absent when empty.
    pub f2: Option<Vec<f64>>,
    pub p1: f64,
    pub p2: f64,
}

/// Member indices with `yaw <= threshold` and with `yaw > threshold`.
pub fn route_by_pose(set: &FeatureSet, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    (0..set.len()).partition(|&i| set.members[i].yaw <= threshold)
}

pub fn pgr_represent(set: &FeatureSet, weights: &[f64]) -> Result<SetRepresentation> {
    if weights.len() != set.len() {
        return Err(Error::Shape(format!(
            "{} weights for set `{}` of {} members",
            weights.len(),
            set.set_id,
            set.len()
        )));
    }
    let features = set.features();
    let f0 = aggregate(&features, weights)?;
    let rel = relative_weights(weights);
    let total: f64 = rel.iter().sum();
    let (frontal, profile) = route_by_pose(set, FRONTAL_MAX_YAW);
    let group = |idx: &[usize]| -> Result<(Option<Vec<f64>>, f64)> {
        if idx.is_empty() {
            return Ok((None, 0.0));
        }
        let f: Vec<&[f64]> = idx.iter().map(|&i| features[i]).collect();
        let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
        let mass: f64 = idx.iter().map(|&i| rel[i]).sum();
        Ok((Some(aggregate(&f, &w)?), mass / total))
    };
    let (f1, p1) = group(&frontal)?;
    let (f2, p2) = group(&profile)?;
    Ok(SetRepresentation { f0, f1, f2, p1, p2 })
}

/// Representation with only the pooled vector; both groups absent.
pub fn plain_represent(set: &FeatureSet, weights: &[f64]) -> Result<SetRepresentation> {
    Ok(SetRepresentation {
        f0: aggregate(&set.features(), weights)?,
        f1: None,
        f2: None,
        p1: 0.0,
        p2: 0.0,
    })
}

pub fn l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of dim {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn plain_distance(a: &SetRepresentation, b: &SetRepresentation) -> Result<f64> {
    l2(&a.f0, &b.f0)
}

pub fn pgr_distance(a: &SetRepresentation, b: &SetRepresentation) -> Result<f64> {
    let general = l2(&a.f0, &b.f0)?;
    let ga = [(&a.f1, a.p1), (&a.f2, a.p2)];
    let gb = [(&b.f1, b.p1), (&b.f2, b.p2)];
    let mut routed = 0.0;
    for (fa, pa) in ga {
        for (fb, pb) in gb {
            if let (Some(fa), Some(fb)) = (fa, fb) {
                routed += l2(fa, fb)? * pa * pb;
            }
        }
    }
    Ok(0.5 * general + 0.5 * routed)
}
