//! Synthetic stand-in for a CNN embedding front-end.
//!
//! Every identity owns a unit-norm prototype `u` and a profile prototype
//! `u' = normalize(u + pose_shift_scale * v)`. A member draws its yaw first
//! (profile draws land above 30 degrees and use `u'`), then a quality
//! `q in (0.3, 1]`, and is placed at `normalize(base + (noise_scale / q) * g)`
//! where `g ~ N(0, I/d)` has unit expected squared norm. With probability
//! `outlier_rate` the member is swapped for an unrelated unit vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use super::{Dataset, FeatureSet, Member};
use crate::error::{Error, Result};

/// Quality recorded for planted outliers; genuine draws are strictly above it.
pub const OUTLIER_QUALITY: f64 = 0.3;

const FRONTAL_MAX_YAW: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_identities: usize,
    pub sets_per_identity: usize,
    pub set_size_min: usize,
    pub set_size_max: usize,
    pub dim: usize,
    pub noise_scale: f64,
    pub outlier_rate: f64,
    pub profile_rate: f64,
    pub pose_shift_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_identities: 50,
            sets_per_identity: 4,
            set_size_min: 2,
            set_size_max: 20,
            dim: 32,
            noise_scale: 0.4,
            outlier_rate: 0.15,
            profile_rate: 0.3,
            pose_shift_scale: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities == 0 {
            return Err(Error::config("ids", "need at least one identity"));
        }
        if self.sets_per_identity == 0 {
            return Err(Error::config("sets_per_id", "need at least one set per identity"));
        }
        if self.set_size_min < 1 {
            return Err(Error::config("set_size_min", "sets need at least one member"));
        }
        if self.set_size_max < self.set_size_min {
            return Err(Error::config("set_size_max", "must be >= set_size_min"));
        }
        if self.dim < 2 {
            return Err(Error::config("dim", format!("must be >= 2, got {}", self.dim)));
        }
        for (key, v) in [("outlier_rate", self.outlier_rate), ("profile_rate", self.profile_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(key, format!("must lie in [0, 1], got {v}")));
            }
        }
        for (key, v) in [("noise", self.noise_scale), ("pose_shift", self.pose_shift_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Generated data plus the prototypes it was drawn around.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub prototypes: Vec<Vec<f64>>,
    pub profile_prototypes: Vec<Vec<f64>>,
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        if v.iter().any(|&x| x != 0.0) {
            return normalize(v);
        }
    }
}

pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<Synthetic> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.dim;
    let noise_unit = 1.0 / (d as f64).sqrt();
    let mut sets = Vec::with_capacity(cfg.num_identities * cfg.sets_per_identity);
    let mut prototypes = Vec::with_capacity(cfg.num_identities);
    let mut profile_prototypes = Vec::with_capacity(cfg.num_identities);

    for id in 0..cfg.num_identities {
        let u = random_unit(&mut rng, d);
        let v = random_unit(&mut rng, d);
        let u_profile = normalize(u.iter().zip(&v).map(|(a, b)| a + cfg.pose_shift_scale * b).collect());

        for k in 0..cfg.sets_per_identity {
            let size = rng.random_range(cfg.set_size_min..=cfg.set_size_max);
            let mut members = Vec::with_capacity(size);
            for _ in 0..size {
                let profile = rng.random::<f64>() < cfg.profile_rate;
                let yaw = if profile {
                    // (30, 90]
                    90.0 - 60.0 * rng.random::<f64>()
                } else {
                    FRONTAL_MAX_YAW * rng.random::<f64>()
                };
                let base = if profile { &u_profile } else { &u };
                // (0.3, 1]
                let quality = 1.0 - (1.0 - OUTLIER_QUALITY) * rng.random::<f64>();
                let g = gaussian(&mut rng, d);
                let outlier = rng.random::<f64>() < cfg.outlier_rate;
                let replacement = random_unit(&mut rng, d);

                let (feature, quality) = if outlier {
                    (replacement, OUTLIER_QUALITY)
                } else if cfg.noise_scale > 0.0 {
                    let s = cfg.noise_scale / quality * noise_unit;
                    (normalize(base.iter().zip(&g).map(|(b, gi)| b + s * gi).collect()), quality)
                } else {
                    (base.clone(), quality)
                };
                members.push(Member {
                    feature,
                    yaw,
                    quality: Some(quality),
                });
            }
            sets.push(FeatureSet {
                set_id: format!("id{id:05}_s{k:03}"),
                identity: id,
                members,
            });
        }
        prototypes.push(u);
        profile_prototypes.push(u_profile);
    }

    Ok(Synthetic {
        dataset: Dataset::from_sets(sets, d)?,
        prototypes,
        profile_prototypes,
    })
}

pub fn gen_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    generate(cfg, seed).map(|s| s.dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_noise_members_equal_prototype() {
        let cfg = SyntheticConfig {
            num_identities: 5,
            noise_scale: 0.0,
            outlier_rate: 0.0,
            profile_rate: 0.0,
            ..Default::default()
        };
        let syn = generate(&cfg, 3).unwrap();
        for s in &syn.dataset.sets {
            for m in &s.members {
                assert_eq!(m.feature, syn.prototypes[s.identity]);
                assert!(m.yaw <= 30.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig::default();
        assert_eq!(gen_synthetic(&cfg, 11).unwrap(), gen_synthetic(&cfg, 11).unwrap());
        assert_ne!(gen_synthetic(&cfg, 11).unwrap(), gen_synthetic(&cfg, 12).unwrap());
    }

    #[test]
    fn within_identity_similarity_exceeds_cross_identity() {
        let cfg = SyntheticConfig::default();
        let ds = gen_synthetic(&cfg, 1).unwrap();
        let members: Vec<(usize, &[f64])> = ds
            .sets
            .iter()
            .flat_map(|s| s.members.iter().map(move |m| (s.identity, m.feature.as_slice())))
            .collect();
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                let c = cosine(members[i].1, members[j].1);
                if members[i].0 == members[j].0 {
                    within += c;
                    nw += 1;
                } else {
                    cross += c;
                    nc += 1;
                }
            }
        }
        let (within, cross) = (within / nw as f64, cross / nc as f64);
        assert!(within > cross + 0.2, "within {within} cross {cross}");
    }

    #[test]
    fn outliers_are_flagged_by_quality() {
        let cfg = SyntheticConfig {
            outlier_rate: 1.0,
            ..Default::default()
        };
        let ds = gen_synthetic(&cfg, 4).unwrap();
        assert!(ds.sets.iter().flat_map(|s| &s.members).all(|m| m.is_planted_outlier()));
        let ds = gen_synthetic(&SyntheticConfig { outlier_rate: 0.0, ..cfg }, 4).unwrap();
        assert!(ds.sets.iter().flat_map(|s| &s.members).all(|m| !m.is_planted_outlier()));
    }

    #[test]
    fn invalid_configs_name_their_key() {
        let err = gen_synthetic(&SyntheticConfig { dim: 0, ..Default::default() }, 0).unwrap_err();
        assert!(err.to_string().contains("dim"));
        let err = gen_synthetic(&SyntheticConfig { set_size_min: 0, ..Default::default() }, 0).unwrap_err();
        assert!(err.to_string().contains("set_size_min"));
        assert!(gen_synthetic(&SyntheticConfig { outlier_rate: 1.5, ..Default::default() }, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn generated_sets_satisfy_invariants(
            ids in 1usize..6,
            per in 1usize..4,
            lo in 1usize..5,
            extra in 0usize..6,
            dim in 2usize..12,
            noise in 0.0f64..2.0,
            outliers in 0.0f64..=1.0,
            profiles in 0.0f64..=1.0,
            shift in 0.0f64..2.0,
            seed in any::<u64>(),
        ) {
            let cfg = SyntheticConfig {
                num_identities: ids,
                sets_per_identity: per,
                set_size_min: lo,
                set_size_max: lo + extra,
                dim,
                noise_scale: noise,
                outlier_rate: outliers,
                profile_rate: profiles,
                pose_shift_scale: shift,
            };
            let ds = gen_synthetic(&cfg, seed).unwrap();
            prop_assert_eq!(ds.num_identities, ids);
            prop_assert_eq!(ds.sets.len(), ids * per);
            for s in &ds.sets {
                prop_assert!(s.len() >= lo && s.len() <= lo + extra);
                s.validate(dim).unwrap();
                for m in &s.members {
                    let n: f64 = m.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-12);
                    let q = m.quality.unwrap();
                    prop_assert!(q >= OUTLIER_QUALITY && q <= 1.0);
                }
            }
        }
    }
}
