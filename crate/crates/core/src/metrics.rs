//! Verification and identification curves.
//!
//! Every operating point (`TAR@FAR`, `TPIR@FPIR`) is the best rate among
//! curve points whose false rate does not exceed the target. No
//! interpolation between thresholds.

use crate::error::{Error, Result};

/// `(false rate, true rate)` points ordered by increasing threshold looseness.
pub type Curve = Vec<(f64, f64)>;

/// ROC over `(score, same_identity)` pairs; a pair is accepted when its
/// score is at least the threshold. Starts at `(0, 0)` and visits every
/// distinct score from the highest down.
pub fn roc_curve(pairs: &[(f64, bool)]) -> Result<Curve> {
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input(format!("ROC needs both classes, got {pos} genuine and {neg} impostor pairs")));
    }
    if pairs.iter().any(|p| p.0.is_nan()) {
        return Err(Error::NonFinite("NaN verification score".into()));
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(curve)
}

/// Best true rate over points with false rate `<= target`.
pub fn rate_at(curve: &[(f64, f64)], target: f64) -> f64 {
    curve
        .iter()
        .filter(|p| p.0 <= target)
        .map(|p| p.1)
        .fold(0.0, f64::max)
}

fn check_matrix(dist: &[Vec<f64>], gallery_ids: &[usize], probe_ids: &[usize]) -> Result<()> {
    if gallery_ids.is_empty() || probe_ids.is_empty() {
        return Err(Error::Input("identification needs a gallery and probes".into()));
    }
    if dist.len() != probe_ids.len() || dist.iter().any(|r| r.len() != gallery_ids.len()) {
        return Err(Error::Shape(format!(
            "distance matrix is not {} x {}",
            probe_ids.len(),
            gallery_ids.len()
        )));
    }
    if dist.iter().flatten().any(|d| d.is_nan()) {
        return Err(Error::NonFinite("NaN in distance matrix".into()));
    }
    Ok(())
}

/// Rank of the true identity for one probe: one plus the number of wrong
/// gallery entries at or below the best correct distance. `None` when the
/// identity is missing from the gallery.
fn probe_rank(row: &[f64], gallery_ids: &[usize], id: usize) -> Option<usize> {
    let best = row
        .iter()
        .zip(gallery_ids)
        .filter(|(_, &g)| g == id)
        .map(|(d, _)| *d)
        .reduce(f64::min)?;
    Some(1 + row.iter().zip(gallery_ids).filter(|(d, &g)| g != id && **d <= best).count())
}

/// Identification accuracy at ranks `1..=gallery size`; ties count against
/// the probe.
pub fn cmc_curve(dist: &[Vec<f64>], gallery_ids: &[usize], probe_ids: &[usize]) -> Result<Vec<f64>> {
    check_matrix(dist, gallery_ids, probe_ids)?;
    let mut hits = vec![0usize; gallery_ids.len() + 1];
    for (p, (row, &id)) in dist.iter().zip(probe_ids).enumerate() {
        let rank = probe_rank(row, gallery_ids, id)
            .ok_or_else(|| Error::Input(format!("probe {p} has identity {id}, absent from the gallery")))?;
        hits[rank] += 1;
    }
    let n = probe_ids.len() as f64;
    let mut acc = Vec::with_capacity(gallery_ids.len());
    let mut cum = 0;
    for h in &hits[1..] {
        cum += h;
        acc.push(cum as f64 / n);
    }
    Ok(acc)
}

/// Open-set identification curve. A probe whose identity is absent from the
/// gallery is an impostor. Sweeping the acceptance threshold upward over
/// every distinct nearest-gallery distance, FPIR is the share of impostors
/// whose nearest distance is within it, TPIR the share of genuine probes that
/// are rank-1 correct and within it.
pub fn open_set_curve(dist: &[Vec<f64>], gallery_ids: &[usize], probe_ids: &[usize]) -> Result<Curve> {
    check_matrix(dist, gallery_ids, probe_ids)?;
    let mut probes = Vec::with_capacity(probe_ids.len());
    for (row, &id) in dist.iter().zip(probe_ids) {
        let nearest = row.iter().copied().fold(f64::INFINITY, f64::min);
        let genuine = gallery_ids.contains(&id);
        let correct = genuine && probe_rank(row, gallery_ids, id) == Some(1);
        probes.push((nearest, genuine, correct));
    }
    let impostors = probes.iter().filter(|p| !p.1).count();
    let genuine = probes.len() - impostors;
    if impostors == 0 {
        return Err(Error::Input("open-set evaluation needs impostor probes".into()));
    }
    if genuine == 0 {
        return Err(Error::Input("open-set evaluation needs genuine probes".into()));
    }
    probes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut curve = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < probes.len() {
        let tau = probes[i].0;
        while i < probes.len() && probes[i].0 == tau {
            if !probes[i].1 {
                fp += 1;
            } else if probes[i].2 {
                tp += 1;
            }
            i += 1;
        }
        curve.push((fp as f64 / impostors as f64, tp as f64 / genuine as f64));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_scores() {
        let pairs = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        let c = roc_curve(&pairs).unwrap();
        for far in [0.0, 0.01, 0.1, 0.5, 1.0] {
            assert_eq!(rate_at(&c, far), 1.0);
        }
        let inverted: Vec<(f64, bool)> = pairs.iter().map(|&(s, l)| (s, !l)).collect();
        assert_eq!(rate_at(&roc_curve(&inverted).unwrap(), 0.0), 0.0);
    }

    #[test]
    fn hand_case_roc() {
        let pairs = [(0.9, true), (0.4, true), (0.5, false), (0.1, false)];
        let c = roc_curve(&pairs).unwrap();
        assert_eq!(rate_at(&c, 0.0), 0.5);
        assert_eq!(rate_at(&c, 0.5), 1.0);
        assert!(roc_curve(&[(0.1, true)]).is_err());
    }

    #[test]
    fn cmc_examples() {
        let dist = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]];
        let c = cmc_curve(&dist, &[0, 1, 2], &[0, 1]).unwrap();
        assert_eq!(c, vec![1.0, 1.0, 1.0]);
        // One tie: probe 0 ties with a wrong entry, so it sits at rank 2.
        let dist = vec![vec![0.5, 0.5, 0.9], vec![0.3, 0.1, 0.2], vec![0.7, 0.8, 0.6]];
        let c = cmc_curve(&dist, &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(c, vec![2.0 / 3.0, 1.0, 1.0]);
        assert!(cmc_curve(&dist, &[0, 1, 2], &[0, 1, 5]).is_err());
    }

    #[test]
    fn open_set_limits() {
        let dist = vec![vec![0.1, 0.9], vec![0.8, 0.3], vec![0.2, 0.4], vec![0.6, 0.5]];
        let gallery = [0, 1];
        let probes = [0, 0, 7, 8];
        let c = open_set_curve(&dist, &gallery, &probes).unwrap();
        let last = *c.last().unwrap();
        assert_eq!(last.0, 1.0);
        let rank1 = cmc_curve(&dist[..2], &gallery, &probes[..2]).unwrap()[0];
        assert_eq!(last.1, rank1);
        assert_eq!(c[0], (0.0, 0.0));
        assert!(open_set_curve(&dist[..2], &gallery, &probes[..2]).is_err());
    }

    #[test]
    fn four_probe_hand_case() {
        // genuine: d=0.1 correct, d=0.3 wrong; impostors at 0.2 and 0.5
        let dist = vec![vec![0.1, 0.9], vec![0.8, 0.3], vec![0.2, 0.4], vec![0.6, 0.5]];
        let c = open_set_curve(&dist, &[0, 1], &[0, 0, 7, 8]).unwrap();
        assert_eq!(c, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 0.5), (1.0, 0.5)]);
        assert_eq!(rate_at(&c, 0.01), 0.5);
    }

    fn brute_rate(thresholds: &[f64], false_rate: impl Fn(f64) -> f64, true_rate: impl Fn(f64) -> f64, target: f64) -> f64 {
        let mut best = 0.0f64;
        for &t in thresholds {
            if false_rate(t) <= target {
                best = best.max(true_rate(t));
            }
        }
        best
    }

    fn grid(values: &[f64]) -> Vec<f64> {
        let mut t = vec![f64::NEG_INFINITY, f64::INFINITY];
        for &v in values {
            t.extend([v, v - 0.5, v + 0.5]);
        }
        t
    }

    #[test]
    fn metrics_match_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            // Integer-valued distances force frequent ties.
            let n_gal = rng.random_range(1..=8);
            let n_probe = rng.random_range(1..=8);
            let gallery: Vec<usize> = (0..n_gal).map(|_| rng.random_range(0..4)).collect();
            let dist: Vec<Vec<f64>> = (0..n_probe)
                .map(|_| (0..n_gal).map(|_| rng.random_range(0..5) as f64).collect())
                .collect();

            // CMC: sort each row with wrong identities first among ties.
            let closed: Vec<usize> = (0..n_probe).map(|_| gallery[rng.random_range(0..n_gal)]).collect();
            let cmc = cmc_curve(&dist, &gallery, &closed).unwrap();
            for k in 1..=n_gal {
                let mut hit = 0;
                for (row, &id) in dist.iter().zip(&closed) {
                    let mut idx: Vec<usize> = (0..n_gal).collect();
                    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then((gallery[a] == id).cmp(&(gallery[b] == id))));
                    if idx[..k].iter().any(|&j| gallery[j] == id) {
                        hit += 1;
                    }
                }
                assert_eq!(cmc[k - 1], hit as f64 / n_probe as f64);
            }

            // Open set: probe identities drawn from a wider range.
            let open: Vec<usize> = (0..n_probe).map(|_| rng.random_range(0..6)).collect();
            let known: Vec<bool> = open.iter().map(|id| gallery.contains(id)).collect();
            let n_imp = known.iter().filter(|k| !**k).count();
            if n_imp > 0 && n_imp < n_probe {
                let curve = open_set_curve(&dist, &gallery, &open).unwrap();
                let nearest: Vec<f64> = dist.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
                let correct: Vec<bool> = (0..n_probe)
                    .map(|p| {
                        known[p] && {
                            let best = (0..n_gal).filter(|&j| gallery[j] == open[p]).map(|j| dist[p][j]).fold(f64::INFINITY, f64::min);
                            (0..n_gal).all(|j| gallery[j] == open[p] || dist[p][j] > best)
                        }
                    })
                    .collect();
                let fpir = |t: f64| (0..n_probe).filter(|&p| !known[p] && nearest[p] <= t).count() as f64 / n_imp as f64;
                let tpir = |t: f64| (0..n_probe).filter(|&p| correct[p] && nearest[p] <= t).count() as f64 / (n_probe - n_imp) as f64;
                let th = grid(&nearest);
                for target in [0.0, 0.01, 0.1, 0.25, 0.5, 1.0] {
                    assert_eq!(rate_at(&curve, target), brute_rate(&th, &fpir, &tpir, target));
                }
                for (x, y) in &curve {
                    assert!(th.iter().any(|&t| fpir(t) == *x && tpir(t) == *y));
                }
            }

            // ROC on the flattened matrix.
            let pairs: Vec<(f64, bool)> = dist
                .iter()
                .zip(&closed)
                .flat_map(|(row, &id)| row.iter().zip(&gallery).map(move |(d, &g)| (-d, g == id)))
                .collect();
            let pos = pairs.iter().filter(|p| p.1).count();
            if pos > 0 && pos < pairs.len() {
                let curve = roc_curve(&pairs).unwrap();
                let neg = pairs.len() - pos;
                let far = |t: f64| pairs.iter().filter(|p| !p.1 && p.0 >= t).count() as f64 / neg as f64;
                let tar = |t: f64| pairs.iter().filter(|p| p.1 && p.0 >= t).count() as f64 / pos as f64;
                let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let th = grid(&scores);
                for target in [0.0, 0.01, 0.1, 0.3, 1.0] {
                    assert_eq!(rate_at(&curve, target), brute_rate(&th, &far, &tar, target));
                }
                for (x, y) in &curve {
                    assert!(th.iter().any(|&t| far(t) == *x && tar(t) == *y));
                }
            }
        }
    }

    #[test]
    fn curves_are_monotone_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let gallery: Vec<usize> = (0..6).collect();
            let probes: Vec<usize> = (0..8).map(|_| rng.random_range(0..9)).collect();
            let dist: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
            let scaled: Vec<Vec<f64>> = dist.iter().map(|r| r.iter().map(|d| d * 3.7).collect()).collect();
            let genuine: Vec<usize> = (0..8).filter(|&p| probes[p] < 6).collect();
            if genuine.is_empty() || genuine.len() == 8 {
                continue;
            }
            let c = open_set_curve(&dist, &gallery, &probes).unwrap();
            assert_eq!(c, open_set_curve(&scaled, &gallery, &probes).unwrap());
            assert!(c.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
            let d: Vec<Vec<f64>> = genuine.iter().map(|&p| dist[p].clone()).collect();
            let s: Vec<Vec<f64>> = genuine.iter().map(|&p| scaled[p].clone()).collect();
            let ids: Vec<usize> = genuine.iter().map(|&p| probes[p]).collect();
            let cmc = cmc_curve(&d, &gallery, &ids).unwrap();
            assert_eq!(cmc, cmc_curve(&s, &gallery, &ids).unwrap());
            assert!(cmc.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*cmc.last().unwrap(), 1.0);
            let pairs: Vec<(f64, bool)> = d.iter().zip(&ids).flat_map(|(r, &id)| r.iter().enumerate().map(move |(g, x)| (-x, g == id))).collect();
            let roc = roc_curve(&pairs).unwrap();
            assert!(roc.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }
    }
}
