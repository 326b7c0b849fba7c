use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette coefficient under Euclidean distance. Points in
/// singleton clusters contribute 0.
pub fn silhouette<P: AsRef<[f64]>>(points: &[P], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Validation("silhouette: points and labels differ in length".into()));
    }
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(Error::Validation("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    for (i, pi) in points.iter().enumerate() {
        let mut sums = vec![(0.0, 0usize); clusters.len()];
        for (j, pj) in points.iter().enumerate() {
            if i != j {
                let k = clusters.binary_search(&labels[j]).expect("label is listed");
                sums[k].0 += dist(pi.as_ref(), pj.as_ref());
                sums[k].1 += 1;
            }
        }
        let own = clusters.binary_search(&labels[i]).expect("label is listed");
        if sums[own].1 == 0 {
            continue;
        }
        let a = sums[own].0 / sums[own].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|(k, s)| *k != own && s.1 > 0)
            .map(|(_, s)| s.0 / s.1 as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}

/// Mean distance between same-class points from different domains divided
/// by the mean distance between same-class points from the same domain.
/// Values well above 1 mean each class splits by domain.
pub fn cross_domain_ratio<P: AsRef<[f64]>>(points: &[P], classes: &[usize], domains: &[usize]) -> Result<f64> {
    if points.len() != classes.len() || points.len() != domains.len() {
        return Err(Error::Validation("cross_domain_ratio: input lengths differ".into()));
    }
    let (mut cross, mut n_cross, mut within, mut n_within) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if classes[i] != classes[j] {
                continue;
            }
            let d = dist(points[i].as_ref(), points[j].as_ref());
            if domains[i] == domains[j] {
                within += d;
                n_within += 1;
            } else {
                cross += d;
                n_cross += 1;
            }
        }
    }
    if n_cross == 0 || n_within == 0 {
        return Err(Error::Validation(
            "cross_domain_ratio needs same-class pairs both within and across domains".into(),
        ));
    }
    let within = within / n_within as f64;
    if within == 0.0 {
        return Err(Error::Validation("cross_domain_ratio: zero within-domain spread".into()));
    }
    Ok(cross / n_cross as f64 / within)
}
