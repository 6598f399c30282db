use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centre; ties go to the lower index.
fn nearest(v: &[f64], centres: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centres.iter().enumerate() {
        let d = dist2(v, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn mean_of(rows: impl Iterator<Item = usize> + Clone, data: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = rows.clone().count();
    if n == 0 {
        return None;
    }
    let mut m = vec![0.0; data[0].len()];
    for r in rows {
        m.iter_mut().zip(&data[r]).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= n as f64);
    Some(m)
}

/// k-means++ seeding followed by Lloyd iterations. Returns labels and centres.
pub(crate) fn kmeans(data: &[Vec<f64>], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if k == 0 {
        return Err(Error::param("k-means needs k >= 1"));
    }
    if data.len() < k {
        return Err(Error::param(format!("k-means with k = {k} needs at least {k} samples, got {}", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres = vec![data[rng.random_range(0..data.len())].clone()];
    while centres.len() < k {
        let d: Vec<f64> = data.iter().map(|v| nearest(v, &centres).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = d.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if r < di {
                    idx = i;
                    break;
                }
                r -= di;
            }
            idx
        } else {
            rng.random_range(0..data.len())
        };
        centres.push(data[pick].clone());
    }

    let mut labels = vec![usize::MAX; data.len()];
    for _ in 0..100 {
        let new: Vec<usize> = data.iter().map(|v| nearest(v, &centres).0).collect();
        if new == labels {
            break;
        }
        labels = new;
        for (j, centre) in centres.iter_mut().enumerate() {
            match mean_of((0..data.len()).filter(|&i| labels[i] == j), data) {
                Some(m) => *centre = m,
                None => {
                    // refill an empty cluster with the worst-fitting sample
                    let far = (0..data.len())
                        .max_by(|&a, &b| {
                            let (da, db) = (dist2(&data[a], &data[labels[a]]), dist2(&data[b], &data[labels[b]]));
                            da.total_cmp(&db).then(b.cmp(&a))
                        })
                        .unwrap_or(0);
                    *centre = data[far].clone();
                }
            }
        }
    }
    Ok((labels, centres))
}

/// Assigns every person to the majority label of their samples (ties go to
/// the lower label), then moves people into clusters left empty, taking each
/// from a cluster that keeps at least one person.
pub(crate) fn person_vote(
    labels: &[usize],
    persons: &[&str],
    data: &[Vec<f64>],
    centres: &[Vec<f64>],
) -> Vec<usize> {
    let k = centres.len();
    let mut by_person: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in persons.iter().enumerate() {
        by_person.entry(p).or_default().push(i);
    }
    let mut assign: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, rows) in &by_person {
        let mut counts = vec![0usize; k];
        rows.iter().for_each(|&r| counts[labels[r]] += 1);
        let best = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
        assign.insert(p, best);
    }
    let person_mean: BTreeMap<&str, Vec<f64>> = by_person
        .iter()
        .map(|(p, rows)| (*p, mean_of(rows.iter().copied(), data).unwrap_or_default()))
        .collect();
    loop {
        let mut members = vec![0usize; k];
        assign.values().for_each(|&c| members[c] += 1);
        let Some(empty) = (0..k).find(|&c| members[c] == 0) else {
            break;
        };
        let donor = assign
            .iter()
            .filter(|(_, &c)| members[c] >= 2)
            .map(|(p, _)| (*p, dist2(&person_mean[p], &centres[empty])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
        match donor {
            Some((p, _)) => {
                assign.insert(p, empty);
            }
            None => break,
        }
    }
    persons.iter().map(|p| assign[p]).collect()
}
