use crate::error::{Error, Result};

/// Fraction of probes whose true identity appears at rank `<= N`, for
/// `N = 1..=max_rank`. `None` marks an excluded probe: it stays in the
/// denominator but never counts as a hit.
pub fn cmc_curve(ranks: &[Option<usize>], max_rank: usize) -> Result<Vec<f64>> {
    if ranks.is_empty() || max_rank == 0 {
        return Err(Error::param("CMC needs at least one probe and one rank"));
    }
    let total = ranks.len() as f64;
    Ok((1..=max_rank)
        .map(|n| ranks.iter().filter(|r| r.is_some_and(|r| r <= n)).count() as f64 / total)
        .collect())
}

/// One operating point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

/// Sweeps the acceptance threshold over every distinct score, from above all
/// scores (0, 0) down to the lowest score (1, 1).
pub fn roc_curve(intra: &[f64], inter: &[f64]) -> Result<Vec<RocPoint>> {
    if intra.is_empty() || inter.is_empty() {
        return Err(Error::param("ROC needs both intra-class and inter-class scores"));
    }
    let mut thresholds: Vec<f64> = intra.iter().chain(inter).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let rate = |s: &[f64], t: f64| s.iter().filter(|&&v| v >= t).count() as f64 / s.len() as f64;
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tar: 0.0,
    }];
    out.extend(thresholds.into_iter().map(|t| RocPoint {
        threshold: t,
        far: rate(inter, t),
        tar: rate(intra, t),
    }));
    Ok(out)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
