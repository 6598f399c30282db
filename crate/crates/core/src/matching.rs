//! Normalised cross-correlation of signatures and gallery ranking.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgcore::ImageGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ScorePair {
    pub gallery_id: String,
    /// Correlation in `[-1, 1]`.
    pub rho: f64,
}

fn check_dims(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::param(format!(
            "signature dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn ncc_values(a: impl Iterator<Item = (f64, f64)> + Clone) -> Result<f64> {
    let (mut sa, mut sb, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in a.clone() {
        sa += x;
        sb += y;
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedScore("no pixels to correlate".into()));
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in a {
        let (u, v) = (x - ma, y - mb);
        num += u * v;
        da += u * u;
        db += v * v;
    }
    if da == 0.0 || db == 0.0 {
        return Err(Error::UndefinedScore("constant signature has no correlation".into()));
    }
    Ok((num / (da.sqrt() * db.sqrt())).clamp(-1.0, 1.0))
}

/// Cross-correlation coefficient over all pixels.
pub fn ncc(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_dims(a, b)?;
    ncc_values(a.data().iter().copied().zip(b.data().iter().copied()))
}

/// Cross-correlation coefficient over the pixels where `mask` is set.
pub fn ncc_masked(a: &ImageGrid, b: &ImageGrid, mask: &[bool]) -> Result<f64> {
    check_dims(a, b)?;
    if mask.len() != a.data().len() {
        return Err(Error::param("mask size differs from the signatures"));
    }
    let it = a
        .data()
        .iter()
        .zip(b.data())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&x, &y), _)| (x, y));
    ncc_values(it)
}

/// Sorts by descending score; equal scores keep gallery-id order.
pub fn rank_scores(mut scores: Vec<ScorePair>) -> Vec<ScorePair> {
    scores.sort_by(|a, b| b.rho.total_cmp(&a.rho).then_with(|| a.gallery_id.cmp(&b.gallery_id)));
    scores
}

/// Scores `probe` against every gallery signature, best first. With a mask
/// only the covered pixels take part.
pub fn match_one_to_gallery(
    probe: &ImageGrid,
    gallery: &BTreeMap<String, ImageGrid>,
    mask: Option<&[bool]>,
) -> Result<Vec<ScorePair>> {
    if gallery.is_empty() {
        return Err(Error::param("gallery is empty"));
    }
    let scores = gallery
        .par_iter()
        .map(|(id, g)| {
            let rho = match mask {
                Some(m) => ncc_masked(probe, g, m)?,
                None => ncc(probe, g)?,
            };
            Ok(ScorePair {
                gallery_id: id.clone(),
                rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_scores(scores))
}

/// Writes `probe_id,gallery_id,rho` lines.
pub fn write_scores_csv<W: Write>(out: W, rows: &[(String, ScorePair)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["probe_id", "gallery_id", "rho"])?;
    for (probe, s) in rows {
        w.write_record([probe.as_str(), s.gallery_id.as_str(), &format!("{:.9}", s.rho)])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, v: &[f64]) -> ImageGrid {
        ImageGrid::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_evaluated_anticorrelation() {
        // means 0.5, numerator -1, denominator 1
        let a = grid(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = grid(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(ncc(&a, &b).unwrap(), -1.0);
    }

    #[test]
    fn self_and_negation() {
        let a = grid(3, 1, &[0.1, 0.7, 0.3]);
        assert!((ncc(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((ncc(&a, &a.map(|v| -v)).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let a = grid(2, 1, &[0.0, 1.0]);
        let c = grid(2, 1, &[0.5, 0.5]);
        assert!(matches!(ncc(&a, &c), Err(Error::UndefinedScore(_))));
        assert!(matches!(ncc(&a, &grid(1, 2, &[0.0, 1.0])), Err(Error::Parameter(_))));
        assert!(match_one_to_gallery(&a, &BTreeMap::new(), None).is_err());
        assert!(matches!(ncc_masked(&a, &a, &[false, false]), Err(Error::UndefinedScore(_))));
    }

    #[test]
    fn mask_excludes_pixels() {
        let a = grid(3, 1, &[0.0, 1.0, 100.0]);
        let b = grid(3, 1, &[0.0, 1.0, -100.0]);
        assert!((ncc_masked(&a, &b, &[true, true, false]).unwrap() - 1.0).abs() < 1e-12);
        assert!(ncc(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn gallery_ranking() {
        let p = grid(3, 1, &[0.2, 0.9, 0.4]);
        let mut g = BTreeMap::new();
        g.insert("B".to_string(), p.map(|v| -v));
        g.insert("A".to_string(), p.clone());
        let r = match_one_to_gallery(&p, &g, None).unwrap();
        assert_eq!(r[0].gallery_id, "A");
        assert!((r[0].rho - 1.0).abs() < 1e-15);
        assert_eq!(r[1].gallery_id, "B");
        assert!((r[1].rho + 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_id() {
        let r = rank_scores(vec![
            ScorePair { gallery_id: "z".into(), rho: 0.5 },
            ScorePair { gallery_id: "a".into(), rho: 0.5 },
            ScorePair { gallery_id: "m".into(), rho: 0.9 },
        ]);
        let ids: Vec<&str> = r.iter().map(|s| s.gallery_id.as_str()).collect();
        assert_eq!(ids, ["m", "a", "z"]);
    }

    #[test]
    fn csv_lines() {
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &[("p1".into(), ScorePair { gallery_id: "g".into(), rho: 0.5 })]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "probe_id,gallery_id,rho\np1,g,0.500000000\n");
    }

    fn arb_pair() -> impl Strategy<Value = (ImageGrid, ImageGrid)> {
        (proptest::collection::vec(-1.0f64..1.0, 16), proptest::collection::vec(-1.0f64..1.0, 16))
            .prop_map(|(a, b)| (grid(4, 4, &a), grid(4, 4, &b)))
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_gain_invariant((a, b) in arb_pair(), gain in 0.01f64..100.0, off in -50.0f64..50.0) {
            let r = ncc(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - ncc(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((r - ncc(&a.map(|v| gain * v + off), &b).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ranking_matches_pairwise_scores(gal in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 9), 5), probe in proptest::collection::vec(0.0f64..1.0, 9)) {
            let p = grid(3, 3, &probe);
            let g: BTreeMap<String, ImageGrid> = gal.iter().enumerate().map(|(i, v)| (format!("g{i}"), grid(3, 3, v))).collect();
            let r = match_one_to_gallery(&p, &g, None).unwrap();
            prop_assert_eq!(r.len(), 5);
            for s in &r {
                prop_assert_eq!(s.rho, ncc(&p, &g[&s.gallery_id]).unwrap());
            }
            prop_assert!(r.windows(2).all(|w| w[0].rho >= w[1].rho));
        }
    }
}
