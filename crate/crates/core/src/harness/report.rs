//! Report files: `cmc.csv`, `roc.csv`, `scores.csv`, `bands.csv`,
//! `probes.csv` and `summary.txt`. Numbers use fixed precision so that equal
//! reports are byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use super::protocol::EvalReport;
use super::stats::{mean, RocPoint};
use crate::error::{Error, Result};
use crate::matching::write_scores_csv;

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

fn roc_rows(out: &mut String, band: &str, roc: &[RocPoint]) {
    for p in roc {
        let t = if p.threshold.is_finite() { format!("{:.9}", p.threshold) } else { "inf".into() };
        let _ = writeln!(out, "{band},{t},{:.9},{:.9}", p.far, p.tar);
    }
}

fn fmt_mean(v: &[f64]) -> String {
    if v.is_empty() {
        "nan".into()
    } else {
        format!("{:.6}", mean(v))
    }
}

pub fn summary_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "probes evaluated: {}", r.outcomes.len());
    let _ = writeln!(s, "probes excluded: {}", r.excluded_probes);
    let _ = writeln!(s, "gallery size: {}", r.gallery.len());
    let _ = writeln!(s, "enrollment seed: {}", r.enrollment_seed);
    for (n, v) in r.cmc.iter().enumerate().take(5) {
        let _ = writeln!(s, "rank-{} rate: {:.4}", n + 1, v);
    }
    let _ = writeln!(s, "mean intra-class score: {}", fmt_mean(&r.intra_scores));
    let _ = writeln!(s, "mean inter-class score: {}", fmt_mean(&r.inter_scores));
    for b in &r.bands {
        let r1 = b.cmc.first().map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(s, "yaw difference {}-{}: {} probes, rank-1 {}", b.range.0, b.range.1, b.probes, r1);
    }
    for (id, why) in &r.excluded {
        let _ = writeln!(s, "excluded {id}: {why}");
    }
    s
}

pub fn write_report(r: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut cmc = String::from("rank,rate\n");
    for (n, v) in r.cmc.iter().enumerate() {
        let _ = writeln!(cmc, "{},{v:.9}", n + 1);
    }
    write(dir, "cmc.csv", &cmc)?;

    let mut roc = String::from("band,threshold,far,tar\n");
    roc_rows(&mut roc, "all", &r.roc);
    for b in &r.bands {
        roc_rows(&mut roc, &format!("{}-{}", b.range.0, b.range.1), &b.roc);
    }
    write(dir, "roc.csv", &roc)?;

    let rows: Vec<_> = r
        .outcomes
        .iter()
        .flat_map(|o| o.ranking.iter().map(move |s| (o.probe_id.clone(), s.clone())))
        .collect();
    let mut scores = Vec::new();
    write_scores_csv(&mut scores, &rows).map_err(|e| Error::io(dir.join("scores.csv"), e))?;
    write(dir, "scores.csv", &String::from_utf8_lossy(&scores))?;

    let mut bands = String::from("band,probes,rank1,mean_intra,mean_inter\n");
    for b in &r.bands {
        let r1 = b.cmc.first().map(|v| format!("{v:.9}")).unwrap_or_else(|| "nan".into());
        let _ = writeln!(
            bands,
            "{}-{},{},{r1},{},{}",
            b.range.0,
            b.range.1,
            b.probes,
            fmt_mean(&b.intra_scores),
            fmt_mean(&b.inter_scores)
        );
    }
    write(dir, "bands.csv", &bands)?;

    let mut probes = String::from("probe_id,subject,yaw,yaw_difference,rank\n");
    for o in &r.outcomes {
        let _ = writeln!(probes, "{},{},{},{},{}", o.probe_id, o.subject, o.yaw, o.yaw_difference, o.rank);
    }
    write(dir, "probes.csv", &probes)?;

    write(dir, "summary.txt", &summary_text(r))
}
