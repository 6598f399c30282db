//! Ensemble directory layout: a text manifest plus one `AAM1` file per member
//! and one landmark file per signature frame.
//!
//! ```text
//! irface-ensemble 1
//! clusters_per_range 6
//! variance_keep 0.95
//! seed 0
//! frame_scale 0.75
//! frame_margin 2
//! signature_scale 1
//! frame <i> <yaw_min> <yaw_max> <width> <height> <landmark file>
//! model <i> <j> <yaw_min> <yaw_max> <aam file> [subject ...]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Ensemble, EnsembleConfig, PosePartition};
use crate::aam::{read_aam, write_aam, CanonicalFrame};
use crate::error::{Error, Result};
use crate::geometry::ShapeInstance;

pub const ENSEMBLE_MANIFEST: &str = "ensemble.txt";
const HEADER: &str = "irface-ensemble 1";

pub fn write_ensemble(ensemble: &Ensemble, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = ensemble.config();
    let mut text = format!("{HEADER}\n");
    let _ = writeln!(text, "clusters_per_range {}", c.clusters_per_range);
    let _ = writeln!(text, "variance_keep {}", c.variance_keep);
    let _ = writeln!(text, "seed {}", c.seed);
    let _ = writeln!(text, "frame_scale {}", c.frame_scale);
    let _ = writeln!(text, "frame_margin {}", c.frame_margin);
    let _ = writeln!(text, "signature_scale {}", c.signature_scale);
    for (i, frame) in ensemble.frames().iter().enumerate() {
        let (lo, hi) = c.partition.ranges[i];
        let (w, h) = frame.dims();
        let name = format!("frame_{i}.lmk");
        let path = dir.join(&name);
        std::fs::write(&path, frame.base.to_landmarks()).map_err(|e| Error::io(&path, e))?;
        let _ = writeln!(text, "frame {i} {lo} {hi} {w} {h} {name}");
    }
    for (&(i, j), model) in ensemble.models() {
        let (lo, hi) = c.partition.ranges[i];
        let name = format!("model_{i}_{j}.aam1");
        write_aam(model, dir.join(&name))?;
        let members = ensemble.members().get(&(i, j)).map(|m| m.join(" ")).unwrap_or_default();
        let _ = writeln!(text, "model {i} {j} {lo} {hi} {name} {members}");
    }
    let path = dir.join(ENSEMBLE_MANIFEST);
    std::fs::write(&path, text.trim_end().to_string() + "\n").map_err(|e| Error::io(&path, e))
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("ensemble manifest line {line}: bad {what}")))
}

pub fn read_ensemble(dir: impl AsRef<Path>) -> Result<Ensemble> {
    let dir = dir.as_ref();
    let path = dir.join(ENSEMBLE_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, HEADER)) => {}
        _ => return Err(Error::UnsupportedFormat(format!("{} is not an ensemble manifest", path.display()))),
    }
    let mut config = EnsembleConfig {
        partition: PosePartition { ranges: Vec::new() },
        ..Default::default()
    };
    let mut frame_rows = Vec::new();
    let mut models = BTreeMap::new();
    let mut members = BTreeMap::new();
    for (n, line) in lines {
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap_or_default();
        match key {
            "clusters_per_range" => config.clusters_per_range = field(tok.next(), n, key)?,
            "variance_keep" => config.variance_keep = field(tok.next(), n, key)?,
            "seed" => config.seed = field(tok.next(), n, key)?,
            "frame_scale" => config.frame_scale = field(tok.next(), n, key)?,
            "frame_margin" => config.frame_margin = field(tok.next(), n, key)?,
            "signature_scale" => config.signature_scale = field(tok.next(), n, key)?,
            "frame" => {
                let i: usize = field(tok.next(), n, "range index")?;
                let lo: f64 = field(tok.next(), n, "yaw_min")?;
                let hi: f64 = field(tok.next(), n, "yaw_max")?;
                let w: usize = field(tok.next(), n, "frame width")?;
                let h: usize = field(tok.next(), n, "frame height")?;
                let file: String = field(tok.next(), n, "landmark file")?;
                if i != config.partition.ranges.len() {
                    return Err(Error::MalformedHeader(format!("ensemble manifest line {n}: frames out of order")));
                }
                config.partition.ranges.push((lo, hi));
                frame_rows.push((w, h, file));
            }
            "model" => {
                let i: usize = field(tok.next(), n, "range index")?;
                let j: usize = field(tok.next(), n, "cluster index")?;
                let lo: f64 = field(tok.next(), n, "yaw_min")?;
                let hi: f64 = field(tok.next(), n, "yaw_max")?;
                let file: String = field(tok.next(), n, "model file")?;
                if config.partition.ranges.get(i) != Some(&(lo, hi)) {
                    return Err(Error::MalformedHeader(format!(
                        "ensemble manifest line {n}: model range disagrees with frame {i}"
                    )));
                }
                models.insert((i, j), read_aam(dir.join(file))?);
                members.insert((i, j), tok.map(str::to_string).collect());
            }
            other => {
                return Err(Error::MalformedHeader(format!("ensemble manifest line {n}: unknown key {other:?}")));
            }
        }
    }
    let mesh = models
        .values()
        .next()
        .map(|m| m.mesh().clone())
        .ok_or_else(|| Error::MalformedHeader("ensemble manifest lists no models".into()))?;
    let frames = frame_rows
        .into_iter()
        .map(|(w, h, file)| {
            let p = dir.join(file);
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            CanonicalFrame::new(&mesh, &ShapeInstance::parse_landmarks(&text)?, w, h)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(config, models, frames, members).map_err(|e| Error::MalformedHeader(e.to_string()))
}
