//! Dataset manifests: CSV with header `subject,yaw,image,landmarks,session`;
//! paths are relative to the manifest's directory and `landmarks`/`session`
//! may be empty.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{generate_synthetic_dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::geometry::ShapeInstance;
use crate::imgcore::{read_image, write_image, ImageGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub yaw: f64,
    pub image: PathBuf,
    #[serde(default, deserialize_with = "empty_path")]
    pub landmarks: Option<PathBuf>,
    #[serde(default, deserialize_with = "empty_string")]
    pub session: Option<String>,
}

fn empty_path<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<PathBuf>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()).map(PathBuf::from))
}

fn empty_string<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()))
}

impl ManifestEntry {
    /// Identifier used in reports: the image file stem.
    pub fn id(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// One image of a dataset held in memory.
#[derive(Debug, Clone)]
pub struct LabelledImage {
    pub id: String,
    pub subject: String,
    pub yaw: f64,
    pub image: ImageGrid,
    pub landmarks: Option<ShapeInstance>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let entries = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| csv_error(path, e))?;
        let m = Self {
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Annotation("manifest lists no images".into()));
        }
        for e in &self.entries {
            if e.subject.is_empty() {
                return Err(Error::Annotation(format!("{}: empty subject id", e.image.display())));
            }
            if !(0.0..=90.0).contains(&e.yaw) {
                return Err(Error::Annotation(format!("{}: yaw {} outside [0, 90]", e.image.display(), e.yaw)));
            }
            for p in std::iter::once(&e.image).chain(&e.landmarks) {
                if !self.root.join(p).is_file() {
                    return Err(Error::Annotation(format!("missing file {}", self.root.join(p).display())));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["subject", "yaw", "image", "landmarks", "session"])
            .map_err(|e| csv_error(path, e))?;
        for e in &self.entries {
            let lm = e.landmarks.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            w.write_record([
                e.subject.as_str(),
                &e.yaw.to_string(),
                &e.image.display().to_string(),
                &lm,
                e.session.as_deref().unwrap_or(""),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads every image and landmark file.
    pub fn load(&self) -> Result<Vec<LabelledImage>> {
        self.entries
            .iter()
            .map(|e| {
                let landmarks = match &e.landmarks {
                    Some(p) => {
                        let p = self.root.join(p);
                        let text = std::fs::read_to_string(&p).map_err(|err| Error::io(&p, err))?;
                        Some(ShapeInstance::parse_landmarks(&text)?)
                    }
                    None => None,
                };
                Ok(LabelledImage {
                    id: e.id(),
                    subject: e.subject.clone(),
                    yaw: e.yaw,
                    image: read_image(self.root.join(&e.image))?,
                    landmarks,
                })
            })
            .collect()
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Annotation(format!("{}: {e}", path.display())),
    }
}

/// In-memory synthetic dataset with ids `sNN_yIII` (subject, yaw in tenths
/// of a degree) and subjects `sNN`.
pub fn synthetic_images(spec: &SynthSpec) -> Result<Vec<LabelledImage>> {
    Ok(generate_synthetic_dataset(spec)?
        .into_iter()
        .map(|s| {
            let subject = format!("s{:02}", s.subject);
            LabelledImage {
                id: format!("{subject}_y{:04}", (s.yaw * 10.0).round() as i64),
                subject,
                yaw: s.yaw,
                image: s.image,
                landmarks: Some(s.landmarks),
            }
        })
        .collect())
}

/// Renders `spec` into `dir` (TFR1 images, landmark files and
/// `manifest.csv`) and returns the manifest.
pub fn write_synthetic_dataset(spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for img in synthetic_images(spec)? {
        let image = PathBuf::from(format!("{}.tfr", img.id));
        let lmk = PathBuf::from(format!("{}.lmk", img.id));
        write_image(&img.image, dir.join(&image))?;
        if let Some(l) = &img.landmarks {
            let p = dir.join(&lmk);
            std::fs::write(&p, l.to_landmarks()).map_err(|e| Error::io(&p, e))?;
        }
        entries.push(ManifestEntry {
            subject: img.subject,
            yaw: img.yaw,
            image,
            landmarks: Some(lmk),
            session: None,
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        entries,
    };
    manifest.write(dir.join("manifest.csv"))?;
    Ok(manifest)
}
