use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::PipelineConfig;
use super::dataset::LabelledImage;
use super::stats::{cmc_curve, mean, roc_curve, RocPoint};
use crate::aam::TrainingSample;
use crate::ensemble::{normalize_prepared, prepare_image, train_ensemble, AnnotatedSample, Ensemble, PreparedImage, StageParams};
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::matching::{ncc_masked, rank_scores, ScorePair};

/// Yaw-difference bands of the breakdown, degrees; the last band is closed.
pub const YAW_BANDS: [(f64, f64); 3] = [(0.0, 30.0), (30.0, 60.0), (60.0, 90.0)];

fn band_of(d: f64) -> usize {
    YAW_BANDS.iter().position(|&(_, hi)| d < hi).unwrap_or(YAW_BANDS.len() - 1)
}

/// Outcome of one probe against the whole gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub probe_id: String,
    pub subject: String,
    pub yaw: f64,
    /// Ranked scores, best first.
    pub ranking: Vec<ScorePair>,
    /// 1-based rank of the true identity.
    pub rank: usize,
    /// `|yaw(probe) - yaw(enrolled image of the true identity)|`.
    pub yaw_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandReport {
    pub range: (f64, f64),
    pub probes: usize,
    pub cmc: Vec<f64>,
    pub intra_scores: Vec<f64>,
    pub inter_scores: Vec<f64>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Rank-N identification rate over all probes, excluded ones counted as misses.
    pub cmc: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub intra_scores: Vec<f64>,
    pub inter_scores: Vec<f64>,
    pub bands: Vec<BandReport>,
    pub outcomes: Vec<ProbeOutcome>,
    /// Enrolled image id per subject.
    pub gallery: BTreeMap<String, String>,
    /// Images left out, with the reason.
    pub excluded: Vec<(String, String)>,
    /// Probes that could not be scored (also listed in `excluded`).
    pub excluded_probes: usize,
    pub enrollment_seed: u64,
}

/// One enrolled image per subject, chosen uniformly with `seed`; subjects are
/// visited in sorted order.
pub fn choose_enrollment(images: &[LabelledImage], seed: u64) -> BTreeMap<String, usize> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, img) in images.iter().enumerate() {
        by_subject.entry(&img.subject).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    by_subject
        .into_iter()
        .map(|(s, idx)| (s.to_string(), idx[rng.random_range(0..idx.len())]))
        .collect()
}

/// Builds ensemble training samples from every annotated image.
pub fn training_samples(images: &[LabelledImage], params: &StageParams) -> Result<Vec<AnnotatedSample>> {
    images
        .par_iter()
        .filter_map(|img| img.landmarks.as_ref().map(|l| (img, l)))
        .map(|(img, landmarks)| {
            let (seg, enhanced) = params.preprocess(&img.image)?;
            Ok(AnnotatedSample {
                subject: img.subject.clone(),
                yaw: img.yaw,
                raw: seg.image,
                sample: TrainingSample {
                    image: enhanced,
                    shape: landmarks.clone(),
                    ellipse: Some(seg.ellipse),
                },
            })
        })
        .collect()
}

/// Trains the ensemble on the annotated images of a dataset.
pub fn train_from_images(images: &[LabelledImage], config: &PipelineConfig) -> Result<Ensemble> {
    config.validate()?;
    let samples = training_samples(images, &config.stage_params())?;
    train_ensemble(&samples, &Mesh::default_face(), &config.ensemble)
}

/// Scores probes against a gallery of prepared images.
pub fn evaluate_prepared(
    ensemble: &Ensemble,
    gallery: &BTreeMap<String, (f64, &PreparedImage)>,
    probes: &[(String, String, f64, &PreparedImage)],
) -> Result<Vec<ProbeOutcome>> {
    if gallery.is_empty() {
        return Err(Error::param("gallery is empty"));
    }
    probes
        .par_iter()
        .map(|(id, subject, yaw, probe)| {
            let scores = gallery
                .iter()
                .map(|(gid, (_, g))| {
                    let pair = normalize_prepared(ensemble, probe, g)?;
                    let mask = ensemble.frame(pair.range).raster.mask();
                    Ok(ScorePair {
                        gallery_id: gid.clone(),
                        rho: ncc_masked(&pair.a, &pair.b, &mask)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let ranking = rank_scores(scores);
            let rank = ranking
                .iter()
                .position(|s| &s.gallery_id == subject)
                .map(|p| p + 1)
                .ok_or_else(|| Error::Precondition(format!("subject {subject} is not enrolled")))?;
            Ok(ProbeOutcome {
                probe_id: id.clone(),
                subject: subject.clone(),
                yaw: *yaw,
                ranking,
                rank,
                yaw_difference: (yaw - gallery[subject].0).abs(),
            })
        })
        .collect()
}

fn split_scores(outcomes: &[&ProbeOutcome]) -> (Vec<f64>, Vec<f64>) {
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for o in outcomes {
        for s in &o.ranking {
            if s.gallery_id == o.subject {
                intra.push(s.rho);
            } else {
                inter.push(s.rho);
            }
        }
    }
    (intra, inter)
}

/// Single-image enrollment protocol on an in-memory dataset: train on every
/// annotated image, enroll one image per subject and probe with the rest.
pub fn run_protocol_images(images: &[LabelledImage], config: &PipelineConfig) -> Result<EvalReport> {
    let ensemble = train_from_images(images, config)?;
    evaluate_with(&ensemble, images, config)
}

/// The protocol with an already trained ensemble.
pub fn evaluate_with(ensemble: &Ensemble, images: &[LabelledImage], config: &PipelineConfig) -> Result<EvalReport> {
    config.validate()?;
    let mut per_subject: BTreeMap<&str, usize> = BTreeMap::new();
    images.iter().for_each(|i| *per_subject.entry(&i.subject).or_default() += 1);
    if let Some((s, _)) = per_subject.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Precondition(format!("subject {s} has fewer than 2 images")));
    }
    let params = config.stage_params();
    let prepared: Vec<Result<PreparedImage>> = images
        .par_iter()
        .map(|img| prepare_image(ensemble, &img.image, &params))
        .collect();
    let mut excluded = Vec::new();
    for (img, p) in images.iter().zip(&prepared) {
        if let Err(e) = p {
            if e.is_data_error() {
                return Err(Error::Precondition(format!("{}: {e}", img.id)));
            }
            excluded.push((img.id.clone(), e.to_string()));
        }
    }
    let enrolled = choose_enrollment(images, config.protocol.enrollment_seed);
    let mut gallery = BTreeMap::new();
    let mut gallery_ids = BTreeMap::new();
    for (subject, &i) in &enrolled {
        if let Ok(p) = &prepared[i] {
            gallery.insert(subject.clone(), (images[i].yaw, p));
            gallery_ids.insert(subject.clone(), images[i].id.clone());
        }
    }
    let enrolled_idx: Vec<usize> = enrolled.values().copied().collect();
    let mut probes = Vec::new();
    let mut excluded_probes = 0;
    for (i, img) in images.iter().enumerate() {
        if enrolled_idx.contains(&i) {
            continue;
        }
        match &prepared[i] {
            Ok(p) if gallery.contains_key(&img.subject) => {
                probes.push((img.id.clone(), img.subject.clone(), img.yaw, p));
            }
            Ok(_) => {
                excluded_probes += 1;
                excluded.push((img.id.clone(), format!("subject {} has no usable gallery image", img.subject)));
            }
            Err(_) => excluded_probes += 1,
        }
    }
    if probes.is_empty() {
        return Err(Error::Precondition("no probe could be evaluated".into()));
    }
    let outcomes = evaluate_prepared(ensemble, &gallery, &probes)?;
    let max_rank = gallery.len();
    let ranks_with = |os: &[&ProbeOutcome], missing: usize| {
        let mut r: Vec<Option<usize>> = os.iter().map(|o| Some(o.rank)).collect();
        r.extend(std::iter::repeat_n(None, missing));
        r
    };
    let all: Vec<&ProbeOutcome> = outcomes.iter().collect();
    let cmc = cmc_curve(&ranks_with(&all, excluded_probes), max_rank)?;
    let (intra_scores, inter_scores) = split_scores(&all);
    let roc = if inter_scores.is_empty() {
        Vec::new()
    } else {
        roc_curve(&intra_scores, &inter_scores)?
    };
    let bands = YAW_BANDS
        .iter()
        .enumerate()
        .map(|(b, &range)| {
            let os: Vec<&ProbeOutcome> = outcomes.iter().filter(|o| band_of(o.yaw_difference) == b).collect();
            let (intra, inter) = split_scores(&os);
            Ok(BandReport {
                range,
                probes: os.len(),
                cmc: if os.is_empty() { Vec::new() } else { cmc_curve(&ranks_with(&os, 0), max_rank)? },
                roc: if intra.is_empty() || inter.is_empty() { Vec::new() } else { roc_curve(&intra, &inter)? },
                intra_scores: intra,
                inter_scores: inter,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    excluded.sort();
    Ok(EvalReport {
        cmc,
        roc,
        intra_scores,
        inter_scores,
        bands,
        outcomes,
        gallery: gallery_ids,
        excluded,
        excluded_probes,
        enrollment_seed: config.protocol.enrollment_seed,
    })
}

impl EvalReport {
    pub fn rank1(&self) -> f64 {
        self.cmc.first().copied().unwrap_or(0.0)
    }

    pub fn mean_intra(&self) -> f64 {
        mean(&self.intra_scores)
    }

    pub fn mean_inter(&self) -> f64 {
        mean(&self.inter_scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{synthetic_images, SynthSpec};
    use crate::imgcore::ImageGrid;
    use crate::matching::ncc;
    use crate::vesselness::segmented_vesselness;

    fn small_images() -> Vec<LabelledImage> {
        synthetic_images(&SynthSpec {
            subjects: 4,
            yaws: vec![0.0, 30.0, 60.0, 90.0],
            ..Default::default()
        })
        .unwrap()
    }

    fn small_pipeline() -> PipelineConfig {
        PipelineConfig {
            ensemble: crate::ensemble::testkit::small_config(),
            ..Default::default()
        }
    }

    #[test]
    fn enrollment_picks_one_image_per_subject() {
        let images = small_images();
        let e = choose_enrollment(&images, 1);
        assert_eq!(e.len(), 4);
        for (s, &i) in &e {
            assert_eq!(&images[i].subject, s);
        }
        assert_eq!(e, choose_enrollment(&images, 1));
        assert!((0..20).any(|seed| choose_enrollment(&images, seed) != e));
    }

    #[test]
    fn self_match_is_perfect() {
        let images = small_images();
        let config = small_pipeline();
        let ensemble = train_from_images(&images, &config).unwrap();
        let params = config.stage_params();
        let chosen: Vec<&LabelledImage> = images.iter().filter(|i| i.yaw == 30.0).collect();
        let prepared: Vec<PreparedImage> =
            chosen.iter().map(|i| prepare_image(&ensemble, &i.image, &params).unwrap()).collect();
        let gallery: BTreeMap<String, (f64, &PreparedImage)> =
            chosen.iter().zip(&prepared).map(|(i, p)| (i.subject.clone(), (i.yaw, p))).collect();
        let probes: Vec<(String, String, f64, &PreparedImage)> =
            chosen.iter().zip(&prepared).map(|(i, p)| (i.id.clone(), i.subject.clone(), i.yaw, p)).collect();
        let outcomes = evaluate_prepared(&ensemble, &gallery, &probes).unwrap();
        for o in &outcomes {
            assert_eq!(o.rank, 1);
            assert!((o.ranking[0].rho - 1.0).abs() < 1e-12);
            assert_eq!(o.yaw_difference, 0.0);
        }
        assert!(evaluate_prepared(&ensemble, &BTreeMap::new(), &probes).is_err());
    }

    #[test]
    fn equal_yaw_vesselness_identifies_subjects() {
        // every yaw rendered twice, with independent noise and placement
        let yaws: Vec<f64> = [0.0, 22.5, 45.0, 67.5, 90.0].iter().flat_map(|&y| [y, y]).collect();
        let spec = SynthSpec {
            yaws: yaws.clone(),
            ..Default::default()
        };
        let renders = crate::harness::generate_synthetic_dataset(&spec).unwrap();
        let params = StageParams::default();
        let vessels: Vec<ImageGrid> = renders
            .par_iter()
            .map(|r| {
                let (seg, _) = params.preprocess(&r.image).unwrap();
                segmented_vesselness(&seg.image, &params.vesselness).unwrap().into_values()
            })
            .collect();
        let per_subject = yaws.len();
        for k in (0..per_subject).step_by(2) {
            for s in 0..spec.subjects {
                let probe = &vessels[s * per_subject + k + 1];
                let best = (0..spec.subjects)
                    .map(|g| (g, ncc(probe, &vessels[g * per_subject + k]).unwrap()))
                    .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
                assert_eq!(best.0, s, "yaw {} subject {s}", yaws[k]);
            }
        }
    }

    #[test]
    fn protocol_is_deterministic_and_accounts_for_probes() {
        let images = small_images();
        let config = small_pipeline();
        let a = run_protocol_images(&images, &config).unwrap();
        let b = run_protocol_images(&images, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outcomes.len() + a.excluded_probes, images.len() - 4);
        assert_eq!(a.gallery.len(), 4);
        let served = a.outcomes.len() as f64 / (a.outcomes.len() + a.excluded_probes) as f64;
        assert!((a.cmc.last().unwrap() - served).abs() < 1e-12);
        assert!(a.cmc.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(a.bands.iter().map(|b| b.probes).sum::<usize>(), a.outcomes.len());
        assert_eq!(a.enrollment_seed, 1);
    }

    #[test]
    fn needs_two_images_per_subject() {
        let mut images = small_images();
        images.retain(|i| i.subject != "s00" || i.yaw == 0.0);
        let e = crate::ensemble::testkit::small_ensemble().1;
        assert!(matches!(evaluate_with(&e, &images, &small_pipeline()), Err(Error::Precondition(_))));
    }
}
