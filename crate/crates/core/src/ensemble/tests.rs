use super::testkit::*;
use super::*;
use crate::aam::encode_aam;
use crate::matching::ncc_masked;

fn dummy(subject: &str, yaw: f64) -> AnnotatedSample {
    let mesh = Mesh::default_face();
    AnnotatedSample {
        subject: subject.into(),
        yaw,
        raw: ImageGrid::zeros(4, 4),
        sample: TrainingSample {
            image: ImageGrid::zeros(4, 4),
            shape: ShapeInstance::new(mesh.vertices().to_vec()).unwrap(),
            ellipse: None,
        },
    }
}

#[test]
fn pose_membership_is_inclusive() {
    let p = PosePartition::default();
    assert_eq!(p.ranges_for(30.0), vec![0, 1]);
    assert_eq!(p.ranges_for(0.0), vec![0]);
    assert_eq!(p.ranges_for(45.0), vec![0, 1, 2]);
    let s = [dummy("a", 30.0), dummy("b", 90.0)];
    assert_eq!(partition_by_pose(&s, &p).unwrap(), vec![vec![0], vec![0], vec![1]]);
    assert!(matches!(partition_by_pose(&[dummy("a", 95.0)], &p), Err(Error::Annotation(_))));
}

#[test]
fn partition_validation() {
    assert!(PosePartition::default().validate().is_ok());
    for bad in [vec![], vec![(0.0, 40.0), (50.0, 90.0)], vec![(0.0, 80.0)], vec![(10.0, 90.0)], vec![(0.0, 0.0), (0.0, 90.0)]] {
        assert!(PosePartition { ranges: bad }.validate().is_err());
    }
}

#[test]
fn target_range_uses_range_centres() {
    let p = PosePartition::default();
    assert_eq!(target_range(&p, 0, 0), 0);
    // (22.5 + 67.5) / 2 = 45 is the centre of the middle range
    assert_eq!(target_range(&p, 0, 2), 1);
    assert_eq!(target_range(&p, 2, 2), 2);
    // 33.75 is equidistant from 22.5 and 45: lower index wins
    assert_eq!(target_range(&p, 0, 1), 0);
}

#[test]
fn model_count_follows_the_layout() {
    let c = EnsembleConfig {
        partition: PosePartition {
            ranges: vec![(0.0, 50.0), (40.0, 90.0)],
        },
        clusters_per_range: 3,
        ..Default::default()
    };
    assert_eq!(c.model_count(), 6);
    assert_eq!(EnsembleConfig::default().model_count(), 18);
}

#[test]
fn clustering_recovers_separated_groups() {
    let samples = small_samples();
    // two groups of people with clearly different raw appearance
    let mut alt: Vec<AnnotatedSample> = samples.clone();
    for s in &mut alt {
        if s.subject == "s00" || s.subject == "s01" {
            let mask: Vec<bool> = s.raw.data().iter().map(|&v| v != 0.0).collect();
            let (w, h) = s.raw.dims();
            let stripes = ImageGrid::from_fn(w, h, |x, _| ((x as f64) * 0.5).sin());
            s.raw = ImageGrid::new(
                w,
                h,
                s.raw.data().iter().zip(stripes.data()).zip(&mask).map(|((v, t), &m)| if m { v + t } else { 0.0 }).collect(),
            )
            .unwrap();
        }
    }
    let refs: Vec<&AnnotatedSample> = alt.iter().collect();
    let shapes: Vec<ShapeInstance> = alt.iter().map(|s| s.sample.shape.clone()).collect();
    let frame = reference_frame(&Mesh::default_face(), &shapes, 1.0, 2.0).unwrap();
    let labels = cluster_appearances(&refs, &frame, 2, 5).unwrap();
    for (s, l) in alt.iter().zip(&labels) {
        let striped = s.subject == "s00" || s.subject == "s01";
        assert_eq!(*l == labels[0], striped, "{}", s.subject);
    }
    assert_eq!(labels, cluster_appearances(&refs, &frame, 2, 5).unwrap());
    assert!(cluster_appearances(&refs, &frame, 1, 0).unwrap().iter().all(|&l| l == 0));
    assert!(matches!(cluster_appearances(&refs[..1], &frame, 2, 0), Err(Error::Parameter(_))));
}

#[test]
fn trains_complete_and_deterministic_ensembles() {
    let (samples, e) = small_ensemble();
    assert_eq!(e.len(), 6);
    assert_eq!(e.frames().len(), 3);
    for ((i, j), names) in e.members() {
        assert!(*i < 3 && *j < 2 && !names.is_empty());
    }
    let again = train_ensemble(&samples, &Mesh::default_face(), &small_config()).unwrap();
    for (k, m) in e.models() {
        assert_eq!(encode_aam(m), encode_aam(&again.models()[k]));
    }
}

#[test]
fn under_populated_cell_names_the_cell() {
    let samples = small_samples();
    let c = EnsembleConfig {
        clusters_per_range: 4,
        ..Default::default()
    };
    // every range holds 4 people with 2 images each: one person per cluster
    // still trains, a fifth cluster stays empty
    assert!(train_ensemble(&samples, &Mesh::default_face(), &c).is_ok());
    let c = EnsembleConfig {
        clusters_per_range: 5,
        ..Default::default()
    };
    match train_ensemble(&samples, &Mesh::default_face(), &c) {
        Err(Error::Training { range, cluster, .. }) => assert!(range < 3 && cluster < 5),
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn single_range_single_cluster_is_a_plain_model() {
    let samples = small_samples();
    let c = EnsembleConfig {
        partition: PosePartition {
            ranges: vec![(0.0, 90.0)],
        },
        clusters_per_range: 1,
        ..Default::default()
    };
    let e = train_ensemble(&samples, &Mesh::default_face(), &c).unwrap();
    assert_eq!(e.len(), 1);
    let train: Vec<TrainingSample> = samples.iter().map(|s| s.sample.clone()).collect();
    let plain = train_aam(&train, &Mesh::default_face(), &c.aam_options()).unwrap();
    assert_eq!(encode_aam(&e.models()[&(0, 0)]), encode_aam(&plain));

    let s = &samples[1];
    let sel = select_and_fit(&e, &s.sample.image, s.sample.ellipse.as_ref().unwrap(), &FitOptions::default()).unwrap();
    assert_eq!(sel.chosen, (0, 0));
    let p = plain.seed_params(&FitSeed::Ellipse(s.sample.ellipse.unwrap())).unwrap();
    let direct = fit_icaam(&plain, &s.sample.image, &p, &FitOptions::default()).unwrap();
    assert_eq!(sel.fit, direct);
}

#[test]
fn selection_finds_the_generating_member() {
    let (samples, e) = small_ensemble();
    for (&key, model) in e.models() {
        let name = &e.members()[&key][0];
        let s = samples
            .iter()
            .find(|s| &s.subject == name && e.config().partition.ranges_for(s.yaw).contains(&key.0))
            .unwrap();
        let mut p = model.shape_params(&s.sample.shape).unwrap();
        p[2] += 0.4;
        let alpha: Vec<f64> = (0..model.appearance_dim()).map(|k| if k == 0 { 0.3 } else { 0.0 }).collect();
        let img = model.synthesize(&p, &alpha).unwrap();
        let sel = select_and_fit(&e, &img, s.sample.ellipse.as_ref().unwrap(), &FitOptions::default()).unwrap();
        assert_eq!(sel.chosen, key);
        assert!(sel.all_errors.values().all(|&v| v >= sel.fit.final_error));
        assert_eq!(sel.all_errors[&key], sel.fit.final_error);
    }
}

#[test]
fn ties_go_to_the_lower_cell() {
    let (samples, e) = small_ensemble();
    let m = e.models()[&(0, 1)].clone();
    let models: BTreeMap<_, _> = [((0, 0), m.clone()), ((0, 1), m)].into_iter().collect();
    let c = EnsembleConfig {
        partition: PosePartition {
            ranges: vec![(0.0, 90.0)],
        },
        ..small_config()
    };
    let twin = Ensemble::new(c, models, vec![e.frame(0).clone()], BTreeMap::new()).unwrap();
    let s = &samples[0];
    let sel = select_and_fit(&twin, &s.sample.image, s.sample.ellipse.as_ref().unwrap(), &FitOptions::default()).unwrap();
    assert_eq!(sel.chosen, (0, 0));
    assert_eq!(sel.all_errors[&(0, 0)], sel.all_errors[&(0, 1)]);
}

#[test]
fn same_image_twice_normalises_identically() {
    let (_, e) = small_ensemble();
    let img = crate::harness::synthetic_images(&crate::harness::SynthSpec {
        subjects: 1,
        yaws: vec![20.0],
        seed: 99,
        ..Default::default()
    })
    .unwrap()
    .remove(0)
    .image;
    let pair = normalize_pair(&e, &img, &img, &StageParams::default()).unwrap();
    assert_eq!(pair.a, pair.b);
    let mask = e.frame(pair.range).raster.mask();
    assert!((ncc_masked(&pair.a, &pair.b, &mask).unwrap() - 1.0).abs() < 1e-12);
    assert!(pair.a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn ensemble_directory_round_trip() {
    let (samples, e) = small_ensemble();
    let dir = tempfile::tempdir().unwrap();
    write_ensemble(&e, dir.path()).unwrap();
    let back = read_ensemble(dir.path()).unwrap();
    assert_eq!(back.config(), e.config());
    assert_eq!(back.members(), e.members());
    assert_eq!(back.frames().len(), e.frames().len());
    for (a, b) in back.frames().iter().zip(e.frames()) {
        assert_eq!(a.dims(), b.dims());
        assert_eq!(a.base, b.base);
    }
    let s = &samples[2];
    let seed = s.sample.ellipse.as_ref().unwrap();
    let x = select_and_fit(&e, &s.sample.image, seed, &FitOptions::default()).unwrap();
    let y = select_and_fit(&back, &s.sample.image, seed, &FitOptions::default()).unwrap();
    assert_eq!(x.chosen, y.chosen);
    assert!((x.fit.final_error - y.fit.final_error).abs() < 1e-6);

    std::fs::write(dir.path().join(ENSEMBLE_MANIFEST), "something else\n").unwrap();
    assert!(matches!(read_ensemble(dir.path()), Err(Error::UnsupportedFormat(_))));
}
