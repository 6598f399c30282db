//! Active appearance models: Procrustes/PCA shape model, canonical-frame PCA
//! appearance model and inverse-compositional (project-out) fitting.

mod appearance;
mod fit;
mod io;
pub(crate) mod linalg;
mod model;
mod shape;

pub use appearance::{train_appearance_model, AppearanceModel, CanonicalFrame};
pub use fit::{fit_icaam, project_appearance, FitOptions, FitResult};
pub use io::{decode_aam, encode_aam, read_aam, write_aam, AAM_FORMAT_VERSION};
pub use model::{train_aam, AamModel, AamOptions, FitSeed, SeedCalibration, TrainingSample};
pub use shape::{train_shape_model, ShapeModel};


#[cfg(test)]
mod tests {
    use super::linalg::dot;
    use super::testkit::*;
    use super::*;
    use crate::error::Error;
    use crate::imgcore::ImageGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alpha_for(model: &AamModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..model.appearance_dim()).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn model_layout() {
        let m = toy_model();
        assert!(m.shape_dim() >= 4);
        assert_eq!(m.appearance_dim(), m.appearance_model().mode_count() + 1);
        for (i, a) in m.shape_basis().iter().enumerate() {
            for (j, b) in m.shape_basis().iter().enumerate() {
                assert!((dot(a, b) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
        for (i, a) in m.appearance_basis().iter().enumerate() {
            for (j, b) in m.appearance_basis().iter().enumerate() {
                assert!((dot(a, b) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synthesize_mean_and_unit_mode() {
        let m = toy_model();
        let p0 = vec![0.0; m.shape_dim()];
        let a0 = vec![0.0; m.appearance_dim()];
        let img = m.synthesize(&p0, &a0).unwrap();
        let back = m.sample_image(&img, &p0).unwrap();
        for (x, y) in back.iter().zip(m.mean_appearance()) {
            assert!((x - y).abs() < 1e-9);
        }
        let mut e1 = a0.clone();
        e1[0] = 1.0;
        let img = m.synthesize(&p0, &e1).unwrap();
        let back = m.sample_image(&img, &p0).unwrap();
        for ((x, y), z) in back.iter().zip(m.mean_appearance()).zip(&m.appearance_basis()[0]) {
            assert!((x - (y + z)).abs() < 1e-9);
        }
        assert!(matches!(m.synthesize(&p0[1..], &a0), Err(Error::Parameter(_))));
        assert!(matches!(m.synthesize(&p0, &a0[1..]), Err(Error::Parameter(_))));
    }

    #[test]
    fn fixed_point_and_recovery() {
        let m = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = placed_params(&m, 1.4, (64.0, 64.0), &[0.5, -0.3]);
        let alpha = alpha_for(&m, &mut rng);
        let img = m.synthesize(&p, &alpha).unwrap();
        let fit = fit_icaam(&m, &img, &p, &FitOptions::default()).unwrap();
        assert!(fit.converged && fit.iterations <= 2, "{fit:?}");
        assert!(fit.final_error < 1e-10);
        for (a, b) in fit.shape_params.iter().zip(&p) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in fit.appearance_params.iter().zip(&alpha) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn perturbed_seed_converges() {
        let m = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = placed_params(&m, 1.4, (64.0, 64.0), &[]);
        let img = m.synthesize(&p, &alpha_for(&m, &mut rng)).unwrap();
        let mut seed = p.clone();
        seed[2] += 1.5 * (58f64 * 2.0).sqrt() / 2f64.sqrt(); // ~1.5 px shift in x
        let fit = fit_icaam(&m, &img, &seed, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.shape_params.iter().zip(&p) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        // final error equals the model error at the recovered parameters
        let direct = m.model_error(&img, &fit.shape_params, &fit.appearance_params).unwrap();
        assert!((direct - fit.final_error).abs() < 1e-9);
    }

    #[test]
    fn fixed_template_keeps_the_fixed_point() {
        let m = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = placed_params(&m, 1.4, (64.0, 64.0), &[0.3]);
        let img = m.synthesize(&p, &alpha_for(&m, &mut rng)).unwrap();
        let opts = FitOptions {
            adaptive_template: false,
            ..Default::default()
        };
        let fit = fit_icaam(&m, &img, &p, &opts).unwrap();
        assert!(fit.converged && fit.iterations <= 2);
        assert!(fit.final_error < 1e-10);
    }

    #[test]
    fn adaptive_template_handles_strong_appearance() {
        let m = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = placed_params(&m, 1.4, (64.0, 64.0), &[]);
        let alpha: Vec<f64> = alpha_for(&m, &mut rng).iter().map(|a| 6.0 * a).collect();
        let img = m.synthesize(&p, &alpha).unwrap();
        let mut seed = p.clone();
        seed[2] += 2.0 * (m.mesh().vertex_count() as f64).sqrt();
        let fit = fit_icaam(&m, &img, &seed, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.shape_params.iter().zip(&p) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn intensity_shift_invariance() {
        let m = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = placed_params(&m, 1.4, (64.0, 64.0), &[]);
        let img = m.synthesize(&p, &alpha_for(&m, &mut rng)).unwrap();
        let mut seed = p.clone();
        seed[3] -= 5.0;
        let a = fit_icaam(&m, &img, &seed, &FitOptions::default()).unwrap();
        let b = fit_icaam(&m, &img.map(|v| v + 3.0), &seed, &FitOptions::default()).unwrap();
        for (x, y) in a.shape_params.iter().zip(&b.shape_params) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn noise_outside_span_leaves_projection_residual() {
        let m = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = placed_params(&m, 1.4, (64.0, 64.0), &[]);
        let noise: Vec<f64> = (0..m.mean_appearance().len()).map(|_| rng.random_range(-0.002..0.002)).collect();
        let values: Vec<f64> = m.mean_appearance().iter().zip(&noise).map(|(a, n)| a + n).collect();
        let img = m.render_canonical(&p, &values, m.image_dims()).unwrap();
        // analytic residual of the noise after projecting out the appearance basis
        let mut r = noise.clone();
        for b in m.appearance_basis() {
            let c = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let expected = dot(&r, &r) / r.len() as f64;
        let fit = fit_icaam(&m, &img, &p, &FitOptions::default()).unwrap();
        // the inverse-compositional fixed point drifts with the noise, so this
        // holds for small noise only
        assert!(!fit.converged || (fit.final_error - expected).abs() < 1e-6);
        let (_, at_truth) = project_appearance(&m, &img, &p).unwrap();
        assert!((at_truth - expected).abs() < 1e-9);
    }

    #[test]
    fn degenerate_seed_diverges() {
        let m = toy_model();
        let img = ImageGrid::filled(128, 128, 0.5);
        let mut p = vec![0.0; m.shape_dim()];
        p[0] = -m.shape_model().mean_shape().to_flat().iter().map(|v| v * v).sum::<f64>().sqrt() * 2.0;
        assert!(matches!(fit_icaam(&m, &img, &p, &FitOptions::default()), Err(Error::FitDiverged(_))));
    }

    #[test]
    fn aam1_round_trip() {
        let m = toy_model();
        let bytes = encode_aam(&m);
        let back = decode_aam(&bytes).unwrap();
        assert_eq!(back.shape_dim(), m.shape_dim());
        assert_eq!(back.appearance_dim(), m.appearance_dim());
        assert_eq!(back.frame_size(), m.frame_size());
        assert_eq!(back.image_dims(), m.image_dims());
        for (a, b) in back.mean_appearance().iter().zip(m.mean_appearance()) {
            assert!((a - b).abs() < 1e-5);
        }
        let again = decode_aam(&encode_aam(&back)).unwrap();
        for (a, b) in again.shape_basis().iter().flatten().zip(back.shape_basis().iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_aam(&bad), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_aam(&bytes[..bytes.len() - 3]), Err(Error::TruncatedPayload { .. })));
        assert!(matches!(decode_aam(b"XXXX0000"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn ellipse_seed_uses_calibration() {
        let m = toy_model();
        let e = crate::segment::MomentEllipse {
            cx: 64.0,
            cy: 60.0,
            semi_major: 30.0,
            semi_minor: 24.0,
            angle: std::f64::consts::FRAC_PI_2,
            pixel_area: 2000.0,
        };
        let s = m.seed_shape_from_ellipse(&e).unwrap();
        let area = s.mesh_area(m.mesh());
        assert!((area - m.calibration().area_ratio * 2000.0).abs() < 1e-6 * area);
        let c = s.centroid();
        assert!((c.x - 64.0).abs() < 1e-9 && (c.y - 60.0).abs() < 1e-9);
        let p = m.seed_params(&FitSeed::Ellipse(e)).unwrap();
        let r = m.shape_instance(&p);
        for (a, b) in r.points.iter().zip(&s.points) {
            assert!(a.dist(*b) < 1e-9);
        }
    }
}
