use nalgebra::{DVector, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datagen::{compute_gt_correspondence, MatchabilityMask};
use crate::facemodel::procedural::{generate, ProceduralConfig};
use crate::facemodel::{CameraPose, MorphableModel};
use crate::raster::{rasterize, render_target_template, template_scene, RenderedFace};

fn model() -> MorphableModel {
    generate(&ProceduralConfig::default()).unwrap()
}

fn geodesic(a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>) -> f64 {
    crate::facemodel::rotation_geodesic(a, b)
}

/// Renders a posed random face and returns its GT correspondences and true parameters.
fn gt_fixture(model: &MorphableModel, size: u32, euler: [f64; 3], seed: u64) -> (CorrespondenceSet, FitParameters, RenderedFace) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = template_scene(model, (size, size)).unwrap();
    for (a, s) in scene.coeffs.alpha_id.iter_mut().zip(model.sigma_id.iter()) {
        *a = s * rng.gen_range(-1.0..1.0);
    }
    for (a, s) in scene.coeffs.alpha_exp.iter_mut().zip(model.sigma_exp.iter()) {
        *a = 0.3 * s * rng.gen_range(-1.0..1.0);
    }
    scene.pose = CameraPose::from_euler(scene.pose.focal, euler, scene.pose.translation).unwrap();
    let source = rasterize(model, &scene, (size, size)).unwrap();
    let template = render_target_template(model, (size, size)).unwrap();
    let (flow, mask) = compute_gt_correspondence(&source, &template, 0.015).unwrap();
    let (corr, _) = flow_to_correspondences(&flow, &mask, &template, model, 0.5, 1).unwrap();
    (corr, FitParameters::new(scene.pose, scene.coeffs), template)
}

fn init_for(model: &MorphableModel, corr: &CorrespondenceSet) -> FitParameters {
    FitParameters::frontal_init(model, corr.image_size, corr.centroid(), 0.6).unwrap()
}

fn exact_fixture(model: &MorphableModel, truth: &FitParameters, n: usize, seed: u64) -> CorrespondenceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = crate::facemodel::synthesize_shape(model, &truth.coeffs).unwrap();
    let entries = (0..n)
        .map(|_| {
            let q = rng.gen_range(0..model.vertex_count()) as u32;
            let p = truth.pose.project_point(&shape.vertices[q as usize], (64, 64)).unwrap();
            Correspondence {
                p: [p.x, p.y],
                q,
                w: rng.gen_range(0.5..1.0),
            }
        })
        .collect();
    CorrespondenceSet {
        image_size: (64, 64),
        entries,
    }
}

fn random_state(model: &MorphableModel, rng: &mut ChaCha8Rng) -> FitParameters {
    let scene = template_scene(model, (64, 64)).unwrap();
    let euler = [rng.gen_range(-1.0..1.0), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)];
    let mut t = scene.pose.translation;
    t.x += rng.gen_range(-0.2..0.2);
    t.z *= rng.gen_range(0.9..1.2);
    let pose = CameraPose::from_euler(rng.gen_range(50.0..90.0), euler, t).unwrap();
    let mut coeffs = model.zero_coefficients();
    coeffs.alpha_id.iter_mut().for_each(|a| *a = rng.gen_range(-3.0..3.0));
    coeffs.alpha_exp.iter_mut().for_each(|a| *a = rng.gen_range(-3.0..3.0));
    FitParameters::new(pose, coeffs)
}

#[test]
fn jacobian_matches_central_differences() {
    let model = model();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let opts = FitOptions {
        w_id: 0.3,
        w_exp: 2.0,
        ..Default::default()
    };
    for _ in 0..20 {
        let truth = random_state(&model, &mut rng);
        let corr = exact_fixture(&model, &truth, 30, rng.gen());
        let x = random_state(&model, &mut rng);
        let j = jacobian(&corr, &model, &x, &opts);
        for col in 0..j.ncols() {
            let h = if col == 0 { 1e-4 } else { 1e-6 };
            let mut d = DVector::zeros(j.ncols());
            d[col] = h;
            let plus = residuals(&corr, &model, &retract(&x, &d), &opts);
            d[col] = -h;
            let minus = residuals(&corr, &model, &retract(&x, &d), &opts);
            let fd = (plus - minus) / (2.0 * h);
            let err = (j.column(col) - &fd).norm() / fd.norm().max(1e-8);
            assert!(err < 1e-5, "column {col}: relative error {err}");
        }
    }
}

#[test]
fn perfect_round_trip_recovers_pose() {
    let model = model();
    let (corr, truth, _) = gt_fixture(&model, 64, [0.5, 0.1, -0.05], 1);
    let (fit, report) = solve(&corr, &model, &init_for(&model, &corr), &FitOptions::default()).unwrap();
    let err = geodesic(&fit.pose.rotation, &truth.pose.rotation);
    // pixel-quantized correspondences limit rotation accuracy to ~1e-2 at 64 px
    assert!(err < 2e-2, "rotation error {err}");
    // focal length and depth trade off almost freely; their ratio and the lateral
    // offset are what the image pins down
    let (tf, tt) = (fit.pose.translation, truth.pose.translation);
    assert!((fit.pose.focal / tf.z - truth.pose.focal / tt.z).abs() < 0.02 * truth.pose.focal / tt.z);
    assert!((tf.x / tf.z - tt.x / tt.z).abs() < 1e-2 && (tf.y / tf.z - tt.y / tt.z).abs() < 1e-2);
    assert!(report.reprojection_rms < 1.5, "rms {}", report.reprojection_rms);
    assert_eq!(report.descent_violations(), 0);
    assert!(report.converged, "{report:?}");
}

#[test]
fn noise_free_data_is_fit_exactly() {
    let model = model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut truth = random_state(&model, &mut rng);
    truth.coeffs.alpha_id.scale_mut(0.3);
    truth.coeffs.alpha_exp.scale_mut(0.3);
    let corr = exact_fixture(&model, &truth, 400, 9);
    let opts = FitOptions {
        w_id: 0.0,
        w_exp: 0.0,
        max_iters: 300,
        ..Default::default()
    };
    let (fit, report) = solve(&corr, &model, &init_for(&model, &corr), &opts).unwrap();
    let err = geodesic(&fit.pose.rotation, &truth.pose.rotation);
    assert!(err < 1e-6, "rotation error {err}");
    assert!(report.reprojection_rms < 1e-6);
    assert!((fit.coeffs.alpha_id.clone() - &truth.coeffs.alpha_id).amax() < 1e-4);
}

#[test]
fn preconditions_are_enforced() {
    let model = model();
    let init = FitParameters::frontal_init(&model, (64, 64), [32.0, 32.0], 0.6).unwrap();
    let empty = CorrespondenceSet {
        image_size: (64, 64),
        entries: vec![],
    };
    assert!(solve(&empty, &model, &init, &FitOptions::default()).is_err());
    let same = CorrespondenceSet {
        image_size: (64, 64),
        entries: vec![Correspondence { p: [30.0, 30.0], q: 5, w: 1.0 }; 10],
    };
    assert!(solve(&same, &model, &init, &FitOptions::default()).is_err());
}

#[test]
fn huge_priors_pin_coefficients() {
    let model = model();
    let (corr, truth, _) = gt_fixture(&model, 64, [0.3, 0.0, 0.0], 2);
    let opts = FitOptions {
        w_id: 1e12,
        w_exp: 1e12,
        ..Default::default()
    };
    let (fit, report) = solve(&corr, &model, &init_for(&model, &corr), &opts).unwrap();
    assert!(fit.coeffs.alpha_id.amax() < 1e-6 && fit.coeffs.alpha_exp.amax() < 1e-6);
    assert!(geodesic(&fit.pose.rotation, &truth.pose.rotation) < 5e-2);
    assert!(report.reprojection_rms < 3.0);
}

#[test]
fn weight_scaling_is_compensated_by_prior_scaling() {
    let model = model();
    let (corr, _, _) = gt_fixture(&model, 64, [-0.4, 0.1, 0.0], 3);
    let init = init_for(&model, &corr);
    let opts = FitOptions::default();
    let (a, _) = solve(&corr, &model, &init, &opts).unwrap();
    let c = 7.5;
    let mut scaled = corr.clone();
    scaled.entries.iter_mut().for_each(|e| e.w *= c);
    let opts2 = FitOptions {
        w_id: opts.w_id * c,
        w_exp: opts.w_exp * c,
        ..opts.clone()
    };
    let (b, _) = solve(&scaled, &model, &init, &opts2).unwrap();
    assert!((a.pose.rotation - b.pose.rotation).amax() < 1e-8);
    assert!((a.pose.translation - b.pose.translation).amax() < 1e-8);
    assert!((a.pose.focal - b.pose.focal).abs() < 1e-8 * a.pose.focal);
    assert!((a.coeffs.alpha_id.clone() - &b.coeffs.alpha_id).amax() < 1e-8);
}

#[test]
fn camera_pan_of_the_image_only_moves_the_camera() {
    // A pure image translation is not a symmetry of perspective projection; the
    // exact image-plane symmetry is a rotation of the camera about its center.
    let model = model();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut truth = random_state(&model, &mut rng);
    truth.pose.focal = 64.0;
    truth.pose.rotation = *Rotation3::from_euler_angles(0.0, 0.3, 0.0).matrix();
    truth.pose.translation = Vector3::new(0.0, 0.0, truth.pose.translation.z);
    truth.coeffs.alpha_exp.fill(0.0);
    let corr = exact_fixture(&model, &truth, 300, 4);
    let opts = FitOptions {
        optimize_focal: false,
        max_iters: 300,
        rel_tol: 0.0,
        step_tol: 1e-13,
        ..Default::default()
    };
    let init = FitParameters::new(
        CameraPose::new(64.0, nalgebra::Matrix3::identity(), truth.pose.translation).unwrap(),
        model.zero_coefficients(),
    );
    let (a, ra) = solve(&corr, &model, &init, &opts).unwrap();

    let pan = Rotation3::from_euler_angles(0.04, -0.06, 0.0).into_inner();
    let mut moved = corr.clone();
    for e in &mut moved.entries {
        let ray = pan * Vector3::new((e.p[0] - 32.0) / 64.0, (e.p[1] - 32.0) / 64.0, 1.0);
        e.p = [64.0 * ray.x / ray.z + 32.0, 64.0 * ray.y / ray.z + 32.0];
    }
    let init2 = FitParameters::new(
        CameraPose::new(64.0, pan * init.pose.rotation, pan * init.pose.translation).unwrap(),
        model.zero_coefficients(),
    );
    let (b, rb) = solve(&moved, &model, &init2, &opts).unwrap();
    // both problems are exactly equivalent; the energy is flat to rounding along
    // the rotation/identity valley, so the two minimizers agree only to ~1e-5
    let (ea, eb) = (ra.final_energy(), rb.final_energy());
    assert!((ea - eb).abs() <= 1e-6 * ea.max(1e-12), "{ea} vs {eb}");
    assert!((pan * a.pose.rotation - b.pose.rotation).amax() < 1e-4);
    assert!((pan * a.pose.translation - b.pose.translation).amax() < 1e-4);
    assert!((a.coeffs.alpha_id.clone() - &b.coeffs.alpha_id).amax() < 1e-3);
}

#[test]
fn self_flow_correspondences_sit_on_their_vertices() {
    let model = model();
    let template = render_target_template(&model, (64, 64)).unwrap();
    let (flow, mask) = compute_gt_correspondence(&template, &template, 0.015).unwrap();
    let (corr, dropped) = flow_to_correspondences(&flow, &mask, &template, &model, 0.5, 2).unwrap();
    assert_eq!(dropped, 0);
    let pose = crate::raster::framing_pose(&model, (64, 64), 0.75).unwrap();
    let proj = |q: u32| pose.project_point(&model.mean_vertex(q as usize), (64, 64)).unwrap();
    for c in &corr.entries {
        // the dominant vertex is the triangle corner with the largest barycentric
        // weight, so it lies within the triangle's longest projected edge
        let attr = template.attr[template.index(c.p[0] as u32, c.p[1] as u32)];
        let corners = model.triangles[attr.triangle as usize].map(proj);
        let longest = (0..3).map(|k| (corners[k] - corners[(k + 1) % 3]).norm()).fold(0.0, f64::max);
        let v = proj(c.q);
        assert!((v - nalgebra::Vector2::new(c.p[0], c.p[1])).norm() <= longest, "{c:?} vs {v:?}");
    }
    let zero = MatchabilityMask::zeros(64, 64);
    assert!(matches!(
        flow_to_correspondences(&flow, &zero, &template, &model, 0.5, 2),
        Err(crate::Error::NoCorrespondences { .. })
    ));
}

#[test]
fn gt_correspondences_reproject_under_true_parameters() {
    let model = model();
    let (corr, truth, _) = gt_fixture(&model, 64, [0.6, 0.0, 0.0], 4);
    let r = residuals(&corr, &model, &truth, &FitOptions { w_id: 0.0, w_exp: 0.0, ..Default::default() });
    let w: f64 = corr.entries.iter().map(|c| c.w).sum();
    let rms = (r.norm_squared() / w).sqrt();
    assert!(rms < 1.5, "rms {rms}");
}

#[test]
fn recovered_dense_flow_matches_ground_truth() {
    let model = model();
    let template = render_target_template(&model, (48, 48)).unwrap();
    let mut scene = template_scene(&model, (48, 48)).unwrap();
    scene.pose = CameraPose::from_euler(scene.pose.focal, [0.4, 0.1, 0.0], scene.pose.translation).unwrap();
    let source = rasterize(&model, &scene, (48, 48)).unwrap();
    let (gt_flow, gt_mask) = compute_gt_correspondence(&source, &template, 0.015).unwrap();
    let fit = FitParameters::new(scene.pose, scene.coeffs.clone());
    let (flow, mask) = recover_dense(&fit, &model, &template, 0.015).unwrap();
    for i in 0..mask.data.len() {
        if mask.data[i] == 1.0 && gt_mask.data[i] == 1.0 {
            let d = [flow.data[i][0] - gt_flow.data[i][0], flow.data[i][1] - gt_flow.data[i][1]];
            assert!(d[0].abs() <= 1.0 && d[1].abs() <= 1.0);
        }
    }
    let ident = FitParameters::new(crate::raster::framing_pose(&model, (48, 48), 0.75).unwrap(), model.zero_coefficients());
    let (flow, mask) = recover_dense(&ident, &model, &template, 0.015).unwrap();
    assert_eq!(mask.count_at_least(1.0), template.face_pixel_count());
    assert!(flow.data.iter().all(|f| *f == [0.0, 0.0]));
}

#[test]
fn landmark_projection_and_visibility() {
    let model = model();
    let template = render_target_template(&model, (64, 64)).unwrap();
    let pose = crate::raster::framing_pose(&model, (64, 64), 0.75).unwrap();
    let fit = FitParameters::new(pose, model.zero_coefficients());
    let lms = landmarks_2d(&fit, &model, (64, 64)).unwrap();
    let nose = lms.iter().find(|l| l.name == "nose_tip").unwrap();
    assert!(nose.visible);
    let nose_vertex = model.landmark_indices["nose_tip"];
    let hit = (0..64 * 64).any(|i| {
        template.dominant_vertex(&model, i) == Some(nose_vertex)
            && ((i % 64) as f64 - nose.position[0]).abs() <= 1.0
            && ((i / 64) as f64 - nose.position[1]).abs() <= 1.0
    });
    assert!(hit);
    for l in &lms {
        // contour landmarks (ears, chin) lie on the silhouette and may be hidden
        let name = l.name.as_str();
        if crate::facemodel::EVAL_LANDMARKS.contains(&name) && !crate::facemodel::is_contour_landmark(name) {
            assert!(l.visible, "{} hidden frontally", l.name);
        }
    }

    let side = FitParameters::new(CameraPose::from_euler(pose.focal, [1.2, 0.0, 0.0], pose.translation).unwrap(), model.zero_coefficients());
    let lms = landmarks_2d(&side, &model, (64, 64)).unwrap();
    let vis = |n: &str| lms.iter().find(|l| l.name == n).unwrap().visible;
    assert!(!vis("right_eye_outer") && !vis("right_eye_inner"));
    assert!(vis("left_eye_outer"));
}

#[test]
fn text_and_json_round_trips() {
    let model = model();
    let (corr, truth, _) = gt_fixture(&model, 32, [0.2, 0.0, 0.0], 6);
    assert_eq!(CorrespondenceSet::from_text(&corr.to_text()).unwrap(), corr);
    assert!(CorrespondenceSet::from_text("1 2 3\n").is_err());
    assert_eq!(FitParameters::from_json(&truth.to_json().unwrap()).unwrap(), truth);
}

#[test]
fn prior_weights_scale_with_the_data_term() {
    let full = FlowFitConfig { stride: 1, ..FlowFitConfig::default() };
    assert_eq!(full.prior_scale((128, 128)), 1.0);
    assert_eq!(full.prior_scale((64, 64)), 1.0 / 16.0);
    assert_eq!(FlowFitConfig { stride: 2, ..full.clone() }.prior_scale((64, 64)), 1.0 / 64.0);
    assert_eq!(FlowFitConfig { scale_priors: false, ..full.clone() }.prior_scale((32, 32)), 1.0);
    let scaled = full.solver_for((64, 64));
    assert_eq!(scaled.w_exp, full.solver.w_exp / 16.0);
    assert_eq!(scaled.w_id, full.solver.w_id / 16.0);
    assert_eq!(scaled.max_iters, full.solver.max_iters);
}
