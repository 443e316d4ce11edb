use nalgebra::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use topotag::decoder::{find_baseline, order_vertices, run_pipeline, VertexWeighting};
use topotag::eval::{adjacent_pose_error, mean_pose, vertex_jitter, RelativeMotion};
use topotag::image::{dilate, BinaryImage};
use topotag::pose::{project_point, refine_pose_lm, Correspondence};
use topotag::synth::{centered_pose, render_scene, SynthScene};
use topotag::tagmodel::CanonicalLayout;
use topotag::topology::{correct_errors, Color, RegionTree};
use topotag::*;

fn fam(n: usize) -> TagFamily {
    TagFamily::new(n).unwrap()
}

#[test]
fn lm_rmse_matches_residual_degrees_of_freedom() {
    let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0);
    let layout = CanonicalLayout::new(&fam(4), 0.05, &Default::default());
    let sigma = 0.1;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 500;
    let mut mean_sq = 0.0;
    for i in 0..trials {
        let truth = centered_pose(10.0 + (i % 40) as f64, 7.0 * i as f64, 13.0 * i as f64, 0.4);
        let corr: Vec<Correspondence> = layout
            .model_points
            .iter()
            .map(|m| {
                let p = project_point(&truth, &k, m).unwrap();
                Correspondence {
                    model: *m,
                    image: Point2::new(
                        p.x + normal.sample(&mut rng),
                        p.y + normal.sample(&mut rng),
                    ),
                }
            })
            .collect();
        mean_sq += refine_pose_lm(&truth, &corr, &k).unwrap().rmse.powi(2) / trials as f64;
    }
    // 2N residuals, 6 pose parameters absorbed by the fit
    let n = layout.model_points.len() as f64;
    let expected = sigma * ((2.0 * n - 6.0) / (2.0 * n)).sqrt();
    assert!(
        (mean_sq.sqrt() / expected - 1.0).abs() < 0.05,
        "{} vs {expected}",
        mean_sq.sqrt()
    );
}

/// Pixels the vertex centroid of `label` integrates over.
fn support_pixels(tree: &RegionTree, label: u32, p: &DecodeParams) -> Vec<(usize, usize)> {
    let r = tree.region(label);
    let b = r.bbox;
    let delta = p.dilation(b.width().min(b.height()) as usize);
    let (w, h) = (
        b.width() as usize + 2 * delta,
        b.height() as usize + 2 * delta,
    );
    let (ox, oy) = (b.min_x as usize - delta, b.min_y as usize - delta);
    let mut mask = BinaryImage::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if tree.labels.get(ox + x, oy + y) == label {
                mask.set(x, y, true);
            }
        }
    }
    let support = dilate(&mask, delta).unwrap();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = tree.labels.get(ox + x, oy + y);
            if support.get(x, y)
                && (l == label || Some(l) == r.parent || tree.children_of(label).contains(&l))
            {
                out.push((ox + x, oy + y));
            }
        }
    }
    out
}

#[test]
fn vertex_jitter_matches_propagated_pixel_noise() {
    let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0);
    let f = fam(4);
    let depth = 800.0 * 0.05 / 7.0 / 20.0;
    let mut scene = SynthScene::new(
        TagId::new(&f, 8390).unwrap(),
        centered_pose(0.0, 0.0, 0.0, depth),
        k,
        0.05,
        640,
        480,
    );
    let (clean, _) = render_scene(&scene).unwrap();

    // supports and weights from the noise-free frame
    let dec = DecodeParams::default();
    assert_eq!(dec.vertex_weighting, VertexWeighting::LocalContrast);
    let out = run_pipeline(
        &clean,
        std::slice::from_ref(&f),
        &Default::default(),
        &Default::default(),
        &dec,
    )
    .unwrap();
    let cand = correct_errors(&out.candidates[0], &f, &Default::default(), &out.tree).unwrap();
    let ordered = order_vertices(
        &cand,
        &find_baseline(&cand, &out.tree).unwrap(),
        &out.tree,
        &f,
        &dec,
    )
    .unwrap();
    let labels: Vec<u32> = ordered
        .baseline_dots
        .iter()
        .chain(&ordered.data_nodes)
        .copied()
        .collect();
    let supports: Vec<Vec<(usize, usize)>> = labels
        .iter()
        .map(|&l| support_pixels(&out.tree, l, &dec))
        .collect();

    scene.noise_sigma = 0.1;
    let mut frames = Vec::new();
    let mut samples = Vec::new();
    let mut seed = 0;
    while samples.len() < 100 {
        scene.seed = 5000 + seed;
        seed += 1;
        let (img, _) = render_scene(&scene).unwrap();
        if let Some(d) = detect(
            &img,
            std::slice::from_ref(&f),
            &Default::default(),
            &Default::default(),
            &dec,
        )
        .pop()
        {
            samples.push(d.vertices);
            frames.push(img);
        }
        assert!(seed < 400);
    }
    let measured = vertex_jitter(&samples).unwrap();

    // per-pixel variance of the injected noise after clipping and rounding
    let count = frames.len() as f64;
    let pixel_var = |x: usize, y: usize| {
        let vals: Vec<f64> = frames.iter().map(|f| f64::from(f.get(x, y))).collect();
        let mean = vals.iter().sum::<f64>() / count;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count
    };
    // linear weights: var(c) = sum (x - c)^2 var_i / W^2
    let mut predicted_sq = 0.0;
    for (support, &label) in supports.iter().zip(&labels) {
        let dark = out.tree.region(label).color == Color::Black;
        let level = if dark { 220.0 } else { 30.0 };
        let wgt = |x: usize, y: usize| {
            let v = f64::from(clean.get(x, y));
            if dark {
                level - v
            } else {
                v - level
            }
        };
        let total: f64 = support.iter().map(|&(x, y)| wgt(x, y)).sum();
        let cx = support
            .iter()
            .map(|&(x, y)| wgt(x, y) * x as f64)
            .sum::<f64>()
            / total;
        let cy = support
            .iter()
            .map(|&(x, y)| wgt(x, y) * y as f64)
            .sum::<f64>()
            / total;
        let (mut vx, mut vy) = (0.0, 0.0);
        for &(x, y) in support {
            let var = pixel_var(x, y);
            vx += (x as f64 - cx).powi(2) * var;
            vy += (y as f64 - cy).powi(2) * var;
        }
        predicted_sq += (vx + vy) / 2.0 / (total * total);
    }
    let predicted = (predicted_sq / labels.len() as f64).sqrt();
    assert!(
        (measured / predicted - 1.0).abs() < 0.2,
        "measured {measured} predicted {predicted}"
    );
}

#[test]
fn ten_viewpoint_arc_adjacent_error() {
    let k = CameraIntrinsics::new(1000.0, 1000.0, 640.0, 480.0);
    let f = fam(4);
    let layout = CanonicalLayout::new(&f, 0.05, &Default::default());
    let mut estimates = Vec::new();
    let mut truths = Vec::new();
    for i in 0..10 {
        let tilt = -45.0 + 10.0 * i as f64;
        let scene = SynthScene::new(
            TagId::new(&f, 8390).unwrap(),
            centered_pose(tilt.abs(), 0.0, if tilt < 0.0 { 180.0 } else { 0.0 }, 0.5),
            k,
            0.05,
            1280,
            960,
        );
        let (img, gt) = render_scene(&scene).unwrap();
        let det = detect(
            &img,
            std::slice::from_ref(&f),
            &Default::default(),
            &Default::default(),
            &Default::default(),
        );
        estimates.push(
            det.first()
                .and_then(|d| estimate_pose(d, &layout, &k).ok())
                .and_then(|e| mean_pose(&[e.pose])),
        );
        truths.push(gt.pose);
    }
    let motions: Vec<RelativeMotion> = truths
        .windows(2)
        .map(|w| RelativeMotion::between(&w[0], &w[1]))
        .collect();
    let errs = adjacent_pose_error(&estimates, &motions).unwrap();
    assert_eq!(errs.pairs.len(), 9);
    assert!(errs.skipped.is_empty());
    let pos = errs.position_mm.unwrap();
    assert!(pos.avg < 1.0, "avg {} mm, max {} mm", pos.avg, pos.max);
}
