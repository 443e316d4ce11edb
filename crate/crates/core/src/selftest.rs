//! End-to-end acceptance checks, shared by the test suite and the CLI.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{Point2, Point3, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decoder::{detect, DecodeParams, Detection};
use crate::eval::{std_dev, vertex_jitter};
use crate::generator::{render_tag, RenderOptions};
use crate::image::{load_gray, GrayImage};
use crate::pose::{
    estimate_pose, pose_from_homography, project_point, projection_jacobian, refine_pose_lm,
    rotation_angle_between, solve_pnp_planar, CameraIntrinsics, Correspondence, Pose,
};
use crate::segmentation::{estimate_threshold_map, SegmentationParams};
use crate::synth::{centered_pose, render_scene, Background, Occlusion, OcclusionSide, SynthScene};
use crate::tagmodel::{
    capacity, decode_bits, encode_id, enumerate_dictionary, BitString, CanonicalLayout, TagFamily,
    TagId,
};
use crate::topology::{label_components, Color, FilterParams, RegionTree};

/// Environment variable overriding the tag-free image directory.
pub const FP_CORPUS_ENV: &str = "TOPOTAG_FP_CORPUS";

pub const CODEC_BUDGET: Duration = Duration::from_secs(1);
pub const ENUMERATION_BUDGET: Duration = Duration::from_secs(30);
pub const ROUND_TRIP_BUDGET: Duration = Duration::from_secs(120);
pub const ROUND_TRIP_PER_FAMILY: usize = 200;
pub const PERSPECTIVE_SCENES: usize = 500;
pub const PERSPECTIVE_MIN_RECALL: f64 = 0.99;
pub const PERSPECTIVE_MAX_TILT_DEG: f64 = 60.0;
pub const PERSPECTIVE_MAX_BLUR: f64 = 1.0;
pub const PERSPECTIVE_MAX_NOISE: f64 = 5.0 / 255.0;
pub const VERTEX_MAX_ERROR_PX: f64 = 0.2;
pub const JITTER_NOISE_SIGMA: f64 = 0.1;
pub const JITTER_FRAMES: usize = 100;
pub const JITTER_MAX_STD_PX: f64 = 0.15;
const JITTER_MAX_RENDERS: usize = 400;
pub const POSE_MAX_ROTATION_DEG: f64 = 0.2;
pub const POSE_MAX_TRANSLATION_FRACTION: f64 = 0.005;
pub const CORRESPONDENCE_TRIALS: usize = 500;
pub const CORRESPONDENCE_NOISE_PX: f64 = 0.5;
pub const FP_MIN_FRAMES: usize = 100;
pub const JACOBIAN_CASES: usize = 100;
pub const JACOBIAN_STEP: f64 = 1e-6;
pub const JACOBIAN_MAX_REL_ERROR: f64 = 1e-4;
pub const THROUGHPUT_BUDGET: Duration = Duration::from_millis(100);

/// Fronto-parallel cell pitch range, in pixels, used by the synthetic scenes.
const PITCH_PX: (f64, f64) = (16.0, 24.0);
const TAG_SIZE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} [{:>2}] {}: {} ({:.2} s)",
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(id: u8, name: &'static str, f: impl FnOnce() -> (bool, String)) -> CriterionResult {
    let t = Instant::now();
    let (passed, detail) = f();
    CriterionResult {
        id,
        name,
        passed,
        detail,
        elapsed: t.elapsed(),
    }
}

/// Every check, by number.
pub const CRITERIA: [(u8, &str); 12] = [
    (1, "codec exactness"),
    (2, "dictionary enumeration speed"),
    (3, "round-trip detection"),
    (4, "perspective robustness"),
    (5, "vertex accuracy"),
    (6, "pose accuracy"),
    (7, "correspondence-count benefit"),
    (8, "occlusion"),
    (9, "false positives"),
    (10, "jacobian check"),
    (11, "throughput"),
    (12, "invariant suites"),
];

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    pub fp_corpus: PathBuf,
    /// Worker threads for scene rendering and detection (not timing checks).
    pub threads: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            fp_corpus: default_fp_corpus(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

pub fn default_fp_corpus() -> PathBuf {
    std::env::var_os(FP_CORPUS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/fp_corpus"))
}

pub fn run(id: u8, opts: &SelftestOptions) -> Option<CriterionResult> {
    let (_, name) = *CRITERIA.iter().find(|c| c.0 == id)?;
    Some(timed(id, name, || match id {
        1 => codec_exactness(),
        2 => enumeration_speed(),
        3 => round_trip(opts),
        4 => perspective(opts),
        5 => vertex_accuracy(opts),
        6 => pose_accuracy(opts),
        7 => correspondence_benefit(),
        8 => occlusion(opts),
        9 => false_positives(opts),
        10 => jacobian_check(),
        11 => throughput(),
        12 => invariants(),
        _ => unreachable!(),
    }))
}

pub fn run_all(
    opts: &SelftestOptions,
    mut on_result: impl FnMut(&CriterionResult),
) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|&(id, _)| {
            let r = run(id, opts).expect("listed criterion");
            on_result(&r);
            r
        })
        .collect()
}

/// Order-preserving parallel map over scoped threads.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn families() -> Vec<TagFamily> {
    [3, 4, 5]
        .iter()
        .map(|&n| TagFamily::new(n).expect("supported"))
        .collect()
}

fn detect_all(img: &GrayImage) -> Vec<Detection> {
    detect(
        img,
        &families(),
        &SegmentationParams::default(),
        &FilterParams::default(),
        &DecodeParams::default(),
    )
}

fn random_id(rng: &mut ChaCha8Rng, n: usize) -> TagId {
    let fam = TagFamily::new(n).expect("supported");
    TagId::new(&fam, rng.random_range(0..capacity(&fam))).expect("in range")
}

/// Depth at which the tag's cell pitch is `pitch_px` when fronto-parallel.
fn depth_for_pitch(k: &CameraIntrinsics, n: usize, pitch_px: f64) -> f64 {
    k.fx * TAG_SIZE / (n as f64 + 3.0) / pitch_px
}

fn vga() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0)
}

fn texture(seed: u64) -> Background {
    match seed % 2 {
        0 => Background::Perlin {
            scale_px: 40.0,
            octaves: 4,
            low: 20,
            high: 240,
        },
        _ => Background::Checker {
            square_px: 18.0 + (seed % 7) as f64,
            dark: 40,
            light: 200,
        },
    }
}

struct Tally {
    scenes: usize,
    hits: usize,
    wrong: usize,
}

fn tally(results: &[(bool, usize)]) -> Tally {
    Tally {
        scenes: results.len(),
        hits: results.iter().filter(|r| r.0).count(),
        wrong: results.iter().map(|r| r.1).sum(),
    }
}

/// `(found, wrong detections)` for one rendered scene.
fn score_scene(s: &SynthScene) -> (bool, usize) {
    let Ok((img, _)) = render_scene(s) else {
        return (false, 0);
    };
    let id = s.tag_id().expect("valid scene");
    let dets = detect_all(&img);
    let good = dets.iter().filter(|d| d.id == id).count();
    (good > 0, dets.len() - good)
}

fn codec_exactness() -> (bool, String) {
    let t = Instant::now();
    let f3 = TagFamily::new(3).unwrap();
    let f4 = TagFamily::new(4).unwrap();
    let f5 = TagFamily::new(5).unwrap();
    let bits = |s: &str| s.parse::<BitString>().unwrap();
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    check(
        encode_id(TagId::new(&f4, 8390).unwrap())
            .unwrap()
            .to_string()
            == "10000011000110",
        "encode 8390",
    );
    check(
        decode_bits(&f4, &bits("10000011000110"))
            .map(|i| i.value)
            .ok()
            == Some(8390),
        "decode 8390",
    );
    check(
        decode_bits(&f3, &bits("0000000")).map(|i| i.value).ok() == Some(0),
        "decode 0",
    );
    check(
        decode_bits(&f3, &bits("1111111")).map(|i| i.value).ok() == Some(127),
        "decode 127",
    );
    check(
        encode_id(TagId::new(&f3, 127).unwrap())
            .unwrap()
            .to_string()
            == "1111111",
        "encode 127",
    );
    check(
        [capacity(&f3), capacity(&f4), capacity(&f5)] == [128, 16_384, 8_388_608],
        "capacities",
    );
    let el = t.elapsed();
    check(el < CODEC_BUDGET, "time budget");
    (
        failures.is_empty(),
        if failures.is_empty() {
            format!("all exact in {:.1} ms", el.as_secs_f64() * 1e3)
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn enumeration_speed() -> (bool, String) {
    let fam = TagFamily::new(5).unwrap();
    let t = Instant::now();
    let mut count = 0u64;
    let mut ones = 0usize;
    let mut last = 0;
    for id in enumerate_dictionary(&fam) {
        ones += encode_id(id)
            .expect("enumerated ids are valid")
            .count_ones();
        last = id.value;
        count += 1;
    }
    let el = t.elapsed();
    // every bit is set in exactly half of all codes
    let expected_ones = 23 * (1usize << 22);
    let ok = count == 8_388_608
        && last == 8_388_607
        && ones == expected_ones
        && el <= ENUMERATION_BUDGET;
    (
        ok,
        format!(
            "{count} ids encoded in {:.2} s (budget {} s)",
            el.as_secs_f64(),
            ENUMERATION_BUDGET.as_secs()
        ),
    )
}

fn round_trip(opts: &SelftestOptions) -> (bool, String) {
    let t = Instant::now();
    let k = vga();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut scenes = Vec::new();
    for n in [3, 4, 5] {
        for i in 0..ROUND_TRIP_PER_FAMILY {
            let id = random_id(&mut rng, n);
            let depth = depth_for_pitch(&k, n, rng.random_range(PITCH_PX.0..=PITCH_PX.1));
            // keep the tag inside the frame with room to spare
            let half_px = k.fx * TAG_SIZE / depth;
            let ox = rng.random_range(-1.0..=1.0) * (320.0 - half_px).max(0.0) * depth / k.fx;
            let oy = rng.random_range(-1.0..=1.0) * (240.0 - half_px).max(0.0) * depth / k.fy;
            let pose = Pose::new(UnitQuaternion::identity(), Vector3::new(ox, oy, depth));
            let mut s = SynthScene::new(id, pose, k, TAG_SIZE, 640, 480);
            s.seed = (n * 1000 + i) as u64;
            s.background = texture(s.seed);
            scenes.push(s);
        }
    }
    let r = tally(&par_map(&scenes, opts.threads, score_scene));
    let el = t.elapsed();
    let ok = r.hits == r.scenes && r.wrong == 0 && el < ROUND_TRIP_BUDGET;
    (
        ok,
        format!(
            "{}/{} found, {} wrong, {:.1} s (budget {} s)",
            r.hits,
            r.scenes,
            r.wrong,
            el.as_secs_f64(),
            ROUND_TRIP_BUDGET.as_secs()
        ),
    )
}

/// Scenes for the perspective sweep: tilt up to 60 degrees in any direction,
/// any in-plane angle, blur and noise within the stated bounds.
pub fn perspective_scenes(count: usize, seed: u64) -> Vec<SynthScene> {
    let k = vga();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = [3, 4, 5][i % 3];
            let id = random_id(&mut rng, n);
            let tilt = rng.random_range(0.0..=PERSPECTIVE_MAX_TILT_DEG);
            let spin = rng.random_range(0.0..=350.0);
            let az = rng.random_range(0.0..360.0);
            let depth = depth_for_pitch(&k, n, rng.random_range(PITCH_PX.0..=PITCH_PX.1));
            let mut s = SynthScene::new(
                id,
                centered_pose(tilt, spin, az, depth),
                k,
                TAG_SIZE,
                640,
                480,
            );
            s.blur_sigma = rng.random_range(0.0..=PERSPECTIVE_MAX_BLUR);
            s.noise_sigma = rng.random_range(0.0..=PERSPECTIVE_MAX_NOISE);
            s.seed = mix(seed, i);
            s.background = texture(s.seed);
            s
        })
        .collect()
}

fn mix(seed: u64, i: usize) -> u64 {
    crate::synth::mix_seed(seed, i as u64)
}

fn perspective(opts: &SelftestOptions) -> (bool, String) {
    let scenes = perspective_scenes(PERSPECTIVE_SCENES, 11);
    let r = tally(&par_map(&scenes, opts.threads, score_scene));
    let recall = r.hits as f64 / r.scenes as f64;
    let ok = recall >= PERSPECTIVE_MIN_RECALL && r.wrong == 0;
    (
        ok,
        format!(
            "recall {:.3} ({}/{}), wrong-id detections {}",
            recall, r.hits, r.scenes, r.wrong
        ),
    )
}

fn vertex_accuracy(opts: &SelftestOptions) -> (bool, String) {
    let k = vga();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scenes: Vec<SynthScene> = (0..30)
        .map(|i| {
            let n = [3, 4, 5][i % 3];
            let depth = depth_for_pitch(&k, n, rng.random_range(PITCH_PX.0..=PITCH_PX.1));
            // sub-pixel placement
            let shift = Vector3::new(
                rng.random_range(-0.5..0.5) * depth / k.fx,
                rng.random_range(-0.5..0.5) * depth / k.fy,
                0.0,
            );
            let mut s = SynthScene::new(
                random_id(&mut rng, n),
                Pose::new(
                    UnitQuaternion::identity(),
                    Vector3::new(0.0, 0.0, depth) + shift,
                ),
                k,
                TAG_SIZE,
                640,
                480,
            );
            s.background = Background::Flat { level: 128 };
            s
        })
        .collect();
    let errors: Vec<Option<f64>> = par_map(&scenes, opts.threads, |s| {
        let (img, gt) = render_scene(s).ok()?;
        let id = s.tag_id().ok()?;
        let det = detect_all(&img).into_iter().find(|d| d.id == id)?;
        Some(
            det.vertices
                .iter()
                .zip(&gt.vertex_pixels)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
        )
    });
    let missed = errors.iter().filter(|e| e.is_none()).count();
    let worst = errors.iter().flatten().copied().fold(0.0, f64::max);

    // jitter over a static noisy scene
    let fam = TagFamily::new(4).unwrap();
    let depth = depth_for_pitch(&k, 4, 20.0);
    let mut base = SynthScene::new(
        TagId::new(&fam, 8390).unwrap(),
        centered_pose(0.0, 0.0, 0.0, depth),
        k,
        TAG_SIZE,
        640,
        480,
    );
    base.noise_sigma = JITTER_NOISE_SIGMA;
    // frames where a noise speckle breaks the region topology are rejected,
    // so keep rendering until enough frames decode
    let mut samples: Vec<Vec<Point2<f64>>> = Vec::new();
    let mut rendered = 0;
    while samples.len() < JITTER_FRAMES && rendered < JITTER_MAX_RENDERS {
        let batch: Vec<SynthScene> = (rendered..rendered + JITTER_FRAMES)
            .map(|i| {
                let mut s = base.clone();
                s.seed = 1000 + i as u64;
                s
            })
            .collect();
        rendered += batch.len();
        let found = par_map(&batch, opts.threads, |s| {
            let (img, _) = render_scene(s).ok()?;
            detect_all(&img)
                .into_iter()
                .find(|d| d.id.value == 8390)
                .map(|d| d.vertices)
        });
        samples.extend(found.into_iter().flatten());
    }
    samples.truncate(JITTER_FRAMES);
    let jitter = vertex_jitter(&samples).unwrap_or(f64::INFINITY);
    let ok = missed == 0
        && worst <= VERTEX_MAX_ERROR_PX
        && samples.len() == JITTER_FRAMES
        && jitter <= JITTER_MAX_STD_PX;
    (
        ok,
        format!(
            "noise-free max error {worst:.3} px over {} scenes ({missed} missed); noisy jitter {jitter:.3} px over {} frames ({rendered} rendered)",
            scenes.len(),
            samples.len(),
        ),
    )
}

/// Narrow field of view: a 5 cm tag spans roughly 300 to 670 px over the
/// depth range.
fn pose_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(4000.0, 4000.0, 960.0, 720.0)
}

fn pose_accuracy(opts: &SelftestOptions) -> (bool, String) {
    let k = pose_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scenes: Vec<SynthScene> = (0..60)
        .map(|i| {
            let n = [3, 4, 5][i % 3];
            let pose = centered_pose(
                rng.random_range(0.0..=60.0),
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..360.0),
                rng.random_range(0.3..=0.7),
            );
            let mut s = SynthScene::new(random_id(&mut rng, n), pose, k, TAG_SIZE, 1920, 1440);
            s.seed = i as u64;
            s.background = texture(s.seed);
            s
        })
        .collect();
    let results: Vec<Option<(f64, f64, bool)>> = par_map(&scenes, opts.threads, |s| {
        let (img, gt) = render_scene(s).ok()?;
        let id = s.tag_id().ok()?;
        let det = detect_all(&img).into_iter().find(|d| d.id == id)?;
        let layout = s.layout().ok()?;
        let est = estimate_pose(&det, &layout, &k).ok()?;
        let corr: Vec<Correspondence> = layout
            .model_points
            .iter()
            .zip(&det.vertices)
            .map(|(m, v)| Correspondence {
                model: *m,
                image: *v,
            })
            .collect();
        let init =
            pose_from_homography(&crate::pose::estimate_homography_dlt(&corr).ok()?, &k).ok()?;
        let lm = refine_pose_lm(&init, &corr, &k).ok()?;
        let rot = rotation_angle_between(&est.pose.rotation, &gt.pose.rotation).to_degrees();
        let trans = (est.pose.translation - gt.pose.translation).norm() / gt.pose.translation.z;
        Some((rot, trans, lm.rmse <= lm.initial_rmse))
    });
    let missed = results.iter().filter(|r| r.is_none()).count();
    let ok_runs: Vec<&(f64, f64, bool)> = results.iter().flatten().collect();
    let worst_rot = ok_runs.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_trans = ok_runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let monotone = ok_runs.iter().all(|r| r.2);
    let ok = missed == 0
        && worst_rot < POSE_MAX_ROTATION_DEG
        && worst_trans < POSE_MAX_TRANSLATION_FRACTION
        && monotone;
    (
        ok,
        format!(
            "{} scenes, {missed} missed; max rotation error {worst_rot:.4} deg, max translation error {:.3}% of depth; LM never increased cost: {monotone}",
            scenes.len(),
            worst_trans * 100.0
        ),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// `side x side` planar points spanning the same square.
fn planar_grid(side: usize, span: f64) -> Vec<Point3<f64>> {
    let step = span / (side - 1) as f64;
    (0..side)
        .flat_map(|j| {
            (0..side).map(move |i| {
                Point3::new(
                    i as f64 * step - span / 2.0,
                    j as f64 * step - span / 2.0,
                    0.0,
                )
            })
        })
        .collect()
}

/// Median rotation (deg) and translation (m) errors per configuration size.
pub fn correspondence_study(trials: usize, noise_px: f64, seed: u64) -> Vec<(usize, f64, f64)> {
    let k = vga();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_px).expect("positive sigma");
    let span = TAG_SIZE * 4.0 / 7.0;
    let configs: Vec<Vec<Point3<f64>>> =
        [2, 3, 4, 5].iter().map(|&s| planar_grid(s, span)).collect();
    let mut errs = vec![(Vec::new(), Vec::new()); configs.len()];
    for _ in 0..trials {
        let truth = centered_pose(
            rng.random_range(0.0..45.0),
            rng.random_range(0.0..360.0),
            rng.random_range(0.0..360.0),
            rng.random_range(0.2..0.4),
        );
        for (ci, pts) in configs.iter().enumerate() {
            let corr: Vec<Correspondence> = pts
                .iter()
                .map(|p| {
                    let q = project_point(&truth, &k, p).expect("in front");
                    Correspondence {
                        model: *p,
                        image: Point2::new(
                            q.x + normal.sample(&mut rng),
                            q.y + normal.sample(&mut rng),
                        ),
                    }
                })
                .collect();
            let (r, t) = match solve_pnp_planar(&corr, &k) {
                Ok(est) => (
                    rotation_angle_between(&est.pose.rotation, &truth.rotation).to_degrees(),
                    (est.pose.translation - truth.translation).norm(),
                ),
                Err(_) => (f64::INFINITY, f64::INFINITY),
            };
            errs[ci].0.push(r);
            errs[ci].1.push(t);
        }
    }
    configs
        .iter()
        .zip(errs)
        .map(|(c, (r, t))| (c.len(), median(r), median(t)))
        .collect()
}

fn correspondence_benefit() -> (bool, String) {
    let m = correspondence_study(CORRESPONDENCE_TRIALS, CORRESPONDENCE_NOISE_PX, 7);
    let ordered = m.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].2 <= w[0].2);
    let detail = m
        .iter()
        .map(|(n, r, t)| format!("{n} pts: {r:.3} deg / {:.3} mm", t * 1e3))
        .collect::<Vec<_>>()
        .join("; ");
    (ordered, format!("medians {detail}"))
}

fn occlusion(opts: &SelftestOptions) -> (bool, String) {
    let k = vga();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sides = [
        OcclusionSide::TowardBaseline,
        OcclusionSide::AwayFromBaseline,
    ];
    let mut light = Vec::new();
    let mut heavy = Vec::new();
    for n in [3, 4, 5] {
        for j in 0..5 {
            let id = random_id(&mut rng, n);
            let depth = depth_for_pitch(&k, n, 20.0);
            let pose = centered_pose(
                rng.random_range(0.0..20.0),
                rng.random_range(0.0..360.0),
                rng.random_range(0.0..360.0),
                depth,
            );
            for side in sides {
                for step in 1..=10 {
                    let mut s = SynthScene::new(id, pose, k, TAG_SIZE, 640, 480);
                    s.seed = (n * 100 + j * 10 + step) as u64;
                    s.background = texture(s.seed);
                    s.occlusion = Some(Occlusion {
                        fraction: step as f64 / 10.0,
                        side,
                    });
                    if step == 1 {
                        light.push(s);
                    } else {
                        heavy.push(s);
                    }
                }
            }
        }
    }
    let l = tally(&par_map(&light, opts.threads, score_scene));
    let h = tally(&par_map(&heavy, opts.threads, score_scene));
    let ok = l.hits == l.scenes && l.wrong == 0 && h.wrong == 0;
    (ok, format!("10%: {}/{} decoded, {} wrong; 20-100%: {} wrong-id detections over {} scenes ({} still decoded correctly)", l.hits, l.scenes, l.wrong, h.wrong, h.scenes, h.hits))
}

/// Tag-free frames: each corpus image in several orientations and crops,
/// plus procedural noise, gradients and blobs.
pub fn fp_frames(dir: &Path) -> crate::Result<Vec<(String, GrayImage)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| crate::Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png" || x == "pgm"))
        .collect();
    paths.sort();
    let mut frames = Vec::new();
    for p in &paths {
        let img = load_gray(p)?;
        let name = p
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        let (w, h) = (img.width(), img.height());
        let variants: Vec<(&str, GrayImage)> = vec![
            ("orig", img.clone()),
            (
                "flip_h",
                GrayImage::from_fn(w, h, |x, y| img.get(w - 1 - x, y)),
            ),
            (
                "flip_v",
                GrayImage::from_fn(w, h, |x, y| img.get(x, h - 1 - y)),
            ),
            ("transpose", GrayImage::from_fn(h, w, |x, y| img.get(y, x))),
            (
                "invert",
                GrayImage::from_fn(w, h, |x, y| 255 - img.get(x, y)),
            ),
            (
                "zoom2",
                GrayImage::from_fn(w, h, |x, y| img.get(w / 4 + x / 2, h / 4 + y / 2)),
            ),
        ];
        frames.extend(
            variants
                .into_iter()
                .map(|(v, i)| (format!("{name}:{v}"), i)),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..8 {
        let sigma = 10.0 + 10.0 * i as f64;
        let normal = Normal::new(128.0, sigma).expect("positive");
        let noise = GrayImage::from_fn(320, 240, |_, _| {
            normal.sample(&mut rng).round().clamp(0.0, 255.0) as u8
        });
        frames.push((format!("noise_{i}"), noise));
        let scale = 8.0 + 6.0 * i as f64;
        let bg = Background::Perlin {
            scale_px: scale,
            octaves: 1 + i % 4,
            low: 0,
            high: 255,
        };
        frames.push((
            format!("perlin_{i}"),
            crate::synth::render_background(&bg, 320, 240, i as u64)?,
        ));
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        frames.push((
            format!("gradient_{i}"),
            GrayImage::from_fn(320, 240, |x, y| {
                (128.0 + a * (x as f64 - 160.0) + b * (y as f64 - 120.0)).clamp(0.0, 255.0) as u8
            }),
        ));
        let blobs: Vec<(f64, f64, f64, bool)> = (0..40)
            .map(|_| {
                (
                    rng.random_range(0.0..320.0),
                    rng.random_range(0.0..240.0),
                    rng.random_range(2.0..25.0),
                    rng.random_bool(0.5),
                )
            })
            .collect();
        frames.push((
            format!("blobs_{i}"),
            GrayImage::from_fn(320, 240, |x, y| {
                let mut v = 128u8;
                for &(cx, cy, r, dark) in &blobs {
                    if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                        v = if dark { 30 } else { 225 };
                    }
                }
                v
            }),
        ));
    }
    Ok(frames)
}

fn false_positives(opts: &SelftestOptions) -> (bool, String) {
    let frames = match fp_frames(&opts.fp_corpus) {
        Ok(f) => f,
        Err(e) => {
            return (
                false,
                format!("cannot read corpus {}: {e}", opts.fp_corpus.display()),
            )
        }
    };
    let counts = par_map(&frames, opts.threads, |(_, img)| detect_all(img).len());
    let total: usize = counts.iter().sum();
    let offenders: Vec<&str> = frames
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|((n, _), _)| n.as_str())
        .collect();
    let ok = frames.len() >= FP_MIN_FRAMES && total == 0;
    (
        ok,
        format!(
            "{} detections over {} tag-free frames{}",
            total,
            frames.len(),
            if offenders.is_empty() {
                String::new()
            } else {
                format!(" in {offenders:?}")
            }
        ),
    )
}

fn jacobian_check() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..JACOBIAN_CASES {
        let mut k = CameraIntrinsics::new(
            rng.random_range(400.0..1500.0),
            rng.random_range(400.0..1500.0),
            rng.random_range(200.0..800.0),
            rng.random_range(200.0..600.0),
        );
        k.dist = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.05..0.05),
        ];
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let pose = Pose::new(
            UnitQuaternion::from_scaled_axis(axis),
            Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.3..1.0),
            ),
        );
        let p = Point3::new(
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            0.0,
        );
        let Ok((_, j)) = projection_jacobian(&pose, &k, &p) else {
            return (false, "projection failed".into());
        };
        let mut num = nalgebra::Matrix2x6::zeros();
        for c in 0..6 {
            let mut d = Vector6::zeros();
            d[c] = JACOBIAN_STEP;
            let plus = project_point(&pose.retract(&d), &k, &p).expect("in front");
            let minus = project_point(&pose.retract(&(-d)), &k, &p).expect("in front");
            num.set_column(c, &((plus - minus) / (2.0 * JACOBIAN_STEP)));
        }
        worst = worst.max((j - num).norm() / num.norm().max(1e-12));
    }
    (
        worst < JACOBIAN_MAX_REL_ERROR,
        format!("max relative error {worst:.2e} over {JACOBIAN_CASES} cases"),
    )
}

/// 1280x960 frame with one 4x4 tag; median of several single-threaded runs.
pub fn throughput_frame() -> GrayImage {
    let k = CameraIntrinsics::new(1000.0, 1000.0, 640.0, 480.0);
    let fam = TagFamily::new(4).unwrap();
    let mut s = SynthScene::new(
        TagId::new(&fam, 8390).unwrap(),
        centered_pose(20.0, 15.0, 30.0, 0.25),
        k,
        TAG_SIZE,
        1280,
        960,
    );
    s.background = Background::Perlin {
        scale_px: 80.0,
        octaves: 4,
        low: 30,
        high: 230,
    };
    s.noise_sigma = 2.0 / 255.0;
    render_scene(&s).expect("valid scene").0
}

fn throughput() -> (bool, String) {
    let img = throughput_frame();
    let fams = families();
    let mut times = Vec::new();
    let mut found = true;
    for _ in 0..11 {
        let t = Instant::now();
        let dets = detect(
            &img,
            &fams,
            &SegmentationParams::default(),
            &FilterParams::default(),
            &DecodeParams::default(),
        );
        times.push(t.elapsed().as_secs_f64());
        found &= dets.iter().any(|d| d.id.value == 8390);
    }
    let med = median(times);
    (
        found && med <= THROUGHPUT_BUDGET.as_secs_f64(),
        format!(
            "median {:.1} ms per 1280x960 frame (budget {} ms), tag found: {found}",
            med * 1e3,
            THROUGHPUT_BUDGET.as_millis()
        ),
    )
}

/// Brute-force flood fill: region count and per-region areas, in raster
/// order of first pixel.
fn flood_fill_areas(bin: &crate::image::BinaryImage) -> Vec<u64> {
    let (w, h) = (bin.width(), bin.height());
    let mut seen = vec![false; w * h];
    let mut areas = Vec::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let white = bin.data()[start];
        let mut stack = vec![start];
        seen[start] = true;
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if (dx == 0 && dy == 0) || (white && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] && bin.data()[j] == white {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    areas
}

fn invariants() -> (bool, String) {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    // labeling against flood fill, and color alternation along the tree
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..48), rng.random_range(1..48));
        let density = rng.random_range(0.2..0.8);
        let bin = crate::image::BinaryImage::from_fn(w, h, |_, _| rng.random_bool(density));
        let (_, regions) = label_components(&bin);
        let areas: Vec<u64> = regions.iter().map(|r| r.area).collect();
        if areas != flood_fill_areas(&bin) {
            failures.push("labeling differs from flood fill");
            break;
        }
        let tree = RegionTree::from_binary(&bin);
        let alternates = tree
            .regions
            .iter()
            .all(|r| r.parent.is_none_or(|p| tree.region(p).color != r.color));
        let colors_ok = tree
            .regions
            .iter()
            .all(|r| bin.get(r.seed.0 as usize, r.seed.1 as usize) == (r.color == Color::White));
        if !alternates || !colors_ok {
            failures.push("tree colors do not alternate");
            break;
        }
    }

    // threshold map never drops below the clamp
    let params = SegmentationParams::default();
    for _ in 0..10 {
        let img = GrayImage::from_fn(96, 64, |_, _| rng.random_range(0..=255));
        match estimate_threshold_map(&img, &params) {
            Ok(map) if map.data().iter().all(|&v| v >= params.alpha - 1e-12) => {}
            _ => {
                failures.push("threshold map below clamp");
                break;
            }
        }
    }

    // decoding is invariant to quarter-turn rotations of the image
    for n in [3, 4, 5] {
        let id = random_id(&mut rng, n);
        let tag = render_tag(id, &RenderOptions::default()).expect("renders");
        let pad = 24;
        let mut img = GrayImage::from_fn(tag.width() + 2 * pad, tag.height() + 2 * pad, |x, y| {
            if x < pad || y < pad || x >= tag.width() + pad || y >= tag.height() + pad {
                255
            } else {
                tag.get(x - pad, y - pad)
            }
        });
        for _ in 0..4 {
            if detect_all(&img).iter().map(|d| d.id).collect::<Vec<_>>() != vec![id] {
                failures.push("rotated tag decoded differently");
                break;
            }
            let s = img.width();
            img = GrayImage::from_fn(s, s, |x, y| img.get(y, s - 1 - x));
        }
    }

    // standard deviation ignores constant offsets
    for _ in 0..20 {
        let xs: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        if (std_dev(&xs) - std_dev(&shifted)).abs() > 1e-9 {
            failures.push("std not translation invariant");
            break;
        }
    }

    // layout sanity: 16 correspondences for a 4x4 tag
    let layout = CanonicalLayout::new(&TagFamily::new(4).unwrap(), TAG_SIZE, &Default::default());
    if layout.model_points.len() != 16 {
        failures.push("4x4 layout is not 16 points");
    }

    (
        failures.is_empty(),
        if failures.is_empty() {
            "labeling, tree alternation, clamp floor, rotation invariance, std invariance".into()
        } else {
            failures.join(", ")
        },
    )
}
