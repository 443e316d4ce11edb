//! Detection scoring, jitter statistics and pose accuracy metrics.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{Matrix4, Point2, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::decoder::Detection;
use crate::error::{Error, Result};
use crate::geometry::{convex_hull, cross, polygon_area, signed_area};
use crate::pose::{rotation_angle_between, Pose, PoseEstimate};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Viewpoints with fewer samples are excluded from jitter statistics.
pub const MIN_JITTER_SAMPLES: usize = 50;

pub const IOU_THRESHOLD: f64 = 0.5;

fn ccw(poly: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut p = poly.to_vec();
    if signed_area(&p) < 0.0 {
        p.reverse();
    }
    p
}

fn is_convex(poly: &[Point2<f64>]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0;
    for i in 0..n {
        let c = cross(poly[i], poly[(i + 1) % n], poly[(i + 2) % n]);
        if c != 0.0 {
            if sign != 0.0 && c.signum() != sign {
                return false;
            }
            sign = c.signum();
        }
    }
    true
}

/// Sutherland-Hodgman: `subject` clipped by the convex counter-clockwise
/// polygon `clip`. The result's area equals the intersection area even for
/// a non-convex subject.
fn clip_convex(subject: &[Point2<f64>], clip: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        let inside = |p: Point2<f64>| cross(a, b, p) >= 0.0;
        let intersect = |p: Point2<f64>, q: Point2<f64>| {
            let (cp, cq) = (cross(a, b, p), cross(a, b, q));
            let t = cp / (cp - cq);
            p + (q - p) * t
        };
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            match (inside(p), inside(q)) {
                (true, true) => out.push(q),
                (true, false) => out.push(intersect(p, q)),
                (false, true) => {
                    out.push(intersect(p, q));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Ear-clipping triangulation of a simple counter-clockwise polygon.
fn triangulate(poly: &[Point2<f64>]) -> Vec<[Point2<f64>; 3]> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut tris = Vec::new();
    let mut guard = 0;
    while idx.len() > 3 && guard < 10 * poly.len() * poly.len() {
        guard += 1;
        let m = idx.len();
        let ear = (0..m).find(|&i| {
            let (a, b, c) = (
                poly[idx[(i + m - 1) % m]],
                poly[idx[i]],
                poly[idx[(i + 1) % m]],
            );
            if cross(a, b, c) <= 0.0 {
                return false;
            }
            idx.iter().all(|&k| {
                let p = poly[k];
                p == a
                    || p == b
                    || p == c
                    || !(cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0)
            })
        });
        match ear {
            Some(i) => {
                tris.push([
                    poly[idx[(i + m - 1) % m]],
                    poly[idx[i]],
                    poly[idx[(i + 1) % m]],
                ]);
                idx.remove(i);
            }
            None => break,
        }
    }
    if idx.len() == 3 {
        tris.push([poly[idx[0]], poly[idx[1]], poly[idx[2]]]);
    }
    tris
}

fn intersection_area(a: &[Point2<f64>], b: &[Point2<f64>]) -> f64 {
    if is_convex(b) {
        polygon_area(&clip_convex(a, b))
    } else if is_convex(a) {
        polygon_area(&clip_convex(b, a))
    } else {
        triangulate(b)
            .iter()
            .map(|t| polygon_area(&clip_convex(a, t)))
            .sum()
    }
}

/// Intersection over union of two simple polygons; 0 if either is degenerate.
pub fn iou(a: &[Point2<f64>], b: &[Point2<f64>]) -> f64 {
    let (a, b) = (ccw(a), ccw(b));
    let (area_a, area_b) = (polygon_area(&a), polygon_area(&b));
    if !(area_a > 0.0 && area_b > 0.0) {
        return 0.0;
    }
    let inter = intersection_area(&a, &b).clamp(0.0, area_a.min(area_b));
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One line of detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: String,
    pub family: usize,
    pub id: u64,
    pub bits: String,
    pub vertices: Vec<[f64; 2]>,
    /// Image to lattice, row-major.
    pub homography: [f64; 9],
    pub polygon: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_quat: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_px: Option<f64>,
}

impl DetectionRecord {
    pub fn new(frame: &str, det: &Detection, pose: Option<&PoseEstimate>) -> Self {
        let h = det.homography;
        let pts = |v: &[Point2<f64>]| v.iter().map(|p| [p.x, p.y]).collect();
        let q = pose.map(|p| {
            let q = p.pose.rotation.quaternion();
            [q.w, q.i, q.j, q.k]
        });
        Self {
            frame: frame.to_string(),
            family: det.id.grid_n,
            id: det.id.value,
            bits: det.bits.to_string(),
            vertices: pts(&det.vertices),
            homography: [
                h[(0, 0)],
                h[(0, 1)],
                h[(0, 2)],
                h[(1, 0)],
                h[(1, 1)],
                h[(1, 2)],
                h[(2, 0)],
                h[(2, 1)],
                h[(2, 2)],
            ],
            polygon: pts(&det.boundary_polygon),
            rotation_quat: q,
            translation_m: pose.map(|p| p.pose.translation.into()),
            rmse_px: pose.map(|p| p.rmse),
        }
    }

    pub fn polygon_points(&self) -> Vec<Point2<f64>> {
        self.polygon
            .iter()
            .map(|&[x, y]| Point2::new(x, y))
            .collect()
    }

    pub fn vertex_points(&self) -> Vec<Point2<f64>> {
        self.vertices
            .iter()
            .map(|&[x, y]| Point2::new(x, y))
            .collect()
    }

    pub fn pose(&self) -> Option<Pose> {
        let [w, x, y, z] = self.rotation_quat?;
        let t = self.translation_m?;
        Some(Pose::new(
            UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z)),
            Vector3::from(t),
        ))
    }
}

/// Reads JSON-lines detections, skipping blank lines.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Ground truth for one frame. Frames without a tag have no `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    /// Image path as written in detection records.
    pub image: String,
    #[serde(default)]
    pub polygon: Vec<[f64; 2]>,
    #[serde(default)]
    pub grid_n: Option<usize>,
    #[serde(default)]
    pub id: Option<u64>,
    #[serde(default)]
    pub pose: Option<Pose>,
    /// Static viewpoint the frame belongs to.
    #[serde(default)]
    pub group: Option<String>,
}

impl FrameTruth {
    pub fn polygon_points(&self) -> Vec<Point2<f64>> {
        self.polygon
            .iter()
            .map(|&[x, y]| Point2::new(x, y))
            .collect()
    }

    fn matches(&self, r: &DetectionRecord) -> bool {
        self.id == Some(r.id)
            && self.grid_n.is_none_or(|n| n == r.family)
            && iou(&self.polygon_points(), &r.polygon_points()) >= IOU_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub frames: Vec<FrameTruth>,
}

impl Manifest {
    pub fn new(frames: Vec<FrameTruth>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            frames,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported manifest schema {}",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn recall(&self) -> Option<f64> {
        (self.tp + self.fn_ > 0).then(|| self.tp as f64 / (self.tp + self.fn_) as f64)
    }

    pub fn precision(&self) -> Option<f64> {
        (self.tp + self.fp > 0).then(|| self.tp as f64 / (self.tp + self.fp) as f64)
    }
}

/// Scores one frame: the first detection matching id and polygon is the
/// true positive; every other detection is a false positive.
pub fn score_frame(dets: &[DetectionRecord], truth: &FrameTruth) -> (Counts, Option<usize>) {
    let hit = if truth.id.is_some() {
        dets.iter().position(|d| truth.matches(d))
    } else {
        None
    };
    let counts = Counts {
        tp: usize::from(hit.is_some()),
        fp: dets.len() - usize::from(hit.is_some()),
        fn_: usize::from(truth.id.is_some() && hit.is_none()),
    };
    (counts, hit)
}

/// Sums per-frame counts; detections are grouped by their `frame` field.
pub fn score_frames(dets: &[DetectionRecord], truths: &[FrameTruth]) -> Counts {
    let by_frame = group_by_frame(dets);
    let mut total = Counts::default();
    for t in truths {
        let (c, _) = score_frame(
            by_frame
                .get(t.image.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]),
            t,
        );
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    total
}

fn group_by_frame(dets: &[DetectionRecord]) -> HashMap<&str, Vec<DetectionRecord>> {
    let mut m: HashMap<&str, Vec<DetectionRecord>> = HashMap::new();
    for d in dets {
        m.entry(d.frame.as_str()).or_default().push(d.clone());
    }
    m
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-coordinate vertex STD pooled over vertices and axes:
/// `sqrt(mean_i (var_x_i + var_y_i) / 2)`. Samples are frames, each a full
/// vertex list of equal length.
pub fn vertex_jitter(samples: &[Vec<Point2<f64>>]) -> Result<f64> {
    let Some(first) = samples.first() else {
        return Ok(0.0);
    };
    if samples.iter().any(|s| s.len() != first.len()) {
        return Err(Error::InvalidArgument(
            "vertex lists differ in length".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 0..first.len() {
        let xs: Vec<f64> = samples.iter().map(|s| s[i].x).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s[i].y).collect();
        acc += (std_dev(&xs).powi(2) + std_dev(&ys).powi(2)) / 2.0;
    }
    Ok((acc / first.len() as f64).sqrt())
}

/// Mean rotation: dominant eigenvector of the summed quaternion outer
/// products, which is insensitive to quaternion sign.
pub fn mean_rotation(qs: &[UnitQuaternion<f64>]) -> Option<UnitQuaternion<f64>> {
    if qs.is_empty() {
        return None;
    }
    let mut m = Matrix4::zeros();
    for q in qs {
        let v: Vector4<f64> = q.quaternion().coords;
        m += v * v.transpose();
    }
    let eig = m.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k);
    Some(UnitQuaternion::from_quaternion(
        nalgebra::Quaternion::from_vector(v.into_owned()),
    ))
}

pub fn mean_pose(poses: &[Pose]) -> Option<Pose> {
    let r = mean_rotation(&poses.iter().map(|p| p.rotation).collect::<Vec<_>>())?;
    let t = poses.iter().map(|p| p.translation).sum::<Vector3<f64>>() / poses.len() as f64;
    Some(Pose::new(r, t))
}

/// Pose jitter at one viewpoint: position STD in mm as
/// `sqrt(trace(cov(t)))`, rotation STD in degrees as the RMS angle to the
/// mean rotation.
pub fn pose_jitter(poses: &[Pose]) -> Option<(f64, f64)> {
    let mean = mean_pose(poses)?;
    let n = poses.len() as f64;
    let pos = (poses
        .iter()
        .map(|p| (p.translation - mean.translation).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt()
        * 1000.0;
    let rot = (poses
        .iter()
        .map(|p| rotation_angle_between(&p.rotation, &mean.rotation).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        .to_degrees();
    Some((pos, rot))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AvgMax {
    pub avg: f64,
    pub max: f64,
}

impl AvgMax {
    pub fn of(xs: &[f64]) -> Option<Self> {
        (!xs.is_empty()).then(|| AvgMax {
            avg: xs.iter().sum::<f64>() / xs.len() as f64,
            max: xs.iter().copied().fold(f64::MIN, f64::max),
        })
    }
}

/// Samples collected at one static viewpoint.
#[derive(Debug, Clone, Default)]
pub struct ViewpointSamples {
    pub name: String,
    pub vertices: Vec<Vec<Point2<f64>>>,
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JitterSummary {
    /// Viewpoints with at least [`MIN_JITTER_SAMPLES`] samples.
    pub reliable: Vec<String>,
    pub unreliable: Vec<String>,
    pub vertex_px: Option<AvgMax>,
    pub position_mm: Option<AvgMax>,
    pub rotation_deg: Option<AvgMax>,
}

pub fn jitter_stats(views: &[ViewpointSamples]) -> Result<JitterSummary> {
    let mut s = JitterSummary::default();
    let (mut vj, mut pj, mut rj) = (Vec::new(), Vec::new(), Vec::new());
    for v in views {
        let n = v.vertices.len().max(v.poses.len());
        if n < MIN_JITTER_SAMPLES {
            s.unreliable.push(v.name.clone());
            continue;
        }
        s.reliable.push(v.name.clone());
        if v.vertices.len() >= MIN_JITTER_SAMPLES {
            vj.push(vertex_jitter(&v.vertices)?);
        }
        if v.poses.len() >= MIN_JITTER_SAMPLES {
            let (p, r) = pose_jitter(&v.poses).expect("non-empty");
            pj.push(p);
            rj.push(r);
        }
    }
    s.vertex_px = AvgMax::of(&vj);
    s.position_mm = AvgMax::of(&pj);
    s.rotation_deg = AvgMax::of(&rj);
    Ok(s)
}

/// Motion from one viewpoint's pose to the next, in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMotion {
    pub dt: Vector3<f64>,
    pub dr: UnitQuaternion<f64>,
}

impl RelativeMotion {
    pub fn between(a: &Pose, b: &Pose) -> Self {
        Self {
            dt: b.translation - a.translation,
            dr: b.rotation * a.rotation.inverse(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjacentErrors {
    /// `(position mm, rotation deg)` per evaluated pair.
    pub pairs: Vec<(f64, f64)>,
    /// Indices `i` of pairs `(i, i + 1)` skipped for a missing estimate.
    pub skipped: Vec<usize>,
    pub position_mm: Option<AvgMax>,
    pub rotation_deg: Option<AvgMax>,
}

/// Compares estimated motion between consecutive viewpoints with the true
/// motion. `truth[i]` is the motion from viewpoint `i` to `i + 1`.
pub fn adjacent_pose_error(
    estimates: &[Option<Pose>],
    truth: &[RelativeMotion],
) -> Result<AdjacentErrors> {
    if estimates.len() < 2 || truth.len() != estimates.len() - 1 {
        return Err(Error::InvalidArgument(format!(
            "{} viewpoints need {} motions, got {}",
            estimates.len(),
            estimates.len().saturating_sub(1),
            truth.len()
        )));
    }
    let mut out = AdjacentErrors::default();
    for (i, gt) in truth.iter().enumerate() {
        match (&estimates[i], &estimates[i + 1]) {
            (Some(a), Some(b)) => {
                let est = RelativeMotion::between(a, b);
                let pos = (est.dt - gt.dt).norm() * 1000.0;
                let rot = rotation_angle_between(&est.dr, &gt.dr).to_degrees();
                out.pairs.push((pos, rot));
            }
            _ => out.skipped.push(i),
        }
    }
    out.position_mm = AvgMax::of(&out.pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    out.rotation_deg = AvgMax::of(&out.pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub counts: Counts,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub jitter: JitterSummary,
    pub adjacent: Option<AdjacentErrors>,
}

/// Full evaluation of detections against a manifest.
///
/// Jitter uses the matched detection of each frame, grouped by viewpoint.
/// Adjacent errors compare mean poses of consecutive viewpoints (in order
/// of first appearance) whose truth carries a pose.
pub fn evaluate(manifest: &Manifest, dets: &[DetectionRecord]) -> Result<MetricsReport> {
    let by_frame = group_by_frame(dets);
    let mut counts = Counts::default();
    let mut groups: BTreeMap<usize, ViewpointSamples> = BTreeMap::new();
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut group_truth: BTreeMap<usize, Pose> = BTreeMap::new();
    for t in &manifest.frames {
        let frame_dets = by_frame
            .get(t.image.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let (c, hit) = score_frame(frame_dets, t);
        counts.tp += c.tp;
        counts.fp += c.fp;
        counts.fn_ += c.fn_;
        let Some(name) = &t.group else { continue };
        let next = order.len();
        let gi = *order.entry(name.clone()).or_insert(next);
        let g = groups.entry(gi).or_insert_with(|| ViewpointSamples {
            name: name.clone(),
            ..Default::default()
        });
        if let Some(p) = t.pose {
            group_truth.entry(gi).or_insert(p);
        }
        if let Some(d) = hit.map(|i| &frame_dets[i]) {
            g.vertices.push(d.vertex_points());
            if let Some(p) = d.pose() {
                g.poses.push(p);
            }
        }
    }
    let views: Vec<ViewpointSamples> = groups.values().cloned().collect();
    let jitter = jitter_stats(&views)?;
    let adjacent = if views.len() >= 2 && group_truth.len() == views.len() {
        let estimates: Vec<Option<Pose>> = views.iter().map(|v| mean_pose(&v.poses)).collect();
        let truths: Vec<&Pose> = group_truth.values().collect();
        let motions: Vec<RelativeMotion> = truths
            .windows(2)
            .map(|w| RelativeMotion::between(w[0], w[1]))
            .collect();
        Some(adjacent_pose_error(&estimates, &motions)?)
    } else {
        None
    };
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        counts,
        recall: counts.recall(),
        precision: counts.precision(),
        jitter,
        adjacent,
    })
}

/// Position/rotation summary table: adjacent error and pose jitter rows.
pub fn report_csv(r: &MetricsReport) -> String {
    let mut out =
        String::from("metric,avg_position_mm,max_position_mm,avg_rotation_deg,max_rotation_deg\n");
    let fmt = |v: Option<AvgMax>| {
        v.map_or((String::new(), String::new()), |a| {
            (format!("{:.6}", a.avg), format!("{:.6}", a.max))
        })
    };
    let mut row = |name: &str, p: Option<AvgMax>, q: Option<AvgMax>| {
        let ((pa, pm), (ra, rm)) = (fmt(p), fmt(q));
        out.push_str(&format!("{name},{pa},{pm},{ra},{rm}\n"));
    };
    if let Some(a) = &r.adjacent {
        row("adjacent_error", a.position_mm, a.rotation_deg);
    }
    row("pose_jitter", r.jitter.position_mm, r.jitter.rotation_deg);
    out
}

/// Truth polygon for a set of projected vertices.
pub fn truth_polygon(vertices: &[Point2<f64>]) -> Vec<[f64; 2]> {
    convex_hull(vertices).iter().map(|p| [p.x, p.y]).collect()
}
