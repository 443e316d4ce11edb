//! Synthetic scenes with exact ground truth.

use std::path::PathBuf;

use nalgebra::{Matrix3, Point2, Point3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{RenderOptions, Shade, TagPattern};
use crate::geometry::{apply_homography, convex_hull};
use crate::image::{gaussian_blur, load_gray, GrayImage};
use crate::pose::{project, CameraIntrinsics, Pose};
use crate::tagmodel::{CanonicalLayout, TagFamily, TagId};

pub const SCENE_SCHEMA_VERSION: u32 = 1;
pub const GROUND_TRUTH_SCHEMA_VERSION: u32 = 1;
pub const SWEEP_SCHEMA_VERSION: u32 = 1;

const OCCLUDER_LEVEL: f64 = 128.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Flat {
        level: u8,
    },
    Checker {
        square_px: f64,
        dark: u8,
        light: u8,
    },
    Perlin {
        scale_px: f64,
        octaves: u32,
        low: u8,
        high: u8,
    },
    ImageFile {
        path: PathBuf,
    },
}

impl Default for Background {
    fn default() -> Self {
        Background::Flat { level: 128 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionSide {
    /// Sweeps in from the edge next to the baseline row.
    TowardBaseline,
    AwayFromBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    /// Fraction of the outer border square covered, in `[0, 1]`.
    pub fraction: f64,
    pub side: OcclusionSide,
}

fn default_schema() -> u32 {
    SCENE_SCHEMA_VERSION
}

fn default_supersampling() -> u32 {
    4
}

fn default_black() -> u8 {
    30
}

fn default_white() -> u8 {
    220
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub grid_n: usize,
    pub id: u64,
    /// Marker frame to camera frame.
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Outer border side, meters.
    pub tag_size: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub blur_sigma: f64,
    /// Standard deviation of additive noise as a fraction of full scale.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub occlusion: Option<Occlusion>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_supersampling")]
    pub supersampling: u32,
    #[serde(default = "default_black")]
    pub black_level: u8,
    #[serde(default = "default_white")]
    pub white_level: u8,
}

impl SynthScene {
    /// A plain scene: flat background, no blur, noise or occlusion.
    pub fn new(
        id: TagId,
        pose: Pose,
        intrinsics: CameraIntrinsics,
        tag_size: f64,
        width: usize,
        height: usize,
    ) -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            grid_n: id.grid_n,
            id: id.value,
            pose,
            intrinsics,
            tag_size,
            width,
            height,
            background: Background::default(),
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            occlusion: None,
            seed: 0,
            supersampling: default_supersampling(),
            black_level: default_black(),
            white_level: default_white(),
        }
    }

    pub fn tag_id(&self) -> Result<TagId> {
        TagId::new(&TagFamily::new(self.grid_n)?, self.id)
    }

    pub fn layout(&self) -> Result<CanonicalLayout> {
        Ok(CanonicalLayout::new(
            &TagFamily::new(self.grid_n)?,
            self.tag_size,
            &Default::default(),
        ))
    }

    fn validate(&self) -> Result<()> {
        if self.schema_version != SCENE_SCHEMA_VERSION {
            return Err(Error::InvalidScene(format!(
                "unsupported scene schema {}",
                self.schema_version
            )));
        }
        self.tag_id()?;
        self.intrinsics.validate()?;
        if self.intrinsics.has_distortion() {
            return Err(Error::InvalidScene(
                "scenes are rendered without lens distortion".into(),
            ));
        }
        if self.width == 0 || self.height == 0 || self.supersampling == 0 {
            return Err(Error::InvalidScene(
                "empty frame or zero supersampling".into(),
            ));
        }
        if !(self.tag_size > 0.0) {
            return Err(Error::InvalidScene("tag_size must be positive".into()));
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidScene(
                "blur and noise must be non-negative".into(),
            ));
        }
        if let Some(o) = self.occlusion {
            if !(0.0..=1.0).contains(&o.fraction) {
                return Err(Error::InvalidScene(format!(
                    "occlusion fraction {} outside [0, 1]",
                    o.fraction
                )));
            }
        }
        if self.black_level >= self.white_level {
            return Err(Error::InvalidScene(
                "black_level must be below white_level".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub grid_n: usize,
    pub id: u64,
    pub pose: Pose,
    /// Projected node centers in vertex order.
    pub vertex_pixels: Vec<Point2<f64>>,
    /// Convex hull of `vertex_pixels`.
    pub boundary_polygon: Vec<Point2<f64>>,
}

/// Analytic ground truth; does not depend on any image effect.
pub fn ground_truth(s: &SynthScene) -> Result<GroundTruth> {
    s.validate()?;
    let layout = s.layout()?;
    let vertex_pixels = project(&s.pose, &s.intrinsics, &layout.model_points)
        .map_err(|e| Error::InvalidScene(e.to_string()))?;
    Ok(GroundTruth {
        schema_version: GROUND_TRUTH_SCHEMA_VERSION,
        grid_n: s.grid_n,
        id: s.id,
        pose: s.pose,
        boundary_polygon: convex_hull(&vertex_pixels),
        vertex_pixels,
    })
}

/// Seeded 2D gradient noise in `[-1, 1]` (roughly).
struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<u8> = (0..=255).collect();
        for i in (1..256).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    fn grad(&self, hash: u8, x: f64, y: f64) -> f64 {
        match hash & 7 {
            0 => x + y,
            1 => -x + y,
            2 => x - y,
            3 => -x - y,
            4 => x,
            5 => -x,
            6 => y,
            _ => -y,
        }
    }

    fn noise(&self, x: f64, y: f64) -> f64 {
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (xf, yf) = (x.floor(), y.floor());
        let (xi, yi) = ((xf as i64 & 255) as usize, (yf as i64 & 255) as usize);
        let (dx, dy) = (x - xf, y - yf);
        let (u, v) = (fade(dx), fade(dy));
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let x1 = lerp(self.grad(aa, dx, dy), self.grad(ba, dx - 1.0, dy), u);
        let x2 = lerp(
            self.grad(ab, dx, dy - 1.0),
            self.grad(bb, dx - 1.0, dy - 1.0),
            u,
        );
        lerp(x1, x2, v)
    }

    fn fractal(&self, x: f64, y: f64, octaves: u32) -> f64 {
        let (mut sum, mut amp, mut freq, mut norm) = (0.0, 1.0, 1.0, 0.0);
        for _ in 0..octaves.max(1) {
            sum += amp * self.noise(x * freq, y * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

/// Renders the background alone at frame size.
pub fn render_background(
    bg: &Background,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<GrayImage> {
    Ok(match bg {
        Background::Flat { level } => GrayImage::filled(width, height, *level),
        Background::Checker {
            square_px,
            dark,
            light,
        } => {
            if !(*square_px > 0.0) {
                return Err(Error::InvalidScene(
                    "checker square must be positive".into(),
                ));
            }
            GrayImage::from_fn(width, height, |x, y| {
                let cx = (x as f64 / square_px).floor() as i64;
                let cy = (y as f64 / square_px).floor() as i64;
                if (cx + cy).rem_euclid(2) == 0 {
                    *dark
                } else {
                    *light
                }
            })
        }
        Background::Perlin {
            scale_px,
            octaves,
            low,
            high,
        } => {
            if !(*scale_px > 0.0) {
                return Err(Error::InvalidScene("perlin scale must be positive".into()));
            }
            let noise = Perlin::new(seed ^ 0x5eed_ba5e);
            let (lo, hi) = (f64::from(*low), f64::from(*high));
            GrayImage::from_fn(width, height, |x, y| {
                let n = noise.fractal(x as f64 / scale_px, y as f64 / scale_px, *octaves);
                let t = (n * 0.5 + 0.5).clamp(0.0, 1.0);
                (lo + t * (hi - lo)).round() as u8
            })
        }
        Background::ImageFile { path } => {
            let src = load_gray(path)?;
            let (sw, sh) = (src.width() as f64, src.height() as f64);
            GrayImage::from_fn(width, height, |x, y| {
                let fx = ((x as f64 + 0.5) * sw / width as f64 - 0.5).clamp(0.0, sw - 1.0);
                let fy = ((y as f64 + 0.5) * sh / height as f64 - 0.5).clamp(0.0, sh - 1.0);
                let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                let (x1, y1) = (
                    (x0 + 1).min(src.width() - 1),
                    (y0 + 1).min(src.height() - 1),
                );
                let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
                let g = |x, y| f64::from(src.get(x, y));
                let top = g(x0, y0) * (1.0 - ax) + g(x1, y0) * ax;
                let bot = g(x0, y1) * (1.0 - ax) + g(x1, y1) * ax;
                (top * (1.0 - ay) + bot * ay).round() as u8
            })
        }
    })
}

/// Maps image pixels onto the marker plane in cell units.
struct PlaneMap {
    /// Pixel to marker meters.
    h_inv: Matrix3<f64>,
    /// Third row of `R` and `t.z`: camera depth of a marker point.
    depth_row: [f64; 3],
    pitch: f64,
    half_n: f64,
}

impl PlaneMap {
    fn new(s: &SynthScene, layout: &CanonicalLayout) -> Result<Self> {
        let r = s.pose.rotation_matrix();
        let t = s.pose.translation;
        let m = Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), t]);
        let h = s.intrinsics.matrix() * m;
        let h_inv = h.try_inverse().ok_or_else(|| {
            Error::InvalidScene("marker plane passes through the camera center".into())
        })?;
        Ok(Self {
            h_inv,
            depth_row: [r[(2, 0)], r[(2, 1)], t.z],
            pitch: layout.cell_pitch,
            half_n: s.grid_n as f64 / 2.0,
        })
    }

    /// Cell coordinates `(u, v)` hit by the ray through pixel `(x, y)`, if
    /// the hit lies in front of the camera.
    fn cell_at(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = apply_homography(&self.h_inv, Point2::new(x, y))?;
        let z = self.depth_row[0] * m.x + self.depth_row[1] * m.y + self.depth_row[2];
        if z <= 0.0 {
            return None;
        }
        Some((
            m.x / self.pitch + self.half_n,
            m.y / self.pitch + self.half_n,
        ))
    }
}

/// Pixel-aligned box around the projected quiet zone, clipped to the frame.
fn tag_bbox(
    s: &SynthScene,
    pattern: &TagPattern,
    layout: &CanonicalLayout,
) -> Result<Option<(usize, usize, usize, usize)>> {
    let n = s.grid_n as f64;
    let pad = pattern.full_pad() + 0.5;
    let corners: Vec<Point3<f64>> = [
        (-pad, -pad),
        (n + pad, -pad),
        (n + pad, n + pad),
        (-pad, n + pad),
    ]
    .iter()
    .map(|&(u, v)| {
        Point3::new(
            (u - n / 2.0) * layout.cell_pitch,
            (v - n / 2.0) * layout.cell_pitch,
            0.0,
        )
    })
    .collect();
    if corners.iter().any(|c| s.pose.transform(c).z <= 1e-9) {
        return Err(Error::InvalidScene("tag extends behind the camera".into()));
    }
    let px = project(&s.pose, &s.intrinsics, &corners)
        .map_err(|e| Error::InvalidScene(e.to_string()))?;
    let min_x = px.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor() - 2.0;
    let min_y = px.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor() - 2.0;
    let max_x = px
        .iter()
        .map(|p| p.x)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        + 2.0;
    let max_y = px
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        + 2.0;
    let (w, h) = (s.width as f64, s.height as f64);
    if max_x < 0.0 || max_y < 0.0 || min_x >= w || min_y >= h {
        return Ok(None);
    }
    Ok(Some((
        min_x.max(0.0) as usize,
        min_y.max(0.0) as usize,
        max_x.min(w - 1.0) as usize,
        max_y.min(h - 1.0) as usize,
    )))
}

/// Renders the scene and returns it with its analytic ground truth.
///
/// Order of effects: tag warped over the background, Gaussian blur,
/// additive Gaussian noise, then the occluder.
pub fn render_scene(s: &SynthScene) -> Result<(GrayImage, GroundTruth)> {
    let truth = ground_truth(s)?;
    let id = s.tag_id()?;
    let layout = s.layout()?;
    let pattern = TagPattern::new(id, &RenderOptions::default())?;
    let map = PlaneMap::new(s, &layout)?;
    let mut img = render_background(&s.background, s.width, s.height, s.seed)?;
    let ss = s.supersampling as usize;
    let offsets: Vec<f64> = (0..ss)
        .map(|i| (i as f64 + 0.5) / ss as f64 - 0.5)
        .collect();
    let (black, white) = (f64::from(s.black_level), f64::from(s.white_level));
    let bbox = tag_bbox(s, &pattern, &layout)?;

    let covered = |img: &mut GrayImage, f: &dyn Fn(f64, f64) -> Option<f64>| {
        if let Some((x0, y0, x1, y1)) = bbox {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let bg = f64::from(img.get(x, y));
                    let mut acc = 0.0;
                    for &oy in &offsets {
                        for &ox in &offsets {
                            acc += f(x as f64 + ox, y as f64 + oy).unwrap_or(bg);
                        }
                    }
                    let v = acc / (ss * ss) as f64;
                    img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    };

    covered(&mut img, &|x, y| {
        let (u, v) = map.cell_at(x, y)?;
        match pattern.shade(u, v) {
            Shade::Black => Some(black),
            Shade::White => Some(white),
            Shade::Outside => None,
        }
    });

    if s.blur_sigma > 0.0 {
        let size = 2 * (3.0 * s.blur_sigma).ceil() as usize + 1;
        img = gaussian_blur(&img, size, s.blur_sigma, s.blur_sigma)?;
    }
    if s.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, s.noise_sigma * 255.0)
            .map_err(|e| Error::InvalidScene(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        for v in img.data_mut() {
            *v = (f64::from(*v) + normal.sample(&mut rng))
                .round()
                .clamp(0.0, 255.0) as u8;
        }
    }
    if let Some(o) = s.occlusion.filter(|o| o.fraction > 0.0) {
        let g = pattern.geometry();
        let n = s.grid_n as f64;
        let outer = g.margin_cells + g.border_cells;
        let full = pattern.full_pad();
        let side = n + 2.0 * outer;
        let (v0, v1) = match o.side {
            OcclusionSide::TowardBaseline => (-full, -outer + o.fraction * side),
            OcclusionSide::AwayFromBaseline => (n + outer - o.fraction * side, n + full),
        };
        covered(&mut img, &|x, y| {
            let (u, v) = map.cell_at(x, y)?;
            (u >= -full && u <= n + full && v >= v0 && v <= v1).then_some(OCCLUDER_LEVEL)
        });
    }
    Ok((img, truth))
}

/// Marker rotation: in-plane spin about the marker normal, then a tilt of
/// `out_of_plane_deg` about the in-plane axis at `tilt_azimuth_deg`.
pub fn tilted_rotation(
    out_of_plane_deg: f64,
    in_plane_deg: f64,
    tilt_azimuth_deg: f64,
) -> UnitQuaternion<f64> {
    let az = tilt_azimuth_deg.to_radians();
    let axis = Unit::new_normalize(Vector3::new(az.cos(), az.sin(), 0.0));
    let tilt = UnitQuaternion::from_axis_angle(&axis, out_of_plane_deg.to_radians());
    let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), in_plane_deg.to_radians());
    tilt * spin
}

/// Tag centered on the optical axis at `depth` meters.
pub fn centered_pose(
    out_of_plane_deg: f64,
    in_plane_deg: f64,
    tilt_azimuth_deg: f64,
    depth: f64,
) -> Pose {
    Pose::new(
        tilted_rotation(out_of_plane_deg, in_plane_deg, tilt_azimuth_deg),
        Vector3::new(0.0, 0.0, depth),
    )
}

/// SplitMix64 finalizer, used to derive independent per-scene seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A Cartesian grid of scene parameters around a base scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(default = "default_sweep_schema")]
    pub schema_version: u32,
    /// Camera, frame, background and levels; pose, id, blur, noise,
    /// occlusion and seed are overridden per cell.
    pub base: SynthScene,
    pub ids: Vec<u64>,
    pub out_of_plane_deg: Vec<f64>,
    pub in_plane_deg: Vec<f64>,
    #[serde(default = "zero_list")]
    pub tilt_azimuth_deg: Vec<f64>,
    pub depth_m: Vec<f64>,
    #[serde(default = "zero_list")]
    pub blur_sigma: Vec<f64>,
    #[serde(default = "zero_list")]
    pub noise_sigma: Vec<f64>,
    #[serde(default = "no_occlusion")]
    pub occlusion: Vec<Option<Occlusion>>,
    /// Frames rendered per grid cell, each with its own noise seed.
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_sweep_schema() -> u32 {
    SWEEP_SCHEMA_VERSION
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

fn no_occlusion() -> Vec<Option<Occlusion>> {
    vec![None]
}

impl SweepSpec {
    pub fn len(&self) -> usize {
        self.ids.len()
            * self.out_of_plane_deg.len()
            * self.in_plane_deg.len()
            * self.tilt_azimuth_deg.len()
            * self.depth_m.len()
            * self.blur_sigma.len()
            * self.noise_sigma.len()
            * self.occlusion.len()
            * self.repeats
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scene for flat index `i` (last axis varies fastest).
    pub fn scene(&self, i: usize) -> Option<SynthScene> {
        if i >= self.len() {
            return None;
        }
        let mut r = i / self.repeats;
        let mut take = |len: usize| {
            let k = r % len;
            r /= len;
            k
        };
        let occ = self.occlusion[take(self.occlusion.len())];
        let noise = self.noise_sigma[take(self.noise_sigma.len())];
        let blur = self.blur_sigma[take(self.blur_sigma.len())];
        let depth = self.depth_m[take(self.depth_m.len())];
        let az = self.tilt_azimuth_deg[take(self.tilt_azimuth_deg.len())];
        let spin = self.in_plane_deg[take(self.in_plane_deg.len())];
        let tilt = self.out_of_plane_deg[take(self.out_of_plane_deg.len())];
        let id = self.ids[take(self.ids.len())];
        let mut s = self.base.clone();
        s.id = id;
        s.pose = centered_pose(tilt, spin, az, depth);
        s.blur_sigma = blur;
        s.noise_sigma = noise;
        s.occlusion = occ;
        s.seed = mix_seed(self.seed, i as u64);
        Some(s)
    }

    /// Grid cell of scene `i`; repeats of one cell share it.
    pub fn cell(&self, i: usize) -> usize {
        i / self.repeats.max(1)
    }

    /// Scenes in index order.
    pub fn scenes(&self) -> impl Iterator<Item = SynthScene> + '_ {
        (0..self.len()).map(move |i| self.scene(i).expect("index in range"))
    }
}

/// Renders every cell of the grid in order.
pub fn sweep(
    spec: &SweepSpec,
) -> impl Iterator<Item = Result<(SynthScene, GroundTruth, GrayImage)>> + '_ {
    spec.scenes().map(|s| {
        let (img, gt) = render_scene(&s)?;
        Ok((s, gt, img))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::centroid_moments;
    use crate::image::BinaryImage;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0)
    }

    fn scene(pose: Pose) -> SynthScene {
        let fam = TagFamily::new(4).unwrap();
        SynthScene::new(
            TagId::new(&fam, 8390).unwrap(),
            pose,
            camera(),
            0.05,
            640,
            480,
        )
    }

    #[test]
    fn ground_truth_is_projection_of_layout() {
        let s = scene(centered_pose(0.0, 0.0, 0.0, 0.5));
        let (_, gt) = render_scene(&s).unwrap();
        let expected = project(&s.pose, &s.intrinsics, &s.layout().unwrap().model_points).unwrap();
        assert_eq!(gt.vertex_pixels, expected);
        assert_eq!(gt.vertex_pixels.len(), 16);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut s = scene(centered_pose(30.0, 20.0, 45.0, 0.3));
        s.noise_sigma = 0.05;
        s.blur_sigma = 0.8;
        s.seed = 99;
        s.background = Background::Perlin {
            scale_px: 40.0,
            octaves: 3,
            low: 40,
            high: 220,
        };
        let (a, _) = render_scene(&s).unwrap();
        let (b, _) = render_scene(&s).unwrap();
        assert_eq!(a, b);
        s.seed = 100;
        assert_ne!(render_scene(&s).unwrap().0, a);
    }

    #[test]
    fn ground_truth_ignores_effects() {
        let mut s = scene(centered_pose(40.0, 10.0, 0.0, 0.3));
        let gt0 = render_scene(&s).unwrap().1;
        s.blur_sigma = 1.0;
        s.noise_sigma = 0.1;
        s.occlusion = Some(Occlusion {
            fraction: 0.5,
            side: OcclusionSide::TowardBaseline,
        });
        assert_eq!(render_scene(&s).unwrap().1, gt0);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let s = scene(centered_pose(0.0, 0.0, 0.0, -0.5));
        assert!(matches!(render_scene(&s), Err(Error::InvalidScene(_))));
        let mut s = scene(centered_pose(0.0, 0.0, 0.0, 0.5));
        s.occlusion = Some(Occlusion {
            fraction: 1.5,
            side: OcclusionSide::TowardBaseline,
        });
        assert!(matches!(render_scene(&s), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn rendered_dot_lands_on_projection() {
        // baseline dot p1 of a tilted tag: its white blob's centroid should
        // sit on the projected model point
        let s = scene(centered_pose(35.0, 15.0, 30.0, 0.25));
        let (img, gt) = render_scene(&s).unwrap();
        let p = gt.vertex_pixels[0];
        let r = 10usize;
        let (x0, y0) = (p.x.round() as usize - r, p.y.round() as usize - r);
        let crop = GrayImage::from_fn(2 * r + 1, 2 * r + 1, |x, y| img.get(x0 + x, y0 + y));
        // dot pixels: brighter than mid-level, connected to the center
        let mid = (f64::from(s.black_level) + f64::from(s.white_level)) / 2.0;
        let support = BinaryImage::from_fn(crop.width(), crop.height(), |x, y| {
            let (dx, dy) = (x as f64 - r as f64, y as f64 - r as f64);
            dx * dx + dy * dy < 36.0 && f64::from(crop.get(x, y)) > mid - 60.0
        });
        let lifted = GrayImage::from_fn(crop.width(), crop.height(), |x, y| {
            crop.get(x, y).saturating_sub(s.black_level)
        });
        let c = centroid_moments(&lifted, &support).unwrap();
        let got = Point2::new(c.x + x0 as f64, c.y + y0 as f64);
        assert!((got - p).norm() < 0.25, "{got:?} vs {p:?}");
    }

    #[test]
    fn sweep_cardinality_and_seeds() {
        let base = scene(Pose::identity());
        let mut spec = SweepSpec {
            schema_version: SWEEP_SCHEMA_VERSION,
            base,
            ids: (0..10).collect(),
            out_of_plane_deg: vec![0.0, 30.0, 60.0],
            in_plane_deg: vec![0.0],
            tilt_azimuth_deg: zero_list(),
            depth_m: vec![0.4],
            blur_sigma: zero_list(),
            noise_sigma: zero_list(),
            occlusion: no_occlusion(),
            repeats: 1,
            seed: 5,
        };
        assert_eq!(spec.scenes().count(), 30);
        let seeds: std::collections::HashSet<u64> = spec.scenes().map(|s| s.seed).collect();
        assert_eq!(seeds.len(), 30);

        spec.repeats = 3;
        assert_eq!(spec.len(), 90);
        let (a, b) = (spec.scene(3).unwrap(), spec.scene(5).unwrap());
        assert_eq!((a.id, spec.cell(3)), (b.id, spec.cell(5)));
        assert_eq!(a.pose, b.pose);
        assert_ne!(a.seed, b.seed);
        assert_ne!(spec.cell(2), spec.cell(3));
        spec.repeats = 1;

        spec.ids = vec![3];
        spec.out_of_plane_deg = vec![0.0];
        spec.occlusion = [
            OcclusionSide::TowardBaseline,
            OcclusionSide::AwayFromBaseline,
        ]
        .iter()
        .flat_map(|&side| {
            (1..=10).map(move |k| {
                Some(Occlusion {
                    fraction: k as f64 / 10.0,
                    side,
                })
            })
        })
        .collect();
        assert_eq!(spec.scenes().count(), 20);

        spec.ids.clear();
        assert!(spec.is_empty());
        assert_eq!(sweep(&spec).count(), 0);
    }

    #[test]
    fn scene_json_roundtrip() {
        let mut s = scene(centered_pose(10.0, 20.0, 30.0, 0.4));
        s.background = Background::Checker {
            square_px: 24.0,
            dark: 40,
            light: 200,
        };
        s.occlusion = Some(Occlusion {
            fraction: 0.1,
            side: OcclusionSide::AwayFromBaseline,
        });
        let text = serde_json::to_string(&s).unwrap();
        let back: SynthScene = serde_json::from_str(&text).unwrap();
        assert_eq!(back.background, s.background);
        assert_eq!(back.occlusion, s.occlusion);
        assert!((back.pose.translation - s.pose.translation).norm() < 1e-15);
        let minimal = r#"{"grid_n":3,"id":5,"pose":{"rotation_quat":[1,0,0,0],"translation_m":[0,0,0.5]},
            "intrinsics":{"fx":800,"fy":800,"cx":320,"cy":240},"tag_size":0.05,"width":640,"height":480}"#;
        let m: SynthScene = serde_json::from_str(minimal).unwrap();
        assert_eq!(
            (m.supersampling, m.schema_version, m.background.clone()),
            (4, 1, Background::default())
        );
    }

    #[test]
    fn mix_seed_spreads_bits() {
        assert_ne!(mix_seed(0, 0), mix_seed(0, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(0, 0));
    }
}
