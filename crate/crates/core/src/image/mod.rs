//! Raster primitives shared by every stage of the pipeline.
//!
//! Coordinates follow the usual image convention: origin at the top-left,
//! `x` to the right, `y` downward, and sub-pixel positions refer to pixel
//! centers (pixel `(3, 4)` covers `[2.5, 3.5] x [3.5, 4.5]`).

mod io;

pub use io::{load_gray, luma_from_rgb, read_pgm, save_gray, write_pgm};

use crate::error::{Error, Result};
use nalgebra::Point2;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// Binary mask, row-major. `true` is white / foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

/// Real-valued raster (threshold maps and intermediate averages).
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "empty raster {width}x{height}"
        )));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::InvalidArgument(format!(
            "buffer of {len} samples does not match {width}x{height}"
        )));
    }
    Ok(())
}

macro_rules! raster_common {
    ($ty:ident, $elem:ty) => {
        impl $ty {
            pub fn from_vec(width: usize, height: usize, data: Vec<$elem>) -> Result<Self> {
                check_dims(width, height, data.len())?;
                Ok(Self {
                    width,
                    height,
                    data,
                })
            }

            pub fn from_fn(
                width: usize,
                height: usize,
                mut f: impl FnMut(usize, usize) -> $elem,
            ) -> Self {
                assert!(width > 0 && height > 0, "empty raster");
                let mut data = Vec::with_capacity(width * height);
                for y in 0..height {
                    for x in 0..width {
                        data.push(f(x, y));
                    }
                }
                Self {
                    width,
                    height,
                    data,
                }
            }

            #[inline]
            pub fn width(&self) -> usize {
                self.width
            }

            #[inline]
            pub fn height(&self) -> usize {
                self.height
            }

            #[inline]
            pub fn get(&self, x: usize, y: usize) -> $elem {
                self.data[y * self.width + x]
            }

            #[inline]
            pub fn set(&mut self, x: usize, y: usize, v: $elem) {
                self.data[y * self.width + x] = v;
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<$elem> {
                self.data
            }

            pub fn row(&self, y: usize) -> &[$elem] {
                &self.data[y * self.width..(y + 1) * self.width]
            }
        }
    };
}

raster_common!(GrayImage, u8);
raster_common!(BinaryImage, bool);
raster_common!(FloatMap, f64);

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }
}

impl BinaryImage {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl FloatMap {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    /// Rounds and clamps into an 8-bit image (debug dumps).
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Read-only access to a raster as real samples.
pub trait Raster {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn sample(&self, x: usize, y: usize) -> f64;
}

impl Raster for GrayImage {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    #[inline]
    fn sample(&self, x: usize, y: usize) -> f64 {
        f64::from(self.data[y * self.width + x])
    }
}

impl Raster for FloatMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    #[inline]
    fn sample(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Splits `len` into `n = len / factor` blocks; the last one absorbs any remainder.
fn block_bounds(len: usize, factor: usize) -> impl Iterator<Item = (usize, usize)> {
    let n = len / factor;
    (0..n).map(move |i| {
        let start = i * factor;
        let end = if i + 1 == n { len } else { start + factor };
        (start, end)
    })
}

/// Block-mean downsampling.
///
/// Output dimensions are `floor(dim / factor)`. When a dimension is not a
/// multiple of `factor` the trailing pixels are folded into the last block,
/// whose mean is taken over all of its pixels, so no input pixel is dropped.
pub fn downsample_mean<R: Raster + ?Sized>(img: &R, factor: usize) -> Result<FloatMap> {
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "downsample factor must be >= 1".into(),
        ));
    }
    let (w, h) = (img.width(), img.height());
    if w < factor || h < factor {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} raster is smaller than downsample factor {factor}"
        )));
    }
    let (ow, oh) = (w / factor, h / factor);

    // Column sums per block, one source row at a time.
    let xs: Vec<(usize, usize)> = block_bounds(w, factor).collect();
    let mut out = Vec::with_capacity(ow * oh);
    let mut acc = vec![0.0f64; ow];
    for (y0, y1) in block_bounds(h, factor) {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for y in y0..y1 {
            for (bx, &(x0, x1)) in xs.iter().enumerate() {
                let mut s = 0.0;
                for x in x0..x1 {
                    s += img.sample(x, y);
                }
                acc[bx] += s;
            }
        }
        for (bx, &(x0, x1)) in xs.iter().enumerate() {
            out.push(acc[bx] / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    Ok(FloatMap {
        width: ow,
        height: oh,
        data: out,
    })
}

/// Bilinear upsampling to `target_w x target_h`.
///
/// Source sample `i` is anchored at the center of the block it summarizes,
/// i.e. at target coordinate `(i + 0.5) * factor - 0.5`. Outside the anchor
/// hull the nearest anchors are clamped.
pub fn upsample_bilinear(
    map: &FloatMap,
    factor: usize,
    target_w: usize,
    target_h: usize,
) -> Result<FloatMap> {
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "upsample factor must be >= 1".into(),
        ));
    }
    if map.data.is_empty() || target_w == 0 || target_h == 0 {
        return Err(Error::InvalidArgument("empty map".into()));
    }
    let f = factor as f64;
    let axis = |len: usize, src: usize| -> Vec<(usize, usize, f64)> {
        (0..len)
            .map(|t| {
                let u = ((t as f64 + 0.5) / f - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = (u.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, u - i0 as f64)
            })
            .collect()
    };
    let xa = axis(target_w, map.width);
    let ya = axis(target_h, map.height);
    let mut data = Vec::with_capacity(target_w * target_h);
    for &(y0, y1, fy) in &ya {
        let r0 = map.row(y0);
        let r1 = map.row(y1);
        for &(x0, x1, fx) in &xa {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            data.push(top + (bot - top) * fy);
        }
    }
    Ok(FloatMap {
        width: target_w,
        height: target_h,
        data,
    })
}

/// Centered box average with an odd `window`, replicating edges.
pub fn box_mean(map: &FloatMap, window: usize) -> Result<FloatMap> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "box window must be odd, got {window}"
        )));
    }
    let r = (window / 2) as isize;
    let norm = 1.0 / window as f64;
    let horiz = separable_pass(&map.data, map.width, map.height, true, |src, len, out| {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in -r..=r {
                s += src(clamp_index(i as isize + k, len));
            }
            *o = s * norm;
        }
    });
    let data = separable_pass(&horiz, map.width, map.height, false, |src, len, out| {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in -r..=r {
                s += src(clamp_index(i as isize + k, len));
            }
            *o = s * norm;
        }
    });
    Ok(FloatMap {
        width: map.width,
        height: map.height,
        data,
    })
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Runs a 1-D filter along every row (`horizontal`) or column.
fn separable_pass(
    data: &[f64],
    width: usize,
    height: usize,
    horizontal: bool,
    mut filter: impl FnMut(&dyn Fn(usize) -> f64, usize, &mut [f64]),
) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    if horizontal {
        let mut line = vec![0.0; width];
        for y in 0..height {
            let row = &data[y * width..(y + 1) * width];
            filter(&|i| row[i], width, &mut line);
            out[y * width..(y + 1) * width].copy_from_slice(&line);
        }
    } else {
        let mut line = vec![0.0; height];
        for x in 0..width {
            filter(&|i| data[i * width + x], height, &mut line);
            for (y, v) in line.iter().enumerate() {
                out[y * width + x] = *v;
            }
        }
    }
    out
}

/// Sampled Gaussian weights of odd length `size`, normalized to sum 1.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

fn convolve_1d(kernel: &[f64]) -> impl FnMut(&dyn Fn(usize) -> f64, usize, &mut [f64]) + '_ {
    let r = (kernel.len() / 2) as isize;
    move |src, len, out| {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                s += w * src(clamp_index(i as isize + k as isize - r, len));
            }
            *o = s;
        }
    }
}

/// Separable Gaussian blur with edge replication, computed in floating point
/// and rounded once at the end.
pub fn gaussian_blur_f64(
    data: &[f64],
    width: usize,
    height: usize,
    kernel: usize,
    sigma_x: f64,
    sigma_y: f64,
) -> Result<Vec<f64>> {
    let kx = gaussian_kernel(kernel, sigma_x)?;
    let ky = gaussian_kernel(kernel, sigma_y)?;
    let h = separable_pass(data, width, height, true, convolve_1d(&kx));
    Ok(separable_pass(&h, width, height, false, convolve_1d(&ky)))
}

pub fn gaussian_blur(
    img: &GrayImage,
    kernel: usize,
    sigma_x: f64,
    sigma_y: f64,
) -> Result<GrayImage> {
    if kernel == 1 {
        // a one-tap normalized kernel is the identity; still validate sigmas
        gaussian_kernel(1, sigma_x)?;
        gaussian_kernel(1, sigma_y)?;
        return Ok(img.clone());
    }
    let src: Vec<f64> = img.data.iter().map(|&v| f64::from(v)).collect();
    let out = gaussian_blur_f64(&src, img.width, img.height, kernel, sigma_x, sigma_y)?;
    let data = out
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Binary dilation with a `(2r+1) x (2r+1)` square structuring element.
pub fn dilate(mask: &BinaryImage, radius: usize) -> Result<BinaryImage> {
    if radius == 0 {
        return Err(Error::InvalidArgument(
            "dilation radius must be >= 1".into(),
        ));
    }
    let (w, h) = (mask.width, mask.height);
    let run = |get: &dyn Fn(usize) -> bool, len: usize, out: &mut Vec<bool>| {
        // prefix count of foreground along the line
        let mut prefix = Vec::with_capacity(len + 1);
        prefix.push(0u32);
        for i in 0..len {
            prefix.push(prefix[i] + get(i) as u32);
        }
        out.clear();
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(len);
            out.push(prefix[hi] > prefix[lo]);
        }
    };
    let mut tmp = vec![false; w * h];
    let mut line = Vec::new();
    for y in 0..h {
        let row = &mask.data[y * w..(y + 1) * w];
        run(&|i| row[i], w, &mut line);
        tmp[y * w..(y + 1) * w].copy_from_slice(&line);
    }
    let mut data = vec![false; w * h];
    for x in 0..w {
        run(&|i| tmp[i * w + x], h, &mut line);
        for (y, &v) in line.iter().enumerate() {
            data[y * w + x] = v;
        }
    }
    Ok(BinaryImage {
        width: w,
        height: h,
        data,
    })
}

/// Intensity-weighted centroid over the foreground of `support`:
/// `(M10 / M00, M01 / M00)` with raw (not binarized) intensities.
pub fn centroid_moments(img: &GrayImage, support: &BinaryImage) -> Result<Point2<f64>> {
    if img.width != support.width || img.height != support.height {
        return Err(Error::InvalidArgument(
            "image and support dimensions differ".into(),
        ));
    }
    weighted_centroid(img, support, 0, 0, f64::from)
}

/// Centroid of `support` placed with its top-left at `(ox, oy)` in `img`,
/// weighting each pixel by `weight(intensity)`. Support pixels falling
/// outside the image are ignored.
pub fn weighted_centroid(
    img: &GrayImage,
    support: &BinaryImage,
    ox: isize,
    oy: isize,
    weight: impl Fn(u8) -> f64,
) -> Result<Point2<f64>> {
    let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
    for sy in 0..support.height {
        let y = oy + sy as isize;
        if y < 0 || y >= img.height as isize {
            continue;
        }
        for sx in 0..support.width {
            if !support.data[sy * support.width + sx] {
                continue;
            }
            let x = ox + sx as isize;
            if x < 0 || x >= img.width as isize {
                continue;
            }
            let wgt = weight(img.get(x as usize, y as usize));
            m00 += wgt;
            m10 += wgt * x as f64;
            m01 += wgt * y as f64;
        }
    }
    if m00 <= 0.0 {
        return Err(Error::DegenerateSupport);
    }
    Ok(Point2::new(m10 / m00, m01 / m00))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn downsample_constant_and_identity() {
        let img = GrayImage::filled(4, 4, 100);
        let d = downsample_mean(&img, 2).unwrap();
        assert_eq!((d.width(), d.height()), (2, 2));
        assert!(d.data().iter().all(|&v| v == 100.0));

        let ramp = GrayImage::from_fn(5, 3, |x, y| (x * 10 + y) as u8);
        let id = downsample_mean(&ramp, 1).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(id.get(x, y), ramp.sample(x, y));
            }
        }
    }

    #[test]
    fn downsample_checkerboard_matches_block_oracle() {
        let img = GrayImage::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 });
        let d = downsample_mean(&img, 2).unwrap();
        assert_eq!((d.width(), d.height()), (4, 4));
        for by in 0..4 {
            for bx in 0..4 {
                let mut s = 0.0;
                for y in 2 * by..2 * by + 2 {
                    for x in 2 * bx..2 * bx + 2 {
                        s += img.sample(x, y);
                    }
                }
                assert_eq!(d.get(bx, by), s / 4.0);
                assert_eq!(d.get(bx, by), 127.5);
            }
        }
    }

    #[test]
    fn downsample_partial_blocks_fold_into_last() {
        // 5 columns, factor 2: blocks [0,2) and [2,5)
        let img = GrayImage::from_fn(5, 2, |x, _| [0, 0, 10, 20, 30][x]);
        let d = downsample_mean(&img, 2).unwrap();
        assert_eq!((d.width(), d.height()), (2, 1));
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 0), 20.0);
    }

    #[test]
    fn downsample_rejects_zero_factor() {
        let img = GrayImage::filled(4, 4, 1);
        assert!(matches!(
            downsample_mean(&img, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(downsample_mean(&img, 5).is_err());
    }

    #[test]
    fn upsample_constant_identity_and_ramp() {
        let c = FloatMap::filled(3, 2, 45.0);
        let u = upsample_bilinear(&c, 4, 13, 9).unwrap();
        assert!(u.data().iter().all(|&v| (v - 45.0).abs() < 1e-12));

        let m = FloatMap::from_fn(3, 2, |x, y| (x * 7 + y) as f64);
        assert_eq!(upsample_bilinear(&m, 1, 3, 2).unwrap(), m);

        let r = upsample_bilinear(&FloatMap::from_vec(2, 1, vec![0.0, 10.0]).unwrap(), 4, 8, 1)
            .unwrap();
        // anchors at x = 1.5 and 5.5; closed-form lerp in between
        let expected = [0.0, 0.0, 1.25, 3.75, 6.25, 8.75, 10.0, 10.0];
        for (got, want) in r.data().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(r.data().windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn blur_constant_identity_and_impulse() {
        let c = GrayImage::filled(9, 9, 77);
        assert_eq!(gaussian_blur(&c, 5, 1.3, 2.0).unwrap(), c);
        let ramp = GrayImage::from_fn(6, 6, |x, y| (x * 30 + y) as u8);
        assert_eq!(gaussian_blur(&ramp, 1, 1.0, 1.0).unwrap(), ramp);
        assert!(gaussian_blur(&ramp, 4, 1.0, 1.0).is_err());

        // impulse response equals the outer product of the sampled kernel
        let mut imp = vec![0.0; 81];
        imp[4 * 9 + 4] = 1000.0;
        let out = gaussian_blur_f64(&imp, 9, 9, 5, 5.5, 5.5).unwrap();
        let g: Vec<f64> = (-2..=2)
            .map(|d: i32| (-(d * d) as f64 / (2.0 * 5.5 * 5.5)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let want = 1000.0 * g[(dx + 2) as usize] * g[(dy + 2) as usize] / (s * s);
                let got = out[((4 + dy) * 9 + 4 + dx) as usize];
                assert_abs_diff_eq!(got, want, epsilon = 1e-9);
                let mirrored = out[((4 - dy) * 9 + 4 - dx) as usize];
                assert_abs_diff_eq!(got, mirrored, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn blur_preserves_mass_away_from_border() {
        let img = GrayImage::from_fn(40, 40, |x, y| {
            if (10..30).contains(&x) && (12..25).contains(&y) {
                ((x * 13 + y * 7) % 200) as u8
            } else {
                0
            }
        });
        let out = gaussian_blur(&img, 5, 1.5, 1.5).unwrap();
        let a: f64 = img.data().iter().map(|&v| f64::from(v)).sum();
        let b: f64 = out.data().iter().map(|&v| f64::from(v)).sum();
        assert!(((a - b) / a).abs() < 0.005);
    }

    fn brute_dilate(mask: &BinaryImage, r: isize) -> BinaryImage {
        BinaryImage::from_fn(mask.width(), mask.height(), |x, y| {
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (sx, sy) = (x as isize + dx, y as isize + dy);
                    sx >= 0
                        && sy >= 0
                        && (sx as usize) < mask.width()
                        && (sy as usize) < mask.height()
                        && mask.get(sx as usize, sy as usize)
                })
            })
        })
    }

    #[test]
    fn dilate_cases() {
        let mut m = BinaryImage::filled(7, 7, false);
        m.set(3, 3, true);
        let d = dilate(&m, 1).unwrap();
        assert_eq!(d.count_foreground(), 9);
        for y in 2..=4 {
            for x in 2..=4 {
                assert!(d.get(x, y));
            }
        }
        let full = BinaryImage::filled(5, 4, true);
        assert_eq!(dilate(&full, 3).unwrap(), full);

        let l = BinaryImage::from_fn(16, 16, |x, y| {
            (x == 5 && (4..11).contains(&y)) || (y == 10 && (5..12).contains(&x))
        });
        assert_eq!(dilate(&l, 2).unwrap(), brute_dilate(&l, 2));
        assert!(dilate(&l, 0).is_err());
    }

    #[test]
    fn centroid_cases() {
        let img = GrayImage::filled(12, 12, 90);
        let sup = BinaryImage::from_fn(12, 12, |x, y| (4..=6).contains(&x) && (4..=6).contains(&y));
        let c = centroid_moments(&img, &sup).unwrap();
        assert_eq!((c.x, c.y), (5.0, 5.0));

        let sup = BinaryImage::from_fn(12, 12, |x, y| x == 7 && y == 2);
        let c = centroid_moments(&img, &sup).unwrap();
        assert_eq!((c.x, c.y), (7.0, 2.0));

        let dark = GrayImage::filled(12, 12, 0);
        assert!(matches!(
            centroid_moments(&dark, &sup),
            Err(Error::DegenerateSupport)
        ));
    }

    #[test]
    fn centroid_of_antialiased_disk() {
        // 16x16 supersampled coverage of a disk of radius 6 at (20.3, 14.7)
        let (cx, cy, r) = (20.3, 14.7, 6.0);
        let ss = 16;
        let img = GrayImage::from_fn(40, 30, |x, y| {
            let mut hit = 0;
            for j in 0..ss {
                for i in 0..ss {
                    let px = x as f64 - 0.5 + (i as f64 + 0.5) / ss as f64;
                    let py = y as f64 - 0.5 + (j as f64 + 0.5) / ss as f64;
                    if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                        hit += 1;
                    }
                }
            }
            (255.0 * hit as f64 / (ss * ss) as f64).round() as u8
        });
        let sup = BinaryImage::from_fn(40, 30, |x, y| img.get(x, y) > 0);
        let c = centroid_moments(&img, &sup).unwrap();
        assert!((c.x - cx).abs() < 0.1 && (c.y - cy).abs() < 0.1, "{c:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn down_up_constant_roundtrip(v in 0u8..=255, w in 8usize..40, h in 8usize..40, f in 1usize..5) {
                let img = GrayImage::filled(w, h, v);
                let d = downsample_mean(&img, f).unwrap();
                let u = upsample_bilinear(&d, f, w, h).unwrap();
                prop_assert!(u.data().iter().all(|&s| s == f64::from(v)));
            }

            #[test]
            fn dilate_monotone_and_composes(bits in proptest::collection::vec(any::<bool>(), 20 * 18), r1 in 1usize..3, r2 in 1usize..3) {
                // thin out the mask so dilation does not saturate immediately
                let m = BinaryImage::from_vec(20, 18, bits).unwrap();
                let m = BinaryImage::from_fn(20, 18, |x, y| m.get(x, y) && (x * 3 + y * 5) % 4 == 0);
                let d = dilate(&m, r1).unwrap();
                for (a, b) in m.data().iter().zip(d.data()) {
                    prop_assert!(!a || *b);
                }
                prop_assert_eq!(dilate(&m, r1 + r2).unwrap(), dilate(&d, r2).unwrap());
            }

            #[test]
            fn centroid_mirror_reflects_x(pix in proptest::collection::vec((0usize..30, 0usize..20, 1u8..=255), 1..40)) {
                let mut img = GrayImage::filled(30, 20, 0);
                let mut sup = BinaryImage::filled(30, 20, false);
                for &(x, y, v) in &pix {
                    img.set(x, y, v);
                    sup.set(x, y, true);
                }
                let mimg = GrayImage::from_fn(30, 20, |x, y| img.get(29 - x, y));
                let msup = BinaryImage::from_fn(30, 20, |x, y| sup.get(29 - x, y));
                let a = centroid_moments(&img, &sup).unwrap();
                let b = centroid_moments(&mimg, &msup).unwrap();
                prop_assert!((a.x - (29.0 - b.x)).abs() < 1e-9);
                prop_assert!((a.y - b.y).abs() < 1e-9);
            }
        }
    }
}
