use std::path::Path;

use anyhow::Context;
use image::{Rgb, RgbImage};
use serde::Serialize;
use topotag::decoder::PipelineOutput;
use topotag::image::save_gray;
use topotag::topology::Color;
use topotag::GrayImage;

const DETECTION: Rgb<u8> = Rgb([0, 200, 0]);
const REJECTED: Rgb<u8> = Rgb([230, 40, 40]);
const CANDIDATE: Rgb<u8> = Rgb([255, 160, 0]);
const BASELINE: Rgb<u8> = Rgb([0, 120, 255]);

#[derive(Serialize)]
struct RegionRow {
    label: u32,
    color: &'static str,
    area: u64,
    min_x: u32,
    min_y: u32,
    max_x: u32,
    max_y: u32,
    centroid_x: f64,
    centroid_y: f64,
    parent: Option<u32>,
    children: usize,
}

/// Writes `<stem>.threshold.png`, `<stem>.binary.png`, `<stem>.regions.csv`
/// and `<stem>.overlay.png` into `dir`.
pub fn dump(dir: &Path, frame: &Path, img: &GrayImage, out: &PipelineOutput) -> anyhow::Result<()> {
    let stem = frame
        .file_stem()
        .map_or("frame".into(), |s| s.to_string_lossy().into_owned());
    let file = |suffix: &str| dir.join(format!("{stem}.{suffix}"));

    save_gray(&out.threshold_map.to_gray(), file("threshold.png"))?;
    let bin = GrayImage::from_fn(img.width(), img.height(), |x, y| {
        if out.binary.get(x, y) {
            255
        } else {
            0
        }
    });
    save_gray(&bin, file("binary.png"))?;

    let path = file("regions.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for r in &out.tree.regions {
        w.serialize(RegionRow {
            label: r.label,
            color: if r.color == Color::White {
                "white"
            } else {
                "black"
            },
            area: r.area,
            min_x: r.bbox.min_x,
            min_y: r.bbox.min_y,
            max_x: r.bbox.max_x,
            max_y: r.bbox.max_y,
            centroid_x: r.sum_x as f64 / r.area as f64,
            centroid_y: r.sum_y as f64 / r.area as f64,
            parent: r.parent,
            children: out.tree.children_of(r.label).len(),
        })?;
    }
    w.flush()?;

    let mut rgb = RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = img.get(x as usize, y as usize);
        Rgb([v, v, v])
    });
    let rejected: Vec<u32> = out.diagnostics.iter().map(|d| d.root_region).collect();
    for c in &out.candidates {
        let b = out.tree.region(c.root_region).bbox;
        let color = if rejected.contains(&c.root_region) {
            REJECTED
        } else {
            CANDIDATE
        };
        let corners = [
            (b.min_x, b.min_y),
            (b.max_x, b.min_y),
            (b.max_x, b.max_y),
            (b.min_x, b.max_y),
        ]
        .map(|(x, y)| (x as f64, y as f64));
        polyline(&mut rgb, &corners, color);
    }
    for d in &out.detections {
        let poly: Vec<(f64, f64)> = d.boundary_polygon.iter().map(|p| (p.x, p.y)).collect();
        polyline(&mut rgb, &poly, DETECTION);
        for (i, v) in d.vertices.iter().enumerate() {
            cross(&mut rgb, v.x, v.y, if i < 2 { BASELINE } else { DETECTION });
        }
    }
    let path = file("overlay.png");
    rgb.save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Closed polygon through `pts`.
fn polyline(img: &mut RgbImage, pts: &[(f64, f64)], c: Rgb<u8>) {
    for (i, &(x0, y0)) in pts.iter().enumerate() {
        let (x1, y1) = pts[(i + 1) % pts.len()];
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            put(
                img,
                (x0 + t * (x1 - x0)).round() as i64,
                (y0 + t * (y1 - y0)).round() as i64,
                c,
            );
        }
    }
}

fn cross(img: &mut RgbImage, x: f64, y: f64, c: Rgb<u8>) {
    let (x, y) = (x.round() as i64, y.round() as i64);
    for k in -3..=3 {
        put(img, x + k, y, c);
        put(img, x, y + k, c);
    }
}
