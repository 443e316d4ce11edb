//! Node ordering, id decoding, sub-pixel vertices and the full detection
//! pipeline.

use std::collections::HashSet;

use nalgebra::{Matrix3, Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, apply_homography, convex_hull};
use crate::image::{dilate, weighted_centroid, BinaryImage, FloatMap, GrayImage};
use crate::pose::homography_dlt;
use crate::segmentation::{segment, SegmentationParams};
use crate::tagmodel::{decode_bits, BitString, Cell, TagFamily, TagId};
use crate::topology::{
    correct_errors, filter_candidates, Candidate, Color, FilterParams, RegionTree,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    /// Angular tolerance (radians) for collinearity tests during ordering.
    pub theta2: f64,
    pub delta_floor: usize,
    pub delta_divisor: usize,
    /// Max distance, in cell pitches, between a rectified node and its lattice point.
    pub lattice_tolerance: f64,
    pub vertex_weighting: VertexWeighting,
}

/// Pixel weights for the vertex centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexWeighting {
    /// `255 - v` for black regions, `v` for white ones.
    Absolute,
    /// Signed difference from the mean intensity of the support's outermost
    /// layer, so the surrounding opposite-color ring carries no mass.
    #[default]
    LocalContrast,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            theta2: 0.1,
            delta_floor: 2,
            delta_divisor: 10,
            lattice_tolerance: 0.35,
            vertex_weighting: VertexWeighting::default(),
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta2 > 0.0) || self.delta_divisor == 0 || self.delta_floor == 0 {
            return Err(Error::InvalidArgument(
                "theta2 must be > 0, delta_floor and delta_divisor >= 1".into(),
            ));
        }
        if !(self.lattice_tolerance > 0.0 && self.lattice_tolerance < 0.5) {
            return Err(Error::InvalidArgument(
                "lattice_tolerance must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }

    /// Dilation radius for a region whose bounding box has short side `l`.
    pub fn dilation(&self, l: usize) -> usize {
        self.delta_floor.max(l / self.delta_divisor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: TagId,
    pub bits: BitString,
    /// Baseline dots first, then data nodes in decode order.
    pub vertices: Vec<Point2<f64>>,
    /// Image pixels to lattice coordinates `(col, row)`.
    pub homography: Matrix3<f64>,
    pub boundary_polygon: Vec<Point2<f64>>,
    pub root_region: u32,
}

/// The baseline node and the centroids of its two dots (unordered).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub label: u32,
    pub dots: [u32; 2],
    pub centers: [Point2<f64>; 2],
}

pub fn find_baseline(c: &Candidate, tree: &RegionTree) -> Result<Baseline> {
    let label = c.baseline.ok_or(Error::NoBaseline)?;
    let dots: Vec<u32> = c.dots_of(tree, label).collect();
    let [a, b] = dots[..] else {
        return Err(Error::NoBaseline);
    };
    let centers = [tree.region(a).centroid(), tree.region(b).centroid()];
    assert!(
        (centers[0] - centers[1]).norm() > 0.0,
        "distinct regions have distinct centroids"
    );
    Ok(Baseline {
        label,
        dots: [a, b],
        centers,
    })
}

/// Nodes in vertex order, with the rectifying homography that placed them.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedNodes {
    pub grid_n: usize,
    /// `[p1, p2]`: p1 at cell (0, 0), p2 at cell (0, 1).
    pub baseline_dots: [u32; 2],
    pub baseline_node: u32,
    /// Black node per data cell, in decode order.
    pub data_nodes: Vec<u32>,
    /// Ordering anchors `[p1, p3, p4, far corner]` (image coordinates).
    pub anchors: [Point2<f64>; 4],
    /// Image to lattice, fitted to all node centers.
    pub homography: Matrix3<f64>,
}

/// Center of a black node including its dots (area-weighted pixel mean).
fn filled_center(c: &Candidate, tree: &RegionTree, node: u32) -> Point2<f64> {
    let r = tree.region(node);
    let (mut sx, mut sy, mut a) = (r.sum_x, r.sum_y, r.area);
    for d in c.dots_of(tree, node) {
        let dr = tree.region(d);
        sx += dr.sum_x;
        sy += dr.sum_y;
        a += dr.area;
    }
    Point2::new(sx as f64 / a as f64, sy as f64 / a as f64)
}

/// Rounds rectified points to lattice cells; fails on out-of-tolerance,
/// out-of-grid or duplicate assignments.
fn assign_cells(
    h: &Matrix3<f64>,
    points: &[Point2<f64>],
    family: &TagFamily,
    tol: f64,
) -> Result<Vec<Cell>> {
    let n = family.grid_n() as f64;
    let mut seen = HashSet::new();
    points
        .iter()
        .map(|&p| {
            let q = apply_homography(h, p)
                .ok_or_else(|| Error::DecodeFailure("node maps to infinity".into()))?;
            let (col, row) = (q.x.round(), q.y.round());
            if (q.x - col).abs() > tol || (q.y - row).abs() > tol {
                return Err(Error::DecodeFailure(format!(
                    "node off lattice by ({:.2}, {:.2})",
                    q.x - col,
                    q.y - row
                )));
            }
            if col < 0.0 || row < 0.0 || col >= n || row >= n {
                return Err(Error::DecodeFailure("node outside the grid".into()));
            }
            let cell = Cell::new(row as usize, col as usize);
            if !seen.insert(cell) {
                return Err(Error::DecodeFailure("two nodes on one cell".into()));
            }
            Ok(cell)
        })
        .collect()
}

/// Orders the nodes of a corrected candidate.
///
/// The baseline direction `p1 -> p2` is the orientation with more node
/// centers within `theta2` of the ray from `p1`. The farthest of those is
/// `p3` (end of the baseline row). `p4` is the farthest center within
/// `theta2` of the direction making the largest angle with the baseline
/// (end of the first column). The remaining grid corner maximizes the
/// distance from line `p3 p4` on the side away from `p1`. These four points
/// fix a rectifying homography; every node is then rounded to its lattice
/// cell, which must form a bijection onto the data cells.
pub fn order_vertices(
    c: &Candidate,
    baseline: &Baseline,
    tree: &RegionTree,
    family: &TagFamily,
    p: &DecodeParams,
) -> Result<OrderedNodes> {
    let n = family.grid_n();
    let nodes: Vec<u32> = c
        .black_nodes
        .iter()
        .copied()
        .filter(|&b| b != baseline.label)
        .collect();
    if nodes.len() != n * n - 2 {
        return Err(Error::StructureMismatch(format!(
            "{} data nodes, expected {}",
            nodes.len(),
            n * n - 2
        )));
    }
    let centers: Vec<Point2<f64>> = nodes.iter().map(|&b| filled_center(c, tree, b)).collect();

    let along = |from: Point2<f64>, dir: Vector2<f64>| -> Vec<usize> {
        (0..centers.len())
            .filter(|&i| angle_between(centers[i] - from, dir) <= p.theta2)
            .collect()
    };
    let [qa, qb] = baseline.centers;
    let fwd = along(qa, qb - qa);
    let back = along(qb, qa - qb);
    let (flip, on_row) = match fwd.len().cmp(&back.len()) {
        std::cmp::Ordering::Greater => (false, fwd),
        std::cmp::Ordering::Less => (true, back),
        std::cmp::Ordering::Equal => {
            return Err(Error::DecodeFailure(
                "baseline direction is ambiguous".into(),
            ))
        }
    };
    let (p1, p2, dots) = if flip {
        (qb, qa, [baseline.dots[1], baseline.dots[0]])
    } else {
        (qa, qb, baseline.dots)
    };
    let dir = p2 - p1;
    let dist_along = |i: usize| (centers[i] - p1).dot(&dir);
    let i3 = *on_row
        .iter()
        .max_by(|&&a, &&b| dist_along(a).total_cmp(&dist_along(b)))
        .expect("non-empty");

    let angles: Vec<f64> = centers
        .iter()
        .map(|&q| angle_between(q - p1, dir))
        .collect();
    let i_max = (0..centers.len())
        .max_by(|&a, &b| angles[a].total_cmp(&angles[b]))
        .expect("non-empty");
    if angles[i_max] <= p.theta2 {
        return Err(Error::DecodeFailure(
            "all nodes lie on the baseline row".into(),
        ));
    }
    let col_dir = centers[i_max] - p1;
    let i4 = along(p1, col_dir)
        .into_iter()
        .max_by(|&a, &b| {
            (centers[a] - p1)
                .norm()
                .total_cmp(&(centers[b] - p1).norm())
        })
        .expect("contains i_max");
    if i4 == i3 {
        return Err(Error::DecodeFailure("row and column ends coincide".into()));
    }
    let (p3, p4) = (centers[i3], centers[i4]);
    let line = p4 - p3;
    let side = |q: Point2<f64>| line.x * (q.y - p3.y) - line.y * (q.x - p3.x);
    let s1 = side(p1).signum();
    let i_corner = (0..centers.len())
        .filter(|&i| i != i3 && i != i4)
        .max_by(|&a, &b| (-s1 * side(centers[a])).total_cmp(&(-s1 * side(centers[b]))))
        .ok_or_else(|| Error::DecodeFailure("no far corner".into()))?;
    if -s1 * side(centers[i_corner]) <= 0.0 {
        return Err(Error::DecodeFailure("far corner on the wrong side".into()));
    }
    let corner = centers[i_corner];
    let last = (n - 1) as f64;
    let lattice = [
        Point2::new(0.0, 0.0),
        Point2::new(last, 0.0),
        Point2::new(0.0, last),
        Point2::new(last, last),
    ];
    let h0 = homography_dlt(&[p1, p3, p4, corner], &lattice)
        .map_err(|e| Error::DecodeFailure(format!("anchor homography: {e}")))?;

    let assign = |h: &Matrix3<f64>| -> Result<Vec<Cell>> {
        let cells = assign_cells(h, &centers, family, p.lattice_tolerance)?;
        if cells.iter().any(|&cell| family.data_index(cell).is_none()) {
            return Err(Error::DecodeFailure(
                "node rectifies onto the baseline".into(),
            ));
        }
        Ok(cells)
    };
    let cells = assign(&h0)?;

    // refit on every node and make sure the assignment is stable
    let [b0, b1] = family.baseline_cells();
    let mut src = vec![p1, p2];
    let mut dst = vec![b0.lattice(), b1.lattice()];
    src.extend(centers.iter().copied());
    dst.extend(cells.iter().map(|c| c.lattice()));
    let h1 = homography_dlt(&src, &dst)
        .map_err(|e| Error::DecodeFailure(format!("node homography: {e}")))?;
    let cells1 = assign(&h1)?;
    if cells1 != cells {
        return Err(Error::DecodeFailure(
            "lattice assignment changed after refit".into(),
        ));
    }
    for (q, cell) in [p1, p2].iter().zip([b0, b1]) {
        let r = apply_homography(&h1, *q)
            .ok_or_else(|| Error::DecodeFailure("baseline maps to infinity".into()))?;
        if (r - cell.lattice()).norm() > p.lattice_tolerance {
            return Err(Error::DecodeFailure("baseline dots off lattice".into()));
        }
    }

    let mut data_nodes = vec![u32::MAX; n * n - 2];
    for (node, cell) in nodes.iter().zip(&cells) {
        data_nodes[family.data_index(*cell).expect("checked above")] = *node;
    }
    Ok(OrderedNodes {
        grid_n: n,
        baseline_dots: dots,
        baseline_node: baseline.label,
        data_nodes,
        anchors: [p1, p3, p4, corner],
        homography: h1,
    })
}

/// Bit `k` is set iff the node on data cell `k` still holds a dot.
pub fn read_bits(ordered: &OrderedNodes, c: &Candidate, tree: &RegionTree) -> BitString {
    BitString(
        ordered
            .data_nodes
            .iter()
            .map(|&node| c.dots_of(tree, node).next().is_some())
            .collect(),
    )
}

/// Rejects a reading where a dotless node is hollow at its predicted center,
/// which happens when its dot leaks through a broken ring.
pub fn check_dotless_nodes(
    ordered: &OrderedNodes,
    bits: &BitString,
    tree: &RegionTree,
    family: &TagFamily,
) -> Result<()> {
    let h_inv = ordered
        .homography
        .try_inverse()
        .ok_or_else(|| Error::DecodeFailure("singular lattice homography".into()))?;
    let (w, h) = (tree.labels.width() as f64, tree.labels.height() as f64);
    for (k, (&node, &bit)) in ordered.data_nodes.iter().zip(bits.bits()).enumerate() {
        if bit {
            continue;
        }
        let cell = family.data_cell_order()[k];
        let p = apply_homography(&h_inv, cell.lattice())
            .ok_or_else(|| Error::DecodeFailure("cell maps to infinity".into()))?;
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= w || y >= h || tree.labels.get(x as usize, y as usize) != node
        {
            return Err(Error::DecodeFailure(format!(
                "dotless node on data cell {k} is hollow"
            )));
        }
    }
    Ok(())
}

/// Intensity-weighted centroid of one region over its mask dilated by
/// `delta`. Black regions are weighted by dark mass, white ones by bright mass.
pub fn region_vertex(
    img: &GrayImage,
    tree: &RegionTree,
    label: u32,
    p: &DecodeParams,
) -> Result<Point2<f64>> {
    let r = tree.region(label);
    let b = r.bbox;
    let l = b.width().min(b.height()) as usize;
    let delta = p.dilation(l);
    let (w, h) = (
        b.width() as usize + 2 * delta,
        b.height() as usize + 2 * delta,
    );
    let (ox, oy) = (
        b.min_x as isize - delta as isize,
        b.min_y as isize - delta as isize,
    );
    let mut mask = BinaryImage::filled(w, h, false);
    for y in b.min_y..=b.max_y {
        for x in b.min_x..=b.max_x {
            if tree.labels.get(x as usize, y as usize) == label {
                mask.set((x as isize - ox) as usize, (y as isize - oy) as usize, true);
            }
        }
    }
    // dilated mask, limited to the region, its enclosing region and its holes
    let mut support = dilate(&mask, delta)?;
    let children = tree.children_of(label);
    for sy in 0..h {
        for sx in 0..w {
            if !support.get(sx, sy) {
                continue;
            }
            let (x, y) = (ox + sx as isize, oy + sy as isize);
            let inside = x >= 0
                && y >= 0
                && (x as usize) < tree.labels.width()
                && (y as usize) < tree.labels.height();
            let keep = inside && {
                let l = tree.labels.get(x as usize, y as usize);
                l == label || Some(l) == r.parent || children.contains(&l)
            };
            if !keep {
                support.set(sx, sy, false);
            }
        }
    }
    let dark = r.color == Color::Black;
    let level = match p.vertex_weighting {
        VertexWeighting::Absolute => {
            if dark {
                255.0
            } else {
                0.0
            }
        }
        VertexWeighting::LocalContrast => {
            let inner = if delta > 1 {
                dilate(&mask, delta - 1)?
            } else {
                mask.clone()
            };
            outer_layer_mean(img, &support, &inner, ox, oy).unwrap_or(if dark {
                255.0
            } else {
                0.0
            })
        }
    };
    let result = if dark {
        weighted_centroid(img, &support, ox, oy, |v| level - f64::from(v))
    } else {
        weighted_centroid(img, &support, ox, oy, |v| f64::from(v) - level)
    };
    result.map_err(|_| Error::DecodeFailure(format!("region {label} has no intensity mass")))
}

/// Mean intensity of in-image pixels in `support` but not in `inner`.
fn outer_layer_mean(
    img: &GrayImage,
    support: &BinaryImage,
    inner: &BinaryImage,
    ox: isize,
    oy: isize,
) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for sy in 0..support.height() {
        for sx in 0..support.width() {
            if !support.get(sx, sy) || inner.get(sx, sy) {
                continue;
            }
            let (x, y) = (ox + sx as isize, oy + sy as isize);
            if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
                sum += f64::from(img.get(x as usize, y as usize));
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Sub-pixel vertices in vertex order: baseline dots `p1, p2`, then the
/// black data nodes in decode order.
pub fn estimate_vertices(
    img: &GrayImage,
    ordered: &OrderedNodes,
    tree: &RegionTree,
    p: &DecodeParams,
) -> Result<Vec<Point2<f64>>> {
    ordered
        .baseline_dots
        .iter()
        .chain(&ordered.data_nodes)
        .map(|&label| region_vertex(img, tree, label, p))
        .collect()
}

/// Fits the image-to-lattice homography on the final vertices and checks
/// each vertex against a homography fitted to all the others, so a single
/// displaced vertex cannot pull the fit toward itself.
pub fn validate_grid(
    family: &TagFamily,
    vertices: &[Point2<f64>],
    tolerance: f64,
) -> Result<Matrix3<f64>> {
    let lattice: Vec<Point2<f64>> = family.vertex_cells().map(|c| c.lattice()).collect();
    if vertices.len() != lattice.len() {
        return Err(Error::StructureMismatch(format!(
            "{} vertices, expected {}",
            vertices.len(),
            lattice.len()
        )));
    }
    let fit = |src: &[Point2<f64>], dst: &[Point2<f64>]| {
        homography_dlt(src, dst)
            .map_err(|e| Error::DecodeFailure(format!("vertex homography: {e}")))
    };
    let h = fit(vertices, &lattice)?;
    for k in 0..vertices.len() {
        let others = |pts: &[Point2<f64>]| -> Vec<Point2<f64>> {
            pts.iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, p)| *p)
                .collect()
        };
        let hk = fit(&others(vertices), &others(&lattice))?;
        let q = apply_homography(&hk, vertices[k])
            .ok_or_else(|| Error::DecodeFailure("vertex maps to infinity".into()))?;
        let l = lattice[k];
        if (q.x - l.x).abs() > tolerance || (q.y - l.y).abs() > tolerance {
            return Err(Error::DecodeFailure(format!(
                "vertex {k} off lattice by ({:.2}, {:.2})",
                q.x - l.x,
                q.y - l.y
            )));
        }
    }
    Ok(h)
}

/// Decodes one corrected candidate.
pub fn decode_candidate(
    img: &GrayImage,
    c: &Candidate,
    tree: &RegionTree,
    family: &TagFamily,
    p: &DecodeParams,
) -> Result<Detection> {
    let baseline = find_baseline(c, tree)?;
    let ordered = order_vertices(c, &baseline, tree, family, p)?;
    let bits = read_bits(&ordered, c, tree);
    check_dotless_nodes(&ordered, &bits, tree, family)?;
    let id = decode_bits(family, &bits)?;
    let vertices = estimate_vertices(img, &ordered, tree, p)?;
    let homography = validate_grid(family, &vertices, p.lattice_tolerance)?;
    let boundary_polygon = convex_hull(&vertices);
    Ok(Detection {
        id,
        bits,
        vertices,
        homography,
        boundary_polygon,
        root_region: c.root_region,
    })
}

/// Why a candidate did not become a detection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub grid_n: usize,
    pub root_region: u32,
    pub reason: String,
}

/// Everything the pipeline produced for one frame.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub detections: Vec<Detection>,
    pub diagnostics: Vec<Diagnostic>,
    pub candidates: Vec<Candidate>,
    pub threshold_map: FloatMap,
    pub binary: BinaryImage,
    pub tree: RegionTree,
}

/// Full pipeline with intermediate products kept for inspection.
pub fn run_pipeline(
    img: &GrayImage,
    families: &[TagFamily],
    seg: &SegmentationParams,
    filt: &FilterParams,
    dec: &DecodeParams,
) -> Result<PipelineOutput> {
    seg.validate()?;
    filt.validate()?;
    dec.validate()?;
    let (threshold_map, binary) = segment(img, seg)?;
    let tree = RegionTree::from_binary(&binary);

    let mut candidates: Vec<(Candidate, usize)> = Vec::new();
    for (fi, fam) in families.iter().enumerate() {
        candidates.extend(
            filter_candidates(&tree, fam, filt)
                .into_iter()
                .map(|c| (c, fi)),
        );
    }
    candidates.sort_by(|(a, fa), (b, fb)| {
        tree.region(b.root_region)
            .area
            .cmp(&tree.region(a.root_region).area)
            .then(a.root_region.cmp(&b.root_region))
            .then(fa.cmp(fb))
    });

    let mut detections = Vec::new();
    let mut diagnostics = Vec::new();
    let mut used = HashSet::new();
    for (cand, fi) in &candidates {
        if used.contains(&cand.root_region) {
            continue;
        }
        let fam = &families[*fi];
        let outcome = correct_errors(cand, fam, filt, &tree)
            .and_then(|fixed| decode_candidate(img, &fixed, &tree, fam, dec));
        match outcome {
            Ok(det) => {
                used.insert(cand.root_region);
                detections.push(det);
            }
            Err(e) => diagnostics.push(Diagnostic {
                grid_n: fam.grid_n(),
                root_region: cand.root_region,
                reason: e.to_string(),
            }),
        }
    }
    Ok(PipelineOutput {
        detections,
        diagnostics,
        candidates: candidates.into_iter().map(|(c, _)| c).collect(),
        threshold_map,
        binary,
        tree,
    })
}

/// Detects and decodes every marker of the given families in `img`.
///
/// Frames smaller than one threshold block yield no detections.
pub fn detect(
    img: &GrayImage,
    families: &[TagFamily],
    seg: &SegmentationParams,
    filt: &FilterParams,
    dec: &DecodeParams,
) -> Vec<Detection> {
    match run_pipeline(img, families, seg, filt, dec) {
        Ok(out) => out.detections,
        Err(_) => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{render_model_points, render_tag, RenderOptions};
    use crate::tagmodel::encode_id;

    fn fam(n: usize) -> TagFamily {
        TagFamily::new(n).unwrap()
    }

    fn pad(img: &GrayImage, border: usize, value: u8) -> GrayImage {
        GrayImage::from_fn(
            img.width() + 2 * border,
            img.height() + 2 * border,
            |x, y| {
                if x < border
                    || y < border
                    || x >= img.width() + border
                    || y >= img.height() + border
                {
                    value
                } else {
                    img.get(x - border, y - border)
                }
            },
        )
    }

    fn defaults() -> (SegmentationParams, FilterParams, DecodeParams) {
        (
            SegmentationParams::default(),
            FilterParams::default(),
            DecodeParams::default(),
        )
    }

    #[test]
    fn worked_example_8390() {
        let f = fam(4);
        let id = TagId::new(&f, 8390).unwrap();
        let img = pad(&render_tag(id, &RenderOptions::default()).unwrap(), 40, 255);
        let (s, fl, d) = defaults();
        let out = run_pipeline(&img, std::slice::from_ref(&f), &s, &fl, &d).unwrap();
        assert_eq!(out.detections.len(), 1, "{:?}", out.diagnostics);
        let det = &out.detections[0];
        assert_eq!(det.id.value, 8390);
        assert_eq!(det.bits.to_string(), "10000011000110");
        assert_eq!(det.vertices.len(), 16);
        let cand = out
            .candidates
            .iter()
            .find(|c| c.root_region == det.root_region)
            .unwrap();
        assert_eq!(cand.descendant_count, 17 + 5);
    }

    #[test]
    fn vertices_match_render_ground_truth() {
        let opts = RenderOptions {
            pixels_per_cell: 24,
            ..Default::default()
        };
        for (n, v) in [(3, 77), (4, 12345), (5, 4_000_001)] {
            let f = fam(n);
            let id = TagId::new(&f, v).unwrap();
            let border = 32;
            let img = pad(&render_tag(id, &opts).unwrap(), border, 255);
            let truth = render_model_points(id, &opts).unwrap();
            let (s, fl, d) = defaults();
            let dets = detect(&img, &[f], &s, &fl, &d);
            assert_eq!(dets.len(), 1);
            assert_eq!(dets[0].id, id);
            for (got, want) in dets[0].vertices.iter().zip(&truth) {
                let want = Point2::new(want.x + border as f64, want.y + border as f64);
                assert!((got - want).norm() < 0.2, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn constant_intensity_offset_barely_moves_vertices() {
        let f = fam(4);
        let id = TagId::new(&f, 8390).unwrap();
        let tag = pad(
            &render_tag(
                id,
                &RenderOptions {
                    pixels_per_cell: 20,
                    ..Default::default()
                },
            )
            .unwrap(),
            30,
            255,
        );
        let dim = GrayImage::from_fn(tag.width(), tag.height(), |x, y| {
            (f64::from(tag.get(x, y)) * 0.8 + 10.0) as u8
        });
        let bright = GrayImage::from_fn(dim.width(), dim.height(), |x, y| dim.get(x, y) + 20);
        for weighting in [VertexWeighting::Absolute, VertexWeighting::LocalContrast] {
            let d = DecodeParams {
                vertex_weighting: weighting,
                ..Default::default()
            };
            let run = |img: &GrayImage| {
                detect(
                    img,
                    std::slice::from_ref(&f),
                    &Default::default(),
                    &Default::default(),
                    &d,
                )
                .remove(0)
                .vertices
            };
            let shift = run(&dim)
                .iter()
                .zip(run(&bright))
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            let limit = if weighting == VertexWeighting::Absolute {
                0.25
            } else {
                0.01
            };
            assert!(shift < limit, "{weighting:?}: {shift}");
        }
    }

    #[test]
    fn rotations_by_quarter_turns_decode_identically() {
        let f = fam(4);
        let id = TagId::new(&f, 8390).unwrap();
        let base = pad(&render_tag(id, &RenderOptions::default()).unwrap(), 40, 255);
        let s = base.width();
        let mut img = base.clone();
        for _ in 0..4 {
            let (sp, fl, d) = defaults();
            let dets = detect(&img, std::slice::from_ref(&f), &sp, &fl, &d);
            assert_eq!(dets.len(), 1);
            assert_eq!(dets[0].bits, encode_id(id).unwrap());
            img = GrayImage::from_fn(s, s, |x, y| img.get(y, s - 1 - x));
        }
    }

    #[test]
    fn blank_and_tiny_frames() {
        let (s, fl, d) = defaults();
        assert!(detect(
            &GrayImage::filled(200, 150, 128),
            &[fam(3), fam(4)],
            &s,
            &fl,
            &d
        )
        .is_empty());
        assert!(detect(&GrayImage::filled(10, 10, 0), &[fam(3)], &s, &fl, &d).is_empty());
    }

    #[test]
    fn grid_gate_rejects_displaced_vertex() {
        let f = fam(4);
        let truth: Vec<Point2<f64>> = f
            .vertex_cells()
            .map(|c| Point2::new(100.0 + 30.0 * c.col as f64, 80.0 + 30.0 * c.row as f64))
            .collect();
        assert!(validate_grid(&f, &truth, 0.35).is_ok());
        for k in 0..truth.len() {
            let mut bad = truth.clone();
            bad[k].x += 0.5 * 30.0;
            assert!(
                validate_grid(&f, &bad, 0.35).is_err(),
                "vertex {k} corruption accepted"
            );
        }
    }

    #[test]
    fn dilation_rule() {
        let d = DecodeParams::default();
        assert_eq!(d.dilation(5), 2);
        assert_eq!(d.dilation(29), 2);
        assert_eq!(d.dilation(30), 3);
        assert_eq!(d.dilation(57), 5);
    }

    #[test]
    fn single_pixel_region_vertex_is_its_center() {
        let mut img = GrayImage::filled(40, 40, 255);
        img.set(20, 13, 0);
        let bin = BinaryImage::from_fn(40, 40, |x, y| img.get(x, y) > 128);
        let tree = RegionTree::from_binary(&bin);
        let label = tree.labels.get(20, 13);
        let v = region_vertex(&img, &tree, label, &DecodeParams::default()).unwrap();
        assert_eq!((v.x, v.y), (20.0, 13.0));
    }
}
