//! Connected components, the containment tree, and topological filtering.
//!
//! White components use 4-connectivity and black components 8-connectivity,
//! so every region's boundary is a closed curve and containment is a tree.

use std::fmt::Write as _;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryImage;
use crate::tagmodel::{expected_tree_counts, TagFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Black,
    White,
}

impl Color {
    fn of(white: bool) -> Self {
        if white {
            Color::White
        } else {
            Color::Black
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> u32 {
        self.max_y - self.min_y + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: u32,
    pub color: Color,
    pub area: u64,
    pub bbox: BBox,
    /// First pixel in raster order.
    pub seed: (u32, u32),
    /// Enclosing region; `None` for regions touching the frame border.
    pub parent: Option<u32>,
    pub sum_x: u64,
    pub sum_y: u64,
}

impl Region {
    /// Unweighted pixel centroid.
    pub fn centroid(&self) -> Point2<f64> {
        Point2::new(
            self.sum_x as f64 / self.area as f64,
            self.sum_y as f64 / self.area as f64,
        )
    }
}

/// Per-pixel component labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }
}

#[inline]
fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        let g = parent[parent[i as usize] as usize];
        parent[i as usize] = g;
        i = g;
    }
    i
}

#[inline]
fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let ra = find(parent, a);
    let rb = find(parent, b);
    // keep the smaller provisional label as root so roots stay in raster order
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass labeling with union-find. Final labels are contiguous from 0
/// and numbered in raster order of each region's first pixel.
pub fn label_components(bin: &BinaryImage) -> (LabelMap, Vec<Region>) {
    let (w, h) = (bin.width(), bin.height());
    let px = bin.data();
    let mut prov = vec![0u32; w * h];
    let mut parent: Vec<u32> = Vec::with_capacity(1024);

    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let i = row + x;
            let c = px[i];
            let mut label = u32::MAX;
            let join = |label: &mut u32, other: u32, parent: &mut Vec<u32>| {
                if *label == u32::MAX {
                    *label = other;
                } else if *label != other {
                    *label = union(parent, *label, other);
                }
            };
            if x > 0 && px[i - 1] == c {
                join(&mut label, prov[i - 1], &mut parent);
            }
            if y > 0 {
                let up = i - w;
                if px[up] == c {
                    join(&mut label, prov[up], &mut parent);
                }
                if !c {
                    if x > 0 && px[up - 1] == c {
                        join(&mut label, prov[up - 1], &mut parent);
                    }
                    if x + 1 < w && px[up + 1] == c {
                        join(&mut label, prov[up + 1], &mut parent);
                    }
                }
            }
            if label == u32::MAX {
                label = parent.len() as u32;
                parent.push(label);
            }
            prov[i] = label;
        }
    }

    // Roots are the smallest provisional label in their set, and provisional
    // labels are issued in raster order, so numbering roots in increasing
    // order numbers regions by first pixel.
    let mut final_of = vec![u32::MAX; parent.len()];
    let mut next = 0u32;
    for l in 0..parent.len() as u32 {
        let r = find(&mut parent, l);
        if r == l {
            final_of[l as usize] = next;
            next += 1;
        }
    }
    for l in 0..parent.len() {
        let r = parent[l] as usize;
        final_of[l] = final_of[r];
    }

    let mut regions: Vec<Region> = Vec::with_capacity(next as usize);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let lab = final_of[prov[i] as usize];
            prov[i] = lab;
            if lab as usize == regions.len() {
                regions.push(Region {
                    label: lab,
                    color: Color::of(px[i]),
                    area: 0,
                    bbox: BBox {
                        min_x: x as u32,
                        min_y: y as u32,
                        max_x: x as u32,
                        max_y: y as u32,
                    },
                    seed: (x as u32, y as u32),
                    parent: None,
                    sum_x: 0,
                    sum_y: 0,
                });
            }
            let r = &mut regions[lab as usize];
            r.area += 1;
            r.sum_x += x as u64;
            r.sum_y += y as u64;
            let b = &mut r.bbox;
            b.min_x = b.min_x.min(x as u32);
            b.max_x = b.max_x.max(x as u32);
            b.max_y = y as u32;
        }
    }
    (
        LabelMap {
            width: w,
            height: h,
            labels: prov,
        },
        regions,
    )
}

/// Containment hierarchy of all regions under a virtual root.
#[derive(Debug, Clone)]
pub struct RegionTree {
    pub labels: LabelMap,
    pub regions: Vec<Region>,
    pub children: Vec<Vec<u32>>,
    /// Regions touching the frame border (children of the virtual root).
    pub roots: Vec<u32>,
}

/// The parent of a region not touching the frame is the region left of its
/// first raster pixel: nothing of the region lies above that row, so the
/// left neighbor reaches the border without crossing it and must enclose it.
pub fn build_region_tree(labels: LabelMap, mut regions: Vec<Region>) -> RegionTree {
    let (w, h) = (labels.width as u32, labels.height as u32);
    let mut children = vec![Vec::new(); regions.len()];
    let mut roots = Vec::new();
    for r in regions.iter_mut() {
        let b = r.bbox;
        let touches = b.min_x == 0 || b.min_y == 0 || b.max_x + 1 == w || b.max_y + 1 == h;
        if touches {
            r.parent = None;
            roots.push(r.label);
        } else {
            let (sx, sy) = r.seed;
            let p = labels.get(sx as usize - 1, sy as usize);
            r.parent = Some(p);
            children[p as usize].push(r.label);
        }
    }
    RegionTree {
        labels,
        regions,
        children,
        roots,
    }
}

impl RegionTree {
    pub fn from_binary(bin: &BinaryImage) -> Self {
        let (labels, regions) = label_components(bin);
        build_region_tree(labels, regions)
    }

    pub fn region(&self, label: u32) -> &Region {
        &self.regions[label as usize]
    }

    pub fn children_of(&self, label: u32) -> &[u32] {
        &self.children[label as usize]
    }

    /// Levels in the subtree rooted at `label`, the root counting as 1.
    pub fn subtree_depth(&self, label: u32) -> usize {
        let mut best = 0;
        let mut stack = vec![(label, 1usize)];
        while let Some((l, d)) = stack.pop() {
            best = best.max(d);
            for &c in self.children_of(l) {
                stack.push((c, d + 1));
            }
        }
        best
    }

    /// CSV table `label,color,area,parent` (parent empty for the virtual root).
    pub fn region_csv(&self) -> String {
        let mut s = String::from("label,color,area,parent\n");
        for r in &self.regions {
            let color = match r.color {
                Color::Black => "black",
                Color::White => "white",
            };
            let parent = r.parent.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.label, color, r.area, parent);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Tolerance on the descendant count.
    pub tau: usize,
    /// Minimum node area, percent of the baseline node area.
    pub theta1: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            tau: 0,
            theta1: 30.0,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta1 > 0.0 && self.theta1 < 100.0) {
            return Err(Error::InvalidArgument(format!(
                "theta1 = {} outside (0, 100)",
                self.theta1
            )));
        }
        Ok(())
    }
}

/// White region whose subtree has the marker's shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub grid_n: usize,
    pub root_region: u32,
    pub black_nodes: Vec<u32>,
    pub white_dots: Vec<u32>,
    pub descendant_count: usize,
    /// Set by `correct_errors`.
    pub baseline: Option<u32>,
}

impl Candidate {
    /// Dots of `node` that are still part of the candidate.
    pub fn dots_of<'a>(
        &'a self,
        tree: &'a RegionTree,
        node: u32,
    ) -> impl Iterator<Item = u32> + 'a {
        tree.children_of(node)
            .iter()
            .copied()
            .filter(move |d| self.white_dots.contains(d))
    }
}

/// White regions whose subtree has depth exactly 3 and a descendant count in
/// `[zeta_min - tau, zeta_max + tau]`, largest first.
pub fn filter_candidates(
    tree: &RegionTree,
    family: &TagFamily,
    p: &FilterParams,
) -> Vec<Candidate> {
    let (zmin, zmax) = expected_tree_counts(family);
    let lo = zmin.saturating_sub(p.tau);
    let hi = zmax + p.tau;
    let mut out = Vec::new();
    'regions: for r in &tree.regions {
        if r.color != Color::White {
            continue;
        }
        let nodes = tree.children_of(r.label);
        if nodes.is_empty() || nodes.len() > hi {
            continue;
        }
        let mut dots = Vec::new();
        for &n in nodes {
            for &d in tree.children_of(n) {
                if !tree.children_of(d).is_empty() {
                    continue 'regions;
                }
                dots.push(d);
                if nodes.len() + dots.len() > hi {
                    continue 'regions;
                }
            }
        }
        let count = nodes.len() + dots.len();
        if dots.is_empty() || count < lo {
            continue;
        }
        out.push(Candidate {
            grid_n: family.grid_n(),
            root_region: r.label,
            black_nodes: nodes.to_vec(),
            white_dots: dots,
            descendant_count: count,
            baseline: None,
        });
    }
    out.sort_by(|a, b| {
        tree.region(b.root_region)
            .area
            .cmp(&tree.region(a.root_region).area)
            .then(a.root_region.cmp(&b.root_region))
    });
    out
}

/// Drops noise nodes and dots, then checks the node count.
///
/// Black nodes smaller than `theta1` percent of the baseline node are
/// removed together with their dots; dots smaller than `theta1` percent of
/// the mean remaining dot area are removed as well.
pub fn correct_errors(
    c: &Candidate,
    family: &TagFamily,
    p: &FilterParams,
    tree: &RegionTree,
) -> Result<Candidate> {
    let n_dots = |node: u32| c.dots_of(tree, node).count();
    let baselines: Vec<u32> = c
        .black_nodes
        .iter()
        .copied()
        .filter(|&b| n_dots(b) == 2)
        .collect();
    let [baseline] = baselines[..] else {
        return Err(Error::NoBaseline);
    };
    let ratio = p.theta1 / 100.0;
    let min_node = tree.region(baseline).area as f64 * ratio;
    let black_nodes: Vec<u32> = c
        .black_nodes
        .iter()
        .copied()
        .filter(|&b| b == baseline || tree.region(b).area as f64 >= min_node)
        .collect();
    let surviving: Vec<u32> = c
        .white_dots
        .iter()
        .copied()
        .filter(|&d| {
            tree.region(d)
                .parent
                .is_some_and(|pn| black_nodes.contains(&pn))
        })
        .collect();
    let mean = surviving
        .iter()
        .map(|&d| tree.region(d).area as f64)
        .sum::<f64>()
        / surviving.len().max(1) as f64;
    let white_dots: Vec<u32> = surviving
        .into_iter()
        .filter(|&d| tree.region(d).area as f64 >= mean * ratio)
        .collect();

    let expected = family.node_count() - 1;
    if black_nodes.len() != expected {
        return Err(Error::StructureMismatch(format!(
            "{} black nodes, expected {expected}",
            black_nodes.len()
        )));
    }
    let baseline_dots = white_dots
        .iter()
        .filter(|&&d| tree.region(d).parent == Some(baseline))
        .count();
    if baseline_dots != 2 {
        return Err(Error::StructureMismatch("baseline node lost a dot".into()));
    }
    Ok(Candidate {
        grid_n: c.grid_n,
        root_region: c.root_region,
        descendant_count: black_nodes.len() + white_dots.len(),
        black_nodes,
        white_dots,
        baseline: Some(baseline),
    })
}
