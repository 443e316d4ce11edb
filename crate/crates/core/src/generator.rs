//! Marker rasterization (and the analytic pattern shared with `synth`).

use std::fmt::Write as _;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryImage, GrayImage};
use crate::tagmodel::{encode_id, BitString, Cell, TagFamily, TagGeometry, TagId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NodeShape {
    Square,
    #[default]
    Circle,
    Hexagon,
}

impl std::str::FromStr for NodeShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Self::Square),
            "circle" => Ok(Self::Circle),
            "hexagon" => Ok(Self::Hexagon),
            other => Err(Error::InvalidArgument(format!(
                "unknown node shape {other:?}"
            ))),
        }
    }
}

/// Outline of the black external border.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ExternalShape {
    #[default]
    Square,
    /// Foreground marks the inside of the outer outline. The mask is stretched
    /// over the outer border square; it must contain the white interior.
    Mask(BinaryImage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub pixels_per_cell: u32,
    pub node_shape: NodeShape,
    pub external_shape: ExternalShape,
    /// White dot size as a fraction of the cell pitch.
    pub dot_fraction: f64,
    /// Black node size as a fraction of the cell pitch.
    pub node_fraction: f64,
    pub geometry: TagGeometry,
    pub supersampling: u32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            pixels_per_cell: 16,
            node_shape: NodeShape::Circle,
            external_shape: ExternalShape::Square,
            dot_fraction: 0.5,
            node_fraction: 0.8,
            geometry: TagGeometry::default(),
            supersampling: 4,
        }
    }
}

const MIN_PIXELS_PER_CELL: u32 = 8;
/// Half height of the bar joining the two baseline nodes, in cell units.
const BASELINE_BAR_HALF: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shade {
    Black,
    White,
    /// Beyond the quiet zone.
    Outside,
}

/// The marker as an exact function of marker-plane position.
///
/// Coordinates are in cell units with the origin at the top-left corner of
/// cell `(0, 0)`; the grid occupies `[0, n] x [0, n]`.
#[derive(Debug, Clone)]
pub struct TagPattern {
    family: TagFamily,
    bits: BitString,
    node_shape: NodeShape,
    external: ExternalShape,
    node_r: f64,
    dot_r: f64,
    geometry: TagGeometry,
}

impl TagPattern {
    pub fn new(id: TagId, opts: &RenderOptions) -> Result<Self> {
        let family = TagFamily::new(id.grid_n)?;
        let bits = encode_id(id)?;
        if !(opts.dot_fraction > 0.0
            && opts.dot_fraction < opts.node_fraction
            && opts.node_fraction < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "need 0 < dot_fraction ({}) < node_fraction ({}) < 1",
                opts.dot_fraction, opts.node_fraction
            )));
        }
        let g = &opts.geometry;
        if !(g.margin_cells > 0.0 && g.border_cells > 0.0 && g.quiet_zone_cells >= 0.0) {
            return Err(Error::InvalidArgument(
                "tag geometry needs positive margin and border".into(),
            ));
        }
        Ok(Self {
            family,
            bits,
            node_shape: opts.node_shape,
            external: opts.external_shape.clone(),
            node_r: opts.node_fraction / 2.0,
            dot_r: opts.dot_fraction / 2.0,
            geometry: opts.geometry,
        })
    }

    pub fn family(&self) -> &TagFamily {
        &self.family
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn geometry(&self) -> &TagGeometry {
        &self.geometry
    }

    fn n(&self) -> f64 {
        self.family.grid_n() as f64
    }

    /// Distance from the grid edge to the outer border edge.
    fn outer_pad(&self) -> f64 {
        self.geometry.margin_cells + self.geometry.border_cells
    }

    /// Distance from the grid edge to the quiet-zone edge.
    pub fn full_pad(&self) -> f64 {
        self.outer_pad() + self.geometry.quiet_zone_cells
    }

    pub fn shade(&self, u: f64, v: f64) -> Shade {
        let n = self.n();
        let m = self.geometry.margin_cells;
        let outer = self.outer_pad();
        let full = self.full_pad();
        if u < -full || v < -full || u > n + full || v > n + full {
            return Shade::Outside;
        }
        let inside_interior = u >= -m && v >= -m && u <= n + m && v <= n + m;
        if !inside_interior {
            let in_outer = u >= -outer && v >= -outer && u <= n + outer && v <= n + outer;
            let in_shape = in_outer
                && match &self.external {
                    ExternalShape::Square => true,
                    ExternalShape::Mask(mask) => {
                        let side = n + 2.0 * outer;
                        let mx = ((u + outer) / side * mask.width() as f64).floor() as isize;
                        let my = ((v + outer) / side * mask.height() as f64).floor() as isize;
                        let mx = mx.clamp(0, mask.width() as isize - 1) as usize;
                        let my = my.clamp(0, mask.height() as isize - 1) as usize;
                        mask.get(mx, my)
                    }
                };
            return if in_shape { Shade::Black } else { Shade::White };
        }
        if u < 0.0 || v < 0.0 || u >= n || v >= n {
            return Shade::White;
        }
        let cell = Cell::new(v as usize, u as usize);
        let du = u - (cell.col as f64 + 0.5);
        let dv = v - (cell.row as f64 + 0.5);
        let [b0, b1] = self.family.baseline_cells();
        if cell == b0 || cell == b1 {
            if self.inside(du, dv, self.dot_r) {
                return Shade::White;
            }
            let bar_x0 = b0.col as f64 + 0.5;
            let bar_x1 = b1.col as f64 + 0.5;
            let in_bar = u >= bar_x0
                && u <= bar_x1
                && (v - (b0.row as f64 + 0.5)).abs() <= BASELINE_BAR_HALF;
            return if in_bar || self.inside(du, dv, self.node_r) {
                Shade::Black
            } else {
                Shade::White
            };
        }
        let bit = self
            .family
            .data_index(cell)
            .map(|k| self.bits.0[k])
            .unwrap_or(false);
        if bit && self.inside(du, dv, self.dot_r) {
            Shade::White
        } else if self.inside(du, dv, self.node_r) {
            Shade::Black
        } else {
            Shade::White
        }
    }

    fn inside(&self, du: f64, dv: f64, r: f64) -> bool {
        match self.node_shape {
            NodeShape::Circle => du * du + dv * dv <= r * r,
            NodeShape::Square => du.abs() <= r && dv.abs() <= r,
            NodeShape::Hexagon => {
                // pointy-top, circumradius r
                let (ax, ay) = (du.abs(), dv.abs());
                ax <= r * 3f64.sqrt() / 2.0 && ay <= r - ax / 3f64.sqrt()
            }
        }
    }
}

fn validate(opts: &RenderOptions) -> Result<()> {
    if opts.pixels_per_cell < MIN_PIXELS_PER_CELL {
        return Err(Error::ResolutionTooLow(opts.pixels_per_cell));
    }
    if opts.supersampling == 0 {
        return Err(Error::InvalidArgument("supersampling must be >= 1".into()));
    }
    Ok(())
}

fn image_side(pattern: &TagPattern, ppc: u32) -> usize {
    ((pattern.n() + 2.0 * pattern.full_pad()) * f64::from(ppc)).ceil() as usize
}

/// Renders the marker in canonical orientation (baseline on the top row).
pub fn render_tag(id: TagId, opts: &RenderOptions) -> Result<GrayImage> {
    validate(opts)?;
    let pattern = TagPattern::new(id, opts)?;
    let side = image_side(&pattern, opts.pixels_per_cell);
    let ppc = f64::from(opts.pixels_per_cell);
    let ss = opts.supersampling as usize;
    let pad = pattern.full_pad();
    let total = (ss * ss) as f64;
    Ok(GrayImage::from_fn(side, side, |x, y| {
        let mut white = 0usize;
        for j in 0..ss {
            let v = (y as f64 + (j as f64 + 0.5) / ss as f64) / ppc - pad;
            for i in 0..ss {
                let u = (x as f64 + (i as f64 + 0.5) / ss as f64) / ppc - pad;
                if pattern.shade(u, v) != Shade::Black {
                    white += 1;
                }
            }
        }
        (255.0 * white as f64 / total).round() as u8
    }))
}

/// Pixel positions of the node centers in `render_tag`'s output, in vertex
/// order (baseline dots, then data cells).
pub fn render_model_points(id: TagId, opts: &RenderOptions) -> Result<Vec<Point2<f64>>> {
    validate(opts)?;
    let pattern = TagPattern::new(id, opts)?;
    let ppc = f64::from(opts.pixels_per_cell);
    let pad = pattern.full_pad();
    Ok(pattern
        .family
        .vertex_cells()
        .map(|c| {
            Point2::new(
                (c.col as f64 + 0.5 + pad) * ppc - 0.5,
                (c.row as f64 + 0.5 + pad) * ppc - 0.5,
            )
        })
        .collect())
}

/// Same geometry as `render_tag`, as SVG primitives. One user unit is one
/// output pixel of the equivalent raster.
pub fn render_svg(id: TagId, opts: &RenderOptions) -> Result<String> {
    validate(opts)?;
    let pattern = TagPattern::new(id, opts)?;
    if matches!(pattern.external, ExternalShape::Mask(_)) {
        return Err(Error::InvalidArgument(
            "SVG output supports only the square external shape".into(),
        ));
    }
    let ppc = f64::from(opts.pixels_per_cell);
    let pad = pattern.full_pad();
    let side = (pattern.n() + 2.0 * pad) * ppc;
    // cell units -> svg units
    let s = |c: f64| (c + pad) * ppc;
    let len = |c: f64| c * ppc;
    let n = pattern.n();
    let g = pattern.geometry;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect x="0" y="0" width="{side}" height="{side}" fill="white"/>"#
    );
    let o = g.margin_cells + g.border_cells;
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{w}" height="{w}" fill="black"/>"#,
        s(-o),
        s(-o),
        w = len(n + 2.0 * o)
    );
    let m = g.margin_cells;
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{w}" height="{w}" fill="white"/>"#,
        s(-m),
        s(-m),
        w = len(n + 2.0 * m)
    );

    let shape = |out: &mut String, cx: f64, cy: f64, r: f64, fill: &str| {
        let (x, y, r) = (s(cx), s(cy), len(r));
        let _ = match pattern.node_shape {
            NodeShape::Circle => {
                writeln!(out, r#"<circle cx="{x}" cy="{y}" r="{r}" fill="{fill}"/>"#)
            }
            NodeShape::Square => writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
                x - r,
                y - r,
                2.0 * r,
                2.0 * r
            ),
            NodeShape::Hexagon => {
                let pts: Vec<String> = (0..6)
                    .map(|k| {
                        let a =
                            std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::FRAC_PI_3;
                        format!("{},{}", x + r * a.cos(), y + r * a.sin())
                    })
                    .collect();
                writeln!(
                    out,
                    r#"<polygon points="{}" fill="{fill}"/>"#,
                    pts.join(" ")
                )
            }
        };
    };
    let [b0, b1] = pattern.family.baseline_cells();
    for c in [b0, b1] {
        shape(
            &mut out,
            c.col as f64 + 0.5,
            c.row as f64 + 0.5,
            pattern.node_r,
            "black",
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="black"/>"#,
        s(b0.col as f64 + 0.5),
        s(b0.row as f64 + 0.5 - BASELINE_BAR_HALF),
        len((b1.col - b0.col) as f64),
        len(2.0 * BASELINE_BAR_HALF)
    );
    for c in [b0, b1] {
        shape(
            &mut out,
            c.col as f64 + 0.5,
            c.row as f64 + 0.5,
            pattern.dot_r,
            "white",
        );
    }
    for (k, c) in pattern.family.data_cell_order().iter().enumerate() {
        let (cx, cy) = (c.col as f64 + 0.5, c.row as f64 + 0.5);
        shape(&mut out, cx, cy, pattern.node_r, "black");
        if pattern.bits.0[k] {
            shape(&mut out, cx, cy, pattern.dot_r, "white");
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
