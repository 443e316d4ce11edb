//! Tag families, the id <-> bit-string codec and canonical marker geometry.
//!
//! A family with `n x n` grid cells reserves two horizontally adjacent cells
//! of the top row (the leftmost pair) for the baseline node. The remaining
//! `n^2 - 2` cells carry one bit each, read in row-major order starting with
//! the rest of the baseline row. The first data cell is the most
//! significant bit.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the family definition (cell order and baseline placement).
pub const FAMILY_FORMAT_VERSION: u32 = 1;

pub const SUPPORTED_GRIDS: [usize; 3] = [3, 4, 5];

/// Grid cell, `row` counted downward from the baseline row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Lattice coordinates `(col, row)` of the cell center.
    pub fn lattice(&self) -> Point2<f64> {
        Point2::new(self.col as f64, self.row as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFamily {
    grid_n: usize,
    baseline_cells: [Cell; 2],
    data_cell_order: Vec<Cell>,
}

impl TagFamily {
    pub fn new(grid_n: usize) -> Result<Self> {
        if !SUPPORTED_GRIDS.contains(&grid_n) {
            return Err(Error::UnsupportedGrid(grid_n));
        }
        let baseline_cells = [Cell::new(0, 0), Cell::new(0, 1)];
        let data_cell_order = (0..grid_n)
            .flat_map(|row| (0..grid_n).map(move |col| Cell::new(row, col)))
            .filter(|c| !baseline_cells.contains(c))
            .collect();
        Ok(Self {
            grid_n,
            baseline_cells,
            data_cell_order,
        })
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn baseline_cells(&self) -> [Cell; 2] {
        self.baseline_cells
    }

    pub fn data_cell_order(&self) -> &[Cell] {
        &self.data_cell_order
    }

    pub fn bit_count(&self) -> usize {
        self.grid_n * self.grid_n - 2
    }

    pub fn node_count(&self) -> usize {
        self.grid_n * self.grid_n
    }

    /// Index into `data_cell_order`, `None` for baseline or out-of-grid cells.
    pub fn data_index(&self, cell: Cell) -> Option<usize> {
        if cell.row >= self.grid_n || cell.col >= self.grid_n || self.baseline_cells.contains(&cell)
        {
            return None;
        }
        // row-major minus the two baseline cells, which precede every data cell
        Some(cell.row * self.grid_n + cell.col - 2)
    }

    /// Cells in vertex order: the two baseline cells, then data cells.
    pub fn vertex_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.baseline_cells
            .iter()
            .copied()
            .chain(self.data_cell_order.iter().copied())
    }

    pub fn descriptor(&self) -> FamilyDescriptor {
        FamilyDescriptor {
            format_version: FAMILY_FORMAT_VERSION,
            grid_n: self.grid_n,
            baseline_cells: self.baseline_cells.map(|c| [c.row, c.col]),
            data_cell_order: self
                .data_cell_order
                .iter()
                .map(|c| [c.row, c.col])
                .collect(),
        }
    }

    /// Accepts a descriptor only if it matches the built-in definition.
    pub fn from_descriptor(d: &FamilyDescriptor) -> Result<Self> {
        if d.format_version != FAMILY_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unknown family format version {}",
                d.format_version
            )));
        }
        let fam = Self::new(d.grid_n)?;
        if fam.descriptor() != *d {
            return Err(Error::InvalidArgument(
                "family descriptor does not match the version-1 layout".into(),
            ));
        }
        Ok(fam)
    }
}

/// JSON form of a family definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyDescriptor {
    pub format_version: u32,
    pub grid_n: usize,
    /// `[row, col]` pairs
    pub baseline_cells: [[usize; 2]; 2],
    pub data_cell_order: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagId {
    pub grid_n: usize,
    pub value: u64,
}

impl TagId {
    pub fn new(family: &TagFamily, value: u64) -> Result<Self> {
        let cap = capacity(family);
        if value >= cap {
            return Err(Error::InvalidId {
                value,
                grid_n: family.grid_n,
                capacity: cap,
            });
        }
        Ok(Self {
            grid_n: family.grid_n,
            value,
        })
    }

    pub fn family(&self) -> TagFamily {
        TagFamily::new(self.grid_n).expect("TagId always carries a supported grid")
    }
}

/// Bit string in decode order, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitString(pub Vec<bool>);

impl BitString {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidArgument(format!(
                    "bad bit character {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(BitString)
    }
}

impl Serialize for BitString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn capacity(family: &TagFamily) -> u64 {
    1u64 << family.bit_count()
}

pub fn encode_id(id: TagId) -> Result<BitString> {
    let family = TagFamily::new(id.grid_n)?;
    let cap = capacity(&family);
    if id.value >= cap {
        return Err(Error::InvalidId {
            value: id.value,
            grid_n: id.grid_n,
            capacity: cap,
        });
    }
    let n = family.bit_count();
    Ok(BitString(
        (0..n).map(|k| (id.value >> (n - 1 - k)) & 1 == 1).collect(),
    ))
}

pub fn decode_bits(family: &TagFamily, bits: &BitString) -> Result<TagId> {
    if bits.len() != family.bit_count() {
        return Err(Error::InvalidArgument(format!(
            "expected {} bits for a {}x{} family, got {}",
            family.bit_count(),
            family.grid_n,
            family.grid_n,
            bits.len()
        )));
    }
    let value = bits
        .0
        .iter()
        .fold(0u64, |acc, &b| (acc << 1) | u64::from(b));
    Ok(TagId {
        grid_n: family.grid_n,
        value,
    })
}

/// Every id of the family in increasing order. Identity encoding uses all
/// bits, so there is no search or distance pruning.
pub fn enumerate_dictionary(family: &TagFamily) -> impl Iterator<Item = TagId> {
    let grid_n = family.grid_n;
    (0..capacity(family)).map(move |value| TagId { grid_n, value })
}

/// `(zeta_min, zeta_max)`: total descendants of the white interior region
/// for the all-zero and all-one ids.
pub fn expected_tree_counts(family: &TagFamily) -> (usize, usize) {
    let black_nodes = family.node_count() - 1;
    let zeta_min = black_nodes + 2;
    (zeta_min, zeta_min + family.bit_count())
}

/// Proportions of the printed marker, in units of the cell pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TagGeometry {
    /// White gap between the outermost cells and the black border.
    pub margin_cells: f64,
    /// Thickness of the black external border.
    pub border_cells: f64,
    /// White quiet zone outside the border.
    pub quiet_zone_cells: f64,
}

impl Default for TagGeometry {
    fn default() -> Self {
        Self {
            margin_cells: 0.5,
            border_cells: 1.0,
            quiet_zone_cells: 0.5,
        }
    }
}

impl TagGeometry {
    /// Side of the outer black border in cell units.
    pub fn outer_side_cells(&self, grid_n: usize) -> f64 {
        grid_n as f64 + 2.0 * (self.margin_cells + self.border_cells)
    }

    /// Side including the quiet zone.
    pub fn full_side_cells(&self, grid_n: usize) -> f64 {
        self.outer_side_cells(grid_n) + 2.0 * self.quiet_zone_cells
    }
}

/// Model points in the marker frame (meters, `z = 0`, origin at the tag
/// center, `x` along the baseline row, `y` toward the last row).
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalLayout {
    pub grid_n: usize,
    pub model_points: Vec<Point3<f64>>,
    /// Meters between adjacent cell centers.
    pub cell_pitch: f64,
    /// Side of the outer black border in meters.
    pub tag_size: f64,
}

impl CanonicalLayout {
    pub fn new(family: &TagFamily, tag_size: f64, geometry: &TagGeometry) -> Self {
        let n = family.grid_n;
        let pitch = tag_size / geometry.outer_side_cells(n);
        let half = n as f64 / 2.0;
        let model_points = family
            .vertex_cells()
            .map(|c| {
                Point3::new(
                    (c.col as f64 + 0.5 - half) * pitch,
                    (c.row as f64 + 0.5 - half) * pitch,
                    0.0,
                )
            })
            .collect();
        Self {
            grid_n: n,
            model_points,
            cell_pitch: pitch,
            tag_size,
        }
    }

    /// Marker-frame point (meters) of a lattice coordinate `(col, row)`.
    pub fn lattice_to_marker(&self, lattice: Point2<f64>) -> Point3<f64> {
        let half = self.grid_n as f64 / 2.0;
        Point3::new(
            (lattice.x + 0.5 - half) * self.cell_pitch,
            (lattice.y + 0.5 - half) * self.cell_pitch,
            0.0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fam(n: usize) -> TagFamily {
        TagFamily::new(n).unwrap()
    }

    #[test]
    fn worked_examples() {
        let f3 = fam(3);
        assert_eq!(
            encode_id(TagId::new(&f3, 0).unwrap()).unwrap().to_string(),
            "0000000"
        );
        assert_eq!(
            encode_id(TagId::new(&f3, 127).unwrap())
                .unwrap()
                .to_string(),
            "1111111"
        );
        let f4 = fam(4);
        assert_eq!(
            encode_id(TagId::new(&f4, 8390).unwrap())
                .unwrap()
                .to_string(),
            "10000011000110"
        );
        let bits: BitString = "10000011000110".parse().unwrap();
        assert_eq!(decode_bits(&f4, &bits).unwrap().value, 8390);
        let f5 = fam(5);
        assert_eq!(
            decode_bits(&f5, &BitString(vec![true; 23])).unwrap().value,
            8_388_607
        );
        assert_eq!(
            decode_bits(&f5, &BitString(vec![false; 23])).unwrap().value,
            0
        );
    }

    #[test]
    fn capacities() {
        assert_eq!(capacity(&fam(3)), 128);
        assert_eq!(capacity(&fam(4)), 16_384);
        assert_eq!(capacity(&fam(5)), 8_388_608);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            TagId::new(&fam(3), 128),
            Err(Error::InvalidId { .. })
        ));
        assert!(matches!(
            encode_id(TagId {
                grid_n: 3,
                value: 200
            }),
            Err(Error::InvalidId { .. })
        ));
        assert!(matches!(
            decode_bits(&fam(4), &BitString(vec![true; 7])),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(TagFamily::new(6), Err(Error::UnsupportedGrid(6))));
    }

    #[test]
    fn tree_counts() {
        assert_eq!(expected_tree_counts(&fam(3)), (10, 17));
        assert_eq!(expected_tree_counts(&fam(4)), (17, 31));
        assert_eq!(expected_tree_counts(&fam(5)), (26, 49));
        for n in SUPPORTED_GRIDS {
            let (lo, hi) = expected_tree_counts(&fam(n));
            assert_eq!(hi - lo, n * n - 2);
        }
    }

    #[test]
    fn enumeration_order() {
        let ids: Vec<u64> = enumerate_dictionary(&fam(3)).map(|i| i.value).collect();
        assert_eq!(ids.len(), 128);
        assert_eq!((ids[0], ids[127]), (0, 127));
        let first: Vec<u64> = enumerate_dictionary(&fam(4))
            .take(3)
            .map(|i| i.value)
            .collect();
        assert_eq!(first, [0, 1, 2]);
    }

    #[test]
    fn cell_order_excludes_baseline() {
        for n in SUPPORTED_GRIDS {
            let f = fam(n);
            assert_eq!(f.data_cell_order().len(), n * n - 2);
            for b in f.baseline_cells() {
                assert!(!f.data_cell_order().contains(&b));
            }
            let [a, b] = f.baseline_cells();
            assert_eq!((a.row, b.row, b.col - a.col), (0, 0, 1));
            for (k, c) in f.data_cell_order().iter().enumerate() {
                assert_eq!(f.data_index(*c), Some(k));
            }
            assert_eq!(f.data_index(a), None);
        }
    }

    #[test]
    fn descriptor_roundtrip() {
        let f = fam(4);
        let json = serde_json::to_string(&f.descriptor()).unwrap();
        let back: FamilyDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(TagFamily::from_descriptor(&back).unwrap(), f);
        let mut tampered = back.clone();
        tampered.data_cell_order.swap(0, 1);
        assert!(TagFamily::from_descriptor(&tampered).is_err());
    }

    #[test]
    fn layout_is_a_regular_lattice() {
        let f = fam(4);
        let layout = CanonicalLayout::new(&f, 0.05, &TagGeometry::default());
        assert_eq!(layout.model_points.len(), 16);
        assert!((layout.cell_pitch - 0.05 / 7.0).abs() < 1e-15);
        let p = &layout.model_points;
        assert!((p[1].x - p[0].x - layout.cell_pitch).abs() < 1e-15);
        assert_eq!(p[0].y, p[1].y);
        for (pt, cell) in p.iter().zip(f.vertex_cells()) {
            assert_eq!(*pt, layout.lattice_to_marker(cell.lattice()));
            assert_eq!(pt.z, 0.0);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn codec_roundtrip(n in prop::sample::select(SUPPORTED_GRIDS.to_vec()), raw in any::<u64>()) {
                let f = fam(n);
                let id = TagId::new(&f, raw % capacity(&f)).unwrap();
                let bits = encode_id(id).unwrap();
                prop_assert_eq!(bits.len(), n * n - 2);
                prop_assert_eq!(decode_bits(&f, &bits).unwrap(), id);
            }
        }
    }
}
