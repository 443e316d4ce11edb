//! Python bindings: marker rendering, detection with optional pose, and
//! synthetic scenes. Images cross the boundary as row-major 8-bit bytes.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use topotag::config::Config;
use topotag::eval::DetectionRecord;
use topotag::generator::{render_svg as svg_of, NodeShape};
use topotag::synth::{render_scene, SynthScene};
use topotag::tagmodel::{capacity as family_capacity, encode_id as encode, CanonicalLayout};
use topotag::{CameraIntrinsics, GrayImage, RenderOptions, TagFamily, TagId};

fn to_py(e: topotag::Error) -> PyErr {
    use topotag::Error as E;
    match e {
        E::Io { .. } => PyOSError::new_err(e.to_string()),
        E::InvalidArgument(_)
        | E::InvalidId { .. }
        | E::UnsupportedGrid(_)
        | E::ResolutionTooLow(_)
        | E::InvalidScene(_)
        | E::ImageTooSmall { .. }
        | E::Json(_)
        | E::Codec(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn tag_id(grid: usize, id: u64) -> PyResult<TagId> {
    TagId::new(&TagFamily::new(grid).map_err(to_py)?, id).map_err(to_py)
}

fn render_options(px_per_cell: u32, shape: &str) -> PyResult<RenderOptions> {
    Ok(RenderOptions {
        pixels_per_cell: px_per_cell,
        node_shape: shape.parse::<NodeShape>().map_err(to_py)?,
        ..Default::default()
    })
}

/// One decoded marker; pose fields are `None` unless intrinsics and tag size were given.
#[pyclass(frozen, module = "pytopotag")]
struct Detection {
    record: DetectionRecord,
}

#[pymethods]
impl Detection {
    #[getter]
    fn family(&self) -> usize {
        self.record.family
    }

    #[getter]
    fn id(&self) -> u64 {
        self.record.id
    }

    #[getter]
    fn bits(&self) -> &str {
        &self.record.bits
    }

    /// Node centers `(x, y)` in decoding order.
    #[getter]
    fn vertices(&self) -> Vec<(f64, f64)> {
        self.record.vertices.iter().map(|&[x, y]| (x, y)).collect()
    }

    /// Image to lattice homography, row-major.
    #[getter]
    fn homography(&self) -> Vec<f64> {
        self.record.homography.to_vec()
    }

    #[getter]
    fn polygon(&self) -> Vec<(f64, f64)> {
        self.record.polygon.iter().map(|&[x, y]| (x, y)).collect()
    }

    /// `(w, x, y, z)`.
    #[getter]
    fn rotation_quat(&self) -> Option<(f64, f64, f64, f64)> {
        self.record.rotation_quat.map(|[w, x, y, z]| (w, x, y, z))
    }

    #[getter]
    fn translation_m(&self) -> Option<(f64, f64, f64)> {
        self.record.translation_m.map(|[x, y, z]| (x, y, z))
    }

    #[getter]
    fn rmse_px(&self) -> Option<f64> {
        self.record.rmse_px
    }

    /// The record as one line of `topotag detect` output.
    fn to_json(&self) -> String {
        serde_json::to_string(&self.record).expect("records serialize")
    }

    fn __repr__(&self) -> String {
        format!(
            "Detection(family={}, id={})",
            self.record.family, self.record.id
        )
    }
}

/// Number of ids in the `grid` x `grid` family.
#[pyfunction]
fn capacity(grid: usize) -> PyResult<u64> {
    Ok(family_capacity(&TagFamily::new(grid).map_err(to_py)?))
}

/// Bit string of `id`, most significant bit first.
#[pyfunction]
fn encode_id(grid: usize, id: u64) -> PyResult<String> {
    Ok(encode(tag_id(grid, id)?).map_err(to_py)?.to_string())
}

/// Renders a marker; returns `(width, height, pixels)`.
#[pyfunction]
#[pyo3(signature = (grid, id, px_per_cell = 16, shape = "circle"))]
fn render_tag<'py>(
    py: Python<'py>,
    grid: usize,
    id: u64,
    px_per_cell: u32,
    shape: &str,
) -> PyResult<(usize, usize, Bound<'py, PyBytes>)> {
    let img = topotag::render_tag(tag_id(grid, id)?, &render_options(px_per_cell, shape)?)
        .map_err(to_py)?;
    Ok((img.width(), img.height(), PyBytes::new(py, img.data())))
}

/// Renders a marker as an SVG document.
#[pyfunction]
#[pyo3(signature = (grid, id, px_per_cell = 16, shape = "circle"))]
fn render_svg(grid: usize, id: u64, px_per_cell: u32, shape: &str) -> PyResult<String> {
    svg_of(tag_id(grid, id)?, &render_options(px_per_cell, shape)?).map_err(to_py)
}

/// Renders a synthetic scene given as JSON; returns `(width, height, pixels, ground_truth_json)`.
#[pyfunction]
fn synth<'py>(
    py: Python<'py>,
    scene_json: &str,
) -> PyResult<(usize, usize, Bound<'py, PyBytes>, String)> {
    let scene: SynthScene = serde_json::from_str(scene_json).map_err(|e| to_py(e.into()))?;
    let (img, gt) = py.detach(|| render_scene(&scene)).map_err(to_py)?;
    let gt = serde_json::to_string(&gt).map_err(|e| to_py(e.into()))?;
    Ok((img.width(), img.height(), PyBytes::new(py, img.data()), gt))
}

fn detect_image(
    py: Python<'_>,
    img: GrayImage,
    frame: &str,
    grids: Option<Vec<usize>>,
    config: Option<&str>,
    intrinsics: Option<Vec<f64>>,
    tag_size: Option<f64>,
) -> PyResult<Vec<Detection>> {
    let mut cfg = match config {
        Some(text) => serde_json::from_str::<Config>(text).map_err(|e| to_py(e.into()))?,
        None => Config::default(),
    };
    if let Some(g) = grids {
        cfg.families = g;
    }
    cfg.validate().map_err(to_py)?;
    let families = cfg.family_list().map_err(to_py)?;
    let camera = match (intrinsics, tag_size) {
        (Some(k), Some(size)) => {
            let c = match *k.as_slice() {
                [fx, fy, cx, cy] => CameraIntrinsics::new(fx, fy, cx, cy),
                [fx, fy, cx, cy, k1, k2, p1, p2, k3] => CameraIntrinsics {
                    fx,
                    fy,
                    cx,
                    cy,
                    dist: [k1, k2, p1, p2, k3],
                },
                _ => return Err(PyValueError::new_err(
                    "intrinsics must be [fx, fy, cx, cy] or [fx, fy, cx, cy, k1, k2, p1, p2, k3]",
                )),
            };
            c.validate().map_err(to_py)?;
            if !(size > 0.0 && size.is_finite()) {
                return Err(PyValueError::new_err("tag_size must be positive"));
            }
            Some((c, size))
        }
        (None, None) => None,
        _ => {
            return Err(PyValueError::new_err(
                "intrinsics and tag_size must be given together",
            ))
        }
    };
    let records = py.detach(|| {
        let dets = topotag::detect(&img, &families, &cfg.segmentation, &cfg.filter, &cfg.decode);
        dets.iter()
            .map(|d| {
                let est = camera.as_ref().and_then(|(k, size)| {
                    let fam = TagFamily::new(d.id.grid_n).ok()?;
                    topotag::estimate_pose(
                        d,
                        &CanonicalLayout::new(&fam, *size, &Default::default()),
                        k,
                    )
                    .ok()
                });
                DetectionRecord::new(frame, d, est.as_ref())
            })
            .collect::<Vec<_>>()
    });
    Ok(records
        .into_iter()
        .map(|record| Detection { record })
        .collect())
}

/// Detects markers in a row-major 8-bit grayscale buffer.
///
/// `config` is detector configuration JSON; `grids` overrides its family list.
/// Pose is estimated when both `intrinsics` and `tag_size` (meters) are given.
#[pyfunction]
#[pyo3(signature = (pixels, width, height, grids = None, config = None, intrinsics = None, tag_size = None))]
#[allow(clippy::too_many_arguments)]
fn detect(
    py: Python<'_>,
    pixels: &[u8],
    width: usize,
    height: usize,
    grids: Option<Vec<usize>>,
    config: Option<&str>,
    intrinsics: Option<Vec<f64>>,
    tag_size: Option<f64>,
) -> PyResult<Vec<Detection>> {
    let img = GrayImage::from_vec(width, height, pixels.to_vec()).map_err(to_py)?;
    detect_image(py, img, "", grids, config, intrinsics, tag_size)
}

/// Detects markers in an image file (converted to grayscale).
#[pyfunction]
#[pyo3(signature = (path, grids = None, config = None, intrinsics = None, tag_size = None))]
fn detect_file(
    py: Python<'_>,
    path: std::path::PathBuf,
    grids: Option<Vec<usize>>,
    config: Option<&str>,
    intrinsics: Option<Vec<f64>>,
    tag_size: Option<f64>,
) -> PyResult<Vec<Detection>> {
    let img = topotag::image::load_gray(&path).map_err(to_py)?;
    detect_image(
        py,
        img,
        &path.to_string_lossy(),
        grids,
        config,
        intrinsics,
        tag_size,
    )
}

#[pymodule]
pub fn pytopotag(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Detection>()?;
    m.add_function(wrap_pyfunction!(capacity, m)?)?;
    m.add_function(wrap_pyfunction!(encode_id, m)?)?;
    m.add_function(wrap_pyfunction!(render_tag, m)?)?;
    m.add_function(wrap_pyfunction!(render_svg, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(detect_file, m)?)?;
    Ok(())
}
