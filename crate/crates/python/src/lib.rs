//! Python bindings: `import matchkit`.
//!
//! Descriptors cross the boundary as 64-character hex strings or 32-byte
//! `bytes`; keypoints as `(x, y)` tuples; matches as
//! `(query_idx, train_idx, d1, d2)` tuples with `d2` possibly `None`.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use matchkit_core as core;
use matchkit_core::{BinaryDescriptor, Correspondence, Keypoint, MatchError, MatchSet, Stage};

fn err(e: MatchError) -> PyErr {
    match e {
        MatchError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn descriptor(obj: &Bound<'_, PyAny>) -> PyResult<BinaryDescriptor> {
    if let Ok(b) = obj.cast::<PyBytes>() {
        let bytes: [u8; 32] = b
            .as_bytes()
            .try_into()
            .map_err(|_| PyValueError::new_err(format!("descriptor must be 32 bytes, got {}", b.as_bytes().len())))?;
        return Ok(BinaryDescriptor::from_bytes(&bytes));
    }
    let s: String = obj.extract()?;
    BinaryDescriptor::from_hex(&s).map_err(PyValueError::new_err)
}

fn point(p: (f64, f64)) -> Keypoint {
    Keypoint::new(p.0, p.1)
}

type MatchTuple = (usize, usize, u32, Option<u32>);

fn to_tuples(set: &MatchSet) -> Vec<MatchTuple> {
    set.matches()
        .iter()
        .map(|c| (c.query_idx, c.train_idx, c.d1, c.d2))
        .collect()
}

fn from_tuples(matches: Vec<MatchTuple>, stage: Stage) -> PyResult<MatchSet> {
    let ms = matches
        .into_iter()
        .map(|(query_idx, train_idx, d1, d2)| Correspondence {
            query_idx,
            train_idx,
            d1,
            d2,
        })
        .collect();
    MatchSet::new(ms, stage).map_err(err)
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

/// Keypoints, descriptors and the image size of one image.
#[pyclass(name = "FeatureSet", module = "matchkit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFeatureSet(core::FeatureSet);

#[pymethods]
impl PyFeatureSet {
    #[new]
    fn new(keypoints: Vec<(f64, f64)>, descriptors: Vec<Bound<'_, PyAny>>, image_size: (u32, u32)) -> PyResult<Self> {
        let descs = descriptors.iter().map(descriptor).collect::<PyResult<Vec<_>>>()?;
        let kps = keypoints.into_iter().map(point).collect();
        core::FeatureSet::new(kps, descs, image_size).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::io::load_features(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        core::io::save_features(path, &self.0).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("FeatureSet(len={}, image_size={:?})", self.0.len(), self.0.image_size())
    }

    #[getter]
    fn image_size(&self) -> (u32, u32) {
        self.0.image_size()
    }

    #[getter]
    fn keypoints(&self) -> Vec<(f64, f64)> {
        self.0.keypoints().iter().map(|k| (k.x, k.y)).collect()
    }

    /// Descriptors as hex strings.
    #[getter]
    fn descriptors(&self) -> Vec<String> {
        self.0.descriptors().iter().map(|d| d.to_hex()).collect()
    }
}

/// A 3x3 homography, stored normalized.
#[pyclass(name = "Homography", module = "matchkit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHomography(core::Homography);

#[pymethods]
impl PyHomography {
    /// From nine row-major entries.
    #[new]
    fn new(rows: [f64; 9]) -> PyResult<Self> {
        core::Homography::from_rows(rows).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(core::Homography::identity())
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::io::load_homography(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        core::io::save_homography(path, &self.0).map_err(err)
    }

    fn rows(&self) -> [f64; 9] {
        self.0.to_rows()
    }

    fn project(&self, p: (f64, f64)) -> PyResult<(f64, f64)> {
        let q = self.0.project(&point(p)).map_err(err)?;
        Ok((q.x, q.y))
    }

    fn inverse(&self) -> PyResult<Self> {
        self.0.inverse().map(Self).map_err(err)
    }

    fn distance_up_to_scale(&self, other: &PyHomography) -> f64 {
        self.0.distance_up_to_scale(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("Homography({:?})", self.0.to_rows())
    }
}

#[pyfunction]
fn hamming_distance(a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>) -> PyResult<u32> {
    Ok(core::hamming_distance(&descriptor(a)?, &descriptor(b)?))
}

/// Exact two-nearest-neighbor matching of every target descriptor.
#[pyfunction]
fn knn2_match(py: Python<'_>, target: &PyFeatureSet, reference: &PyFeatureSet) -> PyResult<Vec<MatchTuple>> {
    let out = py.detach(|| core::knn2_match(&target.0, &reference.0)).map_err(err)?;
    Ok(out.iter().map(|c| (c.query_idx, c.train_idx, c.d1, c.d2)).collect())
}

#[pyfunction]
fn ratio_filter(matches: Vec<MatchTuple>, t_w: f64) -> PyResult<Vec<MatchTuple>> {
    let set = from_tuples(matches, Stage::Knn)?;
    Ok(to_tuples(&core::ratio_filter(&set, t_w)))
}

/// Support count of every match, in input order.
#[pyfunction]
fn neighborhood_support(
    matches: Vec<MatchTuple>,
    target: &PyFeatureSet,
    reference: &PyFeatureSet,
    radius: f64,
) -> PyResult<Vec<usize>> {
    let set = from_tuples(matches, Stage::Tf)?;
    let s = core::neighborhood_support(&set, &target.0, &reference.0, radius).map_err(err)?;
    Ok(s.iter().map(|r| r.support).collect())
}

#[pyfunction]
fn support_filter(matches: Vec<MatchTuple>, supports: Vec<usize>, t_g: usize) -> PyResult<Vec<MatchTuple>> {
    let set = from_tuples(matches, Stage::Tf)?;
    let records: Vec<_> = supports
        .into_iter()
        .enumerate()
        .map(|(match_index, support)| core::SupportRecord { match_index, support })
        .collect();
    core::support_filter(&set, &records, t_g)
        .map(|s| to_tuples(&s))
        .map_err(err)
}

/// Homography from exactly four `((x, y), (x', y'))` correspondences.
#[pyfunction]
fn dlt_homography(pairs: [((f64, f64), (f64, f64)); 4]) -> PyResult<PyHomography> {
    core::dlt_homography(&pairs.map(|(p, q)| (point(p), point(q))))
        .map(PyHomography)
        .map_err(err)
}

#[pyfunction]
fn transfer_error(h: &PyHomography, p: (f64, f64), q: (f64, f64)) -> PyResult<f64> {
    core::transfer_error(&h.0, &point(p), &point(q)).map_err(err)
}

fn robust_config(
    inlier_threshold: f64,
    min_inliers: usize,
    max_iterations: usize,
    seed: u64,
    mode: &str,
) -> PyResult<core::RobustConfig> {
    Ok(core::RobustConfig {
        inlier_threshold,
        min_inliers,
        max_iterations,
        seed,
        mode: parse(mode)?,
        ..core::RobustConfig::default()
    })
}

fn estimate_dict<'py>(py: Python<'py>, e: &core::RobustEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("homography", e.homography.map(PyHomography))?;
    d.set_item("inliers", &e.inlier_indices)?;
    d.set_item("iterations", e.iterations_used)?;
    d.set_item("converged", e.converged)?;
    Ok(d)
}

/// PROSAC on `matches`, ordered internally by distance ratio. Inlier indices
/// refer to positions in `matches`.
#[pyfunction]
#[pyo3(signature = (matches, target, reference, inlier_threshold=3.0, min_inliers=10, max_iterations=2000, seed=0, mode="standard"))]
#[allow(clippy::too_many_arguments)]
fn prosac_estimate<'py>(
    py: Python<'py>,
    matches: Vec<MatchTuple>,
    target: &PyFeatureSet,
    reference: &PyFeatureSet,
    inlier_threshold: f64,
    min_inliers: usize,
    max_iterations: usize,
    seed: u64,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = robust_config(inlier_threshold, min_inliers, max_iterations, seed, mode)?;
    let set = from_tuples(matches, Stage::Gms)?;
    let ordered = core::quality_order(&set).map_err(err)?;
    let e = py
        .detach(|| core::prosac_estimate(&ordered, &target.0, &reference.0, &cfg))
        .map_err(err)?;
    estimate_dict(py, &e)
}

/// Uniform-sampling RANSAC with the same scoring and refit.
#[pyfunction]
#[pyo3(signature = (matches, target, reference, inlier_threshold=3.0, min_inliers=10, max_iterations=2000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn ransac_estimate<'py>(
    py: Python<'py>,
    matches: Vec<MatchTuple>,
    target: &PyFeatureSet,
    reference: &PyFeatureSet,
    inlier_threshold: f64,
    min_inliers: usize,
    max_iterations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = robust_config(inlier_threshold, min_inliers, max_iterations, seed, "standard")?;
    let set = from_tuples(matches, Stage::Gms)?;
    let e = py
        .detach(|| core::ransac_estimate(&set, &target.0, &reference.0, &cfg))
        .map_err(err)?;
    estimate_dict(py, &e)
}

fn metrics_dict<'py>(py: Python<'py>, m: &core::MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("nm", m.nm)?;
    d.set_item("rep", m.rep)?;
    d.set_item("me", m.me)?;
    d.set_item("rmse", m.rmse)?;
    d.set_item("correct", m.correct)?;
    Ok(d)
}

/// Runs the cascade. Returns a dict with `stages` (label, count) pairs,
/// `matches` of the last stage, `homography`, `converged` and, per stage,
/// `metrics` (None for empty stages).
#[pyfunction]
#[pyo3(signature = (
    target, reference, t_w=0.66, t_g=6, radius=None, inlier_threshold=3.0, min_inliers=10,
    max_iterations=2000, seed=0, prosac_mode="standard", metric_mode="displacement", gt=None,
    stop_after="prosac"
))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    target: &PyFeatureSet,
    reference: &PyFeatureSet,
    t_w: f64,
    t_g: usize,
    radius: Option<f64>,
    inlier_threshold: f64,
    min_inliers: usize,
    max_iterations: usize,
    seed: u64,
    prosac_mode: &str,
    metric_mode: &str,
    gt: Option<&PyHomography>,
    stop_after: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = core::PipelineConfig {
        t_w,
        t_g,
        neighborhood_radius: radius.map_or(core::Radius::Auto, core::Radius::Pixels),
        inlier_threshold,
        min_inliers,
        max_iterations,
        seed,
        prosac_mode: parse(prosac_mode)?,
        metric_mode: parse(metric_mode)?,
    };
    let stop: Stage = parse(stop_after)?;
    let gt = gt.map(|h| h.0);
    let (run, metrics) = py
        .detach(|| {
            let run = core::run_pipeline(&target.0, &reference.0, &cfg, stop)?;
            let metrics = run.stage_metrics(&target.0, &reference.0, cfg.metric_mode, gt.as_ref(), inlier_threshold)?;
            Ok((run, metrics))
        })
        .map_err(err)?;

    let d = PyDict::new(py);
    let stages: Vec<(&str, usize)> = run.counts().iter().map(|(s, n)| (s.label(), *n)).collect();
    d.set_item("stages", stages)?;
    d.set_item("matches", to_tuples(run.final_matches()))?;
    d.set_item("homography", run.homography().copied().map(PyHomography))?;
    d.set_item("converged", run.converged())?;
    let m = metrics
        .iter()
        .map(|m| m.as_ref().map(|m| metrics_dict(py, m)).transpose())
        .collect::<PyResult<Vec<_>>>()?;
    d.set_item("metrics", m)?;
    Ok(d)
}

#[pyfunction]
fn repeatability(n_matched: usize, n_detected: usize) -> PyResult<f64> {
    core::repeatability(n_matched, n_detected).map_err(err)
}

fn pairs_of(pairs: Vec<((f64, f64), (f64, f64))>) -> Vec<(Keypoint, Keypoint)> {
    pairs.into_iter().map(|(p, q)| (point(p), point(q))).collect()
}

#[pyfunction]
#[pyo3(signature = (pairs, mode="displacement", gt=None))]
fn mean_error(pairs: Vec<((f64, f64), (f64, f64))>, mode: &str, gt: Option<&PyHomography>) -> PyResult<f64> {
    core::mean_error(&pairs_of(pairs), parse(mode)?, gt.map(|h| &h.0)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pairs, mode="displacement", gt=None))]
fn rmse(pairs: Vec<((f64, f64), (f64, f64))>, mode: &str, gt: Option<&PyHomography>) -> PyResult<f64> {
    core::rmse(&pairs_of(pairs), parse(mode)?, gt.map(|h| &h.0)).map_err(err)
}

/// Ratio-threshold sweep; one dict per threshold.
#[pyfunction]
fn sweep_tw<'py>(
    py: Python<'py>,
    target: &PyFeatureSet,
    reference: &PyFeatureSet,
    grid: Vec<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let records = core::sweep_tw(&target.0, &reference.0, &grid).map_err(err)?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("threshold", r.threshold)?;
            d.set_item("retained", r.retained)?;
            d.set_item("q", r.q_percent)?;
            Ok(d)
        })
        .collect()
}

type Scene = (
    PyFeatureSet,
    PyFeatureSet,
    Option<PyHomography>,
    Option<Vec<(usize, usize)>>,
);

/// Synthetic scene: returns `(target, reference, gt_homography, gt_pairs)`.
#[pyfunction]
#[pyo3(signature = (
    n_inliers=200, n_outliers=200, image_size=(640, 480), noise_sigma=0.5, descriptor_flip_bits=8,
    perspective_magnitude=0.1, seed=0, clusters=0, cluster_radius=40.0, confusers=0
))]
#[allow(clippy::too_many_arguments)]
fn generate_scene(
    n_inliers: usize,
    n_outliers: usize,
    image_size: (u32, u32),
    noise_sigma: f64,
    descriptor_flip_bits: usize,
    perspective_magnitude: f64,
    seed: u64,
    clusters: usize,
    cluster_radius: f64,
    confusers: usize,
) -> PyResult<Scene> {
    let s = core::generate_scene(&core::SynthConfig {
        n_inliers,
        n_outliers,
        image_size,
        noise_sigma,
        descriptor_flip_bits,
        perspective_magnitude,
        seed,
        clusters,
        cluster_radius,
        confusers,
    })
    .map_err(err)?;
    Ok((
        PyFeatureSet(s.target),
        PyFeatureSet(s.reference),
        s.gt_h.map(PyHomography),
        s.gt_inlier_pairs,
    ))
}

#[pymodule]
fn matchkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureSet>()?;
    m.add_class::<PyHomography>()?;
    m.add_function(wrap_pyfunction!(hamming_distance, m)?)?;
    m.add_function(wrap_pyfunction!(knn2_match, m)?)?;
    m.add_function(wrap_pyfunction!(ratio_filter, m)?)?;
    m.add_function(wrap_pyfunction!(neighborhood_support, m)?)?;
    m.add_function(wrap_pyfunction!(support_filter, m)?)?;
    m.add_function(wrap_pyfunction!(dlt_homography, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_error, m)?)?;
    m.add_function(wrap_pyfunction!(prosac_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(ransac_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(repeatability, m)?)?;
    m.add_function(wrap_pyfunction!(mean_error, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_tw, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    Ok(())
}
