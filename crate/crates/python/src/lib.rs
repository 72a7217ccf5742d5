//! Python bindings: boxes and IoU, association, the tracker, evaluation and
//! the simulator-driven pipeline.

use std::collections::HashMap;

use nalgebra::{DMatrix, Point3, Vector3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sftrack_core::geometry;
use sftrack_core::metrics::{self, EvalConfig, MetricsReport, Sequence, SmotaFormula, TrackedBox};
use sftrack_core::pipeline::{run_sequence, FlowSource, PipelineConfig, Predictor, SequenceInput};
use sftrack_core::sim::{self, Keep, Scenario};
use sftrack_core::tracker::{self, MotionInput, TrackOutput};
use sftrack_core::{FlowField, PointCloud};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Box3D", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyBox3D(geometry::Box3D);

#[pymethods]
impl PyBox3D {
    #[new]
    fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, theta: f64) -> PyResult<Self> {
        geometry::Box3D::new(x, y, z, l, w, h, theta).map(PyBox3D).map_err(err)
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x()
    }
    #[getter]
    fn y(&self) -> f64 {
        self.0.y()
    }
    #[getter]
    fn z(&self) -> f64 {
        self.0.z()
    }
    #[getter]
    fn l(&self) -> f64 {
        self.0.l()
    }
    #[getter]
    fn w(&self) -> f64 {
        self.0.w()
    }
    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }
    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta()
    }

    fn volume(&self) -> f64 {
        self.0.volume()
    }

    fn contains(&self, point: [f64; 3]) -> bool {
        self.0.contains(&Point3::from(point))
    }

    fn translated(&self, d: [f64; 3]) -> Self {
        PyBox3D(self.0.translated(&Vector3::from(d)))
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64, f64, f64, f64) {
        let b = &self.0;
        (b.x(), b.y(), b.z(), b.l(), b.w(), b.h(), b.theta())
    }

    fn __repr__(&self) -> String {
        let b = &self.0;
        format!(
            "Box3D(x={:.3}, y={:.3}, z={:.3}, l={:.3}, w={:.3}, h={:.3}, theta={:.4})",
            b.x(),
            b.y(),
            b.z(),
            b.l(),
            b.w(),
            b.h(),
            b.theta()
        )
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

/// Oriented 3D intersection-over-union.
#[pyfunction]
fn iou3d(a: &PyBox3D, b: &PyBox3D) -> f64 {
    geometry::iou3d(&a.0, &b.0)
}

/// Maximum-total-similarity assignment gated at `iou_min`. Returns
/// `(matches, unmatched_rows, unmatched_cols)`.
#[pyfunction]
#[pyo3(signature = (similarity, iou_min = 0.01))]
#[allow(clippy::type_complexity)]
fn associate(similarity: Vec<Vec<f64>>, iou_min: f64) -> PyResult<(Vec<(usize, usize)>, Vec<usize>, Vec<usize>)> {
    let rows = similarity.len();
    let cols = similarity.first().map_or(0, Vec::len);
    if similarity.iter().any(|r| r.len() != cols) {
        return Err(err("similarity rows differ in length"));
    }
    if similarity.iter().flatten().any(|v| !v.is_finite()) {
        return Err(err("similarity must be finite"));
    }
    let m = DMatrix::from_fn(rows, cols, |i, j| similarity[i][j]);
    let a = tracker::associate(&m, iou_min);
    Ok((a.matches, a.unmatched_tracklets, a.unmatched_detections))
}

#[pyclass(name = "Detection", frozen, from_py_object)]
#[derive(Clone)]
struct PyDetection(tracker::Detection);

#[pymethods]
impl PyDetection {
    #[new]
    #[pyo3(signature = (bbox, confidence, category = "Car".to_string()))]
    fn new(bbox: &PyBox3D, confidence: f64, category: String) -> PyResult<Self> {
        tracker::Detection::new(bbox.0, confidence, category)
            .map(PyDetection)
            .map_err(err)
    }

    #[getter]
    fn bbox(&self) -> PyBox3D {
        PyBox3D(self.0.bbox)
    }
    #[getter]
    fn confidence(&self) -> f64 {
        self.0.confidence
    }
    #[getter]
    fn category(&self) -> String {
        self.0.category.clone()
    }
}

#[pyclass(name = "Track", frozen)]
struct PyTrack(TrackOutput);

#[pymethods]
impl PyTrack {
    #[getter]
    fn id(&self) -> u64 {
        self.0.id
    }
    #[getter]
    fn bbox(&self) -> PyBox3D {
        PyBox3D(self.0.bbox)
    }
    #[getter]
    fn confidence(&self) -> f64 {
        self.0.confidence
    }
    #[getter]
    fn category(&self) -> String {
        self.0.category.clone()
    }

    fn __repr__(&self) -> String {
        format!("Track(id={}, {})", self.0.id, PyBox3D(self.0.bbox).__repr__())
    }
}

fn config(iou_min: f64, max_mis: u32, min_det: u32, warmup_emit: bool) -> PyResult<tracker::TrackerConfig> {
    let cfg = tracker::TrackerConfig {
        iou_min,
        max_mis,
        min_det,
        warmup_emit,
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Frame-by-frame tracker. Each step takes the detections of the new frame
/// and, optionally, the previous frame's points with their flow vectors.
#[pyclass(name = "Tracker")]
struct PyTracker(tracker::Tracker);

#[pymethods]
impl PyTracker {
    #[new]
    #[pyo3(signature = (iou_min = 0.01, max_mis = 2, min_det = 3, warmup_emit = true))]
    fn new(iou_min: f64, max_mis: u32, min_det: u32, warmup_emit: bool) -> PyResult<Self> {
        tracker::Tracker::new(config(iou_min, max_mis, min_det, warmup_emit)?)
            .map(PyTracker)
            .map_err(err)
    }

    #[pyo3(signature = (detections, prev_points = None, flow = None))]
    fn step(
        &mut self,
        detections: Vec<PyDetection>,
        prev_points: Option<Vec<[f64; 3]>>,
        flow: Option<Vec<[f64; 3]>>,
    ) -> PyResult<Vec<PyTrack>> {
        let dets: Vec<tracker::Detection> = detections.into_iter().map(|d| d.0).collect();
        let out = match (prev_points, flow) {
            (Some(p), Some(f)) => {
                let cloud = PointCloud::from_positions(p.into_iter().map(Point3::from).collect());
                let field = FlowField::new(f.into_iter().map(Vector3::from).collect()).map_err(err)?;
                self.0.step(
                    &dets,
                    MotionInput::Flow {
                        prev_cloud: &cloud,
                        flow: &field,
                    },
                )
            }
            (None, None) => self.0.step(&dets, MotionInput::ConstantVelocity),
            _ => return Err(err("prev_points and flow must be given together")),
        }
        .map_err(err)?;
        Ok(out.tracks.into_iter().map(PyTrack).collect())
    }

    #[getter]
    fn frames_seen(&self) -> usize {
        self.0.frames_seen()
    }
}

/// `[[ (id, Box3D, score | None), ... ], ...]` per frame.
type PySequence = Vec<Vec<(i64, PyBox3D, Option<f64>)>>;

fn to_sequence(seq: PySequence) -> Sequence {
    seq.into_iter()
        .map(|f| {
            f.into_iter()
                .map(|(id, b, score)| TrackedBox { id, bbox: b.0, score })
                .collect()
        })
        .collect()
}

fn from_sequence(seq: &Sequence) -> PySequence {
    seq.iter()
        .map(|f| f.iter().map(|t| (t.id, PyBox3D(t.bbox), t.score)).collect())
        .collect()
}

/// CLEAR counts of one sequence at a fixed IoU threshold.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, gt: PySequence, pred: PySequence, iou_thres: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = metrics::evaluate_sequence(&to_sequence(gt), &to_sequence(pred), iou_thres).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("num_gt", c.num_gt)?;
    d.set_item("matches", c.matches)?;
    d.set_item("fp", c.fp)?;
    d.set_item("fn", c.fn_)?;
    d.set_item("ids", c.ids)?;
    d.set_item("frag", c.frag)?;
    d.set_item("mota", c.mota())?;
    d.set_item("motp", c.motp())?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("iou_thres", r.iou_thres)?;
    d.set_item("category", &r.category)?;
    d.set_item("samota", r.samota)?;
    d.set_item("amota", r.amota)?;
    d.set_item("amotp", r.amotp)?;
    d.set_item("mota", r.mota)?;
    d.set_item("motp", r.motp)?;
    d.set_item("ids", r.ids)?;
    d.set_item("frag", r.frag)?;
    d.set_item("num_gt", r.num_gt)?;
    let rows: Vec<(f64, Option<f64>, f64, f64)> = r.rows.iter().map(|x| (x.r, x.threshold, x.mota, x.smota)).collect();
    d.set_item("rows", rows)?;
    d.set_item("table", r.table())?;
    Ok(d)
}

/// Recall-swept metrics (sAMOTA, AMOTA, AMOTP, best-threshold MOTA) over a
/// set of `(gt, pred)` sequence pairs.
#[pyfunction]
#[pyo3(signature = (sequences, iou_thres, category = "Car".to_string(), num_recall_steps = 40, smota = "ratio"))]
fn recall_sweep<'py>(
    py: Python<'py>,
    sequences: Vec<(PySequence, PySequence)>,
    iou_thres: f64,
    category: String,
    num_recall_steps: usize,
    smota: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = EvalConfig::new(iou_thres, category);
    cfg.num_recall_steps = num_recall_steps;
    cfg.smota = match smota {
        "ratio" => SmotaFormula::Ratio,
        "integrated-fn" => SmotaFormula::IntegratedFn,
        other => return Err(err(format!("unknown sMOTA formula `{other}`"))),
    };
    let pairs: Vec<(Sequence, Sequence)> = sequences
        .into_iter()
        .map(|(g, p)| (to_sequence(g), to_sequence(p)))
        .collect();
    let rep = metrics::recall_sweep(&pairs, &cfg).map_err(err)?;
    report_dict(py, &rep)
}

fn load_scenario(name: &str) -> PyResult<Scenario> {
    match name {
        "demo" => Ok(Scenario::demo()),
        "high-speed" => Ok(Scenario::high_speed()),
        text => Scenario::parse(text).map_err(err),
    }
}

/// Simulates a scenario (`"demo"`, `"high-speed"` or TOML text) and tracks
/// it. Returns `(gt, results)` as sequences ready for `evaluate`.
#[pyfunction]
#[pyo3(signature = (scenario = "demo", predictor = "flow", flow_source = "oracle", keep = None, seed = 0))]
fn track_scenario(
    scenario: &str,
    predictor: &str,
    flow_source: &str,
    keep: Option<&str>,
    seed: u64,
) -> PyResult<(PySequence, PySequence)> {
    let mut frames = sim::generate(&load_scenario(scenario)?).map_err(err)?;
    if let Some(k) = keep {
        frames = sim::decimate(&frames, k.parse::<Keep>().map_err(err)?).frames;
    }
    let (input, motions): (SequenceInput, Vec<HashMap<_, _>>) = SequenceInput::from_sim(&frames);
    let flow = match flow_source {
        "oracle" => FlowSource::Oracle(motions),
        "nn" => FlowSource::NearestNeighbor(Default::default()),
        other => return Err(err(format!("unknown flow source `{other}`"))),
    };
    let cfg = PipelineConfig {
        predictor: predictor.parse::<Predictor>().map_err(err)?,
        seed,
        ..Default::default()
    };
    let run = run_sequence(&input, &cfg, &flow).map_err(err)?;
    let gt: Sequence = frames
        .iter()
        .map(|f| {
            f.gt.iter()
                .map(|o| TrackedBox {
                    id: o.id as i64,
                    bbox: o.bbox,
                    score: None,
                })
                .collect()
        })
        .collect();
    Ok((from_sequence(&gt), from_sequence(&run.to_sequence())))
}

#[pymodule]
fn sftrack(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox3D>()?;
    m.add_class::<PyDetection>()?;
    m.add_class::<PyTrack>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(iou3d, m)?)?;
    m.add_function(wrap_pyfunction!(associate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(recall_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(track_scenario, m)?)?;
    Ok(())
}
