//! Python bindings: the tensor type with a handful of differentiable
//! operations, the synthetic benchmark generator, and the train /
//! evaluate / gradcheck drivers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use gbe_core::config::RunConfig;
use gbe_core::harness::{self, GradcheckOptions, Protocol};
use gbe_core::metrics;
use gbe_core::synth::{self, BenchmarkSpec};
use gbe_core::tensor::{Tape, Tensor as CoreTensor};

fn to_py(err: gbe_core::Error) -> PyErr {
    match &err {
        gbe_core::Error::Io(_) | gbe_core::Error::CorruptFile { .. } => {
            PyIOError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Dense float32 tensor in row-major order.
#[pyclass(name = "Tensor", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: CoreTensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: CoreTensor::new(shape, data).map_err(to_py)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

fn unary_on_tape(
    x: &PyTensor,
    f: impl FnOnce(&mut Tape<f32>, gbe_core::TensorId) -> gbe_core::Result<gbe_core::TensorId>,
) -> PyResult<PyTensor> {
    let mut tape: Tape<f32> = Tape::new();
    let xid = tape.leaf(x.inner.clone());
    let out = f(&mut tape, xid).map_err(to_py)?;
    Ok(PyTensor {
        inner: tape.value(out).clone(),
    })
}

/// Matrix product a @ b.
#[pyfunction]
fn matmul(a: &PyTensor, b: &PyTensor) -> PyResult<PyTensor> {
    let mut tape: Tape<f32> = Tape::new();
    let aid = tape.leaf(a.inner.clone());
    let bid = tape.leaf(b.inner.clone());
    let out = tape.matmul(aid, bid).map_err(to_py)?;
    Ok(PyTensor {
        inner: tape.value(out).clone(),
    })
}

/// Row-wise softmax of a matrix.
#[pyfunction]
fn softmax_rows(x: &PyTensor) -> PyResult<PyTensor> {
    unary_on_tape(x, |t, id| t.softmax_rows(id))
}

/// Leaky ReLU with the given negative slope.
#[pyfunction]
#[pyo3(signature = (x, slope = 0.01))]
fn leaky_relu(x: &PyTensor, slope: f64) -> PyResult<PyTensor> {
    unary_on_tape(x, |t, id| t.leaky_relu(id, slope))
}

/// Cross-correlation of x (Cin,H,W) with weights (Cout,Cin,k,k).
#[pyfunction]
#[pyo3(signature = (x, w, stride = 1, pad = 0))]
fn conv2d(x: &PyTensor, w: &PyTensor, stride: usize, pad: usize) -> PyResult<PyTensor> {
    let mut tape: Tape<f32> = Tape::new();
    let xid = tape.leaf(x.inner.clone());
    let wid = tape.leaf(w.inner.clone());
    let out = tape.conv2d(xid, wid, stride, pad).map_err(to_py)?;
    Ok(PyTensor {
        inner: tape.value(out).clone(),
    })
}

/// Gradient of sum(a @ b) with respect to a — a round trip through the
/// reverse-mode tape.
#[pyfunction]
fn matmul_sum_grad(a: &PyTensor, b: &PyTensor) -> PyResult<PyTensor> {
    let mut tape: Tape<f32> = Tape::new();
    let mut at = a.inner.clone();
    at.requires_grad = true;
    let aid = tape.leaf(at);
    let bid = tape.leaf(b.inner.clone());
    let prod = tape.matmul(aid, bid).map_err(to_py)?;
    let loss = tape.sum(prod);
    tape.backward(loss).map_err(to_py)?;
    let grad = tape.grad(aid).expect("requires_grad leaf").to_vec();
    Ok(PyTensor {
        inner: CoreTensor::new(a.inner.shape().to_vec(), grad).map_err(to_py)?,
    })
}

/// Generate the synthetic zero-shot benchmark into a directory.
/// `spec_json` overrides default benchmark fields when given.
#[pyfunction]
#[pyo3(signature = (out_dir, spec_json = None))]
fn gen_benchmark(out_dir: &str, spec_json: Option<&str>) -> PyResult<String> {
    let spec: BenchmarkSpec = match spec_json {
        Some(raw) => serde_json_parse(raw)?,
        None => BenchmarkSpec::default(),
    };
    let ds = synth::gen_dataset(&spec).map_err(to_py)?;
    synth::write_dataset(&ds, Path::new(out_dir)).map_err(to_py)?;
    Ok(ds.content_checksum())
}

fn serde_json_parse(raw: &str) -> PyResult<BenchmarkSpec> {
    gbe_core::serde_json::from_str(raw).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_config(raw: &str) -> PyResult<RunConfig> {
    let cfg: RunConfig =
        gbe_core::serde_json::from_str(raw).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Train per a RunConfig JSON string; returns (run_dir, epoch_losses,
/// val_maps).
#[pyfunction]
fn train(config_json: &str) -> PyResult<(String, Vec<f64>, Vec<f64>)> {
    let cfg = parse_config(config_json)?;
    let (_, outcome) = harness::train(&cfg).map_err(to_py)?;
    Ok((
        outcome.run_dir.display().to_string(),
        outcome.epoch_losses,
        outcome.val_maps,
    ))
}

/// Evaluate a trained checkpoint; returns rows of
/// (protocol, k, precision, recall, f1, map).
#[pyfunction]
#[pyo3(signature = (config_json, protocol = "both"))]
fn evaluate(config_json: &str, protocol: &str) -> PyResult<Vec<(String, usize, f64, f64, f64, f64)>> {
    let cfg = parse_config(config_json)?;
    let protocols: Vec<Protocol> = match protocol {
        "zsl" => vec![Protocol::Zsl],
        "gzsl" => vec![Protocol::Gzsl],
        "both" => vec![Protocol::Zsl, Protocol::Gzsl],
        other => return Err(PyValueError::new_err(format!("unknown protocol {other}"))),
    };
    let ds = synth::read_dataset(Path::new(&cfg.dataset_dir)).map_err(to_py)?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    let blob = out_dir.join("checkpoint.gbet");
    let index = out_dir.join("checkpoint.index.json");
    let model = harness::load_model(&cfg, &blob, &index).map_err(to_py)?;
    let rows = harness::evaluate_to_dir(&model, &cfg, &ds, &protocols, &out_dir).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.protocol, r.k, r.precision, r.recall, r.f1, r.map))
        .collect())
}

/// End-to-end finite-difference gradient check; returns
/// (pass, rows of (module, max_rel_err, checked, kinks)).
#[pyfunction]
#[pyo3(signature = (shadow64 = false))]
fn gradcheck(shadow64: bool) -> PyResult<(bool, Vec<(String, f64, usize, usize)>)> {
    let report = harness::gradcheck(&GradcheckOptions {
        shadow64,
        ..GradcheckOptions::default()
    })
    .map_err(to_py)?;
    Ok((
        report.pass,
        report
            .rows
            .into_iter()
            .map(|r| (r.module, r.max_rel_err, r.checked, r.skipped_kinks))
            .collect(),
    ))
}

/// Micro-averaged top-k precision/recall/F1 over a score matrix.
#[pyfunction]
fn topk_prf(
    scores: Vec<Vec<f32>>,
    gt: Vec<Vec<u8>>,
    k: usize,
) -> PyResult<(f64, f64, f64)> {
    let m = score_matrix(scores, gt)?;
    metrics::topk_prf(&m, k).map_err(to_py)
}

/// Class-wise mean average precision over a score matrix.
#[pyfunction]
fn mean_ap(scores: Vec<Vec<f32>>, gt: Vec<Vec<u8>>) -> PyResult<f64> {
    let ids: Vec<usize> = (0..scores.first().map(|r| r.len()).unwrap_or(0)).collect();
    let m = score_matrix(scores, gt)?;
    Ok(metrics::mean_ap(&m, &ids).map_err(to_py)?.map)
}

fn score_matrix(scores: Vec<Vec<f32>>, gt: Vec<Vec<u8>>) -> PyResult<metrics::ScoreMatrix> {
    if scores.len() != gt.len() {
        return Err(PyValueError::new_err("scores and gt row counts differ"));
    }
    let n = scores.len();
    let l = scores.first().map(|r| r.len()).unwrap_or(0);
    if scores.iter().any(|r| r.len() != l) || gt.iter().any(|r| r.len() != l) {
        return Err(PyValueError::new_err("ragged score or gt rows"));
    }
    metrics::ScoreMatrix::new(
        scores.into_iter().flatten().collect(),
        (0..l).collect(),
        gt.into_iter().flatten().collect(),
        n,
    )
    .map_err(to_py)
}

/// Read tensors from a checkpoint index; returns name → shape.
#[pyfunction]
fn checkpoint_shapes(blob: &str, index: &str) -> PyResult<BTreeMap<String, Vec<usize>>> {
    let map = gbe_core::tensor::io::read_checkpoint(Path::new(blob), Path::new(index))
        .map_err(to_py)?;
    Ok(map
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec()))
        .collect())
}

#[pymodule]
fn gbe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(matmul, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_rows, m)?)?;
    m.add_function(wrap_pyfunction!(leaky_relu, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(matmul_sum_grad, m)?)?;
    m.add_function(wrap_pyfunction!(gen_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(topk_prf, m)?)?;
    m.add_function(wrap_pyfunction!(mean_ap, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_shapes, m)?)?;
    Ok(())
}
