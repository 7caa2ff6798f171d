//! Python bindings: tensors, the core numeric ops, the filter bank, attention,
//! degradation and whole-model inference.

use std::path::PathBuf;

use hsavsr_core::degradation::{self, DegradationParams};
use hsavsr_core::engine::{self, FlowProvider, ModelConfig, ModelWeights, RunOptions};
use hsavsr_core::filter_bank::{build_pool, default_bank};
use hsavsr_core::io::frame;
use hsavsr_core::io::kv::KeyValues;
use hsavsr_core::tensor::{self, ConvOptions, PadMode, ResizeScale};
use hsavsr_core::{autodiff, hsa, trainer, Error, FlowField};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Path { .. } => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Dense float32 tensor, row-major, usually `(C, H, W)`.
#[pyclass(name = "Tensor", module = "hsavsr", from_py_object)]
#[derive(Clone)]
pub struct PyTensor(hsavsr_core::Tensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyTensor(hsavsr_core::Tensor::new(shape, data).map_err(err)?))
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor(hsavsr_core::Tensor::zeros(shape))
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, value: f32) -> Self {
        PyTensor(hsavsr_core::Tensor::full(shape, value))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    /// Flat row-major values.
    #[getter]
    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor(self.0.clone().reshape(shape).map_err(err)?))
    }

    fn max_abs_diff(&self, other: &PyTensor) -> PyResult<f32> {
        self.0.max_abs_diff(&other.0).map_err(err)
    }

    fn mean(&self) -> f32 {
        self.0.mean()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

fn pad_mode(name: &str) -> PyResult<PadMode> {
    match name {
        "zero" => Ok(PadMode::Zero),
        "replicate" => Ok(PadMode::Replicate),
        _ => Err(PyValueError::new_err(format!("unknown padding `{name}`"))),
    }
}

/// Stride-1 "same" cross-correlation of `(C, H, W)` with `(O, C, Kh, Kw)`.
#[pyfunction]
#[pyo3(signature = (x, kernel, bias=None, padding="zero"))]
fn conv2d(x: &PyTensor, kernel: &PyTensor, bias: Option<PyTensor>, padding: &str) -> PyResult<PyTensor> {
    let s = kernel.0.shape();
    if s.len() != 4 {
        return Err(PyValueError::new_err("kernel must be (O, C, Kh, Kw)"));
    }
    let opts = ConvOptions::same(s[2], s[3], pad_mode(padding)?);
    tensor::conv2d(&x.0, &kernel.0, bias.as_ref().map(|b| &b.0), opts)
        .map(PyTensor)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, axis=0))]
fn softmax(x: &PyTensor, axis: usize) -> PyResult<PyTensor> {
    tensor::softmax_over_axis(&x.0, axis).map(PyTensor).map_err(err)
}

#[pyfunction]
fn bilinear_resize(x: &PyTensor, scale: usize) -> PyResult<PyTensor> {
    tensor::bilinear_resize(&x.0, ResizeScale::int(scale)).map(PyTensor).map_err(err)
}

#[pyfunction]
fn pixel_shuffle(x: &PyTensor, r: usize) -> PyResult<PyTensor> {
    tensor::pixel_shuffle(&x.0, r).map(PyTensor).map_err(err)
}

/// Samples `x` at `p + flow(p)`; `flow` is `(2, H, W)` holding `(dx, dy)`.
#[pyfunction]
fn backward_warp(x: &PyTensor, flow: &PyTensor) -> PyResult<PyTensor> {
    let flow = FlowField::new(flow.0.clone()).map_err(err)?;
    tensor::backward_warp(&x.0, &flow).map(PyTensor).map_err(err)
}

/// `(name, mode, base kernel)` for each default pool filter.
#[pyfunction]
fn filter_kernels() -> Vec<(String, String, PyTensor)> {
    default_bank()
        .kernels()
        .iter()
        .map(|k| (k.name().to_string(), k.mode().as_str().to_string(), PyTensor(k.base().clone())))
        .collect()
}

/// The filtered variants of a hidden state, one per default kernel.
#[pyfunction]
fn hidden_state_pool(h: &PyTensor) -> PyResult<Vec<PyTensor>> {
    let pool = build_pool(&h.0, &default_bank()).map_err(err)?;
    Ok(pool.entries().iter().cloned().map(PyTensor).collect())
}

/// Returns the aggregate and the `(N, H, W)` attention weights.
#[pyfunction]
fn sca_aggregate(q: &PyTensor, keys: Vec<PyTensor>, values: Vec<PyTensor>) -> PyResult<(PyTensor, PyTensor)> {
    let keys: Vec<_> = keys.into_iter().map(|k| k.0).collect();
    let values: Vec<_> = values.into_iter().map(|v| v.0).collect();
    let (out, maps) = hsa::sca_aggregate(&q.0, &keys, &values).map_err(err)?;
    Ok((PyTensor(out), PyTensor(maps.weights().clone())))
}

#[pyfunction]
fn read_frame(path: PathBuf) -> PyResult<PyTensor> {
    frame::read_frame(path).map(PyTensor).map_err(err)
}

#[pyfunction]
fn write_frame(t: &PyTensor, path: PathBuf) -> PyResult<()> {
    frame::write_frame(&t.0, path).map_err(err)
}

#[pyfunction]
fn psnr(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    trainer::psnr(&a.0, &b.0).map_err(err)
}

/// Blur, noise, area downsampling and optional block-DCT compression.
#[pyfunction]
#[pyo3(signature = (hr, sigma, delta, r=4, crf=None, seed=0, index=0))]
fn degrade_frame(
    hr: &PyTensor,
    sigma: f64,
    delta: f64,
    r: usize,
    crf: Option<u32>,
    seed: u64,
    index: usize,
) -> PyResult<PyTensor> {
    let p = DegradationParams { sigma, delta, r, crf, seed };
    degradation::degrade_frame(&hr.0, &p, index).map(PyTensor).map_err(err)
}

/// `(primitive, shape, max relative error)` for each finite-difference case.
#[pyfunction]
#[pyo3(signature = (seed=0, per_primitive=3))]
fn gradient_suite(py: Python<'_>, seed: u64, per_primitive: usize) -> PyResult<Vec<(String, String, f64)>> {
    let cases = py
        .detach(|| autodiff::suite::gradient_suite(seed, per_primitive))
        .map_err(err)?;
    Ok(cases
        .into_iter()
        .map(|c| (c.primitive.to_string(), c.shape, c.report.max_rel_error))
        .collect())
}

/// Recurrent super-resolution model weights.
#[pyclass(name = "Model", module = "hsavsr")]
pub struct PyModel(ModelWeights);

fn run_options(hsa: bool, flow: &str, hsa_before_warp: bool) -> PyResult<RunOptions> {
    Ok(RunOptions {
        hsa,
        hsa_before_warp,
        flow: FlowProvider::parse(flow).map_err(err)?,
        pool_override: None,
    })
}

fn frames_of(frames: Vec<PyTensor>) -> Vec<hsavsr_core::Tensor> {
    frames.into_iter().map(|f| f.0).collect()
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (channels=16, scale=4, rb1_blocks=2, rb2_blocks=28, seed=0))]
    fn init(channels: usize, scale: usize, rb1_blocks: usize, rb2_blocks: usize, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig { channels, scale, rb1_blocks, rb2_blocks };
        Ok(PyModel(ModelWeights::init(cfg, default_bank(), seed).map_err(err)?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel(ModelWeights::load(path).map_err(err)?.0))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path, &KeyValues::new()).map_err(err)
    }

    #[getter]
    fn hash(&self) -> String {
        self.0.hash()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.0.channels()
    }

    #[getter]
    fn scale(&self) -> usize {
        self.0.config().scale
    }

    fn num_parameters(&self) -> usize {
        self.0.num_parameters()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.0.params().keys().cloned().collect()
    }

    fn get(&self, name: &str) -> PyResult<PyTensor> {
        self.0.get(name).cloned().map(PyTensor).map_err(err)
    }

    fn set(&mut self, name: &str, value: &PyTensor) -> PyResult<()> {
        self.0.set(name, value.0.clone()).map_err(err)
    }

    /// Super-resolves a list of `(3, h, w)` frames in order.
    #[pyo3(signature = (frames, hsa=true, flow="block", hsa_before_warp=false))]
    fn run(
        &self,
        py: Python<'_>,
        frames: Vec<PyTensor>,
        hsa: bool,
        flow: &str,
        hsa_before_warp: bool,
    ) -> PyResult<Vec<PyTensor>> {
        let opts = run_options(hsa, flow, hsa_before_warp)?;
        let frames = frames_of(frames);
        let out = py
            .detach(|| engine::run_sequence(&frames, &self.0, &opts, None))
            .map_err(err)?;
        Ok(out.outputs.into_iter().map(PyTensor).collect())
    }

    /// Same as `run` but every step sees a zero incoming hidden state.
    #[pyo3(signature = (frames, hsa=true, flow="block"))]
    fn run_zero_hidden(&self, py: Python<'_>, frames: Vec<PyTensor>, hsa: bool, flow: &str) -> PyResult<Vec<PyTensor>> {
        let opts = run_options(hsa, flow, false)?;
        let frames = frames_of(frames);
        let out = py
            .detach(|| engine::ablate_zero_hidden(&frames, &self.0, &opts))
            .map_err(err)?;
        Ok(out.outputs.into_iter().map(PyTensor).collect())
    }

    fn __repr__(&self) -> String {
        let c = self.0.config();
        format!(
            "Model(channels={}, scale={}, rb1_blocks={}, rb2_blocks={})",
            c.channels, c.scale, c.rb1_blocks, c.rb2_blocks
        )
    }
}

#[pymodule]
fn hsavsr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(bilinear_resize, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_shuffle, m)?)?;
    m.add_function(wrap_pyfunction!(backward_warp, m)?)?;
    m.add_function(wrap_pyfunction!(filter_kernels, m)?)?;
    m.add_function(wrap_pyfunction!(hidden_state_pool, m)?)?;
    m.add_function(wrap_pyfunction!(sca_aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(read_frame, m)?)?;
    m.add_function(wrap_pyfunction!(write_frame, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(degrade_frame, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_suite, m)?)?;
    Ok(())
}
